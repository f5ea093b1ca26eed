use std::path::PathBuf;

use anyhow::Context;
use clap::ValueEnum;
use serde::Serialize;

use pixreason::reward::{group_by_query, reward_breakdown};
use pixreason::RolloutRecord;

use super::RewardArgs;
use crate::io::{read_jsonl, Sink};
use crate::CmdResult;

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Jsonl,
}

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Rollout records (JSONL: query_id, trajectory_id, correct, is_pr, n_vo).
    input: PathBuf,
    #[command(flatten)]
    reward: RewardArgs,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct Row<'a> {
    query_id: &'a str,
    trajectory_id: &'a str,
    correct: u8,
    is_pr: u8,
    n_vo: u32,
    rapr: f64,
    bonus: f64,
    penalty: f64,
    reward: f64,
}

pub fn run(args: Args) -> CmdResult {
    let cfg = args.reward.config()?;
    let records: Vec<RolloutRecord> = read_jsonl(&args.input)?;
    let groups = group_by_query(records).context("grouping records")?;

    let mut rows = Vec::new();
    for group in &groups {
        let parts = reward_breakdown(&cfg, group).with_context(|| format!("query {}", group.query_id))?;
        rows.extend(group.records.iter().zip(parts).map(|(r, b)| Row {
            query_id: &r.query_id,
            trajectory_id: &r.trajectory_id,
            correct: u8::from(r.correct),
            is_pr: u8::from(r.is_pr),
            n_vo: r.n_vo,
            rapr: b.rapr,
            bonus: b.bonus,
            penalty: b.penalty,
            reward: b.reward,
        }));
    }

    let mut sink = Sink::new(args.output);
    match args.format {
        Format::Csv => {
            let mut w = csv::Writer::from_writer(&mut sink);
            for row in &rows {
                w.serialize(row).context("writing CSV")?;
            }
            w.flush().context("writing CSV")?;
        }
        Format::Jsonl => {
            for row in &rows {
                sink.json_line(row)?;
            }
        }
    }
    sink.finish()?;
    Ok(())
}
