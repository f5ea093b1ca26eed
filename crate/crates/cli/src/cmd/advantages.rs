use std::path::PathBuf;

use anyhow::{anyhow, Context};
use clap::ValueEnum;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use pixreason::grpo::{BatchEntry, ReplayBuffer, DEFAULT_EPS};
use pixreason::{
    detect_uniformity_ratio, ssr_fill_batch, AdvantageGroup, AdvantageMode, EpisodeClock, EpisodeConfig, SsrSelector,
};

use crate::io::{read_jsonl, Sink};
use crate::CmdResult;

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Mode {
    MeanOnly,
    MeanStd,
}

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Reward rows (JSONL with query_id, trajectory_id, reward), e.g. the
    /// output of `reward --format jsonl`. Rows of one query must be
    /// contiguous; queries are consumed in file order.
    input: PathBuf,
    #[arg(long, value_enum, default_value = "mean-only")]
    mode: Mode,
    /// Reward spread below which a group counts as uniform.
    #[arg(long, default_value_t = DEFAULT_EPS)]
    eps: f64,
    /// Train on fresh samples only.
    #[arg(long)]
    no_ssr: bool,
    #[arg(long, default_value_t = 512)]
    queries_per_episode: u64,
    #[arg(long, default_value_t = 8)]
    group_size: usize,
    #[arg(long, default_value_t = 256)]
    train_batch: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
struct RewardRow {
    query_id: String,
    trajectory_id: String,
    reward: f64,
}

#[derive(Debug, Serialize)]
struct StepBatch {
    step: usize,
    episode: u64,
    uniformity: f64,
    fresh: usize,
    replayed: usize,
    underfull: bool,
    entries: Vec<BatchEntry>,
}

pub fn run(args: Args) -> CmdResult {
    let cfg = EpisodeConfig {
        queries_per_episode: args.queries_per_episode,
        group_size: args.group_size,
        train_batch: args.train_batch,
    };
    cfg.validate().map_err(anyhow::Error::from)?;
    let mode = match args.mode {
        Mode::MeanOnly => AdvantageMode::MeanOnly,
        Mode::MeanStd => AdvantageMode::MeanStd,
    };

    let rows: Vec<RewardRow> = read_jsonl(&args.input)?;
    let mut groups: Vec<AdvantageGroup> = Vec::new();
    let mut start = 0;
    while start < rows.len() {
        let qid = &rows[start].query_id;
        let end = start + rows[start..].iter().take_while(|r| &r.query_id == qid).count();
        if groups.iter().any(|g| &g.query_id == qid) {
            return Err(anyhow!("rows of query {qid} are not contiguous").into());
        }
        let ids = rows[start..end].iter().map(|r| r.trajectory_id.clone()).collect();
        let rewards = rows[start..end].iter().map(|r| r.reward).collect();
        groups.push(AdvantageGroup::new(qid.clone(), ids, rewards, mode, args.eps).with_context(|| format!("query {qid}"))?);
        start = end;
    }

    let selector = if args.no_ssr { SsrSelector::disabled() } else { SsrSelector::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let mut buffer = ReplayBuffer::new();
    let mut clock = EpisodeClock::new(cfg);
    let mut sink = Sink::new(args.output);
    for (step, chunk) in groups.chunks(cfg.queries_per_step()).enumerate() {
        let episode = clock.episode();
        let batch = ssr_fill_batch(chunk, &mut buffer, &cfg, &selector, &mut rng);
        sink.json_line(&StepBatch {
            step,
            episode,
            uniformity: detect_uniformity_ratio(chunk),
            fresh: batch.fresh,
            replayed: batch.replayed,
            underfull: batch.underfull,
            entries: batch.entries,
        })?;
        clock.advance(chunk.len() as u64, &mut buffer);
    }
    sink.finish()?;
    Ok(())
}
