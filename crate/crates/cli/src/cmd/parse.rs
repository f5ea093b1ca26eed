use std::path::PathBuf;

use anyhow::Context;
use serde::{Deserialize, Serialize};

use pixreason::{segment_trajectory, SegmentConfig, Trajectory};

use crate::io::{read_jsonl, read_text, Sink};
use crate::CmdResult;

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Transcript file, or `-` for stdin.
    input: PathBuf,
    /// Input is JSONL with `id` and `text` fields instead of one transcript.
    #[arg(long)]
    jsonl: bool,
    /// Reject outcomes that follow no tool call instead of inserting a
    /// placeholder invocation.
    #[arg(long)]
    strict: bool,
    /// Query id for a single transcript; defaults to the file stem.
    #[arg(long)]
    id: Option<String>,
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
struct Transcript {
    id: String,
    text: String,
}

#[derive(Debug, Serialize)]
struct Parsed {
    #[serde(flatten)]
    trajectory: Trajectory,
    n_vo: usize,
    is_pixel_space: bool,
}

pub fn run(args: Args) -> CmdResult {
    let transcripts = if args.jsonl {
        read_jsonl::<Transcript>(&args.input)?
    } else {
        let id = args.id.clone().unwrap_or_else(|| {
            args.input.file_stem().map_or("transcript".into(), |s| s.to_string_lossy().into_owned())
        });
        vec![Transcript { id, text: read_text(&args.input)? }]
    };
    let cfg = if args.strict { SegmentConfig::default() } else { SegmentConfig::lenient() };

    let mut sink = Sink::new(args.output);
    for t in transcripts {
        let steps = segment_trajectory(&t.text, &cfg).with_context(|| format!("transcript {}", t.id))?;
        let trajectory = Trajectory { query_id: t.id, steps };
        sink.json_line(&Parsed { n_vo: trajectory.n_vo(), is_pixel_space: trajectory.is_pixel_space(), trajectory })?;
    }
    sink.finish()?;
    Ok(())
}
