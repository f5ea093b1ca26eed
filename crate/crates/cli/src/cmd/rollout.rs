use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context};
use serde::Deserialize;

use pixreason::http::{ChatConfig, ENV_API_KEY, ENV_BASE_URL, ENV_MODEL};
use pixreason::rollout::{HttpPolicy, Visual};
use pixreason::visual::{load_frames_dir, load_png};
use pixreason::{run_group, Matcher, Query, RolloutLimits};

use crate::io::{read_jsonl, read_text, Sink};
use crate::{CmdResult, Failure};

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Queries (JSONL: id, question, gold, image or frames, optional
    /// matcher). Media paths are relative to this file.
    #[arg(long)]
    queries: PathBuf,
    /// Rollouts per query.
    #[arg(short = 'g', long, default_value_t = 8)]
    group_size: usize,
    #[arg(long, default_value_t = 4)]
    parallelism: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = RolloutLimits::default().max_visual_ops)]
    max_ops: usize,
    #[arg(long, default_value_t = RolloutLimits::default().max_steps)]
    max_steps: usize,
    /// Bound on the trajectory length in characters.
    #[arg(long, default_value_t = RolloutLimits::default().max_context_chars)]
    max_context: usize,
    /// File holding a system prompt.
    #[arg(long)]
    system_prompt: Option<PathBuf>,
    #[arg(long, env = ENV_BASE_URL)]
    base_url: String,
    #[arg(long, env = ENV_MODEL)]
    model: String,
    #[arg(long, env = ENV_API_KEY, hide_env_values = true)]
    api_key: Option<String>,
    #[arg(long, default_value_t = 1.0)]
    temperature: f64,
    /// Per-request timeout in seconds.
    #[arg(long, default_value_t = 120)]
    timeout: u64,
    #[arg(long, default_value_t = 2)]
    retries: u32,
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct QueryLine {
    id: String,
    question: String,
    gold: String,
    image: Option<PathBuf>,
    /// Directory of numbered PNG frames.
    frames: Option<PathBuf>,
    matcher: Option<Matcher>,
}

fn load_query(line: QueryLine, base: &Path) -> anyhow::Result<Query> {
    let visual = match (&line.image, &line.frames) {
        (Some(p), None) => Visual::Image(load_png(&base.join(p))?),
        (None, Some(d)) => Visual::Video(load_frames_dir(&base.join(d))?),
        _ => bail!("query {} needs exactly one of image or frames", line.id),
    };
    Ok(Query { id: line.id, text: line.question, gold: line.gold, visual, matcher: line.matcher })
}

pub fn run(args: Args) -> CmdResult {
    if args.group_size == 0 {
        return Err(anyhow::anyhow!("-g must be at least 1").into());
    }
    let base = args.queries.parent().map(Path::to_path_buf).unwrap_or_default();
    let queries = read_jsonl::<QueryLine>(&args.queries)?
        .into_iter()
        .map(|q| load_query(q, &base))
        .collect::<anyhow::Result<Vec<_>>>()
        .context("loading queries")?;
    let limits =
        RolloutLimits { max_visual_ops: args.max_ops, max_steps: args.max_steps, max_context_chars: args.max_context };

    let cfg = ChatConfig {
        api_key: args.api_key.filter(|k| !k.is_empty()),
        temperature: args.temperature,
        timeout: Duration::from_secs(args.timeout),
        max_retries: args.retries,
        ..ChatConfig::new(args.base_url, args.model)
    };
    let mut policy = HttpPolicy::new(cfg).map_err(|e| Failure::Backend(e.into()))?;
    if let Some(path) = &args.system_prompt {
        policy = policy.with_system_prompt(read_text(path)?);
    }

    let mut sink = Sink::new(args.output);
    let mut failed = 0;
    for query in &queries {
        let run = run_group(&policy, query, args.group_size, &limits, args.seed, args.parallelism);
        for r in run.rollouts.iter().filter_map(|r| r.error.as_ref()) {
            tracing::warn!(query = %query.id, "rollout failed: {r}");
        }
        failed += run.failures();
        sink.json_line(&run)?;
    }
    sink.finish()?;
    if failed > 0 {
        return Err(Failure::Backend(anyhow::anyhow!("{failed} rollouts failed against the policy backend")));
    }
    Ok(())
}
