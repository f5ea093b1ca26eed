use std::path::PathBuf;

use anyhow::Context;

use pixreason::{run_training, SimConfig};

use crate::io::{read_text, Sink};
use crate::CmdResult;

#[derive(Debug, clap::Args)]
pub struct Args {
    /// JSON file with any subset of simulator settings; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    steps: Option<usize>,
    /// Train on correctness and the efficiency penalty only.
    #[arg(long)]
    no_curiosity: bool,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long = "h")]
    h_threshold: Option<f64>,
    #[arg(long = "n")]
    n_max: Option<u32>,
    /// Initial probability of attempting a visual operation.
    #[arg(long)]
    init_rapr: Option<f64>,
    /// Skill gained per pixel-space practice rollout.
    #[arg(long)]
    practice_gain: Option<f64>,
    /// Initial probability that a visual operation fails.
    #[arg(long)]
    op_error: Option<f64>,
    #[arg(long, short)]
    output: Option<PathBuf>,
}

pub fn run(args: Args) -> CmdResult {
    let mut cfg = match &args.config {
        Some(path) => serde_json::from_str::<SimConfig>(&read_text(path)?)
            .with_context(|| format!("parsing {}", path.display()))?,
        None => SimConfig::default(),
    };
    macro_rules! set {
        ($($field:ident).+ = $flag:expr) => {
            if let Some(v) = $flag {
                cfg.$($field).+ = v;
            }
        };
    }
    set!(seed = args.seed);
    set!(steps = args.steps);
    set!(reward.alpha = args.alpha);
    set!(reward.beta = args.beta);
    set!(reward.h_threshold = args.h_threshold);
    set!(reward.n_max = args.n_max);
    set!(init_rapr = args.init_rapr);
    set!(practice_gain = args.practice_gain);
    set!(op_error = args.op_error);
    if args.no_curiosity {
        cfg.with_curiosity = false;
    }

    let trace = run_training(&cfg).map_err(anyhow::Error::from)?;
    let mut sink = Sink::new(args.output);
    {
        let mut w = csv::Writer::from_writer(&mut sink);
        for step in &trace.steps {
            w.serialize(step).context("writing CSV")?;
        }
        w.flush().context("writing CSV")?;
    }
    sink.finish()?;
    Ok(())
}
