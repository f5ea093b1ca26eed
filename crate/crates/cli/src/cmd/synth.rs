use std::path::PathBuf;

use anyhow::{anyhow, bail, Context};
use clap::ValueEnum;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use pixreason::http::{ChatClient, ChatConfig};
use pixreason::synth::{
    synthesize, text_only_record, CannedTextGen, Category, ChatTextGen, Proportions, SynthConfig, TextGen,
};
use pixreason::{emit_record, SeedExample};

use crate::io::{read_jsonl, Sink};
use crate::{CmdResult, Failure};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum CategoryArg {
    Image,
    Video,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Generator {
    /// Deterministic template text.
    Canned,
    /// A chat model reached through PIXEL_POLICY_* variables.
    Chat,
}

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Seed examples (JSONL).
    #[arg(long)]
    seeds: PathBuf,
    /// Only use seeds of this category.
    #[arg(long, value_enum)]
    category: Option<CategoryArg>,
    /// Number of trajectories; seeds are cycled. Defaults to one per seed.
    #[arg(long)]
    count: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Kind weights: four values for images (single_pass, recrop_once,
    /// recrop_twice, further_zoom) or two for videos (single_pass, reselect).
    #[arg(long)]
    proportions: Option<String>,
    #[arg(long, value_enum, default_value = "canned")]
    generator: Generator,
    /// Pure-text demonstrations (JSONL: id, question, reasoning, gold)
    /// appended unchanged.
    #[arg(long)]
    text_only: Option<PathBuf>,
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
struct TextOnly {
    id: String,
    question: String,
    reasoning: String,
    gold: String,
}

fn proportions(spec: &str, category: Option<CategoryArg>) -> anyhow::Result<Proportions> {
    let values: Vec<f64> = spec
        .split(',')
        .map(|v| v.trim().parse::<f64>().with_context(|| format!("bad weight {v:?}")))
        .collect::<Result<_, _>>()?;
    let mut p = Proportions::default();
    match (values.len(), category) {
        (4, None | Some(CategoryArg::Image)) => p.image.copy_from_slice(&values),
        (2, None | Some(CategoryArg::Video)) => p.video.copy_from_slice(&values),
        (n, _) => bail!("--proportions takes 4 image weights or 2 video weights, got {n}"),
    }
    p.validate()?;
    Ok(p)
}

pub fn run(args: Args) -> CmdResult {
    let mut cfg = SynthConfig::default();
    if let Some(spec) = &args.proportions {
        cfg.proportions = proportions(spec, args.category)?;
    }
    let wanted = args.category.map(|c| match c {
        CategoryArg::Image => Category::Image,
        CategoryArg::Video => Category::Video,
    });
    let seeds: Vec<SeedExample> = read_jsonl::<SeedExample>(&args.seeds)?
        .into_iter()
        .filter(|s| wanted.is_none_or(|c| s.category() == c))
        .collect();
    if seeds.is_empty() {
        return Err(anyhow!("no seed examples to synthesize from").into());
    }

    let generator: Box<dyn TextGen> = match args.generator {
        Generator::Canned => Box::new(CannedTextGen),
        Generator::Chat => {
            let client = ChatConfig::from_env().and_then(ChatClient::new).map_err(|e| Failure::Backend(e.into()))?;
            Box::new(ChatTextGen::new(client))
        }
    };

    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let mut sink = Sink::new(args.output);
    for n in 0..args.count.unwrap_or(seeds.len()) {
        let seed = &seeds[n % seeds.len()];
        let mut traj = match synthesize(seed, generator.as_ref(), &mut rng, &cfg) {
            Ok(t) => t,
            Err(e @ pixreason::synth::SynthError::Generator(_)) => return Err(Failure::Backend(e.into())),
            Err(e) => return Err(anyhow::Error::from(e).context(format!("seed {}", seed.id)).into()),
        };
        traj.id = format!("{}-{n:05}", seed.id);
        sink.json_line(&emit_record(&traj))?;
    }
    if let Some(path) = &args.text_only {
        for t in read_jsonl::<TextOnly>(path)? {
            sink.json_line(&text_only_record(&t.id, &t.question, &t.reasoning, &t.gold))?;
        }
    }
    sink.finish()?;
    Ok(())
}
