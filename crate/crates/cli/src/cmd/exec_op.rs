use std::path::PathBuf;

use anyhow::{anyhow, bail, Context};
use serde_json::json;

use pixreason::visual::{encode_png, load_frames_dir, load_png};
use pixreason::{execute, parse_tool_calls, ExecOutput, FaultInjector, SegmentConfig, ToolCall, TrajectoryStep, VisualWorkspace};

use crate::io::write_atomic;
use crate::{CmdResult, Failure};

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Source image (PNG).
    #[arg(long, conflicts_with = "frames", required_unless_present = "frames")]
    image: Option<PathBuf>,
    /// Directory of frame_NNNN.png files.
    #[arg(long)]
    frames: Option<PathBuf>,
    /// Tool call as a JSON object or a `<tool_call>` block.
    #[arg(long)]
    call: String,
    /// Where to write the produced images.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Probability that the call fails with an injected fault.
    #[arg(long, default_value_t = 0.0)]
    fault_rate: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn decode_call(text: &str) -> anyhow::Result<ToolCall> {
    let trimmed = text.trim();
    if trimmed.starts_with('{') {
        return serde_json::from_str(trimmed).context("parsing --call");
    }
    match parse_tool_calls(trimmed).into_iter().next() {
        Some(Ok(parsed)) => Ok(parsed.call),
        Some(Err(bad)) => Err(anyhow!("malformed tool call: {}", bad.reason)),
        None => bail!("--call holds neither a JSON object nor a <tool_call> block"),
    }
}

pub fn run(args: Args) -> CmdResult {
    let call = decode_call(&args.call)?;
    let mut ws = match (&args.image, &args.frames) {
        (Some(p), _) => VisualWorkspace::with_image(load_png(p).map_err(anyhow::Error::from)?),
        (None, Some(d)) => VisualWorkspace::with_clip(load_frames_dir(d).map_err(anyhow::Error::from)?),
        (None, None) => unreachable!("clap requires one source"),
    };
    if !(0.0..=1.0).contains(&args.fault_rate) {
        return Err(anyhow!("--fault-rate must lie in [0, 1]").into());
    }
    let mut fault = (args.fault_rate > 0.0).then(|| FaultInjector::new(args.fault_rate, args.seed));
    let cfg = SegmentConfig::default();

    match execute(&mut ws, &call, fault.as_mut()) {
        Ok(out) => {
            let files = match &args.out_dir {
                Some(dir) => save(dir, &out)?,
                None => Vec::new(),
            };
            let payload = out.payload();
            let outcome = TrajectoryStep::outcome(payload.clone(), false).render(&cfg).unwrap_or_default();
            println!("{}", json!({"ok": true, "outcome": outcome, "payload": payload, "files": files}));
            Ok(())
        }
        Err(e) => {
            let outcome = TrajectoryStep::error_outcome(e.message.clone()).render(&cfg).unwrap_or_default();
            println!("{}", json!({"ok": false, "code": e.code, "message": e.message, "outcome": outcome}));
            Err(Failure::Input(anyhow!("operation failed: {e}")))
        }
    }
}

fn save(dir: &std::path::Path, out: &ExecOutput) -> anyhow::Result<Vec<PathBuf>> {
    let named: Vec<(String, _)> = match out {
        ExecOutput::Cropped { index, image } => vec![(format!("image_{index}.png"), image)],
        ExecOutput::Frames { indices, frames } => {
            indices.iter().zip(frames).enumerate().map(|(k, (i, f))| (format!("select_{k:02}_frame_{i:04}.png"), f)).collect()
        }
    };
    named
        .into_iter()
        .map(|(name, img)| {
            let path = dir.join(name);
            write_atomic(&path, &encode_png(img))?;
            Ok(path)
        })
        .collect()
}
