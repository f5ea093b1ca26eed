//! The generate → parse → execute → append loop.
//!
//! Each turn the backend sees the conversation so far and returns a chunk
//! of text. If the chunk contains a tool call, the first one is executed
//! against the rollout's private workspace and its outcome becomes a tool
//! turn. A chunk with a `\boxed{}` answer and no tool call ends the rollout;
//! a chunk with neither is treated as the backend stopping early.

mod backend;
mod http_policy;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::protocol::{find_boxed, parse_tool_calls, SegmentConfig};
use crate::reward::{correctness_reward, Matcher, RolloutGroup, RolloutRecord};
use crate::trajectory::{ImageRef, ImageSource, Invocation, OutcomePayload, StepKind, Trajectory, TrajectoryStep};
use crate::visual::{execute, ImageBuffer, VideoClip, VisualWorkspace};

pub use backend::{BackendError, FnBackend, GenerateRequest, PolicyBackend, ScriptedBackend};
pub use http_policy::{HttpPolicy, ImageHook};

/// Appended verbatim after the question in the user turn.
pub const GUIDELINE_SUFFIX: &str = "\n\nGuidelines: Understand the given visual information and the user query. Determine if it is beneficial to employ the given visual operations (tools). For a video, we can look closer by `select_frames`. For an image, we can look closer by `crop_image`. Reason with the visual information step by step, and put your final answer within \\boxed{}.";

#[derive(Debug, Clone, PartialEq)]
pub enum Visual {
    Image(ImageBuffer),
    Video(VideoClip),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    pub id: String,
    pub text: String,
    pub gold: String,
    pub visual: Visual,
    /// Defaults to [`Matcher::for_gold`].
    pub matcher: Option<Matcher>,
}

impl Query {
    pub fn workspace(&self) -> VisualWorkspace {
        match &self.visual {
            Visual::Image(img) => VisualWorkspace::with_image(img.clone()),
            Visual::Video(clip) => VisualWorkspace::with_clip(clip.clone()),
        }
    }

    fn visual_refs(&self) -> Vec<ImageRef> {
        match &self.visual {
            Visual::Image(img) => vec![ImageRef {
                source: ImageSource::Workspace { index: 1 },
                width: img.width(),
                height: img.height(),
            }],
            Visual::Video(clip) => clip
                .frames()
                .iter()
                .enumerate()
                .map(|(index, f)| ImageRef { source: ImageSource::Frame { index }, width: f.width(), height: f.height() })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    User,
    Assistant,
    /// Execution outcome fed back to the policy.
    Tool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Part {
    Text { text: String },
    /// Attachment resolved against the rollout's workspace by the backend.
    Image { image: ImageRef },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: Vec<Part>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Conversation {
    pub messages: Vec<Message>,
}

impl Conversation {
    pub fn assistant_turns(&self) -> usize {
        self.messages.iter().filter(|m| m.role == Role::Assistant).count()
    }
}

/// Renders the query and the steps so far. Consecutive thoughts and
/// invocations share one assistant message; each outcome becomes a tool
/// message.
pub fn assemble_prompt(query: &Query, trajectory: &Trajectory) -> Conversation {
    let cfg = SegmentConfig::default();
    let mut content: Vec<Part> = query.visual_refs().into_iter().map(|image| Part::Image { image }).collect();
    content.push(Part::Text { text: format!("{}{GUIDELINE_SUFFIX}", query.text) });
    let mut messages = vec![Message { role: Role::User, content }];

    let mut pending: Vec<String> = Vec::new();
    let flush = |pending: &mut Vec<String>, messages: &mut Vec<Message>| {
        if !pending.is_empty() {
            messages.push(Message { role: Role::Assistant, content: vec![Part::Text { text: pending.join("\n\n") }] });
            pending.clear();
        }
    };
    for step in &trajectory.steps {
        match &step.kind {
            StepKind::ExecutionOutcome { payload, .. } => {
                flush(&mut pending, &mut messages);
                let content = match payload {
                    OutcomePayload::Images { images } => images.iter().map(|image| Part::Image { image: image.clone() }).collect(),
                    OutcomePayload::Text { .. } => vec![Part::Text { text: step.render(&cfg).unwrap_or_default() }],
                };
                messages.push(Message { role: Role::Tool, content });
            }
            _ => pending.extend(step.render(&cfg)),
        }
    }
    flush(&mut pending, &mut messages);
    Conversation { messages }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RolloutLimits {
    pub max_visual_ops: usize,
    /// Backend calls per rollout.
    pub max_steps: usize,
    /// Bound on the rendered trajectory length, in characters.
    pub max_context_chars: usize,
}

impl Default for RolloutLimits {
    fn default() -> Self {
        Self { max_visual_ops: 8, max_steps: 16, max_context_chars: 32_768 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Limit {
    VisualOps,
    Steps,
    Context,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "reason", content = "limit", rename_all = "snake_case")]
pub enum Termination {
    FinalAnswer,
    /// The backend returned text with neither a tool call nor an answer.
    BackendStop,
    LimitExceeded(Limit),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutOutcome {
    pub trajectory: Trajectory,
    pub record: RolloutRecord,
    pub termination: Termination,
}

#[derive(Debug, thiserror::Error)]
pub enum RolloutError {
    #[error("backend unavailable: {source}")]
    BackendUnavailable {
        /// Steps completed before the failure.
        partial: Trajectory,
        source: BackendError,
    },
}

/// One rollout with its own fresh workspace.
pub fn run_rollout(
    policy: &dyn PolicyBackend,
    query: &Query,
    limits: &RolloutLimits,
    seed: u64,
) -> Result<RolloutOutcome, RolloutError> {
    run_indexed(policy, query, limits, seed, 0, format!("{}-0", query.id))
}

fn run_indexed(
    policy: &dyn PolicyBackend,
    query: &Query,
    limits: &RolloutLimits,
    seed: u64,
    rollout_index: usize,
    trajectory_id: String,
) -> Result<RolloutOutcome, RolloutError> {
    let cfg = SegmentConfig::default();
    let mut workspace = query.workspace();
    let mut trajectory = Trajectory::new(query.id.clone());
    let mut termination = Termination::LimitExceeded(Limit::Steps);

    for _ in 0..limits.max_steps {
        let conversation = assemble_prompt(query, &trajectory);
        let request = GenerateRequest { conversation: &conversation, workspace: &workspace, seed, rollout_index };
        let chunk = match policy.generate(&request) {
            Ok(chunk) => chunk,
            Err(source) => return Err(RolloutError::BackendUnavailable { partial: trajectory, source }),
        };
        match apply_chunk(&chunk, &mut trajectory, &mut workspace, limits) {
            Some(end) => {
                termination = end;
                break;
            }
            None if trajectory.render(&cfg).chars().count() > limits.max_context_chars => {
                termination = Termination::LimitExceeded(Limit::Context);
                break;
            }
            None => {}
        }
    }

    let matcher = query.matcher.unwrap_or_else(|| Matcher::for_gold(&query.gold));
    let correct = termination == Termination::FinalAnswer
        && correctness_reward(trajectory.final_answer(), &query.gold, matcher);
    let record = record_for(&trajectory, trajectory_id, correct);
    Ok(RolloutOutcome { trajectory, record, termination })
}

fn record_for(trajectory: &Trajectory, trajectory_id: String, correct: bool) -> RolloutRecord {
    RolloutRecord {
        query_id: trajectory.query_id.clone(),
        trajectory_id,
        correct,
        is_pr: trajectory.is_pixel_space(),
        n_vo: trajectory.n_vo() as u32,
    }
}

/// Appends the steps of one backend chunk. Returns a termination when the
/// rollout is over.
fn apply_chunk(
    chunk: &str,
    trajectory: &mut Trajectory,
    workspace: &mut VisualWorkspace,
    limits: &RolloutLimits,
) -> Option<Termination> {
    let first_call = parse_tool_calls(chunk).into_iter().next();
    let call_start = first_call.as_ref().map(|c| match c {
        Ok(p) => p.span.start,
        Err(m) => m.span.start,
    });
    // Only text before the first call counts; a `\boxed{}` inside or after it is ignored.
    let answer = find_boxed(&chunk[..call_start.unwrap_or(chunk.len())]);

    if let Some(m) = answer {
        push_thought(trajectory, &chunk[..m.span.start]);
        trajectory.steps.push(TrajectoryStep::answer(&chunk[m.content]));
        return Some(Termination::FinalAnswer);
    }
    let Some(call) = first_call else {
        push_thought(trajectory, chunk);
        return Some(Termination::BackendStop);
    };
    if trajectory.n_vo() >= limits.max_visual_ops {
        return Some(Termination::LimitExceeded(Limit::VisualOps));
    }
    push_thought(trajectory, &chunk[..call_start.unwrap_or(0)]);
    let outcome = match call {
        Ok(parsed) => {
            let result = execute(workspace, &parsed.call, None);
            trajectory.steps.push(TrajectoryStep::invocation(parsed.call));
            match result {
                Ok(out) => TrajectoryStep::outcome(out.payload(), false),
                Err(e) => TrajectoryStep::error_outcome(e.message),
            }
        }
        Err(bad) => {
            let reason = format!("invalid tool call: {}", bad.reason);
            trajectory.steps.push(TrajectoryStep {
                kind: StepKind::ToolInvocation { invocation: Invocation::Malformed { raw: bad.raw, reason: bad.reason } },
                masked: false,
            });
            TrajectoryStep::error_outcome(reason)
        }
    };
    trajectory.steps.push(outcome);
    None
}

fn push_thought(trajectory: &mut Trajectory, text: &str) {
    let text = text.trim();
    if !text.is_empty() {
        trajectory.steps.push(TrajectoryStep::thought(text));
    }
}

/// Per-rollout seed derived from the group seed (splitmix64 finalizer).
pub fn rollout_seed(seed: u64, index: usize) -> u64 {
    let mut z = seed.wrapping_add((index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Report for one rollout of a group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutReport {
    pub record: RolloutRecord,
    pub trajectory: Trajectory,
    pub termination: Option<Termination>,
    /// Set when the backend failed; the record then has `correct = 0`.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRun {
    pub group: RolloutGroup,
    pub rollouts: Vec<RolloutReport>,
}

impl GroupRun {
    pub fn failures(&self) -> usize {
        self.rollouts.iter().filter(|r| r.error.is_some()).count()
    }
}

/// `g` independent rollouts on up to `parallelism` threads. Output order
/// and content do not depend on scheduling.
pub fn run_group(
    policy: &dyn PolicyBackend,
    query: &Query,
    g: usize,
    limits: &RolloutLimits,
    seed: u64,
    parallelism: usize,
) -> GroupRun {
    let slots: Vec<Mutex<Option<RolloutReport>>> = (0..g).map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let work = || loop {
        let i = next.fetch_add(1, Ordering::Relaxed);
        if i >= g {
            break;
        }
        let id = format!("{}-{i}", query.id);
        let report = match run_indexed(policy, query, limits, rollout_seed(seed, i), i, id.clone()) {
            Ok(o) => RolloutReport { record: o.record, trajectory: o.trajectory, termination: Some(o.termination), error: None },
            Err(RolloutError::BackendUnavailable { partial, source }) => RolloutReport {
                record: record_for(&partial, id, false),
                trajectory: partial,
                termination: None,
                error: Some(source.to_string()),
            },
        };
        *slots[i].lock().expect("slot lock") = Some(report);
    };
    let workers = parallelism.clamp(1, g.max(1));
    std::thread::scope(|s| {
        for _ in 1..workers {
            s.spawn(work);
        }
        work();
    });
    let rollouts: Vec<RolloutReport> =
        slots.into_iter().map(|m| m.into_inner().expect("slot lock").expect("every slot is filled")).collect();
    let group = RolloutGroup { query_id: query.id.clone(), records: rollouts.iter().map(|r| r.record.clone()).collect() };
    GroupRun { group, rollouts }
}
