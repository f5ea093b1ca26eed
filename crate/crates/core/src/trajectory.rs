//! Trajectory model shared by parsing, rollouts and synthesis.

use serde::{Deserialize, Serialize};

use crate::protocol::{render_tool_call, SegmentConfig, ToolCall};

/// Why a step sequence is not a legal trajectory.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ProtocolViolation {
    #[error("execution outcome at byte {offset} has no preceding tool invocation")]
    OrphanOutcome { offset: usize },
    #[error("step {index}: execution outcome must directly follow a tool invocation")]
    OutcomeOutOfPlace { index: usize },
    #[error("step {index}: final answer must be the last step")]
    AnswerNotLast { index: usize },
}

/// One reasoning step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepKind {
    TextThought { text: String },
    ToolInvocation { invocation: Invocation },
    ExecutionOutcome { payload: OutcomePayload, is_error: bool },
    FinalAnswer { answer: String },
}

/// What the policy asked for in a tool invocation step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Invocation {
    Parsed { call: ToolCall },
    /// A `<tool_call>` block whose body could not be decoded. It still counts
    /// as an attempted operation.
    Malformed { raw: String, reason: String },
    /// The transcript shows an outcome but no tool-call text (logs often
    /// strip the tags). Only produced by lenient segmentation.
    Elided,
}

/// Result of executing an operation, as recorded in the trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum OutcomePayload {
    Text { text: String },
    Images { images: Vec<ImageRef> },
}

/// Placeholder for an image delivered to the policy as an attachment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRef {
    #[serde(flatten)]
    pub source: ImageSource,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum ImageSource {
    /// 1-based index into the visual workspace.
    Workspace { index: usize },
    /// 0-based index into the video clip.
    Frame { index: usize },
}

impl OutcomePayload {
    /// Text used when the payload is flattened into a transcript.
    pub fn describe(&self) -> String {
        match self {
            OutcomePayload::Text { text } => text.clone(),
            OutcomePayload::Images { images } => images
                .iter()
                .map(|r| match r.source {
                    ImageSource::Workspace { index } => {
                        format!("<image {index}: {}x{}>", r.width, r.height)
                    }
                    ImageSource::Frame { index } => {
                        format!("<frame {index}: {}x{}>", r.width, r.height)
                    }
                })
                .collect::<Vec<_>>()
                .join(" "),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    #[serde(flatten)]
    pub kind: StepKind,
    /// Excluded from the supervised loss.
    #[serde(default)]
    pub masked: bool,
}

impl TrajectoryStep {
    pub fn thought(text: impl Into<String>) -> Self {
        Self { kind: StepKind::TextThought { text: text.into() }, masked: false }
    }

    pub fn invocation(call: ToolCall) -> Self {
        Self {
            kind: StepKind::ToolInvocation { invocation: Invocation::Parsed { call } },
            masked: false,
        }
    }

    pub fn outcome(payload: OutcomePayload, is_error: bool) -> Self {
        Self { kind: StepKind::ExecutionOutcome { payload, is_error }, masked: true }
    }

    pub fn error_outcome(message: impl Into<String>) -> Self {
        Self::outcome(OutcomePayload::Text { text: message.into() }, true)
    }

    pub fn answer(answer: impl Into<String>) -> Self {
        Self { kind: StepKind::FinalAnswer { answer: answer.into() }, masked: false }
    }

    pub fn masked(mut self, masked: bool) -> Self {
        self.masked = masked;
        self
    }

    pub fn is_invocation(&self) -> bool {
        matches!(self.kind, StepKind::ToolInvocation { .. })
    }

    /// Transcript text of this step; `None` for steps with no surface form.
    pub fn render(&self, cfg: &SegmentConfig) -> Option<String> {
        match &self.kind {
            StepKind::TextThought { text } => Some(text.clone()),
            StepKind::ToolInvocation { invocation } => match invocation {
                Invocation::Parsed { call } => Some(render_tool_call(call)),
                Invocation::Malformed { raw, .. } => Some(format!("<tool_call>{raw}</tool_call>")),
                Invocation::Elided => None,
            },
            StepKind::ExecutionOutcome { payload, is_error } => Some(if *is_error {
                format!("{}{}", cfg.error_marker, payload.describe())
            } else {
                format!("{} {}", cfg.result_marker, payload.describe())
            }),
            StepKind::FinalAnswer { answer } => Some(format!("\\boxed{{{answer}}}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Trajectory {
    pub query_id: String,
    pub steps: Vec<TrajectoryStep>,
}

impl Trajectory {
    pub fn new(query_id: impl Into<String>) -> Self {
        Self { query_id: query_id.into(), steps: Vec::new() }
    }

    /// Number of attempted visual operations, successful or not.
    pub fn n_vo(&self) -> usize {
        self.steps.iter().filter(|s| s.is_invocation()).count()
    }

    pub fn is_pixel_space(&self) -> bool {
        self.n_vo() >= 1
    }

    pub fn final_answer(&self) -> Option<&str> {
        match self.steps.last().map(|s| &s.kind) {
            Some(StepKind::FinalAnswer { answer }) => Some(answer),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), ProtocolViolation> {
        validate_steps(&self.steps)
    }

    /// Flat transcript with steps separated by blank lines.
    pub fn render(&self, cfg: &SegmentConfig) -> String {
        self.render_with_spans(cfg).0
    }

    /// Flat transcript plus the character span (in Unicode scalar values) of
    /// every step. Steps without surface text get an empty span.
    pub fn render_with_spans(&self, cfg: &SegmentConfig) -> (String, Vec<[usize; 2]>) {
        let mut out = String::new();
        let mut chars = 0usize;
        let mut spans = Vec::with_capacity(self.steps.len());
        for step in &self.steps {
            match step.render(cfg) {
                Some(text) => {
                    if !out.is_empty() {
                        out.push_str("\n\n");
                        chars += 2;
                    }
                    let start = chars;
                    chars += text.chars().count();
                    out.push_str(&text);
                    spans.push([start, chars]);
                }
                None => spans.push([chars, chars]),
            }
        }
        (out, spans)
    }
}

pub(crate) fn validate_steps(steps: &[TrajectoryStep]) -> Result<(), ProtocolViolation> {
    for (index, step) in steps.iter().enumerate() {
        match step.kind {
            StepKind::ExecutionOutcome { .. } => {
                if index == 0 || !steps[index - 1].is_invocation() {
                    return Err(ProtocolViolation::OutcomeOutOfPlace { index });
                }
            }
            StepKind::FinalAnswer { .. } if index + 1 != steps.len() => {
                return Err(ProtocolViolation::AnswerNotLast { index });
            }
            _ => {}
        }
    }
    Ok(())
}
