//! Flat transcript → step list.
//!
//! A transcript is cut into tagged tool-call blocks, outcome paragraphs and
//! free text. Outcome paragraphs start at a line beginning with one of the
//! configured markers and run to the next blank line. The last balanced
//! `\boxed{}` is the final answer; anything after it is discarded.

use serde::{Deserialize, Serialize};

use super::{boxed_matches, decode_block, scan_blocks};
use crate::trajectory::{Invocation, OutcomePayload, ProtocolViolation, StepKind, TrajectoryStep};

/// What to do with an outcome that has no tool-call text before it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ElidedInvocations {
    /// Fail with [`ProtocolViolation::OrphanOutcome`].
    #[default]
    Reject,
    /// Insert an [`Invocation::Elided`] step in front of the outcome.
    Synthesize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentConfig {
    pub error_marker: String,
    pub result_marker: String,
    pub elided: ElidedInvocations,
}

impl Default for SegmentConfig {
    fn default() -> Self {
        Self {
            error_marker: "Execution error:".into(),
            result_marker: "Execution result:".into(),
            elided: ElidedInvocations::Reject,
        }
    }
}

impl SegmentConfig {
    pub fn lenient() -> Self {
        Self { elided: ElidedInvocations::Synthesize, ..Self::default() }
    }
}

/// Reconstructs the step list of a flat transcript.
pub fn segment_trajectory(
    text: &str,
    cfg: &SegmentConfig,
) -> Result<Vec<TrajectoryStep>, ProtocolViolation> {
    // A `\boxed{}` inside a tool-call argument is not an answer.
    let blocks = scan_blocks(text);
    let boxed = boxed_matches(text)
        .into_iter()
        .rfind(|m| !blocks.iter().any(|b| b.span.start < m.span.end && m.span.start < b.span.end));
    let body_end = boxed.as_ref().map_or(text.len(), |m| m.span.start);
    let body = &text[..body_end];

    let mut out = Segmenter { cfg, steps: Vec::new() };
    let mut cursor = 0;
    for block in scan_blocks(body) {
        out.gap(body, cursor, block.span.start)?;
        cursor = block.span.end;
        let invocation = match decode_block(body, block) {
            Ok(parsed) => Invocation::Parsed { call: parsed.call },
            Err(bad) => Invocation::Malformed { raw: bad.raw, reason: bad.reason },
        };
        out.steps.push(TrajectoryStep {
            kind: StepKind::ToolInvocation { invocation },
            masked: false,
        });
    }
    out.gap(body, cursor, body.len())?;
    if let Some(m) = boxed {
        out.steps.push(TrajectoryStep::answer(&text[m.content]));
    }
    Ok(out.steps)
}

struct Segmenter<'a> {
    cfg: &'a SegmentConfig,
    steps: Vec<TrajectoryStep>,
}

impl Segmenter<'_> {
    /// Splits `text[start..end]` (no tool-call blocks inside) into thoughts
    /// and outcome paragraphs.
    fn gap(&mut self, text: &str, start: usize, end: usize) -> Result<(), ProtocolViolation> {
        let mut thought_start = start;
        let mut line_start = start;
        while line_start < end {
            let line_end = text[line_start..end].find('\n').map_or(end, |i| line_start + i + 1);
            let line = text[line_start..line_end].trim_start();
            let marker = if line.starts_with(&self.cfg.error_marker) {
                Some((true, self.cfg.error_marker.len()))
            } else if line.starts_with(&self.cfg.result_marker) {
                Some((false, self.cfg.result_marker.len()))
            } else {
                None
            };
            let Some((is_error, marker_len)) = marker else {
                line_start = line_end;
                continue;
            };
            self.thought(&text[thought_start..line_start]);
            let para_end = paragraph_end(text, line_end, end);
            let payload_start = line_start + (text[line_start..].len() - text[line_start..].trim_start().len());
            let payload = text[payload_start + marker_len..para_end].trim();
            self.outcome(line_start, payload, is_error)?;
            thought_start = para_end;
            line_start = para_end;
        }
        self.thought(&text[thought_start..end]);
        Ok(())
    }

    fn thought(&mut self, text: &str) {
        let text = text.trim();
        if !text.is_empty() {
            self.steps.push(TrajectoryStep::thought(text));
        }
    }

    fn outcome(&mut self, offset: usize, payload: &str, is_error: bool) -> Result<(), ProtocolViolation> {
        if !self.steps.last().is_some_and(TrajectoryStep::is_invocation) {
            match self.cfg.elided {
                ElidedInvocations::Reject => return Err(ProtocolViolation::OrphanOutcome { offset }),
                ElidedInvocations::Synthesize => self.steps.push(TrajectoryStep {
                    kind: StepKind::ToolInvocation { invocation: Invocation::Elided },
                    masked: false,
                }),
            }
        }
        self.steps.push(TrajectoryStep::outcome(
            OutcomePayload::Text { text: payload.to_string() },
            is_error,
        ));
        Ok(())
    }
}

/// End of the paragraph whose first line ends at `from`: the start of the
/// next whitespace-only line, or `end`.
fn paragraph_end(text: &str, mut from: usize, end: usize) -> usize {
    while from < end {
        let line_end = text[from..end].find('\n').map_or(end, |i| from + i + 1);
        if text[from..line_end].trim().is_empty() {
            return from;
        }
        from = line_end;
    }
    end
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::Trajectory;

    fn kinds(steps: &[TrajectoryStep]) -> Vec<&'static str> {
        steps
            .iter()
            .map(|s| match &s.kind {
                StepKind::TextThought { .. } => "thought",
                StepKind::ToolInvocation { invocation: Invocation::Parsed { .. } } => "call",
                StepKind::ToolInvocation { invocation: Invocation::Malformed { .. } } => "malformed",
                StepKind::ToolInvocation { invocation: Invocation::Elided } => "elided",
                StepKind::ExecutionOutcome { is_error: true, .. } => "error",
                StepKind::ExecutionOutcome { is_error: false, .. } => "result",
                StepKind::FinalAnswer { .. } => "answer",
            })
            .collect()
    }

    #[test]
    fn pure_text() {
        let steps = segment_trajectory("It is red.\n\n\\boxed{B}", &SegmentConfig::default()).unwrap();
        assert_eq!(kinds(&steps), ["thought", "answer"]);
        let t = Trajectory { query_id: "q".into(), steps };
        assert!(!t.is_pixel_space());
        assert_eq!(t.final_answer(), Some("B"));
    }

    #[test]
    fn two_calls_two_outcomes() {
        let text = concat!(
            "Look closer.\n",
            r#"<tool_call>{"name": "crop_image", "arguments": {"bbox_2d": [0,0,5,5], "target_image": 1}}</tool_call>"#,
            "\nExecution result: <image 2: 5x5>\n\nStill unclear.\n",
            r#"<tool_call>{"name": "crop_image", "arguments": {"bbox_2d": [1,1,2,2], "target_image": 2}}</tool_call>"#,
            "\nExecution error:bbox out of bounds\n\nGiving up. \\boxed{C} trailing"
        );
        let steps = segment_trajectory(text, &SegmentConfig::default()).unwrap();
        assert_eq!(
            kinds(&steps),
            ["thought", "call", "result", "thought", "call", "error", "thought", "answer"]
        );
        let t = Trajectory { query_id: "q".into(), steps };
        assert_eq!(t.n_vo(), 2);
        t.validate().unwrap();
        match &t.steps[5].kind {
            StepKind::ExecutionOutcome { payload: OutcomePayload::Text { text }, .. } => {
                assert_eq!(text, "bbox out of bounds")
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(t.steps[2].masked && t.steps[5].masked);
    }

    #[test]
    fn orphan_outcome_strict_vs_lenient() {
        let text = "Thinking.\n\nExecution error:max() arg is an empty sequence\n\nOk. \\boxed{A}";
        let err = segment_trajectory(text, &SegmentConfig::default()).unwrap_err();
        assert_eq!(err, ProtocolViolation::OrphanOutcome { offset: 11 });
        let steps = segment_trajectory(text, &SegmentConfig::lenient()).unwrap();
        assert_eq!(kinds(&steps), ["thought", "elided", "error", "thought", "answer"]);
    }

    #[test]
    fn outcome_paragraph_spans_lines_until_blank() {
        let text = "<tool_call>{\"name\": \"x\"}</tool_call>\nExecution error:line one\nline two\n\nafter";
        let steps = segment_trajectory(text, &SegmentConfig::default()).unwrap();
        assert_eq!(kinds(&steps), ["call", "error", "thought"]);
        match &steps[1].kind {
            StepKind::ExecutionOutcome { payload, .. } => {
                assert_eq!(payload.describe(), "line one\nline two")
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn marker_mid_line_is_plain_text() {
        let text = "The log said Execution error: nothing.\n\\boxed{A}";
        let steps = segment_trajectory(text, &SegmentConfig::default()).unwrap();
        assert_eq!(kinds(&steps), ["thought", "answer"]);
    }

    #[test]
    fn malformed_block_counts_as_attempt() {
        let text = "<tool_call>{\"name\": \"select_frames\"</tool_call>\nExecution error:bad call";
        let steps = segment_trajectory(text, &SegmentConfig::default()).unwrap();
        assert_eq!(kinds(&steps), ["malformed", "error"]);
    }

    #[test]
    fn boxed_inside_arguments_is_not_an_answer() {
        let text = "Zoom.\n\n<tool_call>{\"name\": \"crop_image\", \"arguments\": {\"note\": \"\\\\boxed{x}\"}}</tool_call>\n\nExecution result: <image 2: 4x4>";
        let steps = segment_trajectory(text, &SegmentConfig::default()).unwrap();
        assert_eq!(kinds(&steps), ["thought", "call", "result"]);
    }
}
