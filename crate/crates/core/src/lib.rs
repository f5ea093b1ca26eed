//! Runtime and analysis toolkit for pixel-space reasoning agents.
//!
//! The crate covers the full loop around a vision-language policy that can
//! zoom into images and pick video frames while it reasons:
//!
//! - [`protocol`]: the `<tool_call>` wire format, `\boxed{}` answers and
//!   transcript segmentation.
//! - [`visual`]: `crop_image` / `select_frames` execution over a workspace.
//! - [`reward`]: correctness, curiosity bonus, efficiency penalty.
//! - [`grpo`]: group-relative advantages and selective sample replay.
//! - [`rollout`]: the generate/execute loop against a pluggable backend.
//! - [`sim`]: a small policy simulator that reproduces the learning trap.
//! - [`synth`]: template synthesis of training trajectories with loss masks.

pub mod grpo;
pub mod http;
pub mod protocol;
pub mod reward;
pub mod rollout;
pub mod sim;
pub mod synth;
pub mod trajectory;
pub mod visual;

pub use grpo::{
    detect_uniformity_ratio, episode_tick, group_advantages, ssr_fill_batch, AdvantageGroup,
    AdvantageMode, EpisodeClock, EpisodeConfig, FilledBatch, ReplayBuffer, SsrSelector, Tick,
};
pub use protocol::{
    extract_boxed_answer, parse_tool_calls, render_tool_call, segment_trajectory,
    MalformedToolCall, ProtocolViolation, SegmentConfig, ToolCall,
};
pub use reward::{
    correctness_reward, curiosity_bonus, efficiency_penalty, modified_reward, rapr,
    standard_lagrangian_reward, LagrangianConfig, Matcher, RewardConfig, RewardError,
    RolloutGroup, RolloutRecord,
};
pub use rollout::{
    assemble_prompt, run_group, run_rollout, PolicyBackend, Query, RolloutLimits, RolloutOutcome,
};
pub use sim::{run_training, MetricsTrace, SimConfig, SimPolicy};
pub use synth::{
    emit_record, insert_error, sample_kind, synth_single_pass, SeedExample, SynthRecord,
    SynthTrajectory, TextGen, TrajectoryKind,
};
pub use trajectory::{Invocation, OutcomePayload, StepKind, Trajectory, TrajectoryStep};
pub use visual::{
    crop_image, execute, select_frames, BBox, ErrorCode, ExecError, ExecOutput, FaultInjector,
    ImageBuffer, VideoClip, VisualWorkspace,
};
