//! Template synthesis of instruction-tuning trajectories.
//!
//! A single-pass trajectory analyses the whole input, announces a closer
//! look, performs the one correct operation, analyses the result and
//! answers. Self-correction variants insert deliberately wrong operations
//! (a disjoint crop, an oversized crop, wrong frames) before the correct
//! one. Every execution outcome and every inserted wrong operation is
//! loss-masked so that the model learns to recover, not to make the mistake.

mod textgen;

use std::path::PathBuf;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::protocol::{SegmentConfig, ToolCall, CROP_IMAGE, SELECT_FRAMES};
use crate::trajectory::{ImageRef, ImageSource, OutcomePayload, StepKind, Trajectory, TrajectoryStep};
use crate::visual::BBox;

pub use textgen::{CannedTextGen, ChatTextGen, TextGen};

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("seed {id}: invalid cue: {reason}")]
    CueInvalid { id: String, reason: String },
    #[error("seed {id}: no valid distractor for {kind:?} after {attempts} attempts")]
    NoValidDistractor { id: String, kind: TrajectoryKind, attempts: usize },
    #[error("{kind:?} is not allowed for {category:?} seeds")]
    KindNotAllowed { kind: TrajectoryKind, category: Category },
    #[error("errors can only be inserted into a single-pass trajectory")]
    NotSinglePass,
    #[error("text generator failed: {0}")]
    Generator(String),
    #[error("invalid proportions: {0}")]
    Proportions(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Image,
    Video,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryKind {
    SinglePass,
    RecropOnce,
    RecropTwice,
    FurtherZoom,
    Reselect,
}

pub const IMAGE_KINDS: [TrajectoryKind; 4] = [
    TrajectoryKind::SinglePass,
    TrajectoryKind::RecropOnce,
    TrajectoryKind::RecropTwice,
    TrajectoryKind::FurtherZoom,
];
pub const VIDEO_KINDS: [TrajectoryKind; 2] = [TrajectoryKind::SinglePass, TrajectoryKind::Reselect];

impl TrajectoryKind {
    pub fn allowed_for(self, category: Category) -> bool {
        match category {
            Category::Image => IMAGE_KINDS.contains(&self),
            Category::Video => VIDEO_KINDS.contains(&self),
        }
    }

    fn distractors(self) -> usize {
        match self {
            TrajectoryKind::SinglePass => 0,
            TrajectoryKind::RecropTwice => 2,
            _ => 1,
        }
    }
}

/// Geometry of the visual input; pixels are only needed by generators that
/// look at the media.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "category", rename_all = "snake_case")]
pub enum Media {
    Image { width: u32, height: u32 },
    Video { frames: usize, width: u32, height: u32 },
}

impl Media {
    pub fn category(&self) -> Category {
        match self {
            Media::Image { .. } => Category::Image,
            Media::Video { .. } => Category::Video,
        }
    }
}

/// Reference visual cue: where the answer can be seen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cue {
    Bbox([f64; 4]),
    Frames(Vec<usize>),
}

impl Cue {
    fn bbox(&self) -> Option<BBox> {
        match self {
            Cue::Bbox([x1, y1, x2, y2]) => Some(BBox::new(*x1, *y1, *x2, *y2)),
            Cue::Frames(_) => None,
        }
    }

    fn tool_call(&self) -> ToolCall {
        match self {
            Cue::Bbox(_) => ToolCall::new(
                CROP_IMAGE,
                json!({"bbox_2d": self.bbox().expect("bbox cue").to_json(), "target_image": 1}),
            ),
            Cue::Frames(f) => ToolCall::new(SELECT_FRAMES, json!({"target_frames": f})),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedExample {
    pub id: String,
    pub question: String,
    pub gold: String,
    pub media: Media,
    pub cue: Cue,
    /// What the transition sentence says the model will look at. Defaults
    /// to `the part about "<question>"`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub focus: Option<String>,
    /// PNG file (image) or frame directory (video) for generators that need
    /// pixels.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub media_path: Option<PathBuf>,
}

impl SeedExample {
    pub fn category(&self) -> Category {
        self.media.category()
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |reason: String| Err(SynthError::CueInvalid { id: self.id.clone(), reason });
        match (&self.media, &self.cue) {
            (Media::Image { width, height }, Cue::Bbox(b)) => {
                let [x1, y1, x2, y2] = *b;
                let inside = b.iter().all(|c| c.is_finite() && *c >= 0.0)
                    && x2 <= f64::from(*width)
                    && y2 <= f64::from(*height);
                if !inside {
                    return bad(format!("bbox {b:?} is outside the {width}x{height} image"));
                }
                if x1.trunc() >= x2.trunc() || y1.trunc() >= y2.trunc() {
                    return bad(format!("bbox {b:?} has zero area"));
                }
                Ok(())
            }
            (Media::Video { frames, .. }, Cue::Frames(f)) => {
                if f.is_empty() || f.len() > 8 {
                    return bad(format!("{} cue frames; expected 1 to 8", f.len()));
                }
                match f.iter().find(|&&i| i >= *frames) {
                    Some(i) => bad(format!("frame {i} is outside 0..{frames}")),
                    None => Ok(()),
                }
            }
            _ => bad("cue kind does not match the media kind".into()),
        }
    }

    fn transition(&self) -> String {
        let focus = self.focus.clone().unwrap_or_else(|| format!("the part about \"{}\"", self.question));
        match self.category() {
            Category::Image => format!("Now I will zoom in to look clearer at {focus}."),
            Category::Video => format!("Now I will select some frames to look clearer at {focus}."),
        }
    }

    /// Outcome placeholder for executing `cue` as the `nth` crop (0-based).
    fn outcome_for(&self, cue: &Cue, nth: usize) -> OutcomePayload {
        let images = match (cue, self.media) {
            (Cue::Bbox(b), _) => vec![ImageRef {
                source: ImageSource::Workspace { index: nth + 2 },
                width: (b[2].trunc() - b[0].trunc()) as u32,
                height: (b[3].trunc() - b[1].trunc()) as u32,
            }],
            (Cue::Frames(f), Media::Video { width, height, .. }) => f
                .iter()
                .map(|&index| ImageRef { source: ImageSource::Frame { index }, width, height })
                .collect(),
            (Cue::Frames(_), Media::Image { .. }) => Vec::new(),
        };
        OutcomePayload::Images { images }
    }
}

/// Relative weights of each kind, normalized on use.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Proportions {
    /// single_pass, recrop_once, recrop_twice, further_zoom
    pub image: [f64; 4],
    /// single_pass, reselect
    pub video: [f64; 2],
}

impl Default for Proportions {
    fn default() -> Self {
        Self { image: [0.3, 0.2, 0.2, 0.3], video: [0.9, 0.1] }
    }
}

impl Proportions {
    pub fn validate(&self) -> Result<(), SynthError> {
        for w in [&self.image[..], &self.video[..]] {
            if w.iter().any(|x| !(x.is_finite() && *x >= 0.0)) || w.iter().sum::<f64>() <= 0.0 {
                return Err(SynthError::Proportions(format!("{w:?} must be non-negative with a positive sum")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    /// Oversized crops cover at least this multiple of the cue area.
    pub oversize_factor: f64,
    /// Rejection-sampling budget per distractor.
    pub max_attempts: usize,
    pub proportions: Proportions,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self { oversize_factor: 4.0, max_attempts: 1000, proportions: Proportions::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthTrajectory {
    pub id: String,
    pub seed: SeedExample,
    pub kind: TrajectoryKind,
    pub trajectory: Trajectory,
    /// Distractor cues in insertion order.
    pub distractors: Vec<Cue>,
}

pub fn sample_kind<R: Rng + ?Sized>(category: Category, rng: &mut R, proportions: &Proportions) -> TrajectoryKind {
    match category {
        Category::Image => IMAGE_KINDS[WeightedIndex::new(proportions.image).expect("validated weights").sample(rng)],
        Category::Video => VIDEO_KINDS[WeightedIndex::new(proportions.video).expect("validated weights").sample(rng)],
    }
}

/// Pieces of generated text reused when rebuilding a trajectory.
struct Texts {
    whole: String,
    transition: String,
    cue: String,
}

pub fn synth_single_pass(seed: &SeedExample, gen: &dyn TextGen) -> Result<SynthTrajectory, SynthError> {
    seed.validate()?;
    let (whole_prefix, cue_prefix) = match seed.category() {
        Category::Image => ("Analyzing the whole image: ", "Analyzing the cropped part: "),
        Category::Video => ("Analyzing the video:\n", "Analyzing the selected frames:\n"),
    };
    let texts = Texts {
        whole: format!("{whole_prefix}{}", gen.describe_whole(seed)?),
        transition: seed.transition(),
        cue: format!("{cue_prefix}{}", gen.describe_cue(seed, &seed.cue)?),
    };
    Ok(SynthTrajectory {
        id: seed.id.clone(),
        seed: seed.clone(),
        kind: TrajectoryKind::SinglePass,
        trajectory: build(seed, &texts, TrajectoryKind::SinglePass, &[]),
        distractors: Vec::new(),
    })
}

fn reflection(kind: TrajectoryKind) -> &'static str {
    match kind {
        TrajectoryKind::FurtherZoom => {
            "The cropped region is too large to make out the details. Let me zoom in further."
        }
        TrajectoryKind::Reselect => {
            "The selected frames do not show the relevant moment. Let me select other frames."
        }
        _ => "The cropped region does not contain what the question asks about. Let me crop another region.",
    }
}

fn build(seed: &SeedExample, texts: &Texts, kind: TrajectoryKind, distractors: &[Cue]) -> Trajectory {
    let mut steps = vec![TrajectoryStep::thought(&texts.whole), TrajectoryStep::thought(&texts.transition)];
    for (nth, cue) in distractors.iter().enumerate() {
        steps.push(TrajectoryStep::invocation(cue.tool_call()).masked(true));
        steps.push(TrajectoryStep::outcome(seed.outcome_for(cue, nth), false));
        steps.push(TrajectoryStep::thought(reflection(kind)));
    }
    steps.push(TrajectoryStep::invocation(seed.cue.tool_call()));
    steps.push(TrajectoryStep::outcome(seed.outcome_for(&seed.cue, distractors.len()), false));
    steps.push(TrajectoryStep::thought(&texts.cue));
    steps.push(TrajectoryStep::answer(&seed.gold));
    Trajectory { query_id: seed.id.clone(), steps }
}

/// Turns a single-pass trajectory into a self-correction trajectory of the
/// given kind.
pub fn insert_error<R: Rng + ?Sized>(
    traj: &SynthTrajectory,
    kind: TrajectoryKind,
    rng: &mut R,
    cfg: &SynthConfig,
) -> Result<SynthTrajectory, SynthError> {
    if traj.kind != TrajectoryKind::SinglePass || traj.trajectory.steps.len() != 6 {
        return Err(SynthError::NotSinglePass);
    }
    let category = traj.seed.category();
    if kind == TrajectoryKind::SinglePass || !kind.allowed_for(category) {
        return Err(SynthError::KindNotAllowed { kind, category });
    }
    let text = |i: usize| match &traj.trajectory.steps[i].kind {
        StepKind::TextThought { text } => Ok(text.clone()),
        _ => Err(SynthError::NotSinglePass),
    };
    let texts = Texts { whole: text(0)?, transition: text(1)?, cue: text(4)? };

    let seed = &traj.seed;
    let mut distractors = Vec::with_capacity(kind.distractors());
    for _ in 0..kind.distractors() {
        let d = match kind {
            TrajectoryKind::RecropOnce | TrajectoryKind::RecropTwice => disjoint_crop(seed, &distractors, rng, cfg),
            TrajectoryKind::FurtherZoom => oversized_crop(seed, rng, cfg),
            TrajectoryKind::Reselect => other_frames(seed, rng),
            TrajectoryKind::SinglePass => unreachable!("rejected above"),
        };
        distractors.push(d.ok_or_else(|| SynthError::NoValidDistractor {
            id: seed.id.clone(),
            kind,
            attempts: cfg.max_attempts,
        })?);
    }
    Ok(SynthTrajectory {
        id: traj.id.clone(),
        seed: seed.clone(),
        kind,
        trajectory: build(seed, &texts, kind, &distractors),
        distractors,
    })
}

/// Single pass plus, for the sampled kind, inserted errors.
pub fn synthesize<R: Rng + ?Sized>(
    seed: &SeedExample,
    gen: &dyn TextGen,
    rng: &mut R,
    cfg: &SynthConfig,
) -> Result<SynthTrajectory, SynthError> {
    let kind = sample_kind(seed.category(), rng, &cfg.proportions);
    let single = synth_single_pass(seed, gen)?;
    if kind == TrajectoryKind::SinglePass {
        Ok(single)
    } else {
        insert_error(&single, kind, rng, cfg)
    }
}

fn image_dims(seed: &SeedExample) -> (u32, u32) {
    match seed.media {
        Media::Image { width, height } | Media::Video { width, height, .. } => (width, height),
    }
}

/// Integer box of roughly the cue's size with zero overlap with the cue.
fn disjoint_crop<R: Rng + ?Sized>(seed: &SeedExample, taken: &[Cue], rng: &mut R, cfg: &SynthConfig) -> Option<Cue> {
    let cue = seed.cue.bbox()?;
    let (w, h) = image_dims(seed);
    for _ in 0..cfg.max_attempts {
        let scale: f64 = rng.random_range(0.5..=1.5);
        let bw = ((cue.x2 - cue.x1) * scale).round().clamp(1.0, f64::from(w)) as u32;
        let bh = ((cue.y2 - cue.y1) * scale).round().clamp(1.0, f64::from(h)) as u32;
        let x1 = rng.random_range(0..=w - bw);
        let y1 = rng.random_range(0..=h - bh);
        let b = BBox::new(f64::from(x1), f64::from(y1), f64::from(x1 + bw), f64::from(y1 + bh));
        let candidate = Cue::Bbox(b.to_array());
        if b.intersection_area(&cue) == 0.0 && !taken.contains(&candidate) {
            return Some(candidate);
        }
    }
    None
}

/// Integer box containing the cue with at least `oversize_factor` times its
/// area.
fn oversized_crop<R: Rng + ?Sized>(seed: &SeedExample, rng: &mut R, cfg: &SynthConfig) -> Option<Cue> {
    let cue = seed.cue.bbox()?;
    let (w, h) = image_dims(seed);
    let target = cfg.oversize_factor * cue.area();
    for _ in 0..cfg.max_attempts {
        let x1 = rng.random_range(0..=cue.x1.floor() as u32);
        let y1 = rng.random_range(0..=cue.y1.floor() as u32);
        let x2 = rng.random_range((cue.x2.ceil() as u32).min(w)..=w);
        let y2 = rng.random_range((cue.y2.ceil() as u32).min(h)..=h);
        let b = BBox::new(f64::from(x1), f64::from(y1), f64::from(x2), f64::from(y2));
        if b.contains(&cue) && b.area() >= target && b.area() > cue.area() {
            return Some(Cue::Bbox(b.to_array()));
        }
    }
    None
}

/// 1 to 8 frames (sorted) that share no index with the cue.
fn other_frames<R: Rng + ?Sized>(seed: &SeedExample, rng: &mut R) -> Option<Cue> {
    let (Media::Video { frames, .. }, Cue::Frames(cue)) = (&seed.media, &seed.cue) else {
        return None;
    };
    let pool: Vec<usize> = (0..*frames).filter(|i| !cue.contains(i)).collect();
    if pool.is_empty() {
        return None;
    }
    let count = rng.random_range(1..=pool.len().min(8));
    let mut picked: Vec<usize> = index::sample(rng, pool.len(), count).into_iter().map(|i| pool[i]).collect();
    picked.sort_unstable();
    Some(Cue::Frames(picked))
}

/// A step with its rendered text and character span in the record text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    #[serde(flatten)]
    pub step: TrajectoryStep,
    pub rendered: String,
    pub span: [usize; 2],
}

/// One line of synthesized training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthRecord {
    pub id: String,
    /// `None` for pass-through text-only records.
    pub category: Option<Category>,
    pub kind: Option<TrajectoryKind>,
    pub question: String,
    pub gold: String,
    /// Steps joined by blank lines.
    pub text: String,
    pub steps: Vec<StepRecord>,
    /// Character spans (Unicode scalar values, end exclusive) to exclude
    /// from the loss.
    pub mask_spans: Vec<[usize; 2]>,
}

impl SynthRecord {
    pub fn trajectory(&self) -> Trajectory {
        Trajectory { query_id: self.id.clone(), steps: self.steps.iter().map(|s| s.step.clone()).collect() }
    }
}

fn record(id: &str, category: Option<Category>, kind: Option<TrajectoryKind>, question: &str, gold: &str, t: &Trajectory) -> SynthRecord {
    let cfg = SegmentConfig::default();
    let (text, spans) = t.render_with_spans(&cfg);
    let steps: Vec<StepRecord> = t
        .steps
        .iter()
        .zip(&spans)
        .map(|(step, &span)| StepRecord { step: step.clone(), rendered: step.render(&cfg).unwrap_or_default(), span })
        .collect();
    let mask_spans = steps.iter().filter(|s| s.step.masked && s.span[0] < s.span[1]).map(|s| s.span).collect();
    SynthRecord {
        id: id.to_string(),
        category,
        kind,
        question: question.to_string(),
        gold: gold.to_string(),
        text,
        steps,
        mask_spans,
    }
}

pub fn emit_record(traj: &SynthTrajectory) -> SynthRecord {
    let seed = &traj.seed;
    record(&traj.id, Some(seed.category()), Some(traj.kind), &seed.question, &seed.gold, &traj.trajectory)
}

/// Pass-through record for a pure-text demonstration.
pub fn text_only_record(id: &str, question: &str, reasoning: &str, gold: &str) -> SynthRecord {
    let t = Trajectory {
        query_id: id.to_string(),
        steps: vec![TrajectoryStep::thought(reasoning), TrajectoryStep::answer(gold)],
    };
    record(id, None, None, question, gold, &t)
}
