//! Visual operations: `crop_image` over a 1-indexed image workspace and
//! `select_frames` over a 0-indexed video clip.
//!
//! Every failure is a value ([`ExecError`]) whose message is meant to be
//! pasted into the trajectory after the error marker.

mod io;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::protocol::{ToolCall, CROP_IMAGE, SELECT_FRAMES};
use crate::trajectory::{ImageRef, ImageSource, OutcomePayload};

pub use io::{encode_png, load_frames_dir, load_png, load_raw_rgb, save_frames_dir, save_png, MediaError};

/// Row-major RGB8 image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageBuffer {
    width: u32,
    height: u32,
    pixels: Vec<u8>,
}

impl ImageBuffer {
    /// `None` unless both sides are ≥ 1 and `pixels.len() == w * h * 3`.
    pub fn new(width: u32, height: u32, pixels: Vec<u8>) -> Option<Self> {
        let ok = width >= 1 && height >= 1 && pixels.len() == width as usize * height as usize * 3;
        ok.then_some(Self { width, height, pixels })
    }

    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Self {
        assert!(width >= 1 && height >= 1, "image sides must be positive");
        let pixels = rgb.iter().copied().cycle().take(width as usize * height as usize * 3).collect();
        Self { width, height, pixels }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    /// Copies the half-open integer rectangle `[x1, x2) × [y1, y2)`.
    /// Callers validate bounds.
    fn sub_image(&self, x1: u32, y1: u32, x2: u32, y2: u32) -> ImageBuffer {
        let w = (x2 - x1) as usize;
        let mut pixels = Vec::with_capacity(w * (y2 - y1) as usize * 3);
        for y in y1..y2 {
            let row = (y as usize * self.width as usize + x1 as usize) * 3;
            pixels.extend_from_slice(&self.pixels[row..row + w * 3]);
        }
        ImageBuffer { width: x2 - x1, height: y2 - y1, pixels }
    }
}

/// Ordered frames of equal size.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VideoClip {
    frames: Vec<ImageBuffer>,
}

impl VideoClip {
    /// `None` for an empty list or mixed frame sizes.
    pub fn new(frames: Vec<ImageBuffer>) -> Option<Self> {
        let first = frames.first()?;
        let same = frames.iter().all(|f| f.width == first.width && f.height == first.height);
        same.then_some(Self { frames })
    }

    pub fn frames(&self) -> &[ImageBuffer] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// Crop rectangle as given by the caller, before truncation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        Self { x1, y1, x2, y2 }
    }

    pub fn area(&self) -> f64 {
        (self.x2 - self.x1).max(0.0) * (self.y2 - self.y1).max(0.0)
    }

    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let w = self.x2.min(other.x2) - self.x1.max(other.x1);
        let h = self.y2.min(other.y2) - self.y1.max(other.y1);
        w.max(0.0) * h.max(0.0)
    }

    pub fn contains(&self, other: &BBox) -> bool {
        self.x1 <= other.x1 && self.y1 <= other.y1 && self.x2 >= other.x2 && self.y2 >= other.y2
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }

    /// JSON form used in `bbox_2d`; integral coordinates print as integers.
    pub fn to_json(&self) -> Value {
        Value::Array(self.to_array().iter().map(|&c| number(c)).collect())
    }
}

fn number(c: f64) -> Value {
    if c.fract() == 0.0 && c.abs() < 9.0e15 {
        Value::from(c as i64)
    } else {
        Value::from(c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    OutOfBounds,
    EmptySelection,
    TooManyFrames,
    BadTargetIndex,
    DegenerateBBox,
    InjectedFault,
    ArgumentError,
    UnknownOperation,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error, Serialize, Deserialize)]
#[error("{message}")]
pub struct ExecError {
    pub code: ErrorCode,
    pub message: String,
}

impl ExecError {
    fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        Self { code, message: message.into() }
    }
}

/// Knobs shared by both operations.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpsConfig {
    pub max_frames: usize,
    /// Message for an empty `target_frames` list. The default matches what
    /// the reference executor prints.
    pub empty_selection_message: String,
}

impl Default for OpsConfig {
    fn default() -> Self {
        Self { max_frames: 8, empty_selection_message: "max() arg is an empty sequence".into() }
    }
}

/// Images the policy can refer to (index 1 = original) plus an optional clip.
#[derive(Debug, Clone, Default)]
pub struct VisualWorkspace {
    images: Vec<ImageBuffer>,
    clip: Option<VideoClip>,
    pub config: OpsConfig,
}

impl VisualWorkspace {
    pub fn with_image(image: ImageBuffer) -> Self {
        Self { images: vec![image], ..Self::default() }
    }

    pub fn with_clip(clip: VideoClip) -> Self {
        Self { clip: Some(clip), ..Self::default() }
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// 1-based lookup.
    pub fn image(&self, index: usize) -> Option<&ImageBuffer> {
        index.checked_sub(1).and_then(|i| self.images.get(i))
    }

    pub fn images(&self) -> &[ImageBuffer] {
        &self.images
    }

    pub fn clip(&self) -> Option<&VideoClip> {
        self.clip.as_ref()
    }
}

/// Successful operation output.
#[derive(Debug, Clone, PartialEq)]
pub enum ExecOutput {
    /// The crop, already appended to the workspace at `index`.
    Cropped { index: usize, image: ImageBuffer },
    Frames { indices: Vec<usize>, frames: Vec<ImageBuffer> },
}

impl ExecOutput {
    /// Placeholder recorded in the trajectory in place of pixels.
    pub fn payload(&self) -> OutcomePayload {
        let images = match self {
            ExecOutput::Cropped { index, image } => vec![ImageRef {
                source: ImageSource::Workspace { index: *index },
                width: image.width,
                height: image.height,
            }],
            ExecOutput::Frames { indices, frames } => indices
                .iter()
                .zip(frames)
                .map(|(&index, f)| ImageRef {
                    source: ImageSource::Frame { index },
                    width: f.width,
                    height: f.height,
                })
                .collect(),
        };
        OutcomePayload::Images { images }
    }

    pub fn images(&self) -> Vec<&ImageBuffer> {
        match self {
            ExecOutput::Cropped { image, .. } => vec![image],
            ExecOutput::Frames { frames, .. } => frames.iter().collect(),
        }
    }
}

/// Crops `bbox` out of workspace image `target_image` (1-based) and appends
/// the result. Coordinates are truncated toward zero after the bounds check.
pub fn crop_image(
    workspace: &mut VisualWorkspace,
    bbox: BBox,
    target_image: usize,
) -> Result<ExecOutput, ExecError> {
    let source = workspace.image(target_image).ok_or_else(|| {
        ExecError::new(
            ErrorCode::BadTargetIndex,
            format!(
                "target_image {target_image} does not exist; valid indices are 1..={}",
                workspace.len()
            ),
        )
    })?;
    let (w, h) = (source.width as f64, source.height as f64);
    let coords = bbox.to_array();
    let inside = coords.iter().all(|c| c.is_finite() && *c >= 0.0)
        && bbox.x1 <= w
        && bbox.x2 <= w
        && bbox.y1 <= h
        && bbox.y2 <= h;
    if !inside {
        return Err(ExecError::new(
            ErrorCode::OutOfBounds,
            format!(
                "bbox_2d {:?} exceeds the bounds of image {target_image} ({}x{})",
                coords, source.width, source.height
            ),
        ));
    }
    let [x1, y1, x2, y2] = coords.map(|c| c.trunc() as u32);
    if x1 >= x2 || y1 >= y2 {
        return Err(ExecError::new(
            ErrorCode::DegenerateBBox,
            format!("bbox_2d {coords:?} has zero area"),
        ));
    }
    let image = source.sub_image(x1, y1, x2, y2);
    workspace.images.push(image.clone());
    Ok(ExecOutput::Cropped { index: workspace.images.len(), image })
}

/// Frames at the given 0-based positions, in request order, duplicates kept.
pub fn select_frames(clip: &VideoClip, target_frames: &[i64]) -> Result<Vec<ImageBuffer>, ExecError> {
    select_frames_with(clip, target_frames, &OpsConfig::default())
}

pub fn select_frames_with(
    clip: &VideoClip,
    target_frames: &[i64],
    cfg: &OpsConfig,
) -> Result<Vec<ImageBuffer>, ExecError> {
    if target_frames.is_empty() {
        return Err(ExecError::new(ErrorCode::EmptySelection, cfg.empty_selection_message.clone()));
    }
    if target_frames.len() > cfg.max_frames {
        return Err(ExecError::new(
            ErrorCode::TooManyFrames,
            format!("selected {} frames; at most {} are allowed", target_frames.len(), cfg.max_frames),
        ));
    }
    let n = clip.len() as i64;
    if let Some(bad) = target_frames.iter().find(|&&i| i < 0 || i >= n) {
        return Err(ExecError::new(
            ErrorCode::OutOfBounds,
            format!("frame index {bad} is outside 0..{n}"),
        ));
    }
    Ok(target_frames.iter().map(|&i| clip.frames[i as usize].clone()).collect())
}

/// Fires with a fixed probability from its own seeded stream.
#[derive(Debug, Clone)]
pub struct FaultInjector {
    probability: f64,
    rng: ChaCha8Rng,
}

impl FaultInjector {
    pub fn new(probability: f64, seed: u64) -> Self {
        Self { probability: probability.clamp(0.0, 1.0), rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn fires(&mut self) -> bool {
        self.rng.random::<f64>() < self.probability
    }
}

/// Dispatches a parsed call. Unknown names are rejected before the fault
/// roll; a firing fault skips execution entirely.
pub fn execute(
    workspace: &mut VisualWorkspace,
    call: &ToolCall,
    fault: Option<&mut FaultInjector>,
) -> Result<ExecOutput, ExecError> {
    if !call.is_known() {
        return Err(ExecError::new(
            ErrorCode::UnknownOperation,
            format!("unknown operation {:?}", call.name),
        ));
    }
    if fault.is_some_and(FaultInjector::fires) {
        return Err(ExecError::new(ErrorCode::InjectedFault, "operation failed (injected fault)"));
    }
    match call.name.as_str() {
        CROP_IMAGE => {
            let bbox = bbox_arg(call)?;
            let target = index_arg(call, "target_image")?;
            let target = usize::try_from(target).map_err(|_| {
                ExecError::new(ErrorCode::BadTargetIndex, format!("target_image {target} does not exist"))
            })?;
            crop_image(workspace, bbox, target)
        }
        SELECT_FRAMES => {
            let indices = frames_arg(call)?;
            let Some(clip) = workspace.clip.as_ref() else {
                return Err(arg_error("select_frames needs a video input"));
            };
            let frames = select_frames_with(clip, &indices, &workspace.config)?;
            Ok(ExecOutput::Frames { indices: indices.iter().map(|&i| i as usize).collect(), frames })
        }
        _ => unreachable!("is_known covers every dispatched name"),
    }
}

fn arg_error(message: impl Into<String>) -> ExecError {
    ExecError::new(ErrorCode::ArgumentError, message)
}

fn bbox_arg(call: &ToolCall) -> Result<BBox, ExecError> {
    let value = call.arguments.get("bbox_2d").ok_or_else(|| arg_error("missing argument bbox_2d"))?;
    let coords: Option<Vec<f64>> = value.as_array().and_then(|a| a.iter().map(Value::as_f64).collect());
    match coords.as_deref() {
        Some(&[x1, y1, x2, y2]) => Ok(BBox { x1, y1, x2, y2 }),
        _ => Err(arg_error(format!("bbox_2d must be a list of 4 numbers, got {value}"))),
    }
}

/// JSON integer (or integral float) as i64.
fn as_index(value: &Value) -> Option<i64> {
    value.as_i64().or_else(|| value.as_f64().filter(|f| f.fract() == 0.0 && f.abs() < 9.0e15).map(|f| f as i64))
}

fn index_arg(call: &ToolCall, key: &str) -> Result<i64, ExecError> {
    let value = call.arguments.get(key).ok_or_else(|| arg_error(format!("missing argument {key}")))?;
    as_index(value).ok_or_else(|| arg_error(format!("{key} must be an integer, got {value}")))
}

fn frames_arg(call: &ToolCall) -> Result<Vec<i64>, ExecError> {
    let value = call
        .arguments
        .get("target_frames")
        .ok_or_else(|| arg_error("missing argument target_frames"))?;
    value
        .as_array()
        .and_then(|a| a.iter().map(as_index).collect())
        .ok_or_else(|| arg_error(format!("target_frames must be a list of integers, got {value}")))
}
