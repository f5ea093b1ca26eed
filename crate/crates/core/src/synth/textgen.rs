//! Sources of free-form analysis text for synthesized trajectories.

use serde_json::{json, Value};

use super::{Cue, Media, SeedExample, SynthError};
use crate::http::{image_part, text_part, ChatClient};
use crate::visual::{crop_image, load_frames_dir, load_png, select_frames, ImageBuffer, VisualWorkspace};

/// Writes the whole-input and cue analyses. The synthesizer adds the
/// fixed prefixes; implementations return only the body.
pub trait TextGen: Send + Sync {
    fn describe_whole(&self, seed: &SeedExample) -> Result<String, SynthError>;
    fn describe_cue(&self, seed: &SeedExample, cue: &Cue) -> Result<String, SynthError>;
}

/// Deterministic template text built from the seed metadata. Useful for
/// tests and for checking a pipeline before paying for a model.
#[derive(Debug, Clone, Copy, Default)]
pub struct CannedTextGen;

impl TextGen for CannedTextGen {
    fn describe_whole(&self, seed: &SeedExample) -> Result<String, SynthError> {
        Ok(match seed.media {
            Media::Image { width, height } => format!(
                "The {width}x{height} image contains many details, but the part needed for \"{}\" is too small to read at this scale.",
                seed.question
            ),
            Media::Video { frames, .. } => format!(
                "The video has {frames} frames. The moment that answers \"{}\" is brief and easy to miss.",
                seed.question
            ),
        })
    }

    fn describe_cue(&self, seed: &SeedExample, cue: &Cue) -> Result<String, SynthError> {
        let place = match cue {
            Cue::Bbox([x1, y1, x2, y2]) => format!("the region [{x1}, {y1}, {x2}, {y2}]"),
            Cue::Frames(f) => format!("frames {f:?}"),
        };
        Ok(format!("In {place} the relevant detail is clear, and it points to the answer {}.", seed.gold))
    }
}

/// Asks a chat model to describe the media, the cropped region or the
/// selected frames. Seeds must carry `media_path`.
pub struct ChatTextGen {
    client: ChatClient,
}

impl ChatTextGen {
    pub fn new(client: ChatClient) -> Self {
        Self { client }
    }

    fn media(&self, seed: &SeedExample) -> Result<VisualWorkspace, SynthError> {
        let path = seed
            .media_path
            .as_deref()
            .ok_or_else(|| SynthError::Generator(format!("seed {} has no media_path", seed.id)))?;
        let gen_err = |e: crate::visual::MediaError| SynthError::Generator(e.to_string());
        Ok(match seed.media {
            Media::Image { .. } => VisualWorkspace::with_image(load_png(path).map_err(gen_err)?),
            Media::Video { .. } => VisualWorkspace::with_clip(load_frames_dir(path).map_err(gen_err)?),
        })
    }

    fn ask(&self, images: &[ImageBuffer], prompt: String) -> Result<String, SynthError> {
        let mut content: Vec<Value> = images.iter().map(image_part).collect();
        content.push(text_part(&prompt));
        let reply = self
            .client
            .complete(vec![json!({"role": "user", "content": content})], &[], None)
            .map_err(|e| SynthError::Generator(e.to_string()))?;
        Ok(reply.content.trim().to_string())
    }
}

impl TextGen for ChatTextGen {
    fn describe_whole(&self, seed: &SeedExample) -> Result<String, SynthError> {
        let ws = self.media(seed)?;
        let images: Vec<ImageBuffer> = match ws.clip() {
            Some(clip) => clip.frames().to_vec(),
            None => ws.images().to_vec(),
        };
        self.ask(
            &images,
            format!(
                "Question: {}\nDescribe the overall content in a few sentences. Do not answer the question, and do not \
                 claim to see fine details that are too small to make out.",
                seed.question
            ),
        )
    }

    fn describe_cue(&self, seed: &SeedExample, cue: &Cue) -> Result<String, SynthError> {
        let mut ws = self.media(seed)?;
        let images = match (cue, ws.clip()) {
            (Cue::Frames(f), Some(clip)) => {
                let idx: Vec<i64> = f.iter().map(|&i| i as i64).collect();
                select_frames(clip, &idx).map_err(|e| SynthError::Generator(e.to_string()))?
            }
            (Cue::Bbox(_), None) => {
                let bbox = cue.bbox().expect("bbox cue");
                let out = crop_image(&mut ws, bbox, 1).map_err(|e| SynthError::Generator(e.to_string()))?;
                out.images().into_iter().cloned().collect()
            }
            _ => return Err(SynthError::Generator(format!("seed {}: cue does not match media", seed.id))),
        };
        self.ask(
            &images,
            format!(
                "Question: {}\nThe correct answer is {}. Describe what this view shows that supports the answer, \
                 as if you had just looked at it. Do not mention that you were told the answer.",
                seed.question, seed.gold
            ),
        )
    }
}
