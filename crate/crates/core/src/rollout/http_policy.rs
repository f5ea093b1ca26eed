//! Policy backend for OpenAI-compatible chat services.
//!
//! Generation stops at `</tool_call>`, so one call returns at most one tool
//! call. Servers drop the stop string from the output; it is put back.
//! Tool turns are sent with the `user` role since the text protocol has no
//! tool-call ids.

use serde_json::{json, Value};

use super::{BackendError, Conversation, GenerateRequest, Part, PolicyBackend, Role};
use crate::http::{image_part, text_part, ChatClient, ChatConfig};
use crate::protocol::{TOOL_CALL_CLOSE, TOOL_CALL_OPEN};
use crate::trajectory::{ImageRef, ImageSource};
use crate::visual::{ImageBuffer, VisualWorkspace};

/// Transforms an image right before it is encoded, e.g. to resize crops to
/// the model's input resolution.
pub type ImageHook = Box<dyn Fn(&ImageBuffer) -> ImageBuffer + Send + Sync>;

pub struct HttpPolicy {
    client: ChatClient,
    system_prompt: Option<String>,
    image_hook: Option<ImageHook>,
}

impl HttpPolicy {
    pub fn new(cfg: ChatConfig) -> Result<Self, BackendError> {
        Ok(Self { client: ChatClient::new(cfg)?, system_prompt: None, image_hook: None })
    }

    pub fn with_system_prompt(mut self, prompt: impl Into<String>) -> Self {
        self.system_prompt = Some(prompt.into());
        self
    }

    pub fn with_image_hook(mut self, hook: ImageHook) -> Self {
        self.image_hook = Some(hook);
        self
    }

    fn resolve(&self, image: &ImageRef, ws: &VisualWorkspace) -> Result<Value, BackendError> {
        let found = match image.source {
            ImageSource::Workspace { index } => ws.image(index),
            ImageSource::Frame { index } => ws.clip().and_then(|c| c.frames().get(index)),
        };
        let img = found.ok_or_else(|| BackendError::Unavailable(format!("unresolvable image reference {image:?}")))?;
        Ok(match &self.image_hook {
            Some(hook) => image_part(&hook(img)),
            None => image_part(img),
        })
    }

    /// Wire-form message list.
    pub fn wire_messages(&self, conv: &Conversation, ws: &VisualWorkspace) -> Result<Vec<Value>, BackendError> {
        let mut out = Vec::with_capacity(conv.messages.len() + 1);
        if let Some(system) = &self.system_prompt {
            out.push(json!({"role": "system", "content": system}));
        }
        for msg in &conv.messages {
            let role = match msg.role {
                Role::Assistant => "assistant",
                Role::User | Role::Tool => "user",
            };
            let content = msg
                .content
                .iter()
                .map(|part| match part {
                    Part::Text { text } => Ok(text_part(text)),
                    Part::Image { image } => self.resolve(image, ws),
                })
                .collect::<Result<Vec<_>, _>>()?;
            out.push(json!({"role": role, "content": content}));
        }
        Ok(out)
    }
}

impl PolicyBackend for HttpPolicy {
    fn generate(&self, request: &GenerateRequest<'_>) -> Result<String, BackendError> {
        let messages = self.wire_messages(request.conversation, request.workspace)?;
        let completion = self.client.complete(messages, &[TOOL_CALL_CLOSE], Some(request.seed))?;
        let mut text = completion.content;
        if let Some(open) = text.rfind(TOOL_CALL_OPEN) {
            if !text[open..].contains(TOOL_CALL_CLOSE) {
                text.push_str(TOOL_CALL_CLOSE);
            }
        }
        Ok(text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::http::mock::{completion, MockServer};
    use crate::rollout::{run_rollout, Query, RolloutLimits, Termination, Visual};
    use std::time::Duration;

    #[test]
    fn drives_a_rollout_over_http() {
        let call = r#"I need a closer look. <tool_call>{"name": "crop_image", "arguments": {"bbox_2d": [0,0,4,4], "target_image": 1}}"#;
        let server = MockServer::start(vec![(200, completion(call)), (200, completion("Now clear. \\boxed{B}"))]);
        let cfg = ChatConfig { backoff: Duration::from_millis(1), ..ChatConfig::new(&server.url, "policy") };
        let policy = HttpPolicy::new(cfg)
            .unwrap()
            .with_system_prompt("tools: crop_image, select_frames")
            .with_image_hook(Box::new(|img: &ImageBuffer| ImageBuffer::filled(img.width() * 2, img.height() * 2, [0, 0, 0])));
        let query = Query {
            id: "q".into(),
            text: "Which letter?".into(),
            gold: "B".into(),
            visual: Visual::Image(ImageBuffer::filled(8, 8, [200, 10, 10])),
            matcher: None,
        };
        let out = run_rollout(&policy, &query, &RolloutLimits::default(), 11).unwrap();
        assert_eq!(out.termination, Termination::FinalAnswer);
        assert!(out.record.correct && out.record.is_pr);

        let reqs = server.finish();
        let second: Value = serde_json::from_str(&reqs[1]).unwrap();
        let msgs = second["messages"].as_array().unwrap();
        let roles: Vec<&str> = msgs.iter().map(|m| m["role"].as_str().unwrap()).collect();
        assert_eq!(roles, ["system", "user", "assistant", "user"]);
        assert!(msgs[2]["content"][0]["text"].as_str().unwrap().ends_with("</tool_call>"));
        let url = msgs[3]["content"][0]["image_url"]["url"].as_str().unwrap();
        assert!(url.starts_with("data:image/png;base64,"));
        assert_eq!(second["seed"], json!(11));
    }
}
