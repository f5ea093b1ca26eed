//! Minimal OpenAI-compatible `/chat/completions` client with timeouts and
//! retry-with-backoff. Used by the HTTP policy backend and the chat-based
//! text generator.

use std::time::Duration;

use base64::Engine as _;
use serde_json::{json, Value};

use crate::visual::{encode_png, ImageBuffer};

pub const ENV_BASE_URL: &str = "PIXEL_POLICY_BASE_URL";
pub const ENV_MODEL: &str = "PIXEL_POLICY_MODEL";
pub const ENV_API_KEY: &str = "PIXEL_POLICY_API_KEY";

#[derive(Debug, thiserror::Error)]
pub enum HttpError {
    #[error("backend configuration: {0}")]
    Config(String),
    #[error("request failed: {0}")]
    Transport(String),
    #[error("backend returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("unexpected response: {0}")]
    Response(String),
}

impl HttpError {
    fn retryable(&self) -> bool {
        match self {
            HttpError::Transport(_) => true,
            HttpError::Status { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatConfig {
    /// e.g. `http://localhost:8000/v1`; `/chat/completions` is appended.
    pub base_url: String,
    pub model: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
    /// Extra attempts after the first one.
    pub max_retries: u32,
    /// Delay before the first retry; doubled on each further retry.
    pub backoff: Duration,
    pub temperature: f64,
    pub max_tokens: Option<u32>,
}

impl ChatConfig {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            model: model.into(),
            api_key: None,
            timeout: Duration::from_secs(120),
            max_retries: 3,
            backoff: Duration::from_millis(500),
            temperature: 1.0,
            max_tokens: None,
        }
    }

    /// Reads `PIXEL_POLICY_BASE_URL`, `PIXEL_POLICY_MODEL` and the optional
    /// `PIXEL_POLICY_API_KEY`.
    pub fn from_env() -> Result<Self, HttpError> {
        let var = |k: &str| std::env::var(k).ok().filter(|v| !v.is_empty());
        let base = var(ENV_BASE_URL).ok_or_else(|| HttpError::Config(format!("{ENV_BASE_URL} is not set")))?;
        let model = var(ENV_MODEL).ok_or_else(|| HttpError::Config(format!("{ENV_MODEL} is not set")))?;
        Ok(Self { api_key: var(ENV_API_KEY), ..Self::new(base, model) })
    }

    fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.base_url.trim_end_matches('/'))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub content: String,
    pub finish_reason: Option<String>,
}

pub struct ChatClient {
    cfg: ChatConfig,
    client: reqwest::blocking::Client,
}

impl ChatClient {
    pub fn new(cfg: ChatConfig) -> Result<Self, HttpError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(cfg.timeout)
            .build()
            .map_err(|e| HttpError::Config(e.to_string()))?;
        Ok(Self { cfg, client })
    }

    pub fn config(&self) -> &ChatConfig {
        &self.cfg
    }

    /// Sends `messages` (already in wire form) and returns the first choice.
    pub fn complete(&self, messages: Vec<Value>, stop: &[&str], seed: Option<u64>) -> Result<Completion, HttpError> {
        let mut body = json!({
            "model": self.cfg.model,
            "messages": messages,
            "temperature": self.cfg.temperature,
        });
        if !stop.is_empty() {
            body["stop"] = json!(stop);
        }
        if let Some(seed) = seed {
            body["seed"] = json!(seed);
        }
        if let Some(max) = self.cfg.max_tokens {
            body["max_tokens"] = json!(max);
        }

        let mut delay = self.cfg.backoff;
        let mut attempt = 0;
        loop {
            match self.send_once(&body) {
                Ok(c) => return Ok(c),
                Err(e) if e.retryable() && attempt < self.cfg.max_retries => {
                    attempt += 1;
                    tracing::warn!(attempt, error = %e, "chat request failed, retrying in {delay:?}");
                    std::thread::sleep(delay);
                    delay *= 2;
                }
                Err(e) => return Err(e),
            }
        }
    }

    fn send_once(&self, body: &Value) -> Result<Completion, HttpError> {
        let mut req = self.client.post(self.cfg.endpoint()).json(body);
        if let Some(key) = &self.cfg.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| HttpError::Transport(e.to_string()))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| HttpError::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(HttpError::Status { status: status.as_u16(), body: text });
        }
        let value: Value = serde_json::from_str(&text).map_err(|e| HttpError::Response(e.to_string()))?;
        let choice = &value["choices"][0];
        let content = choice["message"]["content"]
            .as_str()
            .ok_or_else(|| HttpError::Response("missing choices[0].message.content".into()))?;
        Ok(Completion {
            content: content.to_string(),
            finish_reason: choice["finish_reason"].as_str().map(str::to_string),
        })
    }
}

pub fn text_part(text: &str) -> Value {
    json!({"type": "text", "text": text})
}

/// `image_url` content part carrying the image as a base64 PNG data URL.
pub fn image_part(image: &ImageBuffer) -> Value {
    let b64 = base64::engine::general_purpose::STANDARD.encode(encode_png(image));
    json!({"type": "image_url", "image_url": {"url": format!("data:image/png;base64,{b64}")}})
}


#[cfg(test)]
mod tests {
    use super::mock::*;
    use super::*;

    fn fast(url: &str) -> ChatConfig {
        ChatConfig { backoff: Duration::from_millis(1), timeout: Duration::from_secs(5), ..ChatConfig::new(url, "m") }
    }

    #[test]
    fn retries_server_errors() {
        let server = MockServer::start(vec![(503, "busy".into()), (200, completion("hi"))]);
        let client = ChatClient::new(ChatConfig { api_key: Some("k".into()), ..fast(&server.url) }).unwrap();
        let out = client.complete(vec![json!({"role": "user", "content": "x"})], &["</tool_call>"], Some(3)).unwrap();
        assert_eq!(out.content, "hi");
        let reqs = server.finish();
        assert_eq!(reqs.len(), 2);
        let body: Value = serde_json::from_str(&reqs[1]).unwrap();
        assert_eq!(body["stop"], json!(["</tool_call>"]));
        assert_eq!(body["seed"], json!(3));
        assert_eq!(body["model"], json!("m"));
    }

    #[test]
    fn client_errors_are_not_retried() {
        let server = MockServer::start(vec![(400, "bad".into())]);
        let client = ChatClient::new(fast(&server.url)).unwrap();
        let err = client.complete(vec![], &[], None).unwrap_err();
        assert!(matches!(err, HttpError::Status { status: 400, .. }));
        assert_eq!(server.finish().len(), 1);
    }

    #[test]
    fn gives_up_after_retries() {
        let server = MockServer::start(vec![(500, "a".into()), (500, "b".into())]);
        let client = ChatClient::new(ChatConfig { max_retries: 1, ..fast(&server.url) }).unwrap();
        assert!(matches!(client.complete(vec![], &[], None), Err(HttpError::Status { status: 500, .. })));
        server.finish();
    }

    #[test]
    fn image_parts_are_png_data_urls() {
        let part = image_part(&ImageBuffer::filled(2, 2, [1, 2, 3]));
        let url = part["image_url"]["url"].as_str().unwrap();
        assert!(url.starts_with("data:image/png;base64,iVBORw0KGgo"));
    }
}
