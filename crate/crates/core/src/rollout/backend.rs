use super::Conversation;
use crate::visual::VisualWorkspace;

#[derive(Debug, thiserror::Error)]
pub enum BackendError {
    #[error("{0}")]
    Unavailable(String),
    #[error(transparent)]
    Http(#[from] crate::http::HttpError),
}

/// Everything a backend may look at for one generation call.
pub struct GenerateRequest<'a> {
    pub conversation: &'a Conversation,
    /// Resolves image attachments in the conversation.
    pub workspace: &'a VisualWorkspace,
    pub seed: u64,
    /// Position of the rollout within its group.
    pub rollout_index: usize,
}

/// A policy that continues a conversation until it emits a tool call, a
/// final answer, or stops. Implementations must be safe to call from
/// several rollout threads at once.
pub trait PolicyBackend: Send + Sync {
    fn generate(&self, request: &GenerateRequest<'_>) -> Result<String, BackendError>;
}

/// Replays fixed turns. Rollout `i` follows script `i % scripts.len()`;
/// the turn is the number of assistant messages already in the
/// conversation. Past the end of a script it returns an empty chunk, or
/// repeats the last turn when built with [`ScriptedBackend::forever`].
#[derive(Debug, Clone)]
pub struct ScriptedBackend {
    scripts: Vec<Vec<String>>,
    repeat_last: bool,
}

impl ScriptedBackend {
    pub fn new(scripts: Vec<Vec<String>>) -> Self {
        Self { scripts, repeat_last: false }
    }

    pub fn forever(turn: &str) -> Self {
        Self { scripts: vec![vec![turn.to_string()]], repeat_last: true }
    }
}

impl PolicyBackend for ScriptedBackend {
    fn generate(&self, request: &GenerateRequest<'_>) -> Result<String, BackendError> {
        if self.scripts.is_empty() {
            return Ok(String::new());
        }
        let script = &self.scripts[request.rollout_index % self.scripts.len()];
        let turn = request.conversation.assistant_turns();
        let text = match script.get(turn) {
            Some(t) => t,
            None if self.repeat_last => script.last().map_or("", String::as_str),
            None => "",
        };
        Ok(text.to_string())
    }
}

/// Adapts a closure.
pub struct FnBackend<F>(F);

impl<F> FnBackend<F>
where
    F: Fn(&GenerateRequest<'_>) -> Result<String, BackendError> + Send + Sync,
{
    pub fn new(f: F) -> Self {
        Self(f)
    }
}

impl<F> PolicyBackend for FnBackend<F>
where
    F: Fn(&GenerateRequest<'_>) -> Result<String, BackendError> + Send + Sync,
{
    fn generate(&self, request: &GenerateRequest<'_>) -> Result<String, BackendError> {
        (self.0)(request)
    }
}
