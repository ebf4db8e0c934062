//! Chat-completion backends: a live HTTP client for the usual
//! chat-completions wire shape and a deterministic scripted backend.

mod live;
mod script;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

pub use live::LiveBackend;
pub use script::{load_script, Script, ScriptEntry, ScriptMatch, ScriptedBackend};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

fn default_api_key_env() -> Option<String> {
    Some("OPENAI_API_KEY".to_string())
}

fn default_timeout_secs() -> u64 {
    60
}

fn default_max_retries() -> u32 {
    3
}

fn default_backoff_ms() -> u64 {
    500
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BackendConfig {
    Live {
        endpoint: String,
        model: String,
        /// Environment variable holding the API key; the key itself never
        /// appears in configuration.
        #[serde(default = "default_api_key_env")]
        api_key_env: Option<String>,
        #[serde(default = "default_timeout_secs")]
        timeout_secs: u64,
        #[serde(default = "default_max_retries")]
        max_retries: u32,
        /// First retry delay; doubles on each further attempt.
        #[serde(default = "default_backoff_ms")]
        backoff_ms: u64,
        /// Extra request fields (temperature, max_tokens, ...) passed through.
        #[serde(default)]
        params: serde_json::Map<String, serde_json::Value>,
    },
    Scripted {
        script: PathBuf,
    },
}

impl BackendConfig {
    pub fn kind(&self) -> &'static str {
        match self {
            BackendConfig::Live { .. } => "live",
            BackendConfig::Scripted { .. } => "scripted",
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum LlmError {
    #[error("chat backend transport failed after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("chat backend answered {status}: {body}")]
    Api { status: u16, body: String },
    #[error("script has no entry for turn {turn}")]
    ScriptExhausted { turn: usize },
    #[error("invalid script {}: {message}", path.display())]
    Script { path: PathBuf, message: String },
    #[error("invalid backend configuration: {0}")]
    Config(String),
    #[error("invalid chat history: {0}")]
    History(String),
}

impl LlmError {
    /// Stable code used in reports.
    pub fn code(&self) -> &'static str {
        match self {
            LlmError::Transport { .. } => "TRANSPORT",
            LlmError::Api { .. } => "API_ERROR",
            LlmError::ScriptExhausted { .. } => "SCRIPT_EXHAUSTED",
            LlmError::Script { .. } => "SCRIPT_INVALID",
            LlmError::Config(_) => "CONFIG",
            LlmError::History(_) => "HISTORY",
        }
    }
}

/// A chat model. Implementations must be reentrant: concurrent episodes
/// call `complete` with independent histories.
pub trait ChatBackend: Send + Sync {
    fn complete(&self, history: &[ChatMessage]) -> Result<ChatMessage, LlmError>;

    fn describe(&self) -> String;
}

pub(crate) fn check_history(history: &[ChatMessage]) -> Result<(), LlmError> {
    match history.first() {
        Some(m) if m.role == Role::System => {}
        _ => return Err(LlmError::History("must start with a system message".into())),
    }
    if let Some(m) = history
        .iter()
        .find(|m| m.role != Role::Assistant && m.content.trim().is_empty())
    {
        return Err(LlmError::History(format!("empty {:?} message", m.role)));
    }
    Ok(())
}

pub fn build_backend(config: &BackendConfig) -> Result<Box<dyn ChatBackend>, LlmError> {
    Ok(match config {
        BackendConfig::Live { .. } => Box::new(LiveBackend::new(config)?),
        BackendConfig::Scripted { script } => Box::new(ScriptedBackend::new(load_script(script)?)),
    })
}

/// One-shot convenience over [`build_backend`].
pub fn complete(history: &[ChatMessage], config: &BackendConfig) -> Result<ChatMessage, LlmError> {
    build_backend(config)?.complete(history)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backend_config_is_tagged_by_kind() {
        let live: BackendConfig = toml::from_str(
            "kind = \"live\"\nendpoint = \"http://localhost:1/v1/chat/completions\"\nmodel = \"m\"\n[params]\ntemperature = 0.0\n",
        )
        .unwrap();
        match &live {
            BackendConfig::Live {
                timeout_secs,
                max_retries,
                api_key_env,
                params,
                ..
            } => {
                assert_eq!((*timeout_secs, *max_retries), (60, 3));
                assert_eq!(api_key_env.as_deref(), Some("OPENAI_API_KEY"));
                assert!(params.contains_key("temperature"));
            }
            _ => panic!("expected live"),
        }
        let scripted: BackendConfig = toml::from_str("kind = \"scripted\"\nscript = \"a.toml\"\n").unwrap();
        assert_eq!(scripted.kind(), "scripted");
        assert!(toml::from_str::<BackendConfig>("kind = \"scripted\"\n").is_err());
    }

    #[test]
    fn history_must_open_with_system() {
        assert!(check_history(&[ChatMessage::user("hi")]).is_err());
        assert!(check_history(&[ChatMessage::system("s"), ChatMessage::user(" ")]).is_err());
        assert!(check_history(&[ChatMessage::system("s"), ChatMessage::assistant("")]).is_ok());
    }
}
