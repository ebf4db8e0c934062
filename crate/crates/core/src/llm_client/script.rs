use std::collections::HashSet;
use std::path::Path;

use serde::Deserialize;

use super::{check_history, ChatBackend, ChatMessage, LlmError, Role};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ScriptMatch {
    /// Number of assistant messages already in the history.
    Turn(usize),
    /// Substring of the user input since the last assistant message.
    Contains(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScriptEntry {
    pub matcher: ScriptMatch,
    pub respond: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Script {
    pub entries: Vec<ScriptEntry>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEntry {
    turn: Option<usize>,
    contains: Option<String>,
    respond: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScript {
    #[serde(default)]
    entries: Vec<RawEntry>,
}

impl Script {
    pub fn parse(text: &str) -> Result<Script, String> {
        let raw: RawScript = toml::from_str(text).map_err(|e| e.to_string())?;
        let mut turns = HashSet::new();
        let mut entries = Vec::with_capacity(raw.entries.len());
        for (i, entry) in raw.entries.into_iter().enumerate() {
            let matcher = match (entry.turn, entry.contains) {
                (Some(turn), None) => {
                    if !turns.insert(turn) {
                        return Err(format!("entry {}: duplicate turn index {turn}", i + 1));
                    }
                    ScriptMatch::Turn(turn)
                }
                (None, Some(text)) => ScriptMatch::Contains(text),
                _ => {
                    return Err(format!(
                        "entry {}: set exactly one of 'turn' or 'contains'",
                        i + 1
                    ))
                }
            };
            entries.push(ScriptEntry {
                matcher,
                respond: entry.respond,
            });
        }
        Ok(Script { entries })
    }

    /// Turn-index entries take precedence; otherwise the first `contains`
    /// entry found in the user messages after the last assistant reply.
    pub fn respond(&self, history: &[ChatMessage]) -> Option<&str> {
        let turn = history.iter().filter(|m| m.role == Role::Assistant).count();
        let since = history
            .iter()
            .rposition(|m| m.role == Role::Assistant)
            .map_or(0, |i| i + 1);
        let latest = history[since..]
            .iter()
            .filter(|m| m.role == Role::User)
            .map(|m| m.content.as_str())
            .collect::<Vec<_>>()
            .join("\n");
        self.entries
            .iter()
            .find(|e| e.matcher == ScriptMatch::Turn(turn))
            .or_else(|| {
                self.entries.iter().find(
                    |e| matches!(&e.matcher, ScriptMatch::Contains(text) if latest.contains(text.as_str())),
                )
            })
            .map(|e| e.respond.as_str())
    }
}

pub fn load_script(path: &Path) -> Result<Script, LlmError> {
    let text = std::fs::read_to_string(path).map_err(|e| LlmError::Script {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    Script::parse(&text).map_err(|message| LlmError::Script {
        path: path.to_path_buf(),
        message,
    })
}

/// Replays canned responses; a pure function of (history, script).
#[derive(Debug, Clone)]
pub struct ScriptedBackend {
    script: Script,
}

impl ScriptedBackend {
    pub fn new(script: Script) -> Self {
        ScriptedBackend { script }
    }
}

impl ChatBackend for ScriptedBackend {
    fn complete(&self, history: &[ChatMessage]) -> Result<ChatMessage, LlmError> {
        check_history(history)?;
        let turn = history.iter().filter(|m| m.role == Role::Assistant).count();
        self.script
            .respond(history)
            .map(ChatMessage::assistant)
            .ok_or(LlmError::ScriptExhausted { turn })
    }

    fn describe(&self) -> String {
        format!("scripted ({} entries)", self.script.entries.len())
    }
}
