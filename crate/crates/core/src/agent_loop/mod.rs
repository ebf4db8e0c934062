//! One prediction episode: prompt, query loop through the gateway, answer.

mod protocol;

use serde::{Deserialize, Serialize};

use crate::dataset_store::TestRecord;
use crate::llm_client::{ChatBackend, ChatMessage, LlmError};
use crate::policy_engine::PolicyConfig;
use crate::query_gateway::{ClientError, GatewayClient, QueryResponse, QueryStatus};

pub use protocol::{
    budget_exhausted_notice, llm_only_notice, malformed_notice, parse_action, render_gateway_result,
    render_test_record, Action, GatewayExchange,
};

pub const PROMPT_VERSION: &str = "v1";
const SYSTEM_TEMPLATE: &str = include_str!("../../prompts/system_v1.txt");
const LLM_ONLY_TEMPLATE: &str = include_str!("../../prompts/llm_only_v1.txt");
const RECORD_TEMPLATE: &str = include_str!("../../prompts/record_v1.txt");

pub const DEFAULT_BUDGET: usize = 8;

/// Replaces `{name}` placeholders in one pass, so inserted text is never
/// re-expanded.
fn fill(template: &str, values: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let tail = &rest[open..];
        let hit = values.iter().find(|(name, _)| {
            tail.len() > name.len() + 1
                && tail[1..].starts_with(name)
                && tail[1 + name.len()..].starts_with('}')
        });
        match hit {
            Some((name, value)) => {
                out.push_str(value);
                rest = &tail[name.len() + 2..];
            }
            None => {
                out.push('{');
                rest = &tail[1..];
            }
        }
    }
    out.push_str(rest);
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_prompt: String,
    /// Ordered label space; the first label that is not `positive_label`
    /// is the fallback.
    pub label_space: Vec<String>,
    pub positive_label: String,
    /// Final answers are `<prefix> <label>` on their own line.
    pub answer_prefix: String,
}

#[derive(Debug, thiserror::Error)]
pub enum TaskError {
    #[error("positive label '{0}' is not in the label space")]
    PositiveNotInSpace(String),
    #[error("label space needs at least two distinct labels")]
    DegenerateSpace,
    #[error("answer markers '{0}' and '{1}' overlap")]
    OverlappingMarkers(String, String),
}

impl TaskSpec {
    pub fn new(
        task_prompt: impl Into<String>,
        label_space: Vec<String>,
        positive_label: impl Into<String>,
        answer_prefix: impl Into<String>,
    ) -> Result<Self, TaskError> {
        let task = TaskSpec {
            task_prompt: task_prompt.into(),
            label_space,
            positive_label: positive_label.into(),
            answer_prefix: answer_prefix.into(),
        };
        task.check()?;
        Ok(task)
    }

    pub fn check(&self) -> Result<(), TaskError> {
        let mut distinct = self.label_space.clone();
        distinct.sort();
        distinct.dedup();
        if distinct.len() < 2 || distinct.len() != self.label_space.len() {
            return Err(TaskError::DegenerateSpace);
        }
        if !self.label_space.contains(&self.positive_label) {
            return Err(TaskError::PositiveNotInSpace(self.positive_label.clone()));
        }
        let markers = self.markers();
        for (i, a) in markers.iter().enumerate() {
            for b in markers.iter().skip(i + 1) {
                if a.contains(b.as_str()) || b.contains(a.as_str()) {
                    return Err(TaskError::OverlappingMarkers(a.clone(), b.clone()));
                }
            }
        }
        Ok(())
    }

    /// 30-day readmission with labels `0` (not readmitted) and `1`.
    pub fn readmission() -> Self {
        TaskSpec {
            task_prompt: "Predict whether this patient with Type 2 diabetes will be readmitted to \
                          hospital within 30 days of discharge. Answer 1 for readmission within 30 \
                          days and 0 otherwise."
                .to_string(),
            label_space: vec!["0".to_string(), "1".to_string()],
            positive_label: "1".to_string(),
            answer_prefix: "ANSWER:".to_string(),
        }
    }

    pub fn markers(&self) -> Vec<String> {
        self.label_space
            .iter()
            .map(|l| format!("{} {l}", self.answer_prefix))
            .collect()
    }

    pub fn negative_label(&self) -> &str {
        self.label_space
            .iter()
            .find(|l| **l != self.positive_label)
            .expect("checked: at least two labels")
    }

    pub fn is_positive(&self, label: &str) -> bool {
        label == self.positive_label
    }
}

/// Gateway access as the agent sees it.
pub trait QueryPort: Send + Sync {
    fn query(&self, session_id: &str, sql: &str) -> Result<QueryResponse, ClientError>;
    fn schema(&self) -> Result<String, ClientError>;
}

impl QueryPort for GatewayClient {
    fn query(&self, session_id: &str, sql: &str) -> Result<QueryResponse, ClientError> {
        GatewayClient::query(self, session_id, sql)
    }

    fn schema(&self) -> Result<String, ClientError> {
        GatewayClient::schema(self)
    }
}

pub fn build_system_prompt(schema_doc: &str, policy: &PolicyConfig, task: &TaskSpec, budget: usize) -> ChatMessage {
    let summary = policy.summary();
    // Schema documents served by the gateway already end with the policy.
    let policy_text = if schema_doc.contains(summary.as_str()) {
        String::new()
    } else {
        format!("\n{summary}")
    };
    let markers = task
        .markers()
        .iter()
        .map(|m| format!("   {m}"))
        .collect::<Vec<_>>()
        .join("\n");
    ChatMessage::system(fill(
        SYSTEM_TEMPLATE,
        &[
            ("task", &task.task_prompt),
            ("schema", schema_doc.trim_end()),
            ("policy", &policy_text),
            ("markers", &markers),
            ("budget", &budget.to_string()),
        ],
    ))
}

pub fn build_llm_only_prompt(task: &TaskSpec) -> ChatMessage {
    let markers = task
        .markers()
        .iter()
        .map(|m| format!("   {m}"))
        .collect::<Vec<_>>()
        .join("\n");
    ChatMessage::system(fill(
        LLM_ONLY_TEMPLATE,
        &[("task", &task.task_prompt), ("markers", &markers)],
    ))
}

pub fn build_record_message(record: &TestRecord) -> ChatMessage {
    ChatMessage::user(fill(RECORD_TEMPLATE, &[("record", &render_test_record(record))]).trim_end().to_string())
}

/// Where a transcript message came from. Only `Assistant` text is produced
/// by the model; everything else is built by one of the loop's renderers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    System,
    TaskInput,
    Assistant,
    GatewayResult,
    ProtocolNotice,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub origin: Origin,
    pub message: ChatMessage,
    /// Present on `GatewayResult` entries.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exchange: Option<GatewayExchange>,
    /// Queries left after this entry, on `GatewayResult` entries.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub queries_remaining: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Qdt,
    LlmOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub record_id: String,
    pub mode: Mode,
    pub label: String,
    pub rationale: String,
    pub fallback_used: bool,
    pub queries_issued: usize,
    pub queries_approved: usize,
    pub transcript: Vec<TranscriptEntry>,
}

#[derive(Debug, thiserror::Error)]
pub enum AgentError {
    #[error("chat backend: {0}")]
    Backend(#[from] LlmError),
    #[error("gateway: {0}")]
    Gateway(#[from] ClientError),
}

impl AgentError {
    pub fn code(&self) -> &'static str {
        match self {
            AgentError::Backend(e) => e.code(),
            AgentError::Gateway(_) => "GATEWAY",
        }
    }
}

/// Mutable state of one episode.
#[derive(Debug, Clone)]
pub struct EpisodeState {
    pub messages: Vec<ChatMessage>,
    pub transcript: Vec<TranscriptEntry>,
    pub queries_issued: usize,
    pub queries_approved: usize,
    pub budget_remaining: usize,
    pub terminal: bool,
}

impl EpisodeState {
    fn new(budget: usize) -> Self {
        EpisodeState {
            messages: Vec::new(),
            transcript: Vec::new(),
            queries_issued: 0,
            queries_approved: 0,
            budget_remaining: budget,
            terminal: false,
        }
    }

    fn push(&mut self, origin: Origin, message: ChatMessage) {
        self.messages.push(message.clone());
        self.transcript.push(TranscriptEntry {
            origin,
            message,
            exchange: None,
            queries_remaining: None,
        });
    }

    fn push_result(&mut self, exchange: GatewayExchange) {
        let message = ChatMessage::user(render_gateway_result(&exchange, self.budget_remaining));
        self.messages.push(message.clone());
        self.transcript.push(TranscriptEntry {
            origin: Origin::GatewayResult,
            message,
            exchange: Some(exchange),
            queries_remaining: Some(self.budget_remaining),
        });
    }

    fn finish(mut self, record_id: &str, mode: Mode, label: String, fallback_used: bool) -> Prediction {
        self.terminal = true;
        let rationale = self
            .transcript
            .iter()
            .rev()
            .find(|e| e.origin == Origin::Assistant)
            .map(|e| e.message.content.clone())
            .unwrap_or_default();
        Prediction {
            record_id: record_id.to_string(),
            mode,
            label,
            rationale,
            fallback_used,
            queries_issued: self.queries_issued,
            queries_approved: self.queries_approved,
            transcript: self.transcript,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EpisodeConfig {
    pub budget: usize,
    /// Prefix for gateway session ids; the record id is appended.
    pub session_prefix: String,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        EpisodeConfig {
            budget: DEFAULT_BUDGET,
            session_prefix: String::new(),
        }
    }
}

/// Runs the query loop for one record. Always yields a label from the
/// task's label space unless the backend or gateway fails.
pub fn run_episode(
    record: &TestRecord,
    task: &TaskSpec,
    schema_doc: &str,
    policy: &PolicyConfig,
    gateway: &dyn QueryPort,
    backend: &dyn ChatBackend,
    config: &EpisodeConfig,
) -> Result<Prediction, AgentError> {
    let mut state = EpisodeState::new(config.budget);
    state.push(Origin::System, build_system_prompt(schema_doc, policy, task, config.budget));
    state.push(Origin::TaskInput, build_record_message(record));
    let session = format!("{}{}", config.session_prefix, record.record_id);
    let fallback = task.negative_label().to_string();
    let mut malformed = 0;

    loop {
        let reply = backend.complete(&state.messages)?;
        let action = parse_action(&reply.content, task);
        state.push(Origin::Assistant, reply);
        match action {
            Action::FinalAnswer(label) => return Ok(state.finish(&record.record_id, Mode::Qdt, label, false)),
            Action::Malformed => {
                malformed += 1;
                if malformed >= 2 {
                    return Ok(state.finish(&record.record_id, Mode::Qdt, fallback, true));
                }
                state.push(Origin::ProtocolNotice, ChatMessage::user(malformed_notice(task)));
            }
            Action::Query(sql) => {
                if state.budget_remaining > 0 {
                    let response = gateway.query(&session, &sql)?;
                    state.queries_issued += 1;
                    state.budget_remaining -= 1;
                    if response.status == QueryStatus::Approved {
                        state.queries_approved += 1;
                    }
                    state.push_result(GatewayExchange::new(&sql, &response));
                    if state.budget_remaining > 0 {
                        continue;
                    }
                }
                state.push(Origin::ProtocolNotice, ChatMessage::user(budget_exhausted_notice(task)));
                let last = backend.complete(&state.messages)?;
                let action = parse_action(&last.content, task);
                state.push(Origin::Assistant, last);
                return Ok(match action {
                    Action::FinalAnswer(label) => state.finish(&record.record_id, Mode::Qdt, label, false),
                    _ => state.finish(&record.record_id, Mode::Qdt, fallback, true),
                });
            }
        }
    }
}

/// Baseline without database access: the task prompt and the record only.
pub fn run_llm_only(record: &TestRecord, task: &TaskSpec, backend: &dyn ChatBackend) -> Result<Prediction, AgentError> {
    let mut state = EpisodeState::new(0);
    state.push(Origin::System, build_llm_only_prompt(task));
    state.push(Origin::TaskInput, build_record_message(record));
    for attempt in 0..2 {
        let reply = backend.complete(&state.messages)?;
        let action = parse_action(&reply.content, task);
        state.push(Origin::Assistant, reply);
        // A query has nowhere to go in this mode; it counts as malformed.
        if let Action::FinalAnswer(label) = action {
            return Ok(state.finish(&record.record_id, Mode::LlmOnly, label, false));
        }
        if attempt == 0 {
            state.push(Origin::ProtocolNotice, ChatMessage::user(llm_only_notice(task)));
        }
    }
    let fallback = task.negative_label().to_string();
    Ok(state.finish(&record.record_id, Mode::LlmOnly, fallback, true))
}
