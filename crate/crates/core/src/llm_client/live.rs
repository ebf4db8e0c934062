use std::time::Duration;

use reqwest::blocking::Client;
use serde_json::{json, Map, Value};

use super::{check_history, BackendConfig, ChatBackend, ChatMessage, LlmError};

/// Chat-completions client: POSTs `{model, messages, ...params}` and reads
/// `choices[0].message.content`.
#[derive(Debug, Clone)]
pub struct LiveBackend {
    endpoint: String,
    model: String,
    api_key_env: Option<String>,
    max_retries: u32,
    backoff: Duration,
    params: Map<String, Value>,
    http: Client,
}

impl LiveBackend {
    pub fn new(config: &BackendConfig) -> Result<Self, LlmError> {
        let BackendConfig::Live {
            endpoint,
            model,
            api_key_env,
            timeout_secs,
            max_retries,
            backoff_ms,
            params,
        } = config
        else {
            return Err(LlmError::Config("not a live backend config".into()));
        };
        if endpoint.trim().is_empty() || model.trim().is_empty() {
            return Err(LlmError::Config("live backend needs an endpoint and a model".into()));
        }
        let http = Client::builder()
            .timeout(Duration::from_secs(*timeout_secs))
            .build()
            .map_err(|e| LlmError::Config(e.to_string()))?;
        Ok(LiveBackend {
            endpoint: endpoint.clone(),
            model: model.clone(),
            api_key_env: api_key_env.clone(),
            max_retries: *max_retries,
            backoff: Duration::from_millis(*backoff_ms),
            params: params.clone(),
            http,
        })
    }

    fn api_key(&self) -> Result<Option<String>, LlmError> {
        match &self.api_key_env {
            None => Ok(None),
            Some(var) => std::env::var(var)
                .map(Some)
                .map_err(|_| LlmError::Config(format!("environment variable {var} is not set"))),
        }
    }

    fn body(&self, history: &[ChatMessage]) -> Value {
        let mut body = self.params.clone();
        body.insert("model".into(), json!(self.model));
        body.insert("messages".into(), json!(history));
        Value::Object(body)
    }
}

enum Attempt {
    Done(ChatMessage),
    Retry(String),
    Fail(LlmError),
}

fn extract_content(body: &str) -> Result<String, LlmError> {
    let value: Value = serde_json::from_str(body).map_err(|e| LlmError::Api {
        status: 200,
        body: format!("undecodable response ({e})"),
    })?;
    value
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| LlmError::Api {
            status: 200,
            body: "response has no choices[0].message.content".into(),
        })
}

impl ChatBackend for LiveBackend {
    fn complete(&self, history: &[ChatMessage]) -> Result<ChatMessage, LlmError> {
        check_history(history)?;
        let key = self.api_key()?;
        let body = self.body(history);
        let attempts = self.max_retries + 1;
        let mut last = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                std::thread::sleep(self.backoff * 2u32.saturating_pow(attempt - 1));
            }
            let mut request = self.http.post(&self.endpoint).json(&body);
            if let Some(key) = &key {
                request = request.bearer_auth(key);
            }
            let outcome = match request.send() {
                Err(e) => Attempt::Retry(e.to_string()),
                Ok(response) => {
                    let status = response.status();
                    let text = response.text().unwrap_or_default();
                    if status.is_success() {
                        match extract_content(&text) {
                            Ok(content) => Attempt::Done(ChatMessage::assistant(content)),
                            Err(e) => Attempt::Fail(e),
                        }
                    } else if status.as_u16() == 429 || status.is_server_error() {
                        Attempt::Retry(format!("HTTP {status}: {text}"))
                    } else {
                        Attempt::Fail(LlmError::Api {
                            status: status.as_u16(),
                            body: text,
                        })
                    }
                }
            };
            match outcome {
                Attempt::Done(message) => return Ok(message),
                Attempt::Fail(e) => return Err(e),
                Attempt::Retry(message) => {
                    tracing::warn!(attempt = attempt + 1, %message, "chat request failed");
                    last = message;
                }
            }
        }
        Err(LlmError::Transport {
            attempts,
            message: last,
        })
    }

    fn describe(&self) -> String {
        format!("live ({} @ {})", self.model, self.endpoint)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(endpoint: &str) -> BackendConfig {
        BackendConfig::Live {
            endpoint: endpoint.to_string(),
            model: "test-model".into(),
            api_key_env: None,
            timeout_secs: 2,
            max_retries: 2,
            backoff_ms: 1,
            params: Map::new(),
        }
    }

    #[test]
    fn unreachable_endpoint_exhausts_retries() {
        // Bind then drop to get a port nothing listens on.
        let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
        let backend = LiveBackend::new(&config(&format!("http://127.0.0.1:{port}/v1/chat/completions"))).unwrap();
        let err = backend
            .complete(&[ChatMessage::system("s"), ChatMessage::user("u")])
            .unwrap_err();
        assert!(matches!(err, LlmError::Transport { attempts: 3, .. }), "{err}");
        assert_eq!(err.code(), "TRANSPORT");
    }

    #[test]
    fn reads_first_choice() {
        let body = r#"{"choices":[{"message":{"role":"assistant","content":"ANSWER: 1"}}]}"#;
        assert_eq!(extract_content(body).unwrap(), "ANSWER: 1");
        assert!(extract_content(r#"{"choices":[]}"#).is_err());
    }

    #[test]
    fn missing_key_variable_is_a_config_error() {
        let mut cfg = config("http://127.0.0.1:1/");
        if let BackendConfig::Live { api_key_env, .. } = &mut cfg {
            *api_key_env = Some("QDT_TEST_SURELY_UNSET_KEY".into());
        }
        let backend = LiveBackend::new(&cfg).unwrap();
        let err = backend.complete(&[ChatMessage::system("s")]).unwrap_err();
        assert!(matches!(err, LlmError::Config(ref m) if m.contains("QDT_TEST_SURELY_UNSET_KEY")));
    }
}
