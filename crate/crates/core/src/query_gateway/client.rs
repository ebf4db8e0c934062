use std::time::Duration;

use reqwest::blocking::Client;
use serde::de::DeserializeOwned;
use serde_json::Value;

use super::{AuditEntry, QueryRequest, QueryResponse};

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("gateway unreachable at {url}: {message}")]
    Unreachable { url: String, message: String },
    #[error("gateway answered {status}: {message}")]
    Status { status: u16, message: String },
    #[error("unexpected gateway response: {0}")]
    Decode(String),
}

/// Agent-side HTTP client. Holds no database handle; everything goes
/// through the gateway's endpoints.
#[derive(Debug, Clone)]
pub struct GatewayClient {
    base: String,
    http: Client,
}

impl GatewayClient {
    pub fn new(base_url: &str, timeout: Duration) -> Result<Self, ClientError> {
        let http = Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| ClientError::Decode(e.to_string()))?;
        Ok(GatewayClient {
            base: base_url.trim_end_matches('/').to_string(),
            http,
        })
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.base, path)
    }

    fn read<T: DeserializeOwned>(&self, url: &str, response: reqwest::Result<reqwest::blocking::Response>) -> Result<T, ClientError> {
        let response = response.map_err(|e| ClientError::Unreachable {
            url: url.to_string(),
            message: e.to_string(),
        })?;
        let status = response.status();
        let body = response.text().map_err(|e| ClientError::Decode(e.to_string()))?;
        if !status.is_success() {
            let message = serde_json::from_str::<Value>(&body)
                .ok()
                .and_then(|v| v.get("message").and_then(Value::as_str).map(str::to_string))
                .unwrap_or(body);
            return Err(ClientError::Status {
                status: status.as_u16(),
                message,
            });
        }
        serde_json::from_str(&body).map_err(|e| ClientError::Decode(e.to_string()))
    }

    pub fn query(&self, session_id: &str, sql: &str) -> Result<QueryResponse, ClientError> {
        let url = self.url("/v1/query");
        let request = QueryRequest {
            session_id: session_id.to_string(),
            sql: sql.to_string(),
        };
        self.read(&url, self.http.post(&url).json(&request).send())
    }

    pub fn schema(&self) -> Result<String, ClientError> {
        let url = self.url("/v1/schema");
        let body: Value = self.read(&url, self.http.get(&url).send())?;
        body.get("schema")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| ClientError::Decode("missing 'schema' field".to_string()))
    }

    pub fn health(&self) -> Result<bool, ClientError> {
        let url = self.url("/v1/health");
        match self.read::<Value>(&url, self.http.get(&url).send()) {
            Ok(_) => Ok(true),
            Err(ClientError::Status { status: 503, .. }) => Ok(false),
            Err(e) => Err(e),
        }
    }

    pub fn audit(&self, from: Option<u64>, to: Option<u64>) -> Result<Vec<AuditEntry>, ClientError> {
        let mut url = self.url("/v1/audit");
        let params: Vec<String> = [("from", from), ("to", to)]
            .into_iter()
            .filter_map(|(k, v)| v.map(|v| format!("{k}={v}")))
            .collect();
        if !params.is_empty() {
            url = format!("{url}?{}", params.join("&"));
        }
        self.read(&url, self.http.get(&url).send())
    }
}
