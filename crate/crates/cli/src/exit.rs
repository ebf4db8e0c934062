//! Exit codes: 0 success, 1 user or policy error, 2 internal error.

use qdt_core::agent_loop::{AgentError, TaskError};
use qdt_core::dataset_store::StoreError;
use qdt_core::eval_harness::EvalError;
use qdt_core::llm_client::LlmError;
use qdt_core::policy_engine::PolicyError;
use qdt_core::query_gateway::{AuditError, ClientError, GatewayError};

pub const OK: u8 = 0;
pub const USER: u8 = 1;
pub const INTERNAL: u8 = 2;

/// Failure caused by the invocation itself (bad arguments, bad input).
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

fn store_is_internal(e: &StoreError) -> bool {
    matches!(
        e,
        StoreError::Engine(_) | StoreError::Timeout(_) | StoreError::Sqlite(_) | StoreError::InvalidApproval
    )
}

fn gateway_is_internal(e: &GatewayError) -> bool {
    match e {
        GatewayError::Store(inner) => store_is_internal(inner),
        GatewayError::Audit(AuditError::Io { .. }) => false,
        GatewayError::Audit(_) | GatewayError::Runtime(_) => true,
        _ => false,
    }
}

fn llm_is_internal(e: &LlmError) -> bool {
    matches!(e, LlmError::History(_))
}

pub fn is_internal(e: &anyhow::Error) -> bool {
    if e.downcast_ref::<UsageError>().is_some()
        || e.downcast_ref::<std::io::Error>().is_some()
        || e.downcast_ref::<PolicyError>().is_some()
        || e.downcast_ref::<TaskError>().is_some()
    {
        return false;
    }
    if let Some(s) = e.downcast_ref::<StoreError>() {
        return store_is_internal(s);
    }
    if let Some(g) = e.downcast_ref::<GatewayError>() {
        return gateway_is_internal(g);
    }
    if let Some(l) = e.downcast_ref::<LlmError>() {
        return llm_is_internal(l);
    }
    if let Some(c) = e.downcast_ref::<ClientError>() {
        return matches!(c, ClientError::Decode(_));
    }
    if let Some(a) = e.downcast_ref::<AgentError>() {
        return match a {
            AgentError::Backend(l) => llm_is_internal(l),
            AgentError::Gateway(c) => matches!(c, ClientError::Decode(_)),
        };
    }
    if let Some(ev) = e.downcast_ref::<EvalError>() {
        return matches!(ev, EvalError::NoGateway | EvalError::NonBinary(_));
    }
    e.downcast_ref::<AuditError>().is_some() || e.downcast_ref::<serde_json::Error>().is_some()
}

pub fn classify(e: &anyhow::Error) -> u8 {
    if is_internal(e) {
        INTERNAL
    } else {
        USER
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use anyhow::Context;

    #[test]
    fn user_and_internal_errors_are_told_apart() {
        let usage = anyhow::Error::new(UsageError("bad key".into()));
        assert!(!is_internal(&usage));
        let missing: anyhow::Error = StoreError::MissingFile("x.db".into()).into();
        assert!(!is_internal(&missing.context("opening store")));
        let engine: anyhow::Error = StoreError::Engine("boom".into()).into();
        assert!(is_internal(&engine));
        let wrapped = Err::<(), _>(GatewayError::Runtime("x".into())).context("serving").unwrap_err();
        assert!(is_internal(&wrapped));
    }
}
