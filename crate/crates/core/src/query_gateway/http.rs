use std::net::SocketAddr;
use std::sync::Arc;
use std::thread::JoinHandle;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;
use tokio::sync::oneshot;

use super::{Gateway, GatewayConfig, GatewayError, QueryRequest};

fn error_response(status: StatusCode, code: &str, message: impl ToString) -> Response {
    (
        status,
        Json(json!({ "error": code, "message": message.to_string() })),
    )
        .into_response()
}

fn gateway_error(e: GatewayError) -> Response {
    match e {
        GatewayError::NotReady => error_response(StatusCode::SERVICE_UNAVAILABLE, "not_ready", e),
        GatewayError::Audit(super::AuditError::InvalidRange(_)) => {
            error_response(StatusCode::BAD_REQUEST, "invalid_range", e)
        }
        other => error_response(StatusCode::INTERNAL_SERVER_ERROR, "internal", other),
    }
}

async fn query(
    State(gateway): State<Arc<Gateway>>,
    body: Result<Json<QueryRequest>, JsonRejection>,
) -> Response {
    let request = match body {
        Ok(Json(request)) => request,
        Err(rejection) => return error_response(StatusCode::BAD_REQUEST, "bad_request", rejection.body_text()),
    };
    // A blocking task runs to completion even if the client goes away, so
    // the audit entry is always written.
    let outcome = tokio::task::spawn_blocking(move || gateway.handle_query(&request)).await;
    match outcome {
        Ok(Ok(response)) => Json(response).into_response(),
        Ok(Err(e)) => gateway_error(e),
        Err(join) => error_response(StatusCode::INTERNAL_SERVER_ERROR, "internal", join),
    }
}

async fn schema(State(gateway): State<Arc<Gateway>>) -> Response {
    match gateway.handle_schema() {
        Ok(doc) => Json(json!({ "schema": doc.0 })).into_response(),
        Err(e) => gateway_error(e),
    }
}

#[derive(Debug, Deserialize)]
struct AuditRange {
    from: Option<u64>,
    to: Option<u64>,
}

async fn audit(
    State(gateway): State<Arc<Gateway>>,
    range: Result<Query<AuditRange>, axum::extract::rejection::QueryRejection>,
) -> Response {
    let Query(range) = match range {
        Ok(range) => range,
        Err(rejection) => {
            return error_response(StatusCode::BAD_REQUEST, "invalid_range", rejection.body_text())
        }
    };
    match gateway.handle_audit(range.from, range.to) {
        Ok(entries) => Json(entries).into_response(),
        Err(e) => gateway_error(e),
    }
}

async fn health(State(gateway): State<Arc<Gateway>>) -> Response {
    if gateway.is_ready() {
        Json(json!({ "status": "ready" })).into_response()
    } else {
        (
            StatusCode::SERVICE_UNAVAILABLE,
            Json(json!({ "status": "not_ready" })),
        )
            .into_response()
    }
}

pub fn router(gateway: Arc<Gateway>) -> Router {
    Router::new()
        .route("/v1/query", post(query))
        .route("/v1/schema", get(schema))
        .route("/v1/audit", get(audit))
        .route("/v1/health", get(health))
        .with_state(gateway)
}

async fn termination_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let terminate = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut signal) => {
                signal.recv().await;
            }
            Err(_) => std::future::pending().await,
        }
    };
    #[cfg(not(unix))]
    let terminate = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = terminate => {},
    }
}

/// A gateway serving HTTP on a background thread with its own runtime.
pub struct GatewayHandle {
    addr: SocketAddr,
    gateway: Arc<Gateway>,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<Result<(), GatewayError>>>,
}

impl GatewayHandle {
    /// Binds `bind` (use port 0 for an ephemeral port) and starts serving.
    /// With `until_signal`, SIGINT/SIGTERM also trigger a graceful stop.
    pub fn spawn(gateway: Gateway, bind: &str, until_signal: bool) -> Result<Self, GatewayError> {
        let bind_error = |source| GatewayError::Bind {
            addr: bind.to_string(),
            source,
        };
        let listener = std::net::TcpListener::bind(bind).map_err(bind_error)?;
        listener.set_nonblocking(true).map_err(bind_error)?;
        let addr = listener.local_addr().map_err(bind_error)?;
        let gateway = Arc::new(gateway);
        let app = router(gateway.clone());
        let (tx, rx) = oneshot::channel::<()>();
        let audit_owner = gateway.clone();

        let thread = std::thread::Builder::new()
            .name("qdt-gateway".to_string())
            .spawn(move || -> Result<(), GatewayError> {
                let runtime = tokio::runtime::Builder::new_multi_thread()
                    .enable_all()
                    .build()
                    .map_err(|e| GatewayError::Runtime(e.to_string()))?;
                runtime.block_on(async move {
                    let listener = tokio::net::TcpListener::from_std(listener)
                        .map_err(|e| GatewayError::Runtime(e.to_string()))?;
                    let stop = async move {
                        if until_signal {
                            tokio::select! {
                                _ = rx => {},
                                _ = termination_signal() => {},
                            }
                        } else {
                            let _ = rx.await;
                        }
                    };
                    axum::serve(listener, app)
                        .with_graceful_shutdown(stop)
                        .await
                        .map_err(|e| GatewayError::Runtime(e.to_string()))
                })?;
                // Let in-flight blocking handlers finish before flushing.
                runtime.shutdown_timeout(std::time::Duration::from_secs(30));
                audit_owner.audit_log().sync()?;
                Ok(())
            })
            .map_err(|e| GatewayError::Runtime(e.to_string()))?;

        tracing::info!(%addr, "gateway listening");
        Ok(GatewayHandle {
            addr,
            gateway,
            shutdown: Some(tx),
            thread: Some(thread),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn gateway(&self) -> &Gateway {
        &self.gateway
    }

    /// Blocks until the server stops on its own (signal or error).
    pub fn wait(mut self) -> Result<(), GatewayError> {
        self.join()
    }

    /// Stops accepting connections, drains in-flight requests and syncs the
    /// audit log.
    pub fn shutdown(mut self) -> Result<(), GatewayError> {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        self.join()
    }

    fn join(&mut self) -> Result<(), GatewayError> {
        match self.thread.take() {
            Some(thread) => thread
                .join()
                .map_err(|_| GatewayError::Runtime("gateway thread panicked".to_string()))?,
            None => Ok(()),
        }
    }
}

impl Drop for GatewayHandle {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        let _ = self.join();
    }
}

/// Opens the store and audit log named in `config` and starts serving.
pub fn serve(config: &GatewayConfig, until_signal: bool) -> Result<GatewayHandle, GatewayError> {
    let gateway = Gateway::from_config(config)?;
    GatewayHandle::spawn(gateway, &config.bind, until_signal)
}
