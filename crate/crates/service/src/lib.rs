//! Read-only HTTP/JSON API over a trained tablet-shape VAE: group means,
//! decoding, interpolation, knob edits, classification and catalog samples.
//!
//! Images travel as base64 PNG strings inside JSON bodies.

mod error;
mod handlers;
pub mod multipart;
mod state;

use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::Request;
use axum::http::{header, HeaderValue, Method, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;

pub use error::ApiError;
pub use state::{GroupLookupError, ServiceState};

pub const DEFAULT_BIND: &str = "127.0.0.1:8080";

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("startup failed: {0}")]
    Startup(String),
    #[error("address {0} is already in use")]
    PortInUse(SocketAddr),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

async fn cors(req: Request, next: Next) -> Response {
    let mut res = if req.method() == Method::OPTIONS {
        StatusCode::NO_CONTENT.into_response()
    } else {
        next.run(req).await
    };
    let h = res.headers_mut();
    h.insert(header::ACCESS_CONTROL_ALLOW_ORIGIN, HeaderValue::from_static("*"));
    h.insert(header::ACCESS_CONTROL_ALLOW_METHODS, HeaderValue::from_static("GET, POST, OPTIONS"));
    h.insert(header::ACCESS_CONTROL_ALLOW_HEADERS, HeaderValue::from_static("content-type"));
    res
}

pub fn router(state: Arc<ServiceState>) -> Router {
    Router::new()
        .route("/health", get(handlers::health))
        .route("/periods", get(handlers::periods))
        .route("/genres", get(handlers::genres))
        .route("/mean-tablet", get(handlers::mean_tablet))
        .route("/decode", post(handlers::decode))
        .route("/interpolate", post(handlers::interpolate_groups))
        .route("/knob", post(handlers::knob))
        .route("/classify", post(handlers::classify))
        .route("/sample", get(handlers::sample))
        .fallback(handlers::not_found)
        .layer(middleware::from_fn(cors))
        .with_state(state)
}

/// Binds `addr` and serves until the process is stopped.
pub async fn serve(state: Arc<ServiceState>, addr: SocketAddr) -> Result<(), ServiceError> {
    let listener = tokio::net::TcpListener::bind(addr).await.map_err(|e| match e.kind() {
        std::io::ErrorKind::AddrInUse => ServiceError::PortInUse(addr),
        _ => ServiceError::Io(e),
    })?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state)).await?;
    Ok(())
}

/// [`serve`] on a fresh multi-threaded runtime.
pub fn serve_blocking(state: ServiceState, addr: SocketAddr) -> Result<(), ServiceError> {
    tokio::runtime::Runtime::new()?.block_on(serve(Arc::new(state), addr))
}
