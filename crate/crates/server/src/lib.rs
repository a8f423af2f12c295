//! HTTP service over translation-memory projects.
//!
//! Every mutation is appended to a per-project JSONL event log before it is
//! published, and the logs are replayed when the service starts.

mod api;
pub mod store;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use adaptmt::gateway::{Gateway, GenerationConfig, ProviderKind, RetryPolicy};
use adaptmt::pipeline::StrategySpec;
use adaptmt::prompting::{BudgetConfig, DisplayNames};
use axum::extract::{DefaultBodyLimit, Request, State};
use axum::http::header;
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;

pub use api::ApiError;
use store::Registry;

pub const MAX_BODY_BYTES: usize = 64 * 1024 * 1024;

#[derive(Debug, Clone)]
pub struct ServerConfig {
    /// Directory holding one event log per project. `None` keeps state in memory.
    pub data_dir: Option<PathBuf>,
    /// Required as `Authorization: Bearer <token>` on `/v1` routes when set.
    pub bearer_token: Option<String>,
    pub provider: ProviderKind,
    pub retry: RetryPolicy,
    /// Base URL of an MT service offering `/translate` and `/health`.
    pub mt_url: Option<String>,
    pub default_strategy: StrategySpec,
    pub term_generation: GenerationConfig,
    pub display_names: DisplayNames,
    pub budget: BudgetConfig,
}

impl ServerConfig {
    pub fn new(provider: ProviderKind) -> Self {
        Self {
            data_dir: None,
            bearer_token: None,
            provider,
            retry: RetryPolicy::default(),
            mt_url: None,
            default_strategy: StrategySpec::few_shot_fuzzy(5),
            term_generation: GenerationConfig::term_extraction(),
            display_names: DisplayNames::default(),
            budget: BudgetConfig::default(),
        }
    }
}

#[derive(Debug)]
pub struct AppState {
    pub config: ServerConfig,
    pub gateway: Gateway,
    pub registry: Registry,
}

impl AppState {
    /// Builds the state, replaying any project logs found in `data_dir`.
    pub fn open(config: ServerConfig) -> std::io::Result<Arc<Self>> {
        let registry = Registry::open(config.data_dir.clone(), config.mt_url.as_deref())?;
        let gateway = Gateway::with_retry(config.provider.clone(), config.retry.clone());
        Ok(Arc::new(Self { config, gateway, registry }))
    }
}

async fn require_token(State(state): State<Arc<AppState>>, req: Request, next: Next) -> Response {
    if let Some(token) = &state.config.bearer_token {
        let given = req
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "));
        if given != Some(token.as_str()) {
            return ApiError::unauthorized().into_response();
        }
    }
    next.run(req).await
}

pub fn router(state: Arc<AppState>) -> Router {
    let v1 = Router::new()
        .route("/projects", post(api::create_project))
        .route("/projects/{id}", get(api::get_project))
        .route("/projects/{id}/tm", post(api::ingest_tm).get(api::export_tm))
        .route("/projects/{id}/matches", get(api::matches))
        .route("/projects/{id}/translate", post(api::translate))
        .route("/projects/{id}/approve", post(api::approve))
        .route("/projects/{id}/terms", post(api::upload_terms))
        .route("/projects/{id}/terms/extract", post(api::extract_terms))
        .route("/projects/{id}/glossary/compile", post(api::compile))
        .route("/projects/{id}/glossary", get(api::glossary))
        .route_layer(middleware::from_fn_with_state(state.clone(), require_token));
    Router::new()
        .route("/health", get(api::health))
        .nest("/v1", v1)
        .layer(DefaultBodyLimit::max(MAX_BODY_BYTES))
        .with_state(state)
}

/// Serves until the process is stopped.
pub async fn serve(config: ServerConfig, addr: SocketAddr) -> std::io::Result<()> {
    let state = AppState::open(config)?;
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state)).await
}
