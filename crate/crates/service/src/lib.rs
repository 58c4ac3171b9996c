//! HTTP front end for name prediction.
//!
//! Requests are stateless: the client sends the function text, the slot
//! declarations and whatever names it has accepted so far, and gets ranked
//! suggestions for every remaining slot.

mod metrics;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use namerec_core::fingerprint::file_sha256;
use namerec_core::inference::{self, InferenceError, InferenceRequest, Mode, SlotDecl, SlotSuggestions};
use namerec_core::model::{param_count, Checkpoint, Model, ModelConfig};
use namerec_core::tokenizer::{load_vocab, BpeVocab};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};
use std::time::Instant;

pub use metrics::Metrics;

pub const DEFAULT_BIND: &str = "127.0.0.1:8080";
pub const DEFAULT_MAX_BODY: usize = 1 << 20;

#[derive(Clone, Debug)]
pub struct ServiceConfig {
    pub checkpoint: Option<PathBuf>,
    pub vocab: Option<PathBuf>,
    pub bind: String,
    pub max_body: usize,
    pub max_allowed: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            checkpoint: None,
            vocab: None,
            bind: DEFAULT_BIND.to_string(),
            max_body: DEFAULT_MAX_BODY,
            max_allowed: inference::DEFAULT_MAX_ALLOWED,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum LoadError {
    #[error("vocabulary: {0}")]
    Vocab(#[from] namerec_core::tokenizer::TokenizerError),
    #[error("checkpoint: {0}")]
    Checkpoint(#[from] namerec_core::model::ModelError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

/// A model ready to serve, with the fingerprints echoed in responses.
pub struct LoadedModel {
    pub model: Model<f32>,
    pub vocab: BpeVocab,
    /// SHA-256 of the checkpoint file.
    pub model_fingerprint: String,
    pub vocab_fingerprint: String,
    pub metadata: BTreeMap<String, String>,
}

impl LoadedModel {
    pub fn load(checkpoint: &Path, vocab_dir: &Path) -> Result<Self, LoadError> {
        let vocab = load_vocab(vocab_dir)?;
        let ck = Checkpoint::<f32>::load(checkpoint, &vocab.hash())?;
        Ok(Self::from_checkpoint(ck, vocab, file_sha256(checkpoint)?))
    }

    pub fn from_checkpoint(ck: Checkpoint<f32>, vocab: BpeVocab, model_fingerprint: String) -> Self {
        LoadedModel {
            vocab_fingerprint: vocab.hash(),
            model: ck.model,
            vocab,
            model_fingerprint,
            metadata: ck.metadata,
        }
    }
}

/// Body of `POST /predict`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionlessRequest {
    pub text: String,
    pub slots: Vec<SlotDecl>,
    #[serde(default)]
    pub accepted: BTreeMap<String, String>,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default)]
    pub mode: Mode,
    /// Falls back to the server default.
    #[serde(default)]
    pub max_allowed: Option<usize>,
}

fn default_k() -> usize {
    inference::DEFAULT_K
}

impl SessionlessRequest {
    pub fn to_inference(&self, default_max_allowed: usize) -> InferenceRequest {
        let mut r = InferenceRequest::new(self.text.clone(), self.slots.clone());
        r.accepted = self.accepted.clone();
        r.k = self.k;
        r.mode = self.mode;
        r.max_allowed = self.max_allowed.unwrap_or(default_max_allowed);
        r
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictResponse {
    pub model_fingerprint: String,
    pub vocab_fingerprint: String,
    pub mode: Mode,
    pub max_allowed: usize,
    pub suggestions: Vec<SlotSuggestions>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub config: ModelConfig,
    pub param_count: usize,
    pub vocab_size: usize,
    pub model_fingerprint: String,
    pub vocab_fingerprint: String,
    pub metadata: BTreeMap<String, String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError {
            status,
            message: message.into(),
        }
    }
}

impl From<InferenceError> for ApiError {
    fn from(e: InferenceError) -> Self {
        let status = match e {
            InferenceError::TooLong { .. } => StatusCode::PAYLOAD_TOO_LARGE,
            InferenceError::Model(_) => StatusCode::INTERNAL_SERVER_ERROR,
            _ => StatusCode::BAD_REQUEST,
        };
        ApiError::new(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        json_response(self.status, &ErrorBody { error: self.message })
    }
}

fn json_response<T: Serialize>(status: StatusCode, body: &T) -> Response {
    let bytes = serde_json::to_vec(body).expect("response types serialize");
    (status, [(header::CONTENT_TYPE, "application/json")], bytes).into_response()
}

/// The prediction behind `POST /predict`, callable without HTTP.
pub fn predict(
    loaded: &LoadedModel,
    request: &SessionlessRequest,
    default_max_allowed: usize,
) -> Result<PredictResponse, InferenceError> {
    let req = request.to_inference(default_max_allowed);
    let suggestions = inference::refine_with_accepted(&loaded.model, &loaded.vocab, &req)?;
    Ok(PredictResponse {
        model_fingerprint: loaded.model_fingerprint.clone(),
        vocab_fingerprint: loaded.vocab_fingerprint.clone(),
        mode: req.mode,
        max_allowed: req.max_allowed,
        suggestions,
    })
}

/// Shared server state. The model sits behind an `Arc` that is replaced
/// whole, so a request sees either the old model or the new one.
pub struct AppState {
    model: RwLock<Option<Arc<LoadedModel>>>,
    pub config: ServiceConfig,
    pub metrics: Metrics,
}

impl AppState {
    pub fn new(config: ServiceConfig, model: Option<LoadedModel>) -> Arc<Self> {
        Arc::new(AppState {
            model: RwLock::new(model.map(Arc::new)),
            config,
            metrics: Metrics::default(),
        })
    }

    /// Load from the configured paths when both are set.
    pub fn from_config(config: ServiceConfig) -> Result<Arc<Self>, LoadError> {
        let model = match (&config.checkpoint, &config.vocab) {
            (Some(c), Some(v)) => Some(LoadedModel::load(c, v)?),
            _ => None,
        };
        Ok(Self::new(config, model))
    }

    pub fn current(&self) -> Option<Arc<LoadedModel>> {
        self.model.read().expect("model lock").clone()
    }

    /// Install `model`, returning the one it replaced.
    pub fn swap(&self, model: Option<LoadedModel>) -> Option<Arc<LoadedModel>> {
        std::mem::replace(&mut *self.model.write().expect("model lock"), model.map(Arc::new))
    }

    /// Reload from the configured paths. On failure the current model stays.
    pub fn reload(&self) -> Result<(), LoadError> {
        let (Some(c), Some(v)) = (&self.config.checkpoint, &self.config.vocab) else {
            return Err(LoadError::Io(std::io::Error::new(
                std::io::ErrorKind::NotFound,
                "no checkpoint and vocabulary configured",
            )));
        };
        let fresh = LoadedModel::load(c, v)?;
        self.swap(Some(fresh));
        Ok(())
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    let limit = state.config.max_body;
    Router::new()
        .route("/health", get(health))
        .route("/model", get(model_info))
        .route("/predict", post(predict_handler))
        .route("/reload", post(reload_handler))
        .route("/metrics", get(metrics_handler))
        .layer(DefaultBodyLimit::max(limit))
        .with_state(state)
}

pub async fn serve(state: Arc<AppState>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(&state.config.bind).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state)).await
}

#[derive(Serialize)]
struct Health {
    status: &'static str,
    model_loaded: bool,
}

async fn health(State(state): State<Arc<AppState>>) -> Response {
    let t = Instant::now();
    let r = json_response(
        StatusCode::OK,
        &Health {
            status: "ok",
            model_loaded: state.current().is_some(),
        },
    );
    state.metrics.record("/health", r.status(), t.elapsed());
    r
}

fn not_loaded() -> ApiError {
    ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "model not loaded")
}

async fn model_info(State(state): State<Arc<AppState>>) -> Response {
    let t = Instant::now();
    let r = match state.current() {
        None => not_loaded().into_response(),
        Some(m) => json_response(
            StatusCode::OK,
            &ModelInfo {
                config: m.model.config().clone(),
                param_count: param_count(m.model.config()),
                vocab_size: m.vocab.size(),
                model_fingerprint: m.model_fingerprint.clone(),
                vocab_fingerprint: m.vocab_fingerprint.clone(),
                metadata: m.metadata.clone(),
            },
        ),
    };
    state.metrics.record("/model", r.status(), t.elapsed());
    r
}

async fn predict_handler(State(state): State<Arc<AppState>>, body: Bytes) -> Response {
    let t = Instant::now();
    let r = match run_predict(&state, &body).await {
        Ok(p) => json_response(StatusCode::OK, &p),
        Err(e) => e.into_response(),
    };
    state.metrics.record("/predict", r.status(), t.elapsed());
    r
}

async fn run_predict(state: &Arc<AppState>, body: &[u8]) -> Result<PredictResponse, ApiError> {
    let request: SessionlessRequest = serde_json::from_slice(body)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, format!("invalid request body: {e}")))?;
    let loaded = state.current().ok_or_else(not_loaded)?;
    let default_max = state.config.max_allowed;
    tokio::task::spawn_blocking(move || predict(&loaded, &request, default_max))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
        .map_err(ApiError::from)
}

async fn reload_handler(State(state): State<Arc<AppState>>) -> Response {
    let t = Instant::now();
    let s = state.clone();
    let r = match tokio::task::spawn_blocking(move || s.reload()).await {
        Ok(Ok(())) => match state.current() {
            Some(m) => json_response(
                StatusCode::OK,
                &serde_json::json!({ "model_fingerprint": m.model_fingerprint, "vocab_fingerprint": m.vocab_fingerprint }),
            ),
            None => not_loaded().into_response(),
        },
        Ok(Err(e)) => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()).into_response(),
        Err(e) => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()).into_response(),
    };
    state.metrics.record("/reload", r.status(), t.elapsed());
    r
}

async fn metrics_handler(State(state): State<Arc<AppState>>) -> Response {
    (
        StatusCode::OK,
        [(header::CONTENT_TYPE, "text/plain; version=0.0.4")],
        state.metrics.render(),
    )
        .into_response()
}
