//! HTTP service under `/v1/`.
//!
//! Sessions live inside the loaded index generation, so swapping the index
//! or fitting a new model drops every session in the same step.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use axum::body::Bytes;
use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine;
use log::info;
use serde::{Deserialize, Serialize};
use wordspot_core::subspace::DEFAULT_VARIANCE;
use wordspot_core::{
    corpus, fit_pca, CorpusIndex, FeatureError, FeedbackError, FeedbackSession, Judgment, Retention, RocchioParams,
    Space,
};

use crate::api::{self, ParamsOverride, QuerySource, ResultItem, SearchResponse, DEFAULT_TOP};
use crate::error::AppError;
use crate::pages;
use crate::thumbnails::ThumbnailStore;

pub const DEFAULT_BIND: &str = "127.0.0.1:8080";
pub const DEFAULT_SESSION_TIMEOUT: Duration = Duration::from_secs(30 * 60);

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub session_timeout: Duration,
    /// Binarization threshold for uploaded images and page files.
    pub threshold: f64,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            session_timeout: DEFAULT_SESSION_TIMEOUT,
            threshold: wordspot_core::raster::DEFAULT_THRESHOLD,
        }
    }
}

/// Machine-readable error body: `{"error": {"code", "message"}}`.
#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

#[derive(Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: ErrorDetail,
}

#[derive(Serialize, Deserialize)]
pub struct ErrorDetail {
    pub code: String,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            error: ErrorDetail {
                code: self.code.into(),
                message: self.message,
            },
        };
        (self.status, Json(body)).into_response()
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, "bad_request", r.body_text())
    }
}

fn feedback_code(e: &FeedbackError) -> &'static str {
    match e {
        FeedbackError::EmptyFeedback(_) => "empty_feedback",
        FeedbackError::Judgment(_) => "judgment_not_shown",
        FeedbackError::Dimension { .. } => "dimension_mismatch",
        FeedbackError::InvalidParams(_) => "invalid_params",
        FeedbackError::Rank(_) => "rank_failed",
    }
}

impl From<AppError> for ApiError {
    fn from(e: AppError) -> Self {
        use StatusCode as S;
        let msg = e.to_string();
        match &e {
            AppError::UnknownWord(_) => ApiError::new(S::NOT_FOUND, "unknown_word", msg),
            AppError::NoModel => ApiError::new(S::CONFLICT, "no_model", msg),
            AppError::Raster(_) | AppError::Image(_) => ApiError::new(S::BAD_REQUEST, "malformed_image", msg),
            AppError::Feature(FeatureError::DegenerateWord(_)) => ApiError::new(S::UNPROCESSABLE_ENTITY, "no_ink", msg),
            AppError::Feedback(f) => ApiError::new(S::UNPROCESSABLE_ENTITY, feedback_code(f), msg),
            AppError::Rank(_) => ApiError::new(S::UNPROCESSABLE_ENTITY, "rank_failed", msg),
            AppError::Pca(_) => ApiError::new(S::UNPROCESSABLE_ENTITY, "pca_failed", msg),
            AppError::Index(_) | AppError::Path(..) | AppError::Io(_) => {
                ApiError::new(S::UNPROCESSABLE_ENTITY, "index_unreadable", msg)
            }
            AppError::Usage(_) => ApiError::new(S::BAD_REQUEST, "bad_request", msg),
            _ => ApiError::new(S::INTERNAL_SERVER_ERROR, "internal", msg),
        }
    }
}

type ApiResult<T> = Result<T, ApiError>;

struct SessionSlot {
    created_at: SystemTime,
    last_active: Mutex<(Instant, SystemTime)>,
    session: Mutex<FeedbackSession>,
}

impl SessionSlot {
    fn touch(&self) {
        *self.last_active.lock().expect("session clock") = (Instant::now(), SystemTime::now());
    }

    fn idle(&self) -> Duration {
        self.last_active.lock().expect("session clock").0.elapsed()
    }
}

/// One loaded index generation with its sessions.
pub struct Loaded {
    pub index: Arc<CorpusIndex>,
    pub index_path: Option<PathBuf>,
    pub pages_dir: Option<PathBuf>,
    thumbs: Arc<ThumbnailStore>,
    sessions: Mutex<HashMap<String, Arc<SessionSlot>>>,
    generation: u64,
}

impl Loaded {
    /// Reads an index file and, optionally, the page directory it was built from.
    pub fn open(index_path: PathBuf, pages_dir: Option<PathBuf>, threshold: f64) -> Result<Self, AppError> {
        let index = CorpusIndex::load(&index_path)?;
        let thumbs = match &pages_dir {
            Some(dir) => ThumbnailStore::new(pages::page_files(dir).map_err(|e| AppError::Path(dir.clone(), e))?, threshold),
            None => ThumbnailStore::empty(),
        };
        Ok(Self::from_parts(Arc::new(index), Some(index_path), pages_dir, Arc::new(thumbs)))
    }

    pub fn from_index(index: CorpusIndex, thumbs: ThumbnailStore) -> Self {
        Self::from_parts(Arc::new(index), None, None, Arc::new(thumbs))
    }

    fn from_parts(
        index: Arc<CorpusIndex>,
        index_path: Option<PathBuf>,
        pages_dir: Option<PathBuf>,
        thumbs: Arc<ThumbnailStore>,
    ) -> Self {
        Self {
            index,
            index_path,
            pages_dir,
            thumbs,
            sessions: Mutex::default(),
            generation: 0,
        }
    }

    fn slot(&self, id: &str, timeout: Duration) -> ApiResult<Arc<SessionSlot>> {
        let mut sessions = self.sessions.lock().expect("session map");
        let slot = sessions
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "unknown_session", format!("no session {id}")))?;
        if slot.idle() > timeout {
            sessions.remove(id);
            return Err(ApiError::new(StatusCode::NOT_FOUND, "session_expired", format!("session {id} expired")));
        }
        slot.touch();
        Ok(slot)
    }

    fn insert(&self, session: FeedbackSession, timeout: Duration) {
        let mut sessions = self.sessions.lock().expect("session map");
        sessions.retain(|_, s| s.idle() <= timeout);
        let now = SystemTime::now();
        sessions.insert(
            session.session_id.clone(),
            Arc::new(SessionSlot {
                created_at: now,
                last_active: Mutex::new((Instant::now(), now)),
                session: Mutex::new(session),
            }),
        );
    }

    fn thumbnail(&self) -> impl FnMut(&wordspot_core::WordEntry) -> Option<String> + '_ {
        |e| self.thumbs.reference(e).map(|h| format!("/v1/thumbnails/{h}"))
    }
}

pub struct AppState {
    config: ServerConfig,
    current: RwLock<Option<Arc<Loaded>>>,
    writer: tokio::sync::Mutex<()>,
    generations: AtomicU64,
}

impl AppState {
    pub fn new(config: ServerConfig, initial: Option<Loaded>) -> Arc<Self> {
        let state = Arc::new(Self {
            config,
            current: RwLock::new(None),
            writer: tokio::sync::Mutex::new(()),
            generations: AtomicU64::new(0),
        });
        if let Some(l) = initial {
            state.install(l);
        }
        state
    }

    /// The single writer gate serializing admin mutations.
    pub fn writer_gate(&self) -> &tokio::sync::Mutex<()> {
        &self.writer
    }

    pub fn config(&self) -> &ServerConfig {
        &self.config
    }

    fn install(&self, mut loaded: Loaded) {
        loaded.generation = self.generations.fetch_add(1, Ordering::SeqCst) + 1;
        *self.current.write().expect("index lock") = Some(Arc::new(loaded));
    }

    fn current(&self) -> ApiResult<Arc<Loaded>> {
        self.current
            .read()
            .expect("index lock")
            .clone()
            .ok_or_else(|| ApiError::new(StatusCode::CONFLICT, "no_index", "no index is loaded"))
    }

    fn try_write(&self) -> ApiResult<tokio::sync::MutexGuard<'_, ()>> {
        self.writer.try_lock().map_err(|_| {
            ApiError::new(StatusCode::CONFLICT, "mutation_in_progress", "another admin operation is running")
        })
    }
}

fn new_session_id() -> String {
    format!("{:032x}", rand::random::<u128>())
}

fn unix_secs(t: SystemTime) -> u64 {
    t.duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchRequest {
    pub word_id: Option<u64>,
    /// Base64 of a PBM/PGM or PNG word image.
    pub image: Option<String>,
    pub top: Option<usize>,
    #[serde(default)]
    pub subspace: bool,
    pub params: Option<ParamsOverride>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeedbackRequest {
    pub judgments: Vec<Judgment>,
    pub params: Option<ParamsOverride>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct HistoryRound {
    pub round: usize,
    pub judgments: Vec<Judgment>,
    pub results: Vec<ResultItem>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SessionView {
    pub session_id: String,
    pub round: usize,
    pub space: Space,
    pub params: RocchioParams,
    pub top: usize,
    pub created_at: u64,
    pub last_active: u64,
    pub expires_in_secs: u64,
    pub results: Vec<ResultItem>,
    /// Every round so far, starting with the initial ranking.
    pub history: Vec<HistoryRound>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadIndexRequest {
    pub path: PathBuf,
    pub pages: Option<PathBuf>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PcaRequest {
    /// Retained variance fraction; default 0.95.
    pub variance: Option<f64>,
    /// Exact retained dimension; excludes `variance`.
    pub fixed_m: Option<usize>,
    /// Default true.
    pub whiten: Option<bool>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct PcaStats {
    pub m: usize,
    pub source_dim: usize,
    pub whitened: bool,
    pub retained_variance: f64,
    /// Sum of the discarded eigenvalues.
    pub reconstruction_error: f64,
    pub total_variance: f64,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct StatsResponse {
    pub loaded: bool,
    pub generation: u64,
    pub entries: usize,
    pub documents: usize,
    pub space: Option<Space>,
    pub pca: Option<PcaStats>,
    pub sessions: usize,
    pub thumbnails: bool,
}

fn stats_of(loaded: Option<&Loaded>) -> StatsResponse {
    let Some(l) = loaded else {
        return StatsResponse {
            loaded: false,
            generation: 0,
            entries: 0,
            documents: 0,
            space: None,
            pca: None,
            sessions: 0,
            thumbnails: false,
        };
    };
    let pca = l.index.pca().map(|m| PcaStats {
        m: m.dim(),
        source_dim: m.source_dim(),
        whitened: m.is_whitened(),
        retained_variance: m.retained_variance(),
        reconstruction_error: m.reconstruction_error(),
        total_variance: m.eigenvalues().iter().sum(),
    });
    StatsResponse {
        loaded: true,
        generation: l.generation,
        entries: l.index.len(),
        documents: corpus::document_ids(&l.index).len(),
        space: Some(l.index.pca().map_or(Space::Original, |m| Space::Subspace { dim: m.dim() })),
        pca,
        sessions: l.sessions.lock().expect("session map").len(),
        thumbnails: l.thumbs.has_pages(),
    }
}

async fn search(
    State(state): State<Arc<AppState>>,
    body: Result<Json<SearchRequest>, JsonRejection>,
) -> ApiResult<Json<SearchResponse>> {
    let Json(req) = body?;
    let loaded = state.current()?;
    let source = match (req.word_id, &req.image) {
        (Some(id), None) => QuerySource::WordId(id),
        (None, Some(b64)) => {
            let bytes = base64::engine::general_purpose::STANDARD
                .decode(b64.trim())
                .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "malformed_image", format!("base64: {e}")))?;
            QuerySource::Image(pages::decode_image(&bytes, state.config.threshold)?)
        }
        _ => {
            return Err(ApiError::new(
                StatusCode::BAD_REQUEST,
                "invalid_query",
                "give exactly one of word_id or image",
            ))
        }
    };
    let params = req.params.unwrap_or_default().apply(RocchioParams::default());
    let top = req.top.unwrap_or(DEFAULT_TOP);
    let session = api::start_session(new_session_id(), &loaded.index, &source, req.subspace, params, top)?;
    let response = api::search_response(&session, &loaded.index, &mut loaded.thumbnail());
    loaded.insert(session, state.config.session_timeout);
    Ok(Json(response))
}

async fn feedback(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Result<Json<FeedbackRequest>, JsonRejection>,
) -> ApiResult<Json<SearchResponse>> {
    let Json(req) = body?;
    let loaded = state.current()?;
    let slot = loaded.slot(&id, state.config.session_timeout)?;
    let mut session = slot.session.lock().expect("session lock");
    api::apply_feedback(&mut session, &loaded.index, &req.judgments, &req.params.unwrap_or_default())?;
    slot.touch();
    let response = api::search_response(&session, &loaded.index, &mut loaded.thumbnail());
    Ok(Json(response))
}

async fn get_session(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<SessionView>> {
    let loaded = state.current()?;
    let slot = loaded.slot(&id, state.config.session_timeout)?;
    let session = slot.session.lock().expect("session lock");
    let mut thumb = loaded.thumbnail();
    let top = session.shown();
    let mut history = vec![HistoryRound {
        round: 0,
        judgments: Vec::new(),
        results: api::result_items(session.initial_ranking(), &loaded.index, top, &mut thumb),
    }];
    for (i, r) in session.rounds().iter().enumerate() {
        history.push(HistoryRound {
            round: i + 1,
            judgments: r.judgments.clone(),
            results: api::result_items(&r.ranking, &loaded.index, top, &mut thumb),
        });
    }
    let (_, last_wall) = *slot.last_active.lock().expect("session clock");
    Ok(Json(SessionView {
        session_id: session.session_id.clone(),
        round: session.round_index(),
        space: session.space(),
        params: *session.params(),
        top,
        created_at: unix_secs(slot.created_at),
        last_active: unix_secs(last_wall),
        expires_in_secs: state.config.session_timeout.saturating_sub(slot.idle()).as_secs(),
        results: history.last().expect("round 0 present").results.clone(),
        history,
    }))
}

async fn admin_index(
    State(state): State<Arc<AppState>>,
    body: Result<Json<LoadIndexRequest>, JsonRejection>,
) -> ApiResult<Json<StatsResponse>> {
    let Json(req) = body?;
    let _gate = state.try_write()?;
    let threshold = state.config.threshold;
    let loaded = tokio::task::spawn_blocking(move || Loaded::open(req.path, req.pages, threshold))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))??;
    info!("loaded index with {} entries", loaded.index.len());
    state.install(loaded);
    Ok(Json(stats_of(Some(&*state.current()?))))
}

async fn admin_pca(
    State(state): State<Arc<AppState>>,
    body: Result<Json<PcaRequest>, JsonRejection>,
) -> ApiResult<Json<StatsResponse>> {
    let Json(req) = body?;
    let retention = match (req.variance, req.fixed_m) {
        (Some(_), Some(_)) => {
            return Err(ApiError::new(StatusCode::BAD_REQUEST, "bad_request", "give variance or fixed_m, not both"))
        }
        (_, Some(m)) => Retention::Fixed(m),
        (v, None) => Retention::Variance(v.unwrap_or(DEFAULT_VARIANCE)),
    };
    let whiten = req.whiten.unwrap_or(true);
    let _gate = state.try_write()?;
    let current = state.current()?;
    let index = current.index.clone();
    let fitted = tokio::task::spawn_blocking(move || -> Result<CorpusIndex, AppError> {
        let model = fit_pca(&index.descriptors().collect::<Vec<_>>(), retention, whiten)?;
        Ok(index.with_pca(model)?)
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))??;
    info!("fitted PCA model, m = {}", fitted.pca().map_or(0, |m| m.dim()));
    state.install(Loaded::from_parts(
        Arc::new(fitted),
        current.index_path.clone(),
        current.pages_dir.clone(),
        current.thumbs.clone(),
    ));
    Ok(Json(stats_of(Some(&*state.current()?))))
}

async fn admin_stats(State(state): State<Arc<AppState>>) -> Json<StatsResponse> {
    let current = state.current.read().expect("index lock").clone();
    Json(stats_of(current.as_deref()))
}

async fn thumbnail(State(state): State<Arc<AppState>>, Path(hash): Path<String>) -> ApiResult<Response> {
    let loaded = state.current()?;
    let png = loaded
        .thumbs
        .get(&hash)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "unknown_thumbnail", format!("no thumbnail {hash}")))?;
    Ok((
        [
            (header::CONTENT_TYPE, "image/png"),
            (header::CACHE_CONTROL, "public, max-age=31536000, immutable"),
        ],
        Bytes::copy_from_slice(&png),
    )
        .into_response())
}

async fn not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint")
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/v1/search", post(search))
        .route("/v1/sessions/{id}/feedback", post(feedback))
        .route("/v1/sessions/{id}", get(get_session))
        .route("/v1/admin/index", post(admin_index))
        .route("/v1/admin/pca", post(admin_pca))
        .route("/v1/admin/stats", get(admin_stats))
        .route("/v1/thumbnails/{hash}", get(thumbnail))
        .fallback(not_found)
        .with_state(state)
}

/// Serves until Ctrl-C.
pub async fn serve(state: Arc<AppState>, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
