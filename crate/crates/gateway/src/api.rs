//! HTTP+JSON review service over a run directory.
//!
//! Detection events are loaded once and never modified; only expert scores
//! and trained models are written. Score submissions pass through a single
//! writer lock and are synced to `scores.csv` before the response is sent.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, RwLock};

use anyhow::Result;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use pamflow_core::archive::ArchiveIndex;
use pamflow_core::dsp::{self, dump, SpectrogramParams};
use pamflow_core::event::EventId;
use pamflow_core::postclass::scores::{append_score, read_scores, read_truth, ExpertScore};
use pamflow_core::postclass::{self, Baseline, HkannParams, LabelMapping, PostclassError};
use pamflow_core::report::{self, ScoreField};
use pamflow_core::{DetectionEvent, MlpModel, Timestamp};
use serde::{Deserialize, Serialize};
use tower_http::cors::CorsLayer;

use crate::rundir::{write_json, RunDir};

pub const DEFAULT_PAGE: usize = 100;
pub const MAX_PAGE: usize = 1000;
/// Context shown on each side of an event in its spectrogram image.
pub const CONTEXT_S: f64 = 2.0;

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self { status, message: message.into() }
    }

    fn not_found(what: impl std::fmt::Display) -> Self {
        Self::new(StatusCode::NOT_FOUND, format!("{what} not found"))
    }

    fn invalid(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, message)
    }

    fn internal(e: impl std::fmt::Display) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(serde_json::json!({ "error": self.message }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobStatus {
    Running,
    Succeeded,
    Failed,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainJob {
    pub job_id: u64,
    pub status: JobStatus,
    pub seed: u64,
    /// Model file relative to the run directory, once trained.
    pub model: Option<String>,
    pub rows: usize,
    pub final_loss: Option<f64>,
    pub error: Option<String>,
}

pub struct AppState {
    dir: RunDir,
    /// Sorted by (t0, event_id), the paging order.
    events: Vec<DetectionEvent>,
    by_id: HashMap<EventId, usize>,
    scores: RwLock<Vec<ExpertScore>>,
    writer: tokio::sync::Mutex<()>,
    sources: Vec<ArchiveIndex>,
    model: RwLock<Option<Arc<MlpModel>>>,
    baselines: RwLock<Arc<Vec<Baseline>>>,
    jobs: RwLock<BTreeMap<u64, TrainJob>>,
    next_job: AtomicU64,
    training: AtomicBool,
}

impl AppState {
    /// Load everything the service reads from `dir`. Missing files mean an
    /// empty store, not an error.
    pub fn load(dir: &Path) -> Result<Arc<Self>> {
        let dir = RunDir::open(dir)?;
        let mut events = dir.load_events()?;
        events.sort_by_key(|a| (a.t0, a.event_id));
        let by_id = events.iter().enumerate().map(|(i, e)| (e.event_id, i)).collect();
        let scores = read_scores(&dir.scores_csv())?;
        let sources = dir.load_sources()?.into_iter().map(|(_, idx)| idx).collect();
        let model = dir.load_model(None)?.map(Arc::new);
        let baselines = Arc::new(dir.load_baselines()?);
        Ok(Arc::new(Self {
            dir,
            events,
            by_id,
            scores: RwLock::new(scores),
            writer: tokio::sync::Mutex::new(()),
            sources,
            model: RwLock::new(model),
            baselines: RwLock::new(baselines),
            jobs: RwLock::new(BTreeMap::new()),
            next_job: AtomicU64::new(1),
            training: AtomicBool::new(false),
        }))
    }

    fn event(&self, id: &str) -> ApiResult<&DetectionEvent> {
        let id: EventId = id.parse().map_err(|_| ApiError::not_found(format!("event '{id}'")))?;
        self.by_id.get(&id).map(|&i| &self.events[i]).ok_or_else(|| ApiError::not_found(format!("event {id}")))
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/events", get(list_events))
        .route("/events/{id}", get(get_event))
        .route("/events/{id}/spectrogram.png", get(get_spectrogram))
        .route("/events/{id}/score", post(post_score))
        .route("/train", post(post_train))
        .route("/train/{job}", get(get_train))
        .route("/roc", get(get_roc))
        .route("/diel", get(get_diel))
        .layer(CorsLayer::permissive())
        .with_state(state)
}

/// Bind `port` on localhost (0 picks a free port), print the address and serve until the process ends.
pub async fn serve(data: &Path, port: u16) -> Result<()> {
    let state = AppState::load(data)?;
    let listener = tokio::net::TcpListener::bind(("127.0.0.1", port)).await?;
    let addr = listener.local_addr()?;
    println!("listening on http://{addr}");
    use std::io::Write;
    std::io::stdout().flush()?;
    axum::serve(listener, router(state)).await?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EventSummary {
    pub event_id: EventId,
    pub channel: u16,
    pub algorithm_id: String,
    pub t0: Timestamp,
    pub t1: Timestamp,
    pub f_lo: f64,
    pub f_hi: f64,
    pub score: f64,
    pub hk_score: Option<f64>,
}

impl From<&DetectionEvent> for EventSummary {
    fn from(e: &DetectionEvent) -> Self {
        Self {
            event_id: e.event_id,
            channel: e.channel,
            algorithm_id: e.algorithm_id.clone(),
            t0: e.t0,
            t1: e.t1,
            f_lo: e.f_lo,
            f_hi: e.f_hi,
            score: e.score,
            hk_score: e.hk_score,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ApiPage<T> {
    pub items: Vec<T>,
    pub next_cursor: Option<String>,
    pub total: usize,
}

#[derive(Debug, Default, Deserialize)]
pub struct ListParams {
    pub cursor: Option<String>,
    pub limit: Option<usize>,
    pub min_score: Option<f64>,
    pub algorithm: Option<String>,
}

fn encode_cursor(e: &DetectionEvent) -> String {
    format!("{}.{}", e.t0.micros(), e.event_id)
}

fn decode_cursor(c: &str) -> Option<(Timestamp, EventId)> {
    let (t, id) = c.split_once('.')?;
    Some((Timestamp::from_micros(t.parse().ok()?), id.parse().ok()?))
}

async fn list_events(State(st): State<Arc<AppState>>, Query(q): Query<ListParams>) -> ApiResult<Json<ApiPage<EventSummary>>> {
    let limit = q.limit.unwrap_or(DEFAULT_PAGE);
    if !(1..=MAX_PAGE).contains(&limit) {
        return Err(ApiError::invalid(format!("limit must be in 1..={MAX_PAGE}")));
    }
    let after = match &q.cursor {
        Some(c) => Some(decode_cursor(c).ok_or_else(|| ApiError::new(StatusCode::BAD_REQUEST, "malformed cursor"))?),
        None => None,
    };
    let keep = |e: &&DetectionEvent| {
        q.min_score.is_none_or(|m| e.score >= m) && q.algorithm.as_deref().is_none_or(|a| e.algorithm_id == a)
    };
    let total = st.events.iter().filter(keep).count();
    let mut rest = st.events.iter().filter(keep).filter(|e| after.is_none_or(|k| (e.t0, e.event_id) > k));
    let page: Vec<&DetectionEvent> = rest.by_ref().take(limit).collect();
    let next_cursor = match (page.last(), rest.next()) {
        (Some(last), Some(_)) => Some(encode_cursor(last)),
        _ => None,
    };
    Ok(Json(ApiPage { items: page.into_iter().map(EventSummary::from).collect(), next_cursor, total }))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EventDetail {
    #[serde(flatten)]
    pub event: DetectionEvent,
    /// Active score of each reviewer, oldest first.
    pub expert_scores: Vec<ExpertScore>,
}

async fn get_event(State(st): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<EventDetail>> {
    let event = st.event(&id)?.clone();
    let scores = st.scores.read().map_err(ApiError::internal)?;
    let mine: Vec<ExpertScore> = scores.iter().filter(|s| s.event_id == event.event_id).cloned().collect();
    let mut expert_scores = postclass::active_scores(&mine);
    expert_scores.sort_by(|a, b| (a.scored_at, &a.reviewer_id).cmp(&(b.scored_at, &b.reviewer_id)));
    Ok(Json(EventDetail { event, expert_scores }))
}

/// Conditioned spectrogram of the event with [`CONTEXT_S`] on each side,
/// trimmed to the audio that exists.
pub fn event_png(sources: &[ArchiveIndex], e: &DetectionEvent) -> Option<Vec<u8>> {
    let want0 = e.t0.add_seconds(-CONTEXT_S);
    let want1 = e.t1.add_seconds(CONTEXT_S);
    for idx in sources {
        let Some(iv) = idx.coverage_of(e.channel).iter().find(|iv| iv.contains(e.t0)) else {
            continue;
        };
        let (t0, t1) = (want0.max(iv.start), want1.min(iv.end));
        let Ok(clip) = idx.read_segment(e.channel, t0, t1) else {
            continue;
        };
        let params = SpectrogramParams::default();
        let spec = dsp::stft(&clip, &params).ok()?;
        let spec = dsp::condition(&spec, dsp::DEFAULT_CONDITION_FRAMES).ok()?;
        return Some(dump::to_png(&spec, 0.0, 20.0));
    }
    None
}

async fn get_spectrogram(State(st): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<Response> {
    let e = st.event(&id)?.clone();
    let st2 = st.clone();
    let png = tokio::task::spawn_blocking(move || event_png(&st2.sources, &e))
        .await
        .map_err(ApiError::internal)?
        .ok_or_else(|| ApiError::not_found("audio for this event"))?;
    Ok(([(header::CONTENT_TYPE, "image/png")], png).into_response())
}

#[derive(Debug, Deserialize)]
pub struct ScoreBody {
    pub score: i64,
    pub reviewer_id: String,
}

async fn post_score(
    State(st): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    Json(body): Json<ScoreBody>,
) -> ApiResult<StatusCode> {
    let event_id = st.event(&id)?.event_id;
    if !(1..=5).contains(&body.score) {
        return Err(ApiError::invalid(format!("score {} outside 1..=5", body.score)));
    }
    let reviewer_id = body.reviewer_id.trim().to_string();
    if reviewer_id.is_empty() {
        return Err(ApiError::invalid("reviewer_id must not be empty"));
    }
    let score = ExpertScore { event_id, score: body.score as u8, reviewer_id, scored_at: Timestamp::now() };
    let _w = st.writer.lock().await;
    let path = st.dir.scores_csv();
    let s2 = score.clone();
    tokio::task::spawn_blocking(move || append_score(&path, &s2))
        .await
        .map_err(ApiError::internal)?
        .map_err(ApiError::internal)?;
    st.scores.write().map_err(ApiError::internal)?.push(score);
    Ok(StatusCode::NO_CONTENT)
}

#[derive(Debug, Default, Deserialize)]
pub struct TrainBody {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub hyper: Option<HkannParams>,
}

fn train_blocking(st: &AppState, set: &postclass::LabeledSet, job: u64, seed: u64, hyper: &HkannParams) -> Result<(String, f64)> {
    let model = postclass::train_hkann(set, hyper, seed)?;
    let baselines = postclass::train_all_baselines(set, seed)?;
    let rel = format!("models/hkann-{job}.json");
    write_json(&st.dir.path(&rel), &model)?;
    write_json(&st.dir.hkann_model(), &model)?;
    write_json(&st.dir.baselines(), &baselines)?;
    let loss = model.training.final_loss.unwrap_or(f64::NAN);
    *st.model.write().map_err(|e| anyhow::anyhow!("{e}"))? = Some(Arc::new(model));
    *st.baselines.write().map_err(|e| anyhow::anyhow!("{e}"))? = Arc::new(baselines);
    Ok((rel, loss))
}

async fn post_train(State(st): State<Arc<AppState>>, body: Option<Json<TrainBody>>) -> ApiResult<(StatusCode, Json<TrainJob>)> {
    let Json(body) = body.unwrap_or_default();
    if st.training.swap(true, Ordering::SeqCst) {
        return Err(ApiError::new(StatusCode::CONFLICT, "a training job is already running"));
    }
    let release = |e: ApiError| {
        st.training.store(false, Ordering::SeqCst);
        e
    };
    let set = {
        let scores = st.scores.read().map_err(ApiError::internal).map_err(release)?;
        postclass::build_labeled_set(&st.events, &scores, &LabelMapping::default())
    };
    let set = match set {
        Ok(s) => s,
        Err(e) => return Err(release(ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))),
    };
    let (positives, negatives) = set.class_counts();
    if positives == 0 || negatives == 0 {
        let e = PostclassError::SingleClass { positives, negatives };
        return Err(release(ApiError::new(StatusCode::CONFLICT, e.to_string())));
    }
    let job_id = st.next_job.fetch_add(1, Ordering::SeqCst);
    let hyper = body.hyper.unwrap_or_default();
    let job = TrainJob {
        job_id,
        status: JobStatus::Running,
        seed: body.seed,
        model: None,
        rows: set.rows.len(),
        final_loss: None,
        error: None,
    };
    st.jobs.write().map_err(ApiError::internal).map_err(release)?.insert(job_id, job.clone());
    let st2 = st.clone();
    tokio::task::spawn_blocking(move || {
        let result = train_blocking(&st2, &set, job_id, body.seed, &hyper);
        if let Ok(mut jobs) = st2.jobs.write() {
            if let Some(j) = jobs.get_mut(&job_id) {
                match result {
                    Ok((model, loss)) => {
                        j.status = JobStatus::Succeeded;
                        j.model = Some(model);
                        j.final_loss = Some(loss);
                    }
                    Err(e) => {
                        j.status = JobStatus::Failed;
                        j.error = Some(e.to_string());
                    }
                }
            }
        }
        st2.training.store(false, Ordering::SeqCst);
    });
    Ok((StatusCode::ACCEPTED, Json(job)))
}

async fn get_train(State(st): State<Arc<AppState>>, UrlPath(job): UrlPath<u64>) -> ApiResult<Json<TrainJob>> {
    let jobs = st.jobs.read().map_err(ApiError::internal)?;
    jobs.get(&job).cloned().map(Json).ok_or_else(|| ApiError::not_found(format!("job {job}")))
}

#[derive(Debug, Default, Deserialize)]
pub struct RocParams {
    pub truth: Option<String>,
}

fn resolve(dir: &RunDir, p: &str) -> PathBuf {
    let p = Path::new(p);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        dir.path(p)
    }
}

async fn get_roc(State(st): State<Arc<AppState>>, Query(q): Query<RocParams>) -> ApiResult<Json<postclass::Comparison>> {
    let model = st
        .model
        .read()
        .map_err(ApiError::internal)?
        .clone()
        .ok_or_else(|| ApiError::new(StatusCode::CONFLICT, "no model trained yet"))?;
    let baselines = st.baselines.read().map_err(ApiError::internal)?.clone();
    let path = resolve(&st.dir, q.truth.as_deref().unwrap_or("truth.csv"));
    if !path.exists() {
        return Err(ApiError::not_found(format!("truth file {}", path.display())));
    }
    let st2 = st.clone();
    tokio::task::spawn_blocking(move || {
        let truth = read_truth(&path).map_err(|e| ApiError::invalid(e.to_string()))?;
        postclass::compare(&st2.events, &truth, &model, &baselines).map_err(|e| ApiError::new(StatusCode::CONFLICT, e.to_string()))
    })
    .await
    .map_err(ApiError::internal)?
    .map(Json)
}

#[derive(Debug, Deserialize)]
pub struct DielParams {
    pub field: Option<String>,
    pub threshold: Option<f64>,
}

async fn get_diel(State(st): State<Arc<AppState>>, Query(q): Query<DielParams>) -> ApiResult<Json<report::DielGrid>> {
    let field: ScoreField = q.field.as_deref().unwrap_or("score").parse().map_err(ApiError::invalid)?;
    let threshold = q.threshold.ok_or_else(|| ApiError::invalid("threshold is required"))?;
    let model = st.model.read().map_err(ApiError::internal)?.clone();
    let grid = match (field, model) {
        (ScoreField::HkScore, Some(m)) if st.events.iter().any(|e| e.hk_score.is_none()) => {
            let mut copy = st.events.clone();
            postclass::rescore_all(&mut copy, &m).map_err(|e| ApiError::new(StatusCode::CONFLICT, e.to_string()))?;
            report::diel(&copy, field, threshold)
        }
        _ => report::diel(&st.events, field, threshold),
    };
    grid.map(Json).map_err(|e| match e {
        report::ReportError::MissingField { .. } => ApiError::new(StatusCode::CONFLICT, format!("{e}; train a model first")),
        other => ApiError::invalid(other.to_string()),
    })
}
