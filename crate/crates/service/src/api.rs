//! HTTP session API.
//!
//! | method | path | body / result |
//! |---|---|---|
//! | `POST` | `/sessions` | `{"sequence": dir}` or `{"synthetic": n}` → session status |
//! | `GET` | `/sessions` | list of session statuses |
//! | `GET` | `/sessions/{id}` | session status |
//! | `DELETE` | `/sessions/{id}` | 204 |
//! | `GET` | `/sessions/{id}/frames/{t}` | frame as PNG |
//! | `POST` | `/sessions/{id}/rounds` | scribble document → round summary |
//! | `GET` | `/sessions/{id}/rounds/{r}/masks/{t}` | indexed label PNG |
//! | `GET` | `/sessions/{id}/rounds/{r}/overlays/{t}?opacity=0.5` | RGB PNG |
//! | `GET` | `/sessions/{id}/suggestion` | next frame to annotate |
//! | `GET` | `/sessions/{id}/metrics` | per-round J/F and AUC (ground truth only) |
//!
//! Errors are `{"error": kind, "message": text, "field": path}` with status
//! 404 (unknown session, frame or round), 422 (invalid request or protocol
//! violation) or 409 (a round is already running for the session).

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use ivos_core::data_io::{
    benchmark_suite, generate_synthetic, load_sequence, AppConfig, VideoSequence,
};
use ivos_core::metrics::{auc, boundary_tolerance, score_frame};
use ivos_core::workflow::{Suggestion, SuggestionBasis};
use ivos_core::{Error, LabelMap, RoundResult, ScribbleDocument, Segmenter, Session};

use crate::render::{encode_label_png, encode_rgb_png, overlay};

#[derive(Debug, Serialize)]
pub struct ErrorBody {
    pub error: &'static str,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    pub fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not-found", message, None)
    }

    pub fn unprocessable(field: Option<&str>, message: impl Into<String>) -> Self {
        Self::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            "unprocessable",
            message,
            field,
        )
    }

    pub fn conflict(message: impl Into<String>) -> Self {
        Self::new(StatusCode::CONFLICT, "conflict", message, None)
    }

    fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message, None)
    }

    fn new(
        status: StatusCode,
        error: &'static str,
        message: impl Into<String>,
        field: Option<&str>,
    ) -> Self {
        Self {
            status,
            body: ErrorBody {
                error,
                message: message.into(),
                field: field.map(str::to_string),
            },
        }
    }

    pub fn status(&self) -> StatusCode {
        self.status
    }

    /// Maps an engine error, attributing it to `field` when the engine
    /// message does not name one itself.
    fn engine(err: Error, field: Option<&str>) -> Self {
        match err {
            Error::Io(_) | Error::Image(_) | Error::Calibration { .. } => {
                Self::internal(err.to_string())
            }
            Error::Document(msg) => {
                // Document errors start with the offending path, e.g. `strokes[2].object: ...`.
                let named = msg.split_once(": ").map(|(p, _)| p.to_string());
                let field = named
                    .as_deref()
                    .filter(|p| p.starts_with("strokes"))
                    .or(field);
                Self::unprocessable(field, msg.clone())
            }
            other => Self::unprocessable(field, other.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SessionState {
    Idle,
    RunningRound,
    /// Every frame has been annotated.
    Complete,
}

/// Outcome of one round as reported to clients.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundSummary {
    pub round: usize,
    pub annotated_frame: usize,
    pub mean_j: Option<f64>,
    pub frame_j: Option<Vec<f64>>,
    pub suggestion: Option<Suggestion>,
    /// Per-frame mask and overlay URLs for this round.
    pub masks: Vec<String>,
    pub overlays: Vec<String>,
}

impl RoundSummary {
    fn new(id: &str, result: &RoundResult) -> Self {
        let urls = |kind: &str| {
            (0..result.labels.len())
                .map(|t| format!("/sessions/{id}/rounds/{}/{kind}/{t}", result.round))
                .collect()
        };
        Self {
            round: result.round,
            annotated_frame: result.annotated_frame,
            mean_j: result.mean_j(),
            frame_j: result.frame_j.clone(),
            suggestion: result.suggestion,
            masks: urls("masks"),
            overlays: urls("overlays"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionStatus {
    pub id: String,
    pub sequence: String,
    pub frame_count: usize,
    pub object_count: usize,
    pub height: usize,
    pub width: usize,
    pub has_ground_truth: bool,
    pub state: SessionState,
    pub round: usize,
    pub annotated_frames: Vec<usize>,
    pub last_round: Option<RoundSummary>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuggestionBody {
    pub frame: Option<usize>,
    pub basis: Option<SuggestionBasis>,
    /// True when no ground truth backs the choice.
    pub heuristic: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub round: usize,
    pub annotated_frame: usize,
    pub j: f64,
    pub f: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsBody {
    pub rounds: Vec<RoundMetrics>,
    pub auc_j: f64,
    pub auc_jf: f64,
    /// Per-frame J of the latest round.
    pub latest_frame_j: Vec<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateRequest {
    sequence: Option<PathBuf>,
    synthetic: Option<usize>,
}

#[derive(Debug, Deserialize)]
struct OverlayQuery {
    opacity: Option<f64>,
}

struct Entry {
    busy: AtomicBool,
    session: Mutex<Session>,
    /// Refreshed after every round, so polling never waits on a running one.
    snapshot: Mutex<SessionStatus>,
}

impl Entry {
    fn new(session: Session, sequence: String) -> Self {
        let (height, width) = session.frame_size();
        let snapshot = SessionStatus {
            id: session.id().to_string(),
            sequence,
            frame_count: session.frame_count(),
            object_count: session.object_count(),
            height,
            width,
            has_ground_truth: session.ground_truth().is_some(),
            state: SessionState::Idle,
            round: 0,
            annotated_frames: Vec::new(),
            last_round: None,
        };
        Self {
            busy: AtomicBool::new(false),
            session: Mutex::new(session),
            snapshot: Mutex::new(snapshot),
        }
    }

    fn record(&self, session: &Session, summary: RoundSummary) {
        let mut snap = self.snapshot.lock().expect("status lock");
        snap.round = session.round();
        snap.annotated_frames = session.annotated_frames();
        snap.last_round = Some(summary);
    }

    fn status(&self) -> SessionStatus {
        let mut snap = self.snapshot.lock().expect("status lock").clone();
        snap.state = if self.busy.load(Ordering::Acquire) {
            SessionState::RunningRound
        } else if snap.annotated_frames.len() == snap.frame_count {
            SessionState::Complete
        } else {
            SessionState::Idle
        };
        snap
    }
}

/// Holds the single in-flight round of one session; dropping it returns
/// the session to idle.
pub struct RoundGuard {
    entry: Arc<Entry>,
}

impl Drop for RoundGuard {
    fn drop(&mut self) {
        self.entry.busy.store(false, Ordering::Release);
    }
}

/// Shared server state: the configuration and every live session.
#[derive(Clone)]
pub struct AppState {
    config: Arc<AppConfig>,
    sessions: Arc<Mutex<HashMap<String, Arc<Entry>>>>,
}

impl AppState {
    pub fn new(config: AppConfig) -> Self {
        Self {
            config: Arc::new(config),
            sessions: Arc::default(),
        }
    }

    fn entry(&self, id: &str) -> ApiResult<Arc<Entry>> {
        self.sessions
            .lock()
            .expect("session table lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(format!("no session {id}")))
    }

    /// Registers a session built from `sequence` and returns its id.
    pub fn insert(&self, sequence: VideoSequence) -> ApiResult<String> {
        let id = uuid::Uuid::new_v4().simple().to_string();
        let segmenter =
            Segmenter::new(self.config.segmenter.clone()).map_err(|e| ApiError::engine(e, None))?;
        let mut session = Session::new(
            id.clone(),
            sequence.frames,
            sequence.object_count,
            segmenter,
        )
        .map_err(|e| ApiError::engine(e, None))?;
        if let Some(gt) = sequence.gt {
            session = session
                .with_ground_truth(gt)
                .map_err(|e| ApiError::engine(e, None))?;
        }
        let entry = Entry::new(session, sequence.id);
        self.sessions
            .lock()
            .expect("session table lock")
            .insert(id.clone(), Arc::new(entry));
        Ok(id)
    }

    /// Marks a round as running for `id`; fails with 409 if one already is.
    pub fn begin_round(&self, id: &str) -> ApiResult<RoundGuard> {
        let entry = self.entry(id)?;
        entry
            .busy
            .compare_exchange(false, true, Ordering::AcqRel, Ordering::Acquire)
            .map_err(|_| {
                ApiError::conflict(format!("a round is already running for session {id}"))
            })?;
        Ok(RoundGuard { entry })
    }

    pub fn status(&self, id: &str) -> ApiResult<SessionStatus> {
        Ok(self.entry(id)?.status())
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/sessions", post(create_session).get(list_sessions))
        .route("/sessions/{id}", get(get_session).delete(delete_session))
        .route("/sessions/{id}/frames/{t}", get(get_frame))
        .route("/sessions/{id}/rounds", post(submit_round))
        .route("/sessions/{id}/rounds/{r}/masks/{t}", get(get_mask))
        .route("/sessions/{id}/rounds/{r}/overlays/{t}", get(get_overlay))
        .route("/sessions/{id}/suggestion", get(get_suggestion))
        .route("/sessions/{id}/metrics", get(get_metrics))
        .with_state(state)
}

fn parse_json<T: serde::de::DeserializeOwned>(body: &[u8]) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::unprocessable(Some("body"), e.to_string()))
}

fn png_response(bytes: Vec<u8>) -> Response {
    ([(header::CONTENT_TYPE, "image/png")], bytes).into_response()
}

async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> ApiResult<T> + Send + 'static,
) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(format!("worker failed: {e}")))?
}

async fn create_session(
    State(state): State<AppState>,
    body: Bytes,
) -> ApiResult<(StatusCode, Json<SessionStatus>)> {
    let req: CreateRequest = parse_json(&body)?;
    let sequence = match (req.sequence, req.synthetic) {
        (Some(path), None) => {
            blocking(move || {
                load_sequence(&path)
                    .map_err(|e| ApiError::unprocessable(Some("sequence"), e.to_string()))
            })
            .await?
        }
        (None, Some(n)) => {
            let specs = benchmark_suite();
            let spec = specs.get(n).ok_or_else(|| {
                ApiError::unprocessable(Some("synthetic"), format!("{n} not in 0..{}", specs.len()))
            })?;
            generate_synthetic(spec).map_err(|e| ApiError::engine(e, Some("synthetic")))?
        }
        _ => {
            return Err(ApiError::unprocessable(
                None,
                "give exactly one of `sequence` (a directory) or `synthetic` (a suite index)",
            ))
        }
    };
    let id = state.insert(sequence)?;
    Ok((StatusCode::CREATED, Json(state.status(&id)?)))
}

async fn list_sessions(State(state): State<AppState>) -> Json<Vec<SessionStatus>> {
    let entries: Vec<Arc<Entry>> = state
        .sessions
        .lock()
        .expect("session table lock")
        .values()
        .cloned()
        .collect();
    let mut out: Vec<SessionStatus> = entries.iter().map(|e| e.status()).collect();
    out.sort_by(|a, b| a.id.cmp(&b.id));
    Json(out)
}

async fn get_session(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> ApiResult<Json<SessionStatus>> {
    Ok(Json(state.status(&id)?))
}

async fn delete_session(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> ApiResult<StatusCode> {
    // Holding the round slot keeps a concurrent submit from racing the removal.
    let _guard = state.begin_round(&id)?;
    state
        .sessions
        .lock()
        .expect("session table lock")
        .remove(&id);
    Ok(StatusCode::NO_CONTENT)
}

async fn get_frame(
    State(state): State<AppState>,
    Path((id, t)): Path<(String, usize)>,
) -> ApiResult<Response> {
    let entry = state.entry(&id)?;
    let bytes = blocking(move || {
        let s = entry.session.lock().expect("session lock");
        let frame = s
            .frames()
            .get(t)
            .ok_or_else(|| ApiError::not_found(format!("no frame {t}")))?;
        encode_rgb_png(frame).map_err(|e| ApiError::internal(e.to_string()))
    })
    .await?;
    Ok(png_response(bytes))
}

async fn submit_round(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Json<RoundSummary>> {
    let guard = state.begin_round(&id)?;
    let doc: ScribbleDocument = parse_json(&body)?;
    let entry = guard.entry.clone();
    let sets = {
        let s = entry.session.lock().expect("session lock");
        let (h, w) = s.frame_size();
        if doc.frame >= s.frame_count() {
            return Err(ApiError::unprocessable(
                Some("frame"),
                format!("frame {} out of range 0..{}", doc.frame, s.frame_count()),
            ));
        }
        if s.is_annotated(doc.frame) {
            return Err(ApiError::unprocessable(
                Some("frame"),
                format!("frame {} is already annotated", doc.frame),
            ));
        }
        for (n, stroke) in doc.strokes.iter().enumerate() {
            if let Some(m) = stroke
                .points
                .iter()
                .position(|p| p.x < 0 || p.y < 0 || p.x as usize >= w || p.y as usize >= h)
            {
                let p = stroke.points[m];
                return Err(ApiError::unprocessable(
                    Some(&format!("strokes[{n}].points[{m}]")),
                    format!("point ({}, {}) outside the {w}x{h} frame", p.x, p.y),
                ));
            }
        }
        doc.to_sets(s.object_count())
            .map_err(|e| ApiError::engine(e, Some("strokes")))?
    };
    let summary = blocking(move || {
        let mut s = entry.session.lock().expect("session lock");
        let result = s
            .run_round(doc.frame, &sets)
            .map_err(|e| ApiError::engine(e, Some("strokes")))?;
        let summary = RoundSummary::new(s.id(), &result);
        entry.record(&s, summary.clone());
        Ok(summary)
    })
    .await?;
    drop(guard);
    Ok(Json(summary))
}

fn round_labels(entry: &Entry, r: usize, t: usize) -> ApiResult<(LabelMap, image::RgbImage)> {
    let s = entry.session.lock().expect("session lock");
    let labels = s
        .labels(r)
        .ok_or_else(|| ApiError::not_found(format!("round {r} has not been completed")))?;
    let mask = labels
        .get(t)
        .ok_or_else(|| ApiError::not_found(format!("no frame {t}")))?;
    Ok((mask.clone(), s.frames()[t].clone()))
}

async fn get_mask(
    State(state): State<AppState>,
    Path((id, r, t)): Path<(String, usize, usize)>,
) -> ApiResult<Response> {
    let entry = state.entry(&id)?;
    let bytes = blocking(move || {
        let (mask, _) = round_labels(&entry, r, t)?;
        encode_label_png(&mask).map_err(|e| ApiError::internal(e.to_string()))
    })
    .await?;
    Ok(png_response(bytes))
}

async fn get_overlay(
    State(state): State<AppState>,
    Path((id, r, t)): Path<(String, usize, usize)>,
    Query(q): Query<OverlayQuery>,
) -> ApiResult<Response> {
    let opacity = q.opacity.unwrap_or(0.5);
    if !(0.0..=1.0).contains(&opacity) {
        return Err(ApiError::unprocessable(
            Some("opacity"),
            format!("{opacity} not in [0, 1]"),
        ));
    }
    let entry = state.entry(&id)?;
    let bytes = blocking(move || {
        let (mask, frame) = round_labels(&entry, r, t)?;
        encode_rgb_png(&overlay(&frame, &mask, opacity))
            .map_err(|e| ApiError::internal(e.to_string()))
    })
    .await?;
    Ok(png_response(bytes))
}

async fn get_suggestion(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> ApiResult<Json<SuggestionBody>> {
    let entry = state.entry(&id)?;
    let suggestion = blocking(move || {
        let s = entry.session.lock().expect("session lock");
        s.suggest_frame().map_err(|e| ApiError::engine(e, None))
    })
    .await?;
    Ok(Json(SuggestionBody {
        frame: suggestion.map(|x| x.frame),
        basis: suggestion.map(|x| x.basis),
        heuristic: suggestion.is_some_and(|x| x.basis != SuggestionBasis::GroundTruth),
    }))
}

async fn get_metrics(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> ApiResult<Json<MetricsBody>> {
    let entry = state.entry(&id)?;
    let fraction = state.config.metrics.boundary_fraction;
    blocking(move || {
        let s = entry.session.lock().expect("session lock");
        let gt = s
            .ground_truth()
            .ok_or_else(|| ApiError::unprocessable(None, "session has no ground truth"))?;
        if s.round() == 0 {
            return Err(ApiError::unprocessable(None, "no completed round"));
        }
        let (h, w) = s.frame_size();
        let tol = boundary_tolerance(h, w, fraction);
        let mut rounds = Vec::with_capacity(s.round());
        let mut latest = Vec::new();
        for (labels, ann) in s.history().iter().zip(s.registry()) {
            let scores = labels
                .iter()
                .zip(gt)
                .map(|(p, g)| score_frame(p, g, s.object_count(), tol))
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| ApiError::engine(e, None))?;
            let n = scores.len() as f64;
            rounds.push(RoundMetrics {
                round: ann.round,
                annotated_frame: ann.frame,
                j: scores.iter().map(|x| x.j).sum::<f64>() / n,
                f: scores.iter().map(|x| x.f).sum::<f64>() / n,
            });
            latest = scores.iter().map(|x| x.j).collect();
        }
        let j: Vec<f64> = rounds.iter().map(|r| r.j).collect();
        let jf: Vec<f64> = rounds.iter().map(|r| 0.5 * (r.j + r.f)).collect();
        Ok(Json(MetricsBody {
            auc_j: auc(&j).map_err(|e| ApiError::engine(e, None))?,
            auc_jf: auc(&jf).map_err(|e| ApiError::engine(e, None))?,
            rounds,
            latest_frame_j: latest,
        }))
    })
    .await
}
