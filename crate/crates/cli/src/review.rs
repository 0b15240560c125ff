//! HTTP service behind the candidate review UI.
//!
//! The decisions CSV is the source of truth. At start-up the in-memory
//! statuses are rebuilt from the candidates and decisions files; afterwards
//! every decision is appended to the file before the in-memory status moves.

use std::collections::HashMap;
use std::net::{IpAddr, SocketAddr};
use std::path::PathBuf;
use std::sync::{Arc, RwLock};

use anyhow::{Context, Result};
use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use tower_http::services::ServeDir;

use blinkwatch::ingest::frame_file_name;
use blinkwatch::labeler::{
    self, BlinkCandidate, CandidateStatus, Decision, DecisionRecord, HALF_WINDOW, WINDOW_LEN,
};

use crate::commands::ServeArgs;

/// Environment variable holding the bind address (default `127.0.0.1`).
pub const BIND_ENV: &str = "BLINKWATCH_BIND";
pub const DEFAULT_PER_PAGE: usize = 50;
pub const MAX_PER_PAGE: usize = 500;

pub trait Clock: Send + Sync {
    fn now(&self) -> DateTime<Utc>;
}

pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> DateTime<Utc> {
        Utc::now()
    }
}

impl<F> Clock for F
where
    F: Fn() -> DateTime<Utc> + Send + Sync,
{
    fn now(&self) -> DateTime<Utc> {
        self()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Progress {
    pub total: usize,
    pub pending: usize,
    pub accepted: usize,
    pub rejected: usize,
}

#[derive(Debug, Default)]
struct Statuses {
    status: Vec<CandidateStatus>,
    /// `decided_at` of the decision currently in effect.
    decided_at: Vec<Option<DateTime<Utc>>>,
}

pub struct ReviewState {
    candidates: Vec<BlinkCandidate>,
    index: HashMap<String, usize>,
    statuses: RwLock<Statuses>,
    /// Serializes appends to the decisions file.
    writer: tokio::sync::Mutex<()>,
    decisions_path: PathBuf,
    frames_root: PathBuf,
    clock: Box<dyn Clock>,
}

impl ReviewState {
    /// Loads candidates and replays every recorded decision.
    pub fn load(
        candidates_path: &std::path::Path,
        decisions_path: &std::path::Path,
        frames_root: &std::path::Path,
        clock: Box<dyn Clock>,
    ) -> Result<Self> {
        let raw = labeler::read_candidates(candidates_path)
            .with_context(|| format!("candidates {}", candidates_path.display()))?;
        let decisions = labeler::read_decisions(decisions_path)
            .with_context(|| format!("decisions {}", decisions_path.display()))?;
        let latest = labeler::latest_decisions(&decisions);
        let (candidates, unknown) = labeler::apply_decisions(&raw, &decisions);
        if !unknown.is_empty() {
            log::warn!("{} decisions name unknown candidates", unknown.len());
        }
        let index = candidates
            .iter()
            .enumerate()
            .map(|(i, c)| (c.candidate_id.clone(), i))
            .collect();
        let statuses = Statuses {
            status: candidates.iter().map(|c| c.status).collect(),
            decided_at: candidates
                .iter()
                .map(|c| latest.get(c.candidate_id.as_str()).map(|d| d.decided_at))
                .collect(),
        };
        Ok(Self {
            candidates,
            index,
            statuses: RwLock::new(statuses),
            writer: tokio::sync::Mutex::new(()),
            decisions_path: decisions_path.to_path_buf(),
            frames_root: frames_root.to_path_buf(),
            clock,
        })
    }

    pub fn status(&self, candidate_id: &str) -> Option<CandidateStatus> {
        let i = *self.index.get(candidate_id)?;
        Some(self.statuses.read().expect("status lock").status[i])
    }

    pub fn progress(&self) -> Progress {
        let st = self.statuses.read().expect("status lock");
        let mut p = Progress {
            total: st.status.len(),
            ..Progress::default()
        };
        for s in &st.status {
            match s {
                CandidateStatus::Pending => p.pending += 1,
                CandidateStatus::Accepted => p.accepted += 1,
                CandidateStatus::Rejected => p.rejected += 1,
            }
        }
        p
    }

    fn frame_path(&self, c: &BlinkCandidate, k: u64) -> Option<PathBuf> {
        let frame = (c.center_frame + k).checked_sub(HALF_WINDOW)?;
        let dir = self.frames_root.join(&c.session_id);
        let name = frame_file_name(frame);
        [dir.join(&name), dir.join("rgb").join(&name)]
            .into_iter()
            .find(|p| p.is_file())
    }
}

type Shared = Arc<ReviewState>;

pub fn router(state: Shared, ui_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/api/candidates", get(list_candidates))
        .route("/api/candidates/{id}", get(candidate_detail))
        .route("/api/candidates/{id}/frames/{k}", get(candidate_frame))
        .route("/api/candidates/{id}/decision", post(post_decision))
        .route("/api/progress", get(progress))
        .with_state(state);
    match ui_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(serde_json::json!({ "error": message.into() }))).into_response()
}

fn not_found(id: &str) -> Response {
    error(StatusCode::NOT_FOUND, format!("unknown candidate {id}"))
}

#[derive(Debug, Serialize)]
struct CandidateView<'a> {
    #[serde(flatten)]
    candidate: &'a BlinkCandidate,
    status: CandidateStatus,
}

#[derive(Debug, Deserialize)]
struct ListQuery {
    status: Option<String>,
    page: Option<usize>,
    per_page: Option<usize>,
}

async fn list_candidates(State(state): State<Shared>, Query(q): Query<ListQuery>) -> Response {
    let wanted = match q.status.as_deref() {
        None | Some("") | Some("all") => None,
        Some(s) => match CandidateStatus::parse(s) {
            Some(s) => Some(s),
            None => return error(StatusCode::BAD_REQUEST, format!("unknown status `{s}`")),
        },
    };
    let page = q.page.unwrap_or(1).max(1);
    let per_page = q
        .per_page
        .unwrap_or(DEFAULT_PER_PAGE)
        .clamp(1, MAX_PER_PAGE);
    let st = state.statuses.read().expect("status lock");
    let matching: Vec<CandidateView> = state
        .candidates
        .iter()
        .zip(&st.status)
        .filter(|(_, s)| wanted.is_none_or(|w| w == **s))
        .map(|(c, &status)| CandidateView {
            candidate: c,
            status,
        })
        .collect();
    let total = matching.len();
    let items: Vec<_> = matching
        .into_iter()
        .skip((page - 1).saturating_mul(per_page))
        .take(per_page)
        .collect();
    Json(serde_json::json!({
        "items": items,
        "page": page,
        "per_page": per_page,
        "total": total,
    }))
    .into_response()
}

async fn candidate_detail(State(state): State<Shared>, Path(id): Path<String>) -> Response {
    let Some(&i) = state.index.get(&id) else {
        return not_found(&id);
    };
    let c = &state.candidates[i];
    let status = state.statuses.read().expect("status lock").status[i];
    let frames: Vec<serde_json::Value> = (0..WINDOW_LEN)
        .map(|k| {
            serde_json::json!({
                "offset": k,
                "frame_index": (c.center_frame + k).checked_sub(HALF_WINDOW),
                "url": format!("/api/candidates/{}/frames/{k}", c.candidate_id),
            })
        })
        .collect();
    Json(serde_json::json!({
        "candidate": CandidateView { candidate: c, status },
        "frames": frames,
    }))
    .into_response()
}

async fn candidate_frame(
    State(state): State<Shared>,
    Path((id, k)): Path<(String, String)>,
) -> Response {
    let Some(&i) = state.index.get(&id) else {
        return not_found(&id);
    };
    let k = match k.parse::<u64>() {
        Ok(k) if k < WINDOW_LEN => k,
        _ => {
            return error(
                StatusCode::NOT_FOUND,
                format!("frame offset must be 0..={}", WINDOW_LEN - 1),
            )
        }
    };
    let Some(path) = state.frame_path(&state.candidates[i], k) else {
        return error(StatusCode::NOT_FOUND, "frame not found");
    };
    match tokio::fs::read(&path).await {
        Ok(bytes) => ([(header::CONTENT_TYPE, "image/png")], bytes).into_response(),
        Err(e) => {
            log::warn!("{}: {e}", path.display());
            error(StatusCode::NOT_FOUND, "frame not readable")
        }
    }
}

#[derive(Debug, Deserialize)]
struct DecisionBody {
    decision: String,
    reviewer: String,
}

async fn post_decision(
    State(state): State<Shared>,
    Path(id): Path<String>,
    body: Bytes,
) -> Response {
    let Some(&i) = state.index.get(&id) else {
        return not_found(&id);
    };
    let body: DecisionBody = match serde_json::from_slice(&body) {
        Ok(b) => b,
        Err(e) => return error(StatusCode::BAD_REQUEST, format!("invalid body: {e}")),
    };
    let Some(decision) = Decision::parse(body.decision.trim()) else {
        return error(
            StatusCode::BAD_REQUEST,
            format!("decision must be accept or reject, got `{}`", body.decision),
        );
    };
    let reviewer = body.reviewer.trim();
    if reviewer.is_empty() {
        return error(StatusCode::BAD_REQUEST, "reviewer is required");
    }
    let record = DecisionRecord {
        candidate_id: id,
        decision,
        reviewer: reviewer.to_string(),
        decided_at: state.clock.now(),
    };

    let _guard = state.writer.lock().await;
    if let Err(e) = labeler::append_decisions(&state.decisions_path, std::slice::from_ref(&record))
    {
        log::error!("appending decision: {e}");
        return error(
            StatusCode::INTERNAL_SERVER_ERROR,
            "could not record decision",
        );
    }
    let status = {
        let mut st = state.statuses.write().expect("status lock");
        // Same rule as replaying the file: latest decided_at wins, ties go to the later row.
        if st.decided_at[i].is_none_or(|t| record.decided_at >= t) {
            st.decided_at[i] = Some(record.decided_at);
            st.status[i] = match decision {
                Decision::Accept => CandidateStatus::Accepted,
                Decision::Reject => CandidateStatus::Rejected,
            };
        }
        st.status[i]
    };
    Json(serde_json::json!({
        "candidate_id": record.candidate_id,
        "decision": record.decision,
        "reviewer": record.reviewer,
        "decided_at": record.decided_at,
        "status": status,
    }))
    .into_response()
}

async fn progress(State(state): State<Shared>) -> Json<Progress> {
    Json(state.progress())
}

pub fn serve(args: &ServeArgs) -> Result<()> {
    let state = ReviewState::load(
        &args.candidates,
        &args.decisions,
        &args.frames_root,
        Box::new(SystemClock),
    )?;
    let bind: IpAddr = match std::env::var(BIND_ENV) {
        Ok(v) => v
            .parse()
            .map_err(|_| crate::usage(format!("{BIND_ENV}={v} is not an IP address")))?,
        Err(_) => IpAddr::from([127, 0, 0, 1]),
    };
    let addr = SocketAddr::new(bind, args.port);
    let app = router(Arc::new(state), args.ui_dir.clone());
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()?
        .block_on(async move {
            let listener = tokio::net::TcpListener::bind(addr)
                .await
                .with_context(|| format!("binding {addr}"))?;
            eprintln!("review service listening on http://{addr}");
            axum::serve(listener, app).await?;
            Ok(())
        })
}
