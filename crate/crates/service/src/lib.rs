//! HTTP annotation service.
//!
//! Serves the selected pairs of the stage that is waiting for votes and
//! records votes in that stage's label store. Images are addressed by opaque
//! ids and shown in a per-annotator random left/right order, so clients never
//! learn which image comes from the newer enhancer.
//!
//! | Method | Path | Result |
//! |---|---|---|
//! | GET | `/api/stage` | [`StageInfo`], 503 without a voting stage |
//! | GET | `/api/pairs/next?annotator=ID` | [`PairDescriptor`], 204 when done |
//! | POST | `/api/votes` | 204; 404, 409 or 422 on bad votes |
//! | GET | `/api/images/{id}` | PNG bytes |

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use hillie::annotation::{AnnotationError, Choice, LabelStore, VoteRecord};
use hillie::config::RunConfig;
use hillie::pipeline::{read_jsonl, PairRecord, PipelineError, Workdir};
use hillie::rng::{fnv1a, SeededRng};
use serde::{Deserialize, Serialize};
use tower_http::services::ServeDir;

pub const DEFAULT_PORT: u16 = 8787;

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Config(#[from] hillie::config::ConfigError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageInfo {
    pub stage: u32,
    pub pairs_total: usize,
    pub pairs_fully_voted: usize,
    pub votes_pending: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairDescriptor {
    pub pair_id: String,
    pub image_a_url: String,
    pub image_b_url: String,
    pub presentation_seed: u64,
    /// Pairs this annotator can still vote on, this one included.
    pub remaining: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoteRequest {
    pub pair_id: String,
    pub annotator_id: String,
    pub choice: String,
}

/// Shared state: the work directory and the single vote writer.
#[derive(Debug)]
pub struct AppState {
    workdir: Workdir,
    seed: u64,
    quorum: usize,
    writer: Mutex<()>,
}

impl AppState {
    /// Reads seed and quorum from the work directory's recorded configuration.
    pub fn open(workdir: impl Into<PathBuf>) -> Result<Self, ServiceError> {
        let workdir = Workdir::new(workdir);
        let config = RunConfig::load(workdir.config())?;
        Ok(Self {
            workdir,
            seed: config.seed,
            quorum: config.annotators,
            writer: Mutex::new(()),
        })
    }

    pub fn workdir(&self) -> &Workdir {
        &self.workdir
    }

    fn stage(&self) -> Result<Option<StageView>, ApiError> {
        let Some(n) = self.workdir.voting_stage().map_err(ApiError::internal)? else {
            return Ok(None);
        };
        let pairs: Vec<PairRecord> = read_jsonl(&self.workdir.selected(n)).map_err(ApiError::internal)?;
        let dir = self.workdir.stage_dir(n);
        let mut images = BTreeMap::new();
        for p in &pairs {
            for rel in [&p.image_prev, &p.image_cur] {
                images.insert(image_id(self.seed, n, rel), dir.join(rel));
            }
        }
        Ok(Some(StageView { stage: n, dir, pairs, images }))
    }

    fn voting_stage(&self) -> Result<StageView, ApiError> {
        self.stage()?
            .ok_or_else(|| ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "no stage is collecting votes"))
    }

    fn store(&self, view: &StageView) -> Result<LabelStore, ApiError> {
        LabelStore::open(&view.dir, self.quorum).map_err(ApiError::internal)
    }
}

struct StageView {
    stage: u32,
    dir: PathBuf,
    pairs: Vec<PairRecord>,
    images: BTreeMap<String, PathBuf>,
}

impl StageView {
    fn pair(&self, pair_id: &str) -> Option<&PairRecord> {
        self.pairs.iter().find(|p| p.pair_id == pair_id)
    }
}

fn image_id(seed: u64, stage: u32, rel: &str) -> String {
    format!("{:016x}", fnv1a(format!("{seed}\0{stage}\0{rel}").as_bytes()))
}

/// Seed of one annotator's view of one pair.
pub fn presentation_seed(seed: u64, stage: u32, pair_id: &str, annotator_id: &str) -> u64 {
    SeededRng::keyed(seed, &format!("present\0{stage}\0{pair_id}\0{annotator_id}")).next_u64()
}

/// Whether image "a" shows the newer output under `presentation_seed`.
pub fn cur_is_a(presentation_seed: u64) -> bool {
    SeededRng::new(presentation_seed).uniform() < 0.5
}

/// Maps a presented choice back to the underlying image.
pub fn unrandomize(presentation_seed: u64, choice_a: bool) -> Choice {
    if choice_a == cur_is_a(presentation_seed) {
        Choice::Cur
    } else {
        Choice::Prev
    }
}

#[derive(Debug)]
struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }

    fn internal(e: impl std::fmt::Display) -> Self {
        log::error!("{e}");
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(serde_json::json!({ "error": self.message }))).into_response()
    }
}

async fn get_stage(State(app): State<Arc<AppState>>) -> Result<Json<StageInfo>, ApiError> {
    let view = app.voting_stage()?;
    let store = app.store(&view)?;
    let fully = view.pairs.iter().filter(|p| store.label_for(&p.pair_id).is_some()).count();
    let cast: usize = view.pairs.iter().map(|p| store.vote_count(&p.pair_id).min(app.quorum)).sum();
    Ok(Json(StageInfo {
        stage: view.stage,
        pairs_total: view.pairs.len(),
        pairs_fully_voted: fully,
        votes_pending: view.pairs.len() * app.quorum - cast,
    }))
}

#[derive(Debug, Deserialize)]
struct NextQuery {
    annotator: Option<String>,
}

async fn next_pair(State(app): State<Arc<AppState>>, Query(q): Query<NextQuery>) -> Result<Response, ApiError> {
    let annotator = q.annotator.unwrap_or_default();
    if annotator.trim().is_empty() {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, "missing annotator"));
    }
    let view = app.voting_stage()?;
    let store = app.store(&view)?;
    // Shuffling all pairs, not just the open ones, keeps the head stable
    // while other annotators close pairs.
    let mut order: Vec<&PairRecord> = view.pairs.iter().collect();
    order.sort_by(|a, b| a.pair_id.cmp(&b.pair_id));
    SeededRng::keyed(app.seed, &format!("order\0{}\0{annotator}", view.stage)).shuffle(&mut order);
    let open: Vec<&PairRecord> = order
        .into_iter()
        .filter(|p| !store.has_vote(&p.pair_id, &annotator) && store.vote_count(&p.pair_id) < app.quorum)
        .collect();
    let Some(head) = open.first() else {
        return Ok(StatusCode::NO_CONTENT.into_response());
    };
    let ps = presentation_seed(app.seed, view.stage, &head.pair_id, &annotator);
    let url = |rel: &str| format!("/api/images/{}", image_id(app.seed, view.stage, rel));
    let (a, b) = if cur_is_a(ps) {
        (&head.image_cur, &head.image_prev)
    } else {
        (&head.image_prev, &head.image_cur)
    };
    Ok(Json(PairDescriptor {
        pair_id: head.pair_id.clone(),
        image_a_url: url(a),
        image_b_url: url(b),
        presentation_seed: ps,
        remaining: open.len(),
    })
    .into_response())
}

async fn post_vote(State(app): State<Arc<AppState>>, Json(req): Json<VoteRequest>) -> Result<StatusCode, ApiError> {
    let choice_a = match req.choice.as_str() {
        "a" => true,
        "b" => false,
        other => return Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, format!("choice must be \"a\" or \"b\", got {other:?}"))),
    };
    if req.annotator_id.trim().is_empty() {
        return Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "empty annotator_id"));
    }
    let _guard = app.writer.lock().unwrap_or_else(|e| e.into_inner());
    let view = app.voting_stage()?;
    if view.pair(&req.pair_id).is_none() {
        return Err(ApiError::new(StatusCode::NOT_FOUND, format!("unknown pair {}", req.pair_id)));
    }
    let mut store = app.store(&view)?;
    let ps = presentation_seed(app.seed, view.stage, &req.pair_id, &req.annotator_id);
    let timestamp = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64);
    let vote = VoteRecord {
        pair_id: req.pair_id,
        annotator_id: req.annotator_id,
        choice: unrandomize(ps, choice_a),
        timestamp,
    };
    match store.append_vote(vote) {
        Ok(_) => Ok(StatusCode::NO_CONTENT),
        Err(AnnotationError::DuplicateVote { pair_id, annotator_id }) => Err(ApiError::new(
            StatusCode::CONFLICT,
            format!("pair {pair_id} already has a vote from {annotator_id} or is complete"),
        )),
        Err(e) => Err(ApiError::internal(e)),
    }
}

fn valid_image_id(id: &str) -> bool {
    !id.is_empty() && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

async fn get_image(State(app): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> Result<Response, ApiError> {
    if !valid_image_id(&id) {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, "invalid image id"));
    }
    let view = app.voting_stage()?;
    let Some(path) = view.images.get(&id) else {
        return Err(ApiError::new(StatusCode::NOT_FOUND, format!("unknown image {id}")));
    };
    let bytes = tokio::fs::read(path).await.map_err(ApiError::internal)?;
    Ok((
        [
            (header::CONTENT_TYPE, "image/png"),
            (header::CACHE_CONTROL, "public, max-age=31536000, immutable"),
        ],
        bytes,
    )
        .into_response())
}

/// The API routes, plus static files from `ui_dir` at `/` when given.
pub fn router(state: Arc<AppState>, ui_dir: Option<&Path>) -> Router {
    let api = Router::new()
        .route("/api/stage", get(get_stage))
        .route("/api/pairs/next", get(next_pair))
        .route("/api/votes", post(post_vote))
        .route("/api/images/{id}", get(get_image))
        .with_state(state);
    match ui_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

/// Serves until `shutdown` resolves.
pub async fn serve(
    listener: tokio::net::TcpListener,
    state: Arc<AppState>,
    ui_dir: Option<PathBuf>,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let app = router(state, ui_dir.as_deref());
    axum::serve(listener, app).with_graceful_shutdown(shutdown).await
}

/// A server on a background thread, stopped on drop.
#[derive(Debug)]
pub struct BackgroundServer {
    addr: SocketAddr,
    stop: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<std::io::Result<()>>>,
}

impl BackgroundServer {
    pub fn start(workdir: impl Into<PathBuf>, addr: SocketAddr, ui_dir: Option<PathBuf>) -> Result<Self, ServiceError> {
        let state = Arc::new(AppState::open(workdir)?);
        let rt = tokio::runtime::Builder::new_multi_thread().worker_threads(2).enable_all().build()?;
        let listener = rt.block_on(tokio::net::TcpListener::bind(addr))?;
        let addr = listener.local_addr()?;
        let (tx, rx) = tokio::sync::oneshot::channel::<()>();
        let thread = std::thread::spawn(move || {
            rt.block_on(serve(listener, state, ui_dir, async {
                rx.await.ok();
            }))
        });
        Ok(Self {
            addr,
            stop: Some(tx),
            thread: Some(thread),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self, path: &str) -> String {
        format!("http://{}{path}", self.addr)
    }
}

impl Drop for BackgroundServer {
    fn drop(&mut self) {
        if let Some(tx) = self.stop.take() {
            tx.send(()).ok();
        }
        if let Some(t) = self.thread.take() {
            t.join().ok();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unrandomize_inverts_the_presentation() {
        for s in 0..200u64 {
            let ps = presentation_seed(s, 1, "s1-x000", "ann");
            let cur_choice = cur_is_a(ps);
            assert_eq!(unrandomize(ps, cur_choice), Choice::Cur);
            assert_eq!(unrandomize(ps, !cur_choice), Choice::Prev);
        }
    }

    #[test]
    fn presentation_is_balanced() {
        let a = (0..1000).filter(|i| cur_is_a(presentation_seed(3, 1, &format!("p{i}"), "ann"))).count();
        assert!((400..600).contains(&a), "{a}");
    }

    #[test]
    fn image_ids_are_plain_tokens() {
        assert!(valid_image_id(&image_id(0, 1, "outputs/x000-prev.png")));
        for bad in ["../secret", "a/b", "", "..", "a b", "x%2F"] {
            assert!(!valid_image_id(bad), "{bad}");
        }
        assert_ne!(image_id(0, 1, "outputs/a-prev.png"), image_id(0, 1, "outputs/a-cur.png"));
    }
}
