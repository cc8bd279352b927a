//! HTTP sessions over live topic models.
//!
//! Each session owns one model. Work on a session is serialized by a
//! per-session lock; a refinement that arrives while another is running on the
//! same session is rejected with 409 rather than queued. Every state change is
//! written to the workspace directory before the response is sent.

pub mod error;
pub mod store;
pub mod wire;

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path, State};
use axum::http::StatusCode;
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use tokio::sync::Mutex as AsyncMutex;
use tower_http::services::ServeDir;

use hltm_core::corpus::Corpus;
use hltm_core::metrics::{coherence_delta, outcome_control, NpmiConfig, ReferenceStats};
use hltm_core::model::{Model, RefinementOp, TopicSnapshot, TrainConfig};
use hltm_core::refine::{apply_refinement, RefineConfig};

pub use error::ApiError;
use store::Workspace;
use wire::*;

const MAX_CORPUS_BYTES: usize = 512 * 1024 * 1024;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub workspace: PathBuf,
    /// Directory served under `/ui`, if any.
    pub ui_dir: Option<PathBuf>,
    pub train: TrainConfig,
    pub refine: RefineConfig,
    pub npmi: NpmiConfig,
}

impl ServiceConfig {
    pub fn new(workspace: impl Into<PathBuf>) -> Self {
        ServiceConfig {
            workspace: workspace.into(),
            ui_dir: None,
            train: TrainConfig::default(),
            refine: RefineConfig::default(),
            npmi: NpmiConfig::default(),
        }
    }
}

struct CorpusEntry {
    corpus: Corpus,
    reference: ReferenceStats,
    doc_index: HashMap<String, usize>,
}

impl CorpusEntry {
    fn new(corpus: Corpus) -> Self {
        let reference = ReferenceStats::from_corpus(&corpus);
        let doc_index = corpus.documents.iter().enumerate().map(|(i, d)| (d.id.clone(), i)).collect();
        CorpusEntry { corpus, reference, doc_index }
    }

    fn info(&self, id: &str) -> CorpusInfo {
        CorpusInfo {
            corpus_id: id.to_string(),
            num_docs: self.corpus.num_docs(),
            vocab_size: self.corpus.vocab_size(),
            categories: self.corpus.categories.clone(),
        }
    }

    fn word(&self, r: &ItemRef) -> Result<usize, ApiError> {
        let v = self.corpus.vocab_size();
        match r {
            ItemRef::Index(i) if *i < v => Ok(*i),
            ItemRef::Index(i) => Err(ApiError::BadRequest(format!("word index {i} out of range (vocabulary has {v} words)"))),
            ItemRef::Name(s) => self
                .corpus
                .vocabulary
                .id(s)
                .ok_or_else(|| ApiError::BadRequest(format!("word {s:?} is not in the vocabulary"))),
        }
    }

    fn document(&self, r: &ItemRef) -> Result<usize, ApiError> {
        let n = self.corpus.num_docs();
        match r {
            ItemRef::Index(i) if *i < n => Ok(*i),
            ItemRef::Index(i) => Err(ApiError::BadRequest(format!("document index {i} out of range (corpus has {n} documents)"))),
            ItemRef::Name(s) => self
                .doc_index
                .get(s)
                .copied()
                .ok_or_else(|| ApiError::BadRequest(format!("unknown document {s:?}"))),
        }
    }

    fn resolve(&self, op: &WireOp) -> Result<RefinementOp, ApiError> {
        let words = |seeds: &[ItemRef]| seeds.iter().map(|s| self.word(s)).collect::<Result<Vec<_>, _>>();
        Ok(match op {
            WireOp::RemoveWord { topic, word } => RefinementOp::RemoveWord { topic: *topic, word: self.word(word)? },
            WireOp::AddWord { topic, word } => RefinementOp::AddWord { topic: *topic, word: self.word(word)? },
            WireOp::RemoveDocument { topic, document } => RefinementOp::RemoveDocument {
                topic: *topic,
                document: self.document(document)?,
            },
            WireOp::MergeTopics { topic1, topic2 } => RefinementOp::MergeTopics { topic1: *topic1, topic2: *topic2 },
            WireOp::SplitTopic { topic, seeds } => RefinementOp::SplitTopic { topic: *topic, seeds: words(seeds)? },
            WireOp::ChangeWordOrder { topic, word1, word2 } => RefinementOp::ChangeWordOrder {
                topic: *topic,
                word1: self.word(word1)?,
                word2: self.word(word2)?,
            },
            WireOp::CreateTopic { seeds } => RefinementOp::CreateTopic { seeds: words(seeds)? },
        })
    }

    fn topic_views(&self, snap: &TopicSnapshot, n: usize) -> Vec<TopicView> {
        (0..snap.topic_count)
            .map(|t| TopicView {
                topic: t,
                words: snap
                    .top_words(t, n)
                    .iter()
                    .map(|&w| WordEntry {
                        word: self.corpus.vocabulary.word(w as usize).to_string(),
                        probability: snap.word_probs.get(t, w as usize),
                    })
                    .collect(),
                documents: snap
                    .top_docs(t, n)
                    .iter()
                    .map(|&d| {
                        let doc = &self.corpus.documents[d as usize];
                        DocEntry {
                            doc_id: doc.id.clone(),
                            probability: snap.doc_probs.get(d as usize, t),
                            category: doc.category.clone(),
                        }
                    })
                    .collect(),
            })
            .collect()
    }
}

#[derive(Default)]
struct SessionData {
    model: Option<Model>,
    history: Vec<HistoryEntry>,
}

struct Session {
    info: Mutex<SessionInfo>,
    data: Arc<AsyncMutex<SessionData>>,
}

impl Session {
    fn info(&self) -> SessionInfo {
        self.info.lock().expect("session info lock").clone()
    }
}

struct Inner {
    config: ServiceConfig,
    workspace: Workspace,
    corpora: RwLock<HashMap<String, Arc<CorpusEntry>>>,
    sessions: RwLock<HashMap<String, Arc<Session>>>,
    next_id: AtomicU64,
}

/// Shared service state; cheap to clone.
#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

fn numeric_suffix(id: &str) -> Option<u64> {
    id.rsplit_once('-').and_then(|(_, n)| n.parse().ok())
}

fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}

fn parse_body<T: DeserializeOwned>(body: &[u8]) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::BadRequest(format!("malformed request body: {e}")))
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> T + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f).await.map_err(|e| ApiError::Internal(format!("worker failed: {e}")))
}

impl AppState {
    /// Opens the workspace and reloads every persisted corpus and session.
    ///
    /// A session that was still training when the previous process stopped is
    /// marked failed; create a new one with the same seed to reproduce it.
    pub fn open(config: ServiceConfig) -> std::io::Result<Self> {
        let workspace = Workspace::open(&config.workspace)?;
        let mut max_id = 0;
        let mut corpora = HashMap::new();
        for (id, corpus) in workspace.load_corpora()? {
            max_id = max_id.max(numeric_suffix(&id).unwrap_or(0));
            corpora.insert(id, Arc::new(CorpusEntry::new(corpus)));
        }
        let mut sessions = HashMap::new();
        for file in workspace.load_sessions()? {
            let mut info = file.info;
            max_id = max_id.max(numeric_suffix(&info.session_id).unwrap_or(0));
            if info.status == SessionStatus::Training {
                info.status = SessionStatus::Failed;
                info.error = Some("training interrupted by restart".into());
            }
            let data = SessionData { model: file.model, history: file.history };
            sessions.insert(
                info.session_id.clone(),
                Arc::new(Session { info: Mutex::new(info), data: Arc::new(AsyncMutex::new(data)) }),
            );
        }
        Ok(AppState {
            inner: Arc::new(Inner {
                config,
                workspace,
                corpora: RwLock::new(corpora),
                sessions: RwLock::new(sessions),
                next_id: AtomicU64::new(max_id + 1),
            }),
        })
    }

    pub fn router(self) -> Router {
        let mut router = Router::new()
            .route("/healthz", get(healthz))
            .route("/corpora", post(create_corpus).layer(DefaultBodyLimit::max(MAX_CORPUS_BYTES)))
            .route("/corpora/{id}", get(get_corpus))
            .route("/sessions", post(create_session))
            .route("/sessions/{id}", get(get_session))
            .route("/sessions/{id}/topics", get(get_topics))
            .route("/sessions/{id}/refinements", post(refine))
            .route("/sessions/{id}/history", get(get_history));
        if let Some(dir) = &self.inner.config.ui_dir {
            router = router.nest_service("/ui", ServeDir::new(dir));
        }
        router.with_state(self)
    }

    fn fresh_id(&self, prefix: &str) -> String {
        format!("{prefix}-{}", self.inner.next_id.fetch_add(1, Ordering::Relaxed))
    }

    fn corpus(&self, id: &str) -> Result<Arc<CorpusEntry>, ApiError> {
        self.inner
            .corpora
            .read()
            .expect("corpora lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::NotFound(format!("corpus {id:?}")))
    }

    fn session(&self, id: &str) -> Result<Arc<Session>, ApiError> {
        self.inner
            .sessions
            .read()
            .expect("sessions lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::NotFound(format!("session {id:?}")))
    }

    fn ready_session(&self, id: &str) -> Result<(Arc<Session>, SessionInfo, Arc<CorpusEntry>), ApiError> {
        let session = self.session(id)?;
        let info = session.info();
        match info.status {
            SessionStatus::Ready => {}
            SessionStatus::Training => return Err(ApiError::Conflict(format!("session {id:?} is still training"))),
            SessionStatus::Failed => {
                return Err(ApiError::Conflict(format!(
                    "session {id:?} failed: {}",
                    info.error.as_deref().unwrap_or("unknown error")
                )))
            }
        }
        let corpus = self.corpus(&info.corpus_id)?;
        Ok((session, info, corpus))
    }
}

/// Binds `addr` and serves until the process is stopped.
pub async fn serve(state: AppState, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, state.router()).await
}

async fn healthz() -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok" }))
}

fn valid_name(name: &str) -> bool {
    !name.is_empty() && name.len() <= 64 && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

async fn create_corpus(State(state): State<AppState>, body: Bytes) -> Result<(StatusCode, Json<CorpusInfo>), ApiError> {
    let req: CreateCorpus = parse_body(&body)?;
    let id = match &req.name {
        Some(name) if !valid_name(name) => {
            return Err(ApiError::BadRequest("corpus name must be 1-64 characters of [A-Za-z0-9_-]".into()))
        }
        Some(name) => name.clone(),
        None => state.fresh_id("c"),
    };
    if state.inner.corpora.read().expect("corpora lock").contains_key(&id) {
        return Err(ApiError::Conflict(format!("corpus {id:?} already exists")));
    }
    let corpus = blocking(move || match (req.records, req.synthetic) {
        (Some(records), None) => Corpus::from_records(records, &req.preprocess),
        (None, Some(synthetic)) => synthetic.generate(),
        _ => Err(hltm_core::Error::InvalidArgument("give exactly one of `records` or `synthetic`".into())),
    })
    .await??;
    state.inner.workspace.save_corpus(&id, &corpus)?;
    let entry = Arc::new(CorpusEntry::new(corpus));
    let info = entry.info(&id);
    state.inner.corpora.write().expect("corpora lock").insert(id, entry);
    Ok((StatusCode::CREATED, Json(info)))
}

async fn get_corpus(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<CorpusInfo>, ApiError> {
    Ok(Json(state.corpus(&id)?.info(&id)))
}

async fn create_session(State(state): State<AppState>, body: Bytes) -> Result<(StatusCode, Json<SessionInfo>), ApiError> {
    let req: CreateSession = parse_body(&body)?;
    let corpus = state.corpus(&req.corpus_id)?;
    if req.k == 0 {
        return Err(ApiError::BadRequest("k must be at least 1".into()));
    }
    let info = SessionInfo {
        session_id: state.fresh_id("s"),
        corpus_id: req.corpus_id,
        backend: req.backend,
        k: req.k,
        seed: req.seed,
        status: SessionStatus::Training,
        error: None,
    };
    let data = Arc::new(AsyncMutex::new(SessionData::default()));
    // Held by the training task so refinements cannot start before the model exists.
    let mut guard = data.clone().try_lock_owned().expect("fresh lock");
    state.inner.workspace.save_session(&info, None, &[])?;
    let session = Arc::new(Session { info: Mutex::new(info.clone()), data });
    state.inner.sessions.write().expect("sessions lock").insert(info.session_id.clone(), session.clone());

    let train = state.inner.config.train.clone();
    let workspace = state.inner.workspace.clone();
    tokio::task::spawn_blocking(move || {
        let result = {
            let i = session.info();
            Model::train(i.backend, &corpus.corpus, i.k, i.seed, &train)
        };
        let mut info = session.info();
        match result {
            Ok(model) => {
                info.status = SessionStatus::Ready;
                guard.model = Some(model);
            }
            Err(e) => {
                info.status = SessionStatus::Failed;
                info.error = Some(e.to_string());
            }
        }
        if let Err(e) = workspace.save_session(&info, guard.model.as_ref(), &guard.history) {
            info.status = SessionStatus::Failed;
            info.error = Some(format!("could not persist session: {e}"));
        }
        tracing::info!(session = %info.session_id, status = ?info.status, "training finished");
        *session.info.lock().expect("session info lock") = info;
        drop(guard);
    });
    Ok((StatusCode::ACCEPTED, Json(info)))
}

async fn get_session(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<SessionInfo>, ApiError> {
    Ok(Json(state.session(&id)?.info()))
}

async fn get_topics(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<TopicsResponse>, ApiError> {
    let (session, info, corpus) = state.ready_session(&id)?;
    let data = session.data.lock().await;
    let model = data.model.as_ref().ok_or_else(|| ApiError::Internal("ready session has no model".into()))?;
    let topics = corpus.topic_views(&model.snapshot(), state.inner.config.refine.display_n);
    Ok(Json(TopicsResponse { session_id: info.session_id, backend: info.backend, topics }))
}

async fn refine(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<RefinementResponse>, ApiError> {
    let (session, info, corpus) = state.ready_session(&id)?;
    let wire: WireOp = parse_body(&body)?;
    let op = corpus.resolve(&wire)?;
    let mut guard = session
        .data
        .clone()
        .try_lock_owned()
        .map_err(|_| ApiError::Conflict(format!("a refinement is already running on session {id:?}")))?;
    let inner = state.inner.clone();
    blocking(move || -> Result<RefinementResponse, ApiError> {
        let cfg = &inner.config;
        let mut model = guard.model.clone().ok_or_else(|| ApiError::Internal("ready session has no model".into()))?;
        let outcome = apply_refinement(&mut model, &op, &cfg.refine)?;
        let control = outcome_control(&outcome, cfg.refine.display_n)?;
        let delta = coherence_delta(
            &outcome.pre_snapshot,
            &outcome.post_snapshot,
            &corpus.corpus.vocabulary,
            &corpus.reference,
            &cfg.npmi,
        );
        let entry = HistoryEntry { op: op.clone(), control: control.clone(), coherence_delta: delta, timestamp_ms: now_ms() };
        let mut history = guard.history.clone();
        history.push(entry);
        // Commit only after the new state is on disk.
        inner.workspace.save_session(&info, Some(&model), &history)?;
        guard.model = Some(model);
        guard.history = history;
        Ok(RefinementResponse {
            op,
            control,
            coherence_delta: delta,
            inference_steps: outcome.inference_steps,
            topics: corpus.topic_views(&outcome.post_snapshot, cfg.refine.display_n),
        })
    })
    .await?
    .map(Json)
}

async fn get_history(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<Vec<HistoryEntry>>, ApiError> {
    let session = state.session(&id)?;
    let data = session.data.lock().await;
    Ok(Json(data.history.clone()))
}
