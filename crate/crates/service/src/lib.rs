//! HTTP/JSON service hosting blockmerge documents.
//!
//! Each document id names a replica session. Edits are applied and logged
//! per session; merges combine two logs and publish the converged document
//! to every session involved. Conflicts suspend a merge with `409` until a
//! choice is posted for the reported `conflictId`.

mod session;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::env;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, MutexGuard};

use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use blockmerge::edit::{EditLog, EditOp};
use blockmerge::formula::{evaluate_all, recompute, Value};
use blockmerge::merge::{merge_interactive, Choice, Conflict, ConflictId, MergeError};
use blockmerge::model::{Document, NodeId, ReplicaId};
use blockmerge::store::{self, StoreError, VersionHash};
use blockmerge::Rejection;
use serde::Deserialize;
use serde_json::{json, Value as JsonValue};
use thiserror::Error;

pub use session::{PendingMerge, Published, Session};

/// Environment variable overriding the fixture directory.
pub const FIXTURES_ENV: &str = "BLOCKMERGE_FIXTURES";

#[derive(Debug, Error)]
pub enum ApiError {
    #[error("no document '{0}'")]
    UnknownDoc(String),
    #[error("document has no version {0}")]
    UnknownVersion(String),
    #[error("no fixture '{0}'")]
    UnknownFixture(String),
    #[error("a merge is waiting on conflict {0}")]
    MergePending(ConflictId),
    #[error("no merge is pending")]
    NoPendingMerge,
    #[error("the pending merge waits on conflict {waiting_on}, not {given}")]
    WrongConflict { waiting_on: ConflictId, given: String },
    #[error("edit rejected: {0}")]
    Rejected(#[from] Rejection),
    #[error("merge failed: {0}")]
    Merge(#[from] MergeError),
    #[error("invalid document: {0}")]
    BadDocument(String),
    #[error(transparent)]
    Store(#[from] StoreError),
}

impl ApiError {
    fn status(&self) -> StatusCode {
        match self {
            ApiError::UnknownDoc(_) | ApiError::UnknownVersion(_) | ApiError::UnknownFixture(_) => {
                StatusCode::NOT_FOUND
            }
            ApiError::NoPendingMerge => StatusCode::NOT_FOUND,
            ApiError::MergePending(_) | ApiError::WrongConflict { .. } => StatusCode::CONFLICT,
            ApiError::Rejected(_) | ApiError::Merge(_) | ApiError::BadDocument(_) | ApiError::Store(_) => {
                StatusCode::UNPROCESSABLE_ENTITY
            }
        }
    }

    fn code(&self) -> &'static str {
        match self {
            ApiError::UnknownDoc(_) => "unknown-doc",
            ApiError::UnknownVersion(_) => "unknown-version",
            ApiError::UnknownFixture(_) => "unknown-fixture",
            ApiError::MergePending(_) => "merge-pending",
            ApiError::NoPendingMerge => "no-pending-merge",
            ApiError::WrongConflict { .. } => "wrong-conflict",
            ApiError::Rejected(r) => r.code(),
            ApiError::Merge(_) => "merge-failed",
            ApiError::BadDocument(_) => "bad-document",
            ApiError::Store(_) => "store",
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({ "error": self.code(), "message": self.to_string() });
        if let ApiError::MergePending(id) = &self {
            body["conflictId"] = json!(id);
        }
        (self.status(), Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// Shared service state: the session map. Each session sits behind its own
/// lock so requests for one document are serialized while distinct
/// documents proceed in parallel.
#[derive(Clone, Default)]
pub struct AppState {
    sessions: Arc<Mutex<HashMap<String, Arc<Mutex<Session>>>>>,
    fixtures: Option<PathBuf>,
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|poisoned| poisoned.into_inner())
}

impl AppState {
    /// State serving fixtures from `fixtures`; its `fig2.json`, if any, is
    /// hosted as document `fig2`.
    pub fn new(fixtures: Option<PathBuf>) -> Result<AppState, StoreError> {
        let state = AppState { fixtures, ..AppState::default() };
        if let Some(dir) = &state.fixtures {
            let path = dir.join("fig2.json");
            if path.exists() {
                let doc = store::load_document(&path)?;
                state.insert("fig2", Session::new(doc, ReplicaId::new("fig2").expect("valid replica name")));
            }
        }
        Ok(state)
    }

    /// Fixture directory from the environment, else the shipped one.
    pub fn from_env() -> Result<AppState, StoreError> {
        let dir = env::var_os(FIXTURES_ENV).map(PathBuf::from).unwrap_or_else(blockmerge::scenario::default_fixture_dir);
        AppState::new(Some(dir))
    }

    pub fn insert(&self, id: &str, session: Session) {
        lock(&self.sessions).insert(id.to_string(), Arc::new(Mutex::new(session)));
    }

    fn session(&self, id: &str) -> ApiResult<Arc<Mutex<Session>>> {
        lock(&self.sessions).get(id).cloned().ok_or_else(|| ApiError::UnknownDoc(id.to_string()))
    }

    fn fixture_log(&self, name: &str) -> ApiResult<EditLog> {
        let unknown = || ApiError::UnknownFixture(name.to_string());
        if name.contains(['/', '\\']) || name.starts_with('.') {
            return Err(unknown());
        }
        let path = self.fixtures.as_ref().ok_or_else(unknown)?.join(name);
        if !path.is_file() {
            return Err(unknown());
        }
        Ok(store::read_log(&path)?)
    }
}

pub fn app(state: AppState) -> Router {
    Router::new()
        .route("/docs/{id}", get(get_doc).put(put_doc))
        .route("/docs/{id}/log", get(get_log))
        .route("/docs/{id}/edits", post(post_edit))
        .route("/docs/{id}/merge", post(post_merge).delete(abandon_merge))
        .route("/docs/{id}/merge/{conflict}", post(resolve_conflict))
        .route("/docs/{id}/dirty", get(get_dirty))
        .with_state(state)
}

/// Serves until the process ends.
pub async fn serve(addr: &str, state: AppState) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, app(state)).await
}

fn document_json(doc: &Document) -> JsonValue {
    serde_json::from_str(&doc.to_canonical_json()).expect("canonical json parses")
}

fn doc_body(id: &str, session: &Session) -> JsonValue {
    json!({
        "id": id,
        "replica": session.replica,
        "version": session.version(),
        "baseVersion": session.log.base_version,
        "document": document_json(&session.doc),
        "render": session.doc.render(),
    })
}

fn published_body(p: &Published) -> JsonValue {
    json!({ "version": p.version, "dirty": p.dirty, "values": p.values })
}

async fn get_doc(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<JsonValue>> {
    let session = state.session(&id)?;
    let session = lock(&session);
    Ok(Json(doc_body(&id, &session)))
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "camelCase")]
struct PutDoc {
    /// A document in canonical JSON form.
    document: Option<JsonValue>,
    /// Or the id of a hosted document to copy.
    from: Option<String>,
    /// Replica name; defaults to the document id.
    replica: Option<String>,
}

async fn put_doc(State(state): State<AppState>, Path(id): Path<String>, Json(body): Json<PutDoc>) -> ApiResult<Response> {
    let doc = match (body.document, body.from) {
        (Some(json), None) => Document::from_json(&json.to_string()).map_err(|e| ApiError::BadDocument(e.to_string()))?,
        (None, Some(from)) => lock(&*state.session(&from)?).doc.clone(),
        _ => return Err(ApiError::BadDocument("give exactly one of `document` and `from`".into())),
    };
    doc.validate().map_err(|e| ApiError::BadDocument(e.to_string()))?;
    let replica = ReplicaId::new(body.replica.unwrap_or_else(|| id.clone()))
        .map_err(|e| ApiError::BadDocument(e.to_string()))?;
    let session = Session::new(doc, replica);
    let body = doc_body(&id, &session);
    state.insert(&id, session);
    Ok((StatusCode::CREATED, Json(body)).into_response())
}

async fn get_log(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<EditLog>> {
    let session = state.session(&id)?;
    let log = lock(&session).log.clone();
    Ok(Json(log))
}

async fn post_edit(State(state): State<AppState>, Path(id): Path<String>, Json(op): Json<EditOp>) -> ApiResult<Json<JsonValue>> {
    let session = state.session(&id)?;
    let mut session = lock(&session);
    if let Some(pending) = &session.pending {
        return Err(ApiError::MergePending(pending.waiting_on.clone()));
    }
    let published = session.edit(op)?;
    Ok(Json(published_body(&published)))
}

/// Where a merge takes a log from.
#[derive(Debug, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum LogRef {
    /// The log of a hosted document, which also receives the result.
    Doc(String),
    /// A log file in the fixture directory.
    Fixture(String),
    /// An inline log.
    Log(EditLog),
}

#[derive(Debug, Deserialize)]
struct MergeRequest {
    a: LogRef,
    b: LogRef,
}

async fn post_merge(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Json(req): Json<MergeRequest>,
) -> ApiResult<Response> {
    let mut publish_to = vec![id.clone()];
    let mut resolve = |r: LogRef| -> ApiResult<EditLog> {
        match r {
            LogRef::Doc(doc) => {
                let log = lock(&*state.session(&doc)?).log.clone();
                if !publish_to.contains(&doc) {
                    publish_to.push(doc);
                }
                Ok(log)
            }
            LogRef::Fixture(name) => state.fixture_log(&name),
            LogRef::Log(log) => Ok(log),
        }
    };
    let (a, b) = (resolve(req.a)?, resolve(req.b)?);
    let pending = PendingMerge { a, b, publish_to, answers: BTreeMap::new(), waiting_on: ConflictId(String::new()) };
    let session = state.session(&id)?;
    let mut guard = lock(&session);
    if let Some(p) = &guard.pending {
        return Err(ApiError::MergePending(p.waiting_on.clone()));
    }
    let (response, broadcast) = drive(&id, &mut guard, pending)?;
    drop(guard);
    broadcast.send(&state);
    Ok(response)
}

async fn resolve_conflict(
    State(state): State<AppState>,
    Path((id, conflict)): Path<(String, String)>,
    Json(choice): Json<Choice>,
) -> ApiResult<Response> {
    let session = state.session(&id)?;
    let mut guard = lock(&session);
    let mut pending = guard.pending.take().ok_or(ApiError::NoPendingMerge)?;
    if pending.waiting_on.0 != conflict {
        let waiting_on = pending.waiting_on.clone();
        guard.pending = Some(pending);
        return Err(ApiError::WrongConflict { waiting_on, given: conflict });
    }
    pending.answers.insert(pending.waiting_on.clone(), choice);
    let (response, broadcast) = drive(&id, &mut guard, pending)?;
    drop(guard);
    broadcast.send(&state);
    Ok(response)
}

async fn abandon_merge(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<StatusCode> {
    let session = state.session(&id)?;
    lock(&session).pending.take().ok_or(ApiError::NoPendingMerge)?;
    Ok(StatusCode::NO_CONTENT)
}

/// A merge result still to be published to the other sessions involved,
/// once the merging session's lock is released.
#[derive(Default)]
struct Broadcast {
    merged: Option<(Document, BTreeSet<NodeId>)>,
    to: Vec<String>,
}

impl Broadcast {
    fn send(self, state: &AppState) {
        let Some((merged, dirty)) = self.merged else { return };
        for id in &self.to {
            if let Ok(s) = state.session(id) {
                let mut s = lock(&s);
                // A session that is itself mid-merge keeps its state; its
                // own merge will fail on the changed base and can be redone.
                if s.pending.is_none() {
                    s.publish(&merged, &dirty);
                }
            }
        }
    }
}

/// Runs the merge with the answers so far. Suspends at the first unanswered
/// conflict, otherwise publishes the result to `session`.
fn drive(id: &str, session: &mut Session, mut pending: PendingMerge) -> ApiResult<(Response, Broadcast)> {
    let answers = pending.answers.clone();
    let outcome = merge_interactive(&session.base, &pending.a, &pending.b, &mut |c: &Conflict| {
        answers.get(&c.conflict_id).cloned()
    })?;
    if let Some(conflict) = outcome.pending().cloned() {
        pending.waiting_on = conflict.conflict_id.clone();
        session.pending = Some(pending);
        let body = json!({
            "conflictId": conflict.conflict_id,
            "conflict": conflict,
            "resolved": outcome.conflicts.iter().filter(|c| c.resolution.is_some()).count(),
        });
        return Ok(((StatusCode::CONFLICT, Json(body)).into_response(), Broadcast::default()));
    }
    let merged = recompute(&outcome.document, &outcome.dirty).expect("dirty ids are computed nodes");
    merged.validate().map_err(|e| ApiError::BadDocument(e.to_string()))?;
    let published = session.publish(&merged, &outcome.dirty);
    let computed: BTreeMap<NodeId, Value> = evaluate_all(&merged);
    let body = json!({
        "version": published.version,
        "document": document_json(&merged),
        "render": merged.render(),
        "conflicts": outcome.conflicts,
        "dirty": published.dirty,
        "values": published.values,
        "computed": computed,
        "publishedTo": pending.publish_to,
    });
    let to = pending.publish_to.into_iter().filter(|o| o != id).collect();
    Ok(((StatusCode::OK, Json(body)).into_response(), Broadcast { merged: Some((merged, outcome.dirty)), to }))
}

#[derive(Debug, Deserialize)]
struct Since {
    since: String,
}

async fn get_dirty(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<Since>,
) -> ApiResult<Json<JsonValue>> {
    let session = state.session(&id)?;
    let session = lock(&session);
    let version: VersionHash = q.since.parse().map_err(|_| ApiError::UnknownVersion(q.since.clone()))?;
    let dirty: BTreeSet<NodeId> = session.dirty_since(&version).ok_or(ApiError::UnknownVersion(q.since))?;
    Ok(Json(json!({ "since": version, "version": session.version(), "dirty": dirty })))
}
