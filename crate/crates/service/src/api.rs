//! HTTP JSON API over a corpus store, a concept index and an optional model.
//!
//! The payload types below are the wire format; `schema/api.json` describes
//! the same shapes for clients.

use std::collections::{BTreeSet, HashMap};
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::{Path, Query, Request, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post};
use axum::{Json, Router};
use log::{info, warn};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use clinotate::corpus::{annotate_all_occurrences, documents_by_patient, AnnotationError};
use clinotate::index::{build_index, Citation, ConceptFrequency, ConceptIndex, IndexSource, QueryMode, TextsResult};
use clinotate::model::{load_model, Model, ModelError};
use clinotate::ontology::{CatalogModifier, OntologyError};
use clinotate::text::char_slice;
use clinotate::{Document, Mention, Ontology, Span};

use crate::store::{Store, StoreError, UpdateError};

// ---------------------------------------------------------------------------
// Wire types
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErrorBody {
    pub error: String,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CatalogPayload {
    pub version: String,
    pub modifiers: Vec<CatalogModifier>,
    /// Level-1 classes. A node with several parents appears under each.
    pub roots: Vec<CatalogTree>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CatalogTree {
    pub id: String,
    pub label: String,
    pub level: u8,
    pub parent_ids: Vec<String>,
    pub modifier_ids: Vec<String>,
    pub children: Vec<CatalogTree>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatientsPayload {
    pub patients: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DocumentPayload {
    pub document: Document,
    /// Canonical annotator's mentions by span start, longest first.
    pub mentions: Vec<Mention>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MentionInput {
    pub span: Span,
    pub node_id: String,
    #[serde(default)]
    pub modifier_ids: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BulkInput {
    pub surface: String,
    pub node_id: String,
    #[serde(default)]
    pub modifier_ids: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SkippedOccurrence {
    pub span: Span,
    pub error: String,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BulkPayload {
    pub added: Vec<Mention>,
    pub skipped: Vec<SkippedOccurrence>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictInput {
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictedMention {
    pub span: Span,
    pub node_id: String,
    pub modifier_ids: BTreeSet<String>,
    pub surface: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictPayload {
    pub mentions: Vec<PredictedMention>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReindexPayload {
    pub source: IndexSource,
    pub documents: usize,
    pub postings: usize,
    pub citations: usize,
}

pub fn catalog_payload(ontology: &Ontology) -> CatalogPayload {
    fn subtree(o: &Ontology, id: &str) -> CatalogTree {
        let n = &o.nodes[id];
        CatalogTree {
            id: n.id.clone(),
            label: n.label.clone(),
            level: n.level,
            parent_ids: n.parent_ids.clone(),
            modifier_ids: n.modifier_ids.iter().cloned().collect(),
            children: o.children(id).map(|c| subtree(o, &c.id)).collect(),
        }
    }
    CatalogPayload {
        version: ontology.version.clone(),
        modifiers: ontology.to_catalog().modifiers,
        roots: ontology.roots().map(|r| subtree(ontology, &r.id)).collect(),
    }
}

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub detail: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, detail: impl Into<String>) -> ApiError {
        ApiError {
            status,
            code,
            detail: detail.into(),
        }
    }

    fn bad_request(detail: impl Into<String>) -> ApiError {
        ApiError::new(StatusCode::BAD_REQUEST, "BadRequest", detail)
    }

    fn not_found(detail: impl Into<String>) -> ApiError {
        ApiError::new(StatusCode::NOT_FOUND, "NotFound", detail)
    }

    fn store(e: StoreError) -> ApiError {
        warn!("{e}");
        ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "StoreWriteFailed", e.to_string())
    }
}

impl From<AnnotationError> for ApiError {
    fn from(e: AnnotationError) -> ApiError {
        ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, e.code(), e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            error: self.code.to_string(),
            detail: self.detail,
        };
        (self.status, Json(body)).into_response()
    }
}

fn parse_body<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "MalformedBody", e.to_string()))
}

// ---------------------------------------------------------------------------
// State
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub listen: SocketAddr,
    pub corpus: PathBuf,
    /// Seed catalog when absent.
    pub catalog: Option<PathBuf>,
    pub model: Option<PathBuf>,
    /// Annotator whose set the editing endpoints read and write.
    pub annotator: String,
    /// Annotation set the concept index is built from.
    pub index_source: IndexSource,
    pub token: Option<String>,
}

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("catalog: {0}")]
    Catalog(#[from] OntologyError),
    #[error("catalog `{0}`: {1}")]
    CatalogIo(PathBuf, std::io::Error),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("model: {0}")]
    Model(#[from] ModelError),
    #[error("index: {0}")]
    Index(#[from] clinotate::index::IndexError),
    #[error("server: {0}")]
    Io(#[from] std::io::Error),
}

pub struct AppState {
    ontology: Ontology,
    catalog: CatalogPayload,
    store: RwLock<Store>,
    index: RwLock<Arc<ConceptIndex>>,
    index_stale: AtomicBool,
    model: Option<Model>,
    annotator: String,
    index_source: IndexSource,
    token: Option<String>,
}

impl AppState {
    pub fn new(
        ontology: Ontology,
        store: Store,
        model: Option<Model>,
        annotator: impl Into<String>,
        index_source: IndexSource,
        token: Option<String>,
    ) -> Result<AppState, ServiceError> {
        if let Some(m) = &model {
            m.check_ontology(&ontology)?;
        }
        let index = build_index(store.documents(), &index_source)?;
        Ok(AppState {
            catalog: catalog_payload(&ontology),
            ontology,
            store: RwLock::new(store),
            index: RwLock::new(Arc::new(index)),
            index_stale: AtomicBool::new(false),
            model,
            annotator: annotator.into(),
            index_source,
            token,
        })
    }

    pub fn from_config(config: &ServiceConfig) -> Result<AppState, ServiceError> {
        let ontology = match &config.catalog {
            Some(p) => {
                let bytes = std::fs::read(p).map_err(|e| ServiceError::CatalogIo(p.clone(), e))?;
                Ontology::load_catalog(&bytes)?
            }
            None => Ontology::seed(),
        };
        let store = Store::open(&config.corpus, &ontology)?;
        let model = match &config.model {
            Some(p) => {
                let f = std::fs::File::open(p).map_err(ModelError::Io)?;
                Some(load_model(std::io::BufReader::new(f), &ontology.version, false)?)
            }
            None => None,
        };
        AppState::new(
            ontology,
            store,
            model,
            config.annotator.clone(),
            config.index_source.clone(),
            config.token.clone(),
        )
    }

    pub fn ontology(&self) -> &Ontology {
        &self.ontology
    }

    pub fn index_is_stale(&self) -> bool {
        self.index_stale.load(Ordering::SeqCst)
    }

    fn index(&self) -> Arc<ConceptIndex> {
        self.index.read().expect("index lock").clone()
    }

    /// Rebuilds the index from the store and swaps it in.
    pub fn reindex(&self) -> Result<ReindexPayload, ServiceError> {
        let fresh = {
            let store = self.store.read().expect("store lock");
            // cleared before building so a write landing during the build
            // marks the new index stale again
            self.index_stale.store(false, Ordering::SeqCst);
            build_index(store.documents(), &self.index_source)?
        };
        let payload = ReindexPayload {
            source: fresh.source.clone(),
            documents: fresh.docs.len(),
            postings: fresh.postings.len(),
            citations: fresh.postings.values().map(Vec::len).sum(),
        };
        *self.index.write().expect("index lock") = Arc::new(fresh);
        Ok(payload)
    }
}

// ---------------------------------------------------------------------------
// Routing
// ---------------------------------------------------------------------------

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/catalog", get(get_catalog))
        .route("/patients", get(get_patients))
        .route("/patients/{id}/concepts", get(get_concepts))
        .route("/patients/{id}/timeline", get(get_timeline))
        .route("/patients/{id}/texts", get(get_texts))
        .route("/documents/{id}", get(get_document))
        .route("/documents/{id}/annotations", post(post_annotation))
        .route("/documents/{id}/annotations/bulk", post(post_bulk))
        .route("/documents/{id}/annotations/{mention_id}", delete(delete_annotation))
        .route("/predict", post(post_predict))
        .route("/admin/reindex", post(post_reindex))
        .fallback(|| async { ApiError::not_found("no such endpoint") })
        .layer(middleware::from_fn_with_state(state.clone(), require_token))
        .with_state(state)
}

pub async fn serve(config: ServiceConfig) -> Result<(), ServiceError> {
    let state = Arc::new(AppState::from_config(&config)?);
    let listener = tokio::net::TcpListener::bind(config.listen).await?;
    info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}

async fn require_token(State(state): State<Arc<AppState>>, req: Request, next: Next) -> Response {
    if let Some(token) = &state.token {
        let ok = req
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .is_some_and(|t| t == token);
        if !ok {
            return ApiError::new(StatusCode::UNAUTHORIZED, "Unauthorized", "missing or wrong bearer token")
                .into_response();
        }
    }
    next.run(req).await
}

fn stale_header(state: &AppState, mut resp: Response) -> Response {
    if state.index_is_stale() {
        resp.headers_mut().insert("x-index-stale", HeaderValue::from_static("true"));
    }
    resp
}

// ---------------------------------------------------------------------------
// Handlers
// ---------------------------------------------------------------------------

async fn get_catalog(State(state): State<Arc<AppState>>, headers: HeaderMap) -> Response {
    let etag = format!("\"{}\"", state.catalog.version);
    let matches = headers
        .get(header::IF_NONE_MATCH)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.split(',').map(str::trim).any(|t| t == etag || t == "*"));
    let mut resp = if matches {
        StatusCode::NOT_MODIFIED.into_response()
    } else {
        Json(&state.catalog).into_response()
    };
    resp.headers_mut()
        .insert(header::ETAG, HeaderValue::from_str(&etag).expect("catalog version is a header-safe string"));
    resp
}

async fn get_patients(State(state): State<Arc<AppState>>) -> Json<PatientsPayload> {
    let store = state.store.read().expect("store lock");
    let patients = documents_by_patient(store.documents()).into_keys().map(String::from).collect();
    Json(PatientsPayload { patients })
}

async fn get_concepts(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Response {
    let body: Vec<ConceptFrequency> = state.index().concept_frequencies(&id);
    stale_header(&state, Json(body).into_response())
}

fn flag(params: &HashMap<String, String>, name: &str) -> Result<bool, ApiError> {
    match params.get(name).map(String::as_str) {
        None | Some("false") | Some("0") => Ok(false),
        Some("true") | Some("1") | Some("") => Ok(true),
        Some(v) => Err(ApiError::bad_request(format!("`{name}` must be true or false, got `{v}`"))),
    }
}

async fn get_timeline(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(params): Query<HashMap<String, String>>,
) -> Result<Response, ApiError> {
    let node = params
        .get("node")
        .filter(|n| !n.is_empty())
        .ok_or_else(|| ApiError::bad_request("query parameter `node` is required"))?;
    let index = state.index();
    let body: Vec<Citation> = if flag(&params, "widen")? {
        index.timeline_widened(&id, node, &state.ontology)
    } else {
        index.timeline(&id, node)
    };
    Ok(stale_header(&state, Json(body).into_response()))
}

async fn get_texts(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(params): Query<HashMap<String, String>>,
) -> Result<Response, ApiError> {
    let nodes: BTreeSet<String> = params
        .get("nodes")
        .map(|s| s.split(',').map(str::trim).filter(|n| !n.is_empty()).map(String::from).collect())
        .unwrap_or_default();
    if nodes.is_empty() {
        return Err(ApiError::bad_request("query parameter `nodes` names no concept"));
    }
    let mode: QueryMode = params
        .get("mode")
        .map(|m| m.parse())
        .transpose()
        .map_err(ApiError::bad_request)?
        .unwrap_or(QueryMode::Any);
    let widen = flag(&params, "widen")?.then_some(&state.ontology);
    let body: TextsResult = state
        .index()
        .texts_with_concepts(&id, &nodes, mode, widen)
        .map_err(|e| ApiError::bad_request(e.to_string()))?;
    Ok(stale_header(&state, Json(body).into_response()))
}

async fn get_document(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<DocumentPayload>, ApiError> {
    let store = state.store.read().expect("store lock");
    let ad = store
        .document(&id)
        .ok_or_else(|| ApiError::not_found(format!("no document `{id}`")))?;
    let mentions = ad
        .annotator(&state.annotator)
        .map(|s| s.sorted_mentions().into_iter().cloned().collect())
        .unwrap_or_default();
    Ok(Json(DocumentPayload {
        document: ad.doc.clone(),
        mentions,
    }))
}

fn update_document<T>(
    state: &AppState,
    id: &str,
    f: impl FnOnce(&mut clinotate::AnnotatedDocument) -> Result<T, ApiError>,
) -> Result<T, ApiError> {
    let mut store = state.store.write().expect("store lock");
    match store.update(id, f) {
        Ok(Some(v)) => Ok(v),
        Ok(None) => Err(ApiError::not_found(format!("no document `{id}`"))),
        Err(UpdateError::Rejected(e)) => Err(e),
        Err(UpdateError::Store(e)) => Err(ApiError::store(e)),
    }
}

async fn post_annotation(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<(StatusCode, Json<Mention>), ApiError> {
    let input: MentionInput = parse_body(&body)?;
    let mut mention = Mention::new(input.span, input.node_id);
    mention.modifier_ids = input.modifier_ids;
    let stored = update_document(&state, &id, |ad| {
        let doc = ad.doc.clone();
        Ok(ad.annotator_mut(&state.annotator).add_mention(mention, &state.ontology, &doc)?.clone())
    })?;
    state.index_stale.store(true, Ordering::SeqCst);
    Ok((StatusCode::CREATED, Json(stored)))
}

async fn post_bulk(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<(StatusCode, Json<BulkPayload>), ApiError> {
    let input: BulkInput = parse_body(&body)?;
    if input.surface.trim().is_empty() {
        return Err(ApiError::bad_request("`surface` is empty"));
    }
    let outcome = update_document(&state, &id, |ad| {
        let doc = ad.doc.clone();
        let set = ad.annotator_mut(&state.annotator);
        Ok(annotate_all_occurrences(
            set,
            &doc,
            &input.surface,
            &input.node_id,
            &input.modifier_ids,
            &state.ontology,
        ))
    })?;
    let status = if outcome.added.is_empty() {
        StatusCode::OK
    } else {
        state.index_stale.store(true, Ordering::SeqCst);
        StatusCode::CREATED
    };
    let skipped = outcome
        .skipped
        .into_iter()
        .map(|(span, e)| SkippedOccurrence {
            span,
            error: e.code().to_string(),
            detail: e.to_string(),
        })
        .collect();
    Ok((
        status,
        Json(BulkPayload {
            added: outcome.added,
            skipped,
        }),
    ))
}

async fn delete_annotation(
    State(state): State<Arc<AppState>>,
    Path((id, mention_id)): Path<(String, String)>,
) -> Result<StatusCode, ApiError> {
    update_document(&state, &id, |ad| {
        let set = ad.annotator_mut(&state.annotator);
        set.remove_mention(&mention_id)
            .map(|_| ())
            .ok_or_else(|| ApiError::not_found(format!("no mention `{mention_id}` in `{id}`")))
    })?;
    state.index_stale.store(true, Ordering::SeqCst);
    Ok(StatusCode::NO_CONTENT)
}

async fn post_predict(State(state): State<Arc<AppState>>, body: Bytes) -> Result<Json<PredictPayload>, ApiError> {
    let Some(model) = &state.model else {
        return Err(ApiError::new(
            StatusCode::SERVICE_UNAVAILABLE,
            "ModelUnavailable",
            "no model is loaded",
        ));
    };
    let input: PredictInput = parse_body(&body)?;
    let mentions = model
        .predict_text(&input.text, &state.ontology)
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "PredictionFailed", e.to_string()))?
        .into_iter()
        .map(|m| PredictedMention {
            surface: char_slice(&input.text, m.span),
            span: m.span,
            node_id: m.node_id,
            modifier_ids: m.modifier_ids,
        })
        .collect();
    Ok(Json(PredictPayload { mentions }))
}

async fn post_reindex(State(state): State<Arc<AppState>>) -> Result<Json<ReindexPayload>, ApiError> {
    state
        .reindex()
        .map(Json)
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "ReindexFailed", e.to_string()))
}

