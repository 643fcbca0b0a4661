//! HTTP service: document upload, asynchronous pipeline runs on a bounded
//! worker pool, and artifact retrieval.

pub mod store;

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use axum::extract::rejection::JsonRejection;
use axum::extract::{DefaultBodyLimit, Path, State};
use axum::http::{header, HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::Utc;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;
use tokio::sync::mpsc;
use tower_http::cors::{AllowOrigin, CorsLayer};

use chartext_core::config::{BackendKind, Config};
use chartext_core::llm::{
    backend_from_config, run_pipeline, CompletionBackend, PipelineError, PipelineOptions, PipelineOutput, PipelineTrace,
    StageError,
};
use store::{
    Artifacts, RunFailure, RunOptions, RunOutputs, RunRecord, RunStatus, Span, StatementRef, Store, StoreError, TableRef,
};

/// Runs waiting for a worker beyond this are refused with 503.
const QUEUE_CAPACITY: usize = 1024;

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError {
            status,
            message: message.into(),
        }
    }

    fn not_found(what: &str) -> Self {
        ApiError::new(StatusCode::NOT_FOUND, format!("{what} not found"))
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        tracing::error!("store: {e}");
        ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "storage error")
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        ApiError::new(e.status(), e.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

/// State shared by handlers and workers.
struct Shared {
    store: Store,
    config: Config,
    backends: Mutex<HashMap<BackendKind, Arc<dyn CompletionBackend>>>,
}

impl Shared {
    /// The backend of `kind`, built from configuration on first use.
    fn backend(&self, kind: BackendKind) -> Result<Arc<dyn CompletionBackend>, String> {
        let mut cache = self.backends.lock().expect("backend cache is never poisoned");
        if let Some(b) = cache.get(&kind) {
            return Ok(b.clone());
        }
        let mut config = self.config.backend.clone();
        config.kind = kind;
        let backend = backend_from_config(&config).map_err(|e| e.to_string())?;
        cache.insert(kind, backend.clone());
        Ok(backend)
    }
}

#[derive(Clone)]
struct AppState {
    shared: Arc<Shared>,
    jobs: mpsc::Sender<String>,
}

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error(transparent)]
    Store(#[from] StoreError),
}

/// Opens the store under `config.service.data_dir`, starts the workers and
/// returns the router. Runs left pending or running by a previous process
/// are queued again. Must be called inside a Tokio runtime.
pub fn start(config: Config) -> Result<Router, ServiceError> {
    let store = Store::open(&config.service.data_dir)?;
    let interrupted: Vec<String> = store
        .runs()?
        .into_iter()
        .filter(|r| matches!(r.status, RunStatus::Pending | RunStatus::Running))
        .map(|r| r.id)
        .collect();
    let workers = config.service.workers.max(1);
    let shared = Arc::new(Shared {
        store,
        config,
        backends: Mutex::new(HashMap::new()),
    });
    let (tx, rx) = mpsc::channel::<String>(QUEUE_CAPACITY.max(interrupted.len()));
    for id in interrupted {
        tx.try_send(id).expect("queue sized for recovered runs");
    }
    let rx = Arc::new(tokio::sync::Mutex::new(rx));
    for _ in 0..workers {
        let (shared, rx) = (shared.clone(), rx.clone());
        tokio::spawn(async move {
            loop {
                let next = rx.lock().await.recv().await;
                let Some(id) = next else { break };
                execute(&shared, &id).await;
            }
        });
    }
    Ok(router(AppState { shared, jobs: tx }))
}

fn router(state: AppState) -> Router {
    let service = &state.shared.config.service;
    let origin = if service.cors_origin.trim() == "*" {
        AllowOrigin::any()
    } else {
        let origins: Vec<HeaderValue> = service
            .cors_origin
            .split(',')
            .filter_map(|o| HeaderValue::from_str(o.trim()).ok())
            .collect();
        AllowOrigin::list(origins)
    };
    let cors = CorsLayer::new()
        .allow_origin(origin)
        .allow_methods([Method::GET, Method::POST])
        .allow_headers([header::CONTENT_TYPE]);
    // JSON escaping can double a body; the handler enforces the real limit.
    let body_limit = service.max_document_bytes.saturating_mul(2).saturating_add(64 * 1024);
    Router::new()
        .route("/documents", post(create_document))
        .route("/documents/{id}/runs", post(create_run))
        .route("/runs/{id}", get(get_run))
        .route("/runs/{id}/charts/{file}", get(get_chart))
        .route("/runs/{id}/tables/{file}", get(get_table))
        .layer(DefaultBodyLimit::max(body_limit))
        .layer(cors)
        .with_state(state)
}

#[derive(Debug, Deserialize)]
struct NewDocument {
    #[serde(alias = "body")]
    text: String,
    #[serde(default)]
    title: String,
}

#[derive(Debug, Serialize)]
struct Created {
    id: String,
}

async fn create_document(
    State(state): State<AppState>,
    body: Result<Json<NewDocument>, JsonRejection>,
) -> Result<(StatusCode, Json<Created>), ApiError> {
    let Json(doc) = body?;
    if doc.text.trim().is_empty() {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, "document text is empty"));
    }
    let max = state.shared.config.service.max_document_bytes;
    if doc.text.len() > max {
        return Err(ApiError::new(
            StatusCode::PAYLOAD_TOO_LARGE,
            format!("document is {} bytes, limit is {max}", doc.text.len()),
        ));
    }
    let (record, created) = state.shared.store.put_document(&doc.title, &doc.text)?;
    let status = if created { StatusCode::CREATED } else { StatusCode::OK };
    Ok((status, Json(Created { id: record.id })))
}

#[derive(Debug, Deserialize)]
struct NewRun {
    statement_span: Option<Span>,
    statement_text: Option<String>,
    #[serde(default)]
    options: RunOptions,
}

#[derive(Debug, Serialize)]
struct Enqueued {
    run_id: String,
}

async fn create_run(
    State(state): State<AppState>,
    Path(document_id): Path<String>,
    body: Result<Json<NewRun>, JsonRejection>,
) -> Result<(StatusCode, Json<Enqueued>), ApiError> {
    let shared = &state.shared;
    let document = shared.store.document(&document_id)?.ok_or_else(|| ApiError::not_found("document"))?;
    let Json(request) = body?;
    let unprocessable = |m: String| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, m);
    let statement = match (request.statement_span, request.statement_text) {
        (Some(span), None) => {
            if slice(&document.body, span).is_none() {
                return Err(unprocessable(format!(
                    "span {}:{} is outside the document ({} bytes) or splits a character",
                    span.offset,
                    span.length,
                    document.body.len()
                )));
            }
            StatementRef::StatementSpan(span)
        }
        (None, Some(text)) if !text.trim().is_empty() => StatementRef::StatementText(text),
        (None, Some(_)) => return Err(unprocessable("statement text is empty".into())),
        _ => return Err(unprocessable("give exactly one of statement_span and statement_text".into())),
    };
    let kind = request.options.backend.unwrap_or(shared.config.backend.kind);
    shared.backend(kind).map_err(|e| unprocessable(format!("{kind:?} backend unavailable: {e}")))?;

    let now = Utc::now();
    let mut record = RunRecord {
        id: uuid::Uuid::new_v4().to_string(),
        document_id: document.id,
        statement,
        options: RunOptions {
            backend: Some(kind),
            ..request.options
        },
        status: RunStatus::Pending,
        created_at: now,
        updated_at: now,
        outputs: None,
        failure: None,
    };
    shared.store.put_run(&record)?;
    if state.jobs.try_send(record.id.clone()).is_err() {
        fail(&mut record, None, "run queue is full".into(), None);
        shared.store.put_run(&record)?;
        return Err(ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "run queue is full"));
    }
    Ok((StatusCode::ACCEPTED, Json(Enqueued { run_id: record.id })))
}

async fn get_run(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<RunRecord>, ApiError> {
    state.shared.store.run(&id)?.map(Json).ok_or_else(|| ApiError::not_found("run"))
}

async fn get_chart(State(state): State<AppState>, Path((id, file)): Path<(String, String)>) -> Result<Response, ApiError> {
    let k = artifact_index(&file, ".svg")?;
    finished(&state, &id)?;
    let bytes = state.shared.store.chart(&id, k)?.ok_or_else(|| ApiError::not_found("chart"))?;
    Ok(([(header::CONTENT_TYPE, "image/svg+xml")], bytes).into_response())
}

async fn get_table(State(state): State<AppState>, Path((id, file)): Path<(String, String)>) -> Result<Response, ApiError> {
    let k = artifact_index(&file, ".json")?;
    finished(&state, &id)?;
    let bytes = state.shared.store.table(&id, k)?.ok_or_else(|| ApiError::not_found("table"))?;
    Ok(([(header::CONTENT_TYPE, "application/json")], bytes).into_response())
}

fn artifact_index(file: &str, extension: &str) -> Result<usize, ApiError> {
    file.strip_suffix(extension)
        .and_then(|k| k.parse().ok())
        .ok_or_else(|| ApiError::not_found("artifact"))
}

/// Artifacts are served only once their run is done.
fn finished(state: &AppState, id: &str) -> Result<(), ApiError> {
    let run = state.shared.store.run(id)?.ok_or_else(|| ApiError::not_found("run"))?;
    match run.status {
        RunStatus::Done => Ok(()),
        other => Err(ApiError::new(
            StatusCode::CONFLICT,
            format!("run is {}", serde_json::to_value(other).unwrap().as_str().unwrap_or_default()),
        )),
    }
}

fn slice(body: &str, span: Span) -> Option<&str> {
    body.get(span.offset..span.offset.checked_add(span.length)?)
}

fn fail(record: &mut RunRecord, error: Option<StageError>, message: String, trace: Option<PipelineTrace>) {
    record.status = RunStatus::Failed;
    record.updated_at = Utc::now();
    record.failure = Some(RunFailure { error, message, trace });
}

/// Runs one queued run to completion. Artifacts are written before the
/// record is marked done.
async fn execute(shared: &Arc<Shared>, id: &str) {
    let mut record = match shared.store.run(id) {
        Ok(Some(r)) => r,
        Ok(None) => return,
        Err(e) => {
            tracing::error!("run {id}: {e}");
            return;
        }
    };
    record.status = RunStatus::Running;
    record.updated_at = Utc::now();
    if let Err(e) = shared.store.put_run(&record) {
        tracing::error!("run {id}: {e}");
        return;
    }
    let outcome = match prepare(shared, &record) {
        Ok((statement, context, backend, options)) => {
            let work = tokio::task::spawn_blocking(move || run_pipeline(&statement, &context, &*backend, &options));
            match work.await {
                Ok(result) => Ok(result),
                Err(e) => Err(format!("pipeline task failed: {e}")),
            }
        }
        Err(message) => Err(message),
    };
    let stored = match outcome {
        Ok(Ok(output)) => finish(shared, &mut record, &output),
        Ok(Err(PipelineError { error, trace })) => {
            let message = error.to_string();
            fail(&mut record, Some(error), message, Some(trace));
            shared.store.put_run(&record)
        }
        Err(message) => {
            fail(&mut record, None, message, None);
            shared.store.put_run(&record)
        }
    };
    if let Err(e) = stored {
        tracing::error!("run {id}: {e}");
        fail(&mut record, None, "storage error".into(), None);
        let _ = shared.store.put_run(&record);
    }
}

type Prepared = (String, String, Arc<dyn CompletionBackend>, PipelineOptions);

fn prepare(shared: &Shared, record: &RunRecord) -> Result<Prepared, String> {
    let document = shared
        .store
        .document(&record.document_id)
        .map_err(|e| e.to_string())?
        .ok_or("document is missing")?;
    let statement = match &record.statement {
        StatementRef::StatementText(text) => text.clone(),
        StatementRef::StatementSpan(span) => slice(&document.body, *span).ok_or("span is out of range")?.to_string(),
    };
    let kind = record.options.backend.unwrap_or(shared.config.backend.kind);
    let backend = shared.backend(kind)?;
    let mut config = shared.config.clone();
    config.backend.kind = kind;
    let options = PipelineOptions {
        granularity: record.options.granularity,
        config,
        ..PipelineOptions::default()
    };
    Ok((statement, document.body, backend, options))
}

fn finish(shared: &Shared, record: &mut RunRecord, output: &PipelineOutput) -> Result<(), StoreError> {
    let mut tables = Vec::new();
    let mut table_refs = Vec::new();
    let mut specs = Vec::new();
    let mut svgs = Vec::new();
    let mut svg_urls = Vec::new();
    for level in &output.outputs {
        for topic in &level.topics {
            let k = tables.len();
            tables.push(topic.table.to_json());
            table_refs.push(TableRef {
                k,
                granularity: level.granularity,
                topic_id: topic.topic.id.clone(),
                title: topic.topic.title.clone(),
                url: format!("/runs/{}/tables/{k}.json", record.id),
            });
            specs.push(topic.spec.clone());
            svg_urls.push(topic.svg.as_ref().map(|_| format!("/runs/{}/charts/{k}.svg", record.id)));
            svgs.push(topic.svg.clone());
        }
    }
    shared.store.put_artifacts(&record.id, &Artifacts { tables, svgs })?;
    record.status = RunStatus::Done;
    record.updated_at = Utc::now();
    record.outputs = Some(RunOutputs {
        tables: table_refs,
        chart_specs: specs,
        svgs: svg_urls,
        trace: output.trace.clone(),
    });
    shared.store.put_run(record)
}
