//! HTTP routes.

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Multipart, Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use carbon_tables::consolidator::{query_union, QueryError, RecordFilter};
use carbon_tables::ingest::{looks_like_zip, parse_upload, IngestError, IngestReport, Rejection};
use carbon_tables::ConsolidationOptions;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tower_http::trace::TraceLayer;
use uuid::Uuid;

use crate::jobs::{JobError, JobState};
use crate::store::StoreError;
use crate::AppState;

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
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
        (self.status, Json(json!({"error": self.code, "message": self.message}))).into_response()
    }
}

impl From<IngestError> for ApiError {
    fn from(err: IngestError) -> Self {
        let code = match err {
            IngestError::MalformedJson { .. } => "MalformedJson",
            IngestError::SchemaViolation { .. } => "SchemaViolation",
            IngestError::NotAnArchive(_) => "NotAnArchive",
            IngestError::EmptyArchive => "EmptyArchive",
            IngestError::UnsupportedFormat(_) => "UnsupportedFormat",
            IngestError::DuplicateDocId(_) => "DuplicateDocId",
            IngestError::UnreadableMember(_) => "UnreadableMember",
        };
        ApiError::new(StatusCode::BAD_REQUEST, code, err.to_string())
    }
}

impl From<JobError> for ApiError {
    fn from(err: JobError) -> Self {
        match err {
            JobError::UnknownJob(_) => ApiError::new(StatusCode::NOT_FOUND, "NotFound", err.to_string()),
            JobError::NotFinished(..) => ApiError::new(StatusCode::CONFLICT, "NotFinished", err.to_string()),
            other => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "Internal", other.to_string()),
        }
    }
}

impl From<QueryError> for ApiError {
    fn from(err: QueryError) -> Self {
        let code = match err {
            QueryError::UnknownFilterField(_) => "UnknownFilterField",
            QueryError::InvalidFilterValue { .. } => "InvalidFilterValue",
        };
        ApiError::new(StatusCode::BAD_REQUEST, code, err.to_string())
    }
}

pub fn router(state: AppState) -> Router {
    let limit = state.config.max_upload_bytes;
    Router::new()
        .route("/health", get(|| async { "ok" }))
        .route("/documents", post(upload).get(list_documents))
        .route("/jobs", post(submit).get(list_jobs))
        .route("/jobs/{id}", get(job_status))
        .route("/jobs/{id}/result", get(job_result))
        .route("/jobs/{id}/features", get(job_features))
        .route("/knowledge", get(knowledge))
        .route("/admin/reload", post(reload))
        .layer(DefaultBodyLimit::max(limit))
        .layer(TraceLayer::new_for_http())
        .with_state(state)
}

#[derive(Debug, Deserialize)]
struct UploadParams {
    #[serde(default)]
    overwrite: bool,
}

async fn upload(
    State(state): State<AppState>,
    Query(params): Query<UploadParams>,
    mut multipart: Multipart,
) -> Result<Response, ApiError> {
    let multipart_error = |e: axum::extract::multipart::MultipartError| {
        let status = e.status();
        let code = if status == StatusCode::PAYLOAD_TOO_LARGE {
            "PayloadTooLarge"
        } else {
            "MalformedBody"
        };
        ApiError::new(status, code, e.body_text())
    };
    let mut upload = None;
    while let Some(field) = multipart.next_field().await.map_err(multipart_error)? {
        let Some(filename) = field.file_name().map(str::to_string) else {
            continue;
        };
        let bytes = field.bytes().await.map_err(multipart_error)?;
        upload = Some((filename, bytes));
        break;
    }
    let (filename, bytes) =
        upload.ok_or_else(|| ApiError::new(StatusCode::BAD_REQUEST, "MalformedBody", "no file part in upload"))?;

    let archive = looks_like_zip(&bytes) || filename.to_lowercase().ends_with(".zip");
    let (documents, parse_report) = tokio::task::spawn_blocking({
        let filename = filename.clone();
        move || parse_upload(&bytes, &filename)
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "Internal", e.to_string()))??;

    let single = !archive;
    let mut report = IngestReport {
        accepted: Vec::new(),
        rejected: parse_report.rejected,
        empty_documents: parse_report.empty_documents,
    };
    for doc in documents {
        let doc_id = doc.doc_id.clone();
        let member = if doc.source_filename.is_empty() {
            doc_id.clone()
        } else {
            doc.source_filename.clone()
        };
        match state.store.insert(doc, params.overwrite) {
            Ok(()) => report.accepted.push(doc_id),
            Err(StoreError::Duplicate(id)) if single => {
                return Err(ApiError::new(
                    StatusCode::CONFLICT,
                    "DuplicateDocId",
                    format!("document {id:?} already exists; pass overwrite=true to replace it"),
                ));
            }
            Err(err) => {
                report.empty_documents.retain(|d| d != &doc_id);
                report.rejected.push(Rejection {
                    filename: member,
                    reason: err.to_string(),
                });
            }
        }
    }
    tracing::info!(
        filename = %filename,
        accepted = report.accepted.len(),
        rejected = report.rejected.len(),
        "upload processed"
    );
    let status = if report.rejected.is_empty() {
        StatusCode::OK
    } else {
        StatusCode::MULTI_STATUS
    };
    Ok((status, Json(report)).into_response())
}

async fn list_documents(State(state): State<AppState>) -> Json<Vec<String>> {
    Json(state.store.ids())
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum DocumentSelection {
    All(String),
    Ids(Vec<String>),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SubmitRequest {
    document_ids: DocumentSelection,
    #[serde(default)]
    options: ConsolidationOptions,
}

#[derive(Debug, Serialize)]
struct SubmitResponse {
    job_id: Uuid,
    state: JobState,
}

async fn submit(State(state): State<AppState>, body: Bytes) -> Result<Response, ApiError> {
    let value: serde_json::Value = serde_json::from_slice(&body)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "MalformedBody", e.to_string()))?;
    let request: SubmitRequest = serde_json::from_value(value)
        .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "InvalidRequest", e.to_string()))?;
    let ids = match request.document_ids {
        DocumentSelection::All(word) if word == "all" => state.store.ids(),
        DocumentSelection::All(word) => {
            return Err(ApiError::new(
                StatusCode::UNPROCESSABLE_ENTITY,
                "InvalidRequest",
                format!("document_ids must be a list or \"all\", got {word:?}"),
            ))
        }
        DocumentSelection::Ids(ids) => ids,
    };
    if ids.is_empty() {
        return Err(ApiError::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            "InvalidRequest",
            "no documents selected",
        ));
    }
    if let Some(missing) = ids.iter().find(|id| !state.store.contains(id)) {
        return Err(ApiError::new(
            StatusCode::NOT_FOUND,
            "UnknownDocument",
            format!("unknown document {missing:?}"),
        ));
    }
    let job = state.jobs.create(ids, request.options)?;
    let mb = state.mb.read().unwrap().clone();
    state.jobs.enqueue(job.job_id, mb);
    tracing::info!(job_id = %job.job_id, documents = job.document_ids.len(), "job submitted");
    Ok((
        StatusCode::ACCEPTED,
        Json(SubmitResponse {
            job_id: job.job_id,
            state: job.state,
        }),
    )
        .into_response())
}

fn job_id(raw: &str) -> Result<Uuid, ApiError> {
    raw.parse()
        .map_err(|_| ApiError::new(StatusCode::NOT_FOUND, "NotFound", format!("unknown job {raw}")))
}

async fn list_jobs(State(state): State<AppState>) -> Response {
    Json(state.jobs.list()).into_response()
}

async fn job_status(State(state): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let id = job_id(&id)?;
    let job = state.jobs.get(id).ok_or(JobError::UnknownJob(id))?;
    Ok(Json(job).into_response())
}

async fn job_result(State(state): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let bytes = state.jobs.artifact(job_id(&id)?, "graph.json")?;
    Ok(([(header::CONTENT_TYPE, "application/json")], bytes).into_response())
}

#[derive(Debug, Deserialize)]
struct FeatureParams {
    #[serde(default)]
    format: Option<String>,
}

async fn job_features(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(params): Query<FeatureParams>,
) -> Result<Response, ApiError> {
    let id = job_id(&id)?;
    let (name, content_type) = match params.format.as_deref().unwrap_or("csv") {
        "csv" => ("features.csv", "text/csv"),
        "json" => ("features.json", "application/json"),
        other => {
            return Err(ApiError::new(
                StatusCode::BAD_REQUEST,
                "InvalidFormat",
                format!("format must be csv or json, got {other:?}"),
            ))
        }
    };
    let bytes = state.jobs.artifact(id, name)?;
    Ok(([(header::CONTENT_TYPE, content_type)], bytes).into_response())
}

const DEFAULT_PAGE: usize = 1000;

/// Response header carrying the unpaginated match count of `/knowledge`.
pub const TOTAL_COUNT: &str = "x-total-count";

async fn knowledge(
    State(state): State<AppState>,
    Query(pairs): Query<Vec<(String, String)>>,
) -> Result<Response, ApiError> {
    let mut offset = 0;
    let mut limit = DEFAULT_PAGE;
    let mut filters = Vec::new();
    for (key, value) in pairs {
        let page_value = |v: &str| {
            v.parse::<usize>()
                .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "InvalidFilterValue", format!("{key}: {e}")))
        };
        match key.as_str() {
            "offset" => offset = page_value(&value)?,
            "limit" => limit = page_value(&value)?,
            _ if value.is_empty() && RecordFilter::FIELDS.contains(&key.as_str()) => {}
            _ => filters.push((key, value)),
        }
    }
    let filter = RecordFilter::from_pairs(filters)?;
    let graphs = state.jobs.succeeded_graphs();
    let records = query_union(graphs.iter().map(|g| g.as_ref()), &filter);
    let total = records.len();
    let page: Vec<_> = records.into_iter().skip(offset).take(limit).collect();
    Ok(([(TOTAL_COUNT, total.to_string())], Json(page)).into_response())
}

async fn reload(State(state): State<AppState>) -> Result<Response, ApiError> {
    let fresh = state
        .load_material_base()
        .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "InvalidMaterialBase", e.to_string()))?;
    let summary = json!({
        "materials": fresh.materials().len(),
        "fom_fields": fresh.catalog().definitions().len(),
        "reference_entries": fresh.reference().entry_count(),
    });
    *state.mb.write().unwrap() = Arc::new(fresh);
    tracing::info!("material base reloaded");
    Ok(Json(summary).into_response())
}
