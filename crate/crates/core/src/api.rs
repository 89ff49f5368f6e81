//! JSON-over-HTTP interface to the store, the evaluator and the federation
//! views. Every error response has the [`ApiError`] shape.

use std::collections::HashMap;
use std::future::Future;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::rejection::{BytesRejection, PathRejection};
use axum::extract::{Path, RawQuery, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dsl::serialize_catalog;
use crate::engine::{evaluate, kpi_status_series, resolve, EvalError, EvaluationRequest, StatusPoint};
use crate::federation::{self, MetricRef, TradeoffError, TradeoffQuery, TRADEOFF_THRESHOLD};
use crate::model::{Catalog, CollectionFrequency, Duration};
use crate::store::{
    IngestError, ObservationCandidate, Period, QueryError, RawValue, ReportSubmission, Store, StoreError,
};
use crate::time::{parse_timestamp, serde_ts, Timestamp};

/// Every error code the API can return.
pub const ERROR_CODES: &[&str] = &[
    "not_found",
    "method_not_allowed",
    "invalid_path",
    "invalid_query",
    "invalid_body",
    "payload_too_large",
    "unknown_lab",
    "unknown_measure",
    "unknown_kpi",
    "unknown_metric",
    "unknown_report_template",
    "lab_out_of_scope",
    "category_not_plottable",
    "invalid_range",
    "too_many_points",
    "too_few_metrics",
    "malformed_header",
    "empty_submission",
    "store_unavailable",
    "internal_error",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    pub http_status: u16,
    pub code: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub details: Option<serde_json::Value>,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        debug_assert!(ERROR_CODES.contains(&code), "undocumented error code {code}");
        ApiError { http_status: status.as_u16(), code: code.to_string(), message: message.into(), details: None }
    }

    fn with_details(mut self, details: serde_json::Value) -> Self {
        self.details = Some(details);
        self
    }

    fn query(message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, "invalid_query", message)
    }

    fn body(message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, "invalid_body", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.http_status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self)).into_response()
    }
}

impl From<EvalError> for ApiError {
    fn from(e: EvalError) -> Self {
        let status = match e {
            EvalError::UnknownKpi(_) | EvalError::UnknownLab(_) | EvalError::UnknownMetric { .. } => StatusCode::NOT_FOUND,
            EvalError::LabOutOfScope { .. } => StatusCode::UNPROCESSABLE_ENTITY,
            EvalError::InvalidRange | EvalError::TooManyPoints | EvalError::TimeOutOfRange => StatusCode::BAD_REQUEST,
        };
        let error = ApiError::new(status, e.code(), e.to_string());
        match e {
            EvalError::LabOutOfScope { kpi, lab, measure } => {
                error.with_details(serde_json::json!({ "kpi_id": kpi, "lab_id": lab, "measure_id": measure }))
            }
            _ => error,
        }
    }
}

impl From<QueryError> for ApiError {
    fn from(e: QueryError) -> Self {
        let status = match e {
            QueryError::UnknownLab(_) | QueryError::UnknownMeasure(_) => StatusCode::NOT_FOUND,
            QueryError::CategoryNotPlottable(_) => StatusCode::UNPROCESSABLE_ENTITY,
            QueryError::InvalidRange | QueryError::TooManyBuckets(_) => StatusCode::BAD_REQUEST,
        };
        ApiError::new(status, e.code(), e.to_string())
    }
}

impl From<TradeoffError> for ApiError {
    fn from(e: TradeoffError) -> Self {
        match e {
            TradeoffError::Eval(e) => e.into(),
            TradeoffError::TooFewMetrics => ApiError::new(StatusCode::BAD_REQUEST, e.code(), e.to_string()),
        }
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        tracing::error!("store failure: {e}");
        ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "store_unavailable", e.to_string())
    }
}

impl From<IngestError> for ApiError {
    fn from(e: IngestError) -> Self {
        match e {
            IngestError::Unavailable(e) => e.into(),
            IngestError::UnknownReportTemplate(_) => ApiError::new(StatusCode::NOT_FOUND, e.code(), e.to_string()),
            IngestError::EmptySubmission | IngestError::MalformedHeader(_) => {
                ApiError::new(StatusCode::BAD_REQUEST, e.code(), e.to_string())
            }
        }
    }
}

impl From<BytesRejection> for ApiError {
    fn from(e: BytesRejection) -> Self {
        if e.status() == StatusCode::PAYLOAD_TOO_LARGE {
            ApiError::new(StatusCode::PAYLOAD_TOO_LARGE, "payload_too_large", e.body_text())
        } else {
            ApiError::body(e.body_text())
        }
    }
}

impl From<PathRejection> for ApiError {
    fn from(e: PathRejection) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, "invalid_path", e.body_text())
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

#[derive(Clone)]
pub struct AppState {
    catalog: Arc<Catalog>,
    store: Arc<Store>,
    checksum: Arc<str>,
}

impl AppState {
    pub fn new(store: Arc<Store>) -> Self {
        let catalog = store.catalog().clone();
        AppState { checksum: catalog_checksum(&catalog).into(), catalog, store }
    }

    pub fn store(&self) -> &Arc<Store> {
        &self.store
    }
}

/// SHA-256 of the catalog's canonical text, so formatting and comments do
/// not change it.
pub fn catalog_checksum(catalog: &Catalog) -> String {
    hex::encode(Sha256::digest(serialize_catalog(catalog).as_bytes()))
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/catalog", get(catalog))
        .route("/labs/{lab}/observations", post(submit_observation))
        .route("/labs/{lab}/reports/{report}", post(submit_report))
        .route("/labs/{lab}/import", post(import_file))
        .route("/labs/{lab}/measures/{measure}/series", get(measure_series))
        .route("/labs/{lab}/kpis/{kpi}/status", get(kpi_status))
        .route("/labs/{lab}/kpis/{kpi}/series", get(kpi_series))
        .route("/labs/{lab}/tradeoffs", get(tradeoffs))
        .route("/labs/{lab}/coverage", get(coverage))
        .route("/federation/summary", get(federation_summary))
        .fallback(not_found)
        .method_not_allowed_fallback(method_not_allowed)
        .with_state(state)
}

/// Serves until `shutdown` resolves, then lets in-flight requests finish.
pub async fn serve(
    listener: tokio::net::TcpListener,
    state: AppState,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(state)).with_graceful_shutdown(shutdown).await
}

async fn not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint")
}

async fn method_not_allowed() -> ApiError {
    ApiError::new(StatusCode::METHOD_NOT_ALLOWED, "method_not_allowed", "method not allowed on this endpoint")
}

/// Query parameters, last occurrence wins.
struct Params(HashMap<String, String>);

impl Params {
    fn parse(raw: Option<String>) -> Self {
        Params(form_urlencoded::parse(raw.unwrap_or_default().as_bytes()).into_owned().collect())
    }

    fn get(&self, name: &str) -> Option<&str> {
        self.0.get(name).map(String::as_str)
    }

    fn timestamp(&self, name: &str) -> Result<Option<Timestamp>, ApiError> {
        self.get(name)
            .map(|v| parse_timestamp(v).ok_or_else(|| ApiError::query(format!("`{name}` must be YYYY-MM-DDThh:mm:ssZ"))))
            .transpose()
    }

    fn required_timestamp(&self, name: &str) -> Result<Timestamp, ApiError> {
        self.timestamp(name)?.ok_or_else(|| ApiError::query(format!("`{name}` is required")))
    }

    fn duration(&self, name: &str) -> Result<Option<Duration>, ApiError> {
        self.get(name)
            .map(|v| v.parse::<Duration>().map_err(|e| ApiError::query(format!("`{name}`: {e}"))))
            .transpose()
    }
}

fn parse_json<T: serde::de::DeserializeOwned>(body: Result<Bytes, BytesRejection>) -> Result<T, ApiError> {
    serde_json::from_slice(&body?).map_err(|e| ApiError::body(e.to_string()))
}

/// Runs blocking store work off the async workers.
async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .unwrap_or_else(|e| Err(ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal_error", e.to_string())))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub catalog_checksum: String,
    pub observations: usize,
}

async fn health(State(state): State<AppState>) -> Json<Health> {
    Json(Health {
        status: "ok".into(),
        catalog_checksum: state.checksum.to_string(),
        observations: state.store.snapshot().len(),
    })
}

async fn catalog(State(state): State<AppState>) -> Json<Catalog> {
    Json(Catalog::clone(&state.catalog))
}

/// Body of `POST /labs/{lab}/observations`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ObservationBody {
    measure_id: String,
    #[serde(with = "serde_ts")]
    timestamp: Timestamp,
    value: RawValue,
    uploader_id: String,
}

async fn submit_observation(
    State(state): State<AppState>,
    path: Result<Path<String>, PathRejection>,
    body: Result<Bytes, BytesRejection>,
) -> ApiResult<crate::store::IngestOutcome> {
    let Path(lab) = path?;
    let body: ObservationBody = parse_json(body)?;
    let candidate = ObservationCandidate {
        measure_id: body.measure_id,
        lab_id: lab,
        timestamp: body.timestamp,
        value: body.value,
        uploader_id: body.uploader_id,
    };
    blocking(move || Ok(Json(state.store.submit_observation(&candidate)?))).await
}

/// Body of `POST /labs/{lab}/reports/{report}`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ReportBody {
    #[serde(with = "serde_ts")]
    timestamp: Timestamp,
    values: std::collections::BTreeMap<String, RawValue>,
    uploader_id: String,
}

async fn submit_report(
    State(state): State<AppState>,
    path: Result<Path<(String, String)>, PathRejection>,
    body: Result<Bytes, BytesRejection>,
) -> ApiResult<crate::store::IngestOutcome> {
    let Path((lab, report)) = path?;
    let body: ReportBody = parse_json(body)?;
    let submission = ReportSubmission {
        report_id: report,
        lab_id: lab,
        timestamp: body.timestamp,
        values: body.values,
        uploader_id: body.uploader_id,
    };
    blocking(move || Ok(Json(state.store.submit_report(&submission)?))).await
}

async fn import_file(
    State(state): State<AppState>,
    path: Result<Path<String>, PathRejection>,
    RawQuery(query): RawQuery,
    body: Result<Bytes, BytesRejection>,
) -> ApiResult<crate::store::IngestOutcome> {
    let Path(lab) = path?;
    let params = Params::parse(query);
    let uploader = params.get("uploader").unwrap_or_default().to_string();
    let content = String::from_utf8(body?.to_vec()).map_err(|_| ApiError::body("body is not UTF-8"))?;
    blocking(move || Ok(Json(state.store.import_file(&lab, &uploader, &content)?))).await
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureSeries {
    pub lab_id: String,
    pub measure_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub uploader_id: Option<String>,
    pub points: Vec<crate::engine::SeriesPoint>,
}

async fn measure_series(
    State(state): State<AppState>,
    path: Result<Path<(String, String)>, PathRejection>,
    RawQuery(query): RawQuery,
) -> ApiResult<MeasureSeries> {
    let Path((lab, measure)) = path?;
    let params = Params::parse(query);
    let from = params.required_timestamp("from")?;
    let to = params.timestamp("to")?.unwrap_or_else(crate::time::now);
    let uploader = params.get("uploader").map(str::to_string);
    let points = state.store.query_series(&lab, &measure, from, to, uploader.as_deref())?;
    Ok(Json(MeasureSeries { lab_id: lab, measure_id: measure, uploader_id: uploader, points }))
}

async fn kpi_status(
    State(state): State<AppState>,
    path: Result<Path<(String, String)>, PathRejection>,
    RawQuery(query): RawQuery,
) -> ApiResult<crate::model::EvaluationResult> {
    let Path((lab, kpi)) = path?;
    let params = Params::parse(query);
    let at = params.timestamp("at")?.unwrap_or_else(crate::time::now);
    let mut request = EvaluationRequest::new(kpi, lab, at);
    request.window_override = params.duration("window")?;
    Ok(Json(evaluate(&request, &state.catalog, &*state.store.snapshot())?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KpiSeries {
    pub lab_id: String,
    pub kpi_id: String,
    pub step: Duration,
    pub points: Vec<StatusPoint>,
}

/// The step used when a series request leaves it out.
pub fn default_step(frequency: CollectionFrequency) -> Duration {
    match frequency {
        CollectionFrequency::Daily | CollectionFrequency::PerEvent => Duration::days(1),
        CollectionFrequency::Weekly => Duration::weeks(1),
        CollectionFrequency::Monthly => Duration::months(1),
        CollectionFrequency::Quarterly => Duration::months(3),
    }
}

async fn kpi_series(
    State(state): State<AppState>,
    path: Result<Path<(String, String)>, PathRejection>,
    RawQuery(query): RawQuery,
) -> ApiResult<KpiSeries> {
    let Path((lab, kpi)) = path?;
    let params = Params::parse(query);
    let from = params.required_timestamp("from")?;
    let to = params.timestamp("to")?.unwrap_or_else(crate::time::now);
    let step = match params.duration("step")? {
        Some(step) => step,
        None => default_step(resolve(&state.catalog, &kpi, &lab)?.monitor_frequency),
    };
    let points = kpi_status_series(&state.catalog, &*state.store.snapshot(), &kpi, &lab, from, to, step)?;
    Ok(Json(KpiSeries { lab_id: lab, kpi_id: kpi, step, points }))
}

async fn tradeoffs(
    State(state): State<AppState>,
    path: Result<Path<String>, PathRejection>,
    RawQuery(query): RawQuery,
) -> ApiResult<federation::TradeoffMatrix> {
    let Path(lab) = path?;
    let params = Params::parse(query);
    let metrics = params
        .get("metrics")
        .ok_or_else(|| ApiError::query("`metrics` is required"))?
        .split(',')
        .map(|m| m.trim().parse::<MetricRef>().map_err(ApiError::query))
        .collect::<Result<Vec<_>, _>>()?;
    let threshold = match params.get("threshold") {
        None => TRADEOFF_THRESHOLD,
        Some(t) => t
            .parse::<f64>()
            .ok()
            .filter(|t| (-1.0..=1.0).contains(t))
            .ok_or_else(|| ApiError::query("`threshold` must be a number in [-1, 1]"))?,
    };
    let query = TradeoffQuery {
        lab_id: lab,
        metrics,
        from: params.required_timestamp("from")?,
        to: params.timestamp("to")?.unwrap_or_else(crate::time::now),
        step: params.duration("step")?.unwrap_or(Duration::months(1)),
        threshold,
    };
    Ok(Json(federation::tradeoffs(&state.catalog, &*state.store.snapshot(), &query)?))
}

async fn coverage(
    State(state): State<AppState>,
    path: Result<Path<String>, PathRejection>,
    RawQuery(query): RawQuery,
) -> ApiResult<crate::store::CoverageReport> {
    let Path(lab) = path?;
    let params = Params::parse(query);
    let period = Period { start: params.required_timestamp("from")?, end: params.required_timestamp("to")? };
    Ok(Json(state.store.coverage(&lab, period)?))
}

async fn federation_summary(
    State(state): State<AppState>,
    RawQuery(query): RawQuery,
) -> ApiResult<federation::FederationSummary> {
    let at = Params::parse(query).timestamp("at")?.unwrap_or_else(crate::time::now);
    Ok(Json(federation::federation_summary(&state.catalog, &*state.store.snapshot(), at)))
}

impl std::fmt::Debug for AppState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AppState").field("checksum", &self.checksum).finish_non_exhaustive()
    }
}
