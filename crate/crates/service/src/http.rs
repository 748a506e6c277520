//! JSON API over [`Service`].
//!
//! | method | path | body |
//! |---|---|---|
//! | POST | `/patients` | [`NewPatient`] |
//! | GET | `/patients/{id}` | |
//! | POST | `/patients/{id}/captures` | multipart `region`, `image` (+ optional `timestamp`) |
//! | POST | `/patients/{id}/reports` | [`ReportInput`] JSON, or multipart `image` |
//! | POST | `/patients/{id}/screenings` | optional `{"timestamp"}` |
//! | GET | `/patients/{id}/history` | |
//! | POST | `/admin/retrain` | optional `{"min_new", "timestamp"}` |
//! | GET | `/admin/bundle` | `?version=N` |
//!
//! Errors come back as `{"code", "message", "stage"}`.

use std::sync::Arc;

use axum::extract::{DefaultBodyLimit, FromRequest, Multipart, Path, Query, Request, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
pub use axum::Router;
use axum::Json;
use hbscan_core::features::Region;
use hbscan_core::models::{CalibrationParams, DemographicGroup, ThresholdRow};
use serde::{Deserialize, Serialize};

use crate::events::PatientRecord;
use crate::service::{NewPatient, ReportInput, Service};
use crate::ServiceError;

pub const DEFAULT_MIN_NEW: usize = 25;
const MAX_UPLOAD: usize = 32 * 1024 * 1024;

#[derive(Clone)]
struct AppState {
    service: Arc<Service>,
    token: Option<Arc<str>>,
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    code: &'a str,
    message: String,
    stage: &'a str,
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = match &self {
            ServiceError::NotFound(_) => StatusCode::NOT_FOUND,
            ServiceError::Conflict(_) => StatusCode::CONFLICT,
            ServiceError::Invalid { .. } | ServiceError::Report(_) => StatusCode::BAD_REQUEST,
            ServiceError::NoCaptures(_) | ServiceError::Pipeline(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ServiceError::Ocr(_) => StatusCode::BAD_GATEWAY,
            ServiceError::Storage(_) => StatusCode::INTERNAL_SERVER_ERROR,
            ServiceError::Unauthorized => StatusCode::UNAUTHORIZED,
        };
        if status.is_server_error() {
            tracing::error!(code = self.code(), stage = self.stage(), "{self}");
        }
        let body = ErrorBody { code: self.code(), message: self.to_string(), stage: self.stage() };
        (status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ServiceError>;

/// Builds the router. With `token` set every request must carry
/// `Authorization: Bearer <token>`.
pub fn router(service: Arc<Service>, token: Option<String>) -> Router {
    let state = AppState { service, token: token.map(Into::into) };
    Router::new()
        .route("/patients", post(create_patient))
        .route("/patients/{id}", get(get_patient))
        .route("/patients/{id}/captures", post(add_capture))
        .route("/patients/{id}/reports", post(add_report))
        .route("/patients/{id}/screenings", post(run_screening))
        .route("/patients/{id}/history", get(history))
        .route("/admin/retrain", post(retrain))
        .route("/admin/bundle", get(bundle))
        .layer(DefaultBodyLimit::max(MAX_UPLOAD))
        .with_state(state)
}

fn authorise(state: &AppState, headers: &HeaderMap) -> Result<(), ServiceError> {
    let Some(expected) = &state.token else { return Ok(()) };
    let given = headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "));
    if given == Some(&**expected) {
        Ok(())
    } else {
        Err(ServiceError::Unauthorized)
    }
}

/// Runs blocking service work off the async executor.
async fn blocking<T: Send + 'static>(
    service: &Arc<Service>,
    f: impl FnOnce(&Service) -> Result<T, ServiceError> + Send + 'static,
) -> Result<T, ServiceError> {
    let service = service.clone();
    tokio::task::spawn_blocking(move || f(&service))
        .await
        .map_err(|e| ServiceError::Storage(format!("worker panicked: {e}")))?
}

fn bad_json(e: impl std::fmt::Display) -> ServiceError {
    ServiceError::invalid(format!("request body: {e}"), "request")
}

/// JSON body that may be empty.
fn optional_json<T: for<'de> Deserialize<'de> + Default>(bytes: &[u8]) -> Result<T, ServiceError> {
    if bytes.iter().all(u8::is_ascii_whitespace) {
        Ok(T::default())
    } else {
        serde_json::from_slice(bytes).map_err(bad_json)
    }
}

async fn create_patient(State(st): State<AppState>, headers: HeaderMap, body: axum::body::Bytes) -> Result<(StatusCode, Json<PatientRecord>), ServiceError> {
    authorise(&st, &headers)?;
    let p: NewPatient = serde_json::from_slice(&body).map_err(bad_json)?;
    let rec = blocking(&st.service, move |s| s.create_patient(p)).await?;
    Ok((StatusCode::CREATED, Json(rec)))
}

#[derive(Serialize)]
struct PatientView {
    #[serde(flatten)]
    patient: PatientRecord,
    group: DemographicGroup,
    /// Threshold row used to diagnose this patient under the active bundle.
    thresholds: Option<ThresholdRow>,
    calibration: CalibrationParams,
}

async fn get_patient(State(st): State<AppState>, headers: HeaderMap, Path(id): Path<String>) -> ApiResult<PatientView> {
    authorise(&st, &headers)?;
    let patient = st.service.get_patient(&id)?;
    let who = patient.demographics();
    let table = st.service.config().thresholds.clone().map_or_else(|| st.service.bundle_info(None).map(|b| b.thresholds), Ok)?;
    Ok(Json(PatientView {
        group: who.group(),
        thresholds: table.row_for(&who).ok().cloned(),
        calibration: st.service.calibration(&id)?,
        patient,
    }))
}

struct Upload {
    fields: Vec<(String, Vec<u8>)>,
}

impl Upload {
    async fn read(mut mp: Multipart) -> Result<Self, ServiceError> {
        let mut fields = Vec::new();
        while let Some(f) = mp.next_field().await.map_err(|e| ServiceError::invalid(format!("multipart: {e}"), "request"))? {
            let name = f.name().unwrap_or_default().to_string();
            let bytes = f.bytes().await.map_err(|e| ServiceError::invalid(format!("multipart: {e}"), "request"))?;
            fields.push((name, bytes.to_vec()));
        }
        Ok(Self { fields })
    }

    fn take(&mut self, name: &str) -> Option<Vec<u8>> {
        let i = self.fields.iter().position(|(n, _)| n == name)?;
        Some(self.fields.remove(i).1)
    }

    fn text(&mut self, name: &str) -> Result<Option<String>, ServiceError> {
        self.take(name)
            .map(|b| String::from_utf8(b).map(|s| s.trim().to_string()).map_err(|_| ServiceError::invalid(format!("field '{name}' is not UTF-8"), "request")))
            .transpose()
    }

    fn timestamp(&mut self) -> Result<Option<i64>, ServiceError> {
        self.text("timestamp")?
            .map(|t| t.parse().map_err(|_| ServiceError::invalid(format!("timestamp '{t}' is not an integer"), "request")))
            .transpose()
    }
}

async fn add_capture(State(st): State<AppState>, headers: HeaderMap, Path(id): Path<String>, mp: Multipart) -> Result<(StatusCode, Json<crate::Capture>), ServiceError> {
    authorise(&st, &headers)?;
    let mut up = Upload::read(mp).await?;
    let region: Region = up
        .text("region")?
        .ok_or_else(|| ServiceError::invalid("missing 'region' field", "request"))?
        .parse()
        .map_err(|e| ServiceError::invalid(format!("{e}"), "request"))?;
    let image = up.take("image").ok_or_else(|| ServiceError::invalid("missing 'image' field", "request"))?;
    let ts = up.timestamp()?;
    let c = blocking(&st.service, move |s| s.ingest_capture(&id, region, &image, ts)).await?;
    Ok((StatusCode::CREATED, Json(c)))
}

async fn add_report(State(st): State<AppState>, Path(id): Path<String>, req: Request) -> Result<(StatusCode, Json<crate::ReportOutcome>), ServiceError> {
    authorise(&st, req.headers())?;
    let is_multipart = req
        .headers()
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.starts_with("multipart/form-data"));
    let outcome = if is_multipart {
        let mp = Multipart::from_request(req, &()).await.map_err(|e| ServiceError::invalid(e.body_text(), "request"))?;
        let mut up = Upload::read(mp).await?;
        let image = up.take("image").ok_or_else(|| ServiceError::invalid("missing 'image' field", "request"))?;
        let ts = up.timestamp()?;
        blocking(&st.service, move |s| {
            let report = s.ocr_report(&image)?;
            s.ingest_report(&id, report, ts)
        })
        .await?
    } else {
        let bytes = axum::body::Bytes::from_request(req, &()).await.map_err(|e| ServiceError::invalid(e.body_text(), "request"))?;
        let input: ReportInput = serde_json::from_slice(&bytes).map_err(bad_json)?;
        let report = Service::parse_report(&input)?;
        blocking(&st.service, move |s| s.ingest_report(&id, report, input.timestamp)).await?
    };
    Ok((StatusCode::CREATED, Json(outcome)))
}

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScreeningRequest {
    timestamp: Option<i64>,
}

async fn run_screening(State(st): State<AppState>, headers: HeaderMap, Path(id): Path<String>, body: axum::body::Bytes) -> Result<(StatusCode, Json<crate::Screening>), ServiceError> {
    authorise(&st, &headers)?;
    let req: ScreeningRequest = optional_json(&body)?;
    let s = blocking(&st.service, move |s| s.run_screening(&id, req.timestamp)).await?;
    Ok((StatusCode::CREATED, Json(s)))
}

async fn history(State(st): State<AppState>, headers: HeaderMap, Path(id): Path<String>) -> ApiResult<Vec<crate::HistoryEntry>> {
    authorise(&st, &headers)?;
    Ok(Json(st.service.history(&id)?))
}

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RetrainRequest {
    min_new: Option<usize>,
    timestamp: Option<i64>,
}

async fn retrain(State(st): State<AppState>, headers: HeaderMap, body: axum::body::Bytes) -> ApiResult<crate::RetrainDecision> {
    authorise(&st, &headers)?;
    let req: RetrainRequest = optional_json(&body)?;
    let min_new = req.min_new.unwrap_or(DEFAULT_MIN_NEW);
    Ok(Json(blocking(&st.service, move |s| s.retrain(min_new, req.timestamp)).await?))
}

#[derive(Deserialize)]
struct BundleQuery {
    version: Option<u32>,
}

async fn bundle(State(st): State<AppState>, headers: HeaderMap, Query(q): Query<BundleQuery>) -> ApiResult<crate::BundleInfo> {
    authorise(&st, &headers)?;
    Ok(Json(st.service.bundle_info(q.version)?))
}

/// Serves `app` until `shutdown` resolves.
pub async fn serve(
    listener: tokio::net::TcpListener,
    app: Router,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, app).with_graceful_shutdown(shutdown).await
}
