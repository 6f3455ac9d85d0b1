//! HTTP+JSON API and the job event stream.

use std::convert::Infallible;
use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use canopy_geo::{Block, Community, Parcel, Viewport};
use futures::{stream, Stream, StreamExt};
use serde::Deserialize;
use serde_json::json;

use crate::area::AreaSpec;
use crate::error::AppError;
use crate::jobs::{EventKind, Job, JobEvent, JobStatus};
use crate::service::App;
use crate::store::{parse_time_bound, DetectionRun, Report};
use crate::trees::{TreeRecord, Verdict};

pub struct ApiError(AppError);

impl From<AppError> for ApiError {
    fn from(e: AppError) -> Self {
        ApiError(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let e = self.0;
        let status = match &e {
            AppError::BadRequest(_) => StatusCode::BAD_REQUEST,
            AppError::NotFound { .. } | AppError::EmptyReport { .. } => StatusCode::NOT_FOUND,
            AppError::Conflict(_) => StatusCode::CONFLICT,
            AppError::ModelNotLoaded => StatusCode::SERVICE_UNAVAILABLE,
            AppError::MissingTiles { .. } => StatusCode::BAD_GATEWAY,
            AppError::Geo(canopy_geo::GeoError::InvalidPolygon { .. }) => {
                StatusCode::UNPROCESSABLE_ENTITY
            }
            AppError::Geo(
                canopy_geo::GeoError::InvalidViewport(_) | canopy_geo::GeoError::InvalidPoint(_),
            ) => StatusCode::BAD_REQUEST,
            AppError::Core(canopy_core::Error::Config(_)) => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        let mut body = json!({"error": e.to_string()});
        if let AppError::MissingTiles { missing } = &e {
            body["missing_tiles"] =
                json!(missing.iter().map(|a| a.to_string()).collect::<Vec<_>>());
        }
        (status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// Runs blocking service work off the async executor.
async fn blocking<T: Send + 'static>(
    app: &Arc<App>,
    f: impl FnOnce(&App) -> Result<T, AppError> + Send + 'static,
) -> ApiResult<T> {
    let app = app.clone();
    tokio::task::spawn_blocking(move || f(&app))
        .await
        .map_err(|e| ApiError(AppError::BadRequest(format!("worker panicked: {e}"))))?
        .map_err(ApiError)
}

pub fn router(app: Arc<App>) -> Router {
    Router::new()
        .route("/areas/communities", get(communities))
        .route("/areas/{community}/blocks", get(blocks))
        .route("/areas/{community}/{block}/parcels", get(parcels))
        .route("/detect/scene", post(detect_scene))
        .route("/detect/parcel", post(detect_parcel))
        .route("/detect/community", post(detect_community))
        .route("/jobs/{id}", get(job_status))
        .route("/jobs/{id}/events", get(job_events))
        .route("/jobs/{id}/cancel", post(cancel_job))
        .route("/runs/{id}", get(get_run))
        .route("/trees/{id}", get(get_tree))
        .route("/trees/{id}/verdict", post(post_verdict))
        .route("/reports", get(report))
        .with_state(app)
}

async fn communities(State(app): State<Arc<App>>) -> ApiResult<Json<Vec<Community>>> {
    let list = blocking(&app, |app| {
        let ids = app.cadastral.list_communities()?;
        ids.iter()
            .map(|id| Ok(app.cadastral.get_community(id)?))
            .collect()
    })
    .await?;
    Ok(Json(list))
}

async fn blocks(
    State(app): State<Arc<App>>,
    Path(community): Path<String>,
) -> ApiResult<Json<Vec<Block>>> {
    let list = blocking(&app, move |app| {
        let ids = app.cadastral.list_blocks(&community)?;
        ids.iter()
            .map(|b| Ok(app.cadastral.get_block(&community, b)?))
            .collect()
    })
    .await?;
    Ok(Json(list))
}

async fn parcels(
    State(app): State<Arc<App>>,
    Path((community, block)): Path<(String, String)>,
) -> ApiResult<Json<Vec<Parcel>>> {
    let list = blocking(&app, move |app| {
        let ids = app.cadastral.list_parcels(&community, &block)?;
        ids.iter()
            .map(|p| Ok(app.cadastral.get_parcel(&community, &block, p)?))
            .collect()
    })
    .await?;
    Ok(Json(list))
}

#[derive(Deserialize)]
struct SceneRequest {
    viewport: Viewport,
    threshold: Option<f64>,
}

async fn detect_scene(
    State(app): State<Arc<App>>,
    Json(req): Json<SceneRequest>,
) -> ApiResult<Json<DetectionRun>> {
    let run = blocking(&app, move |app| {
        app.detect_scene(&req.viewport, req.threshold)
    })
    .await?;
    Ok(Json(run.as_ref().clone()))
}

#[derive(Deserialize)]
struct ParcelRequest {
    community: String,
    block: String,
    parcel: String,
    threshold: Option<f64>,
    zoom: Option<u8>,
}

async fn detect_parcel(
    State(app): State<Arc<App>>,
    Json(req): Json<ParcelRequest>,
) -> ApiResult<Json<DetectionRun>> {
    let run = blocking(&app, move |app| {
        app.detect_parcel(
            &req.community,
            &req.block,
            &req.parcel,
            req.threshold,
            req.zoom,
        )
    })
    .await?;
    Ok(Json(run.as_ref().clone()))
}

#[derive(Deserialize)]
struct CommunityRequest {
    community: String,
    threshold: Option<f64>,
    zoom: Option<u8>,
}

async fn detect_community(
    State(app): State<Arc<App>>,
    Json(req): Json<CommunityRequest>,
) -> ApiResult<impl IntoResponse> {
    let handle = app.clone();
    let job = blocking(&app, move |_| {
        handle.start_community(&req.community, req.threshold, req.zoom)
    })
    .await?;
    Ok((StatusCode::ACCEPTED, Json(json!({"job_id": job.id}))))
}

fn find_job(app: &App, id: &str) -> Result<Arc<Job>, ApiError> {
    app.jobs.get(id).ok_or_else(|| {
        ApiError(AppError::NotFound {
            kind: "job",
            id: id.to_string(),
        })
    })
}

async fn job_status(
    State(app): State<Arc<App>>,
    Path(id): Path<String>,
) -> ApiResult<Json<JobStatus>> {
    Ok(Json(find_job(&app, &id)?.status()))
}

async fn cancel_job(
    State(app): State<Arc<App>>,
    Path(id): Path<String>,
) -> ApiResult<Json<JobStatus>> {
    let job = find_job(&app, &id)?;
    job.request_cancel();
    Ok(Json(job.status()))
}

#[derive(Deserialize)]
struct EventsQuery {
    /// Replay events after this sequence number.
    from: Option<u64>,
}

fn sse_event(e: &JobEvent) -> Event {
    let name = match e.kind {
        EventKind::Progress => "progress",
        EventKind::Done => "done",
        EventKind::Failed => "failed",
        EventKind::Cancelled => "cancelled",
    };
    Event::default()
        .id(e.seq.to_string())
        .event(name)
        .json_data(e)
        .expect("job events serialize")
}

/// Server-sent events for a job, starting after `?from=` or the
/// `Last-Event-ID` header. The stream ends after the terminal event.
async fn job_events(
    State(app): State<Arc<App>>,
    Path(id): Path<String>,
    Query(q): Query<EventsQuery>,
    headers: HeaderMap,
) -> ApiResult<Sse<impl Stream<Item = Result<Event, Infallible>>>> {
    let job = find_job(&app, &id)?;
    let header_from = headers
        .get("last-event-id")
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.trim().parse::<u64>().ok());
    let from = q.from.or(header_from).unwrap_or(0);
    let rx = job.subscribe();
    let events = stream::unfold(
        (job, rx, from, false),
        |(job, mut rx, last, ended)| async move {
            if ended {
                return None;
            }
            loop {
                // Mark the current value seen before reading, so appends made
                // after this read wake the wait below.
                rx.borrow_and_update();
                let (batch, terminal) = job.events_after(last);
                if let Some(tail) = batch.last() {
                    let (next, end) = (tail.seq, tail.kind != EventKind::Progress);
                    let items: Vec<Result<Event, Infallible>> =
                        batch.iter().map(|e| Ok(sse_event(e))).collect();
                    return Some((stream::iter(items), (job, rx, next, end)));
                }
                if terminal || rx.changed().await.is_err() {
                    return None;
                }
            }
        },
    )
    .flatten();
    Ok(Sse::new(events).keep_alive(KeepAlive::default()))
}

async fn get_run(
    State(app): State<Arc<App>>,
    Path(id): Path<String>,
) -> ApiResult<Json<DetectionRun>> {
    Ok(Json(app.store.run(&id)?.as_ref().clone()))
}

async fn get_tree(
    State(app): State<Arc<App>>,
    Path(id): Path<String>,
) -> ApiResult<Json<TreeRecord>> {
    Ok(Json(app.store.tree(&id)?))
}

#[derive(Deserialize)]
struct VerdictRequest {
    verdict: Verdict,
}

async fn post_verdict(
    State(app): State<Arc<App>>,
    Path(id): Path<String>,
    Json(req): Json<VerdictRequest>,
) -> ApiResult<Json<TreeRecord>> {
    Ok(Json(
        blocking(&app, move |app| app.store.set_verdict(&id, req.verdict)).await?,
    ))
}

#[derive(Deserialize)]
struct ReportQuery {
    area: String,
    from: Option<String>,
    to: Option<String>,
}

async fn report(
    State(app): State<Arc<App>>,
    Query(q): Query<ReportQuery>,
) -> ApiResult<Json<Report>> {
    let area: AreaSpec = q.area.parse()?;
    let from = q
        .from
        .as_deref()
        .map(|s| parse_time_bound(s, false))
        .transpose()?;
    let to =
        q.to.as_deref()
            .map(|s| parse_time_bound(s, true))
            .transpose()?;
    Ok(Json(app.store.report(&area, from, to)?))
}

/// Serves the API until the listener fails.
pub async fn serve(app: Arc<App>, listener: tokio::net::TcpListener) -> std::io::Result<()> {
    axum::serve(listener, router(app)).await
}
