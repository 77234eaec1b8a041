use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::IntoResponse;
use axum::routing::{get, post};
use axum::{Json, Router};

use crate::error::ApiError;
use crate::model::*;
use crate::state::AppState;

type ApiResult<T> = Result<T, ApiError>;

fn body<T>(payload: Result<Json<T>, JsonRejection>) -> ApiResult<T> {
    payload
        .map(|Json(v)| v)
        .map_err(|e| ApiError::bad_request(e.body_text()))
}

async fn create_dataset(
    State(app): State<AppState>,
    payload: Result<Json<CreateDataset>, JsonRejection>,
) -> ApiResult<impl IntoResponse> {
    let status = app.create_dataset(body(payload)?)?;
    Ok((StatusCode::ACCEPTED, Json(status)))
}

async fn list_datasets(State(app): State<AppState>) -> Json<Vec<DatasetStatus>> {
    Json(app.list_datasets())
}

async fn get_dataset(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<DatasetStatus>> {
    app.dataset_status(&id).map(Json)
}

async fn insert_points(
    State(app): State<AppState>,
    Path(id): Path<String>,
    payload: Result<Json<InsertRequest>, JsonRejection>,
) -> ApiResult<impl IntoResponse> {
    let resp = app.insert(&id, body(payload)?).await?;
    let code = match resp.status {
        InsertStatus::Applied => StatusCode::OK,
        InsertStatus::Pending => StatusCode::ACCEPTED,
    };
    Ok((code, Json(resp)))
}

async fn open_session(
    State(app): State<AppState>,
    Path(id): Path<String>,
    payload: Result<Json<SessionRequest>, JsonRejection>,
) -> ApiResult<impl IntoResponse> {
    let info = app.open_session(&id, body(payload)?).await?;
    Ok((StatusCode::CREATED, Json(info)))
}

async fn session_info(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<SessionInfo>> {
    app.info(&id).await.map(Json)
}

async fn next_update(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<NextResponse>> {
    app.next(&id).await.map(Json)
}

async fn grid(
    State(app): State<AppState>,
    Path(id): Path<String>,
    params: Result<Query<GridParams>, QueryRejection>,
) -> ApiResult<Json<GridResponse>> {
    let Query(params) = params.map_err(|e| ApiError::bad_request(e.body_text()))?;
    app.grid(&id, params).await.map(Json)
}

async fn hours(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<HoursResponse>> {
    app.hours(&id).await.map(Json)
}

async fn delete_session(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<StatusCode> {
    app.delete(&id).await?;
    Ok(StatusCode::NO_CONTENT)
}

async fn fallback() -> ApiError {
    ApiError {
        status: StatusCode::NOT_FOUND,
        code: "not_found",
        message: "no such route".into(),
        retry_after_ms: None,
    }
}

pub fn router(state: AppState) -> Router {
    let v1 = Router::new()
        .route("/datasets", post(create_dataset).get(list_datasets))
        .route("/datasets/{id}", get(get_dataset))
        .route("/datasets/{id}/points", post(insert_points))
        .route("/datasets/{id}/sessions", post(open_session))
        .route("/sessions/{id}", get(session_info).delete(delete_session))
        .route("/sessions/{id}/next", get(next_update))
        .route("/sessions/{id}/grid", get(grid))
        .route("/sessions/{id}/hours", get(hours));
    Router::new()
        .nest("/v1", v1)
        .fallback(fallback)
        .with_state(state)
}
