//! HTTP API behind the interactive layout editor. Every route lives under `/v1`.
//!
//! - `POST /v1/sessions?ratio=&source_id=` with a PNG crop as the body
//! - `GET /v1/sessions/{id}`
//! - `POST /v1/sessions/{id}/layout` with a single-channel label PNG as the body
//! - `GET /v1/palette/{dataset}`

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use outpaint::layout_data::io::{decode_label_map, decode_rgb, encode_label_map, encode_rgb};
use outpaint::layout_data::synthetic::TOY_CLASSES;
use outpaint::layout_data::DatasetProfile;
use outpaint::pipeline::{outpaint, regenerate_with_layout, Models, OutpaintRequest};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::net::TcpListener;

use crate::store::{now_ms, HistoryEntry, Session, SessionStore};
use crate::{image_hash, layout_hash, CliError};

const MAX_BODY: usize = 32 << 20;

pub struct AppState {
    pub models: Arc<Models>,
    pub store: Arc<SessionStore>,
    locks: Mutex<HashMap<String, Arc<tokio::sync::Mutex<()>>>>,
}

impl AppState {
    pub fn new(models: Arc<Models>, store: Arc<SessionStore>) -> Self {
        Self {
            models,
            store,
            locks: Mutex::new(HashMap::new()),
        }
    }

    fn session_lock(&self, id: &str) -> Arc<tokio::sync::Mutex<()>> {
        let mut locks = self.locks.lock().expect("lock table poisoned");
        locks.entry(id.to_string()).or_default().clone()
    }
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

impl From<outpaint::Error> for ApiError {
    fn from(e: outpaint::Error) -> Self {
        use outpaint::Error as E;
        let status = match &e {
            E::InvalidArgument(_) | E::Image(_) => StatusCode::BAD_REQUEST,
            E::ShapeMismatch(_) | E::ClassOutOfRange { .. } | E::SegmentationFailed(_) => {
                StatusCode::UNPROCESSABLE_ENTITY
            }
            E::CheckpointMismatch { .. } => StatusCode::CONFLICT,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self::new(status, e.to_string())
    }
}

impl From<CliError> for ApiError {
    fn from(e: CliError) -> Self {
        match e {
            CliError::Core(e) => e.into(),
            other => Self::new(StatusCode::INTERNAL_SERVER_ERROR, other.to_string()),
        }
    }
}

type ApiResult<T> = Result<T, ApiError>;

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
}

#[derive(Debug, Deserialize)]
pub struct CreateParams {
    #[serde(default = "default_ratio")]
    pub ratio: f64,
    pub source_id: Option<String>,
}

fn default_ratio() -> f64 {
    0.25
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutResponse {
    pub session_id: String,
    /// Base64 PNG.
    pub image_png: String,
    pub image_hash: String,
    pub layout_hash: String,
    pub history_len: usize,
}

async fn create_session(
    State(state): State<Arc<AppState>>,
    Query(params): Query<CreateParams>,
    body: Bytes,
) -> ApiResult<(StatusCode, Json<Session>)> {
    let session = blocking(move || {
        let cropped = decode_rgb(&body)?;
        let source_id = params.source_id.unwrap_or_else(|| "upload".into());
        let request = OutpaintRequest::new(source_id.clone(), cropped.clone(), params.ratio);
        let result = outpaint(&request, &state.models)?;
        let now = now_ms();
        let session = Session {
            session_id: uuid::Uuid::new_v4().simple().to_string(),
            profile: state.models.profile.name.clone(),
            models_fingerprint: state.models.fingerprint(),
            source_id,
            ratio: params.ratio,
            cropped_png: encode_rgb(&cropped)?,
            layout_png: encode_label_map(&result.layout)?,
            layout_hash: layout_hash(&result.layout),
            image_png: encode_rgb(&result.image)?,
            image_hash: image_hash(&result.image),
            out_of_distribution: result.out_of_distribution,
            history: Vec::new(),
            created_ms: now,
            updated_ms: now,
        };
        state.store.put(&session)?;
        Ok(session)
    })
    .await?;
    Ok((StatusCode::CREATED, Json(session)))
}

fn load_session(state: &AppState, id: &str) -> ApiResult<Session> {
    state
        .store
        .get(id)?
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown session '{id}'")))
}

async fn get_session(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<Session>> {
    blocking(move || load_session(&state, &id)).await.map(Json)
}

async fn submit_layout(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Json<LayoutResponse>> {
    let lock = state.session_lock(&id);
    let _guard = lock.lock().await;
    let response = blocking(move || {
        let mut session = load_session(&state, &id)?;
        let models = &state.models;
        if session.models_fingerprint != models.fingerprint() {
            return Err(ApiError::new(
                StatusCode::CONFLICT,
                format!(
                    "session was created with models {}, service runs {}",
                    session.models_fingerprint,
                    models.fingerprint()
                ),
            ));
        }
        let layout = decode_label_map(&body, models.profile.num_classes)
            .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()))?;
        let request = OutpaintRequest::new(session.source_id.clone(), decode_rgb(&session.cropped_png)?, session.ratio);
        let result = regenerate_with_layout(&request, &layout, models).map_err(|e| match e {
            outpaint::Error::InvalidArgument(m) => ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, m),
            other => other.into(),
        })?;
        let entry = HistoryEntry {
            layout_png: encode_label_map(&layout)?,
            layout_hash: layout_hash(&layout),
            image_png: encode_rgb(&result.image)?,
            image_hash: image_hash(&result.image),
            at_ms: now_ms(),
        };
        session.layout_png = entry.layout_png.clone();
        session.layout_hash = entry.layout_hash.clone();
        session.image_png = entry.image_png.clone();
        session.image_hash = entry.image_hash.clone();
        session.updated_ms = entry.at_ms;
        session.history.push(entry);
        state.store.put(&session)?;
        Ok(LayoutResponse {
            session_id: session.session_id.clone(),
            image_png: STANDARD.encode(&session.image_png),
            image_hash: session.image_hash.clone(),
            layout_hash: session.layout_hash.clone(),
            history_len: session.history.len(),
        })
    })
    .await?;
    Ok(Json(response))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PaletteEntry {
    pub index: usize,
    pub color: [u8; 3],
    #[serde(skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PaletteResponse {
    pub dataset: String,
    pub entries: Vec<PaletteEntry>,
}

async fn palette(Path(dataset): Path<String>) -> ApiResult<Json<PaletteResponse>> {
    let profile = DatasetProfile::by_name(&dataset)
        .map_err(|_| ApiError::new(StatusCode::NOT_FOUND, format!("unknown dataset '{dataset}'")))?;
    let entries = profile
        .palette()
        .colors
        .into_iter()
        .enumerate()
        .map(|(index, color)| PaletteEntry {
            index,
            color,
            name: (profile.name == "desk").then(|| TOY_CLASSES[index].to_string()),
        })
        .collect();
    Ok(Json(PaletteResponse { dataset, entries }))
}

async fn health(State(state): State<Arc<AppState>>) -> Json<serde_json::Value> {
    Json(json!({
        "status": "ok",
        "profile": state.models.profile.name,
        "models": state.models.fingerprint(),
    }))
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/v1/health", get(health))
        .route("/v1/sessions", post(create_session))
        .route("/v1/sessions/{id}", get(get_session))
        .route("/v1/sessions/{id}/layout", post(submit_layout))
        .route("/v1/palette/{dataset}", get(palette))
        .layer(DefaultBodyLimit::max(MAX_BODY))
        .with_state(state)
}

pub async fn serve(listener: TcpListener, state: Arc<AppState>) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}
