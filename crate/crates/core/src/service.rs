//! HTTP inference endpoint.
//!
//! `POST /v1/inpaint` takes a multipart form with an `image` part (PNG) and
//! a `mask` part (8-bit gray PNG, 255 = known, thresholded at 128), plus
//! optional `return_edges` and `target_size` text parts. The reply is JSON
//! with base64 PNGs. `GET /v1/health` reports the loaded model.

use std::future::IntoFuture;
use std::io::Cursor;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};
use std::time::Instant;

use axum::extract::{DefaultBodyLimit, Multipart, State};
use axum::http::{HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine;
use image::{ImageFormat, ImageReader};
use serde::{Deserialize, Serialize};
use tokio::sync::Semaphore;
use tower_http::cors::{AllowOrigin, Any, CorsLayer};

use crate::checkpoint::{file_digest, Checkpoint};
use crate::datapipe::EdgeParams;
use crate::error::{Error, Result};
use crate::infer::inpaint_image;
use crate::model::InpaintModel;

#[derive(Clone, Debug)]
pub struct ServiceConfig {
    /// Largest accepted `width · height`.
    pub max_pixels: u64,
    /// Largest accepted request body in bytes.
    pub max_body_bytes: usize,
    /// CORS origins; `*` allows any.
    pub allowed_origins: Vec<String>,
    /// Concurrent inference calls.
    pub workers: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            max_pixels: 4_000_000,
            max_body_bytes: 64 << 20,
            allowed_origins: vec!["http://localhost:5173".into()],
            workers: 2,
        }
    }
}

/// A model ready to serve, with the identity reported by health checks.
pub struct LoadedModel {
    pub model: InpaintModel,
    pub model_version: String,
    pub checkpoint_sha256: String,
    pub edges: EdgeParams,
}

impl LoadedModel {
    pub fn from_checkpoint(path: &Path) -> Result<Self> {
        let ckpt = Checkpoint::read(path)?;
        let model = ckpt.build_model()?;
        Ok(Self {
            model,
            model_version: format!("{}+it{}", env!("CARGO_PKG_VERSION"), ckpt.meta.iteration),
            checkpoint_sha256: file_digest(path)?,
            edges: EdgeParams::default(),
        })
    }
}

pub struct AppState {
    model: RwLock<Option<Arc<LoadedModel>>>,
    config: ServiceConfig,
    started: Instant,
    permits: Semaphore,
}

impl AppState {
    pub fn new(config: ServiceConfig) -> Arc<Self> {
        Arc::new(Self {
            model: RwLock::new(None),
            permits: Semaphore::new(config.workers.max(1)),
            config,
            started: Instant::now(),
        })
    }

    pub fn set_model(&self, model: LoadedModel) {
        *self.model.write().expect("model lock poisoned") = Some(Arc::new(model));
    }

    fn model(&self) -> Option<Arc<LoadedModel>> {
        self.model.read().expect("model lock poisoned").clone()
    }
}

#[derive(Debug)]
pub struct ServiceError {
    pub status: StatusCode,
    pub message: String,
}

impl ServiceError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }
}

impl From<Error> for ServiceError {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidInput(_) | Error::Shape(_) | Error::Image(_) => Self::bad_request(e.to_string()),
            other => Self::new(StatusCode::INTERNAL_SERVER_ERROR, other.to_string()),
        }
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        (self.status, Json(serde_json::json!({ "error": self.message }))).into_response()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct InpaintOptions {
    pub return_edges: bool,
    /// Side of the square the model runs at; the checkpoint's size if unset.
    pub target_size: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InpaintResponse {
    pub width: u32,
    pub height: u32,
    /// Base64 PNG, same size as the request image.
    pub composite_png: String,
    pub edge_png: Option<String>,
    pub mask_ratio_percent: f64,
    pub model_version: String,
    pub latency_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HealthResponse {
    pub status: String,
    pub model_version: Option<String>,
    pub checkpoint_sha256: Option<String>,
    pub uptime_seconds: f64,
}

/// Lossless PNG encoding of an 8-bit image.
pub fn png_bytes<P>(img: &image::ImageBuffer<P, Vec<u8>>) -> Vec<u8>
where
    P: image::PixelWithColorType<Subpixel = u8>,
{
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png).expect("in-memory PNG encode");
    buf.into_inner()
}

fn dimensions(bytes: &[u8], what: &str) -> std::result::Result<(u32, u32), ServiceError> {
    ImageReader::new(Cursor::new(bytes))
        .with_guessed_format()
        .map_err(|e| ServiceError::bad_request(format!("{what}: {e}")))?
        .into_dimensions()
        .map_err(|e| ServiceError::bad_request(format!("{what} is not a readable image: {e}")))
}

fn decode(bytes: &[u8], what: &str) -> std::result::Result<image::DynamicImage, ServiceError> {
    image::load_from_memory(bytes).map_err(|e| ServiceError::bad_request(format!("{what} is not a readable image: {e}")))
}

/// Runs one request end to end. Known pixels of the composite are copied
/// byte-for-byte from the request image.
pub fn inpaint_png(
    loaded: &LoadedModel,
    image_bytes: &[u8],
    mask_bytes: &[u8],
    options: &InpaintOptions,
    max_pixels: u64,
) -> std::result::Result<InpaintResponse, ServiceError> {
    let start = Instant::now();
    let (w, h) = dimensions(image_bytes, "image")?;
    if u64::from(w) * u64::from(h) > max_pixels {
        return Err(ServiceError::new(
            StatusCode::PAYLOAD_TOO_LARGE,
            format!("{w}x{h} exceeds the {max_pixels}-pixel limit"),
        ));
    }
    if dimensions(mask_bytes, "mask")? != (w, h) {
        return Err(ServiceError::bad_request("mask and image dimensions differ"));
    }
    let rgb = decode(image_bytes, "image")?.to_rgb8();
    let mask = decode(mask_bytes, "mask")?.to_luma8();
    let result = inpaint_image(&loaded.model, loaded.edges, &rgb, &mask, options.target_size)?;
    let b64 = base64::engine::general_purpose::STANDARD;
    Ok(InpaintResponse {
        width: w,
        height: h,
        composite_png: b64.encode(png_bytes(&result.composite)),
        edge_png: options.return_edges.then(|| b64.encode(png_bytes(&result.edges))),
        mask_ratio_percent: result.mask_ratio_percent,
        model_version: loaded.model_version.clone(),
        latency_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

async fn health(State(state): State<Arc<AppState>>) -> Response {
    let uptime_seconds = state.started.elapsed().as_secs_f64();
    match state.model() {
        Some(m) => Json(HealthResponse {
            status: "ok".into(),
            model_version: Some(m.model_version.clone()),
            checkpoint_sha256: Some(m.checkpoint_sha256.clone()),
            uptime_seconds,
        })
        .into_response(),
        None => (
            StatusCode::SERVICE_UNAVAILABLE,
            Json(HealthResponse {
                status: "loading".into(),
                model_version: None,
                checkpoint_sha256: None,
                uptime_seconds,
            }),
        )
            .into_response(),
    }
}

async fn inpaint(
    State(state): State<Arc<AppState>>,
    mut form: Multipart,
) -> std::result::Result<Json<InpaintResponse>, ServiceError> {
    let loaded = state
        .model()
        .ok_or_else(|| ServiceError::new(StatusCode::SERVICE_UNAVAILABLE, "model is not loaded yet"))?;
    let mut image = None;
    let mut mask = None;
    let mut options = InpaintOptions {
        return_edges: true,
        target_size: None,
    };
    while let Some(field) = form
        .next_field()
        .await
        .map_err(|e| ServiceError::new(e.status(), e.body_text()))?
    {
        let name = field.name().unwrap_or_default().to_string();
        let bytes = field.bytes().await.map_err(|e| ServiceError::new(e.status(), e.body_text()))?;
        let text = || String::from_utf8_lossy(&bytes).trim().to_string();
        match name.as_str() {
            "image" => image = Some(bytes.clone()),
            "mask" => mask = Some(bytes.clone()),
            "return_edges" => {
                options.return_edges = text()
                    .parse()
                    .map_err(|_| ServiceError::bad_request("return_edges must be true or false"))?
            }
            "target_size" => {
                options.target_size = Some(
                    text()
                        .parse()
                        .map_err(|_| ServiceError::bad_request("target_size must be an integer"))?,
                )
            }
            other => return Err(ServiceError::bad_request(format!("unexpected form field {other:?}"))),
        }
    }
    let image = image.ok_or_else(|| ServiceError::bad_request("missing image part"))?;
    let mask = mask.ok_or_else(|| ServiceError::bad_request("missing mask part"))?;

    let _permit = state.permits.acquire().await.expect("semaphore never closes");
    let max_pixels = state.config.max_pixels;
    tokio::task::spawn_blocking(move || inpaint_png(&loaded, &image, &mask, &options, max_pixels))
        .await
        .map_err(|e| ServiceError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
        .map(Json)
}

fn cors(origins: &[String]) -> CorsLayer {
    let layer = CorsLayer::new()
        .allow_methods([Method::GET, Method::POST])
        .allow_headers(Any);
    if origins.iter().any(|o| o == "*") {
        layer.allow_origin(Any)
    } else {
        let list: Vec<HeaderValue> = origins.iter().filter_map(|o| HeaderValue::from_str(o).ok()).collect();
        layer.allow_origin(AllowOrigin::list(list))
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    let limit = state.config.max_body_bytes;
    let layer = cors(&state.config.allowed_origins);
    Router::new()
        .route("/v1/health", get(health))
        .route("/v1/inpaint", post(inpaint))
        .layer(DefaultBodyLimit::max(limit))
        .layer(layer)
        .with_state(state)
}

/// Binds `addr`, loads the checkpoint in the background (health answers 503
/// until it is ready) and serves until the process ends.
pub async fn serve(addr: SocketAddr, checkpoint: PathBuf, config: ServiceConfig) -> Result<()> {
    let state = AppState::new(config);
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| Error::io(addr.to_string(), e))?;
    let loader_state = state.clone();
    let loader = tokio::task::spawn_blocking(move || -> Result<()> {
        loader_state.set_model(LoadedModel::from_checkpoint(&checkpoint)?);
        Ok(())
    });
    let server = axum::serve(listener, router(state)).into_future();
    tokio::pin!(server);
    let io_err = |e: std::io::Error| Error::io(addr.to_string(), e);
    tokio::select! {
        r = &mut server => r.map_err(io_err),
        loaded = loader => {
            loaded.map_err(|e| Error::Checkpoint(e.to_string()))??;
            server.await.map_err(io_err)
        }
    }
}
