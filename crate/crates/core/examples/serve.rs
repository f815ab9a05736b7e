//! Drives the HTTP API in-process: health check, one multipart inpainting
//! request, and a decode of the returned composite. `inpaint serve` exposes
//! the same router over TCP.
//!
//! cargo run --release --example serve

use std::io::Cursor;

use axum::body::{to_bytes, Body};
use axum::http::Request;
use base64::Engine;
use image::{GrayImage, Luma};
use inpaint::datapipe::{array_to_rgb, synth_dataset, EdgeParams};
use inpaint::model::{InpaintModel, ModelConfig};
use inpaint::service::{png_bytes, router, AppState, InpaintResponse, LoadedModel, ServiceConfig};
use tower::ServiceExt;

const BOUNDARY: &str = "inpaint-example-boundary";

fn multipart(parts: &[(&str, &[u8])]) -> Vec<u8> {
    let mut body = Vec::new();
    for (name, data) in parts {
        body.extend_from_slice(
            format!("--{BOUNDARY}\r\nContent-Disposition: form-data; name=\"{name}\"; filename=\"{name}.png\"\r\n\r\n").as_bytes(),
        );
        body.extend_from_slice(data);
        body.extend_from_slice(b"\r\n");
    }
    body.extend_from_slice(format!("--{BOUNDARY}--\r\n").as_bytes());
    body
}

#[tokio::main(flavor = "current_thread")]
async fn main() -> inpaint::Result<()> {
    let state = AppState::new(ServiceConfig::default());
    let app = router(state.clone());

    let health = app.clone().oneshot(Request::get("/v1/health").body(Body::empty()).unwrap()).await.unwrap();
    println!("health before load: {}", health.status());
    state.set_model(LoadedModel {
        model: InpaintModel::new(&ModelConfig::desk(32), 0)?,
        model_version: "example".into(),
        checkpoint_sha256: "untrained".into(),
        edges: EdgeParams::default(),
    });
    let health = app.clone().oneshot(Request::get("/v1/health").body(Body::empty()).unwrap()).await.unwrap();
    println!("health after load:  {}", health.status());

    let image = array_to_rgb(synth_dataset(1, 64, 4)?[0].image_gt())?;
    let mask = GrayImage::from_fn(64, 64, |x, _| Luma([if x < 40 { 255 } else { 0 }]));
    let body = multipart(&[("image", &png_bytes(&image)), ("mask", &png_bytes(&mask))]);
    let req = Request::post("/v1/inpaint")
        .header("content-type", format!("multipart/form-data; boundary={BOUNDARY}"))
        .body(Body::from(body))
        .unwrap();
    let resp = app.oneshot(req).await.unwrap();
    println!("inpaint: {}", resp.status());
    let bytes = to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    let parsed: InpaintResponse = serde_json::from_slice(&bytes).expect("json body");
    let png = base64::engine::general_purpose::STANDARD.decode(&parsed.composite_png).expect("base64");
    let composite = image::load(Cursor::new(png), image::ImageFormat::Png)?.to_rgb8();
    let exact = (0..64).all(|y| (0..40).all(|x| composite.get_pixel(x, y) == image.get_pixel(x, y)));
    println!(
        "{}x{} composite, hole ratio {:.1}%, known pixels byte-exact: {exact}",
        parsed.width, parsed.height, parsed.mask_ratio_percent
    );
    Ok(())
}
