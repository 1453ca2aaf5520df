// Drive the HTTP API without opening a socket.
//
// Builds the router over the bundled toy models, then walks one session
// through the whole lifecycle: create, upload a mask, launch an edit,
// read its event stream, accept it and fetch the new image.
//
// ```text
// cargo run --release -p paintword-service --example http_session -- [word] [out-dir]
// ```

use std::path::{Path, PathBuf};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use paintword::engine::{Engine, EngineConfig};
use paintword::io::encode_mask_png;
use paintword::optim::{OptimizationSchedule, Phase};
use paintword::tensor::Mask;
use paintword::{assets, Error, Result};
use paintword_service::http::{router, AppState};
use serde_json::{json, Value};
use tower::ServiceExt;

async fn send(app: &Router, method: &str, uri: &str, body: impl Into<Body>) -> Result<(StatusCode, Vec<u8>)> {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .body(body.into())
        .map_err(|e| Error::Format(e.to_string()))?;
    let resp = app.clone().oneshot(req).await.expect("router is infallible");
    let status = resp.status();
    let bytes = resp
        .into_body()
        .collect()
        .await
        .map_err(|e| Error::Format(e.to_string()))?
        .to_bytes();
    Ok((status, bytes.to_vec()))
}

fn json_of(status: StatusCode, body: &[u8], want: StatusCode) -> Result<Value> {
    let v: Value = serde_json::from_slice(body).map_err(|e| Error::Format(e.to_string()))?;
    if status != want {
        return Err(Error::Format(format!("expected {want}, got {status}: {v}")));
    }
    Ok(v)
}

/// Runs one edit through the API and returns the number of progress events
/// seen and the accepted image as PNG bytes.
pub async fn session(word: &str, schedule: OptimizationSchedule, out: Option<&Path>) -> Result<(usize, Vec<u8>)> {
    let config = EngineConfig {
        preview_every: 25,
        ..EngineConfig::default()
    };
    let app = router(AppState::new(Engine::new(assets::toy_registry()?, config), schedule));

    let (st, body) = send(
        &app,
        "POST",
        "/v1/sessions",
        json!({ "generator": "toy-shapes", "scorer": "toy-scorer", "seed": 5 }).to_string(),
    )
    .await?;
    let id = json_of(st, &body, StatusCode::CREATED)?["session_id"]
        .as_str()
        .unwrap_or_default()
        .to_string();
    let (_, before) = send(&app, "GET", &format!("/v1/sessions/{id}/image"), Body::empty()).await?;

    let mask = encode_mask_png(&Mask::rect(64, 64, 8, 8, 24, 24))?;
    let (st, body) = send(&app, "PUT", &format!("/v1/sessions/{id}/mask"), mask).await?;
    json_of(st, &body, StatusCode::OK)?;

    let (st, body) = send(
        &app,
        "POST",
        &format!("/v1/sessions/{id}/edits"),
        json!({ "text": word }).to_string(),
    )
    .await?;
    let eid = json_of(st, &body, StatusCode::ACCEPTED)?["edit_id"]
        .as_str()
        .unwrap_or_default()
        .to_string();

    // The stream ends after the terminal event, so reading it to the end
    // waits for the edit.
    let (_, stream) = send(
        &app,
        "GET",
        &format!("/v1/sessions/{id}/edits/{eid}/stream"),
        Body::empty(),
    )
    .await?;
    let text = String::from_utf8_lossy(&stream);
    let progress = text.matches("event: progress").count();
    if !text.contains("event: done") {
        return Err(Error::Format(format!("edit did not finish: {text}")));
    }

    let (st, body) = send(&app, "POST", &format!("/v1/sessions/{id}/edits/{eid}/accept"), "{}").await?;
    let summary = json_of(st, &body, StatusCode::OK)?;
    let (_, after) = send(&app, "GET", &format!("/v1/sessions/{id}/image"), Body::empty()).await?;

    if let Some(out) = out {
        std::fs::create_dir_all(out)?;
        std::fs::write(out.join("before.png"), &before)?;
        std::fs::write(out.join("after.png"), &after)?;
        println!("{progress} progress events; history now {}", summary["history"]);
        println!("wrote {}", out.display());
    }
    Ok((progress, after))
}

pub fn run_example() -> Result<()> {
    let quick = OptimizationSchedule::new(vec![Phase::cma(100), Phase::grad(10, 0.02)]);
    let rt = tokio::runtime::Runtime::new()?;
    let (progress, png) = rt.block_on(session("blue", quick, None))?;
    assert!(progress > 0);
    assert!(png.starts_with(b"\x89PNG"));
    Ok(())
}

fn main() -> Result<()> {
    let mut args = std::env::args().skip(1);
    let word = args.next().unwrap_or_else(|| "blue".into());
    let out = PathBuf::from(args.next().unwrap_or_else(|| "target/http_session".into()));
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(session(&word, OptimizationSchedule::default(), Some(&out)))?;
    Ok(())
}
