//! Shared fixtures for the service integration tests and the acceptance
//! runner.
#![allow(dead_code)]

use std::net::TcpListener;
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use paintword::engine::{Engine, EngineConfig, Registry, Transport};
use paintword::generators::{GeneratorModel, InteriorBase, RegionLatent, StyleLayer, StyleStack};
use paintword::io::{encode_mask_png, encode_png};
use paintword::optim::{OptimizationSchedule, Phase};
use paintword::scorers::{Prompt, SemanticScorer, ToyScorer};
use paintword::tensor::{ImageTensor, LatentVector, Mask, Tensor3};
use paintword::{assets, Result};
use paintword_service::adapter::{
    read_frame, spawn, write_frame, AdapterClient, AdapterGenerator, AdapterModels, AdapterScorer, EchoGenerator,
};
use paintword_service::http::{router, AppState};
use serde_json::{json, Value};
use tower::ServiceExt;

pub fn quick_schedule() -> OptimizationSchedule {
    OptimizationSchedule::new(vec![Phase::cma(60), Phase::grad(10, 0.02)])
}

pub fn app_with(registry: Registry) -> Router {
    let config = EngineConfig {
        preview_every: 20,
        ..EngineConfig::default()
    };
    router(AppState::new(Engine::new(registry, config), quick_schedule()))
}

pub fn toy_app() -> Router {
    app_with(assets::toy_registry().unwrap())
}

pub struct Reply {
    pub status: StatusCode,
    pub content_type: Option<String>,
    pub body: Vec<u8>,
}

impl Reply {
    pub fn json(&self) -> Value {
        serde_json::from_slice(&self.body).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&self.body)))
    }

    pub fn code(&self) -> String {
        self.json()["code"].as_str().unwrap_or_default().to_string()
    }
}

pub async fn call(app: &Router, method: &str, uri: &str, body: impl Into<Body>) -> Reply {
    let req = Request::builder().method(method).uri(uri).body(body.into()).unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let content_type = resp
        .headers()
        .get("content-type")
        .map(|v| v.to_str().unwrap().to_string());
    let body = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    Reply {
        status,
        content_type,
        body,
    }
}

pub async fn post_json(app: &Router, uri: &str, body: Value) -> Reply {
    call(app, "POST", uri, body.to_string()).await
}

pub async fn new_session(app: &Router, generator: &str, scorer: &str) -> String {
    let r = post_json(
        app,
        "/v1/sessions",
        json!({ "generator": generator, "scorer": scorer, "seed": 3 }),
    )
    .await;
    assert_eq!(r.status, StatusCode::CREATED, "{}", String::from_utf8_lossy(&r.body));
    r.json()["session_id"].as_str().unwrap().to_string()
}

pub async fn put_mask(app: &Router, id: &str, mask: &Mask) -> Reply {
    call(
        app,
        "PUT",
        &format!("/v1/sessions/{id}/mask"),
        encode_mask_png(mask).unwrap(),
    )
    .await
}

/// Parses a finished event stream into `(event, data)` pairs.
pub fn parse_sse(body: &[u8]) -> Vec<(String, Value)> {
    let text = String::from_utf8(body.to_vec()).unwrap();
    text.split("\n\n")
        .filter_map(|block| {
            let mut name = None;
            let mut data = None;
            for line in block.lines() {
                if let Some(v) = line.strip_prefix("event: ") {
                    name = Some(v.to_string());
                } else if let Some(v) = line.strip_prefix("data: ") {
                    data = Some(serde_json::from_str(v).unwrap());
                }
            }
            Some((name?, data?))
        })
        .collect()
}

pub async fn launch(app: &Router, id: &str, body: Value) -> String {
    let r = post_json(app, &format!("/v1/sessions/{id}/edits"), body).await;
    assert_eq!(r.status, StatusCode::ACCEPTED, "{}", String::from_utf8_lossy(&r.body));
    r.json()["edit_id"].as_str().unwrap().to_string()
}

pub async fn stream(app: &Router, id: &str, eid: &str) -> Vec<(String, Value)> {
    let r = call(
        app,
        "GET",
        &format!("/v1/sessions/{id}/edits/{eid}/stream"),
        Body::empty(),
    )
    .await;
    assert_eq!(r.status, StatusCode::OK);
    assert_eq!(r.content_type.as_deref(), Some("text/event-stream"));
    parse_sse(&r.body)
}

/// Scores NaN everywhere.
pub struct NanScorer;

impl SemanticScorer for NanScorer {
    fn name(&self) -> &str {
        "nan"
    }
    fn score_range(&self) -> (f64, f64) {
        (0.0, 1.0)
    }
    fn score(&self, _x: &ImageTensor, _t: &Prompt) -> Result<f64> {
        Ok(f64::NAN)
    }
}

/// A flat score whose gradient is NaN.
pub struct BadGradientScorer;

impl SemanticScorer for BadGradientScorer {
    fn name(&self) -> &str {
        "bad-gradient"
    }
    fn differentiable(&self) -> bool {
        true
    }
    fn score_range(&self) -> (f64, f64) {
        (0.0, 1.0)
    }
    fn score(&self, _x: &ImageTensor, _t: &Prompt) -> Result<f64> {
        Ok(0.5)
    }
    fn score_grad(&self, x: &ImageTensor, t: &Prompt) -> Result<(f64, Tensor3)> {
        let (c, h, w) = x.shape();
        Ok((
            self.score(x, t)?,
            Tensor3::from_vec(c, h, w, vec![f64::NAN; c * h * w])?,
        ))
    }
}

/// A constant score: CMA sees no signal at all.
pub struct ConstantScorer;

impl SemanticScorer for ConstantScorer {
    fn name(&self) -> &str {
        "constant"
    }
    fn score_range(&self) -> (f64, f64) {
        (0.0, 1.0)
    }
    fn score(&self, _x: &ImageTensor, _t: &Prompt) -> Result<f64> {
        Ok(0.5)
    }
}

pub fn faulty_registry() -> Registry {
    let reg = Registry::new();
    let toy: Arc<dyn GeneratorModel> = Arc::new(assets::toy_shapes().unwrap());
    reg.add_generator("toy-shapes", toy, Transport::InProcessToy).unwrap();
    reg.add_generator("echo", Arc::new(EchoGenerator::new(16)), Transport::InProcessToy)
        .unwrap();
    reg.add_scorer("toy-scorer", Arc::new(ToyScorer::default()), Transport::InProcessToy)
        .unwrap();
    reg.add_scorer("nan", Arc::new(NanScorer), Transport::InProcessToy)
        .unwrap();
    reg.add_scorer("bad-gradient", Arc::new(BadGradientScorer), Transport::InProcessToy)
        .unwrap();
    reg.add_scorer("constant", Arc::new(ConstantScorer), Transport::InProcessToy)
        .unwrap();
    reg
}

/// Runs one edit and returns its single terminal event.
pub async fn failing_edit(app: &Router, generator: &str, scorer: &str, body: Value) -> (String, Value) {
    let id = new_session(app, generator, scorer).await;
    let side = if generator == "echo" { 16 } else { 64 };
    put_mask(app, &id, &Mask::rect(side, side, 0, 0, side / 2, side / 2)).await;
    let r = post_json(app, &format!("/v1/sessions/{id}/edits"), body).await;
    if r.status != StatusCode::ACCEPTED {
        return ("rejected".into(), r.json());
    }
    let eid = r.json()["edit_id"].as_str().unwrap().to_string();
    let events = stream(app, &id, &eid).await;
    let mut terminal: Vec<_> = events.into_iter().filter(|(n, _)| n != "progress").collect();
    assert_eq!(terminal.len(), 1);
    terminal.pop().unwrap()
}

pub fn client(addr: &str) -> Arc<AdapterClient> {
    Arc::new(AdapterClient::new(addr, Duration::from_secs(10)).unwrap())
}

/// The bundled toys behind a TCP adapter on a free port.
pub fn toy_adapter() -> String {
    let models = AdapterModels::new()
        .with_generator("toy-shapes", Arc::new(assets::toy_shapes().unwrap()))
        .with_generator("toy-style", Arc::new(assets::toy_style().unwrap()))
        .with_scorer("toy-scorer", Arc::new(ToyScorer::default()));
    spawn("tcp:127.0.0.1:0", models).unwrap()
}

/// A hand-written peer: answers `hello` with one echo generator and every
/// other request through `reply`. A `None` reply leaves the request
/// unanswered for two seconds.
pub fn fake_adapter(reply: impl Fn(&Value, &[f32]) -> Option<(Value, Vec<f32>)> + Send + Sync + 'static) -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = format!("tcp:{}", listener.local_addr().unwrap());
    thread::spawn(move || {
        let reply = Arc::new(reply);
        for stream in listener.incoming() {
            let mut s = stream.unwrap();
            let reply = reply.clone();
            thread::spawn(move || {
                while let Ok(Some((header, payload))) = read_frame(&mut s) {
                    let answer = if header["op"] == "hello" {
                        Some((
                            json!({
                                "ok": true,
                                "protocol": 1,
                                "models": [{
                                    "name": "echo", "kind": "generator", "latent_dim": 12,
                                    "image_shape": [3, 2, 2],
                                    "interior": { "kind": "feature-map", "channels": 3, "height": 2, "width": 2 }
                                }]
                            }),
                            Vec::new(),
                        ))
                    } else {
                        reply(&header, &payload)
                    };
                    match answer {
                        Some((h, p)) => write_frame(&mut s, &h, &p).unwrap(),
                        None => thread::sleep(Duration::from_secs(2)),
                    }
                }
            });
        }
    });
    addr
}

// Scenarios. Each one asserts as it goes and returns the error codes it
// saw, so the acceptance runner can check that every code is covered.

fn expect(r: &Reply, status: StatusCode, code: &'static str, seen: &mut Vec<&'static str>) {
    assert_eq!(
        (r.status, r.code().as_str()),
        (status, code),
        "{}",
        String::from_utf8_lossy(&r.body)
    );
    seen.push(code);
}

/// Create, mask, edit, stream, accept, fetch and delete.
pub async fn happy_path(app: &Router) {
    let id = new_session(app, "toy-shapes", "toy-scorer").await;

    let img = call(app, "GET", &format!("/v1/sessions/{id}/image"), Body::empty()).await;
    assert_eq!(img.status, StatusCode::OK);
    assert_eq!(img.content_type.as_deref(), Some("image/png"));
    let again = call(app, "GET", &format!("/v1/sessions/{id}/image"), Body::empty()).await;
    assert_eq!(img.body, again.body, "repeated GETs must be byte-identical");

    let m = put_mask(app, &id, &Mask::rect(64, 64, 16, 16, 32, 32)).await;
    assert_eq!(m.status, StatusCode::OK);
    assert!((m.json()["mask_coverage"].as_f64().unwrap() - 0.25).abs() < 1e-12);

    let eid = launch(app, &id, json!({ "text": "red" })).await;
    let events = stream(app, &id, &eid).await;
    let progress: Vec<_> = events.iter().filter(|(n, _)| n == "progress").collect();
    assert!(!progress.is_empty());
    assert!(progress.iter().any(|(_, d)| d["preview_png_b64"].is_string()));
    for (_, d) in &progress {
        for key in ["step", "evals", "loss_sem", "loss_img", "loss_total"] {
            assert!(d.get(key).is_some(), "progress event lacks {key}");
        }
    }
    let terminal: Vec<_> = events.iter().filter(|(n, _)| n != "progress").collect();
    assert_eq!(terminal.len(), 1, "exactly one terminal event");
    let (name, done) = terminal[0];
    assert_eq!(name, "done");
    assert!(done["final_loss"]["total"].is_number());
    let edit_url = done["image_url"].as_str().unwrap().to_string();

    // Replaying the stream after completion yields the same events.
    assert_eq!(stream(app, &id, &eid).await.len(), events.len());

    let accepted = post_json(app, &format!("/v1/sessions/{id}/edits/{eid}/accept"), json!({})).await;
    assert_eq!(accepted.status, StatusCode::OK);
    let summary = accepted.json();
    assert_eq!(summary["history"].as_array().unwrap().len(), 1);

    let edited = call(app, "GET", &edit_url, Body::empty()).await;
    let current = call(app, "GET", &format!("/v1/sessions/{id}/image"), Body::empty()).await;
    assert_eq!(edited.body, current.body);
    assert_ne!(current.body, img.body);

    let got = call(app, "GET", &format!("/v1/sessions/{id}"), Body::empty()).await;
    assert_eq!(got.json(), summary);

    let del = call(app, "DELETE", &format!("/v1/sessions/{id}"), Body::empty()).await;
    assert_eq!(del.status, StatusCode::NO_CONTENT);
    let gone = call(app, "GET", &format!("/v1/sessions/{id}"), Body::empty()).await;
    assert_eq!(
        (gone.status, gone.code().as_str()),
        (StatusCode::NOT_FOUND, "NOT_FOUND")
    );
}

pub async fn validation_errors(app: &Router) -> Vec<&'static str> {
    let mut seen = Vec::new();
    let id = new_session(app, "toy-shapes", "toy-scorer").await;

    let wrong = put_mask(app, &id, &Mask::rect(32, 32, 0, 0, 8, 8)).await;
    expect(&wrong, StatusCode::BAD_REQUEST, "DIMENSION_MISMATCH", &mut seen);

    let empty = put_mask(app, &id, &Mask::empty(64, 64)).await;
    expect(&empty, StatusCode::BAD_REQUEST, "EMPTY_MASK", &mut seen);

    // No mask stored yet.
    let no_mask = post_json(app, &format!("/v1/sessions/{id}/edits"), json!({ "text": "red" })).await;
    expect(&no_mask, StatusCode::BAD_REQUEST, "EMPTY_MASK", &mut seen);

    put_mask(app, &id, &Mask::rect(64, 64, 8, 8, 16, 16)).await;
    let blank = post_json(app, &format!("/v1/sessions/{id}/edits"), json!({ "text": "  " })).await;
    expect(&blank, StatusCode::BAD_REQUEST, "EMPTY_PROMPT", &mut seen);

    let unknown = post_json(app, &format!("/v1/sessions/{id}/edits"), json!({ "text": "zebra" })).await;
    expect(&unknown, StatusCode::BAD_REQUEST, "UNKNOWN_TOKEN", &mut seen);

    let model = post_json(
        app,
        "/v1/sessions",
        json!({ "generator": "nope", "scorer": "toy-scorer" }),
    )
    .await;
    expect(&model, StatusCode::BAD_REQUEST, "UNKNOWN_MODEL", &mut seen);

    let garbage = call(app, "POST", "/v1/sessions", "{not json").await;
    expect(&garbage, StatusCode::BAD_REQUEST, "INVALID_CONFIG", &mut seen);

    let bad_png = call(app, "PUT", &format!("/v1/sessions/{id}/mask"), "not a png").await;
    expect(&bad_png, StatusCode::BAD_REQUEST, "FORMAT_ERROR", &mut seen);

    let lambda = post_json(
        app,
        &format!("/v1/sessions/{id}/edits"),
        json!({ "text": "red", "lambda_img": -1.0 }),
    )
    .await;
    expect(&lambda, StatusCode::BAD_REQUEST, "INVALID_CONFIG", &mut seen);

    let missing = call(app, "GET", "/v1/sessions/s999999/image", Body::empty()).await;
    expect(&missing, StatusCode::NOT_FOUND, "NOT_FOUND", &mut seen);
    let no_edit = call(
        app,
        "GET",
        &format!("/v1/sessions/{id}/edits/e99/stream"),
        Body::empty(),
    )
    .await;
    expect(&no_edit, StatusCode::NOT_FOUND, "NOT_FOUND", &mut seen);
    seen
}

pub async fn conflicts(app: &Router) -> Vec<&'static str> {
    let mut seen = Vec::new();
    let id = new_session(app, "toy-shapes", "toy-scorer").await;
    put_mask(app, &id, &Mask::rect(64, 64, 8, 8, 16, 16)).await;
    let long = json!({ "text": "red", "schedule": { "phases": [{ "method": "cma", "max_evaluations": 1_000_000 }] } });
    let eid = launch(app, &id, long).await;

    let busy = post_json(app, &format!("/v1/sessions/{id}/edits"), json!({ "text": "red" })).await;
    expect(&busy, StatusCode::CONFLICT, "BUSY", &mut seen);

    let early = post_json(app, &format!("/v1/sessions/{id}/edits/{eid}/accept"), json!({})).await;
    expect(&early, StatusCode::CONFLICT, "NOT_COMPLETED", &mut seen);
    let early_image = call(
        app,
        "GET",
        &format!("/v1/sessions/{id}/edits/{eid}/image"),
        Body::empty(),
    )
    .await;
    expect(&early_image, StatusCode::CONFLICT, "NOT_COMPLETED", &mut seen);

    // Deleting the session cancels the running edit.
    call(app, "DELETE", &format!("/v1/sessions/{id}"), Body::empty()).await;

    let id = new_session(app, "toy-shapes", "toy-scorer").await;
    put_mask(app, &id, &Mask::rect(64, 64, 8, 8, 16, 16)).await;
    let eid = launch(app, &id, json!({ "text": "red" })).await;
    stream(app, &id, &eid).await;
    let first = post_json(app, &format!("/v1/sessions/{id}/edits/{eid}/accept"), json!({})).await;
    assert_eq!(first.status, StatusCode::OK);
    let second = post_json(app, &format!("/v1/sessions/{id}/edits/{eid}/accept"), json!({})).await;
    expect(&second, StatusCode::CONFLICT, "ALREADY_ACCEPTED", &mut seen);
    seen
}

/// Optimizer failures surface as `error` events on the edit stream.
pub async fn numerical_failures() -> Vec<&'static str> {
    let app = app_with(faulty_registry());
    let mut seen = Vec::new();

    let cma_only = json!({ "phases": [{ "method": "cma", "max_evaluations": 40 }] });
    let nan = failing_edit(
        &app,
        "toy-shapes",
        "nan",
        json!({ "text": "red", "schedule": cma_only }),
    )
    .await;
    assert_eq!(
        (nan.0.as_str(), &nan.1["code"]),
        ("error", &json!("INVALID_LOSS")),
        "{}",
        nan.1
    );
    seen.push("INVALID_LOSS");

    let grad_only = json!({ "phases": [{ "method": "grad", "max_steps": 5 }] });
    let grad = failing_edit(
        &app,
        "toy-shapes",
        "bad-gradient",
        json!({ "text": "red", "schedule": grad_only }),
    )
    .await;
    assert_eq!(
        (grad.0.as_str(), &grad.1["code"]),
        ("error", &json!("INVALID_GRADIENT")),
        "{}",
        grad.1
    );
    seen.push("INVALID_GRADIENT");

    // A step size near the float limit overflows the candidates, and the
    // covariance update turns non-finite.
    let blowup = json!({
        "phases": [{ "method": "cma", "max_evaluations": 200, "sigma0": 1e308 }],
        "restart_on_breakdown": false,
    });
    let nb = failing_edit(&app, "echo", "constant", json!({ "text": "red", "schedule": blowup })).await;
    assert_eq!(
        (nb.0.as_str(), &nb.1["code"]),
        ("error", &json!("NUMERICAL_BREAKDOWN")),
        "{}",
        nb.1
    );
    seen.push("NUMERICAL_BREAKDOWN");
    seen
}

/// A registry whose generator sits behind a misbehaving adapter peer.
fn adapter_app(addr: &str, timeout: Duration) -> Router {
    let reg = Registry::new();
    let c = Arc::new(AdapterClient::new(addr, timeout).unwrap());
    let g = AdapterGenerator::connect(c, "echo").unwrap();
    reg.add_generator("remote", Arc::new(g), Transport::ExternalAdapter)
        .unwrap();
    reg.add_scorer("toy-scorer", Arc::new(ToyScorer::default()), Transport::InProcessToy)
        .unwrap();
    app_with(reg)
}

/// Adapter faults reach the client as gateway errors.
pub async fn adapter_failures() -> Vec<&'static str> {
    let mut seen = Vec::new();
    let body = json!({ "generator": "remote", "scorer": "toy-scorer", "seed": 1 });

    let short = fake_adapter(|_, payload| Some((json!({ "ok": true, "shape": [3, 2, 2] }), payload[..11].to_vec())));
    let r = post_json(
        &adapter_app(&short, Duration::from_secs(5)),
        "/v1/sessions",
        body.clone(),
    )
    .await;
    expect(&r, StatusCode::BAD_GATEWAY, "ADAPTER_PROTOCOL_ERROR", &mut seen);

    let silent = fake_adapter(|_, _| None);
    let r = post_json(&adapter_app(&silent, Duration::from_millis(200)), "/v1/sessions", body).await;
    expect(&r, StatusCode::GATEWAY_TIMEOUT, "ADAPTER_TIMEOUT", &mut seen);
    seen
}

/// The adapter-wrapped toys render and score exactly like the in-process
/// ones, at wire precision.
pub fn adapter_bitwise() {
    let addr = toy_adapter();
    let c = client(&addr);
    let local = assets::toy_shapes().unwrap();
    let remote = AdapterGenerator::connect(c.clone(), "toy-shapes").unwrap();
    for seed in 0..5 {
        let z = LatentVector::sample(local.info().latent_dim, seed);
        let a = local.generate(&z).unwrap();
        let b = remote.generate(&z).unwrap();
        assert_eq!(a.to_f32_vec(), b.to_f32_vec(), "seed {seed}");
        assert_eq!(encode_png(&a).unwrap(), encode_png(&b).unwrap());
    }

    let local = assets::toy_style().unwrap();
    let remote = AdapterGenerator::connect(c.clone(), "toy-style").unwrap();
    let z = LatentVector::sample(local.info().latent_dim, 9);
    let w = match local.extract_latent(&z).unwrap() {
        RegionLatent::Style(s) => s,
        other => panic!("unexpected interior {other:?}"),
    };
    let quantized: Vec<f64> = w.iter().map(|&v| v as f32 as f64).collect();
    let (_, h, wd) = local.info().image_shape;
    let stack = StyleStack {
        initial: quantized.clone(),
        layers: vec![StyleLayer {
            mask: Mask::rect(h, wd, 4, 4, h / 2, wd / 2),
            style: quantized.iter().map(|v| -v).collect(),
        }],
    };
    let base = InteriorBase::Style(stack);
    let a = local.compose(&base).unwrap();
    let b = remote.compose(&base).unwrap();
    assert_eq!(a.to_f32_vec(), b.to_f32_vec());

    // The scorer sees the image at wire precision.
    let scorer = AdapterScorer::connect(c, "toy-scorer").unwrap();
    let p = Prompt::new("red square").unwrap();
    let wire = ImageTensor::new(a.tensor().map(|v| v as f32 as f64)).unwrap();
    assert_eq!(
        scorer.score(&a, &p).unwrap(),
        ToyScorer::default().score(&wire, &p).unwrap()
    );
    let bad = Prompt::new("zebra").unwrap();
    assert_eq!(scorer.validate(&bad).unwrap_err().code(), "UNKNOWN_TOKEN");
}
