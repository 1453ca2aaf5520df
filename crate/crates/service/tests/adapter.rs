mod common;

use std::sync::Arc;
use std::time::Duration;

use common::{client, fake_adapter, toy_adapter};
use paintword::engine::{EditRequest, Engine, EngineConfig, Registry, Transport};
use paintword::generators::{make_split_from_base, split_interior, GeneratorModel, InteriorBase};
use paintword::optim::{OptimizationSchedule, Phase};
use paintword::scorers::{Prompt, ToyScorer};
use paintword::tensor::{LatentVector, Mask};
use paintword::{assets, Error};
use paintword_service::adapter::{spawn, AdapterClient, AdapterGenerator, AdapterModels, EchoGenerator};
use serde_json::json;

#[test]
fn echo_adapter_passes_the_handshake() {
    let addr = spawn(
        "tcp:127.0.0.1:0",
        AdapterModels::new().with_generator("echo", Arc::new(EchoGenerator::new(4))),
    )
    .unwrap();
    let g = AdapterGenerator::connect(client(&addr), "echo").unwrap();
    assert_eq!(g.info().latent_dim, 48);
    assert_eq!(g.info().image_shape, (3, 4, 4));
    assert!(!g.differentiable());

    let z = LatentVector((0..48).map(|i| (i as f64 - 24.0) / 16.0).collect());
    let img = g.generate(&z).unwrap();
    let expect = EchoGenerator::new(4).generate(&z).unwrap();
    assert_eq!(img.to_f32_vec(), expect.to_f32_vec());

    let short = LatentVector(vec![0.0; 47]);
    assert_eq!(g.generate(&short).unwrap_err().code(), "DIMENSION_MISMATCH");
}

#[test]
fn unix_socket_transport_works() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("adapter.sock");
    let addr = spawn(
        &format!("unix:{}", path.display()),
        AdapterModels::new().with_generator("echo", Arc::new(EchoGenerator::new(2))),
    )
    .unwrap();
    let g = AdapterGenerator::connect(client(&addr), "echo").unwrap();
    let img = g.generate(&LatentVector(vec![0.25; 12])).unwrap();
    assert!(img.data.iter().all(|&v| v == 0.25));
}

#[test]
fn unknown_remote_model_is_rejected() {
    let addr = toy_adapter();
    let err = AdapterGenerator::connect(client(&addr), "missing").err().unwrap();
    assert_eq!(err.code(), "UNKNOWN_MODEL");
    // A scorer name is not a generator.
    let err = AdapterGenerator::connect(client(&addr), "toy-scorer").err().unwrap();
    assert_eq!(err.code(), "UNKNOWN_MODEL");
}

#[test]
fn wrong_payload_length_is_a_protocol_error() {
    let addr = fake_adapter(|_, payload| Some((json!({ "ok": true, "shape": [3, 2, 2] }), payload[..11].to_vec())));
    let g = AdapterGenerator::connect(client(&addr), "echo").unwrap();
    let err = g.generate(&LatentVector(vec![0.0; 12])).unwrap_err();
    assert_eq!(err.code(), "ADAPTER_PROTOCOL_ERROR");

    let addr = fake_adapter(|_, payload| Some((json!({ "ok": true, "shape": [3, 4, 1] }), payload.to_vec())));
    let g = AdapterGenerator::connect(client(&addr), "echo").unwrap();
    assert_eq!(
        g.generate(&LatentVector(vec![0.0; 12])).unwrap_err().code(),
        "ADAPTER_PROTOCOL_ERROR"
    );

    let addr = fake_adapter(|_, _| Some((json!({ "ok": true, "shape": [3, 2, 2] }), vec![f32::NAN; 12])));
    let g = AdapterGenerator::connect(client(&addr), "echo").unwrap();
    assert_eq!(
        g.generate(&LatentVector(vec![0.0; 12])).unwrap_err().code(),
        "ADAPTER_PROTOCOL_ERROR"
    );
}

#[test]
fn error_replies_keep_their_code() {
    let addr = fake_adapter(|_, _| {
        Some((
            json!({ "ok": false, "code": "INVALID_LOSS", "message": "boom" }),
            Vec::new(),
        ))
    });
    let g = AdapterGenerator::connect(client(&addr), "echo").unwrap();
    assert!(matches!(
        g.generate(&LatentVector(vec![0.0; 12])),
        Err(Error::InvalidLoss)
    ));
}

#[test]
fn silent_peer_times_out_and_the_client_recovers() {
    let calls = Arc::new(std::sync::atomic::AtomicUsize::new(0));
    let seen = calls.clone();
    let addr = fake_adapter(move |_, payload| {
        // The first generate request is never answered.
        if seen.fetch_add(1, std::sync::atomic::Ordering::SeqCst) == 0 {
            None
        } else {
            Some((json!({ "ok": true, "shape": [3, 2, 2] }), payload.to_vec()))
        }
    });
    let c = Arc::new(AdapterClient::new(&addr, Duration::from_millis(200)).unwrap());
    let g = AdapterGenerator::connect(c, "echo").unwrap();
    let z = LatentVector(vec![0.5; 12]);
    assert_eq!(g.generate(&z).unwrap_err().code(), "ADAPTER_TIMEOUT");
    // The stale connection is dropped; a fresh one serves the next call.
    assert!(g.generate(&z).unwrap().data.iter().all(|&v| v == 0.5));
}

#[test]
fn adapter_toy_matches_in_process_toy_bitwise() {
    common::adapter_bitwise();
}

/// Quantizes a feature-map base to what crosses the wire.
fn wire_base(base: &InteriorBase) -> InteriorBase {
    match base {
        InteriorBase::FeatureMap(t) => InteriorBase::FeatureMap(t.map(|v| v as f32 as f64)),
        other => other.clone(),
    }
}

#[test]
fn adapter_generator_runs_a_cma_edit_end_to_end() {
    let addr = toy_adapter();
    let registry = Registry::new();
    let remote = AdapterGenerator::connect(client(&addr), "toy-shapes").unwrap();
    registry
        .add_generator("remote-shapes", Arc::new(remote), Transport::ExternalAdapter)
        .unwrap();
    registry
        .add_scorer("toy-scorer", Arc::new(ToyScorer::default()), Transport::InProcessToy)
        .unwrap();
    let engine = Engine::new(registry, EngineConfig::default());
    let listed = engine.registry.list();
    assert_eq!(listed[0].transport, Transport::ExternalAdapter);
    assert!(!listed[0].differentiable);

    let id = engine
        .create_session("remote-shapes", "toy-scorer", None, Some(4))
        .unwrap();
    let local = assets::toy_shapes().unwrap();
    let z = LatentVector::sample(local.info().latent_dim, 4);
    // Sessions go through extract and compose, so the interior crosses the
    // wire once.
    let interior = wire_base(&InteriorBase::from(local.extract_latent(&z).unwrap()));
    assert_eq!(
        engine.current_image(&id).unwrap().to_f32_vec(),
        local.compose(&interior).unwrap().to_f32_vec()
    );

    let mask = Mask::rect(64, 64, 16, 16, 24, 24);
    let base_before = engine.with_session(&id, |s| s.base().clone()).unwrap();
    let req = EditRequest::new(Prompt::new("red").unwrap(), mask.clone())
        .with_schedule(OptimizationSchedule::new(vec![Phase::cma(120)]));
    let (_, applied) = engine.run_edit(&id, req).unwrap();
    assert!(applied.final_loss.total <= applied.initial_loss.total);

    // The in-process toy, fed the same interior at wire precision, renders
    // the same pixels.
    let split = make_split_from_base(&local, &base_before, &mask).unwrap();
    let interior = wire_base(&split_interior(&split, &applied.result_w).unwrap());
    let expect = local.compose(&interior).unwrap();
    assert_eq!(expect.to_f32_vec(), applied.result_image.to_f32_vec());
}
