use paintword::engine::{EditEvent, EditRequest, EditStatus, Engine, EngineConfig, SessionState};
use paintword::io::Container;
use paintword::optim::{OptimizationSchedule, Phase};
use paintword::scorers::Prompt;
use paintword::tensor::Mask;
use paintword::{assets, Error};

fn engine() -> Engine {
    let config = EngineConfig {
        preview_every: 10,
        ..EngineConfig::default()
    };
    Engine::new(assets::toy_registry().unwrap(), config)
}

fn quick(word: &str, mask: Mask) -> EditRequest {
    let schedule = OptimizationSchedule::new(vec![Phase::cma(80), Phase::grad(10, 0.02)]).with_seed(5);
    EditRequest::new(Prompt::new(word).unwrap(), mask).with_schedule(schedule)
}

fn square(y: usize, x: usize) -> Mask {
    Mask::rect(64, 64, y, x, 16, 16)
}

#[test]
fn edit_lifecycle_reaches_accepted() {
    let e = engine();
    let id = e
        .create_session(assets::TOY_SHAPES, assets::TOY_SCORER, None, Some(1))
        .unwrap();
    let original = e.current_image(&id).unwrap();
    let handle = e.begin_edit(&id, quick("red", square(8, 8))).unwrap();
    assert_eq!(handle.wait(), EditStatus::Completed);

    let events = handle.events();
    assert!(matches!(events.last(), Some(EditEvent::Done { .. })));
    assert!(events.iter().any(|ev| matches!(ev, EditEvent::Progress { .. })));
    // Nothing changes until the edit is accepted.
    assert_eq!(e.current_image(&id).unwrap().data, original.data);

    let summary = e.accept_edit(&id, &handle.edit_id).unwrap();
    assert_eq!(summary.state, SessionState::Idle);
    assert_eq!(summary.history.len(), 1);
    let result = handle.result().unwrap();
    assert_eq!(e.current_image(&id).unwrap().data, result.result_image.data);
    assert!(result.final_loss.total <= result.initial_loss.total);
    assert!(matches!(
        e.accept_edit(&id, &handle.edit_id),
        Err(Error::AlreadyAccepted)
    ));
}

#[test]
fn a_second_edit_waits_for_the_first() {
    let e = engine();
    let id = e
        .create_session(assets::TOY_SHAPES, assets::TOY_SCORER, None, Some(2))
        .unwrap();
    let long = EditRequest::new(Prompt::new("red").unwrap(), square(0, 0))
        .with_schedule(OptimizationSchedule::new(vec![Phase::cma(1_000_000)]));
    let handle = e.begin_edit(&id, long).unwrap();
    assert!(matches!(
        e.begin_edit(&id, quick("blue", square(0, 0))),
        Err(Error::Busy)
    ));
    assert!(matches!(e.accept_edit(&id, &handle.edit_id), Err(Error::NotCompleted)));
    e.delete_session(&id).unwrap();
    assert_eq!(handle.wait(), EditStatus::Failed);
    assert!(matches!(handle.final_event(), Some(EditEvent::Error { code, .. }) if code == "CANCELLED"));
    assert!(matches!(e.summary(&id), Err(Error::NotFound(_))));
}

#[test]
fn revert_discards_the_result() {
    let e = engine();
    let id = e
        .create_session(assets::TOY_SHAPES, assets::TOY_SCORER, None, Some(3))
        .unwrap();
    let original = e.current_image(&id).unwrap();
    let handle = e.begin_edit(&id, quick("green", square(16, 16))).unwrap();
    handle.wait();
    let summary = e.revert_edit(&id, &handle.edit_id).unwrap();
    assert!(summary.history.is_empty());
    assert_eq!(e.current_image(&id).unwrap().data, original.data);
    assert!(matches!(e.accept_edit(&id, &handle.edit_id), Err(Error::NotCompleted)));
}

#[test]
fn history_replays_and_survives_a_round_trip_to_disk() {
    let e = engine();
    for generator in [assets::TOY_SHAPES, assets::TOY_STYLE] {
        let id = e.create_session(generator, assets::TOY_SCORER, None, Some(4)).unwrap();
        for (word, mask) in [
            ("red", square(0, 0)),
            ("blue circle", square(24, 32)),
            ("yellow", square(40, 8)),
        ] {
            let (eid, _) = e.run_edit(&id, quick(word, mask)).unwrap();
            e.accept_edit(&id, &eid).unwrap();
        }
        let current = e.current_image(&id).unwrap();
        assert_eq!(e.replay(&id).unwrap().data, current.data, "{generator}: replay");

        let dir = tempfile::tempdir().unwrap();
        e.save_session(&id, dir.path()).unwrap();
        let restored = e.load_session(dir.path()).unwrap();
        assert_ne!(restored, id);
        assert_eq!(
            e.current_image(&restored).unwrap().data,
            current.data,
            "{generator}: reload"
        );
        assert_eq!(e.summary(&restored).unwrap().history.len(), 3);

        // A tampered result no longer reproduces its stored image.
        let path = dir.path().join("edit-002-w.bin");
        let mut c = Container::load(&path).unwrap();
        c.arrays[0].values.iter_mut().for_each(|v| *v += 0.5);
        c.save(&path).unwrap();
        assert_eq!(e.load_session(dir.path()).unwrap_err().code(), "FORMAT_ERROR");
    }
}

#[test]
fn accepted_content_stays_frozen_under_later_edits() {
    let e = engine();
    let id = e
        .create_session(assets::TOY_SHAPES, assets::TOY_SCORER, None, Some(6))
        .unwrap();
    let (eid, first) = e.run_edit(&id, quick("red", square(0, 0))).unwrap();
    e.accept_edit(&id, &eid).unwrap();
    // The second mask is far from the first, beyond the generator's
    // receptive field, so the first patch is untouched.
    let (eid, second) = e.run_edit(&id, quick("blue", square(48, 48))).unwrap();
    e.accept_edit(&id, &eid).unwrap();
    let plane = 64 * 64;
    for c in 0..3 {
        for y in 0..16 {
            for x in 0..16 {
                let p = c * plane + y * 64 + x;
                assert_eq!(first.result_image.data[p], second.result_image.data[p]);
            }
        }
    }
}

#[test]
fn edit_errors_are_reported_before_work_starts() {
    let e = engine();
    let id = e
        .create_session(assets::TOY_SHAPES, assets::TOY_SCORER, None, Some(7))
        .unwrap();
    let code = |r: paintword::Result<_>| r.map(|_: std::sync::Arc<_>| ()).unwrap_err().code();
    assert_eq!(code(e.begin_edit(&id, quick("zebra", square(0, 0)))), "UNKNOWN_TOKEN");
    assert_eq!(code(e.begin_edit(&id, quick("red", Mask::empty(64, 64)))), "EMPTY_MASK");
    assert_eq!(
        code(e.begin_edit(&id, quick("red", Mask::full(32, 32)))),
        "DIMENSION_MISMATCH"
    );
    assert_eq!(
        code(e.begin_edit(&id, quick("red", square(0, 0)).with_lambda(f64::NAN))),
        "INVALID_CONFIG"
    );
    assert_eq!(
        e.create_session("missing", assets::TOY_SCORER, None, None)
            .unwrap_err()
            .code(),
        "UNKNOWN_MODEL"
    );
    // The session is still usable.
    assert!(e.begin_edit(&id, quick("red", square(0, 0))).is_ok());
}
