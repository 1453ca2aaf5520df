// The edit-session lifecycle without the HTTP layer: create, mask, edit,
// accept, save to disk, load back and replay the history.
//
// ```text
// cargo run --release -p paintword --example sessions
// ```

use paintword::engine::{EditRequest, Engine, EngineConfig};
use paintword::optim::{OptimizationSchedule, Phase};
use paintword::scorers::Prompt;
use paintword::tensor::Mask;
use paintword::{assets, Result};

pub fn run_example() -> Result<()> {
    let engine = Engine::new(assets::toy_registry()?, EngineConfig::default());
    let id = engine.create_session(assets::TOY_SHAPES, assets::TOY_SCORER, None, Some(11))?;
    let schedule = OptimizationSchedule::new(vec![Phase::cma(200), Phase::grad(20, 0.02)]).with_seed(11);

    // The second edit reuses the stored mask.
    engine.set_mask(&id, Mask::rect(64, 64, 4, 4, 16, 16))?;
    for word in ["red", "blue"] {
        let req = EditRequest {
            mask: None,
            ..EditRequest::new(Prompt::new(word)?, Mask::full(64, 64)).with_schedule(schedule.clone())
        };
        let handle = engine.begin_edit(&id, req)?;
        handle.wait();
        let summary = engine.accept_edit(&id, &handle.edit_id)?;
        let last = summary.history.last().expect("accepted edit is recorded");
        println!(
            "{word}: accepted {} after {} evals, loss {:+.4}",
            last.edit_id, last.evaluations, last.final_loss.total
        );
    }

    let dir = tempfile_dir()?;
    engine.save_session(&id, &dir)?;
    let restored = engine.load_session(&dir)?;
    let image = engine.current_image(&id)?;
    assert_eq!(engine.current_image(&restored)?.data, image.data);
    assert_eq!(engine.replay(&restored)?.data, image.data);
    println!(
        "session {id} saved to {}, reloaded as {restored}, replay matches",
        dir.display()
    );
    std::fs::remove_dir_all(dir)?;
    Ok(())
}

fn tempfile_dir() -> Result<std::path::PathBuf> {
    let dir = std::env::temp_dir().join(format!("paintword-session-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn main() -> Result<()> {
    run_example()
}
