// Use models that live behind the adapter protocol.
//
// Serves the bundled toys from an adapter on a local TCP port, connects to
// it, and runs the same edit once with the in-process models and once
// through the adapter. Adapter generators are black boxes with no
// gradient, so both runs use a CMA-only schedule. Because the wire
// carries f32, the two results are close but not always bit-identical,
// and the example prints the largest pixel difference.
//
// ```text
// cargo run --release -p paintword-service --example remote_models -- [seed]
// ```

use std::ops::ControlFlow;
use std::sync::Arc;
use std::time::Duration;

use paintword::engine::{execute_edit, EditRequest};
use paintword::generators::{GeneratorModel, InteriorBase};
use paintword::optim::{OptimizationSchedule, Phase};
use paintword::scorers::{Prompt, SemanticScorer, ToyScorer};
use paintword::tensor::{ImageTensor, LatentVector, Mask};
use paintword::{assets, Result};
use paintword_service::adapter::{spawn, AdapterClient, AdapterGenerator, AdapterModels, AdapterScorer};

fn run_edit(
    g: Arc<dyn GeneratorModel>,
    c: Arc<dyn SemanticScorer>,
    seed: u64,
    schedule: &OptimizationSchedule,
) -> Result<(ImageTensor, f64)> {
    let z = LatentVector::sample(g.info().latent_dim, seed);
    let base = InteriorBase::from(g.extract_latent(&z)?);
    let before = g.compose(&base)?;
    let (_, h, w) = g.info().image_shape;
    let mask = Mask::rect(h, w, h / 4, w / 4, h / 2, w / 2);
    let req = EditRequest::new(Prompt::new("green")?, mask).with_schedule(schedule.clone().with_seed(seed));
    let outcome = execute_edit(&g, &c, &base, &before, &req, &mut |_, _| ControlFlow::Continue(()))?;
    Ok((outcome.result_image, outcome.final_loss.total))
}

/// Runs the edit locally and remotely; returns the two final losses and
/// the largest per-pixel difference between the results.
pub fn compare(seed: u64, schedule: &OptimizationSchedule, verbose: bool) -> Result<(f64, f64, f64)> {
    let models = AdapterModels::new()
        .with_generator(assets::TOY_SHAPES, Arc::new(assets::toy_shapes()?))
        .with_scorer(assets::TOY_SCORER, Arc::new(ToyScorer::default()));
    let address = spawn("tcp:127.0.0.1:0", models)?;
    let client = Arc::new(AdapterClient::new(&address, Duration::from_secs(30))?);
    if verbose {
        println!("adapter at {address} offers {} models", client.hello()?.len());
    }

    let (local, local_loss) = run_edit(
        Arc::new(assets::toy_shapes()?),
        Arc::new(ToyScorer::default()),
        seed,
        schedule,
    )?;
    let (remote, remote_loss) = run_edit(
        Arc::new(AdapterGenerator::connect(client.clone(), assets::TOY_SHAPES)?),
        Arc::new(AdapterScorer::connect(client, assets::TOY_SCORER)?),
        seed,
        schedule,
    )?;
    let diff = local
        .tensor()
        .data
        .iter()
        .zip(&remote.tensor().data)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    if verbose {
        println!("final loss local {local_loss:+.5}, remote {remote_loss:+.5}; max pixel difference {diff:.2e}");
    }
    Ok((local_loss, remote_loss, diff))
}

pub fn run_example() -> Result<()> {
    let quick = OptimizationSchedule::new(vec![Phase::cma(60)]);
    let (local, remote, _) = compare(1, &quick, false)?;
    assert!(local.is_finite() && remote.is_finite());
    Ok(())
}

fn main() -> Result<()> {
    let seed: u64 = std::env::args()
        .nth(1)
        .map_or(1, |s| s.parse().expect("seed must be an integer"));
    compare(seed, &OptimizationSchedule::new(vec![Phase::cma(3000)]), true)?;
    Ok(())
}
