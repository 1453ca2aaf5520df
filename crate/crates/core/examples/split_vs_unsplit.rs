// The same region edit with and without the spatial split.
//
// The unsplit run searches `z` directly under the masked score, so every
// pixel is free to move. The split run searches only the interior latent
// under the mask. Both use the same schedule and seed, and the example
// reports how far the outside pixels drifted in each.
//
// Passing `anchored` also adds the outside-mask image term to the unsplit
// objective. On the toy that term wins outright: the search never leaves
// its starting latent.
//
// ```text
// cargo run --release -p paintword --example split_vs_unsplit -- [seeds] [word] [anchored]
// ```

use std::ops::ControlFlow;
use std::sync::Arc;

use paintword::engine::{execute_edit, EditRequest};
use paintword::generators::{GeneratorModel, InteriorBase};
use paintword::harness::{row_metrics, MaskSpec};
use paintword::losses::{quantize_f32, LatentObjective, DEFAULT_LAMBDA_IMG};
use paintword::optim::{run_schedule, OptimizationSchedule, Phase};
use paintword::scorers::{masked_score, DistanceWeights, ImageDistance, Prompt, SemanticScorer, ToyScorer};
use paintword::tensor::LatentVector;
use paintword::{assets, Result};

#[derive(Debug, Clone, Copy)]
pub struct Contrast {
    pub seed: u64,
    pub split_drift: f64,
    pub unsplit_drift: f64,
    pub split_delta: f64,
    pub unsplit_delta: f64,
}

/// Runs both edits; `anchor` is the image-term weight for the unsplit run.
pub fn contrast(word: &str, seed: u64, schedule: &OptimizationSchedule, anchor: Option<f64>) -> Result<Contrast> {
    let g: Arc<dyn GeneratorModel> = Arc::new(assets::toy_shapes()?);
    let c: Arc<dyn SemanticScorer> = Arc::new(ToyScorer::default());
    let prompt = Prompt::new(word)?;
    let schedule = schedule.clone().with_seed(seed);

    let z = LatentVector::sample(g.info().latent_dim, seed);
    let base = InteriorBase::from(g.extract_latent(&z)?);
    let before = g.compose(&base)?;
    let mask = MaskSpec::Background { size: 16, grid: 4 }.resolve(&before)?;
    let s_before = masked_score(c.as_ref(), &before, &mask, &prompt)?;

    let req = EditRequest::new(prompt.clone(), mask.clone()).with_schedule(schedule.clone());
    let split = execute_edit(&g, &c, &base, &before, &req, &mut |_, _| ControlFlow::Continue(()))?.result_image;

    let mut objective = LatentObjective::new(g.clone(), c.clone(), prompt.clone())?.masked(mask.clone())?;
    if let Some(lambda) = anchor {
        objective = objective.anchored(&before, ImageDistance::new(DistanceWeights::default()), lambda)?;
    }
    let r = run_schedule(&schedule, &objective, &z.0, &mut |_, _| ControlFlow::Continue(()))?;
    let unsplit = g.generate(&LatentVector(quantize_f32(&r.best)))?;

    let score = |img| masked_score(c.as_ref(), img, &mask, &prompt);
    let (split_delta, split_drift, _) = row_metrics(&before, &split, &mask, s_before, score(&split)?);
    let (unsplit_delta, unsplit_drift, _) = row_metrics(&before, &unsplit, &mask, s_before, score(&unsplit)?);
    Ok(Contrast {
        seed,
        split_drift,
        unsplit_drift,
        split_delta,
        unsplit_delta,
    })
}

fn report(c: &Contrast) {
    println!(
        "seed {:>2}: split drift {:.4} (+{:.3})   unsplit drift {:.4} (+{:.3})",
        c.seed, c.split_drift, c.split_delta, c.unsplit_drift, c.unsplit_delta
    );
}

pub fn run_example() -> Result<()> {
    let quick = OptimizationSchedule::new(vec![Phase::cma(200)]);
    let c = contrast("red", 0, &quick, None)?;
    report(&c);
    assert!(c.split_drift.is_finite() && c.unsplit_drift.is_finite());
    Ok(())
}

fn main() -> Result<()> {
    let mut args = std::env::args().skip(1);
    let seeds: u64 = args.next().map_or(3, |s| s.parse().expect("seeds must be an integer"));
    let word = args.next().unwrap_or_else(|| "red".into());
    let anchor = (args.next().as_deref() == Some("anchored")).then_some(DEFAULT_LAMBDA_IMG);
    for seed in 0..seeds {
        report(&contrast(&word, seed, &OptimizationSchedule::default(), anchor)?);
    }
    Ok(())
}
