// Paint a word into one region of a generated image.
//
// Draws an image from the bundled shapes generator, picks the plainest
// gray 16x16 patch, and asks for "red" there. Writes before/after PNGs
// and prints how far the masked score moved and how much the rest of the
// image drifted.
//
// ```text
// cargo run --release -p paintword --example edit_region -- [seed] [word] [out-dir]
// ```

use std::ops::ControlFlow;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use paintword::engine::{execute_edit, EditRequest};
use paintword::generators::{GeneratorModel, InteriorBase};
use paintword::harness::{row_metrics, MaskSpec};
use paintword::io::encode_png;
use paintword::optim::{OptimizationSchedule, Phase};
use paintword::scorers::{masked_score, Prompt, SemanticScorer, ToyScorer};
use paintword::tensor::LatentVector;
use paintword::{assets, Result};

/// Masked score before and after, and the outside-mask drift.
pub fn edit(seed: u64, word: &str, schedule: &OptimizationSchedule, out: Option<&Path>) -> Result<(f64, f64, f64)> {
    let g: Arc<dyn GeneratorModel> = Arc::new(assets::toy_shapes()?);
    let c: Arc<dyn SemanticScorer> = Arc::new(ToyScorer::default());
    let prompt = Prompt::new(word)?;

    let z = LatentVector::sample(g.info().latent_dim, seed);
    let base = InteriorBase::from(g.extract_latent(&z)?);
    let before = g.compose(&base)?;
    let mask = MaskSpec::Background { size: 16, grid: 4 }.resolve(&before)?;

    let req = EditRequest::new(prompt.clone(), mask.clone()).with_schedule(schedule.clone().with_seed(seed));
    let started = std::time::Instant::now();
    let outcome = execute_edit(&g, &c, &base, &before, &req, &mut |rec, _| {
        if out.is_some() && rec.step % 50 == 0 {
            println!(
                "{:>5} {:<4} evals {:>5}  total {:+.4}",
                rec.step, rec.phase, rec.evals, rec.loss_total
            );
        }
        ControlFlow::Continue(())
    })?;
    let after = &outcome.result_image;

    let s_before = masked_score(c.as_ref(), &before, &mask, &prompt)?;
    let s_after = masked_score(c.as_ref(), after, &mask, &prompt)?;
    let (delta, drift, _) = row_metrics(&before, after, &mask, s_before, s_after);
    if out.is_some() {
        println!(
        "seed {seed} {word:?}: masked score {s_before:.3} -> {s_after:.3} (+{delta:.3}), outside drift {drift:.4}, {} evals in {:.1}s",
        outcome.optimization.evaluations,
        started.elapsed().as_secs_f64()
    );
    }

    if let Some(out) = out {
        std::fs::create_dir_all(out)?;
        std::fs::write(out.join("before.png"), encode_png(&before)?)?;
        std::fs::write(out.join("after.png"), encode_png(after)?)?;
        std::fs::write(out.join("mask.png"), paintword::io::encode_mask_png(&mask)?)?;
        println!("wrote {}", out.display());
    }
    Ok((s_before, s_after, drift))
}

pub fn run_example() -> Result<()> {
    let quick = OptimizationSchedule::new(vec![Phase::cma(400), Phase::grad(20, 0.02)]);
    let (before, after, _) = edit(0, "red", &quick, None)?;
    assert!(after > before);
    Ok(())
}

fn main() -> Result<()> {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().map_or(0, |s| s.parse().expect("seed must be an integer"));
    let word = args.next().unwrap_or_else(|| "red".into());
    let out = PathBuf::from(args.next().unwrap_or_else(|| "target/edit_region".into()));
    edit(seed, &word, &OptimizationSchedule::default(), Some(&out))?;
    Ok(())
}
