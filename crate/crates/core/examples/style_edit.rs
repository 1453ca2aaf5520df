// Region edit on the style-vector toy, followed by a second edit that
// stacks on top of the first.
//
// The style toy has no spatial latent, so the masked region gets its own
// style vector and the two are blended per location by the mask.
//
// ```text
// cargo run --release -p paintword --example style_edit -- [seed] [out-dir]
// ```

use std::ops::ControlFlow;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use paintword::engine::{execute_edit, EditRequest};
use paintword::generators::{GeneratorModel, InteriorBase};
use paintword::io::encode_png;
use paintword::optim::{OptimizationSchedule, Phase};
use paintword::scorers::{masked_score, Prompt, SemanticScorer, ToyScorer};
use paintword::tensor::{LatentVector, Mask};
use paintword::{assets, Result};

pub fn two_edits(seed: u64, schedule: &OptimizationSchedule, out: Option<&Path>) -> Result<Vec<f64>> {
    let g: Arc<dyn GeneratorModel> = Arc::new(assets::toy_style()?);
    let c: Arc<dyn SemanticScorer> = Arc::new(ToyScorer::default());
    let (_, h, w) = g.info().image_shape;

    let z = LatentVector::sample(g.info().latent_dim, seed);
    let mut base = InteriorBase::from(g.extract_latent(&z)?);
    let mut image = g.compose(&base)?;
    let original = image.clone();
    let steps = [
        ("blue", Mask::rect(h, w, 0, 0, h / 2, w / 2)),
        ("yellow", Mask::rect(h, w, h / 2, w / 2, h / 2, w / 2)),
    ];

    let mut gains = Vec::new();
    for (word, mask) in steps {
        let prompt = Prompt::new(word)?;
        let req = EditRequest::new(prompt.clone(), mask.clone()).with_schedule(schedule.clone().with_seed(seed));
        let before = masked_score(c.as_ref(), &image, &mask, &prompt)?;
        let outcome = execute_edit(&g, &c, &base, &image, &req, &mut |_, _| ControlFlow::Continue(()))?;
        base = outcome.new_base;
        image = outcome.result_image;
        let after = masked_score(c.as_ref(), &image, &mask, &prompt)?;
        println!("{word:>6}: masked score {before:.3} -> {after:.3}");
        gains.push(after - before);
    }

    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("before.png"), encode_png(&original)?)?;
        std::fs::write(dir.join("after.png"), encode_png(&image)?)?;
        println!("wrote {}", dir.display());
    }
    Ok(gains)
}

pub fn run_example() -> Result<()> {
    let quick = OptimizationSchedule::new(vec![Phase::cma(300)]);
    let gains = two_edits(1, &quick, None)?;
    assert!(gains.iter().all(|g| *g >= 0.0));
    Ok(())
}

fn main() -> Result<()> {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().map_or(1, |s| s.parse().expect("seed must be an integer"));
    let out = PathBuf::from(args.next().unwrap_or_else(|| "target/style_edit".into()));
    two_edits(seed, &OptimizationSchedule::default(), Some(&out))?;
    Ok(())
}
