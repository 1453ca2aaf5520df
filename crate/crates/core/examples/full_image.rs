// Generate a whole image for a prompt by searching the latent space.
//
// Each seed starts from its own latent draw and runs the optimization
// schedule against the analytic scorer; the best image is written as PNG.
//
// ```text
// cargo run --release -p paintword --example full_image -- ["red square"] [seeds] [out-dir]
// ```

use std::path::Path;
use std::sync::Arc;

use paintword::engine::full_image_generate;
use paintword::generators::GeneratorModel;
use paintword::io::encode_png;
use paintword::optim::{OptimizationSchedule, Phase};
use paintword::scorers::{Prompt, SemanticScorer, ToyScorer};
use paintword::tensor::LatentVector;
use paintword::{assets, Result};

/// Best score reached for each seed.
pub fn generate(prompt: &str, seeds: &[u64], schedule: &OptimizationSchedule, out: Option<&Path>) -> Result<Vec<f64>> {
    let g: Arc<dyn GeneratorModel> = Arc::new(assets::toy_shapes()?);
    let c: Arc<dyn SemanticScorer> = Arc::new(ToyScorer::default());
    let prompt = Prompt::new(prompt)?;
    let mut scores = Vec::new();
    for &seed in seeds {
        let start = g.generate(&LatentVector::sample(g.info().latent_dim, seed))?;
        let r = full_image_generate(g.clone(), c.clone(), &prompt, &schedule.clone().with_seed(seed), seed)?;
        if out.is_some() {
            println!(
                "seed {seed}: score {:.3} -> {:.3} in {} evals",
                c.score(&start, &prompt)?,
                r.score,
                r.evaluations
            );
        }
        if let Some(dir) = out {
            std::fs::create_dir_all(dir)?;
            std::fs::write(dir.join(format!("seed{seed}.png")), encode_png(&r.image)?)?;
        }
        scores.push(r.score);
    }
    Ok(scores)
}

pub fn run_example() -> Result<()> {
    let quick = OptimizationSchedule::new(vec![Phase::cma(300), Phase::grad(30, 0.02)]);
    let scores = generate("red square", &[0], &quick, None)?;
    assert!(scores[0] > 0.0);
    Ok(())
}

fn main() -> Result<()> {
    let mut args = std::env::args().skip(1);
    let prompt = args.next().unwrap_or_else(|| "red square".into());
    let seeds: u64 = args.next().map_or(3, |s| s.parse().expect("seeds must be an integer"));
    let out = args.next().unwrap_or_else(|| "target/full_image".into());
    let seeds: Vec<u64> = (0..seeds).collect();
    generate(&prompt, &seeds, &OptimizationSchedule::default(), Some(Path::new(&out)))?;
    println!("wrote {out}");
    Ok(())
}
