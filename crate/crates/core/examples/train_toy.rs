// Trains the feature-map toy generator on the procedural shapes corpus and
// writes its weights.
//
// ```text
// cargo run --release -p paintword --example train_toy -- [out.bin] [batches]
// ```
//
// Without arguments this regenerates `assets/toy_shapes_feature.bin`, the
// weights the tests, examples and service load as `toy-shapes`.

use std::path::PathBuf;
use std::time::Instant;

use paintword::generators::GeneratorModel;
use paintword::io::encode_png;
use paintword::tensor::LatentVector;
use paintword::train::{train_feature_toy, TrainConfig};

fn main() -> paintword::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("assets/toy_shapes_feature.bin"));
    let mut cfg = TrainConfig::default();
    if let Some(n) = args.next() {
        cfg.batches = n.parse().expect("batches must be an integer");
    }

    let start = Instant::now();
    let outcome = train_feature_toy(&cfg, |batch, loss| {
        println!(
            "batch {batch:6}  mse {loss:.5}  ({:.0}s)",
            start.elapsed().as_secs_f64()
        );
    })?;

    let container = outcome.model.to_container().expect("feature toy serializes");
    container.save(&out)?;
    println!("wrote {}", out.display());

    // A few fresh samples, for eyeballing.
    let preview_dir = std::env::temp_dir().join("paintword-train-samples");
    std::fs::create_dir_all(&preview_dir)?;
    for seed in 0..8 {
        let img = outcome
            .model
            .generate(&LatentVector::sample(cfg.model.latent_dim, seed))?;
        std::fs::write(preview_dir.join(format!("sample_{seed}.png")), encode_png(&img)?)?;
    }
    println!("samples in {}", preview_dir.display());
    Ok(())
}
