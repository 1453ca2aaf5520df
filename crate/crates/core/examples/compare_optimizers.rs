// Gradient-only against CMA-then-gradient at a matched evaluation budget.
//
// Writes the comparison report as JSON, CSV and Markdown. The summary
// counts on how many seeds each variant came out ahead.
//
// ```text
// cargo run --release -p paintword --example compare_optimizers -- [seeds] [out-dir]
// ```

use std::path::{Path, PathBuf};

use paintword::harness::{
    run_optimizer_comparison, write_tables, AnyReport, ComparisonReport, ComparisonSpec, TableFormat,
};
use paintword::optim::{OptimizationSchedule, Phase};
use paintword::{assets, Result};

pub fn compare(spec: &ComparisonSpec, out: Option<&Path>) -> Result<ComparisonReport> {
    let report = run_optimizer_comparison(spec, &assets::toy_registry()?)?;
    for pair in &report.pairs {
        println!(
            "seed {}: grad-only loss {:+.4} realism {:+.4} | cma-then-grad loss {:+.4} realism {:+.4}",
            pair.seed,
            pair.grad_only.final_loss.semantic,
            pair.grad_only.realism_proxy,
            pair.cma_then_grad.final_loss.semantic,
            pair.cma_then_grad.realism_proxy
        );
    }
    let s = &report.summary;
    println!(
        "gradient-only lower semantic loss on {}/{}; CMA-then-gradient higher realism on {}/{}",
        s.grad_lower_semantic_loss, s.seeds, s.cma_higher_realism, s.seeds
    );
    if let Some(dir) = out {
        for path in write_tables(&AnyReport::from(report.clone()), dir, &TableFormat::ALL)? {
            println!("wrote {}", path.display());
        }
    }
    Ok(report)
}

pub fn run_example() -> Result<()> {
    let spec = ComparisonSpec {
        seeds: vec![0],
        schedule: OptimizationSchedule::new(vec![Phase::cma(200), Phase::grad(20, 0.02)]),
        ..ComparisonSpec::default()
    };
    let report = compare(&spec, None)?;
    assert_eq!(report.pairs[0].grad_only.budget, report.pairs[0].cma_then_grad.budget);
    Ok(())
}

fn main() -> Result<()> {
    let mut args = std::env::args().skip(1);
    let seeds: u64 = args.next().map_or(5, |s| s.parse().expect("seeds must be an integer"));
    let out = PathBuf::from(args.next().unwrap_or_else(|| "target/compare_optimizers".into()));
    let spec = ComparisonSpec {
        seeds: (0..seeds).collect(),
        ..ComparisonSpec::default()
    };
    compare(&spec, Some(&out))?;
    Ok(())
}
