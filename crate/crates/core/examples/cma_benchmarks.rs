// CMA-ES on the sphere and Rosenbrock functions through the plain
// ask/tell interface.
//
// ```text
// cargo run --release -p paintword --example cma_benchmarks
// ```

use paintword::optim::{cma_ask, cma_init, cma_tell, rosenbrock, sphere};
use paintword::Result;

/// Minimizes `f` until `target` or `budget`; returns (best, evaluations).
pub fn minimize(
    f: fn(&[f64]) -> f64,
    mean0: &[f64],
    sigma0: f64,
    seed: u64,
    budget: usize,
    target: f64,
) -> Result<(f64, usize)> {
    let mut state = cma_init(mean0.len(), mean0, sigma0, None, seed)?;
    let mut best = f64::INFINITY;
    let mut evals = 0;
    while evals + state.population_size() <= budget && best > target {
        let candidates = cma_ask(&state)?;
        let losses: Vec<f64> = candidates.iter().map(|x| f(x)).collect();
        evals += losses.len();
        best = losses.iter().copied().fold(best, f64::min);
        state = cma_tell(&state, &candidates, &losses)?;
    }
    Ok((best, evals))
}

pub fn run_example() -> Result<()> {
    for seed in 0..3 {
        let (best, evals) = minimize(sphere, &[1.0; 10], 0.5, seed, 5000, 1e-8)?;
        println!("sphere-10     seed {seed}: {best:.2e} after {evals} evals");
        assert!(best <= 1e-8);
    }
    let (best, evals) = minimize(rosenbrock, &[0.0; 5], 0.5, 0, 20000, 1e-10)?;
    println!("rosenbrock-5  seed 0: {best:.2e} after {evals} evals");
    Ok(())
}

fn main() -> Result<()> {
    run_example()
}
