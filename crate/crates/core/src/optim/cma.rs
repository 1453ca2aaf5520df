//! (mu/mu_w, lambda)-CMA-ES with rank-one and rank-mu covariance updates and
//! cumulative step-size adaptation.
//!
//! `ask` is a pure function of the state: candidate noise is drawn from a
//! generator seeded by `(seed, generation)`. `tell` ranks candidates with a
//! stable `(loss, index)` order and uses losses only through that ranking,
//! so any strictly increasing transform of the objective yields the same
//! trajectory.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const EIGEN_FLOOR: f64 = 1e-14;

/// Strategy constants derived from `(dim, lambda)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CmaParams {
    pub population_size: usize,
    pub parent_count: usize,
    pub weights: Vec<f64>,
    pub mu_eff: f64,
    pub c_sigma: f64,
    pub d_sigma: f64,
    pub c_c: f64,
    pub c_1: f64,
    pub c_mu: f64,
    pub chi_n: f64,
}

impl CmaParams {
    pub fn default_population(dim: usize) -> usize {
        4 + (3.0 * (dim as f64).ln()).floor() as usize
    }

    pub fn new(dim: usize, population_size: usize) -> Self {
        let n = dim as f64;
        let lambda = population_size;
        let mu = lambda / 2;
        let raw: Vec<f64> = (1..=mu)
            .map(|i| ((lambda as f64 + 1.0) / 2.0).ln() - (i as f64).ln())
            .collect();
        let sum: f64 = raw.iter().sum();
        let weights: Vec<f64> = raw.iter().map(|w| w / sum).collect();
        let mu_eff = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();

        let c_sigma = (mu_eff + 2.0) / (n + mu_eff + 5.0);
        let d_sigma = 1.0 + 2.0 * (((mu_eff - 1.0) / (n + 1.0)).sqrt() - 1.0).max(0.0) + c_sigma;
        let c_c = (4.0 + mu_eff / n) / (n + 4.0 + 2.0 * mu_eff / n);
        let c_1 = 2.0 / ((n + 1.3).powi(2) + mu_eff);
        let c_mu = (1.0 - c_1).min(2.0 * (mu_eff - 2.0 + 1.0 / mu_eff) / ((n + 2.0).powi(2) + mu_eff));
        let chi_n = n.sqrt() * (1.0 - 1.0 / (4.0 * n) + 1.0 / (21.0 * n * n));
        Self {
            population_size: lambda,
            parent_count: mu,
            weights,
            mu_eff,
            c_sigma,
            d_sigma,
            c_c,
            c_1,
            c_mu,
            chi_n,
        }
    }
}

#[derive(Clone, Debug)]
pub struct CmaState {
    pub dim: usize,
    pub mean: DVector<f64>,
    pub sigma: f64,
    pub covariance: DMatrix<f64>,
    pub path_sigma: DVector<f64>,
    pub path_c: DVector<f64>,
    pub params: CmaParams,
    pub generation: u64,
    pub seed: u64,
    /// Lower Cholesky factor of `covariance`, `None` after a breakdown.
    chol: Option<DMatrix<f64>>,
    /// `C^{-1/2}` of the current covariance.
    inv_sqrt: DMatrix<f64>,
}

impl CmaState {
    pub fn population_size(&self) -> usize {
        self.params.population_size
    }

    pub fn parent_count(&self) -> usize {
        self.params.parent_count
    }

    pub fn weights(&self) -> &[f64] {
        &self.params.weights
    }

    /// `sigma * sqrt(max_i C_ii)`, the largest coordinate-wise step.
    pub fn max_step(&self) -> f64 {
        let d = (0..self.dim).map(|i| self.covariance[(i, i)]).fold(0.0, f64::max);
        self.sigma * d.sqrt()
    }

    pub fn is_healthy(&self) -> bool {
        self.chol.is_some()
    }
}

pub fn cma_init(dim: usize, mean0: &[f64], sigma0: f64, population_size: Option<usize>, seed: u64) -> Result<CmaState> {
    if dim == 0 || mean0.len() != dim {
        return Err(Error::InvalidConfig(format!(
            "CMA dimension {dim} with mean of length {}",
            mean0.len()
        )));
    }
    if !(sigma0 > 0.0 && sigma0.is_finite()) {
        return Err(Error::InvalidConfig(format!("sigma0 must be positive, got {sigma0}")));
    }
    if mean0.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidConfig("initial mean is not finite".into()));
    }
    let lambda = population_size.unwrap_or_else(|| CmaParams::default_population(dim));
    if lambda < 4 {
        return Err(Error::InvalidConfig(format!(
            "population size must be >= 4, got {lambda}"
        )));
    }
    Ok(CmaState {
        dim,
        mean: DVector::from_column_slice(mean0),
        sigma: sigma0,
        covariance: DMatrix::identity(dim, dim),
        path_sigma: DVector::zeros(dim),
        path_c: DVector::zeros(dim),
        params: CmaParams::new(dim, lambda),
        generation: 0,
        seed,
        chol: Some(DMatrix::identity(dim, dim)),
        inv_sqrt: DMatrix::identity(dim, dim),
    })
}

fn generation_seed(seed: u64, generation: u64) -> u64 {
    // splitmix64 finalizer over the pair
    let mut x = seed ^ generation.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Draws `lambda` candidates from `N(mean, sigma^2 C)`.
pub fn cma_ask(state: &CmaState) -> Result<Vec<Vec<f64>>> {
    let chol = state
        .chol
        .as_ref()
        .ok_or_else(|| Error::NumericalBreakdown("covariance is not positive definite".into()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(generation_seed(state.seed, state.generation));
    let n = state.dim;
    let out = (0..state.params.population_size)
        .map(|_| {
            let z = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
            let x = &state.mean + state.sigma * (chol * z);
            x.as_slice().to_vec()
        })
        .collect();
    Ok(out)
}

/// Ranks candidates by loss with ties broken by index.
pub fn rank(losses: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..losses.len()).collect();
    order.sort_by(|&a, &b| losses[a].total_cmp(&losses[b]).then(a.cmp(&b)));
    order
}

pub fn cma_tell(state: &CmaState, candidates: &[Vec<f64>], losses: &[f64]) -> Result<CmaState> {
    let p = &state.params;
    let n = state.dim;
    if candidates.len() != p.population_size || losses.len() != p.population_size {
        return Err(Error::dims(format!(
            "expected {} candidates and losses, got {} and {}",
            p.population_size,
            candidates.len(),
            losses.len()
        )));
    }
    if losses.iter().any(|l| l.is_nan()) {
        return Err(Error::InvalidLoss);
    }
    if candidates.iter().any(|c| c.len() != n) {
        return Err(Error::dims("candidate length differs from CMA dimension"));
    }
    let order = rank(losses);

    // Steps y_i = (x_i - m) / sigma of the selected parents, best first.
    let steps: Vec<DVector<f64>> = order[..p.parent_count]
        .iter()
        .map(|&i| (DVector::from_column_slice(&candidates[i]) - &state.mean) / state.sigma)
        .collect();
    let mut y_w = DVector::zeros(n);
    for (w, y) in p.weights.iter().zip(&steps) {
        y_w.axpy(*w, y, 1.0);
    }

    let mut next = state.clone();
    next.mean = &state.mean + state.sigma * &y_w;

    let cs = p.c_sigma;
    next.path_sigma = (1.0 - cs) * &state.path_sigma + (cs * (2.0 - cs) * p.mu_eff).sqrt() * (&state.inv_sqrt * &y_w);
    let gen = state.generation + 1;
    let ps_norm = next.path_sigma.norm();
    let correction = (1.0 - (1.0 - cs).powi(2 * gen as i32)).sqrt();
    let h_sigma = ps_norm / correction / p.chi_n < 1.4 + 2.0 / (n as f64 + 1.0);

    let cc = p.c_c;
    let hs = if h_sigma { 1.0 } else { 0.0 };
    next.path_c = (1.0 - cc) * &state.path_c + hs * (cc * (2.0 - cc) * p.mu_eff).sqrt() * &y_w;

    let delta = (1.0 - hs) * cc * (2.0 - cc);
    let mut cov = (1.0 - p.c_1 - p.c_mu + p.c_1 * delta) * &state.covariance;
    cov.ger(p.c_1, &next.path_c, &next.path_c, 1.0);
    for (w, y) in p.weights.iter().zip(&steps) {
        cov.ger(p.c_mu * w, y, y, 1.0);
    }
    // Keep exact symmetry against round-off.
    let cov = (&cov + cov.transpose()) * 0.5;

    next.sigma = state.sigma * ((cs / p.d_sigma) * (ps_norm / p.chi_n - 1.0)).exp();
    next.generation = gen;
    next.covariance = cov;
    refresh_factors(&mut next);
    Ok(next)
}

/// Recomputes the Cholesky factor and `C^{-1/2}`, repairing tiny or
/// negative eigenvalues by flooring them at `1e-14`.
fn refresh_factors(s: &mut CmaState) {
    let finite = s.covariance.iter().all(|v| v.is_finite()) && s.sigma.is_finite() && s.sigma > 0.0;
    if !finite {
        s.chol = None;
        return;
    }
    let eig = SymmetricEigen::new(s.covariance.clone());
    let mut values = eig.eigenvalues.clone();
    if values.iter().any(|&v| v < EIGEN_FLOOR) {
        values.iter_mut().for_each(|v| *v = v.max(EIGEN_FLOOR));
        let repaired = &eig.eigenvectors * DMatrix::from_diagonal(&values) * eig.eigenvectors.transpose();
        s.covariance = (&repaired + repaired.transpose()) * 0.5;
    }
    let inv_sqrt_d = values.map(|v| 1.0 / v.sqrt());
    s.inv_sqrt = &eig.eigenvectors * DMatrix::from_diagonal(&inv_sqrt_d) * eig.eigenvectors.transpose();
    s.chol = s.covariance.clone().cholesky().map(|c| c.l());
}
