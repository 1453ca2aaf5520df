//! Optimizers over flat real vectors: CMA-ES, Adam, and phase schedules that
//! chain them.

mod adam;
mod cma;
mod schedule;

pub use adam::{grad_step, GradOptState};
pub use cma::{cma_ask, cma_init, cma_tell, rank, CmaParams, CmaState};
pub use schedule::{run_schedule, OptimizationResult, OptimizationSchedule, Phase, ProgressRecord, MAX_CMA_DIM};

use crate::error::{Error, Result};
use crate::losses::LossBreakdown;

/// A loss over a flat parameter vector.
pub trait Objective: Sync {
    fn dim(&self) -> usize;

    fn evaluate(&self, x: &[f64]) -> Result<LossBreakdown>;

    fn differentiable(&self) -> bool {
        false
    }

    fn evaluate_grad(&self, _x: &[f64]) -> Result<(LossBreakdown, Vec<f64>)> {
        Err(Error::NotDifferentiable)
    }

    /// Optional realism probe, logged but never optimized.
    fn realism(&self, _x: &[f64]) -> Result<Option<f64>> {
        Ok(None)
    }
}

type LossFn = dyn Fn(&[f64]) -> f64 + Sync;
type GradFn = dyn Fn(&[f64]) -> Vec<f64> + Sync;

/// Wraps plain closures as an [`Objective`], e.g. benchmark functions.
pub struct FnObjective {
    dim: usize,
    f: Box<LossFn>,
    grad: Option<Box<GradFn>>,
}

impl FnObjective {
    pub fn new(dim: usize, f: impl Fn(&[f64]) -> f64 + Sync + 'static) -> Self {
        Self {
            dim,
            f: Box::new(f),
            grad: None,
        }
    }

    pub fn with_grad(mut self, grad: impl Fn(&[f64]) -> Vec<f64> + Sync + 'static) -> Self {
        self.grad = Some(Box::new(grad));
        self
    }
}

impl Objective for FnObjective {
    fn dim(&self) -> usize {
        self.dim
    }

    fn evaluate(&self, x: &[f64]) -> Result<LossBreakdown> {
        Ok(LossBreakdown::plain((self.f)(x)))
    }

    fn differentiable(&self) -> bool {
        self.grad.is_some()
    }

    fn evaluate_grad(&self, x: &[f64]) -> Result<(LossBreakdown, Vec<f64>)> {
        let g = self.grad.as_ref().ok_or(Error::NotDifferentiable)?;
        Ok((LossBreakdown::plain((self.f)(x)), g(x)))
    }
}

pub fn sphere(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

pub fn rosenbrock(x: &[f64]) -> f64 {
    x.windows(2)
        .map(|p| 100.0 * (p[1] - p[0] * p[0]).powi(2) + (1.0 - p[0]).powi(2))
        .sum()
}
