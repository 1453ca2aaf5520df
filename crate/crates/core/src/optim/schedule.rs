use std::ops::ControlFlow;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{cma_ask, cma_init, cma_tell, grad_step, CmaState, GradOptState, Objective};
use crate::error::{Error, Result};
use crate::losses::LossBreakdown;

/// CMA keeps a dense `dim x dim` covariance; above this size only gradient
/// phases are accepted.
pub const MAX_CMA_DIM: usize = 4096;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum Phase {
    Cma {
        max_evaluations: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        population_size: Option<usize>,
        /// Absolute initial step size; defaults to `sigma0_scale * std(w)`.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        sigma0: Option<f64>,
        #[serde(default = "default_sigma_scale")]
        sigma0_scale: f64,
    },
    Grad {
        max_steps: usize,
        #[serde(default = "default_step_size")]
        step_size: f64,
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_epsilon")]
        epsilon: f64,
    },
}

fn default_sigma_scale() -> f64 {
    0.5
}
fn default_step_size() -> f64 {
    0.02
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_epsilon() -> f64 {
    1e-8
}

impl Phase {
    pub fn cma(max_evaluations: usize) -> Self {
        Phase::Cma {
            max_evaluations,
            population_size: None,
            sigma0: None,
            sigma0_scale: default_sigma_scale(),
        }
    }

    pub fn grad(max_steps: usize, step_size: f64) -> Self {
        Phase::Grad {
            max_steps,
            step_size,
            beta1: default_beta1(),
            beta2: default_beta2(),
            epsilon: default_epsilon(),
        }
    }

    pub fn method(&self) -> &'static str {
        match self {
            Phase::Cma { .. } => "cma",
            Phase::Grad { .. } => "grad",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizationSchedule {
    pub phases: Vec<Phase>,
    pub stop_tolerance: f64,
    pub wall_clock_budget_s: f64,
    /// Seeds every stochastic phase; part of an edit's replay identity.
    pub seed: u64,
    pub restart_on_breakdown: bool,
    pub realism_probe: bool,
}

impl Default for OptimizationSchedule {
    /// Region-edit default: CMA for 3000 evaluations, then 300 Adam steps.
    fn default() -> Self {
        Self {
            phases: vec![Phase::cma(3000), Phase::grad(300, 0.02)],
            stop_tolerance: 1e-12,
            wall_clock_budget_s: 3600.0,
            seed: 0,
            restart_on_breakdown: false,
            realism_probe: false,
        }
    }
}

impl OptimizationSchedule {
    pub fn new(phases: Vec<Phase>) -> Self {
        Self {
            phases,
            ..Self::default()
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_realism(mut self) -> Self {
        self.realism_probe = true;
        self
    }

    /// Total evaluation budget, counting one evaluation per gradient step
    /// plus the initial and per-grad-phase final evaluations.
    pub fn budget(&self) -> usize {
        1 + self
            .phases
            .iter()
            .map(|p| match p {
                Phase::Cma { max_evaluations, .. } => *max_evaluations,
                Phase::Grad { max_steps, .. } => max_steps + 1,
            })
            .sum::<usize>()
    }

    pub fn validate(&self, dim: usize, differentiable: bool) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.phases.is_empty() {
            return bad("schedule has no phases".into());
        }
        if !(self.wall_clock_budget_s > 0.0) || !(self.stop_tolerance >= 0.0) {
            return bad("wall-clock budget must be positive and stop tolerance non-negative".into());
        }
        for p in &self.phases {
            match p {
                Phase::Cma {
                    max_evaluations,
                    population_size,
                    sigma0,
                    sigma0_scale,
                } => {
                    if *max_evaluations == 0 {
                        return bad("cma phase needs a positive evaluation budget".into());
                    }
                    if dim > MAX_CMA_DIM {
                        return bad(format!(
                            "cma phase over {dim} dimensions exceeds the limit of {MAX_CMA_DIM}"
                        ));
                    }
                    if population_size.is_some_and(|l| l < 4) {
                        return bad("cma population must be at least 4".into());
                    }
                    if sigma0.is_some_and(|s| !(s > 0.0)) || !(*sigma0_scale > 0.0) {
                        return bad("cma sigma0 must be positive".into());
                    }
                }
                Phase::Grad {
                    max_steps,
                    step_size,
                    beta1,
                    beta2,
                    epsilon,
                } => {
                    if *max_steps == 0 {
                        return bad("grad phase needs a positive step budget".into());
                    }
                    if !differentiable {
                        return bad("grad phase requires a differentiable objective".into());
                    }
                    GradOptState::with_betas(0, *step_size, *beta1, *beta2, *epsilon).validate()?;
                }
            }
        }
        Ok(())
    }
}

/// One line of the progress log. Losses are best-so-far values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProgressRecord {
    pub phase: String,
    pub step: usize,
    pub evals: usize,
    pub loss_sem: f64,
    pub loss_img: f64,
    pub loss_total: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub realism_proxy: Option<f64>,
    pub elapsed_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizationResult {
    pub best: Vec<f64>,
    pub loss: LossBreakdown,
    pub evaluations: usize,
    pub phase_evaluations: Vec<usize>,
    pub restarts: usize,
    pub cancelled: bool,
    pub wall_time_s: f64,
    pub trajectory: Vec<ProgressRecord>,
}

struct Runner<'a> {
    sched: &'a OptimizationSchedule,
    objective: &'a dyn Objective,
    callback: &'a mut dyn FnMut(&ProgressRecord, &[f64]) -> ControlFlow<()>,
    start: Instant,
    best: Vec<f64>,
    best_loss: LossBreakdown,
    realism: Option<(Vec<f64>, Option<f64>)>,
    evals: usize,
    trajectory: Vec<ProgressRecord>,
    stop: bool,
    cancelled: bool,
}

impl Runner<'_> {
    fn offer(&mut self, x: &[f64], loss: LossBreakdown) -> Result<()> {
        if loss.total.is_nan() {
            return Err(Error::InvalidLoss);
        }
        if loss.total < self.best_loss.total {
            self.best = x.to_vec();
            self.best_loss = loss;
        }
        Ok(())
    }

    fn realism(&mut self) -> Result<Option<f64>> {
        if !self.sched.realism_probe {
            return Ok(None);
        }
        if let Some((x, r)) = &self.realism {
            if *x == self.best {
                return Ok(*r);
            }
        }
        let r = self.objective.realism(&self.best)?;
        self.realism = Some((self.best.clone(), r));
        Ok(r)
    }

    fn record(&mut self, phase: &str, step: usize, sigma: Option<f64>) -> Result<()> {
        let elapsed = self.start.elapsed().as_secs_f64();
        let rec = ProgressRecord {
            phase: phase.to_string(),
            step,
            evals: self.evals,
            loss_sem: self.best_loss.semantic,
            loss_img: self.best_loss.image,
            loss_total: self.best_loss.total,
            sigma,
            realism_proxy: self.realism()?,
            elapsed_s: elapsed,
        };
        if (self.callback)(&rec, &self.best).is_break() {
            self.cancelled = true;
            self.stop = true;
        }
        if elapsed > self.sched.wall_clock_budget_s {
            self.stop = true;
        }
        self.trajectory.push(rec);
        Ok(())
    }

    fn run_cma(
        &mut self,
        max_evaluations: usize,
        population_size: Option<usize>,
        sigma0: f64,
        phase_seed: u64,
    ) -> Result<usize> {
        let dim = self.objective.dim();
        let mut population = population_size;
        let mut state: CmaState = cma_init(dim, &self.best, sigma0, population, phase_seed)?;
        let mut used = 0usize;
        let mut step = 0usize;
        let mut restarts = 0usize;
        while !self.stop && used + state.population_size() <= max_evaluations {
            let candidates = match cma_ask(&state) {
                Ok(c) => c,
                Err(Error::NumericalBreakdown(_)) if self.sched.restart_on_breakdown => {
                    restarts += 1;
                    let lambda = 2 * population.unwrap_or(state.population_size());
                    population = Some(lambda);
                    let seed = phase_seed.wrapping_add(restarts as u64);
                    state = cma_init(dim, &self.best, sigma0, population, seed)?;
                    continue;
                }
                Err(e) => return Err(e),
            };
            let mut losses = Vec::with_capacity(candidates.len());
            for c in &candidates {
                let l = self.objective.evaluate(c)?;
                self.evals += 1;
                used += 1;
                self.offer(c, l)?;
                losses.push(l.total);
            }
            state = cma_tell(&state, &candidates, &losses)?;
            step += 1;
            self.record("cma", step, Some(state.sigma))?;
            if state.max_step() < self.sched.stop_tolerance {
                break;
            }
        }
        Ok(restarts)
    }

    fn run_grad(&mut self, max_steps: usize, opt: GradOptState) -> Result<()> {
        let mut opt = opt;
        let mut params = self.best.clone();
        for step in 0..max_steps {
            if self.stop {
                return Ok(());
            }
            let (loss, g) = self.objective.evaluate_grad(&params)?;
            self.evals += 1;
            self.offer(&params, loss)?;
            self.record("grad", step, None)?;
            let gnorm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            if gnorm < self.sched.stop_tolerance {
                return Ok(());
            }
            let (next_opt, next) = grad_step(&opt, &params, &g)?;
            opt = next_opt;
            params = next;
        }
        if !self.stop {
            let loss = self.objective.evaluate(&params)?;
            self.evals += 1;
            self.offer(&params, loss)?;
            self.record("grad", max_steps, None)?;
        }
        Ok(())
    }
}

fn std_dev(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v.len() as f64).sqrt()
}

/// Runs every phase in order, carrying the best-so-far point between them.
///
/// `callback` sees each progress record and the current best point; returning
/// `ControlFlow::Break` cancels the run, which still returns the best point.
pub fn run_schedule(
    schedule: &OptimizationSchedule,
    objective: &dyn Objective,
    w0: &[f64],
    callback: &mut dyn FnMut(&ProgressRecord, &[f64]) -> ControlFlow<()>,
) -> Result<OptimizationResult> {
    if w0.len() != objective.dim() {
        return Err(Error::dims(format!(
            "start point has {} entries, objective {}",
            w0.len(),
            objective.dim()
        )));
    }
    schedule.validate(objective.dim(), objective.differentiable())?;
    let start = Instant::now();
    let initial = objective.evaluate(w0)?;
    if !initial.is_finite() {
        return Err(Error::InvalidLoss);
    }
    let mut run = Runner {
        sched: schedule,
        objective,
        callback,
        start,
        best: w0.to_vec(),
        best_loss: initial,
        realism: None,
        evals: 1,
        trajectory: Vec::new(),
        stop: false,
        cancelled: false,
    };
    run.record("init", 0, None)?;

    let mut phase_evaluations = Vec::with_capacity(schedule.phases.len());
    let mut restarts = 0;
    for (i, phase) in schedule.phases.iter().enumerate() {
        let before = run.evals;
        if !run.stop {
            match phase {
                Phase::Cma {
                    max_evaluations,
                    population_size,
                    sigma0,
                    sigma0_scale,
                } => {
                    let s0 = sigma0.unwrap_or_else(|| {
                        let sd = std_dev(&run.best);
                        sigma0_scale * if sd > 1e-12 { sd } else { 1.0 }
                    });
                    let seed = schedule.seed.wrapping_add((i as u64).wrapping_mul(0x51_7cc1_b727_220a));
                    restarts += run.run_cma(*max_evaluations, *population_size, s0, seed)?;
                }
                Phase::Grad {
                    max_steps,
                    step_size,
                    beta1,
                    beta2,
                    epsilon,
                } => {
                    let opt = GradOptState::with_betas(objective.dim(), *step_size, *beta1, *beta2, *epsilon);
                    run.run_grad(*max_steps, opt)?;
                }
            }
        }
        phase_evaluations.push(run.evals - before);
    }

    Ok(OptimizationResult {
        best: run.best,
        loss: run.best_loss,
        evaluations: run.evals,
        phase_evaluations,
        restarts,
        cancelled: run.cancelled,
        wall_time_s: start.elapsed().as_secs_f64(),
        trajectory: run.trajectory,
    })
}
