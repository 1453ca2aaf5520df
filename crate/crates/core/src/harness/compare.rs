use std::ops::ControlFlow;

use serde::{Deserialize, Serialize};

use super::MaskSpec;
use crate::engine::{prepare_edit, EditRequest, Registry};
use crate::error::{Error, Result};
use crate::generators::InteriorBase;
use crate::losses::{quantize_f32, LatentObjective, LossBreakdown};
use crate::optim::{run_schedule, Objective, OptimizationSchedule, Phase};
use crate::realism::RealismProxy;
use crate::scorers::{masked_score, Prompt};
use crate::tensor::{ImageTensor, LatentVector};

pub const COMPARISON_SCHEMA: &str = "paintword.optimizer-comparison/1";

/// What is optimized: a region edit of a seeded image, or a whole image
/// from a seeded latent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ComparisonMode {
    Edit { mask: MaskSpec },
    FullImage,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ComparisonSpec {
    pub generator: String,
    pub scorer: String,
    pub prompt: String,
    pub mode: ComparisonMode,
    pub seeds: Vec<u64>,
    pub lambda_img: f64,
    /// The CMA-then-gradient schedule; the gradient-only variant is derived
    /// from its budget.
    pub schedule: OptimizationSchedule,
    /// Keep every n-th progress record in the stored trajectories.
    pub trajectory_every: usize,
}

impl Default for ComparisonSpec {
    fn default() -> Self {
        Self {
            generator: crate::assets::TOY_SHAPES.into(),
            scorer: crate::assets::TOY_SCORER.into(),
            prompt: "red".into(),
            mode: ComparisonMode::Edit {
                mask: MaskSpec::default(),
            },
            seeds: (0..5).collect(),
            lambda_img: crate::losses::DEFAULT_LAMBDA_IMG,
            schedule: OptimizationSchedule::default(),
            trajectory_every: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub phase: String,
    pub evals: usize,
    pub loss_sem: f64,
    pub loss_img: f64,
    pub loss_total: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub realism_proxy: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantRecord {
    pub schedule: OptimizationSchedule,
    pub budget: usize,
    pub evaluations: usize,
    pub final_loss: LossBreakdown,
    pub score: f64,
    pub realism_proxy: f64,
    pub trajectory: Vec<TrajectoryPoint>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub seed: u64,
    pub grad_only: VariantRecord,
    pub cma_then_grad: VariantRecord,
}

/// Direction of the observed differences. Recorded, never asserted.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonSummary {
    pub seeds: usize,
    pub grad_lower_semantic_loss: usize,
    pub cma_higher_realism: usize,
    pub max_budget_gap: f64,
    pub gradient_scores_lower_loss: bool,
    pub cma_scores_higher_realism: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub schema: String,
    pub spec: ComparisonSpec,
    pub pairs: Vec<PairRecord>,
    pub summary: ComparisonSummary,
}

/// A single gradient phase spending the same evaluation budget as
/// `schedule`, with the step size of its last gradient phase.
pub fn matched_grad_only(schedule: &OptimizationSchedule) -> OptimizationSchedule {
    let step = schedule
        .phases
        .iter()
        .rev()
        .find_map(|p| match p {
            Phase::Grad { step_size, .. } => Some(*step_size),
            Phase::Cma { .. } => None,
        })
        .unwrap_or(0.02);
    // budget = 1 initial + steps + 1 final
    let steps = schedule.budget().saturating_sub(2).max(1);
    OptimizationSchedule {
        phases: vec![Phase::grad(steps, step)],
        ..schedule.clone()
    }
}

enum Search {
    Region(crate::losses::RegionObjective),
    Latent(LatentObjective),
}

struct Problem {
    search: Search,
    start: Vec<f64>,
    score: Box<dyn Fn(&ImageTensor) -> Result<f64>>,
}

impl Problem {
    fn objective(&self) -> &dyn Objective {
        match &self.search {
            Search::Region(o) => o,
            Search::Latent(o) => o,
        }
    }

    fn render(&self, x: &[f64]) -> Result<ImageTensor> {
        match &self.search {
            Search::Region(o) => o.render(x),
            Search::Latent(o) => o.render(x),
        }
    }
}

fn build(spec: &ComparisonSpec, registry: &Registry, seed: u64) -> Result<Problem> {
    let g = registry.generator(&spec.generator)?;
    let c = registry.scorer(&spec.scorer)?;
    let prompt = Prompt::new(&spec.prompt)?;
    let z = LatentVector::sample(g.info().latent_dim, seed);
    match &spec.mode {
        ComparisonMode::FullImage => {
            let obj = LatentObjective::new(g.clone(), c.clone(), prompt.clone())?.with_realism(RealismProxy::default());
            Ok(Problem {
                search: Search::Latent(obj),
                start: z.0.clone(),
                score: Box::new(move |img| c.score(img, &prompt)),
            })
        }
        ComparisonMode::Edit { mask } => {
            let base = InteriorBase::from(g.extract_latent(&z)?);
            let before = g.compose(&base)?;
            let mask = mask.resolve(&before)?;
            let req = EditRequest::new(prompt.clone(), mask.clone()).with_lambda(spec.lambda_img);
            let obj = prepare_edit(&g, &c, &base, &before, &req)?;
            Ok(Problem {
                start: obj.initial(),
                search: Search::Region(obj),
                score: Box::new(move |img| masked_score(c.as_ref(), img, &mask, &prompt)),
            })
        }
    }
}

fn run_variant(p: &Problem, schedule: &OptimizationSchedule, every: usize) -> Result<VariantRecord> {
    let schedule = OptimizationSchedule {
        realism_probe: true,
        ..schedule.clone()
    };
    let r = run_schedule(
        &schedule,
        p.objective(),
        &p.start,
        &mut |_, _| ControlFlow::Continue(()),
    )?;
    let best = quantize_f32(&r.best);
    let image = p.render(&best)?;
    let n = r.trajectory.len();
    let trajectory = r
        .trajectory
        .iter()
        .enumerate()
        .filter(|(i, _)| i % every.max(1) == 0 || i + 1 == n)
        .map(|(_, rec)| TrajectoryPoint {
            phase: rec.phase.clone(),
            evals: rec.evals,
            loss_sem: rec.loss_sem,
            loss_img: rec.loss_img,
            loss_total: rec.loss_total,
            realism_proxy: rec.realism_proxy,
        })
        .collect();
    Ok(VariantRecord {
        budget: schedule.budget(),
        evaluations: r.evaluations,
        final_loss: p.objective().evaluate(&best)?,
        score: (p.score)(&image)?,
        realism_proxy: RealismProxy::default().score(&image),
        trajectory,
        schedule,
    })
}

/// Paired grad-only vs CMA-then-gradient runs, one pair per seed.
pub fn run_optimizer_comparison(spec: &ComparisonSpec, registry: &Registry) -> Result<ComparisonReport> {
    if spec.seeds.is_empty() {
        return Err(Error::InvalidConfig("comparison needs at least one seed".into()));
    }
    let grad_only = matched_grad_only(&spec.schedule);
    let mut pairs = Vec::with_capacity(spec.seeds.len());
    for &seed in &spec.seeds {
        let problem = build(spec, registry, seed)?;
        let g = run_variant(&problem, &grad_only.clone().with_seed(seed), spec.trajectory_every)?;
        let c = run_variant(&problem, &spec.schedule.clone().with_seed(seed), spec.trajectory_every)?;
        pairs.push(PairRecord {
            seed,
            grad_only: g,
            cma_then_grad: c,
        });
    }
    let grad_lower = pairs
        .iter()
        .filter(|p| p.grad_only.final_loss.semantic <= p.cma_then_grad.final_loss.semantic)
        .count();
    let cma_real = pairs
        .iter()
        .filter(|p| p.cma_then_grad.realism_proxy > p.grad_only.realism_proxy)
        .count();
    let max_budget_gap = pairs
        .iter()
        .map(|p| {
            let (a, b) = (p.grad_only.evaluations as f64, p.cma_then_grad.evaluations as f64);
            (a - b).abs() / a.max(b)
        })
        .fold(0.0, f64::max);
    let n = pairs.len();
    Ok(ComparisonReport {
        schema: COMPARISON_SCHEMA.into(),
        spec: spec.clone(),
        pairs,
        summary: ComparisonSummary {
            seeds: n,
            grad_lower_semantic_loss: grad_lower,
            cma_higher_realism: cma_real,
            max_budget_gap,
            gradient_scores_lower_loss: 2 * grad_lower > n,
            cma_scores_higher_realism: 2 * cma_real > n,
        },
    })
}
