use std::ops::ControlFlow;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::generators::{make_split_from_base, split_interior, GeneratorModel, InteriorBase, RegionLatent};
use crate::losses::{quantize_f32, LossBreakdown, LossConfig, RegionObjective};
use crate::optim::{run_schedule, Objective, OptimizationResult, OptimizationSchedule, ProgressRecord};
use crate::realism::RealismProxy;
use crate::scorers::{DistanceWeights, ImageDistance, Prompt, SemanticScorer};
use crate::tensor::{ImageTensor, Mask};

/// Everything that determines an edit's outcome given the pre-edit state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EditRequest {
    pub prompt: Prompt,
    #[serde(skip)]
    pub mask: Option<Mask>,
    pub lambda_img: f64,
    pub schedule: OptimizationSchedule,
    pub distance: DistanceWeights,
}

impl EditRequest {
    pub fn new(prompt: Prompt, mask: Mask) -> Self {
        Self {
            prompt,
            mask: Some(mask),
            lambda_img: crate::losses::DEFAULT_LAMBDA_IMG,
            schedule: OptimizationSchedule::default(),
            distance: DistanceWeights::default(),
        }
    }

    pub fn with_schedule(mut self, schedule: OptimizationSchedule) -> Self {
        self.schedule = schedule;
        self
    }

    pub fn with_lambda(mut self, lambda_img: f64) -> Self {
        self.lambda_img = lambda_img;
        self
    }

    pub fn mask(&self) -> Result<&Mask> {
        self.mask.as_ref().ok_or(crate::Error::EmptyMask)
    }
}

#[derive(Clone, Debug)]
pub struct EditOutcome {
    pub result_w: RegionLatent,
    pub result_image: ImageTensor,
    /// Interior representation to split for the next edit.
    pub new_base: InteriorBase,
    pub initial_loss: LossBreakdown,
    pub final_loss: LossBreakdown,
    pub optimization: OptimizationResult,
}

/// Builds the split and objective for an edit; fails before any
/// optimization work on invalid input.
pub fn prepare_edit(
    generator: &Arc<dyn GeneratorModel>,
    scorer: &Arc<dyn SemanticScorer>,
    base: &InteriorBase,
    current: &ImageTensor,
    req: &EditRequest,
) -> Result<RegionObjective> {
    let mask = req.mask()?;
    mask.require_nonempty()?;
    scorer.validate(&req.prompt)?;
    let split = make_split_from_base(generator.as_ref(), base, mask)?;
    let mut cfg = LossConfig::new(scorer.clone(), req.prompt.clone(), mask.clone()).with_lambda(req.lambda_img);
    cfg.distance = ImageDistance::new(req.distance);
    let objective = RegionObjective::new(cfg, generator.clone(), split, current)?;
    req.schedule.validate(objective.dim(), objective.differentiable())?;
    Ok(objective.with_realism(RealismProxy::default()))
}

/// Runs a prepared edit to completion. The optimum is rounded to `f32`
/// before the result image is composed, so the stored `result_w` reproduces
/// the result exactly.
pub fn run_prepared(
    objective: &RegionObjective,
    schedule: &OptimizationSchedule,
    callback: &mut dyn FnMut(&ProgressRecord, &[f64]) -> ControlFlow<()>,
) -> Result<EditOutcome> {
    let start = objective.initial();
    let optimization = run_schedule(schedule, objective, &start, callback)?;
    let initial_loss = objective.evaluate(&start)?;
    let best = quantize_f32(&optimization.best);
    let result_w = objective.latent(&best)?;
    let new_base = split_interior(&objective.split, &result_w)?;
    let result_image = objective.generator.compose(&new_base)?;
    let final_loss = objective.evaluate(&best)?;
    Ok(EditOutcome {
        result_w,
        result_image,
        new_base,
        initial_loss,
        final_loss,
        optimization,
    })
}

/// [`prepare_edit`] followed by [`run_prepared`].
pub fn execute_edit(
    generator: &Arc<dyn GeneratorModel>,
    scorer: &Arc<dyn SemanticScorer>,
    base: &InteriorBase,
    current: &ImageTensor,
    req: &EditRequest,
    callback: &mut dyn FnMut(&ProgressRecord, &[f64]) -> ControlFlow<()>,
) -> Result<EditOutcome> {
    let objective = prepare_edit(generator, scorer, base, current, req)?;
    run_prepared(&objective, &req.schedule, callback)
}
