//! Semantic loss, outside-region image loss, and their sum over the split
//! generator. [`RegionObjective`] and [`LatentObjective`] adapt these to the
//! optimizer's flat-vector [`Objective`] interface.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generators::{generate_split, generate_split_vjp, generate_vjp, GeneratorModel, RegionLatent, SplitState};
use crate::optim::Objective;
use crate::realism::RealismProxy;
use crate::scorers::{masked_score, masked_score_grad, ImageDistance, PreparedReference, Prompt, SemanticScorer};
use crate::tensor::{invert_mask, masked_project, ImageTensor, LatentVector, Mask, Tensor3};

pub const DEFAULT_LAMBDA_IMG: f64 = 1.0;

#[derive(Clone)]
pub struct LossConfig {
    pub lambda_img: f64,
    pub scorer: Arc<dyn SemanticScorer>,
    pub distance: ImageDistance,
    pub prompt: Prompt,
    pub mask: Mask,
}

impl LossConfig {
    pub fn new(scorer: Arc<dyn SemanticScorer>, prompt: Prompt, mask: Mask) -> Self {
        Self {
            lambda_img: DEFAULT_LAMBDA_IMG,
            scorer,
            distance: ImageDistance::default(),
            prompt,
            mask,
        }
    }

    pub fn with_lambda(mut self, lambda_img: f64) -> Self {
        self.lambda_img = lambda_img;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_img >= 0.0 && self.lambda_img.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "lambda_img must be >= 0, got {}",
                self.lambda_img
            )));
        }
        self.mask.require_nonempty()?;
        self.scorer.validate(&self.prompt)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub semantic: f64,
    pub image: f64,
    pub total: f64,
    pub lambda_img: f64,
}

impl LossBreakdown {
    pub fn new(semantic: f64, image: f64, lambda_img: f64) -> Self {
        Self {
            semantic,
            image,
            total: semantic + lambda_img * image,
            lambda_img,
        }
    }

    /// A loss with no image term, as used by full-image and test objectives.
    pub fn plain(total: f64) -> Self {
        Self::new(total, 0.0, 0.0)
    }

    pub fn is_finite(&self) -> bool {
        self.semantic.is_finite() && self.image.is_finite() && self.total.is_finite()
    }
}

/// `-C_{t,m}(G_{z,m}(w))`.
pub fn semantic_loss(cfg: &LossConfig, g: &dyn GeneratorModel, s: &SplitState, w: &RegionLatent) -> Result<f64> {
    let img = generate_split(g, s, w)?;
    Ok(-masked_score(cfg.scorer.as_ref(), &img, &cfg.mask, &cfg.prompt)?)
}

/// `d(x * (1 - m), G_{z,m}(w) * (1 - m))`.
pub fn image_loss(
    cfg: &LossConfig,
    g: &dyn GeneratorModel,
    s: &SplitState,
    w: &RegionLatent,
    x_original: &ImageTensor,
) -> Result<f64> {
    let img = generate_split(g, s, w)?;
    let outside = invert_mask(&cfg.mask);
    cfg.distance
        .distance(&masked_project(x_original, &outside)?, &masked_project(&img, &outside)?)
}

pub fn total_loss(
    cfg: &LossConfig,
    g: &dyn GeneratorModel,
    s: &SplitState,
    w: &RegionLatent,
    x_original: &ImageTensor,
) -> Result<LossBreakdown> {
    let semantic = semantic_loss(cfg, g, s, w)?;
    let image = image_loss(cfg, g, s, w, x_original)?;
    Ok(LossBreakdown::new(semantic, image, cfg.lambda_img))
}

/// Total loss and its gradient with respect to the flattened `w`.
pub fn total_loss_grad(
    cfg: &LossConfig,
    g: &dyn GeneratorModel,
    s: &SplitState,
    w: &RegionLatent,
    x_original: &ImageTensor,
) -> Result<(LossBreakdown, Vec<f64>)> {
    let outside = invert_mask(&cfg.mask);
    let reference = cfg.distance.prepare(&masked_project(x_original, &outside)?);
    split_loss_grad(cfg, g, s, w, &reference, &outside.values())
}

fn split_loss_grad(
    cfg: &LossConfig,
    g: &dyn GeneratorModel,
    s: &SplitState,
    w: &RegionLatent,
    reference: &PreparedReference,
    outside: &[f64],
) -> Result<(LossBreakdown, Vec<f64>)> {
    if !g.differentiable() || !cfg.scorer.differentiable() {
        return Err(Error::NotDifferentiable);
    }
    let img = generate_split(g, s, w)?;
    let (score, g_sem) = masked_score_grad(cfg.scorer.as_ref(), &img, &cfg.mask, &cfg.prompt)?;
    let projected = ImageTensor::new(img.mul_plane(outside))?;
    let (image, g_img) = cfg.distance.distance_grad(reference, &projected)?;
    let lambda = cfg.lambda_img;
    let grad_image = g_sem.zip_map(&g_img.mul_plane(outside), |a, b| -a + lambda * b);
    let (_, gw) = generate_split_vjp(g, s, w, &grad_image)?;
    Ok((LossBreakdown::new(-score, image, lambda), gw))
}

/// Rounds every component to the nearest `f32`, the precision used on the
/// wire and on disk.
pub fn quantize_f32(v: &[f64]) -> Vec<f64> {
    v.iter().map(|&x| x as f32 as f64).collect()
}

/// Region-edit objective over the *active* coordinates of `w`.
///
/// Feature-map entries whose downsampled mask is exactly zero never reach
/// `h` (they are multiplied by 0), so they are held at their original values
/// and left out of the search space. Style latents are fully active.
pub struct RegionObjective {
    pub cfg: LossConfig,
    pub generator: Arc<dyn GeneratorModel>,
    pub split: SplitState,
    original: Vec<f64>,
    active: Vec<usize>,
    reference: PreparedReference,
    outside: Vec<f64>,
    realism: Option<RealismProxy>,
}

impl RegionObjective {
    pub fn new(
        cfg: LossConfig,
        generator: Arc<dyn GeneratorModel>,
        split: SplitState,
        x_original: &ImageTensor,
    ) -> Result<Self> {
        cfg.validate()?;
        x_original.check_mask(&cfg.mask)?;
        let original = split.original_inside.as_slice().to_vec();
        let active = match &split.feature_mask {
            Some(fm) => {
                let plane = fm.values.len();
                (0..original.len()).filter(|i| fm.values[i % plane] > 0.0).collect()
            }
            None => (0..original.len()).collect(),
        };
        let outside_mask = invert_mask(&cfg.mask);
        let reference = cfg.distance.prepare(&masked_project(x_original, &outside_mask)?);
        Ok(Self {
            cfg,
            generator,
            split,
            original,
            active,
            reference,
            outside: outside_mask.values(),
            realism: None,
        })
    }

    pub fn with_realism(mut self, proxy: RealismProxy) -> Self {
        self.realism = Some(proxy);
        self
    }

    /// Starting point: the original interior, restricted to active entries.
    pub fn initial(&self) -> Vec<f64> {
        self.active.iter().map(|&i| self.original[i]).collect()
    }

    pub fn active_indices(&self) -> &[usize] {
        &self.active
    }

    /// Expands an active-coordinate vector into a full region latent.
    pub fn latent(&self, x: &[f64]) -> Result<RegionLatent> {
        if x.len() != self.active.len() {
            return Err(Error::dims(format!(
                "expected {} active coordinates, got {}",
                self.active.len(),
                x.len()
            )));
        }
        let mut full = self.original.clone();
        for (&i, &v) in self.active.iter().zip(x) {
            full[i] = v;
        }
        self.split.original_inside.with_values(full)
    }

    pub fn render(&self, x: &[f64]) -> Result<ImageTensor> {
        generate_split(self.generator.as_ref(), &self.split, &self.latent(x)?)
    }

    fn loss_of_image(&self, img: &ImageTensor) -> Result<LossBreakdown> {
        let score = masked_score(self.cfg.scorer.as_ref(), img, &self.cfg.mask, &self.cfg.prompt)?;
        let projected = ImageTensor::new(img.mul_plane(&self.outside))?;
        let image = self.cfg.distance.distance_to(&self.reference, &projected)?;
        Ok(LossBreakdown::new(-score, image, self.cfg.lambda_img))
    }
}

impl Objective for RegionObjective {
    fn dim(&self) -> usize {
        self.active.len()
    }

    fn evaluate(&self, x: &[f64]) -> Result<LossBreakdown> {
        self.loss_of_image(&self.render(x)?)
    }

    fn differentiable(&self) -> bool {
        self.generator.differentiable() && self.cfg.scorer.differentiable()
    }

    fn evaluate_grad(&self, x: &[f64]) -> Result<(LossBreakdown, Vec<f64>)> {
        let w = self.latent(x)?;
        let (loss, g) = split_loss_grad(
            &self.cfg,
            self.generator.as_ref(),
            &self.split,
            &w,
            &self.reference,
            &self.outside,
        )?;
        Ok((loss, self.active.iter().map(|&i| g[i]).collect()))
    }

    fn realism(&self, x: &[f64]) -> Result<Option<f64>> {
        match &self.realism {
            Some(p) => Ok(Some(p.score(&self.render(x)?))),
            None => Ok(None),
        }
    }
}

/// Optimization directly over `z`: `-C(G(z), t)`, or `-C_{t,m}(G(z))` when a
/// mask is given. [`LatentObjective::anchored`] adds the outside-mask image
/// term, which makes it the unsplit counterpart of [`RegionObjective`].
pub struct LatentObjective {
    pub generator: Arc<dyn GeneratorModel>,
    pub scorer: Arc<dyn SemanticScorer>,
    pub prompt: Prompt,
    pub mask: Option<Mask>,
    realism: Option<RealismProxy>,
    anchor: Option<Anchor>,
}

struct Anchor {
    distance: ImageDistance,
    reference: PreparedReference,
    outside: Vec<f64>,
    lambda: f64,
}

impl LatentObjective {
    pub fn new(generator: Arc<dyn GeneratorModel>, scorer: Arc<dyn SemanticScorer>, prompt: Prompt) -> Result<Self> {
        scorer.validate(&prompt)?;
        Ok(Self {
            generator,
            scorer,
            prompt,
            mask: None,
            realism: None,
            anchor: None,
        })
    }

    /// Adds `lambda * d(x * (1 - m), G(z) * (1 - m))`; requires a mask.
    pub fn anchored(mut self, x_original: &ImageTensor, distance: ImageDistance, lambda: f64) -> Result<Self> {
        let mask = self
            .mask
            .as_ref()
            .ok_or_else(|| Error::InvalidConfig("an anchored latent objective needs a mask".into()))?;
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "lambda_img must be finite and non-negative, got {lambda}"
            )));
        }
        let outside = invert_mask(mask);
        let reference = distance.prepare(&masked_project(x_original, &outside)?);
        self.anchor = Some(Anchor {
            distance,
            reference,
            outside: outside.values(),
            lambda,
        });
        Ok(self)
    }

    pub fn masked(mut self, mask: Mask) -> Result<Self> {
        mask.require_nonempty()?;
        self.generator.info().check_mask(&mask)?;
        self.mask = Some(mask);
        Ok(self)
    }

    pub fn with_realism(mut self, proxy: RealismProxy) -> Self {
        self.realism = Some(proxy);
        self
    }

    pub fn render(&self, z: &[f64]) -> Result<ImageTensor> {
        self.generator.generate(&LatentVector(z.to_vec()))
    }

    fn score_image(&self, img: &ImageTensor) -> Result<f64> {
        match &self.mask {
            Some(m) => masked_score(self.scorer.as_ref(), img, m, &self.prompt),
            None => self.scorer.score(img, &self.prompt),
        }
    }
}

impl Objective for LatentObjective {
    fn dim(&self) -> usize {
        self.generator.info().latent_dim
    }

    fn evaluate(&self, z: &[f64]) -> Result<LossBreakdown> {
        let img = self.render(z)?;
        let semantic = -self.score_image(&img)?;
        match &self.anchor {
            None => Ok(LossBreakdown::plain(semantic)),
            Some(a) => {
                let projected = ImageTensor::new(img.mul_plane(&a.outside))?;
                let image = a.distance.distance_to(&a.reference, &projected)?;
                Ok(LossBreakdown::new(semantic, image, a.lambda))
            }
        }
    }

    fn differentiable(&self) -> bool {
        self.generator.differentiable() && self.scorer.differentiable()
    }

    fn evaluate_grad(&self, z: &[f64]) -> Result<(LossBreakdown, Vec<f64>)> {
        let z = LatentVector(z.to_vec());
        let img = self.render(&z.0)?;
        let (score, g_img): (f64, Tensor3) = match &self.mask {
            Some(m) => masked_score_grad(self.scorer.as_ref(), &img, m, &self.prompt)?,
            None => self.scorer.score_grad(&img, &self.prompt)?,
        };
        let (loss, grad_image) = match &self.anchor {
            None => (LossBreakdown::plain(-score), g_img.map(|v| -v)),
            Some(a) => {
                let projected = ImageTensor::new(img.mul_plane(&a.outside))?;
                let (image, g_d) = a.distance.distance_grad(&a.reference, &projected)?;
                let g = g_img.zip_map(&g_d.mul_plane(&a.outside), |s, d| -s + a.lambda * d);
                (LossBreakdown::new(-score, image, a.lambda), g)
            }
        };
        let (_, gz) = generate_vjp(self.generator.as_ref(), &z, &grad_image)?;
        Ok((loss, gz))
    }

    fn realism(&self, z: &[f64]) -> Result<Option<f64>> {
        match &self.realism {
            Some(p) => Ok(Some(p.score(&self.render(z)?))),
            None => Ok(None),
        }
    }
}
