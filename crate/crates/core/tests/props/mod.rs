//! Property checks shared by the integration tests and the acceptance
//! runner. Each returns the measured quantity; callers hold the threshold.
#![allow(dead_code)]

use std::sync::Arc;

use paintword::generators::{
    generate_split, make_split, FeatureMapToy, FeatureToyConfig, GeneratorModel, SplitKind, StyleToy, StyleToyConfig,
};
use paintword::losses::{total_loss, total_loss_grad, LossConfig};
use paintword::scorers::{masked_score, masked_score_grad, Prompt, SemanticScorer, ToyScorer};
use paintword::tensor::{ImageTensor, LatentVector, Mask, Tensor3};
use paintword::{assets, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A random non-empty mask: the union of one to three rectangles.
pub fn random_mask(rng: &mut impl Rng, h: usize, w: usize) -> Mask {
    let rects: Vec<(usize, usize, usize, usize)> = (0..rng.random_range(1..=3))
        .map(|_| {
            let rh = rng.random_range(1..=h / 2);
            let rw = rng.random_range(1..=w / 2);
            (rng.random_range(0..=h - rh), rng.random_range(0..=w - rw), rh, rw)
        })
        .collect();
    Mask::from_fn(h, w, |y, x| {
        rects
            .iter()
            .any(|&(y0, x0, rh, rw)| y >= y0 && y < y0 + rh && x >= x0 && x < x0 + rw)
    })
}

pub fn random_toy(kind: SplitKind, seed: u64) -> Result<Arc<dyn GeneratorModel>> {
    Ok(match kind {
        SplitKind::FeatureMap => Arc::new(FeatureMapToy::random(FeatureToyConfig::default(), seed)?),
        SplitKind::Style => Arc::new(StyleToy::random(StyleToyConfig::default(), seed)?),
    })
}

/// Largest pixel difference between the split generator at the original
/// interior and the plain generator, over `cases` random (z, mask) pairs.
/// The weights are redrawn every ten cases.
pub fn reconstruction_max_diff(kind: SplitKind, cases: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let mut g = random_toy(kind, seed)?;
    for i in 0..cases {
        if i % 10 == 0 {
            g = random_toy(kind, rng.random())?;
        }
        let (_, h, w) = g.info().image_shape;
        let z = LatentVector::sample(g.info().latent_dim, rng.random());
        let m = random_mask(&mut rng, h, w);
        let split = make_split(g.as_ref(), &z, &m)?;
        let rebuilt = generate_split(g.as_ref(), &split, &split.original_inside)?;
        worst = worst.max(rebuilt.max_abs_diff(g.generate(&z)?.tensor()));
    }
    Ok(worst)
}

/// Outcome of the masked-scorer isolation check.
#[derive(Debug, Clone, Copy)]
pub struct Isolation {
    /// Largest gradient magnitude at an outside-mask pixel.
    pub outside_grad: f64,
    /// Largest score change after scrambling every outside-mask pixel.
    pub score_change: f64,
    pub cases: usize,
}

pub fn masked_isolation(cases: usize, seed: u64) -> Result<Isolation> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = ToyScorer::default();
    let prompts = ["red", "blue square", "green circle", "triangle", "yellow"];
    let mut out = Isolation {
        outside_grad: 0.0,
        score_change: 0.0,
        cases,
    };
    for i in 0..cases {
        let (h, w) = (64, 64);
        let data: Vec<f64> = (0..3 * h * w).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x = ImageTensor::new(Tensor3::from_vec(3, h, w, data)?)?;
        let m = random_mask(&mut rng, h, w);
        let t = Prompt::new(prompts[i % prompts.len()])?;

        let (s, g) = masked_score_grad(&c, &x, &m, &t)?;
        let bits = m.bits();
        let plane = h * w;
        for ch in 0..3 {
            for p in (0..plane).filter(|&p| !bits[p]) {
                out.outside_grad = out.outside_grad.max(g.data[ch * plane + p].abs());
            }
        }

        let mut y = x.clone();
        for ch in 0..3 {
            for p in (0..plane).filter(|&p| !bits[p]) {
                y.data_mut()[ch * plane + p] = rng.random_range(-1.0..1.0);
            }
        }
        let s2 = masked_score(&c, &y, &m, &t)?;
        out.score_change = out.score_change.max((s - s2).abs());
    }
    Ok(out)
}

/// One gradient-check setting.
pub struct GradConfig {
    pub name: &'static str,
    pub generator: Arc<dyn GeneratorModel>,
    pub prompt: &'static str,
    pub mask: Mask,
    pub lambda_img: f64,
}

/// Five generator / prompt / mask / weight combinations across both split
/// kinds, trained and random weights.
pub fn grad_configs() -> Result<Vec<GradConfig>> {
    Ok(vec![
        GradConfig {
            name: "trained feature toy, red, square mask",
            generator: Arc::new(assets::toy_shapes()?),
            prompt: "red",
            mask: Mask::rect(64, 64, 16, 16, 24, 24),
            lambda_img: 1.0,
        },
        GradConfig {
            name: "random feature toy, blue square, corner mask",
            generator: random_toy(SplitKind::FeatureMap, 5)?,
            prompt: "blue square",
            mask: Mask::rect(64, 64, 0, 0, 20, 36),
            lambda_img: 0.3,
        },
        GradConfig {
            name: "trained style toy, green circle, center mask",
            generator: Arc::new(assets::toy_style()?),
            prompt: "green circle",
            mask: Mask::rect(64, 64, 20, 20, 24, 24),
            lambda_img: 1.0,
        },
        GradConfig {
            name: "random style toy, yellow, strip mask",
            generator: random_toy(SplitKind::Style, 6)?,
            prompt: "yellow",
            mask: Mask::rect(64, 64, 0, 10, 64, 12),
            lambda_img: 2.0,
        },
        GradConfig {
            name: "trained feature toy, triangle, no image term",
            generator: Arc::new(assets::toy_shapes()?),
            prompt: "triangle",
            mask: Mask::rect(64, 64, 8, 30, 30, 30),
            lambda_img: 0.0,
        },
    ])
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn rel_err(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Worst relative error between the analytic total-loss gradient and
/// central differences at `coords` coordinates whose mask weight is
/// non-zero. The check point is the original interior plus a small
/// perturbation, so both loss terms are active.
pub fn fd_gradient_error(cfg: &GradConfig, coords: usize, seed: u64) -> Result<f64> {
    let g = cfg.generator.as_ref();
    let scorer: Arc<dyn SemanticScorer> = Arc::new(ToyScorer::default());
    let loss = LossConfig::new(scorer, Prompt::new(cfg.prompt)?, cfg.mask.clone()).with_lambda(cfg.lambda_img);
    let z = LatentVector::sample(g.info().latent_dim, seed);
    let x0 = g.generate(&z)?;
    let split = make_split(g, &z, &cfg.mask)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = split.original_inside.as_slice().to_vec();
    let perturbed: Vec<f64> = base.iter().map(|v| v + 0.05 * rng.random_range(-1.0..1.0)).collect();
    let w = split.original_inside.with_values(perturbed.clone())?;
    let (_, grad) = total_loss_grad(&loss, g, &split, &w, &x0)?;

    let active: Vec<usize> = match &split.feature_mask {
        Some(fm) => {
            let plane = fm.values.len();
            (0..base.len()).filter(|i| fm.values[i % plane] > 0.0).collect()
        }
        None => (0..base.len()).collect(),
    };
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for _ in 0..coords {
        let i = active[rng.random_range(0..active.len())];
        let at = |delta: f64| -> Result<f64> {
            let mut v = perturbed.clone();
            v[i] += delta;
            Ok(total_loss(&loss, g, &split, &split.original_inside.with_values(v)?, &x0)?.total)
        };
        let numeric = (at(h)? - at(-h)?) / (2.0 * h);
        worst = worst.max(rel_err(grad[i], numeric, 1e-4));
    }
    Ok(worst)
}
