//! Trains the feature-map toy on the shapes corpus.
//!
//! The corpus is indexed by latent: [`scene_for_latent`] assigns every
//! `z ~ N(0, I)` one shape scene, and the generator is fitted to render
//! that scene from `z` (pixel MSE, Adam, fresh latents every batch). Any
//! standard-normal draw then decodes to a colored shape on gray, and the set
//! of latents showing, say, a red square is a large, connected region that
//! a search over `z` can reach.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::corpus::scene_for_latent;
use crate::error::{Error, Result};
use crate::generators::{FeatureMapToy, FeatureToyConfig};
use crate::optim::{grad_step, GradOptState};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batches: usize,
    pub batch: usize,
    /// Peak learning rate; decays to 5% of this on a cosine.
    pub lr: f64,
    pub report_every: usize,
    pub seed: u64,
    pub model: FeatureToyConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batches: 12_000,
            batch: 16,
            lr: 3e-3,
            report_every: 250,
            seed: 2021,
            model: FeatureToyConfig::default(),
        }
    }
}

pub struct TrainOutcome {
    pub model: FeatureMapToy,
    /// Mean MSE over each reporting window.
    pub losses: Vec<f64>,
}

pub fn train_feature_toy(cfg: &TrainConfig, mut on_report: impl FnMut(usize, f64)) -> Result<TrainOutcome> {
    if cfg.model.latent_dim < crate::corpus::SCENE_LATENT_MIN || cfg.batch == 0 {
        return Err(Error::InvalidConfig(
            "training needs latent_dim >= 15 and a positive batch".into(),
        ));
    }
    let res = cfg.model.image_res;
    let dim = cfg.model.latent_dim;
    let mut model = FeatureMapToy::random(cfg.model.clone(), cfg.seed ^ 0x70e)?;
    let sizes: Vec<usize> = model.named_params_mut().iter().map(|(_, p)| p.len()).collect();
    let mut opt: Vec<GradOptState> = sizes.iter().map(|&n| GradOptState::new(n, cfg.lr)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n_px = (3 * res * res) as f64;

    let mut losses = Vec::new();
    let mut window = 0.0;
    let mut window_n = 0usize;
    for b in 0..cfg.batches {
        let progress = b as f64 / cfg.batches.max(1) as f64;
        let lr = cfg.lr * (0.05 + 0.95 * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()));
        let mut acc: Vec<Vec<f64>> = sizes.iter().map(|&n| vec![0.0; n]).collect();
        for _ in 0..cfg.batch {
            let z: Vec<f64> = (0..dim)
                .map(|_| {
                    let v: f64 = StandardNormal.sample(&mut rng);
                    v as f32 as f64
                })
                .collect();
            let target = scene_for_latent(&z, res).render(res);
            let mut loss = 0.0;
            let (_, grads, _) = model.backward_all(&z, |img| {
                loss = img
                    .data
                    .iter()
                    .zip(&target.data)
                    .map(|(a, t)| (a - t).powi(2))
                    .sum::<f64>()
                    / n_px;
                img.zip_map(&target, |a, t| 2.0 * (a - t) / n_px)
            });
            window += loss;
            window_n += 1;
            for (a, g) in acc.iter_mut().zip(&grads) {
                a.iter_mut().zip(g).for_each(|(x, y)| *x += y / cfg.batch as f64);
            }
        }
        for (k, (_, param)) in model.named_params_mut().into_iter().enumerate() {
            opt[k].step_size = lr;
            let (st, next) = grad_step(&opt[k], param, &acc[k])?;
            opt[k] = st;
            *param = next;
        }
        if (b + 1) % cfg.report_every.max(1) == 0 || b + 1 == cfg.batches {
            let mean = window / window_n.max(1) as f64;
            losses.push(mean);
            on_report(b + 1, mean);
            window = 0.0;
            window_n = 0;
        }
    }

    // Store weights at the precision of the container format.
    for (_, p) in model.named_params_mut() {
        p.iter_mut().for_each(|v| *v = *v as f32 as f64);
    }
    Ok(TrainOutcome { model, losses })
}
