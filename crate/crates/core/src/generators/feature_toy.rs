use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{GeneratorInfo, GeneratorModel, InteriorBase, InteriorGrad, InteriorShape, RegionLatent};
use crate::error::{Error, Result};
use crate::io::Container;
use crate::nn::{self, Conv2d, Dense};
use crate::tensor::{ImageTensor, LatentVector, Tensor3};

pub(super) const KIND: &str = "feature-map-toy";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureToyConfig {
    pub latent_dim: usize,
    pub hidden: usize,
    pub seed_channels: usize,
    pub seed_res: usize,
    pub interior_channels: usize,
    pub interior_res: usize,
    pub image_res: usize,
}

impl Default for FeatureToyConfig {
    fn default() -> Self {
        Self {
            latent_dim: 32,
            hidden: 128,
            seed_channels: 32,
            seed_res: 8,
            interior_channels: 8,
            interior_res: 16,
            image_res: 64,
        }
    }
}

/// Feature-map toy: `z -> mlp -> C x 8 x 8 -> [up2, conv3x3, silu] = w`,
/// then `h(w) = tanh(conv3x3(up4(w)))` at `3 x 64 x 64`.
#[derive(Clone, Debug)]
pub struct FeatureMapToy {
    cfg: FeatureToyConfig,
    info: GeneratorInfo,
    pub hidden: Dense,
    pub dense: Dense,
    pub block1: Conv2d,
    pub block2: Conv2d,
}

/// Intermediates of `f` kept for the backward pass.
pub(crate) struct FeatureCache {
    hidden_pre: Vec<f64>,
    hidden_act: Vec<f64>,
    dense_pre: Vec<f64>,
    up1: Tensor3,
    conv1_pre: Tensor3,
}

/// Intermediates of `h`.
pub(crate) struct ComposeCache {
    up2: Tensor3,
    out: Tensor3,
}

impl FeatureMapToy {
    pub fn random(cfg: FeatureToyConfig, seed: u64) -> Result<Self> {
        validate(&cfg)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let seed_len = cfg.seed_channels * cfg.seed_res * cfg.seed_res;
        let hidden = Dense::random(&mut rng, cfg.latent_dim, cfg.hidden, 1.5);
        let dense = Dense::random(&mut rng, cfg.hidden, seed_len, 1.0);
        let block1 = Conv2d::random(&mut rng, cfg.seed_channels, cfg.interior_channels, 3, 1, 1.5);
        let block2 = Conv2d::random(&mut rng, cfg.interior_channels, 3, 3, 1, 1.5);
        Ok(Self::assemble(cfg, hidden, dense, block1, block2))
    }

    fn assemble(cfg: FeatureToyConfig, hidden: Dense, dense: Dense, block1: Conv2d, block2: Conv2d) -> Self {
        let info = GeneratorInfo {
            latent_dim: cfg.latent_dim,
            image_shape: (3, cfg.image_res, cfg.image_res),
            interior: InteriorShape::FeatureMap {
                channels: cfg.interior_channels,
                height: cfg.interior_res,
                width: cfg.interior_res,
            },
        };
        Self {
            cfg,
            info,
            hidden,
            dense,
            block1,
            block2,
        }
    }

    pub fn config(&self) -> &FeatureToyConfig {
        &self.cfg
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        if c.kind != KIND {
            return Err(Error::Format(format!("expected {KIND}, got {}", c.kind)));
        }
        let cfg: FeatureToyConfig = serde_json::from_value(c.meta.clone()).map_err(|e| Error::Format(e.to_string()))?;
        let mut toy = Self::random(cfg, 0)?;
        for (name, dst) in toy.named_params_mut() {
            let arr = c.get(name)?;
            if arr.values.len() != dst.len() {
                return Err(Error::dims(format!("weight {name} has wrong length")));
            }
            dst.copy_from_slice(&arr.values);
        }
        Ok(toy)
    }

    pub fn named_params_mut(&mut self) -> Vec<(&'static str, &mut Vec<f64>)> {
        vec![
            ("hidden.weight", &mut self.hidden.weight),
            ("hidden.bias", &mut self.hidden.bias),
            ("dense.weight", &mut self.dense.weight),
            ("dense.bias", &mut self.dense.bias),
            ("block1.weight", &mut self.block1.weight),
            ("block1.bias", &mut self.block1.bias),
            ("block2.weight", &mut self.block2.weight),
            ("block2.bias", &mut self.block2.bias),
        ]
    }

    fn named_params(&self) -> Vec<(&'static str, &Vec<f64>)> {
        vec![
            ("hidden.weight", &self.hidden.weight),
            ("hidden.bias", &self.hidden.bias),
            ("dense.weight", &self.dense.weight),
            ("dense.bias", &self.dense.bias),
            ("block1.weight", &self.block1.weight),
            ("block1.bias", &self.block1.bias),
            ("block2.weight", &self.block2.weight),
            ("block2.bias", &self.block2.bias),
        ]
    }

    pub(crate) fn f_forward(&self, z: &[f64]) -> (Tensor3, FeatureCache) {
        let c = &self.cfg;
        let hidden_pre = self.hidden.forward(z);
        let hidden_act: Vec<f64> = hidden_pre.iter().map(|&v| nn::silu(v)).collect();
        let dense_pre = self.dense.forward(&hidden_act);
        let seed = Tensor3 {
            channels: c.seed_channels,
            height: c.seed_res,
            width: c.seed_res,
            data: dense_pre.iter().map(|&v| nn::silu(v)).collect(),
        };
        let up1 = nn::upsample(&seed, c.interior_res / c.seed_res);
        let conv1_pre = self.block1.forward(&up1);
        let w = nn::silu_t(&conv1_pre);
        (
            w,
            FeatureCache {
                hidden_pre,
                hidden_act,
                dense_pre,
                up1,
                conv1_pre,
            },
        )
    }

    pub(crate) fn h_forward(&self, w: &Tensor3) -> (Tensor3, ComposeCache) {
        let up2 = nn::upsample(w, self.cfg.image_res / self.cfg.interior_res);
        let out = self.block2.forward(&up2).map(f64::tanh);
        (out.clone(), ComposeCache { up2, out })
    }

    /// Gradient of the image pre-image through `h`; returns dL/dw.
    fn h_backward(&self, cache: &ComposeCache, grad_img: &Tensor3) -> (Tensor3, Tensor3) {
        let g_pre = cache.out.zip_map(grad_img, |t, g| g * (1.0 - t * t));
        let g_up = self.block2.backward_input(cache.up2.height, cache.up2.width, &g_pre);
        let gw = nn::upsample_backward(&g_up, self.cfg.image_res / self.cfg.interior_res);
        (gw, g_pre)
    }

    fn f_backward(&self, cache: &FeatureCache, grad_w: &Tensor3) -> (Vec<f64>, Tensor3, Vec<f64>, Vec<f64>) {
        let g_conv1 = nn::silu_backward(&cache.conv1_pre, grad_w);
        let g_up1 = self.block1.backward_input(cache.up1.height, cache.up1.width, &g_conv1);
        let g_seed = nn::upsample_backward(&g_up1, self.cfg.interior_res / self.cfg.seed_res);
        let g_dense: Vec<f64> = g_seed
            .data
            .iter()
            .zip(&cache.dense_pre)
            .map(|(&g, &p)| g * nn::silu_grad(p))
            .collect();
        let g_hidden: Vec<f64> = self
            .dense
            .backward_input(&g_dense)
            .iter()
            .zip(&cache.hidden_pre)
            .map(|(&g, &p)| g * nn::silu_grad(p))
            .collect();
        (self.hidden.backward_input(&g_hidden), g_conv1, g_dense, g_hidden)
    }

    /// Full backward pass for training: image, gradients for every parameter
    /// (in [`Self::named_params_mut`] order) and the latent gradient.
    pub fn backward_all(
        &self,
        z: &[f64],
        grad_fn: impl FnOnce(&Tensor3) -> Tensor3,
    ) -> (Tensor3, Vec<Vec<f64>>, Vec<f64>) {
        let (w, fc) = self.f_forward(z);
        let (img, hc) = self.h_forward(&w);
        let grad_img = grad_fn(&img);
        let (gw, g_pre2) = self.h_backward(&hc, &grad_img);
        let (gz, g_conv1, g_dense, g_hidden) = self.f_backward(&fc, &gw);

        let mut ghw = vec![0.0; self.hidden.weight.len()];
        let mut ghb = vec![0.0; self.hidden.bias.len()];
        self.hidden.accumulate_grads(z, &g_hidden, &mut ghw, &mut ghb);
        let mut gdw = vec![0.0; self.dense.weight.len()];
        let mut gdb = vec![0.0; self.dense.bias.len()];
        self.dense
            .accumulate_grads(&fc.hidden_act, &g_dense, &mut gdw, &mut gdb);
        let mut g1w = vec![0.0; self.block1.weight.len()];
        let mut g1b = vec![0.0; self.block1.bias.len()];
        self.block1.accumulate_grads(&fc.up1, &g_conv1, &mut g1w, &mut g1b);
        let mut g2w = vec![0.0; self.block2.weight.len()];
        let mut g2b = vec![0.0; self.block2.bias.len()];
        self.block2.accumulate_grads(&hc.up2, &g_pre2, &mut g2w, &mut g2b);
        let grads = vec![ghw, ghb, gdw, gdb, g1w, g1b, g2w, g2b];
        (img, grads, gz)
    }

    fn interior_tensor<'a>(&self, base: &'a InteriorBase) -> Result<&'a Tensor3> {
        match base {
            InteriorBase::FeatureMap(t) => {
                let c = &self.cfg;
                if t.shape() != (c.interior_channels, c.interior_res, c.interior_res) {
                    return Err(Error::dims(format!("interior shape {:?}", t.shape())));
                }
                Ok(t)
            }
            InteriorBase::Style(_) => Err(Error::dims("feature-map generator given a style interior")),
        }
    }
}

fn validate(c: &FeatureToyConfig) -> Result<()> {
    let ok = c.latent_dim > 0
        && c.hidden > 0
        && c.seed_res > 0
        && c.interior_res.is_multiple_of(c.seed_res)
        && c.image_res.is_multiple_of(c.interior_res)
        && c.seed_channels > 0
        && c.interior_channels > 0;
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("bad feature toy config {c:?}")))
    }
}

impl GeneratorModel for FeatureMapToy {
    fn info(&self) -> &GeneratorInfo {
        &self.info
    }

    fn extract_latent(&self, z: &LatentVector) -> Result<RegionLatent> {
        self.info.check_latent(z)?;
        Ok(RegionLatent::FeatureMap(self.f_forward(z.as_slice()).0))
    }

    fn compose(&self, base: &InteriorBase) -> Result<ImageTensor> {
        let w = self.interior_tensor(base)?;
        Ok(ImageTensor::clamped(self.h_forward(w).0))
    }

    fn differentiable(&self) -> bool {
        true
    }

    fn compose_vjp(&self, base: &InteriorBase, grad_image: &Tensor3) -> Result<(ImageTensor, InteriorGrad)> {
        let w = self.interior_tensor(base)?;
        let (img, cache) = self.h_forward(w);
        img.check_shape(grad_image, "image gradient")?;
        let (gw, _) = self.h_backward(&cache, grad_image);
        Ok((ImageTensor::clamped(img), InteriorGrad::FeatureMap(gw)))
    }

    fn extract_latent_vjp(&self, z: &LatentVector, grad_w: &[f64]) -> Result<Vec<f64>> {
        self.info.check_latent(z)?;
        let (w, cache) = self.f_forward(z.as_slice());
        let gw = Tensor3::from_vec(w.channels, w.height, w.width, grad_w.to_vec())?;
        Ok(self.f_backward(&cache, &gw).0)
    }

    fn to_container(&self) -> Option<Container> {
        let mut c = Container::new(KIND);
        c.meta = serde_json::to_value(&self.cfg).ok()?;
        for (name, values) in self.named_params() {
            c.push(name, vec![values.len()], values.clone());
        }
        Some(c)
    }
}
