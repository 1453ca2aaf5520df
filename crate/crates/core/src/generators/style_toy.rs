use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{GeneratorInfo, GeneratorModel, InteriorBase, InteriorGrad, InteriorShape, RegionLatent, StyleStack};
use crate::error::{Error, Result};
use crate::io::Container;
use crate::nn::{self, init_weights, Conv2d, Dense};
use crate::tensor::{ImageTensor, LatentVector, Tensor3};

pub(super) const KIND: &str = "style-toy";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StyleToyConfig {
    pub latent_dim: usize,
    pub hidden_dim: usize,
    pub style_dim: usize,
    pub channels: usize,
    pub const_res: usize,
    pub mid_res: usize,
    pub image_res: usize,
}

impl Default for StyleToyConfig {
    fn default() -> Self {
        Self {
            latent_dim: 32,
            hidden_dim: 64,
            style_dim: 64,
            channels: 8,
            const_res: 8,
            mid_res: 16,
            image_res: 64,
        }
    }
}

/// Per-channel affine modulation whose gain and bias are affine in the style.
#[derive(Clone, Debug)]
pub struct Modulation {
    pub gain: Dense,
    pub bias: Dense,
}

impl Modulation {
    fn random(rng: &mut ChaCha8Rng, style_dim: usize, channels: usize) -> Self {
        let mut gain = Dense::random(rng, style_dim, channels, 0.3);
        gain.bias = vec![1.0; channels];
        let mut bias = Dense::random(rng, style_dim, channels, 0.3);
        bias.bias = init_weights(rng, channels, 0.1);
        Self { gain, bias }
    }

    /// `(gains, biases)` for one uniform style.
    pub fn eval(&self, style: &[f64]) -> (Vec<f64>, Vec<f64>) {
        (self.gain.forward(style), self.bias.forward(style))
    }
}

/// Style toy: learned constant `C x 8 x 8` input, two upsample+conv blocks
/// each followed by a style modulation, `z` mapped to the style by a two
/// layer perceptron.
#[derive(Clone, Debug)]
pub struct StyleToy {
    cfg: StyleToyConfig,
    info: GeneratorInfo,
    pub mlp1: Dense,
    pub mlp2: Dense,
    pub constant: Tensor3,
    pub conv1: Conv2d,
    pub mod1: Modulation,
    pub conv2: Conv2d,
    pub mod2: Modulation,
}

struct LevelCache {
    pre: Tensor3,
    weights: Vec<Vec<f64>>,
    /// per-location effective gain, `C x H x W`
    gain_field: Tensor3,
}

impl StyleToy {
    pub fn random(cfg: StyleToyConfig, seed: u64) -> Result<Self> {
        if !cfg.mid_res.is_multiple_of(cfg.const_res)
            || !cfg.image_res.is_multiple_of(cfg.mid_res)
            || cfg.style_dim == 0
        {
            return Err(Error::InvalidConfig(format!("bad style toy config {cfg:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = cfg.channels;
        let mlp1 = Dense::random(&mut rng, cfg.latent_dim, cfg.hidden_dim, 1.0);
        let mlp2 = Dense::random(&mut rng, cfg.hidden_dim, cfg.style_dim, 1.0);
        let constant = Tensor3::from_vec(
            c,
            cfg.const_res,
            cfg.const_res,
            init_weights(&mut rng, c * cfg.const_res * cfg.const_res, 1.0),
        )?;
        let conv1 = Conv2d::random(&mut rng, c, c, 3, 1, 1.5);
        let mod1 = Modulation::random(&mut rng, cfg.style_dim, c);
        let conv2 = Conv2d::random(&mut rng, c, 3, 3, 1, 1.5);
        let mod2 = Modulation::random(&mut rng, cfg.style_dim, 3);
        let info = GeneratorInfo {
            latent_dim: cfg.latent_dim,
            image_shape: (3, cfg.image_res, cfg.image_res),
            interior: InteriorShape::Style { dim: cfg.style_dim },
        };
        Ok(Self {
            cfg,
            info,
            mlp1,
            mlp2,
            constant,
            conv1,
            mod1,
            conv2,
            mod2,
        })
    }

    pub fn config(&self) -> &StyleToyConfig {
        &self.cfg
    }

    /// Uniform per-channel `(gains, biases)` of both modulation layers.
    pub fn modulation(&self, style: &[f64]) -> [(Vec<f64>, Vec<f64>); 2] {
        [self.mod1.eval(style), self.mod2.eval(style)]
    }

    fn params(&mut self) -> Vec<(&'static str, &mut Vec<f64>)> {
        vec![
            ("mlp1.weight", &mut self.mlp1.weight),
            ("mlp1.bias", &mut self.mlp1.bias),
            ("mlp2.weight", &mut self.mlp2.weight),
            ("mlp2.bias", &mut self.mlp2.bias),
            ("constant", &mut self.constant.data),
            ("conv1.weight", &mut self.conv1.weight),
            ("conv1.bias", &mut self.conv1.bias),
            ("mod1.gain.weight", &mut self.mod1.gain.weight),
            ("mod1.gain.bias", &mut self.mod1.gain.bias),
            ("mod1.bias.weight", &mut self.mod1.bias.weight),
            ("mod1.bias.bias", &mut self.mod1.bias.bias),
            ("conv2.weight", &mut self.conv2.weight),
            ("conv2.bias", &mut self.conv2.bias),
            ("mod2.gain.weight", &mut self.mod2.gain.weight),
            ("mod2.gain.bias", &mut self.mod2.gain.bias),
            ("mod2.bias.weight", &mut self.mod2.bias.weight),
            ("mod2.bias.bias", &mut self.mod2.bias.bias),
        ]
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        if c.kind != KIND {
            return Err(Error::Format(format!("expected {KIND}, got {}", c.kind)));
        }
        let cfg: StyleToyConfig = serde_json::from_value(c.meta.clone()).map_err(|e| Error::Format(e.to_string()))?;
        let mut toy = Self::random(cfg, 0)?;
        for (name, dst) in toy.params() {
            let arr = c.get(name)?;
            if arr.values.len() != dst.len() {
                return Err(Error::dims(format!("weight {name} has wrong length")));
            }
            dst.copy_from_slice(&arr.values);
        }
        Ok(toy)
    }

    fn stack<'a>(&self, base: &'a InteriorBase) -> Result<&'a StyleStack> {
        match base {
            InteriorBase::Style(s) => {
                if s.styles().any(|v| v.len() != self.cfg.style_dim) {
                    return Err(Error::dims("style vector length"));
                }
                Ok(s)
            }
            InteriorBase::FeatureMap(_) => Err(Error::dims("style generator given a feature-map interior")),
        }
    }

    fn modulate(&self, m: &Modulation, stack: &StyleStack, pre: Tensor3) -> Result<(Tensor3, LevelCache)> {
        let (c, h, w) = pre.shape();
        let weights = stack.blend_weights(h, w)?;
        let evals: Vec<(Vec<f64>, Vec<f64>)> = stack.styles().map(|s| m.eval(s)).collect();
        let plane = h * w;
        let mut gain_field = Tensor3::zeros(c, h, w);
        let mut out = Tensor3::zeros(c, h, w);
        for ch in 0..c {
            for p in 0..plane {
                let mut g = 0.0;
                let mut b = 0.0;
                for (wts, (gains, biases)) in weights.iter().zip(&evals) {
                    g += wts[p] * gains[ch];
                    b += wts[p] * biases[ch];
                }
                gain_field.data[ch * plane + p] = g;
                out.data[ch * plane + p] = pre.data[ch * plane + p] * g + b;
            }
        }
        Ok((
            out,
            LevelCache {
                pre,
                weights,
                gain_field,
            },
        ))
    }

    /// Backprop through one modulation; accumulates style gradients and
    /// returns the gradient at the pre-modulation activation.
    fn modulate_backward(
        &self,
        m: &Modulation,
        cache: &LevelCache,
        grad_out: &Tensor3,
        style_grads: &mut [Vec<f64>],
    ) -> Tensor3 {
        let (c, h, w) = cache.pre.shape();
        let plane = h * w;
        for (e, wts) in cache.weights.iter().enumerate() {
            let mut u = vec![0.0; c];
            let mut v = vec![0.0; c];
            for ch in 0..c {
                for p in 0..plane {
                    let g = grad_out.data[ch * plane + p] * wts[p];
                    u[ch] += g * cache.pre.data[ch * plane + p];
                    v[ch] += g;
                }
            }
            let gs = m.gain.backward_input(&u);
            let bs = m.bias.backward_input(&v);
            for ((dst, a), b) in style_grads[e].iter_mut().zip(gs).zip(bs) {
                *dst += a + b;
            }
        }
        grad_out.zip_map(&cache.gain_field, |g, gain| g * gain)
    }

    fn h_forward(&self, stack: &StyleStack) -> Result<(Tensor3, [LevelCache; 2], Tensor3, Tensor3, Tensor3)> {
        let up1 = nn::upsample(&self.constant, self.cfg.mid_res / self.cfg.const_res);
        let a = self.conv1.forward(&up1);
        let (y1, c1) = self.modulate(&self.mod1, stack, a)?;
        let act = nn::silu_t(&y1);
        let up2 = nn::upsample(&act, self.cfg.image_res / self.cfg.mid_res);
        let b = self.conv2.forward(&up2);
        let (y2, c2) = self.modulate(&self.mod2, stack, b)?;
        let out = y2.map(f64::tanh);
        Ok((out, [c1, c2], y1, up2, up1))
    }
}

impl GeneratorModel for StyleToy {
    fn info(&self) -> &GeneratorInfo {
        &self.info
    }

    fn extract_latent(&self, z: &LatentVector) -> Result<RegionLatent> {
        self.info.check_latent(z)?;
        let hidden: Vec<f64> = self.mlp1.forward(z.as_slice()).into_iter().map(nn::silu).collect();
        Ok(RegionLatent::Style(self.mlp2.forward(&hidden)))
    }

    fn compose(&self, base: &InteriorBase) -> Result<ImageTensor> {
        let stack = self.stack(base)?;
        Ok(ImageTensor::clamped(self.h_forward(stack)?.0))
    }

    fn differentiable(&self) -> bool {
        true
    }

    fn compose_vjp(&self, base: &InteriorBase, grad_image: &Tensor3) -> Result<(ImageTensor, InteriorGrad)> {
        let stack = self.stack(base)?;
        let (out, [c1, c2], y1, up2, _up1) = self.h_forward(stack)?;
        out.check_shape(grad_image, "image gradient")?;
        let n_styles = stack.layers.len() + 1;
        let mut style_grads = vec![vec![0.0; self.cfg.style_dim]; n_styles];

        let g_y2 = out.zip_map(grad_image, |t, g| g * (1.0 - t * t));
        let g_b = self.modulate_backward(&self.mod2, &c2, &g_y2, &mut style_grads);
        let g_up2 = self.conv2.backward_input(up2.height, up2.width, &g_b);
        let g_act = nn::upsample_backward(&g_up2, self.cfg.image_res / self.cfg.mid_res);
        let g_y1 = nn::silu_backward(&y1, &g_act);
        // The constant input is not a function of the style, so the
        // gradient stops at the first modulation.
        self.modulate_backward(&self.mod1, &c1, &g_y1, &mut style_grads);
        Ok((ImageTensor::clamped(out), InteriorGrad::Style(style_grads)))
    }

    fn extract_latent_vjp(&self, z: &LatentVector, grad_w: &[f64]) -> Result<Vec<f64>> {
        self.info.check_latent(z)?;
        if grad_w.len() != self.cfg.style_dim {
            return Err(Error::dims("style gradient length"));
        }
        let pre = self.mlp1.forward(z.as_slice());
        let g_hidden = self.mlp2.backward_input(grad_w);
        let g_pre: Vec<f64> = g_hidden.iter().zip(&pre).map(|(&g, &p)| g * nn::silu_grad(p)).collect();
        Ok(self.mlp1.backward_input(&g_pre))
    }

    fn to_container(&self) -> Option<Container> {
        let mut c = Container::new(KIND);
        c.meta = serde_json::to_value(&self.cfg).ok()?;
        let mut me = self.clone();
        for (name, values) in me.params() {
            c.push(name, vec![values.len()], values.clone());
        }
        Some(c)
    }
}
