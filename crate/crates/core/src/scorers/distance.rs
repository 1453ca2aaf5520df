use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::nn::{self, Conv2d};
use crate::tensor::{ImageTensor, Tensor3};

const FEATURE_SEED: u64 = 0x5eed_d157;
const NORM_EPS: f64 = 1e-10;

/// Frozen random conv stack used as a cheap perceptual feature space.
/// Three stride-2 3x3 layers with SiLU; pinned by a fixed seed so every
/// process sees the same weights.
#[derive(Clone, Debug)]
pub struct FeatureExtractor {
    layers: Vec<Conv2d>,
}

impl Default for FeatureExtractor {
    fn default() -> Self {
        Self::seeded(FEATURE_SEED)
    }
}

struct LayerTrace {
    input: Tensor3,
    pre: Tensor3,
}

impl FeatureExtractor {
    pub fn seeded(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let widths = [3, 8, 16, 16];
        let layers = widths
            .windows(2)
            .map(|p| {
                let mut conv = Conv2d::random(&mut rng, p[0], p[1], 3, 2, 1.5);
                conv.bias = nn::init_weights(&mut rng, p[1], 0.1);
                conv
            })
            .collect();
        Self { layers }
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    fn run(&self, x: &Tensor3) -> Vec<LayerTrace> {
        let mut traces = Vec::with_capacity(self.layers.len());
        let mut cur = x.clone();
        for conv in &self.layers {
            let pre = conv.forward(&cur);
            let next = nn::silu_t(&pre);
            traces.push(LayerTrace { input: cur, pre });
            cur = next;
        }
        traces
    }

    /// Channel-normalized activations of every layer.
    pub fn features(&self, x: &Tensor3) -> Vec<Tensor3> {
        self.run(x).iter().map(|t| normalize(&nn::silu_t(&t.pre))).collect()
    }
}

/// Unit-normalizes each spatial location across channels.
fn normalize(a: &Tensor3) -> Tensor3 {
    let plane = a.plane();
    let mut out = a.clone();
    for p in 0..plane {
        let r = norm_at(a, p);
        for c in 0..a.channels {
            out.data[c * plane + p] /= r;
        }
    }
    out
}

fn norm_at(a: &Tensor3, p: usize) -> f64 {
    let plane = a.plane();
    ((0..a.channels).map(|c| a.data[c * plane + p].powi(2)).sum::<f64>() + NORM_EPS).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DistanceWeights {
    pub pixel: f64,
    pub perceptual: f64,
}

impl Default for DistanceWeights {
    fn default() -> Self {
        Self {
            pixel: 1.0,
            perceptual: 1.0,
        }
    }
}

/// `d(x, y) = pixel * mean((x - y)^2) + perceptual * mean_l mean_p |n_l(x) - n_l(y)|^2`.
#[derive(Clone, Debug, Default)]
pub struct ImageDistance {
    pub weights: DistanceWeights,
    extractor: FeatureExtractor,
}

/// A reference image with its features computed once.
#[derive(Clone, Debug)]
pub struct PreparedReference {
    image: Tensor3,
    features: Vec<Tensor3>,
}

impl PreparedReference {
    pub fn image(&self) -> &Tensor3 {
        &self.image
    }
}

impl ImageDistance {
    pub fn new(weights: DistanceWeights) -> Self {
        Self {
            weights,
            extractor: FeatureExtractor::default(),
        }
    }

    pub fn prepare(&self, x: &ImageTensor) -> PreparedReference {
        let features = if self.weights.perceptual != 0.0 {
            self.extractor.features(x)
        } else {
            Vec::new()
        };
        PreparedReference {
            image: x.tensor().clone(),
            features,
        }
    }

    pub fn distance(&self, x: &ImageTensor, y: &ImageTensor) -> Result<f64> {
        x.check_shape(y, "distance operand")?;
        self.distance_to(&self.prepare(x), y)
    }

    pub fn distance_to(&self, r: &PreparedReference, y: &ImageTensor) -> Result<f64> {
        Ok(self.eval(r, y, false)?.0)
    }

    /// Distance and its gradient with respect to `y`.
    pub fn distance_grad(&self, r: &PreparedReference, y: &ImageTensor) -> Result<(f64, Tensor3)> {
        let (d, g) = self.eval(r, y, true)?;
        Ok((d, g.expect("gradient requested")))
    }

    fn eval(&self, r: &PreparedReference, y: &ImageTensor, want_grad: bool) -> Result<(f64, Option<Tensor3>)> {
        r.image.check_shape(y, "distance operand")?;
        let n = y.data.len() as f64;
        let mut total = 0.0;
        let mut grad = want_grad.then(|| Tensor3::zeros(y.channels, y.height, y.width));

        if self.weights.pixel != 0.0 {
            let mut sq = 0.0;
            for (i, (a, b)) in r.image.data.iter().zip(&y.data).enumerate() {
                let diff = b - a;
                sq += diff * diff;
                if let Some(g) = grad.as_mut() {
                    g.data[i] += self.weights.pixel * 2.0 * diff / n;
                }
            }
            total += self.weights.pixel * sq / n;
        }

        if self.weights.perceptual != 0.0 {
            let traces = self.extractor.run(y);
            let depth = traces.len() as f64;
            // Gradient flowing into each layer's output from deeper layers.
            let mut upstream: Option<Tensor3> = None;
            let mut layer_grads: Vec<Tensor3> = Vec::new();
            let mut per_layer = Vec::with_capacity(traces.len());
            for (l, t) in traces.iter().enumerate() {
                let act = nn::silu_t(&t.pre);
                let feat = normalize(&act);
                let refl = &r.features[l];
                let locations = feat.plane() as f64;
                let mut sq = 0.0;
                let mut g_feat = Tensor3::zeros(feat.channels, feat.height, feat.width);
                for i in 0..feat.data.len() {
                    let diff = feat.data[i] - refl.data[i];
                    sq += diff * diff;
                    g_feat.data[i] = self.weights.perceptual * 2.0 * diff / (locations * depth);
                }
                per_layer.push(sq / locations);
                if want_grad {
                    layer_grads.push(normalize_backward(&act, &feat, &g_feat));
                }
            }
            total += self.weights.perceptual * per_layer.iter().sum::<f64>() / depth;

            if let Some(g) = grad.as_mut() {
                for l in (0..traces.len()).rev() {
                    let mut g_act = layer_grads[l].clone();
                    if let Some(u) = upstream.take() {
                        for (a, b) in g_act.data.iter_mut().zip(&u.data) {
                            *a += b;
                        }
                    }
                    let g_pre = nn::silu_backward(&traces[l].pre, &g_act);
                    let input = &traces[l].input;
                    upstream = Some(self.extractor.layers[l].backward_input(input.height, input.width, &g_pre));
                }
                let g_in = upstream.expect("at least one layer");
                for (a, b) in g.data.iter_mut().zip(&g_in.data) {
                    *a += b;
                }
            }
        }
        Ok((total, grad))
    }
}

/// Backward of per-location unit normalization: `(g - n (n . g)) / r`.
fn normalize_backward(act: &Tensor3, feat: &Tensor3, g: &Tensor3) -> Tensor3 {
    let plane = act.plane();
    let mut out = g.clone();
    for p in 0..plane {
        let r = norm_at(act, p);
        let dot: f64 = (0..act.channels)
            .map(|c| feat.data[c * plane + p] * g.data[c * plane + p])
            .sum();
        for c in 0..act.channels {
            let i = c * plane + p;
            out.data[i] = (g.data[i] - feat.data[i] * dot) / r;
        }
    }
    out
}
