//! Analytic color/shape scorer with a closed vocabulary.
//!
//! Image embedding:
//!
//! * color part – a mass-weighted mean of per-pixel color-kernel responses
//!   `phi_k(x) = exp(-|x - c_k|^2 / tau)`, plus an off-palette response
//!   `r(x) = prod_k (1 - phi_k(x))` that is zero on every prototype color.
//!   Without `r`, pixels far from all prototypes would have a near-zero
//!   kernel vector and cost nothing under the cosine. Pixel mass is zero on
//!   exact zeros (masked-out pixels) and is larger on salient
//!   (non-background) pixels.
//! * shape part – soft moment statistics of the salient-pixel distribution:
//!   cross kurtosis `E[u^2 v^2]`, vertical skew `E[v^3]` and the mean axis
//!   kurtosis, each centred and scaled by the canonical-shape statistics.
//!
//! A word's anchor lives in one part: colors use `phi(c_k)`, shapes use the
//! centred statistics of the continuous canonical shape. The score of a
//! prompt is the mean, over its words, of the cosine between the image's
//! embedding part and the word's anchor.

use std::collections::HashMap;

use super::{Prompt, SemanticScorer};
use crate::error::{Error, Result};
use crate::io::Container;
use crate::tensor::{ImageTensor, Tensor3};

pub const COLOR_WORDS: [&str; 10] = [
    "red", "green", "blue", "yellow", "purple", "orange", "white", "black", "brown", "gray",
];

/// Prototype colors in `[-1, 1]`, aligned with [`COLOR_WORDS`].
pub const PALETTE: [[f64; 3]; 10] = [
    [1.0, -1.0, -1.0],
    [-1.0, 0.6, -1.0],
    [-1.0, -1.0, 1.0],
    [1.0, 1.0, -1.0],
    [0.2, -1.0, 0.6],
    [1.0, 0.0, -1.0],
    [1.0, 1.0, 1.0],
    [-1.0, -1.0, -1.0],
    [0.1, -0.5, -0.8],
    [0.25, 0.25, 0.25],
];

pub const GRAY: usize = 9;

pub const SHAPE_WORDS: [&str; 3] = ["square", "circle", "triangle"];

/// `(E[u^2 v^2], E[v^3], (E[u^4] + E[v^4]) / 2)` of the continuous unit
/// square, disk, and apex-up isosceles triangle (base = height), with `u, v`
/// the standardized coordinates and `v` pointing down the image.
pub fn canonical_shape_stats() -> [[f64; 3]; 3] {
    [
        [1.0, 0.0, 1.8],
        [2.0 / 3.0, 0.0, 2.0],
        [0.8, -2.0 * 2f64.sqrt() / 5.0, 2.4],
    ]
}

const KERNEL_TAU: f64 = 0.2;
/// Pixels with `|x|^2` well above this carry full mass.
const MASS_EPS: f64 = 1e-4;
/// Residual weight of background-colored pixels in the color mean.
const BACKGROUND_WEIGHT: f64 = 0.02;
const MOMENT_EPS: f64 = 1e-9;
const VAR_EPS: f64 = 1e-6;

#[derive(Clone, Copy, Debug)]
enum Token {
    Color(usize),
    Shape(usize),
}

#[derive(Clone, Debug)]
pub struct ToyScorer {
    name: String,
    palette: Vec<[f64; 3]>,
    tau: f64,
    color_anchors: Vec<Vec<f64>>,
    shape_center: [f64; 3],
    shape_scale: [f64; 3],
    shape_anchors: Vec<[f64; 3]>,
    vocab: HashMap<String, Token>,
}

impl Default for ToyScorer {
    fn default() -> Self {
        Self::with_palette("toy-color-shape", PALETTE.to_vec(), KERNEL_TAU)
    }
}

impl ToyScorer {
    pub fn with_palette(name: &str, palette: Vec<[f64; 3]>, tau: f64) -> Self {
        let stats = canonical_shape_stats();
        let mut center = [0.0; 3];
        let mut scale = [0.0; 3];
        for j in 0..3 {
            center[j] = stats.iter().map(|s| s[j]).sum::<f64>() / 3.0;
            scale[j] = (stats.iter().map(|s| (s[j] - center[j]).powi(2)).sum::<f64>() / 3.0).sqrt();
        }
        let shape_anchors = stats
            .iter()
            .map(|s| [0, 1, 2].map(|j| (s[j] - center[j]) / scale[j]))
            .collect();
        let mut me = Self {
            name: name.to_string(),
            palette,
            tau,
            color_anchors: Vec::new(),
            shape_center: center,
            shape_scale: scale,
            shape_anchors,
            vocab: HashMap::new(),
        };
        me.color_anchors = me.palette.iter().map(|c| me.color_features(*c)).collect();
        for (i, w) in COLOR_WORDS.iter().enumerate() {
            me.vocab.insert(w.to_string(), Token::Color(i));
        }
        for (i, w) in SHAPE_WORDS.iter().enumerate() {
            me.vocab.insert(w.to_string(), Token::Shape(i));
        }
        me
    }

    pub fn vocabulary(&self) -> impl Iterator<Item = &str> {
        COLOR_WORDS.iter().chain(SHAPE_WORDS.iter()).copied()
    }

    pub fn palette(&self) -> &[[f64; 3]] {
        &self.palette
    }

    pub fn color_anchor(&self, word: &str) -> Option<&[f64]> {
        match self.vocab.get(word)? {
            Token::Color(i) => Some(&self.color_anchors[*i]),
            Token::Shape(_) => None,
        }
    }

    /// Kernel responses `phi_k(x)` of one pixel color.
    pub fn kernels(&self, x: [f64; 3]) -> Vec<f64> {
        self.palette.iter().map(|c| (-dist2(x, *c) / self.tau).exp()).collect()
    }

    /// Kernel responses followed by the off-palette response.
    pub fn color_features(&self, x: [f64; 3]) -> Vec<f64> {
        let mut f = self.kernels(x);
        let r = f.iter().map(|v| 1.0 - v).product();
        f.push(r);
        f
    }

    fn parse(&self, t: &Prompt) -> Result<Vec<Token>> {
        t.tokens()
            .map(|w| {
                self.vocab
                    .get(w)
                    .copied()
                    .ok_or_else(|| Error::UnknownToken(w.to_string()))
            })
            .collect()
    }

    /// Serializes the palette and anchors in the weight-container format.
    pub fn to_container(&self) -> Container {
        let mut c = Container::new("toy-scorer");
        c.meta = serde_json::json!({
            "name": self.name,
            "tau": self.tau,
            "colors": COLOR_WORDS,
            "shapes": SHAPE_WORDS,
        });
        c.push(
            "palette",
            vec![self.palette.len(), 3],
            self.palette.iter().flatten().copied().collect(),
        );
        c.push(
            "color_anchors",
            vec![self.color_anchors.len(), self.palette.len() + 1],
            self.color_anchors.iter().flatten().copied().collect(),
        );
        c.push(
            "shape_anchors",
            vec![self.shape_anchors.len(), 3],
            self.shape_anchors.iter().flatten().copied().collect(),
        );
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        if c.kind != "toy-scorer" {
            return Err(Error::Format(format!("expected toy-scorer, got {}", c.kind)));
        }
        let name = c.meta["name"].as_str().unwrap_or("toy-color-shape").to_string();
        let tau = c.meta["tau"].as_f64().unwrap_or(KERNEL_TAU);
        let pal = c.get("palette")?;
        if pal.values.len() != 30 {
            return Err(Error::dims("toy scorer palette must be 10 x 3"));
        }
        let palette = pal.values.chunks(3).map(|v| [v[0], v[1], v[2]]).collect();
        Ok(Self::with_palette(&name, palette, tau))
    }

    /// Forward pass with optional backward, returning `(score, grad)`.
    fn evaluate(&self, x: &ImageTensor, t: &Prompt, want_grad: bool) -> Result<(f64, Option<Tensor3>)> {
        let tokens = self.parse(t)?;
        if x.channels != 3 {
            return Err(Error::dims("toy scorer needs an RGB image"));
        }
        let (h, w) = (x.height, x.width);
        let plane = h * w;
        let k = self.palette.len();
        // Feature width: k kernels and the off-palette response.
        let kf = k + 1;
        let needs_shape = tokens.iter().any(|t| matches!(t, Token::Shape(_)));

        // Per-pixel quantities.
        let mut phi = vec![0.0; plane * kf];
        let mut mass = vec![0.0; plane];
        let mut omega = vec![0.0; plane];
        let mut q = vec![0.0; plane];
        for p in 0..plane {
            let px = [x.data[p], x.data[plane + p], x.data[2 * plane + p]];
            let r2 = px.iter().map(|v| v * v).sum::<f64>();
            let a = r2 / (r2 + MASS_EPS);
            let kern = &mut phi[p * kf..(p + 1) * kf];
            for (j, c) in self.palette.iter().enumerate() {
                kern[j] = (-dist2(px, *c) / self.tau).exp();
            }
            kern[k] = kern[..k].iter().map(|v| 1.0 - v).product();
            let bg = kern[GRAY];
            mass[p] = a;
            omega[p] = a * (BACKGROUND_WEIGHT + 1.0 - bg);
            q[p] = a * (1.0 - bg);
        }

        // Color embedding.
        let omega_sum: f64 = omega.iter().sum::<f64>() + MOMENT_EPS;
        let mut phi_sum = vec![0.0; kf];
        for p in 0..plane {
            for j in 0..kf {
                phi_sum[j] += omega[p] * phi[p * kf + j];
            }
        }
        let color_emb: Vec<f64> = phi_sum.iter().map(|v| v / omega_sum).collect();

        let moments = if needs_shape {
            Some(Moments::compute(&q, h, w))
        } else {
            None
        };
        let shape_emb = moments.as_ref().map(|m| {
            let f = m.features();
            [0, 1, 2].map(|j| (f[j] - self.shape_center[j]) / self.shape_scale[j])
        });

        // Score: mean cosine per token, and its gradient w.r.t. each part.
        let n = tokens.len() as f64;
        let mut score = 0.0;
        let mut d_color = vec![0.0; kf];
        let mut d_shape = [0.0; 3];
        for tok in &tokens {
            match *tok {
                Token::Color(i) => {
                    let (c, g) = cosine_grad(&color_emb, &self.color_anchors[i]);
                    score += c / n;
                    for (d, gi) in d_color.iter_mut().zip(g) {
                        *d += gi / n;
                    }
                }
                Token::Shape(i) => {
                    let emb = shape_emb.expect("shape moments computed");
                    let (c, g) = cosine_grad(&emb, &self.shape_anchors[i]);
                    score += c / n;
                    for (d, gi) in d_shape.iter_mut().zip(g) {
                        *d += gi / n;
                    }
                }
            }
        }
        if !want_grad {
            return Ok((score, None));
        }

        // Color backward: c = Phi / Omega.
        let d_phi_sum: Vec<f64> = d_color.iter().map(|d| d / omega_sum).collect();
        let d_omega_sum = -d_color.iter().zip(&phi_sum).map(|(d, s)| d * s).sum::<f64>() / (omega_sum * omega_sum);

        // Shape backward to per-pixel dq.
        let dq = match (&moments, needs_shape) {
            (Some(m), true) => {
                let df = [0, 1, 2].map(|j| d_shape[j] / self.shape_scale[j]);
                Some(m.backward(df, &q, h, w))
            }
            _ => None,
        };

        let mut grad = Tensor3::zeros(3, h, w);
        for p in 0..plane {
            let px = [x.data[p], x.data[plane + p], x.data[2 * plane + p]];
            let kern = &phi[p * kf..(p + 1) * kf];
            // dL/domega_p and dL/dphi_p
            let d_omega = d_omega_sum + kern.iter().zip(&d_phi_sum).map(|(a, b)| a * b).sum::<f64>();
            let d_resid = omega[p] * d_phi_sum[k];
            let mut g = [0.0; 3];
            for j in 0..k {
                // dr/dphi_j = -prod_{i != j} (1 - phi_i)
                let others: f64 = (0..k).filter(|&i| i != j).map(|i| 1.0 - kern[i]).product();
                let d_phi = omega[p] * d_phi_sum[j] - d_resid * others;
                let coef = d_phi * kern[j] * (-2.0 / self.tau);
                for ch in 0..3 {
                    g[ch] += coef * (px[ch] - self.palette[j][ch]);
                }
            }
            // omega = a * (BW + 1 - bg), q = a * (1 - bg)
            let bg = kern[GRAY];
            let dq_p = dq.as_ref().map_or(0.0, |v| v[p]);
            let d_a = d_omega * (BACKGROUND_WEIGHT + 1.0 - bg) + dq_p * (1.0 - bg);
            let d_bg = -(d_omega + dq_p) * mass[p];
            let r2 = px.iter().map(|v| v * v).sum::<f64>();
            let da_dr2 = MASS_EPS / ((r2 + MASS_EPS) * (r2 + MASS_EPS));
            for ch in 0..3 {
                g[ch] += d_a * da_dr2 * 2.0 * px[ch];
                g[ch] += d_bg * bg * (-2.0 / self.tau) * (px[ch] - self.palette[GRAY][ch]);
                grad.data[ch * plane + p] = g[ch];
            }
        }
        Ok((score, Some(grad)))
    }
}

impl SemanticScorer for ToyScorer {
    fn name(&self) -> &str {
        &self.name
    }

    fn differentiable(&self) -> bool {
        true
    }

    fn score_range(&self) -> (f64, f64) {
        (-1.0, 1.0)
    }

    fn validate(&self, t: &Prompt) -> Result<()> {
        self.parse(t).map(|_| ())
    }

    fn score(&self, x: &ImageTensor, t: &Prompt) -> Result<f64> {
        Ok(self.evaluate(x, t, false)?.0)
    }

    fn score_grad(&self, x: &ImageTensor, t: &Prompt) -> Result<(f64, Tensor3)> {
        let (s, g) = self.evaluate(x, t, true)?;
        Ok((s, g.expect("gradient requested")))
    }
}

fn dist2(a: [f64; 3], b: [f64; 3]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}

/// Cosine similarity and its gradient with respect to `v`.
fn cosine_grad(v: &[f64], anchor: &[f64]) -> (f64, Vec<f64>) {
    let an = anchor.iter().map(|a| a * a).sum::<f64>().sqrt();
    let vn2 = v.iter().map(|a| a * a).sum::<f64>() + 1e-24;
    let vn = vn2.sqrt();
    let dot: f64 = v.iter().zip(anchor).map(|(a, b)| a * b).sum();
    let c = dot / (vn * an);
    let g = v
        .iter()
        .zip(anchor)
        .map(|(&vi, &ai)| ai / (vn * an) - dot * vi / (vn2 * vn * an))
        .collect();
    (c, g)
}

/// Weighted moment sums over pixel coordinates `X = (col + 0.5) / W`,
/// `Y = (row + 0.5) / H`.
struct Moments {
    q_total: f64,
    s1x: f64,
    s1y: f64,
    cx: f64,
    cy: f64,
    vx: f64,
    vy: f64,
    sx2: f64,
    sy2: f64,
    a: f64,
    b: f64,
    c4x: f64,
    c4y: f64,
    // partials of the centred sums with respect to the centroid
    sum_dx: f64,
    sum_dy: f64,
    sum_dx_dy2: f64,
    sum_dx2_dy: f64,
    sum_dy2: f64,
    sum_dx3: f64,
    sum_dy3: f64,
}

impl Moments {
    fn coords(h: usize, w: usize, p: usize) -> (f64, f64) {
        (((p % w) as f64 + 0.5) / w as f64, ((p / w) as f64 + 0.5) / h as f64)
    }

    fn compute(q: &[f64], h: usize, w: usize) -> Self {
        let mut s0 = 0.0;
        let mut s1x = 0.0;
        let mut s1y = 0.0;
        for (p, &qp) in q.iter().enumerate() {
            let (x, y) = Self::coords(h, w, p);
            s0 += qp;
            s1x += qp * x;
            s1y += qp * y;
        }
        let q_total = s0 + MOMENT_EPS;
        let cx = s1x / q_total;
        let cy = s1y / q_total;
        let mut m = Moments {
            q_total,
            s1x,
            s1y,
            cx,
            cy,
            vx: 0.0,
            vy: 0.0,
            sx2: 0.0,
            sy2: 0.0,
            a: 0.0,
            b: 0.0,
            c4x: 0.0,
            c4y: 0.0,
            sum_dx: 0.0,
            sum_dy: 0.0,
            sum_dx_dy2: 0.0,
            sum_dx2_dy: 0.0,
            sum_dy2: 0.0,
            sum_dx3: 0.0,
            sum_dy3: 0.0,
        };
        for (p, &qp) in q.iter().enumerate() {
            let (x, y) = Self::coords(h, w, p);
            let dx = x - cx;
            let dy = y - cy;
            let (dx2, dy2) = (dx * dx, dy * dy);
            m.vx += qp * dx2;
            m.vy += qp * dy2;
            m.a += qp * dx2 * dy2;
            m.b += qp * dy2 * dy;
            m.c4x += qp * dx2 * dx2;
            m.c4y += qp * dy2 * dy2;
            m.sum_dx += qp * dx;
            m.sum_dy += qp * dy;
            m.sum_dx_dy2 += qp * dx * dy2;
            m.sum_dx2_dy += qp * dx2 * dy;
            m.sum_dy2 += qp * dy2;
            m.sum_dx3 += qp * dx2 * dx;
            m.sum_dy3 += qp * dy2 * dy;
        }
        m.sx2 = m.vx / q_total + VAR_EPS;
        m.sy2 = m.vy / q_total + VAR_EPS;
        m
    }

    fn features(&self) -> [f64; 3] {
        let q = self.q_total;
        [
            self.a / (q * self.sx2 * self.sy2),
            self.b / (q * self.sy2.powf(1.5)),
            (self.c4x / (self.sx2 * self.sx2) + self.c4y / (self.sy2 * self.sy2)) / (2.0 * q),
        ]
    }

    /// Per-pixel gradient of `df . features` with respect to `q`.
    fn backward(&self, df: [f64; 3], q: &[f64], h: usize, w: usize) -> Vec<f64> {
        let qt = self.q_total;
        let (sx2, sy2) = (self.sx2, self.sy2);
        // f1 = A / (Q sx2 sy2)
        let f1 = self.a / (qt * sx2 * sy2);
        let d_a = df[0] / (qt * sx2 * sy2);
        let mut d_q = -df[0] * f1 / qt;
        let mut d_sx2 = -df[0] * f1 / sx2;
        let mut d_sy2 = -df[0] * f1 / sy2;
        // f2 = B / (Q sy2^1.5)
        let f2 = self.b / (qt * sy2.powf(1.5));
        let d_b = df[1] / (qt * sy2.powf(1.5));
        d_q -= df[1] * f2 / qt;
        d_sy2 -= df[1] * 1.5 * f2 / sy2;
        // f3 = (C4x / sx2^2 + C4y / sy2^2) / (2Q)
        let f3 = (self.c4x / (sx2 * sx2) + self.c4y / (sy2 * sy2)) / (2.0 * qt);
        let d_c4x = df[2] / (2.0 * qt * sx2 * sx2);
        let d_c4y = df[2] / (2.0 * qt * sy2 * sy2);
        d_q -= df[2] * f3 / qt;
        d_sx2 -= df[2] * self.c4x / (qt * sx2 * sx2 * sx2);
        d_sy2 -= df[2] * self.c4y / (qt * sy2 * sy2 * sy2);
        // sx2 = Vx / Q + eps
        let d_vx = d_sx2 / qt;
        let d_vy = d_sy2 / qt;
        d_q -= d_sx2 * self.vx / (qt * qt) + d_sy2 * self.vy / (qt * qt);
        // centroid dependence of the centred sums
        let d_cx = d_a * (-2.0 * self.sum_dx_dy2) + d_vx * (-2.0 * self.sum_dx) + d_c4x * (-4.0 * self.sum_dx3);
        let d_cy = d_a * (-2.0 * self.sum_dx2_dy)
            + d_b * (-3.0 * self.sum_dy2)
            + d_vy * (-2.0 * self.sum_dy)
            + d_c4y * (-4.0 * self.sum_dy3);
        // cx = S1x / Q
        let d_s1x = d_cx / qt;
        let d_s1y = d_cy / qt;
        d_q -= d_cx * self.s1x / (qt * qt) + d_cy * self.s1y / (qt * qt);
        let d_s0 = d_q;

        (0..q.len())
            .map(|p| {
                let (x, y) = Self::coords(h, w, p);
                let dx = x - self.cx;
                let dy = y - self.cy;
                let (dx2, dy2) = (dx * dx, dy * dy);
                d_s0 + d_s1x * x
                    + d_s1y * y
                    + d_vx * dx2
                    + d_vy * dy2
                    + d_a * dx2 * dy2
                    + d_b * dy2 * dy
                    + d_c4x * dx2 * dx2
                    + d_c4y * dy2 * dy2
            })
            .collect()
    }
}
