//! Procedural colored-shapes corpus: one square, circle or triangle in a
//! named color on a gray background.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::scorers::{COLOR_WORDS, GRAY, PALETTE, SHAPE_WORDS};
use crate::tensor::ImageTensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Square,
    Circle,
    Triangle,
}

impl Shape {
    pub const ALL: [Shape; 3] = [Shape::Square, Shape::Circle, Shape::Triangle];

    pub fn word(self) -> &'static str {
        SHAPE_WORDS[self as usize]
    }

    /// Whether the point `(x, y)` lies in a shape of extent `size` centred at
    /// `(cx, cy)`. Triangles point up with base equal to height.
    pub fn contains(self, x: f64, y: f64, cx: f64, cy: f64, size: f64) -> bool {
        let half = size / 2.0;
        match self {
            Shape::Square => (x - cx).abs() <= half && (y - cy).abs() <= half,
            Shape::Circle => (x - cx).powi(2) + (y - cy).powi(2) <= half * half,
            Shape::Triangle => {
                let top = cy - half;
                let t = (y - top) / size;
                (0.0..=1.0).contains(&t) && (x - cx).abs() <= t * half
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapeSpec {
    pub shape: Shape,
    /// Index into the scorer palette; never the background gray.
    pub color: usize,
    pub cx: f64,
    pub cy: f64,
    pub size: f64,
}

impl ShapeSpec {
    pub fn color_word(&self) -> &'static str {
        COLOR_WORDS[self.color]
    }

    /// Renders at `res x res` with 4x4 supersampling at the edges.
    pub fn render(&self, res: usize) -> ImageTensor {
        let mut img = ImageTensor::filled(res, res, PALETTE[GRAY]);
        let plane = res * res;
        let fg = PALETTE[self.color];
        let bg = PALETTE[GRAY];
        let data = img.data_mut();
        for row in 0..res {
            for col in 0..res {
                let mut hits = 0;
                for sy in 0..4 {
                    for sx in 0..4 {
                        let x = col as f64 + (sx as f64 + 0.5) / 4.0;
                        let y = row as f64 + (sy as f64 + 0.5) / 4.0;
                        if self.shape.contains(x, y, self.cx, self.cy, self.size) {
                            hits += 1;
                        }
                    }
                }
                let a = hits as f64 / 16.0;
                let p = row * res + col;
                for c in 0..3 {
                    data[c * plane + p] = a * fg[c] + (1.0 - a) * bg[c];
                }
            }
        }
        img
    }
}

/// Latent layout used by [`scene_for_latent`]: shape logits, color logits,
/// then centre x, centre y and size as standard-normal coordinates. Any
/// remaining dimensions are ignored by the scene.
pub const SHAPE_LOGITS: std::ops::Range<usize> = 0..3;
pub const COLOR_LOGITS: std::ops::Range<usize> = 3..12;
pub const SCENE_LATENT_MIN: usize = 15;

fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

fn argmax(v: &[f64]) -> usize {
    (0..v.len()).fold(0, |best, i| if v[i] > v[best] { i } else { best })
}

/// The scene a latent stands for. Every `z ~ N(0, I)` maps to exactly one
/// shape; shape and color are the argmax of their logit blocks, and the
/// geometry is uniform over the canvas interior.
pub fn scene_for_latent(z: &[f64], res: usize) -> ShapeSpec {
    assert!(z.len() >= SCENE_LATENT_MIN, "latent too short for a scene");
    let r = res as f64;
    let colors = shape_colors();
    let size = r * (0.3 + 0.25 * normal_cdf(z[14]));
    let margin = size / 2.0 + 1.0;
    let span = r - 2.0 * margin;
    ShapeSpec {
        shape: Shape::ALL[argmax(&z[SHAPE_LOGITS])],
        color: colors[argmax(&z[COLOR_LOGITS])],
        cx: margin + span * normal_cdf(z[12]),
        cy: margin + span * normal_cdf(z[13]),
        size,
    }
}

/// Colors a corpus shape may take: every palette entry except gray.
pub fn shape_colors() -> Vec<usize> {
    (0..PALETTE.len()).filter(|&c| c != GRAY).collect()
}

/// Draws `count` random shape specs that fit inside a `res x res` canvas.
pub fn sample_specs(count: usize, res: usize, seed: u64) -> Vec<ShapeSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let colors = shape_colors();
    let r = res as f64;
    (0..count)
        .map(|_| {
            let size = rng.random_range(0.3 * r..0.55 * r);
            let margin = size / 2.0 + 1.0;
            ShapeSpec {
                shape: Shape::ALL[rng.random_range(0..3)],
                color: colors[rng.random_range(0..colors.len())],
                cx: rng.random_range(margin..r - margin),
                cy: rng.random_range(margin..r - margin),
                size,
            }
        })
        .collect()
}
