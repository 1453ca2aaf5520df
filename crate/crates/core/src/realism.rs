//! Automated stand-in for human realism judgments.
//!
//! The toy generator is trained on flat-colored shapes, so realistic outputs
//! are made of pixels close to a small set of prototype colors. The proxy is
//! the negated mean squared distance from each pixel to its nearest
//! prototype: 0 for an image built purely from corpus colors, more negative
//! as the image drifts off that manifold (muddy blends, saturated noise).
//! It is only ever logged, never optimized.

use serde::{Deserialize, Serialize};

use crate::scorers::PALETTE;
use crate::tensor::ImageTensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RealismProxy {
    pub prototypes: Vec<[f64; 3]>,
}

impl Default for RealismProxy {
    fn default() -> Self {
        Self {
            prototypes: PALETTE.to_vec(),
        }
    }
}

impl RealismProxy {
    pub fn score(&self, x: &ImageTensor) -> f64 {
        let plane = x.plane();
        if plane == 0 || x.channels != 3 {
            return 0.0;
        }
        let total: f64 = (0..plane)
            .map(|p| {
                let px = [x.data[p], x.data[plane + p], x.data[2 * plane + p]];
                self.prototypes
                    .iter()
                    .map(|c| (0..3).map(|i| (px[i] - c[i]).powi(2)).sum::<f64>())
                    .fold(f64::INFINITY, f64::min)
            })
            .sum();
        -total / plane as f64
    }
}
