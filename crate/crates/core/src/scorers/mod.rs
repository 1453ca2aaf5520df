//! Text-image semantic scoring `C(x, t)`, its masked form, and the image
//! consistency distance `d`.

mod distance;
mod toy;

pub use distance::{DistanceWeights, FeatureExtractor, ImageDistance, PreparedReference};
pub use toy::{canonical_shape_stats, ToyScorer, COLOR_WORDS, GRAY, PALETTE, SHAPE_WORDS};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{masked_project, ImageTensor, Mask, Tensor3};

/// Free text, lowercased with whitespace collapsed. Never empty.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Prompt(String);

impl Prompt {
    pub fn new(text: &str) -> Result<Self> {
        let normalized = text
            .split_whitespace()
            .map(str::to_lowercase)
            .collect::<Vec<_>>()
            .join(" ");
        if normalized.is_empty() {
            Err(Error::EmptyPrompt)
        } else {
            Ok(Self(normalized))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        self.0.split(' ')
    }
}

impl TryFrom<String> for Prompt {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        Prompt::new(&s)
    }
}

impl From<Prompt> for String {
    fn from(p: Prompt) -> String {
        p.0
    }
}

impl std::fmt::Display for Prompt {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

/// `C(x, t)`: higher means the image matches the text better.
pub trait SemanticScorer: Send + Sync {
    fn name(&self) -> &str;

    fn differentiable(&self) -> bool {
        false
    }

    fn score_range(&self) -> (f64, f64);

    /// Rejects prompts the scorer cannot interpret.
    fn validate(&self, _t: &Prompt) -> Result<()> {
        Ok(())
    }

    fn score(&self, x: &ImageTensor, t: &Prompt) -> Result<f64>;

    /// Score and its gradient with respect to every pixel value.
    fn score_grad(&self, _x: &ImageTensor, _t: &Prompt) -> Result<(f64, Tensor3)> {
        Err(Error::NotDifferentiable)
    }
}

pub fn score(c: &dyn SemanticScorer, x: &ImageTensor, t: &Prompt) -> Result<f64> {
    c.score(x, t)
}

/// `C_{t,m}(x) = C(x * m, t)`.
pub fn masked_score(c: &dyn SemanticScorer, x: &ImageTensor, m: &Mask, t: &Prompt) -> Result<f64> {
    m.require_nonempty()?;
    let projected = masked_project(x, m)?;
    c.score(&projected, t)
}

/// Masked score and its pixel gradient; the gradient is exactly zero
/// outside the mask.
pub fn masked_score_grad(c: &dyn SemanticScorer, x: &ImageTensor, m: &Mask, t: &Prompt) -> Result<(f64, Tensor3)> {
    m.require_nonempty()?;
    let projected = masked_project(x, m)?;
    let (s, g) = c.score_grad(&projected, t)?;
    Ok((s, g.mul_plane(&m.values())))
}

pub fn image_distance(d: &ImageDistance, x: &ImageTensor, y: &ImageTensor) -> Result<f64> {
    d.distance(x, y)
}
