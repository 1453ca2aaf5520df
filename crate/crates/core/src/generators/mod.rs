//! Generators decomposed as `G = h(f(z))`, and the region split that freezes
//! the interior representation outside a painted mask.
//!
//! Two interior kinds are supported:
//!
//! * **feature map** – `w` is a `C x H x W` activation. The split keeps
//!   `w0 = w - w*m` and recombines `w0 + w'*m` before `h`, with `m` the mask
//!   area-averaged to the feature resolution.
//! * **style** – `w` is a style vector that modulates every layer. The split
//!   runs each modulation layer with the new style inside the (per-resolution)
//!   mask and the frozen style outside, blending convexly on soft cells.
//!
//! Implementations only provide `f`, `h` and their vector-Jacobian products;
//! the split construction lives here and is shared by every model, including
//! out-of-process ones.

mod feature_toy;
mod style_toy;

pub use feature_toy::{FeatureMapToy, FeatureToyConfig};
pub use style_toy::{StyleToy, StyleToyConfig};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::Container;
use crate::tensor::{downsample_mask, FeatureMask, ImageTensor, LatentVector, Mask, Tensor3};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitKind {
    FeatureMap,
    Style,
}

/// Declared interior shape of a generator.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum InteriorShape {
    FeatureMap {
        channels: usize,
        height: usize,
        width: usize,
    },
    Style {
        dim: usize,
    },
}

impl InteriorShape {
    pub fn split_kind(&self) -> SplitKind {
        match self {
            InteriorShape::FeatureMap { .. } => SplitKind::FeatureMap,
            InteriorShape::Style { .. } => SplitKind::Style,
        }
    }

    pub fn len(&self) -> usize {
        match *self {
            InteriorShape::FeatureMap {
                channels,
                height,
                width,
            } => channels * height * width,
            InteriorShape::Style { dim } => dim,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorInfo {
    pub latent_dim: usize,
    /// `(channels, height, width)`
    pub image_shape: (usize, usize, usize),
    pub interior: InteriorShape,
}

impl GeneratorInfo {
    pub fn split_kind(&self) -> SplitKind {
        self.interior.split_kind()
    }

    pub fn check_latent(&self, z: &LatentVector) -> Result<()> {
        if z.dim() == self.latent_dim {
            Ok(())
        } else {
            Err(Error::dims(format!(
                "latent has {} entries, generator expects {}",
                z.dim(),
                self.latent_dim
            )))
        }
    }

    pub fn check_mask(&self, m: &Mask) -> Result<()> {
        let (_, h, w) = self.image_shape;
        if m.height == h && m.width == w {
            Ok(())
        } else {
            Err(Error::dims(format!("mask {}x{} vs image {h}x{w}", m.height, m.width)))
        }
    }
}

/// The interior latent `w = f(z)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum RegionLatent {
    FeatureMap(Tensor3),
    Style(Vec<f64>),
}

impl RegionLatent {
    pub fn kind(&self) -> SplitKind {
        match self {
            RegionLatent::FeatureMap(_) => SplitKind::FeatureMap,
            RegionLatent::Style(_) => SplitKind::Style,
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        match self {
            RegionLatent::FeatureMap(t) => &t.data,
            RegionLatent::Style(v) => v,
        }
    }

    pub fn len(&self) -> usize {
        self.as_slice().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Same layout as `self`, new values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        if values.len() != self.len() {
            return Err(Error::dims(format!(
                "{} values for a latent of {}",
                values.len(),
                self.len()
            )));
        }
        Ok(match self {
            RegionLatent::FeatureMap(t) => {
                RegionLatent::FeatureMap(Tensor3::from_vec(t.channels, t.height, t.width, values)?)
            }
            RegionLatent::Style(_) => RegionLatent::Style(values),
        })
    }

    pub fn same_layout(&self, other: &RegionLatent) -> bool {
        match (self, other) {
            (RegionLatent::FeatureMap(a), RegionLatent::FeatureMap(b)) => a.same_shape(b),
            (RegionLatent::Style(a), RegionLatent::Style(b)) => a.len() == b.len(),
            _ => false,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.as_slice().iter().all(|v| v.is_finite())
    }
}

/// One painted style region on top of a [`StyleStack`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StyleLayer {
    pub mask: Mask,
    pub style: Vec<f64>,
}

/// A spatially varying style: `initial` everywhere, overridden inside each
/// layer's mask in order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StyleStack {
    pub initial: Vec<f64>,
    pub layers: Vec<StyleLayer>,
}

impl StyleStack {
    pub fn uniform(style: Vec<f64>) -> Self {
        Self {
            initial: style,
            layers: Vec::new(),
        }
    }

    /// All styles in blend order (`initial` first).
    pub fn styles(&self) -> impl Iterator<Item = &[f64]> {
        std::iter::once(self.initial.as_slice()).chain(self.layers.iter().map(|l| l.style.as_slice()))
    }

    /// Per-location weight of each style at an `h x w` resolution. Entry 0 is
    /// `initial`; weights at every location sum to one.
    pub fn blend_weights(&self, h: usize, w: usize) -> Result<Vec<Vec<f64>>> {
        let n = h * w;
        let mut weights = vec![vec![1.0; n]];
        for layer in &self.layers {
            let mu = level_mask(&layer.mask, h, w)?;
            for wts in weights.iter_mut() {
                for (a, &m) in wts.iter_mut().zip(&mu) {
                    *a *= 1.0 - m;
                }
            }
            weights.push(mu);
        }
        Ok(weights)
    }
}

/// The representation `h` consumes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum InteriorBase {
    FeatureMap(Tensor3),
    Style(StyleStack),
}

impl From<RegionLatent> for InteriorBase {
    fn from(w: RegionLatent) -> Self {
        match w {
            RegionLatent::FeatureMap(t) => InteriorBase::FeatureMap(t),
            RegionLatent::Style(s) => InteriorBase::Style(StyleStack::uniform(s)),
        }
    }
}

impl InteriorBase {
    pub fn kind(&self) -> SplitKind {
        match self {
            InteriorBase::FeatureMap(_) => SplitKind::FeatureMap,
            InteriorBase::Style(_) => SplitKind::Style,
        }
    }
}

/// Gradient of a scalar with respect to an [`InteriorBase`].
#[derive(Clone, Debug, PartialEq)]
pub enum InteriorGrad {
    FeatureMap(Tensor3),
    /// One gradient per style in [`StyleStack::styles`] order.
    Style(Vec<Vec<f64>>),
}

/// `G = h(f(z))` with an exposed interior latent.
pub trait GeneratorModel: Send + Sync {
    fn info(&self) -> &GeneratorInfo;

    /// `f`: latent to interior representation.
    fn extract_latent(&self, z: &LatentVector) -> Result<RegionLatent>;

    /// `h`: interior representation to image.
    fn compose(&self, base: &InteriorBase) -> Result<ImageTensor>;

    fn generate(&self, z: &LatentVector) -> Result<ImageTensor> {
        let w = self.extract_latent(z)?;
        self.compose(&w.into())
    }

    fn differentiable(&self) -> bool {
        false
    }

    /// Image and the gradient of `<grad_image, h(base)>` with respect to `base`.
    fn compose_vjp(&self, _base: &InteriorBase, _grad_image: &Tensor3) -> Result<(ImageTensor, InteriorGrad)> {
        Err(Error::NotDifferentiable)
    }

    /// Gradient of `<grad_w, f(z)>` with respect to `z`.
    fn extract_latent_vjp(&self, _z: &LatentVector, _grad_w: &[f64]) -> Result<Vec<f64>> {
        Err(Error::NotDifferentiable)
    }

    /// Serialized weights in the container format, when the model has any.
    fn to_container(&self) -> Option<Container> {
        None
    }
}

/// Resamples an image-resolution mask to an `h x w` level: the binary mask
/// itself at full resolution, the area average below it.
pub fn level_mask(m: &Mask, h: usize, w: usize) -> Result<Vec<f64>> {
    if m.height == h && m.width == w {
        Ok(m.values())
    } else {
        Ok(downsample_mask(m, h, w)?.values)
    }
}

/// A generator split around a mask: `w0` frozen outside, free `w` inside.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitState {
    pub mask: Mask,
    /// `w0`. For feature maps, `w - w*m`; for styles, the stack in force
    /// outside the mask.
    pub frozen_outside: InteriorBase,
    /// Mask at the feature resolution (feature-map kind only).
    pub feature_mask: Option<FeatureMask>,
    /// The interior `w` the split was built from; the identity edit.
    pub original_inside: RegionLatent,
}

impl SplitState {
    pub fn kind(&self) -> SplitKind {
        self.original_inside.kind()
    }
}

pub fn make_split(g: &dyn GeneratorModel, z: &LatentVector, m: &Mask) -> Result<SplitState> {
    g.info().check_latent(z)?;
    g.info().check_mask(m)?;
    m.require_nonempty()?;
    let base = InteriorBase::from(g.extract_latent(z)?);
    make_split_from_base(g, &base, m)
}

/// Splits an arbitrary base representation, e.g. one already carrying
/// accepted edits.
pub fn make_split_from_base(g: &dyn GeneratorModel, base: &InteriorBase, m: &Mask) -> Result<SplitState> {
    g.info().check_mask(m)?;
    m.require_nonempty()?;
    match base {
        InteriorBase::FeatureMap(w) => {
            let fm = downsample_mask(m, w.height, w.width)?;
            let inside = w.mul_plane(&fm.values);
            let frozen = w.zip_map(&inside, |a, b| a - b);
            Ok(SplitState {
                mask: m.clone(),
                frozen_outside: InteriorBase::FeatureMap(frozen),
                feature_mask: Some(fm),
                original_inside: RegionLatent::FeatureMap(w.clone()),
            })
        }
        InteriorBase::Style(stack) => {
            // Start from the style that covers most of the new region.
            let mut best = (m.count(), stack.initial.clone());
            let mut remaining = m.clone();
            let mut covered: Vec<(usize, &Vec<f64>)> = Vec::new();
            for layer in stack.layers.iter().rev() {
                let overlap = remaining
                    .bits()
                    .iter()
                    .zip(layer.mask.bits())
                    .filter(|(a, b)| **a && **b)
                    .count();
                covered.push((overlap, &layer.style));
                remaining = Mask::from_bits(
                    m.height,
                    m.width,
                    remaining
                        .bits()
                        .iter()
                        .zip(layer.mask.bits())
                        .map(|(a, b)| *a && !*b)
                        .collect(),
                )?;
            }
            best.0 = remaining.count();
            for (overlap, style) in covered {
                if overlap > best.0 {
                    best = (overlap, style.clone());
                }
            }
            Ok(SplitState {
                mask: m.clone(),
                frozen_outside: InteriorBase::Style(stack.clone()),
                feature_mask: None,
                original_inside: RegionLatent::Style(best.1),
            })
        }
    }
}

/// The representation `h` sees for free latent `w`: `w0 + w*m`, or the
/// frozen stack with `w` painted on top.
pub fn split_interior(s: &SplitState, w: &RegionLatent) -> Result<InteriorBase> {
    if !w.same_layout(&s.original_inside) {
        return Err(Error::dims("free latent does not match the split's interior shape"));
    }
    match (&s.frozen_outside, w) {
        (InteriorBase::FeatureMap(w0), RegionLatent::FeatureMap(wf)) => {
            let fm = s
                .feature_mask
                .as_ref()
                .ok_or_else(|| Error::InvalidConfig("feature split without feature mask".into()))?;
            let inside = wf.mul_plane(&fm.values);
            Ok(InteriorBase::FeatureMap(w0.zip_map(&inside, |a, b| a + b)))
        }
        (InteriorBase::Style(stack), RegionLatent::Style(style)) => {
            let mut stack = stack.clone();
            stack.layers.push(StyleLayer {
                mask: s.mask.clone(),
                style: style.clone(),
            });
            Ok(InteriorBase::Style(stack))
        }
        _ => Err(Error::dims("split kind does not match latent kind")),
    }
}

/// `G_{z,m}(w) = h(w0 + w*m)`.
pub fn generate_split(g: &dyn GeneratorModel, s: &SplitState, w: &RegionLatent) -> Result<ImageTensor> {
    g.compose(&split_interior(s, w)?)
}

/// Split image and the gradient of `<grad_image, G_{z,m}(w)>` with respect to
/// the flattened `w`.
pub fn generate_split_vjp(
    g: &dyn GeneratorModel,
    s: &SplitState,
    w: &RegionLatent,
    grad_image: &Tensor3,
) -> Result<(ImageTensor, Vec<f64>)> {
    let interior = split_interior(s, w)?;
    let (img, grad) = g.compose_vjp(&interior, grad_image)?;
    let gw = match grad {
        InteriorGrad::FeatureMap(gt) => {
            let fm = s.feature_mask.as_ref().expect("feature split has a feature mask");
            gt.mul_plane(&fm.values).data
        }
        InteriorGrad::Style(mut per_style) => per_style
            .pop()
            .ok_or_else(|| Error::InvalidConfig("style gradient missing".into()))?,
    };
    Ok((img, gw))
}

/// `G(z)` and the gradient of `<grad_image, G(z)>` with respect to `z`.
pub fn generate_vjp(g: &dyn GeneratorModel, z: &LatentVector, grad_image: &Tensor3) -> Result<(ImageTensor, Vec<f64>)> {
    let w = g.extract_latent(z)?;
    let (img, grad) = g.compose_vjp(&w.into(), grad_image)?;
    let gw = match grad {
        InteriorGrad::FeatureMap(t) => t.data,
        InteriorGrad::Style(per_style) => per_style.into_iter().next().unwrap_or_default(),
    };
    Ok((img, g.extract_latent_vjp(z, &gw)?))
}

/// Reads the `arch` field of a weight container and builds the matching toy.
pub fn load_toy(container: &Container) -> Result<Box<dyn GeneratorModel>> {
    match container.kind.as_str() {
        feature_toy::KIND => Ok(Box::new(FeatureMapToy::from_container(container)?)),
        style_toy::KIND => Ok(Box::new(StyleToy::from_container(container)?)),
        other => Err(Error::Format(format!("unknown generator architecture {other:?}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blend_weights_sum_to_one() {
        let stack = StyleStack {
            initial: vec![0.0; 2],
            layers: vec![
                StyleLayer {
                    mask: Mask::rect(8, 8, 0, 0, 4, 8),
                    style: vec![1.0; 2],
                },
                StyleLayer {
                    mask: Mask::rect(8, 8, 0, 0, 8, 3),
                    style: vec![2.0; 2],
                },
            ],
        };
        for (h, w) in [(8, 8), (4, 4), (3, 3)] {
            let wts = stack.blend_weights(h, w).unwrap();
            assert_eq!(wts.len(), 3);
            for p in 0..h * w {
                let s: f64 = wts.iter().map(|v| v[p]).sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }
}
