//! Bundled toy models and a registry pre-populated with them.
//!
//! `toy-shapes` carries trained weights (see the `train_toy` example); the
//! style toy is random-weight and exists to exercise the style split.

use std::sync::Arc;

use crate::engine::{Registry, Transport};
use crate::error::Result;
use crate::generators::{FeatureMapToy, StyleToy, StyleToyConfig};
use crate::io::Container;
use crate::scorers::ToyScorer;

pub const TOY_SHAPES: &str = "toy-shapes";
pub const TOY_STYLE: &str = "toy-style";
pub const TOY_SCORER: &str = "toy-scorer";

pub const STYLE_TOY_SEED: u64 = 7;

static TOY_SHAPES_WEIGHTS: &[u8] = include_bytes!("../assets/toy_shapes_feature.bin");

/// The trained feature-map toy, decoded from the embedded container.
pub fn toy_shapes() -> Result<FeatureMapToy> {
    FeatureMapToy::from_container(&Container::from_bytes(TOY_SHAPES_WEIGHTS)?)
}

pub fn toy_style() -> Result<StyleToy> {
    StyleToy::random(StyleToyConfig::default(), STYLE_TOY_SEED)
}

/// Registry holding `toy-shapes`, `toy-style` and `toy-scorer`, all in-process.
pub fn toy_registry() -> Result<Registry> {
    let reg = Registry::new();
    reg.add_generator(TOY_SHAPES, Arc::new(toy_shapes()?), Transport::InProcessToy)?;
    reg.add_generator(TOY_STYLE, Arc::new(toy_style()?), Transport::InProcessToy)?;
    reg.add_scorer(TOY_SCORER, Arc::new(ToyScorer::default()), Transport::InProcessToy)?;
    Ok(reg)
}
