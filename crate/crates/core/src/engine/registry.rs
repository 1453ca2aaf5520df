use std::collections::BTreeMap;
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generators::{GeneratorModel, SplitKind};
use crate::scorers::SemanticScorer;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Generator,
    Scorer,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Transport {
    InProcessToy,
    ExternalAdapter,
}

/// Listing entry with capability flags derived from the model itself.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelEntry {
    pub name: String,
    pub kind: ModelKind,
    pub transport: Transport,
    pub differentiable: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split_kind: Option<SplitKind>,
    /// Generators: latent dim, image shape, interior size.
    /// Scorers: the declared score range.
    pub dims: serde_json::Value,
}

#[derive(Default)]
struct Models {
    generators: BTreeMap<String, (Arc<dyn GeneratorModel>, Transport)>,
    scorers: BTreeMap<String, (Arc<dyn SemanticScorer>, Transport)>,
}

/// Named generators and scorers. Names are unique across both kinds.
#[derive(Default)]
pub struct Registry {
    models: RwLock<Models>,
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    fn check_free(m: &Models, name: &str) -> Result<()> {
        if m.generators.contains_key(name) || m.scorers.contains_key(name) {
            Err(Error::InvalidConfig(format!(
                "model name {name:?} is already registered"
            )))
        } else {
            Ok(())
        }
    }

    pub fn add_generator(&self, name: &str, g: Arc<dyn GeneratorModel>, transport: Transport) -> Result<()> {
        let mut m = self.models.write().unwrap_or_else(|p| p.into_inner());
        Self::check_free(&m, name)?;
        m.generators.insert(name.to_string(), (g, transport));
        Ok(())
    }

    pub fn add_scorer(&self, name: &str, c: Arc<dyn SemanticScorer>, transport: Transport) -> Result<()> {
        let mut m = self.models.write().unwrap_or_else(|p| p.into_inner());
        Self::check_free(&m, name)?;
        m.scorers.insert(name.to_string(), (c, transport));
        Ok(())
    }

    pub fn generator(&self, name: &str) -> Result<Arc<dyn GeneratorModel>> {
        let m = self.models.read().unwrap_or_else(|p| p.into_inner());
        m.generators
            .get(name)
            .map(|(g, _)| g.clone())
            .ok_or_else(|| Error::UnknownModel(name.to_string()))
    }

    pub fn scorer(&self, name: &str) -> Result<Arc<dyn SemanticScorer>> {
        let m = self.models.read().unwrap_or_else(|p| p.into_inner());
        m.scorers
            .get(name)
            .map(|(c, _)| c.clone())
            .ok_or_else(|| Error::UnknownModel(name.to_string()))
    }

    pub fn list(&self) -> Vec<ModelEntry> {
        let m = self.models.read().unwrap_or_else(|p| p.into_inner());
        let gens = m.generators.iter().map(|(name, (g, t))| {
            let info = g.info();
            ModelEntry {
                name: name.clone(),
                kind: ModelKind::Generator,
                transport: *t,
                differentiable: g.differentiable(),
                split_kind: Some(info.split_kind()),
                dims: serde_json::json!({
                    "latent_dim": info.latent_dim,
                    "image_shape": [info.image_shape.0, info.image_shape.1, info.image_shape.2],
                    "interior": info.interior,
                }),
            }
        });
        let scorers = m.scorers.iter().map(|(name, (c, t))| {
            let (lo, hi) = c.score_range();
            ModelEntry {
                name: name.clone(),
                kind: ModelKind::Scorer,
                transport: *t,
                differentiable: c.differentiable(),
                split_kind: None,
                dims: serde_json::json!({ "score_range": [lo, hi] }),
            }
        });
        gens.chain(scorers).collect()
    }
}
