//! Service configuration: one TOML file, then `PAINTWORD_*` environment
//! overrides on top.
//!
//! ```toml
//! bind = "127.0.0.1:8080"
//! preview_every = 25
//!
//! [schedule]
//! phases = [{ method = "cma", max_evaluations = 3000 }, { method = "grad", max_steps = 300 }]
//!
//! [[models]]
//! name = "toy-shapes"
//! kind = "generator"
//! builtin = "toy-shapes"
//!
//! [[models]]
//! name = "remote-shapes"
//! kind = "generator"
//! adapter = "unix:/tmp/shapes.sock"
//! ```

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use paintword::assets;
use paintword::engine::{EngineConfig, ModelKind, Registry, Transport};
use paintword::generators::load_toy;
use paintword::io::Container;
use paintword::optim::{OptimizationSchedule, Phase};
use paintword::scorers::ToyScorer;
use paintword::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::adapter::{AdapterClient, AdapterGenerator, AdapterScorer};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub bind: String,
    pub preview_every: usize,
    pub preview_downscale: usize,
    pub realism_probe: bool,
    /// Used for edits that do not send their own schedule.
    pub schedule: OptimizationSchedule,
    pub models: Vec<ModelSpec>,
    /// Further TOML files, each with a `[[models]]` list.
    pub registry_files: Vec<PathBuf>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        let engine = EngineConfig::default();
        Self {
            bind: "127.0.0.1:8080".into(),
            preview_every: engine.preview_every,
            preview_downscale: engine.preview_downscale,
            realism_probe: engine.realism_probe,
            schedule: OptimizationSchedule::default(),
            models: Vec::new(),
            registry_files: Vec::new(),
        }
    }
}

/// One registry entry. Exactly one of `builtin`, `weights` and `adapter`
/// names the model's source.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub name: String,
    pub kind: ModelKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub builtin: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<PathBuf>,
    /// `unix:<path>` or `tcp:<host:port>`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adapter: Option<String>,
    /// Model name on the adapter side; defaults to `name`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub remote_name: Option<String>,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
}

fn default_timeout_ms() -> u64 {
    10_000
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RegistryFile {
    models: Vec<ModelSpec>,
}

fn config_err(e: impl std::fmt::Display) -> Error {
    Error::InvalidConfig(e.to_string())
}

impl ServiceConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(config_err)
    }

    /// Reads `path` (when given) and applies the process environment.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => Self::from_toml(&std::fs::read_to_string(p)?)?,
            None => Self::default(),
        };
        cfg.apply_env(std::env::vars())?;
        Ok(cfg)
    }

    /// Applies `PAINTWORD_*` overrides from `vars`:
    ///
    /// | variable | effect |
    /// |---|---|
    /// | `PAINTWORD_BIND` | listen address |
    /// | `PAINTWORD_PREVIEW_EVERY` | preview cadence in evaluations |
    /// | `PAINTWORD_PREVIEW_DOWNSCALE` | preview box-filter factor |
    /// | `PAINTWORD_CMA_EVALUATIONS` | budget of every default CMA phase |
    /// | `PAINTWORD_GRAD_STEPS` | budget of every default gradient phase |
    /// | `PAINTWORD_WALL_CLOCK_S` | default wall-clock budget |
    /// | `PAINTWORD_REGISTRY_FILES` | extra registry files, `:`-separated |
    pub fn apply_env(&mut self, vars: impl IntoIterator<Item = (String, String)>) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.trim()
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("{key}={v:?} is not a valid number")))
        }
        for (key, value) in vars {
            match key.as_str() {
                "PAINTWORD_BIND" => self.bind = value,
                "PAINTWORD_PREVIEW_EVERY" => self.preview_every = num(&key, &value)?,
                "PAINTWORD_PREVIEW_DOWNSCALE" => self.preview_downscale = num(&key, &value)?,
                "PAINTWORD_CMA_EVALUATIONS" => {
                    let n: usize = num(&key, &value)?;
                    for p in &mut self.schedule.phases {
                        if let Phase::Cma { max_evaluations, .. } = p {
                            *max_evaluations = n;
                        }
                    }
                }
                "PAINTWORD_GRAD_STEPS" => {
                    let n: usize = num(&key, &value)?;
                    for p in &mut self.schedule.phases {
                        if let Phase::Grad { max_steps, .. } = p {
                            *max_steps = n;
                        }
                    }
                }
                "PAINTWORD_WALL_CLOCK_S" => self.schedule.wall_clock_budget_s = num(&key, &value)?,
                "PAINTWORD_REGISTRY_FILES" => {
                    self.registry_files = value.split(':').filter(|s| !s.is_empty()).map(PathBuf::from).collect();
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn engine_config(&self) -> EngineConfig {
        EngineConfig {
            preview_every: self.preview_every,
            preview_downscale: self.preview_downscale,
            realism_probe: self.realism_probe,
        }
    }

    /// Every model entry: inline ones first, then each registry file in
    /// order. With none configured, the bundled toys.
    pub fn model_specs(&self) -> Result<Vec<ModelSpec>> {
        let mut specs = self.models.clone();
        for path in &self.registry_files {
            let text = std::fs::read_to_string(path)?;
            let file: RegistryFile =
                toml::from_str(&text).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
            specs.extend(file.models);
        }
        if specs.is_empty() {
            specs = [
                (assets::TOY_SHAPES, ModelKind::Generator),
                (assets::TOY_STYLE, ModelKind::Generator),
                (assets::TOY_SCORER, ModelKind::Scorer),
            ]
            .into_iter()
            .map(|(name, kind)| ModelSpec {
                name: name.into(),
                kind,
                builtin: Some(name.into()),
                weights: None,
                adapter: None,
                remote_name: None,
                timeout_ms: default_timeout_ms(),
            })
            .collect();
        }
        Ok(specs)
    }

    /// Builds the registry, connecting to every adapter (which performs the
    /// registration handshake).
    pub fn build_registry(&self) -> Result<Registry> {
        let reg = Registry::new();
        for spec in self.model_specs()? {
            register(&reg, &spec)?;
        }
        Ok(reg)
    }
}

fn register(reg: &Registry, spec: &ModelSpec) -> Result<()> {
    let sources = [spec.builtin.is_some(), spec.weights.is_some(), spec.adapter.is_some()];
    if sources.iter().filter(|s| **s).count() != 1 {
        return Err(config_err(format!(
            "model {:?} needs exactly one of builtin, weights or adapter",
            spec.name
        )));
    }
    let kind_mismatch = || config_err(format!("model {:?} is not a {:?}", spec.name, spec.kind));
    if let Some(b) = &spec.builtin {
        return match (b.as_str(), spec.kind) {
            (assets::TOY_SHAPES, ModelKind::Generator) => {
                reg.add_generator(&spec.name, Arc::new(assets::toy_shapes()?), Transport::InProcessToy)
            }
            (assets::TOY_STYLE, ModelKind::Generator) => {
                reg.add_generator(&spec.name, Arc::new(assets::toy_style()?), Transport::InProcessToy)
            }
            (assets::TOY_SCORER, ModelKind::Scorer) => {
                reg.add_scorer(&spec.name, Arc::new(ToyScorer::default()), Transport::InProcessToy)
            }
            (assets::TOY_SHAPES | assets::TOY_STYLE | assets::TOY_SCORER, _) => Err(kind_mismatch()),
            (other, _) => Err(Error::UnknownModel(format!("no builtin model {other:?}"))),
        };
    }
    if let Some(path) = &spec.weights {
        let container = Container::load(path)?;
        return match spec.kind {
            ModelKind::Generator => {
                reg.add_generator(&spec.name, Arc::from(load_toy(&container)?), Transport::InProcessToy)
            }
            ModelKind::Scorer => reg.add_scorer(
                &spec.name,
                Arc::new(ToyScorer::from_container(&container)?),
                Transport::InProcessToy,
            ),
        };
    }
    let address = spec.adapter.as_deref().expect("checked above");
    let client = Arc::new(AdapterClient::new(address, Duration::from_millis(spec.timeout_ms))?);
    let remote = spec.remote_name.as_deref().unwrap_or(&spec.name);
    match spec.kind {
        ModelKind::Generator => reg.add_generator(
            &spec.name,
            Arc::new(AdapterGenerator::connect(client, remote)?),
            Transport::ExternalAdapter,
        ),
        ModelKind::Scorer => reg.add_scorer(
            &spec.name,
            Arc::new(AdapterScorer::connect(client, remote)?),
            Transport::ExternalAdapter,
        ),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn env_overrides_file_values() {
        let mut cfg = ServiceConfig::from_toml("bind = \"0.0.0.0:9000\"\npreview_every = 10\n").unwrap();
        cfg.apply_env([
            ("PAINTWORD_PREVIEW_EVERY".to_string(), "50".to_string()),
            ("PAINTWORD_CMA_EVALUATIONS".to_string(), "200".to_string()),
            ("UNRELATED".to_string(), "x".to_string()),
        ])
        .unwrap();
        assert_eq!(cfg.bind, "0.0.0.0:9000");
        assert_eq!(cfg.preview_every, 50);
        assert_eq!(cfg.schedule.phases[0], Phase::cma(200));
    }

    #[test]
    fn rejects_unknown_keys_and_bad_numbers() {
        assert!(ServiceConfig::from_toml("bnid = 1").is_err());
        let mut cfg = ServiceConfig::default();
        assert!(cfg
            .apply_env([("PAINTWORD_GRAD_STEPS".to_string(), "many".to_string())])
            .is_err());
    }

    #[test]
    fn default_registry_has_the_toys() {
        let names: Vec<String> = ServiceConfig::default()
            .build_registry()
            .unwrap()
            .list()
            .into_iter()
            .map(|e| e.name)
            .collect();
        assert_eq!(names, ["toy-shapes", "toy-style", "toy-scorer"]);
    }
}
