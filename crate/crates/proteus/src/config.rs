//! The JSON run configuration shared by every command.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::design::SearchSpace;
use crate::link::{LinkConfig, LinkModels};
use crate::lossmap::{self, ChipLayout, Composition, LossParams};
use crate::metrics::{LaserModel, OverheadModel};
use crate::sim::{Network, SystemConfig};
use crate::traffic::TrafficSpec;

pub const SEED_ENV: &str = "PROTEUS_SEED";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}")]
    Read { path: String, source: std::io::Error },
    #[error("config {path}: {msg}")]
    Parse { path: String, msg: String },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("{SEED_ENV}={0} is not an unsigned integer")]
    Seed(String),
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinkSection {
    /// Carrier plan; Q and bitrate here are only the sweep template.
    pub carrier: LinkConfig,
    pub models: LinkModels,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossSection {
    pub params: LossParams,
    pub composition: Composition,
    /// Geometry to derive losses from. Defaults to the calibrated layout.
    pub layout: Option<ChipLayout>,
    /// Precomputed loss matrix (CSV); overrides `layout`.
    pub il_matrix: Option<PathBuf>,
}

impl Default for LossSection {
    fn default() -> Self {
        LossSection { params: LossParams::default(), composition: Composition::PropagationOnly, layout: None, il_matrix: None }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsSection {
    pub laser: LaserModel,
    pub overhead: OverheadModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
    pub records_csv: bool,
    pub power_csv: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { dir: PathBuf::from("out"), records_csv: true, power_csv: true }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub link: LinkSection,
    pub loss: LossSection,
    pub search: SearchSpace,
    pub system: SystemConfig,
    pub traffic: TrafficSpec,
    pub metrics: MetricsSection,
    pub output: OutputSection,
}

impl RunConfig {
    /// Reads, resolves relative paths against the file's directory, applies
    /// the seed override and validates.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.display().to_string(), source })?;
        let mut cfg = Self::parse(&text, &path.display().to_string())?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        if let Ok(seed) = std::env::var(SEED_ENV) {
            cfg.traffic.seed = seed.trim().parse().map_err(|_| ConfigError::Seed(seed))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn parse(text: &str, name: &str) -> Result<Self, ConfigError> {
        serde_json::from_str(text).map_err(|e| ConfigError::Parse { path: name.to_string(), msg: e.to_string() })
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(p) = self.loss.il_matrix.as_mut() {
            fix(p);
        }
        if let Some(p) = self.traffic.trace_path.as_mut() {
            fix(p);
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |e: &dyn std::fmt::Display| ConfigError::Invalid(e.to_string());
        self.link.carrier.validate().map_err(|e| invalid(&e))?;
        self.link.models.validate().map_err(|e| invalid(&e))?;
        self.search.validate().map_err(|e| invalid(&e))?;
        self.system.validate().map_err(|e| invalid(&e))?;
        self.traffic.validate(&self.system.dims()).map_err(|e| invalid(&e))?;
        self.metrics.laser.validate().map_err(|e| invalid(&e))?;
        self.metrics.overhead.validate().map_err(|e| invalid(&e))?;
        if let Some(layout) = &self.loss.layout {
            layout.validate().map_err(|e| invalid(&e))?;
        }
        if self.link.carrier.n_lambda != self.system.n_lambda {
            return Err(ConfigError::Invalid(format!(
                "link.carrier.n_lambda {} differs from system.n_lambda {}",
                self.link.carrier.n_lambda, self.system.n_lambda
            )));
        }
        let sizes = [self.search.packet_size_bits, self.system.packet_size_bits, self.traffic.packet_size_bits];
        if sizes.iter().any(|s| *s != sizes[0]) {
            return Err(ConfigError::Invalid(format!("packet sizes disagree across sections: {sizes:?}")));
        }
        Ok(())
    }

    pub fn layout(&self) -> ChipLayout {
        self.loss.layout.clone().unwrap_or_else(|| ChipLayout::calibrated(self.system.n_gis as usize))
    }

    pub fn network(&self) -> Result<Network, ConfigError> {
        match &self.loss.il_matrix {
            Some(path) => {
                let il = lossmap::load_il_matrix(path).map_err(|e| ConfigError::Invalid(e.to_string()))?;
                Ok(Network::from_matrix(il, &self.loss.params))
            }
            None => Network::from_layout(&self.layout(), &self.loss.params, self.loss.composition)
                .map_err(|e| ConfigError::Invalid(e.to_string())),
        }
    }
}
