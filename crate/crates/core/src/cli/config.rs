use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::coevolution::GaConfig;
use crate::data::Task;
use crate::error::{Error, Result};
use crate::models::{ArchSpec, Reduction};
use crate::tensor::AdamConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArchConfig {
    /// Base width `F` of the generator.
    pub generator_filters: usize,
    pub residual_blocks: usize,
    pub discriminator_filters: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            generator_filters: 8,
            residual_blocks: 2,
            discriminator_filters: 8,
        }
    }
}

impl ArchConfig {
    pub fn generator(&self) -> ArchSpec {
        ArchSpec::generator(1, self.generator_filters, self.residual_blocks)
    }

    pub fn discriminator(&self) -> ArchSpec {
        ArchSpec::discriminator(1, self.discriminator_filters)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainSection {
    pub epochs: usize,
    pub adam: AdamConfig,
    pub reduction: Reduction,
}

impl Default for PretrainSection {
    fn default() -> Self {
        PretrainSection {
            epochs: 30,
            adam: AdamConfig::default(),
            reduction: Reduction::Mean,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FinalFinetune {
    /// Passes over the full training split after the search.
    pub epochs: usize,
    pub lr: f64,
}

impl Default for FinalFinetune {
    fn default() -> Self {
        FinalFinetune { epochs: 3, lr: 1e-3 }
    }
}

/// Everything a pipeline run depends on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub task: String,
    pub samples_per_domain: usize,
    pub val_fraction: f64,
    pub seed: u64,
    pub out_dir: Option<PathBuf>,
    pub arch: ArchConfig,
    pub pretrain: PretrainSection,
    pub ga: GaConfig,
    pub finetune: FinalFinetune,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            task: Task::Stripes2Checkers.name().to_string(),
            samples_per_domain: 200,
            val_fraction: 0.2,
            seed: 0,
            out_dir: None,
            arch: ArchConfig::default(),
            pretrain: PretrainSection::default(),
            ga: GaConfig::default(),
            finetune: FinalFinetune::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn task(&self) -> Result<Task> {
        self.task.parse()
    }

    pub fn validate(&self) -> Result<()> {
        self.task()?;
        if self.samples_per_domain < 4 {
            return Err(Error::Config(format!(
                "samples_per_domain must be at least 4, got {}",
                self.samples_per_domain
            )));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::Config(format!("val_fraction {} outside (0, 1)", self.val_fraction)));
        }
        if self.val_fraction + self.ga.subset_fraction >= 1.0 {
            return Err(Error::Config("val_fraction + ga.subset_fraction must stay below 1".into()));
        }
        let a = &self.arch;
        if a.generator_filters == 0 || a.discriminator_filters == 0 {
            return Err(Error::Config("filter widths must be positive".into()));
        }
        let p = &self.pretrain.adam;
        if !(p.lr > 0.0) || !(0.0..1.0).contains(&p.beta1) || !(0.0..1.0).contains(&p.beta2) || !(p.eps > 0.0) {
            return Err(Error::Config(format!("invalid optimizer settings {p:?}")));
        }
        if !(self.finetune.lr > 0.0) {
            return Err(Error::Config(format!("finetune.lr must be positive, got {}", self.finetune.lr)));
        }
        self.ga.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        assert_eq!(RunConfig::from_toml(&cfg.to_toml().unwrap()).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = RunConfig::from_toml("task = \"bright2dark\"\nbogus = 1\n").unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert_eq!(err.exit_code(), 2);
        assert!(RunConfig::from_toml("[ga]\nk = 3\n").is_err());
    }

    #[test]
    fn bad_values_are_rejected() {
        assert!(matches!(RunConfig::from_toml("task = \"zebra\"\n"), Err(Error::UnknownTask(_))));
        assert!(RunConfig::from_toml("[ga]\npopulation = 1\n").is_err());
        assert!(RunConfig::from_toml("samples_per_domain = 2\n").is_err());
    }
}
