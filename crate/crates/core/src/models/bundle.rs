use std::path::Path;

use serde::{Deserialize, Serialize};

use super::arch::ArchSpec;
use super::network::{Network, WeightBundle};
use crate::error::{Error, Result};
use crate::tensor::io::{load_archive, save_archive};
use crate::tensor::Tensor;

/// Translation direction. `G1: X -> Y` is judged by `D1`, `G2: Y -> X` by `D2`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    G1,
    G2,
}

impl Direction {
    pub fn peer(self) -> Direction {
        match self {
            Direction::G1 => Direction::G2,
            Direction::G2 => Direction::G1,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Direction::G1 => "P",
            Direction::G2 => "Q",
        }
    }
}

/// The four networks of a CycleGAN plus the objective weights.
#[derive(Clone, Debug, PartialEq)]
pub struct CycleGanBundle {
    pub g1: Network,
    pub g2: Network,
    pub d1: Network,
    pub d2: Network,
    pub lambda: f64,
    pub identity_weight: f64,
    pub seed: u64,
    pub epoch: u64,
}

/// Top-level checkpoint descriptor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BundleDescriptor {
    pub arch_g: ArchSpec,
    pub arch_d: ArchSpec,
    pub lambda: f64,
    pub identity_weight: f64,
    pub seed: u64,
    pub epoch: u64,
}

const PREFIXES: [&str; 4] = ["g1.", "g2.", "d1.", "d2."];

impl CycleGanBundle {
    /// Freshly initialized bundle; identity weight defaults to `lambda / 2`.
    pub fn init(arch_g: ArchSpec, arch_d: ArchSpec, lambda: f64, seed: u64) -> Result<Self> {
        let bundle = CycleGanBundle {
            g1: Network::init(arch_g.clone(), seed.wrapping_mul(4))?,
            g2: Network::init(arch_g, seed.wrapping_mul(4).wrapping_add(1))?,
            d1: Network::init(arch_d.clone(), seed.wrapping_mul(4).wrapping_add(2))?,
            d2: Network::init(arch_d, seed.wrapping_mul(4).wrapping_add(3))?,
            lambda,
            identity_weight: lambda / 2.0,
            seed,
            epoch: 0,
        };
        bundle.validate()?;
        Ok(bundle)
    }

    pub fn validate(&self) -> Result<()> {
        if self.g1.spec != self.g2.spec || self.d1.spec != self.d2.spec {
            return Err(Error::ArchMismatch("generators or discriminators differ in architecture".into()));
        }
        if !(self.lambda > 0.0) {
            return Err(Error::Config(format!("lambda must be positive, got {}", self.lambda)));
        }
        self.g1.spec.validate_fixed_output()?;
        self.d1.spec.validate()?;
        if self.g1.spec.in_channels != self.g1.spec.out_channels
            || self.d1.spec.in_channels != self.g1.spec.out_channels
        {
            return Err(Error::ArchMismatch("generator/discriminator channel counts disagree".into()));
        }
        Ok(())
    }

    pub fn arch_g(&self) -> &ArchSpec {
        &self.g1.spec
    }

    pub fn arch_d(&self) -> &ArchSpec {
        &self.d1.spec
    }

    pub fn generator(&self, dir: Direction) -> &Network {
        match dir {
            Direction::G1 => &self.g1,
            Direction::G2 => &self.g2,
        }
    }

    pub fn discriminator(&self, dir: Direction) -> &Network {
        match dir {
            Direction::G1 => &self.d1,
            Direction::G2 => &self.d2,
        }
    }

    pub fn is_finite(&self) -> bool {
        [&self.g1, &self.g2, &self.d1, &self.d2].iter().all(|n| n.is_finite())
    }

    pub fn descriptor(&self) -> BundleDescriptor {
        BundleDescriptor {
            arch_g: self.arch_g().clone(),
            arch_d: self.arch_d().clone(),
            lambda: self.lambda,
            identity_weight: self.identity_weight,
            seed: self.seed,
            epoch: self.epoch,
        }
    }

    pub fn save(&self, manifest: &Path) -> Result<()> {
        let meta = serde_json::to_value(self.descriptor())?;
        let nets = [&self.g1, &self.g2, &self.d1, &self.d2];
        let named: Vec<(String, &Tensor)> = PREFIXES
            .iter()
            .zip(nets)
            .flat_map(|(p, n)| n.weights.iter().map(move |(k, t)| (format!("{p}{k}"), t)))
            .collect();
        save_archive(manifest, meta, named.iter().map(|(k, t)| (k.as_str(), *t)))
    }

    pub fn load(manifest: &Path) -> Result<Self> {
        let (meta, tensors) = load_archive(manifest)?;
        let desc: BundleDescriptor = serde_json::from_value(meta).map_err(|e| Error::Corrupt {
            path: manifest.to_path_buf(),
            detail: format!("bad bundle descriptor: {e}"),
        })?;
        let mut parts: [WeightBundle; 4] = Default::default();
        for (name, t) in tensors {
            let slot = PREFIXES
                .iter()
                .position(|p| name.starts_with(p))
                .ok_or_else(|| Error::Corrupt {
                    path: manifest.to_path_buf(),
                    detail: format!("tensor '{name}' belongs to no network"),
                })?;
            parts[slot].insert(name[3..].to_string(), t);
        }
        let [g1, g2, d1, d2] = parts;
        let bundle = CycleGanBundle {
            g1: Network::new(desc.arch_g.clone(), g1)?,
            g2: Network::new(desc.arch_g, g2)?,
            d1: Network::new(desc.arch_d.clone(), d1)?,
            d2: Network::new(desc.arch_d, d2)?,
            lambda: desc.lambda,
            identity_weight: desc.identity_weight,
            seed: desc.seed,
            epoch: desc.epoch,
        };
        bundle.validate()?;
        Ok(bundle)
    }
}

/// Descriptor of a pair of extracted compact generators.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompactDescriptor {
    pub arch_g1: ArchSpec,
    pub arch_g2: ArchSpec,
    /// Architecture the genomes index.
    pub source_arch: ArchSpec,
    pub genome_g1: String,
    pub genome_g2: String,
}

/// Two compact generators loadable for inference.
#[derive(Clone, Debug, PartialEq)]
pub struct CompactPair {
    pub g1: Network,
    pub g2: Network,
    pub source_arch: ArchSpec,
    pub genome_g1: String,
    pub genome_g2: String,
}

impl CompactPair {
    pub fn generator(&self, dir: Direction) -> &Network {
        match dir {
            Direction::G1 => &self.g1,
            Direction::G2 => &self.g2,
        }
    }

    pub fn save(&self, manifest: &Path) -> Result<()> {
        let meta = serde_json::to_value(CompactDescriptor {
            arch_g1: self.g1.spec.clone(),
            arch_g2: self.g2.spec.clone(),
            source_arch: self.source_arch.clone(),
            genome_g1: self.genome_g1.clone(),
            genome_g2: self.genome_g2.clone(),
        })?;
        let named: Vec<(String, &Tensor)> = [("g1.", &self.g1), ("g2.", &self.g2)]
            .into_iter()
            .flat_map(|(p, n)| n.weights.iter().map(move |(k, t)| (format!("{p}{k}"), t)))
            .collect();
        save_archive(manifest, meta, named.iter().map(|(k, t)| (k.as_str(), *t)))
    }

    pub fn load(manifest: &Path) -> Result<Self> {
        let (meta, tensors) = load_archive(manifest)?;
        let desc: CompactDescriptor = serde_json::from_value(meta).map_err(|e| Error::Corrupt {
            path: manifest.to_path_buf(),
            detail: format!("bad compact descriptor: {e}"),
        })?;
        let (mut w1, mut w2) = (WeightBundle::new(), WeightBundle::new());
        for (name, t) in tensors {
            if let Some(k) = name.strip_prefix("g1.") {
                w1.insert(k.to_string(), t);
            } else if let Some(k) = name.strip_prefix("g2.") {
                w2.insert(k.to_string(), t);
            } else {
                return Err(Error::Corrupt {
                    path: manifest.to_path_buf(),
                    detail: format!("unexpected tensor '{name}'"),
                });
            }
        }
        Ok(CompactPair {
            g1: Network::new(desc.arch_g1, w1)?,
            g2: Network::new(desc.arch_g2, w2)?,
            source_arch: desc.source_arch,
            genome_g1: desc.genome_g1,
            genome_g2: desc.genome_g2,
        })
    }
}
