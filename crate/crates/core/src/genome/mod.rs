//! Binary filter masks over an [`ArchSpec`], how they are applied to
//! weights, and what they cost.
//!
//! Bit `n` of genome layer `l` keeps (1) or discards (0) filter `n` of the
//! `l`-th searchable layer. For a residual block the searchable layer is its
//! inner convolution; the block's output channels follow its input mask so
//! the skip sum stays aligned.

mod cost;
mod mask;

pub use cost::{flop_count, param_cost, param_count, FlopCount};
pub use mask::{apply_mask, expand_compact, extract_compact, layer_keeps, LayerKeep};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::models::ArchSpec;

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Genome {
    /// `ArchSpec::name` of the architecture this genome indexes.
    pub arch: String,
    pub layers: Vec<Vec<bool>>,
}

impl Genome {
    /// Keeps every filter.
    pub fn ones(spec: &ArchSpec) -> Self {
        Genome {
            arch: spec.name.clone(),
            layers: spec.mask_slots().iter().map(|s| vec![true; s.bits]).collect(),
        }
    }

    /// Each bit independently set with probability `density`, then repaired.
    pub fn random(spec: &ArchSpec, density: f64, seed: u64) -> Result<Self> {
        if !(density > 0.0 && density <= 1.0) {
            return Err(Error::contract(format!("density {density} outside (0, 1]")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Self::random_with(spec, density, &mut rng))
    }

    pub fn random_with(spec: &ArchSpec, density: f64, rng: &mut impl Rng) -> Self {
        let layers = spec
            .mask_slots()
            .iter()
            .map(|s| (0..s.bits).map(|_| rng.random_bool(density)).collect())
            .collect();
        Genome {
            arch: spec.name.clone(),
            layers,
        }
        .repair()
    }

    /// Bits in layer order.
    pub fn bits(&self) -> impl Iterator<Item = bool> + '_ {
        self.layers.iter().flatten().copied()
    }

    pub fn len(&self) -> usize {
        self.layers.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn count_ones(&self) -> usize {
        self.bits().filter(|&b| b).count()
    }

    /// Rebuilds a genome with the same layer lengths from a flat bit list.
    pub fn with_bits(&self, bits: impl IntoIterator<Item = bool>) -> Genome {
        let mut it = bits.into_iter();
        let layers = self
            .layers
            .iter()
            .map(|l| l.iter().map(|_| it.next().expect("bit count")).collect())
            .collect();
        Genome {
            arch: self.arch.clone(),
            layers,
        }
    }

    /// Sets the lowest-index bit of every all-zero layer.
    pub fn repair(mut self) -> Genome {
        for layer in &mut self.layers {
            if !layer.iter().any(|&b| b) {
                if let Some(first) = layer.first_mut() {
                    *first = true;
                }
            }
        }
        self
    }

    pub fn is_repaired(&self) -> bool {
        self.layers.iter().all(|l| l.iter().any(|&b| b))
    }

    /// Checks arch identity and per-layer lengths.
    pub fn check(&self, spec: &ArchSpec) -> Result<()> {
        if self.arch != spec.name {
            return Err(Error::ArchMismatch(format!(
                "genome for '{}' applied to '{}'",
                self.arch, spec.name
            )));
        }
        let slots = spec.mask_slots();
        if slots.len() != self.layers.len()
            || slots.iter().zip(&self.layers).any(|(s, l)| s.bits != l.len())
        {
            return Err(Error::ArchMismatch(format!(
                "genome layer lengths {:?} do not match '{}' ({:?})",
                self.layers.iter().map(Vec::len).collect::<Vec<_>>(),
                spec.name,
                slots.iter().map(|s| s.bits).collect::<Vec<_>>()
            )));
        }
        Ok(())
    }

    /// Header `<arch> <bit count>`, then one line of `0`/`1` per layer.
    pub fn to_text(&self) -> String {
        let mut s = format!("{} {}\n", self.arch, self.len());
        for layer in &self.layers {
            for &b in layer {
                s.push(if b { '1' } else { '0' });
            }
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Genome> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or(Error::Parse {
            line: 1,
            msg: "missing header".into(),
        })?;
        let mut parts = header.split_whitespace();
        let (Some(arch), Some(count), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(Error::Parse {
                line: 1,
                msg: format!("expected '<arch> <bits>', got '{header}'"),
            });
        };
        let count: usize = count.parse().map_err(|_| Error::Parse {
            line: 1,
            msg: format!("bit count '{count}' is not an integer"),
        })?;
        let mut layers = Vec::new();
        for (i, line) in lines {
            let line = line.trim_end();
            if line.is_empty() {
                continue;
            }
            let layer = line
                .chars()
                .map(|c| match c {
                    '0' => Ok(false),
                    '1' => Ok(true),
                    other => Err(Error::Parse {
                        line: i + 1,
                        msg: format!("unexpected character '{other}'"),
                    }),
                })
                .collect::<Result<Vec<_>>>()?;
            layers.push(layer);
        }
        let g = Genome {
            arch: arch.to_string(),
            layers,
        };
        if g.len() != count {
            return Err(Error::Parse {
                line: 1,
                msg: format!("header declares {count} bits, body has {}", g.len()),
            });
        }
        Ok(g)
    }

    /// Short stable content hash of the text form.
    pub fn digest(&self) -> String {
        let h = Sha256::digest(self.to_text().as_bytes());
        hex::encode(&h[..8])
    }
}
