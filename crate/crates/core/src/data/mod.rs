//! Procedural unpaired two-domain image sets and their on-disk form.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::io::{load_archive, save_archive};
use crate::tensor::Tensor;

pub const SIDE: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Domain {
    X,
    Y,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Stripes2Checkers,
    Bright2Dark,
    Hlines2Vlines,
}

impl Task {
    pub const ALL: [Task; 3] = [Task::Stripes2Checkers, Task::Bright2Dark, Task::Hlines2Vlines];

    pub fn name(self) -> &'static str {
        match self {
            Task::Stripes2Checkers => "stripes2checkers",
            Task::Bright2Dark => "bright2dark",
            Task::Hlines2Vlines => "hlines2vlines",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Task::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::UnknownTask(s.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Tensor>,
    pub domain: Domain,
    pub task: Task,
    pub seed: u64,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            samples: idx.iter().map(|&i| self.samples[i].clone()).collect(),
            ..self.clone_meta()
        }
    }

    fn clone_meta(&self) -> Dataset {
        Dataset {
            samples: Vec::new(),
            domain: self.domain,
            task: self.task,
            seed: self.seed,
        }
    }
}

fn image(f: impl Fn(usize, usize) -> f64) -> Tensor {
    let data = (0..SIDE * SIDE)
        .map(|i| f(i / SIDE, i % SIDE).clamp(-1.0, 1.0))
        .collect();
    Tensor::new(vec![1, SIDE, SIDE], data).expect("image shape")
}

fn sign(on: bool) -> f64 {
    if on {
        1.0
    } else {
        -1.0
    }
}

fn stripes(rng: &mut ChaCha8Rng) -> Tensor {
    let width = rng.random_range(2..=4usize);
    let phase = rng.random_range(0..2 * width);
    let contrast = rng.random_range(0.6..=1.0);
    image(|_, c| contrast * sign((c + phase) / width % 2 == 0))
}

fn checkers(rng: &mut ChaCha8Rng) -> Tensor {
    let cell = rng.random_range(2..=4usize);
    let (pr, pc) = (rng.random_range(0..2 * cell), rng.random_range(0..2 * cell));
    let contrast = rng.random_range(0.6..=1.0);
    image(|r, c| contrast * sign(((r + pr) / cell + (c + pc) / cell) % 2 == 0))
}

fn level(rng: &mut ChaCha8Rng, base: f64) -> Tensor {
    let offset = rng.random_range(0.0..0.3);
    let amp = rng.random_range(0.05..0.2);
    let (fr, fc) = (rng.random_range(0.2..0.8), rng.random_range(0.2..0.8));
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    let centre = base.signum() * (base.abs() + offset);
    image(|r, c| centre + amp * (fr * r as f64 + fc * c as f64 + phase).sin())
}

fn lines(rng: &mut ChaCha8Rng, horizontal: bool) -> Tensor {
    let spacing = rng.random_range(3..=5usize);
    let phase = rng.random_range(0..spacing);
    let contrast = rng.random_range(0.6..=1.0);
    image(|r, c| {
        let k = if horizontal { r } else { c };
        contrast * sign((k + phase) % spacing == 0)
    })
}

/// `n_per_domain` independent draws for each domain of `task`. The two
/// domains use separate random streams, so samples carry no pairing.
pub fn generate_task(task: Task, n_per_domain: usize, seed: u64) -> Result<(Dataset, Dataset)> {
    if n_per_domain < 4 {
        return Err(Error::Config(format!("n_per_domain must be at least 4, got {n_per_domain}")));
    }
    let make = |domain: Domain| {
        let stream = match domain {
            Domain::X => 0,
            Domain::Y => 1,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        let samples = (0..n_per_domain)
            .map(|_| match (task, domain) {
                (Task::Stripes2Checkers, Domain::X) => stripes(&mut rng),
                (Task::Stripes2Checkers, Domain::Y) => checkers(&mut rng),
                (Task::Bright2Dark, Domain::X) => level(&mut rng, 0.4),
                (Task::Bright2Dark, Domain::Y) => level(&mut rng, -0.4),
                (Task::Hlines2Vlines, Domain::X) => lines(&mut rng, true),
                (Task::Hlines2Vlines, Domain::Y) => lines(&mut rng, false),
            })
            .collect();
        Dataset {
            samples,
            domain,
            task,
            seed,
        }
    };
    Ok((make(Domain::X), make(Domain::Y)))
}

/// Disjoint train / validation / fine-tune partitions.
#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub train: Dataset,
    pub val: Dataset,
    /// Drawn from the non-validation part of the data, disjoint from `train`.
    pub finetune: Dataset,
}

impl Split {
    /// `train ∪ finetune`, i.e. every non-validation sample.
    pub fn full_train(&self) -> Vec<Tensor> {
        self.train.samples.iter().chain(&self.finetune.samples).cloned().collect()
    }
}

/// Index partition behind [`split`].
pub fn split_indices(n: usize, val_fraction: f64, finetune_fraction: f64, seed: u64) -> Result<[Vec<usize>; 3]> {
    let ok = |f: f64| f > 0.0 && f < 1.0;
    if !ok(val_fraction) || !ok(finetune_fraction) || val_fraction + finetune_fraction >= 1.0 {
        return Err(Error::Config(format!(
            "split fractions val={val_fraction}, finetune={finetune_fraction} must lie in (0,1) and sum below 1"
        )));
    }
    let n_val = (n as f64 * val_fraction).round() as usize;
    let n_ft = (n as f64 * finetune_fraction).round() as usize;
    if n_val == 0 || n_ft == 0 || n_val + n_ft >= n {
        return Err(Error::EmptyDataset(format!(
            "{n} samples cannot be split into non-empty train/val/finetune parts"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let val = idx[..n_val].to_vec();
    let ft = idx[n_val..n_val + n_ft].to_vec();
    let train = idx[n_val + n_ft..].to_vec();
    Ok([train, val, ft])
}

pub fn split(dataset: &Dataset, val_fraction: f64, finetune_fraction: f64, seed: u64) -> Result<Split> {
    let [train, val, ft] = split_indices(dataset.len(), val_fraction, finetune_fraction, seed)?;
    Ok(Split {
        train: dataset.subset(&train),
        val: dataset.subset(&val),
        finetune: dataset.subset(&ft),
    })
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetMeta {
    task: Task,
    domain: Domain,
    seed: u64,
    count: usize,
}

pub fn save_dataset(path: &Path, ds: &Dataset) -> Result<()> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset(format!("refusing to write empty dataset to {}", path.display())));
    }
    let meta = serde_json::to_value(DatasetMeta {
        task: ds.task,
        domain: ds.domain,
        seed: ds.seed,
        count: ds.len(),
    })?;
    let names: Vec<String> = (0..ds.len()).map(|i| format!("sample.{i:06}")).collect();
    save_archive(path, meta, names.iter().map(String::as_str).zip(&ds.samples))
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let bytes = std::fs::metadata(path).map_err(|e| Error::io(path, e))?.len();
    if bytes == 0 {
        return Err(Error::EmptyDataset(format!("{} is empty", path.display())));
    }
    let (meta, tensors) = load_archive(path)?;
    let corrupt = |detail: String| Error::Corrupt {
        path: path.to_path_buf(),
        detail,
    };
    let meta: DatasetMeta = serde_json::from_value(meta).map_err(|e| corrupt(format!("bad dataset descriptor: {e}")))?;
    if tensors.is_empty() || meta.count == 0 {
        return Err(Error::EmptyDataset(format!("{} holds no samples", path.display())));
    }
    if tensors.len() != meta.count {
        return Err(corrupt(format!("descriptor lists {} samples, found {}", meta.count, tensors.len())));
    }
    let shape = tensors[0].1.shape().to_vec();
    if let Some((name, t)) = tensors.iter().find(|(_, t)| t.shape() != shape.as_slice()) {
        return Err(corrupt(format!("sample '{name}' has shape {:?}, expected {shape:?}", t.shape())));
    }
    Ok(Dataset {
        samples: tensors.into_iter().map(|(_, t)| t).collect(),
        domain: meta.domain,
        task: meta.task,
        seed: meta.seed,
    })
}
