use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::coevolution::{FinalEvaluation, GenerationRecord};
use crate::models::{FidelityLoss, Reduction};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorReport {
    pub generator: String,
    pub genome_digest: String,
    pub genome_bits: usize,
    pub genome_kept: usize,
    pub params_before: usize,
    pub params_after: usize,
    /// `params_before / params_after`.
    pub memory_ratio: f64,
    pub flops_before: u64,
    pub flops_after: u64,
    /// `flops_before / flops_after`.
    pub flop_ratio: f64,
    /// Validation losses of the final compressed generator.
    pub val_dis_aware_loss: f64,
    pub val_gen_aware_loss: f64,
    pub val_cycle_loss: f64,
    /// Same cycle loss for the uncompressed pair.
    pub original_val_cycle_loss: f64,
    pub search: FinalEvaluation,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FitnessCurve {
    pub t: Vec<usize>,
    pub best: Vec<f64>,
    pub mean: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompressionReport {
    pub task: String,
    pub seed: u64,
    pub gamma: f64,
    pub lambda: f64,
    pub fidelity: FidelityLoss,
    pub reduction: Reduction,
    pub generators: Vec<GeneratorReport>,
    /// Keyed by population label.
    pub fitness_curves: BTreeMap<String, FitnessCurve>,
}

pub fn fitness_curves(history: &[GenerationRecord]) -> BTreeMap<String, FitnessCurve> {
    let mut curves: BTreeMap<String, FitnessCurve> = BTreeMap::new();
    for r in history {
        let c = curves.entry(r.pop.clone()).or_default();
        c.t.push(r.t);
        c.best.push(r.best_fitness);
        c.mean.push(r.mean_fitness);
    }
    curves
}
