use std::sync::Arc;

use super::{GaConfig, Metrics};
use crate::error::{Error, Result};
use crate::genome::{extract_compact, param_cost, Genome};
use crate::models::losses::{cycle_loss, dis_aware_loss, gen_aware_loss};
use crate::models::train::{finetune_candidate, FinetuneConfig, FinetuneTarget};
use crate::models::{ArchSpec, CycleGanBundle, Direction, FidelityLoss, Network};
use crate::tensor::{AdamConfig, Tensor};

/// Scores one genome of one population against the other population's
/// current elite.
pub trait Evaluator: Sync {
    /// Whatever the peer population needs from an elite, e.g. its tuned
    /// compressed generator.
    type Artifact: Clone + Send + Sync;

    fn spec(&self, dir: Direction) -> &ArchSpec;

    /// Peer stand-in before any elite exists.
    fn initial_artifact(&self, dir: Direction) -> Result<Self::Artifact>;

    fn evaluate(
        &self,
        dir: Direction,
        genome: &Genome,
        peer: &Self::Artifact,
        seed: u64,
    ) -> Result<(Metrics, Self::Artifact)>;
}

/// Fitness driven by the weighted parameter cost alone.
pub struct CostOnly {
    spec: ArchSpec,
}

impl CostOnly {
    pub fn new(spec: ArchSpec) -> Self {
        CostOnly { spec }
    }
}

impl Evaluator for CostOnly {
    type Artifact = ();

    fn spec(&self, _: Direction) -> &ArchSpec {
        &self.spec
    }

    fn initial_artifact(&self, _: Direction) -> Result<()> {
        Ok(())
    }

    fn evaluate(&self, _: Direction, genome: &Genome, _: &(), _: u64) -> Result<(Metrics, ())> {
        let m = Metrics {
            param_cost: param_cost(genome, &self.spec)?,
            dis_loss: 0.0,
            cyc_loss: 0.0,
        };
        Ok((m, ()))
    }
}

/// Fine-tunes the compressed candidate on the fine-tune subset and measures
/// it on the validation split.
pub struct GanEvaluator<'a> {
    bundle: &'a CycleGanBundle,
    /// Fine-tune subsets, indexed like [`Direction`]: inputs of `G1` are
    /// domain X samples.
    finetune: [&'a [Tensor]; 2],
    val: [&'a [Tensor]; 2],
    tune: FinetuneConfig,
}

fn idx(dir: Direction) -> usize {
    match dir {
        Direction::G1 => 0,
        Direction::G2 => 1,
    }
}

impl<'a> GanEvaluator<'a> {
    pub fn new(
        bundle: &'a CycleGanBundle,
        finetune: [&'a [Tensor]; 2],
        val: [&'a [Tensor]; 2],
        cfg: &GaConfig,
    ) -> Result<Self> {
        if !bundle.is_finite() {
            return Err(Error::Divergence {
                step: "coevolution start".into(),
                detail: "pretrained bundle holds non-finite weights".into(),
            });
        }
        if val.iter().any(|v| v.is_empty()) {
            return Err(Error::EmptyDataset("validation split is empty".into()));
        }
        Ok(GanEvaluator {
            bundle,
            finetune,
            val,
            tune: finetune_config(cfg),
        })
    }

    /// Validation metrics of an already built compressed generator.
    pub fn measure(&self, dir: Direction, genome: &Genome, compact: &Network, peer: &Network) -> Result<Metrics> {
        let val = self.val[idx(dir)];
        let orig = self.bundle.generator(dir);
        let red = self.tune.reduction;
        let fid = match self.tune.fidelity {
            FidelityLoss::DisAware => dis_aware_loss(orig, compact, self.bundle.discriminator(dir), val, red, self.tune.dis_map)?,
            FidelityLoss::GenAware => gen_aware_loss(orig, compact, val, red)?,
        };
        Ok(Metrics {
            param_cost: param_cost(genome, self.spec(dir))?,
            dis_loss: fid,
            cyc_loss: cycle_loss(compact, peer, val, red)?,
        })
    }
}

/// Candidate fine-tuning settings implied by a GA configuration.
pub fn finetune_config(cfg: &GaConfig) -> FinetuneConfig {
    FinetuneConfig {
        steps: cfg.finetune_steps,
        batch: cfg.finetune_batch,
        adam: AdamConfig {
            lr: cfg.finetune_lr,
            ..AdamConfig::default()
        },
        lambda: cfg.lambda,
        fidelity: cfg.fidelity,
        dis_map: cfg.dis_map,
        reduction: cfg.reduction,
    }
}

impl Evaluator for GanEvaluator<'_> {
    type Artifact = Arc<Network>;

    fn spec(&self, dir: Direction) -> &ArchSpec {
        &self.bundle.generator(dir).spec
    }

    fn initial_artifact(&self, dir: Direction) -> Result<Arc<Network>> {
        Ok(Arc::new(self.bundle.generator(dir).clone()))
    }

    fn evaluate(&self, dir: Direction, genome: &Genome, peer: &Arc<Network>, seed: u64) -> Result<(Metrics, Arc<Network>)> {
        let orig = self.bundle.generator(dir);
        let compact = extract_compact(orig, genome)?;
        let target = FinetuneTarget {
            original: orig,
            disc: self.bundle.discriminator(dir),
            peer,
        };
        let tuned = finetune_candidate(&compact, target, self.finetune[idx(dir)], &self.tune, seed)?;
        let m = self.measure(dir, genome, &tuned, peer)?;
        Ok((m, Arc::new(tuned)))
    }
}
