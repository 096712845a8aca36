//! Adversarial pretraining and generator-only fine-tuning.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::bundle::{CycleGanBundle, Direction};
use super::losses::{gan_terms, sq_norm, DisMap, FidelityLoss, Reduction};
use super::network::{strip_prefix, Network};
use crate::error::{Error, Result};
use crate::tensor::{Adam, AdamConfig, Graph, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainConfig {
    pub epochs: usize,
    #[serde(default)]
    pub adam: AdamConfig,
    #[serde(default)]
    pub reduction: Reduction,
}

/// Mean loss terms over one epoch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochTrace {
    pub epoch: usize,
    /// `log(1 − D(G(x)))` summed over both directions; the generators minimize it.
    pub gen_adv: f64,
    /// `−[log D(y) + log(1 − D(G(x)))]` summed over both discriminators.
    pub disc: f64,
    pub cycle: f64,
    pub identity: f64,
}

impl EpochTrace {
    pub const CSV_HEADER: &'static str = "epoch,gen_adv,disc,cycle,identity";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:e},{:e},{:e},{:e}",
            self.epoch, self.gen_adv, self.disc, self.cycle, self.identity
        )
    }
}

fn guard(step: impl FnOnce() -> String, what: &str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Divergence {
            step: step(),
            detail: format!("{what} became {v}"),
        })
    }
}

/// Trains all four networks for `cfg.epochs` passes. Each iteration draws an
/// unpaired `(x, y)` from two independent permutations, takes one generator
/// step and then one discriminator step on the fakes it just produced.
pub fn pretrain(
    bundle: &CycleGanBundle,
    xs: &[Tensor],
    ys: &[Tensor],
    cfg: &PretrainConfig,
    seed: u64,
) -> Result<(CycleGanBundle, Vec<EpochTrace>)> {
    if xs.is_empty() || ys.is_empty() {
        return Err(Error::EmptyDataset("pretraining needs samples in both domains".into()));
    }
    let mut b = bundle.clone();
    let mut trace = Vec::with_capacity(cfg.epochs);
    if cfg.epochs == 0 {
        return Ok((b, trace));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut opt_g = [Adam::new(cfg.adam), Adam::new(cfg.adam)];
    let mut opt_d = [Adam::new(cfg.adam), Adam::new(cfg.adam)];
    let iters = xs.len().max(ys.len());
    let red = cfg.reduction;

    for epoch in 1..=cfg.epochs {
        let mut px: Vec<usize> = (0..xs.len()).collect();
        let mut py: Vec<usize> = (0..ys.len()).collect();
        px.shuffle(&mut rng);
        py.shuffle(&mut rng);
        let mut sums = [0.0; 4];
        for it in 0..iters {
            let step = || format!("epoch {epoch} iteration {it}");
            let x = &xs[px[it % xs.len()]];
            let y = &ys[py[it % ys.len()]];

            // generators
            let mut g = Graph::new();
            let g1 = b.g1.bind(&mut g, Some("g1."));
            let g2 = b.g2.bind(&mut g, Some("g2."));
            let d1 = b.d1.bind(&mut g, None);
            let d2 = b.d2.bind(&mut g, None);
            let vx = g.constant(x.clone());
            let vy = g.constant(y.clone());
            let fake_y = g1.forward(&mut g, vx)?;
            let fake_x = g2.forward(&mut g, vy)?;
            let (_, adv1) = gan_terms(&mut g, &d1, vy, fake_y)?;
            let (_, adv2) = gan_terms(&mut g, &d2, vx, fake_x)?;
            let rec_x = g2.forward(&mut g, fake_y)?;
            let rec_y = g1.forward(&mut g, fake_x)?;
            let cyc1 = sq_norm(&mut g, rec_x, vx, red)?;
            let cyc2 = sq_norm(&mut g, rec_y, vy, red)?;
            let same_y = g1.forward(&mut g, vy)?;
            let same_x = g2.forward(&mut g, vx)?;
            let idt1 = sq_norm(&mut g, same_y, vy, red)?;
            let idt2 = sq_norm(&mut g, same_x, vx, red)?;
            let adv = g.add(adv1, adv2)?;
            let cyc = g.add(cyc1, cyc2)?;
            let idt = g.add(idt1, idt2)?;
            let cyc_w = g.scale(cyc, b.lambda);
            let idt_w = g.scale(idt, b.identity_weight);
            let total = g.add(adv, cyc_w)?;
            let total = g.add(total, idt_w)?;
            sums[0] += guard(step, "generator adversarial loss", g.value(adv).item()?)?;
            sums[2] += guard(step, "cycle loss", g.value(cyc).item()?)?;
            sums[3] += guard(step, "identity loss", g.value(idt).item()?)?;
            let grads = g.backward(total)?;
            let fy = g.value(fake_y).clone();
            let fx = g.value(fake_x).clone();
            drop((g1, g2, d1, d2));
            opt_g[0].step(&mut b.g1.weights, &strip_prefix(&grads, "g1."))?;
            opt_g[1].step(&mut b.g2.weights, &strip_prefix(&grads, "g2."))?;

            // discriminators
            let mut disc_total = 0.0;
            for (i, (real, fake)) in [(y, fy), (x, fx)].into_iter().enumerate() {
                let d = if i == 0 { &mut b.d1 } else { &mut b.d2 };
                let mut g = Graph::new();
                let bound = d.bind(&mut g, Some(""));
                let vr = g.constant(real.clone());
                let vf = g.constant(fake);
                let (r, f) = gan_terms(&mut g, &bound, vr, vf)?;
                let obj = g.add(r, f)?;
                let loss = g.scale(obj, -1.0);
                disc_total += g.value(loss).item()?;
                let grads = g.backward(loss)?;
                drop(bound);
                opt_d[i].step(&mut d.weights, &grads)?;
            }
            sums[1] += guard(step, "discriminator loss", disc_total)?;
        }
        let n = iters as f64;
        let t = EpochTrace {
            epoch,
            gen_adv: sums[0] / n,
            disc: sums[1] / n,
            cycle: sums[2] / n,
            identity: sums[3] / n,
        };
        log::debug!("pretrain {t:?}");
        trace.push(t);
        if !b.is_finite() {
            return Err(Error::Divergence {
                step: format!("epoch {epoch}"),
                detail: "non-finite weights".into(),
            });
        }
    }
    b.epoch += cfg.epochs as u64;
    Ok((b, trace))
}

/// Settings shared by candidate and final fine-tuning.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FinetuneConfig {
    pub steps: usize,
    /// Samples averaged into each update.
    pub batch: usize,
    pub adam: AdamConfig,
    pub lambda: f64,
    pub fidelity: FidelityLoss,
    pub dis_map: DisMap,
    pub reduction: Reduction,
}

impl FinetuneConfig {
    /// Fixed targets the fidelity term compares against for input `x`.
    fn reference(&self, generator: &Network, disc: &Network, x: &Tensor) -> Result<(Tensor, Option<Tensor>)> {
        let out = generator.infer(x)?;
        let response = match self.fidelity {
            FidelityLoss::DisAware => Some(self.dis_map.respond(disc, &out)?),
            FidelityLoss::GenAware => None,
        };
        Ok((out, response))
    }
}

/// Frozen context for tuning one direction's compressed generator.
#[derive(Clone, Copy)]
pub struct FinetuneTarget<'a> {
    pub original: &'a Network,
    pub disc: &'a Network,
    /// The other direction's current best compressed generator.
    pub peer: &'a Network,
}

fn fidelity_term(
    g: &mut Graph,
    cfg: &FinetuneConfig,
    disc: &super::network::Bound<'_>,
    out: Var,
    reference_out: &Tensor,
    reference_response: Option<&Tensor>,
) -> Result<Var> {
    match cfg.fidelity {
        FidelityLoss::DisAware => {
            let response = cfg.dis_map.respond_on(g, disc, out)?;
            let target = g.constant(reference_response.expect("dis-aware target").clone());
            sq_norm(g, response, target, cfg.reduction)
        }
        FidelityLoss::GenAware => {
            let target = g.constant(reference_out.clone());
            sq_norm(g, out, target, cfg.reduction)
        }
    }
}

/// `cfg.steps` updates of the compact generator `candidate`, each averaging
/// `cfg.batch` distinct subset samples (the whole subset if it is smaller), minimizing fidelity to the
/// original plus `λ·` cycle loss through the frozen peer. Returns the tuned
/// copy.
pub fn finetune_candidate(
    candidate: &Network,
    target: FinetuneTarget<'_>,
    subset: &[Tensor],
    cfg: &FinetuneConfig,
    seed: u64,
) -> Result<Network> {
    let mut net = candidate.clone();
    if cfg.steps == 0 {
        return Ok(net);
    }
    if subset.is_empty() || cfg.batch == 0 {
        return Err(Error::contract("finetune_candidate: empty subset or zero batch"));
    }
    let refs: Vec<(Tensor, Option<Tensor>)> = subset
        .iter()
        .map(|x| cfg.reference(target.original, target.disc, x))
        .collect::<Result<_>>()?;
    let batch = cfg.batch.min(subset.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut opt = Adam::new(cfg.adam);
    for step in 0..cfg.steps {
        let mut g = Graph::new();
        let bound = net.bind(&mut g, Some(""));
        let disc = target.disc.bind(&mut g, None);
        let peer = target.peer.bind(&mut g, None);
        let picks = rand::seq::index::sample(&mut rng, subset.len(), batch);
        let mut terms = Vec::with_capacity(batch);
        for i in picks {
            let x = g.constant(subset[i].clone());
            let out = bound.forward(&mut g, x)?;
            let fid = fidelity_term(&mut g, cfg, &disc, out, &refs[i].0, refs[i].1.as_ref())?;
            let rec = peer.forward(&mut g, out)?;
            let cyc = sq_norm(&mut g, rec, x, cfg.reduction)?;
            let cyc_w = g.scale(cyc, cfg.lambda);
            terms.push(g.add(fid, cyc_w)?);
        }
        let mut loss = terms[0];
        for &t in &terms[1..] {
            loss = g.add(loss, t)?;
        }
        let loss = g.scale(loss, 1.0 / batch as f64);
        guard(|| format!("fine-tune step {step}"), "fine-tune loss", g.value(loss).item()?)?;
        let grads = g.backward(loss)?;
        drop((bound, disc, peer));
        opt.step(&mut net.weights, &grads)?;
    }
    Ok(net)
}

/// Joint fine-tuning of both compressed generators over the full training
/// set: fidelity in both directions plus `λ·` both cycle losses, with the
/// original generators and discriminators frozen.
pub fn finetune_pair(
    compact: [&Network; 2],
    bundle: &CycleGanBundle,
    xs: &[Tensor],
    ys: &[Tensor],
    epochs: usize,
    cfg: &FinetuneConfig,
    seed: u64,
) -> Result<[Network; 2]> {
    let mut nets = [compact[0].clone(), compact[1].clone()];
    if epochs == 0 {
        return Ok(nets);
    }
    if xs.is_empty() || ys.is_empty() {
        return Err(Error::EmptyDataset("final fine-tune needs samples in both domains".into()));
    }
    let reference = |dir: Direction, x: &Tensor| cfg.reference(bundle.generator(dir), bundle.discriminator(dir), x);
    let rx: Vec<_> = xs.iter().map(|x| reference(Direction::G1, x)).collect::<Result<_>>()?;
    let ry: Vec<_> = ys.iter().map(|y| reference(Direction::G2, y)).collect::<Result<_>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut opt = [Adam::new(cfg.adam), Adam::new(cfg.adam)];
    let iters = xs.len().max(ys.len());
    for epoch in 0..epochs {
        let mut px: Vec<usize> = (0..xs.len()).collect();
        let mut py: Vec<usize> = (0..ys.len()).collect();
        px.shuffle(&mut rng);
        py.shuffle(&mut rng);
        for it in 0..iters {
            let (ix, iy) = (px[it % xs.len()], py[it % ys.len()]);
            let mut g = Graph::new();
            let h1 = nets[0].bind(&mut g, Some("g1."));
            let h2 = nets[1].bind(&mut g, Some("g2."));
            let d1 = bundle.d1.bind(&mut g, None);
            let d2 = bundle.d2.bind(&mut g, None);
            let x = g.constant(xs[ix].clone());
            let y = g.constant(ys[iy].clone());
            let fy = h1.forward(&mut g, x)?;
            let fx = h2.forward(&mut g, y)?;
            let f1 = fidelity_term(&mut g, cfg, &d1, fy, &rx[ix].0, rx[ix].1.as_ref())?;
            let f2 = fidelity_term(&mut g, cfg, &d2, fx, &ry[iy].0, ry[iy].1.as_ref())?;
            let rec_x = h2.forward(&mut g, fy)?;
            let rec_y = h1.forward(&mut g, fx)?;
            let c1 = sq_norm(&mut g, rec_x, x, cfg.reduction)?;
            let c2 = sq_norm(&mut g, rec_y, y, cfg.reduction)?;
            let fid = g.add(f1, f2)?;
            let cyc = g.add(c1, c2)?;
            let cyc_w = g.scale(cyc, cfg.lambda);
            let loss = g.add(fid, cyc_w)?;
            guard(
                || format!("final fine-tune epoch {epoch} iteration {it}"),
                "fine-tune loss",
                g.value(loss).item()?,
            )?;
            let grads = g.backward(loss)?;
            drop((h1, h2, d1, d2));
            let [n1, n2] = &mut nets;
            opt[0].step(&mut n1.weights, &strip_prefix(&grads, "g1."))?;
            opt[1].step(&mut n2.weights, &strip_prefix(&grads, "g2."))?;
        }
    }
    Ok(nets)
}
