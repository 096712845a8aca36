//! CycleGAN objective terms and the two compression fidelity losses.
//!
//! Every squared-norm loss is a per-sample `‖a − b‖²` averaged over the
//! batch. With [`Reduction::Mean`] the per-sample norm is additionally
//! divided by the number of elements it runs over.

use serde::{Deserialize, Serialize};

use super::network::{Bound, Network};
use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, Var};

/// Floor and ceiling applied to discriminator probabilities before `log`.
pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    /// Plain squared euclidean norm.
    #[default]
    Sum,
    /// Squared norm divided by the element count.
    Mean,
}

impl Reduction {
    pub fn factor(self, numel: usize) -> f64 {
        match self {
            Reduction::Sum => 1.0,
            Reduction::Mean => 1.0 / numel as f64,
        }
    }

    pub fn apply(self, sq_norm: f64, numel: usize) -> f64 {
        sq_norm * self.factor(numel)
    }
}

/// Which distance the compressed generator is held to.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FidelityLoss {
    /// Distance between frozen-discriminator responses, mapped per [`DisMap`].
    #[default]
    DisAware,
    /// Distance between raw generator outputs.
    GenAware,
}

/// Which discriminator response the discriminator-aware loss compares.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DisMap {
    /// Per-patch probabilities, `sigmoid` of the logit map.
    #[default]
    Probabilities,
    /// The raw logit map.
    Logits,
}

impl DisMap {
    /// Discriminator response of `disc` to `image`.
    pub fn respond(self, disc: &Network, image: &Tensor) -> Result<Tensor> {
        let logits = disc.infer(image)?;
        Ok(match self {
            DisMap::Logits => logits,
            DisMap::Probabilities => logits.map(sigmoid),
        })
    }

    /// Same response on the graph.
    pub fn respond_on(self, g: &mut Graph, disc: &Bound<'_>, image: Var) -> Result<Var> {
        let logits = disc.forward(g, image)?;
        Ok(match self {
            DisMap::Logits => logits,
            DisMap::Probabilities => g.sigmoid(logits),
        })
    }
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// `‖a − b‖²` on the graph, reduced per `red`.
pub fn sq_norm(g: &mut Graph, a: Var, b: Var, red: Reduction) -> Result<Var> {
    let n = g.value(a).numel();
    let d = g.sq_dist(a, b)?;
    Ok(match red {
        Reduction::Sum => d,
        Reduction::Mean => g.scale(d, red.factor(n)),
    })
}

/// Mean sigmoid probability of a logit map, clamped away from 0 and 1.
pub fn mean_prob(g: &mut Graph, logits: Var) -> Result<Var> {
    let p = g.sigmoid(logits);
    let m = g.mean(p)?;
    Ok(g.clamp(m, PROB_CLAMP, 1.0 - PROB_CLAMP))
}

/// `log D(real)` and `log(1 − D(fake))` for one sample pair.
pub fn gan_terms(g: &mut Graph, disc: &Bound<'_>, real: Var, fake: Var) -> Result<(Var, Var)> {
    let lr = disc.forward(g, real)?;
    let pr = mean_prob(g, lr)?;
    let real_term = g.log(pr)?;
    let lf = disc.forward(g, fake)?;
    let pf = mean_prob(g, lf)?;
    let one_minus = g.affine(pf, -1.0, 1.0);
    let fake_term = g.log(one_minus)?;
    Ok((real_term, fake_term))
}

/// The two expectations of the adversarial objective.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GanLoss {
    /// `E_y[log D(y)]`, only the discriminator sees this one.
    pub real_term: f64,
    /// `E_x[log(1 − D(G(x)))]`, minimized by the generator.
    pub fake_term: f64,
}

impl GanLoss {
    /// The objective the discriminator maximizes.
    pub fn value(&self) -> f64 {
        self.real_term + self.fake_term
    }
}

fn non_empty(batch: &[Tensor], what: &str) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::contract(format!("{what}: empty batch")));
    }
    Ok(())
}

fn eval_prob(disc: &Network, x: &Tensor) -> Result<f64> {
    let logits = disc.infer(x)?;
    let n = logits.numel() as f64;
    let p = logits.data().iter().map(|&l| sigmoid(l)).sum::<f64>() / n;
    Ok(p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP))
}

pub fn gan_loss(generator: &Network, disc: &Network, batch_x: &[Tensor], batch_y: &[Tensor]) -> Result<GanLoss> {
    non_empty(batch_x, "gan_loss")?;
    non_empty(batch_y, "gan_loss")?;
    let mut real = 0.0;
    for y in batch_y {
        real += eval_prob(disc, y)?.ln();
    }
    let mut fake = 0.0;
    for x in batch_x {
        let gx = generator.infer(x)?;
        fake += (1.0 - eval_prob(disc, &gx)?).ln();
    }
    Ok(GanLoss {
        real_term: real / batch_y.len() as f64,
        fake_term: fake / batch_x.len() as f64,
    })
}

/// `(1/m) Σ ‖g_b(g_a(x)) − x‖²`.
pub fn cycle_loss(g_a: &Network, g_b: &Network, batch: &[Tensor], red: Reduction) -> Result<f64> {
    non_empty(batch, "cycle_loss")?;
    if g_a.spec.out_channels != g_b.spec.in_channels || g_b.spec.out_channels != g_a.spec.in_channels {
        return Err(Error::Dimension {
            op: "cycle_loss",
            lhs: vec![g_a.spec.in_channels, g_a.spec.out_channels],
            rhs: vec![g_b.spec.in_channels, g_b.spec.out_channels],
        });
    }
    let mut total = 0.0;
    for x in batch {
        let rec = g_b.infer(&g_a.infer(x)?)?;
        total += red.apply(rec.sq_dist(x)?, x.numel());
    }
    Ok(total / batch.len() as f64)
}

/// `(1/m) Σ ‖G(x) − Ĝ(x)‖²`.
pub fn gen_aware_loss(g_orig: &Network, g_masked: &Network, batch: &[Tensor], red: Reduction) -> Result<f64> {
    non_empty(batch, "gen_aware_loss")?;
    let mut total = 0.0;
    for x in batch {
        let a = g_orig.infer(x)?;
        let b = g_masked.infer(x)?;
        total += red.apply(a.sq_dist(&b)?, a.numel());
    }
    Ok(total / batch.len() as f64)
}

/// `(1/m) Σ ‖D(G(x)) − D(Ĝ(x))‖²` over the discriminator's spatial map,
/// before any reduction to a scalar.
pub fn dis_aware_loss(
    g_orig: &Network,
    g_masked: &Network,
    disc: &Network,
    batch: &[Tensor],
    red: Reduction,
    map: DisMap,
) -> Result<f64> {
    non_empty(batch, "dis_aware_loss")?;
    let mut total = 0.0;
    for x in batch {
        let a = map.respond(disc, &g_orig.infer(x)?)?;
        let b = map.respond(disc, &g_masked.infer(x)?)?;
        total += red.apply(a.sq_dist(&b)?, a.numel());
    }
    Ok(total / batch.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::arch::{ArchSpec, ConvSpec, Layer};

    /// 1x1 conv with scalar weight `w` and bias `b`: `x -> w*x + b`.
    fn affine_net(w: f64, b: f64) -> Network {
        let spec = ArchSpec {
            name: "affine".into(),
            in_channels: 1,
            out_channels: 1,
            layers: vec![Layer::Conv(ConvSpec::new(1, 1, 1, 1, 0).fixed())],
        };
        let mut net = Network::init(spec, 0).unwrap();
        net.weights.insert("0.weight".into(), Tensor::new(vec![1, 1, 1, 1], vec![w]).unwrap());
        net.weights.insert("0.bias".into(), Tensor::from_vec(vec![b]));
        net
    }

    #[test]
    fn cycle_hand_cases() {
        let id = affine_net(1.0, 0.0);
        let x = vec![Tensor::full(&[1, 1, 1], 1.0)];
        assert_eq!(cycle_loss(&id, &id, &x, Reduction::Sum).unwrap(), 0.0);
        let plus_one = affine_net(1.0, 1.0);
        assert_eq!(cycle_loss(&plus_one, &id, &x, Reduction::Sum).unwrap(), 1.0);
    }

    #[test]
    fn gen_aware_constant_offset() {
        let a = affine_net(1.0, 0.0);
        let b = affine_net(1.0, 1.0);
        let x = vec![Tensor::zeros(&[1, 2, 2])];
        assert_eq!(gen_aware_loss(&a, &b, &x, Reduction::Sum).unwrap(), 4.0);
        assert_eq!(gen_aware_loss(&a, &b, &x, Reduction::Mean).unwrap(), 1.0);
        assert_eq!(gen_aware_loss(&a, &a, &x, Reduction::Sum).unwrap(), 0.0);
    }

    #[test]
    fn constant_half_discriminator() {
        // zero weights and bias: every logit is 0, every probability 0.5
        let d = affine_net(0.0, 0.0);
        let g = affine_net(1.0, 0.0);
        let xs = vec![Tensor::full(&[1, 2, 2], 0.3)];
        let l = gan_loss(&g, &d, &xs, &xs).unwrap();
        assert!((l.real_term - 0.5f64.ln()).abs() < 1e-15);
        assert!((l.fake_term - 0.5f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn saturated_discriminator_is_clamped() {
        // huge positive logits on real (ones), huge negative on fake (G maps to -1)
        let d = affine_net(1e6, 0.0);
        let g = affine_net(-1.0, 0.0);
        let ys = vec![Tensor::full(&[1, 1, 1], 1.0)];
        let l = gan_loss(&g, &d, &ys, &ys).unwrap();
        assert!(l.real_term.abs() < 2e-7 && l.fake_term.abs() < 2e-7, "{l:?}");
    }

    #[test]
    fn empty_batch_is_a_contract_error() {
        let g = affine_net(1.0, 0.0);
        assert!(matches!(cycle_loss(&g, &g, &[], Reduction::Sum), Err(Error::Contract(_))));
        assert!(gan_loss(&g, &g, &[], &[Tensor::zeros(&[1, 1, 1])]).is_err());
    }
}
