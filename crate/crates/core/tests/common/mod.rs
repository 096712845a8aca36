//! Oracles shared by several test targets.
#![allow(dead_code)]

use gancompress::coevolution::{derive_seed, Evaluator, Metrics};
use gancompress::genome::{param_cost, Genome};
use gancompress::models::{ArchSpec, ConvSpec, Direction, Layer, Network, ResidualSpec};
use gancompress::tensor::{Activation, Graph, Tensor, Var};
use gancompress::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_EPS: f64 = 1e-5;
pub const FD_TOL: f64 = 1e-4;

/// Worst `|analytic − fd| / max(1, |analytic|)` over every element of every
/// input of `build`.
pub fn fd_error(inputs: &[Tensor], build: impl Fn(&mut Graph, &[Var]) -> Result<Var>) -> f64 {
    let eval = |vals: &[Tensor]| -> f64 {
        let mut g = Graph::new();
        let vars: Vec<Var> = vals.iter().map(|t| g.constant(t.clone())).collect();
        let out = build(&mut g, &vars).unwrap();
        g.value(out).item().unwrap()
    };
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs
        .iter()
        .enumerate()
        .map(|(i, t)| g.param(format!("p{i}"), t.clone()))
        .collect();
    let out = build(&mut g, &vars).unwrap();
    let grads = g.backward(out).unwrap();

    let mut worst = 0.0f64;
    for (i, t) in inputs.iter().enumerate() {
        let analytic = &grads[&format!("p{i}")];
        for j in 0..t.numel() {
            let mut vals = inputs.to_vec();
            vals[i].data_mut()[j] += FD_EPS;
            let up = eval(&vals);
            vals[i].data_mut()[j] -= 2.0 * FD_EPS;
            let down = eval(&vals);
            let fd = (up - down) / (2.0 * FD_EPS);
            let a = analytic.data()[j];
            worst = worst.max((a - fd).abs() / a.abs().max(1.0));
        }
    }
    worst
}

pub fn rand_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::uniform(shape, 1.0, rng)
}

/// Uniform values whose magnitude stays at least `gap` away from `kink`.
pub fn away_from(shape: &[usize], kink: f64, gap: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let mag = rng.random_range(gap..1.0);
            if rng.random_bool(0.5) {
                kink + mag
            } else {
                kink - mag
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Reduces an arbitrary tensor to a scalar with a fixed random projection so
/// that every output element carries a distinct weight.
pub fn project(g: &mut Graph, v: Var, rng: &mut ChaCha8Rng) -> Result<Var> {
    let w = rand_tensor(g.shape(v), rng);
    let w = g.constant(w);
    let p = g.mul(v, w)?;
    Ok(g.sum(p))
}

pub fn proj_seed(seed: u64) -> u64 {
    seed ^ 0x5EED
}

/// Three small nets that together cover conv, transposed conv, residual and
/// every activation kind.
pub fn three_layer_nets() -> Vec<ArchSpec> {
    vec![
        ArchSpec {
            name: "fd-a".into(),
            in_channels: 2,
            out_channels: 2,
            layers: vec![
                Layer::Conv(ConvSpec::new(3, 2, 3, 1, 1)),
                Layer::Activation { act: Activation::Tanh },
                Layer::Conv(ConvSpec::new(2, 3, 3, 2, 1)),
                Layer::Activation { act: Activation::Sigmoid },
                Layer::ConvTranspose(ConvSpec::new(2, 2, 3, 2, 1).with_output_pad(1)),
            ],
        },
        ArchSpec {
            name: "fd-b".into(),
            in_channels: 1,
            out_channels: 1,
            layers: vec![
                Layer::Conv(ConvSpec::new(4, 1, 3, 1, 1)),
                Layer::Activation { act: Activation::Tanh },
                Layer::Residual(ResidualSpec {
                    channels: 4,
                    inner: 3,
                    kernel: 3,
                    prunable: true,
                }),
                Layer::Activation { act: Activation::Sigmoid },
                Layer::Conv(ConvSpec::new(1, 4, 1, 1, 0)),
            ],
        },
        ArchSpec {
            name: "fd-c".into(),
            in_channels: 1,
            out_channels: 1,
            layers: vec![
                Layer::ConvTranspose(ConvSpec::new(2, 1, 3, 1, 1)),
                Layer::Activation { act: Activation::leaky_relu() },
                Layer::Conv(ConvSpec::new(3, 2, 2, 1, 0)),
                Layer::Activation { act: Activation::Tanh },
                Layer::Conv(ConvSpec::new(1, 3, 3, 2, 1)),
            ],
        },
    ]
}

/// Worst relative gradient error over every weight of `net` for the loss
/// `<net(x), probe>`.
pub fn network_fd_error(net: &Network, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = rand_tensor(&[net.spec.in_channels, 5, 5], &mut rng);
    let probe = rand_tensor(net.infer(&x).unwrap().shape(), &mut rng);
    let loss = |n: &Network| n.infer(&x).unwrap().dot(&probe).unwrap();

    let mut g = Graph::new();
    let bound = net.bind(&mut g, Some(""));
    let vx = g.constant(x.clone());
    let y = bound.forward(&mut g, vx).unwrap();
    let vp = g.constant(probe.clone());
    let yp = g.mul(y, vp).unwrap();
    let out = g.sum(yp);
    let grads = g.backward(out).unwrap();

    let mut worst = 0.0f64;
    for (name, t) in &net.weights {
        for j in 0..t.numel() {
            let mut n2 = net.clone();
            n2.weights.get_mut(name).unwrap().data_mut()[j] += FD_EPS;
            let up = loss(&n2);
            n2.weights.get_mut(name).unwrap().data_mut()[j] -= 2.0 * FD_EPS;
            let down = loss(&n2);
            let fd = (up - down) / (2.0 * FD_EPS);
            let a = grads[name].data()[j];
            worst = worst.max((a - fd).abs() / a.abs().max(1.0));
        }
    }
    worst
}

/// Layer 1 `{N=2, C=3, 3x3}`, layer 2 `{N=2, C=2, 3x3}`.
pub fn two_layer() -> ArchSpec {
    ArchSpec {
        name: "two-layer".into(),
        in_channels: 3,
        out_channels: 2,
        layers: vec![
            Layer::Conv(ConvSpec::new(2, 3, 3, 1, 1)),
            Layer::Conv(ConvSpec::new(2, 2, 3, 1, 1)),
        ],
    }
}

pub fn genome(spec: &ArchSpec, layers: Vec<Vec<bool>>) -> Genome {
    Genome {
        arch: spec.name.clone(),
        layers,
    }
}

/// Every 4-bit mask of [`two_layer`], repaired or not.
pub fn all_sixteen(spec: &ArchSpec) -> Vec<Genome> {
    (0u32..16)
        .map(|m| {
            let bit = |i: u32| m >> i & 1 == 1;
            genome(spec, vec![vec![bit(0), bit(1)], vec![bit(2), bit(3)]])
        })
        .collect()
}

/// `a ≤ b` bitwise.
pub fn dominated(a: &Genome, b: &Genome) -> bool {
    a.bits().zip(b.bits()).all(|(x, y)| !x || y)
}

/// Two 3x3 convs of 8 filters on 3 input channels: 16 genome bits.
pub fn toy() -> ArchSpec {
    ArchSpec {
        name: "toy".into(),
        in_channels: 3,
        out_channels: 8,
        layers: vec![
            Layer::Conv(ConvSpec::new(8, 3, 3, 1, 1)),
            Layer::Conv(ConvSpec::new(8, 8, 3, 1, 1)),
        ],
    }
}

/// Cost plus seed-driven noise, with a cycle term that depends on the
/// peer's elite so the two populations interact.
pub struct Noisy {
    pub spec: ArchSpec,
}

pub fn unit_noise(seed: u64) -> f64 {
    (derive_seed(seed, &[77]) >> 11) as f64 / (1u64 << 53) as f64
}

impl Evaluator for Noisy {
    type Artifact = f64;

    fn spec(&self, _: Direction) -> &ArchSpec {
        &self.spec
    }

    fn initial_artifact(&self, _: Direction) -> Result<f64> {
        Ok(1.0)
    }

    fn evaluate(&self, _: Direction, genome: &Genome, peer: &f64, seed: u64) -> Result<(Metrics, f64)> {
        let n = param_cost(genome, &self.spec)?;
        let m = Metrics {
            param_cost: n,
            dis_loss: 0.05 * unit_noise(seed) * (1.0 - n),
            cyc_loss: 0.01 * (1.0 - peer) + 0.002 * unit_noise(seed ^ 3),
        };
        Ok((m, n))
    }
}
