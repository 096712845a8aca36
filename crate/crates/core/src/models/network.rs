use std::collections::{BTreeMap, HashMap};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::arch::{ArchSpec, ConvSpec, Layer};
use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, Var};

/// Named parameter tensors of one network.
pub type WeightBundle = BTreeMap<String, Tensor>;

/// Parameter names of a convolution-bearing layer.
pub fn weight_name(layer: usize, sub: Option<char>) -> String {
    match sub {
        Some(s) => format!("{layer}.{s}.weight"),
        None => format!("{layer}.weight"),
    }
}

pub fn bias_name(layer: usize, sub: Option<char>) -> String {
    match sub {
        Some(s) => format!("{layer}.{s}.bias"),
        None => format!("{layer}.bias"),
    }
}

/// Shape of a layer's filter tensor.
pub fn filter_shape(conv: &ConvSpec, transpose: bool) -> [usize; 4] {
    let [kh, kw] = conv.kernel;
    if transpose {
        [conv.channels, conv.filters, kh, kw]
    } else {
        [conv.filters, conv.channels, kh, kw]
    }
}

/// Filter/bias pair of one convolution.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvParam {
    pub weight: String,
    pub bias: String,
    pub shape: [usize; 4],
    pub transpose: bool,
}

impl ConvParam {
    pub fn fan_in(&self) -> usize {
        let [a, b, kh, kw] = self.shape;
        if self.transpose {
            a * kh * kw
        } else {
            b * kh * kw
        }
    }
}

/// Every convolution of `spec` in forward order.
pub fn conv_params(spec: &ArchSpec) -> Vec<ConvParam> {
    let mut out = Vec::new();
    let mut conv = |i: usize, sub: Option<char>, c: &ConvSpec, transpose: bool| {
        out.push(ConvParam {
            weight: weight_name(i, sub),
            bias: bias_name(i, sub),
            shape: filter_shape(c, transpose),
            transpose,
        });
    };
    for (i, layer) in spec.layers.iter().enumerate() {
        match layer {
            Layer::Conv(c) => conv(i, None, c, false),
            Layer::ConvTranspose(c) => conv(i, None, c, true),
            Layer::Residual(r) => {
                conv(i, Some('a'), &r.conv_a(), false);
                conv(i, Some('b'), &r.conv_b(), false);
            }
            Layer::Activation { .. } => {}
        }
    }
    out
}

/// Every parameter tensor the spec requires, with its shape.
pub fn param_shapes(spec: &ArchSpec) -> Vec<(String, Vec<usize>)> {
    conv_params(spec)
        .into_iter()
        .flat_map(|p| {
            let n = if p.transpose { p.shape[1] } else { p.shape[0] };
            [(p.weight, p.shape.to_vec()), (p.bias, vec![n])]
        })
        .collect()
}

/// An architecture together with its weights.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    pub spec: ArchSpec,
    pub weights: WeightBundle,
}

impl Network {
    /// Uniform `±1/sqrt(fan_in)` initialization for weights and biases.
    /// The second conv of each residual block is scaled down so that blocks
    /// start close to the identity.
    pub fn init(spec: ArchSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = WeightBundle::new();
        for p in conv_params(&spec) {
            let mut bound = 1.0 / (p.fan_in() as f64).sqrt();
            if p.weight.contains(".b.") {
                bound *= 0.1;
            }
            let n = if p.transpose { p.shape[1] } else { p.shape[0] };
            weights.insert(p.weight, Tensor::uniform(&p.shape, bound, &mut rng));
            weights.insert(p.bias, Tensor::uniform(&[n], bound, &mut rng));
        }
        Ok(Network { spec, weights })
    }

    pub fn new(spec: ArchSpec, weights: WeightBundle) -> Result<Self> {
        spec.validate()?;
        let expected = param_shapes(&spec);
        if expected.len() != weights.len() {
            return Err(Error::ArchMismatch(format!(
                "{} expects {} tensors, got {}",
                spec.name,
                expected.len(),
                weights.len()
            )));
        }
        for (name, shape) in &expected {
            match weights.get(name) {
                Some(t) if t.shape() == shape.as_slice() => {}
                Some(t) => {
                    return Err(Error::Dimension {
                        op: "network",
                        lhs: shape.clone(),
                        rhs: t.shape().to_vec(),
                    })
                }
                None => return Err(Error::ArchMismatch(format!("missing tensor '{name}'"))),
            }
        }
        Ok(Network { spec, weights })
    }

    /// Number of scalar parameters, biases included.
    pub fn param_count(&self) -> usize {
        self.weights.values().map(Tensor::numel).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.weights.values().all(Tensor::is_finite)
    }

    /// Places the weights on `graph`. With `Some(prefix)` they become
    /// trainable parameters named `prefix + name`; with `None` they are
    /// frozen constants.
    pub fn bind(&self, graph: &mut Graph, trainable: Option<&str>) -> Bound<'_> {
        let vars = self
            .weights
            .iter()
            .map(|(name, t)| {
                let v = match trainable {
                    Some(prefix) => graph.param(format!("{prefix}{name}"), t.clone()),
                    None => graph.constant(t.clone()),
                };
                (name.clone(), v)
            })
            .collect();
        Bound {
            spec: &self.spec,
            vars,
        }
    }

    /// Forward pass without gradient bookkeeping.
    pub fn infer(&self, input: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let bound = self.bind(&mut g, None);
        let x = g.constant(input.clone());
        let y = bound.forward(&mut g, x)?;
        Ok(g.value(y).clone())
    }
}

/// A network whose weights live on a particular graph.
pub struct Bound<'a> {
    spec: &'a ArchSpec,
    vars: HashMap<String, Var>,
}

impl Bound<'_> {
    fn var(&self, name: &str) -> Var {
        self.vars[name]
    }

    pub fn forward(&self, g: &mut Graph, input: Var) -> Result<Var> {
        let mut x = input;
        for (i, layer) in self.spec.layers.iter().enumerate() {
            x = match layer {
                Layer::Conv(c) => {
                    let (w, b) = (self.var(&weight_name(i, None)), self.var(&bias_name(i, None)));
                    g.conv2d(x, w, b, c.stride, c.pad)?
                }
                Layer::ConvTranspose(c) => {
                    let (w, b) = (self.var(&weight_name(i, None)), self.var(&bias_name(i, None)));
                    g.conv2d_transpose(x, w, b, c.stride, c.pad, c.output_pad)?
                }
                Layer::Residual(r) => {
                    let (ca, cb) = (r.conv_a(), r.conv_b());
                    let wa = self.var(&weight_name(i, Some('a')));
                    let ba = self.var(&bias_name(i, Some('a')));
                    let wb = self.var(&weight_name(i, Some('b')));
                    let bb = self.var(&bias_name(i, Some('b')));
                    let h = g.conv2d(x, wa, ba, ca.stride, ca.pad)?;
                    let h = g.relu(h);
                    let h = g.conv2d(h, wb, bb, cb.stride, cb.pad)?;
                    g.add(x, h)?
                }
                Layer::Activation { act } => g.activation(x, *act),
            };
        }
        Ok(x)
    }
}

/// Splits `prefix`-named gradients back to network-local names.
pub fn strip_prefix(grads: &crate::tensor::Gradients, prefix: &str) -> crate::tensor::Gradients {
    grads
        .iter()
        .filter_map(|(k, v)| k.strip_prefix(prefix).map(|s| (s.to_string(), v.clone())))
        .collect()
}
