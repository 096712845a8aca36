use std::collections::BTreeMap;

use super::conv::{self, ConvGeom};
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Pointwise nonlinearities.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Activation {
    Relu,
    LeakyRelu { alpha: f64 },
    Tanh,
    Sigmoid,
}

impl Activation {
    pub const DEFAULT_LEAKY_SLOPE: f64 = 0.2;

    pub fn leaky_relu() -> Self {
        Activation::LeakyRelu {
            alpha: Self::DEFAULT_LEAKY_SLOPE,
        }
    }

    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::LeakyRelu { alpha } => {
                if x > 0.0 {
                    x
                } else {
                    alpha * x
                }
            }
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
        }
    }

    /// Derivative expressed through the input `x` and the output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu { alpha } => {
                if x > 0.0 {
                    1.0
                } else {
                    alpha
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
        }
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Conv2d {
        input: Var,
        filters: Var,
        bias: Var,
        geom: ConvGeom,
    },
    ConvTranspose2d {
        input: Var,
        filters: Var,
        bias: Var,
        geom: ConvGeom,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Affine { input: Var, scale: f64 },
    Act(Var, Activation),
    Sum(Var),
    Mean(Var),
    Log(Var),
    Clamp { input: Var, lo: f64, hi: f64 },
    SqSum(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    param: Option<String>,
}

/// Gradients keyed by parameter name.
pub type Gradients = BTreeMap<String, Tensor>;

/// Append-only tape of tensor operations. Node ids are issued in
/// topological order, so the reverse pass is a single backwards sweep.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Input or frozen tensor; receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Trainable leaf. Several leaves may share one name; their gradients
    /// are summed.
    pub fn param(&mut self, name: impl Into<String>, value: Tensor) -> Var {
        let v = self.push(value, Op::Leaf, true);
        self.nodes[v.0].param = Some(name.into());
        v
    }

    pub fn conv2d(&mut self, input: Var, filters: Var, bias: Var, stride: usize, pad: usize) -> Result<Var> {
        let geom = ConvGeom::conv2d(self.shape(input), self.shape(filters), stride, pad)?;
        self.check_bias("conv2d", bias, geom.out_channels)?;
        let mut out = Tensor::zeros(&geom.out_shape());
        conv::conv2d_forward(
            &geom,
            self.value(input).data(),
            self.value(filters).data(),
            self.value(bias).data(),
            out.data_mut(),
        );
        let rg = self.rg(input) || self.rg(filters) || self.rg(bias);
        Ok(self.push(
            out,
            Op::Conv2d {
                input,
                filters,
                bias,
                geom,
            },
            rg,
        ))
    }

    pub fn conv2d_transpose(
        &mut self,
        input: Var,
        filters: Var,
        bias: Var,
        stride: usize,
        pad: usize,
        output_pad: usize,
    ) -> Result<Var> {
        let geom =
            ConvGeom::conv2d_transpose(self.shape(input), self.shape(filters), stride, pad, output_pad)?;
        self.check_bias("conv2d_transpose", bias, geom.out_channels)?;
        let mut out = Tensor::zeros(&geom.out_shape());
        conv::conv2d_transpose_forward(
            &geom,
            self.value(input).data(),
            self.value(filters).data(),
            self.value(bias).data(),
            out.data_mut(),
        );
        let rg = self.rg(input) || self.rg(filters) || self.rg(bias);
        Ok(self.push(
            out,
            Op::ConvTranspose2d {
                input,
                filters,
                bias,
                geom,
            },
            rg,
        ))
    }

    fn check_bias(&self, op: &'static str, bias: Var, n: usize) -> Result<()> {
        if self.shape(bias) != [n] {
            return Err(Error::Dimension {
                op,
                lhs: self.shape(bias).to_vec(),
                rhs: vec![n],
            });
        }
        Ok(())
    }

    fn binary(&mut self, op_name: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        self.value(a).check_same_shape(op_name, self.value(b))?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let out = Tensor::new(self.shape(a).to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// `scale * a + shift`.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Var {
        let out = self.value(a).map(|x| scale * x + shift);
        let rg = self.rg(a);
        self.push(out, Op::Affine { input: a, scale }, rg)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        self.affine(a, factor, 0.0)
    }

    pub fn activation(&mut self, a: Var, act: Activation) -> Var {
        let out = self.value(a).map(|x| act.apply(x));
        let rg = self.rg(a);
        self.push(out, Op::Act(a, act), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.activation(a, Activation::Relu)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.activation(a, Activation::Tanh)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.activation(a, Activation::Sigmoid)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        let rg = self.rg(a);
        self.push(out, Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).numel();
        if n == 0 {
            return Err(Error::contract("mean of an empty tensor"));
        }
        let out = Tensor::scalar(self.value(a).sum() / n as f64);
        let rg = self.rg(a);
        Ok(self.push(out, Op::Mean(a), rg))
    }

    /// Natural log; inputs must be positive.
    pub fn log(&mut self, a: Var) -> Result<Var> {
        if self.value(a).data().iter().any(|&x| x <= 0.0) {
            return Err(Error::contract("log of a non-positive value"));
        }
        let out = self.value(a).map(f64::ln);
        let rg = self.rg(a);
        Ok(self.push(out, Op::Log(a), rg))
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let out = self.value(a).map(|x| x.clamp(lo, hi));
        let rg = self.rg(a);
        self.push(out, Op::Clamp { input: a, lo, hi }, rg)
    }

    /// `Σ a²` as a scalar.
    pub fn sq_sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).data().iter().map(|x| x * x).sum());
        let rg = self.rg(a);
        self.push(out, Op::SqSum(a), rg)
    }

    /// `‖a − b‖²` as a scalar.
    pub fn sq_dist(&mut self, a: Var, b: Var) -> Result<Var> {
        let d = self.sub(a, b)?;
        Ok(self.sq_sum(d))
    }

    /// Reverse sweep from a scalar `loss`. Every named parameter in the
    /// graph appears in the result, with zeros if it did not influence the
    /// loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).numel() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        for id in (0..=loss.0).rev() {
            let Some(gout) = grads[id].take() else {
                continue;
            };
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            match &node.op {
                Op::Leaf => {
                    grads[id] = Some(gout);
                }
                Op::Conv2d {
                    input,
                    filters,
                    bias,
                    geom,
                } => {
                    let mut gi = self.grad_buf(*input);
                    let mut gf = self.grad_buf(*filters);
                    let mut gb = self.grad_buf(*bias);
                    conv::conv2d_backward(
                        geom,
                        self.value(*input).data(),
                        self.value(*filters).data(),
                        &gout,
                        gi.as_deref_mut(),
                        gf.as_deref_mut(),
                        gb.as_deref_mut(),
                    );
                    accumulate(&mut grads, *input, gi);
                    accumulate(&mut grads, *filters, gf);
                    accumulate(&mut grads, *bias, gb);
                }
                Op::ConvTranspose2d {
                    input,
                    filters,
                    bias,
                    geom,
                } => {
                    let mut gi = self.grad_buf(*input);
                    let mut gf = self.grad_buf(*filters);
                    let mut gb = self.grad_buf(*bias);
                    conv::conv2d_transpose_backward(
                        geom,
                        self.value(*input).data(),
                        self.value(*filters).data(),
                        &gout,
                        gi.as_deref_mut(),
                        gf.as_deref_mut(),
                        gb.as_deref_mut(),
                    );
                    accumulate(&mut grads, *input, gi);
                    accumulate(&mut grads, *filters, gf);
                    accumulate(&mut grads, *bias, gb);
                }
                Op::Add(a, b) => {
                    if self.rg(*a) {
                        accumulate(&mut grads, *a, Some(gout.clone()));
                    }
                    if self.rg(*b) {
                        accumulate(&mut grads, *b, Some(gout));
                    }
                }
                Op::Sub(a, b) => {
                    if self.rg(*b) {
                        accumulate(&mut grads, *b, Some(gout.iter().map(|g| -g).collect()));
                    }
                    if self.rg(*a) {
                        accumulate(&mut grads, *a, Some(gout));
                    }
                }
                Op::Mul(a, b) => {
                    if self.rg(*a) {
                        let g = zip_map(&gout, self.value(*b).data(), |g, y| g * y);
                        accumulate(&mut grads, *a, Some(g));
                    }
                    if self.rg(*b) {
                        let g = zip_map(&gout, self.value(*a).data(), |g, x| g * x);
                        accumulate(&mut grads, *b, Some(g));
                    }
                }
                Op::Affine { input, scale } => {
                    let g = gout.iter().map(|g| g * scale).collect();
                    accumulate(&mut grads, *input, Some(g));
                }
                Op::Act(a, act) => {
                    let x = self.value(*a).data();
                    let y = node.value.data();
                    let g = gout
                        .iter()
                        .zip(x.iter().zip(y))
                        .map(|(g, (&x, &y))| g * act.derivative(x, y))
                        .collect();
                    accumulate(&mut grads, *a, Some(g));
                }
                Op::Sum(a) => {
                    let n = self.value(*a).numel();
                    accumulate(&mut grads, *a, Some(vec![gout[0]; n]));
                }
                Op::Mean(a) => {
                    let n = self.value(*a).numel();
                    accumulate(&mut grads, *a, Some(vec![gout[0] / n as f64; n]));
                }
                Op::Log(a) => {
                    let g = zip_map(&gout, self.value(*a).data(), |g, x| g / x);
                    accumulate(&mut grads, *a, Some(g));
                }
                Op::Clamp { input, lo, hi } => {
                    let g = zip_map(&gout, self.value(*input).data(), |g, x| {
                        if x < *lo || x > *hi {
                            0.0
                        } else {
                            g
                        }
                    });
                    accumulate(&mut grads, *input, Some(g));
                }
                Op::SqSum(a) => {
                    let g = self.value(*a).data().iter().map(|x| 2.0 * x * gout[0]).collect();
                    accumulate(&mut grads, *a, Some(g));
                }
            }
        }

        let mut out = Gradients::new();
        for (id, node) in self.nodes.iter().enumerate() {
            let Some(name) = &node.param else { continue };
            let shape = node.value.shape();
            let entry = out
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(shape));
            if let Some(Some(g)) = grads.get(id) {
                entry.check_same_shape("backward", &node.value)?;
                for (acc, v) in entry.data_mut().iter_mut().zip(g) {
                    *acc += v;
                }
            }
        }
        Ok(out)
    }

    fn grad_buf(&self, v: Var) -> Option<Vec<f64>> {
        self.rg(v).then(|| vec![0.0; self.value(v).numel()])
    }
}

fn zip_map(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

fn accumulate(grads: &mut [Option<Vec<f64>>], v: Var, g: Option<Vec<f64>>) {
    let Some(g) = g else { return };
    match &mut grads[v.0] {
        Some(existing) => {
            for (e, x) in existing.iter_mut().zip(&g) {
                *e += x;
            }
        }
        slot @ None => *slot = Some(g),
    }
}
