use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::conv::{conv_out_extent, conv_t_out_extent};
use crate::tensor::Activation;

/// A convolution or transposed convolution layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvSpec {
    /// Number of filters (output channels), `N_l`.
    pub filters: usize,
    /// Input channels, `C_l`.
    pub channels: usize,
    /// Kernel extents `[H_l, W_l]`.
    pub kernel: [usize; 2],
    pub stride: usize,
    pub pad: usize,
    /// Extra rows/columns on the output of a transposed convolution.
    #[serde(default)]
    pub output_pad: usize,
    pub prunable: bool,
}

impl ConvSpec {
    pub fn new(filters: usize, channels: usize, k: usize, stride: usize, pad: usize) -> Self {
        ConvSpec {
            filters,
            channels,
            kernel: [k, k],
            stride,
            pad,
            output_pad: 0,
            prunable: true,
        }
    }

    pub fn fixed(mut self) -> Self {
        self.prunable = false;
        self
    }

    pub fn with_output_pad(mut self, output_pad: usize) -> Self {
        self.output_pad = output_pad;
        self
    }

    pub fn kernel_area(&self) -> usize {
        self.kernel[0] * self.kernel[1]
    }
}

/// `y = x + conv_b(relu(conv_a(x)))`, both convs stride 1 with same padding.
/// `conv_a` maps `channels -> inner`, `conv_b` maps `inner -> channels`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResidualSpec {
    pub channels: usize,
    pub inner: usize,
    pub kernel: usize,
    /// Whether the inner filters of `conv_a` are searchable.
    pub prunable: bool,
}

impl ResidualSpec {
    pub fn conv_a(&self) -> ConvSpec {
        ConvSpec {
            filters: self.inner,
            channels: self.channels,
            kernel: [self.kernel, self.kernel],
            stride: 1,
            pad: self.kernel / 2,
            output_pad: 0,
            prunable: self.prunable,
        }
    }

    pub fn conv_b(&self) -> ConvSpec {
        ConvSpec {
            filters: self.channels,
            channels: self.inner,
            kernel: [self.kernel, self.kernel],
            stride: 1,
            pad: self.kernel / 2,
            output_pad: 0,
            prunable: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "layer", rename_all = "snake_case", deny_unknown_fields)]
pub enum Layer {
    Conv(ConvSpec),
    ConvTranspose(ConvSpec),
    Residual(ResidualSpec),
    Activation { act: Activation },
}

impl Layer {
    fn act(act: Activation) -> Self {
        Layer::Activation { act }
    }
}

/// Ordered layer list describing one network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchSpec {
    pub name: String,
    pub in_channels: usize,
    pub out_channels: usize,
    pub layers: Vec<Layer>,
}

/// A searchable group of filters: one genome layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MaskSlot {
    /// Index into `ArchSpec::layers`.
    pub layer: usize,
    pub bits: usize,
}

/// One weight-bearing convolution as seen by the cost model.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CostTerm {
    pub filters: usize,
    pub channels: usize,
    pub kernel_area: usize,
}

impl ArchSpec {
    /// Down/residual/up generator at width `f`:
    /// conv3x3/s1 (f) -> relu -> conv3x3/s2 (2f) -> relu -> residual x `blocks`
    /// -> convT3x3/s2 (f) -> relu -> conv3x3/s1 (io) -> tanh.
    pub fn generator(io_channels: usize, f: usize, blocks: usize) -> Self {
        let mut layers = vec![
            Layer::Conv(ConvSpec::new(f, io_channels, 3, 1, 1)),
            Layer::act(Activation::Relu),
            Layer::Conv(ConvSpec::new(2 * f, f, 3, 2, 1)),
            Layer::act(Activation::Relu),
        ];
        for _ in 0..blocks {
            layers.push(Layer::Residual(ResidualSpec {
                channels: 2 * f,
                inner: 2 * f,
                kernel: 3,
                prunable: true,
            }));
        }
        layers.extend([
            Layer::ConvTranspose(ConvSpec::new(f, 2 * f, 3, 2, 1).with_output_pad(1)),
            Layer::act(Activation::Relu),
            Layer::Conv(ConvSpec::new(io_channels, f, 3, 1, 1).fixed()),
            Layer::act(Activation::Tanh),
        ]);
        ArchSpec {
            name: format!("generator-f{f}-b{blocks}-io{io_channels}"),
            in_channels: io_channels,
            out_channels: io_channels,
            layers,
        }
    }

    /// Patch discriminator emitting a one-channel logit map:
    /// conv3x3/s2 (f) -> leaky -> conv3x3/s2 (2f) -> leaky -> conv1x1 (1).
    pub fn discriminator(io_channels: usize, f: usize) -> Self {
        ArchSpec {
            name: format!("discriminator-f{f}-io{io_channels}"),
            in_channels: io_channels,
            out_channels: 1,
            layers: vec![
                Layer::Conv(ConvSpec::new(f, io_channels, 3, 2, 1).fixed()),
                Layer::act(Activation::leaky_relu()),
                Layer::Conv(ConvSpec::new(2 * f, f, 3, 2, 1).fixed()),
                Layer::act(Activation::leaky_relu()),
                Layer::Conv(ConvSpec::new(1, 2 * f, 1, 1, 0).fixed()),
            ],
        }
    }

    /// Checks the channel chain and residual consistency.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::ArchMismatch(format!("{}: {msg}", self.name)));
        let mut cur = self.in_channels;
        for (i, layer) in self.layers.iter().enumerate() {
            match layer {
                Layer::Conv(c) | Layer::ConvTranspose(c) => {
                    if c.channels != cur {
                        return bad(format!("layer {i} expects {} channels, gets {cur}", c.channels));
                    }
                    if c.filters == 0 || c.stride == 0 || c.kernel.contains(&0) {
                        return bad(format!("layer {i} has a zero extent"));
                    }
                    cur = c.filters;
                }
                Layer::Residual(r) => {
                    if r.channels != cur {
                        return bad(format!("residual {i} expects {} channels, gets {cur}", r.channels));
                    }
                    if r.inner == 0 || r.kernel % 2 == 0 {
                        return bad(format!("residual {i} needs inner >= 1 and an odd kernel"));
                    }
                }
                Layer::Activation { .. } => {}
            }
        }
        if cur != self.out_channels {
            return bad(format!("ends with {cur} channels, declared {}", self.out_channels));
        }
        Ok(())
    }

    /// [`validate`](Self::validate) plus the requirement that the output
    /// channel count cannot be pruned.
    pub fn validate_fixed_output(&self) -> Result<()> {
        self.validate()?;
        let last = self.layers.iter().rev().find(|l| !matches!(l, Layer::Activation { .. }));
        match last {
            Some(Layer::Conv(c)) | Some(Layer::ConvTranspose(c)) if !c.prunable => Ok(()),
            Some(Layer::Residual(_)) => Ok(()),
            None => Ok(()),
            _ => Err(Error::ArchMismatch(format!(
                "{}: final layer must not be prunable",
                self.name
            ))),
        }
    }

    pub fn mask_slots(&self) -> Vec<MaskSlot> {
        self.layers
            .iter()
            .enumerate()
            .filter_map(|(i, l)| match l {
                Layer::Conv(c) | Layer::ConvTranspose(c) if c.prunable => Some(MaskSlot {
                    layer: i,
                    bits: c.filters,
                }),
                Layer::Residual(r) if r.prunable => Some(MaskSlot {
                    layer: i,
                    bits: r.inner,
                }),
                _ => None,
            })
            .collect()
    }

    /// Total number of searchable filters.
    pub fn genome_len(&self) -> usize {
        self.mask_slots().iter().map(|s| s.bits).sum()
    }

    /// Weight-bearing convolutions in forward order; residual blocks
    /// contribute two terms.
    pub fn cost_terms(&self) -> Vec<CostTerm> {
        let term = |c: &ConvSpec| CostTerm {
            filters: c.filters,
            channels: c.channels,
            kernel_area: c.kernel_area(),
        };
        let mut out = Vec::new();
        for layer in &self.layers {
            match layer {
                Layer::Conv(c) | Layer::ConvTranspose(c) => out.push(term(c)),
                Layer::Residual(r) => {
                    out.push(term(&r.conv_a()));
                    out.push(term(&r.conv_b()));
                }
                Layer::Activation { .. } => {}
            }
        }
        out
    }

    /// Spatial extent after every layer for an `[in_channels, h, w]` input.
    pub fn spatial_extents(&self, h: usize, w: usize) -> Result<Vec<(usize, usize)>> {
        let mut cur = (h, w);
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            cur = match layer {
                Layer::Conv(c) => conv_out_extent(cur.0, c.kernel[0], c.stride, c.pad)
                    .zip(conv_out_extent(cur.1, c.kernel[1], c.stride, c.pad))
                    .ok_or_else(|| geometry(i, cur))?,
                Layer::ConvTranspose(c) => {
                    conv_t_out_extent(cur.0, c.kernel[0], c.stride, c.pad, c.output_pad)
                        .zip(conv_t_out_extent(cur.1, c.kernel[1], c.stride, c.pad, c.output_pad))
                        .ok_or_else(|| geometry(i, cur))?
                }
                Layer::Residual(_) | Layer::Activation { .. } => cur,
            };
            out.push(cur);
        }
        Ok(out)
    }
}

fn geometry(layer: usize, input: (usize, usize)) -> Error {
    Error::Geometry {
        op: "arch",
        detail: format!("layer {layer} has empty output for {}x{} input", input.0, input.1),
    }
}
