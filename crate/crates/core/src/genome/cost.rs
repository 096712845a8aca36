use serde::{Deserialize, Serialize};

use super::mask::{layer_keeps, LayerKeep};
use super::Genome;
use crate::error::Result;
use crate::models::{ArchSpec, Layer};

/// Retained (inputs, outputs) of every weight-bearing convolution, in the
/// same order as [`ArchSpec::cost_terms`].
fn retained_terms(spec: &ArchSpec, genome: &Genome) -> Result<Vec<(usize, usize)>> {
    let c = |m: &[bool]| m.iter().filter(|&&b| b).count();
    let keeps = layer_keeps(spec, genome)?;
    let mut out = Vec::new();
    for keep in &keeps {
        match keep {
            LayerKeep::Conv { input, output } => out.push((c(input), c(output))),
            LayerKeep::Residual { io, inner } => {
                out.push((c(io), c(inner)));
                out.push((c(inner), c(io)));
            }
            LayerKeep::Passthrough => {}
        }
    }
    Ok(out)
}

/// Weighted filter-count cost in `(0, 1]`:
/// `Σ kept_in·kept_out·H·W / Σ N·C·H·W` over every convolution.
///
/// The first layer's kept input count is the network's input channel
/// count; inputs are never pruned.
pub fn param_cost(genome: &Genome, spec: &ArchSpec) -> Result<f64> {
    let terms = spec.cost_terms();
    let kept = retained_terms(spec, genome)?;
    let mut num = 0usize;
    let mut den = 0usize;
    for (t, (kin, kout)) in terms.iter().zip(kept) {
        num += kin * kout * t.kernel_area;
        den += t.filters * t.channels * t.kernel_area;
    }
    Ok(num as f64 / den as f64)
}

/// Scalar parameters (weights and biases) of the compact network.
pub fn param_count(genome: &Genome, spec: &ArchSpec) -> Result<usize> {
    let terms = spec.cost_terms();
    let kept = retained_terms(spec, genome)?;
    Ok(terms
        .iter()
        .zip(kept)
        .map(|(t, (kin, kout))| kin * kout * t.kernel_area + kout)
        .sum())
}

/// Multiply-accumulate totals for one forward pass.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlopCount {
    pub macs: u64,
    pub full_macs: u64,
}

impl FlopCount {
    pub fn ratio(&self) -> f64 {
        self.macs as f64 / self.full_macs as f64
    }
}

/// MACs of the compact network on an `input_hw` input. A convolution costs
/// `kept_out·kept_in·H·W·H_out·W_out`; a transposed convolution scatters
/// each input pixel once per tap, so it is charged per input pixel.
pub fn flop_count(genome: &Genome, spec: &ArchSpec, input_hw: (usize, usize)) -> Result<FlopCount> {
    let extents = spec.spatial_extents(input_hw.0, input_hw.1)?;
    let kept = retained_terms(spec, genome)?;
    let mut kept = kept.into_iter();
    let mut macs = 0u64;
    let mut full = 0u64;
    let mut prev = input_hw;
    for (layer, &ext) in spec.layers.iter().zip(&extents) {
        let mut charge = |filters: usize, channels: usize, area: usize, pixels: usize| {
            let (kin, kout) = kept.next().expect("one term per conv");
            macs += (kin * kout * area * pixels) as u64;
            full += (filters * channels * area * pixels) as u64;
        };
        match layer {
            Layer::Conv(c) => charge(c.filters, c.channels, c.kernel_area(), ext.0 * ext.1),
            Layer::ConvTranspose(c) => charge(c.filters, c.channels, c.kernel_area(), prev.0 * prev.1),
            Layer::Residual(r) => {
                let (a, b) = (r.conv_a(), r.conv_b());
                charge(a.filters, a.channels, a.kernel_area(), ext.0 * ext.1);
                charge(b.filters, b.channels, b.kernel_area(), ext.0 * ext.1);
            }
            Layer::Activation { .. } => {}
        }
        prev = ext;
    }
    Ok(FlopCount {
        macs,
        full_macs: full,
    })
}
