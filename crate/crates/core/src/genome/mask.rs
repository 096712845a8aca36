use super::Genome;
use crate::error::{Error, Result};
use crate::models::network::{bias_name, weight_name};
use crate::models::{ArchSpec, ConvSpec, Layer, Network, ResidualSpec, WeightBundle};
use crate::tensor::Tensor;

/// Retained channels around one layer, resolved from a genome.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LayerKeep {
    Conv { input: Vec<bool>, output: Vec<bool> },
    Residual { io: Vec<bool>, inner: Vec<bool> },
    Passthrough,
}

fn count(mask: &[bool]) -> usize {
    mask.iter().filter(|&&b| b).count()
}

fn indices(mask: &[bool]) -> Vec<usize> {
    mask.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i).collect()
}

/// Walks the channel chain and resolves each layer's kept inputs/outputs.
pub fn layer_keeps(spec: &ArchSpec, genome: &Genome) -> Result<Vec<LayerKeep>> {
    genome.check(spec)?;
    let mut slots = genome.layers.iter();
    let mut cur = vec![true; spec.in_channels];
    let mut out = Vec::with_capacity(spec.layers.len());
    for layer in &spec.layers {
        match layer {
            Layer::Conv(c) | Layer::ConvTranspose(c) => {
                let output = if c.prunable {
                    slots.next().expect("checked").clone()
                } else {
                    vec![true; c.filters]
                };
                out.push(LayerKeep::Conv {
                    input: cur.clone(),
                    output: output.clone(),
                });
                cur = output;
            }
            Layer::Residual(r) => {
                let inner = if r.prunable {
                    slots.next().expect("checked").clone()
                } else {
                    vec![true; r.inner]
                };
                out.push(LayerKeep::Residual {
                    io: cur.clone(),
                    inner,
                });
            }
            Layer::Activation { .. } => out.push(LayerKeep::Passthrough),
        }
    }
    Ok(out)
}

fn require_repaired(genome: &Genome) -> Result<()> {
    if !genome.is_repaired() {
        return Err(Error::contract(
            "genome has a layer with no retained filter; repair it first",
        ));
    }
    Ok(())
}

/// Zeroes `t[a, b, ..]` wherever `keep_a[a]` or `keep_b[b]` is false.
fn zero4(t: &mut Tensor, keep_a: &[bool], keep_b: &[bool]) {
    let s = t.shape().to_vec();
    let inner = s[2] * s[3];
    let data = t.data_mut();
    for a in 0..s[0] {
        for b in 0..s[1] {
            if !(keep_a[a] && keep_b[b]) {
                let off = (a * s[1] + b) * inner;
                data[off..off + inner].fill(0.0);
            }
        }
    }
}

fn zero1(t: &mut Tensor, keep: &[bool]) {
    for (v, &k) in t.data_mut().iter_mut().zip(keep) {
        if !k {
            *v = 0.0;
        }
    }
}

fn select4(t: &Tensor, keep_a: &[usize], keep_b: &[usize]) -> Tensor {
    let s = t.shape();
    let inner = s[2] * s[3];
    let mut data = Vec::with_capacity(keep_a.len() * keep_b.len() * inner);
    for &a in keep_a {
        for &b in keep_b {
            let off = (a * s[1] + b) * inner;
            data.extend_from_slice(&t.data()[off..off + inner]);
        }
    }
    Tensor::new(vec![keep_a.len(), keep_b.len(), s[2], s[3]], data).expect("consistent")
}

fn select1(t: &Tensor, keep: &[usize]) -> Tensor {
    Tensor::from_vec(keep.iter().map(|&i| t.data()[i]).collect())
}

fn scatter4(t: &Tensor, full: [usize; 4], keep_a: &[usize], keep_b: &[usize]) -> Tensor {
    let mut out = Tensor::zeros(&full);
    let inner = full[2] * full[3];
    for (ia, &a) in keep_a.iter().enumerate() {
        for (ib, &b) in keep_b.iter().enumerate() {
            let src = (ia * keep_b.len() + ib) * inner;
            let dst = (a * full[1] + b) * inner;
            out.data_mut()[dst..dst + inner].copy_from_slice(&t.data()[src..src + inner]);
        }
    }
    out
}

fn scatter1(t: &Tensor, len: usize, keep: &[usize]) -> Tensor {
    let mut out = Tensor::zeros(&[len]);
    for (i, &k) in keep.iter().enumerate() {
        out.data_mut()[k] = t.data()[i];
    }
    out
}

/// One convolution's weight tensor role: which axis indexes outputs.
struct ConvSite<'a> {
    weight: String,
    bias: String,
    input: &'a [bool],
    output: &'a [bool],
    transpose: bool,
}

fn conv_sites<'a>(spec: &ArchSpec, keeps: &'a [LayerKeep]) -> Vec<ConvSite<'a>> {
    let mut sites = Vec::new();
    for (i, (layer, keep)) in spec.layers.iter().zip(keeps).enumerate() {
        match (layer, keep) {
            (Layer::Conv(_), LayerKeep::Conv { input, output })
            | (Layer::ConvTranspose(_), LayerKeep::Conv { input, output }) => sites.push(ConvSite {
                weight: weight_name(i, None),
                bias: bias_name(i, None),
                input,
                output,
                transpose: matches!(layer, Layer::ConvTranspose(_)),
            }),
            (Layer::Residual(_), LayerKeep::Residual { io, inner }) => {
                sites.push(ConvSite {
                    weight: weight_name(i, Some('a')),
                    bias: bias_name(i, Some('a')),
                    input: io,
                    output: inner,
                    transpose: false,
                });
                sites.push(ConvSite {
                    weight: weight_name(i, Some('b')),
                    bias: bias_name(i, Some('b')),
                    input: inner,
                    output: io,
                    transpose: false,
                });
            }
            _ => {}
        }
    }
    sites
}

/// Zeroes discarded filters and the matching input slices of their
/// consumers. The input network is not modified.
pub fn apply_mask(net: &Network, genome: &Genome) -> Result<Network> {
    let keeps = layer_keeps(&net.spec, genome)?;
    let mut weights = net.weights.clone();
    for site in conv_sites(&net.spec, &keeps) {
        let w = weights.get_mut(&site.weight).expect("complete network");
        if site.transpose {
            zero4(w, site.input, site.output);
        } else {
            zero4(w, site.output, site.input);
        }
        zero1(weights.get_mut(&site.bias).expect("complete network"), site.output);
    }
    Ok(Network {
        spec: net.spec.clone(),
        weights,
    })
}

/// Spec of the physically smaller network that `genome` selects.
fn compact_spec(spec: &ArchSpec, keeps: &[LayerKeep]) -> ArchSpec {
    let layers = spec
        .layers
        .iter()
        .zip(keeps)
        .map(|(layer, keep)| match (layer, keep) {
            (Layer::Conv(c), LayerKeep::Conv { input, output }) => Layer::Conv(ConvSpec {
                filters: count(output),
                channels: count(input),
                ..c.clone()
            }),
            (Layer::ConvTranspose(c), LayerKeep::Conv { input, output }) => Layer::ConvTranspose(ConvSpec {
                filters: count(output),
                channels: count(input),
                ..c.clone()
            }),
            (Layer::Residual(r), LayerKeep::Residual { io, inner }) => Layer::Residual(ResidualSpec {
                channels: count(io),
                inner: count(inner),
                ..r.clone()
            }),
            (other, _) => other.clone(),
        })
        .collect::<Vec<_>>();
    let out_channels = keeps
        .iter()
        .rev()
        .find_map(|k| match k {
            LayerKeep::Conv { output, .. } => Some(count(output)),
            LayerKeep::Residual { io, .. } => Some(count(io)),
            LayerKeep::Passthrough => None,
        })
        .unwrap_or(spec.in_channels);
    ArchSpec {
        name: format!("{}-compact", spec.name),
        in_channels: spec.in_channels,
        out_channels,
        layers,
    }
}

/// Slices out the retained filters and consumer input channels.
pub fn extract_compact(net: &Network, genome: &Genome) -> Result<Network> {
    require_repaired(genome)?;
    let keeps = layer_keeps(&net.spec, genome)?;
    let spec = compact_spec(&net.spec, &keeps);
    let mut weights = WeightBundle::new();
    for site in conv_sites(&net.spec, &keeps) {
        let w = &net.weights[&site.weight];
        let (ii, oi) = (indices(site.input), indices(site.output));
        let sliced = if site.transpose {
            select4(w, &ii, &oi)
        } else {
            select4(w, &oi, &ii)
        };
        weights.insert(site.weight.clone(), sliced);
        weights.insert(site.bias.clone(), select1(&net.weights[&site.bias], &oi));
    }
    Network::new(spec, weights)
}

/// Inverse of [`extract_compact`]: places compact weights back into the
/// full layout, with zeros for every discarded filter.
pub fn expand_compact(compact: &Network, full: &ArchSpec, genome: &Genome) -> Result<Network> {
    require_repaired(genome)?;
    let keeps = layer_keeps(full, genome)?;
    let expected = compact_spec(full, &keeps);
    if expected.layers != compact.spec.layers {
        return Err(Error::ArchMismatch(format!(
            "'{}' is not the compact form of '{}' under this genome",
            compact.spec.name, full.name
        )));
    }
    let mut weights = WeightBundle::new();
    for site in conv_sites(full, &keeps) {
        let (ii, oi) = (indices(site.input), indices(site.output));
        let (cin, cout) = (site.input.len(), site.output.len());
        let w = &compact.weights[&site.weight];
        let [_, _, kh, kw]: [usize; 4] = w.shape().try_into().expect("4-d filter");
        let placed = if site.transpose {
            scatter4(w, [cin, cout, kh, kw], &ii, &oi)
        } else {
            scatter4(w, [cout, cin, kh, kw], &oi, &ii)
        };
        weights.insert(site.weight.clone(), placed);
        weights.insert(site.bias.clone(), scatter1(&compact.weights[&site.bias], cout, &oi));
    }
    Network::new(full.clone(), weights)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> ArchSpec {
        ArchSpec {
            name: "toy".into(),
            in_channels: 3,
            out_channels: 2,
            layers: vec![
                Layer::Conv(ConvSpec::new(2, 3, 3, 1, 1)),
                Layer::Conv(ConvSpec::new(2, 2, 3, 1, 1)),
            ],
        }
    }

    fn genome(spec: &ArchSpec, layers: Vec<Vec<bool>>) -> Genome {
        Genome {
            arch: spec.name.clone(),
            layers,
        }
    }

    #[test]
    fn all_ones_is_identity() {
        let net = Network::init(ArchSpec::generator(1, 4, 2), 1).unwrap();
        let g = Genome::ones(&net.spec);
        assert_eq!(apply_mask(&net, &g).unwrap(), net);
        let compact = extract_compact(&net, &g).unwrap();
        assert_eq!(compact.spec.layers, net.spec.layers);
        assert_eq!(compact.param_count(), net.param_count());
        assert_eq!(compact.weights, net.weights);
    }

    #[test]
    fn direct_slicing_of_toy() {
        let spec = toy();
        let net = Network::init(spec.clone(), 2).unwrap();
        let g = genome(&spec, vec![vec![true, false], vec![true, true]]);
        let compact = extract_compact(&net, &g).unwrap();
        match (&compact.spec.layers[0], &compact.spec.layers[1]) {
            (Layer::Conv(a), Layer::Conv(b)) => {
                assert_eq!(a.filters, 1);
                assert_eq!(b.channels, 1);
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn masked_channel_is_zero() {
        let spec = ArchSpec {
            name: "one".into(),
            in_channels: 1,
            out_channels: 2,
            layers: vec![Layer::Conv(ConvSpec::new(2, 1, 3, 1, 1))],
        };
        let net = Network::init(spec.clone(), 4).unwrap();
        let g = genome(&spec, vec![vec![true, false]]);
        let masked = apply_mask(&net, &g).unwrap();
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(9);
        let x = Tensor::uniform(&[1, 5, 5], 1.0, &mut rng);
        let y = masked.infer(&x).unwrap();
        assert!(y.slice_outer(1).iter().all(|&v| v == 0.0));
        assert!(y.slice_outer(0).iter().any(|&v| v != 0.0));
        // the original is untouched
        assert_ne!(net.weights["0.weight"], masked.weights["0.weight"]);
    }

    #[test]
    fn unrepaired_genome_cannot_be_extracted() {
        let spec = toy();
        let net = Network::init(spec.clone(), 2).unwrap();
        let g = genome(&spec, vec![vec![false, false], vec![true, true]]);
        assert!(matches!(extract_compact(&net, &g), Err(Error::Contract(_))));
    }

    #[test]
    fn expand_inverts_extract() {
        let net = Network::init(ArchSpec::generator(1, 4, 2), 3).unwrap();
        let g = Genome::random(&net.spec, 0.5, 8).unwrap();
        let compact = extract_compact(&net, &g).unwrap();
        let back = expand_compact(&compact, &net.spec, &g).unwrap();
        assert_eq!(back, apply_mask(&net, &g).unwrap());
    }
}
