//! Genome cost model and mask/extract equivalence.

mod common;

use common::{all_sixteen, dominated, genome, two_layer};
use gancompress::genome::{apply_mask, extract_compact, flop_count, param_cost, param_count, Genome};
use gancompress::models::{ArchSpec, Layer, Network};
use gancompress::tensor::Tensor;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Weight elements (biases excluded) of every conv in `net`.
fn weight_elements(net: &Network) -> usize {
    net.weights.iter().filter(|(k, _)| k.ends_with("weight")).map(|(_, t)| t.numel()).sum()
}

/// Multiply-accumulates counted from the compact network's own layer
/// shapes and the spatial extents a forward pass actually produces.
fn direct_macs(net: &Network, hw: (usize, usize)) -> u64 {
    let mut shape = [net.spec.in_channels, hw.0, hw.1];
    let mut macs = 0u64;
    for (i, layer) in net.spec.layers.iter().enumerate() {
        let probe = |name: &str| net.weights[&format!("{i}.{name}")].shape().to_vec();
        let out_hw = |s: usize, k: usize, p: usize, n: usize| (n + 2 * p - k) / s + 1;
        match layer {
            Layer::Conv(c) => {
                let w = probe("weight");
                let (oh, ow) = (out_hw(c.stride, w[2], c.pad, shape[1]), out_hw(c.stride, w[3], c.pad, shape[2]));
                macs += (w.iter().product::<usize>() * oh * ow) as u64;
                shape = [w[0], oh, ow];
            }
            Layer::ConvTranspose(c) => {
                let w = probe("weight");
                macs += (w.iter().product::<usize>() * shape[1] * shape[2]) as u64;
                let ext = |n: usize, k: usize| (n - 1) * c.stride + k + c.output_pad - 2 * c.pad;
                shape = [w[1], ext(shape[1], w[2]), ext(shape[2], w[3])];
            }
            Layer::Residual(_) => {
                for sub in ["a.weight", "b.weight"] {
                    macs += (probe(sub).iter().product::<usize>() * shape[1] * shape[2]) as u64;
                }
            }
            Layer::Activation { .. } => {}
        }
    }
    macs
}

#[test]
fn hand_evaluated_cost() {
    let spec = two_layer();
    let g = genome(&spec, vec![vec![true, false], vec![true, true]]);
    assert_eq!(param_cost(&g, &spec).unwrap(), 0.5);
    assert_eq!(param_cost(&Genome::ones(&spec), &spec).unwrap(), 1.0);
}

#[test]
fn cost_is_monotone_over_all_sixteen_genomes() {
    let spec = two_layer();
    let all = all_sixteen(&spec);
    let costs: Vec<f64> = all.iter().map(|g| param_cost(g, &spec).unwrap()).collect();
    let mut pairs = 0;
    for (i, a) in all.iter().enumerate() {
        for (j, b) in all.iter().enumerate() {
            if dominated(a, b) {
                assert!(costs[i] <= costs[j], "{a:?} costs more than {b:?}");
                pairs += 1;
            }
        }
    }
    // 3^4 dominance pairs among 4-bit masks.
    assert_eq!(pairs, 81);
}

#[test]
fn halving_every_layer_matches_direct_count() {
    let spec = two_layer();
    let net = Network::init(spec.clone(), 3).unwrap();
    let g = genome(&spec, vec![vec![true, false], vec![false, true]]);
    let f = flop_count(&g, &spec, (5, 5)).unwrap();
    let compact = extract_compact(&net, &g).unwrap();
    assert_eq!(f.macs, direct_macs(&compact, (5, 5)));
    assert_eq!(f.full_macs, direct_macs(&net, (5, 5)));
    // layer 1: 3·1 of 3·2, layer 2: 1·1 of 2·2 -> (27 + 9) / (54 + 36).
    assert_eq!(f.ratio(), 0.4);
}

fn desk_generator() -> ArchSpec {
    ArchSpec::generator(1, 8, 2)
}

#[test]
fn unpruned_genome_is_the_full_network() {
    let spec = desk_generator();
    let net = Network::init(spec.clone(), 11).unwrap();
    let ones = Genome::ones(&spec);
    assert_eq!(param_cost(&ones, &spec).unwrap(), 1.0);
    let f = flop_count(&ones, &spec, (16, 16)).unwrap();
    assert_eq!(f.macs, f.full_macs);
    assert_eq!(f.full_macs, direct_macs(&net, (16, 16)));
    let compact = extract_compact(&net, &ones).unwrap();
    assert_eq!(compact.weights, net.weights);
    assert_eq!(apply_mask(&net, &ones).unwrap().weights, net.weights);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn masked_and_compact_agree(seed in any::<u64>(), density in 0.05f64..1.0) {
        let spec = desk_generator();
        let net = Network::init(spec.clone(), seed).unwrap();
        let g = Genome::random(&spec, density, seed ^ 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 2);
        let x = Tensor::uniform(&[1, 16, 16], 1.0, &mut rng);
        let masked = apply_mask(&net, &g).unwrap().infer(&x).unwrap();
        let compact = extract_compact(&net, &g).unwrap();
        let y = compact.infer(&x).unwrap();
        prop_assert!(masked.max_abs_diff(&y).unwrap() < 1e-9);
        prop_assert_eq!(compact.param_count(), param_count(&g, &spec).unwrap());
    }

    #[test]
    fn cost_counts_compact_weights(seed in any::<u64>(), density in 0.05f64..1.0) {
        let spec = desk_generator();
        let net = Network::init(spec.clone(), seed).unwrap();
        let g = Genome::random(&spec, density, seed).unwrap();
        let compact = extract_compact(&net, &g).unwrap();
        let want = weight_elements(&compact) as f64 / weight_elements(&net) as f64;
        prop_assert!((param_cost(&g, &spec).unwrap() - want).abs() < 1e-15);
        let f = flop_count(&g, &spec, (16, 16)).unwrap();
        prop_assert_eq!(f.macs, direct_macs(&compact, (16, 16)));
    }

    #[test]
    fn cost_never_grows_when_bits_clear(seed in any::<u64>(), drop in any::<u64>()) {
        let spec = desk_generator();
        let g = Genome::random(&spec, 0.7, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(drop);
        let fewer = g.with_bits(g.bits().map(|b| b && rand::Rng::random_bool(&mut rng, 0.8))).repair();
        prop_assume!(dominated(&fewer, &g));
        prop_assert!(param_cost(&fewer, &spec).unwrap() <= param_cost(&g, &spec).unwrap());
    }

    #[test]
    fn genome_text_round_trips(seed in any::<u64>(), density in 0.05f64..1.0) {
        let spec = desk_generator();
        let g = Genome::random(&spec, density, seed).unwrap();
        let back = Genome::from_text(&g.to_text()).unwrap();
        prop_assert_eq!(back.digest(), g.digest());
        prop_assert_eq!(back, g);
    }
}
