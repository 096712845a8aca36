//! Loss terms against closed forms on per-pixel affine networks.

use gancompress::genome::{apply_mask, Genome};
use gancompress::models::losses::{cycle_loss, dis_aware_loss, gan_loss, gen_aware_loss, PROB_CLAMP};
use gancompress::models::{ArchSpec, ConvSpec, DisMap, Layer, Network, Reduction};
use gancompress::tensor::Tensor;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-12;

/// 1x1 single-channel conv: every pixel maps to `w·x + b`.
fn affine(w: f64, b: f64) -> Network {
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

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

fn images(n: usize, side: usize, seed: u64) -> Vec<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| Tensor::uniform(&[1, side, side], 1.0, &mut rng)).collect()
}

fn reduce(red: Reduction, total: f64, numel: usize) -> f64 {
    match red {
        Reduction::Sum => total,
        Reduction::Mean => total / numel as f64,
    }
}

fn reductions() -> impl Strategy<Value = Reduction> {
    prop_oneof![Just(Reduction::Sum), Just(Reduction::Mean)]
}

#[test]
fn shifted_cycle_by_hand() {
    let x = vec![Tensor::from_vec(vec![1.0]).reshape(vec![1, 1, 1]).unwrap()];
    let loss = cycle_loss(&affine(1.0, 1.0), &affine(1.0, 0.0), &x, Reduction::Sum).unwrap();
    assert_eq!(loss, 1.0);
}

#[test]
fn constant_half_discriminator() {
    let xs = images(3, 4, 1);
    let l = gan_loss(&affine(0.7, 0.1), &affine(0.0, 0.0), &xs, &xs).unwrap();
    assert!((l.real_term - 0.5f64.ln()).abs() < TOL);
    assert!((l.fake_term - 0.5f64.ln()).abs() < TOL);
}

#[test]
fn saturated_discriminator_is_clamped() {
    let xs = images(2, 3, 2);
    // Real images see D ≈ 1, fakes (shifted far negative) see D ≈ 0.
    let l = gan_loss(&affine(0.0, -1e4), &affine(1.0, 100.0), &xs, &xs).unwrap();
    assert!((l.real_term - (1.0 - PROB_CLAMP).ln()).abs() < 1e-12);
    assert!(l.fake_term.abs() < 1e-6);
}

#[test]
fn unpruned_mask_has_zero_fidelity_loss() {
    let spec = ArchSpec::generator(1, 8, 2);
    let g = Network::init(spec.clone(), 5).unwrap();
    let d = Network::init(ArchSpec::discriminator(1, 8), 6).unwrap();
    let masked = apply_mask(&g, &Genome::ones(&spec)).unwrap();
    let xs = images(3, 16, 3);
    for red in [Reduction::Sum, Reduction::Mean] {
        assert_eq!(gen_aware_loss(&g, &masked, &xs, red).unwrap(), 0.0);
        for map in [DisMap::Logits, DisMap::Probabilities] {
            assert_eq!(dis_aware_loss(&g, &masked, &d, &xs, red, map).unwrap(), 0.0);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cycle_closed_form(
        w1 in -2.0f64..2.0, b1 in -1.0f64..1.0, w2 in -2.0f64..2.0, b2 in -1.0f64..1.0,
        n in 1usize..5, side in 1usize..6, red in reductions(), seed in any::<u64>(),
    ) {
        let xs = images(n, side, seed);
        let mut want = 0.0;
        for x in &xs {
            let mut s = 0.0;
            for &v in x.data() {
                let r = w2 * (w1 * v + b1) + b2 - v;
                s += r * r;
            }
            want += reduce(red, s, x.numel());
        }
        want /= n as f64;
        let got = cycle_loss(&affine(w1, b1), &affine(w2, b2), &xs, red).unwrap();
        prop_assert!((got - want).abs() < TOL, "{got} vs {want}");
    }

    #[test]
    fn generator_aware_closed_form(
        w1 in -2.0f64..2.0, b1 in -1.0f64..1.0, w2 in -2.0f64..2.0, b2 in -1.0f64..1.0,
        n in 1usize..5, side in 1usize..6, red in reductions(), seed in any::<u64>(),
    ) {
        let xs = images(n, side, seed);
        let mut want = 0.0;
        for x in &xs {
            let s: f64 = x.data().iter().map(|&v| ((w1 - w2) * v + b1 - b2).powi(2)).sum();
            want += reduce(red, s, x.numel());
        }
        want /= n as f64;
        let got = gen_aware_loss(&affine(w1, b1), &affine(w2, b2), &xs, red).unwrap();
        prop_assert!((got - want).abs() < TOL, "{got} vs {want}");
    }

    #[test]
    fn discriminator_aware_closed_form(
        w1 in -2.0f64..2.0, b1 in -1.0f64..1.0, w2 in -2.0f64..2.0, b2 in -1.0f64..1.0,
        wd in -2.0f64..2.0, bd in -1.0f64..1.0,
        n in 1usize..5, side in 1usize..6, red in reductions(), seed in any::<u64>(),
    ) {
        let xs = images(n, side, seed);
        for map in [DisMap::Logits, DisMap::Probabilities] {
            let resp = |v: f64| {
                let l = wd * v + bd;
                match map {
                    DisMap::Logits => l,
                    DisMap::Probabilities => sigmoid(l),
                }
            };
            let mut want = 0.0;
            for x in &xs {
                let s: f64 = x.data().iter().map(|&v| (resp(w1 * v + b1) - resp(w2 * v + b2)).powi(2)).sum();
                want += reduce(red, s, x.numel());
            }
            want /= n as f64;
            let got = dis_aware_loss(&affine(w1, b1), &affine(w2, b2), &affine(wd, bd), &xs, red, map).unwrap();
            prop_assert!((got - want).abs() < TOL, "{map:?}: {got} vs {want}");
        }
    }

    #[test]
    fn adversarial_terms_closed_form(
        wg in -2.0f64..2.0, bg in -1.0f64..1.0, wd in -3.0f64..3.0, bd in -1.0f64..1.0,
        n in 1usize..5, side in 1usize..6, seed in any::<u64>(),
    ) {
        let xs = images(n, side, seed);
        let ys = images(n + 1, side, seed ^ 9);
        let mean_prob = |t: &Tensor, f: &dyn Fn(f64) -> f64| {
            let p = t.data().iter().map(|&v| sigmoid(wd * f(v) + bd)).sum::<f64>() / t.numel() as f64;
            p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
        };
        let real = ys.iter().map(|y| mean_prob(y, &|v| v).ln()).sum::<f64>() / ys.len() as f64;
        let fake = xs.iter().map(|x| (1.0 - mean_prob(x, &|v| wg * v + bg)).ln()).sum::<f64>() / xs.len() as f64;
        let got = gan_loss(&affine(wg, bg), &affine(wd, bd), &xs, &ys).unwrap();
        prop_assert!((got.real_term - real).abs() < TOL);
        prop_assert!((got.fake_term - fake).abs() < TOL);
        prop_assert!((got.value() - (real + fake)).abs() < TOL);
    }
}
