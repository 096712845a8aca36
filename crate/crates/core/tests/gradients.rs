//! Reverse-mode gradients against central finite differences, and the
//! convolution kernels against nested-loop reference implementations.

mod common;

use common::*;
use gancompress::models::Network;
use gancompress::tensor::{Activation, Graph, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn conv2d_gradients(
        c in 1usize..=3, n in 1usize..=3, h in 3usize..=6, w in 3usize..=6,
        k in 1usize..=3, stride in 1usize..=2, pad in 0usize..=1, seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs = vec![
            rand_tensor(&[c, h, w], &mut rng),
            rand_tensor(&[n, c, k, k], &mut rng),
            rand_tensor(&[n], &mut rng),
        ];
        let err = fd_error(&inputs, |g, v| {
            let y = g.conv2d(v[0], v[1], v[2], stride, pad)?;
            project(g, y, &mut ChaCha8Rng::seed_from_u64(proj_seed(seed)))
        });
        prop_assert!(err < FD_TOL, "relative error {err}");
    }

    #[test]
    fn conv2d_transpose_gradients(
        c in 1usize..=3, n in 1usize..=3, h in 2usize..=5, w in 2usize..=5,
        k in 1usize..=3, stride in 1usize..=2, pad in 0usize..=1, op in 0usize..=1, seed in any::<u64>(),
    ) {
        let op = op.min(stride - 1);
        prop_assume!((h - 1) * stride + k + op > 2 * pad && (w - 1) * stride + k + op > 2 * pad);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs = vec![
            rand_tensor(&[c, h, w], &mut rng),
            rand_tensor(&[c, n, k, k], &mut rng),
            rand_tensor(&[n], &mut rng),
        ];
        let err = fd_error(&inputs, |g, v| {
            let y = g.conv2d_transpose(v[0], v[1], v[2], stride, pad, op)?;
            project(g, y, &mut ChaCha8Rng::seed_from_u64(proj_seed(seed)))
        });
        prop_assert!(err < FD_TOL, "relative error {err}");
    }

    #[test]
    fn elementwise_gradients(len in 1usize..=12, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shape = [len];
        let inputs = vec![rand_tensor(&shape, &mut rng), rand_tensor(&shape, &mut rng)];
        let (s, t) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
        let err = fd_error(&inputs, |g, v| {
            let a = g.add(v[0], v[1])?;
            let b = g.sub(v[0], v[1])?;
            let m = g.mul(a, b)?;
            let m = g.mul(m, v[0])?;
            let f = g.affine(m, s, t);
            let f = g.scale(f, 0.5);
            let q = g.sq_dist(f, v[1])?;
            let r = g.sq_sum(a);
            let m = g.mean(b)?;
            let total = g.add(q, r)?;
            let total = g.add(total, m)?;
            let p = project(g, m, &mut ChaCha8Rng::seed_from_u64(proj_seed(seed)))?;
            g.add(total, p)
        });
        prop_assert!(err < FD_TOL, "relative error {err}");
    }

    #[test]
    fn smooth_activation_gradients(len in 1usize..=12, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs = vec![Tensor::uniform(&[len], 3.0, &mut rng)];
        let err = fd_error(&inputs, |g, v| {
            let a = g.tanh(v[0]);
            let b = g.sigmoid(v[0]);
            let ab = g.add(a, b)?;
            project(g, ab, &mut ChaCha8Rng::seed_from_u64(proj_seed(seed)))
        });
        prop_assert!(err < FD_TOL, "relative error {err}");
    }

    #[test]
    fn piecewise_activation_gradients(len in 1usize..=12, alpha in 0.01f64..0.5, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs = vec![away_from(&[len], 0.0, 1e-3, &mut rng)];
        let err = fd_error(&inputs, |g, v| {
            let a = g.relu(v[0]);
            let b = g.activation(v[0], Activation::LeakyRelu { alpha });
            let ab = g.add(a, b)?;
            project(g, ab, &mut ChaCha8Rng::seed_from_u64(proj_seed(seed)))
        });
        prop_assert!(err < FD_TOL, "relative error {err}");
    }

    #[test]
    fn log_and_clamp_gradients(len in 1usize..=12, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pos = Tensor::new(vec![len], (0..len).map(|_| rng.random_range(0.2..3.0)).collect()).unwrap();
        let inputs = vec![pos, away_from(&[len], 0.5, 1e-3, &mut rng)];
        let err = fd_error(&inputs, |g, v| {
            let l = g.log(v[0])?;
            let c = g.clamp(v[1], 0.5, 10.0);
            let lc = g.add(l, c)?;
            project(g, lc, &mut ChaCha8Rng::seed_from_u64(proj_seed(seed)))
        });
        prop_assert!(err < FD_TOL, "relative error {err}");
    }
}

#[test]
fn random_three_layer_networks() {
    for (i, spec) in three_layer_nets().into_iter().enumerate() {
        let net = Network::init(spec, 100 + i as u64).unwrap();
        let err = network_fd_error(&net, 100 + i as u64);
        assert!(err < FD_TOL, "{}: relative error {err}", net.spec.name);
    }
}

#[derive(Clone, Copy, Debug)]
struct Geo {
    c: usize,
    h: usize,
    w: usize,
    n: usize,
    k: usize,
    stride: usize,
    pad: usize,
}

impl Geo {
    fn random(rng: &mut ChaCha8Rng) -> Self {
        Geo {
            c: rng.random_range(1..=3),
            h: rng.random_range(3..=7),
            w: rng.random_range(3..=7),
            n: rng.random_range(1..=3),
            k: rng.random_range(1..=3),
            stride: rng.random_range(1..=2),
            pad: rng.random_range(0..=1),
        }
    }
}

fn at(t: &Tensor, idx: &[usize]) -> f64 {
    let shape = t.shape();
    let mut flat = 0;
    for (i, &v) in idx.iter().enumerate() {
        flat = flat * shape[i] + v;
    }
    t.data()[flat]
}

/// Reference convolution straight from the definition.
fn conv_oracle(x: &Tensor, f: &Tensor, b: &Tensor, stride: usize, pad: usize) -> Tensor {
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (n, k_h, k_w) = (f.shape()[0], f.shape()[2], f.shape()[3]);
    let oh = (h + 2 * pad - k_h) / stride + 1;
    let ow = (w + 2 * pad - k_w) / stride + 1;
    let mut out = vec![0.0; n * oh * ow];
    for o in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = b.data()[o];
                for ci in 0..c {
                    for ky in 0..k_h {
                        for kx in 0..k_w {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                acc += at(f, &[o, ci, ky, kx]) * at(x, &[ci, iy as usize, ix as usize]);
                            }
                        }
                    }
                }
                out[(o * oh + oy) * ow + ox] = acc;
            }
        }
    }
    Tensor::new(vec![n, oh, ow], out).unwrap()
}

/// Reference transposed convolution: scatter every input pixel.
fn conv_t_oracle(x: &Tensor, f: &Tensor, b: &Tensor, stride: usize, pad: usize, op: usize) -> Tensor {
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (n, k_h, k_w) = (f.shape()[1], f.shape()[2], f.shape()[3]);
    let oh = (h - 1) * stride + k_h + op - 2 * pad;
    let ow = (w - 1) * stride + k_w + op - 2 * pad;
    let mut out = vec![0.0; n * oh * ow];
    for o in 0..n {
        for v in &mut out[o * oh * ow..(o + 1) * oh * ow] {
            *v = b.data()[o];
        }
    }
    for ci in 0..c {
        for iy in 0..h {
            for ix in 0..w {
                for o in 0..n {
                    for ky in 0..k_h {
                        for kx in 0..k_w {
                            let oy = (iy * stride + ky) as isize - pad as isize;
                            let ox = (ix * stride + kx) as isize - pad as isize;
                            if oy >= 0 && ox >= 0 && (oy as usize) < oh && (ox as usize) < ow {
                                out[(o * oh + oy as usize) * ow + ox as usize] +=
                                    at(f, &[ci, o, ky, kx]) * at(x, &[ci, iy, ix]);
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![n, oh, ow], out).unwrap()
}

fn run_conv(x: &Tensor, f: &Tensor, b: &Tensor, stride: usize, pad: usize) -> Tensor {
    let mut g = Graph::new();
    let (vx, vf, vb) = (g.constant(x.clone()), g.constant(f.clone()), g.constant(b.clone()));
    let y = g.conv2d(vx, vf, vb, stride, pad).unwrap();
    g.value(y).clone()
}

fn run_conv_t(x: &Tensor, f: &Tensor, b: &Tensor, stride: usize, pad: usize, op: usize) -> Tensor {
    let mut g = Graph::new();
    let (vx, vf, vb) = (g.constant(x.clone()), g.constant(f.clone()), g.constant(b.clone()));
    let y = g.conv2d_transpose(vx, vf, vb, stride, pad, op).unwrap();
    g.value(y).clone()
}

#[test]
fn conv_matches_nested_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..200 {
        let p = Geo::random(&mut rng);
        if p.h + 2 * p.pad < p.k || p.w + 2 * p.pad < p.k {
            continue;
        }
        let x = rand_tensor(&[p.c, p.h, p.w], &mut rng);
        let f = rand_tensor(&[p.n, p.c, p.k, p.k], &mut rng);
        let b = rand_tensor(&[p.n], &mut rng);
        let got = run_conv(&x, &f, &b, p.stride, p.pad);
        let want = conv_oracle(&x, &f, &b, p.stride, p.pad);
        assert_eq!(got.shape(), want.shape(), "{p:?}");
        assert!(got.max_abs_diff(&want).unwrap() < 1e-12, "{p:?}");
    }
}

#[test]
fn conv_transpose_matches_nested_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..200 {
        let p = Geo::random(&mut rng);
        let op = rng.random_range(0..p.stride);
        if (p.h - 1) * p.stride + p.k + op <= 2 * p.pad || (p.w - 1) * p.stride + p.k + op <= 2 * p.pad {
            continue;
        }
        let x = rand_tensor(&[p.c, p.h, p.w], &mut rng);
        let f = rand_tensor(&[p.c, p.n, p.k, p.k], &mut rng);
        let b = rand_tensor(&[p.n], &mut rng);
        let got = run_conv_t(&x, &f, &b, p.stride, p.pad, op);
        let want = conv_t_oracle(&x, &f, &b, p.stride, p.pad, op);
        assert_eq!(got.shape(), want.shape(), "{p:?}");
        assert!(got.max_abs_diff(&want).unwrap() < 1e-12, "{p:?}");
    }
}

/// `<conv(x), y> = <x, conv_t(y)>` with shared filters and zero bias.
#[test]
fn transpose_is_the_adjoint() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut checked = 0;
    while checked < 100 {
        let p = Geo::random(&mut rng);
        if p.h + 2 * p.pad < p.k || p.w + 2 * p.pad < p.k {
            continue;
        }
        let x = rand_tensor(&[p.c, p.h, p.w], &mut rng);
        let f = rand_tensor(&[p.n, p.c, p.k, p.k], &mut rng);
        let cx = run_conv(&x, &f, &Tensor::zeros(&[p.n]), p.stride, p.pad);
        let (oh, ow) = (cx.shape()[1], cx.shape()[2]);
        let op_h = p.h + 2 * p.pad - ((oh - 1) * p.stride + p.k);
        let op_w = p.w + 2 * p.pad - ((ow - 1) * p.stride + p.k);
        if op_h != op_w || op_h >= p.stride {
            continue;
        }
        let y = rand_tensor(cx.shape(), &mut rng);
        let ty = run_conv_t(&y, &f, &Tensor::zeros(&[p.c]), p.stride, p.pad, op_h);
        assert_eq!(ty.shape(), x.shape(), "{p:?}");
        let lhs = cx.dot(&y).unwrap();
        let rhs = x.dot(&ty).unwrap();
        assert!((lhs - rhs).abs() < 1e-10, "{p:?}: {lhs} vs {rhs}");
        checked += 1;
    }
}
