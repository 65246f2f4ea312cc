use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;

type Tensor = crate::tensor::Tensor<f32>;
type Tensor64 = crate::tensor::Tensor<f64>;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Direct six-loop cross-correlation in f64.
fn naive_conv(
    x: &Tensor,
    w: &Tensor,
    stride: usize,
    pad: usize,
) -> (Vec<usize>, Vec<f64>) {
    let (n, c, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (co, k) = (w.shape()[0], w.shape()[2]);
    let ho = (h + 2 * pad - k) / stride + 1;
    let wo = (wd + 2 * pad - k) / stride + 1;
    let mut out = vec![0.0f64; n * co * ho * wo];
    for b in 0..n {
        for o in 0..co {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut s = 0.0f64;
                    for ci in 0..c {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                let xv = x.data()
                                    [((b * c + ci) * h + iy as usize) * wd + ix as usize];
                                let wv = w.data()[((o * c + ci) * k + ky) * k + kx];
                                s += xv as f64 * wv as f64;
                            }
                        }
                    }
                    out[((b * co + o) * ho + oy) * wo + ox] = s;
                }
            }
        }
    }
    (vec![n, co, ho, wo], out)
}

#[test]
fn conv2d_sum_of_ones() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::ones(&[1, 1, 3, 3]));
    let w = g.constant(Tensor::ones(&[1, 1, 3, 3]));
    let y = g.conv2d(x, w, 1, 0).unwrap();
    assert_eq!(g.shape(y), &[1, 1, 1, 1]);
    assert_eq!(g.value(y).data(), &[9.0]);
}

#[test]
fn conv2d_identity_kernel() {
    let mut r = rng(1);
    let input = Tensor::randn(&[2, 1, 5, 5], &mut r);
    let mut k = Tensor::zeros(&[1, 1, 3, 3]);
    k.data_mut()[4] = 1.0;
    let mut g = Graph::new();
    let x = g.constant(input.clone());
    let w = g.constant(k);
    let y = g.conv2d(x, w, 1, 1).unwrap();
    assert_eq!(g.value(y), &input);
}

#[test]
fn conv2d_matches_naive_loops() {
    let mut r = rng(2);
    for &(stride, pad) in &[(1, 0), (1, 1), (2, 1)] {
        let x = Tensor::randn(&[2, 3, 8, 8], &mut r);
        let w = Tensor::randn(&[4, 3, 3, 3], &mut r);
        let (shape, expect) = naive_conv(&x, &w, stride, pad);
        let got = kernels::conv2d(&x, &w, stride, pad).unwrap();
        assert_eq!(got.shape(), shape.as_slice());
        for (a, b) in got.data().iter().zip(&expect) {
            assert!((*a as f64 - b).abs() <= 1e-5, "{a} vs {b}");
        }
    }
}

#[test]
fn conv2d_rejects_mismatched_channels() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::zeros(&[1, 2, 4, 4]));
    let w = g.constant(Tensor::zeros(&[1, 3, 3, 3]));
    assert!(matches!(g.conv2d(x, w, 1, 1), Err(Error::Shape(_))));
}

#[test]
fn linear_identity_and_hand_arithmetic() {
    let mut r = rng(3);
    let input = Tensor::randn(&[4, 3], &mut r);
    let mut eye = Tensor::zeros(&[3, 3]);
    for i in 0..3 {
        eye.data_mut()[i * 3 + i] = 1.0;
    }
    let out = kernels::linear(&input, &eye, Some(&Tensor::zeros(&[3]))).unwrap();
    assert_eq!(out, input);

    let x = Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap();
    let w = Tensor::new(vec![2, 2], vec![3.0, 0.0, 0.0, 3.0]).unwrap();
    let b = Tensor::from_vec(vec![1.0, 1.0]);
    let out = kernels::linear(&x, &w, Some(&b)).unwrap();
    assert_eq!(out.data(), &[4.0, 7.0]);
}

#[test]
fn linear_matches_naive_loops() {
    let mut r = rng(4);
    let x = Tensor::randn(&[5, 7], &mut r);
    let w = Tensor::randn(&[7, 3], &mut r);
    let b = Tensor::randn(&[3], &mut r);
    let out = kernels::linear(&x, &w, Some(&b)).unwrap();
    for i in 0..5 {
        for j in 0..3 {
            let mut s = b.data()[j] as f64;
            for k in 0..7 {
                s += x.data()[i * 7 + k] as f64 * w.data()[k * 3 + j] as f64;
            }
            assert!((out.data()[i * 3 + j] as f64 - s).abs() <= 1e-6);
        }
    }
}

#[test]
fn linear_rejects_bad_dims() {
    let x = Tensor::zeros(&[2, 3]);
    let w = Tensor::zeros(&[4, 2]);
    assert!(kernels::linear(&x, &w, None).is_err());
}

#[test]
fn batchnorm_standardized_input_passes_through() {
    // Each channel is exactly mean 0 / biased variance 1.
    let data = vec![1.0, -1.0, 1.0, -1.0, -1.0, 1.0, -1.0, 1.0];
    let input = Tensor::new(vec![4, 2], data).unwrap();
    let mut g = Graph::new();
    let x = g.constant(input.clone());
    let gamma = g.constant(Tensor::ones(&[2]));
    let beta = g.constant(Tensor::zeros(&[2]));
    let (y, stats) = g.batchnorm(x, gamma, beta, BnMode::Train).unwrap();
    for (a, b) in g.value(y).data().iter().zip(input.data()) {
        assert!((a - b).abs() <= 1e-4);
    }
    let stats = stats.unwrap();
    assert_eq!(stats.mean, vec![0.0, 0.0]);
}

#[test]
fn batchnorm_constant_channel_gives_beta() {
    let input = Tensor::full(&[3, 2, 2, 2], 4.2);
    let mut g = Graph::new();
    let x = g.constant(input);
    let gamma = g.constant(Tensor::from_vec(vec![2.0, 3.0]));
    let beta = g.constant(Tensor::from_vec(vec![0.5, -0.25]));
    let (y, _) = g.batchnorm(x, gamma, beta, BnMode::Train).unwrap();
    let out = g.value(y);
    for (i, &v) in out.data().iter().enumerate() {
        let c = (i / 4) % 2;
        assert_eq!(v, [0.5, -0.25][c]);
    }
}

#[test]
fn batchnorm_rejects_bad_params_and_empty_batch() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::zeros(&[2, 3]));
    let gamma = g.constant(Tensor::ones(&[2]));
    let beta = g.constant(Tensor::zeros(&[2]));
    assert!(g.batchnorm(x, gamma, beta, BnMode::Train).is_err());

    let empty = g.constant(Tensor::zeros(&[0, 2]));
    assert!(g.batchnorm(empty, gamma, beta, BnMode::Train).is_err());
}

#[test]
fn batchnorm_eval_uses_running_stats() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::new(vec![1, 2], vec![3.0, 5.0]).unwrap());
    let gamma = g.constant(Tensor::ones(&[2]));
    let beta = g.constant(Tensor::zeros(&[2]));
    let mean = [1.0, 5.0];
    let var = [4.0 - BN_EPS, 1.0];
    let (y, stats) = g
        .batchnorm(x, gamma, beta, BnMode::Eval { mean: &mean, var: &var })
        .unwrap();
    assert!(stats.is_none());
    let out = g.value(y).data();
    assert!((out[0] - 1.0).abs() < 1e-6);
    assert_eq!(out[1], 0.0);
}

#[test]
fn batchnorm_mean_gradient_matches_finite_differences() {
    let mut r = rng(5);
    let point = Tensor64::uniform(&[3, 2, 2, 2], -2.0, 2.0, &mut r);
    let gamma_v = Tensor64::uniform(&[2], 0.5, 1.5, &mut r);
    let beta_v = Tensor64::uniform(&[2], -0.5, 0.5, &mut r);
    let proj = Tensor64::uniform(&[3, 2, 2, 2], -1.0, 1.0, &mut r);
    let rep = grad_check(
        |g, x| {
            let gamma = g.constant(gamma_v.clone());
            let beta = g.constant(beta_v.clone());
            let (y, _) = g.batchnorm(x, gamma, beta, BnMode::Train)?;
            let p = g.constant(proj.clone());
            let z = g.mul(y, p)?;
            Ok(g.mean(z))
        },
        &point,
        1e-3,
    )
    .unwrap();
    assert!(rep.max_rel_error <= 1e-3, "{rep:?}");
}

#[test]
fn spike_forward_definition() {
    let spec = SurrogateSpec::new(1.0, 1.0).unwrap();
    let mut g = Graph::new();
    let u = g.constant(Tensor::from_vec(vec![0.4, 1.0, 1.6]));
    let s = g.spike(u, spec);
    assert_eq!(g.value(s).data(), &[0.0, 1.0, 1.0]);
}

#[test]
fn spike_surrogate_window() {
    let spec = SurrogateSpec::new(1.0, 1.0).unwrap();
    for &(u0, expect) in &[(1.2f32, 1.0f32), (2.0, 0.0), (0.6, 1.0), (0.5, 0.0), (1.5, 0.0)] {
        let mut g = Graph::new();
        let u = g.param(Tensor::from_vec(vec![u0]));
        let s = g.spike(u, spec);
        let l = g.sum(s);
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.get(u).unwrap().data(), &[expect], "u = {u0}");
    }
    let narrow = SurrogateSpec::new(0.25, 0.0).unwrap();
    assert_eq!(narrow.derivative(0.1), 4.0);
    assert_eq!(narrow.derivative(-0.125), 0.0);
    assert!(SurrogateSpec::new(0.0, 1.0).is_err());
    assert!(SurrogateSpec::new(-1.0, 1.0).is_err());
}

#[test]
fn spike_extremes_are_binary() {
    let spec = SurrogateSpec::new(1.0, 1.0).unwrap();
    let mut g = Graph::new();
    let u = g.constant(Tensor::from_vec(vec![-1e10, 1e10, f32::MIN, f32::MAX, 0.0]));
    let s = g.spike(u, spec);
    assert_eq!(g.value(s).data(), &[0.0, 1.0, 0.0, 1.0, 0.0]);
}

#[test]
fn backward_of_weighted_sum_is_input() {
    let mut r = rng(6);
    let xv = Tensor::randn(&[6], &mut r);
    let mut g = Graph::new();
    let w = g.param(Tensor::randn(&[6], &mut r));
    let x = g.constant(xv.clone());
    let wx = g.mul(w, x).unwrap();
    let l = g.sum(wx);
    let grads = g.backward(l).unwrap();
    assert_eq!(grads.get(w).unwrap(), &xv);
    assert!(grads.get(x).is_none());
}

#[test]
fn fan_out_accumulates() {
    let mut g = Graph::new();
    let x = g.param(Tensor::from_vec(vec![3.0]));
    let y = g.add(x, x).unwrap();
    let l = g.sum(y);
    let grads = g.backward(l).unwrap();
    assert_eq!(grads.get(x).unwrap().data(), &[2.0]);
}

#[test]
fn backward_requires_scalar_and_live_graph() {
    let mut g = Graph::new();
    let x = g.param(Tensor::from_vec(vec![1.0, 2.0]));
    let y = g.scale(x, 2.0);
    assert!(matches!(g.backward(y), Err(Error::NotScalar(_))));
    let l = g.sum(y);
    assert!(g.backward(l).is_ok());
    g.release();
    assert!(matches!(g.backward(l), Err(Error::GraphConsumed)));
}

#[test]
fn backward_is_bitwise_repeatable() {
    let mut r = rng(7);
    let mut g = Graph::new();
    let x = g.param(Tensor::randn(&[2, 3, 6, 6], &mut r));
    let w = g.param(Tensor::randn(&[4, 3, 3, 3], &mut r));
    let y = g.conv2d(x, w, 1, 1).unwrap();
    let gamma = g.param(Tensor::ones(&[4]));
    let beta = g.param(Tensor::zeros(&[4]));
    let (z, _) = g.batchnorm(y, gamma, beta, BnMode::Train).unwrap();
    let s = g.spike(z, SurrogateSpec::new(1.0, 0.5).unwrap());
    let q = g.mul(s, z).unwrap();
    let l = g.mean(q);
    let a = g.backward(l).unwrap();
    let b = g.backward(l).unwrap();
    for v in [x, w, gamma, beta] {
        assert_eq!(a.get(v), b.get(v));
    }
}

#[test]
fn grad_check_square() {
    let rep = grad_check(
        |g, x| {
            let sq = g.mul(x, x)?;
            Ok(g.sum(sq))
        },
        &Tensor64::from_vec(vec![1.0, 2.0]),
        1e-3,
    )
    .unwrap();
    assert!(rep.max_rel_error <= 1e-4, "{rep:?}");
    assert!((rep.analytic[1] - 4.0).abs() < 1e-12);
}

#[test]
fn grad_check_conv_batchnorm_composite() {
    let mut r = rng(8);
    let wv = Tensor64::uniform(&[3, 2, 3, 3], -0.5, 0.5, &mut r);
    let proj = Tensor64::uniform(&[2, 3, 4, 4], -1.0, 1.0, &mut r);
    let point = Tensor64::uniform(&[2, 2, 4, 4], -2.0, 2.0, &mut r);
    let rep = grad_check(
        |g, x| {
            let w = g.constant(wv.clone());
            let y = g.conv2d(x, w, 1, 1)?;
            let gamma = g.constant(Tensor64::full(&[3], 1.3));
            let beta = g.constant(Tensor64::full(&[3], 0.1));
            let (z, _) = g.batchnorm(y, gamma, beta, BnMode::Train)?;
            let p = g.constant(proj.clone());
            let q = g.mul(z, p)?;
            Ok(g.sum(q))
        },
        &point,
        1e-3,
    )
    .unwrap();
    assert!(rep.max_rel_error <= 1e-3, "{:?}", rep.max_rel_error);
}

#[test]
fn grad_check_three_layer_linear_chain() {
    let mut r = rng(9);
    let ws: Vec<Tensor64> = [(4, 5), (5, 5), (5, 3)]
        .iter()
        .map(|&(a, b)| Tensor64::uniform(&[a, b], -1.0, 1.0, &mut r))
        .collect();
    let point = Tensor64::uniform(&[3, 4], -2.0, 2.0, &mut r);
    let rep = grad_check(
        |g, x| {
            let mut h = x;
            for w in &ws {
                let wv = g.constant(w.clone());
                h = g.linear(h, wv, None)?;
            }
            let sq = g.mul(h, h)?;
            Ok(g.mean(sq))
        },
        &point,
        1e-3,
    )
    .unwrap();
    assert!(rep.max_rel_error <= 1e-3, "{:?}", rep.max_rel_error);
}

#[test]
fn time_ops_round_trip() {
    let mut g = Graph::new();
    let x = g.param(Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
    let rep = g.replicate_time(x, 4).unwrap();
    assert_eq!(g.shape(rep), &[8, 3]);
    let m = g.mean_time(rep, 4).unwrap();
    assert_eq!(g.value(m), g.value(x));
    let l = g.sum(rep);
    let grads = g.backward(l).unwrap();
    assert_eq!(grads.get(x).unwrap().data(), &[4.0; 6]);
}

#[test]
fn scale_time_gradient_for_p() {
    let mut g = Graph::new();
    // T = 2, N = 1, D = 2
    let x = g.param(Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
    let p = g.param(Tensor::from_vec(vec![0.5, 2.0]));
    let y = g.scale_time(x, p, 2).unwrap();
    assert_eq!(g.value(y).data(), &[0.5, 1.0, 6.0, 8.0]);
    let l = g.sum(y);
    let grads = g.backward(l).unwrap();
    assert_eq!(grads.get(p).unwrap().data(), &[3.0, 7.0]);
    assert_eq!(grads.get(x).unwrap().data(), &[0.5, 0.5, 2.0, 2.0]);
}

#[test]
fn add_sample_channel_broadcasts() {
    let mut g = Graph::new();
    // T = 2, N = 2, C = 1, H = W = 1
    let x = g.param(Tensor::zeros(&[4, 1, 1, 1]));
    let e = g.param(Tensor::new(vec![2, 1], vec![10.0, 20.0]).unwrap());
    let y = g.add_sample_channel(x, e, 2).unwrap();
    assert_eq!(g.value(y).data(), &[10.0, 20.0, 10.0, 20.0]);
    let l = g.sum(y);
    let grads = g.backward(l).unwrap();
    assert_eq!(grads.get(e).unwrap().data(), &[2.0, 2.0]);
}

#[test]
fn upsample_then_sum_gradient() {
    let mut g = Graph::new();
    let x = g.param(Tensor::new(vec![1, 1, 1, 2], vec![1.0, 2.0]).unwrap());
    let y = g.upsample2x(x).unwrap();
    assert_eq!(g.value(y).data(), &[1.0, 1.0, 2.0, 2.0, 1.0, 1.0, 2.0, 2.0]);
    let l = g.sum(y);
    let grads = g.backward(l).unwrap();
    assert_eq!(grads.get(x).unwrap().data(), &[4.0, 4.0]);
}
