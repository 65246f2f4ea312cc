//! Self-checks run by `spikediff verify`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autodiff::{grad_check, BnMode, Graph, Var};
use crate::conversion::{convert, quantize_act, QuantLayer, QuantizedAnn, Synapse};
use crate::diffusion::{
    analytic_coefficients, sample, GaussianOracle, HStats, NoiseSchedule, SampleSpec, Solver, Trajectory,
};
use crate::error::Result;
use crate::tensor::Tensor;
use crate::training::{stbp_autodiff, stbp_oracle, TinySnn};

type T64 = Tensor<f64>;
type Loss = Box<dyn Fn(&mut Graph<f64>, Var) -> Result<Var>>;

#[derive(Clone, Debug, Serialize)]
pub struct SuiteResult {
    pub suite: &'static str,
    pub check: String,
    pub value: f64,
    pub bound: f64,
    pub pass: bool,
}

impl SuiteResult {
    fn at_most(suite: &'static str, check: impl Into<String>, value: f64, bound: f64) -> Self {
        Self {
            suite,
            check: check.into(),
            value,
            bound,
            pass: value <= bound,
        }
    }
}

/// `Σ y ⊙ r` for a fixed random `r`, so every output entry matters.
fn project(g: &mut Graph<f64>, y: Var, rng: &mut ChaCha8Rng) -> Result<Var> {
    let r = g.constant(T64::uniform(g.shape(y), -1.0, 1.0, rng));
    let m = g.mul(y, r)?;
    Ok(g.sum(m))
}

/// One random instance of every smooth operation: `(name, point, loss)`.
pub fn smooth_ops(rng: &mut ChaCha8Rng) -> Vec<(&'static str, T64, Loss)> {
    let mut ops: Vec<(&'static str, T64, Loss)> = Vec::new();
    let mut seeded = || ChaCha8Rng::seed_from_u64(rand::Rng::gen(rng));
    let mut r = seeded();
    let point = |shape: &[usize], r: &mut ChaCha8Rng| T64::uniform(shape, -2.0, 2.0, r);

    let p = point(&[3, 4], &mut r);
    let c = point(&[3, 4], &mut r);
    let mut rr = seeded();
    ops.push(("add_sub_mul", p, Box::new(move |g, x| {
        let k = g.constant(c.clone());
        let a = g.add(x, k)?;
        let b = g.sub(a, x)?;
        let m = g.mul(x, b)?;
        let m = g.mul(m, x)?;
        project(g, m, &mut rr.clone())
    })));
    rr = seeded();
    let p = point(&[5], &mut r);
    ops.push(("affine_scale", p, Box::new(move |g, x| {
        let a = g.affine(x, 1.7, -0.3);
        let s = g.scale(a, -0.6);
        let m = g.mul(s, s)?;
        project(g, m, &mut rr.clone())
    })));

    let w = T64::uniform(&[3, 2, 3, 3], -0.5, 0.5, &mut r);
    let p = point(&[2, 2, 5, 5], &mut r);
    rr = seeded();
    ops.push(("conv2d_input", p, Box::new(move |g, x| {
        let wv = g.constant(w.clone());
        let y = g.conv2d(x, wv, 2, 1)?;
        project(g, y, &mut rr.clone())
    })));
    let xin = T64::uniform(&[2, 2, 4, 4], -1.0, 1.0, &mut r);
    let p = point(&[3, 2, 3, 3], &mut r);
    rr = seeded();
    ops.push(("conv2d_weight", p, Box::new(move |g, w| {
        let xv = g.constant(xin.clone());
        let y = g.conv2d(xv, w, 1, 1)?;
        project(g, y, &mut rr.clone())
    })));

    let w = T64::uniform(&[4, 3], -1.0, 1.0, &mut r);
    let b = T64::uniform(&[3], -1.0, 1.0, &mut r);
    let p = point(&[5, 4], &mut r);
    rr = seeded();
    ops.push(("linear_input", p, Box::new(move |g, x| {
        let wv = g.constant(w.clone());
        let bv = g.constant(b.clone());
        let y = g.linear(x, wv, Some(bv))?;
        project(g, y, &mut rr.clone())
    })));
    let xin = T64::uniform(&[5, 4], -1.0, 1.0, &mut r);
    let p = point(&[4, 3], &mut r);
    rr = seeded();
    ops.push(("linear_weight", p, Box::new(move |g, w| {
        let xv = g.constant(xin.clone());
        let y = g.linear(xv, w, None)?;
        project(g, y, &mut rr.clone())
    })));

    let p = point(&[3], &mut r);
    let xin = T64::uniform(&[2, 3, 2, 2], -1.0, 1.0, &mut r);
    rr = seeded();
    ops.push(("add_channel_bias", p, Box::new(move |g, b| {
        let xv = g.constant(xin.clone());
        let y = g.add_channel_bias(xv, b)?;
        let y = g.mul(y, y)?;
        project(g, y, &mut rr.clone())
    })));

    let p = point(&[4, 3, 2, 2], &mut r);
    rr = seeded();
    ops.push(("batchnorm_train", p, Box::new(move |g, x| {
        let gamma = g.constant(T64::full(&[3], 1.3));
        let beta = g.constant(T64::full(&[3], 0.2));
        let (y, _) = g.batchnorm(x, gamma, beta, BnMode::Train)?;
        project(g, y, &mut rr.clone())
    })));
    let p = point(&[3], &mut r);
    let xin = T64::uniform(&[4, 3, 2], -1.0, 1.0, &mut r);
    rr = seeded();
    ops.push(("batchnorm_gamma", p, Box::new(move |g, gamma| {
        let xv = g.constant(xin.clone());
        let beta = g.constant(T64::zeros(&[3]));
        let (y, _) = g.batchnorm(xv, gamma, beta, BnMode::Train)?;
        project(g, y, &mut rr.clone())
    })));
    let p = point(&[4, 3], &mut r);
    rr = seeded();
    ops.push(("batchnorm_eval", p, Box::new(move |g, x| {
        let gamma = g.constant(T64::full(&[3], 0.7));
        let beta = g.constant(T64::full(&[3], -0.1));
        let (mean, var) = ([0.1, -0.2, 0.3], [0.5, 1.5, 2.0]);
        let (y, _) = g.batchnorm(x, gamma, beta, BnMode::Eval { mean: &mean, var: &var })?;
        project(g, y, &mut rr.clone())
    })));

    let p = point(&[6], &mut r);
    rr = seeded();
    ops.push(("silu", p, Box::new(move |g, x| {
        let y = g.silu(x);
        project(g, y, &mut rr.clone())
    })));

    let p = point(&[6, 2], &mut r);
    rr = seeded();
    ops.push(("rows_concat", p, Box::new(move |g, x| {
        let a = g.rows(x, 0, 2)?;
        let b = g.rows(x, 3, 3)?;
        let y = g.concat_rows(&[b, a, b])?;
        let y = g.mul(y, y)?;
        project(g, y, &mut rr.clone())
    })));

    let pt = T64::uniform(&[3], 0.5, 1.5, &mut r);
    let p = point(&[6, 2], &mut r);
    rr = seeded();
    ops.push(("scale_time_input", p, Box::new(move |g, x| {
        let pv = g.constant(pt.clone());
        let y = g.scale_time(x, pv, 3)?;
        project(g, y, &mut rr.clone())
    })));
    let xin = T64::uniform(&[6, 2], -1.0, 1.0, &mut r);
    let p = point(&[3], &mut r);
    rr = seeded();
    ops.push(("scale_time_p", p, Box::new(move |g, p| {
        let xv = g.constant(xin.clone());
        let y = g.scale_time(xv, p, 3)?;
        let y = g.mul(y, y)?;
        project(g, y, &mut rr.clone())
    })));

    let xin = T64::uniform(&[4, 3, 2, 2], -1.0, 1.0, &mut r);
    let p = point(&[2, 3], &mut r);
    rr = seeded();
    ops.push(("add_sample_channel", p, Box::new(move |g, e| {
        let xv = g.constant(xin.clone());
        let y = g.add_sample_channel(xv, e, 2)?;
        let y = g.mul(y, y)?;
        project(g, y, &mut rr.clone())
    })));

    let p = point(&[1, 2, 2, 3], &mut r);
    rr = seeded();
    ops.push(("upsample2x", p, Box::new(move |g, x| {
        let y = g.upsample2x(x)?;
        project(g, y, &mut rr.clone())
    })));

    let p = point(&[6, 2], &mut r);
    rr = seeded();
    ops.push(("mean_replicate_time", p, Box::new(move |g, x| {
        let m = g.mean_time(x, 3)?;
        let y = g.replicate_time(m, 2)?;
        let y = g.mul(y, y)?;
        project(g, y, &mut rr.clone())
    })));

    let p = point(&[2, 6], &mut r);
    rr = seeded();
    ops.push(("reshape", p, Box::new(move |g, x| {
        let y = g.reshape(x, &[3, 4])?;
        let y = g.mul(y, y)?;
        project(g, y, &mut rr.clone())
    })));

    let c = point(&[3, 3], &mut r);
    let p = point(&[3, 3], &mut r);
    ops.push(("mse_mean", p, Box::new(move |g, x| {
        let k = g.constant(c.clone());
        let e = g.mse(x, k)?;
        let m = g.mean(x);
        let m2 = g.mul(m, m)?;
        g.add(e, m2)
    })));
    ops
}

/// Worst relative finite-difference error per operation over `instances`
/// random draws.
pub fn gradient_suite(instances: usize, seed: u64) -> Result<Vec<SuiteResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: Vec<(&'static str, f64)> = Vec::new();
    for _ in 0..instances {
        for (i, (name, point, f)) in smooth_ops(&mut rng).into_iter().enumerate() {
            let rep = grad_check(|g, x| f(g, x), &point, 1e-4)?;
            if worst.len() <= i {
                worst.push((name, 0.0));
            }
            worst[i].1 = worst[i].1.max(rep.max_rel_error);
        }
    }
    Ok(worst
        .into_iter()
        .map(|(n, e)| SuiteResult::at_most("gradient", n, e, 1e-3))
        .collect())
}

/// Hand-rolled recursion vs autodiff on random tiny nets.
pub fn stbp_suite(instances: usize, seed: u64) -> Result<Vec<SuiteResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let mut worst_p = 0.0f64;
    for i in 0..instances {
        let (net, x, y) = TinySnn::random(&mut rng, i % 2 == 1);
        let a = stbp_oracle(&net, &x, &y)?;
        let b = stbp_autodiff(&net, &x, &y)?;
        let d = a.max_abs_diff(&b);
        if net.p.is_some() {
            worst_p = worst_p.max(d);
        } else {
            worst = worst.max(d);
        }
    }
    Ok(vec![
        SuiteResult::at_most("stbp", "weights", worst, 1e-6),
        SuiteResult::at_most("stbp", "weights_and_p", worst_p, 1e-6),
    ])
}

fn moments(x: &Tensor) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.sum() / n;
    let var = x.data().iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
    (mean, var)
}

/// Samplers driven by the exact predictor for N(0, I) data.
pub fn sampler_suite(n: usize, seed: u64) -> Result<Vec<SuiteResult>> {
    let s = NoiseSchedule::default();
    let mut oracle = GaussianOracle { schedule: s.clone() };
    let mut out = Vec::new();
    for (solver, steps) in [(Solver::Ddpm, 1000), (Solver::Ddim, 50), (Solver::Analytic, 50)] {
        let tr = Trajectory::uniform(s.t_diff(), steps)?;
        let h = HStats {
            steps: tr.steps().to_vec(),
            h: tr.steps().iter().map(|&t| 1.0 - s.alpha_bar(t)).collect(),
        };
        let spec = SampleSpec {
            solver,
            n_steps: steps,
            rho: 1.0,
            seed,
            n,
            shape: vec![1],
        };
        let x = sample(&mut oracle, &s, &spec, Some(&h))?;
        let (mean, var) = moments(&x);
        let name = format!("{}_{steps}", solver.as_str());
        out.push(SuiteResult::at_most("sampler", format!("{name}_mean"), mean.abs(), 0.05));
        out.push(SuiteResult::at_most("sampler", format!("{name}_var"), (var - 1.0).abs(), 0.1));
    }
    let mut gap = 0.0f64;
    for (t, sp) in Trajectory::uniform(s.t_diff(), 50)?.transitions() {
        let c = analytic_coefficients(&s, t, sp, 1.0)?;
        gap = gap.max((c.variance - c.lambda_sq).abs());
    }
    out.push(SuiteResult::at_most("sampler", "analytic_h1_equals_posterior", gap, 1e-10));
    Ok(out)
}

/// First-layer rate decoding vs quantized activations.
pub fn conversion_suite(inputs: usize, seed: u64) -> Result<Vec<SuiteResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for bits in 1..=4 {
        let ann = QuantizedAnn {
            layers: vec![QuantLayer {
                synapse: Synapse::Dense {
                    weight: Tensor::uniform(&[4, 6], -1.0, 1.0, &mut rng),
                    bias: Tensor::uniform(&[6], -0.2, 0.2, &mut rng),
                },
                clip: 0.9,
                bits,
            }],
        };
        let snn = convert(&ann)?;
        let x = Tensor::uniform(&[inputs, 4], -1.5, 1.5, &mut rng);
        let a = ann.layers[0].synapse.apply(&x.cast())?;
        let r = snn.decoded(&x)?;
        let mut worst = 0.0f64;
        for (&i, &q) in a.data().iter().zip(r[0].data()) {
            worst = worst.max((quantize_act(i, 0.9f32 as f64, bits)? - q).abs());
        }
        out.push(SuiteResult::at_most("conversion", format!("first_layer_b{bits}"), worst, 0.0));
    }
    Ok(out)
}
