//! Hand-unrolled spatio-temporal backpropagation for tiny dense spiking
//! nets, used to cross-check the autodiff engine.
//!
//! Layer `l` integrates `I_l[t] = p_l[t] · (o_{l−1}[t] · W_l)` with
//! `o_{−1} = x`, and the loss is `½ Σ_t Σ_i (o_L[t]_i − y[t]_i)²`.

use rand::Rng;

use crate::autodiff::Graph;
use crate::error::{Error, Result};
use crate::neuron::{lif_run_var, LifParams};
use crate::tensor::Tensor;

const MAX_LAYERS: usize = 2;
const MAX_NEURONS: usize = 10;
const MAX_STEPS: usize = 4;

#[derive(Clone, Debug)]
pub struct TinySnn {
    /// `[in, out]` per layer.
    pub weights: Vec<Tensor<f64>>,
    /// Temporal scales `p_l[t]`; `None` means the pre-spike form.
    pub p: Option<Vec<Vec<f64>>>,
    pub lif: LifParams,
    pub steps: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TinyGrads {
    pub weights: Vec<Tensor<f64>>,
    pub p: Option<Vec<Vec<f64>>>,
}

impl TinyGrads {
    /// Largest absolute difference over every entry.
    pub fn max_abs_diff(&self, other: &TinyGrads) -> f64 {
        let mut worst = 0.0f64;
        for (a, b) in self.weights.iter().zip(&other.weights) {
            for (x, y) in a.data().iter().zip(b.data()) {
                worst = worst.max((x - y).abs());
            }
        }
        if let (Some(a), Some(b)) = (&self.p, &other.p) {
            for (x, y) in a.iter().flatten().zip(b.iter().flatten()) {
                worst = worst.max((x - y).abs());
            }
        }
        worst
    }
}

impl TinySnn {
    /// Random instance within the oracle's limits: 1–2 layers of 1–5
    /// neurons, 1–4 steps, plus a matching input and binary target.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, tsm: bool) -> (TinySnn, Tensor<f64>, Tensor<f64>) {
        let steps = rng.gen_range(1..=MAX_STEPS);
        let layers = rng.gen_range(1..=MAX_LAYERS);
        let mut widths = vec![rng.gen_range(1..=5)];
        for _ in 0..layers {
            widths.push(rng.gen_range(1..=5));
        }
        let weights = (0..layers)
            .map(|l| Tensor::<f64>::uniform(&[widths[l], widths[l + 1]], -0.4, 1.2, rng))
            .collect();
        let p = tsm.then(|| {
            (0..layers)
                .map(|_| (0..steps).map(|_| rng.gen_range(0.5..1.5)).collect())
                .collect()
        });
        let decay = rng.gen_range(0.5..=1.0);
        let lif = LifParams::new(decay, 1.0, 1.0).expect("valid constants");
        let input = Tensor::<f64>::uniform(&[steps, widths[0]], 0.0, 1.5, rng);
        let target = Tensor::<f64>::uniform(&[steps, widths[layers]], 0.0, 1.0, rng).map(f64::round);
        let net = TinySnn {
            weights,
            p,
            lif,
            steps,
        };
        (net, input, target)
    }

    fn validate(&self, input: &Tensor<f64>, target: &Tensor<f64>) -> Result<()> {
        if self.weights.is_empty() || self.weights.len() > MAX_LAYERS {
            return Err(Error::invalid(format!(
                "oracle supports 1..={MAX_LAYERS} layers, got {}",
                self.weights.len()
            )));
        }
        if self.steps == 0 || self.steps > MAX_STEPS {
            return Err(Error::invalid(format!(
                "oracle supports 1..={MAX_STEPS} time steps, got {}",
                self.steps
            )));
        }
        let mut width = *input.shape().get(1).unwrap_or(&0);
        if input.shape() != [self.steps, width] {
            return Err(Error::shape(format!("input {:?} is not [T, in]", input.shape())));
        }
        let mut neurons = 0;
        for (l, w) in self.weights.iter().enumerate() {
            if w.rank() != 2 || w.shape()[0] != width {
                return Err(Error::shape(format!(
                    "layer {l} weight {:?} does not take {width} inputs",
                    w.shape()
                )));
            }
            width = w.shape()[1];
            neurons += width;
        }
        if neurons > MAX_NEURONS {
            return Err(Error::invalid(format!(
                "oracle supports at most {MAX_NEURONS} neurons, got {neurons}"
            )));
        }
        if target.shape() != [self.steps, width] {
            return Err(Error::shape(format!("target {:?} is not [T, out]", target.shape())));
        }
        if let Some(p) = &self.p {
            if p.len() != self.weights.len() || p.iter().any(|v| v.len() != self.steps) {
                return Err(Error::shape("temporal parameters must be [layers][T]"));
            }
        }
        Ok(())
    }
}

struct LayerTrace {
    /// Unscaled synaptic input `o_{l−1}[t] · W`.
    raw: Vec<Vec<f64>>,
    u: Vec<Vec<f64>>,
    o: Vec<Vec<f64>>,
}

/// Gradients of the loss by the explicit backward-in-time recursion.
pub fn stbp_oracle(net: &TinySnn, input: &Tensor<f64>, target: &Tensor<f64>) -> Result<TinyGrads> {
    net.validate(input, target)?;
    let steps = net.steps;
    let decay = net.lif.decay() as f64;
    let theta = net.lif.threshold() as f64;
    let a = net.lif.surrogate_width() as f64;
    let surrogate = |u: f64| if (u - theta).abs() < a / 2.0 { 1.0 / a } else { 0.0 };

    let mut inputs: Vec<Vec<f64>> = input.data().chunks(input.shape()[1]).map(<[f64]>::to_vec).collect();
    let mut layer_inputs = Vec::new();
    let mut traces = Vec::new();
    for (l, w) in net.weights.iter().enumerate() {
        let (d, e) = (w.shape()[0], w.shape()[1]);
        let mut tr = LayerTrace {
            raw: Vec::new(),
            u: Vec::new(),
            o: Vec::new(),
        };
        let mut v = vec![0.0; e];
        for t in 0..steps {
            let raw: Vec<f64> = (0..e)
                .map(|j| (0..d).map(|i| inputs[t][i] * w.data()[i * e + j]).sum())
                .collect();
            let scale = net.p.as_ref().map_or(1.0, |p| p[l][t]);
            let u: Vec<f64> = (0..e).map(|j| decay * v[j] + scale * raw[j]).collect();
            let o: Vec<f64> = u.iter().map(|&u| if u >= theta { 1.0 } else { 0.0 }).collect();
            v = u.iter().zip(&o).map(|(u, o)| u * (1.0 - o)).collect();
            tr.raw.push(raw);
            tr.u.push(u);
            tr.o.push(o);
        }
        layer_inputs.push(std::mem::replace(&mut inputs, tr.o.clone()));
        traces.push(tr);
    }

    let last = traces.len() - 1;
    let out_w = target.shape()[1];
    // ∂L/∂o for the top layer comes straight from the loss.
    let mut d_o: Vec<Vec<f64>> = (0..steps)
        .map(|t| {
            (0..out_w)
                .map(|j| traces[last].o[t][j] - target.data()[t * out_w + j])
                .collect()
        })
        .collect();
    let mut grads_w = vec![Tensor::zeros(&[0]); traces.len()];
    let mut grads_p = vec![vec![0.0; steps]; traces.len()];
    for l in (0..traces.len()).rev() {
        let tr = &traces[l];
        let w = &net.weights[l];
        let (d, e) = (w.shape()[0], w.shape()[1]);
        let mut d_u = vec![vec![0.0; e]; steps];
        let mut next = vec![0.0; e];
        for t in (0..steps).rev() {
            for j in 0..e {
                // u[t+1] = decay·u[t]·(1 − o[t]) + I[t+1]
                let d_spike = d_o[t][j] - decay * tr.u[t][j] * next[j];
                d_u[t][j] = d_spike * surrogate(tr.u[t][j]) + decay * (1.0 - tr.o[t][j]) * next[j];
            }
            next = d_u[t].clone();
        }
        let x = &layer_inputs[l];
        let mut gw = vec![0.0; d * e];
        let mut d_in = vec![vec![0.0; d]; steps];
        for t in 0..steps {
            let scale = net.p.as_ref().map_or(1.0, |p| p[l][t]);
            for j in 0..e {
                let di = scale * d_u[t][j];
                grads_p[l][t] += d_u[t][j] * tr.raw[t][j];
                for i in 0..d {
                    gw[i * e + j] += di * x[t][i];
                    d_in[t][i] += di * w.data()[i * e + j];
                }
            }
        }
        grads_w[l] = Tensor::new(vec![d, e], gw)?;
        d_o = d_in;
    }
    Ok(TinyGrads {
        weights: grads_w,
        p: net.p.as_ref().map(|_| grads_p),
    })
}

/// The same gradients via the autodiff graph.
pub fn stbp_autodiff(net: &TinySnn, input: &Tensor<f64>, target: &Tensor<f64>) -> Result<TinyGrads> {
    net.validate(input, target)?;
    let mut g = Graph::<f64>::default();
    let mut x = g.constant(input.clone());
    let mut w_vars = Vec::new();
    let mut p_vars = Vec::new();
    for (l, w) in net.weights.iter().enumerate() {
        let wv = g.param(w.clone());
        w_vars.push(wv);
        let mut cur = g.linear(x, wv, None)?;
        if let Some(p) = &net.p {
            let pv = g.param(Tensor::new(vec![net.steps], p[l].clone())?);
            p_vars.push(pv);
            cur = g.scale_time(cur, pv, net.steps)?;
        }
        x = lif_run_var(&mut g, &net.lif, cur, net.steps)?.spikes;
    }
    let y = g.constant(target.clone());
    let diff = g.sub(x, y)?;
    let sq = g.mul(diff, diff)?;
    let total = g.sum(sq);
    let loss = g.scale(total, 0.5);
    let grads = g.backward(loss)?;
    let take = |v| {
        grads
            .get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(g.shape(v)))
    };
    Ok(TinyGrads {
        weights: w_vars.iter().map(|&v| take(v)).collect(),
        p: net
            .p
            .as_ref()
            .map(|_| p_vars.iter().map(|&v| take(v).into_data()).collect()),
    })
}
