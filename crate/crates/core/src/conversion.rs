//! ANN-to-SNN conversion: clipped activation quantization and the
//! integrate-and-fire network that reproduces it by spike counting.

use std::io::{Read, Write};

use serde::Serialize;

use crate::autodiff::kernels;
use crate::error::{Error, Result};
use crate::network::checkpoint::{read_records, write_records, QUANT_MAGIC};
use crate::tensor::Tensor;

/// `2^b − 1`
pub fn levels(bits: u32) -> Result<u32> {
    if bits == 0 || bits > 16 {
        return Err(Error::invalid(format!("bits must be in 1..=16, got {bits}")));
    }
    Ok((1u32 << bits) - 1)
}

/// Value of quantization level `k` out of `t`: `s/t · k`. Both sides of the
/// conversion decode through this so equal counts give equal values.
pub fn level_value(s: f64, t: u32, k: u32) -> f64 {
    s / t as f64 * k as f64
}

fn check_clip(s: f64) -> Result<()> {
    if !(s > 0.0) || !s.is_finite() {
        return Err(Error::invalid(format!("clipping threshold must be > 0, got {s}")));
    }
    Ok(())
}

/// Quantization level of `x` (ties round away from zero).
pub fn quantize_level(x: f64, s: f64, bits: u32) -> Result<u32> {
    check_clip(s)?;
    let t = levels(bits)?;
    Ok((t as f64 * x / s).round().clamp(0.0, t as f64) as u32)
}

/// `Q = s/(2^b−1) · clip(round((2^b−1)·x/s), 0, 2^b−1)`
pub fn quantize_act(x: f64, s: f64, bits: u32) -> Result<f64> {
    let k = quantize_level(x, s, bits)?;
    Ok(level_value(s, levels(bits)?, k))
}

/// Closed-form rate of an IF neuron charged to `θ/2` under constant input:
/// `clip(floor(T·I/θ + 1/2), 0, T) / T`.
pub fn if_firing_rate(current: f64, threshold: f64, steps: u32) -> Result<f64> {
    if !(threshold > 0.0) {
        return Err(Error::invalid(format!("threshold must be > 0, got {threshold}")));
    }
    if steps == 0 {
        return Err(Error::invalid("T must be >= 1"));
    }
    let k = (steps as f64 * current / threshold + 0.5).floor().clamp(0.0, steps as f64);
    Ok(k / steps as f64)
}

/// Spike count of a simulated IF neuron (reset by subtraction) over
/// `steps` steps of constant input.
pub fn if_spike_count(current: f64, threshold: f64, steps: u32) -> u32 {
    let mut u = threshold / 2.0;
    let mut n = 0;
    for _ in 0..steps {
        u += current;
        if u >= threshold {
            u -= threshold;
            n += 1;
        }
    }
    n
}

/// A weighted layer of a feed-forward stack.
#[derive(Clone, Debug, PartialEq)]
pub enum Synapse {
    /// `x[N,D] · weight[D,E] + bias[E]`
    Dense { weight: Tensor, bias: Tensor },
    /// `weight[Co,C,k,k]`, `bias[Co]`
    Conv {
        weight: Tensor,
        bias: Tensor,
        stride: usize,
        padding: usize,
    },
}

impl Synapse {
    fn weight(&self) -> &Tensor {
        match self {
            Synapse::Dense { weight, .. } | Synapse::Conv { weight, .. } => weight,
        }
    }

    fn bias(&self) -> &Tensor {
        match self {
            Synapse::Dense { bias, .. } | Synapse::Conv { bias, .. } => bias,
        }
    }

    fn scaled(&self, k: f32) -> Synapse {
        let mut out = self.clone();
        match &mut out {
            Synapse::Dense { weight, .. } | Synapse::Conv { weight, .. } => *weight = weight.scale(k),
        }
        out
    }

    fn validate(&self) -> Result<()> {
        let (w, b) = (self.weight(), self.bias());
        let out = match self {
            Synapse::Dense { .. } if w.rank() == 2 => w.shape()[1],
            Synapse::Conv { .. } if w.rank() == 4 => w.shape()[0],
            _ => return Err(Error::shape(format!("bad weight shape {:?}", w.shape()))),
        };
        if b.shape() != [out] {
            return Err(Error::shape(format!("bias {:?} for {out} outputs", b.shape())));
        }
        Ok(())
    }

    /// Affine map in `f64`.
    pub fn apply(&self, x: &Tensor<f64>) -> Result<Tensor<f64>> {
        let w = self.weight().cast::<f64>();
        let b = self.bias().cast::<f64>();
        match self {
            Synapse::Dense { .. } => kernels::linear(x, &w, Some(&b)),
            Synapse::Conv { stride, padding, .. } => {
                let mut y = kernels::conv2d(x, &w, *stride, *padding)?;
                let co = b.len();
                let plane = y.len() / (y.shape()[0] * co);
                for (i, v) in y.data_mut().iter_mut().enumerate() {
                    *v += b.data()[(i / plane) % co];
                }
                Ok(y)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuantLayer {
    pub synapse: Synapse,
    /// Clipping threshold `s`.
    pub clip: f32,
    pub bits: u32,
}

/// Feed-forward stack with quantized, clipped activations after every layer.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantizedAnn {
    pub layers: Vec<QuantLayer>,
}

impl QuantizedAnn {
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::invalid("network has no layers"));
        }
        for l in &self.layers {
            l.synapse.validate()?;
            check_clip(l.clip as f64)?;
            levels(l.bits)?;
        }
        Ok(())
    }

    /// Quantized activations of every layer.
    pub fn forward(&self, x: &Tensor) -> Result<Vec<Tensor<f64>>> {
        self.validate()?;
        let mut h = x.cast::<f64>();
        let mut out = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            let a = l.synapse.apply(&h)?;
            let (s, t) = (l.clip as f64, levels(l.bits)?);
            let mut q = a.clone();
            for v in q.data_mut() {
                let k = (t as f64 * *v / s).round().clamp(0.0, t as f64) as u32;
                *v = level_value(s, t, k);
            }
            out.push(q.clone());
            h = q;
        }
        Ok(out)
    }

    pub fn save<W: Write>(&self, w: W) -> Result<()> {
        self.validate()?;
        let mut records = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            records.push((format!("layer{i}.weight"), l.synapse.weight().clone()));
            records.push((format!("layer{i}.bias"), l.synapse.bias().clone()));
            records.push((
                format!("layer{i}.qparams"),
                Tensor::from_vec(vec![l.clip, l.bits as f32]),
            ));
            if let Synapse::Conv { stride, padding, .. } = l.synapse {
                records.push((
                    format!("layer{i}.geometry"),
                    Tensor::from_vec(vec![stride as f32, padding as f32]),
                ));
            }
        }
        write_records(w, QUANT_MAGIC, &records)
    }

    pub fn load<R: Read>(r: R) -> Result<Self> {
        let records = read_records(r, QUANT_MAGIC)?;
        let get = |name: &str| {
            records
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, t)| t.clone())
        };
        let mut layers = Vec::new();
        for i in 0.. {
            let Some(weight) = get(&format!("layer{i}.weight")) else {
                break;
            };
            let missing = |what: &str| Error::Format(format!("layer {i} has no {what} record"));
            let bias = get(&format!("layer{i}.bias")).ok_or_else(|| missing("bias"))?;
            let q = get(&format!("layer{i}.qparams")).ok_or_else(|| missing("qparams"))?;
            if q.len() != 2 {
                return Err(Error::Format(format!("layer {i} qparams must hold [s, b]")));
            }
            let synapse = match weight.rank() {
                2 => Synapse::Dense { weight, bias },
                4 => {
                    let g = get(&format!("layer{i}.geometry")).ok_or_else(|| missing("geometry"))?;
                    if g.len() != 2 {
                        return Err(Error::Format(format!("layer {i} geometry must hold [stride, padding]")));
                    }
                    Synapse::Conv {
                        weight,
                        bias,
                        stride: g.data()[0] as usize,
                        padding: g.data()[1] as usize,
                    }
                }
                r => return Err(Error::Format(format!("layer {i} weight has rank {r}"))),
            };
            layers.push(QuantLayer {
                synapse,
                clip: q.data()[0],
                bits: q.data()[1] as u32,
            });
        }
        let ann = QuantizedAnn { layers };
        ann.validate().map_err(|e| Error::Format(e.to_string()))?;
        Ok(ann)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IfLayer {
    /// Weights already multiplied by the previous layer's threshold.
    pub synapse: Synapse,
    pub threshold: f64,
    /// Initial membrane charge.
    pub init: f64,
}

/// Integrate-and-fire stack read out by spike counts over `steps`.
#[derive(Clone, Debug, PartialEq)]
pub struct IfSnn {
    pub layers: Vec<IfLayer>,
    pub steps: u32,
}

/// `θ = s`, `T = 2^b − 1`, charge `θ/2`, next-layer weights scaled by `s`.
pub fn convert(qann: &QuantizedAnn) -> Result<IfSnn> {
    qann.validate()?;
    let bits = qann.layers[0].bits;
    if qann.layers.iter().any(|l| l.bits != bits) {
        return Err(Error::invalid("all layers must share the same bit width"));
    }
    let mut prev = 1.0f32;
    let layers = qann
        .layers
        .iter()
        .map(|l| {
            let synapse = l.synapse.scaled(prev);
            prev = l.clip;
            IfLayer {
                synapse,
                threshold: l.clip as f64,
                init: l.clip as f64 / 2.0,
            }
        })
        .collect();
    Ok(IfSnn {
        layers,
        steps: levels(bits)?,
    })
}

impl IfSnn {
    /// Spike counts of every layer. The first layer sees the input as a
    /// constant current; deeper layers see the spikes of the one below.
    pub fn spike_counts(&self, x: &Tensor) -> Result<Vec<Tensor<f64>>> {
        let steps = self.steps as usize;
        let x = x.cast::<f64>();
        let mut inputs: Vec<Tensor<f64>> = vec![x; steps];
        let mut out = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate() {
            let currents: Vec<Tensor<f64>> = if l == 0 {
                vec![layer.synapse.apply(&inputs[0])?; steps]
            } else {
                inputs
                    .iter()
                    .map(|s| layer.synapse.apply(s))
                    .collect::<Result<_>>()?
            };
            let shape = currents[0].shape().to_vec();
            let mut u = Tensor::<f64>::full(&shape, layer.init);
            let mut counts = Tensor::<f64>::zeros(&shape);
            let mut spikes = Vec::with_capacity(steps);
            for i in &currents {
                let mut s = Tensor::<f64>::zeros(&shape);
                for (((u, &i), s), c) in u
                    .data_mut()
                    .iter_mut()
                    .zip(i.data())
                    .zip(s.data_mut())
                    .zip(counts.data_mut())
                {
                    *u += i;
                    if *u >= layer.threshold {
                        *u -= layer.threshold;
                        *s = 1.0;
                        *c += 1.0;
                    }
                }
                spikes.push(s);
            }
            out.push(counts);
            inputs = spikes;
        }
        Ok(out)
    }

    /// Stored with the quantized-network magic: per layer the scaled
    /// weights, bias, `[θ, initial charge, T]` and conv geometry.
    pub fn save<W: Write>(&self, w: W) -> Result<()> {
        let mut records = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            records.push((format!("layer{i}.weight"), l.synapse.weight().clone()));
            records.push((format!("layer{i}.bias"), l.synapse.bias().clone()));
            records.push((
                format!("layer{i}.if"),
                Tensor::from_vec(vec![l.threshold as f32, l.init as f32, self.steps as f32]),
            ));
            if let Synapse::Conv { stride, padding, .. } = l.synapse {
                records.push((
                    format!("layer{i}.geometry"),
                    Tensor::from_vec(vec![stride as f32, padding as f32]),
                ));
            }
        }
        write_records(w, QUANT_MAGIC, &records)
    }

    /// Input shape of one sample for dense stacks, `None` for conv stacks.
    pub fn dense_input(&self) -> Option<usize> {
        match &self.layers.first()?.synapse {
            Synapse::Dense { weight, .. } => Some(weight.shape()[0]),
            Synapse::Conv { .. } => None,
        }
    }

    /// Rate-decoded activations `θ · count / T` per layer.
    pub fn decoded(&self, x: &Tensor) -> Result<Vec<Tensor<f64>>> {
        let counts = self.spike_counts(x)?;
        Ok(counts
            .into_iter()
            .zip(&self.layers)
            .map(|(c, l)| c.map(|k| level_value(l.threshold, self.steps, k as u32)))
            .collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LayerGap {
    pub layer: usize,
    /// Mean `|Q − Q̃|` over all inputs and units.
    pub mean_abs_gap: f64,
    pub max_abs_gap: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DivergenceReport {
    pub layers: Vec<LayerGap>,
    /// Whether the mean gap never decreases with depth (measured only).
    pub non_decreasing: bool,
}

impl DivergenceReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Runs both networks on `inputs[N, ...]` and compares layer by layer.
pub fn divergence_report(qann: &QuantizedAnn, snn: &IfSnn, inputs: &Tensor) -> Result<DivergenceReport> {
    if qann.layers.len() != snn.layers.len() {
        return Err(Error::invalid(format!(
            "architecture mismatch: {} ANN layers vs {} SNN layers",
            qann.layers.len(),
            snn.layers.len()
        )));
    }
    let q = qann.forward(inputs)?;
    let r = snn.decoded(inputs)?;
    let mut layers = Vec::with_capacity(q.len());
    for (i, (a, b)) in q.iter().zip(&r).enumerate() {
        if a.shape() != b.shape() {
            return Err(Error::invalid(format!("architecture mismatch at layer {i}")));
        }
        let gaps: Vec<f64> = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).collect();
        layers.push(LayerGap {
            layer: i,
            mean_abs_gap: gaps.iter().sum::<f64>() / gaps.len().max(1) as f64,
            max_abs_gap: gaps.iter().cloned().fold(0.0, f64::max),
        });
    }
    let non_decreasing = layers.windows(2).all(|w| w[0].mean_abs_gap <= w[1].mean_abs_gap);
    Ok(DivergenceReport {
        layers,
        non_decreasing,
    })
}

#[cfg(test)]
mod tests;
