//! Theoretical energy: real-valued layers cost one multiply-accumulate per
//! FLOP, spike-driven layers one accumulate per synaptic operation.

use serde::Serialize;

use crate::autodiff::Graph;
use crate::error::{Error, Result};
use crate::network::{LayerKind, Mode, SpikingNet};
use crate::tensor::Tensor;

/// Picojoules per multiply-accumulate (45 nm).
pub const E_MAC_PJ: f64 = 4.6;
/// Picojoules per accumulate (45 nm).
pub const E_AC_PJ: f64 = 0.9;

/// `Co·H'·W'·C·k²`
pub fn conv_flops(c_in: usize, c_out: usize, kernel: usize, out_h: usize, out_w: usize) -> u64 {
    (c_out * out_h * out_w * c_in * kernel * kernel) as u64
}

/// `D·E`
pub fn dense_flops(d: usize, e: usize) -> u64 {
    (d * e) as u64
}

/// Fraction of ones in a spike train.
pub fn firing_rate(spikes: &Tensor) -> f64 {
    if spikes.is_empty() {
        return 0.0;
    }
    spikes.data().iter().filter(|&&s| s != 0.0).count() as f64 / spikes.len() as f64
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LayerProfile {
    pub id: String,
    pub kind: &'static str,
    pub flops: u64,
    /// Input firing rate; `None` for layers fed real values.
    pub fr: Option<f64>,
    pub sops: f64,
}

impl LayerProfile {
    pub fn real(id: impl Into<String>, kind: LayerKind, flops: u64) -> Self {
        Self {
            id: id.into(),
            kind: kind.as_str(),
            flops,
            fr: None,
            sops: 0.0,
        }
    }

    pub fn spiking(id: impl Into<String>, kind: LayerKind, flops: u64, fr: f64, t_snn: usize) -> Self {
        Self {
            id: id.into(),
            kind: kind.as_str(),
            flops,
            fr: Some(fr),
            sops: fr * t_snn as f64 * flops as f64,
        }
    }
}

/// Records every weighted layer of one eval-mode forward pass.
pub fn profile_run(net: &SpikingNet, x: &Tensor, t: &[usize]) -> Result<Vec<LayerProfile>> {
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let f = net.forward(&mut g, xv, t, Mode::Eval)?;
    let steps = net.config().t_snn;
    Ok(f.layers
        .iter()
        .map(|l| match l.spike_input {
            Some(v) => LayerProfile::spiking(&l.id, l.kind, l.flops, firing_rate(g.value(v)), steps),
            None => LayerProfile::real(&l.id, l.kind, l.flops),
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Totals {
    /// Per sample, one denoising step.
    pub pj: f64,
    pub mj: f64,
    /// Multiply-accumulate share (real-valued layers).
    pub first_layer_pj: f64,
    /// Accumulate share (spiking layers).
    pub ac_pj: f64,
    pub n_steps: usize,
    /// Per sample over all `n_steps` denoising steps.
    pub sample_pj: f64,
    pub sample_mj: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EnergyReport {
    pub t_snn: usize,
    pub e_mac_pj: f64,
    pub e_ac_pj: f64,
    pub layers: Vec<LayerProfile>,
    pub totals: Totals,
}

pub fn energy_report(profiles: &[LayerProfile], t_snn: usize, n_steps: usize) -> Result<EnergyReport> {
    if profiles.is_empty() {
        return Err(Error::invalid("no layer profiles"));
    }
    if t_snn == 0 || n_steps == 0 {
        return Err(Error::invalid("t_snn and n_steps must be >= 1"));
    }
    let mut mac = 0.0;
    let mut ac = 0.0;
    for p in profiles {
        match p.fr {
            None => mac += E_MAC_PJ * p.flops as f64,
            Some(fr) => {
                if !(0.0..=1.0).contains(&fr) {
                    return Err(Error::invalid(format!("layer {} has firing rate {fr}", p.id)));
                }
                ac += E_AC_PJ * p.sops;
            }
        }
    }
    let pj = mac + ac;
    let sample_pj = pj * n_steps as f64;
    Ok(EnergyReport {
        t_snn,
        e_mac_pj: E_MAC_PJ,
        e_ac_pj: E_AC_PJ,
        layers: profiles.to_vec(),
        totals: Totals {
            pj,
            mj: pj * 1e-9,
            first_layer_pj: mac,
            ac_pj: ac,
            n_steps,
            sample_pj,
            sample_mj: sample_pj * 1e-9,
        },
    })
}

impl EnergyReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
