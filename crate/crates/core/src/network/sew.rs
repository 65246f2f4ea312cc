//! Spike-element-wise residual block, kept as a reference for the
//! output-domain comparison with pre-spike blocks.

use crate::autodiff::{BnMode, Graph, Var};
use crate::error::{Error, Result};
use crate::neuron::{lif_run_var, LifParams};
use crate::tensor::Tensor;

/// Conv weight plus frozen normalization (running statistics).
#[derive(Clone, Debug)]
pub struct SewSite {
    pub weight: Tensor,
    pub gamma: Tensor,
    pub beta: Tensor,
    pub mean: Tensor,
    pub var: Tensor,
}

#[derive(Clone, Debug)]
pub struct SewBlock {
    pub sites: [SewSite; 2],
    pub lif: LifParams,
}

#[derive(Clone, Debug)]
pub struct SewOutput {
    pub output: Var,
    /// `BN(Conv(S)) + S` at each site, before the neuron.
    pub sums: Vec<Var>,
    pub spikes: Vec<Var>,
}

/// `O = BN(Conv(S_in)) + S_in`, `S = spike(LIF(O))`, twice.
pub fn sew_forward(g: &mut Graph, block: &SewBlock, s_in: Var, steps: usize) -> Result<SewOutput> {
    if g.value(s_in).data().iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::invalid("SEW block input must be a binary spike tensor"));
    }
    let mut s = s_in;
    let mut sums = Vec::new();
    let mut spikes = Vec::new();
    for site in &block.sites {
        let k = site.weight.shape().get(2).copied().unwrap_or(1);
        let w = g.constant(site.weight.clone());
        let y = g.conv2d(s, w, 1, k / 2)?;
        let gamma = g.constant(site.gamma.clone());
        let beta = g.constant(site.beta.clone());
        let mode = BnMode::Eval {
            mean: site.mean.data(),
            var: site.var.data(),
        };
        let (y, _) = g.batchnorm(y, gamma, beta, mode)?;
        let o = g.add(y, s)?;
        sums.push(o);
        s = lif_run_var(g, &block.lif, o, steps)?.spikes;
        spikes.push(s);
    }
    Ok(SewOutput {
        output: s,
        sums,
        spikes,
    })
}
