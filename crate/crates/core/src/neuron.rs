//! Leaky integrate-and-fire neurons with hard reset.
//!
//! Tensor-level functions run the dynamics directly; the `*_var` variants
//! record the same arithmetic on a [`Graph`] so gradients flow through the
//! surrogate. Time-major layouts put the SNN time step on the leading axis.

use crate::autodiff::{Graph, SurrogateSpec, Var};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub const DEFAULT_DECAY: f32 = 1.0;
pub const DEFAULT_THRESHOLD: f32 = 1.0;
pub const DEFAULT_SURROGATE_WIDTH: f32 = 1.0;

/// Neuron constants. The reset potential is fixed at zero.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LifParams {
    decay: f32,
    threshold: f32,
    width: f32,
}

impl Default for LifParams {
    fn default() -> Self {
        Self {
            decay: DEFAULT_DECAY,
            threshold: DEFAULT_THRESHOLD,
            width: DEFAULT_SURROGATE_WIDTH,
        }
    }
}

impl LifParams {
    pub fn new(decay: f32, threshold: f32, surrogate_width: f32) -> Result<Self> {
        if !(decay > 0.0) || !decay.is_finite() {
            return Err(Error::invalid(format!("decay must be > 0, got {decay}")));
        }
        if !threshold.is_finite() {
            return Err(Error::invalid(format!("threshold must be finite, got {threshold}")));
        }
        SurrogateSpec::new(surrogate_width, threshold)?;
        Ok(Self {
            decay,
            threshold,
            width: surrogate_width,
        })
    }

    pub fn decay(&self) -> f32 {
        self.decay
    }

    pub fn threshold(&self) -> f32 {
        self.threshold
    }

    pub fn surrogate_width(&self) -> f32 {
        self.width
    }

    pub fn reset(&self) -> f32 {
        0.0
    }

    pub fn surrogate(&self) -> SurrogateSpec {
        SurrogateSpec {
            width: self.width,
            threshold: self.threshold,
        }
    }

    /// Same neuron with the threshold multiplied by `rho`.
    pub fn with_threshold_scale(&self, rho: f32) -> Result<Self> {
        if !(rho > 0.0) || !rho.is_finite() {
            return Err(Error::invalid(format!("threshold scale must be > 0, got {rho}")));
        }
        Ok(Self {
            threshold: self.threshold * rho,
            ..*self
        })
    }
}

/// Post-reset membrane potential per neuron.
#[derive(Clone, Debug, PartialEq)]
pub struct LifState {
    pub v: Tensor,
}

impl LifState {
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            v: Tensor::zeros(shape),
        }
    }
}

/// One update: `U = decay·V + I`, `S = Θ(U − θ)`, `V' = U·(1 − S)`.
pub fn lif_step(params: &LifParams, state: &LifState, current: &Tensor) -> Result<(Tensor, LifState)> {
    let (spikes, _, v) = step_values(params, &state.v, current)?;
    Ok((spikes, LifState { v }))
}

fn step_values(params: &LifParams, v: &Tensor, current: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
    let u = v.zip_map(current, |v, i| params.decay * v + i)?;
    let spec = params.surrogate();
    let s = u.map(|x| spec.fire(x));
    let next = u.zip_map(&s, |u, s| u - u * s)?;
    Ok((s, u, next))
}

/// Output of [`lif_run`].
#[derive(Clone, Debug, PartialEq)]
pub struct LifTrace {
    /// `[T, ...]` binary spikes.
    pub spikes: Tensor,
    /// `[T, ...]` pre-reset potentials.
    pub potentials: Tensor,
}

/// Runs the neuron over `currents[T, ...]` from a zero state.
pub fn lif_run(params: &LifParams, currents: &Tensor) -> Result<LifTrace> {
    let steps = *currents
        .shape()
        .first()
        .ok_or_else(|| Error::shape("lif_run needs a leading time axis"))?;
    if steps == 0 {
        return Err(Error::invalid("lif_run needs at least one time step"));
    }
    let mut v = Tensor::zeros(&currents.shape()[1..]);
    let mut spikes = Vec::with_capacity(steps);
    let mut pots = Vec::with_capacity(steps);
    for t in 0..steps {
        let i = currents.rows(t, 1)?.reshape(v.shape())?;
        let (s, u, next) = step_values(params, &v, &i)?;
        spikes.push(s.reshape(&[&[1], v.shape()].concat())?);
        pots.push(u.reshape(&[&[1], v.shape()].concat())?);
        v = next;
    }
    Ok(LifTrace {
        spikes: Tensor::concat_rows(&spikes.iter().collect::<Vec<_>>())?,
        potentials: Tensor::concat_rows(&pots.iter().collect::<Vec<_>>())?,
    })
}

/// Replicates `x` as the input current at each of `steps` time steps.
pub fn direct_encode<T: Real>(x: &Tensor<T>, steps: usize) -> Result<Tensor<T>> {
    if steps == 0 {
        return Err(Error::invalid("time steps must be >= 1"));
    }
    let mut shape = vec![steps];
    shape.extend_from_slice(x.shape());
    let mut data = Vec::with_capacity(x.len() * steps);
    for _ in 0..steps {
        data.extend_from_slice(x.data());
    }
    Tensor::new(shape, data)
}

/// Graph nodes produced by one [`lif_step_var`].
#[derive(Clone, Copy, Debug)]
pub struct StepVars {
    pub spikes: Var,
    pub potential: Var,
    pub next: Var,
}

/// [`lif_step`] recorded on a graph. `v = None` is the zero initial state.
pub fn lif_step_var<T: Real>(
    g: &mut Graph<T>,
    params: &LifParams,
    v: Option<Var>,
    current: Var,
) -> Result<StepVars> {
    let u = match v {
        None => current,
        Some(v) => {
            let decayed = g.scale(v, T::of(params.decay as f64));
            g.add(decayed, current)?
        }
    };
    let s = g.spike(u, params.surrogate());
    let us = g.mul(u, s)?;
    let next = g.sub(u, us)?;
    Ok(StepVars {
        spikes: s,
        potential: u,
        next,
    })
}

/// Graph nodes produced by [`lif_run_var`], both time-major `[T·N, ...]`.
#[derive(Clone, Copy, Debug)]
pub struct RunVars {
    pub spikes: Var,
    pub potentials: Var,
}

/// Unrolls the neuron over a time-major `currents[T·N, ...]`.
pub fn lif_run_var<T: Real>(
    g: &mut Graph<T>,
    params: &LifParams,
    currents: Var,
    steps: usize,
) -> Result<RunVars> {
    if steps == 0 {
        return Err(Error::invalid("time steps must be >= 1"));
    }
    let lead = *g
        .shape(currents)
        .first()
        .ok_or_else(|| Error::shape("LIF input needs a leading time axis"))?;
    if lead % steps != 0 {
        return Err(Error::shape(format!(
            "leading dimension {lead} is not a multiple of {steps} time steps"
        )));
    }
    if steps == 1 {
        let st = lif_step_var(g, params, None, currents)?;
        return Ok(RunVars {
            spikes: st.spikes,
            potentials: st.potential,
        });
    }
    let n = lead / steps;
    let mut v = None;
    let mut spikes = Vec::with_capacity(steps);
    let mut pots = Vec::with_capacity(steps);
    for t in 0..steps {
        let i = g.rows(currents, t * n, n)?;
        let st = lif_step_var(g, params, v, i)?;
        spikes.push(st.spikes);
        pots.push(st.potential);
        v = Some(st.next);
    }
    Ok(RunVars {
        spikes: g.concat_rows(&spikes)?,
        potentials: g.concat_rows(&pots)?,
    })
}
