//! Two-stage training: pre-spike pretraining, then TSM fine-tuning of the
//! weights and temporal parameters together.

use std::collections::BTreeMap;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Graph;
use crate::diffusion::{q_sample_batch, Denoiser, NoiseSchedule};
use crate::error::{Error, Result};
use crate::network::{BlockKind, Mode, SpikingNet};
use crate::tensor::Tensor;

mod stbp;

pub use stbp::{stbp_autodiff, stbp_oracle, TinyGrads, TinySnn};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f32,
    /// Learning rate for stage 2.
    pub finetune_lr: f32,
    pub batch_size: usize,
    /// Global gradient-norm bound.
    pub clip: f32,
    pub stage1_iters: usize,
    pub stage2_iters: usize,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            finetune_lr: 1e-4,
            batch_size: 64,
            clip: 1.0,
            stage1_iters: 2000,
            stage2_iters: 150,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, lr) in [("lr", self.lr), ("finetune_lr", self.finetune_lr)] {
            if !(lr >= 0.0) || !lr.is_finite() {
                return Err(Error::Config(format!("{name} must be >= 0, got {lr}")));
            }
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(self.clip > 0.0) {
            return Err(Error::Config(format!("clip must be > 0, got {}", self.clip)));
        }
        if self.stage2_iters > 0 && self.stage2_iters * 10 >= self.stage1_iters {
            return Err(Error::Config(format!(
                "stage2_iters ({}) must be below stage1_iters / 10 ({})",
                self.stage2_iters, self.stage1_iters
            )));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} must be in [0, 1), got {b}")));
            }
        }
        if !(self.eps > 0.0) {
            return Err(Error::Config("eps must be > 0".into()));
        }
        Ok(())
    }
}

/// First and second moment accumulators, one pair per parameter.
#[derive(Clone, Debug, Default)]
pub struct Adam {
    m: BTreeMap<String, Tensor>,
    v: BTreeMap<String, Tensor>,
    step: u64,
}

impl Adam {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn moments(&self, name: &str) -> Option<(&Tensor, &Tensor)> {
        Some((self.m.get(name)?, self.v.get(name)?))
    }

    /// One bias-corrected update. Parameters without a gradient see zero.
    pub fn update(
        &mut self,
        net: &mut SpikingNet,
        grads: &BTreeMap<String, Tensor>,
        lr: f32,
        cfg: &TrainConfig,
    ) -> Result<()> {
        self.step += 1;
        let c1 = 1.0 - (cfg.beta1 as f64).powi(self.step as i32);
        let c2 = 1.0 - (cfg.beta2 as f64).powi(self.step as i32);
        let (b1, b2, eps) = (cfg.beta1, cfg.beta2, cfg.eps);
        for (name, w) in net.store_mut().params_mut() {
            let m = self
                .m
                .entry(name.to_string())
                .or_insert_with(|| Tensor::zeros(w.shape()));
            let v = self
                .v
                .entry(name.to_string())
                .or_insert_with(|| Tensor::zeros(w.shape()));
            let zero;
            let g = match grads.get(name) {
                Some(g) => {
                    g.expect_same_shape(w, name)?;
                    g
                }
                None => {
                    zero = Tensor::zeros(w.shape());
                    &zero
                }
            };
            let it = w
                .data_mut()
                .iter_mut()
                .zip(m.data_mut().iter_mut())
                .zip(v.data_mut().iter_mut())
                .zip(g.data());
            for (((w, m), v), &g) in it {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let mh = *m as f64 / c1;
                let vh = *v as f64 / c2;
                *w -= (lr as f64 * mh / (vh.sqrt() + eps as f64)) as f32;
            }
        }
        Ok(())
    }
}

/// Global L2 norm over all gradients.
pub fn global_norm(grads: &BTreeMap<String, Tensor>) -> f64 {
    grads.values().map(|g| g.sum_sq()).sum::<f64>().sqrt()
}

/// Rescales all gradients so their global norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut BTreeMap<String, Tensor>, max_norm: f32) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm as f64 {
        let k = (max_norm as f64 / norm) as f32;
        for g in grads.values_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= k);
        }
    }
    norm
}

fn draw_timesteps<R: Rng + ?Sized>(n: usize, t_diff: usize, rng: &mut R) -> Vec<usize> {
    (0..n).map(|_| rng.gen_range(1..=t_diff)).collect()
}

fn check_batch(x0: &Tensor) -> Result<usize> {
    match x0.shape().first() {
        Some(&n) if n > 0 => Ok(n),
        _ => Err(Error::invalid("empty batch")),
    }
}

/// Mean squared error between fresh noise and the denoiser's prediction at
/// uniformly drawn timesteps.
pub fn diffusion_loss<D: Denoiser + ?Sized, R: Rng + ?Sized>(
    net: &mut D,
    schedule: &NoiseSchedule,
    x0: &Tensor,
    rng: &mut R,
) -> Result<f64> {
    let n = check_batch(x0)?;
    let t = draw_timesteps(n, schedule.t_diff(), rng);
    let eps = Tensor::randn(x0.shape(), rng);
    let x_t = q_sample_batch(schedule, x0, &t, &eps)?;
    let pred = net.predict_noise(&x_t, &t)?;
    let diff = pred.zip_map(&eps, |a, b| a - b)?;
    Ok(diff.sum_sq() / diff.len() as f64)
}

/// Loss and named parameter gradients for one batch. Batch statistics are
/// folded into the running estimates.
pub fn loss_and_grads<R: Rng + ?Sized>(
    net: &mut SpikingNet,
    schedule: &NoiseSchedule,
    x0: &Tensor,
    rng: &mut R,
) -> Result<(f32, BTreeMap<String, Tensor>)> {
    let n = check_batch(x0)?;
    let t = draw_timesteps(n, schedule.t_diff(), rng);
    let eps = Tensor::randn(x0.shape(), rng);
    let x_t = q_sample_batch(schedule, x0, &t, &eps)?;
    let mut g = Graph::new();
    let xv = g.constant(x_t);
    let f = net.forward(&mut g, xv, &t, Mode::Train)?;
    let target = g.constant(eps);
    let loss = g.mse(f.output, target)?;
    let value = g.value(loss).item()?;
    let mut grads = g.backward(loss)?;
    let mut named = BTreeMap::new();
    for (name, v) in &f.params {
        if let Some(gr) = grads.take(*v) {
            named.insert(name.clone(), gr);
        }
    }
    net.update_running_stats(&f.bn_stats)?;
    Ok((value, named))
}

/// Draws a batch of rows from `data[M, ...]` with replacement.
pub fn draw_batch<R: Rng + ?Sized>(data: &Tensor, n: usize, rng: &mut R) -> Result<Tensor> {
    let m = check_batch(data).map_err(|_| Error::invalid("empty dataset"))?;
    let d = data.len() / m;
    let mut out = Vec::with_capacity(n * d);
    for _ in 0..n {
        let i = rng.gen_range(0..m);
        out.extend_from_slice(&data.data()[i * d..(i + 1) * d]);
    }
    let mut shape = data.shape().to_vec();
    shape[0] = n;
    Tensor::new(shape, out)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IterRecord {
    /// 1-based iteration within the stage.
    pub iter: usize,
    pub loss: f32,
    /// Gradient norm before clipping.
    pub grad_norm: f64,
}

/// Called after every update, e.g. to write periodic checkpoints.
pub type Observer<'a> = dyn FnMut(&IterRecord, &SpikingNet) -> Result<()> + 'a;

fn run_stage(
    net: &mut SpikingNet,
    cfg: &TrainConfig,
    lr: f32,
    schedule: &NoiseSchedule,
    data: &Tensor,
    iters: usize,
    seed: u64,
    observer: &mut Observer<'_>,
) -> Result<Vec<f32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut opt = Adam::new();
    let mut losses = Vec::with_capacity(iters);
    for iter in 1..=iters {
        let batch = draw_batch(data, cfg.batch_size, &mut rng)?;
        let (loss, mut grads) = loss_and_grads(net, schedule, &batch, &mut rng)?;
        if !loss.is_finite() {
            return Err(Error::Diverged { iter, loss });
        }
        let grad_norm = clip_global_norm(&mut grads, cfg.clip);
        if !grad_norm.is_finite() {
            return Err(Error::Diverged { iter, loss });
        }
        opt.update(net, &grads, lr, cfg)?;
        losses.push(loss);
        observer(
            &IterRecord {
                iter,
                loss,
                grad_norm,
            },
            net,
        )?;
    }
    Ok(losses)
}

fn check_schedule(net: &SpikingNet, schedule: &NoiseSchedule) -> Result<()> {
    if net.config().t_diff != schedule.t_diff() {
        return Err(Error::Config(format!(
            "network expects {} diffusion steps, schedule has {}",
            net.config().t_diff,
            schedule.t_diff()
        )));
    }
    Ok(())
}

/// Stage 1: trains a pre-spike network. Returns per-iteration losses.
pub fn train_stage1(
    net: &mut SpikingNet,
    cfg: &TrainConfig,
    schedule: &NoiseSchedule,
    data: &Tensor,
    observer: &mut Observer<'_>,
) -> Result<Vec<f32>> {
    cfg.validate()?;
    check_schedule(net, schedule)?;
    if net.kind() != BlockKind::PreSpike {
        return Err(Error::invalid("stage 1 expects a pre-spike network"));
    }
    run_stage(net, cfg, cfg.lr, schedule, data, cfg.stage1_iters, cfg.seed, observer)
}

/// Stage 2: converts to TSM blocks and fine-tunes weights and temporal
/// parameters with a fresh optimizer state at `finetune_lr`.
pub fn finetune_stage2(
    net: &mut SpikingNet,
    cfg: &TrainConfig,
    schedule: &NoiseSchedule,
    data: &Tensor,
    observer: &mut Observer<'_>,
) -> Result<Vec<f32>> {
    cfg.validate()?;
    check_schedule(net, schedule)?;
    if net.kind() != BlockKind::PreSpike {
        return Err(Error::invalid("stage 2 expects a pre-spike network"));
    }
    net.convert_to_tsm()?;
    let seed = cfg.seed ^ 0x5eed_0002;
    run_stage(net, cfg, cfg.finetune_lr, schedule, data, cfg.stage2_iters, seed, observer)
}

/// Trailing moving average with the given window (shorter at the start).
pub fn smoothed(losses: &[f32], window: usize) -> Vec<f64> {
    let w = window.max(1);
    let mut acc = 0.0f64;
    let mut out = Vec::with_capacity(losses.len());
    for (i, &l) in losses.iter().enumerate() {
        acc += l as f64;
        if i >= w {
            acc -= losses[i - w] as f64;
        }
        out.push(acc / (i + 1).min(w) as f64);
    }
    out
}

/// `iter,loss` rows, 1-based.
pub fn write_loss_csv<W: Write>(mut w: W, losses: &[f32]) -> Result<()> {
    writeln!(w, "iter,loss")?;
    for (i, l) in losses.iter().enumerate() {
        writeln!(w, "{},{}", i + 1, l)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests;
