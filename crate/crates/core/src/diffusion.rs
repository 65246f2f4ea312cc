//! Discrete diffusion: linear β schedule, forward perturbation, and three
//! reverse samplers (ancestral, deterministic DDIM, optimal-variance).
//!
//! Schedule constants are kept in `f64`; tensors stay `f32`. Timesteps run
//! `1..=t_diff`, with `ᾱ_0 = 1` standing for clean data.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::network::SpikingNet;
use crate::tensor::Tensor;

pub const DEFAULT_T_DIFF: usize = 1000;
pub const DEFAULT_BETA_1: f64 = 1e-4;
pub const DEFAULT_BETA_T: f64 = 0.02;

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    beta: Vec<f64>,
    alpha_bar: Vec<f64>,
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self::linear(DEFAULT_T_DIFF, DEFAULT_BETA_1, DEFAULT_BETA_T)
            .expect("default schedule is valid")
    }
}

impl NoiseSchedule {
    /// β linear from `beta_1` at t = 1 to `beta_t` at t = `t_diff`.
    pub fn linear(t_diff: usize, beta_1: f64, beta_t: f64) -> Result<Self> {
        if t_diff == 0 {
            return Err(Error::invalid("t_diff must be >= 1"));
        }
        if !(beta_1 > 0.0 && beta_t < 1.0 && beta_1 <= beta_t) {
            return Err(Error::invalid(format!(
                "need 0 < beta_1 <= beta_T < 1, got {beta_1} and {beta_t}"
            )));
        }
        let mut beta = vec![0.0; t_diff + 1];
        let mut alpha_bar = vec![1.0; t_diff + 1];
        for t in 1..=t_diff {
            beta[t] = if t_diff == 1 {
                beta_1
            } else {
                beta_1 + (beta_t - beta_1) * (t - 1) as f64 / (t_diff - 1) as f64
            };
            alpha_bar[t] = alpha_bar[t - 1] * (1.0 - beta[t]);
        }
        Ok(Self { beta, alpha_bar })
    }

    pub fn t_diff(&self) -> usize {
        self.beta.len() - 1
    }

    fn check(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.t_diff() {
            return Err(Error::invalid(format!(
                "timestep {t} outside 1..={}",
                self.t_diff()
            )));
        }
        Ok(())
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        1.0 - self.beta[t]
    }

    /// `ᾱ_t`, with `ᾱ_0 = 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    /// Variance of `q(x_s | x_t, x_0)` for `s < t`.
    pub fn posterior_variance(&self, s: usize, t: usize) -> f64 {
        let (ab_s, ab_t) = (self.alpha_bar[s], self.alpha_bar[t]);
        (1.0 - ab_s) / (1.0 - ab_t) * (1.0 - ab_t / ab_s)
    }

    /// Half log signal-to-noise ratio `ln(√ᾱ_t / √(1−ᾱ_t))`.
    pub fn log_snr(&self, t: usize) -> f64 {
        let ab = self.alpha_bar[t];
        0.5 * (ab / (1.0 - ab)).ln()
    }
}

/// `x_t = √ᾱ_t·x0 + √(1−ᾱ_t)·ε`
pub fn q_sample(schedule: &NoiseSchedule, x0: &Tensor, t: usize, eps: &Tensor) -> Result<Tensor> {
    schedule.check(t)?;
    let ab = schedule.alpha_bar(t);
    let (a, b) = (ab.sqrt() as f32, (1.0 - ab).sqrt() as f32);
    x0.zip_map(eps, |x, e| a * x + b * e)
}

/// Per-sample version of [`q_sample`]: row `i` of `x0[N, ...]` uses `t[i]`.
pub fn q_sample_batch(
    schedule: &NoiseSchedule,
    x0: &Tensor,
    t: &[usize],
    eps: &Tensor,
) -> Result<Tensor> {
    x0.expect_same_shape(eps, "q_sample")?;
    let n = x0.shape().first().copied().unwrap_or(0);
    if n != t.len() || n == 0 {
        return Err(Error::shape(format!("{} timesteps for a batch of {n}", t.len())));
    }
    let d = x0.len() / n;
    let mut out = Vec::with_capacity(x0.len());
    for (i, &ti) in t.iter().enumerate() {
        schedule.check(ti)?;
        let ab = schedule.alpha_bar(ti);
        let (a, b) = (ab.sqrt() as f32, (1.0 - ab).sqrt() as f32);
        let r = i * d..(i + 1) * d;
        out.extend(
            x0.data()[r.clone()]
                .iter()
                .zip(&eps.data()[r])
                .map(|(&x, &e)| a * x + b * e),
        );
    }
    Tensor::new(x0.shape().to_vec(), out)
}

/// Anything that predicts the noise in `x_t`.
pub trait Denoiser {
    /// `x[N, ...]`, one timestep per row.
    fn predict_noise(&mut self, x: &Tensor, t: &[usize]) -> Result<Tensor>;

    fn threshold_scale(&self) -> f32 {
        1.0
    }

    fn set_threshold_scale(&mut self, rho: f32) -> Result<()> {
        if !(rho > 0.0) {
            return Err(Error::invalid(format!("threshold scale must be > 0, got {rho}")));
        }
        Ok(())
    }
}

impl Denoiser for SpikingNet {
    fn predict_noise(&mut self, x: &Tensor, t: &[usize]) -> Result<Tensor> {
        self.predict(x, t)
    }

    fn threshold_scale(&self) -> f32 {
        SpikingNet::threshold_scale(self)
    }

    fn set_threshold_scale(&mut self, rho: f32) -> Result<()> {
        SpikingNet::set_threshold_scale(self, rho)
    }
}

/// Exact noise predictor for data distributed as N(0, I):
/// `ε*(x_t, t) = √(1−ᾱ_t)·x_t`.
#[derive(Clone, Debug)]
pub struct GaussianOracle {
    pub schedule: NoiseSchedule,
}

impl Denoiser for GaussianOracle {
    fn predict_noise(&mut self, x: &Tensor, t: &[usize]) -> Result<Tensor> {
        let n = x.shape().first().copied().unwrap_or(0);
        if n != t.len() || n == 0 {
            return Err(Error::shape(format!("{} timesteps for a batch of {n}", t.len())));
        }
        let d = x.len() / n;
        let mut out = Vec::with_capacity(x.len());
        for (i, &ti) in t.iter().enumerate() {
            self.schedule.check(ti)?;
            let k = (1.0 - self.schedule.alpha_bar(ti)).sqrt() as f32;
            out.extend(x.data()[i * d..(i + 1) * d].iter().map(|&v| k * v));
        }
        Tensor::new(x.shape().to_vec(), out)
    }
}

/// Increasing subsequence of timesteps ending at `t_diff`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Trajectory {
    steps: Vec<usize>,
}

impl Trajectory {
    /// `S` steps at uniform stride including both `1` and `t_diff`:
    /// `t_i = round(1 + i·(t_diff−1)/(S−1))`.
    pub fn uniform(t_diff: usize, n_steps: usize) -> Result<Self> {
        if n_steps == 0 || n_steps > t_diff {
            return Err(Error::invalid(format!(
                "sampling steps must be in 1..={t_diff}, got {n_steps}"
            )));
        }
        if n_steps == 1 {
            return Ok(Self { steps: vec![t_diff] });
        }
        let stride = (t_diff - 1) as f64 / (n_steps - 1) as f64;
        let steps = (0..n_steps)
            .map(|i| (1.0 + i as f64 * stride).round() as usize)
            .collect();
        Ok(Self { steps })
    }

    pub fn full(t_diff: usize) -> Self {
        Self {
            steps: (1..=t_diff).collect(),
        }
    }

    pub fn steps(&self) -> &[usize] {
        &self.steps
    }

    /// `(t, s)` transitions from `t_S` down to `t_1 → 0`.
    pub fn transitions(&self) -> Vec<(usize, usize)> {
        (0..self.steps.len())
            .rev()
            .map(|i| (self.steps[i], if i == 0 { 0 } else { self.steps[i - 1] }))
            .collect()
    }
}

fn check_pair(schedule: &NoiseSchedule, t: usize, s: usize) -> Result<()> {
    schedule.check(t)?;
    if s >= t {
        return Err(Error::invalid(format!("step must go backwards, got {t} -> {s}")));
    }
    Ok(())
}

/// Ancestral step `t → t−1`:
/// `x_{t−1} = (x_t − β_t/√(1−ᾱ_t)·ε̂)/√α_t + σ_t·z`, `σ_t² = β̃_t`.
pub fn ddpm_step(
    schedule: &NoiseSchedule,
    eps_hat: &Tensor,
    x_t: &Tensor,
    t: usize,
    z: &Tensor,
) -> Result<Tensor> {
    schedule.check(t)?;
    let beta = schedule.beta(t);
    let c_eps = (beta / (1.0 - schedule.alpha_bar(t)).sqrt()) as f32;
    let inv = (1.0 / schedule.alpha(t).sqrt()) as f32;
    let sigma = if t == 1 {
        0.0
    } else {
        schedule.posterior_variance(t - 1, t).sqrt() as f32
    };
    let mean = x_t.zip_map(eps_hat, |x, e| inv * (x - c_eps * e))?;
    mean.zip_map(z, |m, z| m + sigma * z)
}

/// Ancestral step over a skip `t → s` using the posterior `q(x_s|x_t, x̂0)`.
/// Equals [`ddpm_step`] in exact arithmetic when `s = t−1`.
pub fn ddpm_skip_step(
    schedule: &NoiseSchedule,
    eps_hat: &Tensor,
    x_t: &Tensor,
    t: usize,
    s: usize,
    z: &Tensor,
) -> Result<Tensor> {
    check_pair(schedule, t, s)?;
    let (ab_s, ab_t) = (schedule.alpha_bar(s), schedule.alpha_bar(t));
    let ratio = ab_t / ab_s;
    let c0 = ab_s.sqrt() * (1.0 - ratio) / (1.0 - ab_t);
    let ct = ratio.sqrt() * (1.0 - ab_s) / (1.0 - ab_t);
    let x0 = predict_x0(schedule, eps_hat, x_t, t)?;
    let sigma = if s == 0 {
        0.0
    } else {
        schedule.posterior_variance(s, t).sqrt() as f32
    };
    let (c0, ct) = (c0 as f32, ct as f32);
    let mean = x0.zip_map(x_t, |a, b| c0 * a + ct * b)?;
    mean.zip_map(z, |m, z| m + sigma * z)
}

/// `x̂0 = (x_t − √(1−ᾱ_t)·ε̂)/√ᾱ_t`
pub fn predict_x0(schedule: &NoiseSchedule, eps_hat: &Tensor, x_t: &Tensor, t: usize) -> Result<Tensor> {
    let ab = schedule.alpha_bar(t);
    let (a, b) = ((1.0 / ab.sqrt()) as f32, (1.0 - ab).sqrt() as f32);
    x_t.zip_map(eps_hat, |x, e| a * (x - b * e))
}

/// Deterministic step `t → s`: `x_s = √ᾱ_s·x̂0 + √(1−ᾱ_s)·ε̂`.
pub fn ddim_step(
    schedule: &NoiseSchedule,
    eps_hat: &Tensor,
    x_t: &Tensor,
    t: usize,
    s: usize,
) -> Result<Tensor> {
    check_pair(schedule, t, s)?;
    let x0 = predict_x0(schedule, eps_hat, x_t, t)?;
    let ab_s = schedule.alpha_bar(s);
    let (a, b) = (ab_s.sqrt() as f32, (1.0 - ab_s).sqrt() as f32);
    x0.zip_map(eps_hat, |x, e| a * x + b * e)
}

/// The same step written with log-SNR increments:
/// `x_s = (α_s/α_t)·x_t − σ_s·(e^h − 1)·ε̂`, `h = λ_s − λ_t`.
pub fn ddim_step_log_snr(
    schedule: &NoiseSchedule,
    eps_hat: &Tensor,
    x_t: &Tensor,
    t: usize,
    s: usize,
) -> Result<Tensor> {
    check_pair(schedule, t, s)?;
    let (ab_s, ab_t) = (schedule.alpha_bar(s), schedule.alpha_bar(t));
    let (a_s, a_t) = (ab_s.sqrt(), ab_t.sqrt());
    let (sig_s, sig_t) = ((1.0 - ab_s).sqrt(), (1.0 - ab_t).sqrt());
    let c_eps = if s == 0 {
        // σ_s·e^h = α_s·σ_t/α_t stays finite as σ_s → 0.
        a_s * sig_t / a_t - sig_s
    } else {
        let h = schedule.log_snr(s) - schedule.log_snr(t);
        sig_s * h.exp_m1()
    };
    let (cx, ce) = ((a_s / a_t) as f32, c_eps as f32);
    x_t.zip_map(eps_hat, |x, e| cx * x - ce * e)
}

/// Per-step `h(t_i) = E‖ε̂‖²/d` over a trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct HStats {
    pub steps: Vec<usize>,
    pub h: Vec<f64>,
}

impl HStats {
    pub fn get(&self, t: usize) -> Result<f64> {
        self.steps
            .iter()
            .position(|&s| s == t)
            .map(|i| self.h[i])
            .ok_or_else(|| Error::invalid(format!("no h statistic for timestep {t}")))
    }

    /// The same value at every step.
    pub fn constant(trajectory: &Trajectory, h: f64) -> Self {
        Self {
            steps: trajectory.steps().to_vec(),
            h: vec![h; trajectory.steps().len()],
        }
    }
}

/// Mean and variance of the optimal-variance reverse Gaussian for `t → s`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AnalyticCoefficients {
    /// Posterior variance of `q(x_s|x_t,x_0)`, written λ² in the derivation.
    pub lambda_sq: f64,
    pub gamma: f64,
    /// Clamped to `[0, 1−ᾱ_s]`.
    pub variance: f64,
}

pub fn analytic_coefficients(schedule: &NoiseSchedule, t: usize, s: usize, h: f64) -> Result<AnalyticCoefficients> {
    check_pair(schedule, t, s)?;
    let (ab_s, ab_t) = (schedule.alpha_bar(s), schedule.alpha_bar(t));
    let lambda_sq = schedule.posterior_variance(s, t);
    let rest = (1.0 - ab_s - lambda_sq).max(0.0);
    let gamma = ab_s.sqrt() - rest.sqrt() * (ab_t / (1.0 - ab_t)).sqrt();
    let raw = lambda_sq + gamma * gamma * ((1.0 - ab_t) / ab_t) * (1.0 - h);
    let variance = raw.clamp(0.0, 1.0 - ab_s);
    Ok(AnalyticCoefficients {
        lambda_sq,
        gamma,
        variance,
    })
}

/// Optimal-variance step: mean `√ᾱ_s·x̂0 + √(1−ᾱ_s−λ²)·ε̂`, variance Σ*.
pub fn analytic_dpm_step(
    schedule: &NoiseSchedule,
    hstats: &HStats,
    eps_hat: &Tensor,
    x_t: &Tensor,
    t: usize,
    s: usize,
    z: &Tensor,
) -> Result<Tensor> {
    let c = analytic_coefficients(schedule, t, s, hstats.get(t)?)?;
    let x0 = predict_x0(schedule, eps_hat, x_t, t)?;
    let ab_s = schedule.alpha_bar(s);
    let a = ab_s.sqrt() as f32;
    let b = (1.0 - ab_s - c.lambda_sq).max(0.0).sqrt() as f32;
    let sd = c.variance.sqrt() as f32;
    let mean = x0.zip_map(eps_hat, |x, e| a * x + b * e)?;
    mean.zip_map(z, |m, z| m + sd * z)
}

/// Monte-Carlo `h(t_i)` with `x0` drawn from the rows of `data[M, ...]`.
pub fn estimate_h<D: Denoiser + ?Sized, R: Rng + ?Sized>(
    schedule: &NoiseSchedule,
    net: &mut D,
    data: &Tensor,
    trajectory: &Trajectory,
    n_mc: usize,
    rng: &mut R,
) -> Result<HStats> {
    if n_mc == 0 {
        return Err(Error::invalid("n_mc must be >= 1"));
    }
    let m = data.shape().first().copied().unwrap_or(0);
    if m == 0 {
        return Err(Error::invalid("empty dataset"));
    }
    let d = data.len() / m;
    let mut h = Vec::with_capacity(trajectory.steps().len());
    for &t in trajectory.steps() {
        let mut total = 0.0f64;
        let mut done = 0;
        while done < n_mc {
            let b = (n_mc - done).min(ESTIMATE_CHUNK);
            let idx: Vec<usize> = (0..b).map(|_| rng.gen_range(0..m)).collect();
            let mut x0 = Vec::with_capacity(b * d);
            for &i in &idx {
                x0.extend_from_slice(&data.data()[i * d..(i + 1) * d]);
            }
            let mut shape = data.shape().to_vec();
            shape[0] = b;
            let x0 = Tensor::new(shape.clone(), x0)?;
            let eps = Tensor::randn(&shape, rng);
            let ts = vec![t; b];
            let x_t = q_sample_batch(schedule, &x0, &ts, &eps)?;
            let e = net.predict_noise(&x_t, &ts)?;
            total += e.sum_sq() / d as f64;
            done += b;
        }
        h.push(total / n_mc as f64);
    }
    Ok(HStats {
        steps: trajectory.steps().to_vec(),
        h,
    })
}

const ESTIMATE_CHUNK: usize = 1024;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Solver {
    Ddpm,
    Ddim,
    Analytic,
}

impl std::str::FromStr for Solver {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ddpm" => Ok(Solver::Ddpm),
            "ddim" => Ok(Solver::Ddim),
            "analytic" => Ok(Solver::Analytic),
            other => Err(Error::invalid(format!(
                "unknown solver {other:?} (expected ddpm, ddim or analytic)"
            ))),
        }
    }
}

impl Solver {
    pub fn as_str(self) -> &'static str {
        match self {
            Solver::Ddpm => "ddpm",
            Solver::Ddim => "ddim",
            Solver::Analytic => "analytic",
        }
    }
}

#[derive(Clone, Debug)]
pub struct SampleSpec {
    pub solver: Solver,
    pub n_steps: usize,
    /// Threshold scale during sampling.
    pub rho: f32,
    pub seed: u64,
    pub n: usize,
    /// Per-sample shape.
    pub shape: Vec<usize>,
}

/// Runs a reverse chain from seeded noise. Thresholds are scaled by `rho`
/// for the duration of sampling and restored afterwards, also on error.
pub fn sample<D: Denoiser + ?Sized>(
    net: &mut D,
    schedule: &NoiseSchedule,
    spec: &SampleSpec,
    hstats: Option<&HStats>,
) -> Result<Tensor> {
    if !(spec.rho > 0.0) || !spec.rho.is_finite() {
        return Err(Error::invalid(format!("guidance scale must be > 0, got {}", spec.rho)));
    }
    if spec.n == 0 {
        return Err(Error::invalid("sample count must be >= 1"));
    }
    let trajectory = Trajectory::uniform(schedule.t_diff(), spec.n_steps)?;
    if spec.solver == Solver::Analytic {
        let h = hstats.ok_or_else(|| Error::invalid("analytic solver needs h statistics"))?;
        for &t in trajectory.steps() {
            h.get(t)?;
        }
    }
    let previous = net.threshold_scale();
    net.set_threshold_scale(previous * spec.rho)?;
    let out = run_chain(net, schedule, spec, &trajectory, hstats);
    net.set_threshold_scale(previous)?;
    out
}

fn run_chain<D: Denoiser + ?Sized>(
    net: &mut D,
    schedule: &NoiseSchedule,
    spec: &SampleSpec,
    trajectory: &Trajectory,
    hstats: Option<&HStats>,
) -> Result<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut shape = vec![spec.n];
    shape.extend_from_slice(&spec.shape);
    let mut x = Tensor::randn(&shape, &mut rng);
    for (t, s) in trajectory.transitions() {
        let ts = vec![t; spec.n];
        let eps = net.predict_noise(&x, &ts)?;
        let z = if s == 0 || spec.solver == Solver::Ddim {
            Tensor::zeros(&shape)
        } else {
            Tensor::randn(&shape, &mut rng)
        };
        x = match spec.solver {
            Solver::Ddpm if s + 1 == t => ddpm_step(schedule, &eps, &x, t, &z)?,
            Solver::Ddpm => ddpm_skip_step(schedule, &eps, &x, t, s, &z)?,
            Solver::Ddim => ddim_step(schedule, &eps, &x, t, s)?,
            Solver::Analytic => {
                let h = hstats.ok_or_else(|| Error::invalid("analytic solver needs h statistics"))?;
                analytic_dpm_step(schedule, h, &eps, &x, t, s, &z)?
            }
        };
    }
    Ok(x)
}
