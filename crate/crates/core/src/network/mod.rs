//! Spiking denoisers built from pre-spike residual blocks.
//!
//! Activations between blocks are real-valued and time-major
//! (`[T·N, ...]`); every spike site is `spike(LIF(·))` over those values.
//! After [`SpikingNet::convert_to_tsm`] each post-synaptic current feeding a
//! neuron is scaled per time step by a learned vector `p`.

pub mod checkpoint;
mod params;
mod sew;

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use params::ParamStore;
pub use sew::{sew_forward, SewBlock, SewOutput, SewSite};

use crate::autodiff::{BatchStats, BnMode, Graph, Var};
use crate::error::{Error, Result};
use crate::neuron::{lif_run_var, LifParams};
use crate::tensor::Tensor;

/// Momentum of the running-statistics update.
pub const BN_MOMENTUM: f32 = 0.1;
/// Suffix of temporal scaling parameters.
pub const TSM_SUFFIX: &str = ".tsm_p";

#[derive(Clone, Debug, PartialEq)]
pub enum Arch {
    /// Images `[N, channels, height, width]`.
    Unet {
        channels: usize,
        height: usize,
        width: usize,
        base: usize,
        mults: Vec<usize>,
        blocks_per_stage: usize,
    },
    /// Vectors `[N, dim]`.
    Mlp {
        dim: usize,
        hidden: usize,
        blocks: usize,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetConfig {
    pub arch: Arch,
    pub t_snn: usize,
    pub emb_dim: usize,
    pub t_diff: usize,
    pub lif: LifParams,
}

impl NetConfig {
    /// Desk-scale image preset.
    pub fn desk_unet(channels: usize, height: usize, width: usize, t_snn: usize) -> Self {
        Self {
            arch: Arch::Unet {
                channels,
                height,
                width,
                base: 16,
                mults: vec![1, 2],
                blocks_per_stage: 2,
            },
            t_snn,
            emb_dim: 64,
            t_diff: 1000,
            lif: LifParams::default(),
        }
    }

    /// The 32×32 RGB configuration from the original hyperparameter table.
    pub fn large_unet(t_snn: usize) -> Self {
        Self {
            arch: Arch::Unet {
                channels: 3,
                height: 32,
                width: 32,
                base: 128,
                mults: vec![1, 2, 2, 4],
                blocks_per_stage: 2,
            },
            t_snn,
            emb_dim: 512,
            t_diff: 1000,
            lif: LifParams::default(),
        }
    }

    /// Small dense denoiser for low-dimensional data.
    pub fn tiny_mlp(dim: usize, t_snn: usize) -> Self {
        Self {
            arch: Arch::Mlp {
                dim,
                hidden: 64,
                blocks: 2,
            },
            t_snn,
            emb_dim: 32,
            t_diff: 1000,
            lif: LifParams::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.t_snn == 0 {
            return Err(Error::Config("t_snn must be >= 1".into()));
        }
        if self.t_diff == 0 {
            return Err(Error::Config("t_diff must be >= 1".into()));
        }
        if self.emb_dim < 2 {
            return Err(Error::Config("emb_dim must be >= 2".into()));
        }
        match &self.arch {
            Arch::Unet {
                channels,
                height,
                width,
                base,
                mults,
                blocks_per_stage,
            } => {
                if *channels == 0 || *base == 0 || *blocks_per_stage == 0 {
                    return Err(Error::Config("unet sizes must be >= 1".into()));
                }
                if mults.is_empty() || mults.contains(&0) {
                    return Err(Error::Config("unet multipliers must be non-empty and >= 1".into()));
                }
                let f = 1usize << (mults.len() - 1);
                if *height == 0 || *width == 0 || height % f != 0 || width % f != 0 {
                    return Err(Error::Config(format!(
                        "image {height}x{width} must be divisible by {f} for {} stages",
                        mults.len()
                    )));
                }
            }
            Arch::Mlp { dim, hidden, .. } => {
                if *dim == 0 || *hidden == 0 {
                    return Err(Error::Config("mlp sizes must be >= 1".into()));
                }
            }
        }
        Ok(())
    }

    /// Per-sample input shape.
    pub fn sample_shape(&self) -> Vec<usize> {
        match &self.arch {
            Arch::Unet {
                channels,
                height,
                width,
                ..
            } => vec![*channels, *height, *width],
            Arch::Mlp { dim, .. } => vec![*dim],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BlockKind {
    PreSpike,
    Tsm,
}

/// Batch-norm statistics source and leaf type for a forward pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; parameters are gradient leaves.
    Train,
    /// Running statistics; parameters are constants.
    Eval,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerKind {
    Conv,
    Dense,
}

impl LayerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LayerKind::Conv => "conv",
            LayerKind::Dense => "dense",
        }
    }
}

/// One weighted layer seen during a forward pass.
#[derive(Clone, Debug)]
pub struct LayerRecord {
    pub id: String,
    pub kind: LayerKind,
    /// Multiply-accumulates per sample for one evaluation.
    pub flops: u64,
    /// `Some` when the layer consumes a spike train.
    pub spike_input: Option<Var>,
}

/// Everything a forward pass leaves behind besides the graph.
#[derive(Debug)]
pub struct Forward {
    pub output: Var,
    /// Leaf for each parameter used.
    pub params: BTreeMap<String, Var>,
    /// Batch statistics per norm layer (train mode only).
    pub bn_stats: Vec<(String, BatchStats)>,
    pub spike_sites: Vec<Var>,
    pub layers: Vec<LayerRecord>,
    /// `(encoder stage output shape, decoder skip input shape)` per stage.
    pub skip_shapes: Vec<(Vec<usize>, Vec<usize>)>,
}

/// A spiking denoiser: parameters plus the architecture that uses them.
#[derive(Clone, Debug)]
pub struct SpikingNet {
    config: NetConfig,
    kind: BlockKind,
    store: ParamStore,
    threshold_scale: f32,
}

enum Init {
    Fan(usize),
    Zeros,
    Ones,
}

impl SpikingNet {
    /// Fresh pre-spike network with seeded initialization.
    pub fn new(config: NetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        for (name, shape, init) in declare(&config) {
            let t = match init {
                Init::Fan(fan) => {
                    Tensor::randn(&shape, &mut rng).scale(1.0 / (fan.max(1) as f32).sqrt())
                }
                Init::Zeros => Tensor::zeros(&shape),
                Init::Ones => Tensor::ones(&shape),
            };
            store.insert_param(name, t);
        }
        for name in norm_layers(&config) {
            let ch = store.param(&format!("{name}.gamma"))?.len();
            store.insert_buffer(format!("{name}.running_mean"), Tensor::zeros(&[ch]));
            store.insert_buffer(format!("{name}.running_var"), Tensor::ones(&[ch]));
        }
        Ok(Self {
            config,
            kind: BlockKind::PreSpike,
            store,
            threshold_scale: 1.0,
        })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn kind(&self) -> BlockKind {
        self.kind
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn num_params(&self) -> usize {
        self.store.num_params()
    }

    /// Names of the layers whose currents feed a neuron.
    pub fn conv_sites(&self) -> Vec<String> {
        conv_sites(&self.config)
    }

    pub fn threshold_scale(&self) -> f32 {
        self.threshold_scale
    }

    /// Multiplies every spiking threshold by `rho` (relative to the trained
    /// value) until reset with `rho = 1`.
    pub fn set_threshold_scale(&mut self, rho: f32) -> Result<()> {
        self.config.lif.with_threshold_scale(rho)?;
        self.threshold_scale = rho;
        Ok(())
    }

    /// Neuron constants in effect, threshold scale applied.
    pub fn effective_lif(&self) -> LifParams {
        if self.threshold_scale == 1.0 {
            self.config.lif
        } else {
            self.config
                .lif
                .with_threshold_scale(self.threshold_scale)
                .unwrap_or(self.config.lif)
        }
    }

    /// Adds all-ones temporal parameters at every conv site.
    pub fn convert_to_tsm(&mut self) -> Result<()> {
        if self.kind == BlockKind::Tsm {
            return Err(Error::invalid("network already uses TSM blocks"));
        }
        for site in conv_sites(&self.config) {
            self.store
                .insert_param(format!("{site}{TSM_SUFFIX}"), Tensor::ones(&[self.config.t_snn]));
        }
        self.kind = BlockKind::Tsm;
        Ok(())
    }

    /// Temporal parameters by site, empty for pre-spike networks.
    pub fn tsm_params(&self) -> Vec<(String, Tensor)> {
        self.store
            .params()
            .filter(|(k, _)| k.ends_with(TSM_SUFFIX))
            .map(|(k, v)| (k.to_string(), v.clone()))
            .collect()
    }

    /// Exponential running-average update from train-mode batch statistics.
    pub fn update_running_stats(&mut self, stats: &[(String, BatchStats)]) -> Result<()> {
        let m = BN_MOMENTUM;
        for (name, s) in stats {
            let mean = self.store.buffer_mut(&format!("{name}.running_mean"))?;
            for (r, &b) in mean.data_mut().iter_mut().zip(&s.mean) {
                *r = (1.0 - m) * *r + m * b;
            }
            let var = self.store.buffer_mut(&format!("{name}.running_var"))?;
            for (r, &b) in var.data_mut().iter_mut().zip(&s.var) {
                *r = (1.0 - m) * *r + m * b;
            }
        }
        Ok(())
    }

    /// Records the denoiser on `g`. `x` is `[N, ...sample_shape]` and `t`
    /// holds one diffusion step in `1..=t_diff` per sample.
    pub fn forward(&self, g: &mut Graph, x: Var, t: &[usize], mode: Mode) -> Result<Forward> {
        let mut shape = vec![t.len()];
        shape.extend(self.config.sample_shape());
        if g.shape(x) != shape.as_slice() {
            return Err(Error::shape(format!(
                "input {:?} does not match expected {shape:?}",
                g.shape(x)
            )));
        }
        if t.is_empty() {
            return Err(Error::shape("empty batch"));
        }
        for &s in t {
            if s == 0 || s > self.config.t_diff {
                return Err(Error::invalid(format!(
                    "diffusion step {s} outside 1..={}",
                    self.config.t_diff
                )));
            }
        }
        let mut cx = Ctx {
            net: self,
            g,
            mode,
            lif: self.effective_lif(),
            steps: self.config.t_snn,
            out: Forward {
                output: x,
                params: BTreeMap::new(),
                bn_stats: Vec::new(),
                spike_sites: Vec::new(),
                layers: Vec::new(),
                skip_shapes: Vec::new(),
            },
        };
        let emb = cx.time_embedding(t)?;
        let y = match &self.config.arch {
            Arch::Unet {
                base,
                mults,
                blocks_per_stage,
                ..
            } => cx.unet(x, emb, *base, mults, *blocks_per_stage)?,
            Arch::Mlp { blocks, .. } => cx.mlp(x, emb, *blocks)?,
        };
        cx.out.output = y;
        Ok(cx.out)
    }

    /// Eval-mode prediction on plain tensors.
    pub fn predict(&self, x: &Tensor, t: &[usize]) -> Result<Tensor> {
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let f = self.forward(&mut g, xv, t, Mode::Eval)?;
        Ok(g.value(f.output).clone())
    }

    pub fn save<W: Write>(&self, w: W) -> Result<()> {
        checkpoint::write_records(w, checkpoint::MODEL_MAGIC, &self.store.records())
    }

    /// Loads weights saved by [`SpikingNet::save`] into a network built
    /// from the same config. TSM parameters in the file convert the
    /// network first.
    pub fn load<R: Read>(config: NetConfig, r: R) -> Result<Self> {
        let records = checkpoint::read_records(r, checkpoint::MODEL_MAGIC)?;
        let mut net = Self::new(config, 0)?;
        if records.iter().any(|(k, _)| k.ends_with(TSM_SUFFIX)) {
            net.convert_to_tsm()?;
        }
        let expected = net.store.records().len();
        if records.len() != expected {
            return Err(Error::Format(format!(
                "checkpoint holds {} records, network expects {expected}",
                records.len()
            )));
        }
        for (name, t) in records {
            net.store.assign(&name, t)?;
        }
        Ok(net)
    }
}

/// Sinusoidal encoding of a non-negative integer: `dim/2` sines followed by
/// `dim/2` cosines at geometrically spaced frequencies (odd `dim` pads a
/// trailing zero).
pub fn sinusoidal_embedding(index: usize, dim: usize) -> Vec<f32> {
    let half = dim / 2;
    let mut out = vec![0.0f32; dim];
    for k in 0..half {
        let freq = (-(10000f64.ln()) * k as f64 / half as f64).exp();
        let a = index as f64 * freq;
        out[k] = a.sin() as f32;
        out[half + k] = a.cos() as f32;
    }
    out
}

struct Ctx<'a> {
    net: &'a SpikingNet,
    g: &'a mut Graph,
    mode: Mode,
    lif: LifParams,
    steps: usize,
    out: Forward,
}

impl Ctx<'_> {
    fn p(&mut self, name: &str) -> Result<Var> {
        if let Some(&v) = self.out.params.get(name) {
            return Ok(v);
        }
        let t = self.net.store.param(name)?.clone();
        let v = match self.mode {
            Mode::Train => self.g.param(t),
            Mode::Eval => self.g.constant(t),
        };
        self.out.params.insert(name.to_string(), v);
        Ok(v)
    }

    fn spike_site(&mut self, x: Var) -> Result<Var> {
        let run = lif_run_var(self.g, &self.lif, x, self.steps)?;
        self.out.spike_sites.push(run.spikes);
        Ok(run.spikes)
    }

    fn conv(&mut self, name: &str, x: Var, stride: usize, pad: usize, spike_input: bool) -> Result<Var> {
        let w = self.p(&format!("{name}.w"))?;
        let y = self.g.conv2d(x, w, stride, pad)?;
        let (ws, ys) = (self.g.shape(w).to_vec(), self.g.shape(y).to_vec());
        let flops = (ws[0] * ys[2] * ys[3] * ws[1] * ws[2] * ws[3]) as u64;
        self.record(name, LayerKind::Conv, flops, spike_input.then_some(x));
        Ok(y)
    }

    fn dense(&mut self, name: &str, x: Var, bias: bool, spike_input: bool) -> Result<Var> {
        let w = self.p(&format!("{name}.w"))?;
        let b = if bias { Some(self.p(&format!("{name}.b"))?) } else { None };
        let y = self.g.linear(x, w, b)?;
        let ws = self.g.shape(w);
        let flops = (ws[0] * ws[1]) as u64;
        self.record(name, LayerKind::Dense, flops, spike_input.then_some(x));
        Ok(y)
    }

    fn record(&mut self, id: &str, kind: LayerKind, flops: u64, spike_input: Option<Var>) {
        self.out.layers.push(LayerRecord {
            id: id.to_string(),
            kind,
            flops,
            spike_input,
        });
    }

    fn norm(&mut self, name: &str, x: Var) -> Result<Var> {
        let gamma = self.p(&format!("{name}.gamma"))?;
        let beta = self.p(&format!("{name}.beta"))?;
        match self.mode {
            Mode::Train => {
                let (y, stats) = self.g.batchnorm(x, gamma, beta, BnMode::Train)?;
                if let Some(s) = stats {
                    self.out.bn_stats.push((name.to_string(), s));
                }
                Ok(y)
            }
            Mode::Eval => {
                let mean = self.net.store.buffer(&format!("{name}.running_mean"))?;
                let var = self.net.store.buffer(&format!("{name}.running_var"))?;
                let mode = BnMode::Eval {
                    mean: mean.data(),
                    var: var.data(),
                };
                Ok(self.g.batchnorm(x, gamma, beta, mode)?.0)
            }
        }
    }

    /// Temporal scaling of a post-synaptic current (TSM networks only).
    fn tsm(&mut self, site: &str, x: Var) -> Result<Var> {
        if self.net.kind == BlockKind::PreSpike {
            return Ok(x);
        }
        let p = self.p(&format!("{site}{TSM_SUFFIX}"))?;
        self.g.scale_time(x, p, self.steps)
    }

    fn time_embedding(&mut self, t: &[usize]) -> Result<Var> {
        let dim = self.net.config.emb_dim;
        let mut data = Vec::with_capacity(t.len() * dim);
        for &s in t {
            data.extend(sinusoidal_embedding(s - 1, dim));
        }
        let e = self.g.constant(Tensor::new(vec![t.len(), dim], data)?);
        let h = self.dense("temb.fc1", e, true, false)?;
        let h = self.g.silu(h);
        let h = self.dense("temb.fc2", h, true, false)?;
        Ok(self.g.silu(h))
    }

    /// Pre-spike (or TSM) residual block; `site` builds `BN(W·S)` for
    /// conv or dense layers.
    fn block(&mut self, name: &str, o_in: Var, emb: Var, dense: bool) -> Result<Var> {
        let s = self.spike_site(o_in)?;
        let i1 = self.synapse(&format!("{name}.conv1"), s, dense)?;
        let i1 = self.tsm(&format!("{name}.conv1"), i1)?;
        let e = self.dense(&format!("{name}.temb"), emb, true, false)?;
        let i1 = self.g.add_sample_channel(i1, e, self.steps)?;
        let o_mid = self.g.add(i1, o_in)?;
        let s2 = self.spike_site(o_mid)?;
        let i2 = self.synapse(&format!("{name}.conv2"), s2, dense)?;
        let i2 = self.tsm(&format!("{name}.conv2"), i2)?;
        self.g.add(i2, o_mid)
    }

    fn synapse(&mut self, site: &str, s: Var, dense: bool) -> Result<Var> {
        let y = if dense {
            self.dense(site, s, false, true)?
        } else {
            self.conv(site, s, 1, 1, true)?
        };
        self.norm(&format!("{site}.bn"), y)
    }

    fn unet(&mut self, x: Var, emb: Var, base: usize, mults: &[usize], per: usize) -> Result<Var> {
        // The encoded input is identical at every step, so the stem runs once.
        let h = self.conv("in.conv", x, 1, 1, false)?;
        let h = self.norm("in.conv.bn", h)?;
        let h = self.g.replicate_time(h, self.steps)?;
        let mut h = self.tsm("in.conv", h)?;
        let depth = mults.len();
        let mut skips = Vec::with_capacity(depth);
        for i in 0..depth {
            for b in 0..per {
                h = self.block(&format!("down{i}.{b}"), h, emb, false)?;
            }
            skips.push(h);
            if i + 1 < depth {
                let s = self.spike_site(h)?;
                let site = format!("down{i}.resample");
                let y = self.conv(&site, s, 2, 1, true)?;
                let y = self.norm(&format!("{site}.bn"), y)?;
                h = self.tsm(&site, y)?;
            }
        }
        for i in (0..depth.saturating_sub(1)).rev() {
            let s = self.spike_site(h)?;
            let s = self.g.upsample2x(s)?;
            let site = format!("up{i}.resample");
            let y = self.conv(&site, s, 1, 1, true)?;
            let y = self.norm(&format!("{site}.bn"), y)?;
            let y = self.tsm(&site, y)?;
            self.out
                .skip_shapes
                .push((self.g.shape(skips[i]).to_vec(), self.g.shape(y).to_vec()));
            h = self.g.add(y, skips[i])?;
            for b in 0..per {
                h = self.block(&format!("up{i}.{b}"), h, emb, false)?;
            }
        }
        debug_assert_eq!(self.g.shape(h)[1], base * mults[0]);
        let u = self.decoder_potentials(h)?;
        let y = self.conv("out.proj", u, 1, 1, false)?;
        let b = self.p("out.proj.b")?;
        self.g.add_channel_bias(y, b)
    }

    fn mlp(&mut self, x: Var, emb: Var, blocks: usize) -> Result<Var> {
        let h = self.dense("in.fc", x, false, false)?;
        let h = self.norm("in.fc.bn", h)?;
        let h = self.g.replicate_time(h, self.steps)?;
        let mut h = self.tsm("in.fc", h)?;
        for b in 0..blocks {
            h = self.block(&format!("blk{b}"), h, emb, true)?;
        }
        let u = self.decoder_potentials(h)?;
        self.dense("out.proj", u, true, false)
    }

    /// Time-mean of the pre-reset potentials of a final neuron layer.
    fn decoder_potentials(&mut self, h: Var) -> Result<Var> {
        let run = lif_run_var(self.g, &self.lif, h, self.steps)?;
        self.out.spike_sites.push(run.spikes);
        self.g.mean_time(run.potentials, self.steps)
    }
}

/// `(name, shape, init)` for every trainable tensor.
fn declare(c: &NetConfig) -> Vec<(String, Vec<usize>, Init)> {
    let mut out = Vec::new();
    let d = c.emb_dim;
    let dense = |out: &mut Vec<(String, Vec<usize>, Init)>, name: &str, i: usize, o: usize, bias: bool| {
        out.push((format!("{name}.w"), vec![i, o], Init::Fan(i)));
        if bias {
            out.push((format!("{name}.b"), vec![o], Init::Zeros));
        }
    };
    let norm = |out: &mut Vec<(String, Vec<usize>, Init)>, name: &str, ch: usize| {
        out.push((format!("{name}.gamma"), vec![ch], Init::Ones));
        out.push((format!("{name}.beta"), vec![ch], Init::Zeros));
    };
    let conv = |out: &mut Vec<(String, Vec<usize>, Init)>, name: &str, i: usize, o: usize| {
        out.push((format!("{name}.w"), vec![o, i, 3, 3], Init::Fan(i * 9)));
    };
    dense(&mut out, "temb.fc1", d, d, true);
    dense(&mut out, "temb.fc2", d, d, true);
    match &c.arch {
        Arch::Unet {
            channels,
            base,
            mults,
            blocks_per_stage,
            ..
        } => {
            let ch: Vec<usize> = mults.iter().map(|m| m * base).collect();
            conv(&mut out, "in.conv", *channels, ch[0]);
            norm(&mut out, "in.conv.bn", ch[0]);
            let block = |out: &mut Vec<(String, Vec<usize>, Init)>, name: &str, w: usize| {
                for site in ["conv1", "conv2"] {
                    conv(out, &format!("{name}.{site}"), w, w);
                    norm(out, &format!("{name}.{site}.bn"), w);
                }
                dense(out, &format!("{name}.temb"), d, w, true);
            };
            for i in 0..mults.len() {
                for b in 0..*blocks_per_stage {
                    block(&mut out, &format!("down{i}.{b}"), ch[i]);
                }
                if i + 1 < mults.len() {
                    conv(&mut out, &format!("down{i}.resample"), ch[i], ch[i + 1]);
                    norm(&mut out, &format!("down{i}.resample.bn"), ch[i + 1]);
                    conv(&mut out, &format!("up{i}.resample"), ch[i + 1], ch[i]);
                    norm(&mut out, &format!("up{i}.resample.bn"), ch[i]);
                    for b in 0..*blocks_per_stage {
                        block(&mut out, &format!("up{i}.{b}"), ch[i]);
                    }
                }
            }
            conv(&mut out, "out.proj", ch[0], *channels);
            out.push(("out.proj.b".into(), vec![*channels], Init::Zeros));
        }
        Arch::Mlp { dim, hidden, blocks } => {
            dense(&mut out, "in.fc", *dim, *hidden, false);
            norm(&mut out, "in.fc.bn", *hidden);
            for b in 0..*blocks {
                for site in ["conv1", "conv2"] {
                    dense(&mut out, &format!("blk{b}.{site}"), *hidden, *hidden, false);
                    norm(&mut out, &format!("blk{b}.{site}.bn"), *hidden);
                }
                dense(&mut out, &format!("blk{b}.temb"), d, *hidden, true);
            }
            dense(&mut out, "out.proj", *hidden, *dim, true);
        }
    }
    out
}

fn norm_layers(c: &NetConfig) -> Vec<String> {
    declare(c)
        .into_iter()
        .filter_map(|(n, _, _)| n.strip_suffix(".gamma").map(str::to_string))
        .collect()
}

fn conv_sites(c: &NetConfig) -> Vec<String> {
    norm_layers(c)
        .into_iter()
        .filter_map(|n| n.strip_suffix(".bn").map(str::to_string))
        .collect()
}
