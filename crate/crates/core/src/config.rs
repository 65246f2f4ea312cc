//! Flat `key = value` run configuration (TOML syntax) with command-line
//! overrides. Unknown keys are rejected.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::diffusion::{NoiseSchedule, Solver};
use crate::error::{Error, Result};
use crate::network::{Arch, NetConfig};
use crate::neuron::LifParams;
use crate::training::TrainConfig;

/// Environment variable consulted when no seed is configured.
pub const SEED_ENV: &str = "SPIKEDIFF_SEED";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// `tiny_mlp`, `desk_unet` or `large_unet`.
    pub preset: String,
    pub t_snn: usize,
    pub t_diff: usize,
    pub beta_1: f64,
    pub beta_t: f64,
    pub decay: f32,
    pub threshold: f32,
    pub surrogate_width: f32,

    /// `gmm2d`, `mnist` or `raw`.
    pub dataset: String,
    pub gmm_modes: usize,
    pub gmm_spread: f64,
    pub gmm_n: usize,
    pub mnist_images: String,
    pub mnist_labels: String,
    pub pad32: bool,
    pub raw_path: String,
    /// Image geometry when no dataset is loaded.
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    /// Hidden width for `tiny_mlp`.
    pub hidden: usize,

    pub lr: f32,
    pub finetune_lr: f32,
    pub batch_size: usize,
    pub clip: f32,
    pub stage1_iters: usize,
    pub stage2_iters: usize,
    pub checkpoint_every: usize,

    pub solver: String,
    pub steps: usize,
    pub rho: f32,
    pub n_samples: usize,
    pub n_mc: usize,
    pub seed: u64,

    pub checkpoint: String,
    pub out_dir: String,

    pub ann: String,
    pub bits: u32,
    pub n_inputs: usize,
    pub energy_batch: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            preset: "tiny_mlp".into(),
            t_snn: 4,
            t_diff: 1000,
            beta_1: 1e-4,
            beta_t: 0.02,
            decay: 1.0,
            threshold: 1.0,
            surrogate_width: 1.0,
            dataset: "gmm2d".into(),
            gmm_modes: 2,
            gmm_spread: 0.1,
            gmm_n: 4096,
            mnist_images: String::new(),
            mnist_labels: String::new(),
            pad32: true,
            raw_path: String::new(),
            channels: 1,
            height: 32,
            width: 32,
            hidden: 128,
            lr: 1e-3,
            finetune_lr: 1e-4,
            batch_size: 256,
            clip: 1.0,
            stage1_iters: 2000,
            stage2_iters: 150,
            checkpoint_every: 500,
            solver: "ddim".into(),
            steps: 50,
            rho: 1.0,
            n_samples: 16,
            n_mc: 1000,
            seed: 0,
            checkpoint: String::new(),
            out_dir: "out".into(),
            ann: String::new(),
            bits: 2,
            n_inputs: 1000,
            energy_batch: 8,
        }
    }
}

fn parse_value(key: &str, raw: &str) -> Result<toml::Value> {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => Ok(t.remove("v").expect("parsed key")),
        Err(_) if !raw.is_empty() => Ok(toml::Value::String(raw.to_string())),
        Err(e) => Err(Error::Config(format!("{key}: {e}"))),
    }
}

impl RunConfig {
    /// Parses `text`, applies `key=value` overrides, then falls back to
    /// `env_seed` when no seed was given.
    pub fn resolve(text: &str, overrides: &[String], env_seed: Option<&str>) -> Result<Self> {
        let mut table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        for item in overrides {
            let (k, v) = item
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {item:?} is not key=value")))?;
            let k = k.trim();
            table.insert(k.to_string(), parse_value(k, v.trim())?);
        }
        if !table.contains_key("seed") {
            if let Some(s) = env_seed {
                let seed: u64 = s
                    .trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("{SEED_ENV}={s:?} is not an unsigned integer")))?;
                table.insert("seed".into(), toml::Value::Integer(seed as i64));
            }
        }
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.t_snn < 1 {
            return bad(format!("t_snn must be >= 1, got {}", self.t_snn));
        }
        if self.t_diff < 1 {
            return bad("t_diff must be >= 1".into());
        }
        if self.steps < 1 || self.steps > self.t_diff {
            return bad(format!("steps must be in 1..={}, got {}", self.t_diff, self.steps));
        }
        if !(self.rho > 0.0) || !self.rho.is_finite() {
            return bad(format!("rho must be > 0, got {}", self.rho));
        }
        if !["tiny_mlp", "desk_unet", "large_unet"].contains(&self.preset.as_str()) {
            return bad(format!("unknown preset {:?}", self.preset));
        }
        if !["gmm2d", "mnist", "raw"].contains(&self.dataset.as_str()) {
            return bad(format!("unknown dataset {:?}", self.dataset));
        }
        self.solver()?;
        self.schedule()?;
        self.lif()?;
        self.train_config().validate()?;
        if self.n_samples < 1 || self.n_mc < 1 || self.n_inputs < 1 || self.energy_batch < 1 {
            return bad("n_samples, n_mc, n_inputs and energy_batch must be >= 1".into());
        }
        if self.bits < 1 || self.bits > 16 {
            return bad(format!("bits must be in 1..=16, got {}", self.bits));
        }
        Ok(())
    }

    pub fn solver(&self) -> Result<Solver> {
        self.solver.parse().map_err(|e: Error| Error::Config(e.to_string()))
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::linear(self.t_diff, self.beta_1, self.beta_t).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn lif(&self) -> Result<LifParams> {
        LifParams::new(self.decay, self.threshold, self.surrogate_width).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            finetune_lr: self.finetune_lr,
            batch_size: self.batch_size,
            clip: self.clip,
            stage1_iters: self.stage1_iters,
            stage2_iters: self.stage2_iters,
            seed: self.seed,
            ..TrainConfig::default()
        }
    }

    /// Network for samples of `sample_shape`.
    pub fn net_config(&self, sample_shape: &[usize]) -> Result<NetConfig> {
        let mut cfg = match (self.preset.as_str(), sample_shape) {
            ("tiny_mlp", [dim]) => {
                let mut c = NetConfig::tiny_mlp(*dim, self.t_snn);
                if let Arch::Mlp { hidden, .. } = &mut c.arch {
                    *hidden = self.hidden;
                }
                c
            }
            ("desk_unet", [c, h, w]) => NetConfig::desk_unet(*c, *h, *w, self.t_snn),
            ("large_unet", [3, 32, 32]) => NetConfig::large_unet(self.t_snn),
            (p, s) => return Err(Error::Config(format!("preset {p} cannot model samples of shape {s:?}"))),
        };
        cfg.t_diff = self.t_diff;
        cfg.lif = self.lif()?;
        cfg.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn out_path(&self, name: &str) -> PathBuf {
        PathBuf::from(&self.out_dir).join(name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_resolve() {
        let c = RunConfig::resolve("", &[], None).unwrap();
        assert_eq!(c, RunConfig::default());
    }

    #[test]
    fn overrides_and_env_seed() {
        let c = RunConfig::resolve(
            "steps = 20\nsolver = \"ddpm\"",
            &["rho=1.002".into(), "out_dir=runs/a".into()],
            Some("17"),
        )
        .unwrap();
        assert_eq!(c.steps, 20);
        assert_eq!(c.rho, 1.002);
        assert_eq!(c.out_dir, "runs/a");
        assert_eq!(c.seed, 17);
        let c = RunConfig::resolve("seed = 3", &[], Some("17")).unwrap();
        assert_eq!(c.seed, 3);
        assert!(RunConfig::resolve("", &[], Some("x")).is_err());
    }

    #[test]
    fn rejects_bad_values() {
        for text in [
            "t_snn = 0",
            "steps = 1001",
            "rho = 0.0",
            "rho = -1.0",
            "bogus = 1",
            "solver = \"euler\"",
            "preset = \"huge\"",
            "stage2_iters = 500",
        ] {
            let e = RunConfig::resolve(text, &[], None).unwrap_err();
            assert!(e.is_validation(), "{text}: {e}");
        }
        assert!(RunConfig::resolve("", &["noequals".into()], None).is_err());
    }

    #[test]
    fn net_configs() {
        let c = RunConfig::default();
        assert!(c.net_config(&[2]).is_ok());
        assert!(c.net_config(&[1, 32, 32]).is_err());
        let u = RunConfig {
            preset: "desk_unet".into(),
            ..RunConfig::default()
        };
        assert!(u.net_config(&[1, 32, 32]).is_ok());
    }
}
