//! Command implementations behind the `spikediff` binary.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;

use crate::config::RunConfig;
use crate::conversion::{convert, divergence_report, QuantLayer, QuantizedAnn, Synapse};
use crate::data::{gen_gmm2d, load_mnist_idx, load_raw_csv, Dataset};
use crate::diffusion::{estimate_h, sample, SampleSpec, Solver, Trajectory};
use crate::energy::{energy_report, profile_run};
use crate::error::{Error, Result};
use crate::network::SpikingNet;
use crate::tensor::Tensor;
use crate::training::{finetune_stage2, smoothed, train_stage1, write_loss_csv};

pub mod output;
pub mod verify;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Train,
    Finetune,
    Sample,
    Convert,
    Energy,
    Verify,
}

impl Command {
    pub fn as_str(self) -> &'static str {
        match self {
            Command::Train => "train",
            Command::Finetune => "finetune",
            Command::Sample => "sample",
            Command::Convert => "convert",
            Command::Energy => "energy",
            Command::Verify => "verify",
        }
    }
}

/// Files written by a command plus a short JSON summary.
#[derive(Clone, Debug, Serialize)]
pub struct Outcome {
    pub command: &'static str,
    pub outputs: Vec<PathBuf>,
    pub summary: serde_json::Value,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'static str,
    config: &'a RunConfig,
    outputs: &'a [PathBuf],
    summary: &'a serde_json::Value,
}

pub fn run(command: Command, cfg: &RunConfig) -> Result<Outcome> {
    cfg.validate()?;
    fs::create_dir_all(&cfg.out_dir)?;
    let (mut outputs, summary) = match command {
        Command::Train => cmd_train(cfg)?,
        Command::Finetune => cmd_finetune(cfg)?,
        Command::Sample => cmd_sample(cfg)?,
        Command::Convert => cmd_convert(cfg)?,
        Command::Energy => cmd_energy(cfg)?,
        Command::Verify => cmd_verify(cfg)?,
    };
    let manifest = cfg.out_path(&format!("{}_manifest.json", command.as_str()));
    output::write_json(
        &manifest,
        &Manifest {
            command: command.as_str(),
            config: cfg,
            outputs: &outputs,
            summary: &summary,
        },
    )?;
    outputs.push(manifest);
    Ok(Outcome {
        command: command.as_str(),
        outputs,
        summary,
    })
}

fn config_path(p: &str) -> Result<&Path> {
    if p.is_empty() {
        return Err(Error::Config("path is not set".into()));
    }
    Ok(Path::new(p))
}

pub fn load_dataset(cfg: &RunConfig) -> Result<Dataset> {
    match cfg.dataset.as_str() {
        "gmm2d" => gen_gmm2d(cfg.gmm_modes, cfg.gmm_spread, cfg.gmm_n, cfg.seed),
        "mnist" => {
            let labels = (!cfg.mnist_labels.is_empty()).then(|| Path::new(&cfg.mnist_labels));
            load_mnist_idx(config_path(&cfg.mnist_images)?, labels, cfg.pad32)
        }
        "raw" => load_raw_csv(config_path(&cfg.raw_path)?),
        other => Err(Error::Config(format!("unknown dataset {other:?}"))),
    }
}

/// Shape of one generated sample.
pub fn sample_shape(cfg: &RunConfig) -> Result<Vec<usize>> {
    if cfg.preset != "tiny_mlp" {
        return Ok(vec![cfg.channels, cfg.height, cfg.width]);
    }
    match cfg.dataset.as_str() {
        "gmm2d" => Ok(vec![2]),
        "raw" => Ok(load_dataset(cfg)?.sample_shape().to_vec()),
        _ => Err(Error::Config("tiny_mlp needs vector data (gmm2d or raw)".into())),
    }
}

fn save_net(net: &SpikingNet, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    net.save(&mut w)?;
    std::io::Write::flush(&mut w)?;
    Ok(())
}

/// The configured checkpoint, or a freshly initialized network when none
/// is set.
pub fn load_or_init(cfg: &RunConfig) -> Result<SpikingNet> {
    let net_cfg = cfg.net_config(&sample_shape(cfg)?)?;
    if cfg.checkpoint.is_empty() {
        SpikingNet::new(net_cfg, cfg.seed)
    } else {
        SpikingNet::load(net_cfg, BufReader::new(File::open(&cfg.checkpoint)?))
    }
}

fn training_data(cfg: &RunConfig) -> Result<Tensor> {
    let data = load_dataset(cfg)?;
    let want = sample_shape(cfg)?;
    if data.sample_shape() != want.as_slice() {
        return Err(Error::Config(format!(
            "dataset samples {:?} do not match model input {want:?}",
            data.sample_shape()
        )));
    }
    Ok(data.samples)
}

fn cmd_train(cfg: &RunConfig) -> Result<(Vec<PathBuf>, serde_json::Value)> {
    let data = training_data(cfg)?;
    let mut net = SpikingNet::new(cfg.net_config(&sample_shape(cfg)?)?, cfg.seed)?;
    let ckpt = cfg.out_path("model.sdmc");
    let every = cfg.checkpoint_every;
    let losses = train_stage1(&mut net, &cfg.train_config(), &cfg.schedule()?, &data, &mut |r, n| {
        if every > 0 && r.iter % every == 0 {
            save_net(n, &ckpt)?;
        }
        Ok(())
    })?;
    save_net(&net, &ckpt)?;
    let csv = cfg.out_path("loss_stage1.csv");
    write_loss_csv(BufWriter::new(File::create(&csv)?), &losses)?;
    let sm = smoothed(&losses, 20);
    Ok((
        vec![ckpt, csv],
        json!({
            "iterations": losses.len(),
            "initial_smoothed_loss": sm.get(19.min(sm.len().saturating_sub(1))),
            "final_smoothed_loss": sm.last(),
            "parameters": net.num_params(),
        }),
    ))
}

fn cmd_finetune(cfg: &RunConfig) -> Result<(Vec<PathBuf>, serde_json::Value)> {
    let data = training_data(cfg)?;
    let source = if cfg.checkpoint.is_empty() {
        cfg.out_path("model.sdmc")
    } else {
        PathBuf::from(&cfg.checkpoint)
    };
    let net_cfg = cfg.net_config(&sample_shape(cfg)?)?;
    let mut net = SpikingNet::load(net_cfg, BufReader::new(File::open(&source)?))?;
    let losses = finetune_stage2(&mut net, &cfg.train_config(), &cfg.schedule()?, &data, &mut |_, _| Ok(()))?;
    let ckpt = cfg.out_path("model_tsm.sdmc");
    save_net(&net, &ckpt)?;
    let csv = cfg.out_path("loss_stage2.csv");
    write_loss_csv(BufWriter::new(File::create(&csv)?), &losses)?;
    let p_shift = net
        .tsm_params()
        .iter()
        .flat_map(|(_, p)| p.data().to_vec())
        .map(|v| (v - 1.0).abs())
        .fold(0.0f32, f32::max);
    Ok((
        vec![ckpt, csv],
        json!({
            "source": source,
            "iterations": losses.len(),
            "final_smoothed_loss": smoothed(&losses, 20).last(),
            "max_p_shift": p_shift,
        }),
    ))
}

fn cmd_sample(cfg: &RunConfig) -> Result<(Vec<PathBuf>, serde_json::Value)> {
    let mut net = load_or_init(cfg)?;
    let schedule = cfg.schedule()?;
    let solver = cfg.solver()?;
    let shape = sample_shape(cfg)?;
    let hstats = if solver == Solver::Analytic {
        let data = training_data(cfg)?;
        let tr = Trajectory::uniform(schedule.t_diff(), cfg.steps)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x4853);
        Some(estimate_h(&schedule, &mut net, &data, &tr, cfg.n_mc, &mut rng)?)
    } else {
        None
    };
    let spec = SampleSpec {
        solver,
        n_steps: cfg.steps,
        rho: cfg.rho,
        seed: cfg.seed,
        n: cfg.n_samples,
        shape: shape.clone(),
    };
    let x = sample(&mut net, &schedule, &spec, hstats.as_ref())?;
    let path = if shape.len() == 3 {
        let ext = if shape[0] == 3 { "ppm" } else { "pgm" };
        let p = cfg.out_path(&format!("samples.{ext}"));
        output::write_image_grid(BufWriter::new(File::create(&p)?), &x)?;
        p
    } else {
        let p = cfg.out_path("samples.csv");
        let flat = x.reshape(&[cfg.n_samples, shape.iter().product()])?;
        output::write_points_csv(BufWriter::new(File::create(&p)?), &flat)?;
        p
    };
    Ok((
        vec![path],
        json!({
            "solver": solver.as_str(),
            "steps": cfg.steps,
            "rho": cfg.rho,
            "seed": cfg.seed,
            "n_samples": cfg.n_samples,
            "h": hstats.map(|h| h.h),
        }),
    ))
}

/// Two dense layers with random weights, used when no network is given.
pub fn demo_ann(cfg: &RunConfig) -> QuantizedAnn {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut layer = |d, e, clip| QuantLayer {
        synapse: Synapse::Dense {
            weight: Tensor::uniform(&[d, e], -1.0, 1.0, &mut rng),
            bias: Tensor::uniform(&[e], -0.1, 0.1, &mut rng),
        },
        clip,
        bits: cfg.bits,
    };
    QuantizedAnn {
        layers: vec![layer(4, 8, 1.0), layer(8, 4, 1.0)],
    }
}

fn cmd_convert(cfg: &RunConfig) -> Result<(Vec<PathBuf>, serde_json::Value)> {
    let mut outputs = Vec::new();
    let ann = if cfg.ann.is_empty() {
        let ann = demo_ann(cfg);
        let p = cfg.out_path("ann.annq");
        ann.save(BufWriter::new(File::create(&p)?))?;
        outputs.push(p);
        ann
    } else {
        QuantizedAnn::load(BufReader::new(File::open(&cfg.ann)?))?
    };
    let snn = convert(&ann)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let shape = match snn.dense_input() {
        Some(d) => vec![cfg.n_inputs, d],
        None => {
            let Synapse::Conv { weight, .. } = &ann.layers[0].synapse else {
                unreachable!("non-dense stacks start with a conv")
            };
            vec![cfg.n_inputs, weight.shape()[1], cfg.height, cfg.width]
        }
    };
    let inputs = Tensor::uniform(&shape, -1.0, 1.0, &mut rng);
    let report = divergence_report(&ann, &snn, &inputs)?;
    let snn_path = cfg.out_path("snn.annq");
    snn.save(BufWriter::new(File::create(&snn_path)?))?;
    let report_path = cfg.out_path("divergence.json");
    output::write_json(&report_path, &report)?;
    outputs.push(snn_path);
    outputs.push(report_path);
    Ok((
        outputs,
        json!({
            "time_steps": snn.steps,
            "layer_gaps": report.layers.iter().map(|l| l.mean_abs_gap).collect::<Vec<_>>(),
        }),
    ))
}

fn cmd_energy(cfg: &RunConfig) -> Result<(Vec<PathBuf>, serde_json::Value)> {
    let net = load_or_init(cfg)?;
    let mut shape = vec![cfg.energy_batch];
    shape.extend(sample_shape(cfg)?);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let x = Tensor::randn(&shape, &mut rng);
    let t = vec![cfg.t_diff.div_ceil(2); cfg.energy_batch];
    let profiles = profile_run(&net, &x, &t)?;
    let report = energy_report(&profiles, cfg.t_snn, cfg.steps)?;
    let path = cfg.out_path("energy.json");
    output::write_json(&path, &report)?;
    Ok((
        vec![path],
        json!({
            "per_step_pj": report.totals.pj,
            "per_sample_mj": report.totals.sample_mj,
        }),
    ))
}

fn cmd_verify(cfg: &RunConfig) -> Result<(Vec<PathBuf>, serde_json::Value)> {
    let mut results = verify::gradient_suite(20, cfg.seed)?;
    results.extend(verify::stbp_suite(30, cfg.seed)?);
    results.extend(verify::sampler_suite(10_000, cfg.seed)?);
    results.extend(verify::conversion_suite(1000, cfg.seed)?);
    let path = cfg.out_path("verify.json");
    output::write_json(&path, &results)?;
    let failed: Vec<String> = results
        .iter()
        .filter(|r| !r.pass)
        .map(|r| format!("{}/{} = {:e} (bound {:e})", r.suite, r.check, r.value, r.bound))
        .collect();
    if !failed.is_empty() {
        return Err(Error::Verification(failed.join("; ")));
    }
    Ok((
        vec![path],
        json!({ "checks": results.len(), "failed": 0 }),
    ))
}
