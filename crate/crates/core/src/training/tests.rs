use super::*;
use crate::network::NetConfig;
use crate::neuron::LifParams;
use proptest::prelude::*;
use rand::Rng;

fn gmm(n: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v = Vec::with_capacity(2 * n);
    for _ in 0..n {
        let c = if rng.gen_bool(0.5) { 0.8f32 } else { -0.8 };
        let e = Tensor::<f32>::randn(&[2], &mut rng);
        v.push(c + 0.1 * e.data()[0]);
        v.push(0.1 * e.data()[1]);
    }
    Tensor::new(vec![n, 2], v).unwrap()
}

fn small_net(seed: u64) -> (SpikingNet, NoiseSchedule) {
    let cfg = NetConfig {
        t_diff: 100,
        ..NetConfig::tiny_mlp(2, 4)
    };
    let s = NoiseSchedule::linear(100, 1e-4, 0.02).unwrap();
    (SpikingNet::new(cfg, seed).unwrap(), s)
}

fn quiet() -> impl FnMut(&IterRecord, &SpikingNet) -> Result<()> {
    |_: &IterRecord, _: &SpikingNet| Ok(())
}

struct Zero;

impl Denoiser for Zero {
    fn predict_noise(&mut self, x: &Tensor, _t: &[usize]) -> Result<Tensor> {
        Ok(Tensor::zeros(x.shape()))
    }
}

struct Teacher {
    schedule: NoiseSchedule,
    x0: Tensor,
}

impl Denoiser for Teacher {
    fn predict_noise(&mut self, x: &Tensor, t: &[usize]) -> Result<Tensor> {
        let n = t.len();
        let d = x.len() / n;
        let mut out = Vec::new();
        for (i, &ti) in t.iter().enumerate() {
            let ab = self.schedule.alpha_bar(ti);
            for j in 0..d {
                let xt = x.data()[i * d + j] as f64;
                let x0 = self.x0.data()[i * d + j] as f64;
                out.push(((xt - ab.sqrt() * x0) / (1.0 - ab).sqrt()) as f32);
            }
        }
        Tensor::new(x.shape().to_vec(), out)
    }
}

#[test]
fn diffusion_loss_harnesses() {
    let s = NoiseSchedule::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x0 = gmm(20_000, 2);
    let zero = diffusion_loss(&mut Zero, &s, &x0, &mut rng).unwrap();
    assert!((zero - 1.0).abs() < 3.0 * (2.0f64 / 40_000.0).sqrt(), "{zero}");
    let mut teacher = Teacher {
        schedule: s.clone(),
        x0: x0.clone(),
    };
    let exact = diffusion_loss(&mut teacher, &s, &x0, &mut rng).unwrap();
    assert!((0.0..1e-8).contains(&exact), "{exact}");
    let empty = Tensor::new(vec![0, 2], vec![]).unwrap();
    assert!(diffusion_loss(&mut Zero, &s, &empty, &mut rng).is_err());
}

#[test]
fn clipping_bounds_the_norm() {
    let mut g = BTreeMap::new();
    g.insert("a".to_string(), Tensor::from_vec(vec![3.0, 0.0]));
    g.insert("b".to_string(), Tensor::from_vec(vec![0.0, 4.0]));
    let before = clip_global_norm(&mut g, 1.0);
    assert!((before - 5.0).abs() < 1e-12);
    assert!(global_norm(&g) <= 1.0 + 1e-6);
    let mut h = BTreeMap::new();
    h.insert("c".to_string(), Tensor::from_vec(vec![0.1, -0.2]));
    let copy = h.clone();
    clip_global_norm(&mut h, 1.0);
    assert_eq!(h, copy);
}

#[test]
fn config_validation() {
    let mut cfg = TrainConfig::default();
    cfg.validate().unwrap();
    cfg.stage2_iters = 200;
    assert!(cfg.validate().is_err());
    cfg.stage2_iters = 0;
    cfg.validate().unwrap();
    cfg.batch_size = 0;
    assert!(cfg.validate().is_err());
    let cfg = TrainConfig {
        lr: -1.0,
        ..TrainConfig::default()
    };
    assert!(cfg.validate().is_err());
}

#[test]
fn zero_learning_rate_keeps_weights() {
    let (mut net, s) = small_net(3);
    let before: Vec<(String, Tensor)> = net.store().params().map(|(k, v)| (k.to_string(), v.clone())).collect();
    let cfg = TrainConfig {
        lr: 0.0,
        stage1_iters: 5,
        stage2_iters: 0,
        batch_size: 8,
        ..TrainConfig::default()
    };
    train_stage1(&mut net, &cfg, &s, &gmm(64, 1), &mut quiet()).unwrap();
    for (k, v) in before {
        assert_eq!(net.store().param(&k).unwrap(), &v, "{k}");
    }
}

#[test]
fn training_is_reproducible() {
    let cfg = TrainConfig {
        stage1_iters: 10,
        stage2_iters: 0,
        batch_size: 16,
        seed: 4,
        ..TrainConfig::default()
    };
    let data = gmm(128, 5);
    let run = || {
        let (mut net, s) = small_net(9);
        let losses = train_stage1(&mut net, &cfg, &s, &data, &mut quiet()).unwrap();
        let mut bytes = Vec::new();
        net.save(&mut bytes).unwrap();
        (losses, bytes)
    };
    let (a, ab) = run();
    let (b, bb) = run();
    assert_eq!(a, b);
    assert_eq!(ab, bb);
}

#[test]
fn observer_sees_every_iteration() {
    let (mut net, s) = small_net(1);
    let cfg = TrainConfig {
        stage1_iters: 4,
        stage2_iters: 0,
        batch_size: 4,
        ..TrainConfig::default()
    };
    let mut seen = Vec::new();
    let mut obs = |r: &IterRecord, _: &SpikingNet| {
        seen.push(r.iter);
        Ok(())
    };
    train_stage1(&mut net, &cfg, &s, &gmm(16, 1), &mut obs).unwrap();
    assert_eq!(seen, vec![1, 2, 3, 4]);
}

#[test]
fn divergence_is_reported() {
    let (mut net, s) = small_net(1);
    let w = net.store().param("out.proj.w").unwrap().clone();
    net.store_mut().assign("out.proj.w", w.map(|_| f32::NAN)).unwrap();
    let cfg = TrainConfig {
        stage1_iters: 3,
        stage2_iters: 0,
        batch_size: 4,
        ..TrainConfig::default()
    };
    match train_stage1(&mut net, &cfg, &s, &gmm(16, 1), &mut quiet()) {
        Err(Error::Diverged { iter: 1, .. }) => {}
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn stage2_with_no_iterations_is_the_converted_net() {
    let (mut net, s) = small_net(2);
    let mut reference = net.clone();
    reference.convert_to_tsm().unwrap();
    let cfg = TrainConfig {
        stage1_iters: 10,
        stage2_iters: 0,
        ..TrainConfig::default()
    };
    let losses = finetune_stage2(&mut net, &cfg, &s, &gmm(16, 1), &mut quiet()).unwrap();
    assert!(losses.is_empty());
    assert_eq!(net.kind(), BlockKind::Tsm);
    for (_, p) in net.tsm_params() {
        assert!(p.data().iter().all(|&v| v == 1.0));
    }
    let (mut a, mut b) = (Vec::new(), Vec::new());
    net.save(&mut a).unwrap();
    reference.save(&mut b).unwrap();
    assert_eq!(a, b);
    assert!(finetune_stage2(&mut net, &cfg, &s, &gmm(16, 1), &mut quiet()).is_err());
}

#[test]
fn stage2_moves_temporal_parameters() {
    let (mut net, s) = small_net(6);
    let cfg = TrainConfig {
        stage1_iters: 30,
        stage2_iters: 2,
        batch_size: 16,
        ..TrainConfig::default()
    };
    finetune_stage2(&mut net, &cfg, &s, &gmm(64, 1), &mut quiet()).unwrap();
    let moved = net
        .tsm_params()
        .iter()
        .flat_map(|(_, p)| p.data().to_vec())
        .any(|v| (v - 1.0).abs() > 1e-4);
    assert!(moved);
}

#[test]
fn smoothing_and_csv() {
    let s = smoothed(&[1.0, 3.0, 5.0, 7.0], 2);
    assert_eq!(s, vec![1.0, 2.0, 4.0, 6.0]);
    let mut out = Vec::new();
    write_loss_csv(&mut out, &[0.5, 0.25]).unwrap();
    assert_eq!(String::from_utf8(out).unwrap(), "iter,loss\n1,0.5\n2,0.25\n");
}

fn random_tiny(rng: &mut ChaCha8Rng, tsm: bool) -> (TinySnn, Tensor<f64>, Tensor<f64>) {
    TinySnn::random(rng, tsm)
}

#[test]
fn stbp_oracle_matches_autodiff() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut nonzero = 0;
    for i in 0..30 {
        let (net, x, y) = random_tiny(&mut rng, i % 2 == 1);
        let a = stbp_oracle(&net, &x, &y).unwrap();
        let b = stbp_autodiff(&net, &x, &y).unwrap();
        assert!(a.max_abs_diff(&b) <= 1e-6, "instance {i}");
        if a.weights.iter().any(|w| w.max_abs() > 0.0) {
            nonzero += 1;
        }
    }
    assert!(nonzero >= 10, "only {nonzero} instances had gradient signal");
}

#[test]
fn stbp_single_step_is_plain_backprop() {
    // One layer, one step: dL/dW = (o − y)·σ'(u)·x.
    let lif = LifParams::new(1.0, 1.0, 1.0).unwrap();
    let net = TinySnn {
        weights: vec![Tensor::new(vec![2, 1], vec![0.5, 0.75]).unwrap()],
        p: None,
        lif,
        steps: 1,
    };
    let x = Tensor::new(vec![1, 2], vec![1.0, 0.8]).unwrap();
    let y = Tensor::new(vec![1, 1], vec![0.0]).unwrap();
    // u = 1.1 → o = 1, σ' = 1.
    let g = stbp_oracle(&net, &x, &y).unwrap();
    assert_eq!(g.weights[0].data(), &[1.0, 0.8]);
    assert_eq!(g, stbp_autodiff(&net, &x, &y).unwrap());
}

#[test]
fn stbp_temporal_gradient_flows() {
    let lif = LifParams::new(1.0, 1.0, 1.0).unwrap();
    let net = TinySnn {
        weights: vec![Tensor::new(vec![1, 1], vec![0.7]).unwrap()],
        p: Some(vec![vec![1.0, 1.0, 1.0]]),
        lif,
        steps: 3,
    };
    let x = Tensor::new(vec![3, 1], vec![1.0, 1.0, 1.0]).unwrap();
    let y = Tensor::new(vec![3, 1], vec![0.0, 0.0, 0.0]).unwrap();
    let g = stbp_oracle(&net, &x, &y).unwrap();
    assert!(g.p.as_ref().unwrap()[0].iter().any(|&v| v != 0.0));
    assert!(g.max_abs_diff(&stbp_autodiff(&net, &x, &y).unwrap()) <= 1e-12);
}

#[test]
fn stbp_rejects_large_nets() {
    let lif = LifParams::new(1.0, 1.0, 1.0).unwrap();
    let net = TinySnn {
        weights: vec![Tensor::zeros(&[2, 11])],
        p: None,
        lif,
        steps: 2,
    };
    let x = Tensor::zeros(&[2, 2]);
    let y = Tensor::zeros(&[2, 11]);
    assert!(stbp_oracle(&net, &x, &y).is_err());
    let net = TinySnn {
        weights: vec![Tensor::zeros(&[2, 2])],
        p: None,
        lif,
        steps: 5,
    };
    assert!(stbp_oracle(&net, &Tensor::zeros(&[5, 2]), &Tensor::zeros(&[5, 2])).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn clip_norm_never_exceeds_bound(v in prop::collection::vec(-100.0f32..100.0, 1..20), bound in 0.1f32..5.0) {
        let mut g = BTreeMap::new();
        g.insert("w".to_string(), Tensor::from_vec(v.clone()));
        let before = clip_global_norm(&mut g, bound);
        if before > bound as f64 {
            prop_assert!(global_norm(&g) <= bound as f64 + 1e-6);
        } else {
            prop_assert_eq!(g["w"].data(), v.as_slice());
        }
    }

    #[test]
    fn stbp_agrees_on_random_nets(seed in 0u64..10_000, tsm in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (net, x, y) = random_tiny(&mut rng, tsm);
        let a = stbp_oracle(&net, &x, &y).unwrap();
        let b = stbp_autodiff(&net, &x, &y).unwrap();
        prop_assert!(a.max_abs_diff(&b) <= 1e-6);
    }
}
