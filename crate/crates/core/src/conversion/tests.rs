use super::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn dense(d: usize, e: usize, s: f32, bits: u32, rng: &mut ChaCha8Rng) -> QuantLayer {
    QuantLayer {
        synapse: Synapse::Dense {
            weight: Tensor::uniform(&[d, e], -1.0, 1.0, rng),
            bias: Tensor::uniform(&[e], -0.2, 0.2, rng),
        },
        clip: s,
        bits,
    }
}

#[test]
fn quantizer_examples() {
    assert_eq!(quantize_act(0.0, 1.0, 2).unwrap(), 0.0);
    assert_eq!(quantize_act(1.0, 1.0, 2).unwrap(), 1.0);
    assert_eq!(quantize_act(7.0, 1.5, 3).unwrap(), 1.5);
    assert_eq!(quantize_act(0.5, 1.0, 2).unwrap(), 2.0 / 3.0);
    assert_eq!(quantize_act(0.49, 1.0, 1).unwrap(), 0.0);
    assert_eq!(quantize_act(0.51, 1.0, 1).unwrap(), 1.0);
    assert!(quantize_act(0.5, 0.0, 2).is_err());
    assert!(quantize_act(0.5, -1.0, 2).is_err());
    assert!(quantize_act(0.5, 1.0, 0).is_err());
}

#[test]
fn if_rate_examples() {
    assert_eq!(if_firing_rate(0.5, 1.0, 3).unwrap(), 2.0 / 3.0);
    assert_eq!(if_firing_rate(0.0, 1.0, 3).unwrap(), 0.0);
    assert_eq!(if_firing_rate(-1.0 / 6.0, 1.0, 3).unwrap(), 0.0);
    assert_eq!(if_firing_rate(2.5 / 3.0, 1.0, 3).unwrap(), 1.0);
    assert!(if_firing_rate(0.5, 0.0, 3).is_err());
    assert_eq!(if_spike_count(0.5, 1.0, 3), 2);
}

#[test]
fn first_layer_is_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for bits in 1..=4 {
        let ann = QuantizedAnn {
            layers: vec![dense(3, 4, 0.8, bits, &mut rng)],
        };
        let snn = convert(&ann).unwrap();
        assert_eq!(snn.steps, (1 << bits) - 1);
        let x = Tensor::uniform(&[1000, 3], -1.5, 1.5, &mut rng);
        let q = ann.forward(&x).unwrap();
        let r = snn.decoded(&x).unwrap();
        assert_eq!(q[0], r[0], "bits = {bits}");
        let report = divergence_report(&ann, &snn, &x).unwrap();
        assert_eq!(report.layers[0].mean_abs_gap, 0.0);
    }
}

#[test]
fn one_bit_is_a_threshold_network() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let ann = QuantizedAnn {
        layers: vec![dense(2, 3, 1.0, 1, &mut rng)],
    };
    let snn = convert(&ann).unwrap();
    assert_eq!(snn.steps, 1);
    let x = Tensor::uniform(&[50, 2], -1.0, 1.0, &mut rng);
    let a = ann.layers[0].synapse.apply(&x.cast()).unwrap();
    let counts = snn.spike_counts(&x).unwrap();
    for (i, c) in a.data().iter().zip(counts[0].data()) {
        assert_eq!(*c, if *i >= 0.5 { 1.0 } else { 0.0 });
    }
}

#[test]
fn deeper_layers_are_reported() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let ann = QuantizedAnn {
        layers: vec![dense(4, 6, 1.0, 3, &mut rng), dense(6, 3, 0.7, 3, &mut rng)],
    };
    let snn = convert(&ann).unwrap();
    let x = Tensor::uniform(&[200, 4], -1.0, 1.0, &mut rng);
    let report = divergence_report(&ann, &snn, &x).unwrap();
    assert_eq!(report.layers.len(), 2);
    assert_eq!(report.layers[0].mean_abs_gap, 0.0);
    assert!(report.layers.iter().all(|l| l.mean_abs_gap >= 0.0));
    let json: serde_json::Value = serde_json::from_str(&report.to_json().unwrap()).unwrap();
    assert_eq!(json["layers"].as_array().unwrap().len(), 2);
}

#[test]
fn conv_stack_first_layer_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let conv = |ci, co, rng: &mut ChaCha8Rng| QuantLayer {
        synapse: Synapse::Conv {
            weight: Tensor::uniform(&[co, ci, 3, 3], -0.5, 0.5, rng),
            bias: Tensor::uniform(&[co], -0.1, 0.1, rng),
            stride: 1,
            padding: 1,
        },
        clip: 1.2,
        bits: 2,
    };
    let ann = QuantizedAnn {
        layers: vec![conv(1, 2, &mut rng), conv(2, 2, &mut rng)],
    };
    let snn = convert(&ann).unwrap();
    let x = Tensor::uniform(&[4, 1, 5, 5], -1.0, 1.0, &mut rng);
    let report = divergence_report(&ann, &snn, &x).unwrap();
    assert_eq!(report.layers[0].max_abs_gap, 0.0);
    let mut bytes = Vec::new();
    ann.save(&mut bytes).unwrap();
    assert_eq!(&bytes[..4], b"ANNQ");
    assert_eq!(QuantizedAnn::load(bytes.as_slice()).unwrap(), ann);
}

#[test]
fn mixed_bits_and_mismatch_are_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let ann = QuantizedAnn {
        layers: vec![dense(2, 2, 1.0, 2, &mut rng), dense(2, 2, 1.0, 3, &mut rng)],
    };
    assert!(convert(&ann).is_err());
    let one = QuantizedAnn {
        layers: vec![dense(2, 2, 1.0, 2, &mut rng)],
    };
    let two = QuantizedAnn {
        layers: vec![dense(2, 2, 1.0, 2, &mut rng), dense(2, 2, 1.0, 2, &mut rng)],
    };
    let snn = convert(&two).unwrap();
    assert!(divergence_report(&one, &snn, &Tensor::zeros(&[1, 2])).is_err());
    assert!(QuantizedAnn::load(&b"SDMC\x01\0\0\0"[..]).is_err());
}

proptest! {
    #[test]
    fn quantizer_is_idempotent_and_on_grid(x in -3.0f64..3.0, s in 0.1f64..2.0, bits in 1u32..=4) {
        let q = quantize_act(x, s, bits).unwrap();
        prop_assert_eq!(quantize_act(q, s, bits).unwrap(), q);
        let t = levels(bits).unwrap();
        let k = quantize_level(x, s, bits).unwrap();
        prop_assert!(k <= t);
        prop_assert_eq!(q, level_value(s, t, k));
    }

    #[test]
    fn simulated_if_matches_closed_form(i in -2.0f64..2.0, theta in 0.1f64..2.0, bits in 1u32..=4) {
        let t = levels(bits).unwrap();
        // Skip inputs within rounding distance of a level boundary.
        let frac = (t as f64 * i / theta + 0.5).fract().abs();
        prop_assume!(frac > 1e-9 && frac < 1.0 - 1e-9);
        let rate = if_firing_rate(i, theta, t).unwrap();
        prop_assert_eq!(rate, if_spike_count(i, theta, t) as f64 / t as f64);
        prop_assert!((0.0..=1.0).contains(&rate));
    }

    #[test]
    fn first_layer_exact_for_random_stacks(seed in 0u64..1000, bits in 1u32..=4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (d, e) = (rng.gen_range(1..5), rng.gen_range(1..5));
        let s = rng.gen_range(0.2f32..2.0);
        let ann = QuantizedAnn { layers: vec![dense(d, e, s, bits, &mut rng)] };
        let snn = convert(&ann).unwrap();
        let x = Tensor::uniform(&[20, d], -2.0, 2.0, &mut rng);
        prop_assert_eq!(&ann.forward(&x).unwrap()[0], &snn.decoded(&x).unwrap()[0]);
    }
}
