use proptest::prelude::*;
use spikediff::energy::{energy_report, LayerProfile};
use spikediff::network::LayerKind;

fn profiles(mac: u64, ac: u64, fr: f64, t: usize) -> Vec<LayerProfile> {
    vec![
        LayerProfile::real("stem", LayerKind::Conv, mac),
        LayerProfile::spiking("body", LayerKind::Conv, ac, fr, t),
    ]
}

proptest! {
    #[test]
    fn energy_grows_with_firing_rate(mac in 1u64..10_000, ac in 1u64..100_000, a in 0.0..1.0f64, b in 0.0..1.0f64, t in 1usize..8) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let e_lo = energy_report(&profiles(mac, ac, lo, t), t, 1).unwrap().totals.pj;
        let e_hi = energy_report(&profiles(mac, ac, hi, t), t, 1).unwrap().totals.pj;
        prop_assert!(e_lo <= e_hi);
    }

    #[test]
    fn sample_energy_is_linear_in_steps(mac in 1u64..10_000, ac in 1u64..100_000, fr in 0.0..1.0f64, t in 1usize..8, n in 1usize..1000) {
        let r = energy_report(&profiles(mac, ac, fr, t), t, n).unwrap();
        prop_assert!((r.totals.sample_pj - n as f64 * r.totals.pj).abs() <= 1e-9 * r.totals.sample_pj);
    }

    #[test]
    fn silent_layers_cost_nothing(mac in 1u64..10_000, ac in 1u64..100_000, t in 1usize..8) {
        let r = energy_report(&profiles(mac, ac, 0.0, t), t, 1).unwrap();
        prop_assert_eq!(r.totals.ac_pj, 0.0);
        prop_assert_eq!(r.totals.pj, r.totals.first_layer_pj);
    }
}
