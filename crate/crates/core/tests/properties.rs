use bridgesim_core::analytics::{default_edges, mode_count, tv_distance, MarginalHistogram};
use bridgesim_core::config::{bundled_config, parse_config, BUNDLED};
use bridgesim_core::linalg::sym_min_eigenvalue;
use bridgesim_core::zoo::LandmarkModel;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn histogram(values: &[f64], edges: &[f64]) -> MarginalHistogram {
    MarginalHistogram::from_values(values, edges.to_vec(), 0.5, 0).unwrap()
}

fn edges(lo: f64, hi: f64, bins: usize) -> Vec<f64> {
    (0..=bins).map(|k| lo + (hi - lo) * k as f64 / bins as f64).collect()
}

proptest! {
    #[test]
    fn tv_is_a_bounded_symmetric_metric(
        a in prop::collection::vec(-3.0f64..3.0, 1..200),
        b in prop::collection::vec(-3.0f64..3.0, 1..200),
        c in prop::collection::vec(-3.0f64..3.0, 1..200),
    ) {
        let e = edges(-3.0, 3.0, 20);
        let (ha, hb, hc) = (histogram(&a, &e), histogram(&b, &e), histogram(&c, &e));
        let ab = tv_distance(&ha, &hb).unwrap();
        prop_assert!((0.0..=1.0 + 1e-12).contains(&ab));
        prop_assert_eq!(ab, tv_distance(&hb, &ha).unwrap());
        prop_assert_eq!(tv_distance(&ha, &ha).unwrap(), 0.0);
        let ac = tv_distance(&ha, &hc).unwrap();
        let cb = tv_distance(&hc, &hb).unwrap();
        prop_assert!(ab <= ac + cb + 1e-12);
    }

    #[test]
    fn histogram_ignores_sample_order(values in prop::collection::vec(-10.0f64..10.0, 2..300), seed in any::<u64>()) {
        let e = default_edges(&values, 25).unwrap();
        let mut shuffled = values.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let (h1, h2) = (histogram(&values, &e), histogram(&shuffled, &e));
        prop_assert_eq!(&h1.counts, &h2.counts);
        prop_assert_eq!(h1.counts.iter().sum::<u64>(), values.len() as u64);
    }

    #[test]
    fn landmark_noise_covariance_is_psd(
        pts in prop::collection::vec(-2.0f64..2.0, 12),
        kappa in 0.1f64..2.0,
        alpha in 0.05f64..1.0,
    ) {
        let model = LandmarkModel { n: 6, dim: 2, alpha, kappa };
        let q = model.q_matrix(&pts);
        prop_assert!(sym_min_eigenvalue(&(&q * q.transpose())) > -1e-10);
        prop_assert!((&q - q.transpose()).amax() < 1e-15);
    }
}

#[test]
fn separated_mixture_has_two_modes() {
    let values: Vec<f64> = (0..4000)
        .map(|i| {
            let u = (i % 2000) as f64 / 2000.0 - 0.5;
            if i < 2000 { -2.0 + u } else { 2.0 + 0.5 * u }
        })
        .collect();
    let h = histogram(&values, &edges(-3.0, 3.0, 50));
    assert_eq!(mode_count(&h, 0.05), 2);
    let single: Vec<f64> = values.iter().take(2000).copied().collect();
    assert_eq!(mode_count(&histogram(&single, &edges(-3.0, 3.0, 50)), 0.05), 1);
}

#[test]
fn bundled_configs_round_trip_and_build() {
    for (name, _) in BUNDLED {
        let cfg = bundled_config(name).unwrap();
        cfg.validate().unwrap();
        let again = parse_config(&cfg.to_json()).unwrap();
        assert_eq!(cfg, again, "{name}");
        let sys = cfg.guided_system().unwrap();
        let net = cfg.initial_net().unwrap();
        net.check_compatible(&sys).unwrap();
    }
}

#[test]
fn invalid_config_names_every_bad_field() {
    let text = r#"{
        "model": {"name": "ou", "gamma": 1.0, "mu": 0.0, "sigma": -1.0},
        "x0": [0.0, 1.0],
        "conditioning": {"v": [1.0], "eps2": 0.0},
        "grid": {"T": 1.0, "M": 0},
        "net": {"hidden": [], "activation": "tanh"},
        "train": {"batch_size": 0}
    }"#;
    let err = parse_config(text).unwrap_err();
    let fields = err.fields();
    for expected in ["model.sigma", "x0", "conditioning.eps2", "grid.M", "net.hidden", "train.batch_size"] {
        assert!(fields.contains(&expected), "{expected} missing from {fields:?}");
    }
}

#[test]
fn unknown_keys_are_rejected() {
    let mut value: serde_json::Value = serde_json::from_str(&bundled_config("ou").unwrap().to_json()).unwrap();
    value["grid"]["dt"] = 0.1.into();
    assert!(parse_config(&value.to_string()).is_err());
}
