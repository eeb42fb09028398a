use bridgesim_core::config::bundled_config;
use bridgesim_core::{sample_neural, train, NeuralDrift, WienerPath};

fn short_run(seed: u64) -> (Vec<f64>, NeuralDrift) {
    let mut cfg = bundled_config("brownian").unwrap();
    cfg.grid.steps = 100;
    cfg.net.hidden = vec![8, 8];
    cfg.train.batch_size = 16;
    cfg.train.iterations = 60;
    cfg.train.learning_rate = 1e-2;
    cfg.seed = seed;
    let sys = cfg.guided_system().unwrap();
    let trace = train(&sys, cfg.initial_net().unwrap(), &cfg.train_config(), |_| {}).unwrap();
    (trace.losses, trace.net)
}

#[test]
fn training_is_reproducible() {
    let (a, net_a) = short_run(5);
    let (b, net_b) = short_run(5);
    assert_eq!(a, b);
    assert_eq!(net_a.params(), net_b.params());
    let (c, _) = short_run(6);
    assert_ne!(a, c);
}

#[test]
fn training_lowers_the_loss_towards_the_bound() {
    // ϑ ≡ 0 gives γ²T/σ² = 1 for this problem; the bound is 0.5
    let (losses, _) = short_run(1);
    let head = losses[..10].iter().sum::<f64>() / 10.0;
    let tail = losses[losses.len() - 20..].iter().sum::<f64>() / 20.0;
    assert!(tail < head - 0.2, "head {head}, tail {tail}");
}

#[test]
fn checkpoint_round_trip_reproduces_samples() {
    let mut cfg = bundled_config("brownian").unwrap();
    cfg.grid.steps = 100;
    cfg.net.hidden = vec![8, 8];
    let sys = cfg.guided_system().unwrap();
    let (_, net) = short_run(2);
    let dir = std::env::temp_dir().join(format!("bridgesim-ckpt-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("net.json");
    net.save(&path).unwrap();
    let loaded = NeuralDrift::load(&path).unwrap();
    std::fs::remove_dir_all(&dir).unwrap();
    assert_eq!(loaded.params(), net.params());
    let w = WienerPath::sample(*sys.grid(), 1, 9, 0);
    let a = sample_neural(&sys, &net, &w).unwrap();
    let b = sample_neural(&sys, &loaded, &w).unwrap();
    assert_eq!(a.states(), b.states());
    assert_eq!(a.log_psi, b.log_psi);
}
