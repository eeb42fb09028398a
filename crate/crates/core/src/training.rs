//! Stochastic-gradient training of the drift correction with Adam.

use std::f64::consts::PI;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{BridgeError, Result};
use crate::guided::GuidedSystem;
use crate::neural::{clip_gradient, loss_and_grad, NeuralDrift};
use crate::noise::WienerPath;
use crate::sde::SdeModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LrSchedule {
    #[default]
    Constant,
    /// `lr · ½(1 + cos(π k / K))`.
    Cosine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub iterations: usize,
    pub learning_rate: f64,
    pub adam_betas: (f64, f64),
    pub adam_eps: f64,
    pub clip_norm: f64,
    /// Taken from the experiment seed, never read from a config section.
    #[serde(skip)]
    pub seed: u64,
    pub lr_schedule: LrSchedule,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 100,
            iterations: 5000,
            learning_rate: 1e-3,
            adam_betas: (0.9, 0.999),
            adam_eps: 1e-8,
            clip_norm: 1.0,
            seed: 0,
            lr_schedule: LrSchedule::Constant,
        }
    }
}

impl TrainConfig {
    /// Invariant violations as `(field, message)` pairs.
    pub fn problems(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        if self.batch_size == 0 {
            out.push(("batch_size".into(), "must be at least 1".into()));
        }
        if self.iterations == 0 {
            out.push(("iterations".into(), "must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            out.push(("learning_rate".into(), "must be positive".into()));
        }
        let (b1, b2) = self.adam_betas;
        if !((0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2)) {
            out.push(("adam_betas".into(), "both must lie in [0, 1)".into()));
        }
        if !(self.adam_eps > 0.0) {
            out.push(("adam_eps".into(), "must be positive".into()));
        }
        if !(self.clip_norm > 0.0) {
            out.push(("clip_norm".into(), "must be positive".into()));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        match self.problems().first() {
            None => Ok(()),
            Some((field, msg)) => Err(BridgeError::InvalidArgument(format!("{field}: {msg}"))),
        }
    }

    /// Learning rate at iteration `k` (zero-based).
    pub fn lr_at(&self, k: usize) -> f64 {
        match self.lr_schedule {
            LrSchedule::Constant => self.learning_rate,
            LrSchedule::Cosine => {
                let frac = k as f64 / self.iterations as f64;
                self.learning_rate * 0.5 * (1.0 + (PI * frac).cos())
            }
        }
    }
}

/// First and second moment estimates of Adam.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamMoments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamMoments {
    pub fn zeros(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }
}

/// One bias-corrected Adam update at step `t ≥ 1`.
pub fn adam_step(
    params: &mut [f64],
    grad: &[f64],
    moments: &mut AdamMoments,
    t: u64,
    lr: f64,
    betas: (f64, f64),
    eps: f64,
) {
    assert!(t >= 1, "Adam steps count from 1");
    assert_eq!(params.len(), grad.len(), "gradient length");
    let (b1, b2) = betas;
    let c1 = 1.0 - b1.powi(t as i32);
    let c2 = 1.0 - b2.powi(t as i32);
    for i in 0..params.len() {
        let g = grad[i];
        moments.m[i] = b1 * moments.m[i] + (1.0 - b1) * g;
        moments.v[i] = b2 * moments.v[i] + (1.0 - b2) * g * g;
        let m_hat = moments.m[i] / c1;
        let v_hat = moments.v[i] / c2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

/// One line of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub loss: f64,
    pub grad_norm: f64,
    pub elapsed_s: f64,
}

#[derive(Debug, Clone)]
pub struct TrainTrace {
    pub losses: Vec<f64>,
    pub grad_norms: Vec<f64>,
    pub wall_time_s: f64,
    pub net: NeuralDrift,
    pub lower_bound: Option<f64>,
}

impl TrainTrace {
    /// Mean loss over the last `window` iterations.
    pub fn tail_mean(&self, window: usize) -> f64 {
        let w = window.clamp(1, self.losses.len());
        self.losses[self.losses.len() - w..].iter().sum::<f64>() / w as f64
    }
}

/// Noise for path `i` of iteration `k`.
pub fn training_noise<M: SdeModel>(sys: &GuidedSystem<M>, cfg: &TrainConfig, k: usize) -> Vec<WienerPath> {
    let n = cfg.batch_size;
    (0..n)
        .map(|i| WienerPath::sample(*sys.grid(), sys.noise_dim(), cfg.seed, (k * n + i) as u64))
        .collect()
}

/// Runs `K` iterations of fresh batch, loss and gradient, clipping and Adam,
/// calling `on_iter` after each.
pub fn train<M: SdeModel>(
    sys: &GuidedSystem<M>,
    init: NeuralDrift,
    cfg: &TrainConfig,
    mut on_iter: impl FnMut(&IterationRecord),
) -> Result<TrainTrace> {
    cfg.validate()?;
    init.check_compatible(sys)?;
    let start = Instant::now();
    let mut net = init;
    let mut params = net.params().to_vec();
    let mut moments = AdamMoments::zeros(params.len());
    let mut losses = Vec::with_capacity(cfg.iterations);
    let mut grad_norms = Vec::with_capacity(cfg.iterations);
    for k in 0..cfg.iterations {
        let batch = training_noise(sys, cfg, k);
        let mut out = loss_and_grad(sys, &net, &batch)?;
        let norm = clip_gradient(&mut out.grad, cfg.clip_norm);
        adam_step(
            &mut params,
            &out.grad,
            &mut moments,
            k as u64 + 1,
            cfg.lr_at(k),
            cfg.adam_betas,
            cfg.adam_eps,
        );
        net.set_params(&params);
        losses.push(out.loss);
        grad_norms.push(norm);
        on_iter(&IterationRecord {
            iter: k,
            loss: out.loss,
            grad_norm: norm,
            elapsed_s: start.elapsed().as_secs_f64(),
        });
    }
    let lower_bound = sys.model().loss_lower_bound(sys.observation(), sys.x0());
    Ok(TrainTrace {
        losses,
        grad_norms,
        wall_time_s: start.elapsed().as_secs_f64(),
        net,
        lower_bound,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conditioning::ObservationScheme;
    use crate::grid::TimeGrid;
    use crate::neural::{Activation, MlpArchitecture};
    use crate::zoo::{auxiliary_for, BrownianDriftModel, ZooModel};

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = vec![0.5, -1.0];
        let mut mom = AdamMoments::zeros(2);
        adam_step(&mut p, &[0.0, 0.0], &mut mom, 1, 1e-3, (0.9, 0.999), 1e-8);
        assert_eq!(p, vec![0.5, -1.0]);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = vec![0.0, 0.0];
        let mut mom = AdamMoments::zeros(2);
        adam_step(&mut p, &[3.0, -0.2], &mut mom, 1, 1e-3, (0.9, 0.999), 1e-8);
        // m̂ = g, v̂ = g², so the step is lr · g / (|g| + ε)
        assert!((p[0] + 1e-3 * 3.0 / (3.0 + 1e-8)).abs() < 1e-15);
        assert!((p[1] - 1e-3 * 0.2 / (0.2 + 1e-8)).abs() < 1e-15);
    }

    #[test]
    fn cosine_schedule() {
        let cfg = TrainConfig {
            iterations: 100,
            learning_rate: 2.0,
            lr_schedule: LrSchedule::Cosine,
            ..TrainConfig::default()
        };
        assert_eq!(cfg.lr_at(0), 2.0);
        assert!((cfg.lr_at(50) - 1.0).abs() < 1e-12);
        assert!(cfg.lr_at(99) > 0.0 && cfg.lr_at(99) < 0.01);
    }

    #[test]
    fn config_problems_name_fields() {
        let cfg = TrainConfig {
            batch_size: 0,
            learning_rate: -1.0,
            ..TrainConfig::default()
        };
        let fields: Vec<_> = cfg.problems().into_iter().map(|(f, _)| f).collect();
        assert_eq!(fields, vec!["batch_size", "learning_rate"]);
    }

    fn brownian() -> GuidedSystem<ZooModel> {
        let model = ZooModel::Brownian(BrownianDriftModel { gamma: 1.0, sigma: 1.0 });
        let obs = ObservationScheme::full_state(&[0.0], 1e-10, 1.0).unwrap();
        let aux = auxiliary_for(&model, &obs).unwrap();
        GuidedSystem::new(model, aux, obs, vec![0.0], TimeGrid::new(1.0, 20).unwrap()).unwrap()
    }

    #[test]
    fn smoke_and_determinism() {
        let sys = brownian();
        let arch = MlpArchitecture::for_problem(1, 1, vec![4], Activation::Tanh);
        let net = NeuralDrift::init(arch, 10.0, 1.0, 0).unwrap();
        let cfg = TrainConfig {
            batch_size: 1,
            iterations: 1,
            ..TrainConfig::default()
        };
        let mut seen = Vec::new();
        let trace = train(&sys, net.clone(), &cfg, |r| seen.push(r.iter)).unwrap();
        assert_eq!(trace.losses.len(), 1);
        assert_eq!(seen, vec![0]);
        assert!((trace.lower_bound.unwrap() - 0.5).abs() < 1e-9);

        let cfg = TrainConfig {
            batch_size: 4,
            iterations: 5,
            ..TrainConfig::default()
        };
        let a = train(&sys, net.clone(), &cfg, |_| {}).unwrap();
        let b = train(&sys, net, &cfg, |_| {}).unwrap();
        assert_eq!(a.net.params(), b.net.params());
        assert_eq!(a.losses, b.losses);
    }
}
