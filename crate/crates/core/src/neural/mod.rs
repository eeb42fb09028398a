//! The learned drift correction `ϑ_θ(t, x)`, its checkpoints and the neural
//! bridge sampler.

mod loss;
mod mlp;

use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::Uniform;
use serde::{Deserialize, Serialize};

use crate::error::{BridgeError, Result};
use crate::guided::GuidedSystem;
use crate::noise::{keyed_rng, WienerPath};
use crate::sde::{check_finite, SdeModel, Trajectory};

pub use loss::{batch_loss, clip_gradient, loss_and_grad, LossAndGrad};
pub use mlp::lipswish;
pub(crate) use mlp::Mlp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    LipSwish,
}

impl Activation {
    /// Upper bound on the Lipschitz constant.
    pub fn lipschitz(self) -> f64 {
        1.0
    }
}

/// Widths and activation of the network `(t/T, x) ↦ ϑ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpArchitecture {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub output_dim: usize,
    pub activation: Activation,
}

impl MlpArchitecture {
    /// Network for a `d`-dimensional state driven by `d_w` Brownian motions.
    pub fn for_problem(d: usize, d_w: usize, hidden: Vec<usize>, activation: Activation) -> Self {
        Self {
            input_dim: d + 1,
            hidden,
            output_dim: d_w,
            activation,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden.is_empty() {
            return Err(BridgeError::InvalidArgument("need at least one hidden layer".into()));
        }
        if self.input_dim < 2 || self.output_dim == 0 || self.hidden.contains(&0) {
            return Err(BridgeError::InvalidArgument(format!(
                "invalid layer widths: input {}, hidden {:?}, output {}",
                self.input_dim, self.hidden, self.output_dim
            )));
        }
        Ok(())
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_dim];
        w.extend(&self.hidden);
        w.push(self.output_dim);
        w
    }

    pub fn n_params(&self) -> usize {
        self.widths().windows(2).map(|p| p[0] * p[1] + p[1]).sum()
    }
}

/// Default output bound `10 √d_w`.
pub fn default_cap(d_w: usize) -> f64 {
    10.0 * (d_w as f64).sqrt()
}

/// Parameters of `ϑ_θ` together with its architecture.
///
/// The output is `cap · tanh(z / cap)` of the last affine layer, so
/// `‖ϑ‖∞ ≤ cap` for every input.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuralDrift {
    arch: MlpArchitecture,
    params: Vec<f64>,
    cap: f64,
    t_end: f64,
    mlp: Mlp,
}

const CHECKPOINT_FORMAT: &str = "bridgesim-neural-drift";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    architecture: MlpArchitecture,
    cap: f64,
    t_end: f64,
    params: Vec<f64>,
}

impl NeuralDrift {
    pub fn from_params(arch: MlpArchitecture, params: Vec<f64>, cap: f64, t_end: f64) -> Result<Self> {
        arch.validate()?;
        if params.len() != arch.n_params() {
            return Err(BridgeError::DimensionMismatch(format!(
                "architecture has {} parameters, got {}",
                arch.n_params(),
                params.len()
            )));
        }
        if !(cap > 0.0 && cap.is_finite()) {
            return Err(BridgeError::InvalidArgument(format!("output cap must be positive, got {cap}")));
        }
        if !(t_end > 0.0 && t_end.is_finite()) {
            return Err(BridgeError::InvalidArgument(format!("horizon must be positive, got {t_end}")));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(BridgeError::InvalidArgument("parameters must be finite".into()));
        }
        let mlp = Mlp::new(&arch.widths(), arch.activation, cap);
        Ok(Self {
            arch,
            params,
            cap,
            t_end,
            mlp,
        })
    }

    /// All weights and biases zero, so `ϑ ≡ 0`.
    pub fn zeros(arch: MlpArchitecture, cap: f64, t_end: f64) -> Result<Self> {
        let n = arch.n_params();
        Self::from_params(arch, vec![0.0; n], cap, t_end)
    }

    /// Weights uniform on `±√(6 / (fan_in + fan_out))`, zero biases.
    pub fn init(arch: MlpArchitecture, cap: f64, t_end: f64, seed: u64) -> Result<Self> {
        let mut net = Self::zeros(arch, cap, t_end)?;
        let mut rng = keyed_rng(seed, 0);
        for layer in &net.mlp.layers {
            let limit = (6.0 / (layer.fan_in + layer.fan_out) as f64).sqrt();
            let dist = Uniform::new_inclusive(-limit, limit);
            for p in &mut net.params[layer.w..layer.b] {
                *p = rng.sample(dist);
            }
        }
        Ok(net)
    }

    pub fn architecture(&self) -> &MlpArchitecture {
        &self.arch
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn cap(&self) -> f64 {
        self.cap
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn set_params(&mut self, params: &[f64]) {
        assert_eq!(params.len(), self.params.len(), "parameter count");
        self.params.copy_from_slice(params);
    }

    pub(crate) fn mlp(&self) -> &Mlp {
        &self.mlp
    }

    /// Fills the network input `(t/T, x)` at the head of a forward cache.
    #[inline]
    pub(crate) fn load_input(&self, t: f64, x: &[f64], cache: &mut [f64]) {
        cache[0] = t / self.t_end;
        cache[1..1 + x.len()].copy_from_slice(x);
    }

    /// `ϑ_θ(t, x)`.
    pub fn forward(&self, t: f64, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len() + 1, self.arch.input_dim, "state dimension");
        let mut cache = vec![0.0; self.mlp.cache_len];
        self.load_input(t, x, &mut cache);
        let mut out = vec![0.0; self.arch.output_dim];
        self.mlp.forward(&self.params, &mut cache, &mut out);
        out
    }

    /// Upper bound on the Lipschitz constant of `x ↦ ϑ_θ(t, x)`: the product
    /// of layer spectral norms (time column excluded) and activation bounds.
    pub fn lipschitz_bound(&self) -> f64 {
        let mut k = 1.0;
        for (l, layer) in self.mlp.layers.iter().enumerate() {
            let wt = DMatrix::from_row_slice(layer.fan_in, layer.fan_out, &self.params[layer.w..layer.b]);
            let wt = if l == 0 { wt.rows(1, layer.fan_in - 1).into_owned() } else { wt };
            k *= spectral_norm(&wt);
            if l + 1 < self.mlp.layers.len() {
                k *= self.arch.activation.lipschitz();
            }
        }
        k
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            architecture: self.arch.clone(),
            cap: self.cap,
            t_end: self.t_end,
            params: self.params.clone(),
        })
        .expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text)
            .map_err(|e| BridgeError::InvalidArgument(format!("malformed checkpoint: {e}")))?;
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(BridgeError::InvalidArgument(format!(
                "unsupported checkpoint {} v{}",
                ck.format, ck.version
            )));
        }
        Self::from_params(ck.architecture, ck.params, ck.cap, ck.t_end)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        std::fs::write(path, self.to_json())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| {
            BridgeError::InvalidArgument(format!("cannot read {}: {e}", path.as_ref().display()))
        })?;
        Self::from_json(&text)
    }

    /// Checks the network against a guided system's dimensions and horizon.
    pub fn check_compatible<M: SdeModel>(&self, sys: &GuidedSystem<M>) -> Result<()> {
        if self.arch.input_dim != sys.dim() + 1 || self.arch.output_dim != sys.noise_dim() {
            return Err(BridgeError::DimensionMismatch(format!(
                "network maps R^{} to R^{}, system needs R^{} to R^{}",
                self.arch.input_dim,
                self.arch.output_dim,
                sys.dim() + 1,
                sys.noise_dim()
            )));
        }
        if self.t_end != sys.grid().t_end() {
            return Err(BridgeError::InvalidArgument(format!(
                "network trained for T = {}, system has T = {}",
                self.t_end,
                sys.grid().t_end()
            )));
        }
        Ok(())
    }
}

/// Power iteration on `AᵀA`.
fn spectral_norm(a: &DMatrix<f64>) -> f64 {
    let ata = a.transpose() * a;
    let n = ata.ncols();
    let mut v = nalgebra::DVector::from_element(n, 1.0 / (n as f64).sqrt());
    let mut lambda = 0.0;
    for _ in 0..500 {
        let w = &ata * &v;
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        let next = norm;
        v = w / norm;
        if (next - lambda).abs() <= 1e-13 * next {
            lambda = next;
            break;
        }
        lambda = next;
    }
    // power iteration approaches from below; pad to keep the bound safe
    lambda.sqrt() * (1.0 + 1e-6)
}

/// `ϑ_θ(t, x)`.
pub fn theta_forward(net: &NeuralDrift, t: f64, x: &[f64]) -> Vec<f64> {
    net.forward(t, x)
}

/// Euler–Maruyama under `b + a r̃ + σ ϑ_θ`. The trajectory carries
/// `log Ψ = Σ G δt` and the path loss `Σ (½‖ϑ‖² − G) δt`.
pub fn sample_neural<M: SdeModel>(
    sys: &GuidedSystem<M>,
    net: &NeuralDrift,
    w: &WienerPath,
) -> Result<Trajectory> {
    net.check_compatible(sys)?;
    if w.dim() != sys.noise_dim() || w.grid() != sys.grid() {
        return Err(BridgeError::DimensionMismatch(
            "Wiener path does not match the guided system".into(),
        ));
    }
    let grid = *sys.grid();
    let (d, d_w) = (sys.dim(), sys.noise_dim());
    let dt = grid.dt();
    let mlp = net.mlp();
    let mut states = Vec::with_capacity((grid.steps() + 1) * d);
    states.extend_from_slice(sys.x0());
    let mut x = sys.x0().to_vec();
    let mut next = vec![0.0; d];
    let mut theta = vec![0.0; d_w];
    let mut cache = vec![0.0; mlp.cache_len];
    let mut s = sys.scratch::<f64>();
    let (mut log_psi, mut loss) = (0.0, 0.0);
    for m in 0..grid.steps() {
        net.load_input(grid.time(m), &x, &mut cache);
        mlp.forward(net.params(), &mut cache, &mut theta);
        let g = sys.step(m, &x, Some(&theta), Some(w.increment(m)), &mut s, Some(&mut next));
        check_finite(&next, m + 1)?;
        let half_sq: f64 = 0.5 * theta.iter().map(|v| v * v).sum::<f64>();
        log_psi += g * dt;
        loss += (half_sq - g) * dt;
        std::mem::swap(&mut x, &mut next);
        states.extend_from_slice(&x);
    }
    let mut traj = Trajectory::new(grid, d, states);
    traj.log_psi = log_psi;
    traj.loss_integrand = loss;
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn arch() -> MlpArchitecture {
        MlpArchitecture::for_problem(2, 2, vec![8, 8], Activation::Tanh)
    }

    #[test]
    fn zero_network_outputs_zero() {
        let net = NeuralDrift::zeros(arch(), default_cap(2), 1.0).unwrap();
        assert_eq!(net.forward(0.3, &[1.0, -4.0]), vec![0.0, 0.0]);
    }

    #[test]
    fn output_is_bounded_by_cap() {
        let mut net = NeuralDrift::init(arch(), 0.5, 1.0, 3).unwrap();
        let big: Vec<f64> = net.params().iter().map(|p| p * 100.0).collect();
        net.set_params(&big);
        for x in [[1e3, -1e3], [0.0, 0.0], [50.0, 7.0]] {
            assert!(net.forward(0.5, &x).iter().all(|v| v.abs() <= 0.5));
        }
    }

    #[test]
    fn init_is_seeded_glorot() {
        let a = NeuralDrift::init(arch(), 1.0, 1.0, 7).unwrap();
        let b = NeuralDrift::init(arch(), 1.0, 1.0, 7).unwrap();
        assert_eq!(a.params(), b.params());
        let limit = (6.0f64 / (3.0 + 8.0)).sqrt();
        let layer = a.mlp().layers[0];
        assert!(a.params()[layer.w..layer.b].iter().all(|p| p.abs() <= limit));
        assert!(a.params()[layer.b..layer.b + 8].iter().all(|&p| p == 0.0));
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let net = NeuralDrift::init(arch(), 1.7, 2.5, 11).unwrap();
        let back = NeuralDrift::from_json(&net.to_json()).unwrap();
        assert_eq!(net, back);
        assert!(net.params().iter().zip(back.params()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn rejects_bad_checkpoints() {
        let net = NeuralDrift::init(arch(), 1.0, 1.0, 1).unwrap();
        let tampered = net.to_json().replace("\"version\":1", "\"version\":9");
        assert!(NeuralDrift::from_json(&tampered).is_err());
        assert!(NeuralDrift::from_params(arch(), vec![0.0; 3], 1.0, 1.0).is_err());
        let no_hidden = MlpArchitecture::for_problem(2, 2, vec![], Activation::Tanh);
        assert!(NeuralDrift::zeros(no_hidden, 1.0, 1.0).is_err());
    }

    #[test]
    fn lipschitz_bound_holds_on_probes() {
        let net = NeuralDrift::init(MlpArchitecture::for_problem(2, 2, vec![16, 16], Activation::LipSwish), 20.0, 1.0, 5).unwrap();
        let k = net.lipschitz_bound();
        let mut rng = keyed_rng(1, 0);
        for _ in 0..500 {
            let x: [f64; 2] = [rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)];
            let y: [f64; 2] = [rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)];
            let t = rng.gen_range(0.0..1.0);
            let (a, b) = (net.forward(t, &x), net.forward(t, &y));
            let num = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
            let den = ((x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2)).sqrt();
            assert!(num <= k * den + 1e-12);
        }
    }
}
