//! The five benchmark models, their auxiliary processes and the closed-form
//! oracles available for the two linear ones.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::autodiff::Real;
use crate::conditioning::{affine_drift, LinearAuxiliary, ObservationScheme};
use crate::error::{BridgeError, Result};
use crate::linalg;
use crate::sde::SdeModel;

/// `dX = γ dt + σ dW`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BrownianDriftModel {
    pub gamma: f64,
    pub sigma: f64,
}

/// `dX = γ(μ − X) dt + σ dW`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OuModel {
    pub gamma: f64,
    pub mu: f64,
    pub sigma: f64,
}

/// Two-gene cell differentiation model with Hill-type feedback.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellModel {
    pub sigma: f64,
}

/// FitzHugh–Nagumo with noise on the recovery variable only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FhnModel {
    pub chi: f64,
    pub s: f64,
    pub gamma: f64,
    pub alpha: f64,
    pub sigma: f64,
}

/// `n` landmarks in `R^dim` moved by a Gaussian-kernel noise field,
/// `dX = Q(X) dW` with `Q_ij = k(x_i, x_j) I_dim`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LandmarkModel {
    pub n: usize,
    pub dim: usize,
    pub alpha: f64,
    pub kappa: f64,
}

/// Linear SDE with the same coefficients as a constant auxiliary process.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    beta: Vec<f64>,
    b: Vec<f64>,
    sigma: Vec<f64>,
    dim: usize,
    noise_dim: usize,
}

const HILL_K4: f64 = 0.0625; // 2^-4

#[inline]
fn hill<S: Real>(x: S) -> S {
    let x4 = x.powi(4);
    x4 / (x4 + HILL_K4)
}

#[inline]
fn hill_repress<S: Real>(x: S) -> S {
    S::constant(HILL_K4) / (x.powi(4) + HILL_K4)
}

impl SdeModel for BrownianDriftModel {
    fn dim(&self) -> usize {
        1
    }
    fn noise_dim(&self) -> usize {
        1
    }
    fn drift<S: Real>(&self, _t: f64, _x: &[S], out: &mut [S]) {
        out[0] = S::constant(self.gamma);
    }
    fn diffusion<S: Real>(&self, _t: f64, _x: &[S], out: &mut [S]) {
        out[0] = S::constant(self.sigma);
    }
    fn constant_diffusion(&self) -> bool {
        true
    }
}

impl SdeModel for OuModel {
    fn dim(&self) -> usize {
        1
    }
    fn noise_dim(&self) -> usize {
        1
    }
    fn drift<S: Real>(&self, _t: f64, x: &[S], out: &mut [S]) {
        out[0] = (-x[0] + self.mu) * self.gamma;
    }
    fn diffusion<S: Real>(&self, _t: f64, _x: &[S], out: &mut [S]) {
        out[0] = S::constant(self.sigma);
    }
    fn constant_diffusion(&self) -> bool {
        true
    }
}

impl SdeModel for CellModel {
    fn dim(&self) -> usize {
        2
    }
    fn noise_dim(&self) -> usize {
        2
    }
    fn drift<S: Real>(&self, _t: f64, x: &[S], out: &mut [S]) {
        out[0] = hill(x[0]) + hill_repress(x[1]) - x[0];
        out[1] = hill(x[1]) + hill_repress(x[0]) - x[1];
    }
    fn diffusion<S: Real>(&self, _t: f64, _x: &[S], out: &mut [S]) {
        out[0] = S::constant(self.sigma);
        out[1] = S::zero();
        out[2] = S::zero();
        out[3] = S::constant(self.sigma);
    }
    fn constant_diffusion(&self) -> bool {
        true
    }
}

impl SdeModel for FhnModel {
    fn dim(&self) -> usize {
        2
    }
    fn noise_dim(&self) -> usize {
        1
    }
    fn drift<S: Real>(&self, _t: f64, x: &[S], out: &mut [S]) {
        let inv_chi = 1.0 / self.chi;
        out[0] = (x[0] - x[1] - x[0].powi(3) + self.s) * inv_chi;
        out[1] = x[0] * self.gamma - x[1] + self.alpha;
    }
    fn diffusion<S: Real>(&self, _t: f64, _x: &[S], out: &mut [S]) {
        out[0] = S::zero();
        out[1] = S::constant(self.sigma);
    }
    fn constant_diffusion(&self) -> bool {
        true
    }
}

impl LandmarkModel {
    /// `k(x, y) = ½ α exp(−‖x − y‖² / (2κ²))`.
    pub fn kernel<S: Real>(&self, x: &[S], y: &[S]) -> S {
        let mut dist2 = S::zero();
        for (a, b) in x.iter().zip(y) {
            let diff = *a - *b;
            dist2 = dist2 + diff * diff;
        }
        (dist2 * (-0.5 / (self.kappa * self.kappa))).exp() * (0.5 * self.alpha)
    }

    /// `Q(x)` as a dense `nd × nd` matrix.
    pub fn q_matrix(&self, x: &[f64]) -> DMatrix<f64> {
        let d = self.n * self.dim;
        let mut q = vec![0.0; d * d];
        self.diffusion(0.0, x, &mut q);
        DMatrix::from_row_slice(d, d, &q)
    }
}

impl SdeModel for LandmarkModel {
    fn dim(&self) -> usize {
        self.n * self.dim
    }
    fn noise_dim(&self) -> usize {
        self.n * self.dim
    }
    fn drift<S: Real>(&self, _t: f64, _x: &[S], out: &mut [S]) {
        out.iter_mut().for_each(|o| *o = S::zero());
    }
    fn diffusion<S: Real>(&self, _t: f64, x: &[S], out: &mut [S]) {
        let (n, k) = (self.n, self.dim);
        let d = n * k;
        out.iter_mut().for_each(|o| *o = S::zero());
        for i in 0..n {
            for j in i..n {
                let kij = self.kernel(&x[i * k..(i + 1) * k], &x[j * k..(j + 1) * k]);
                for c in 0..k {
                    out[(i * k + c) * d + j * k + c] = kij;
                    out[(j * k + c) * d + i * k + c] = kij;
                }
            }
        }
    }
}

impl LinearModel {
    /// The linear SDE whose coefficients equal those of `aux`; the drifts
    /// agree bit for bit.
    pub fn from_auxiliary(aux: &LinearAuxiliary) -> Result<Self> {
        if !aux.is_constant() {
            return Err(BridgeError::UnsupportedModel(
                "linear model needs constant coefficients".into(),
            ));
        }
        let c = aux.at(0.0);
        Ok(Self {
            beta: c.beta.as_slice().to_vec(),
            b: linalg::to_row_major(&c.b),
            sigma: linalg::to_row_major(&c.sigma),
            dim: aux.dim(),
            noise_dim: aux.noise_dim(),
        })
    }
}

impl SdeModel for LinearModel {
    fn dim(&self) -> usize {
        self.dim
    }
    fn noise_dim(&self) -> usize {
        self.noise_dim
    }
    fn drift<S: Real>(&self, _t: f64, x: &[S], out: &mut [S]) {
        affine_drift(&self.beta, &self.b, x, out);
    }
    fn diffusion<S: Real>(&self, _t: f64, _x: &[S], out: &mut [S]) {
        for (o, s) in out.iter_mut().zip(&self.sigma) {
            *o = S::constant(*s);
        }
    }
    fn constant_diffusion(&self) -> bool {
        true
    }
}

/// Registry of benchmark models, keyed by name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "lowercase")]
pub enum ZooModel {
    Brownian(BrownianDriftModel),
    Ou(OuModel),
    Cell(CellModel),
    Fhn(FhnModel),
    Landmark(LandmarkModel),
}

pub const MODEL_NAMES: [&str; 5] = ["brownian", "ou", "cell", "fhn", "landmark"];

macro_rules! dispatch {
    ($self:expr, $m:ident => $body:expr) => {
        match $self {
            ZooModel::Brownian($m) => $body,
            ZooModel::Ou($m) => $body,
            ZooModel::Cell($m) => $body,
            ZooModel::Fhn($m) => $body,
            ZooModel::Landmark($m) => $body,
        }
    };
}

impl SdeModel for ZooModel {
    fn dim(&self) -> usize {
        dispatch!(self, m => m.dim())
    }
    fn noise_dim(&self) -> usize {
        dispatch!(self, m => m.noise_dim())
    }
    #[inline]
    fn drift<S: Real>(&self, t: f64, x: &[S], out: &mut [S]) {
        dispatch!(self, m => m.drift(t, x, out))
    }
    #[inline]
    fn diffusion<S: Real>(&self, t: f64, x: &[S], out: &mut [S]) {
        dispatch!(self, m => m.diffusion(t, x, out))
    }
    fn constant_diffusion(&self) -> bool {
        dispatch!(self, m => m.constant_diffusion())
    }

    fn loss_lower_bound(&self, obs: &ObservationScheme, x0: &[f64]) -> Option<f64> {
        if x0.len() != 1 {
            return None;
        }
        optimal_theta_and_bound(self, obs, x0[0]).ok().map(|(_, b)| b)
    }
}

impl ZooModel {
    pub fn name(&self) -> &'static str {
        match self {
            ZooModel::Brownian(_) => "brownian",
            ZooModel::Ou(_) => "ou",
            ZooModel::Cell(_) => "cell",
            ZooModel::Fhn(_) => "fhn",
            ZooModel::Landmark(_) => "landmark",
        }
    }

    /// Checks parameter invariants, returning `(field, message)` pairs.
    pub fn validate(&self) -> Vec<(String, String)> {
        let mut errs = Vec::new();
        let mut positive = |field: &str, v: f64| {
            if !(v.is_finite() && v > 0.0) {
                errs.push((field.to_string(), format!("must be positive, got {v}")));
            }
        };
        match self {
            ZooModel::Brownian(m) => positive("sigma", m.sigma),
            ZooModel::Ou(m) => {
                positive("sigma", m.sigma);
                positive("gamma", m.gamma);
            }
            ZooModel::Cell(m) => positive("sigma", m.sigma),
            ZooModel::Fhn(m) => {
                positive("sigma", m.sigma);
                if m.chi == 0.0 || !m.chi.is_finite() {
                    errs.push(("chi".into(), "must be non-zero".into()));
                }
            }
            ZooModel::Landmark(m) => {
                positive("alpha", m.alpha);
                positive("kappa", m.kappa);
                if m.n == 0 {
                    errs.push(("n".into(), "need at least one landmark".into()));
                }
                if m.dim == 0 {
                    errs.push(("dim".into(), "ambient dimension must be positive".into()));
                }
            }
        }
        errs
    }
}

/// The auxiliary process used for each benchmark model.
pub fn auxiliary_for(model: &ZooModel, obs: &ObservationScheme) -> Result<LinearAuxiliary> {
    match model {
        ZooModel::Brownian(m) => {
            LinearAuxiliary::scaled_brownian(DMatrix::from_element(1, 1, m.sigma))
        }
        ZooModel::Ou(m) => LinearAuxiliary::scaled_brownian(DMatrix::from_element(1, 1, m.sigma)),
        ZooModel::Cell(m) => LinearAuxiliary::constant(
            DVector::from_element(2, 1.0),
            -DMatrix::identity(2, 2),
            DMatrix::identity(2, 2) * m.sigma,
        ),
        ZooModel::Fhn(m) => {
            if obs.obs_dim() != 1 {
                return Err(BridgeError::UnsupportedModel(
                    "FHN auxiliary linearises around a scalar observation".into(),
                ));
            }
            let v = obs.v()[0];
            // −x³ ≈ 2v³ − 3v²x around x = v
            let b = DMatrix::from_row_slice(
                2,
                2,
                &[(1.0 - 3.0 * v * v) / m.chi, -1.0 / m.chi, m.gamma, -1.0],
            );
            let beta = linalg::vector(&[(2.0 * v.powi(3) + m.s) / m.chi, m.alpha]);
            LinearAuxiliary::constant(beta, b, DMatrix::from_row_slice(2, 1, &[0.0, m.sigma]))
        }
        ZooModel::Landmark(m) => {
            let d = m.n * m.dim;
            if obs.obs_dim() != d {
                return Err(BridgeError::UnsupportedModel(
                    "landmark auxiliary needs a full-state observation".into(),
                ));
            }
            LinearAuxiliary::scaled_brownian(m.q_matrix(obs.v().as_slice()))
        }
    }
}

/// Landmarks on the ellipse `(a cos φ, b sin φ) + center` at `n` equal angles,
/// flattened as `[x_0, y_0, x_1, y_1, ...]`.
pub fn ellipse(n: usize, a: f64, b: f64, center: [f64; 2]) -> Vec<f64> {
    (0..n)
        .flat_map(|i| {
            let phi = 2.0 * PI * i as f64 / n as f64;
            [center[0] + a * phi.cos(), center[1] + b * phi.sin()]
        })
        .collect()
}

/// A scalar linear model with Gaussian transitions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LinearScalar {
    Brownian(BrownianDriftModel),
    Ou(OuModel),
}

impl LinearScalar {
    pub fn from_zoo(model: &ZooModel) -> Result<Self> {
        match model {
            ZooModel::Brownian(m) => Ok(Self::Brownian(*m)),
            ZooModel::Ou(m) => Ok(Self::Ou(*m)),
            other => Err(BridgeError::UnsupportedModel(format!(
                "no closed-form bridge for the {} model",
                other.name()
            ))),
        }
    }

    pub fn sigma(&self) -> f64 {
        match self {
            Self::Brownian(m) => m.sigma,
            Self::Ou(m) => m.sigma,
        }
    }

    /// Mean and variance of `X_{t+τ}` given `X_t = x`.
    pub fn transition(&self, x: f64, tau: f64) -> (f64, f64) {
        match self {
            Self::Brownian(m) => (x + m.gamma * tau, m.sigma * m.sigma * tau),
            Self::Ou(m) => {
                let e = (-m.gamma * tau).exp();
                let var = m.sigma * m.sigma / (2.0 * m.gamma) * (1.0 - (-2.0 * m.gamma * tau).exp());
                (m.mu + (x - m.mu) * e, var)
            }
        }
    }

    /// `∂ mean / ∂ x` of the transition.
    fn mean_slope(&self, tau: f64) -> f64 {
        match self {
            Self::Brownian(_) => 1.0,
            Self::Ou(m) => (-m.gamma * tau).exp(),
        }
    }

    fn drift(&self, x: f64) -> f64 {
        match self {
            Self::Brownian(m) => m.gamma,
            Self::Ou(m) => m.gamma * (m.mu - x),
        }
    }
}

fn log_gaussian(v: f64, mean: f64, var: f64) -> f64 {
    -0.5 * (2.0 * PI * var).ln() - (v - mean).powi(2) / (2.0 * var)
}

/// Drift of the exactly conditioned process `X | X_T = v` at `(t, x)`.
pub fn analytic_bridge_drift(model: &LinearScalar, t: f64, x: f64, v: f64, t_end: f64) -> f64 {
    let tau = t_end - t;
    assert!(tau > 0.0, "bridge drift is singular at t = T");
    match model {
        LinearScalar::Brownian(_) => (v - x) / tau,
        LinearScalar::Ou(m) => {
            let e = (-m.gamma * tau).exp();
            m.gamma * (m.mu - x)
                + 2.0 * m.gamma * e / (1.0 - e * e) * ((v - m.mu) - e * (x - m.mu))
        }
    }
}

/// The true bridge as an [`SdeModel`]; only defined for `t < T`.
#[derive(Debug, Clone, Copy)]
pub struct AnalyticBridge {
    pub model: LinearScalar,
    pub v: f64,
    pub t_end: f64,
}

impl SdeModel for AnalyticBridge {
    fn dim(&self) -> usize {
        1
    }
    fn noise_dim(&self) -> usize {
        1
    }
    fn drift<S: Real>(&self, t: f64, x: &[S], out: &mut [S]) {
        let tau = self.t_end - t;
        // affine in x: drift = c0 + c1 x
        let c0 = analytic_bridge_drift(&self.model, t, 0.0, self.v, self.t_end);
        let c1 = analytic_bridge_drift(&self.model, t, 1.0, self.v, self.t_end) - c0;
        debug_assert!(tau > 0.0);
        out[0] = x[0] * c1 + c0;
    }
    fn diffusion<S: Real>(&self, _t: f64, _x: &[S], out: &mut [S]) {
        out[0] = S::constant(self.model.sigma());
    }
    fn constant_diffusion(&self) -> bool {
        true
    }
}

/// Closed-form optimal drift correction `ϑ_opt = σ ∂ₓ(log h − log h̃)` for a
/// scalar linear model guided by the scaled Brownian auxiliary.
#[derive(Debug, Clone, Copy)]
pub struct OptimalCorrection {
    model: LinearScalar,
    v: f64,
    eps2: f64,
    t_end: f64,
}

impl OptimalCorrection {
    pub fn eval(&self, t: f64, x: f64) -> f64 {
        let tau = self.t_end - t;
        let sigma = self.model.sigma();
        let (mean, var) = self.model.transition(x, tau);
        let score = self.model.mean_slope(tau) * (self.v - mean) / (var + self.eps2);
        let aux_score = (self.v - x) / (sigma * sigma * tau + self.eps2);
        sigma * (score - aux_score)
    }

    /// `log h(t, x)` including the observation noise.
    pub fn log_h(&self, t: f64, x: f64) -> f64 {
        let (mean, var) = self.model.transition(x, self.t_end - t);
        log_gaussian(self.v, mean, var + self.eps2)
    }

    /// `log h̃(t, x)` for the scaled Brownian auxiliary.
    pub fn log_h_tilde(&self, t: f64, x: f64) -> f64 {
        let sigma = self.model.sigma();
        log_gaussian(self.v, x, sigma * sigma * (self.t_end - t) + self.eps2)
    }

    /// Drift of the conditioned process, `b + σ² ∂ₓ log h`.
    pub fn conditioned_drift(&self, t: f64, x: f64) -> f64 {
        let tau = self.t_end - t;
        let (mean, var) = self.model.transition(x, tau);
        let s = self.model.sigma();
        self.model.drift(x) + s * s * self.model.mean_slope(tau) * (self.v - mean) / (var + self.eps2)
    }
}

/// Optimal correction and the loss lower bound `log h̃(0, x0) / h(0, x0)`.
pub fn optimal_theta_and_bound(
    model: &ZooModel,
    obs: &ObservationScheme,
    x0: f64,
) -> Result<(OptimalCorrection, f64)> {
    let model = LinearScalar::from_zoo(model)?;
    if obs.obs_dim() != 1 || obs.l_obs()[(0, 0)] != 1.0 {
        return Err(BridgeError::UnsupportedModel(
            "closed form assumes full observation of a scalar state".into(),
        ));
    }
    let opt = OptimalCorrection {
        model,
        v: obs.v()[0],
        eps2: obs.sigma()[(0, 0)],
        t_end: obs.t_end(),
    };
    let bound = opt.log_h_tilde(0.0, x0) - opt.log_h(0.0, x0);
    Ok((opt, bound))
}
