//! Observation scheme, linear auxiliary process and the backward ODEs
//! for `(L, M†, u)` that define the guiding term `r̃` and `H̃`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::autodiff::Real;
use crate::error::{BridgeError, Result};
use crate::grid::TimeGrid;
use crate::linalg;

/// Observation `v ~ N(L x_T, Σ)` at time `T`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationScheme {
    l_obs: DMatrix<f64>,
    sigma: DMatrix<f64>,
    v: DVector<f64>,
    t_end: f64,
}

impl ObservationScheme {
    pub fn new(
        l_obs: DMatrix<f64>,
        sigma: DMatrix<f64>,
        v: DVector<f64>,
        t_end: f64,
    ) -> Result<Self> {
        let dp = l_obs.nrows();
        if dp == 0 || dp > l_obs.ncols() {
            return Err(BridgeError::DimensionMismatch(format!(
                "observation matrix is {}x{}; need 1 <= d' <= d",
                dp,
                l_obs.ncols()
            )));
        }
        if linalg::rank(&l_obs) != dp {
            return Err(BridgeError::InvalidArgument(
                "observation matrix must have full row rank".into(),
            ));
        }
        if sigma.nrows() != dp || sigma.ncols() != dp || v.len() != dp {
            return Err(BridgeError::DimensionMismatch(format!(
                "Σ is {}x{} and v has length {}, expected d' = {dp}",
                sigma.nrows(),
                sigma.ncols(),
                v.len()
            )));
        }
        if (&sigma - sigma.transpose()).abs().max() > 1e-12 * sigma.abs().max().max(1.0) {
            return Err(BridgeError::InvalidArgument("Σ must be symmetric".into()));
        }
        if linalg::sym_min_eigenvalue(&sigma) <= 0.0 {
            return Err(BridgeError::InvalidArgument(
                "Σ must be positive definite".into(),
            ));
        }
        if !(t_end.is_finite() && t_end > 0.0) {
            return Err(BridgeError::InvalidArgument(format!(
                "observation time must be positive, got {t_end}"
            )));
        }
        Ok(Self {
            l_obs,
            sigma,
            v,
            t_end,
        })
    }

    /// `Σ = ε² I`.
    pub fn with_noise(l_obs: DMatrix<f64>, eps2: f64, v: DVector<f64>, t_end: f64) -> Result<Self> {
        let dp = l_obs.nrows();
        Self::new(l_obs, DMatrix::identity(dp, dp) * eps2, v, t_end)
    }

    /// Full-state observation `L = I`.
    pub fn full_state(v: &[f64], eps2: f64, t_end: f64) -> Result<Self> {
        let d = v.len();
        Self::with_noise(DMatrix::identity(d, d), eps2, linalg::vector(v), t_end)
    }

    pub fn l_obs(&self) -> &DMatrix<f64> {
        &self.l_obs
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn v(&self) -> &DVector<f64> {
        &self.v
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn obs_dim(&self) -> usize {
        self.l_obs.nrows()
    }

    pub fn state_dim(&self) -> usize {
        self.l_obs.ncols()
    }

    /// `‖L x − v‖₂`.
    pub fn residual_norm(&self, x: &[f64]) -> f64 {
        (&self.l_obs * linalg::vector(x) - &self.v).norm()
    }
}

/// `(β(t), B(t), σ̃(t))` evaluated at one time.
#[derive(Debug, Clone, PartialEq)]
pub struct AuxCoefficients {
    pub beta: DVector<f64>,
    pub b: DMatrix<f64>,
    pub sigma: DMatrix<f64>,
}

impl AuxCoefficients {
    /// `ã = σ̃ σ̃ᵀ`.
    pub fn a_tilde(&self) -> DMatrix<f64> {
        &self.sigma * self.sigma.transpose()
    }
}

type CoefficientFn = dyn Fn(f64) -> AuxCoefficients + Send + Sync;

#[derive(Clone)]
enum Coefficients {
    Constant(AuxCoefficients),
    TimeVarying(Arc<CoefficientFn>),
}

/// Linear SDE `dX̃ = {β(t) + B(t) X̃} dt + σ̃(t) dW`.
#[derive(Clone)]
pub struct LinearAuxiliary {
    dim: usize,
    noise_dim: usize,
    coeffs: Coefficients,
}

impl fmt::Debug for LinearAuxiliary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.coeffs {
            Coefficients::Constant(c) => f
                .debug_struct("LinearAuxiliary")
                .field("beta", &c.beta.as_slice())
                .field("b", &linalg::to_rows(&c.b))
                .field("sigma", &linalg::to_rows(&c.sigma))
                .finish(),
            Coefficients::TimeVarying(_) => f
                .debug_struct("LinearAuxiliary")
                .field("dim", &self.dim)
                .field("noise_dim", &self.noise_dim)
                .finish_non_exhaustive(),
        }
    }
}

impl LinearAuxiliary {
    pub fn constant(beta: DVector<f64>, b: DMatrix<f64>, sigma: DMatrix<f64>) -> Result<Self> {
        let dim = beta.len();
        if b.nrows() != dim || b.ncols() != dim || sigma.nrows() != dim {
            return Err(BridgeError::DimensionMismatch(format!(
                "auxiliary β has length {dim}, B is {}x{}, σ̃ has {} rows",
                b.nrows(),
                b.ncols(),
                sigma.nrows()
            )));
        }
        let coeffs = AuxCoefficients { beta, b, sigma };
        if !coeffs.beta.iter().chain(coeffs.b.iter()).chain(coeffs.sigma.iter()).all(|v| v.is_finite()) {
            return Err(BridgeError::InvalidArgument(
                "auxiliary coefficients must be finite".into(),
            ));
        }
        Ok(Self {
            dim,
            noise_dim: coeffs.sigma.ncols(),
            coeffs: Coefficients::Constant(coeffs),
        })
    }

    /// Scaled Brownian motion `X̃ = σ̃ W`.
    pub fn scaled_brownian(sigma: DMatrix<f64>) -> Result<Self> {
        let d = sigma.nrows();
        Self::constant(DVector::zeros(d), DMatrix::zeros(d, d), sigma)
    }

    /// Coefficients supplied as a function of time.
    pub fn time_varying<F>(dim: usize, noise_dim: usize, f: F) -> Self
    where
        F: Fn(f64) -> AuxCoefficients + Send + Sync + 'static,
    {
        Self {
            dim,
            noise_dim,
            coeffs: Coefficients::TimeVarying(Arc::new(f)),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn noise_dim(&self) -> usize {
        self.noise_dim
    }

    pub fn is_constant(&self) -> bool {
        matches!(self.coeffs, Coefficients::Constant(_))
    }

    pub fn at(&self, t: f64) -> AuxCoefficients {
        match &self.coeffs {
            Coefficients::Constant(c) => c.clone(),
            Coefficients::TimeVarying(f) => f(t),
        }
    }
}

/// `out = β + B x`, shared by the auxiliary drift and linear models so that
/// equal coefficients give bit-identical drifts.
#[inline]
pub fn affine_drift<S: Real>(beta: &[f64], b: &[f64], x: &[S], out: &mut [S]) {
    let d = x.len();
    for (i, o) in out.iter_mut().enumerate() {
        let row = &b[i * d..(i + 1) * d];
        let mut acc = S::zero();
        for (bij, xj) in row.iter().zip(x) {
            acc = acc + *xj * *bij;
        }
        *o = acc + beta[i];
    }
}

/// Grid samples of the backward ODE solution.
#[derive(Debug, Clone)]
pub struct BackwardOdeSolution {
    grid: TimeGrid,
    l: Vec<DMatrix<f64>>,
    mdag: Vec<DMatrix<f64>>,
    m: Vec<DMatrix<f64>>,
    u: Vec<DVector<f64>>,
}

impl BackwardOdeSolution {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn l(&self, m: usize) -> &DMatrix<f64> {
        &self.l[m]
    }

    pub fn mdag(&self, m: usize) -> &DMatrix<f64> {
        &self.mdag[m]
    }

    /// `M(t_m) = M†(t_m)⁻¹`.
    pub fn m(&self, m: usize) -> &DMatrix<f64> {
        &self.m[m]
    }

    pub fn u(&self, m: usize) -> &DVector<f64> {
        &self.u[m]
    }
}

struct OdeState {
    l: DMatrix<f64>,
    mdag: DMatrix<f64>,
    u: DVector<f64>,
}

impl OdeState {
    /// Time derivative `(−L B, −L ã Lᵀ, −L β)`.
    fn rate(&self, c: &AuxCoefficients, a_tilde: &DMatrix<f64>) -> OdeState {
        OdeState {
            l: -(&self.l * &c.b),
            mdag: -(&self.l * a_tilde * self.l.transpose()),
            u: -(&self.l * &c.beta),
        }
    }

    fn axpy(&self, h: f64, k: &OdeState) -> OdeState {
        OdeState {
            l: &self.l + &k.l * h,
            mdag: &self.mdag + &k.mdag * h,
            u: &self.u + &k.u * h,
        }
    }
}

/// Integrates `dL = −L B dt`, `dM† = −L ã Lᵀ dt`, `du = −L β dt` backward
/// from `(L_obs, Σ, 0)` at `T` with classical RK4 on `grid`.
pub fn solve_backward_odes(
    aux: &LinearAuxiliary,
    obs: &ObservationScheme,
    grid: &TimeGrid,
) -> Result<BackwardOdeSolution> {
    if (grid.t_end() - obs.t_end()).abs() > 1e-12 * obs.t_end() {
        return Err(BridgeError::InvalidArgument(format!(
            "grid ends at {} but the observation is at {}",
            grid.t_end(),
            obs.t_end()
        )));
    }
    if aux.dim() != obs.state_dim() {
        return Err(BridgeError::DimensionMismatch(format!(
            "auxiliary dimension {} vs observation matrix with {} columns",
            aux.dim(),
            obs.state_dim()
        )));
    }
    let steps = grid.steps();
    let dt = grid.dt();
    let mut l = vec![DMatrix::zeros(0, 0); steps + 1];
    let mut mdag = vec![DMatrix::zeros(0, 0); steps + 1];
    let mut u = vec![DVector::zeros(0); steps + 1];

    let mut y = OdeState {
        l: obs.l_obs().clone(),
        mdag: obs.sigma().clone(),
        u: DVector::zeros(obs.obs_dim()),
    };
    let constant = aux.is_constant().then(|| {
        let c = aux.at(0.0);
        let a = c.a_tilde();
        (c, a)
    });
    let coeffs = |t: f64| match &constant {
        Some((c, a)) => (c.clone(), a.clone()),
        None => {
            let c = aux.at(t);
            let a = c.a_tilde();
            (c, a)
        }
    };

    for m in (0..=steps).rev() {
        l[m] = y.l.clone();
        mdag[m] = y.mdag.clone();
        u[m] = y.u.clone();
        if m == 0 {
            break;
        }
        let t = grid.time(m);
        let h = -dt;
        let (c1, a1) = coeffs(t);
        let (c2, a2) = coeffs(t + 0.5 * h);
        let (c4, a4) = coeffs(t + h);
        let k1 = y.rate(&c1, &a1);
        let k2 = y.axpy(0.5 * h, &k1).rate(&c2, &a2);
        let k3 = y.axpy(0.5 * h, &k2).rate(&c2, &a2);
        let k4 = y.axpy(h, &k3).rate(&c4, &a4);
        y = OdeState {
            l: &y.l + (&k1.l + &k2.l * 2.0 + &k3.l * 2.0 + &k4.l) * (h / 6.0),
            mdag: &y.mdag + (&k1.mdag + &k2.mdag * 2.0 + &k3.mdag * 2.0 + &k4.mdag) * (h / 6.0),
            u: &y.u + (&k1.u + &k2.u * 2.0 + &k3.u * 2.0 + &k4.u) * (h / 6.0),
        };
        // keep M† exactly symmetric
        y.mdag = (&y.mdag + y.mdag.transpose()) * 0.5;
    }
    // the terminal values are stored exactly as given
    l[steps] = obs.l_obs().clone();
    mdag[steps] = obs.sigma().clone();
    u[steps] = DVector::zeros(obs.obs_dim());

    let m = mdag
        .iter()
        .enumerate()
        .map(|(node, md)| {
            linalg::spd_inverse(md).map_err(|pivot| BridgeError::SingularMdag { node, pivot })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(BackwardOdeSolution {
        grid: *grid,
        l,
        mdag,
        m,
        u,
    })
}

/// `r̃(t_m, x) = Lᵀ(t_m) M(t_m) (v − u(t_m) − L(t_m) x)`.
pub fn guiding_score(
    sol: &BackwardOdeSolution,
    obs: &ObservationScheme,
    m: usize,
    x: &[f64],
) -> DVector<f64> {
    let l = sol.l(m);
    let resid = obs.v() - sol.u(m) - l * linalg::vector(x);
    l.transpose() * (sol.m(m) * resid)
}

/// `H̃(t_m) = Lᵀ(t_m) M(t_m) L(t_m)`, exactly symmetric.
pub fn neg_hessian(sol: &BackwardOdeSolution, m: usize) -> DMatrix<f64> {
    let l = sol.l(m);
    let h = l.transpose() * sol.m(m) * l;
    (&h + h.transpose()) * 0.5
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn bm_problem(sigma: f64, eps2: f64, t_end: f64, steps: usize, v: f64) -> (LinearAuxiliary, ObservationScheme, TimeGrid) {
        let aux = LinearAuxiliary::scaled_brownian(DMatrix::from_element(1, 1, sigma)).unwrap();
        let obs = ObservationScheme::full_state(&[v], eps2, t_end).unwrap();
        (aux, obs, TimeGrid::new(t_end, steps).unwrap())
    }

    #[test]
    fn brownian_auxiliary_closed_form() {
        let (sigma, eps2, t_end) = (0.7, 1e-4, 2.0);
        let (aux, obs, grid) = bm_problem(sigma, eps2, t_end, 100, 0.3);
        let sol = solve_backward_odes(&aux, &obs, &grid).unwrap();
        for m in 0..=100 {
            let t = grid.time(m);
            assert_relative_eq!(sol.l(m)[(0, 0)], 1.0, epsilon = 1e-10);
            assert!(sol.u(m)[0].abs() < 1e-10);
            let expect = eps2 + sigma * sigma * (t_end - t);
            assert!((sol.mdag(m)[(0, 0)] - expect).abs() < 1e-10);
        }
    }

    #[test]
    fn tiny_noise_inverse_at_zero() {
        let (aux, obs, grid) = bm_problem(1.0, 1e-10, 1.0, 100, 0.0);
        let sol = solve_backward_odes(&aux, &obs, &grid).unwrap();
        let expect = 1.0 / (1.0 + 1e-10);
        assert_relative_eq!(sol.m(0)[(0, 0)], expect, max_relative = 1e-12);
    }

    #[test]
    fn terminal_conditions_are_exact() {
        let aux = LinearAuxiliary::constant(
            linalg::vector(&[1.0, 1.0]),
            -DMatrix::identity(2, 2),
            DMatrix::identity(2, 2) * 0.1,
        )
        .unwrap();
        let l = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let obs = ObservationScheme::with_noise(l.clone(), 1e-8, linalg::vector(&[2.0]), 4.0).unwrap();
        let grid = TimeGrid::new(4.0, 400).unwrap();
        let sol = solve_backward_odes(&aux, &obs, &grid).unwrap();
        assert_eq!(sol.l(400), &l);
        assert_eq!(sol.mdag(400)[(0, 0)], 1e-8);
        assert_eq!(sol.u(400)[0], 0.0);
    }

    #[test]
    fn monotone_and_inverse_consistent() {
        let aux = LinearAuxiliary::constant(
            linalg::vector(&[0.5, -0.2]),
            DMatrix::from_row_slice(2, 2, &[-1.0, 0.3, 0.2, -0.5]),
            DMatrix::from_row_slice(2, 1, &[0.0, 0.4]),
        )
        .unwrap();
        let obs = ObservationScheme::with_noise(
            DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            1e-6,
            linalg::vector(&[0.2]),
            2.0,
        )
        .unwrap();
        let grid = TimeGrid::new(2.0, 200).unwrap();
        let sol = solve_backward_odes(&aux, &obs, &grid).unwrap();
        for m in 0..200 {
            let diff = sol.mdag(m) - sol.mdag(m + 1);
            assert!(linalg::sym_min_eigenvalue(&diff) >= -1e-14, "node {m}");
            let prod = sol.m(m) * sol.mdag(m);
            assert!((prod - DMatrix::identity(1, 1)).norm() < 1e-8);
        }
    }

    #[test]
    fn guiding_score_vanishes_on_residual_zero() {
        let (aux, obs, grid) = bm_problem(1.0, 1e-3, 1.0, 10, 0.8);
        let sol = solve_backward_odes(&aux, &obs, &grid).unwrap();
        // L = 1 and u = 0, so x = v zeroes the residual
        let r = guiding_score(&sol, &obs, 3, &[0.8]);
        assert_eq!(r[0], 0.0);
    }

    #[test]
    fn guiding_score_limits_to_brownian_bridge() {
        let (sigma, t_end, v) = (1.5, 1.0, 0.4);
        let (aux, obs, grid) = bm_problem(sigma, 1e-14, t_end, 50, v);
        let sol = solve_backward_odes(&aux, &obs, &grid).unwrap();
        for m in [0, 10, 25, 49] {
            let t = grid.time(m);
            let x = -0.3;
            let r = guiding_score(&sol, &obs, m, &[x])[0];
            let expect = (v - x) / (sigma * sigma * (t_end - t));
            assert_relative_eq!(r, expect, max_relative = 1e-10);
        }
    }

    #[test]
    fn guiding_score_is_gradient_of_log_density() {
        let (sigma, eps2, t_end, v) = (0.8, 1e-3, 1.0, 0.5);
        let (aux, obs, grid) = bm_problem(sigma, eps2, t_end, 20, v);
        let sol = solve_backward_odes(&aux, &obs, &grid).unwrap();
        let log_psi = |t: f64, x: f64| {
            let var = sigma * sigma * (t_end - t) + eps2;
            -0.5 * (2.0 * std::f64::consts::PI * var).ln() - (v - x).powi(2) / (2.0 * var)
        };
        for m in [0, 7, 19] {
            let t = grid.time(m);
            for x in [-1.0, 0.1, 0.9] {
                let h = 1e-5;
                let fd = (log_psi(t, x + h) - log_psi(t, x - h)) / (2.0 * h);
                let r = guiding_score(&sol, &obs, m, &[x])[0];
                assert_relative_eq!(r, fd, max_relative = 1e-6);
            }
        }
    }

    #[test]
    fn neg_hessian_identities() {
        let (aux, obs, grid) = bm_problem(1.0, 1e-14, 1.0, 100, 0.0);
        let sol = solve_backward_odes(&aux, &obs, &grid).unwrap();
        let h = neg_hessian(&sol, 0);
        assert_relative_eq!(h[(0, 0)], 1.0, max_relative = 1e-10);
        assert_eq!(h[(0, 0)], sol.m(0)[(0, 0)]);

        let aux = LinearAuxiliary::constant(
            DVector::zeros(3),
            DMatrix::from_row_slice(3, 3, &[-1.0, 0.2, 0.0, 0.1, -0.4, 0.3, 0.0, 0.5, -2.0]),
            DMatrix::from_row_slice(3, 2, &[0.2, 0.0, 0.1, 0.3, 0.0, 0.5]),
        )
        .unwrap();
        let obs = ObservationScheme::with_noise(
            DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 1.0, 0.0, 1.0, 0.0]),
            1e-3,
            linalg::vector(&[0.1, 0.2]),
            1.0,
        )
        .unwrap();
        let grid = TimeGrid::new(1.0, 40).unwrap();
        let sol = solve_backward_odes(&aux, &obs, &grid).unwrap();
        for m in 0..=40 {
            let h = neg_hessian(&sol, m);
            assert_eq!(h.clone() - h.transpose(), DMatrix::zeros(3, 3));
            assert!(linalg::sym_min_eigenvalue(&h) > -1e-9);
        }
    }

    #[test]
    fn rejects_mismatched_horizon() {
        let (aux, obs, _) = bm_problem(1.0, 1e-3, 1.0, 10, 0.0);
        let grid = TimeGrid::new(2.0, 10).unwrap();
        assert!(solve_backward_odes(&aux, &obs, &grid).is_err());
    }

    #[test]
    fn observation_validation() {
        let l = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        assert!(ObservationScheme::with_noise(l, 1e-3, linalg::vector(&[0.0, 0.0]), 1.0).is_err());
        let l = DMatrix::identity(1, 1);
        assert!(ObservationScheme::with_noise(l.clone(), 0.0, linalg::vector(&[0.0]), 1.0).is_err());
        assert!(ObservationScheme::with_noise(l, 1e-3, linalg::vector(&[0.0, 1.0]), 1.0).is_err());
    }

    #[test]
    fn time_varying_matches_constant() {
        let c = AuxCoefficients {
            beta: linalg::vector(&[0.3]),
            b: DMatrix::from_element(1, 1, -0.7),
            sigma: DMatrix::from_element(1, 1, 0.5),
        };
        let cc = c.clone();
        let tv = LinearAuxiliary::time_varying(1, 1, move |_| cc.clone());
        let k = LinearAuxiliary::constant(c.beta, c.b, c.sigma).unwrap();
        let obs = ObservationScheme::full_state(&[1.0], 1e-4, 1.0).unwrap();
        let grid = TimeGrid::new(1.0, 50).unwrap();
        let a = solve_backward_odes(&tv, &obs, &grid).unwrap();
        let b = solve_backward_odes(&k, &obs, &grid).unwrap();
        for m in 0..=50 {
            assert_eq!(a.mdag(m), b.mdag(m));
            assert_eq!(a.u(m), b.u(m));
        }
    }
}
