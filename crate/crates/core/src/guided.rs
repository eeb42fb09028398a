//! Guided proposals: drift `b + a r̃`, the weight functional `G` and
//! sampling with accumulated `log Ψ`.

use nalgebra::{DMatrix, DVector};

use crate::autodiff::Real;
use crate::conditioning::{
    affine_drift, neg_hessian, solve_backward_odes, BackwardOdeSolution, LinearAuxiliary,
    ObservationScheme,
};
use crate::error::{BridgeError, Result};
use crate::grid::TimeGrid;
use crate::linalg;
use crate::noise::WienerPath;
use crate::sde::{check_finite, SdeModel, Trajectory};

/// Per-node quantities cached once per conditioning problem. Matrices are
/// row-major.
#[derive(Debug, Clone)]
pub(crate) struct GuidingNode {
    pub t: f64,
    /// `Lᵀ(t) M(t)`, `d × d'`.
    pub ltm: Vec<f64>,
    /// `v − u(t)`.
    pub offset: Vec<f64>,
    /// `L(t)`, `d' × d`.
    pub l: Vec<f64>,
    /// `H̃(t)`, `d × d`.
    pub h: Vec<f64>,
    pub beta: Vec<f64>,
    pub b: Vec<f64>,
    /// `σ̃(t)`, `d × d_w`.
    pub sigma_tilde: Vec<f64>,
    /// `tr(ã H̃)`.
    pub trace_at_h: f64,
}

/// `Σ_k σ_kᵀ H σ_k = tr(σᵀ H σ)` for row-major `σ` (`d × d_w`).
#[inline]
pub(crate) fn trace_sandwich<S: Real>(h: &[f64], sigma: &[S], d: usize, d_w: usize) -> S {
    let mut total = S::zero();
    for k in 0..d_w {
        for i in 0..d {
            let mut hs = S::zero();
            for j in 0..d {
                hs = hs + sigma[j * d_w + k] * h[i * d + j];
            }
            total = total + sigma[i * d_w + k] * hs;
        }
    }
    total
}

/// Scratch space for one step of the guided recursion.
pub(crate) struct StepScratch<S> {
    b: Vec<S>,
    sig: Vec<S>,
    resid: Vec<S>,
    r: Vec<S>,
    sr: Vec<S>,
    bt: Vec<S>,
}

impl<S: Real> StepScratch<S> {
    pub fn new(d: usize, d_w: usize, d_obs: usize) -> Self {
        Self {
            b: vec![S::zero(); d],
            sig: vec![S::zero(); d * d_w],
            resid: vec![S::zero(); d_obs],
            r: vec![S::zero(); d],
            sr: vec![S::zero(); d_w],
            bt: vec![S::zero(); d],
        }
    }
}

/// Model, auxiliary process, observation and the cached backward-ODE
/// solution for one conditioning problem.
#[derive(Debug, Clone)]
pub struct GuidedSystem<M> {
    model: M,
    aux: LinearAuxiliary,
    obs: ObservationScheme,
    sol: BackwardOdeSolution,
    x0: Vec<f64>,
    nodes: Vec<GuidingNode>,
    warnings: Vec<String>,
}

impl<M: SdeModel> GuidedSystem<M> {
    pub fn new(
        model: M,
        aux: LinearAuxiliary,
        obs: ObservationScheme,
        x0: Vec<f64>,
        grid: TimeGrid,
    ) -> Result<Self> {
        let d = model.dim();
        if aux.dim() != d || obs.state_dim() != d || x0.len() != d {
            return Err(BridgeError::DimensionMismatch(format!(
                "model d = {d}, auxiliary d = {}, L has {} columns, x0 has {}",
                aux.dim(),
                obs.state_dim(),
                x0.len()
            )));
        }
        if aux.noise_dim() != model.noise_dim() {
            return Err(BridgeError::DimensionMismatch(format!(
                "model noise dimension {} but σ̃ has {} columns",
                model.noise_dim(),
                aux.noise_dim()
            )));
        }
        let sol = solve_backward_odes(&aux, &obs, &grid)?;
        let d_w = model.noise_dim();
        let nodes = (0..=grid.steps())
            .map(|m| {
                let t = grid.time(m);
                let l = sol.l(m);
                let ltm = l.transpose() * sol.m(m);
                let offset = obs.v() - sol.u(m);
                let h = neg_hessian(&sol, m);
                let c = aux.at(t);
                let h_rm = linalg::to_row_major(&h);
                let st = linalg::to_row_major(&c.sigma);
                let trace_at_h = trace_sandwich(&h_rm, &st, d, d_w);
                GuidingNode {
                    t,
                    ltm: linalg::to_row_major(&ltm),
                    offset: offset.as_slice().to_vec(),
                    l: linalg::to_row_major(l),
                    h: h_rm,
                    beta: c.beta.as_slice().to_vec(),
                    b: linalg::to_row_major(&c.b),
                    sigma_tilde: st,
                    trace_at_h,
                }
            })
            .collect();
        let mut sys = Self {
            model,
            aux,
            obs,
            sol,
            x0,
            nodes,
            warnings: Vec::new(),
        };
        if let Some(w) = sys.matching_condition() {
            log::warn!("{w}");
            sys.warnings.push(w);
        }
        Ok(sys)
    }

    pub fn model(&self) -> &M {
        &self.model
    }

    pub fn auxiliary(&self) -> &LinearAuxiliary {
        &self.aux
    }

    pub fn observation(&self) -> &ObservationScheme {
        &self.obs
    }

    pub fn solution(&self) -> &BackwardOdeSolution {
        &self.sol
    }

    pub fn x0(&self) -> &[f64] {
        &self.x0
    }

    pub fn grid(&self) -> &TimeGrid {
        self.sol.grid()
    }

    pub fn dim(&self) -> usize {
        self.model.dim()
    }

    pub fn noise_dim(&self) -> usize {
        self.model.noise_dim()
    }

    /// Diagnostics raised while building the system.
    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// For nearly noise-free full-state conditioning, `ã(T)` should equal
    /// `a(T, v)`.
    fn matching_condition(&self) -> Option<String> {
        let d = self.dim();
        let l = self.obs.l_obs();
        if l.nrows() != d || (l - DMatrix::<f64>::identity(d, d)).abs().max() > 0.0 {
            return None;
        }
        if linalg::sym_max_eigenvalue(self.obs.sigma()) > 1e-4 {
            return None;
        }
        let t_end = self.grid().t_end();
        let d_w = self.noise_dim();
        let mut sig = vec![0.0; d * d_w];
        self.model.diffusion(t_end, self.obs.v().as_slice(), &mut sig);
        let sig = DMatrix::from_row_slice(d, d_w, &sig);
        let a = &sig * sig.transpose();
        let a_tilde = self.aux.at(t_end).a_tilde();
        let gap = (&a - &a_tilde).norm();
        (gap > 1e-8 * a.norm().max(1.0)).then(|| {
            format!("auxiliary diffusion does not match a(T, v): ‖a − ã‖ = {gap:.3e}")
        })
    }

    pub(crate) fn scratch<S: Real>(&self) -> StepScratch<S> {
        StepScratch::new(self.dim(), self.noise_dim(), self.obs.obs_dim())
    }

    /// One Euler–Maruyama step of
    /// `dX = {b + a r̃ + σ ϑ} dt + σ dW` from node `m`.
    ///
    /// Writes the next state into `next` (when given) and returns `G(t_m, x)`.
    pub(crate) fn step<S: Real>(
        &self,
        m: usize,
        x: &[S],
        theta: Option<&[S]>,
        dw: Option<&[f64]>,
        s: &mut StepScratch<S>,
        next: Option<&mut [S]>,
    ) -> S {
        let node = &self.nodes[m];
        let d = self.dim();
        let d_w = self.noise_dim();
        let d_obs = self.obs.obs_dim();
        let dt = self.grid().dt();

        self.model.drift(node.t, x, &mut s.b);
        self.model.diffusion(node.t, x, &mut s.sig);

        // r̃ = Lᵀ M (v − u − L x)
        for i in 0..d_obs {
            let row = &node.l[i * d..(i + 1) * d];
            let mut acc = S::zero();
            for (lij, xj) in row.iter().zip(x) {
                acc = acc + *xj * *lij;
            }
            s.resid[i] = -acc + node.offset[i];
        }
        for i in 0..d {
            let row = &node.ltm[i * d_obs..(i + 1) * d_obs];
            let mut acc = S::zero();
            for (c, rj) in row.iter().zip(&s.resid) {
                acc = acc + *rj * *c;
            }
            s.r[i] = acc;
        }
        // σᵀ r̃
        for k in 0..d_w {
            let mut acc = S::zero();
            for i in 0..d {
                acc = acc + s.sig[i * d_w + k] * s.r[i];
            }
            s.sr[k] = acc;
        }

        if let Some(next) = next {
            for i in 0..d {
                let mut push = S::zero();
                for k in 0..d_w {
                    let mut u = s.sr[k];
                    if let Some(th) = theta {
                        u = u + th[k];
                    }
                    push = push + s.sig[i * d_w + k] * u;
                }
                let mut xi = x[i] + (s.b[i] + push) * dt;
                if let Some(dw) = dw {
                    let mut noise = S::zero();
                    for k in 0..d_w {
                        noise = noise + s.sig[i * d_w + k] * dw[k];
                    }
                    xi = xi + noise;
                }
                next[i] = xi;
            }
        }

        // G = ⟨b − b̃, r̃⟩ − ½ tr((a − ã)(H̃ − r̃ r̃ᵀ))
        affine_drift(&node.beta, &node.b, x, &mut s.bt);
        let mut inner = S::zero();
        for i in 0..d {
            inner = inner + (s.b[i] - s.bt[i]) * s.r[i];
        }
        let trace_a_h = trace_sandwich(&node.h, &s.sig, d, d_w);
        let mut r_a_r = S::zero();
        for k in 0..d_w {
            r_a_r = r_a_r + s.sr[k] * s.sr[k];
        }
        let mut r_at_r = S::zero();
        for k in 0..d_w {
            let mut acc = S::zero();
            for i in 0..d {
                acc = acc + s.r[i] * node.sigma_tilde[i * d_w + k];
            }
            r_at_r = r_at_r + acc * acc;
        }
        inner - ((trace_a_h - node.trace_at_h) - (r_a_r - r_at_r)) * 0.5
    }
}

fn check_node<M: SdeModel>(sys: &GuidedSystem<M>, m: usize, x: &[f64]) {
    assert!(m <= sys.grid().steps(), "node {m} outside the grid");
    assert_eq!(x.len(), sys.dim(), "state dimension");
}

/// `b(t_m, x) + σσᵀ(t_m, x) r̃(t_m, x)`.
pub fn guided_drift<M: SdeModel>(sys: &GuidedSystem<M>, m: usize, x: &[f64]) -> Result<DVector<f64>> {
    check_node(sys, m, x);
    let d = sys.dim();
    let mut s = sys.scratch::<f64>();
    sys.step(m, x, None, None, &mut s, None);
    let d_w = sys.noise_dim();
    let drift = DVector::from_fn(d, |i, _| {
        s.b[i] + (0..d_w).map(|k| s.sig[i * d_w + k] * s.sr[k]).sum::<f64>()
    });
    check_finite(drift.as_slice(), m)?;
    Ok(drift)
}

/// `G(t_m, x)`.
pub fn g_functional<M: SdeModel>(sys: &GuidedSystem<M>, m: usize, x: &[f64]) -> f64 {
    check_node(sys, m, x);
    let mut s = sys.scratch::<f64>();
    sys.step(m, x, None, None, &mut s, None)
}

/// Euler–Maruyama under the guided drift with left-endpoint accumulation of
/// `log Ψ = Σ G(t_m, x_m) δt`.
pub fn sample_guided<M: SdeModel>(sys: &GuidedSystem<M>, w: &WienerPath) -> Result<Trajectory> {
    if w.dim() != sys.noise_dim() || w.grid() != sys.grid() {
        return Err(BridgeError::DimensionMismatch(
            "Wiener path does not match the guided system".into(),
        ));
    }
    let grid = *sys.grid();
    let d = sys.dim();
    let dt = grid.dt();
    let mut states = Vec::with_capacity((grid.steps() + 1) * d);
    states.extend_from_slice(&sys.x0);
    let mut x = sys.x0.clone();
    let mut next = vec![0.0; d];
    let mut s = sys.scratch::<f64>();
    let mut log_psi = 0.0;
    for m in 0..grid.steps() {
        let g = sys.step(m, &x, None, Some(w.increment(m)), &mut s, Some(&mut next));
        check_finite(&next, m + 1)?;
        log_psi += g * dt;
        std::mem::swap(&mut x, &mut next);
        states.extend_from_slice(&x);
    }
    let mut traj = Trajectory::new(grid, d, states);
    traj.log_psi = log_psi;
    traj.loss_integrand = -log_psi;
    Ok(traj)
}
