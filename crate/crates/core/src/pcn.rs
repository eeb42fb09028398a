//! Preconditioned Crank–Nicolson Metropolis–Hastings on the driving Wiener
//! increments of a guided proposal.

use rand::Rng;
use serde::Serialize;

use crate::error::{BridgeError, Result};
use crate::guided::{sample_guided, GuidedSystem};
use crate::noise::{fill_gaussian, keyed_rng, WienerPath};
use crate::sde::{SdeModel, Trajectory};

/// Stream reserved for proposal noise and acceptance draws.
const PROPOSAL_STREAM: u64 = u64::MAX;

/// Current driving noise, its guided trajectory and acceptance counters.
#[derive(Debug, Clone)]
pub struct PcnState {
    w: WienerPath,
    traj: Trajectory,
    eta: f64,
    accepted: usize,
    proposed: usize,
    last_accepted: bool,
}

impl PcnState {
    pub fn new<M: SdeModel>(sys: &GuidedSystem<M>, w: WienerPath, eta: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&eta) {
            return Err(BridgeError::InvalidArgument(format!(
                "pCN memory η must lie in [0, 1], got {eta}"
            )));
        }
        let traj = sample_guided(sys, &w)?;
        Ok(Self {
            w,
            traj,
            eta,
            accepted: 0,
            proposed: 0,
            last_accepted: false,
        })
    }

    pub fn wiener(&self) -> &WienerPath {
        &self.w
    }

    pub fn trajectory(&self) -> &Trajectory {
        &self.traj
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn accepted(&self) -> usize {
        self.accepted
    }

    pub fn proposed(&self) -> usize {
        self.proposed
    }

    /// Whether the most recent proposal was accepted.
    pub fn last_accepted(&self) -> bool {
        self.last_accepted
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }
}

/// Accept when `ln U < log Ψ° − log Ψ`.
#[inline]
pub fn accept(log_psi_current: f64, log_psi_proposal: f64, u: f64) -> bool {
    let log_ratio = log_psi_proposal - log_psi_current;
    !log_ratio.is_nan() && u.ln() < log_ratio
}

/// One Metropolis–Hastings step with proposal `η w + √(1 − η²) z`. A proposal
/// whose integration leaves the finite range is rejected.
pub fn pcn_step<M: SdeModel, R: Rng + ?Sized>(
    sys: &GuidedSystem<M>,
    mut state: PcnState,
    rng: &mut R,
) -> PcnState {
    let grid = *state.w.grid();
    let d_w = state.w.dim();
    let dt = grid.dt();
    let eta = state.eta;
    let rho = (1.0 - eta * eta).sqrt();
    let mut z = vec![0.0; state.w.increments().len()];
    fill_gaussian(rng, dt, &mut z);
    let incr: Vec<f64> = state
        .w
        .increments()
        .iter()
        .zip(&z)
        .map(|(w, z)| eta * w + rho * z)
        .collect();
    let proposal = WienerPath::from_increments(grid, d_w, incr);
    let u: f64 = rng.gen();
    state.proposed += 1;
    state.last_accepted = false;
    if let Ok(traj) = sample_guided(sys, &proposal) {
        if accept(state.traj.log_psi, traj.log_psi, u) {
            state.w = proposal;
            state.traj = traj;
            state.accepted += 1;
            state.last_accepted = true;
        }
    }
    state
}

/// Retained samples and acceptance statistics of one chain.
#[derive(Debug, Clone, Serialize)]
pub struct PcnRun {
    #[serde(skip)]
    pub samples: Vec<Trajectory>,
    pub acceptance_rate: f64,
    pub accepted: usize,
    pub proposed: usize,
    /// Acceptance decision per iteration.
    pub decisions: Vec<bool>,
}

/// Iterations `i` in `1..=iters` kept after burn-in and thinning.
pub fn kept_iteration(i: usize, burn_in: usize, thin: usize) -> bool {
    i > burn_in && (i - burn_in).is_multiple_of(thin)
}

/// Runs a chain of `iters` steps started from the guided path driven by
/// `WienerPath::sample(grid, d_w, seed, 0)`.
pub fn pcn_chain<M: SdeModel>(
    sys: &GuidedSystem<M>,
    eta: f64,
    iters: usize,
    burn_in: usize,
    thin: usize,
    seed: u64,
) -> Result<PcnRun> {
    if thin == 0 {
        return Err(BridgeError::InvalidArgument("thin must be at least 1".into()));
    }
    if burn_in >= iters {
        return Err(BridgeError::InvalidArgument(format!(
            "burn-in {burn_in} must be below the iteration count {iters}"
        )));
    }
    let w0 = WienerPath::sample(*sys.grid(), sys.noise_dim(), seed, 0);
    let mut state = PcnState::new(sys, w0, eta)?;
    let mut rng = keyed_rng(seed, PROPOSAL_STREAM);
    let mut samples = Vec::with_capacity((iters - burn_in) / thin);
    let mut decisions = Vec::with_capacity(iters);
    for i in 1..=iters {
        state = pcn_step(sys, state, &mut rng);
        decisions.push(state.last_accepted);
        if kept_iteration(i, burn_in, thin) {
            samples.push(state.traj.clone());
        }
    }
    Ok(PcnRun {
        samples,
        acceptance_rate: state.acceptance_rate(),
        accepted: state.accepted,
        proposed: state.proposed,
        decisions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conditioning::{LinearAuxiliary, ObservationScheme};
    use crate::grid::TimeGrid;
    use crate::zoo::{auxiliary_for, BrownianDriftModel, CellModel, LinearModel, ZooModel};

    fn linear_system() -> GuidedSystem<LinearModel> {
        let obs = ObservationScheme::full_state(&[2.0, -0.1], 1e-4, 2.0).unwrap();
        let aux = auxiliary_for(&ZooModel::Cell(CellModel { sigma: 0.3 }), &obs).unwrap();
        let lin = LinearModel::from_auxiliary(&aux).unwrap();
        GuidedSystem::new(lin, aux, obs, vec![0.1, 0.1], TimeGrid::new(2.0, 40).unwrap()).unwrap()
    }

    fn brownian_system() -> GuidedSystem<ZooModel> {
        let model = ZooModel::Brownian(BrownianDriftModel { gamma: 2.0, sigma: 1.0 });
        let obs = ObservationScheme::full_state(&[0.0], 1e-6, 1.0).unwrap();
        let aux = LinearAuxiliary::scaled_brownian(nalgebra::DMatrix::identity(1, 1)).unwrap();
        GuidedSystem::new(model, aux, obs, vec![0.0], TimeGrid::new(1.0, 50).unwrap()).unwrap()
    }

    #[test]
    fn identity_proposal_always_accepted() {
        let sys = brownian_system();
        let w = WienerPath::sample(*sys.grid(), 1, 3, 0);
        let mut state = PcnState::new(&sys, w.clone(), 1.0).unwrap();
        let mut rng = keyed_rng(9, 0);
        for _ in 0..50 {
            state = pcn_step(&sys, state, &mut rng);
        }
        assert_eq!(state.accepted(), 50);
        assert_eq!(state.wiener().increments(), w.increments());
    }

    #[test]
    fn weight_free_target_accepts_everything() {
        let sys = linear_system();
        let run = pcn_chain(&sys, 0.5, 300, 0, 1, 11).unwrap();
        assert_eq!(run.accepted, 300);
        assert_eq!(run.acceptance_rate, 1.0);
        assert!(run.samples.iter().all(|s| s.log_psi == 0.0));
    }

    #[test]
    fn thinning_arithmetic() {
        let sys = brownian_system();
        let run = pcn_chain(&sys, 0.9, 7 + 3, 7, 3, 1).unwrap();
        assert_eq!(run.samples.len(), 1);
        let run = pcn_chain(&sys, 0.9, 100, 10, 7, 1).unwrap();
        assert_eq!(run.samples.len(), (1..=100).filter(|&i| kept_iteration(i, 10, 7)).count());
        assert_eq!(run.samples.len(), 12);
    }

    #[test]
    fn chains_are_reproducible() {
        let sys = brownian_system();
        let a = pcn_chain(&sys, 0.7, 200, 0, 1, 5).unwrap();
        let b = pcn_chain(&sys, 0.7, 200, 0, 1, 5).unwrap();
        assert_eq!(a.decisions, b.decisions);
        let c = pcn_chain(&sys, 0.7, 200, 0, 1, 6).unwrap();
        assert_ne!(a.decisions, c.decisions);
    }

    #[test]
    fn acceptance_depends_only_on_log_ratio() {
        for (cur, prop, u) in [(0.0, -0.1, 0.5), (3.0, 2.9, 0.5), (-50.0, -50.1, 0.5)] {
            assert_eq!(accept(cur, prop, u), accept(cur + 7.5, prop + 7.5, u));
        }
        assert!(!accept(0.0, f64::NAN, 0.1));
        assert!(accept(0.0, 0.0, 0.999));
    }

    #[test]
    fn invalid_arguments() {
        let sys = brownian_system();
        assert!(pcn_chain(&sys, 0.5, 10, 10, 1, 0).is_err());
        assert!(pcn_chain(&sys, 0.5, 10, 0, 0, 0).is_err());
        assert!(pcn_chain(&sys, 1.5, 10, 0, 1, 0).is_err());
    }
}
