//! The SDE contract, trajectories and the explicit Euler–Maruyama scheme.

use std::io::{self, Write};

use crate::autodiff::Real;
use crate::conditioning::ObservationScheme;
use crate::error::{BridgeError, Result};
use crate::grid::TimeGrid;
use crate::noise::WienerPath;

/// Drift `b(t, x)` and diffusion `σ(t, x)` of an Itô SDE
/// `dX = b(t, X) dt + σ(t, X) dW` with `X ∈ R^d`, `W ∈ R^{d_w}`.
///
/// Coefficients are generic over [`Real`] so the same code serves plain
/// evaluation and reverse-mode differentiation.
pub trait SdeModel: Send + Sync {
    /// State dimension `d`.
    fn dim(&self) -> usize;

    /// Noise dimension `d_w`.
    fn noise_dim(&self) -> usize;

    fn drift<S: Real>(&self, t: f64, x: &[S], out: &mut [S]);

    /// Writes `σ(t, x)` row-major into `out` (`d × d_w`).
    fn diffusion<S: Real>(&self, t: f64, x: &[S], out: &mut [S]);

    /// True when `σ` does not depend on the state.
    fn constant_diffusion(&self) -> bool {
        false
    }

    /// `log h̃(0, x0) / h(0, x0)`, the infimum of the training loss, when it
    /// is known in closed form.
    fn loss_lower_bound(&self, _obs: &ObservationScheme, _x0: &[f64]) -> Option<f64> {
        None
    }
}

/// States on a grid plus the running sums of a guided integration.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    grid: TimeGrid,
    dim: usize,
    states: Vec<f64>,
    /// `Σ_m G(t_m, x_m) δt`.
    pub log_psi: f64,
    /// `Σ_m (½‖ϑ‖² − G)(t_m, x_m) δt`.
    pub loss_integrand: f64,
}

impl Trajectory {
    pub fn new(grid: TimeGrid, dim: usize, states: Vec<f64>) -> Self {
        assert_eq!(states.len(), (grid.steps() + 1) * dim, "state count");
        Self {
            grid,
            dim,
            states,
            log_psi: 0.0,
            loss_integrand: 0.0,
        }
    }

    #[inline]
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn state(&self, m: usize) -> &[f64] {
        &self.states[m * self.dim..(m + 1) * self.dim]
    }

    pub fn terminal(&self) -> &[f64] {
        self.state(self.grid.steps())
    }

    pub fn states(&self) -> &[f64] {
        &self.states
    }

    /// Writes `t,x_0,...,x_{d-1}` rows with 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        let header: Vec<String> = std::iter::once("t".to_string())
            .chain((0..self.dim).map(|i| format!("x_{i}")))
            .collect();
        writeln!(out, "{}", header.join(","))?;
        for m in 0..=self.grid.steps() {
            write!(out, "{:.16e}", self.grid.time(m))?;
            for x in self.state(m) {
                write!(out, ",{x:.16e}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }

    /// Parses the format produced by [`Trajectory::write_csv`].
    pub fn read_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or(BridgeError::EmptyInput)?;
        let dim = header.split(',').count().saturating_sub(1);
        if dim == 0 || !header.starts_with('t') {
            return Err(BridgeError::InvalidArgument(format!(
                "bad trajectory header {header:?}"
            )));
        }
        let mut times = Vec::new();
        let mut states = Vec::new();
        for line in lines {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != dim + 1 {
                return Err(BridgeError::InvalidArgument(format!(
                    "expected {} fields, got {}",
                    dim + 1,
                    fields.len()
                )));
            }
            let parse = |s: &str| {
                s.trim().parse::<f64>().map_err(|e| {
                    BridgeError::InvalidArgument(format!("bad number {s:?}: {e}"))
                })
            };
            times.push(parse(fields[0])?);
            for f in &fields[1..] {
                states.push(parse(f)?);
            }
        }
        if times.len() < 2 {
            return Err(BridgeError::EmptyInput);
        }
        let grid = TimeGrid::new(*times.last().unwrap(), times.len() - 1)?;
        Ok(Self::new(grid, dim, states))
    }
}

pub(crate) fn check_finite(x: &[f64], step: usize) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(BridgeError::NonFiniteState { step })
    }
}

/// `out = A x` for row-major `A` with `out.len()` rows.
#[inline]
pub(crate) fn mat_vec<S: Real>(a: &[S], x: &[S], out: &mut [S]) {
    let cols = x.len();
    for (i, o) in out.iter_mut().enumerate() {
        let row = &a[i * cols..(i + 1) * cols];
        let mut acc = S::zero();
        for (aij, xj) in row.iter().zip(x) {
            acc = acc + *aij * *xj;
        }
        *o = acc;
    }
}

/// Unconditioned Euler–Maruyama path driven by `w`.
pub fn euler_maruyama<M: SdeModel>(model: &M, x0: &[f64], w: &WienerPath) -> Result<Trajectory> {
    let d = model.dim();
    let dw_dim = model.noise_dim();
    if x0.len() != d {
        return Err(BridgeError::DimensionMismatch(format!(
            "x0 has length {}, model dimension is {d}",
            x0.len()
        )));
    }
    if w.dim() != dw_dim {
        return Err(BridgeError::DimensionMismatch(format!(
            "noise has dimension {}, model expects {dw_dim}",
            w.dim()
        )));
    }
    let grid = *w.grid();
    let dt = grid.dt();
    let mut states = Vec::with_capacity((grid.steps() + 1) * d);
    states.extend_from_slice(x0);
    let mut x = x0.to_vec();
    let mut b = vec![0.0; d];
    let mut sig = vec![0.0; d * dw_dim];
    let mut noise = vec![0.0; d];
    for m in 0..grid.steps() {
        let t = grid.time(m);
        model.drift(t, &x, &mut b);
        model.diffusion(t, &x, &mut sig);
        mat_vec(&sig, w.increment(m), &mut noise);
        for i in 0..d {
            x[i] += b[i] * dt + noise[i];
        }
        check_finite(&x, m + 1)?;
        states.extend_from_slice(&x);
    }
    Ok(Trajectory::new(grid, d, states))
}
