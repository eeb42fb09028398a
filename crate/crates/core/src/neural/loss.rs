//! Monte-Carlo loss `(1/N) Σ Σ (½‖ϑ‖² − G) δt` and its gradient by reverse
//! sweep through the unrolled Euler–Maruyama recursion.

use rayon::prelude::*;

use super::{sample_neural, NeuralDrift};
use crate::autodiff::{Real, Tape, Var};
use crate::error::{BridgeError, Result};
use crate::guided::GuidedSystem;
use crate::noise::WienerPath;
use crate::sde::{check_finite, SdeModel};

/// Batch loss, its parameter gradient and per-path losses of the surviving
/// paths.
#[derive(Debug, Clone)]
pub struct LossAndGrad {
    pub loss: f64,
    pub grad: Vec<f64>,
    pub survivors: usize,
    pub path_losses: Vec<f64>,
}

impl LossAndGrad {
    /// Standard error of the batch mean.
    pub fn standard_error(&self) -> f64 {
        let n = self.path_losses.len() as f64;
        if n < 2.0 {
            return f64::NAN;
        }
        let var = self.path_losses.iter().map(|l| (l - self.loss).powi(2)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    }
}

/// Scales `grad` onto the ball of radius `clip_norm`; returns the norm
/// before clipping.
pub fn clip_gradient(grad: &mut [f64], clip_norm: f64) -> f64 {
    assert!(clip_norm > 0.0, "clip norm must be positive");
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > clip_norm {
        let scale = clip_norm / norm;
        grad.iter_mut().for_each(|g| *g *= scale);
    }
    norm
}

fn path_loss_and_grad<M: SdeModel>(
    sys: &GuidedSystem<M>,
    net: &NeuralDrift,
    w: &WienerPath,
) -> Result<(f64, Vec<f64>)> {
    let grid = *sys.grid();
    let steps = grid.steps();
    let (d, d_w) = (sys.dim(), sys.noise_dim());
    let dt = grid.dt();
    let mlp = net.mlp();
    let params = net.params();
    let cl = mlp.cache_len;

    let mut xs = Vec::with_capacity(steps * d);
    let mut thetas = vec![0.0; steps * d_w];
    let mut caches = vec![0.0; steps * cl];
    let mut x = sys.x0().to_vec();
    let mut next = vec![0.0; d];
    let mut s = sys.scratch::<f64>();
    let mut loss = 0.0;
    for m in 0..steps {
        xs.extend_from_slice(&x);
        let cache = &mut caches[m * cl..(m + 1) * cl];
        net.load_input(grid.time(m), &x, cache);
        let theta = &mut thetas[m * d_w..(m + 1) * d_w];
        mlp.forward(params, cache, theta);
        let g = sys.step(m, &x, Some(theta), Some(w.increment(m)), &mut s, Some(&mut next));
        check_finite(&next, m + 1)?;
        let half_sq: f64 = 0.5 * theta.iter().map(|v| v * v).sum::<f64>();
        loss += (half_sq - g) * dt;
        std::mem::swap(&mut x, &mut next);
    }
    if !loss.is_finite() {
        return Err(BridgeError::NonFiniteState { step: steps });
    }

    let mut grad = vec![0.0; params.len()];
    let mut lambda = vec![0.0; d];
    let mut g_theta = vec![0.0; d_w];
    let mut g_input = vec![0.0; d + 1];
    let (mut delta, mut delta_prev) = (Vec::with_capacity(mlp.max_width), Vec::with_capacity(mlp.max_width));
    let tape = Tape::with_capacity(256);
    let mut vs = sys.scratch::<Var>();
    let mut vnext = vec![Var::zero(); d];
    let mut seeds: Vec<(Var, f64)> = Vec::with_capacity(d + 1);
    for m in (0..steps).rev() {
        tape.reset();
        let xv = tape.vars(&xs[m * d..(m + 1) * d]);
        let tv = tape.vars(&thetas[m * d_w..(m + 1) * d_w]);
        let g = sys.step(m, &xv, Some(&tv), Some(w.increment(m)), &mut vs, Some(&mut vnext));
        let mut half_sq = Var::zero();
        for t in &tv {
            half_sq = half_sq + *t * *t;
        }
        let integrand = (half_sq * 0.5 - g) * dt;
        seeds.clear();
        seeds.extend(vnext.iter().zip(&lambda).map(|(v, l)| (*v, *l)));
        seeds.push((integrand, 1.0));
        let adj = tape.adjoints(&seeds);
        for (gt, t) in g_theta.iter_mut().zip(&tv) {
            *gt = adj.wrt(t);
        }
        mlp.backward(
            params,
            &caches[m * cl..(m + 1) * cl],
            &g_theta,
            &mut grad,
            &mut g_input,
            &mut delta,
            &mut delta_prev,
        );
        for (i, l) in lambda.iter_mut().enumerate() {
            *l = adj.wrt(&xv[i]) + g_input[i + 1];
        }
    }
    Ok((loss, grad))
}

/// Loss and gradient over a batch of driving noises. Paths whose state
/// leaves the finite range are dropped; a batch without survivors is an
/// error. The reduction runs in batch order, so the result does not depend on
/// the thread count.
pub fn loss_and_grad<M: SdeModel + Sync>(
    sys: &GuidedSystem<M>,
    net: &NeuralDrift,
    batch: &[WienerPath],
) -> Result<LossAndGrad> {
    if batch.is_empty() {
        return Err(BridgeError::EmptyInput);
    }
    net.check_compatible(sys)?;
    for w in batch {
        if w.dim() != sys.noise_dim() || w.grid() != sys.grid() {
            return Err(BridgeError::DimensionMismatch(
                "Wiener path does not match the guided system".into(),
            ));
        }
    }
    let results: Vec<Result<(f64, Vec<f64>)>> = batch
        .par_iter()
        .map(|w| path_loss_and_grad(sys, net, w))
        .collect();
    let mut grad = vec![0.0; net.n_params()];
    let mut path_losses = Vec::with_capacity(batch.len());
    for (loss, g) in results.into_iter().flatten() {
        path_losses.push(loss);
        grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
    }
    let n = path_losses.len();
    if n == 0 {
        return Err(BridgeError::NoSurvivors { paths: batch.len() });
    }
    if n < batch.len() {
        log::debug!("{} of {} paths diverged", batch.len() - n, batch.len());
    }
    let scale = 1.0 / n as f64;
    grad.iter_mut().for_each(|g| *g *= scale);
    let loss = path_losses.iter().sum::<f64>() * scale;
    Ok(LossAndGrad {
        loss,
        grad,
        survivors: n,
        path_losses,
    })
}

/// The batch loss alone, identical to the value reported by
/// [`loss_and_grad`].
pub fn batch_loss<M: SdeModel + Sync>(
    sys: &GuidedSystem<M>,
    net: &NeuralDrift,
    batch: &[WienerPath],
) -> Result<f64> {
    if batch.is_empty() {
        return Err(BridgeError::EmptyInput);
    }
    let losses: Vec<Result<f64>> = batch
        .par_iter()
        .map(|w| sample_neural(sys, net, w).map(|t| t.loss_integrand))
        .collect();
    let mut total = 0.0;
    let mut n = 0usize;
    for l in losses.into_iter() {
        match l {
            Ok(v) => {
                total += v;
                n += 1;
            }
            Err(BridgeError::NonFiniteState { .. }) => {}
            Err(e) => return Err(e),
        }
    }
    if n == 0 {
        return Err(BridgeError::NoSurvivors { paths: batch.len() });
    }
    Ok(total * (1.0 / n as f64))
}
