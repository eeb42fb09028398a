use bridgesim_core::{solve_backward_odes, AuxCoefficients, LinearAuxiliary, ObservationScheme, TimeGrid};
use nalgebra::{dmatrix, dvector, DMatrix, DVector};

fn aux_2d() -> (DVector<f64>, DMatrix<f64>, DMatrix<f64>) {
    let beta = dvector![0.3, -0.2];
    let b = dmatrix![-1.0, 0.4; -0.3, -0.5];
    let sigma = dmatrix![0.5, 0.0; 0.2, 0.3];
    (beta, b, sigma)
}

fn column(v: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_column_slice(v.len(), 1, v.as_slice())
}

/// Composite Simpson rule on `[a, b]` with `n` (even) panels.
fn simpson<F: Fn(f64) -> DMatrix<f64>>(f: F, a: f64, b: f64, n: usize) -> DMatrix<f64> {
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for k in 1..n {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        acc += f(a + k as f64 * h) * w;
    }
    acc * (h / 3.0)
}

#[test]
fn constant_auxiliary_matches_matrix_exponential() {
    let (beta, b, sigma) = aux_2d();
    let a = &sigma * sigma.transpose();
    let aux = LinearAuxiliary::constant(beta.clone(), b.clone(), sigma).unwrap();
    let l_obs = dmatrix![1.0, 0.5];
    let t_end = 1.5;
    let eps2 = 0.01;
    let obs = ObservationScheme::with_noise(l_obs.clone(), eps2, dvector![0.7], t_end).unwrap();
    let grid = TimeGrid::new(t_end, 150).unwrap();
    let sol = solve_backward_odes(&aux, &obs, &grid).unwrap();

    // L(t) = L e^{B(T−t)}, M†(t) = Σ + ∫_t^T L(s) ã L(s)ᵀ ds, u(t) = ∫_t^T L(s) β ds
    let l_at = |s: f64| &l_obs * (&b * (t_end - s)).exp();
    for m in [0, 37, 75, 149] {
        let t = grid.time(m);
        let l = l_at(t);
        let mdag = simpson(|s| l_at(s) * &a * l_at(s).transpose(), t, t_end, 400)
            + DMatrix::identity(1, 1) * eps2;
        let u = simpson(|s| l_at(s) * column(&beta), t, t_end, 400);
        assert!((sol.l(m) - &l).amax() < 1e-9, "L at node {m}");
        assert!((sol.mdag(m) - &mdag).amax() < 1e-9, "M† at node {m}");
        assert!((sol.u(m) - u.column(0)).amax() < 1e-9, "u at node {m}");
        assert!((sol.m(m) * sol.mdag(m) - DMatrix::identity(1, 1)).amax() < 1e-12);
    }
}

#[test]
fn scaled_brownian_mdag_is_linear_in_remaining_time() {
    let sigma = 0.7;
    let aux = LinearAuxiliary::scaled_brownian(DMatrix::from_element(1, 1, sigma)).unwrap();
    let obs = ObservationScheme::full_state(&[0.0], 1e-6, 2.0).unwrap();
    let grid = TimeGrid::new(2.0, 40).unwrap();
    let sol = solve_backward_odes(&aux, &obs, &grid).unwrap();
    for m in 0..=40 {
        let expected = sigma * sigma * (2.0 - grid.time(m)) + 1e-6;
        assert!((sol.mdag(m)[(0, 0)] - expected).abs() < 1e-12);
        assert_eq!(sol.l(m)[(0, 0)], 1.0);
    }
}

#[test]
fn time_varying_with_constant_coefficients_agrees_with_constant() {
    let (beta, b, sigma) = aux_2d();
    let constant = LinearAuxiliary::constant(beta.clone(), b.clone(), sigma.clone()).unwrap();
    let varying = LinearAuxiliary::time_varying(2, 2, move |_| AuxCoefficients {
        beta: beta.clone(),
        b: b.clone(),
        sigma: sigma.clone(),
    });
    let obs = ObservationScheme::full_state(&[1.0, -1.0], 1e-4, 1.0).unwrap();
    let grid = TimeGrid::new(1.0, 64).unwrap();
    let s1 = solve_backward_odes(&constant, &obs, &grid).unwrap();
    let s2 = solve_backward_odes(&varying, &obs, &grid).unwrap();
    for m in 0..=64 {
        assert!((s1.mdag(m) - s2.mdag(m)).amax() < 1e-14);
        assert!((s1.l(m) - s2.l(m)).amax() < 1e-14);
        assert!((s1.u(m) - s2.u(m)).amax() < 1e-14);
    }
}

#[test]
fn rk4_error_shrinks_at_fourth_order() {
    // u for a rotation-like B has no polynomial closed form on the grid
    let beta = dvector![1.0, 0.0];
    let b = dmatrix![0.0, 2.0; -2.0, 0.0];
    let aux = LinearAuxiliary::constant(beta.clone(), b.clone(), DMatrix::identity(2, 2)).unwrap();
    let obs = ObservationScheme::full_state(&[0.0, 0.0], 1e-3, 1.0).unwrap();
    let exact = simpson(|s| (&b * (1.0 - s)).exp() * column(&beta), 0.0, 1.0, 2000);
    let err = |steps: usize| {
        let grid = TimeGrid::new(1.0, steps).unwrap();
        let sol = solve_backward_odes(&aux, &obs, &grid).unwrap();
        (sol.u(0) - exact.column(0)).amax()
    };
    let (coarse, fine) = (err(8), err(16));
    assert!(coarse / fine > 12.0, "ratio {}", coarse / fine);
}
