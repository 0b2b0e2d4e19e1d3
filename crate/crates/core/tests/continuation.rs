mod common;

use std::sync::Arc;

use wavekit::asymptotics::gradient_data;
use wavekit::continuation::{
    assemble_residual, continue_curve_1d, continue_sheet_2d, newton_correct, sheet_grid_size, DiscreteWaveState,
    Discretization, FreeParams, NewtonOptions, SheetOptions, WaveProblem, DEFAULT_NS, DEFAULT_NX,
};
use wavekit::field::reconstruct_field;
use wavekit::presets;
use wavekit::trivial_flows::TrivialParameters;

fn ek1() -> TrivialParameters {
    presets::load("ek1").unwrap().params
}

fn inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

#[test]
fn newton_converges_quadratically_near_the_solution() {
    let b = continue_curve_1d(ek1(), 1, 0.04, 1, DEFAULT_NX, DEFAULT_NS, &NewtonOptions::default()).unwrap();
    let hist = &b.points[1].newton.residual_history;
    let mut checked = 0;
    for w in hist.windows(2) {
        // above the rounding floor, r_{k+1} ≲ C r_k²
        if w[0] < 1e-4 && w[1] > 1e-12 {
            assert!(w[1] <= 50.0 * w[0] * w[0], "{hist:?}");
            checked += 1;
        }
    }
    assert!(hist.last().unwrap() <= &1e-10);
    assert!(checked >= 1, "{hist:?}");
}

#[test]
fn linear_guess_has_a_quadratic_residual() {
    let p = ek1();
    let disc = Arc::new(Discretization::new(DEFAULT_NX, DEFAULT_NS, p.kappa).unwrap());
    let prob = WaveProblem::new(disc.clone(), p, &[1], FreeParams::CURVE).unwrap();
    let w: Vec<f64> = prob.kernel_direction(0).to_vec();
    let res = |t: f64| {
        let x: Vec<f64> = w.iter().map(|v| t * v).collect();
        let st = DiscreteWaveState::from_packed(&x, &disc, p, vec![t]);
        inf(&assemble_residual(&prob, &st).unwrap())
    };
    let r: Vec<f64> = [1e-4, 1e-5, 1e-6].iter().map(|&t| res(t)).collect();
    for k in 0..2 {
        let ratio = r[k] / r[k + 1];
        assert!((80.0..125.0).contains(&ratio), "{r:?}");
    }
}

#[test]
fn refining_the_mesh_does_not_move_the_solution() {
    let opts = NewtonOptions::default();
    let coarse = continue_curve_1d(ek1(), 1, 0.02, 4, 16, 48, &opts).unwrap();
    let fine = continue_curve_1d(ek1(), 1, 0.02, 4, 32, 96, &opts).unwrap();
    let (pc, pf) = (coarse.points.last().unwrap(), fine.points.last().unwrap());
    assert!((pc.state.params.lambda - pf.state.params.lambda).abs() <= 1e-8);
    let dc = Discretization::new(16, 48, ek1().kappa).unwrap();
    let df = Discretization::new(32, 96, ek1().kappa).unwrap();
    let (fc, ff) = (
        reconstruct_field(&pc.state, &dc, 24, 11).unwrap(),
        reconstruct_field(&pf.state, &df, 24, 11).unwrap(),
    );
    for i in 0..24 {
        assert!((fc.eta[i] - ff.eta[i]).abs() <= 1e-8);
        for j in 0..11 {
            assert!((fc.psi[i][j] - ff.psi[i][j]).abs() <= 1e-8);
        }
    }
}

#[test]
fn reconstructed_fields_are_even_in_x() {
    let b = continue_curve_1d(ek1(), 1, 0.05, 5, DEFAULT_NX, DEFAULT_NS, &NewtonOptions::default()).unwrap();
    let disc = Discretization::new(DEFAULT_NX, DEFAULT_NS, ek1().kappa).unwrap();
    let nx = 40;
    let f = reconstruct_field(&b.points[5].state, &disc, nx, 9).unwrap();
    for i in 1..nx {
        assert!((f.eta[i] - f.eta[nx - i]).abs() <= 1e-12);
        for j in 0..9 {
            assert!((f.psi[i][j] - f.psi[nx - i][j]).abs() <= 1e-12);
        }
    }
    assert!(f.boundary_error <= 1e-8);
}

#[test]
fn perturbed_starts_return_to_the_same_solution() {
    let p = ek1();
    let opts = NewtonOptions::default();
    let b = continue_curve_1d(p, 1, 0.03, 3, DEFAULT_NX, DEFAULT_NS, &opts).unwrap();
    let sol = &b.points[3].state;
    let disc = Arc::new(Discretization::new(DEFAULT_NX, DEFAULT_NS, p.kappa).unwrap());
    let prob = WaveProblem::new(disc, p, &[1], FreeParams::CURVE).unwrap();
    for scale in [0.8, 1.2] {
        let mut start = sol.clone();
        start.eta.iter_mut().for_each(|v| *v *= scale);
        start.phi_hat.iter_mut().for_each(|v| *v *= scale);
        start.params.lambda = p.lambda + scale * (sol.params.lambda - p.lambda);
        let (again, _) = newton_correct(&prob, &start, &opts).unwrap();
        assert!((again.params.lambda - sol.params.lambda).abs() <= 1e-9);
        let gap = again.packed().iter().zip(sol.packed()).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(gap <= 1e-9, "scale {scale}: {gap}");
    }
}

#[test]
fn sheet_origin_is_the_trivial_flow() {
    let p = presets::load("ek3").unwrap().params;
    let b = continue_sheet_2d(p, 2, 3, &[(0.0, 0.7)], DEFAULT_NX, DEFAULT_NS, &SheetOptions::default()).unwrap();
    let last = b[0].points.last().unwrap();
    assert_eq!(last.amplitude, vec![0.0, 0.0]);
    assert!(inf(&last.state.packed()) <= 1e-14);
    assert_eq!(last.state.params, p);
}

/// `(α(r) − α₀)/r` and `(λ(r) − λ₀)/r` against the slopes at `r = 0`.
fn sheet_slopes(preset: &str, n1: u64, n2: u64, v: f64, r: f64) -> [f64; 4] {
    let p = presets::load(preset).unwrap().params;
    let nx = sheet_grid_size(DEFAULT_NX, n1, n2);
    let b = continue_sheet_2d(p, n1, n2, &[(r, v)], nx, DEFAULT_NS, &SheetOptions::default()).unwrap();
    let q = b[0].points.last().unwrap().state.params;
    let g = gradient_data(&common::flow(p), n1, n2).unwrap();
    let (ar, lr) = g.parameter_slopes(v);
    [(q.alpha - p.alpha) / r, ar, (q.lambda - p.lambda) / r, lr]
}

#[test]
fn sheet_parameters_leave_with_the_predicted_slopes() {
    // n₁ | n₂: nonzero slopes
    for v in [0.6, 1.0, 2.2] {
        let [fa1, ar, fl1, lr] = sheet_slopes("ek2", 1, 2, v, 2e-3);
        let [fa2, _, fl2, _] = sheet_slopes("ek2", 1, 2, v, 1e-3);
        assert!(ar.abs() + lr.abs() > 1e-3);
        // the difference quotient approaches the slope linearly in r
        assert!((fa2 - ar).abs() <= 0.6 * (fa1 - ar).abs() + 1e-7, "v {v}: {fa1} {fa2} {ar}");
        assert!((fl2 - lr).abs() <= 0.6 * (fl1 - lr).abs() + 1e-7, "v {v}: {fl1} {fl2} {lr}");
        assert!((fa2 - ar).abs() <= 1e-2 * (1.0 + ar.abs()));
        assert!((fl2 - lr).abs() <= 1e-2 * (1.0 + lr.abs()));
    }
    // otherwise the slopes vanish and the quotients are O(r)
    for v in [0.6, 2.2] {
        let [fa1, ar, fl1, lr] = sheet_slopes("ek3", 2, 3, v, 2e-3);
        let [fa2, _, fl2, _] = sheet_slopes("ek3", 2, 3, v, 1e-3);
        assert!(ar.abs() <= 1e-10 && lr.abs() <= 1e-10);
        assert!((fa2 / fa1 - 0.5).abs() <= 0.05, "{fa1} {fa2}");
        assert!((fl2 / fl1 - 0.5).abs() <= 0.05, "{fl1} {fl2}");
    }
}
