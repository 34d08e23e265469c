//! Line runs checked against values frozen from an independent sparse-LU
//! Crank-Nicolson implementation in Python (scipy `splu`, `np.gradient`,
//! `np.trapz`).

use std::f64::consts::PI;

use qdetect_core::model::{CapModel, CapProfile};
use qdetect_core::observables::DetectionSeries;
use qdetect_core::propagator::SolverConfig;
use qdetect_core::reference::{
    evolve_1d, rho_free, FreeResolution, Line1DProblem, LineSolver, ReferenceError, TopBoundary,
};

fn series(p: &Line1DProblem, tc: f64) -> DetectionSeries {
    let e = evolve_1d(p, tc, None, None).unwrap();
    DetectionSeries::new(&e.norms, e.rho_model).unwrap()
}

fn cfg(dt: f64) -> SolverConfig {
    SolverConfig {
        dt,
        rel_tol: 1e-11,
        ..SolverConfig::default()
    }
}

#[test]
fn coarse_tanh_line_matches_frozen_oracle() {
    // L = 11, Nz = 220, dt = 2e-3, cutoff 12
    let cap = CapModel::new(CapProfile::Tanh { a: 0.165 }, 10.0, 40.0, 11.0).unwrap();
    for solver in [LineSolver::Gmres, LineSolver::Tridiagonal] {
        let p = Line1DProblem::new(11.0, 220, TopBoundary::Dirichlet, Some(cap), cfg(2e-3))
            .unwrap()
            .with_solver(solver);
        let s = series(&p, 12.0);
        assert!((s.detection_fraction() - 0.8343159657313999).abs() < 1e-7, "{solver:?}");
        assert!((s.mu_star(12.0) - 5.468635473169408).abs() < 1e-6, "{solver:?}");
    }
}

#[test]
fn coarse_robin_line_matches_frozen_oracle() {
    // L = 10, Nz = 200, kappa = pi, dt = 2e-3, cutoff 12
    for solver in [LineSolver::Gmres, LineSolver::Tridiagonal] {
        let p = Line1DProblem::new(10.0, 200, TopBoundary::Robin { kappa: PI }, None, cfg(2e-3))
            .unwrap()
            .with_solver(solver);
        let s = series(&p, 12.0);
        assert!((s.detection_fraction() - 0.9402245445917977).abs() < 1e-7, "{solver:?}");
        assert!((s.mu_star(12.0) - 4.499840394422282).abs() < 1e-6, "{solver:?}");
    }
}

#[test]
fn free_curve_routes_agree_and_integrate_to_the_crossed_mass() {
    let curve = |dt: f64| {
        let res = FreeResolution {
            hz: 0.02,
            dt,
            ..FreeResolution::default()
        };
        (rho_free(5.0, 8.0, &res).unwrap(), res)
    };
    // the node-sampled flux and the centred norm difference part at O(dt^2)
    let (coarse, _) = curve(5e-4);
    let (c, res) = curve(2.5e-4);
    assert!(coarse.route_gap() < 5e-3, "gap {}", coarse.route_gap());
    let ratio = coarse.route_gap() / c.route_gap();
    assert!(ratio > 3.0, "gap ratio under dt halving {ratio}");
    assert!(c.box_length >= 5.0 + 8.0 / res.hz);
    assert!(c.far_wall_max <= res.wall_threshold);
    // the unbounded free line conserves the norm
    assert!((c.final_norm_sq - 1.0).abs() < 1e-8);
    let crossed: f64 = c
        .times
        .windows(2)
        .zip(c.flux.windows(2))
        .map(|(t, f)| 0.5 * (f[0] + f[1]) * (t[1] - t[0]))
        .sum();
    assert!(crossed > 0.5 && crossed < 1.0, "crossed {crossed}");
}

#[test]
fn short_free_box_is_an_invalid_oracle() {
    let res = FreeResolution {
        hz: 0.02,
        box_factor: 1.5,
        max_group_velocity: Some(0.5),
        ..FreeResolution::default()
    };
    match rho_free(3.0, 30.0, &res) {
        Err(ReferenceError::OracleInvalid { observed, threshold }) => assert!(observed > threshold),
        other => panic!("expected an invalid oracle, got {other:?}"),
    }
}
