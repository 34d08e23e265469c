use std::f64::consts::PI;

use proptest::prelude::*;
use qdetect_core::grid::{GridSpec, SpinorField};
use qdetect_core::model::{initial_state, BlochSpinor, CapModel, CapProfile, DetectorModel, PhysicsConfig, Strictness};
use qdetect_core::operators::{assemble_hamiltonian, assemble_laplacian_1d, FaceCondition, SparseOperator};
use qdetect_core::propagator::{propagate, CrankNicolson, SolverConfig};
use qdetect_core::Complex64;

fn norm_sq(psi: &[Complex64]) -> f64 {
    psi.iter().map(|c| c.norm_sqr()).sum()
}

fn random_state(g: &GridSpec, comps: usize, re: &[f64], im: &[f64]) -> Vec<Complex64> {
    let n = g.len();
    (0..comps * n)
        .map(|l| {
            let [i, j, k] = g.coords(l % n).unwrap();
            if i == 0 || j == 0 || k == 0 || i + 1 == g.nx() || j + 1 == g.ny() {
                Complex64::new(0.0, 0.0)
            } else {
                Complex64::new(re[l % re.len()], im[(3 * l) % im.len()])
            }
        })
        .collect()
}

fn config(dt: f64) -> SolverConfig {
    SolverConfig {
        dt,
        rel_tol: 1e-12,
        ..SolverConfig::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn hermitian_steps_preserve_the_norm(
        omega in 0.5f64..10.0,
        dt in 1e-3f64..5e-2,
        re in prop::collection::vec(-1.0f64..1.0, 97),
        im in prop::collection::vec(-1.0f64..1.0, 89),
    ) {
        let g = GridSpec::new([1.5, 1.5, 3.0], [6, 6, 10]).unwrap();
        let h = assemble_hamiltonian(&g, &PhysicsConfig::scalar(omega), &DetectorModel::Free).unwrap();
        let psi = random_state(&g, 1, &re, &im);
        let mut out = psi.clone();
        let mut cn = CrankNicolson::new(&h, config(dt)).unwrap();
        cn.step(&psi, &mut out).unwrap();
        let (a, b) = (norm_sq(&psi), norm_sq(&out));
        prop_assert!((a - b).abs() < 1e-9 * a);
    }

    #[test]
    fn absorbing_steps_are_contractive(
        kappa in 0.1f64..8.0,
        dt in 1e-3f64..5e-2,
        theta in 0.0f64..3.14,
        re in prop::collection::vec(-1.0f64..1.0, 97),
        im in prop::collection::vec(-1.0f64..1.0, 89),
    ) {
        let g = GridSpec::new([1.5, 1.5, 3.0], [6, 6, 10]).unwrap();
        let physics = PhysicsConfig::spinor(2.0, BlochSpinor::new(theta, 0.0).unwrap());
        let cap = CapModel::new(CapProfile::Tanh { a: 0.2 }, 2.0, 20.0, 3.0).unwrap();
        for det in [DetectorModel::SpinorAbc { kappa }, DetectorModel::SpinlessAbc { kappa }, DetectorModel::Cap(cap)] {
            let h = assemble_hamiltonian(&g, &physics, &det).unwrap();
            let psi = random_state(&g, 2, &re, &im);
            let mut out = psi.clone();
            let mut cn = CrankNicolson::new(&h, config(dt)).unwrap();
            cn.step(&psi, &mut out).unwrap();
            prop_assert!(norm_sq(&out) <= norm_sq(&psi) * (1.0 + 1e-10));
        }
    }

    #[test]
    fn one_site_cayley_ratio(e in -50.0f64..50.0, w in 0.0f64..50.0, dt in 1e-4f64..0.1) {
        let h = SparseOperator::from_triplets(1, vec![(0, 0, Complex64::new(e, -w))]);
        let cfg = SolverConfig { dt, rel_tol: 1e-15, ..SolverConfig::default() };
        let mut cn = CrankNicolson::new(&h, cfg).unwrap();
        let psi = [Complex64::new(0.3, -0.7)];
        let mut out = [Complex64::default()];
        cn.step(&psi, &mut out).unwrap();
        let z = Complex64::new(0.0, 0.5 * dt) * Complex64::new(e, -w);
        let expect = (1.0 - z) / (1.0 + z);
        prop_assert!((out[0] / psi[0] - expect).norm() < 1e-12);
    }
}

/// Line state after `t` with step `dt`.
fn evolve_line(dt: f64, t: f64) -> Vec<Complex64> {
    let n = 200;
    let h = 4.0 / n as f64;
    let op = assemble_laplacian_1d(n, h, FaceCondition::DirichletBottomRobinTop { kappa: PI }).unwrap();
    let mut psi: Vec<Complex64> = (0..n)
        .map(|k| {
            let z = k as f64 * h;
            Complex64::new((-(z - 1.5).powi(2) * 4.0).exp(), 0.0)
        })
        .collect();
    psi[0] = Complex64::new(0.0, 0.0);
    let mut cn = CrankNicolson::new(&op, config(dt)).unwrap();
    let mut out = psi.clone();
    for _ in 0..(t / dt).round() as usize {
        cn.step(&psi, &mut out).unwrap();
        std::mem::swap(&mut psi, &mut out);
    }
    psi
}

#[test]
fn crank_nicolson_is_second_order_in_time() {
    let t = 0.4;
    let a = evolve_line(0.04, t);
    let b = evolve_line(0.02, t);
    let c = evolve_line(0.01, t);
    let diff = |x: &[Complex64], y: &[Complex64]| x.iter().zip(y).map(|(p, q)| (p - q).norm_sqr()).sum::<f64>().sqrt();
    let ratio = diff(&a, &b) / diff(&b, &c);
    assert!((ratio.log2() - 2.0).abs() < 0.2, "observed order {}", ratio.log2());
}

#[test]
fn norm_series_is_monotone_for_every_detector() {
    let g = GridSpec::new([1.2, 1.2, 4.0], [8, 8, 40]).unwrap();
    let physics = PhysicsConfig::spinor(100.0, BlochSpinor::new(1.0, 0.2).unwrap());
    let init = initial_state(&g, &physics, Strictness::Warn).unwrap();
    let cap = CapModel::new(CapProfile::Sharp, 3.0, 10.0, 4.0).unwrap();
    for det in [DetectorModel::Cap(cap), DetectorModel::SpinlessAbc { kappa: PI }, DetectorModel::SpinorAbc { kappa: PI }] {
        let h = assemble_hamiltonian(&g, &physics, &det).unwrap();
        let p = propagate(&init.field, &h, &config(1e-2), 1.0, &mut []).unwrap();
        assert!(p.norms.is_monotone(1e-10), "{det:?}: max increase {}", p.norms.max_increase());
        assert!(p.norms.last().unwrap() < 1.0);
        assert!(p.max_verified_residual < 1e-8);
    }
}

#[test]
fn wall_nodes_stay_zero() {
    let g = GridSpec::new([1.2, 1.2, 4.0], [8, 8, 20]).unwrap();
    let physics = PhysicsConfig::scalar(50.0);
    let init = initial_state(&g, &physics, Strictness::Warn).unwrap();
    let h = assemble_hamiltonian(&g, &physics, &DetectorModel::SpinlessAbc { kappa: PI }).unwrap();
    let p = propagate(&init.field, &h, &config(1e-2), 0.5, &mut []).unwrap();
    let f: &SpinorField = &p.field;
    for l in 0..g.len() {
        let [i, j, k] = g.coords(l).unwrap();
        if i == 0 || j == 0 || k == 0 || i + 1 == g.nx() || j + 1 == g.ny() {
            assert_eq!(f.up()[l], Complex64::new(0.0, 0.0));
        }
    }
}
