use std::f64::consts::PI;

use proptest::prelude::*;
use qdetect_core::bohmian::{
    cap_speed, rk2_step, sample_initial, BohmianError, ParticleStatus, Termination, TrajectoryDriver,
    VelocityField,
};
use qdetect_core::grid::GridSpec;
use qdetect_core::model::PhysicsConfig;
use qdetect_core::observables::CurrentKind;

/// Kolmogorov-Smirnov distance of `samples` from the distribution `cdf`.
fn ks_distance(mut samples: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
    samples.sort_by(f64::total_cmp);
    let n = samples.len() as f64;
    samples
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max((f - (i + 1) as f64 / n).abs())
        })
        .fold(0.0, f64::max)
}

fn normal_cdf(x: f64) -> f64 {
    // Abramowitz-Stegun 7.1.26 erf, absolute error below 1.5e-7
    let z = x / 2f64.sqrt();
    let t = 1.0 / (1.0 + 0.3275911 * z.abs());
    let poly = t * (0.254829592 + t * (-0.284496736 + t * (1.421413741 + t * (-1.453152027 + t * 1.061405429))));
    let erf = 1.0 - poly * (-z * z).exp();
    0.5 * (1.0 + erf.copysign(z))
}

#[test]
fn born_sampling_matches_the_initial_density() {
    let omega: f64 = 100.0;
    let side = 12.0 / omega.sqrt();
    let g = GridSpec::new([side, side, 4.0], [24, 24, 800]).unwrap();
    let n = 5000;
    let e = sample_initial(n, &g, &PhysicsConfig::scalar(omega), CurrentKind::Convective, 11).unwrap();
    let crit = 1.95 / (n as f64).sqrt();
    let z: Vec<f64> = e.particles.iter().map(|p| p.position[2]).collect();
    let dz = ks_distance(z, |z| (z - (2.0 * PI * z).sin() / (2.0 * PI)).clamp(0.0, 1.0));
    assert!(dz < crit, "z marginal KS {dz} >= {crit}");
    let sd = (0.5 / omega).sqrt();
    let [cx, cy] = g.trap_center();
    for (a, c) in [(0, cx), (1, cy)] {
        let x: Vec<f64> = e.particles.iter().map(|p| p.position[a]).collect();
        let d = ks_distance(x, |x| normal_cdf((x - c) / sd));
        assert!(d < crit, "axis {a} KS {d} >= {crit}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn sampling_is_prefix_stable(seed in any::<u64>(), n in 2usize..40) {
        let g = GridSpec::new([1.2, 1.2, 3.0], [8, 8, 60]).unwrap();
        let p = PhysicsConfig::scalar(100.0);
        let long = sample_initial(n, &g, &p, CurrentKind::Convective, seed).unwrap();
        let short = sample_initial(n / 2, &g, &p, CurrentKind::Convective, seed).unwrap();
        for (a, b) in short.particles.iter().zip(&long.particles) {
            prop_assert_eq!(a.position, b.position);
            prop_assert_eq!(a.threshold, b.threshold);
        }
    }

    #[test]
    fn speed_cap_bounds_and_keeps_direction(k in prop::array::uniform3(-100.0f64..100.0), v_max in 0.01f64..50.0) {
        let c = cap_speed(k, v_max);
        let s = (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt();
        let s0 = (k[0] * k[0] + k[1] * k[1] + k[2] * k[2]).sqrt();
        prop_assert!(s <= v_max * (1.0 + 1e-12));
        if s0 > 0.0 {
            for a in 0..3 {
                prop_assert!((c[a] * s0 - k[a] * s).abs() <= 1e-9 * s0 * s0.max(1.0));
            }
        }
    }

    #[test]
    fn first_hit_time_is_exact_for_uniform_motion(z0 in 0.1f64..2.0, v in 0.2f64..3.0, dt in 1e-3f64..2e-2) {
        let field = Uniform { v: [0.1, -0.05, v], h: 1.0 };
        let plane = 2.5;
        let g = GridSpec::new([1.0, 1.0, 3.0], [6, 6, 60]).unwrap();
        let mut e = sample_initial(1, &g, &PhysicsConfig::scalar(4.0), CurrentKind::Convective, 1).unwrap();
        e.particles[0].position = [0.5, 0.5, z0];
        let mut d = TrajectoryDriver::new(e, Termination::FirstHit { plane }, 0.8).unwrap();
        let mut t = 0.0;
        while t < 15.0 && d.records.is_empty() {
            d.advance(&field, t, dt).unwrap();
            t += dt;
        }
        let p = &d.ensemble.particles[0];
        prop_assert_eq!(p.status, ParticleStatus::Arrived);
        let tau = (plane - z0) / v;
        prop_assert!((p.time.unwrap() - tau).abs() < 1e-9 * (1.0 + tau) + 1e-9 * (t / dt));
        prop_assert!((p.place.unwrap()[2] - plane).abs() < 1e-12);
    }
}

struct Uniform {
    v: [f64; 3],
    h: f64,
}

impl VelocityField for Uniform {
    fn velocity(&self, _: [f64; 3]) -> Result<[f64; 3], BohmianError> {
        Ok(self.v)
    }
    fn h_min(&self) -> f64 {
        self.h
    }
    fn hz(&self) -> f64 {
        self.h
    }
    fn clamp(&self, q: [f64; 3]) -> [f64; 3] {
        q
    }
}

/// `v = (0, 0, z)`, so `z(t) = z0 e^t`.
struct Stretch;

impl VelocityField for Stretch {
    fn velocity(&self, q: [f64; 3]) -> Result<[f64; 3], BohmianError> {
        Ok([0.0, 0.0, q[2]])
    }
    fn h_min(&self) -> f64 {
        1.0
    }
    fn hz(&self) -> f64 {
        1.0
    }
    fn clamp(&self, q: [f64; 3]) -> [f64; 3] {
        q
    }
}

#[test]
fn midpoint_rule_is_second_order() {
    let err = |dt: f64| {
        let mut q = [0.0, 0.0, 1.0];
        for _ in 0..(1.0 / dt).round() as usize {
            q = rk2_step(&Stretch, q, dt, 0.8).unwrap();
        }
        (q[2] - 1f64.exp()).abs()
    };
    let order = (err(0.02) / err(0.01)).log2();
    assert!((order - 2.0).abs() < 0.1, "observed order {order}");
}
