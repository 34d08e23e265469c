use proptest::prelude::*;
use qdetect_core::grid::{grad_component, trilinear, Axis, GridSpec};

fn grid_strategy() -> impl Strategy<Value = GridSpec> {
    (
        (0.5f64..4.0, 0.5f64..4.0, 1.5f64..12.0),
        (5usize..9, 5usize..9, 5usize..16),
    )
        .prop_map(|((lx, ly, lz), (nx, ny, nz))| GridSpec::new([lx, ly, lz], [nx, ny, nz]).unwrap())
}

fn sample<F: Fn([f64; 3]) -> f64>(g: &GridSpec, f: F) -> Vec<f64> {
    (0..g.len()).map(|l| f(g.node_of(l))).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn index_coords_roundtrip(g in grid_strategy(), seed in any::<u64>()) {
        let l = (seed as usize) % g.len();
        let [i, j, k] = g.coords(l).unwrap();
        prop_assert_eq!(g.linear_index(i, j, k).unwrap(), l);
        prop_assert_eq!(l, (i * g.ny() + j) * g.nz() + k);
    }

    #[test]
    fn trilinear_reproduces_affine_fields(
        g in grid_strategy(),
        c in prop::array::uniform4(-3.0f64..3.0),
        u in prop::array::uniform3(0.0f64..1.0),
    ) {
        let f = |q: [f64; 3]| c[0] + c[1] * q[0] + c[2] * q[1] + c[3] * q[2];
        let field = sample(&g, f);
        let q = [
            u[0] * g.last_node(Axis::X),
            u[1] * g.last_node(Axis::Y),
            u[2] * g.last_node(Axis::Z),
        ];
        let v = trilinear(&field, &g, q).unwrap();
        prop_assert!((v - f(q)).abs() < 1e-10 * (1.0 + f(q).abs()));
    }

    #[test]
    fn trilinear_hits_nodes(g in grid_strategy(), seed in any::<u64>(), vals in prop::collection::vec(-1.0f64..1.0, 16)) {
        let field: Vec<f64> = (0..g.len()).map(|l| vals[l % vals.len()] + l as f64 * 1e-3).collect();
        let l = (seed as usize) % g.len();
        let v = trilinear(&field, &g, g.node_of(l)).unwrap();
        prop_assert!((v - field[l]).abs() < 1e-12);
    }

    #[test]
    fn gradient_exact_on_linear_fields(g in grid_strategy(), c in prop::array::uniform3(-2.0f64..2.0)) {
        let field = sample(&g, |q| c[0] * q[0] + c[1] * q[1] + c[2] * q[2]);
        for a in Axis::ALL {
            let d = grad_component(&field, &g, a).unwrap();
            for v in d {
                prop_assert!((v - c[a.index()]).abs() < 1e-9);
            }
        }
    }
}

/// Interior error of the x-derivative of a smooth field over refinements.
fn interior_error(n: usize, axis: Axis) -> f64 {
    let counts = match axis {
        Axis::X => [n, 4, 4],
        Axis::Y => [4, n, 4],
        Axis::Z => [4, 4, n],
    };
    let g = GridSpec::new([2.0, 2.0, 2.0], counts).unwrap();
    let a = axis.index();
    let field = sample(&g, |q| (1.3 * q[a]).sin());
    let d = grad_component(&field, &g, axis).unwrap();
    (0..g.len())
        .filter(|&l| {
            let p = g.coords(l).unwrap()[a];
            p >= 2 && p + 3 <= n
        })
        .map(|l| (d[l] - 1.3 * (1.3 * g.node_of(l)[a]).cos()).abs())
        .fold(0.0, f64::max)
}

#[test]
fn gradient_order_of_accuracy() {
    for (axis, order) in [(Axis::X, 4.0), (Axis::Y, 4.0), (Axis::Z, 2.0)] {
        let e1 = interior_error(40, axis);
        let e2 = interior_error(80, axis);
        let observed = (e1 / e2).log2();
        assert!((observed - order).abs() < 0.3, "{axis}: observed order {observed}");
    }
}

#[test]
fn locate_rejects_far_points() {
    let g = GridSpec::new([1.0, 1.0, 4.0], [4, 4, 8]).unwrap();
    assert!(g.locate([0.5, 0.5, 100.0]).is_err());
    assert!(g.locate([-10.0, 0.5, 1.0]).is_err());
    assert!(g.locate([0.5, 0.5, 1.0]).is_ok());
}
