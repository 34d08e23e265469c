//! Cartesian lattice geometry, flattened state layout, trilinear
//! interpolation and finite-difference derivatives.
//!
//! Nodes sit at `x_i = i*hx` for `i = 0..Nx` with `hx = Lx/Nx`; the last node
//! on every axis is one spacing short of the box length. Fields are stored
//! flattened with `z` fastest: `l = i*Ny*Nz + j*Nz + k`.

use std::fmt;
use std::ops::{Add, Mul, Sub};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("invalid grid: {0}")]
    Invalid(String),
    #[error("lattice coordinate ({i}, {j}, {k}) outside a {nx}x{ny}x{nz} grid")]
    IndexOutOfRange {
        i: usize,
        j: usize,
        k: usize,
        nx: usize,
        ny: usize,
        nz: usize,
    },
    #[error("flat index {index} outside a grid of {len} nodes")]
    FlatIndexOutOfRange { index: usize, len: usize },
    #[error("position ({:.6}, {:.6}, {:.6}) lies outside the box beyond the one-cell clamp margin", .0[0], .0[1], .0[2])]
    OutOfDomain([f64; 3]),
    #[error("derivative along {axis} needs at least {required} nodes, grid has {len}")]
    StencilTooShort {
        axis: Axis,
        len: usize,
        required: usize,
    },
    #[error("field has {got} values, grid expects {expected}")]
    LengthMismatch { got: usize, expected: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];

    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Axis::X => "x",
            Axis::Y => "y",
            Axis::Z => "z",
        };
        f.write_str(s)
    }
}

/// Geometry of the computational box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    lengths: [f64; 3],
    counts: [usize; 3],
    spacing: [f64; 3],
}

impl GridSpec {
    /// Boundary stencils need at least this many layers per axis.
    pub const MIN_NODES: usize = 4;

    pub fn new(lengths: [f64; 3], counts: [usize; 3]) -> Result<Self, GridError> {
        for a in Axis::ALL {
            let (l, n) = (lengths[a.index()], counts[a.index()]);
            if !(l.is_finite() && l > 0.0) {
                return Err(GridError::Invalid(format!(
                    "box length along {a} must be positive, got {l}"
                )));
            }
            if n < Self::MIN_NODES {
                return Err(GridError::Invalid(format!(
                    "need at least {} nodes along {a}, got {n}",
                    Self::MIN_NODES
                )));
            }
        }
        let spacing = [
            lengths[0] / counts[0] as f64,
            lengths[1] / counts[1] as f64,
            lengths[2] / counts[2] as f64,
        ];
        Ok(Self {
            lengths,
            counts,
            spacing,
        })
    }

    pub fn lengths(&self) -> [f64; 3] {
        self.lengths
    }
    pub fn counts(&self) -> [usize; 3] {
        self.counts
    }
    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }
    pub fn length(&self, axis: Axis) -> f64 {
        self.lengths[axis.index()]
    }
    pub fn count(&self, axis: Axis) -> usize {
        self.counts[axis.index()]
    }
    pub fn step(&self, axis: Axis) -> f64 {
        self.spacing[axis.index()]
    }
    pub fn nx(&self) -> usize {
        self.counts[0]
    }
    pub fn ny(&self) -> usize {
        self.counts[1]
    }
    pub fn nz(&self) -> usize {
        self.counts[2]
    }
    pub fn hx(&self) -> f64 {
        self.spacing[0]
    }
    pub fn hy(&self) -> f64 {
        self.spacing[1]
    }
    pub fn hz(&self) -> f64 {
        self.spacing[2]
    }

    /// Number of lattice nodes.
    pub fn len(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing.iter().product()
    }

    /// Area element of a constant-`z` layer.
    pub fn layer_area(&self) -> f64 {
        self.spacing[0] * self.spacing[1]
    }

    pub fn h_min(&self) -> f64 {
        self.spacing.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Height of the on-grid counting plane, the top layer `k = Nz-1`.
    pub fn counting_plane(&self) -> f64 {
        (self.counts[2] - 1) as f64 * self.spacing[2]
    }

    pub fn stride(&self, axis: Axis) -> usize {
        match axis {
            Axis::X => self.counts[1] * self.counts[2],
            Axis::Y => self.counts[2],
            Axis::Z => 1,
        }
    }

    pub fn linear_index(&self, i: usize, j: usize, k: usize) -> Result<usize, GridError> {
        let [nx, ny, nz] = self.counts;
        if i >= nx || j >= ny || k >= nz {
            return Err(GridError::IndexOutOfRange {
                i,
                j,
                k,
                nx,
                ny,
                nz,
            });
        }
        Ok(self.index(i, j, k))
    }

    /// Unchecked flat index.
    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.counts[1] + j) * self.counts[2] + k
    }

    /// Inverse of [`GridSpec::linear_index`].
    pub fn coords(&self, index: usize) -> Result<[usize; 3], GridError> {
        if index >= self.len() {
            return Err(GridError::FlatIndexOutOfRange {
                index,
                len: self.len(),
            });
        }
        let [_, ny, nz] = self.counts;
        Ok([index / (ny * nz), (index / nz) % ny, index % nz])
    }

    pub fn node(&self, i: usize, j: usize, k: usize) -> [f64; 3] {
        [
            i as f64 * self.spacing[0],
            j as f64 * self.spacing[1],
            k as f64 * self.spacing[2],
        ]
    }

    /// Largest node coordinate along `axis`.
    pub fn last_node(&self, axis: Axis) -> f64 {
        (self.count(axis) - 1) as f64 * self.step(axis)
    }

    /// Project a position onto the node-covered region `[0, (N-1)h]^3`.
    pub fn clamp_to_nodes(&self, q: [f64; 3]) -> [f64; 3] {
        let mut out = q;
        for a in Axis::ALL {
            out[a.index()] = q[a.index()].clamp(0.0, self.last_node(a));
        }
        out
    }

    /// Locate the interpolation cell containing `q`.
    ///
    /// Positions within one spacing beyond the node-covered region (that is
    /// anywhere in `[-h, L]` per axis) are clamped onto the outermost cell.
    pub fn locate(&self, q: [f64; 3]) -> Result<CellStencil, GridError> {
        let mut base = [0usize; 3];
        let mut frac = [0.0f64; 3];
        for a in Axis::ALL {
            let d = a.index();
            let n = self.counts[d];
            let s = q[d] / self.spacing[d];
            if !(s >= -1.0 && s <= n as f64) {
                return Err(GridError::OutOfDomain(q));
            }
            let s = s.clamp(0.0, (n - 1) as f64);
            let b = (s.floor() as usize).min(n - 2);
            base[d] = b;
            frac[d] = s - b as f64;
        }
        Ok(CellStencil { base, frac })
    }
}

/// Values that can be blended and differenced on the lattice.
pub trait Sample: Copy + Default + Add<Output = Self> + Sub<Output = Self> + Mul<f64, Output = Self> {}

impl Sample for f64 {}
impl Sample for Complex64 {}

/// Lower cell corner and fractional offsets of an interpolation point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellStencil {
    pub base: [usize; 3],
    pub frac: [f64; 3],
}

impl CellStencil {
    /// Trilinear blend of the eight corner values of `field`.
    pub fn interpolate<T: Sample>(&self, grid: &GridSpec, field: &[T]) -> T {
        let [i, j, k] = self.base;
        let [fx, fy, fz] = self.frac;
        let sy = grid.stride(Axis::Y);
        let sx = grid.stride(Axis::X);
        let l000 = grid.index(i, j, k);
        let at = |off: usize| field[l000 + off];
        let c00 = at(0) * (1.0 - fx) + at(sx) * fx;
        let c01 = at(1) * (1.0 - fx) + at(sx + 1) * fx;
        let c10 = at(sy) * (1.0 - fx) + at(sx + sy) * fx;
        let c11 = at(sy + 1) * (1.0 - fx) + at(sx + sy + 1) * fx;
        let c0 = c00 * (1.0 - fy) + c10 * fy;
        let c1 = c01 * (1.0 - fy) + c11 * fy;
        c0 * (1.0 - fz) + c1 * fz
    }
}

/// Trilinear interpolation of a nodal field at `q`.
pub fn trilinear<T: Sample>(field: &[T], grid: &GridSpec, q: [f64; 3]) -> Result<T, GridError> {
    check_len(field.len(), grid.len())?;
    Ok(grid.locate(q)?.interpolate(grid, field))
}

fn check_len(got: usize, expected: usize) -> Result<(), GridError> {
    if got != expected {
        return Err(GridError::LengthMismatch { got, expected });
    }
    Ok(())
}

/// Partial derivative of a nodal field along one axis.
///
/// Along `x` and `y` the interior (indices `2..=N-3`) uses the five-point
/// fourth-order central stencil, indices `1` and `N-2` use second-order
/// one-sided stencils pointing into the domain, and the outermost nodes use
/// first-order differences. Along `z` the interior is second-order central
/// with first-order one-sided ends, matching the order of the absorbing roof
/// row.
pub fn grad_component<T: Sample>(
    field: &[T],
    grid: &GridSpec,
    axis: Axis,
) -> Result<Vec<T>, GridError> {
    check_len(field.len(), grid.len())?;
    let n = grid.count(axis);
    let required = if axis == Axis::Z { 3 } else { 5 };
    if n < required {
        return Err(GridError::StencilTooShort {
            axis,
            len: n,
            required,
        });
    }
    let h = grid.step(axis);
    let stride = grid.stride(axis);
    let mut out = vec![T::default(); field.len()];
    for (l, slot) in out.iter_mut().enumerate() {
        let p = (l / stride) % n;
        let base = l - p * stride;
        let u = |q: usize| field[base + q * stride];
        *slot = if axis == Axis::Z {
            central2(&u, p, n, h)
        } else {
            mixed4(&u, p, n, h)
        };
    }
    Ok(out)
}

#[inline]
fn central2<T: Sample>(u: &impl Fn(usize) -> T, p: usize, n: usize, h: f64) -> T {
    if p == 0 {
        (u(1) - u(0)) * (1.0 / h)
    } else if p == n - 1 {
        (u(n - 1) - u(n - 2)) * (1.0 / h)
    } else {
        (u(p + 1) - u(p - 1)) * (0.5 / h)
    }
}

#[inline]
fn mixed4<T: Sample>(u: &impl Fn(usize) -> T, p: usize, n: usize, h: f64) -> T {
    if p == 0 {
        (u(1) - u(0)) * (1.0 / h)
    } else if p == n - 1 {
        (u(n - 1) - u(n - 2)) * (1.0 / h)
    } else if p == 1 {
        (u(2) * 4.0 - u(1) * 3.0 - u(3)) * (0.5 / h)
    } else if p == n - 2 {
        (u(n - 4) - u(n - 3) * 4.0 + u(n - 2) * 3.0) * (0.5 / h)
    } else {
        ((u(p + 1) - u(p - 1)) * 8.0 - (u(p + 2) - u(p - 2))) * (1.0 / (12.0 * h))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpinMode {
    Scalar,
    Spinor,
}

impl SpinMode {
    pub fn components(self) -> usize {
        match self {
            SpinMode::Scalar => 1,
            SpinMode::Spinor => 2,
        }
    }
}

/// Wave function sampled on the lattice at one instant.
///
/// Stored as the flat vector `(up || down)`; scalar fields hold only `up`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpinorField {
    grid: GridSpec,
    mode: SpinMode,
    data: Vec<Complex64>,
}

impl SpinorField {
    pub fn zeros(grid: GridSpec, mode: SpinMode) -> Self {
        Self {
            grid,
            mode,
            data: vec![Complex64::default(); grid.len() * mode.components()],
        }
    }

    pub fn from_flat(grid: GridSpec, mode: SpinMode, data: Vec<Complex64>) -> Result<Self, GridError> {
        check_len(data.len(), grid.len() * mode.components())?;
        Ok(Self { grid, mode, data })
    }

    pub fn scalar(grid: GridSpec, up: Vec<Complex64>) -> Result<Self, GridError> {
        Self::from_flat(grid, SpinMode::Scalar, up)
    }

    pub fn spinor(grid: GridSpec, up: Vec<Complex64>, down: Vec<Complex64>) -> Result<Self, GridError> {
        check_len(up.len(), grid.len())?;
        check_len(down.len(), grid.len())?;
        let mut data = up;
        data.extend_from_slice(&down);
        Ok(Self {
            grid,
            mode: SpinMode::Spinor,
            data,
        })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }
    pub fn spin_mode(&self) -> SpinMode {
        self.mode
    }

    pub fn up(&self) -> &[Complex64] {
        &self.data[..self.grid.len()]
    }

    pub fn down(&self) -> Option<&[Complex64]> {
        match self.mode {
            SpinMode::Scalar => None,
            SpinMode::Spinor => Some(&self.data[self.grid.len()..]),
        }
    }

    /// Iterator over the stored spin components.
    pub fn components(&self) -> impl Iterator<Item = &[Complex64]> {
        self.data.chunks(self.grid.len())
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }
    pub fn as_mut_slice(&mut self) -> &mut [Complex64] {
        &mut self.data
    }
    pub fn into_flat(self) -> Vec<Complex64> {
        self.data
    }

    /// `|psi_up|^2 + |psi_down|^2` at every node.
    pub fn density(&self) -> Vec<f64> {
        let n = self.grid.len();
        let mut rho: Vec<f64> = self.data[..n].iter().map(|c| c.norm_sqr()).collect();
        if let Some(down) = self.down() {
            for (r, c) in rho.iter_mut().zip(down) {
                *r += c.norm_sqr();
            }
        }
        rho
    }

    /// Discrete squared norm, `sum |psi|^2 * hx*hy*hz`.
    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|c| c.norm_sqr()).sum::<f64>() * self.grid.cell_volume()
    }

    pub fn normalize(&mut self) {
        let n = self.norm_sq().sqrt();
        if n > 0.0 {
            let s = 1.0 / n;
            self.data.iter_mut().for_each(|c| *c *= s);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: [usize; 3]) -> GridSpec {
        GridSpec::new([1.0, 1.0, 1.0], n).unwrap()
    }

    #[test]
    fn linear_index_examples() {
        let g = grid([4, 4, 4]);
        assert_eq!(g.linear_index(0, 0, 0).unwrap(), 0);
        let g = GridSpec::new([1.0; 3], [4, 4, 5]).unwrap();
        assert_eq!(g.linear_index(2, 1, 3).unwrap(), 48);
        assert!(matches!(
            g.linear_index(4, 0, 0),
            Err(GridError::IndexOutOfRange { .. })
        ));
        assert!(g.coords(g.len()).is_err());
    }

    #[test]
    fn linear_index_two_by_two() {
        // Ny = Nz = 2 is below the grid minimum, so check the formula directly
        let g = GridSpec {
            lengths: [1.0; 3],
            counts: [4, 2, 2],
            spacing: [0.25, 0.5, 0.5],
        };
        assert_eq!(g.linear_index(1, 0, 0).unwrap(), 4);
    }

    #[test]
    fn index_roundtrip_exhaustive() {
        let g = grid([5, 4, 6]);
        for l in 0..g.len() {
            let [i, j, k] = g.coords(l).unwrap();
            assert_eq!(g.linear_index(i, j, k).unwrap(), l);
        }
    }

    #[test]
    fn rejects_small_or_degenerate_grids() {
        assert!(GridSpec::new([1.0; 3], [3, 4, 4]).is_err());
        assert!(GridSpec::new([0.0, 1.0, 1.0], [4, 4, 4]).is_err());
        let g = GridSpec::new([2.0, 1.0, 10.0], [4, 5, 100]).unwrap();
        assert_eq!(g.hz(), 0.1);
        assert!((g.counting_plane() - 9.9).abs() < 1e-12);
    }

    #[test]
    fn trilinear_node_and_center() {
        let g = grid([4, 4, 4]);
        let f: Vec<f64> = (0..g.len()).map(|l| l as f64 * 0.37).collect();
        let q = g.node(2, 1, 3);
        assert_eq!(trilinear(&f, &g, q).unwrap(), f[g.index(2, 1, 3)]);

        let fx: Vec<f64> = (0..g.len()).map(|l| g.node_of(l)[0]).collect();
        let c = [0.375, 0.125, 0.625];
        assert!((trilinear(&fx, &g, c).unwrap() - 0.375).abs() < 1e-15);
    }

    #[test]
    fn trilinear_product_matches_hand_blend() {
        let g = grid([4, 4, 4]);
        let f: Vec<f64> = (0..g.len())
            .map(|l| {
                let p = g.node_of(l);
                p[0] * p[1] * p[2]
            })
            .collect();
        let q = [0.31, 0.47, 0.12];
        // independent 8-term blend over the cell with corners (1,1,0)..(2,2,1)
        let h = 0.25;
        let (tx, ty, tz) = (q[0] / h - 1.0, q[1] / h - 1.0, q[2] / h);
        let mut expect = 0.0;
        for (di, wx) in [(0usize, 1.0 - tx), (1, tx)] {
            for (dj, wy) in [(0usize, 1.0 - ty), (1, ty)] {
                for (dk, wz) in [(0usize, 1.0 - tz), (1, tz)] {
                    let p = g.node(1 + di, 1 + dj, dk);
                    expect += wx * wy * wz * p[0] * p[1] * p[2];
                }
            }
        }
        assert!((trilinear(&f, &g, q).unwrap() - expect).abs() < 1e-15);
    }

    #[test]
    fn trilinear_clamp_margin() {
        let g = grid([4, 4, 4]);
        let f = vec![1.0; g.len()];
        assert!(trilinear(&f, &g, [0.99, 0.5, -0.2]).is_ok());
        assert!(matches!(
            trilinear(&f, &g, [1.01, 0.5, 0.5]),
            Err(GridError::OutOfDomain(_))
        ));
        assert!(trilinear(&f, &g, [0.5, -0.26, 0.5]).is_err());
    }

    #[test]
    fn gradient_of_constant_and_linear() {
        let g = GridSpec::new([1.0, 1.0, 2.0], [6, 6, 8]).unwrap();
        let c = vec![3.0; g.len()];
        for a in Axis::ALL {
            assert!(grad_component(&c, &g, a).unwrap().iter().all(|v| *v == 0.0));
        }
        let fz: Vec<f64> = (0..g.len()).map(|l| g.node_of(l)[2]).collect();
        let d = grad_component(&fz, &g, Axis::Z).unwrap();
        for (l, v) in d.iter().enumerate() {
            assert!((v - 1.0).abs() < 1e-12, "node {l}");
        }
    }

    #[test]
    fn gradient_stencil_length_errors() {
        let g = GridSpec::new([1.0; 3], [4, 6, 4]).unwrap();
        let f = vec![0.0; g.len()];
        assert!(matches!(
            grad_component(&f, &g, Axis::X),
            Err(GridError::StencilTooShort { .. })
        ));
        assert!(grad_component(&f, &g, Axis::Y).is_ok());
        assert!(grad_component(&f, &g, Axis::Z).is_ok());
    }

    #[test]
    fn field_norm_and_layout() {
        let g = grid([4, 4, 4]);
        let up = vec![Complex64::new(1.0, 0.0); g.len()];
        let down = vec![Complex64::new(0.0, 2.0); g.len()];
        let f = SpinorField::spinor(g, up, down).unwrap();
        assert_eq!(f.as_slice().len(), 2 * g.len());
        assert!((f.norm_sq() - 5.0 * g.len() as f64 * g.cell_volume()).abs() < 1e-12);
        assert!(f.density().iter().all(|r| (*r - 5.0).abs() < 1e-15));
        let mut f = f;
        f.normalize();
        assert!((f.norm_sq() - 1.0).abs() < 1e-12);
        assert!(SpinorField::scalar(g, vec![]).is_err());
    }
}

impl GridSpec {
    pub fn lx(&self) -> f64 {
        self.lengths()[0]
    }
    pub fn ly(&self) -> f64 {
        self.lengths()[1]
    }
    pub fn lz(&self) -> f64 {
        self.lengths()[2]
    }
    /// Transverse trap axis `(Lx/2, Ly/2)`.
    pub fn trap_center(&self) -> [f64; 2] {
        [0.5 * self.lx(), 0.5 * self.ly()]
    }

    /// Position of the node with flat index `l`.
    pub fn node_of(&self, l: usize) -> [f64; 3] {
        let [_, ny, nz] = self.counts;
        self.node(l / (ny * nz), (l / nz) % ny, l % nz)
    }
}
