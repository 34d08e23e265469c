//! Sparse discrete Hamiltonian.
//!
//! The kinetic part is the Kronecker sum of one-dimensional operators. Wall
//! nodes are eliminated by the Dirichlet condition: their rows and columns
//! are empty, so they decouple and stay at zero under any propagation.

use num_complex::Complex64;
use thiserror::Error;

use crate::grid::{GridSpec, SpinMode};
use crate::model::{DetectorModel, ModelError, PhysicsConfig};

const I: Complex64 = Complex64::new(0.0, 1.0);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OperatorError {
    #[error("operator assembly needs at least 3 nodes, got {0}")]
    TooFewNodes(usize),
    #[error("spacing must be positive, got {0}")]
    BadSpacing(f64),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Complex sparse matrix in compressed-row layout.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseOperator {
    dim: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<Complex64>,
    hermitian: bool,
}

impl SparseOperator {
    /// Build from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(dim: usize, mut triplets: Vec<(usize, usize, Complex64)>) -> Self {
        triplets.sort_unstable_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0usize; dim + 1];
        let mut cols = Vec::with_capacity(triplets.len());
        let mut vals: Vec<Complex64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            assert!(r < dim && c < dim, "triplet ({r}, {c}) outside dimension {dim}");
            if last == Some((r, c)) {
                *vals.last_mut().unwrap() += v;
            } else {
                cols.push(c);
                vals.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for r in 0..dim {
            row_ptr[r + 1] += row_ptr[r];
        }
        let mut op = Self {
            dim,
            row_ptr,
            cols,
            vals,
            hermitian: false,
        };
        let scale = op.vals.iter().map(|v| v.norm()).fold(0.0, f64::max);
        op.hermitian = op.hermitian_defect() <= 1e-14 * scale.max(1.0);
        op
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    /// Whether the operator equals its conjugate transpose.
    pub fn is_hermitian(&self) -> bool {
        self.hermitian
    }

    /// Stored entries of row `r` as `(column, value)`.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, Complex64)> + '_ {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.cols[span.clone()].iter().copied().zip(self.vals[span].iter().copied())
    }

    pub fn get(&self, r: usize, c: usize) -> Complex64 {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        match self.cols[span.clone()].binary_search(&c) {
            Ok(p) => self.vals[span.start + p],
            Err(_) => Complex64::default(),
        }
    }

    /// `y = H x`.
    pub fn apply(&self, x: &[Complex64], y: &mut [Complex64]) {
        assert_eq!(x.len(), self.dim);
        assert_eq!(y.len(), self.dim);
        for (r, out) in y.iter_mut().enumerate() {
            let mut acc = Complex64::default();
            for p in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.vals[p] * x[self.cols[p]];
            }
            *out = acc;
        }
    }

    pub fn diagonal(&self) -> Vec<Complex64> {
        (0..self.dim).map(|r| self.get(r, r)).collect()
    }

    /// Conjugate transpose.
    pub fn adjoint(&self) -> Self {
        let mut t = Vec::with_capacity(self.nnz());
        for r in 0..self.dim {
            for (c, v) in self.row(r) {
                t.push((c, r, v.conj()));
            }
        }
        Self::from_triplets(self.dim, t)
    }

    /// Largest entry of `|H - H^dagger|`.
    pub fn hermitian_defect(&self) -> f64 {
        let mut worst = 0.0f64;
        for r in 0..self.dim {
            for (c, v) in self.row(r) {
                worst = worst.max((v - self.get(c, r).conj()).norm());
            }
        }
        worst
    }

    /// Dense copy, row-major. Intended for small test problems.
    pub fn to_dense(&self) -> Vec<Vec<Complex64>> {
        let mut m = vec![vec![Complex64::default(); self.dim]; self.dim];
        for (r, row) in m.iter_mut().enumerate() {
            for (c, v) in self.row(r) {
                row[c] = v;
            }
        }
        m
    }

    /// Tridiagonal bands `(sub, diag, sup)`; entries outside the band are ignored.
    pub fn tridiagonal_bands(&self) -> (Vec<Complex64>, Vec<Complex64>, Vec<Complex64>) {
        let n = self.dim;
        let mut sub = vec![Complex64::default(); n];
        let mut diag = vec![Complex64::default(); n];
        let mut sup = vec![Complex64::default(); n];
        for r in 0..n {
            for (c, v) in self.row(r) {
                if c + 1 == r {
                    sub[r] = v;
                } else if c == r {
                    diag[r] = v;
                } else if c == r + 1 {
                    sup[r] = v;
                }
            }
        }
        (sub, diag, sup)
    }
}

/// Boundary treatment of a one-dimensional kinetic operator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FaceCondition {
    /// `psi = 0` on the first and last node.
    DirichletBoth,
    /// `psi = 0` on the first node; `psi' = i kappa psi` closes the last one.
    DirichletBottomRobinTop { kappa: f64 },
}

/// `-1/2 d^2/dz^2` on `n` nodes with spacing `h`.
///
/// Under [`FaceCondition::DirichletBoth`] both end nodes are eliminated. The
/// Robin roof replaces the ghost beyond node `n-1` by `(1 + i kappa h) psi_{n-1}`,
/// which leaves a single diagonal `1/(2h^2) - i kappa/(2h)` on that row.
pub fn assemble_laplacian_1d(n: usize, h: f64, face: FaceCondition) -> Result<SparseOperator, OperatorError> {
    if n < 3 {
        return Err(OperatorError::TooFewNodes(n));
    }
    if !(h > 0.0 && h.is_finite()) {
        return Err(OperatorError::BadSpacing(h));
    }
    let off = Complex64::new(-0.5 / (h * h), 0.0);
    let diag = Complex64::new(1.0 / (h * h), 0.0);
    let last_active = match face {
        FaceCondition::DirichletBoth => n - 2,
        FaceCondition::DirichletBottomRobinTop { .. } => n - 1,
    };
    let mut t = Vec::with_capacity(3 * n);
    for r in 1..=last_active {
        let d = match face {
            FaceCondition::DirichletBottomRobinTop { kappa } if r == n - 1 => {
                Complex64::new(0.5 / (h * h), -0.5 * kappa / h)
            }
            _ => diag,
        };
        t.push((r, r, d));
        if r > 1 {
            t.push((r, r - 1, off));
        }
        if r < last_active {
            t.push((r, r + 1, off));
        }
    }
    Ok(SparseOperator::from_triplets(n, t))
}

/// Harmonic trap `omega^2 r^2 / 2` about the box axis, at every node.
pub fn potential_nodes(grid: &GridSpec, omega: f64) -> Vec<f64> {
    let [cx, cy] = grid.trap_center();
    (0..grid.len())
        .map(|l| {
            let [x, y, _] = grid.node_of(l);
            0.5 * omega * omega * ((x - cx).powi(2) + (y - cy).powi(2))
        })
        .collect()
}

/// Central first difference on `n` nodes, with zero rows and columns at the
/// two Dirichlet end nodes, which makes it exactly antisymmetric.
fn central_difference(n: usize, h: f64) -> Vec<(usize, usize, f64)> {
    let mut t = Vec::with_capacity(2 * n);
    for r in 1..n - 1 {
        if r > 1 {
            t.push((r, r - 1, -0.5 / h));
        }
        if r < n - 2 {
            t.push((r, r + 1, 0.5 / h));
        }
    }
    t
}

/// Full discrete Hamiltonian for the configured detector.
///
/// In spinor mode the state vector is `(up || down)` and the diagonal blocks
/// are identical. The spinor roof condition adds the off-diagonal blocks
/// `C_du = -(Dx + i Dy)/(2 hz)` and `C_ud = (Dx - i Dy)/(2 hz)` on the top
/// layer.
pub fn assemble_hamiltonian(
    grid: &GridSpec,
    physics: &PhysicsConfig,
    detector: &DetectorModel,
) -> Result<SparseOperator, OperatorError> {
    physics.validate(grid)?;
    let mode = physics.spin_mode();
    detector.validate(grid, mode)?;

    let z_face = match detector.kappa() {
        Some(kappa) => FaceCondition::DirichletBottomRobinTop { kappa },
        None => FaceCondition::DirichletBoth,
    };
    let lx = assemble_laplacian_1d(grid.nx(), grid.hx(), FaceCondition::DirichletBoth)?;
    let ly = assemble_laplacian_1d(grid.ny(), grid.hy(), FaceCondition::DirichletBoth)?;
    let lz = assemble_laplacian_1d(grid.nz(), grid.hz(), z_face)?;

    let n = grid.len();
    let (nx, ny, nz) = (grid.nx(), grid.ny(), grid.nz());
    let v = potential_nodes(grid, physics.omega);
    let cap = detector.cap();

    let mut block = Vec::with_capacity(7 * n);
    for i in 0..nx {
        for j in 0..ny {
            for k in 0..nz {
                let l = grid.index(i, j, k);
                let active = [lx.row(i).count(), ly.row(j).count(), lz.row(k).count()];
                if active.contains(&0) {
                    // wall node: eliminated
                    continue;
                }
                for (c, val) in lx.row(i) {
                    block.push((l, grid.index(c, j, k), val));
                }
                for (c, val) in ly.row(j) {
                    block.push((l, grid.index(i, c, k), val));
                }
                for (c, val) in lz.row(k) {
                    block.push((l, grid.index(i, j, c), val));
                }
                let mut d = Complex64::new(v[l], 0.0);
                if let Some(cap) = cap {
                    d -= I * cap.strength(k as f64 * grid.hz());
                }
                block.push((l, l, d));
            }
        }
    }

    let mut t = block.clone();
    if mode == SpinMode::Spinor {
        t.extend(block.into_iter().map(|(r, c, val)| (r + n, c + n, val)));
    }
    if let DetectorModel::SpinorAbc { .. } = detector {
        let k = nz - 1;
        let s = 1.0 / (2.0 * grid.hz());
        for j in 1..ny - 1 {
            for (r, c, d) in central_difference(nx, grid.hx()) {
                let (row, col) = (grid.index(r, j, k), grid.index(c, j, k));
                // C_du = -Dx/(2hz), C_ud = +Dx/(2hz)
                t.push((n + row, col, Complex64::new(-s * d, 0.0)));
                t.push((row, n + col, Complex64::new(s * d, 0.0)));
            }
        }
        for i in 1..nx - 1 {
            for (r, c, d) in central_difference(ny, grid.hy()) {
                let (row, col) = (grid.index(i, r, k), grid.index(i, c, k));
                // C_du = -i Dy/(2hz), C_ud = -i Dy/(2hz)
                t.push((n + row, col, Complex64::new(0.0, -s * d)));
                t.push((row, n + col, Complex64::new(0.0, -s * d)));
            }
        }
    }
    Ok(SparseOperator::from_triplets(n * mode.components(), t))
}

/// Whether each node lies on the roof layer `k = Nz-1`.
pub fn roof_mask(grid: &GridSpec) -> Vec<bool> {
    (0..grid.len()).map(|l| l % grid.nz() == grid.nz() - 1).collect()
}
