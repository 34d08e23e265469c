//! Restarted GMRES for complex non-Hermitian systems.
//!
//! Arnoldi with modified Gram-Schmidt, complex Givens rotations for the
//! least-squares update and optional right preconditioning by a diagonal.
//! Every restart cycle starts from the true residual, so the reported
//! residual of a converged solve is the unpreconditioned `||b - Ax|| / ||b||`.

use num_complex::Complex64;

use crate::operators::SparseOperator;

pub trait LinearOperator {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[Complex64], y: &mut [Complex64]);
}

impl LinearOperator for SparseOperator {
    fn dim(&self) -> usize {
        SparseOperator::dim(self)
    }
    fn apply(&self, x: &[Complex64], y: &mut [Complex64]) {
        SparseOperator::apply(self, x, y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GmresConfig {
    pub rel_tol: f64,
    /// Krylov subspace dimension per cycle.
    pub restart: usize,
    /// Maximum number of restart cycles.
    pub max_cycles: usize,
}

impl Default for GmresConfig {
    fn default() -> Self {
        Self {
            rel_tol: 1e-8,
            restart: 30,
            max_cycles: 1000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GmresOutcome {
    pub converged: bool,
    /// Relative residual `||b - Ax|| / ||b||` of the returned iterate.
    pub rel_residual: f64,
    pub iterations: usize,
    pub cycles: usize,
}

/// Scratch space reused across solves of the same dimension.
#[derive(Debug, Clone)]
pub struct GmresWorkspace {
    basis: Vec<Vec<Complex64>>,
    hess: Vec<Vec<Complex64>>,
    cs: Vec<f64>,
    sn: Vec<Complex64>,
    g: Vec<Complex64>,
    r: Vec<Complex64>,
    z: Vec<Complex64>,
}

impl GmresWorkspace {
    pub fn new(dim: usize, restart: usize) -> Self {
        Self {
            basis: vec![vec![Complex64::default(); dim]; restart + 1],
            hess: vec![vec![Complex64::default(); restart]; restart + 1],
            cs: vec![0.0; restart],
            sn: vec![Complex64::default(); restart],
            g: vec![Complex64::default(); restart + 1],
            r: vec![Complex64::default(); dim],
            z: vec![Complex64::default(); dim],
        }
    }

    fn fits(&self, dim: usize, restart: usize) -> bool {
        self.basis.len() == restart + 1 && self.r.len() == dim
    }
}

fn norm(v: &[Complex64]) -> f64 {
    v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
}

fn dot(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

fn precondition(inv_diag: Option<&[Complex64]>, v: &[Complex64], out: &mut [Complex64]) {
    match inv_diag {
        Some(m) => out.iter_mut().zip(v).zip(m).for_each(|((o, x), d)| *o = x * d),
        None => out.copy_from_slice(v),
    }
}

/// `r = b - A x`; returns `||r||`.
pub fn residual<A: LinearOperator + ?Sized>(a: &A, b: &[Complex64], x: &[Complex64], r: &mut [Complex64]) -> f64 {
    a.apply(x, r);
    r.iter_mut().zip(b).for_each(|(ri, bi)| *ri = bi - *ri);
    norm(r)
}

/// Solve `A x = b`, starting from the contents of `x`.
///
/// `inv_diag`, when given, is applied as a right preconditioner
/// `A M^{-1} y = b`, `x = M^{-1} y`.
pub fn gmres<A: LinearOperator + ?Sized>(
    a: &A,
    b: &[Complex64],
    x: &mut [Complex64],
    inv_diag: Option<&[Complex64]>,
    cfg: &GmresConfig,
    ws: &mut GmresWorkspace,
) -> GmresOutcome {
    let n = a.dim();
    let m = cfg.restart.max(1);
    assert_eq!(b.len(), n);
    assert_eq!(x.len(), n);
    if !ws.fits(n, m) {
        *ws = GmresWorkspace::new(n, m);
    }
    let b_norm = norm(b);
    if b_norm == 0.0 {
        x.iter_mut().for_each(|v| *v = Complex64::default());
        return GmresOutcome {
            converged: true,
            rel_residual: 0.0,
            iterations: 0,
            cycles: 0,
        };
    }
    let target = cfg.rel_tol * b_norm;
    let mut iterations = 0;
    let mut cycles = 0;
    loop {
        let beta = residual(a, b, x, &mut ws.r);
        if beta <= target || cycles >= cfg.max_cycles {
            return GmresOutcome {
                converged: beta <= target,
                rel_residual: beta / b_norm,
                iterations,
                cycles,
            };
        }
        cycles += 1;

        let GmresWorkspace {
            basis,
            hess,
            cs,
            sn,
            g,
            r,
            z,
        } = ws;
        basis[0].iter_mut().zip(r.iter()).for_each(|(v, ri)| *v = ri / beta);
        g.iter_mut().for_each(|gi| *gi = Complex64::default());
        g[0] = Complex64::new(beta, 0.0);

        let mut k = 0;
        while k < m {
            iterations += 1;
            precondition(inv_diag, &basis[k], z);
            let (head, tail) = basis.split_at_mut(k + 1);
            let w = &mut tail[0];
            a.apply(z, w);
            for (j, vj) in head.iter().enumerate() {
                let hjk = dot(vj, w);
                hess[j][k] = hjk;
                w.iter_mut().zip(vj).for_each(|(wi, vi)| *wi -= hjk * vi);
            }
            let h_next = norm(w);
            hess[k + 1][k] = Complex64::new(h_next, 0.0);
            if h_next > 0.0 {
                let s = 1.0 / h_next;
                w.iter_mut().for_each(|wi| *wi *= s);
            }

            for j in 0..k {
                let (x0, x1) = (hess[j][k], hess[j + 1][k]);
                hess[j][k] = cs[j] * x0 + sn[j] * x1;
                hess[j + 1][k] = -sn[j].conj() * x0 + cs[j] * x1;
            }
            let (p, q) = (hess[k][k], hess[k + 1][k]);
            let t = (p.norm_sqr() + q.norm_sqr()).sqrt();
            if p.norm() == 0.0 {
                cs[k] = 0.0;
                sn[k] = Complex64::new(1.0, 0.0);
                hess[k][k] = q;
            } else {
                let phase = p / p.norm();
                cs[k] = p.norm() / t;
                sn[k] = phase * q.conj() / t;
                hess[k][k] = phase * t;
            }
            hess[k + 1][k] = Complex64::default();
            let gk = g[k];
            g[k] = cs[k] * gk;
            g[k + 1] = -sn[k].conj() * gk;
            k += 1;
            if g[k].norm() <= target || h_next == 0.0 {
                break;
            }
        }

        // back substitution on the k x k triangle
        let mut y = vec![Complex64::default(); k];
        for i in (0..k).rev() {
            let mut s = g[i];
            for j in i + 1..k {
                s -= hess[i][j] * y[j];
            }
            y[i] = s / hess[i][i];
        }
        r.iter_mut().for_each(|v| *v = Complex64::default());
        for (j, yj) in y.iter().enumerate() {
            r.iter_mut().zip(&basis[j]).for_each(|(acc, v)| *acc += yj * v);
        }
        precondition(inv_diag, r, z);
        x.iter_mut().zip(z.iter()).for_each(|(xi, zi)| *xi += zi);
    }
}
