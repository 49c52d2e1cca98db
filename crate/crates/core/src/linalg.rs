//! Sparse row storage and the linear solvers behind every elliptic solve:
//! banded LU with partial pivoting, conjugate gradients and Jacobi
//! preconditioned BiCGSTAB. Everything runs single-threaded with a fixed
//! operation order, so results are bitwise reproducible.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// Square sparse matrix stored by rows, columns sorted within each row.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    n: usize,
    rows: Vec<Vec<(usize, f64)>>,
}

/// Accumulating builder; repeated `(row, col)` entries are summed.
#[derive(Debug, Clone)]
pub struct SparseBuilder {
    n: usize,
    rows: Vec<BTreeMap<usize, f64>>,
}

impl SparseBuilder {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            rows: vec![BTreeMap::new(); n],
        }
    }

    #[inline]
    pub fn add(&mut self, row: usize, col: usize, value: f64) {
        debug_assert!(row < self.n && col < self.n);
        *self.rows[row].entry(col).or_insert(0.0) += value;
    }

    pub fn build(self) -> Result<SparseMatrix> {
        let rows: Vec<Vec<(usize, f64)>> = self
            .rows
            .into_iter()
            .map(|r| r.into_iter().filter(|&(_, v)| v != 0.0).collect())
            .collect();
        SparseMatrix::from_rows(self.n, rows)
    }
}

impl SparseMatrix {
    pub fn from_rows(n: usize, mut rows: Vec<Vec<(usize, f64)>>) -> Result<Self> {
        if rows.len() != n {
            return Err(Error::Invariant(format!(
                "matrix has {} rows, expected {n}",
                rows.len()
            )));
        }
        for (r, row) in rows.iter_mut().enumerate() {
            row.sort_by_key(|&(c, _)| c);
            for w in row.windows(2) {
                if w[0].0 == w[1].0 {
                    return Err(Error::Invariant(format!(
                        "duplicate column {} in row {r}",
                        w[0].0
                    )));
                }
            }
            if row.iter().any(|&(c, v)| c >= n || !v.is_finite()) {
                return Err(Error::Invariant(format!(
                    "row {r} has an out-of-range column or non-finite value"
                )));
            }
        }
        Ok(Self { n, rows })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            n,
            rows: (0..n).map(|i| vec![(i, 1.0)]).collect(),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.rows[i]
            .binary_search_by_key(&j, |&(c, _)| c)
            .map(|k| self.rows[i][k].1)
            .unwrap_or(0.0)
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.mul_into(x, &mut y);
        y
    }

    pub fn mul_into(&self, x: &[f64], y: &mut [f64]) {
        for (yi, row) in y.iter_mut().zip(&self.rows) {
            *yi = row.iter().map(|&(c, v)| v * x[c]).sum();
        }
    }

    /// Lower and upper bandwidths.
    pub fn bandwidths(&self) -> (usize, usize) {
        let mut kl = 0;
        let mut ku = 0;
        for (i, row) in self.rows.iter().enumerate() {
            for &(c, _) in row {
                if c < i {
                    kl = kl.max(i - c);
                } else {
                    ku = ku.max(c - i);
                }
            }
        }
        (kl, ku)
    }

    pub fn max_abs(&self) -> f64 {
        self.rows
            .iter()
            .flatten()
            .fold(0.0, |m, &(_, v)| m.max(v.abs()))
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    /// `‖b − A x‖ / ‖b‖` (absolute residual when `b = 0`).
    pub fn relative_residual(&self, x: &[f64], b: &[f64]) -> f64 {
        let ax = self.mul_vec(x);
        let r = ax.iter().zip(b).map(|(a, b)| (b - a).powi(2)).sum::<f64>().sqrt();
        let nb = norm(b);
        if nb > 0.0 {
            r / nb
        } else {
            r
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveMethod {
    Direct,
    Cg,
    Bicgstab,
}

impl SolveMethod {
    /// Direct banded LU up to the size of a 129² grid, BiCGSTAB beyond.
    pub fn auto(n: usize) -> Self {
        if n <= 129 * 129 {
            SolveMethod::Direct
        } else {
            SolveMethod::Bicgstab
        }
    }
}

impl std::fmt::Display for SolveMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SolveMethod::Direct => "direct",
            SolveMethod::Cg => "cg",
            SolveMethod::Bicgstab => "bicgstab",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearSolveReport {
    pub method: SolveMethod,
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
}

/// Residual bound guaranteed for a successful direct solve.
pub const DIRECT_RESIDUAL_TOL: f64 = 1e-10;

/// Solve `A x = rhs`. Iterative methods that exhaust `max_iter` return
/// `converged = false` rather than an error.
pub fn solve_linear(
    a: &SparseMatrix,
    rhs: &[f64],
    method: SolveMethod,
    tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, LinearSolveReport)> {
    if rhs.len() != a.n {
        return Err(Error::Invariant(format!(
            "rhs has length {}, matrix dimension is {}",
            rhs.len(),
            a.n
        )));
    }
    match method {
        SolveMethod::Direct => {
            let lu = BandedLu::factor(a)?;
            let x = lu.solve(rhs);
            let residual = a.relative_residual(&x, rhs);
            Ok((
                x,
                LinearSolveReport {
                    method,
                    iterations: 0,
                    residual,
                    converged: residual <= DIRECT_RESIDUAL_TOL,
                },
            ))
        }
        SolveMethod::Cg => cg(a, rhs, None, tol, max_iter),
        SolveMethod::Bicgstab => bicgstab(a, rhs, None, tol, max_iter),
    }
}

/// LU factorization with partial pivoting of a banded matrix, stored in the
/// LAPACK `gbtrf` column-major band layout so it can be reused across solves.
#[derive(Debug, Clone)]
pub struct BandedLu {
    n: usize,
    kl: usize,
    ku: usize,
    ldab: usize,
    ab: Vec<f64>,
    piv: Vec<usize>,
}

impl BandedLu {
    pub fn factor(a: &SparseMatrix) -> Result<Self> {
        let n = a.n;
        let (kl, ku) = a.bandwidths();
        let kv = kl + ku;
        let ldab = 2 * kl + ku + 1;
        let mut ab = vec![0.0; ldab * n];
        let at = |i: usize, j: usize| j * ldab + kv + i - j;
        for (i, row) in a.rows.iter().enumerate() {
            for &(j, v) in row {
                ab[at(i, j)] = v;
            }
        }
        let tiny = 1e-14 * a.max_abs();
        let mut piv = vec![0; n];
        for j in 0..n {
            let km = kl.min(n - 1 - j);
            let col = j * ldab + kv;
            let mut p = 0;
            let mut best = ab[col].abs();
            for t in 1..=km {
                let v = ab[col + t].abs();
                if v > best {
                    best = v;
                    p = t;
                }
            }
            if best <= tiny || best == 0.0 {
                return Err(Error::SingularMatrix { row: j, pivot: best });
            }
            piv[j] = j + p;
            let ju = (j + kv).min(n - 1);
            if p != 0 {
                for c in j..=ju {
                    ab.swap(at(j, c), at(j + p, c));
                }
            }
            let inv = 1.0 / ab[col];
            for t in 1..=km {
                ab[col + t] *= inv;
            }
            for c in j + 1..=ju {
                let f = ab[at(j, c)];
                if f != 0.0 {
                    let base_c = at(j, c);
                    for t in 1..=km {
                        ab[base_c + t] -= ab[col + t] * f;
                    }
                }
            }
        }
        Ok(Self {
            n,
            kl,
            ku,
            ldab,
            ab,
            piv,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let mut x = rhs.to_vec();
        self.solve_in_place(&mut x);
        x
    }

    pub fn solve_in_place(&self, x: &mut [f64]) {
        let (n, kl, ldab) = (self.n, self.kl, self.ldab);
        let kv = kl + self.ku;
        for j in 0..n {
            let p = self.piv[j];
            if p != j {
                x.swap(j, p);
            }
            let xj = x[j];
            if xj != 0.0 {
                let km = kl.min(n - 1 - j);
                let col = j * ldab + kv;
                for t in 1..=km {
                    x[j + t] -= self.ab[col + t] * xj;
                }
            }
        }
        for j in (0..n).rev() {
            let col = j * ldab + kv;
            x[j] /= self.ab[col];
            let xj = x[j];
            if xj != 0.0 {
                let top = j.saturating_sub(kv);
                for i in top..j {
                    x[i] -= self.ab[col - (j - i)] * xj;
                }
            }
        }
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Conjugate gradients for symmetric positive-definite matrices.
pub fn cg(
    a: &SparseMatrix,
    b: &[f64],
    x0: Option<&[f64]>,
    tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, LinearSolveReport)> {
    let n = a.n;
    let mut x = x0.map_or_else(|| vec![0.0; n], <[f64]>::to_vec);
    let bnorm = norm(b);
    let scale = if bnorm > 0.0 { bnorm } else { 1.0 };
    let mut r: Vec<f64> = b.iter().zip(a.mul_vec(&x)).map(|(b, ax)| b - ax).collect();
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    let mut ap = vec![0.0; n];
    let mut it = 0;
    while rr.sqrt() / scale > tol && it < max_iter {
        a.mul_into(&p, &mut ap);
        let curvature = dot(&p, &ap);
        if curvature <= 0.0 {
            return Err(Error::IndefiniteMatrix(curvature));
        }
        let alpha = rr / curvature;
        for k in 0..n {
            x[k] += alpha * p[k];
            r[k] -= alpha * ap[k];
        }
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        for k in 0..n {
            p[k] = r[k] + beta * p[k];
        }
        rr = rr_new;
        it += 1;
    }
    let residual = a.relative_residual(&x, b);
    Ok((
        x,
        LinearSolveReport {
            method: SolveMethod::Cg,
            iterations: it,
            residual,
            converged: residual <= tol,
        },
    ))
}

/// Jacobi-preconditioned BiCGSTAB for general nonsymmetric systems.
pub fn bicgstab(
    a: &SparseMatrix,
    b: &[f64],
    x0: Option<&[f64]>,
    tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, LinearSolveReport)> {
    let n = a.n;
    let dinv: Vec<f64> = a
        .diagonal()
        .into_iter()
        .map(|d| if d != 0.0 { 1.0 / d } else { 1.0 })
        .collect();
    let precond = |v: &[f64], out: &mut [f64]| {
        for k in 0..n {
            out[k] = dinv[k] * v[k];
        }
    };
    let mut x = x0.map_or_else(|| vec![0.0; n], <[f64]>::to_vec);
    let bnorm = norm(b);
    let scale = if bnorm > 0.0 { bnorm } else { 1.0 };
    let mut r: Vec<f64> = b.iter().zip(a.mul_vec(&x)).map(|(b, ax)| b - ax).collect();
    let r_hat = r.clone();
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut y = vec![0.0; n];
    let mut s = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut t = vec![0.0; n];
    let mut it = 0;
    while norm(&r) / scale > tol && it < max_iter {
        let rho_new = dot(&r_hat, &r);
        if rho_new == 0.0 || omega == 0.0 {
            break;
        }
        let beta = (rho_new / rho) * (alpha / omega);
        for k in 0..n {
            p[k] = r[k] + beta * (p[k] - omega * v[k]);
        }
        precond(&p, &mut y);
        a.mul_into(&y, &mut v);
        let denom = dot(&r_hat, &v);
        if denom == 0.0 {
            break;
        }
        alpha = rho_new / denom;
        for k in 0..n {
            s[k] = r[k] - alpha * v[k];
        }
        it += 1;
        if norm(&s) / scale <= tol {
            for k in 0..n {
                x[k] += alpha * y[k];
            }
            r.copy_from_slice(&s);
            break;
        }
        precond(&s, &mut z);
        a.mul_into(&z, &mut t);
        let tt = dot(&t, &t);
        omega = if tt > 0.0 { dot(&t, &s) / tt } else { 0.0 };
        for k in 0..n {
            x[k] += alpha * y[k] + omega * z[k];
            r[k] = s[k] - omega * t[k];
        }
        rho = rho_new;
    }
    let residual = a.relative_residual(&x, b);
    Ok((
        x,
        LinearSolveReport {
            method: SolveMethod::Bicgstab,
            iterations: it,
            residual,
            converged: residual <= tol,
        },
    ))
}
