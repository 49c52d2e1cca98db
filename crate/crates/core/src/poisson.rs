//! Dirichlet problems for the 5-point Laplacian.

use crate::error::{Error, Result};
use crate::fields::{GridSpec, ScalarField};
use crate::linalg::{solve_linear, SolveMethod, SparseBuilder, SparseMatrix};

/// `−Δ_h` on interior unknowns, scaled by `h²` (diagonal 4, off-diagonal −1).
pub(crate) fn neg_laplacian_matrix(grid: &GridSpec) -> Result<SparseMatrix> {
    let (nx, ny) = (grid.nx(), grid.ny());
    let mut b = SparseBuilder::new(grid.interior_len());
    for (i, j) in grid.interior() {
        let row = grid.interior_idx(i, j);
        b.add(row, row, 4.0);
        for (ii, jj) in [(i - 1, j), (i + 1, j), (i, j - 1), (i, j + 1)] {
            if ii > 0 && jj > 0 && ii < nx - 1 && jj < ny - 1 {
                b.add(row, grid.interior_idx(ii, jj), -1.0);
            }
        }
    }
    b.build()
}

/// Solve `Δ_h q = source` at interior nodes with `q = boundary` on the edges.
/// Only the boundary entries of `boundary` are read.
pub fn solve_dirichlet_poisson(boundary: &ScalarField, source: &ScalarField) -> Result<ScalarField> {
    let grid = *boundary.grid();
    grid.check_same(source.grid())?;
    let (nx, ny) = (grid.nx(), grid.ny());
    let h2 = grid.h() * grid.h();
    let a = neg_laplacian_matrix(&grid)?;
    let mut rhs = vec![0.0; grid.interior_len()];
    for (i, j) in grid.interior() {
        let mut r = -h2 * source.at(i, j);
        for (ii, jj) in [(i - 1, j), (i + 1, j), (i, j - 1), (i, j + 1)] {
            if ii == 0 || jj == 0 || ii == nx - 1 || jj == ny - 1 {
                r += boundary.at(ii, jj);
            }
        }
        rhs[grid.interior_idx(i, j)] = r;
    }
    let method = SolveMethod::auto(rhs.len());
    let method = if method == SolveMethod::Direct {
        method
    } else {
        SolveMethod::Cg
    };
    let (x, rep) = solve_linear(&a, &rhs, method, 1e-12, 20 * rhs.len())?;
    if !rep.converged {
        return Err(Error::LinearSolveFailed(format!(
            "Dirichlet Poisson: {} stopped at residual {:e}",
            rep.method, rep.residual
        )));
    }
    let mut out = boundary.clone();
    for (i, j) in grid.interior() {
        out.set(i, j, x[grid.interior_idx(i, j)]);
    }
    Ok(out)
}
