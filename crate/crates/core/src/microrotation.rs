//! Problem (A): given a velocity and a density, the microrotation solves
//! `−κΔw + ρ v·∇w + 4μ_r w = 2μ_r curl v + ρ g` with `w = w₀` on the boundary.

use crate::boundary::ScalarTrace;
use crate::error::{Error, Result};
use crate::fields::{
    curl, interior_l2, GridField, GridSpec, NormKind, ScalarField, VectorField,
};
use crate::linalg::{solve_linear, LinearSolveReport, SolveMethod, SparseBuilder, SparseMatrix};

/// Microinertia, fixed to one.
pub const J_INERTIA: f64 = 1.0;

/// Viscosities of the micropolar model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FluidParams {
    pub mu: f64,
    pub mu_r: f64,
    pub c_a: f64,
    pub c_d: f64,
    /// Bulk angular viscosity; recorded only, it drops out in the plane.
    pub c0: Option<f64>,
}

impl FluidParams {
    pub fn new(mu: f64, mu_r: f64, c_a: f64, c_d: f64, c0: Option<f64>) -> Result<Self> {
        let p = Self {
            mu,
            mu_r,
            c_a,
            c_d,
            c0,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Invariant(what.to_string()));
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return bad("mu > 0");
        }
        if !(self.mu_r >= 0.0 && self.mu_r.is_finite()) {
            return bad("mu_r >= 0");
        }
        if !(self.c_a > 0.0 && self.c_a.is_finite()) {
            return bad("c_a > 0");
        }
        if !(self.c_d > 0.0 && self.c_d.is_finite()) {
            return bad("c_d > 0");
        }
        if let Some(c0) = self.c0 {
            if !(c0 > self.c_a + self.c_d) {
                return bad("c0 > c_a + c_d");
            }
        }
        Ok(())
    }

    pub fn sigma(&self) -> f64 {
        self.mu + self.mu_r
    }

    pub fn kappa(&self) -> f64 {
        self.c_a + self.c_d
    }
}

/// Result of one problem (A) solve.
#[derive(Debug, Clone)]
pub struct MicrorotationSolve {
    /// Total microrotation, equal to `w₀` on the boundary.
    pub w: ScalarField,
    /// Cell Péclet number `max|ρv|·h/(2κ)`.
    pub peclet: f64,
    pub report: LinearSolveReport,
}

/// Cell Péclet number of the mass flux `ρv`.
pub fn cell_peclet(v: &VectorField, rho: &ScalarField, kappa: f64) -> f64 {
    let g = v.grid();
    let m = g.nodes().fold(0.0f64, |acc, (i, j)| {
        acc.max(rho.at(i, j).abs() * v.magnitude2(i, j).sqrt())
    });
    m * g.h() / (2.0 * kappa)
}

/// Matrix of problem (A) on interior unknowns, every row multiplied by `h²`.
/// Columns that would hit boundary nodes are dropped; `neighbour_weights`
/// gives the same coefficients for moving boundary data to the right.
pub fn problem_a_matrix(
    v: &VectorField,
    rho: &ScalarField,
    params: &FluidParams,
) -> Result<SparseMatrix> {
    let grid = *v.grid();
    grid.check_same(rho.grid())?;
    let mut b = SparseBuilder::new(grid.interior_len());
    let diag = 4.0 * params.kappa() + 4.0 * params.mu_r * grid.h() * grid.h();
    for (i, j) in grid.interior() {
        let row = grid.interior_idx(i, j);
        b.add(row, row, diag);
        for ((ii, jj), c) in neighbour_weights(&grid, v, rho, params.kappa(), i, j) {
            if !grid.is_boundary(ii, jj) {
                b.add(row, grid.interior_idx(ii, jj), c);
            }
        }
    }
    b.build()
}

/// Off-diagonal weights (times `h²`) of the row at interior node `(i, j)`:
/// diffusion `−κ` plus the skew-symmetric centered advection of `m = ρv`,
/// `c_E = h(m_x(P) + m_x(E))/4`, `c_W = −h(m_x(P) + m_x(W))/4`, likewise in y.
fn neighbour_weights(
    grid: &GridSpec,
    v: &VectorField,
    rho: &ScalarField,
    kappa: f64,
    i: usize,
    j: usize,
) -> [((usize, usize), f64); 4] {
    let h = grid.h();
    let m = |i: usize, j: usize| {
        let [a, b] = v.at(i, j);
        let r = rho.at(i, j);
        [r * a, r * b]
    };
    let mp = m(i, j);
    let q = 0.25 * h;
    [
        ((i + 1, j), -kappa + q * (mp[0] + m(i + 1, j)[0])),
        ((i - 1, j), -kappa - q * (mp[0] + m(i - 1, j)[0])),
        ((i, j + 1), -kappa + q * (mp[1] + m(i, j + 1)[1])),
        ((i, j - 1), -kappa - q * (mp[1] + m(i, j - 1)[1])),
    ]
}

/// Solve problem (A) for the total microrotation.
pub fn solve_problem_a(
    v: &VectorField,
    rho: &ScalarField,
    g: &ScalarField,
    w0: &ScalarTrace,
    params: &FluidParams,
) -> Result<MicrorotationSolve> {
    let grid = *v.grid();
    grid.check_same(rho.grid())?;
    grid.check_same(g.grid())?;
    grid.check_same(w0.grid())?;
    let kappa = params.kappa();
    let peclet = cell_peclet(v, rho, kappa);
    if peclet > 1.0 {
        log::warn!("advection-dominated grid: cell Peclet number {peclet:.3} exceeds 1");
    }
    let wb = w0.to_field();
    let h2 = grid.h() * grid.h();
    let a = problem_a_matrix(v, rho, params)?;
    let cv = curl(v);
    let mut rhs = vec![0.0; grid.interior_len()];
    for (i, j) in grid.interior() {
        let mut r = h2 * (2.0 * params.mu_r * cv.at(i, j) + rho.at(i, j) * g.at(i, j));
        for ((ii, jj), c) in neighbour_weights(&grid, v, rho, kappa, i, j) {
            if grid.is_boundary(ii, jj) {
                r -= c * wb.at(ii, jj);
            }
        }
        rhs[grid.interior_idx(i, j)] = r;
    }
    let n = rhs.len();
    let (x, report) = solve_linear(&a, &rhs, SolveMethod::auto(n), 1e-12, 20 * n.max(10))?;
    if !report.converged {
        return Err(Error::LinearSolveFailed(format!(
            "problem (A): {} stopped at residual {:e}",
            report.method, report.residual
        )));
    }
    let mut w = wb;
    for (i, j) in grid.interior() {
        w.set(i, j, x[grid.interior_idx(i, j)]);
    }
    Ok(MicrorotationSolve { w, peclet, report })
}

/// Both sides of the a priori estimate for the shifted microrotation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimateReport {
    /// `κ‖∇w̲‖² + 4μ_r‖w̲‖²`.
    pub left: f64,
    /// The five right-hand terms, in order: curl coupling, forcing, lift
    /// advection, lift diffusion, lift reaction.
    pub terms: [f64; 5],
    pub right: f64,
    /// `right − left`.
    pub margin: f64,
}

/// Evaluate the energy estimate for `w̲ = w − b`. The lift constant is
/// replaced by the computed `‖b‖_{H¹}`; the coupling term uses the interior
/// L2 norm of `curl_h v`, which is what the discrete identity pairs with `w̲`.
pub fn check_energy_estimate(
    w_shifted: &ScalarField,
    v: &VectorField,
    g: &ScalarField,
    b: &ScalarField,
    params: &FluidParams,
    eta_sup: f64,
) -> Result<EstimateReport> {
    let grid = w_shifted.grid();
    grid.check_same(v.grid())?;
    grid.check_same(g.grid())?;
    grid.check_same(b.grid())?;
    let kappa = params.kappa();
    let mu_r = params.mu_r;
    let w_l2 = w_shifted.norm(NormKind::L2);
    let w_grad = w_shifted.grad_norm();
    let left = kappa * w_grad * w_grad + 4.0 * mu_r * w_l2 * w_l2;
    let b_h1 = b.norm(NormKind::H1);
    let terms = [
        2.0 * mu_r * interior_l2(&curl(v)) * w_l2,
        eta_sup * g.norm(NormKind::L2) * w_l2,
        eta_sup * b_h1 * v.norm(NormKind::L4) * w_shifted.norm(NormKind::L4),
        kappa * b_h1 * w_grad,
        4.0 * mu_r * b_h1 * w_l2,
    ];
    let right: f64 = terms.iter().sum();
    Ok(EstimateReport {
        left,
        terms,
        right,
        margin: right - left,
    })
}
