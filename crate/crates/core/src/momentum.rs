//! One application of the fixed-point operator: density from the stream
//! function, problem (A) for the microrotation, then a clamped biharmonic
//! solve for the new total stream function. Pressure is recovered afterwards
//! from a Neumann Poisson problem.

use crate::boundary::{
    boundary_stream, boundary_stream_from, build_density_law, build_hopf_extension, build_lift_w, check_compatibility,
    flux_tolerance, velocity_with_trace, BoundaryLoop, DensityLaw, GammaSpec, HopfExtension,
    ScalarTrace, VectorTrace, DEFAULT_FLUX_FLOOR, DEFAULT_PANEL_SEED,
};
use crate::error::{Error, Result};
use crate::fields::{
    advect_vector_full, curl, curl_scalar, div, laplacian_vector, GridSpec, ScalarField,
    VectorField,
};
use crate::linalg::{
    solve_linear, BandedLu, LinearSolveReport, SolveMethod, SparseBuilder, SparseMatrix,
};
use crate::microrotation::{solve_problem_a, FluidParams};
use crate::streamfunction::density_of;

/// Relative residual above which a biharmonic solve counts as stagnated.
pub const BIHARMONIC_RESIDUAL_TOL: f64 = 1e-9;

/// User-facing description of a boundary value problem.
#[derive(Debug, Clone)]
pub struct ProblemSpec {
    pub params: FluidParams,
    pub v0: VectorTrace,
    pub w0: ScalarTrace,
    /// Boundary density; only its values on Γ are used.
    pub rho0: ScalarTrace,
    /// Inflow arc; may be omitted only when `v₀` has no inflow anywhere.
    pub gamma: Option<GammaSpec>,
    pub f: VectorField,
    pub g: ScalarField,
    /// Layer width of the divergence-free extension; `None` means `min(lx, ly)/8`.
    pub eps: Option<f64>,
    pub panel_seed: u64,
}

impl ProblemSpec {
    pub fn grid(&self) -> &GridSpec {
        self.v0.grid()
    }
}

/// How the density is obtained from the stream function.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DensityMode {
    /// `ρ = η(ψ)`.
    Law,
    /// `ρ ≡ c`, bypassing the law.
    Constant(f64),
}

/// Fixed data of the iteration, validated once.
#[derive(Debug, Clone)]
pub struct IterationData {
    pub params: FluidParams,
    pub v0: VectorTrace,
    pub w0: ScalarTrace,
    pub rho0: ScalarTrace,
    pub gamma: Option<GammaSpec>,
    pub phi_b: ScalarTrace,
    pub law: DensityLaw,
    pub density: DensityMode,
    pub hopf: HopfExtension,
    /// Harmonic lift of `w₀`.
    pub b: ScalarField,
    pub f: VectorField,
    pub g: ScalarField,
    pub net_flux: f64,
    biharmonic: Biharmonic,
}

impl IterationData {
    pub fn new(spec: ProblemSpec) -> Result<Self> {
        let grid = *spec.grid();
        for other in [spec.w0.grid(), spec.rho0.grid(), spec.f.grid(), spec.g.grid()] {
            grid.check_same(other)?;
        }
        spec.params.validate()?;
        let net_flux = check_compatibility(&spec.v0);
        let tol = flux_tolerance(&spec.v0);
        if net_flux.abs() > tol {
            return Err(Error::IncompatibleFlux { gap: net_flux, tol });
        }
        let (phi_b, law) = match &spec.gamma {
            Some(gamma) => {
                gamma.check_strict_inflow(&spec.v0, DEFAULT_FLUX_FLOOR)?;
                let phi_b = boundary_stream(&spec.v0, gamma)?;
                let law = build_density_law(&spec.rho0, &phi_b, gamma)?;
                (phi_b, law)
            }
            None => {
                // no inflow arc: the density is carried in from nowhere, so it
                // is the constant boundary value at loop node 0
                let l = spec.v0.boundary_loop();
                if let Some(k) = (0..l.len())
                    .find(|&k| spec.v0.normal_component(k) < -DEFAULT_FLUX_FLOOR)
                {
                    return Err(Error::Invariant(format!(
                        "an inflow arc is required: v0.n < 0 at boundary node {k}"
                    )));
                }
                let phi_b = boundary_stream_from(&spec.v0, 0)?;
                let law = DensityLaw::constant(spec.rho0.value(0)).map_err(|_| {
                    Error::NonpositiveDensity {
                        index: 0,
                        value: spec.rho0.value(0),
                    }
                })?;
                (phi_b, law)
            }
        };
        let eps = spec.eps.unwrap_or(0.125 * grid.lx().min(grid.ly()));
        let hopf = build_hopf_extension(&spec.v0, &phi_b, eps, spec.panel_seed)?;
        let b = build_lift_w(&spec.w0)?;
        let biharmonic = Biharmonic::new(&grid, spec.params.sigma(), &phi_b, &spec.v0)?;
        Ok(Self {
            params: spec.params,
            v0: spec.v0,
            w0: spec.w0,
            rho0: spec.rho0,
            gamma: spec.gamma,
            phi_b,
            law,
            density: DensityMode::Law,
            hopf,
            b,
            f: spec.f,
            g: spec.g,
            net_flux,
            biharmonic,
        })
    }

    pub fn grid(&self) -> &GridSpec {
        self.v0.grid()
    }

    pub fn with_density_mode(mut self, mode: DensityMode) -> Self {
        self.density = mode;
        self
    }

    /// Upper bound of the density actually used.
    pub fn eta_sup(&self) -> f64 {
        match self.density {
            DensityMode::Law => self.law.sup_norm(),
            DensityMode::Constant(c) => c,
        }
    }

    pub fn density_field(&self, psi: &ScalarField) -> ScalarField {
        match self.density {
            DensityMode::Law => density_of(psi, &self.law),
            DensityMode::Constant(c) => ScalarField::constant(*psi.grid(), c),
        }
    }

    /// Velocity of a shifted stream function (zero boundary trace).
    pub fn shift_velocity(&self, chi_u: &ScalarField) -> Result<VectorField> {
        velocity_with_trace(chi_u, &VectorTrace::zeros(*self.grid()))
    }

    /// Total velocity `u + a`.
    pub fn total_velocity(&self, chi_u: &ScalarField) -> Result<VectorField> {
        self.shift_velocity(chi_u)?.add(&self.hopf.a)
    }

    /// Total stream function `χ_u + ζ`.
    pub fn total_stream(&self, chi_u: &ScalarField) -> Result<ScalarField> {
        chi_u.add(&self.hopf.zeta)
    }

    /// Scale of the data used by the divergence policy.
    pub fn data_norm(&self) -> f64 {
        use crate::fields::{GridField, NormKind};
        self.hopf.a.norm(NormKind::H1)
            + self.b.norm(NormKind::H1)
            + self.f.norm(NormKind::L2)
            + self.g.norm(NormKind::L2)
    }
}

/// Clamped biharmonic operator on interior unknowns with the boundary data
/// folded into a constant right-hand side, factored once.
#[derive(Debug, Clone)]
struct Biharmonic {
    grid: GridSpec,
    sigma: f64,
    matrix: SparseMatrix,
    lu: BandedLu,
    /// Boundary contribution `−Σ c_Q χ_Q` (times `h⁴`) per interior row.
    bc_rhs: Vec<f64>,
    phi_b: ScalarField,
}

const BIHARMONIC_STENCIL: [(isize, isize, f64); 13] = [
    (0, 0, 20.0),
    (1, 0, -8.0),
    (-1, 0, -8.0),
    (0, 1, -8.0),
    (0, -1, -8.0),
    (1, 1, 2.0),
    (1, -1, 2.0),
    (-1, 1, 2.0),
    (-1, -1, 2.0),
    (2, 0, 1.0),
    (-2, 0, 1.0),
    (0, 2, 1.0),
    (0, -2, 1.0),
];

impl Biharmonic {
    fn new(grid: &GridSpec, sigma: f64, phi_b: &ScalarTrace, v0: &VectorTrace) -> Result<Self> {
        let (nx, ny) = (grid.nx() as isize, grid.ny() as isize);
        let h = grid.h();
        let bloop = BoundaryLoop::new(*grid);
        let phi = phi_b.to_field();
        let mut bld = SparseBuilder::new(grid.interior_len());
        let mut bc_rhs = vec![0.0; grid.interior_len()];
        for (i, j) in grid.interior() {
            let row = grid.interior_idx(i, j);
            for &(di, dj, c) in &BIHARMONIC_STENCIL {
                let (qi, qj) = (i as isize + di, j as isize + dj);
                if qi < 0 || qj < 0 || qi >= nx || qj >= ny {
                    // ghost: reflect through the boundary node between it and P,
                    // χ_G = χ_P + 2h·∂χ/∂n, and ∂χ/∂n = v₀·τ
                    let (bi, bj) = ((i as isize + di / 2) as usize, (j as isize + dj / 2) as usize);
                    let k = bloop
                        .position(bi, bj)
                        .ok_or_else(|| Error::Invariant("ghost without boundary node".into()))?;
                    bld.add(row, row, c);
                    bc_rhs[row] -= c * 2.0 * h * v0.tangential_component(k);
                    continue;
                }
                let (qi, qj) = (qi as usize, qj as usize);
                if grid.is_boundary(qi, qj) {
                    bc_rhs[row] -= c * phi.at(qi, qj);
                } else {
                    bld.add(row, grid.interior_idx(qi, qj), c);
                }
            }
        }
        let matrix = bld.build()?;
        let lu = BandedLu::factor(&matrix)?;
        Ok(Self {
            grid: *grid,
            sigma,
            matrix,
            lu,
            bc_rhs,
            phi_b: phi,
        })
    }

    /// Solve `σΔ²χ = −curl R` with the stored clamped data.
    fn solve(&self, r: &VectorField) -> Result<ScalarField> {
        let grid = self.grid;
        let h4 = grid.h().powi(4);
        let c = curl(r);
        let mut rhs = self.bc_rhs.clone();
        for (i, j) in grid.interior() {
            rhs[grid.interior_idx(i, j)] -= h4 * c.at(i, j) / self.sigma;
        }
        let x = self.lu.solve(&rhs);
        let res = self.matrix.relative_residual(&x, &rhs);
        if !(res <= BIHARMONIC_RESIDUAL_TOL) {
            return Err(Error::BiharmonicStagnated(res));
        }
        let mut chi = self.phi_b.clone();
        for (i, j) in grid.interior() {
            chi.set(i, j, x[grid.interior_idx(i, j)]);
        }
        Ok(chi)
    }
}

/// Momentum right-hand side `R = −ρ(v·∇)v + 2μ_r curl w + ρf` at every node
/// (one-sided differences on the boundary).
pub fn assemble_rhs(
    v: &VectorField,
    w_total: &ScalarField,
    rho: &ScalarField,
    f: &VectorField,
    params: &FluidParams,
) -> Result<VectorField> {
    let grid = *v.grid();
    for other in [w_total.grid(), rho.grid(), f.grid()] {
        grid.check_same(other)?;
    }
    let adv = advect_vector_full(v, v)?;
    let cw = curl_scalar(w_total);
    let two_mu_r = 2.0 * params.mu_r;
    let mut out = VectorField::zeros(grid);
    for (i, j) in grid.nodes() {
        let r = rho.at(i, j);
        let a = adv.at(i, j);
        let c = cw.at(i, j);
        let ff = f.at(i, j);
        out.set(
            i,
            j,
            [
                -r * a[0] + two_mu_r * c[0] + r * ff[0],
                -r * a[1] + two_mu_r * c[1] + r * ff[1],
            ],
        );
    }
    Ok(out)
}

/// Everything produced by one application of the operator.
#[derive(Debug, Clone)]
pub struct AStep {
    /// `λ(v_new − a)`.
    pub u: VectorField,
    /// Stream function of `u`.
    pub chi: ScalarField,
    /// Density used in this step, `η(χ_u + ζ)`.
    pub rho: ScalarField,
    /// Microrotation solved for the input velocity.
    pub w: ScalarField,
    pub peclet: f64,
    pub linear: LinearSolveReport,
}

/// Apply the operator to the shifted stream function `chi_u` and scale the
/// result by `λ`.
pub fn apply_a(chi_u: &ScalarField, data: &IterationData, lambda: f64) -> Result<AStep> {
    data.grid().check_same(chi_u.grid())?;
    let psi = data.total_stream(chi_u)?;
    let rho = data.density_field(&psi);
    let v = data.total_velocity(chi_u)?;
    let a_solve = solve_problem_a(&v, &rho, &data.g, &data.w0, &data.params)?;
    let r = assemble_rhs(&v, &a_solve.w, &rho, &data.f, &data.params)?;
    let chi_total = data.biharmonic.solve(&r)?;
    let chi = chi_total.sub(&data.hopf.zeta)?.scaled(lambda);
    let u = data.shift_velocity(&chi)?;
    Ok(AStep {
        u,
        chi,
        rho,
        w: a_solve.w,
        peclet: a_solve.peclet,
        linear: a_solve.report,
    })
}

/// Recovered pressure and the momentum residual it leaves.
#[derive(Debug, Clone)]
pub struct PressureSolve {
    /// Zero-mean pressure.
    pub p: ScalarField,
    /// Interior L2 norm of `σΔv − ρ(v·∇)v + 2μ_r curl w + ρf − ∇p`.
    pub momentum_residual: f64,
    /// Constant shift applied to the Neumann data to make the problem solvable.
    pub compatibility_shift: f64,
    pub report: LinearSolveReport,
}

/// Solve `Δp = div R_total` with `∂p/∂n = R_total·n`, where
/// `R_total = σΔv − ρ(v·∇)v + 2μ_r curl w + ρf`.
pub fn recover_pressure(
    v: &VectorField,
    w_total: &ScalarField,
    rho: &ScalarField,
    f: &VectorField,
    params: &FluidParams,
) -> Result<PressureSolve> {
    let grid = *v.grid();
    let (nx, ny) = (grid.nx(), grid.ny());
    let h = grid.h();
    let r = assemble_rhs(v, w_total, rho, f, params)?;
    let r_total = r.lin_comb(1.0, &laplacian_vector(v), params.sigma())?;
    let d = div(&r_total);

    // Every node is an unknown; rows are scaled by h². Neighbours outside the
    // grid are ghosts p_G = p_M + 2h·(R·n) with M the mirror of G.
    let n = grid.len();
    let mut rhs = vec![0.0; n];
    let mut ghost_count = vec![0u8; n];
    let mut bld = SparseBuilder::new(n);
    for (i, j) in grid.nodes() {
        let row = grid.idx(i, j);
        rhs[row] = h * h * d.at(i, j);
        bld.add(row, row, -4.0);
        let rt = r_total.at(i, j);
        let dirs: [(isize, isize, [f64; 2]); 4] = [
            (1, 0, [1.0, 0.0]),
            (-1, 0, [-1.0, 0.0]),
            (0, 1, [0.0, 1.0]),
            (0, -1, [0.0, -1.0]),
        ];
        for (di, dj, nrm) in dirs {
            let (qi, qj) = (i as isize + di, j as isize + dj);
            if qi < 0 || qj < 0 || qi >= nx as isize || qj >= ny as isize {
                let (mi, mj) = ((i as isize - di) as usize, (j as isize - dj) as usize);
                bld.add(row, grid.idx(mi, mj), 1.0);
                rhs[row] -= 2.0 * h * (rt[0] * nrm[0] + rt[1] * nrm[1]);
                ghost_count[row] += 1;
            } else {
                bld.add(row, grid.idx(qi as usize, qj as usize), 1.0);
            }
        }
    }
    // Solvability: with trapezoid weights the operator is symmetric and
    // annihilates constants, so the weighted right-hand side must sum to zero.
    // Shift the Neumann data by a constant to achieve that.
    let mut s0 = 0.0;
    let mut s1 = 0.0;
    for (i, j) in grid.nodes() {
        let k = grid.idx(i, j);
        let wgt = grid.weight(i, j);
        s0 += wgt * rhs[k];
        s1 += wgt * 2.0 * h * ghost_count[k] as f64;
    }
    let shift = if s1 > 0.0 { s0 / s1 } else { 0.0 };
    for k in 0..n {
        rhs[k] -= shift * 2.0 * h * ghost_count[k] as f64;
    }
    let a = bld.build()?;
    // pin node 0
    let mut rows: Vec<Vec<(usize, f64)>> = (0..n).map(|k| a.row(k).to_vec()).collect();
    rows[0] = vec![(0, 1.0)];
    rhs[0] = 0.0;
    let pinned = SparseMatrix::from_rows(n, rows)?;
    let (x, report) = solve_linear(&pinned, &rhs, SolveMethod::auto(n), 1e-12, 20 * n)?;
    if !report.converged {
        return Err(Error::LinearSolveFailed(format!(
            "pressure: {} stopped at residual {:e}",
            report.method, report.residual
        )));
    }
    let mut p = ScalarField::from_values(grid, x)?;
    let mean = p.mean();
    p = p.map(|q| q - mean);

    let h2 = h * h;
    let mut res2 = 0.0;
    for (i, j) in grid.interior() {
        let rt = r_total.at(i, j);
        let e = [rt[0] - p.dx(i, j), rt[1] - p.dy(i, j)];
        res2 += h2 * (e[0] * e[0] + e[1] * e[1]);
    }
    Ok(PressureSolve {
        p,
        momentum_residual: res2.sqrt(),
        compatibility_shift: shift,
        report,
    })
}

/// Default problem with no forcing on the given traces: used by tests and
/// the reduction suite.
pub fn zero_forcing_spec(
    params: FluidParams,
    v0: VectorTrace,
    w0: ScalarTrace,
    rho0: ScalarTrace,
    gamma: Option<GammaSpec>,
) -> ProblemSpec {
    let grid = *v0.grid();
    ProblemSpec {
        params,
        v0,
        w0,
        rho0,
        gamma,
        f: VectorField::zeros(grid),
        g: ScalarField::zeros(grid),
        eps: None,
        panel_seed: DEFAULT_PANEL_SEED,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{max_interior_div, perp_grad, GridField, NormKind};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit(n: usize) -> GridSpec {
        GridSpec::unit_square(n).unwrap()
    }

    fn params() -> FluidParams {
        FluidParams::new(1.0, 0.1, 0.5, 0.5, None).unwrap()
    }

    fn duct_data(n: usize, f: Option<VectorField>) -> IterationData {
        let g = unit(n);
        let v0 = VectorTrace::from_fn(g, |_, y| [-6.0 * y * (1.0 - y), 0.0]);
        let gamma = GammaSpec::new(&g, 1.0, 2.0).unwrap();
        let mut spec = zero_forcing_spec(
            params(),
            v0,
            ScalarTrace::zeros(g),
            ScalarTrace::from_fn(g, |_, y| 1.0 + 0.5 * y),
            Some(gamma),
        );
        if let Some(f) = f {
            spec.f = f;
        }
        IterationData::new(spec).unwrap()
    }

    #[test]
    fn rhs_examples() {
        let g = unit(9);
        let p = FluidParams::new(1.0, 0.5, 0.5, 0.5, None).unwrap();
        let one = ScalarField::constant(g, 1.0);
        let z = VectorField::zeros(g);
        let r = assemble_rhs(&z, &ScalarField::zeros(g), &one, &z, &p).unwrap();
        assert_eq!(r.max_abs(), 0.0);

        let w = ScalarField::from_fn(g, |x, _| x * x);
        let r = assemble_rhs(&z, &w, &one, &z, &p).unwrap();
        for (i, j) in g.interior() {
            let [a, b] = r.at(i, j);
            assert!(a.abs() < 1e-13 && (b + 2.0 * g.x(i)).abs() < 1e-13);
        }

        let v = VectorField::constant(g, [1.0, 0.0]);
        let r = assemble_rhs(&v, &ScalarField::zeros(g), &one, &z, &p).unwrap();
        assert!(r.max_abs() < 1e-14);
    }

    #[test]
    fn zero_data_maps_to_zero() {
        let g = unit(17);
        let gamma = GammaSpec::new(&g, 1.0, 2.0).unwrap();
        let spec = zero_forcing_spec(
            params(),
            VectorTrace::zeros(g),
            ScalarTrace::zeros(g),
            ScalarTrace::constant(g, 1.0),
            Some(gamma),
        );
        // zero inflow cannot be strict inflow
        assert!(matches!(
            IterationData::new(spec.clone()),
            Err(Error::GammaNotInflow { .. })
        ));
        let data = IterationData::new(ProblemSpec { gamma: None, ..spec }).unwrap();
        let s = apply_a(&ScalarField::zeros(g), &data, 1.0).unwrap();
        assert_eq!(s.u.max_abs(), 0.0);
        assert_eq!(s.chi.max_abs(), 0.0);
        assert_eq!(s.w.max_abs(), 0.0);
    }

    #[test]
    fn inflow_without_gamma_is_rejected() {
        let g = unit(17);
        let spec = zero_forcing_spec(
            params(),
            VectorTrace::from_fn(g, |_, y| [-6.0 * y * (1.0 - y), 0.0]),
            ScalarTrace::zeros(g),
            ScalarTrace::constant(g, 1.0),
            None,
        );
        assert!(IterationData::new(spec).is_err());
    }

    #[test]
    fn lambda_zero_and_homotopy_linearity() {
        let data = duct_data(17, None);
        let g = *data.grid();
        let chi = ScalarField::from_fn(g, |x, y| 0.01 * (x * (1.0 - x) * y * (1.0 - y)).powi(2));
        let s0 = apply_a(&chi, &data, 0.0).unwrap();
        assert_eq!(s0.u.max_abs(), 0.0);
        let s1 = apply_a(&chi, &data, 1.0).unwrap();
        let sl = apply_a(&chi, &data, 0.37).unwrap();
        assert_eq!(sl.chi.values(), s1.chi.scaled(0.37).values());
    }

    #[test]
    fn outputs_are_solenoidal_with_zero_trace() {
        let data = duct_data(17, Some(VectorField::from_fn(unit(17), |x, y| [y.sin(), x * y])));
        let g = *data.grid();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..3 {
            let mut chi = ScalarField::zeros(g);
            for (i, j) in g.interior() {
                chi.set(i, j, 0.05 * rng.gen_range(-1.0..1.0));
            }
            for lambda in [0.3, 1.0] {
                let s = apply_a(&chi, &data, lambda).unwrap();
                let scale = s.u.max_abs().max(data.hopf.a.max_abs()) / g.h();
                assert!(max_interior_div(&s.u) <= 1e-13 * scale);
                for (i, j) in g.nodes() {
                    if g.is_boundary(i, j) {
                        assert_eq!(s.u.at(i, j), [0.0, 0.0]);
                    }
                }
                let v = data.total_velocity(&s.chi).unwrap();
                assert!(max_interior_div(&v) <= 1e-12 * v.max_abs() / g.h());
            }
        }
    }

    #[test]
    fn biharmonic_reproduces_polynomial_stream() {
        // χ = y²(3 − 2y): Δ²χ = 0, so zero curl forcing must return it.
        let data = duct_data(17, None);
        let g = *data.grid();
        let exact = ScalarField::from_fn(g, |_, y| y * y * (3.0 - 2.0 * y));
        let chi = data.biharmonic.solve(&VectorField::zeros(g)).unwrap();
        let shift = exact.at(g.nx() - 1, 1);
        let dev = g
            .nodes()
            .map(|(i, j)| (chi.at(i, j) - (exact.at(i, j) - shift)).abs())
            .fold(0.0, f64::max);
        assert!(dev < 3.0 * g.h() * g.h(), "{dev}");
    }

    #[test]
    fn pressure_examples() {
        let g = unit(17);
        let p = params();
        let z = VectorField::zeros(g);
        let zw = ScalarField::zeros(g);
        let one = ScalarField::constant(g, 1.0);
        let r = recover_pressure(&z, &zw, &one, &z, &p).unwrap();
        assert!(r.p.max_abs() < 1e-14);

        let f = VectorField::constant(g, [1.0, 0.0]);
        let r = recover_pressure(&z, &zw, &one, &f, &p).unwrap();
        for (i, j) in g.nodes() {
            assert!((r.p.at(i, j) - (g.x(i) - 0.5)).abs() < 1e-11);
        }
        assert!(r.p.mean().abs() < 1e-12);
        assert!(r.momentum_residual < 1e-11);
    }

    #[test]
    fn pressure_of_a_gradient_force_converges() {
        let pi = std::f64::consts::PI;
        let mut errs = vec![];
        // corner rows keep the coarsest grids pre-asymptotic
        for n in [33, 65, 129] {
            let g = unit(n);
            let exact = ScalarField::from_fn(g, |x, y| (pi * x).cos() * (pi * y).cos());
            let f = VectorField::from_fn(g, |x, y| {
                [
                    -pi * (pi * x).sin() * (pi * y).cos(),
                    -pi * (pi * x).cos() * (pi * y).sin(),
                ]
            });
            let r = recover_pressure(
                &VectorField::zeros(g),
                &ScalarField::zeros(g),
                &ScalarField::constant(g, 1.0),
                &f,
                &params(),
            )
            .unwrap();
            let e = r.p.sub(&exact.map(|q| q - exact.mean())).unwrap();
            errs.push(e.norm(NormKind::L2));
        }
        for w in errs.windows(2) {
            assert!((w[0] / w[1]).log2() >= 1.5, "{errs:?}");
        }
    }

    #[test]
    fn velocity_round_trip() {
        let data = duct_data(17, None);
        let g = *data.grid();
        let chi = ScalarField::from_fn(g, |x, y| (x * (1.0 - x) * y * (1.0 - y)).powi(2));
        let u = data.shift_velocity(&chi).unwrap();
        let pg = perp_grad(&chi);
        for (i, j) in g.interior() {
            assert_eq!(u.at(i, j), pg.at(i, j));
        }
    }
}
