//! Stream function of a discretely solenoidal velocity and the density
//! `ρ = η(ψ)` carried along its level lines.

use crate::boundary::{boundary_stream, boundary_stream_from, DensityLaw, GammaSpec, VectorTrace};
use crate::error::{Error, Result};
use crate::fields::{div, interior_l2, max_interior_div, perp_grad, ScalarField, VectorField};
use crate::linalg::{solve_linear, SolveMethod, SparseBuilder};

/// Divergence tolerance for inputs, relative to the `max|v|/h` scale.
pub const DIV_TOLERANCE: f64 = 1e-10;

/// Nodes and weights (times `2h`) of the first-derivative stencil at
/// position `k` on an axis with `n` nodes.
pub(crate) fn first_derivative_stencil(k: usize, n: usize) -> [(usize, f64); 3] {
    if k == 0 {
        [(0, -3.0), (1, 4.0), (2, -1.0)]
    } else if k == n - 1 {
        [(k, 3.0), (k - 1, -4.0), (k - 2, 1.0)]
    } else {
        [(k + 1, 1.0), (k - 1, -1.0), (k, 0.0)]
    }
}

/// Stream function of `v`, equal to the anchored boundary stream function of
/// `v_trace` on the boundary (zero at the first Γ node, or at loop node 0
/// when no Γ is given). Interior values minimize `‖∇⊥ψ − v‖` over all nodes
/// in the trapezoid-weighted discrete L2 norm, so `stream_of` is an exact
/// left inverse of the discrete `perp_grad`.
pub fn stream_of(
    v: &VectorField,
    v_trace: &VectorTrace,
    gamma: Option<&GammaSpec>,
) -> Result<ScalarField> {
    let grid = *v.grid();
    grid.check_same(v_trace.grid())?;
    let h = grid.h();
    let max_div = max_interior_div(v);
    let tol = DIV_TOLERANCE * (1.0 + v.max_abs() / h);
    if max_div > tol {
        return Err(Error::NotDivergenceFree(max_div));
    }
    let phi_b = match gamma {
        Some(gm) => boundary_stream(v_trace, gm)?,
        None => boundary_stream_from(v_trace, 0)?,
    };
    let mut psi = phi_b.to_field();
    let n = grid.interior_len();
    if n == 0 {
        return Ok(psi);
    }

    // Rows of G: (−∂y ψ, ∂x ψ) at every node; interior columns are unknown,
    // boundary columns are known and move to the right-hand side.
    let (nx, ny) = (grid.nx(), grid.ny());
    let mut normal = SparseBuilder::new(n);
    let mut rhs = vec![0.0; n];
    let scale = 1.0 / (2.0 * h);
    let mut row: Vec<(usize, f64)> = Vec::with_capacity(3);
    for (i, j) in grid.nodes() {
        let w = grid.weight(i, j);
        let [vx, vy] = v.at(i, j);
        for comp in 0..2 {
            row.clear();
            let mut target = if comp == 0 { vx } else { vy };
            let stencil: Vec<((usize, usize), f64)> = if comp == 0 {
                first_derivative_stencil(j, ny)
                    .iter()
                    .map(|&(jj, c)| ((i, jj), -c * scale))
                    .collect()
            } else {
                first_derivative_stencil(i, nx)
                    .iter()
                    .map(|&(ii, c)| ((ii, j), c * scale))
                    .collect()
            };
            for ((ii, jj), c) in stencil {
                if c == 0.0 {
                    continue;
                }
                if grid.is_boundary(ii, jj) {
                    target -= c * psi.at(ii, jj);
                } else {
                    row.push((grid.interior_idx(ii, jj), c));
                }
            }
            for &(p, cp) in &row {
                rhs[p] += w * cp * target;
                for &(q, cq) in &row {
                    normal.add(p, q, w * cp * cq);
                }
            }
        }
    }
    let a = normal.build()?;
    let method = match SolveMethod::auto(n) {
        SolveMethod::Direct => SolveMethod::Direct,
        _ => SolveMethod::Cg,
    };
    let (x, rep) = solve_linear(&a, &rhs, method, 1e-13, 50 * n)?;
    if !rep.converged {
        return Err(Error::LinearSolveFailed(format!(
            "stream function: {} stopped at residual {:e}",
            rep.method, rep.residual
        )));
    }
    for (i, j) in grid.interior() {
        psi.set(i, j, x[grid.interior_idx(i, j)]);
    }
    Ok(psi)
}

/// Pointwise `ρ = η(ψ)`.
pub fn density_of(psi: &ScalarField, law: &DensityLaw) -> ScalarField {
    psi.map(|y| law.eval(y))
}

/// Interior L2 norm of `div(η(ψ)·∇⊥ψ)`, the discrete mass-transport residual.
pub fn continuity_residual(psi: &ScalarField, law: &DensityLaw) -> Result<f64> {
    let rho = density_of(psi, law);
    let m = perp_grad(psi).times(&rho)?;
    Ok(interior_l2(&div(&m)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{GridField, GridSpec, NormKind};
    use proptest::prelude::*;

    fn unit(n: usize) -> GridSpec {
        GridSpec::unit_square(n).unwrap()
    }

    #[test]
    fn zero_velocity_has_zero_stream() {
        let g = unit(9);
        let gamma = GammaSpec::new(&g, 1.0, 2.0).unwrap();
        let v = VectorField::zeros(g);
        let psi = stream_of(&v, &VectorTrace::zeros(g), Some(&gamma)).unwrap();
        assert_eq!(psi.max_abs(), 0.0);
    }

    #[test]
    fn rejects_divergent_input() {
        let g = unit(9);
        let v = VectorField::from_fn(g, |x, y| [x, y]);
        let err = stream_of(&v, &VectorTrace::from_field(&v), None).unwrap_err();
        assert!(matches!(err, Error::NotDivergenceFree(_)));
        assert!(err.to_string().contains("input not divergence-free"));
    }

    #[test]
    fn discrete_sine_stream_converges_at_second_order() {
        let pi = std::f64::consts::PI;
        let mut errs = vec![];
        for n in [17, 33, 65] {
            let g = unit(n);
            let exact = ScalarField::from_fn(g, |x, y| (pi * x).sin() * (pi * y).sin());
            let v = perp_grad(&exact);
            let psi = stream_of(&v, &VectorTrace::from_field(&v), None).unwrap();
            let e = psi.sub(&exact).unwrap().norm(NormKind::L2);
            errs.push(e);
        }
        for w in errs.windows(2) {
            // zero trace and exact left inverse: errors at roundoff level
            assert!(w[1] < 1e-10, "{errs:?}");
        }
    }

    #[test]
    fn sampled_duct_velocity_matches_analytic_stream() {
        let mut errs = vec![];
        for n in [17, 33, 65] {
            let g = unit(n);
            let gamma = GammaSpec::new(&g, 1.0, 2.0).unwrap();
            let v = VectorField::from_fn(g, |_, y| [-6.0 * y * (1.0 - y), 0.0]);
            let psi = stream_of(&v, &VectorTrace::from_field(&v), Some(&gamma)).unwrap();
            let (ai, aj) = crate::boundary::BoundaryLoop::new(g).node(gamma.anchor_index);
            let _ = ai;
            let y0 = g.y(aj);
            let shift = y0 * y0 * (3.0 - 2.0 * y0);
            let exact = ScalarField::from_fn(g, |_, y| y * y * (3.0 - 2.0 * y) - shift);
            errs.push(psi.sub(&exact).unwrap().norm(NormKind::L2));
        }
        for w in errs.windows(2) {
            let order = (w[0] / w[1]).log2();
            // trapezoid boundary fluxes carry an O(h²) offset
            assert!(order >= 1.8, "errors {errs:?}");
        }
    }

    #[test]
    fn density_examples() {
        let g = unit(9);
        let two = DensityLaw::constant(2.0).unwrap();
        let rho = density_of(&ScalarField::from_fn(g, |x, y| x - y), &two);
        assert!(rho.values().iter().all(|&r| r == 2.0));
        let lin = DensityLaw::new(vec![0.0, 1.0], vec![1.0, 2.0]).unwrap();
        let rho = density_of(&ScalarField::constant(g, 0.5), &lin);
        assert!(rho.values().iter().all(|&r| (r - 1.5).abs() < 1e-15));
    }

    #[test]
    fn density_transport_residual_decreases() {
        let lin = DensityLaw::new(vec![-10.0, 10.0], vec![1.0, 21.0]).unwrap();
        let mut res = vec![];
        for n in [17, 33, 65] {
            let g = unit(n);
            let psi = ScalarField::from_fn(g, |x, y| (2.0 * x).sin() * (1.0 + y * y) - 0.4 * y);
            res.push(continuity_residual(&psi, &lin).unwrap());
        }
        for w in res.windows(2) {
            assert!((w[0] / w[1]).log2() >= 1.0, "{res:?}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn round_trip_recovers_any_discrete_stream(
            n in 5usize..12,
            c in -2.0f64..2.0,
            vals in prop::collection::vec(-1.0f64..1.0, 144)
        ) {
            // boundary values constant, so they match the anchored trace after the shift
            let g = unit(n);
            let gamma = GammaSpec::new(&g, 1.0, 2.0).unwrap();
            let chi = ScalarField::from_fn(g, |_, _| c);
            let mut chi = chi;
            for (i, j) in g.interior() {
                chi.set(i, j, c + vals[g.idx(i, j)]);
            }
            let v = perp_grad(&chi);
            let psi = stream_of(&v, &VectorTrace::from_field(&v), Some(&gamma)).unwrap();
            let expected = chi.map(|x| x - c);
            let dev = psi.sub(&expected).unwrap().max_abs();
            prop_assert!(dev <= 1e-8 * expected.max_abs().max(1e-300), "dev {}", dev);
        }
    }
}
