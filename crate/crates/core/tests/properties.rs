use micropolar::boundary::{boundary_stream, build_density_law, GammaSpec, ScalarTrace, VectorTrace};
use micropolar::io::{field_csv, parse_config_str, read_scalar_csv, read_vector_csv, write_field, FieldRef, Format};
use micropolar::{GridSpec, ScalarField, VectorField};
use proptest::prelude::*;
use std::path::Path;

const H: f64 = 1.0 / 16.0;

fn rect(nx: usize, ny: usize) -> GridSpec {
    GridSpec::new(nx, ny, (nx - 1) as f64 * H, (ny - 1) as f64 * H).unwrap()
}

fn finite() -> impl Strategy<Value = f64> {
    prop::num::f64::NORMAL | prop::num::f64::SUBNORMAL | prop::num::f64::ZERO | prop::num::f64::NEGATIVE
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    // For a quadratic stream function the trace is integrated exactly, so
    // the boundary stream function is the stream function itself.
    #[test]
    fn boundary_stream_recovers_quadratic(
        nx in 5usize..30, ny in 5usize..30,
        c in prop::array::uniform5(-3.0f64..3.0),
        s0 in 0.0f64..1.0,
    ) {
        let g = rect(nx, ny);
        let psi = |x: f64, y: f64| c[0] * x + c[1] * y + c[2] * x * x + c[3] * x * y + c[4] * y * y;
        let v0 = VectorTrace::from_fn(g, |x, y| {
            [-(c[1] + c[3] * x + 2.0 * c[4] * y), c[0] + 2.0 * c[2] * x + c[3] * y]
        });
        let perim = 2.0 * (g.lx() + g.ly());
        let gamma = GammaSpec::new(&g, s0 * perim * 0.5, s0 * perim * 0.5 + 3.0 * H).unwrap();
        let phi = boundary_stream(&v0, &gamma).unwrap();
        let l = phi.boundary_loop();
        let (ai, aj) = l.node(gamma.anchor_index);
        let base = psi(g.x(ai), g.y(aj));
        let scale = 1.0 + 6.0 * c.iter().fold(0.0f64, |m, v| m.max(v.abs())) * (g.lx() + g.ly()).powi(2);
        for k in 0..l.len() {
            let (i, j) = l.node(k);
            let want = psi(g.x(i), g.y(j)) - base;
            prop_assert!((phi.value(k) - want).abs() <= 1e-12 * scale, "node {}: {} vs {}", k, phi.value(k), want);
        }
        prop_assert_eq!(phi.value(gamma.anchor_index), 0.0);
    }

    // The density law reproduces the inflow density at every Γ node and
    // never leaves the range of the data.
    #[test]
    fn density_law_matches_inflow_data(
        amp in 0.2f64..3.0,
        a in 0.0f64..0.9, k in 0.5f64..8.0,
        probes in prop::collection::vec(-5.0f64..5.0, 16),
    ) {
        let g = GridSpec::unit_square(33).unwrap();
        let v0 = VectorTrace::from_fn(g, |_, y| [-6.0 * amp * y * (1.0 - y), 0.0]);
        let rho0 = ScalarTrace::from_fn(g, |x, y| 1.0 + a * (k * y + x).sin());
        let gamma = GammaSpec::new(&g, 1.0, 2.0).unwrap();
        gamma.check_strict_inflow(&v0, 1e-10).unwrap();
        let phi = boundary_stream(&v0, &gamma).unwrap();
        let law = build_density_law(&rho0, &phi, &gamma).unwrap();
        for &n in gamma.nodes() {
            prop_assert!((law.eval(phi.value(n)) - rho0.value(n)).abs() <= 1e-14);
        }
        let lo = gamma.nodes().iter().map(|&n| rho0.value(n)).fold(f64::INFINITY, f64::min);
        let hi = gamma.nodes().iter().map(|&n| rho0.value(n)).fold(0.0, f64::max);
        for y in probes {
            let r = law.eval(amp * y);
            prop_assert!(r >= lo && r <= hi);
        }
    }

    #[test]
    fn csv_round_trip_bit_exact(nx in 5usize..12, ny in 5usize..12, seed in prop::collection::vec(finite(), 288)) {
        let g = rect(nx, ny);
        let n = g.len();
        let s = ScalarField::from_values(g, seed[..n].to_vec()).unwrap();
        let v = VectorField::from_components(g, seed[n..2 * n].to_vec(), seed[144..144 + n].to_vec()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let (ps, pv) = (dir.path().join("s.csv"), dir.path().join("v.csv"));
        write_field(FieldRef::Scalar(&s), "s", Format::Csv, &ps).unwrap();
        write_field(FieldRef::Vector(&v), "v", Format::Csv, &pv).unwrap();
        let (s2, v2) = (read_scalar_csv(&ps).unwrap(), read_vector_csv(&pv).unwrap());
        let bits = |x: &[f64]| x.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(s2.values()), bits(s.values()));
        prop_assert_eq!(bits(v2.vx()), bits(v.vx()));
        prop_assert_eq!(bits(v2.vy()), bits(v.vy()));
        // writing the re-read field reproduces the file byte for byte
        prop_assert_eq!(field_csv(FieldRef::Scalar(&s2)), std::fs::read_to_string(&ps).unwrap());
    }

    #[test]
    fn effective_config_echo_round_trips(
        mu in 1e-3f64..10.0, mu_r in 0.0f64..1.0, c_a in 1e-3f64..5.0, c_d in 1e-3f64..5.0,
        tol in 1e-14f64..1e-4, max_iter in 1usize..1000, seed in any::<u64>(), steps in 1usize..6,
        nx in 9usize..200,
    ) {
        let text = format!(
            "[grid]\nnx = {nx}\nlx = 2\n[fluid]\nmu = {mu}\nmu_r = {mu_r}\nc_a = {c_a}\nc_d = {c_d}\n\
             [bc]\ngamma = 5, 6\nv0 = parabolic:0,1,1\n[solver]\ntol = {tol}\nmax_iter = {max_iter}\n\
             lambda_steps = {steps}\naudit_seed = {seed}\n[output]\nemit = both\n"
        );
        let c = parse_config_str(&text, Path::new(".")).unwrap();
        let back = parse_config_str(&c.echo(), Path::new(".")).unwrap();
        prop_assert_eq!(back, c);
    }
}
