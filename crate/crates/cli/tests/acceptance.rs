//! Acceptance suite: drives the `micropolar` binary on the duct case and
//! checks the ten release criteria from the artifacts it writes. Prints one
//! PASS/FAIL line per criterion and exits non-zero if any fails.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::Instant;

use micropolar::fields::{div, interior_l2, max_interior_div, GridField, NormKind};
use micropolar::io::{read_scalar_csv, read_vector_csv};

const GRIDS: [usize; 3] = [33, 65, 129];
const STUDY_BUDGET_SECONDS: f64 = 180.0;

struct Run {
    code: i32,
    stderr: String,
}

fn micropolar(args: &[&str]) -> Run {
    let out = Command::new(env!("CARGO_BIN_EXE_micropolar"))
        .args(args)
        .env_remove("MICROPOLAR_SEED")
        .output()
        .expect("spawn micropolar");
    Run {
        code: out.status.code().unwrap_or(-1),
        stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
    }
}

fn duct_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/duct.ini")
}

fn report(dir: &Path) -> HashMap<String, String> {
    fs::read_to_string(dir.join("report.txt"))
        .unwrap_or_default()
        .lines()
        .filter_map(|l| l.split_once(" = "))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

fn num(r: &HashMap<String, String>, key: &str) -> f64 {
    r.get(key).and_then(|v| v.parse().ok()).unwrap_or(f64::NAN)
}

fn order(coarse: f64, fine: f64) -> f64 {
    (coarse / fine).log2()
}

struct Criteria {
    lines: Vec<(usize, bool, String)>,
}

impl Criteria {
    fn record(&mut self, id: usize, pass: bool, detail: String) {
        println!("{} criterion {id}: {detail}", if pass { "PASS" } else { "FAIL" });
        self.lines.push((id, pass, detail));
    }
}

struct Solved {
    dir: PathBuf,
    code: i32,
    report: HashMap<String, String>,
}

fn solve(root: &Path, tag: &str, n: usize, extra: &[&str]) -> Solved {
    let dir = root.join(tag);
    let cfg = duct_config();
    let grid = n.to_string();
    let mut args = vec![
        "solve",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.to_str().unwrap(),
        "--grid",
        &grid,
        "--quiet",
    ];
    args.extend_from_slice(extra);
    let run = micropolar(&args);
    if run.code != 0 {
        eprintln!("solve {tag} exited {}: {}", run.code, run.stderr);
    }
    Solved { code: run.code, report: report(&dir), dir }
}

fn main() -> ExitCode {
    let tmp = tempfile::tempdir().expect("temp dir");
    let root = tmp.path();
    let mut c = Criteria { lines: Vec::new() };

    // Grid-refinement study through the CLI.
    let study_dir = root.join("study");
    let t0 = Instant::now();
    let study = micropolar(&["verify-mms", "--case", "duct", "--grid", "129", "--out", study_dir.to_str().unwrap(), "--quiet"]);
    let study_secs = t0.elapsed().as_secs_f64();
    let table = fs::read_to_string(study_dir.join("convergence.csv")).unwrap_or_default();
    let mut orders: Vec<(String, f64)> = Vec::new();
    for line in table.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() == 4 && !cols[3].is_empty() {
            orders.push((cols[1].to_string(), cols[3].parse().unwrap_or(f64::NAN)));
        }
    }
    let in_band = orders.len() == 8
        && orders.iter().all(|(f, o)| {
            let lo = if f == "p" { 1.4 } else { 1.7 };
            *o >= lo && *o <= 2.3
        });
    c.record(
        1,
        study.code == 0 && in_band && study_secs <= STUDY_BUDGET_SECONDS,
        format!(
            "duct study 33/65/129 exit {}, orders [{}], {:.1} s (budget {STUDY_BUDGET_SECONDS} s)",
            study.code,
            orders.iter().map(|(f, o)| format!("{f} {o:.3}")).collect::<Vec<_>>().join(", "),
            study_secs
        ),
    );

    let runs: Vec<Solved> = GRIDS.iter().map(|&n| solve(root, &format!("duct{n}"), n, &[])).collect();
    let all_ok = runs.iter().all(|r| r.code == 0);

    // 2: the report tracks every iterate; the final field is rechecked here.
    let mut worst_iterate = 0.0f64;
    let mut worst_final = 0.0f64;
    for r in &runs {
        worst_iterate = worst_iterate.max(num(&r.report, "max_scaled_divergence"));
        match read_vector_csv(&r.dir.join("v.csv")) {
            Ok(v) => {
                let scale = v.max_abs() / v.grid().h();
                worst_final = worst_final.max(max_interior_div(&v) / scale);
            }
            Err(_) => worst_final = f64::NAN,
        }
    }
    c.record(
        2,
        all_ok && worst_iterate <= 1e-12 && worst_final <= 1e-12,
        format!("max |div_h v| h/max|v|: iterates {worst_iterate:.2e}, final fields {worst_final:.2e} (limit 1e-12)"),
    );

    // 3: density on the inflow wall x = 1 against the prescribed ρ₀ = 1 + ψ*/2,
    // and refinement of the discrete continuity residual.
    let mut density_ok = all_ok;
    let mut worst_ratio = 0.0f64;
    let mut continuity = Vec::new();
    for r in &runs {
        let (Ok(rho), Ok(psi), Ok(v)) = (
            read_scalar_csv(&r.dir.join("rho.csv")),
            read_scalar_csv(&r.dir.join("psi.csv")),
            read_vector_csv(&r.dir.join("v.csv")),
        ) else {
            density_ok = false;
            continue;
        };
        let g = *rho.grid();
        let bound = 5.0 * g.h() * g.h() * num(&r.report, "eta_lipschitz") * psi.max_abs();
        for j in 0..g.ny() {
            let y = g.y(j);
            let rho0 = 1.0 + 0.5 * y * y * (3.0 - 2.0 * y);
            let dev = (rho.at(g.nx() - 1, j) - rho0).abs();
            worst_ratio = worst_ratio.max(dev / bound);
            density_ok &= dev <= bound;
        }
        continuity.push(interior_l2(&div(&v.times(&rho).expect("same grid"))));
    }
    let cont_orders: Vec<f64> = continuity.windows(2).map(|w| order(w[0], w[1])).collect();
    c.record(
        3,
        density_ok && cont_orders.len() == 2 && cont_orders.iter().all(|o| *o >= 1.0),
        format!(
            "inflow density deviation at most {worst_ratio:.2e} of the bound; div(rho v) residual {:?}, orders {:?} (min 1)",
            continuity.iter().map(|x| format!("{x:.2e}")).collect::<Vec<_>>(),
            cont_orders.iter().map(|o| format!("{o:.2}")).collect::<Vec<_>>()
        ),
    );

    let red_dir = root.join("reduction");
    let red = micropolar(&["reduction", "--grid", "33", "--out", red_dir.to_str().unwrap(), "--quiet"]);
    let red_text = fs::read_to_string(red_dir.join("reduction.txt")).unwrap_or_default();
    let passes = red_text.lines().filter(|l| l.starts_with("PASS")).count();
    c.record(
        4,
        red.code == 0 && passes == 3 && !red_text.contains("FAIL"),
        format!("reduction suite exit {}, {passes}/3 checks pass", red.code),
    );

    let weak = |r: &Solved| num(&r.report, "weak_momentum_max").max(num(&r.report, "weak_angular_max"));
    let (w32, w64) = (weak(&runs[0]), weak(&runs[1]));
    let tests_ok = runs[..2].iter().all(|r| num(&r.report, "weak_tests") == 20.0);
    c.record(
        5,
        all_ok && tests_ok && w32 / w64 >= 3.0,
        format!("weak-identity gap {w32:.3e} (h=1/32) -> {w64:.3e} (h=1/64), factor {:.2} (min 3)", w32 / w64),
    );

    let homotopy = solve(root, "duct65_lambda", 65, &["--lambda-steps", "4"]);
    let mut margins: Vec<(String, f64)> = runs
        .iter()
        .chain(std::iter::once(&homotopy))
        .filter(|r| r.code == 0)
        .map(|r| (format!("solve {}", r.dir.file_name().unwrap().to_string_lossy()), num(&r.report, "estimate_margin")))
        .collect();
    let details = fs::read_to_string(study_dir.join("study_details.csv")).unwrap_or_default();
    let mut lines = details.lines();
    let header: Vec<&str> = lines.next().unwrap_or("").split(',').collect();
    if let Some(col) = header.iter().position(|h| *h == "estimate_margin") {
        for l in lines {
            let cols: Vec<&str> = l.split(',').collect();
            margins.push((format!("study {}", cols[0]), cols[col].parse().unwrap_or(f64::NAN)));
        }
    }
    let min_margin = margins.iter().map(|m| m.1).fold(f64::INFINITY, f64::min);
    c.record(
        6,
        margins.len() == 7 && margins.iter().all(|m| m.1 >= 0.0),
        format!("energy estimate margin >= 0 on {} converged runs, smallest {min_margin:.4}", margins.len()),
    );

    let direct = &runs[1];
    let h1_gap = |name: &str| -> f64 {
        if name == "v" {
            match (read_vector_csv(&direct.dir.join("v.csv")), read_vector_csv(&homotopy.dir.join("v.csv"))) {
                (Ok(a), Ok(b)) => a.sub(&b).map_or(f64::NAN, |d| d.norm(NormKind::H1)),
                _ => f64::NAN,
            }
        } else {
            match (read_scalar_csv(&direct.dir.join("w.csv")), read_scalar_csv(&homotopy.dir.join("w.csv"))) {
                (Ok(a), Ok(b)) => a.sub(&b).map_or(f64::NAN, |d| d.norm(NormKind::H1)),
                _ => f64::NAN,
            }
        }
    };
    let (dv, dw) = (h1_gap("v"), h1_gap("w"));
    c.record(
        7,
        homotopy.code == 0 && direct.code == 0 && dv <= 1e-6 && dw <= 1e-6,
        format!("lambda schedule 0.25..1 vs direct on 65: |dv|_H1 = {dv:.2e}, |dw|_H1 = {dw:.2e} (limit 1e-6)"),
    );

    let mom: Vec<f64> = runs.iter().map(|r| num(&r.report, "momentum_residual")).collect();
    let mom_orders: Vec<f64> = mom.windows(2).map(|w| order(w[0], w[1])).collect();
    c.record(
        8,
        all_ok && mom_orders.iter().all(|o| *o >= 1.4),
        format!(
            "momentum residual with recovered p {:?}, orders {:?} (min 1.4)",
            mom.iter().map(|x| format!("{x:.3e}")).collect::<Vec<_>>(),
            mom_orders.iter().map(|o| format!("{o:.2}")).collect::<Vec<_>>()
        ),
    );

    let low_mu = root.join("low_mu.ini");
    let text = fs::read_to_string(duct_config()).expect("shipped config");
    fs::write(&low_mu, text.replace("mu = 1\n", "mu = 1e-4\n")).expect("write config");
    let fail_dir = root.join("low_mu");
    let failed = micropolar(&["solve", "--config", low_mu.to_str().unwrap(), "--out", fail_dir.to_str().unwrap(), "--grid", "33", "--quiet"]);
    let fr = report(&fail_dir);
    let status = fr.get("status").cloned().unwrap_or_default();
    c.record(
        9,
        failed.code == 2 && status == "diverged" && !failed.stderr.contains("panicked") && fail_dir.join("v.csv").is_file(),
        format!("mu = 1e-4 exit {}, report status '{status}'", failed.code),
    );

    let a = solve(root, "repeat_a", 33, &["--seed", "7"]);
    let b = solve(root, "repeat_b", 33, &["--seed", "7"]);
    let mut compared = 0;
    let mut identical = a.code == 0 && b.code == 0;
    for entry in fs::read_dir(&a.dir).into_iter().flatten().flatten() {
        let name = entry.file_name();
        let is_artifact = name.to_string_lossy().ends_with(".csv") || name == "report.txt";
        if !is_artifact {
            continue;
        }
        compared += 1;
        identical &= fs::read(entry.path()).ok() == fs::read(b.dir.join(&name)).ok();
    }
    c.record(
        10,
        identical && compared >= 6,
        format!("two identical invocations: {compared} artifacts compared, byte-identical = {identical}"),
    );

    let failed: Vec<usize> = c.lines.iter().filter(|l| !l.1).map(|l| l.0).collect();
    if failed.is_empty() {
        println!("acceptance: all 10 criteria pass");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: failed criteria {failed:?}");
        ExitCode::FAILURE
    }
}
