//! Command-line front end.
//!
//! Exit codes: 0 success, 2 the run finished without converging (artifacts
//! are still written), 1 configuration or I/O failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use log::{info, warn};

use micropolar::io::{
    self, format_report, history_csv, reduction_text, study_details_csv, write_atomic, write_field,
    Emit, FieldRef, RunConfig,
};
use micropolar::picard::solve;
use micropolar::verify::{build_mms_case, convergence_study, reduction_tests, StudyOptions, REDUCTION_GRID};
use micropolar::SolverOptions;

const SEED_VAR: &str = "MICROPOLAR_SEED";

#[derive(Parser, Debug)]
#[command(name = "micropolar", version, about = "Steady nonhomogeneous micropolar flow in a rectangle")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve the configured problem and write fields and a report.
    Solve(Common),
    /// Run a grid-refinement study on a manufactured solution.
    VerifyMms {
        /// Manufactured case (duct, linear, zero).
        #[arg(long, default_value = "duct")]
        case: String,
        #[command(flatten)]
        common: Common,
    },
    /// Run the model-reduction checks.
    Reduction(Common),
    /// Validate a config and write its effective form.
    CheckConfig(Common),
}

#[derive(Args, Debug, Clone, Default)]
struct Common {
    /// Run configuration (INI).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; overrides [output] dir.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Nodes along x (y follows the aspect ratio). For verify-mms, the finest grid.
    #[arg(long)]
    grid: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    /// Continuation steps λ = 1/K, 2/K, ..., 1.
    #[arg(long)]
    lambda_steps: Option<usize>,
    #[arg(long, value_parser = ["csv", "vtk", "both"])]
    emit: Option<String>,
    /// Seed of the weak-identity audit and of the layer-smallness panel;
    /// overrides MICROPOLAR_SEED.
    #[arg(long)]
    seed: Option<u64>,
    /// Only warnings and errors on stderr, nothing on stdout.
    #[arg(long)]
    quiet: bool,
}

impl Common {
    fn seed(&self) -> anyhow::Result<Option<u64>> {
        if let Some(s) = self.seed {
            return Ok(Some(s));
        }
        match std::env::var(SEED_VAR) {
            Ok(v) => v
                .trim()
                .parse()
                .map(Some)
                .with_context(|| format!("{SEED_VAR} must be an unsigned integer, got '{v}'")),
            Err(_) => Ok(None),
        }
    }

    fn apply_solver(&self, o: &mut SolverOptions) -> anyhow::Result<()> {
        if let Some(t) = self.tol {
            o.tol = t;
        }
        if let Some(m) = self.max_iter {
            o.max_iter = m;
        }
        if let Some(k) = self.lambda_steps {
            if k == 0 {
                bail!("--lambda-steps must be at least 1");
            }
            o.lambda_schedule = SolverOptions::lambda_steps(k);
        }
        if let Some(s) = self.seed()? {
            o.audit_seed = s;
        }
        Ok(())
    }

    fn load(&self) -> anyhow::Result<RunConfig> {
        let path = self.config.as_deref().context("--config is required")?;
        let mut cfg = io::read_config(path)?;
        if let Some(n) = self.grid {
            cfg.set_resolution(n);
        }
        self.apply_solver(&mut cfg.solver)?;
        if let Some(s) = self.seed()? {
            cfg.panel_seed = s;
        }
        if let Some(e) = &self.emit {
            cfg.emit = Emit::parse(e).expect("restricted by clap");
        }
        if let Some(o) = &self.out {
            cfg.out_dir = o.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn out_dir(&self, default: &str) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from(default))
    }
}

/// Exit status of a finished command.
enum Outcome {
    Done,
    NotConverged,
}

fn say(quiet: bool, text: &str) {
    if !quiet {
        print!("{text}");
    }
}

fn write_echo(cfg: &RunConfig, dir: &Path) -> anyhow::Result<()> {
    write_atomic(&dir.join("effective_config.ini"), &cfg.echo())?;
    Ok(())
}

fn run_solve(c: &Common) -> anyhow::Result<Outcome> {
    let cfg = c.load()?;
    let dir = cfg.out_dir.clone();
    write_echo(&cfg, &dir)?;
    info!("solving on a {}x{} grid", cfg.nx, cfg.ny);
    let start = Instant::now();
    let sol = solve(cfg.to_problem()?, &cfg.solver)?;
    info!("solve finished in {:.2} s", start.elapsed().as_secs_f64());

    let st = &sol.state;
    let mut fields = vec![
        ("v", FieldRef::Vector(&st.v)),
        ("w", FieldRef::Scalar(&st.w_total)),
        ("psi", FieldRef::Scalar(&st.psi)),
        ("rho", FieldRef::Scalar(&st.rho)),
    ];
    if let Some(p) = &sol.pressure {
        fields.push(("p", FieldRef::Scalar(&p.p)));
    } else {
        warn!("no pressure: the iteration did not converge");
    }
    for format in cfg.emit.formats() {
        for (name, field) in &fields {
            write_field(*field, name, *format, &dir.join(format!("{name}.{}", format.extension())))?;
        }
    }
    let report = format_report(&sol);
    write_atomic(&dir.join("report.txt"), &report)?;
    write_atomic(&dir.join("residuals.csv"), &history_csv(&sol.report.residual_history))?;
    say(c.quiet, &report);
    Ok(if sol.report.converged() { Outcome::Done } else { Outcome::NotConverged })
}

fn run_verify(case: &str, c: &Common) -> anyhow::Result<Outcome> {
    let mms = build_mms_case(case)?;
    let mut opts = StudyOptions::standard();
    if c.config.is_some() {
        let cfg = c.load()?;
        opts.params = cfg.fluid;
        opts.solver = cfg.solver;
        opts.eps = cfg.eps;
        opts.panel_seed = cfg.panel_seed;
    } else {
        c.apply_solver(&mut opts.solver)?;
        if let Some(s) = c.seed()? {
            opts.panel_seed = s;
        }
    }
    let n = c.grid.unwrap_or(65);
    if n < 17 || !(n - 1).is_multiple_of(4) {
        bail!("--grid must be 4k+1 with k >= 4 so the study has three nested grids, got {n}");
    }
    let grids = [(n - 1) / 4 + 1, (n - 1) / 2 + 1, n];
    let dir = c.out_dir("out");
    let start = Instant::now();
    let table = convergence_study(&mms, &grids, &opts)?;
    info!("study finished in {:.2} s", start.elapsed().as_secs_f64());
    let (pass, verdict) = table.verdict();
    write_atomic(&dir.join("convergence.csv"), &table.to_csv())?;
    write_atomic(&dir.join("study_details.csv"), &study_details_csv(&table))?;
    write_atomic(&dir.join("verdict.txt"), &verdict)?;
    say(c.quiet, &table.to_csv());
    say(c.quiet, &verdict);
    let converged = table.rows.iter().all(|r| r.note.is_none());
    Ok(if pass && converged { Outcome::Done } else { Outcome::NotConverged })
}

fn run_reduction(c: &Common) -> anyhow::Result<Outcome> {
    let mut opts = SolverOptions::default();
    c.apply_solver(&mut opts)?;
    opts.validate()?;
    let n = c.grid.unwrap_or(REDUCTION_GRID);
    let out = reduction_tests(&opts, n);
    let text = reduction_text(&out);
    write_atomic(&c.out_dir("out").join("reduction.txt"), &text)?;
    say(c.quiet, &text);
    Ok(if out.iter().all(|o| o.passed) { Outcome::Done } else { Outcome::NotConverged })
}

fn run_check(c: &Common) -> anyhow::Result<Outcome> {
    let cfg = c.load()?;
    write_echo(&cfg, &cfg.out_dir)?;
    say(c.quiet, &cfg.echo());
    Ok(Outcome::Done)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let quiet = match &cli.command {
        Command::Solve(c) | Command::Reduction(c) | Command::CheckConfig(c) => c.quiet,
        Command::VerifyMms { common, .. } => common.quiet,
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(if quiet { "warn" } else { "info" }))
        .format_timestamp(None)
        .init();
    let result = match &cli.command {
        Command::Solve(c) => run_solve(c),
        Command::VerifyMms { case, common } => run_verify(case, common),
        Command::Reduction(c) => run_reduction(c),
        Command::CheckConfig(c) => run_check(c),
    };
    match result {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::NotConverged) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
