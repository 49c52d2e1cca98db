//! Run configuration (INI-style), boundary and forcing profiles, field
//! writers and readers, and the key-value report.
//!
//! ```text
//! [grid]
//! nx = 65
//! [fluid]
//! mu = 1
//! mu_r = 0.1
//! c_a = 0.5
//! c_d = 0.5
//! [bc]
//! gamma = 1, 2
//! v0 = mms:duct
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::boundary::{
    check_compatibility, flux_tolerance, GammaSpec, ScalarTrace, VectorTrace, DEFAULT_FLUX_FLOOR,
    DEFAULT_PANEL_SEED,
};
use crate::error::{Error, Result};
use crate::fields::{GridSpec, ScalarField, VectorField};
use crate::microrotation::FluidParams;
use crate::momentum::ProblemSpec;
use crate::picard::{Solution, SolverOptions};
use crate::verify::{build_mms_case, ConvergenceTable, ReductionOutcome};

/// Output formats.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Emit {
    Csv,
    Vtk,
    Both,
}

impl Emit {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "csv" => Some(Emit::Csv),
            "vtk" => Some(Emit::Vtk),
            "both" => Some(Emit::Both),
            _ => None,
        }
    }
    pub fn formats(self) -> &'static [Format] {
        match self {
            Emit::Csv => &[Format::Csv],
            Emit::Vtk => &[Format::Vtk],
            Emit::Both => &[Format::Csv, Format::Vtk],
        }
    }
}

impl std::fmt::Display for Emit {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Emit::Csv => "csv",
            Emit::Vtk => "vtk",
            Emit::Both => "both",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Vtk,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Vtk => "vtk",
        }
    }
}

/// Boundary or forcing data as written in the config.
///
/// * `zero`
/// * `uniform:c` (scalar) or `uniform:a,b` (vector)
/// * `poly:c0,cx,cy,cxx,cxy,cyy`, a quadratic in `x, y` (scalar)
/// * `parabolic:y0,y1,peak`, `(peak·4(y−y0)(y1−y)/(y1−y0)², 0)` on
///   `y0 ≤ y ≤ y1` and zero elsewhere (vector)
/// * `mms:<case>`, the matching field of a manufactured solution
/// * `csv:<path>`, columns `s,value` / `s,vx,vy` for boundary data (resampled
///   by arclength) or `x,y,value` / `x,y,vx,vy` on the grid for forcings
#[derive(Debug, Clone, PartialEq)]
pub enum Profile {
    Zero,
    Uniform(Vec<f64>),
    Poly([f64; 6]),
    Parabolic { y0: f64, y1: f64, peak: f64 },
    Mms(String),
    Csv(PathBuf),
}

impl Profile {
    pub fn parse(s: &str) -> std::result::Result<Self, String> {
        let s = s.trim();
        if s == "zero" {
            return Ok(Profile::Zero);
        }
        let (kind, rest) = s
            .split_once(':')
            .ok_or_else(|| format!("unrecognised profile '{s}'"))?;
        let nums = |n: Option<usize>| -> std::result::Result<Vec<f64>, String> {
            let v = rest
                .split(',')
                .map(|t| t.trim().parse::<f64>().map_err(|_| format!("bad number '{}' in '{s}'", t.trim())))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            if let Some(n) = n {
                if v.len() != n {
                    return Err(format!("'{kind}' takes {n} numbers, got {}", v.len()));
                }
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(format!("non-finite number in '{s}'"));
            }
            Ok(v)
        };
        match kind.trim() {
            "uniform" => {
                let v = nums(None)?;
                if v.is_empty() || v.len() > 2 {
                    return Err("'uniform' takes 1 or 2 numbers".into());
                }
                Ok(Profile::Uniform(v))
            }
            "poly" => {
                let v = nums(Some(6))?;
                Ok(Profile::Poly([v[0], v[1], v[2], v[3], v[4], v[5]]))
            }
            "parabolic" => {
                let v = nums(Some(3))?;
                if !(v[1] > v[0]) {
                    return Err("parabolic needs y0 < y1".into());
                }
                Ok(Profile::Parabolic { y0: v[0], y1: v[1], peak: v[2] })
            }
            "mms" => Ok(Profile::Mms(rest.trim().to_string())),
            "csv" => Ok(Profile::Csv(PathBuf::from(rest.trim()))),
            other => Err(format!("unknown profile kind '{other}'")),
        }
    }

    fn is_vector_capable(&self) -> bool {
        match self {
            Profile::Uniform(v) => v.len() == 2,
            Profile::Poly(_) => false,
            _ => true,
        }
    }

    fn is_scalar_capable(&self) -> bool {
        match self {
            Profile::Uniform(v) => v.len() == 1,
            Profile::Parabolic { .. } => false,
            _ => true,
        }
    }
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl std::fmt::Display for Profile {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Profile::Zero => f.write_str("zero"),
            Profile::Uniform(v) => write!(f, "uniform:{}", join(v)),
            Profile::Poly(c) => write!(f, "poly:{}", join(c)),
            Profile::Parabolic { y0, y1, peak } => write!(f, "parabolic:{y0},{y1},{peak}"),
            Profile::Mms(c) => write!(f, "mms:{c}"),
            Profile::Csv(p) => write!(f, "csv:{}", p.display()),
        }
    }
}

/// Everything a run needs, with defaults filled in.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub nx: usize,
    pub ny: usize,
    pub lx: f64,
    pub ly: f64,
    pub fluid: FluidParams,
    /// Arclength bounds of Γ.
    pub gamma: Option<(f64, f64)>,
    pub v0: Profile,
    pub w0: Profile,
    pub rho0: Profile,
    pub f: Profile,
    pub g: Profile,
    pub solver: SolverOptions,
    pub eps: Option<f64>,
    pub panel_seed: u64,
    pub out_dir: PathBuf,
    pub emit: Emit,
    /// Directory that relative `csv:` paths are resolved against.
    pub base_dir: PathBuf,
}

const KEYS: &[(&str, &[&str])] = &[
    ("grid", &["nx", "ny", "lx", "ly"]),
    ("fluid", &["mu", "mu_r", "c_a", "c_d", "c0"]),
    ("bc", &["gamma", "v0", "w0", "rho0"]),
    ("forcing", &["f", "g"]),
    (
        "solver",
        &[
            "tol",
            "max_iter",
            "damping",
            "lambda_steps",
            "lambda_schedule",
            "divergence_factor",
            "audit_tests",
            "audit_seed",
            "c_user",
            "eps",
            "panel_seed",
        ],
    ),
    ("output", &["dir", "emit"]),
];

struct Entry {
    value: String,
    line: usize,
}

type Sections = Vec<(String, Vec<(String, Entry)>)>;

fn tokenize(text: &str) -> Result<Sections> {
    let mut sections: Sections = Vec::new();
    for (no, raw) in text.lines().enumerate() {
        let line_no = no + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[') {
            let name = name
                .strip_suffix(']')
                .ok_or_else(|| Error::Parse { line: line_no, msg: "unterminated section header".into() })?
                .trim();
            if !KEYS.iter().any(|(s, _)| *s == name) {
                return Err(Error::Parse { line: line_no, msg: format!("unknown section [{name}]") });
            }
            if sections.iter().any(|(s, _)| s == name) {
                return Err(Error::Parse { line: line_no, msg: format!("duplicate section [{name}]") });
            }
            sections.push((name.to_string(), Vec::new()));
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Parse { line: line_no, msg: "expected 'key = value'".into() })?;
        let (key, value) = (key.trim(), value.trim());
        let Some((section, entries)) = sections.last_mut() else {
            return Err(Error::Parse { line: line_no, msg: "key outside of any section".into() });
        };
        let allowed = KEYS.iter().find(|(s, _)| s == section).map(|(_, k)| *k).unwrap_or(&[]);
        if !allowed.contains(&key) {
            return Err(Error::UnknownKey { section: section.clone(), key: key.to_string(), line: line_no });
        }
        if entries.iter().any(|(k, _)| k == key) {
            return Err(Error::Parse { line: line_no, msg: format!("duplicate key '{key}'") });
        }
        if value.is_empty() {
            return Err(Error::Parse { line: line_no, msg: format!("empty value for '{key}'") });
        }
        entries.push((key.to_string(), Entry { value: value.to_string(), line: line_no }));
    }
    Ok(sections)
}

struct Lookup<'a>(&'a Sections);

impl Lookup<'_> {
    fn get(&self, section: &str, key: &str) -> Option<&Entry> {
        self.0
            .iter()
            .find(|(s, _)| s == section)
            .and_then(|(_, e)| e.iter().find(|(k, _)| k == key).map(|(_, v)| v))
    }

    fn parse<T: std::str::FromStr>(&self, section: &str, key: &str) -> Result<Option<T>> {
        match self.get(section, key) {
            None => Ok(None),
            Some(e) => e.value.parse::<T>().map(Some).map_err(|_| Error::Parse {
                line: e.line,
                msg: format!("invalid value '{}' for '{key}'", e.value),
            }),
        }
    }

    fn require<T: std::str::FromStr>(&self, section: &str, key: &str) -> Result<T> {
        self.parse(section, key)?
            .ok_or_else(|| Error::Invariant(format!("missing required key [{section}] {key}")))
    }

    fn profile(&self, section: &str, key: &str) -> Result<Option<Profile>> {
        match self.get(section, key) {
            None => Ok(None),
            Some(e) => Profile::parse(&e.value)
                .map(Some)
                .map_err(|msg| Error::Parse { line: e.line, msg: format!("{key}: {msg}") }),
        }
    }

    fn list(&self, section: &str, key: &str) -> Result<Option<Vec<f64>>> {
        match self.get(section, key) {
            None => Ok(None),
            Some(e) => e
                .value
                .split(',')
                .map(|t| t.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map(Some)
                .map_err(|_| Error::Parse { line: e.line, msg: format!("invalid list '{}' for '{key}'", e.value) }),
        }
    }
}

/// Read and validate a config file.
pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let cfg = read_config(path)?;
    cfg.validate()?;
    Ok(cfg)
}

/// Read a config file without validating it, so callers can apply
/// overrides first.
pub fn read_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    parse_config_str(&text, &base)
}

/// Parse config text without validating it; relative paths resolve against `base_dir`.
pub fn parse_config_str(text: &str, base_dir: &Path) -> Result<RunConfig> {
    let sections = tokenize(text)?;
    let l = Lookup(&sections);
    let lx: f64 = l.parse("grid", "lx")?.unwrap_or(1.0);
    let ly: f64 = l.parse("grid", "ly")?.unwrap_or(1.0);
    let nx: usize = l.require("grid", "nx")?;
    let ny: usize = match l.parse("grid", "ny")? {
        Some(n) => n,
        None => aspect_ny(nx, lx, ly),
    };
    let fluid = FluidParams {
        mu: l.require("fluid", "mu")?,
        mu_r: l.require("fluid", "mu_r")?,
        c_a: l.require("fluid", "c_a")?,
        c_d: l.require("fluid", "c_d")?,
        c0: l.parse("fluid", "c0")?,
    };
    let gamma = match l.list("bc", "gamma")? {
        None => None,
        Some(v) if v.len() == 2 => Some((v[0], v[1])),
        Some(_) => {
            let line = l.get("bc", "gamma").map_or(0, |e| e.line);
            return Err(Error::Parse { line, msg: "gamma takes exactly one arc: s_start, s_end".into() });
        }
    };
    let v0 = l
        .profile("bc", "v0")?
        .ok_or_else(|| Error::Invariant("missing required key [bc] v0".into()))?;
    let defaults = SolverOptions::default();
    let lambda_schedule = match (l.parse::<usize>("solver", "lambda_steps")?, l.list("solver", "lambda_schedule")?) {
        (Some(_), Some(_)) => {
            let line = l.get("solver", "lambda_schedule").map_or(0, |e| e.line);
            return Err(Error::Parse { line, msg: "give either lambda_steps or lambda_schedule".into() });
        }
        (Some(k), None) => SolverOptions::lambda_steps(k),
        (None, Some(s)) => s,
        (None, None) => defaults.lambda_schedule.clone(),
    };
    let solver = SolverOptions {
        tol: l.parse("solver", "tol")?.unwrap_or(defaults.tol),
        max_iter: l.parse("solver", "max_iter")?.unwrap_or(defaults.max_iter),
        damping: l.parse("solver", "damping")?.unwrap_or(defaults.damping),
        lambda_schedule,
        divergence_factor: l.parse("solver", "divergence_factor")?.unwrap_or(defaults.divergence_factor),
        audit_tests: l.parse("solver", "audit_tests")?.unwrap_or(defaults.audit_tests),
        audit_seed: l.parse("solver", "audit_seed")?.unwrap_or(defaults.audit_seed),
        c_user: l.parse("solver", "c_user")?.unwrap_or(defaults.c_user),
    };
    let emit = match l.get("output", "emit") {
        None => Emit::Csv,
        Some(e) => Emit::parse(&e.value).ok_or_else(|| Error::Parse {
            line: e.line,
            msg: format!("emit must be csv, vtk or both, got '{}'", e.value),
        })?,
    };
    Ok(RunConfig {
        nx,
        ny,
        lx,
        ly,
        fluid,
        gamma,
        v0,
        w0: l.profile("bc", "w0")?.unwrap_or(Profile::Zero),
        rho0: l.profile("bc", "rho0")?.unwrap_or(Profile::Uniform(vec![1.0])),
        f: l.profile("forcing", "f")?.unwrap_or(Profile::Zero),
        g: l.profile("forcing", "g")?.unwrap_or(Profile::Zero),
        solver,
        eps: l.parse("solver", "eps")?,
        panel_seed: l.parse("solver", "panel_seed")?.unwrap_or(DEFAULT_PANEL_SEED),
        out_dir: l.get("output", "dir").map_or_else(|| PathBuf::from("out"), |e| PathBuf::from(&e.value)),
        emit,
        base_dir: base_dir.to_path_buf(),
    })
}

fn aspect_ny(nx: usize, lx: f64, ly: f64) -> usize {
    if nx < 2 || !(lx > 0.0) {
        return nx;
    }
    ((nx as f64 - 1.0) * ly / lx).round() as usize + 1
}

#[derive(Debug, Clone, Copy)]
enum Role {
    V0,
    W0,
    Rho0,
    F,
    G,
}

impl Role {
    fn key(self) -> &'static str {
        match self {
            Role::V0 => "v0",
            Role::W0 => "w0",
            Role::Rho0 => "rho0",
            Role::F => "f",
            Role::G => "g",
        }
    }
    fn is_vector(self) -> bool {
        matches!(self, Role::V0 | Role::F)
    }
}

type ScalarFn<'a> = Box<dyn Fn(f64, f64) -> f64 + 'a>;
type VectorFn<'a> = Box<dyn Fn(f64, f64) -> [f64; 2] + 'a>;

fn scalar_fn(p: &Profile) -> Option<ScalarFn<'_>> {
    match p {
        Profile::Zero => Some(Box::new(|_, _| 0.0)),
        Profile::Uniform(v) => {
            let c = v[0];
            Some(Box::new(move |_, _| c))
        }
        Profile::Poly(c) => Some(Box::new(move |x, y| {
            c[0] + c[1] * x + c[2] * y + c[3] * x * x + c[4] * x * y + c[5] * y * y
        })),
        _ => None,
    }
}

fn vector_fn(p: &Profile) -> Option<VectorFn<'_>> {
    match p {
        Profile::Zero => Some(Box::new(|_, _| [0.0, 0.0])),
        Profile::Uniform(v) => {
            let c = [v[0], v[1]];
            Some(Box::new(move |_, _| c))
        }
        Profile::Parabolic { y0, y1, peak } => {
            let (y0, y1, peak) = (*y0, *y1, *peak);
            Some(Box::new(move |_, y| {
                if y < y0 || y > y1 {
                    [0.0, 0.0]
                } else {
                    [peak * 4.0 * (y - y0) * (y1 - y) / ((y1 - y0) * (y1 - y0)), 0.0]
                }
            }))
        }
        _ => None,
    }
}

impl RunConfig {
    pub fn grid(&self) -> Result<GridSpec> {
        GridSpec::new(self.nx, self.ny, self.lx, self.ly)
    }

    /// Replace the resolution, keeping the aspect ratio.
    pub fn set_resolution(&mut self, nx: usize) {
        self.nx = nx;
        self.ny = aspect_ny(nx, self.lx, self.ly);
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Check every invariant a run relies on: parameters, grid, profile
    /// kinds, referenced files, solver options, flux compatibility and
    /// strict inflow on Γ.
    pub fn validate(&self) -> Result<()> {
        self.fluid.validate()?;
        self.grid()?;
        self.solver.validate()?;
        for (role, p) in self.profiles() {
            let ok = if role.is_vector() { p.is_vector_capable() } else { p.is_scalar_capable() };
            if !ok {
                return Err(Error::Invariant(format!(
                    "profile '{p}' does not fit {} ({})",
                    role.key(),
                    if role.is_vector() { "vector" } else { "scalar" }
                )));
            }
            match p {
                Profile::Csv(path) => {
                    let full = self.resolve(path);
                    if !full.is_file() {
                        return Err(Error::Invariant(format!(
                            "referenced file exists: {} ({})",
                            full.display(),
                            role.key()
                        )));
                    }
                }
                Profile::Mms(name) => {
                    build_mms_case(name)?;
                }
                _ => {}
            }
        }
        if let Some(eps) = self.eps {
            if !(eps > 0.0) {
                return Err(Error::Invariant("eps > 0".into()));
            }
        }
        // boundary checks
        let grid = self.grid()?;
        let v0 = self.vector_trace(&grid)?;
        let net = check_compatibility(&v0);
        let tol = flux_tolerance(&v0);
        if net.abs() > tol {
            return Err(Error::IncompatibleFlux { gap: net, tol });
        }
        if let Some((a, b)) = self.gamma {
            GammaSpec::new(&grid, a, b)?.check_strict_inflow(&v0, DEFAULT_FLUX_FLOOR)?;
        }
        Ok(())
    }

    fn profiles(&self) -> [(Role, &Profile); 5] {
        [
            (Role::V0, &self.v0),
            (Role::W0, &self.w0),
            (Role::Rho0, &self.rho0),
            (Role::F, &self.f),
            (Role::G, &self.g),
        ]
    }

    fn vector_trace(&self, grid: &GridSpec) -> Result<VectorTrace> {
        match &self.v0 {
            Profile::Mms(name) => {
                let c = build_mms_case(name)?;
                Ok(VectorTrace::from_fn(*grid, |x, y| c.velocity(x, y)))
            }
            Profile::Csv(p) => {
                let samples = read_vector_trace_csv(&self.resolve(p))?;
                VectorTrace::resample(*grid, &samples)
            }
            p => {
                let f = vector_fn(p).ok_or_else(|| Error::Invariant(format!("profile '{p}' does not fit v0")))?;
                Ok(VectorTrace::from_fn(*grid, f))
            }
        }
    }

    fn scalar_trace(&self, grid: &GridSpec, role: Role, p: &Profile) -> Result<ScalarTrace> {
        match p {
            Profile::Mms(name) => {
                let c = build_mms_case(name)?;
                Ok(match role {
                    Role::Rho0 => ScalarTrace::from_fn(*grid, |x, y| c.density(x, y)),
                    _ => ScalarTrace::from_fn(*grid, |x, y| c.microrotation(x, y).val),
                })
            }
            Profile::Csv(path) => {
                let samples = read_scalar_trace_csv(&self.resolve(path))?;
                ScalarTrace::resample(*grid, &samples)
            }
            p => {
                let f = scalar_fn(p)
                    .ok_or_else(|| Error::Invariant(format!("profile '{p}' does not fit {}", role.key())))?;
                Ok(ScalarTrace::from_fn(*grid, f))
            }
        }
    }

    /// Build the boundary value problem described by this config.
    pub fn to_problem(&self) -> Result<ProblemSpec> {
        let grid = self.grid()?;
        let params = self.fluid;
        let f = match &self.f {
            Profile::Mms(name) => {
                let c = build_mms_case(name)?;
                VectorField::from_fn(grid, |x, y| c.forcing_f(x, y, &params))
            }
            Profile::Csv(p) => {
                let v = read_vector_csv(&self.resolve(p))?;
                grid.check_same(v.grid()).map_err(|_| {
                    Error::Invariant(format!("forcing file {} does not match the grid", p.display()))
                })?;
                v
            }
            p => VectorField::from_fn(
                grid,
                vector_fn(p).ok_or_else(|| Error::Invariant(format!("profile '{p}' does not fit f")))?,
            ),
        };
        let g = match &self.g {
            Profile::Mms(name) => {
                let c = build_mms_case(name)?;
                ScalarField::from_fn(grid, |x, y| c.forcing_g(x, y, &params))
            }
            Profile::Csv(p) => {
                let s = read_scalar_csv(&self.resolve(p))?;
                grid.check_same(s.grid()).map_err(|_| {
                    Error::Invariant(format!("forcing file {} does not match the grid", p.display()))
                })?;
                s
            }
            p => ScalarField::from_fn(
                grid,
                scalar_fn(p).ok_or_else(|| Error::Invariant(format!("profile '{p}' does not fit g")))?,
            ),
        };
        let gamma = match self.gamma {
            Some((a, b)) => Some(GammaSpec::new(&grid, a, b)?),
            None => None,
        };
        Ok(ProblemSpec {
            params,
            v0: self.vector_trace(&grid)?,
            w0: self.scalar_trace(&grid, Role::W0, &self.w0)?,
            rho0: self.scalar_trace(&grid, Role::Rho0, &self.rho0)?,
            gamma,
            f,
            g,
            eps: self.eps,
            panel_seed: self.panel_seed,
        })
    }

    /// The effective configuration, every default spelled out.
    pub fn echo(&self) -> String {
        let mut s = String::new();
        let o = &self.solver;
        let _ = writeln!(s, "# effective configuration");
        let _ = writeln!(s, "[grid]\nnx = {}\nny = {}\nlx = {}\nly = {}", self.nx, self.ny, self.lx, self.ly);
        let _ = writeln!(
            s,
            "[fluid]\nmu = {}\nmu_r = {}\nc_a = {}\nc_d = {}",
            self.fluid.mu, self.fluid.mu_r, self.fluid.c_a, self.fluid.c_d
        );
        match self.fluid.c0 {
            Some(c0) => {
                let _ = writeln!(s, "c0 = {c0}");
            }
            None => {
                let _ = writeln!(s, "# c0 unset");
            }
        }
        let _ = writeln!(s, "[bc]");
        match self.gamma {
            Some((a, b)) => {
                let _ = writeln!(s, "gamma = {a}, {b}");
            }
            None => {
                let _ = writeln!(s, "# gamma unset: no inflow");
            }
        }
        let _ = writeln!(s, "v0 = {}\nw0 = {}\nrho0 = {}", self.v0, self.w0, self.rho0);
        let _ = writeln!(s, "[forcing]\nf = {}\ng = {}", self.f, self.g);
        let _ = writeln!(
            s,
            "[solver]\ntol = {}\nmax_iter = {}\ndamping = {}\nlambda_schedule = {}\ndivergence_factor = {}\naudit_tests = {}\naudit_seed = {}\nc_user = {}",
            o.tol,
            o.max_iter,
            o.damping,
            join(&o.lambda_schedule),
            o.divergence_factor,
            o.audit_tests,
            o.audit_seed,
            o.c_user
        );
        match self.eps {
            Some(e) => {
                let _ = writeln!(s, "eps = {e}");
            }
            None => {
                let _ = writeln!(s, "# eps unset: min(lx, ly)/8");
            }
        }
        let _ = writeln!(s, "panel_seed = {}", self.panel_seed);
        let _ = writeln!(s, "[output]\ndir = {}\nemit = {}", self.out_dir.display(), self.emit);
        s
    }
}

/// Write `contents` to a temporary sibling, then rename it over `path`.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    fs::write(&tmp, contents).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

/// A field to be written.
#[derive(Debug, Clone, Copy)]
pub enum FieldRef<'a> {
    Scalar(&'a ScalarField),
    Vector(&'a VectorField),
}

impl FieldRef<'_> {
    fn grid(&self) -> &GridSpec {
        match self {
            FieldRef::Scalar(s) => s.grid(),
            FieldRef::Vector(v) => v.grid(),
        }
    }
}

/// CSV text: header `x,y,value` or `x,y,vx,vy`, row-major node order,
/// 17 significant digits.
pub fn field_csv(field: FieldRef<'_>) -> String {
    let g = *field.grid();
    let mut s = String::with_capacity(g.len() * 72);
    s.push_str(match field {
        FieldRef::Scalar(_) => "x,y,value\n",
        FieldRef::Vector(_) => "x,y,vx,vy\n",
    });
    for j in 0..g.ny() {
        for i in 0..g.nx() {
            let _ = write!(s, "{:.16e},{:.16e}", g.x(i), g.y(j));
            match field {
                FieldRef::Scalar(f) => {
                    let _ = writeln!(s, ",{:.16e}", f.at(i, j));
                }
                FieldRef::Vector(v) => {
                    let [a, b] = v.at(i, j);
                    let _ = writeln!(s, ",{a:.16e},{b:.16e}");
                }
            }
        }
    }
    s
}

/// Legacy ASCII VTK structured-points text.
pub fn field_vtk(field: FieldRef<'_>, name: &str) -> String {
    let g = *field.grid();
    let h = g.h();
    let mut s = String::with_capacity(g.len() * 48);
    let _ = writeln!(s, "# vtk DataFile Version 3.0");
    let _ = writeln!(s, "micropolar {name}");
    let _ = writeln!(s, "ASCII");
    let _ = writeln!(s, "DATASET STRUCTURED_POINTS");
    let _ = writeln!(s, "DIMENSIONS {} {} 1", g.nx(), g.ny());
    let _ = writeln!(s, "ORIGIN 0 0 0");
    let _ = writeln!(s, "SPACING {h:.16e} {h:.16e} {h:.16e}");
    let _ = writeln!(s, "POINT_DATA {}", g.len());
    match field {
        FieldRef::Scalar(f) => {
            let _ = writeln!(s, "SCALARS {name} double 1");
            let _ = writeln!(s, "LOOKUP_TABLE default");
            for v in f.values() {
                let _ = writeln!(s, "{v:.16e}");
            }
        }
        FieldRef::Vector(v) => {
            let _ = writeln!(s, "VECTORS {name} double");
            for (a, b) in v.vx().iter().zip(v.vy()) {
                let _ = writeln!(s, "{a:.16e} {b:.16e} 0");
            }
        }
    }
    s
}

/// Write one field atomically; `name` labels the VTK data array.
pub fn write_field(field: FieldRef<'_>, name: &str, format: Format, path: &Path) -> Result<()> {
    let text = match format {
        Format::Csv => field_csv(field),
        Format::Vtk => field_vtk(field, name),
    };
    write_atomic(path, &text)
}

fn read_table(path: &Path, expect: &[&[&str]]) -> Result<(usize, Vec<Vec<f64>>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::Parse { line: 1, msg: format!("{}: empty file", path.display()) })?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    let kind = expect.iter().position(|e| *e == cols.as_slice()).ok_or_else(|| Error::Parse {
        line: 1,
        msg: format!(
            "{}: header must be one of {}",
            path.display(),
            expect.iter().map(|e| e.join(",")).collect::<Vec<_>>().join(" | ")
        ),
    })?;
    let width = cols.len();
    let mut rows = Vec::new();
    for (no, l) in lines {
        let row = l
            .split(',')
            .map(|t| t.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .ok()
            .filter(|r| r.len() == width)
            .ok_or_else(|| Error::Parse { line: no + 1, msg: format!("{}: expected {width} numbers", path.display()) })?;
        rows.push(row);
    }
    Ok((kind, rows))
}

fn infer_grid(path: &Path, rows: &[Vec<f64>]) -> Result<GridSpec> {
    let bad = |msg: String| Error::Parse { line: 1, msg: format!("{}: {msg}", path.display()) };
    let mut xs: Vec<f64> = rows.iter().map(|r| r[0]).collect();
    let mut ys: Vec<f64> = rows.iter().map(|r| r[1]).collect();
    for v in [&mut xs, &mut ys] {
        v.sort_by(|a, b| a.total_cmp(b));
        v.dedup();
    }
    let (nx, ny) = (xs.len(), ys.len());
    if nx < 2 || ny < 2 || nx * ny != rows.len() {
        return Err(bad(format!("{} rows do not form a regular grid", rows.len())));
    }
    let g = GridSpec::new(nx, ny, xs[nx - 1] - xs[0], ys[ny - 1] - ys[0])
        .map_err(|e| bad(e.to_string()))?;
    if xs[0] != 0.0 || ys[0] != 0.0 {
        return Err(bad("grid must start at the origin".into()));
    }
    let tol = 1e-9 * g.h();
    for (k, r) in rows.iter().enumerate() {
        let (i, j) = (k % nx, k / nx);
        if (r[0] - g.x(i)).abs() > tol || (r[1] - g.y(j)).abs() > tol {
            return Err(Error::Parse {
                line: k + 2,
                msg: format!("{}: node out of row-major order", path.display()),
            });
        }
    }
    Ok(g)
}

/// Read a scalar field CSV (`x,y,value`); the grid is inferred.
pub fn read_scalar_csv(path: &Path) -> Result<ScalarField> {
    let (_, rows) = read_table(path, &[&["x", "y", "value"]])?;
    let g = infer_grid(path, &rows)?;
    ScalarField::from_values(g, rows.iter().map(|r| r[2]).collect())
}

/// Read a vector field CSV (`x,y,vx,vy`); the grid is inferred.
pub fn read_vector_csv(path: &Path) -> Result<VectorField> {
    let (_, rows) = read_table(path, &[&["x", "y", "vx", "vy"]])?;
    let g = infer_grid(path, &rows)?;
    VectorField::from_components(g, rows.iter().map(|r| r[2]).collect(), rows.iter().map(|r| r[3]).collect())
}

/// Boundary samples `s,value` by arclength.
pub fn read_scalar_trace_csv(path: &Path) -> Result<Vec<(f64, f64)>> {
    let (_, rows) = read_table(path, &[&["s", "value"]])?;
    Ok(rows.iter().map(|r| (r[0], r[1])).collect())
}

/// Boundary samples `s,vx,vy` by arclength.
pub fn read_vector_trace_csv(path: &Path) -> Result<Vec<(f64, [f64; 2])>> {
    let (_, rows) = read_table(path, &[&["s", "vx", "vy"]])?;
    Ok(rows.iter().map(|r| (r[0], [r[1], r[2]])).collect())
}

fn opt(x: Option<f64>) -> String {
    x.map_or_else(|| "n/a".to_string(), |v| format!("{v:.10e}"))
}

/// Key-value report of a run.
pub fn format_report(sol: &Solution) -> String {
    let r = &sol.report;
    let d = &sol.data;
    let mut s = String::new();
    let mut kv = |k: &str, v: String| {
        let _ = writeln!(s, "{k} = {v}");
    };
    kv("status", r.status.to_string());
    kv("converged", r.converged().to_string());
    kv("iterations", r.iterations.to_string());
    kv("final_residual", format!("{:.10e}", r.final_residual()));
    kv("lambda", r.lambda.to_string());
    kv("max_scaled_divergence", format!("{:.10e}", r.max_scaled_divergence));
    kv("max_cell_peclet", format!("{:.10e}", r.max_peclet));
    if let Some(l) = r.last_linear {
        kv("linear_method", l.method.to_string());
        kv("linear_iterations", l.iterations.to_string());
        kv("linear_residual", format!("{:.10e}", l.residual));
    }
    kv("weak_momentum_max", opt(r.weak.map(|w| w.momentum_max)));
    kv("weak_momentum_mean", opt(r.weak.map(|w| w.momentum_mean)));
    kv("weak_angular_max", opt(r.weak.map(|w| w.angular_max)));
    kv("weak_angular_mean", opt(r.weak.map(|w| w.angular_mean)));
    kv("weak_tests", r.weak.map_or(0, |w| w.n_tests).to_string());
    kv("estimate_left", opt(r.estimate.map(|e| e.left)));
    kv("estimate_right", opt(r.estimate.map(|e| e.right)));
    kv("estimate_margin", opt(r.estimate.map(|e| e.margin)));
    let sv = &r.solvability;
    kv("solvability_lhs", format!("{:.10e}", sv.lhs));
    kv("solvability_rhs", format!("{:.10e}", sv.rhs));
    kv("solvability_margin", format!("{:.10e}", sv.margin));
    kv("c_user", sv.c_user.to_string());
    kv("measured_delta", format!("{:.10e}", sv.measured_delta));
    kv("delta_eta", format!("{:.10e}", sv.delta_eta));
    kv("half_mu", format!("{:.10e}", sv.half_mu));
    kv("delta_condition", if sv.delta_ok() { "satisfied" } else { "violated" }.to_string());
    kv("eta_sup", format!("{:.10e}", d.eta_sup()));
    kv("eta_lipschitz", format!("{:.10e}", d.law.lipschitz()));
    kv("net_flux", format!("{:.10e}", d.net_flux));
    kv("layer_eps", format!("{:.10e}", d.hopf.eps));
    kv("momentum_residual", opt(sol.pressure.as_ref().map(|p| p.momentum_residual)));
    kv("pressure_compatibility_shift", opt(sol.pressure.as_ref().map(|p| p.compatibility_shift)));
    kv("message", r.message.clone());
    s
}

/// Residual history as `iteration,residual`.
pub fn history_csv(history: &[f64]) -> String {
    let mut s = String::from("iteration,residual\n");
    for (k, r) in history.iter().enumerate() {
        let _ = writeln!(s, "{},{r:.16e}", k + 1);
    }
    s
}

/// Per-grid diagnostics of a study, one row per grid.
pub fn study_details_csv(t: &ConvergenceTable) -> String {
    let mut s = String::from(
        "grid,h,status,iterations,momentum_residual,continuity_residual,gamma_density_dev,weak_max,estimate_margin,max_scaled_divergence\n",
    );
    for r in &t.rows {
        let _ = writeln!(
            s,
            "{},{:.16e},{},{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
            r.n,
            r.h,
            r.status,
            r.iterations,
            r.momentum_residual,
            r.continuity_residual,
            r.gamma_density_dev,
            r.weak_max,
            r.estimate_margin,
            r.max_scaled_divergence
        );
    }
    s
}

/// One `PASS`/`FAIL` line per reduction check.
pub fn reduction_text(out: &[ReductionOutcome]) -> String {
    let mut s = String::new();
    for o in out {
        let _ = writeln!(
            s,
            "{} {}: measured {:e} (threshold {:e}); {}",
            if o.passed { "PASS" } else { "FAIL" },
            o.name,
            o.measured,
            o.threshold,
            o.detail
        );
    }
    s
}
