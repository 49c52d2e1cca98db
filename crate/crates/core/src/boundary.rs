//! Boundary data: the ordered boundary loop, traces of the prescribed
//! velocity, microrotation and density, the inflow arc Γ, the boundary stream
//! function, the density law `η`, and the two interior extensions (the
//! divergence-free layer field `a` and the harmonic lift `b`).
//!
//! The loop starts at node `(0, 0)` and runs counterclockwise: bottom edge,
//! right edge, top edge, left edge. Consecutive loop nodes are `h` apart, so
//! the arclength of loop node `k` is `k·h` and the loop has length
//! `2(lx + ly)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::fields::{perp_grad, GridField, GridSpec, ScalarField, VectorField};
use crate::poisson::solve_dirichlet_poisson;

/// Default strict-inflow floor for `v₀·n` on Γ.
pub const DEFAULT_FLUX_FLOOR: f64 = 1e-10;

/// Seed of the test-function panel used for the layer smallness constant.
pub const DEFAULT_PANEL_SEED: u64 = 19930517;

/// Number of test stream functions in the smallness panel.
pub const DELTA_PANEL_SIZE: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Edge {
    Bottom,
    Right,
    Top,
    Left,
}

impl Edge {
    pub fn normal(self) -> [f64; 2] {
        match self {
            Edge::Bottom => [0.0, -1.0],
            Edge::Right => [1.0, 0.0],
            Edge::Top => [0.0, 1.0],
            Edge::Left => [-1.0, 0.0],
        }
    }

    /// Counterclockwise unit tangent `(−n_y, n_x)`.
    pub fn tangent(self) -> [f64; 2] {
        let [nx, ny] = self.normal();
        [-ny, nx]
    }
}

/// Ordered boundary nodes with arclength coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryLoop {
    grid: GridSpec,
    nodes: Vec<(usize, usize)>,
    /// Edge of the segment from node `k` to node `k + 1`.
    segment_edge: Vec<Edge>,
}

impl BoundaryLoop {
    pub fn new(grid: GridSpec) -> Self {
        let (nx, ny) = (grid.nx(), grid.ny());
        let mut nodes = Vec::with_capacity(2 * (nx + ny) - 4);
        let mut segment_edge = Vec::with_capacity(nodes.capacity());
        for i in 0..nx - 1 {
            nodes.push((i, 0));
            segment_edge.push(Edge::Bottom);
        }
        for j in 0..ny - 1 {
            nodes.push((nx - 1, j));
            segment_edge.push(Edge::Right);
        }
        for i in (1..nx).rev() {
            nodes.push((i, ny - 1));
            segment_edge.push(Edge::Top);
        }
        for j in (1..ny).rev() {
            nodes.push((0, j));
            segment_edge.push(Edge::Left);
        }
        Self {
            grid,
            nodes,
            segment_edge,
        }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }
    pub fn len(&self) -> usize {
        self.nodes.len()
    }
    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
    pub fn node(&self, k: usize) -> (usize, usize) {
        self.nodes[k]
    }
    pub fn nodes(&self) -> &[(usize, usize)] {
        &self.nodes
    }
    pub fn perimeter(&self) -> f64 {
        2.0 * (self.grid.lx() + self.grid.ly())
    }
    pub fn arclength(&self, k: usize) -> f64 {
        k as f64 * self.grid.h()
    }
    pub fn segment_edge(&self, k: usize) -> Edge {
        self.segment_edge[k]
    }

    pub fn next(&self, k: usize) -> usize {
        (k + 1) % self.len()
    }
    pub fn prev(&self, k: usize) -> usize {
        (k + self.len() - 1) % self.len()
    }

    pub fn is_corner(&self, k: usize) -> bool {
        self.segment_edge[k] != self.segment_edge[self.prev(k)]
    }

    /// Edge containing a non-corner node (for a corner, the outgoing edge).
    pub fn node_edge(&self, k: usize) -> Edge {
        self.segment_edge[k]
    }

    /// Outward unit normal; corners get the normalized average of both edges.
    pub fn normal(&self, k: usize) -> [f64; 2] {
        let a = self.segment_edge[k].normal();
        if !self.is_corner(k) {
            return a;
        }
        let b = self.segment_edge[self.prev(k)].normal();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        [(a[0] + b[0]) * s, (a[1] + b[1]) * s]
    }

    pub fn tangent(&self, k: usize) -> [f64; 2] {
        let [nx, ny] = self.normal(k);
        [-ny, nx]
    }

    /// Loop index of a boundary node, if it is one.
    pub fn position(&self, i: usize, j: usize) -> Option<usize> {
        let g = &self.grid;
        let (nx, ny) = (g.nx(), g.ny());
        if j == 0 {
            Some(i)
        } else if i == nx - 1 {
            Some(nx - 1 + j)
        } else if j == ny - 1 {
            Some(nx - 1 + ny - 1 + (nx - 1 - i))
        } else if i == 0 {
            Some(2 * (nx - 1) + ny - 1 + (ny - 1 - j))
        } else {
            None
        }
    }

    /// Shorter arclength distance between two loop nodes.
    pub fn loop_distance(&self, a: usize, b: usize) -> f64 {
        let n = self.len();
        let d = a.abs_diff(b);
        d.min(n - d) as f64 * self.grid.h()
    }
}

/// Values that can live on the boundary loop.
pub trait TraceValue: Copy + std::fmt::Debug + PartialEq {
    fn zero() -> Self;
    fn lerp(a: Self, b: Self, t: f64) -> Self;
    fn dist2(a: Self, b: Self) -> f64;
    fn norm2(a: Self) -> f64 {
        Self::dist2(a, Self::zero())
    }
}

impl TraceValue for f64 {
    fn zero() -> Self {
        0.0
    }
    fn lerp(a: Self, b: Self, t: f64) -> Self {
        a + t * (b - a)
    }
    fn dist2(a: Self, b: Self) -> f64 {
        (a - b) * (a - b)
    }
}

impl TraceValue for [f64; 2] {
    fn zero() -> Self {
        [0.0, 0.0]
    }
    fn lerp(a: Self, b: Self, t: f64) -> Self {
        [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]
    }
    fn dist2(a: Self, b: Self) -> f64 {
        (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
    }
}

/// Values sampled at the boundary loop nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryTrace<T> {
    bloop: BoundaryLoop,
    values: Vec<T>,
}

pub type ScalarTrace = BoundaryTrace<f64>;
pub type VectorTrace = BoundaryTrace<[f64; 2]>;

impl<T: TraceValue> BoundaryTrace<T> {
    pub fn from_values(grid: GridSpec, values: Vec<T>) -> Result<Self> {
        let bloop = BoundaryLoop::new(grid);
        if values.len() != bloop.len() {
            return Err(Error::Invariant(format!(
                "trace has {} values, boundary loop has {} nodes",
                values.len(),
                bloop.len()
            )));
        }
        Ok(Self { bloop, values })
    }

    pub fn zeros(grid: GridSpec) -> Self {
        Self::constant(grid, T::zero())
    }

    pub fn constant(grid: GridSpec, c: T) -> Self {
        let bloop = BoundaryLoop::new(grid);
        let values = vec![c; bloop.len()];
        Self { bloop, values }
    }

    /// Sample a function of position.
    pub fn from_fn(grid: GridSpec, f: impl Fn(f64, f64) -> T) -> Self {
        let bloop = BoundaryLoop::new(grid);
        let values = bloop
            .nodes()
            .iter()
            .map(|&(i, j)| f(grid.x(i), grid.y(j)))
            .collect();
        Self { bloop, values }
    }

    /// Sample a function of arclength.
    pub fn from_arclength(grid: GridSpec, f: impl Fn(f64) -> T) -> Self {
        let bloop = BoundaryLoop::new(grid);
        let values = (0..bloop.len()).map(|k| f(bloop.arclength(k))).collect();
        Self { bloop, values }
    }

    /// Linear resampling of `(s, value)` samples onto the loop nodes, with
    /// constant continuation beyond the first and last sample.
    pub fn resample(grid: GridSpec, samples: &[(f64, T)]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Invariant("empty trace samples".into()));
        }
        if samples.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::Invariant(
                "trace samples must have strictly increasing s".into(),
            ));
        }
        Ok(Self::from_arclength(grid, |s| {
            let k = samples.partition_point(|&(si, _)| si <= s);
            if k == 0 {
                samples[0].1
            } else if k == samples.len() {
                samples[k - 1].1
            } else {
                let (s0, v0) = samples[k - 1];
                let (s1, v1) = samples[k];
                T::lerp(v0, v1, (s - s0) / (s1 - s0))
            }
        }))
    }

    pub fn grid(&self) -> &GridSpec {
        &self.bloop.grid
    }
    pub fn boundary_loop(&self) -> &BoundaryLoop {
        &self.bloop
    }
    pub fn values(&self) -> &[T] {
        &self.values
    }
    pub fn value(&self, k: usize) -> T {
        self.values[k]
    }
    pub fn max_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, &v| m.max(T::norm2(v).sqrt()))
    }
}

impl ScalarTrace {
    /// Restriction of a nodal field to the boundary.
    pub fn from_field(q: &ScalarField) -> Self {
        let bloop = BoundaryLoop::new(*q.grid());
        let values = bloop.nodes().iter().map(|&(i, j)| q.at(i, j)).collect();
        Self { bloop, values }
    }

    /// Nodal field equal to the trace on the boundary and zero inside.
    pub fn to_field(&self) -> ScalarField {
        let mut out = ScalarField::zeros(*self.grid());
        for (k, &(i, j)) in self.bloop.nodes().iter().enumerate() {
            out.set(i, j, self.values[k]);
        }
        out
    }

    /// Centered arclength derivative at a non-corner node.
    pub fn tangential_derivative(&self, k: usize) -> f64 {
        let l = &self.bloop;
        (self.values[l.next(k)] - self.values[l.prev(k)]) / (2.0 * l.grid.h())
    }
}

impl VectorTrace {
    pub fn from_field(v: &VectorField) -> Self {
        let bloop = BoundaryLoop::new(*v.grid());
        let values = bloop.nodes().iter().map(|&(i, j)| v.at(i, j)).collect();
        Self { bloop, values }
    }

    /// `v₀·n` at node `k` (averaged normal at corners).
    pub fn normal_component(&self, k: usize) -> f64 {
        dot(self.values[k], self.bloop.normal(k))
    }

    pub fn tangential_component(&self, k: usize) -> f64 {
        dot(self.values[k], self.bloop.tangent(k))
    }

    /// Outward flux through segment `k → k+1` (trapezoid rule).
    fn segment_flux(&self, k: usize) -> f64 {
        let l = &self.bloop;
        let n = l.segment_edge(k).normal();
        let a = self.values[k];
        let b = self.values[l.next(k)];
        0.5 * l.grid.h() * (dot(a, n) + dot(b, n))
    }

    /// Outward flux through segment `k → k+1` from the cubic through four
    /// nodes of the same edge (fourth order; trapezoid on edges with fewer
    /// than four nodes).
    fn segment_flux_cubic(&self, k: usize) -> f64 {
        let l = &self.bloop;
        let (nx, ny) = (l.grid.nx(), l.grid.ny());
        let corners = [0, nx - 1, nx + ny - 2, 2 * nx + ny - 3];
        let e = corners.iter().rposition(|&c| c <= k).unwrap_or(0);
        let m = if e % 2 == 0 { nx - 1 } else { ny - 1 };
        if m < 3 {
            return self.segment_flux(k);
        }
        let start = corners[e];
        let t = k - start;
        let n = l.segment_edge(k).normal();
        let f = |q: usize| dot(self.values[(start + q) % l.len()], n);
        let h = l.grid.h();
        if t == 0 {
            h * (9.0 * f(0) + 19.0 * f(1) - 5.0 * f(2) + f(3)) / 24.0
        } else if t == m - 1 {
            h * (9.0 * f(m) + 19.0 * f(m - 1) - 5.0 * f(m - 2) + f(m - 3)) / 24.0
        } else {
            h * (-f(t - 1) + 13.0 * f(t) + 13.0 * f(t + 1) - f(t + 2)) / 24.0
        }
    }
}

#[inline]
fn dot(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

/// Trapezoid value of `∮ v₀·n ds`, edge by edge.
pub fn check_compatibility(v0: &VectorTrace) -> f64 {
    (0..v0.bloop.len()).map(|k| v0.segment_flux(k)).sum()
}

/// Flux tolerance `1e−10·‖v₀‖_∞·perimeter` below which the data count as compatible.
pub fn flux_tolerance(v0: &VectorTrace) -> f64 {
    1e-10 * v0.max_norm() * v0.bloop.perimeter()
}

/// The inflow arc: loop nodes with arclength strictly between `s_start` and `s_end`.
#[derive(Debug, Clone, PartialEq)]
pub struct GammaSpec {
    pub s_start: f64,
    pub s_end: f64,
    pub anchor_index: usize,
    nodes: Vec<usize>,
}

impl GammaSpec {
    pub fn new(grid: &GridSpec, s_start: f64, s_end: f64) -> Result<Self> {
        let bloop = BoundaryLoop::new(*grid);
        let p = bloop.perimeter();
        if !(0.0 <= s_start && s_start < s_end && s_end <= p * (1.0 + 1e-14)) {
            return Err(Error::Invariant(format!(
                "Gamma arc must satisfy 0 <= s_start < s_end <= {p}, got [{s_start}, {s_end}]"
            )));
        }
        let slack = 1e-9 * grid.h();
        let nodes: Vec<usize> = (0..bloop.len())
            .filter(|&k| {
                let s = bloop.arclength(k);
                s > s_start + slack && s < s_end - slack
            })
            .collect();
        if nodes.is_empty() {
            return Err(Error::Invariant(format!(
                "Gamma arc [{s_start}, {s_end}] contains no boundary node"
            )));
        }
        Ok(Self {
            s_start,
            s_end,
            anchor_index: nodes[0],
            nodes,
        })
    }

    /// Loop indices of the Γ nodes, in loop order.
    pub fn nodes(&self) -> &[usize] {
        &self.nodes
    }

    /// Fails unless `v₀·n < −flux_floor` at every Γ node.
    pub fn check_strict_inflow(&self, v0: &VectorTrace, flux_floor: f64) -> Result<()> {
        for &k in &self.nodes {
            let flux = v0.normal_component(k);
            if !(flux < -flux_floor) {
                return Err(Error::GammaNotInflow { index: k, flux });
            }
        }
        Ok(())
    }
}

/// Boundary stream function `φ_b(s) = −∫ v₀·n ds` from the Γ anchor, so that
/// `φ_b(anchor) = 0`. The closure gap after a full loop is removed linearly.
///
/// Segments are integrated to fourth order. With trapezoid segments the
/// tangential derivative of `φ_b` is off by O(h²), which clashes with the
/// exact tangential data at corners and leaves an O(1) discrete momentum
/// residual there.
pub fn boundary_stream(v0: &VectorTrace, gamma: &GammaSpec) -> Result<ScalarTrace> {
    boundary_stream_from(v0, gamma.anchor_index)
}

pub(crate) fn boundary_stream_from(v0: &VectorTrace, anchor: usize) -> Result<ScalarTrace> {
    let l = &v0.bloop;
    let n = l.len();
    let mut phi = vec![0.0; n];
    let mut acc = 0.0;
    for m in 1..=n {
        let k = (anchor + m) % n;
        acc -= v0.segment_flux_cubic(l.prev(k));
        if m < n {
            phi[k] = acc;
        }
    }
    let gap = acc;
    let tol = flux_tolerance(v0).max(1e-10 * f64::EPSILON);
    if gap.abs() > tol {
        return Err(Error::IncompatibleFlux { gap, tol });
    }
    let p = l.perimeter();
    for m in 1..n {
        let k = (anchor + m) % n;
        phi[k] -= gap * (m as f64 * l.grid.h()) / p;
    }
    corner_correction(v0, &mut phi);
    let shift = phi[anchor];
    for x in &mut phi {
        *x -= shift;
    }
    Ok(BoundaryTrace {
        bloop: l.clone(),
        values: phi,
    })
}

/// Add `h²·z` on each edge, with `z` the cubic vanishing at both corners
/// whose end slopes are `−φ'''/6`.
///
/// The clamped ghost closure imposes the normal slope with an O(h²) error
/// `−h²·∂ₙ³ψ/6`. At a corner that normal derivative is the tangential
/// derivative of the neighbouring edge's Dirichlet data, so the two
/// conditions disagree by O(h²) and the discrete solution develops a corner
/// layer whose third derivatives are O(1). Shifting the Dirichlet slopes by
/// the same amount makes the perturbed problem compatible again.
fn corner_correction(v0: &VectorTrace, phi: &mut [f64]) {
    let l = &v0.bloop;
    let (nx, ny) = (l.grid.nx(), l.grid.ny());
    let h = l.grid.h();
    let corners = [0, nx - 1, nx + ny - 2, 2 * nx + ny - 3];
    for e in 0..4 {
        let m = if e % 2 == 0 { nx - 1 } else { ny - 1 };
        if m < 4 {
            continue;
        }
        let start = corners[e];
        let n = l.segment_edge(start).normal();
        // φ' = −v₀·n along the edge, so φ''' = −(v₀·n)''
        let q = |t: usize| -dot(v0.values[(start + t) % l.len()], n);
        let d2_start = (2.0 * q(0) - 5.0 * q(1) + 4.0 * q(2) - q(3)) / (h * h);
        let d2_end = (2.0 * q(m) - 5.0 * q(m - 1) + 4.0 * q(m - 2) - q(m - 3)) / (h * h);
        let (a, b) = (-d2_start / 6.0, -d2_end / 6.0);
        let len = m as f64 * h;
        for t in 1..m {
            let tau = t as f64 / m as f64;
            let h10 = tau * tau * tau - 2.0 * tau * tau + tau;
            let h11 = tau * tau * tau - tau * tau;
            phi[(start + t) % l.len()] += h * h * len * (a * h10 + b * h11);
        }
    }
}

/// Piecewise-linear, strictly positive function of the stream function with
/// constant continuation outside its breakpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityLaw {
    breakpoints: Vec<f64>,
    rho_values: Vec<f64>,
    lipschitz: f64,
    sup_norm: f64,
}

impl DensityLaw {
    pub fn new(breakpoints: Vec<f64>, rho_values: Vec<f64>) -> Result<Self> {
        if breakpoints.is_empty() || breakpoints.len() != rho_values.len() {
            return Err(Error::Invariant(
                "density law needs matching, nonempty breakpoint and value lists".into(),
            ));
        }
        if breakpoints.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Invariant(
                "density law breakpoints must be strictly increasing".into(),
            ));
        }
        if let Some((k, &v)) = rho_values
            .iter()
            .enumerate()
            .find(|(_, &v)| !(v > 0.0 && v.is_finite()))
        {
            return Err(Error::NonpositiveDensity { index: k, value: v });
        }
        let lipschitz = breakpoints
            .windows(2)
            .zip(rho_values.windows(2))
            .map(|(y, r)| ((r[1] - r[0]) / (y[1] - y[0])).abs())
            .fold(0.0, f64::max);
        let sup_norm = rho_values.iter().copied().fold(0.0, f64::max);
        Ok(Self {
            breakpoints,
            rho_values,
            lipschitz,
            sup_norm,
        })
    }

    pub fn constant(rho: f64) -> Result<Self> {
        Self::new(vec![0.0], vec![rho])
    }

    pub fn eval(&self, y: f64) -> f64 {
        let bp = &self.breakpoints;
        let k = bp.partition_point(|&b| b <= y);
        if k == 0 {
            self.rho_values[0]
        } else if k == bp.len() {
            self.rho_values[k - 1]
        } else {
            let t = (y - bp[k - 1]) / (bp[k] - bp[k - 1]);
            let (r0, r1) = (self.rho_values[k - 1], self.rho_values[k]);
            r0 + t * (r1 - r0)
        }
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }
    pub fn rho_values(&self) -> &[f64] {
        &self.rho_values
    }
    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }
    pub fn sup_norm(&self) -> f64 {
        self.sup_norm
    }
    pub fn min_value(&self) -> f64 {
        self.rho_values.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// `η` with `η(φ_b(x)) = ρ₀(x)` at every Γ node.
pub fn build_density_law(
    rho0: &ScalarTrace,
    phi_b: &ScalarTrace,
    gamma: &GammaSpec,
) -> Result<DensityLaw> {
    let mut ys = Vec::with_capacity(gamma.nodes.len());
    let mut rs = Vec::with_capacity(gamma.nodes.len());
    for &k in &gamma.nodes {
        let r = rho0.value(k);
        if !(r > 0.0) {
            return Err(Error::NonpositiveDensity { index: k, value: r });
        }
        let y = phi_b.value(k);
        if let Some(&last) = ys.last() {
            if !(y > last) {
                return Err(Error::GammaNotInflow {
                    index: k,
                    flux: f64::NAN,
                });
            }
        }
        ys.push(y);
        rs.push(r);
    }
    DensityLaw::new(ys, rs)
}

/// Velocity of a stream function whose boundary values are the boundary
/// stream function of `v0`: the centered `∇⊥χ` inside, the normal component
/// from the centered tangential difference along the boundary, and the
/// tangential component taken from `v0` (which is what the clamped normal
/// derivative prescribes). Corners carry `v0` itself.
pub fn velocity_with_trace(chi: &ScalarField, v0: &VectorTrace) -> Result<VectorField> {
    chi.grid().check_same(v0.grid())?;
    let mut v = perp_grad(chi);
    let l = v0.boundary_loop();
    for k in 0..l.len() {
        let (i, j) = l.node(k);
        if l.is_corner(k) {
            v.set(i, j, v0.value(k));
            continue;
        }
        let n = l.normal(k);
        let t = l.tangent(k);
        let vn = dot(v.at(i, j), n);
        let vt = v0.tangential_component(k);
        v.set(i, j, [vn * n[0] + vt * t[0], vn * n[1] + vt * t[1]]);
    }
    Ok(v)
}

/// Divergence-free extension of the boundary velocity supported in a layer.
#[derive(Debug, Clone)]
pub struct HopfExtension {
    pub a: VectorField,
    /// Stream function of `a` (equal to `φ_b` on the boundary).
    pub zeta: ScalarField,
    pub eps: f64,
    pub measured_delta: f64,
}

/// `1 − smoothstep(t)`: equal to 1 with zero slope at `t = 0`, zero for `t ≥ 1`.
fn cutoff(t: f64) -> f64 {
    if t <= 0.0 {
        1.0
    } else if t >= 1.0 {
        0.0
    } else {
        1.0 - t * t * (3.0 - 2.0 * t)
    }
}

/// Layer extension `a = ∇⊥(θ(d)·Φ)` with `Φ` the harmonic extension of `φ_b`
/// and `θ` a C¹ cutoff in the wall distance `d`. The cutoff reaches zero at
/// `eps − h`, so every node farther than `eps` from the wall has `a = 0`
/// exactly (its difference stencil only sees zeros).
pub fn build_hopf_extension(
    v0: &VectorTrace,
    phi_b: &ScalarTrace,
    eps: f64,
    seed: u64,
) -> Result<HopfExtension> {
    let grid = *v0.grid();
    grid.check_same(phi_b.grid())?;
    let h = grid.h();
    if eps < 2.0 * h * (1.0 - 1e-12) {
        return Err(Error::EpsTooSmall { eps, min: 2.0 * h });
    }
    let max_eps = 0.25 * grid.lx().min(grid.ly());
    if eps > max_eps * (1.0 + 1e-12) {
        return Err(Error::Invariant(format!(
            "eps = {eps} exceeds min(lx, ly)/4 = {max_eps}"
        )));
    }
    let big_phi = solve_dirichlet_poisson(&phi_b.to_field(), &ScalarField::zeros(grid))?;
    let width = eps - h;
    let mut zeta = ScalarField::zeros(grid);
    for (i, j) in grid.nodes() {
        let d = grid.wall_distance(i, j);
        zeta.set(i, j, cutoff(d / width) * big_phi.at(i, j));
    }
    let a = velocity_with_trace(&zeta, v0)?;
    let measured_delta = layer_smallness(&a, seed);
    Ok(HopfExtension {
        a,
        zeta,
        eps,
        measured_delta,
    })
}

/// Random smooth stream function vanishing with its gradient on the boundary.
pub(crate) fn random_bubble_stream(grid: &GridSpec, rng: &mut ChaCha8Rng) -> ScalarField {
    let (lx, ly) = (grid.lx(), grid.ly());
    let pi = std::f64::consts::PI;
    let c: Vec<f64> = (0..9).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let scale = 16.0 / (lx * lx * ly * ly);
    ScalarField::from_fn(*grid, |x, y| {
        let bx = x * (lx - x);
        let by = y * (ly - y);
        let mut p = 0.0;
        for m in 0..3 {
            for n in 0..3 {
                p += c[3 * m + n] * (m as f64 * pi * x / lx).cos() * (n as f64 * pi * y / ly).cos();
            }
        }
        scale * (bx * by).powi(2) * p
    })
}

/// Largest `(∫|a|²|φ|² / ∫|∇φ|²)^{1/2}` over a seeded panel of
/// divergence-free test fields vanishing on the boundary.
pub fn layer_smallness(a: &VectorField, seed: u64) -> f64 {
    let grid = *a.grid();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: f64 = 0.0;
    for _ in 0..DELTA_PANEL_SIZE {
        let phi = perp_grad(&random_bubble_stream(&grid, &mut rng));
        let num: f64 = grid
            .nodes()
            .map(|(i, j)| grid.weight(i, j) * a.magnitude2(i, j) * phi.magnitude2(i, j))
            .sum();
        let den = phi.gradient_l2_squared();
        if den > 0.0 {
            best = best.max((num / den).sqrt());
        }
    }
    best
}

/// Harmonic lift `b` of the microrotation boundary data.
pub fn build_lift_w(w0: &ScalarTrace) -> Result<ScalarField> {
    solve_dirichlet_poisson(&w0.to_field(), &ScalarField::zeros(*w0.grid()))
}

/// Discrete `H^{1/2}(∂Ω)` surrogate: boundary L2 norm plus the double-sum
/// Slobodeckij seminorm with the shorter arclength distance.
pub fn boundary_h_half_norm<T: TraceValue>(trace: &BoundaryTrace<T>) -> f64 {
    let l = &trace.bloop;
    let ds = l.grid.h();
    let n = l.len();
    let l2: f64 = trace.values.iter().map(|&v| T::norm2(v) * ds).sum();
    let mut semi = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let d = l.loop_distance(i, j);
                semi += T::dist2(trace.values[i], trace.values[j]) / (d * d) * ds * ds;
            }
        }
    }
    (l2 + semi).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn unit(n: usize) -> GridSpec {
        GridSpec::unit_square(n).unwrap()
    }

    fn duct_v0(g: GridSpec) -> VectorTrace {
        VectorTrace::from_fn(g, |_, y| [-6.0 * y * (1.0 - y), 0.0])
    }

    #[test]
    fn loop_visits_every_boundary_node_once() {
        let g = GridSpec::new(9, 5, 2.0, 1.0).unwrap();
        let l = BoundaryLoop::new(g);
        assert_eq!(l.len(), 2 * 8 + 2 * 4);
        let mut seen = std::collections::HashSet::new();
        for (k, &(i, j)) in l.nodes().iter().enumerate() {
            assert!(g.is_boundary(i, j));
            assert!(seen.insert((i, j)));
            assert_eq!(l.position(i, j), Some(k));
        }
        assert_eq!(l.node(0), (0, 0));
        assert_abs_diff_eq!(l.arclength(l.len() - 1) + g.h(), l.perimeter(), epsilon = 1e-12);
        // counterclockwise: second node is along the bottom edge
        assert_eq!(l.node(1), (1, 0));
    }

    #[test]
    fn compatibility_examples() {
        let g = unit(17);
        assert_eq!(check_compatibility(&VectorTrace::zeros(g)), 0.0);
        let uniform = VectorTrace::constant(g, [1.0, 0.0]);
        assert_abs_diff_eq!(check_compatibility(&uniform), 0.0, epsilon = 1e-14);
        let left_only = VectorTrace::from_fn(g, |x, _| if x == 0.0 { [1.0, 0.0] } else { [0.0, 0.0] });
        let flux = check_compatibility(&left_only);
        assert_abs_diff_eq!(flux, -1.0, epsilon = 1e-12);
        assert!(flux.abs() > flux_tolerance(&left_only));
    }

    #[test]
    fn boundary_stream_of_zero_data() {
        let g = unit(9);
        let gamma = GammaSpec::new(&g, 1.0, 2.0).unwrap();
        let phi = boundary_stream(&VectorTrace::zeros(g), &gamma).unwrap();
        assert!(phi.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn boundary_stream_increases_across_uniform_inflow() {
        // inflow v0·n = −1 through the left edge, outflow through the right
        let g = unit(17);
        let v0 = VectorTrace::constant(g, [1.0, 0.0]);
        // left edge is s ∈ [3, 4]
        let gamma = GammaSpec::new(&g, 3.0, 4.0).unwrap();
        let phi = boundary_stream(&v0, &gamma).unwrap();
        let a = gamma.anchor_index;
        let l = phi.boundary_loop();
        for &k in gamma.nodes() {
            let expected = l.arclength(k) - l.arclength(a);
            assert_abs_diff_eq!(phi.value(k), expected, epsilon = 1e-12);
        }
    }

    #[test]
    fn boundary_stream_matches_duct_restriction() {
        let psi = |y: f64| y * y * (3.0 - 2.0 * y);
        for n in [17, 33] {
            let g = unit(n);
            let gamma = GammaSpec::new(&g, 1.0, 2.0).unwrap();
            let phi = boundary_stream(&duct_v0(g), &gamma).unwrap();
            let (ai, aj) = phi.boundary_loop().node(gamma.anchor_index);
            let shift = psi(g.y(aj));
            let _ = ai;
            let dev = phi
                .boundary_loop()
                .nodes()
                .iter()
                .enumerate()
                .map(|(k, &(_, j))| (phi.value(k) - (psi(g.y(j)) - shift)).abs())
                .fold(0.0, f64::max);
            assert!(dev <= 2.0 * g.h() * g.h(), "dev {dev} at n = {n}");
        }
    }

    #[test]
    fn incompatible_data_is_rejected() {
        let g = unit(9);
        let v0 = VectorTrace::from_fn(g, |x, _| if x == 0.0 { [1.0, 0.0] } else { [0.0, 0.0] });
        let gamma = GammaSpec::new(&g, 3.0, 4.0).unwrap();
        assert!(matches!(
            boundary_stream(&v0, &gamma),
            Err(Error::IncompatibleFlux { .. })
        ));
    }

    #[test]
    fn strict_inflow_check() {
        let g = unit(9);
        let v0 = VectorTrace::constant(g, [1.0, 0.0]);
        let right = GammaSpec::new(&g, 1.0, 2.0).unwrap();
        assert!(matches!(
            right.check_strict_inflow(&v0, DEFAULT_FLUX_FLOOR),
            Err(Error::GammaNotInflow { .. })
        ));
        let left = GammaSpec::new(&g, 3.0, 4.0).unwrap();
        left.check_strict_inflow(&v0, DEFAULT_FLUX_FLOOR).unwrap();
    }

    #[test]
    fn density_law_examples() {
        let g = unit(9);
        let gamma = GammaSpec::new(&g, 1.0, 2.0).unwrap();
        let v0 = duct_v0(g);
        let phi = boundary_stream(&v0, &gamma).unwrap();
        let law = build_density_law(&ScalarTrace::constant(g, 2.0), &phi, &gamma).unwrap();
        assert_eq!(law.lipschitz(), 0.0);
        for y in [-10.0, 0.0, 0.3, 5.0] {
            assert_eq!(law.eval(y), 2.0);
        }

        let two = DensityLaw::new(vec![0.0, 1.0], vec![1.0, 3.0]).unwrap();
        assert_abs_diff_eq!(two.eval(0.5), 2.0, epsilon = 1e-15);
        assert_eq!(two.eval(-3.0), 1.0);
        assert_eq!(two.eval(7.0), 3.0);
        assert_eq!(two.sup_norm(), 3.0);
        assert_eq!(two.lipschitz(), 2.0);
    }

    #[test]
    fn density_law_on_unit_inflow_is_shifted_profile() {
        // v0·n = −1 on the left edge, ρ0(s) = 1 + (s − s_start)
        let g = unit(17);
        let v0 = VectorTrace::constant(g, [1.0, 0.0]);
        let gamma = GammaSpec::new(&g, 3.0, 4.0).unwrap();
        let phi = boundary_stream(&v0, &gamma).unwrap();
        let anchor_s = phi.boundary_loop().arclength(gamma.anchor_index);
        let rho0 = ScalarTrace::from_arclength(g, |s| 1.0 + (s - anchor_s));
        let law = build_density_law(&rho0, &phi, &gamma).unwrap();
        for y in [0.0, 0.25, 0.5, 0.8] {
            assert_abs_diff_eq!(law.eval(y), 1.0 + y, epsilon = 1e-12);
        }
        let top = *law.breakpoints().last().unwrap();
        assert_abs_diff_eq!(law.eval(top + 1.0), 1.0 + top, epsilon = 1e-12);
        assert_eq!(law.eval(-1.0), 1.0);
    }

    #[test]
    fn density_law_is_exact_at_gamma_nodes_and_positive() {
        let g = unit(33);
        let gamma = GammaSpec::new(&g, 1.0, 2.0).unwrap();
        let phi = boundary_stream(&duct_v0(g), &gamma).unwrap();
        let rho0 = ScalarTrace::from_fn(g, |x, y| 1.0 + 0.3 * (5.0 * y).sin().powi(2) + x);
        let law = build_density_law(&rho0, &phi, &gamma).unwrap();
        for &k in gamma.nodes() {
            assert_eq!(law.eval(phi.value(k)), rho0.value(k));
        }
        let lo = law.min_value();
        for t in 0..10_000 {
            let y = -2.0 + 4.0 * t as f64 / 9999.0;
            assert!(law.eval(y) >= lo && lo > 0.0);
        }
    }

    #[test]
    fn density_law_rejects_bad_data() {
        let g = unit(9);
        let gamma = GammaSpec::new(&g, 1.0, 2.0).unwrap();
        let phi = boundary_stream(&duct_v0(g), &gamma).unwrap();
        let bad = ScalarTrace::constant(g, 0.0);
        assert!(matches!(
            build_density_law(&bad, &phi, &gamma),
            Err(Error::NonpositiveDensity { .. })
        ));
        // reversed flow: φ_b decreases along Γ
        let rev = VectorTrace::from_fn(g, |_, y| [6.0 * y * (1.0 - y), 0.0]);
        let phi_rev = boundary_stream(&rev, &gamma).unwrap();
        assert!(matches!(
            build_density_law(&ScalarTrace::constant(g, 1.0), &phi_rev, &gamma),
            Err(Error::GammaNotInflow { .. })
        ));
    }

    #[test]
    fn hopf_extension_zero_data() {
        let g = unit(17);
        let v0 = VectorTrace::zeros(g);
        let gamma = GammaSpec::new(&g, 1.0, 2.0).unwrap();
        let phi = boundary_stream(&v0, &gamma).unwrap();
        let ext = build_hopf_extension(&v0, &phi, 0.125, DEFAULT_PANEL_SEED).unwrap();
        assert_eq!(ext.a.max_abs(), 0.0);
        assert_eq!(ext.measured_delta, 0.0);
    }

    #[test]
    fn hopf_extension_rejects_thin_layers() {
        let g = unit(17);
        let v0 = VectorTrace::zeros(g);
        let gamma = GammaSpec::new(&g, 1.0, 2.0).unwrap();
        let phi = boundary_stream(&v0, &gamma).unwrap();
        assert!(matches!(
            build_hopf_extension(&v0, &phi, 0.1, 1),
            Err(Error::EpsTooSmall { .. })
        ));
    }

    #[test]
    fn hopf_extension_invariants_on_duct() {
        let g = unit(33);
        let v0 = duct_v0(g);
        let gamma = GammaSpec::new(&g, 1.0, 2.0).unwrap();
        let phi = boundary_stream(&v0, &gamma).unwrap();
        let eps = 0.125;
        let ext = build_hopf_extension(&v0, &phi, eps, DEFAULT_PANEL_SEED).unwrap();
        let bound = 1e-13 * ext.a.max_abs() / g.h();
        assert!(crate::fields::max_interior_div(&ext.a) <= bound);
        for (i, j) in g.nodes() {
            if g.wall_distance(i, j) > eps {
                assert_eq!(ext.a.at(i, j), [0.0, 0.0]);
            }
        }
        let l = v0.boundary_loop();
        for k in 0..l.len() {
            let (i, j) = l.node(k);
            let a = ext.a.at(i, j);
            let v = v0.value(k);
            if l.is_corner(k) {
                assert_eq!(a, v);
            } else {
                let t = l.tangent(k);
                let n = l.normal(k);
                assert!((dot(a, t) - dot(v, t)).abs() <= 1e-12);
                // centered difference of trapezoid fluxes: error h²·v''/4, |v''| = 12
                assert!((dot(a, n) - dot(v, n)).abs() <= 3.0 * g.h() * g.h() + 1e-12);
            }
        }
    }

    #[test]
    fn layer_smallness_shrinks_with_the_layer() {
        let g = unit(33);
        let v0 = duct_v0(g);
        let gamma = GammaSpec::new(&g, 1.0, 2.0).unwrap();
        let phi = boundary_stream(&v0, &gamma).unwrap();
        let wide = build_hopf_extension(&v0, &phi, 0.25, DEFAULT_PANEL_SEED).unwrap();
        let thin = build_hopf_extension(&v0, &phi, 0.125, DEFAULT_PANEL_SEED).unwrap();
        assert!(thin.measured_delta < wide.measured_delta);
        assert!(thin.measured_delta > 0.0);
    }

    #[test]
    fn lift_examples() {
        let g = unit(9);
        assert_eq!(build_lift_w(&ScalarTrace::zeros(g)).unwrap().max_abs(), 0.0);
        let c = build_lift_w(&ScalarTrace::constant(g, 1.7)).unwrap();
        for (i, j) in g.nodes() {
            assert_abs_diff_eq!(c.at(i, j), 1.7, epsilon = 1e-13);
        }
        let w0 = ScalarTrace::from_fn(g, |x, _| x);
        let b = build_lift_w(&w0).unwrap();
        for (i, j) in g.nodes() {
            assert_abs_diff_eq!(b.at(i, j), g.x(i), epsilon = 1e-13);
        }
        let l = w0.boundary_loop();
        for k in 0..l.len() {
            let (i, j) = l.node(k);
            assert_eq!(b.at(i, j), w0.value(k));
        }
    }

    #[test]
    fn h_half_norm_examples() {
        let g = unit(17);
        assert_eq!(boundary_h_half_norm(&ScalarTrace::zeros(g)), 0.0);
        let c = boundary_h_half_norm(&ScalarTrace::constant(g, 3.0));
        assert_abs_diff_eq!(c, 3.0 * 2.0, epsilon = 1e-12);

        let pi = std::f64::consts::PI;
        let coarse = boundary_h_half_norm(&ScalarTrace::from_arclength(unit(33), |s| {
            (2.0 * pi * s / 4.0).sin()
        }));
        let fine = boundary_h_half_norm(&ScalarTrace::from_arclength(unit(65), |s| {
            (2.0 * pi * s / 4.0).sin()
        }));
        assert!(coarse.is_finite() && fine.is_finite());
        assert!(((coarse - fine) / fine).abs() < 0.02, "{coarse} vs {fine}");
    }

    #[test]
    fn resampling_is_linear_with_clamped_ends() {
        let g = unit(9);
        let t = ScalarTrace::resample(g, &[(0.5, 1.0), (1.5, 3.0)]).unwrap();
        let l = t.boundary_loop();
        for k in 0..l.len() {
            let s = l.arclength(k);
            let expected = if s <= 0.5 {
                1.0
            } else if s >= 1.5 {
                3.0
            } else {
                1.0 + 2.0 * (s - 0.5)
            };
            assert_abs_diff_eq!(t.value(k), expected, epsilon = 1e-14);
        }
        assert!(ScalarTrace::resample(g, &[(1.0, 0.0), (0.5, 1.0)]).is_err());
    }
}
