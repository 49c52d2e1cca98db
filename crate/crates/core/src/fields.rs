//! Node-centered fields on a uniform rectangular grid, second-order
//! difference operators and discrete norms.
//!
//! Nodes are `(i·h, j·h)` for `0 ≤ i < nx`, `0 ≤ j < ny` and are stored
//! row-major with `i` varying fastest. A first derivative along an axis is
//! centered whenever the node has neighbors on both sides along that axis and
//! one-sided (second order, three points) otherwise. In particular the
//! derivative *along* an edge is centered at every non-corner boundary node,
//! which makes `div(perp_grad(ψ))` vanish identically at interior nodes.

use crate::error::{Error, Result};

/// Uniform grid with square cells covering `[0, lx] × [0, ly]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    nx: usize,
    ny: usize,
    lx: f64,
    ly: f64,
    h: f64,
}

impl GridSpec {
    pub fn new(nx: usize, ny: usize, lx: f64, ly: f64) -> Result<Self> {
        if nx < 5 || ny < 5 {
            return Err(Error::InvalidGrid(format!(
                "need at least 5 nodes per axis, got {nx}x{ny}"
            )));
        }
        if !(lx.is_finite() && ly.is_finite() && lx > 0.0 && ly > 0.0) {
            return Err(Error::InvalidGrid(format!(
                "edge lengths must be positive, got {lx} x {ly}"
            )));
        }
        let hx = lx / (nx - 1) as f64;
        let hy = ly / (ny - 1) as f64;
        if (hx - hy).abs() > 1e-12 * hx.max(hy) {
            return Err(Error::InvalidGrid(format!(
                "cells must be square: lx/(nx-1) = {hx}, ly/(ny-1) = {hy}"
            )));
        }
        Ok(Self {
            nx,
            ny,
            lx,
            ly,
            h: hx,
        })
    }

    /// Unit square with `n × n` nodes.
    pub fn unit_square(n: usize) -> Result<Self> {
        Self::new(n, n, 1.0, 1.0)
    }

    pub fn nx(&self) -> usize {
        self.nx
    }
    pub fn ny(&self) -> usize {
        self.ny
    }
    pub fn lx(&self) -> f64 {
        self.lx
    }
    pub fn ly(&self) -> f64 {
        self.ly
    }
    pub fn h(&self) -> f64 {
        self.h
    }
    pub fn len(&self) -> usize {
        self.nx * self.ny
    }
    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    #[inline]
    pub fn x(&self, i: usize) -> f64 {
        if i == self.nx - 1 {
            self.lx
        } else {
            i as f64 * self.h
        }
    }

    #[inline]
    pub fn y(&self, j: usize) -> f64 {
        if j == self.ny - 1 {
            self.ly
        } else {
            j as f64 * self.h
        }
    }

    #[inline]
    pub fn is_boundary(&self, i: usize, j: usize) -> bool {
        i == 0 || j == 0 || i == self.nx - 1 || j == self.ny - 1
    }

    /// Number of interior nodes.
    pub fn interior_len(&self) -> usize {
        (self.nx - 2) * (self.ny - 2)
    }

    /// Index of an interior node in the interior-only (row-major) numbering.
    #[inline]
    pub fn interior_idx(&self, i: usize, j: usize) -> usize {
        (j - 1) * (self.nx - 2) + (i - 1)
    }

    /// Iterator over interior nodes in row-major order.
    pub fn interior(&self) -> impl Iterator<Item = (usize, usize)> {
        let (nx, ny) = (self.nx, self.ny);
        (1..ny - 1).flat_map(move |j| (1..nx - 1).map(move |i| (i, j)))
    }

    /// Iterator over all nodes in row-major order.
    pub fn nodes(&self) -> impl Iterator<Item = (usize, usize)> {
        let (nx, ny) = (self.nx, self.ny);
        (0..ny).flat_map(move |j| (0..nx).map(move |i| (i, j)))
    }

    /// Trapezoid quadrature weight of node `(i, j)`.
    #[inline]
    pub fn weight(&self, i: usize, j: usize) -> f64 {
        let wx = if i == 0 || i == self.nx - 1 { 0.5 } else { 1.0 };
        let wy = if j == 0 || j == self.ny - 1 { 0.5 } else { 1.0 };
        wx * wy * self.h * self.h
    }

    /// Distance from node `(i, j)` to the boundary of the rectangle.
    pub fn wall_distance(&self, i: usize, j: usize) -> f64 {
        let (x, y) = (self.x(i), self.y(j));
        x.min(self.lx - x).min(y).min(self.ly - y).max(0.0)
    }

    pub(crate) fn check_same(&self, other: &GridSpec) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::IncompatibleGrids)
        }
    }
}

/// Scalar nodal field.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: GridSpec,
    values: Vec<f64>,
}

/// Two-component nodal vector field.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    grid: GridSpec,
    vx: Vec<f64>,
    vy: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(grid: GridSpec) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn constant(grid: GridSpec, c: f64) -> Self {
        Self {
            grid,
            values: vec![c; grid.len()],
        }
    }

    pub fn from_fn(grid: GridSpec, f: impl Fn(f64, f64) -> f64) -> Self {
        let values = grid.nodes().map(|(i, j)| f(grid.x(i), grid.y(j))).collect();
        Self { grid, values }
    }

    pub fn from_values(grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::IncompatibleGrids);
        }
        Ok(Self { grid, values })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[self.grid.idx(i, j)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let k = self.grid.idx(i, j);
        self.values[k] = v;
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            grid: self.grid,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_with(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.grid.check_same(&other.grid)?;
        Ok(Self {
            grid: self.grid,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn scaled(&self, c: f64) -> Self {
        self.map(|v| c * v)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Trapezoid-weighted mean over the rectangle.
    pub fn mean(&self) -> f64 {
        let g = &self.grid;
        let total: f64 = g.nodes().map(|(i, j)| g.weight(i, j) * self.at(i, j)).sum();
        total / (g.lx * g.ly)
    }

    /// First derivative in x (centered where possible, one-sided otherwise).
    #[inline]
    pub fn dx(&self, i: usize, j: usize) -> f64 {
        let g = &self.grid;
        let h = g.h;
        if i == 0 {
            (-3.0 * self.at(0, j) + 4.0 * self.at(1, j) - self.at(2, j)) / (2.0 * h)
        } else if i == g.nx - 1 {
            (3.0 * self.at(i, j) - 4.0 * self.at(i - 1, j) + self.at(i - 2, j)) / (2.0 * h)
        } else {
            (self.at(i + 1, j) - self.at(i - 1, j)) / (2.0 * h)
        }
    }

    /// First derivative in y (centered where possible, one-sided otherwise).
    #[inline]
    pub fn dy(&self, i: usize, j: usize) -> f64 {
        let g = &self.grid;
        let h = g.h;
        if j == 0 {
            (-3.0 * self.at(i, 0) + 4.0 * self.at(i, 1) - self.at(i, 2)) / (2.0 * h)
        } else if j == g.ny - 1 {
            (3.0 * self.at(i, j) - 4.0 * self.at(i, j - 1) + self.at(i, j - 2)) / (2.0 * h)
        } else {
            (self.at(i, j + 1) - self.at(i, j - 1)) / (2.0 * h)
        }
    }

    #[inline]
    fn dxx(&self, i: usize, j: usize) -> f64 {
        let g = &self.grid;
        let h2 = g.h * g.h;
        if i == 0 {
            (2.0 * self.at(0, j) - 5.0 * self.at(1, j) + 4.0 * self.at(2, j) - self.at(3, j)) / h2
        } else if i == g.nx - 1 {
            (2.0 * self.at(i, j) - 5.0 * self.at(i - 1, j) + 4.0 * self.at(i - 2, j)
                - self.at(i - 3, j))
                / h2
        } else {
            (self.at(i + 1, j) - 2.0 * self.at(i, j) + self.at(i - 1, j)) / h2
        }
    }

    #[inline]
    fn dyy(&self, i: usize, j: usize) -> f64 {
        let g = &self.grid;
        let h2 = g.h * g.h;
        if j == 0 {
            (2.0 * self.at(i, 0) - 5.0 * self.at(i, 1) + 4.0 * self.at(i, 2) - self.at(i, 3)) / h2
        } else if j == g.ny - 1 {
            (2.0 * self.at(i, j) - 5.0 * self.at(i, j - 1) + 4.0 * self.at(i, j - 2)
                - self.at(i, j - 3))
                / h2
        } else {
            (self.at(i, j + 1) - 2.0 * self.at(i, j) + self.at(i, j - 1)) / h2
        }
    }
}

impl VectorField {
    pub fn zeros(grid: GridSpec) -> Self {
        Self::constant(grid, [0.0, 0.0])
    }

    pub fn constant(grid: GridSpec, c: [f64; 2]) -> Self {
        Self {
            grid,
            vx: vec![c[0]; grid.len()],
            vy: vec![c[1]; grid.len()],
        }
    }

    pub fn from_fn(grid: GridSpec, f: impl Fn(f64, f64) -> [f64; 2]) -> Self {
        let mut out = Self::zeros(grid);
        for (i, j) in grid.nodes() {
            out.set(i, j, f(grid.x(i), grid.y(j)));
        }
        out
    }

    pub fn from_components(grid: GridSpec, vx: Vec<f64>, vy: Vec<f64>) -> Result<Self> {
        if vx.len() != grid.len() || vy.len() != grid.len() {
            return Err(Error::IncompatibleGrids);
        }
        Ok(Self { grid, vx, vy })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn x_component(&self) -> ScalarField {
        ScalarField {
            grid: self.grid,
            values: self.vx.clone(),
        }
    }

    pub fn y_component(&self) -> ScalarField {
        ScalarField {
            grid: self.grid,
            values: self.vy.clone(),
        }
    }

    pub fn vx(&self) -> &[f64] {
        &self.vx
    }
    pub fn vy(&self) -> &[f64] {
        &self.vy
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> [f64; 2] {
        let k = self.grid.idx(i, j);
        [self.vx[k], self.vy[k]]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: [f64; 2]) {
        let k = self.grid.idx(i, j);
        self.vx[k] = v[0];
        self.vy[k] = v[1];
    }

    /// `a·self + b·other`.
    pub fn lin_comb(&self, a: f64, other: &Self, b: f64) -> Result<Self> {
        self.grid.check_same(&other.grid)?;
        let comb = |p: &[f64], q: &[f64]| -> Vec<f64> {
            p.iter().zip(q).map(|(&u, &v)| a * u + b * v).collect()
        };
        Ok(Self {
            grid: self.grid,
            vx: comb(&self.vx, &other.vx),
            vy: comb(&self.vy, &other.vy),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.lin_comb(1.0, other, 1.0)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.lin_comb(1.0, other, -1.0)
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            grid: self.grid,
            vx: self.vx.iter().map(|v| c * v).collect(),
            vy: self.vy.iter().map(|v| c * v).collect(),
        }
    }

    /// Pointwise product with a scalar field.
    pub fn times(&self, s: &ScalarField) -> Result<Self> {
        self.grid.check_same(&s.grid)?;
        Ok(Self {
            grid: self.grid,
            vx: self.vx.iter().zip(&s.values).map(|(a, b)| a * b).collect(),
            vy: self.vy.iter().zip(&s.values).map(|(a, b)| a * b).collect(),
        })
    }

    /// Largest Euclidean node magnitude.
    pub fn max_abs(&self) -> f64 {
        self.vx
            .iter()
            .zip(&self.vy)
            .fold(0.0, |m, (a, b)| m.max(a.hypot(*b)))
    }

    pub fn is_finite(&self) -> bool {
        self.vx.iter().chain(&self.vy).all(|v| v.is_finite())
    }
}

/// `∇⊥ψ = (−∂yψ, ∂xψ)`.
pub fn perp_grad(psi: &ScalarField) -> VectorField {
    let g = *psi.grid();
    let mut out = VectorField::zeros(g);
    for (i, j) in g.nodes() {
        out.set(i, j, [-psi.dy(i, j), psi.dx(i, j)]);
    }
    out
}

pub fn div(v: &VectorField) -> ScalarField {
    let g = *v.grid();
    let (cx, cy) = (v.x_component(), v.y_component());
    let mut out = ScalarField::zeros(g);
    for (i, j) in g.nodes() {
        out.set(i, j, cx.dx(i, j) + cy.dy(i, j));
    }
    out
}

/// Planar curl `∂x v₂ − ∂y v₁`.
pub fn curl(v: &VectorField) -> ScalarField {
    let g = *v.grid();
    let (cx, cy) = (v.x_component(), v.y_component());
    let mut out = ScalarField::zeros(g);
    for (i, j) in g.nodes() {
        out.set(i, j, cy.dx(i, j) - cx.dy(i, j));
    }
    out
}

/// Curl of the out-of-plane field `(0, 0, w)`, i.e. `(∂y w, −∂x w)`.
pub fn curl_scalar(w: &ScalarField) -> VectorField {
    let g = *w.grid();
    let mut out = VectorField::zeros(g);
    for (i, j) in g.nodes() {
        out.set(i, j, [w.dy(i, j), -w.dx(i, j)]);
    }
    out
}

/// 5-point Laplacian at interior nodes; boundary rows use one-sided
/// second-order second differences and are meant for diagnostics.
pub fn laplacian(q: &ScalarField) -> ScalarField {
    let g = *q.grid();
    let mut out = ScalarField::zeros(g);
    for (i, j) in g.nodes() {
        out.set(i, j, q.dxx(i, j) + q.dyy(i, j));
    }
    out
}

pub fn laplacian_vector(v: &VectorField) -> VectorField {
    let lx = laplacian(&v.x_component());
    let ly = laplacian(&v.y_component());
    VectorField {
        grid: *v.grid(),
        vx: lx.values,
        vy: ly.values,
    }
}

/// `v·∇q` with centered differences at interior nodes; boundary nodes are zero.
pub fn advect(v: &VectorField, q: &ScalarField) -> Result<ScalarField> {
    v.grid().check_same(q.grid())?;
    let g = *q.grid();
    let mut out = ScalarField::zeros(g);
    for (i, j) in g.interior() {
        let [a, b] = v.at(i, j);
        out.set(i, j, a * q.dx(i, j) + b * q.dy(i, j));
    }
    Ok(out)
}

/// `(v·∇)q` componentwise; boundary nodes are zero.
pub fn advect_vector(v: &VectorField, q: &VectorField) -> Result<VectorField> {
    let ax = advect(v, &q.x_component())?;
    let ay = advect(v, &q.y_component())?;
    Ok(VectorField {
        grid: *q.grid(),
        vx: ax.values,
        vy: ay.values,
    })
}

/// `(v·∇)q` at every node, with one-sided differences on the boundary.
pub fn advect_vector_full(v: &VectorField, q: &VectorField) -> Result<VectorField> {
    v.grid().check_same(q.grid())?;
    let g = *q.grid();
    let (qx, qy) = (q.x_component(), q.y_component());
    let mut out = VectorField::zeros(g);
    for (i, j) in g.nodes() {
        let [a, b] = v.at(i, j);
        out.set(
            i,
            j,
            [
                a * qx.dx(i, j) + b * qx.dy(i, j),
                a * qy.dx(i, j) + b * qy.dy(i, j),
            ],
        );
    }
    Ok(out)
}

/// Discrete norm kinds (trapezoid quadrature surrogates of the Sobolev norms).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormKind {
    L2,
    H1,
    L4,
    Linf,
}

/// Common behaviour of nodal fields needed by the norms.
pub trait GridField {
    fn grid(&self) -> &GridSpec;
    /// Squared Euclidean magnitude at a node.
    fn magnitude2(&self, i: usize, j: usize) -> f64;
    /// Sum over components of the squared forward-difference gradient, integrated.
    fn gradient_l2_squared(&self) -> f64;

    fn norm(&self, kind: NormKind) -> f64 {
        let g = *self.grid();
        match kind {
            NormKind::Linf => g
                .nodes()
                .fold(0.0, |m, (i, j)| m.max(self.magnitude2(i, j).sqrt())),
            NormKind::L2 => g
                .nodes()
                .map(|(i, j)| g.weight(i, j) * self.magnitude2(i, j))
                .sum::<f64>()
                .sqrt(),
            NormKind::L4 => g
                .nodes()
                .map(|(i, j)| g.weight(i, j) * self.magnitude2(i, j).powi(2))
                .sum::<f64>()
                .powf(0.25),
            NormKind::H1 => {
                let l2 = self.norm(NormKind::L2);
                (l2 * l2 + self.gradient_l2_squared()).sqrt()
            }
        }
    }

    /// `‖∇·‖_{L2}` from forward differences.
    fn grad_norm(&self) -> f64 {
        self.gradient_l2_squared().sqrt()
    }
}

fn forward_gradient_sq(g: &GridSpec, values: &[f64]) -> f64 {
    let (nx, ny) = (g.nx, g.ny);
    let half = |k: usize, n: usize| if k == 0 || k == n - 1 { 0.5 } else { 1.0 };
    let mut total = 0.0;
    for j in 0..ny {
        for i in 0..nx - 1 {
            let d = values[g.idx(i + 1, j)] - values[g.idx(i, j)];
            total += half(j, ny) * d * d;
        }
    }
    for j in 0..ny - 1 {
        for i in 0..nx {
            let d = values[g.idx(i, j + 1)] - values[g.idx(i, j)];
            total += half(i, nx) * d * d;
        }
    }
    // (d/h)² times an h² edge weight
    total
}

impl GridField for ScalarField {
    fn grid(&self) -> &GridSpec {
        &self.grid
    }
    fn magnitude2(&self, i: usize, j: usize) -> f64 {
        self.at(i, j).powi(2)
    }
    fn gradient_l2_squared(&self) -> f64 {
        forward_gradient_sq(&self.grid, &self.values)
    }
}

impl GridField for VectorField {
    fn grid(&self) -> &GridSpec {
        &self.grid
    }
    fn magnitude2(&self, i: usize, j: usize) -> f64 {
        let [a, b] = self.at(i, j);
        a * a + b * b
    }
    fn gradient_l2_squared(&self) -> f64 {
        forward_gradient_sq(&self.grid, &self.vx) + forward_gradient_sq(&self.grid, &self.vy)
    }
}

/// Largest `|div v|` over interior nodes.
pub fn max_interior_div(v: &VectorField) -> f64 {
    let d = div(v);
    v.grid()
        .interior()
        .fold(0.0, |m, (i, j)| m.max(d.at(i, j).abs()))
}

/// L2 norm restricted to interior nodes (weight `h²` each).
pub fn interior_l2(q: &ScalarField) -> f64 {
    let g = q.grid();
    let h2 = g.h() * g.h();
    g.interior()
        .map(|(i, j)| h2 * q.at(i, j).powi(2))
        .sum::<f64>()
        .sqrt()
}
