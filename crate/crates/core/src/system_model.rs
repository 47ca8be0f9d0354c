//! Plant description, spatial grids, cascade and target states, and the
//! discrete norms used throughout.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{BackstepError, Result};
use crate::stencil::{backward_diff, forward_diff, gradient, trapezoid};
use crate::transform::{self, GainSet};

/// The cascade plant: `X' = A X + B u_x(0)`, `u_t = u_xx + lambda u` on
/// `(0, xi) ∪ (xi, l)`, control entering as a flux jump at `xi`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantSpec {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub lambda: f64,
    pub l: f64,
    pub xi: f64,
}

impl PlantSpec {
    /// Builds and validates a plant.
    pub fn new(a: DMatrix<f64>, b: DVector<f64>, lambda: f64, l: f64, xi: f64) -> Result<Self> {
        validate_plant(Self { a, b, lambda, l, xi })
    }

    pub fn n(&self) -> usize {
        self.b.len()
    }

    /// Same plant with a different actuator location (validated).
    pub fn with_xi(&self, xi: f64) -> Result<Self> {
        Self::new(self.a.clone(), self.b.clone(), self.lambda, self.l, xi)
    }

    pub fn with_lambda(&self, lambda: f64) -> Result<Self> {
        Self::new(self.a.clone(), self.b.clone(), lambda, self.l, self.xi)
    }

    fn hash_into<H: Hasher>(&self, state: &mut H) {
        for v in self.a.iter().chain(self.b.iter()) {
            v.to_bits().hash(state);
        }
        self.lambda.to_bits().hash(state);
        self.l.to_bits().hash(state);
        self.xi.to_bits().hash(state);
    }
}

/// `[B, AB, ..., A^{n-1} B]`.
pub fn controllability_matrix(a: &DMatrix<f64>, b: &DVector<f64>) -> DMatrix<f64> {
    let n = b.len();
    let mut c = DMatrix::zeros(n, n);
    let mut col = b.clone();
    for k in 0..n {
        c.set_column(k, &col);
        col = a * col;
    }
    c
}

/// Numerical rank from the singular values, relative threshold `1e-10`.
pub fn controllability_rank(a: &DMatrix<f64>, b: &DVector<f64>) -> usize {
    let c = controllability_matrix(a, b);
    let sv = c.singular_values();
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > 1e-10 * smax).count()
}

pub fn validate_plant(spec: PlantSpec) -> Result<PlantSpec> {
    let n = spec.b.len();
    if n == 0 {
        return Err(BackstepError::BadDimension("ODE dimension must be positive".into()));
    }
    if spec.a.nrows() != n || spec.a.ncols() != n {
        return Err(BackstepError::BadDimension(format!(
            "A is {}x{} but B has {} rows",
            spec.a.nrows(),
            spec.a.ncols(),
            n
        )));
    }
    if !(spec.l.is_finite() && spec.l > 0.0) {
        return Err(BackstepError::BadGeometry(format!("l = {} must be positive", spec.l)));
    }
    if !(spec.xi > 0.0 && spec.xi < spec.l) {
        return Err(BackstepError::BadGeometry(format!(
            "xi = {} must lie strictly inside (0, {})",
            spec.xi, spec.l
        )));
    }
    if !(spec.lambda.is_finite() && spec.lambda >= 0.0) {
        return Err(BackstepError::BadGeometry(format!(
            "lambda = {} must be non-negative",
            spec.lambda
        )));
    }
    let rank = controllability_rank(&spec.a, &spec.b);
    if rank < n {
        return Err(BackstepError::NotControllable { rank, n });
    }
    Ok(spec)
}

/// Piecewise-uniform grid on `[0, l]` with `xi` as an exact node.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub nodes: Vec<f64>,
    pub index_xi: usize,
    pub h1: f64,
    pub h2: f64,
    pub l: f64,
    pub xi: f64,
}

/// `N1 = max(2, round(xi/h))` cells left of `xi`, `N2 = max(2, round((l-xi)/h))`
/// cells right of it.
pub fn build_grid(l: f64, xi: f64, target_h: f64) -> Result<Grid> {
    if !(l > 0.0 && xi > 0.0 && xi < l) {
        return Err(BackstepError::BadGeometry(format!("need 0 < xi = {xi} < l = {l}")));
    }
    if !(target_h > 0.0 && target_h.is_finite()) {
        return Err(BackstepError::BadGeometry(format!("grid spacing {target_h} must be positive")));
    }
    let n1 = ((xi / target_h).round() as usize).max(2);
    let n2 = (((l - xi) / target_h).round() as usize).max(2);
    let h1 = xi / n1 as f64;
    let h2 = (l - xi) / n2 as f64;
    let mut nodes = Vec::with_capacity(n1 + n2 + 1);
    for i in 0..n1 {
        nodes.push(i as f64 * h1);
    }
    nodes.push(xi);
    for j in 1..n2 {
        nodes.push(xi + j as f64 * h2);
    }
    nodes.push(l);
    Ok(Grid { nodes, index_xi: n1, h1, h2, l, xi })
}

impl Grid {
    /// Number of cells on `[0, xi]`.
    pub fn n1(&self) -> usize {
        self.index_xi
    }

    /// Number of cells on `[xi, l]`.
    pub fn n2(&self) -> usize {
        self.nodes.len() - 1 - self.index_xi
    }

    pub fn left(&self) -> &[f64] {
        &self.nodes[..=self.index_xi]
    }

    pub fn right(&self) -> &[f64] {
        &self.nodes[self.index_xi..]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        self.hash_into(&mut h);
        h.finish()
    }

    fn hash_into<H: Hasher>(&self, state: &mut H) {
        self.index_xi.hash(state);
        for v in &self.nodes {
            v.to_bits().hash(state);
        }
    }

    /// Fingerprint of a (plant, grid) pair, used to tie gains to their grid.
    pub fn fingerprint_with(&self, plant: &PlantSpec) -> u64 {
        let mut h = DefaultHasher::new();
        self.hash_into(&mut h);
        plant.hash_into(&mut h);
        h.finish()
    }

    /// Linear interpolation of a full-grid field at `x`.
    pub fn interpolate(&self, field: &[f64], x: f64) -> f64 {
        let x = x.clamp(0.0, self.l);
        let k = self.nodes.partition_point(|&v| v <= x);
        if k == 0 {
            return field[0];
        }
        if k >= self.nodes.len() {
            return field[self.nodes.len() - 1];
        }
        let (x0, x1) = (self.nodes[k - 1], self.nodes[k]);
        let s = (x - x0) / (x1 - x0);
        field[k - 1] * (1.0 - s) + field[k] * s
    }

    /// Samples `f` on the full grid.
    pub fn sample(&self, f: impl Fn(f64) -> f64) -> Vec<f64> {
        self.nodes.iter().map(|&x| f(x)).collect()
    }
}

fn h1_sums(u: &[f64], h: f64) -> (f64, f64) {
    let sq: Vec<f64> = u.iter().map(|v| v * v).collect();
    let d: Vec<f64> = gradient(u, h).iter().map(|v| v * v).collect();
    (trapezoid(&sq, h), trapezoid(&d, h))
}

fn check_len(grid: &Grid, x: &DVector<f64>, left: usize, right: usize) -> Result<()> {
    if left != grid.n1() + 1 || right != grid.n2() + 1 {
        return Err(BackstepError::BadDimension(format!(
            "field restrictions have {left}/{right} samples, grid expects {}/{}",
            grid.n1() + 1,
            grid.n2() + 1
        )));
    }
    if x.is_empty() {
        return Err(BackstepError::BadDimension("empty ODE state".into()));
    }
    Ok(())
}

/// Plant state: ODE vector and the PDE field split at `xi`. Both
/// restrictions store the `xi` node.
#[derive(Debug, Clone)]
pub struct CascadeState {
    pub grid: Arc<Grid>,
    pub x: DVector<f64>,
    pub u1: Vec<f64>,
    pub u2: Vec<f64>,
    pub t: f64,
}

impl CascadeState {
    /// Validates shapes, the Dirichlet conditions and continuity at `xi`
    /// (to `1e-9` relative to the field size).
    pub fn new(grid: Arc<Grid>, x: DVector<f64>, u1: Vec<f64>, u2: Vec<f64>, t: f64) -> Result<Self> {
        check_len(&grid, &x, u1.len(), u2.len())?;
        let scale = u1.iter().chain(&u2).fold(1.0_f64, |m, v| m.max(v.abs()));
        let tol = 1e-9 * scale;
        if u1[0].abs() > tol || u2[u2.len() - 1].abs() > tol {
            return Err(BackstepError::BadGeometry(
                "field must vanish at x = 0 and x = l".into(),
            ));
        }
        if (u1[u1.len() - 1] - u2[0]).abs() > tol {
            return Err(BackstepError::BadGeometry(format!(
                "field is discontinuous at xi: {} vs {}",
                u1[u1.len() - 1],
                u2[0]
            )));
        }
        Ok(Self { grid, x, u1, u2, t })
    }

    /// Splits a full-grid field; continuity holds by construction.
    pub fn from_field(grid: Arc<Grid>, x: DVector<f64>, u: &[f64], t: f64) -> Result<Self> {
        if u.len() != grid.len() {
            return Err(BackstepError::BadDimension(format!(
                "field has {} samples, grid has {}",
                u.len(),
                grid.len()
            )));
        }
        let m = grid.index_xi;
        Self::new(grid, x, u[..=m].to_vec(), u[m..].to_vec(), t)
    }

    pub fn zero(grid: Arc<Grid>, n: usize) -> Self {
        let (a, b) = (grid.n1() + 1, grid.n2() + 1);
        Self { grid, x: DVector::zeros(n), u1: vec![0.0; a], u2: vec![0.0; b], t: 0.0 }
    }

    pub fn field(&self) -> Vec<f64> {
        let mut u = self.u1.clone();
        u.extend_from_slice(&self.u2[1..]);
        u
    }

    pub fn value_at_xi(&self) -> f64 {
        self.u1[self.u1.len() - 1]
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            grid: self.grid.clone(),
            x: &self.x * c,
            u1: self.u1.iter().map(|v| v * c).collect(),
            u2: self.u2.iter().map(|v| v * c).collect(),
            t: self.t,
        }
    }

    /// `self + c * other`.
    pub fn axpy(&self, c: f64, other: &Self) -> Self {
        Self {
            grid: self.grid.clone(),
            x: &self.x + &other.x * c,
            u1: self.u1.iter().zip(&other.u1).map(|(a, b)| a + c * b).collect(),
            u2: self.u2.iter().zip(&other.u2).map(|(a, b)| a + c * b).collect(),
            t: self.t,
        }
    }

    /// `sqrt(|X|^2 + ||u1||^2 + ||u2||^2)`.
    pub fn norm_h(&self) -> f64 {
        let (l1, _) = h1_sums(&self.u1, self.grid.h1);
        let (l2, _) = h1_sums(&self.u2, self.grid.h2);
        (self.x.norm_squared() + l1 + l2).sqrt()
    }

    /// H norm plus the first-derivative energy on each side of `xi`.
    pub fn norm_y(&self) -> f64 {
        let (l1, d1) = h1_sums(&self.u1, self.grid.h1);
        let (l2, d2) = h1_sums(&self.u2, self.grid.h2);
        (self.x.norm_squared() + l1 + d1 + l2 + d2).sqrt()
    }

    /// One-sided slopes `(u_x(xi-), u_x(xi+))`.
    pub fn slopes_at_xi(&self) -> (f64, f64) {
        let m = self.u1.len() - 1;
        (
            backward_diff(self.u1[m], self.u1[m - 1], self.u1[m - 2], self.grid.h1),
            forward_diff(self.u2[0], self.u2[1], self.u2[2], self.grid.h2),
        )
    }

    /// `u_x(0)`, the flux driving the ODE.
    pub fn flux_at_zero(&self) -> f64 {
        forward_diff(self.u1[0], self.u1[1], self.u1[2], self.grid.h1)
    }
}

/// Target-system state. `w1` and `w2` are the restrictions of `w` to each
/// side of `xi`; a transformed plant state may carry a value gap there.
#[derive(Debug, Clone)]
pub struct TargetState {
    pub grid: Arc<Grid>,
    pub x: DVector<f64>,
    pub w1: Vec<f64>,
    pub w2: Vec<f64>,
    pub t: f64,
}

impl TargetState {
    pub fn new(grid: Arc<Grid>, x: DVector<f64>, w1: Vec<f64>, w2: Vec<f64>, t: f64) -> Result<Self> {
        check_len(&grid, &x, w1.len(), w2.len())?;
        let scale = w1.iter().chain(&w2).fold(1.0_f64, |m, v| m.max(v.abs()));
        if w1[0].abs() > 1e-9 * scale || w2[w2.len() - 1].abs() > 1e-9 * scale {
            return Err(BackstepError::BadGeometry(
                "target field must vanish at x = 0 and x = l".into(),
            ));
        }
        Ok(Self { grid, x, w1, w2, t })
    }

    /// Continuous target state from a full-grid field.
    pub fn from_field(grid: Arc<Grid>, x: DVector<f64>, w: &[f64], t: f64) -> Result<Self> {
        if w.len() != grid.len() {
            return Err(BackstepError::BadDimension(format!(
                "field has {} samples, grid has {}",
                w.len(),
                grid.len()
            )));
        }
        let m = grid.index_xi;
        Self::new(grid, x, w[..=m].to_vec(), w[m..].to_vec(), t)
    }

    /// Packed field on all nodes; the `xi` node carries the left restriction.
    pub fn field(&self) -> Vec<f64> {
        let mut w = self.w1.clone();
        w.extend_from_slice(&self.w2[1..]);
        w
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            grid: self.grid.clone(),
            x: &self.x * c,
            w1: self.w1.iter().map(|v| v * c).collect(),
            w2: self.w2.iter().map(|v| v * c).collect(),
            t: self.t,
        }
    }

    pub fn axpy(&self, c: f64, other: &Self) -> Self {
        Self {
            grid: self.grid.clone(),
            x: &self.x + &other.x * c,
            w1: self.w1.iter().zip(&other.w1).map(|(a, b)| a + c * b).collect(),
            w2: self.w2.iter().zip(&other.w2).map(|(a, b)| a + c * b).collect(),
            t: self.t,
        }
    }

    /// Returns `(||w||^2, ||w_x||^2)`, each integrated piecewise.
    pub fn field_energies(&self) -> (f64, f64) {
        let (l1, d1) = h1_sums(&self.w1, self.grid.h1);
        let (l2, d2) = h1_sums(&self.w2, self.grid.h2);
        (l1 + l2, d1 + d2)
    }

    pub fn norm_h(&self) -> f64 {
        let (l2, _) = self.field_energies();
        (self.x.norm_squared() + l2).sqrt()
    }

    /// `sqrt(|X|^2 + ||w||^2 + ||w_x||^2)` over the whole interval.
    pub fn norm_z(&self) -> f64 {
        let (l2, d2) = self.field_energies();
        (self.x.norm_squared() + l2 + d2).sqrt()
    }

    pub fn flux_at_zero(&self) -> f64 {
        forward_diff(self.w1[0], self.w1[1], self.w1[2], self.grid.h1)
    }
}

/// Residuals of the two compatibility conditions on initial data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Compatibility {
    /// `|w1(xi) - w2(xi)|`.
    pub c1: f64,
    /// `|w1_x(xi) - w2_x(xi)|` written through the plant state and kernels.
    pub c2: f64,
    pub pass: bool,
}

/// Evaluates both compatibility conditions for `state0` under `gains`.
pub fn check_compatibility(state0: &CascadeState, gains: &GainSet, tol: f64) -> Result<Compatibility> {
    gains.check_grid(&state0.grid)?;
    let (left, right) = transform::interface_values(state0, gains);
    let c1 = (left - right).abs();
    // Slope condition: u1'(xi) - u2'(xi) must equal the feedback law.
    let (d_left, d_right) = state0.slopes_at_xi();
    let c2 = ((d_left - d_right) - transform::feedback_control(state0, gains)?).abs();
    Ok(Compatibility { c1, c2, pass: c1 <= tol && c2 <= tol })
}
