//! Gain kernels.
//!
//! `k1` lives on `{0 <= y <= x <= xi}` and is obtained from a Goursat problem
//! in characteristic coordinates `zeta = x + y`, `eta = x - y`, solved by
//! successive approximations. `k2` lives on `{xi <= x <= y <= l}` and has the
//! closed form `k2(x, y) = lambda (l - y) Psi(lambda ((l-x)^2 - (l-y)^2))`
//! with `Psi(z) = I1(sqrt z) / sqrt z`. The same Goursat solver applied to
//! the reflected `k2` problem serves as an independent cross-check.

use nalgebra::RowDVector;

use crate::error::{BackstepError, Result};
use crate::gain_synthesis::PhiFunction;
use crate::system_model::{Grid, PlantSpec};

const MAX_ITERATIONS: usize = 200;

/// `Psi(z) = (1/2) sum_{m>=0} (z/4)^m / (m! (m+1)!)`, entire in `z`.
fn psi_series(z: f64) -> f64 {
    let q = z / 4.0;
    let mut term = 0.5;
    let mut sum = 0.0;
    let mut m = 0.0;
    loop {
        sum += term;
        m += 1.0;
        term *= q / (m * (m + 1.0));
        if term.abs() <= 1e-17 * sum.abs() || m > 500.0 {
            return sum + term;
        }
    }
}

/// `I1(sqrt z) / sqrt z`, continuous at `z = 0` with value `1/2`.
pub fn psi(z: f64) -> Result<f64> {
    if z < 0.0 || z.is_nan() {
        return Err(BackstepError::NegativeArgument(z));
    }
    Ok(psi_series(z))
}

/// Closed-form `k2` for reaction coefficient `lambda` on `[0, l]`.
///
/// Uses the entire series, so it may also be evaluated just outside the
/// triangle `x <= y` (needed by one-sided differences in `x`).
pub fn k2_closed_form(lambda: f64, l: f64, x: f64, y: f64) -> f64 {
    let (s, t) = (l - x, l - y);
    lambda * t * psi_series(lambda * (s * s - t * t))
}

/// `k2(x, y)` on `xi <= x <= y <= l`.
pub fn k2_eval(plant: &PlantSpec, x: f64, y: f64) -> Result<f64> {
    let slack = 1e-12 * plant.l;
    if !(x >= plant.xi - slack && x <= y + slack && y <= plant.l + slack) {
        return Err(BackstepError::OutOfDomain(format!(
            "k2 queried at ({x}, {y}) outside xi <= x <= y <= l"
        )));
    }
    Ok(k2_closed_form(plant.lambda, plant.l, x, y))
}

/// `G_{zeta eta} = c G` on `T0 = {0 <= eta <= extent, eta <= zeta <= 2 extent - eta}`
/// with `G(eta, eta) = gamma(eta)` and `G(zeta, 0) = delta0(zeta)`.
pub struct GoursatProblem<'a> {
    pub c: f64,
    pub gamma: Box<dyn Fn(f64) -> f64 + 'a>,
    pub delta0: Box<dyn Fn(f64) -> f64 + 'a>,
    pub extent: f64,
}

/// One successive-approximation step: the measured increment and its
/// factorial majorant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub n: usize,
    pub measured: f64,
    pub bound: f64,
}

/// Sampled solution of a [`GoursatProblem`] on a uniform `(zeta, eta)` lattice.
#[derive(Debug, Clone)]
pub struct GoursatSolution {
    pub h: f64,
    pub n_eta: usize,
    values: Vec<f64>,
    pub history: Vec<IterationRecord>,
    pub tail_bound: f64,
}

impl GoursatSolution {
    /// `G(zeta_i, eta_j)` with `j <= i <= 2 n_eta - j`.
    pub fn at(&self, i: usize, j: usize) -> f64 {
        debug_assert!(j <= i && i + j <= 2 * self.n_eta);
        self.values[i * (self.n_eta + 1) + j]
    }

    pub fn terms(&self) -> usize {
        self.history.len()
    }
}

/// Integral operator `I[G](zeta, eta) = int_eta^zeta int_0^eta G(t, s) ds dt`
/// by nested cumulative trapezoid sums.
fn integral_operator(g: &[f64], ne: usize, h: f64, out: &mut [f64]) {
    let z = 2 * ne;
    let w = ne + 1;
    let idx = |i: usize, j: usize| i * w + j;
    // inner[i, j] = int_0^{eta_j} G(zeta_i, s) ds
    let mut inner = vec![0.0; g.len()];
    for i in 0..=z {
        let jmax = i.min(z - i).min(ne);
        let mut acc = 0.0;
        for j in 1..=jmax {
            acc += 0.5 * h * (g[idx(i, j - 1)] + g[idx(i, j)]);
            inner[idx(i, j)] = acc;
        }
    }
    for j in 0..=ne {
        out[idx(j, j)] = 0.0;
        let mut acc = 0.0;
        for i in j + 1..=z - j {
            acc += 0.5 * h * (inner[idx(i - 1, j)] + inner[idx(i, j)]);
            out[idx(i, j)] = acc;
        }
    }
}

/// Successive approximations `G^{n+1} = gamma(eta) + delta0(zeta) - delta0(eta) + c I[G^n]`
/// starting from `G^0 = 0`.
///
/// Stops once both the measured increment and its majorant
/// `L c^n Z^{2n+1} / (n!(n+1)!) + mu c^n Z^{2n} / (n!)^2`
/// (`Z = 2 extent`, `mu = max|gamma|`, `L` the edge-data Lipschitz constant)
/// are at most `tail_tol`.
pub fn solve_goursat(p: &GoursatProblem<'_>, h: f64, tail_tol: f64) -> Result<GoursatSolution> {
    if !(h > 0.0 && p.extent > 0.0) {
        return Err(BackstepError::BadGeometry(format!("Goursat grid h = {h}, extent = {}", p.extent)));
    }
    if !(tail_tol > 0.0) {
        return Err(BackstepError::Config(format!("tail_tol = {tail_tol} must be positive")));
    }
    let ne = ((p.extent / h).round() as usize).max(1);
    let hg = p.extent / ne as f64;
    let z = 2 * ne;
    let w = ne + 1;
    let idx = |i: usize, j: usize| i * w + j;

    let gamma: Vec<f64> = (0..=ne).map(|j| (p.gamma)(j as f64 * hg)).collect();
    let delta: Vec<f64> = (0..=z).map(|i| (p.delta0)(i as f64 * hg)).collect();
    let mu = gamma.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let lip = delta.windows(2).fold(0.0_f64, |m, d| m.max((d[1] - d[0]).abs() / hg));
    let zmax = 2.0 * p.extent;

    let mut base = vec![0.0; (z + 1) * w];
    for j in 0..=ne {
        for i in j..=z - j {
            base[idx(i, j)] = gamma[j] + delta[i] - delta[j];
        }
    }

    let mut g = vec![0.0; base.len()];
    let mut next = vec![0.0; base.len()];
    let mut integral = vec![0.0; base.len()];
    let mut history = Vec::new();
    // t_n = c^n Z^{2n} / (n!)^2
    let mut t_n = 1.0;
    for n in 0..MAX_ITERATIONS {
        integral_operator(&g, ne, hg, &mut integral);
        let mut measured: f64 = 0.0;
        for j in 0..=ne {
            for i in j..=z - j {
                let k = idx(i, j);
                next[k] = base[k] + p.c * integral[k];
                measured = measured.max((next[k] - g[k]).abs());
            }
        }
        let bound = lip * zmax * t_n / (n + 1) as f64 + mu * t_n;
        history.push(IterationRecord { n, measured, bound });
        std::mem::swap(&mut g, &mut next);
        if measured <= tail_tol && bound <= tail_tol {
            return Ok(GoursatSolution { h: hg, n_eta: ne, values: g, history, tail_bound: bound });
        }
        t_n *= p.c.abs() * zmax * zmax / ((n + 1) * (n + 1)) as f64;
    }
    Err(BackstepError::NoConvergenceBudget {
        iterations: MAX_ITERATIONS,
        last_increment: history.last().map_or(f64::NAN, |r| r.measured),
    })
}

/// Which triangle a kernel grid covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelKind {
    /// `{0 <= y <= x <= xi}`
    K1,
    /// `{xi <= x <= y <= l}`
    K2,
}

impl KernelKind {
    pub fn contains(self, i: usize, j: usize) -> bool {
        match self {
            KernelKind::K1 => j <= i,
            KernelKind::K2 => i <= j,
        }
    }
}

/// A kernel sampled on a triangle of a uniform node set.
#[derive(Debug, Clone)]
pub struct KernelGrid {
    pub kind: KernelKind,
    pub nodes: Vec<f64>,
    pub h: f64,
    values: Vec<f64>,
    /// Gain `K` the `k1` edge data was built from.
    pub gain: Option<RowDVector<f64>>,
    pub history: Vec<IterationRecord>,
    pub tail_bound: f64,
}

impl KernelGrid {
    fn empty(kind: KernelKind, nodes: Vec<f64>, gain: Option<RowDVector<f64>>) -> Self {
        let n = nodes.len();
        let h = (nodes[n - 1] - nodes[0]) / (n - 1) as f64;
        Self { kind, nodes, h, values: vec![0.0; n * n], gain, history: Vec::new(), tail_bound: 0.0 }
    }

    /// Number of cells along each axis.
    pub fn cells(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        debug_assert!(self.kind.contains(i, j));
        self.values[i * self.nodes.len() + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let n = self.nodes.len();
        self.values[i * n + j] = v;
    }

    pub fn terms(&self) -> usize {
        self.history.len()
    }

    /// Triangle nodes in row-major order.
    pub fn indices(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let n = self.nodes.len();
        let kind = self.kind;
        (0..n).flat_map(move |i| (0..n).filter(move |&j| kind.contains(i, j)).map(move |j| (i, j)))
    }

    /// CSV with header `x,y,value`, full precision.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("x,y,value\n");
        for (i, j) in self.indices() {
            s.push_str(&format!("{:.17e},{:.17e},{:.17e}\n", self.nodes[i], self.nodes[j], self.at(i, j)));
        }
        s
    }

    /// Parses the output of [`KernelGrid::to_csv`].
    pub fn from_csv(text: &str, kind: KernelKind, gain: Option<RowDVector<f64>>) -> Result<Self> {
        let mut rows = Vec::new();
        for (ln, line) in text.lines().enumerate().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let parts: Vec<f64> = line
                .split(',')
                .map(|p| p.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| BackstepError::Config(format!("kernel CSV line {}: {e}", ln + 1)))?;
            if parts.len() != 3 {
                return Err(BackstepError::Config(format!("kernel CSV line {}: expected 3 columns", ln + 1)));
            }
            rows.push((parts[0], parts[1], parts[2]));
        }
        let mut nodes: Vec<f64> = rows.iter().flat_map(|r| [r.0, r.1]).collect();
        nodes.sort_by(|a, b| a.partial_cmp(b).unwrap());
        nodes.dedup();
        let n = nodes.len();
        if n < 3 || rows.len() != n * (n + 1) / 2 {
            return Err(BackstepError::Config(format!(
                "kernel CSV has {} rows over {n} nodes; not a full triangle",
                rows.len()
            )));
        }
        let pos = |v: f64| nodes.binary_search_by(|x| x.partial_cmp(&v).unwrap()).unwrap();
        let mut kg = Self::empty(kind, nodes.clone(), gain);
        for (x, y, v) in rows {
            let (i, j) = (pos(x), pos(y));
            if !kind.contains(i, j) {
                return Err(BackstepError::Config(format!("kernel CSV entry ({x}, {y}) outside its triangle")));
            }
            kg.set(i, j, v);
        }
        Ok(kg)
    }
}

/// `k1` on the left sub-grid of `grid` via the Goursat iteration with
/// `gamma(eta) = -phi(eta) B`, `delta0(zeta) = -lambda zeta / 4`, `c = lambda / 4`.
pub fn solve_k1(plant: &PlantSpec, pf: &PhiFunction, grid: &Grid, tail_tol: f64) -> Result<KernelGrid> {
    let b = &plant.b;
    let gamma = |eta: f64| -> f64 {
        pf.eval(eta.min(plant.xi)).map(|row| -(row * b)[0]).unwrap_or(f64::NAN)
    };
    let lambda = plant.lambda;
    let problem = GoursatProblem {
        c: lambda / 4.0,
        gamma: Box::new(gamma),
        delta0: Box::new(move |zeta| -lambda * zeta / 4.0),
        extent: plant.xi,
    };
    let sol = solve_goursat(&problem, grid.h1, tail_tol)?;
    if sol.n_eta != grid.n1() {
        return Err(BackstepError::GridMismatch("k1 lattice does not match the left sub-grid".into()));
    }
    let mut kg = KernelGrid::empty(KernelKind::K1, grid.left().to_vec(), Some(pf.k.clone()));
    kg.h = grid.h1;
    for i in 0..=grid.n1() {
        for j in 0..=i {
            kg.set(i, j, sol.at(i + j, i - j));
        }
    }
    if kg.values.iter().any(|v| !v.is_finite()) {
        return Err(BackstepError::OutOfDomain("phi could not be evaluated on [0, xi]".into()));
    }
    kg.history = sol.history;
    kg.tail_bound = sol.tail_bound;
    Ok(kg)
}

/// `k2` sampled from the closed form on the right sub-grid.
pub fn sample_k2(plant: &PlantSpec, grid: &Grid) -> KernelGrid {
    let mut kg = KernelGrid::empty(KernelKind::K2, grid.right().to_vec(), None);
    kg.h = grid.h2;
    let nodes = kg.nodes.clone();
    for i in 0..nodes.len() {
        for j in i..nodes.len() {
            kg.set(i, j, k2_closed_form(plant.lambda, plant.l, nodes[i], nodes[j]));
        }
    }
    kg
}

/// `k2` from the generic Goursat solver in reflected coordinates
/// `s = l - x`, `t = l - y`: `gamma = 0`, `delta0(zeta) = lambda zeta / 4`, `c = lambda / 4`.
pub fn solve_k2_goursat(plant: &PlantSpec, grid: &Grid, tail_tol: f64) -> Result<KernelGrid> {
    let lambda = plant.lambda;
    let problem = GoursatProblem {
        c: lambda / 4.0,
        gamma: Box::new(|_| 0.0),
        delta0: Box::new(move |zeta| lambda * zeta / 4.0),
        extent: plant.l - plant.xi,
    };
    let sol = solve_goursat(&problem, grid.h2, tail_tol)?;
    let n = grid.n2();
    if sol.n_eta != n {
        return Err(BackstepError::GridMismatch("k2 lattice does not match the right sub-grid".into()));
    }
    let mut kg = KernelGrid::empty(KernelKind::K2, grid.right().to_vec(), None);
    kg.h = grid.h2;
    for i in 0..=n {
        for j in i..=n {
            kg.set(i, j, sol.at(2 * n - i - j, j - i));
        }
    }
    kg.history = sol.history;
    kg.tail_bound = sol.tail_bound;
    Ok(kg)
}

/// Max-norm residuals of a sampled kernel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelResidual {
    /// `|k_xx - k_yy - lambda k|` at interior triangle nodes (5-point stencil).
    pub interior: f64,
    /// Worst violation of the diagonal and edge conditions.
    pub bc: f64,
}

/// Checks the hyperbolic PDE and boundary data of `kg` for `plant`.
pub fn kernel_residual(kg: &KernelGrid, plant: &PlantSpec) -> Result<KernelResidual> {
    let n = kg.cells();
    let h2 = kg.h * kg.h;
    let mut interior: f64 = 0.0;
    for (i, j) in kg.indices() {
        let inside = match kg.kind {
            KernelKind::K1 => j >= 1 && j < i && i < n,
            KernelKind::K2 => i >= 1 && j > i && j < n,
        };
        if !inside {
            continue;
        }
        let c = kg.at(i, j);
        let kxx = (kg.at(i + 1, j) - 2.0 * c + kg.at(i - 1, j)) / h2;
        let kyy = (kg.at(i, j + 1) - 2.0 * c + kg.at(i, j - 1)) / h2;
        interior = interior.max((kxx - kyy - plant.lambda * c).abs());
    }

    let mut bc: f64 = 0.0;
    match kg.kind {
        KernelKind::K1 => {
            let gain = kg
                .gain
                .as_ref()
                .ok_or_else(|| BackstepError::BadDimension("k1 grid carries no gain K".into()))?;
            let pf = PhiFunction::new(&plant.a, gain, plant.l, &kg.nodes, 1e-15)?;
            for i in 0..=n {
                let x = kg.nodes[i];
                bc = bc.max((kg.at(i, i) + plant.lambda * x / 2.0).abs());
                let edge = -(pf.eval(x)? * &plant.b)[0];
                bc = bc.max((kg.at(i, 0) - edge).abs());
            }
        }
        KernelKind::K2 => {
            for i in 0..=n {
                let x = kg.nodes[i];
                bc = bc.max((kg.at(i, i) - plant.lambda * (plant.l - x) / 2.0).abs());
                bc = bc.max(kg.at(i, n).abs());
            }
        }
    }
    Ok(KernelResidual { interior, bc })
}

/// `dk1/dx (xi, y_j)` for every left node `y_j`, second order.
///
/// Backward differences in `x` where the stencil stays inside the triangle;
/// on the last two nodes `k_x = (k_x + k_y) - k_y`, the first term taken
/// along the diagonal direction and the second along the row `x = xi`.
pub fn k1_x_at_xi(kg: &KernelGrid) -> Vec<f64> {
    let n = kg.cells();
    let h = kg.h;
    let mut d = vec![0.0; n + 1];
    for j in 0..=n {
        if j + 2 <= n {
            d[j] = crate::stencil::backward_diff(kg.at(n, j), kg.at(n - 1, j), kg.at(n - 2, j), h);
            continue;
        }
        let k_y = if j == n {
            crate::stencil::backward_diff(kg.at(n, n), kg.at(n, n - 1), kg.at(n, n - 2), h)
        } else {
            (kg.at(n, j + 1) - kg.at(n, j - 1)) / (2.0 * h)
        };
        let along_diag = if j >= 2 {
            crate::stencil::backward_diff(kg.at(n, j), kg.at(n - 1, j - 1), kg.at(n - 2, j - 2), h)
        } else {
            (kg.at(n, j) - kg.at(n - 1, j - 1)) / h
        };
        d[j] = along_diag - k_y;
    }
    d
}

/// `dk2/dx (xi, y_j)` for every right node, forward second-order difference
/// in `x` on the closed form.
pub fn k2_x_at_xi(plant: &PlantSpec, grid: &Grid) -> Vec<f64> {
    let h = grid.h2;
    let xi = plant.xi;
    grid.right()
        .iter()
        .map(|&y| {
            let f = |x: f64| k2_closed_form(plant.lambda, plant.l, x, y);
            crate::stencil::forward_diff(f(xi), f(xi + h), f(xi + 2.0 * h), h)
        })
        .collect()
}
