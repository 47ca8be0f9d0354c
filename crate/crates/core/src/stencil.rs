//! Quadrature weights, finite-difference stencils and a tridiagonal solver
//! shared by the transform, the norms and the time stepper.

/// Composite trapezoid weights for `cells` uniform cells of width `h`.
pub fn trapezoid_weights(cells: usize, h: f64) -> Vec<f64> {
    if cells == 0 {
        return vec![0.0];
    }
    let mut w = vec![h; cells + 1];
    w[0] = 0.5 * h;
    w[cells] = 0.5 * h;
    w
}

pub fn trapezoid(values: &[f64], h: f64) -> f64 {
    match values.len() {
        0 | 1 => 0.0,
        n => h * (0.5 * (values[0] + values[n - 1]) + values[1..n - 1].iter().sum::<f64>()),
    }
}

/// Second-order one-sided derivative at `u[0]` looking forward.
#[inline]
pub fn forward_diff(u0: f64, u1: f64, u2: f64, h: f64) -> f64 {
    (-3.0 * u0 + 4.0 * u1 - u2) / (2.0 * h)
}

/// Second-order one-sided derivative at `u0` looking backward (`u1 = u(x-h)`).
#[inline]
pub fn backward_diff(u0: f64, u1: f64, u2: f64, h: f64) -> f64 {
    (3.0 * u0 - 4.0 * u1 + u2) / (2.0 * h)
}

/// Derivative samples on a uniform sub-grid: central in the interior and
/// one-sided second order at both ends. Needs at least three samples.
pub fn gradient(u: &[f64], h: f64) -> Vec<f64> {
    let n = u.len();
    assert!(n >= 3, "gradient needs at least three samples");
    let mut d = vec![0.0; n];
    d[0] = forward_diff(u[0], u[1], u[2], h);
    for i in 1..n - 1 {
        d[i] = (u[i + 1] - u[i - 1]) / (2.0 * h);
    }
    d[n - 1] = backward_diff(u[n - 1], u[n - 2], u[n - 3], h);
    d
}

/// LU factorisation of a tridiagonal matrix without pivoting (Thomas).
///
/// `lower[i]` multiplies `x[i-1]` in row `i`, `upper[i]` multiplies `x[i+1]`.
#[derive(Debug, Clone)]
pub struct Tridiagonal {
    lower: Vec<f64>,
    inv_pivot: Vec<f64>,
    upper_scaled: Vec<f64>,
}

impl Tridiagonal {
    pub fn factor(lower: &[f64], diag: &[f64], upper: &[f64]) -> Option<Self> {
        let n = diag.len();
        assert!(lower.len() == n && upper.len() == n);
        let mut inv_pivot = vec![0.0; n];
        let mut upper_scaled = vec![0.0; n];
        let mut prev = 0.0;
        for i in 0..n {
            let pivot = diag[i] - if i > 0 { lower[i] * prev } else { 0.0 };
            if pivot.abs() < 1e-300 || !pivot.is_finite() {
                return None;
            }
            inv_pivot[i] = 1.0 / pivot;
            upper_scaled[i] = upper[i] * inv_pivot[i];
            prev = upper_scaled[i];
        }
        Some(Self {
            lower: lower.to_vec(),
            inv_pivot,
            upper_scaled,
        })
    }

    pub fn solve_in_place(&self, rhs: &mut [f64]) {
        let n = rhs.len();
        let mut prev = 0.0;
        for i in 0..n {
            let r = rhs[i] - if i > 0 { self.lower[i] * prev } else { 0.0 };
            rhs[i] = r * self.inv_pivot[i];
            prev = rhs[i];
        }
        for i in (0..n.saturating_sub(1)).rev() {
            rhs[i] -= self.upper_scaled[i] * rhs[i + 1];
        }
    }
}
