//! The backstepping map, its discrete inverse and the feedback law.
//!
//! With trapezoid quadrature the map is block triangular:
//! `w1 = (I - K1) u1 + Phi X` (lower triangular on `[0, xi]`) and
//! `w2 = (I + K2) u2` (upper triangular on `[xi, l]`), so the inverse is two
//! triangular solves.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, RowDVector};

use crate::error::{BackstepError, Result};
use crate::gain_synthesis::{PhiFunction, StabilizingGain};
use crate::kernel_solver::{k1_x_at_xi, k2_x_at_xi, sample_k2, solve_k1, KernelGrid};
use crate::stencil::{backward_diff, forward_diff, trapezoid_weights};
use crate::system_model::{CascadeState, Grid, PlantSpec, TargetState};

/// Sign in front of the `int dk2/dx(xi, y) u2(y) dy` term of the feedback law.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FeedbackSign {
    #[default]
    Plus,
    Minus,
}

impl FeedbackSign {
    pub fn value(self) -> f64 {
        match self {
            FeedbackSign::Plus => 1.0,
            FeedbackSign::Minus => -1.0,
        }
    }
}

impl std::str::FromStr for FeedbackSign {
    type Err = BackstepError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "plus" | "+" => Ok(FeedbackSign::Plus),
            "minus" | "-" => Ok(FeedbackSign::Minus),
            other => Err(BackstepError::Config(format!("feedback_sign must be plus or minus, got {other:?}"))),
        }
    }
}

/// Everything the transform and the feedback law need, bound to one
/// (plant, grid) pair.
#[derive(Debug, Clone)]
pub struct GainSet {
    pub plant: PlantSpec,
    pub grid: Arc<Grid>,
    fingerprint: u64,
    pub gain: StabilizingGain,
    pub phi: PhiFunction,
    pub k1: KernelGrid,
    pub k2: KernelGrid,
    pub k1_xi_xi: f64,
    pub k2_xi_xi: f64,
    /// `dk1/dx(xi, y)` at the left nodes.
    pub dk1dx: Vec<f64>,
    /// `dk2/dx(xi, y)` at the right nodes.
    pub dk2dx: Vec<f64>,
    pub dphi_xi: RowDVector<f64>,
    pub feedback_sign: FeedbackSign,
    omega1: DMatrix<f64>,
    omega2: DMatrix<f64>,
    phi_block: DMatrix<f64>,
    law_left: Vec<f64>,
    law_right: Vec<f64>,
}

impl GainSet {
    /// Builds `phi`, both kernels, their derivatives at `xi` and the
    /// transform matrices on `grid`.
    pub fn synthesize(
        plant: &PlantSpec,
        grid: Arc<Grid>,
        gain: StabilizingGain,
        tail_tol: f64,
        feedback_sign: FeedbackSign,
    ) -> Result<Self> {
        if (grid.xi - plant.xi).abs() > 1e-14 * plant.l || (grid.l - plant.l).abs() > 1e-14 * plant.l {
            return Err(BackstepError::GridMismatch("grid geometry differs from the plant".into()));
        }
        let phi = PhiFunction::new(&plant.a, &gain.k, plant.l, &grid.nodes, 1e-15)?;
        let k1 = solve_k1(plant, &phi, &grid, tail_tol)?;
        let k2 = sample_k2(plant, &grid);
        let (n1, n2) = (grid.n1(), grid.n2());

        let mut omega1 = DMatrix::identity(n1 + 1, n1 + 1);
        for i in 1..=n1 {
            let w = trapezoid_weights(i, grid.h1);
            for j in 0..=i {
                omega1[(i, j)] -= w[j] * k1.at(i, j);
            }
        }
        let mut omega2 = DMatrix::identity(n2 + 1, n2 + 1);
        for i in 0..n2 {
            let w = trapezoid_weights(n2 - i, grid.h2);
            for j in i..=n2 {
                omega2[(i, j)] += w[j - i] * k2.at(i, j);
            }
        }
        let n = plant.n();
        let mut phi_block = DMatrix::zeros(n1 + 1, n);
        for (i, &x) in grid.left().iter().enumerate() {
            phi_block.row_mut(i).copy_from(&phi.eval(x)?);
        }

        let dk1dx = k1_x_at_xi(&k1);
        let dk2dx = k2_x_at_xi(plant, &grid);
        let k1_xi_xi = k1.at(n1, n1);
        let k2_xi_xi = k2.at(0, 0);
        let s = feedback_sign.value();
        let mut law_left: Vec<f64> =
            trapezoid_weights(n1, grid.h1).iter().zip(&dk1dx).map(|(w, d)| w * d).collect();
        let law_right: Vec<f64> =
            trapezoid_weights(n2, grid.h2).iter().zip(&dk2dx).map(|(w, d)| s * w * d).collect();
        // The point term acts on u(xi); it is carried by the left restriction.
        law_left[n1] += k1_xi_xi - k2_xi_xi;
        let dphi_xi = phi.derivative(plant.xi)?;

        Ok(Self {
            plant: plant.clone(),
            fingerprint: grid.fingerprint_with(plant),
            grid,
            gain,
            phi,
            k1,
            k2,
            k1_xi_xi,
            k2_xi_xi,
            dk1dx,
            dk2dx,
            dphi_xi,
            feedback_sign,
            omega1,
            omega2,
            phi_block,
            law_left,
            law_right,
        })
    }

    /// Fails unless `grid` is the grid these gains were built on.
    pub fn check_grid(&self, grid: &Grid) -> Result<()> {
        if grid.fingerprint_with(&self.plant) != self.fingerprint {
            return Err(BackstepError::GridMismatch(
                "state grid differs from the grid the gains were synthesized on".into(),
            ));
        }
        Ok(())
    }

    /// `A + B K`.
    pub fn closed_loop_matrix(&self) -> DMatrix<f64> {
        &self.plant.a + &self.plant.b * &self.gain.k
    }

    /// Infinity-norm bounds of the discrete map and of its inverse on
    /// `(X, u1, u2)`.
    pub fn operator_bounds(&self) -> Result<(f64, f64)> {
        let (n1, n2, n) = (self.grid.n1(), self.grid.n2(), self.plant.n());
        let inv1 = invert_triangular(&self.omega1, true)?;
        let inv2 = invert_triangular(&self.omega2, false)?;
        let inv_phi = &inv1 * &self.phi_block;
        let row_sum = |m: &DMatrix<f64>, i: usize| m.row(i).iter().map(|v| v.abs()).sum::<f64>();
        let mut fwd: f64 = 1.0;
        let mut inv: f64 = 1.0;
        for i in 0..=n1 {
            fwd = fwd.max(row_sum(&self.omega1, i) + row_sum(&self.phi_block, i));
            inv = inv.max(row_sum(&inv1, i) + row_sum(&inv_phi, i));
        }
        for i in 0..=n2 {
            fwd = fwd.max(row_sum(&self.omega2, i));
            inv = inv.max(row_sum(&inv2, i));
        }
        debug_assert!(n >= 1);
        Ok((fwd, inv))
    }
}

fn invert_triangular(m: &DMatrix<f64>, lower: bool) -> Result<DMatrix<f64>> {
    let mut inv = DMatrix::identity(m.nrows(), m.ncols());
    for c in 0..m.ncols() {
        let mut col: Vec<f64> = inv.column(c).iter().cloned().collect();
        triangular_solve(m, &mut col, lower)?;
        inv.column_mut(c).copy_from_slice(&col);
    }
    Ok(inv)
}

fn triangular_solve(m: &DMatrix<f64>, rhs: &mut [f64], lower: bool) -> Result<()> {
    let n = rhs.len();
    let order: Vec<usize> = if lower { (0..n).collect() } else { (0..n).rev().collect() };
    for &i in &order {
        let d = m[(i, i)];
        if d.abs() < 1e-12 {
            return Err(BackstepError::SingularTransform { index: i, value: d });
        }
        let mut acc = rhs[i];
        if lower {
            for j in 0..i {
                acc -= m[(i, j)] * rhs[j];
            }
        } else {
            for j in i + 1..n {
                acc -= m[(i, j)] * rhs[j];
            }
        }
        rhs[i] = acc / d;
    }
    Ok(())
}

fn mat_vec(m: &DMatrix<f64>, v: &[f64]) -> Vec<f64> {
    (m * DVector::from_column_slice(v)).iter().cloned().collect()
}

/// `w1 = u1 - int_0^x k1 u1 + phi X`, `w2 = u2 + int_x^l k2 u2`.
pub fn forward_transform(state: &CascadeState, g: &GainSet) -> Result<TargetState> {
    g.check_grid(&state.grid)?;
    if state.x.len() != g.plant.n() {
        return Err(BackstepError::BadDimension("ODE state size differs from the plant".into()));
    }
    let px = &g.phi_block * &state.x;
    let w1: Vec<f64> = mat_vec(&g.omega1, &state.u1).iter().zip(px.iter()).map(|(a, b)| a + b).collect();
    let w2 = mat_vec(&g.omega2, &state.u2);
    Ok(TargetState { grid: state.grid.clone(), x: state.x.clone(), w1, w2, t: state.t })
}

/// Exact inverse of [`forward_transform`] at the discrete level.
pub fn inverse_transform(ts: &TargetState, g: &GainSet) -> Result<CascadeState> {
    g.check_grid(&ts.grid)?;
    if ts.x.len() != g.plant.n() {
        return Err(BackstepError::BadDimension("ODE state size differs from the plant".into()));
    }
    let px = &g.phi_block * &ts.x;
    let mut u1: Vec<f64> = ts.w1.iter().zip(px.iter()).map(|(w, p)| w - p).collect();
    triangular_solve(&g.omega1, &mut u1, true)?;
    let mut u2 = ts.w2.clone();
    triangular_solve(&g.omega2, &mut u2, false)?;
    Ok(CascadeState { grid: ts.grid.clone(), x: ts.x.clone(), u1, u2, t: ts.t })
}

/// Left and right restrictions of the transformed state at `xi`.
pub fn interface_values(state: &CascadeState, g: &GainSet) -> (f64, f64) {
    let (n1, n) = (g.grid.n1(), g.plant.n());
    let left = (0..=n1).map(|j| g.omega1[(n1, j)] * state.u1[j]).sum::<f64>()
        + (0..n).map(|k| g.phi_block[(n1, k)] * state.x[k]).sum::<f64>();
    let right = (0..state.u2.len()).map(|j| g.omega2[(0, j)] * state.u2[j]).sum::<f64>();
    (left, right)
}

/// `U = (k1(xi,xi) - k2(xi,xi)) u(xi) + int_0^xi k1_x(xi,y) u1 +- int_xi^l k2_x(xi,y) u2 - phi'(xi) X`.
pub fn feedback_control(state: &CascadeState, g: &GainSet) -> Result<f64> {
    g.check_grid(&state.grid)?;
    let left: f64 = g.law_left.iter().zip(&state.u1).map(|(w, u)| w * u).sum();
    let right: f64 = g.law_right.iter().zip(&state.u2).map(|(w, u)| w * u).sum();
    Ok(left + right - (&g.dphi_xi * &state.x)[0])
}

/// `(|w1(xi) - w2(xi)|, |w1_x(xi-) - w2_x(xi+)|)`.
pub fn interface_gap(ts: &TargetState) -> (f64, f64) {
    let m = ts.w1.len() - 1;
    let value = (ts.w1[m] - ts.w2[0]).abs();
    let left = backward_diff(ts.w1[m], ts.w1[m - 1], ts.w1[m - 2], ts.grid.h1);
    let right = forward_diff(ts.w2[0], ts.w2[1], ts.w2[2], ts.grid.h2);
    (value, (left - right).abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gain_synthesis::{default_poles, pole_place};
    use crate::system_model::build_grid;
    use nalgebra::{dmatrix, dvector};

    fn gains(lambda: f64, xi: f64, h: f64) -> GainSet {
        let plant = PlantSpec::new(dmatrix![0.0, 1.0; 0.0, 0.0], dvector![0.0, 1.0], lambda, 1.0, xi).unwrap();
        let grid = Arc::new(build_grid(1.0, xi, h).unwrap());
        let k = pole_place(&plant.a, &plant.b, &default_poles(2)).unwrap();
        GainSet::synthesize(&plant, grid, k, 1e-12, FeedbackSign::Plus).unwrap()
    }

    fn scalar_gains(k: f64, xi: f64, h: f64) -> GainSet {
        let plant = PlantSpec::new(dmatrix![0.0], dvector![1.0], 0.0, 1.0, xi).unwrap();
        let grid = Arc::new(build_grid(1.0, xi, h).unwrap());
        let sg = StabilizingGain { k: RowDVector::from_row_slice(&[k]), poles: vec![] };
        GainSet::synthesize(&plant, grid, sg, 1e-12, FeedbackSign::Plus).unwrap()
    }

    fn smooth_state(g: &GainSet) -> CascadeState {
        let u = g.grid.sample(|x| (std::f64::consts::PI * x).sin() + x * (1.0 - x) * (3.0 * x).cos());
        CascadeState::from_field(g.grid.clone(), dvector![0.4, -1.1], &u, 0.0).unwrap()
    }

    #[test]
    fn zero_state_maps_to_zero() {
        let g = gains(20.0, 0.3, 0.05);
        let z = CascadeState::zero(g.grid.clone(), 2);
        let t = forward_transform(&z, &g).unwrap();
        assert!(t.w1.iter().chain(&t.w2).all(|v| *v == 0.0));
        assert_eq!(feedback_control(&z, &g).unwrap(), 0.0);
        assert_eq!(interface_gap(&t), (0.0, 0.0));
    }

    #[test]
    fn transformed_state_vanishes_at_origin() {
        let g = gains(20.0, 0.3, 0.02);
        let t = forward_transform(&smooth_state(&g), &g).unwrap();
        assert_eq!(t.w1[0], 0.0);
    }

    #[test]
    fn round_trip_is_identity() {
        let g = gains(20.0, 0.3, 0.01);
        let s = smooth_state(&g);
        let back = inverse_transform(&forward_transform(&s, &g).unwrap(), &g).unwrap();
        for (a, b) in s.u1.iter().chain(&s.u2).zip(back.u1.iter().chain(&back.u2)) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn scalar_zero_lambda_law() {
        // lambda = 0, A = 0: k1(x, y) = k (x - y), k2 = 0, phi(x) = -k x.
        let kk = -1.5;
        let g = scalar_gains(kk, 0.4, 0.01);
        let z = CascadeState::zero(g.grid.clone(), 1);
        let s = CascadeState { x: dvector![2.0], ..z };
        assert!((feedback_control(&s, &g).unwrap() - kk * 2.0).abs() < 1e-12);

        let u = g.grid.sample(|x| (std::f64::consts::PI * x).sin());
        let s = CascadeState::from_field(g.grid.clone(), dvector![2.0], &u, 0.0).unwrap();
        let int_u1 = (1.0 - (std::f64::consts::PI * 0.4).cos()) / std::f64::consts::PI;
        let expect = kk * int_u1 + kk * 2.0;
        assert!((feedback_control(&s, &g).unwrap() - expect).abs() < 1e-4);
    }

    #[test]
    fn mismatched_grid_is_rejected() {
        let g = gains(20.0, 0.3, 0.05);
        let other = Arc::new(build_grid(1.0, 0.3, 0.04).unwrap());
        let s = CascadeState::zero(other, 2);
        assert!(matches!(forward_transform(&s, &g), Err(BackstepError::GridMismatch(_))));
        assert!(matches!(feedback_control(&s, &g), Err(BackstepError::GridMismatch(_))));
    }

    #[test]
    fn kinked_target_has_slope_gap() {
        let g = gains(20.0, 0.3, 0.01);
        let w = g.grid.sample(|x| if x < 0.3 { x } else { 0.3 * (1.0 - x) / 0.7 });
        let t = TargetState::from_field(g.grid.clone(), dvector![0.0, 0.0], &w, 0.0).unwrap();
        let (v, s) = interface_gap(&t);
        assert!(v < 1e-15);
        assert!((s - (1.0 + 0.3 / 0.7)).abs() < 1e-10);
    }

    #[test]
    fn operator_bounds_settle_under_refinement() {
        let a = gains(20.0, 0.3, 0.02).operator_bounds().unwrap();
        let b = gains(20.0, 0.3, 0.01).operator_bounds().unwrap();
        assert!(a.0.is_finite() && a.1.is_finite());
        assert!((a.0 - b.0).abs() < 0.05 * b.0 && (a.1 - b.1).abs() < 0.05 * b.1);
    }

    #[test]
    fn feedback_sign_parses() {
        assert_eq!("plus".parse::<FeedbackSign>().unwrap(), FeedbackSign::Plus);
        assert_eq!("Minus".parse::<FeedbackSign>().unwrap(), FeedbackSign::Minus);
        assert!("both".parse::<FeedbackSign>().is_err());
    }
}
