//! Method-of-lines time integration of the open-loop plant, the closed loop
//! and the target system, plus the exact Fourier and Duhamel oracles.
//!
//! All unknowns live on the full grid. Interior rows carry the theta scheme
//! for `u_t = u_xx + lambda u`; the `xi` row is the algebraic flux balance
//! `u_x(xi-) - u_x(xi+) = U` written with one-sided second-order differences.
//! Its two outer entries are eliminated with the neighbouring rows so the
//! system stays tridiagonal and is factored once per run. The control is
//! lagged to the known time level.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{BackstepError, Result};
use crate::gain_synthesis::mat_exp;
use crate::stencil::{forward_diff, trapezoid, Tridiagonal};
use crate::system_model::{CascadeState, Grid, PlantSpec, TargetState};
use crate::transform::{feedback_control, inverse_transform, GainSet};

const UNSTABLE_RATIO: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Scheme {
    ImplicitEuler,
    #[default]
    CrankNicolson,
}

impl Scheme {
    fn theta(self) -> f64 {
        match self {
            Scheme::ImplicitEuler => 1.0,
            Scheme::CrankNicolson => 0.5,
        }
    }
}

impl std::str::FromStr for Scheme {
    type Err = BackstepError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "implicit_euler" | "ie" => Ok(Scheme::ImplicitEuler),
            "crank_nicolson" | "cn" => Ok(Scheme::CrankNicolson),
            other => Err(BackstepError::Config(format!("unknown scheme {other:?}"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub grid: Arc<Grid>,
    pub dt: f64,
    pub t_end: f64,
    pub scheme: Scheme,
    pub record_every: usize,
}

impl SimConfig {
    pub fn new(grid: Arc<Grid>, dt: f64, t_end: f64, scheme: Scheme, record_every: usize) -> Result<Self> {
        if !(dt > 0.0 && t_end > 0.0 && dt.is_finite() && t_end.is_finite()) {
            return Err(BackstepError::Config(format!("need dt > 0 and T > 0, got dt = {dt}, T = {t_end}")));
        }
        if record_every == 0 {
            return Err(BackstepError::Config("record_every must be at least 1".into()));
        }
        Ok(Self { grid, dt, t_end, scheme, record_every })
    }

    pub fn steps(&self) -> usize {
        ((self.t_end / self.dt).round() as usize).max(1)
    }
}

/// Recorded trajectory. All series share the length of `times`.
#[derive(Debug, Clone)]
pub struct SimTrace<S> {
    pub times: Vec<f64>,
    pub states: Vec<S>,
    pub controls: Vec<f64>,
    pub norm_h: Vec<f64>,
    /// Y norm for plant states, Z norm for target states.
    pub norm_y: Vec<f64>,
    /// `u_x(0)` (or `w_x(0)`) at each record.
    pub flux0: Vec<f64>,
    /// Lyapunov values, once attached by the analysis step.
    pub lyapunov: Option<Vec<f64>>,
}

impl<S> SimTrace<S> {
    fn new() -> Self {
        Self {
            times: Vec::new(),
            states: Vec::new(),
            controls: Vec::new(),
            norm_h: Vec::new(),
            norm_y: Vec::new(),
            flux0: Vec::new(),
            lyapunov: None,
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Common view of plant and target snapshots for trace output.
pub trait Snapshot {
    const FIELD: &'static str;
    fn ode(&self) -> &DVector<f64>;
    fn packed(&self) -> Vec<f64>;
    fn mesh(&self) -> &Grid;
}

impl Snapshot for CascadeState {
    const FIELD: &'static str = "u";
    fn ode(&self) -> &DVector<f64> {
        &self.x
    }
    fn packed(&self) -> Vec<f64> {
        self.field()
    }
    fn mesh(&self) -> &Grid {
        &self.grid
    }
}

impl Snapshot for TargetState {
    const FIELD: &'static str = "w";
    fn ode(&self) -> &DVector<f64> {
        &self.x
    }
    fn packed(&self) -> Vec<f64> {
        self.field()
    }
    fn mesh(&self) -> &Grid {
        &self.grid
    }
}

/// Trace CSV: `t,U,norm_H,norm_Y,V,X_1..X_n` then one column per probe.
/// `V` is `NaN` when no Lyapunov series is attached.
pub fn trace_csv<S: Snapshot>(trace: &SimTrace<S>, probes: &[f64]) -> String {
    let n = trace.states.first().map_or(0, |s| s.ode().len());
    let mut out = String::from("t,U,norm_H,norm_Y,V");
    for k in 1..=n {
        out.push_str(&format!(",X_{k}"));
    }
    for p in probes {
        out.push_str(&format!(",{}({p})", S::FIELD));
    }
    out.push('\n');
    for (k, s) in trace.states.iter().enumerate() {
        let v = trace.lyapunov.as_ref().map_or(f64::NAN, |v| v[k]);
        let mut row = vec![trace.times[k], trace.controls[k], trace.norm_h[k], trace.norm_y[k], v];
        row.extend(s.ode().iter());
        let field = s.packed();
        row.extend(probes.iter().map(|&p| s.mesh().interpolate(&field, p)));
        let cells: Vec<String> = row.iter().map(|x| format!("{x:.10e}")).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

/// One theta-scheme step operator for a fixed grid, reaction and ODE matrix.
struct Stepper {
    grid: Arc<Grid>,
    lambda: f64,
    theta: f64,
    dt: f64,
    tri: Tridiagonal,
    /// Multipliers of rows `m-1` and `m+1` used in the interface elimination.
    elim: (f64, f64),
    ode_lhs_inv: DMatrix<f64>,
    ode_rhs: DMatrix<f64>,
    b: DVector<f64>,
}

impl Stepper {
    fn new(grid: Arc<Grid>, lambda: f64, a: &DMatrix<f64>, b: &DVector<f64>, dt: f64, scheme: Scheme) -> Result<Self> {
        let theta = scheme.theta();
        let size = grid.len();
        let m = grid.index_xi;
        let mut lower = vec![0.0; size];
        let mut diag = vec![1.0; size];
        let mut upper = vec![0.0; size];
        for i in 1..size - 1 {
            if i == m {
                continue;
            }
            let h = if i < m { grid.h1 } else { grid.h2 };
            let r = theta * dt / (h * h);
            lower[i] = -r;
            diag[i] = 1.0 + 2.0 * r - theta * dt * lambda;
            upper[i] = -r;
        }
        let (h1, h2) = (grid.h1, grid.h2);
        let f_left = (0.5 / h1) / lower[m - 1];
        let f_right = (0.5 / h2) / upper[m + 1];
        lower[m] = -2.0 / h1 - f_left * diag[m - 1];
        diag[m] = 1.5 / h1 + 1.5 / h2 - f_left * upper[m - 1] - f_right * lower[m + 1];
        upper[m] = -2.0 / h2 - f_right * diag[m + 1];

        let tri = Tridiagonal::factor(&lower, &diag, &upper)
            .ok_or_else(|| BackstepError::Config("singular step matrix; reduce dt".into()))?;
        let n = a.nrows();
        let eye = DMatrix::<f64>::identity(n, n);
        let ode_lhs_inv = (&eye - a * (theta * dt))
            .try_inverse()
            .ok_or_else(|| BackstepError::Config("singular ODE step matrix; reduce dt".into()))?;
        let ode_rhs = &eye + a * ((1.0 - theta) * dt);
        Ok(Self { grid, lambda, theta, dt, tri, elim: (f_left, f_right), ode_lhs_inv, ode_rhs, b: b.clone() })
    }

    fn flux0(&self, u: &[f64]) -> f64 {
        forward_diff(u[0], u[1], u[2], self.grid.h1)
    }

    /// Advances `(u, x)` by one step with interface jump `jump`.
    fn step(&self, u: &mut Vec<f64>, x: &mut DVector<f64>, jump: f64) {
        let g = &*self.grid;
        let m = g.index_xi;
        let size = u.len();
        let explicit = (1.0 - self.theta) * self.dt;
        let mut rhs = vec![0.0; size];
        for i in 1..size - 1 {
            if i == m {
                continue;
            }
            let h = if i < m { g.h1 } else { g.h2 };
            let lap = (u[i - 1] - 2.0 * u[i] + u[i + 1]) / (h * h) + self.lambda * u[i];
            rhs[i] = u[i] + explicit * lap;
        }
        rhs[m] = jump - self.elim.0 * rhs[m - 1] - self.elim.1 * rhs[m + 1];
        let g_old = self.flux0(u);
        self.tri.solve_in_place(&mut rhs);
        rhs[0] = 0.0;
        rhs[size - 1] = 0.0;
        *u = rhs;
        let g_new = self.flux0(u);
        let forcing = &self.b * (self.dt * ((1.0 - self.theta) * g_old + self.theta * g_new));
        *x = &self.ode_lhs_inv * (&self.ode_rhs * &*x + forcing);
    }
}

fn split(grid: &Arc<Grid>, u: &[f64], x: &DVector<f64>, t: f64) -> CascadeState {
    let m = grid.index_xi;
    CascadeState { grid: grid.clone(), x: x.clone(), u1: u[..=m].to_vec(), u2: u[m..].to_vec(), t }
}

fn check_cfg(cfg: &SimConfig, grid: &Arc<Grid>) -> Result<()> {
    if **grid != *cfg.grid {
        return Err(BackstepError::GridMismatch("initial state and configuration use different grids".into()));
    }
    Ok(())
}

fn run_plant(
    plant: &PlantSpec,
    state0: &CascadeState,
    cfg: &SimConfig,
    mut control: impl FnMut(&CascadeState) -> Result<f64>,
    guard: bool,
) -> Result<SimTrace<CascadeState>> {
    check_cfg(cfg, &state0.grid)?;
    let grid = state0.grid.clone();
    let stepper = Stepper::new(grid.clone(), plant.lambda, &plant.a, &plant.b, cfg.dt, cfg.scheme)?;
    let mut u = state0.field();
    let mut x = state0.x.clone();
    let mut trace = SimTrace::new();
    let steps = cfg.steps();
    let initial = state0.norm_h();
    for n in 0..=steps {
        let t = state0.t + n as f64 * cfg.dt;
        let snap = split(&grid, &u, &x, t);
        let jump = control(&snap)?;
        if guard && initial > 0.0 {
            let ratio = snap.norm_h() / initial;
            if !(ratio <= UNSTABLE_RATIO) {
                return Err(BackstepError::StepUnstable { t, ratio });
            }
        }
        if n % cfg.record_every == 0 || n == steps {
            trace.times.push(t);
            trace.controls.push(jump);
            trace.norm_h.push(snap.norm_h());
            trace.norm_y.push(snap.norm_y());
            trace.flux0.push(stepper.flux0(&u));
            trace.states.push(snap);
        }
        if n < steps {
            stepper.step(&mut u, &mut x, jump);
        }
    }
    Ok(trace)
}

/// Closed loop under the feedback law of `gains`.
pub fn simulate_closed_loop(
    plant: &PlantSpec,
    gains: &GainSet,
    state0: &CascadeState,
    cfg: &SimConfig,
) -> Result<SimTrace<CascadeState>> {
    gains.check_grid(&state0.grid)?;
    let compat = crate::system_model::check_compatibility(state0, gains, compatibility_tolerance(state0))?;
    if !compat.pass {
        log::warn!("initial data violate compatibility: c1 = {:e}, c2 = {:e}", compat.c1, compat.c2);
    }
    run_plant(plant, state0, cfg, |s| feedback_control(s, gains), true)
}

/// Plant with zero flux jump.
pub fn simulate_open_loop(plant: &PlantSpec, state0: &CascadeState, cfg: &SimConfig) -> Result<SimTrace<CascadeState>> {
    run_plant(plant, state0, cfg, |_| Ok(0.0), false)
}

/// Target system: `X' = (A + BK) X + B w_x(0)`, `w_t = w_xx` on `(0, l)`.
pub fn simulate_target(gains: &GainSet, w0: &TargetState, cfg: &SimConfig) -> Result<SimTrace<TargetState>> {
    check_cfg(cfg, &w0.grid)?;
    let grid = w0.grid.clone();
    let acl = gains.closed_loop_matrix();
    let stepper = Stepper::new(grid.clone(), 0.0, &acl, &gains.plant.b, cfg.dt, cfg.scheme)?;
    let m = grid.index_xi;
    let mut w = w0.field();
    let mut x = w0.x.clone();
    let mut trace = SimTrace::new();
    let steps = cfg.steps();
    for n in 0..=steps {
        if n % cfg.record_every == 0 || n == steps {
            let t = w0.t + n as f64 * cfg.dt;
            let snap = TargetState { grid: grid.clone(), x: x.clone(), w1: w[..=m].to_vec(), w2: w[m..].to_vec(), t };
            trace.times.push(t);
            trace.controls.push(0.0);
            trace.norm_h.push(snap.norm_h());
            trace.norm_y.push(snap.norm_z());
            trace.flux0.push(stepper.flux0(&w));
            trace.states.push(snap);
        }
        if n < steps {
            stepper.step(&mut w, &mut x, 0.0);
        }
    }
    Ok(trace)
}

/// Quadrature tolerance for the compatibility screen: `25 h^2` relative to
/// the slopes at `xi`, the scale of every term in the slope condition.
pub fn compatibility_tolerance(state0: &CascadeState) -> f64 {
    let h = state0.grid.h1.max(state0.grid.h2);
    let (l, r) = state0.slopes_at_xi();
    25.0 * h * h * (1.0 + l.abs() + r.abs())
}

/// Plant initial data whose transform is `sin(pi x/l) + c sin(2 pi x/l)`
/// with `X = 0`, `c` chosen so the two inverted restrictions meet at `xi`.
pub fn compatible_initial_state(gains: &GainSet) -> Result<CascadeState> {
    let grid = gains.grid.clone();
    let n = gains.plant.n();
    let l = grid.l;
    let pi = std::f64::consts::PI;
    let profile = |c: f64| -> Result<CascadeState> {
        let w = grid.sample(|x| (pi * x / l).sin() + c * (2.0 * pi * x / l).sin());
        let ts = TargetState::from_field(grid.clone(), DVector::zeros(n), &w, 0.0)?;
        inverse_transform(&ts, gains)
    };
    let jump = |s: &CascadeState| s.u1[s.u1.len() - 1] - s.u2[0];
    let s0 = profile(0.0)?;
    let s1 = profile(1.0)?;
    let slope = jump(&s1) - jump(&s0);
    if slope.abs() < 1e-12 * (1.0 + jump(&s0).abs()) {
        return Err(BackstepError::SingularTransform { index: grid.index_xi, value: slope });
    }
    let c = -jump(&s0) / slope;
    let s = profile(c)?;
    // Remove the round-off residue so the restrictions agree exactly.
    let mut u2 = s.u2;
    u2[0] = s.u1[s.u1.len() - 1];
    CascadeState::new(grid, s.x, s.u1, u2, 0.0)
}

/// Truncated sine series of the heat equation on `(0, l)` with Dirichlet ends.
#[derive(Debug, Clone)]
pub struct FourierSeries {
    pub coeffs: Vec<f64>,
    pub l: f64,
}

impl FourierSeries {
    /// `b_k = (2/l) int_0^l w0(s) sin(k pi s / l) ds` by piecewise trapezoid.
    pub fn from_samples(grid: &Grid, w0: &[f64], modes: usize) -> Self {
        let l = grid.l;
        let m = grid.index_xi;
        let coeffs = (1..=modes.max(1))
            .map(|k| {
                let f: Vec<f64> = grid
                    .nodes
                    .iter()
                    .zip(w0)
                    .map(|(&x, &w)| w * (k as f64 * std::f64::consts::PI * x / l).sin())
                    .collect();
                2.0 / l * (trapezoid(&f[..=m], grid.h1) + trapezoid(&f[m..], grid.h2))
            })
            .collect();
        Self { coeffs, l }
    }

    pub fn eval(&self, x: f64, t: f64) -> f64 {
        let pi = std::f64::consts::PI;
        self.coeffs
            .iter()
            .enumerate()
            .map(|(k, b)| {
                let kk = (k + 1) as f64 * pi / self.l;
                b * (-kk * kk * t).exp() * (kk * x).sin()
            })
            .sum()
    }
}

/// Heat-equation solution at `(x, t)` from samples of `w0`, using `modes` terms.
pub fn exact_target_solution(grid: &Grid, w0: &[f64], x: f64, t: f64, modes: usize) -> f64 {
    FourierSeries::from_samples(grid, w0, modes).eval(x, t)
}

/// `X(t) = e^{t Acl} X0 + int_0^t e^{(t - s) Acl} B f(s) ds`, composite
/// trapezoid with `steps` panels.
pub fn duhamel_x(
    acl: &DMatrix<f64>,
    b: &DVector<f64>,
    x0: &DVector<f64>,
    f: impl Fn(f64) -> f64,
    t: f64,
    steps: usize,
) -> DVector<f64> {
    let steps = steps.max(1);
    let tau = t / steps as f64;
    let e = mat_exp(acl, tau, 1e-15);
    // Horner form of sum_k w_k e^{(t - s_k) Acl} B f(s_k).
    let mut acc = b * (0.5 * tau * f(0.0));
    for k in 1..=steps {
        let w = if k == steps { 0.5 * tau } else { tau };
        acc = &e * acc + b * (w * f(k as f64 * tau));
    }
    mat_exp(acl, t, 1e-15) * x0 + acc
}

/// [`duhamel_x`] with `Acl = A + BK` from `gains`.
pub fn duhamel_x_for(gains: &GainSet, x0: &DVector<f64>, f: impl Fn(f64) -> f64, t: f64, steps: usize) -> DVector<f64> {
    duhamel_x(&gains.closed_loop_matrix(), &gains.plant.b, x0, f, t, steps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gain_synthesis::{default_poles, pole_place};
    use crate::system_model::build_grid;
    use crate::transform::FeedbackSign;
    use nalgebra::{dmatrix, dvector};
    use std::f64::consts::PI;

    fn plant(lambda: f64) -> PlantSpec {
        PlantSpec::new(dmatrix![0.0, 1.0; 0.0, 0.0], dvector![0.0, 1.0], lambda, 1.0, 0.3).unwrap()
    }

    fn gains(p: &PlantSpec, h: f64) -> GainSet {
        let grid = Arc::new(build_grid(p.l, p.xi, h).unwrap());
        let k = pole_place(&p.a, &p.b, &default_poles(p.n())).unwrap();
        GainSet::synthesize(p, grid, k, 1e-12, FeedbackSign::Plus).unwrap()
    }

    #[test]
    fn zero_state_stays_zero() {
        let p = plant(20.0);
        let g = gains(&p, 0.02);
        let cfg = SimConfig::new(g.grid.clone(), 1e-3, 0.1, Scheme::CrankNicolson, 10).unwrap();
        let tr = simulate_closed_loop(&p, &g, &CascadeState::zero(g.grid.clone(), 2), &cfg).unwrap();
        assert!(tr.controls.iter().all(|u| *u == 0.0));
        assert!(tr.norm_h.iter().all(|v| *v == 0.0));
        assert_eq!(tr.times.len(), 11);
    }

    #[test]
    fn decoupled_ode_follows_matrix_exponential() {
        let p = plant(20.0);
        let grid = Arc::new(build_grid(1.0, 0.3, 0.05).unwrap());
        let s0 = CascadeState { x: dvector![1.0, -0.5], ..CascadeState::zero(grid.clone(), 2) };
        let cfg = SimConfig::new(grid, 1e-3, 1.0, Scheme::CrankNicolson, 1000).unwrap();
        let tr = simulate_open_loop(&p, &s0, &cfg).unwrap();
        let last = tr.states.last().unwrap();
        assert!(last.u1.iter().chain(&last.u2).all(|v| *v == 0.0));
        let exact = mat_exp(&p.a, 1.0, 1e-15) * dvector![1.0, -0.5];
        assert!((&last.x - exact).norm() < 1e-12);
    }

    #[test]
    fn heat_eigenmode_matches_exact_decay() {
        let p = plant(0.0);
        let grid = Arc::new(build_grid(1.0, 0.3, 0.01).unwrap());
        let u0 = grid.sample(|x| (PI * x).sin());
        let s0 = CascadeState::from_field(grid.clone(), dvector![0.0, 0.0], &u0, 0.0).unwrap();
        let cfg = SimConfig::new(grid.clone(), 1e-3, 0.2, Scheme::CrankNicolson, 200).unwrap();
        let tr = simulate_open_loop(&p, &s0, &cfg).unwrap();
        let last = tr.states.last().unwrap().field();
        let err = grid
            .nodes
            .iter()
            .zip(&last)
            .map(|(&x, u)| (u - (-PI * PI * 0.2).exp() * (PI * x).sin()).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-3, "err = {err}");
    }

    #[test]
    fn maximum_principle_without_reaction() {
        let p = plant(0.0);
        let grid = Arc::new(build_grid(1.0, 0.3, 0.02).unwrap());
        let u0 = grid.sample(|x| if (0.2..0.6).contains(&x) { (5.0 * PI * (x - 0.2) / 2.0).sin() } else { 0.0 });
        let u0: Vec<f64> = u0.iter().map(|v| v.max(0.0)).collect();
        let s0 = CascadeState::from_field(grid.clone(), dvector![0.0, 0.0], &u0, 0.0).unwrap();
        let cfg = SimConfig::new(grid, 1e-4, 0.05, Scheme::ImplicitEuler, 10).unwrap();
        let tr = simulate_open_loop(&p, &s0, &cfg).unwrap();
        let sup: Vec<f64> = tr.states.iter().map(|s| s.field().iter().fold(0.0, |m: f64, v| m.max(v.abs()))).collect();
        assert!(sup.windows(2).all(|w| w[1] <= w[0] + 1e-12));
    }

    #[test]
    fn fourier_coefficients_of_parabola() {
        let grid = build_grid(1.0, 0.3, 0.001).unwrap();
        let w0 = grid.sample(|x| x * (1.0 - x));
        let fs = FourierSeries::from_samples(&grid, &w0, 100);
        for (k, b) in fs.coeffs.iter().enumerate().take(7) {
            let k = k + 1;
            let exact = if k % 2 == 1 { 8.0 / (k as f64 * PI).powi(3) } else { 0.0 };
            assert!((b - exact).abs() < 1e-6, "k = {k}");
        }
        let oracle: f64 = (0..50)
            .map(|j| {
                let k = (2 * j + 1) as f64;
                8.0 / (k * PI).powi(3) * (-k * k * PI * PI * 0.1).exp() * (k * PI * 0.5).sin()
            })
            .sum();
        assert!((fs.eval(0.5, 0.1) - oracle).abs() < 1e-6);
        assert!((fs.eval(0.37, 0.0) - 0.37 * 0.63).abs() < 1e-4);
    }

    #[test]
    fn duhamel_scalar_closed_form() {
        let x = duhamel_x(&dmatrix![-1.0], &dvector![1.0], &dvector![2.0], |_| 1.0, 1.5, 2000);
        let e = (-1.5f64).exp();
        assert!((x[0] - (2.0 * e + 1.0 - e)).abs() < 1e-7);
        let x = duhamel_x(&dmatrix![-1.0, 0.0; 0.5, -2.0], &dvector![0.0, 1.0], &dvector![1.0, 1.0], |_| 0.0, 0.7, 10);
        let exact = mat_exp(&dmatrix![-1.0, 0.0; 0.5, -2.0], 0.7, 1e-15) * dvector![1.0, 1.0];
        assert!((x - exact).norm() < 1e-14);
    }

    #[test]
    fn compatible_data_pass_the_screen() {
        let p = plant(20.0);
        let g = gains(&p, 0.01);
        let s0 = compatible_initial_state(&g).unwrap();
        let c = crate::system_model::check_compatibility(&s0, &g, compatibility_tolerance(&s0)).unwrap();
        assert!(c.c1 < 1e-10, "c1 = {}", c.c1);
        assert!(c.pass, "{c:?}");
    }

    #[test]
    fn trace_csv_layout() {
        let p = plant(0.0);
        let grid = Arc::new(build_grid(1.0, 0.3, 0.05).unwrap());
        let u0 = grid.sample(|x| (PI * x).sin());
        let s0 = CascadeState::from_field(grid.clone(), dvector![0.0, 0.0], &u0, 0.0).unwrap();
        let cfg = SimConfig::new(grid, 1e-2, 0.05, Scheme::ImplicitEuler, 1).unwrap();
        let csv = trace_csv(&simulate_open_loop(&p, &s0, &cfg).unwrap(), &[0.5]);
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "t,U,norm_H,norm_Y,V,X_1,X_2,u(0.5)");
        assert_eq!(lines.count(), 6);
    }

    #[test]
    fn config_validation() {
        let grid = Arc::new(build_grid(1.0, 0.3, 0.05).unwrap());
        assert!(SimConfig::new(grid.clone(), 0.0, 1.0, Scheme::CrankNicolson, 1).is_err());
        assert!(SimConfig::new(grid.clone(), 1e-3, 1.0, Scheme::CrankNicolson, 0).is_err());
        assert_eq!("crank-nicolson".parse::<Scheme>().unwrap(), Scheme::CrankNicolson);
        assert_eq!("implicit_euler".parse::<Scheme>().unwrap(), Scheme::ImplicitEuler);
    }
}
