//! The synthesize, simulate and fit pipeline shared by the command line and
//! the acceptance suite.

use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::analysis::{default_window, fit_decay_rate, lyapunov_trace, DecayReport, LyapunovTrace};
use crate::error::Result;
use crate::gain_synthesis::{build_certificate, default_poles, pole_place, LyapunovCertificate};
use crate::simulator::{compatible_initial_state, simulate_closed_loop, Scheme, SimConfig, SimTrace};
use crate::system_model::{build_grid, check_compatibility, CascadeState, Compatibility, PlantSpec};
use crate::transform::{FeedbackSign, GainSet};

#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub plant: PlantSpec,
    pub poles: Vec<Complex64>,
    pub q: DMatrix<f64>,
    pub margin: f64,
    pub tail_tol: f64,
    pub feedback_sign: FeedbackSign,
    pub h: f64,
    pub dt: f64,
    pub t_end: f64,
    pub scheme: Scheme,
    pub record_every: usize,
}

impl ExperimentSpec {
    /// Poles `{-1, ..., -n}`, `Q = I`, margin 2, `h = 1/200`, `dt = 1e-4`,
    /// `T = 2`, Crank-Nicolson.
    pub fn defaults(plant: PlantSpec) -> Self {
        let n = plant.n();
        Self {
            poles: default_poles(n),
            q: DMatrix::identity(n, n),
            margin: 2.0,
            tail_tol: 1e-12,
            feedback_sign: FeedbackSign::Plus,
            h: 1.0 / 200.0,
            dt: 1e-4,
            t_end: 2.0,
            scheme: Scheme::CrankNicolson,
            record_every: 100,
            plant,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Synthesis {
    pub gains: GainSet,
    pub cert: LyapunovCertificate,
}

pub fn synthesize(spec: &ExperimentSpec) -> Result<Synthesis> {
    let plant = crate::system_model::validate_plant(spec.plant.clone())?;
    let grid = Arc::new(build_grid(plant.l, plant.xi, spec.h)?);
    let gain = pole_place(&plant.a, &plant.b, &spec.poles)?;
    let cert = build_certificate(&plant, &gain.k, &spec.q, spec.margin)?;
    let gains = GainSet::synthesize(&plant, grid, gain, spec.tail_tol, spec.feedback_sign)?;
    Ok(Synthesis { gains, cert })
}

#[derive(Debug, Clone)]
pub struct ClosedLoopRun {
    pub state0: CascadeState,
    pub compatibility: Compatibility,
    pub trace: SimTrace<CascadeState>,
    pub lyapunov: LyapunovTrace,
    pub decay: Result<DecayReport>,
}

impl ClosedLoopRun {
    /// `norm_Y(T) / norm_Y(0)`.
    pub fn norm_ratio(&self) -> f64 {
        self.trace.norm_y[self.trace.len() - 1] / self.trace.norm_y[0]
    }
}

/// Closed loop from the default compatible initial data.
pub fn run_closed_loop(spec: &ExperimentSpec, syn: &Synthesis) -> Result<ClosedLoopRun> {
    let state0 = compatible_initial_state(&syn.gains)?;
    run_closed_loop_from(spec, syn, state0)
}

pub fn run_closed_loop_from(spec: &ExperimentSpec, syn: &Synthesis, state0: CascadeState) -> Result<ClosedLoopRun> {
    let grid = syn.gains.grid.clone();
    let compatibility =
        check_compatibility(&state0, &syn.gains, crate::simulator::compatibility_tolerance(&state0))?;
    let cfg = SimConfig::new(grid, spec.dt, spec.t_end, spec.scheme, spec.record_every)?;
    let mut trace = simulate_closed_loop(&syn.gains.plant, &syn.gains, &state0, &cfg)?;
    let lyapunov = lyapunov_trace(&trace, &syn.gains, &syn.cert)?;
    trace.lyapunov = Some(lyapunov.values.clone());
    let decay = fit_decay_rate(&trace.times, &trace.norm_y, default_window(spec.t_end), syn.cert.delta);
    Ok(ClosedLoopRun { state0, compatibility, trace, lyapunov, decay })
}
