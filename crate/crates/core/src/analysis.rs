//! Lyapunov evaluation, decay-rate fits and the open-loop spectrum.

use crate::error::{BackstepError, Result};
use crate::gain_synthesis::LyapunovCertificate;
use crate::simulator::SimTrace;
use crate::system_model::{CascadeState, PlantSpec, TargetState};
use crate::transform::{forward_transform, GainSet};

/// Relative envelope slack on `V(t) <= V(0) e^{-delta t}`.
pub const ENVELOPE_SLACK: f64 = 0.05;
/// Per-record increase of `V` tolerated, relative to `V(0)`.
pub const MONOTONE_SLACK: f64 = 1e-8;

/// `V = X^T P X + (a/2) |w|^2 + (b/2) |w_x|^2`.
pub fn lyapunov_value(ts: &TargetState, cert: &LyapunovCertificate) -> f64 {
    let (w2, wx2) = ts.field_energies();
    let xpx = (ts.x.transpose() * &cert.p * &ts.x)[0];
    xpx + 0.5 * cert.a * w2 + 0.5 * cert.b * wx2
}

/// Whether `alpha1 |(X, w)|_Z^2 <= V <= alpha2 |(X, w)|_Z^2` holds for `ts`.
pub fn sandwich_holds(ts: &TargetState, cert: &LyapunovCertificate) -> bool {
    let v = lyapunov_value(ts, cert);
    let z2 = ts.norm_z().powi(2);
    let slack = 1e-12 * v.abs().max(z2);
    cert.alpha1 * z2 <= v + slack && v <= cert.alpha2 * z2 + slack
}

#[derive(Debug, Clone, PartialEq)]
pub struct LyapunovTrace {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub delta: f64,
    /// Largest `V(t_{k+1}) - V(t_k)` divided by `V(0)`.
    pub max_increase: f64,
    /// Largest `V(t) / (V(0) e^{-delta t})`.
    pub max_envelope_ratio: f64,
    pub sandwich: bool,
}

impl LyapunovTrace {
    pub fn monotone(&self) -> bool {
        self.max_increase <= MONOTONE_SLACK
    }

    pub fn envelope_holds(&self) -> bool {
        self.max_envelope_ratio <= 1.0 + ENVELOPE_SLACK
    }
}

/// `V` along a closed-loop trace, evaluated on transformed snapshots.
pub fn lyapunov_trace(
    trace: &SimTrace<CascadeState>,
    gains: &GainSet,
    cert: &LyapunovCertificate,
) -> Result<LyapunovTrace> {
    let mut values = Vec::with_capacity(trace.len());
    let mut sandwich = true;
    for s in &trace.states {
        let ts = forward_transform(s, gains)?;
        sandwich &= sandwich_holds(&ts, cert);
        values.push(lyapunov_value(&ts, cert));
    }
    Ok(summarize(trace.times.clone(), values, cert.delta, sandwich))
}

/// `V` along a target-system trace.
pub fn lyapunov_trace_target(trace: &SimTrace<TargetState>, cert: &LyapunovCertificate) -> LyapunovTrace {
    let sandwich = trace.states.iter().all(|s| sandwich_holds(s, cert));
    let values = trace.states.iter().map(|s| lyapunov_value(s, cert)).collect();
    summarize(trace.times.clone(), values, cert.delta, sandwich)
}

fn summarize(times: Vec<f64>, values: Vec<f64>, delta: f64, sandwich: bool) -> LyapunovTrace {
    let v0 = values.first().copied().unwrap_or(0.0);
    let t0 = times.first().copied().unwrap_or(0.0);
    let mut max_increase: f64 = 0.0;
    let mut max_envelope_ratio: f64 = 0.0;
    if v0 > 0.0 {
        for k in 1..values.len() {
            max_increase = max_increase.max((values[k] - values[k - 1]) / v0);
        }
        for (t, v) in times.iter().zip(&values) {
            max_envelope_ratio = max_envelope_ratio.max(v / (v0 * (-delta * (t - t0)).exp()));
        }
    }
    LyapunovTrace { times, values, delta, max_increase, max_envelope_ratio, sandwich }
}

/// Least-squares fit of `log v = log C - rate t` over a window.
#[derive(Debug, Clone, PartialEq)]
pub struct DecayReport {
    pub fitted_rate: f64,
    pub fit_window: (f64, f64),
    /// Root-mean-square residual of the log-linear fit.
    pub residual_of_fit: f64,
    pub theoretical_delta: f64,
    pub c_estimate: f64,
    pub samples: usize,
}

impl DecayReport {
    pub fn to_key_value(&self) -> String {
        format!(
            "fitted_rate = {:.10e}\nfit_window = [{}, {}]\nresidual_of_fit = {:.10e}\ntheoretical_delta = {:.10e}\nc_estimate = {:.10e}\nsamples = {}\n",
            self.fitted_rate,
            self.fit_window.0,
            self.fit_window.1,
            self.residual_of_fit,
            self.theoretical_delta,
            self.c_estimate,
            self.samples
        )
    }

    pub const CSV_HEADER: &'static str = "fitted_rate,t_start,t_end,residual_of_fit,theoretical_delta,c_estimate,samples";

    pub fn csv_row(&self) -> String {
        format!(
            "{:.10e},{},{},{:.10e},{:.10e},{:.10e},{}",
            self.fitted_rate,
            self.fit_window.0,
            self.fit_window.1,
            self.residual_of_fit,
            self.theoretical_delta,
            self.c_estimate,
            self.samples
        )
    }
}

pub const MIN_FIT_SAMPLES: usize = 10;

/// Fits `values ~ C e^{-rate t}` on samples with `t` in `window`.
pub fn fit_decay_rate(times: &[f64], values: &[f64], window: (f64, f64), theoretical_delta: f64) -> Result<DecayReport> {
    let eps = 1e-12 * (window.1 - window.0).abs().max(1.0);
    let pts: Vec<(f64, f64)> = times
        .iter()
        .zip(values)
        .filter(|(t, _)| **t >= window.0 - eps && **t <= window.1 + eps)
        .map(|(t, v)| (*t, *v))
        .collect();
    if pts.len() < MIN_FIT_SAMPLES {
        return Err(BackstepError::InsufficientSamples { got: pts.len(), need: MIN_FIT_SAMPLES });
    }
    if let Some((t, v)) = pts.iter().find(|(_, v)| !(*v > 0.0)) {
        return Err(BackstepError::NonPositiveValues(format!("value {v} at t = {t}")));
    }
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1.ln()).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1.ln() - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mt;
    let rss: f64 = pts.iter().map(|p| (p.1.ln() - intercept - slope * p.0).powi(2)).sum();
    Ok(DecayReport {
        fitted_rate: -slope,
        fit_window: window,
        residual_of_fit: (rss / n).sqrt(),
        theoretical_delta,
        c_estimate: intercept.exp(),
        samples: pts.len(),
    })
}

/// Default fit window: the last 75% of `[0, t_end]`.
pub fn default_window(t_end: f64) -> (f64, f64) {
    (0.25 * t_end, t_end)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub eigenvalues: Vec<f64>,
    pub unstable: usize,
}

/// `lambda - k^2 pi^2 / l^2` for `k = 1..=count`.
pub fn open_loop_spectrum(plant: &PlantSpec, count: usize) -> Spectrum {
    let pi = std::f64::consts::PI;
    let eigenvalues: Vec<f64> = (1..=count.max(1))
        .map(|k| plant.lambda - (k as f64 * pi / plant.l).powi(2))
        .collect();
    let unstable = eigenvalues.iter().filter(|e| **e > 0.0).count();
    Spectrum { eigenvalues, unstable }
}

/// Number of unstable modes for `lambda` on `[0, l]`, without truncation.
pub fn unstable_mode_count(lambda: f64, l: f64) -> usize {
    if lambda <= 0.0 {
        return 0;
    }
    let k = (lambda.sqrt() * l / std::f64::consts::PI).floor() as usize;
    // Exclude an eigenvalue sitting exactly at zero.
    if (k as f64 * std::f64::consts::PI / l).powi(2) >= lambda {
        k.saturating_sub(1)
    } else {
        k
    }
}
