use std::f64::consts::PI;
use std::io::Write;
use std::path::{Path, PathBuf};

use backstep_core::analysis::{lyapunov_trace_target, unstable_mode_count};
use backstep_core::experiment::{run_closed_loop_from, synthesize, ExperimentSpec, Synthesis};
use backstep_core::kernel_solver::{kernel_residual, KernelGrid, KernelKind};
use backstep_core::simulator::{
    compatible_initial_state, simulate_open_loop, simulate_target, trace_csv, SimConfig,
};
use backstep_core::system_model::{CascadeState, TargetState};
use backstep_core::transform::{forward_transform, inverse_transform, GainSet};
use backstep_core::{BackstepError, Result};
use nalgebra::{DVector, RowDVector};
use rayon::prelude::*;

use crate::config::{Initial, RunConfig};

/// Failure of a command, mapped onto the documented exit codes.
#[derive(Debug)]
pub enum CliError {
    Invalid(String),
    Unstable(String),
    Checks(Vec<String>),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Invalid(_) => 2,
            CliError::Unstable(_) => 3,
            CliError::Checks(_) => 4,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Invalid(m) | CliError::Unstable(m) => f.write_str(m),
            CliError::Checks(list) => write!(f, "failing checks: {}", list.join(", ")),
        }
    }
}

impl From<BackstepError> for CliError {
    fn from(e: BackstepError) -> Self {
        match e {
            BackstepError::StepUnstable { .. } => CliError::Unstable(e.to_string()),
            other => CliError::Invalid(other.to_string()),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Output directory: `BACKSTEP_OUT` if set, else the configured directory
/// relative to the config file.
pub fn output_dir(cfg: &RunConfig, config_path: &Path) -> PathBuf {
    if let Some(dir) = std::env::var_os("BACKSTEP_OUT") {
        return PathBuf::from(dir);
    }
    let dir = &cfg.output.directory;
    if dir.is_absolute() {
        dir.clone()
    } else {
        config_path.parent().unwrap_or(Path::new(".")).join(dir)
    }
}

/// Writes through a temporary file in `dir` and renames it into place.
pub fn write_atomic(dir: &Path, name: &str, contents: &str) -> CliResult<PathBuf> {
    let io = |e: std::io::Error| CliError::Invalid(format!("cannot write {name}: {e}"));
    std::fs::create_dir_all(dir).map_err(io)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    tmp.write_all(contents.as_bytes()).map_err(io)?;
    let path = dir.join(name);
    tmp.persist(&path).map_err(|e| io(e.error))?;
    Ok(path)
}

fn phi_csv(gains: &GainSet) -> Result<String> {
    let n = gains.plant.n();
    let mut s = String::from("x");
    for k in 1..=n {
        s.push_str(&format!(",phi_{k}"));
    }
    for k in 1..=n {
        s.push_str(&format!(",dphi_{k}"));
    }
    s.push('\n');
    for &x in &gains.grid.nodes {
        let v = gains.phi.eval(x)?;
        let d = gains.phi.derivative(x)?;
        let cells: Vec<String> =
            std::iter::once(x).chain(v.iter().cloned()).chain(d.iter().cloned()).map(|c| format!("{c:.17e}")).collect();
        s.push_str(&cells.join(","));
        s.push('\n');
    }
    Ok(s)
}

pub fn synthesize_cmd(cfg: &RunConfig, out: &Path) -> CliResult<()> {
    let plant = cfg.plant()?;
    let mut spec = cfg.experiment(plant)?;
    spec.h = cfg.synthesis.kernel_h.unwrap_or(spec.h);
    let syn = synthesize(&spec)?;
    let g = &syn.gains;
    write_atomic(out, "k1.csv", &g.k1.to_csv())?;
    write_atomic(out, "k2.csv", &g.k2.to_csv())?;
    write_atomic(out, "phi.csv", &phi_csv(g)?)?;
    let mut report = syn.cert.report(&g.gain);
    report.push_str(&format!(
        "feedback_sign = {:?}\nkernel_h1 = {:.17e}\nkernel_h2 = {:.17e}\nk1_terms = {}\nk1_tail_bound = {:.17e}\ninequalities_hold = {}\n",
        g.feedback_sign,
        g.grid.h1,
        g.grid.h2,
        g.k1.terms(),
        g.k1.tail_bound,
        syn.cert.inequalities_hold()
    ));
    write_atomic(out, "certificate.txt", &report)?;
    println!("synthesized K = {:?}, delta = {:.6e}, outputs in {}", g.gain.k.as_slice(), syn.cert.delta, out.display());
    Ok(())
}

fn initial_state(cfg: &RunConfig, syn: &Synthesis) -> CliResult<CascadeState> {
    let grid = syn.gains.grid.clone();
    let n = syn.gains.plant.n();
    match cfg.initial()? {
        Initial::Compatible => Ok(compatible_initial_state(&syn.gains)?),
        Initial::Sine(k) => {
            let l = grid.l;
            let u = grid.sample(|x| (k as f64 * PI * x / l).sin());
            Ok(CascadeState::from_field(grid, cfg.x0(n)?, &u, 0.0)?)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Mode {
    Open,
    Closed,
    Target,
}

pub fn simulate_cmd(cfg: &RunConfig, mode: Mode, out: &Path) -> CliResult<()> {
    let spec = cfg.experiment(cfg.plant()?)?;
    let syn = synthesize(&spec)?;
    let cfg_sim = SimConfig::new(syn.gains.grid.clone(), spec.dt, spec.t_end, spec.scheme, spec.record_every)?;
    let probes = &cfg.output.probes;
    let (name, csv, h, y) = match mode {
        Mode::Open => {
            let s0 = initial_state(cfg, &syn)?;
            let tr = simulate_open_loop(&syn.gains.plant, &s0, &cfg_sim)?;
            ("trace_open.csv", trace_csv(&tr, probes), tr.norm_h.clone(), tr.norm_y.clone())
        }
        Mode::Closed => {
            let s0 = initial_state(cfg, &syn)?;
            let run = run_closed_loop_from(&spec, &syn, s0)?;
            if !run.compatibility.pass {
                log::warn!("initial data fail the compatibility screen: {:?}", run.compatibility);
            }
            let tr = &run.trace;
            ("trace_closed.csv", trace_csv(tr, probes), tr.norm_h.clone(), tr.norm_y.clone())
        }
        Mode::Target => {
            let w0 = match cfg.initial()? {
                Initial::Compatible => forward_transform(&compatible_initial_state(&syn.gains)?, &syn.gains)?,
                Initial::Sine(k) => {
                    let grid = syn.gains.grid.clone();
                    let l = grid.l;
                    let w = grid.sample(|x| (k as f64 * PI * x / l).sin());
                    TargetState::from_field(grid, cfg.x0(spec.plant.n())?, &w, 0.0)?
                }
            };
            let mut tr = simulate_target(&syn.gains, &w0, &cfg_sim)?;
            tr.lyapunov = Some(lyapunov_trace_target(&tr, &syn.cert).values);
            ("trace_target.csv", trace_csv(&tr, probes), tr.norm_h.clone(), tr.norm_y.clone())
        }
    };
    let path = write_atomic(out, name, &csv)?;
    let last = h.len() - 1;
    println!(
        "mode={mode:?} T={} norm_H {:.6e} -> {:.6e} norm_Y {:.6e} -> {:.6e} trace={}",
        spec.t_end,
        h[0],
        h[last],
        y[0],
        y[last],
        path.display()
    );
    Ok(())
}

fn parse_gain(certificate: &str) -> CliResult<RowDVector<f64>> {
    let line = certificate
        .lines()
        .find_map(|l| l.strip_prefix("k = "))
        .ok_or_else(|| CliError::Invalid("certificate.txt has no `k = [...]` line".into()))?;
    let inner = line.trim().trim_start_matches('[').trim_end_matches(']');
    let values: std::result::Result<Vec<f64>, _> = inner.split(',').map(|v| v.trim().parse::<f64>()).collect();
    let values = values.map_err(|e| CliError::Invalid(format!("certificate.txt: bad gain entry: {e}")))?;
    Ok(RowDVector::from_row_slice(&values))
}

fn read_artifact(out: &Path, name: &str) -> CliResult<String> {
    std::fs::read_to_string(out.join(name))
        .map_err(|e| CliError::Invalid(format!("missing artifact {}: {e}; run `synthesize` first", out.join(name).display())))
}

struct Check {
    name: &'static str,
    pass: bool,
    detail: String,
}

fn round_trip_error(gains: &GainSet, samples: usize) -> Result<f64> {
    let grid = gains.grid.clone();
    let n = gains.plant.n();
    let mut worst: f64 = 0.0;
    for s in 0..samples {
        // Deterministic family of smooth states.
        let c: Vec<f64> = (1..=6).map(|k| ((s * 7 + k * 13) as f64).sin()).collect();
        let u = grid.sample(|x| c.iter().enumerate().map(|(k, ck)| ck * ((k + 1) as f64 * PI * x / grid.l).sin()).sum());
        let x = DVector::from_fn(n, |i, _| ((s + i) as f64 * 0.37).cos());
        let state = CascadeState::from_field(grid.clone(), x, &u, 0.0)?;
        let back = inverse_transform(&forward_transform(&state, gains)?, gains)?;
        for (a, b) in state.u1.iter().chain(&state.u2).zip(back.u1.iter().chain(&back.u2)) {
            worst = worst.max((a - b).abs());
        }
    }
    Ok(worst)
}

pub fn verify_cmd(cfg: &RunConfig, out: &Path) -> CliResult<()> {
    let plant = cfg.plant()?;
    let cert_text = read_artifact(out, "certificate.txt")?;
    let k1_text = read_artifact(out, "k1.csv")?;
    let k2_text = read_artifact(out, "k2.csv")?;
    let gain = parse_gain(&cert_text)?;
    if gain.len() != plant.n() {
        return Err(CliError::Invalid("certificate gain does not match the plant dimension".into()));
    }
    let k1 = KernelGrid::from_csv(&k1_text, KernelKind::K1, Some(gain))?;
    let k2 = KernelGrid::from_csv(&k2_text, KernelKind::K2, None)?;

    let mut checks = Vec::new();
    for (name, kg) in [("k1_residual", &k1), ("k2_residual", &k2)] {
        let r = kernel_residual(kg, &plant)?;
        let bc_tol = 1e-8 + kg.h * kg.h;
        checks.push(Check {
            name,
            pass: r.interior <= 1e-2 && r.bc <= bc_tol,
            detail: format!("interior {:.3e} (limit 1e-2), bc {:.3e} (limit {bc_tol:.1e})", r.interior, r.bc),
        });
    }

    let spec = cfg.experiment(plant)?;
    let syn = synthesize(&spec)?;
    let rt = round_trip_error(&syn.gains, 20)?;
    checks.push(Check { name: "round_trip", pass: rt <= 1e-10, detail: format!("max error {rt:.3e}") });

    let s0 = initial_state(cfg, &syn)?;
    let run = run_closed_loop_from(&spec, &syn, s0)?;
    let c = run.compatibility;
    checks.push(Check {
        name: "compatibility",
        pass: c.pass,
        detail: format!("c1 {:.3e}, c2 {:.3e}", c.c1, c.c2),
    });
    let lt = &run.lyapunov;
    checks.push(Check {
        name: "lyapunov_envelope",
        pass: lt.envelope_holds() && lt.monotone() && lt.sandwich,
        detail: format!(
            "max V/(V0 e^-dt) {:.4}, max rise {:.3e} V0, sandwich {}",
            lt.max_envelope_ratio, lt.max_increase, lt.sandwich
        ),
    });
    let min_re = spec.poles.iter().map(|p| p.re.abs()).fold(f64::INFINITY, f64::min);
    let floor = 0.8 * (PI * PI / (spec.plant.l * spec.plant.l)).min(min_re);
    let ratio = run.norm_ratio();
    let (pass, detail) = match &run.decay {
        Ok(d) => (
            d.fitted_rate > 0.0 && d.fitted_rate >= floor && ratio <= 1e-2,
            format!("fitted rate {:.4} (floor {floor:.4}), norm_Y ratio {ratio:.3e}", d.fitted_rate),
        ),
        Err(e) => (false, e.to_string()),
    };
    checks.push(Check { name: "decay_fit", pass, detail });

    let report: String = checks
        .iter()
        .map(|c| format!("{} = {} ; {}\n", c.name, if c.pass { "PASS" } else { "FAIL" }, c.detail))
        .collect();
    write_atomic(out, "verify_report.txt", &report)?;
    print!("{report}");
    let failing: Vec<String> = checks.iter().filter(|c| !c.pass).map(|c| c.name.to_string()).collect();
    if failing.is_empty() {
        Ok(())
    } else {
        Err(CliError::Checks(failing))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum SweepParam {
    Xi,
    Lambda,
}

struct SweepRow {
    value: f64,
    fitted_rate: f64,
    delta: f64,
    unstable_modes: usize,
    norm_ratio: f64,
    error: String,
}

fn sweep_one(cfg: &RunConfig, base: &ExperimentSpec, param: SweepParam, value: f64) -> SweepRow {
    let plant = match param {
        SweepParam::Xi => base.plant.with_xi(value),
        SweepParam::Lambda => base.plant.with_lambda(value),
    };
    let unstable_modes = plant.as_ref().map_or(0, |p| unstable_mode_count(p.lambda, p.l));
    let mut row = SweepRow {
        value,
        fitted_rate: f64::NAN,
        delta: f64::NAN,
        unstable_modes,
        norm_ratio: f64::NAN,
        error: String::new(),
    };
    let result = plant.and_then(|p| {
        let spec = ExperimentSpec { plant: p, ..base.clone() };
        let syn = synthesize(&spec)?;
        row.delta = syn.cert.delta;
        let s0 = initial_state(cfg, &syn).map_err(|e| BackstepError::Config(e.to_string()))?;
        let run = run_closed_loop_from(&spec, &syn, s0)?;
        row.norm_ratio = run.norm_ratio();
        run.decay.map(|d| d.fitted_rate)
    });
    match result {
        Ok(rate) => row.fitted_rate = rate,
        Err(e) => row.error = e.to_string().replace([',', '\n'], ";"),
    }
    row
}

pub fn sweep_cmd(cfg: &RunConfig, param: SweepParam, values: &[f64], out: &Path) -> CliResult<()> {
    if values.is_empty() {
        return Err(CliError::Invalid("sweep needs at least one value".into()));
    }
    let base = cfg.experiment(cfg.plant()?)?;
    let rows: Vec<SweepRow> = values.par_iter().map(|&v| sweep_one(cfg, &base, param, v)).collect();
    let name = match param {
        SweepParam::Xi => "xi",
        SweepParam::Lambda => "lambda",
    };
    let mut csv = String::from("parameter,value,fitted_rate,delta,unstable_modes,norm_ratio,pass,error\n");
    for r in &rows {
        csv.push_str(&format!(
            "{name},{},{:.10e},{:.10e},{},{:.10e},{},{}\n",
            r.value,
            r.fitted_rate,
            r.delta,
            r.unstable_modes,
            r.norm_ratio,
            r.error.is_empty() && r.fitted_rate > 0.0,
            r.error
        ));
    }
    let path = write_atomic(out, &format!("sweep_{name}.csv"), &csv)?;
    print!("{csv}");
    println!("sweep written to {}", path.display());
    Ok(())
}
