//! TOML run configuration.

use std::path::{Path, PathBuf};

use backstep_core::experiment::ExperimentSpec;
use backstep_core::simulator::Scheme;
use backstep_core::system_model::{validate_plant, PlantSpec};
use backstep_core::transform::FeedbackSign;
use backstep_core::{BackstepError, Result};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::Deserialize;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub plant: PlantSection,
    #[serde(default)]
    pub synthesis: SynthesisSection,
    #[serde(default)]
    pub simulation: SimulationSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantSection {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub lambda: f64,
    pub l: f64,
    pub xi: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthesisSection {
    /// `[re, im]` pairs; defaults to `-1, ..., -n`.
    pub poles: Option<Vec<[f64; 2]>>,
    /// Defaults to the identity.
    pub q: Option<Vec<Vec<f64>>>,
    pub margin: f64,
    /// Spacing of the exported kernel grids; defaults to the simulation `h`.
    pub kernel_h: Option<f64>,
    pub tail_tol: f64,
    pub feedback_sign: String,
}

impl Default for SynthesisSection {
    fn default() -> Self {
        Self {
            poles: None,
            q: None,
            margin: 2.0,
            kernel_h: None,
            tail_tol: 1e-12,
            feedback_sign: "plus".into(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationSection {
    pub scheme: String,
    pub h: f64,
    pub dt: f64,
    #[serde(rename = "T")]
    pub t_end: f64,
    pub record_every: usize,
    /// `compatible` (inverse-transformed smooth profile) or `sine`.
    pub initial: String,
    /// Sine mode used by the `sine` recipe.
    pub mode: usize,
    /// Initial ODE state for the `sine` recipe; zero when absent.
    pub x0: Option<Vec<f64>>,
}

impl Default for SimulationSection {
    fn default() -> Self {
        Self {
            scheme: "crank_nicolson".into(),
            h: 1.0 / 200.0,
            dt: 1e-4,
            t_end: 2.0,
            record_every: 100,
            initial: "compatible".into(),
            mode: 1,
            x0: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub directory: PathBuf,
    pub probes: Vec<f64>,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { directory: PathBuf::from("out"), probes: vec![0.25, 0.5, 0.75] }
    }
}

/// Initial-data recipe.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Initial {
    Compatible,
    Sine(usize),
}

/// Command-line overrides for the discretization.
#[derive(Debug, Clone, Copy, Default)]
pub struct Overrides {
    pub h: Option<f64>,
    pub dt: Option<f64>,
    pub t_end: Option<f64>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| BackstepError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| BackstepError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn apply(&mut self, o: Overrides) {
        if let Some(h) = o.h {
            self.simulation.h = h;
        }
        if let Some(dt) = o.dt {
            self.simulation.dt = dt;
        }
        if let Some(t) = o.t_end {
            self.simulation.t_end = t;
        }
    }

    pub fn plant(&self) -> Result<PlantSpec> {
        let n = self.plant.b.len();
        if self.plant.a.len() != n || self.plant.a.iter().any(|r| r.len() != n) {
            return Err(BackstepError::BadDimension(format!("A must be {n}x{n} to match B")));
        }
        let a = DMatrix::from_fn(n, n, |i, j| self.plant.a[i][j]);
        let b = DVector::from_column_slice(&self.plant.b);
        validate_plant(PlantSpec { a, b, lambda: self.plant.lambda, l: self.plant.l, xi: self.plant.xi })
    }

    pub fn initial(&self) -> Result<Initial> {
        match self.simulation.initial.as_str() {
            "compatible" => Ok(Initial::Compatible),
            "sine" if self.simulation.mode >= 1 => Ok(Initial::Sine(self.simulation.mode)),
            "sine" => Err(BackstepError::Config("simulation.mode must be at least 1".into())),
            other => Err(BackstepError::Config(format!("unknown initial-data recipe {other:?}"))),
        }
    }

    /// Resolved experiment settings for `plant` (which may differ from the
    /// configured plant in a sweep).
    pub fn experiment(&self, plant: PlantSpec) -> Result<ExperimentSpec> {
        let n = plant.n();
        let mut spec = ExperimentSpec::defaults(plant);
        if let Some(p) = &self.synthesis.poles {
            if p.len() != n {
                return Err(BackstepError::BadDimension(format!("{} poles given for n = {n}", p.len())));
            }
            spec.poles = p.iter().map(|[re, im]| Complex64::new(*re, *im)).collect();
        }
        if let Some(q) = &self.synthesis.q {
            if q.len() != n || q.iter().any(|r| r.len() != n) {
                return Err(BackstepError::BadDimension(format!("Q must be {n}x{n}")));
            }
            spec.q = DMatrix::from_fn(n, n, |i, j| q[i][j]);
        }
        spec.margin = self.synthesis.margin;
        spec.tail_tol = self.synthesis.tail_tol;
        spec.feedback_sign = self.synthesis.feedback_sign.parse::<FeedbackSign>()?;
        spec.scheme = self.simulation.scheme.parse::<Scheme>()?;
        spec.h = self.simulation.h;
        spec.dt = self.simulation.dt;
        spec.t_end = self.simulation.t_end;
        spec.record_every = self.simulation.record_every;
        if !(spec.h > 0.0 && spec.dt > 0.0 && spec.t_end > 0.0) || spec.record_every == 0 {
            return Err(BackstepError::Config("h, dt, T and record_every must be positive".into()));
        }
        Ok(spec)
    }

    pub fn x0(&self, n: usize) -> Result<DVector<f64>> {
        match &self.simulation.x0 {
            None => Ok(DVector::zeros(n)),
            Some(v) if v.len() == n => Ok(DVector::from_column_slice(v)),
            Some(v) => Err(BackstepError::BadDimension(format!("x0 has {} entries, n = {n}", v.len()))),
        }
    }
}
