//! Scenario configuration, seeded Monte-Carlo execution and CSV artifacts.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::cubature::{make_rule, stability_factor, RuleKind};
use crate::dual::{
    DualError, DualSetup, Estimator, EstimatorSpec, HybridConfig, ParamEvolution, ParamMeasurement, PropagationCheck,
};
use crate::fdii::{
    calibrate_thresholds, classify, confusion_metrics, healthy_reference, residual, run_metrics, trailing_mean, CalibrationPolicy,
    Confusion, Detector, FdiiError, FdiiRecord, MetricsWindow, RunMetrics, Thresholds, HEALTHY_CLASS,
};
use crate::filter::{CubatureFilter, FnTransition, GaussianBelief};
use crate::fmt17;
use crate::gte::{
    gte_measure, inject_fault, EngineFile, FaultEvent, FaultProfile, FaultSchedule, GteDiscrete, GteModel, Health,
    Integrator, Meas, Mode, PlantError, State, UncertaintyConfig, HEALTHY, MEAS_NAMES, NTHETA, NX, NZ, PARAM_NAMES,
    STATE_NAMES,
};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("config error: {0}")]
    Config(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Plant(#[from] PlantError),
    #[error(transparent)]
    Estimator(#[from] DualError),
    #[error(transparent)]
    Fdii(#[from] FdiiError),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ScenarioError + '_ {
    move |source| ScenarioError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSection {
    pub name: String,
    pub horizon: f64,
    #[serde(default = "default_sample_time")]
    pub sample_time: f64,
    /// Truth integrator steps per sample.
    #[serde(default = "default_substeps")]
    pub truth_substeps: usize,
    #[serde(default = "default_runs")]
    pub runs: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

fn default_sample_time() -> f64 {
    0.1
}
fn default_substeps() -> usize {
    10
}
fn default_runs() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlantSection {
    /// Engine constants file; the bundled constants when absent.
    pub engine: Option<PathBuf>,
    pub filter_integrator: Integrator,
    pub filter_substeps: usize,
    /// Fuel flow (kg/s); the design value when absent.
    pub fuel_flow: Option<f64>,
}

impl Default for PlantSection {
    fn default() -> Self {
        Self {
            engine: None,
            filter_integrator: Integrator::Rk4,
            filter_substeps: 10,
            fuel_flow: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSection {
    /// Measurement noise standard deviation relative to the trim measurement.
    pub meas_rel: f64,
    /// Process noise standard deviation per sample relative to the trim state.
    pub proc_rel: f64,
}

impl Default for NoiseSection {
    fn default() -> Self {
        Self {
            meas_rel: 0.005,
            proc_rel: 0.0005,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitSection {
    pub theta_std: f64,
    pub x_rel: f64,
    /// Parameter random-walk variance per sample.
    pub tau: f64,
    /// Draw the initial state estimate from its prior instead of using trim.
    pub perturb_state: bool,
    /// Draw the initial parameter estimate from its prior instead of 1.
    pub perturb_param: bool,
}

impl Default for InitSection {
    fn default() -> Self {
        Self {
            theta_std: 0.02,
            x_rel: 0.01,
            tau: 1e-5,
            perturb_state: false,
            perturb_param: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FdiiSection {
    /// Filter settling time before the healthy reference window opens.
    pub burn_in: f64,
    /// Length of the healthy reference window.
    pub window: f64,
    pub persistence: usize,
    /// Trailing moving-average length applied to residuals (1 = off).
    pub average: usize,
    pub quantile: f64,
    pub safety: f64,
    pub floor: f64,
    pub min_runs: usize,
    pub calibration_runs: usize,
    /// Precomputed thresholds (JSON); skips calibration.
    pub thresholds: Option<PathBuf>,
    /// Bound on the largest parameter-covariance eigenvalue.
    pub lambda_max: f64,
    /// Trailing window for MAE%.
    pub tail: f64,
}

impl Default for FdiiSection {
    fn default() -> Self {
        Self {
            burn_in: 0.5,
            window: 2.0,
            persistence: 3,
            average: 1,
            quantile: 0.999,
            safety: 1.1,
            floor: 1e-6,
            min_runs: 50,
            calibration_runs: 50,
            thresholds: None,
            lambda_max: 1e-3,
            tail: 2.0,
        }
    }
}

impl FdiiSection {
    pub fn monitor_start(&self) -> f64 {
        self.burn_in + self.window
    }

    pub fn policy(&self) -> CalibrationPolicy {
        CalibrationPolicy {
            quantile: self.quantile,
            safety: self.safety,
            floor: self.floor,
            min_runs: self.min_runs,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    #[default]
    Cubature,
    Particle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorEntry {
    pub label: String,
    #[serde(default)]
    pub kind: EstimatorKind,
    #[serde(default = "default_state_kind")]
    pub state_kind: RuleKind,
    #[serde(default = "default_param_kind")]
    pub param_kind: RuleKind,
    #[serde(default)]
    pub modified_propagation: bool,
    #[serde(default)]
    pub param_meas: ParamMeasurement,
    #[serde(default = "default_particles")]
    pub particles: usize,
    /// Per-parameter evolution models; compressor parameters linear and
    /// turbine parameters exponential when absent.
    #[serde(default)]
    pub param_models: Option<Vec<ParamEvolution>>,
}

fn default_state_kind() -> RuleKind {
    RuleKind::CnfVI
}
fn default_param_kind() -> RuleKind {
    RuleKind::CnfI
}
fn default_particles() -> usize {
    500
}

impl EstimatorEntry {
    pub fn cubature(label: &str, state_kind: RuleKind, param_kind: RuleKind) -> Self {
        Self {
            label: label.to_string(),
            kind: EstimatorKind::Cubature,
            state_kind,
            param_kind,
            modified_propagation: false,
            param_meas: ParamMeasurement::default(),
            particles: default_particles(),
            param_models: None,
        }
    }

    pub fn particle(label: &str, particles: usize) -> Self {
        Self {
            kind: EstimatorKind::Particle,
            particles,
            ..Self::cubature(label, RuleKind::CnfVI, RuleKind::CnfI)
        }
    }

    pub fn spec(&self, sample_time: f64) -> EstimatorSpec {
        let models = self
            .param_models
            .clone()
            .unwrap_or_else(|| default_param_models(sample_time));
        match self.kind {
            EstimatorKind::Cubature => EstimatorSpec::Cubature(HybridConfig {
                state_kind: self.state_kind,
                param_kind: self.param_kind,
                modified_propagation: self.modified_propagation,
                param_meas: self.param_meas,
                param_models: models,
            }),
            EstimatorKind::Particle => EstimatorSpec::Particle {
                particles: self.particles,
                param_models: models,
            },
        }
    }
}

/// Reversion rate (1/s) of turbine parameters toward nominal.
pub const TURBINE_REVERSION: f64 = -0.2;

/// Linear (random-walk) models for compressor parameters, exponential
/// models reverting to 1 for turbine parameters.
pub fn default_param_models(dt: f64) -> Vec<ParamEvolution> {
    (0..NTHETA)
        .map(|i| {
            if Mode(i).is_compressor() {
                ParamEvolution::Linear { alpha: 0.0, dt }
            } else {
                ParamEvolution::Exponential {
                    alpha: TURBINE_REVERSION,
                    beta: 1.0,
                    dt,
                }
            }
        })
        .collect()
}

/// Single-mode fault protocol for the confusion matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConfusionSection {
    pub runs: usize,
    pub severity_min: f64,
    pub severity_max: f64,
    pub onset: f64,
}

impl Default for ConfusionSection {
    fn default() -> Self {
        Self {
            runs: 90,
            severity_min: 0.01,
            severity_max: 0.10,
            onset: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub scenario: ScenarioSection,
    #[serde(default)]
    pub plant: PlantSection,
    #[serde(default)]
    pub noise: NoiseSection,
    #[serde(default)]
    pub init: InitSection,
    #[serde(default)]
    pub fdii: FdiiSection,
    #[serde(default)]
    pub uncertainty: Option<UncertaintyConfig>,
    #[serde(default, rename = "fault")]
    pub faults: Vec<FaultEvent>,
    #[serde(rename = "estimator")]
    pub estimators: Vec<EstimatorEntry>,
    #[serde(default)]
    pub confusion: Option<ConfusionSection>,
}

impl ScenarioFile {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: String| Err(ScenarioError::Config(m));
        let s = &self.scenario;
        if !(s.horizon.is_finite() && s.horizon > 0.0) {
            return bad(format!("scenario.horizon must be positive, got {}", s.horizon));
        }
        if !(s.sample_time.is_finite() && s.sample_time > 0.0) || s.truth_substeps == 0 || self.plant.filter_substeps == 0 {
            return bad("sample_time and substep counts must be positive".into());
        }
        if self.estimators.is_empty() {
            return bad("at least one [[estimator]] is required".into());
        }
        let mut labels = BTreeSet::new();
        for e in &self.estimators {
            if !labels.insert(e.label.as_str()) {
                return bad(format!("duplicate estimator label '{}'", e.label));
            }
            if e.label.is_empty() || e.label.contains(['/', '\\']) {
                return bad(format!("estimator label '{}' is not a valid directory name", e.label));
            }
            if let EstimatorSpec::Cubature(c) = e.spec(s.sample_time) {
                c.validate(NTHETA).map_err(|er| ScenarioError::Config(format!("estimator '{}': {er}", e.label)))?;
            }
        }
        FaultSchedule {
            events: self.faults.clone(),
        }
        .validate()
        .map_err(ScenarioError::Config)?;
        if let Some(u) = &self.uncertainty {
            u.validate().map_err(ScenarioError::Config)?;
        }
        if self.fdii.average == 0 || self.fdii.persistence == 0 {
            return bad("fdii.average and fdii.persistence must be at least 1".into());
        }
        if self.fdii.monitor_start() >= s.horizon {
            return bad("fdii burn_in + window must end before the horizon".into());
        }
        Ok(())
    }
}

/// Parse scenario text, applying `--set` overrides first.
pub fn parse_scenario(text: &str, overrides: &[String]) -> Result<ScenarioFile, ScenarioError> {
    let mut value: toml::Value = toml::from_str::<toml::Table>(text)
        .map(toml::Value::Table)
        .map_err(|e| ScenarioError::Config(e.to_string()))?;
    for o in overrides {
        set_dotted(&mut value, o)?;
    }
    let file: ScenarioFile = value
        .try_into()
        .map_err(|e: toml::de::Error| ScenarioError::Config(e.to_string()))?;
    file.validate()?;
    Ok(file)
}

/// Set a dotted key (`scenario.runs`, `estimator.0.state_kind`) inside a TOML value.
pub fn set_dotted(root: &mut toml::Value, assignment: &str) -> Result<(), ScenarioError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| ScenarioError::Config(format!("override '{assignment}' is not key=value")))?;
    let value: toml::Value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.trim().to_string()),
    };
    let parts: Vec<&str> = key.trim().split('.').collect();
    let mut cur = root;
    for (i, p) in parts.iter().enumerate() {
        let last = i + 1 == parts.len();
        cur = match cur {
            toml::Value::Table(t) => {
                if last {
                    t.insert(p.to_string(), value);
                    return Ok(());
                }
                t.entry(p.to_string())
                    .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            }
            toml::Value::Array(a) => {
                let len = a.len();
                let idx: usize = p
                    .parse()
                    .map_err(|_| ScenarioError::Config(format!("'{p}' in '{key}' must index an array")))?;
                let slot = a
                    .get_mut(idx)
                    .ok_or_else(|| ScenarioError::Config(format!("index {idx} out of range ({len}) in '{key}'")))?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            _ => return Err(ScenarioError::Config(format!("'{key}' descends into a scalar"))),
        };
    }
    Ok(())
}

/// Load a scenario file and apply overrides; relative paths inside it are
/// resolved against the file's directory.
pub fn load_scenario(path: &Path, overrides: &[String]) -> Result<ScenarioFile, ScenarioError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut file = parse_scenario(&text, overrides)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let rebase = |p: &mut Option<PathBuf>| {
        if let Some(q) = p {
            if q.is_relative() {
                *q = base.join(&*q);
            }
        }
    };
    rebase(&mut file.plant.engine);
    rebase(&mut file.fdii.thresholds);
    Ok(file)
}

/// Noise roles of the per-run random streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamRole {
    Process = 0,
    Measurement = 1,
    FilterInit = 2,
    FaultDraw = 3,
}

/// Independent stream for `(seed, run, role)`.
pub fn stream_rng(seed: u64, run: u64, role: StreamRole) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(run.wrapping_mul(4).wrapping_add(role as u64));
    rng
}

/// Run indices reserved for healthy calibration runs.
pub const CALIBRATION_OFFSET: u64 = 1 << 32;
/// Run indices reserved for the confusion-matrix protocol.
pub const CONFUSION_OFFSET: u64 = 2 << 32;

/// Engine, trim point and noise levels shared by every run.
#[derive(Debug, Clone)]
pub struct Engine {
    pub model: GteModel,
    pub filter_plant: GteDiscrete,
    pub trim: State,
    pub fuel_flow: f64,
    pub z_trim: Meas,
    pub proc_std: State,
    pub meas_std: Meas,
    pub sample_time: f64,
    pub truth_substeps: usize,
    pub steps: usize,
}

impl Engine {
    pub fn new(file: &ScenarioFile) -> Result<Self, ScenarioError> {
        let engine_file = match &file.plant.engine {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(io_err(p))?;
                EngineFile::from_toml(&text).map_err(|e| ScenarioError::Config(format!("{}: {e}", p.display())))?
            }
            None => EngineFile::default(),
        };
        let model = GteModel::new(&engine_file)?;
        let fuel_flow = file.plant.fuel_flow.unwrap_or(model.design.fuel_flow);
        let trim = model.trim(&HEALTHY, fuel_flow)?;
        let z_trim = model.measure(&trim, &HEALTHY)?;
        let s = &file.scenario;
        let filter_plant = GteDiscrete::new(
            model.clone(),
            s.sample_time,
            file.plant.filter_substeps,
            file.plant.filter_integrator,
        );
        Ok(Self {
            proc_std: trim.map(|v| file.noise.proc_rel * v),
            meas_std: z_trim.map(|v| file.noise.meas_rel * v),
            model,
            filter_plant,
            trim,
            fuel_flow,
            z_trim,
            sample_time: s.sample_time,
            truth_substeps: s.truth_substeps,
            steps: (s.horizon / s.sample_time).round() as usize,
        })
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.sample_time
    }
}

/// Truth trajectory sampled at `t_k = k Ts`, `k = 1..=steps`.
#[derive(Debug, Clone, PartialEq)]
pub struct Truth {
    pub t: Vec<f64>,
    pub x: Vec<State>,
    pub z: Vec<Meas>,
    pub theta: Vec<Health>,
    /// Set when the plant left its envelope; samples stop there.
    pub fault: Option<String>,
}

/// One Monte-Carlo realization's fault and uncertainty setting.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub run: u64,
    pub schedule: FaultSchedule,
    pub uncertainty: Option<UncertaintyConfig>,
}

pub fn simulate_truth(eng: &Engine, seed: u64, spec: &RunSpec) -> Truth {
    let mut prng = stream_rng(seed, spec.run, StreamRole::Process);
    let mut mrng = stream_rng(seed, spec.run, StreamRole::Measurement);
    let h = eng.sample_time / eng.truth_substeps as f64;
    let mut x = eng.trim;
    let mut out = Truth {
        t: Vec::with_capacity(eng.steps),
        x: Vec::with_capacity(eng.steps),
        z: Vec::with_capacity(eng.steps),
        theta: Vec::with_capacity(eng.steps),
        fault: None,
    };
    for k in 1..=eng.steps {
        let t0 = eng.time(k - 1);
        let step = (|| -> Result<(State, Meas, Health), PlantError> {
            let mut y = x;
            for j in 0..eng.truth_substeps {
                let ts = t0 + j as f64 * h;
                let th = inject_fault(&HEALTHY, &spec.schedule, ts);
                y = eng.model.rk4_step(&y, &th, eng.fuel_flow, h)?;
            }
            for (yi, sd) in y.iter_mut().zip(&eng.proc_std) {
                *yi += sd * prng.sample::<f64, _>(StandardNormal);
            }
            let t = eng.time(k);
            let th = inject_fault(&HEALTHY, &spec.schedule, t);
            let mut v = [0.0; NZ];
            for (vi, sd) in v.iter_mut().zip(&eng.meas_std) {
                *vi = sd * mrng.sample::<f64, _>(StandardNormal);
            }
            let u = spec.uncertainty.as_ref().filter(|u| u.is_active() && t >= u.onset - 1e-9);
            let z = gte_measure(&eng.model, &y, &th, eng.fuel_flow, u, Some(&v), &eng.z_trim)?;
            Ok((y, z, th))
        })();
        match step {
            Ok((y, z, th)) => {
                x = y;
                out.t.push(eng.time(k));
                out.x.push(y);
                out.z.push(z);
                out.theta.push(th);
            }
            Err(e) => {
                out.fault = Some(format!("step {k}: {e}"));
                break;
            }
        }
    }
    out
}

/// Initial beliefs and noise square roots for one run.
pub fn dual_setup(eng: &Engine, init: &InitSection, seed: u64, run: u64) -> DualSetup {
    let mut x0 = DVector::from_column_slice(&eng.trim);
    let sx = DVector::from_iterator(NX, eng.trim.iter().map(|v| init.x_rel * v));
    let mut theta0 = DVector::from_element(NTHETA, 1.0);
    let mut rng = stream_rng(seed, run, StreamRole::FilterInit);
    if init.perturb_state {
        for i in 0..NX {
            x0[i] += sx[i] * rng.sample::<f64, _>(StandardNormal);
        }
    }
    if init.perturb_param {
        for i in 0..NTHETA {
            theta0[i] += init.theta_std * rng.sample::<f64, _>(StandardNormal);
        }
    }
    DualSetup {
        sqrt_q: DMatrix::from_diagonal(&DVector::from_column_slice(&eng.proc_std)),
        sqrt_r: DMatrix::from_diagonal(&DVector::from_column_slice(&eng.meas_std)),
        sqrt_tau: DMatrix::identity(NTHETA, NTHETA) * init.tau.sqrt(),
        x0: GaussianBelief::new(x0, DMatrix::from_diagonal(&sx)),
        theta0: GaussianBelief::new(
            theta0,
            DMatrix::identity(NTHETA, NTHETA) * init.theta_std,
        ),
    }
}

/// Estimator output aligned with the truth samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub t: Vec<f64>,
    pub theta: Vec<Vec<f64>>,
    pub x: Vec<Vec<f64>>,
    pub lambda_max: Vec<f64>,
    /// `(step, message)` when the estimator gave up.
    pub failure: Option<(usize, String)>,
    pub frozen_steps: usize,
    pub jitter_events: usize,
    pub propagation: Vec<PropagationCheck>,
}

pub fn run_estimator(eng: &Engine, spec: &EstimatorSpec, setup: &DualSetup, truth: &Truth, seed: u64, run: u64) -> Trace {
    let mut trace = Trace {
        t: Vec::with_capacity(truth.t.len()),
        theta: Vec::with_capacity(truth.t.len()),
        x: Vec::with_capacity(truth.t.len()),
        lambda_max: Vec::with_capacity(truth.t.len()),
        failure: None,
        frozen_steps: 0,
        jitter_events: 0,
        propagation: Vec::new(),
    };
    let pf_seed = stream_rng(seed, run, StreamRole::FilterInit).random::<u64>();
    let mut est = match Estimator::new(spec, &eng.filter_plant, setup, pf_seed) {
        Ok(e) => e,
        Err(e) => {
            trace.failure = Some((0, e.to_string()));
            return trace;
        }
    };
    let u = [eng.fuel_flow];
    for (k, z) in truth.z.iter().enumerate() {
        let zv = DVector::from_column_slice(z);
        match est.step(&eng.filter_plant, &u, &u, &zv) {
            Ok(out) => {
                if out.frozen {
                    trace.frozen_steps += 1;
                }
                trace.t.push(truth.t[k]);
                trace.theta.push(out.param_mean.iter().copied().collect());
                trace.x.push(out.state_mean.iter().copied().collect());
                let sym = (&out.param_cov + out.param_cov.transpose()) * 0.5;
                trace.lambda_max.push(sym.symmetric_eigenvalues().max());
            }
            Err(e) => {
                trace.failure = Some((k + 1, e.to_string()));
                break;
            }
        }
    }
    trace.jitter_events = est.jitter_events();
    if let Estimator::Cubature(c) = &est {
        trace.propagation = c.ds.diag.propagation.clone();
    }
    trace
}

/// Residuals of every sample against the healthy reference, smoothed.
fn smoothed_residuals(trace: &Trace, fdii: &FdiiSection) -> Option<Vec<Vec<f64>>> {
    let href = healthy_reference(&trace.t, &trace.theta, fdii.burn_in, fdii.window)?;
    let raw: Vec<Vec<f64>> = trace.theta.iter().map(|th| residual(&href, th)).collect();
    Some(trailing_mean(&raw, fdii.average))
}

/// Residuals after the monitoring start, relative to the healthy reference.
pub fn residual_series(trace: &Trace, fdii: &FdiiSection) -> Option<(Vec<f64>, Vec<Vec<f64>>)> {
    let all = smoothed_residuals(trace, fdii)?;
    let start = fdii.monitor_start();
    let (t, r) = trace
        .t
        .iter()
        .zip(all)
        .filter(|(tk, _)| **tk >= start - 1e-9)
        .map(|(tk, r)| (*tk, r))
        .unzip();
    Some((t, r))
}

/// Residuals and decisions for every sample of a trace.
pub fn evaluate_trace(trace: &Trace, fdii: &FdiiSection, th: &Thresholds) -> Vec<FdiiRecord> {
    let all = smoothed_residuals(trace, fdii).unwrap_or_else(|| {
        let ones = vec![1.0; NTHETA];
        trace.theta.iter().map(|v| residual(&ones, v)).collect()
    });
    let start = fdii.monitor_start();
    let mut det = Detector::new(fdii.persistence, NTHETA);
    let zero = Thresholds {
        r_max: vec![f64::INFINITY; NTHETA],
        ..th.clone()
    };
    trace
        .t
        .iter()
        .zip(all)
        .map(|(tk, r)| {
            if *tk < start - 1e-9 {
                // outside the monitored period nothing can trip
                det.reset();
                det.decide(*tk, &r, &zero)
            } else {
                det.decide(*tk, &r, th)
            }
        })
        .collect()
}

/// Healthy-run thresholds for every estimator, calibrated jointly so all
/// estimators see the same truth realizations.
pub fn calibrate_all(file: &ScenarioFile, eng: &Engine) -> Result<Vec<Thresholds>, ScenarioError> {
    let seed = file.scenario.seed;
    let specs: Vec<EstimatorSpec> = file
        .estimators
        .iter()
        .map(|e| e.spec(file.scenario.sample_time))
        .collect();
    let per_run: Vec<Vec<Option<Vec<Vec<f64>>>>> = (0..file.fdii.calibration_runs as u64)
        .into_par_iter()
        .map(|i| {
            let run = CALIBRATION_OFFSET + i;
            let spec = RunSpec {
                run,
                schedule: FaultSchedule::default(),
                uncertainty: None,
            };
            let truth = simulate_truth(eng, seed, &spec);
            let setup = dual_setup(eng, &file.init, seed, run);
            specs
                .iter()
                .map(|s| {
                    let tr = run_estimator(eng, s, &setup, &truth, seed, run);
                    if tr.failure.is_some() {
                        return None;
                    }
                    residual_series(&tr, &file.fdii).map(|(_, r)| r)
                })
                .collect()
        })
        .collect();
    let mut out = Vec::new();
    for (j, e) in file.estimators.iter().enumerate() {
        let runs: Vec<Vec<Vec<f64>>> = per_run.iter().filter_map(|r| r[j].clone()).collect();
        let dropped = per_run.len() - runs.len();
        if dropped > 0 {
            log::warn!("{}: {dropped} calibration runs diverged and were dropped", e.label);
        }
        out.push(calibrate_thresholds(&runs, &file.fdii.policy(), seed)?);
    }
    Ok(out)
}

/// Everything one estimator produced over a scenario.
#[derive(Debug, Clone)]
pub struct LabelResult {
    pub label: String,
    pub name: String,
    pub thresholds: Thresholds,
    pub traces: Vec<Trace>,
    pub records: Vec<Vec<FdiiRecord>>,
    pub metrics: Vec<RunMetrics>,
    pub confusion: Option<Confusion>,
}

#[derive(Debug, Clone)]
pub struct ScenarioResult {
    pub file: ScenarioFile,
    pub config_hash: String,
    pub runs: Vec<RunSpec>,
    pub truths: Vec<Truth>,
    pub labels: Vec<LabelResult>,
}

/// Fault schedule of confusion run `i`: class `i mod 9` (8 is healthy),
/// severity drawn uniformly as a loss.
pub fn confusion_run(cfg: &ConfusionSection, seed: u64, i: u64) -> (usize, RunSpec) {
    let run = CONFUSION_OFFSET + i;
    let class = (i % 9) as usize;
    let mut rng = stream_rng(seed, run, StreamRole::FaultDraw);
    let sev = rng.random_range(cfg.severity_min..=cfg.severity_max);
    let schedule = if class == HEALTHY_CLASS {
        FaultSchedule::default()
    } else {
        FaultSchedule {
            events: vec![FaultEvent::abrupt(class, cfg.onset, -sev)],
        }
    };
    (
        class,
        RunSpec {
            run,
            schedule,
            uncertainty: None,
        },
    )
}

pub fn config_hash(file: &ScenarioFile) -> String {
    let canonical = serde_json::to_string(file).expect("config serializes");
    let digest = Sha256::digest(canonical.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn load_thresholds(path: &Path, labels: &[String]) -> Result<Vec<Thresholds>, ScenarioError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    if let Ok(single) = serde_json::from_str::<Thresholds>(&text) {
        return Ok(vec![single; labels.len()]);
    }
    let map: std::collections::BTreeMap<String, Thresholds> =
        serde_json::from_str(&text).map_err(|e| ScenarioError::Config(format!("{}: {e}", path.display())))?;
    labels
        .iter()
        .map(|l| {
            map.get(l)
                .cloned()
                .ok_or_else(|| ScenarioError::Config(format!("{}: no thresholds for '{l}'", path.display())))
        })
        .collect()
}

/// Calibrate (unless thresholds are supplied), run every Monte-Carlo
/// realization and evaluate all estimators.
pub fn execute(file: &ScenarioFile) -> Result<ScenarioResult, ScenarioError> {
    execute_with_thresholds(file, None)
}

/// As [`execute`], with per-estimator thresholds supplied in label order.
pub fn execute_with_thresholds(
    file: &ScenarioFile,
    thresholds: Option<Vec<Thresholds>>,
) -> Result<ScenarioResult, ScenarioError> {
    file.validate()?;
    let eng = Engine::new(file)?;
    let seed = file.scenario.seed;
    let labels: Vec<String> = file.estimators.iter().map(|e| e.label.clone()).collect();
    let thresholds = match (thresholds, &file.fdii.thresholds) {
        (Some(t), _) => {
            if t.len() != labels.len() || t.iter().any(|x| x.r_max.len() != NTHETA) {
                return Err(ScenarioError::Config("supplied thresholds do not match the estimators".into()));
            }
            t
        }
        (None, Some(p)) => load_thresholds(p, &labels)?,
        (None, None) => calibrate_all(file, &eng)?,
    };
    let specs: Vec<EstimatorSpec> = file
        .estimators
        .iter()
        .map(|e| e.spec(file.scenario.sample_time))
        .collect();
    let schedule = FaultSchedule {
        events: file.faults.clone(),
    };
    let mut runs: Vec<RunSpec> = (0..file.scenario.runs as u64)
        .map(|run| RunSpec {
            run,
            schedule: schedule.clone(),
            uncertainty: file.uncertainty.clone(),
        })
        .collect();
    let mut classes = Vec::new();
    if let Some(c) = &file.confusion {
        for i in 0..c.runs as u64 {
            let (class, spec) = confusion_run(c, seed, i);
            classes.push(class);
            runs.push(spec);
        }
    }
    let n_main = file.scenario.runs;
    let results: Vec<(Truth, Vec<Trace>)> = runs
        .par_iter()
        .map(|spec| {
            let truth = simulate_truth(&eng, seed, spec);
            let setup = dual_setup(&eng, &file.init, seed, spec.run);
            let traces = specs
                .iter()
                .map(|s| run_estimator(&eng, s, &setup, &truth, seed, spec.run))
                .collect();
            (truth, traces)
        })
        .collect();
    let window = MetricsWindow {
        monitor_start: file.fdii.monitor_start(),
        tail: file.fdii.tail,
    };
    let mut label_results = Vec::new();
    for (j, entry) in file.estimators.iter().enumerate() {
        let th = &thresholds[j];
        let mut traces = Vec::new();
        let mut records = Vec::new();
        let mut metrics = Vec::new();
        let mut confusion: Option<Confusion> = file.confusion.as_ref().map(|_| [[0; 9]; 9]);
        for (i, (truth, tr)) in results.iter().enumerate() {
            let trace = &tr[j];
            let recs = evaluate_trace(trace, &file.fdii, th);
            if i < n_main {
                let n = recs.len();
                let theta_true: Vec<Vec<f64>> = truth.theta[..n].iter().map(|v| v.to_vec()).collect();
                let x_true: Vec<Vec<f64>> = truth.x[..n].iter().map(|v| v.to_vec()).collect();
                metrics.push(run_metrics(
                    &runs[i].schedule,
                    &recs,
                    &trace.theta,
                    &trace.x,
                    &theta_true,
                    &x_true,
                    &window,
                ));
                traces.push(trace.clone());
                records.push(recs);
            } else if let Some(c) = confusion.as_mut() {
                let truth_class = classes[i - n_main];
                let pred = recs.last().map_or(HEALTHY_CLASS, |r| classify(r, th));
                c[truth_class][pred] += 1;
            }
        }
        let name = match &specs[j] {
            EstimatorSpec::Cubature(c) => c.name(),
            EstimatorSpec::Particle { .. } => "Dual-PF".to_string(),
        };
        label_results.push(LabelResult {
            label: entry.label.clone(),
            name,
            thresholds: th.clone(),
            traces,
            records,
            metrics,
            confusion,
        });
    }
    let truths = results.into_iter().take(n_main).map(|(t, _)| t).collect();
    runs.truncate(n_main);
    Ok(ScenarioResult {
        file: file.clone(),
        config_hash: config_hash(file),
        runs,
        truths,
        labels: label_results,
    })
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>, ScenarioError> {
    let f = fs::File::create(path).map_err(io_err(path))?;
    Ok(csv::Writer::from_writer(f))
}

fn opt17(v: Option<f64>) -> String {
    v.map(fmt17).unwrap_or_default()
}

fn schedule_modes(s: &FaultSchedule) -> String {
    s.events.iter().map(|e| e.mode.label()).collect::<Vec<_>>().join(";")
}

fn schedule_severity(s: &FaultSchedule) -> String {
    s.events
        .iter()
        .map(|e| fmt17(e.nominal_delta()))
        .collect::<Vec<_>>()
        .join(";")
}

/// Write every artifact of a finished scenario below `out`.
pub fn write_artifacts(res: &ScenarioResult, out: &Path) -> Result<(), ScenarioError> {
    fs::create_dir_all(out).map_err(io_err(out))?;
    let seed = res.file.scenario.seed;

    let mut w = csv_writer(&out.join("truth.csv"))?;
    let mut header = vec!["run".to_string(), "t".to_string()];
    header.extend(STATE_NAMES.iter().map(|s| format!("x_{s}")));
    header.extend(MEAS_NAMES.iter().map(|s| format!("z_{s}")));
    header.extend(PARAM_NAMES.iter().map(|s| format!("theta_{s}")));
    w.write_record(&header)?;
    for (spec, truth) in res.runs.iter().zip(&res.truths) {
        for k in 0..truth.t.len() {
            let mut row = vec![spec.run.to_string(), fmt17(truth.t[k])];
            row.extend(truth.x[k].iter().map(|v| fmt17(*v)));
            row.extend(truth.z[k].iter().map(|v| fmt17(*v)));
            row.extend(truth.theta[k].iter().map(|v| fmt17(*v)));
            w.write_record(&row)?;
        }
    }
    w.flush().map_err(io_err(out))?;

    let mut failed = Vec::new();
    for lr in &res.labels {
        let dir = out.join(&lr.label);
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;

        let mut w = csv_writer(&dir.join("residuals.csv"))?;
        let mut header = vec!["run".to_string(), "t".to_string()];
        header.extend((0..NTHETA).map(|m| format!("r_{}", Mode(m))));
        header.extend((0..NTHETA).map(|m| format!("trip_{}", Mode(m))));
        header.extend((0..NTHETA).map(|m| format!("threshold_{}", Mode(m))));
        w.write_record(&header)?;
        for (spec, recs) in res.runs.iter().zip(&lr.records) {
            for rec in recs {
                let mut row = vec![spec.run.to_string(), fmt17(rec.t)];
                row.extend(rec.r.iter().map(|v| fmt17(*v)));
                row.extend(rec.decisions.iter().map(|d| u8::from(*d).to_string()));
                row.extend(lr.thresholds.r_max.iter().map(|v| fmt17(*v)));
                w.write_record(&row)?;
            }
        }
        w.flush().map_err(io_err(&dir))?;

        let mut w = csv_writer(&dir.join("beliefs.csv"))?;
        let mut header = vec!["run".to_string(), "t".to_string()];
        header.extend(STATE_NAMES.iter().map(|s| format!("xhat_{s}")));
        header.extend(PARAM_NAMES.iter().map(|s| format!("thetahat_{s}")));
        header.push("lambda_max".into());
        w.write_record(&header)?;
        for (spec, tr) in res.runs.iter().zip(&lr.traces) {
            for k in 0..tr.t.len() {
                let mut row = vec![spec.run.to_string(), fmt17(tr.t[k])];
                row.extend(tr.x[k].iter().map(|v| fmt17(*v)));
                row.extend(tr.theta[k].iter().map(|v| fmt17(*v)));
                row.push(fmt17(tr.lambda_max[k]));
                w.write_record(&row)?;
            }
            if let Some((step, msg)) = &tr.failure {
                failed.push(serde_json::json!({"label": lr.label, "run": spec.run, "step": step, "error": msg}));
            }
        }
        w.flush().map_err(io_err(&dir))?;

        let mut w = csv_writer(&dir.join("metrics.csv"))?;
        let mut header: Vec<String> = ["config_id", "method", "seed", "run", "modes", "severity", "fdt", "far", "missed", "diverged"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        header.extend(PARAM_NAMES.iter().map(|s| format!("mae_pct_{s}")));
        header.extend(STATE_NAMES.iter().map(|s| format!("mae_pct_{s}")));
        w.write_record(&header)?;
        for ((spec, m), tr) in res.runs.iter().zip(&lr.metrics).zip(&lr.traces) {
            let mut row = vec![
                res.config_hash[..12].to_string(),
                lr.name.clone(),
                seed.to_string(),
                spec.run.to_string(),
                schedule_modes(&spec.schedule),
                schedule_severity(&spec.schedule),
                opt17(m.fdt),
                fmt17(m.far),
                m.missed.to_string(),
                tr.failure.is_some().to_string(),
            ];
            row.extend(m.mae_pct_theta.iter().map(|v| fmt17(*v)));
            row.extend(m.mae_pct_x.iter().map(|v| fmt17(*v)));
            w.write_record(&row)?;
        }
        w.flush().map_err(io_err(&dir))?;

        let tpath = dir.join("thresholds.json");
        fs::write(&tpath, serde_json::to_string_pretty(&lr.thresholds).expect("thresholds serialize"))
            .map_err(io_err(&tpath))?;

        if let Some(c) = &lr.confusion {
            let mut w = csv_writer(&dir.join("confusion.csv"))?;
            let mut header = vec!["true".to_string()];
            header.extend((0..8).map(|m| Mode(m).label()));
            header.push("healthy".into());
            w.write_record(&header)?;
            for (i, row) in c.iter().enumerate() {
                let name = if i == HEALTHY_CLASS { "healthy".to_string() } else { Mode(i).label() };
                let mut r = vec![name];
                r.extend(row.iter().map(|v| v.to_string()));
                w.write_record(&r)?;
            }
            w.flush().map_err(io_err(&dir))?;
            let m = confusion_metrics(c);
            let mut w = csv_writer(&dir.join("confusion_metrics.csv"))?;
            w.write_record(["metric", "value"])?;
            w.write_record(["ACC".to_string(), opt17(m.acc)])?;
            w.write_record(["FP".to_string(), opt17(m.fp)])?;
            for (j, p) in m.precision.iter().enumerate() {
                w.write_record([format!("P_{}", Mode(j)), opt17(*p)])?;
            }
            w.flush().map_err(io_err(&dir))?;
        }
    }

    let mut w = csv_writer(&out.join("summary.csv"))?;
    w.write_record(["label", "method", "runs", "mean_far", "runs_with_false_alarm", "detected", "mean_fdt", "diverged"])?;
    for lr in &res.labels {
        let n = lr.metrics.len().max(1) as f64;
        let far = lr.metrics.iter().map(|m| m.far).sum::<f64>() / n;
        let fa_runs = lr.metrics.iter().filter(|m| m.false_alarm_samples > 0).count();
        let fdts: Vec<f64> = lr.metrics.iter().filter_map(|m| m.fdt).collect();
        let mean_fdt = (!fdts.is_empty()).then(|| fdts.iter().sum::<f64>() / fdts.len() as f64);
        let diverged = lr.traces.iter().filter(|t| t.failure.is_some()).count();
        w.write_record([
            lr.label.clone(),
            lr.name.clone(),
            lr.metrics.len().to_string(),
            fmt17(far),
            fa_runs.to_string(),
            fdts.len().to_string(),
            opt17(mean_fdt),
            diverged.to_string(),
        ])?;
    }
    w.flush().map_err(io_err(out))?;

    let manifest = serde_json::json!({
        "scenario": res.file.scenario.name,
        "config_hash": res.config_hash,
        "seed": seed,
        "runs": res.file.scenario.runs,
        "version": env!("CARGO_PKG_VERSION"),
        "estimators": res.labels.iter().map(|l| serde_json::json!({"label": l.label, "method": l.name})).collect::<Vec<_>>(),
        "thresholds": if res.file.fdii.thresholds.is_some() { "file" } else { "calibrated" },
        "calibration_runs": res.file.fdii.calibration_runs,
        "truth_faults": res.truths.iter().zip(&res.runs).filter_map(|(t, s)| t.fault.as_ref().map(|f| serde_json::json!({"run": s.run, "fault": f}))).collect::<Vec<_>>(),
        "failed_runs": failed,
        "partial": !failed.is_empty() || res.truths.iter().any(|t| t.fault.is_some()),
        "config": res.file,
    });
    let mpath = out.join("manifest.json");
    let mut f = fs::File::create(&mpath).map_err(io_err(&mpath))?;
    f.write_all(serde_json::to_string_pretty(&manifest).expect("manifest serializes").as_bytes())
        .map_err(io_err(&mpath))?;
    Ok(())
}

/// Calibrate thresholds only and write one JSON file keyed by label.
pub fn calibrate_to(file: &ScenarioFile, out: &Path) -> Result<Vec<(String, Thresholds)>, ScenarioError> {
    let eng = Engine::new(file)?;
    let th = calibrate_all(file, &eng)?;
    let pairs: Vec<(String, Thresholds)> = file.estimators.iter().map(|e| e.label.clone()).zip(th).collect();
    fs::create_dir_all(out).map_err(io_err(out))?;
    let map: std::collections::BTreeMap<_, _> = pairs.iter().cloned().collect();
    let path = out.join("thresholds.json");
    fs::write(&path, serde_json::to_string_pretty(&map).expect("thresholds serialize")).map_err(io_err(&path))?;
    Ok(pairs)
}

/// Row of the point-count / stability-factor table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub kind: RuleKind,
    pub n: usize,
    pub points: Option<usize>,
    pub stability_factor: Option<f64>,
    /// Wall-clock per predict+update on a fixed nonlinear test model (microseconds).
    pub step_us: Option<f64>,
}

pub fn bench_points(nmin: usize, nmax: usize, reps: usize) -> Vec<BenchRow> {
    let mut rows = Vec::new();
    for n in nmin..=nmax {
        for kind in RuleKind::ALL {
            let Ok(rule) = make_rule(kind, n) else {
                rows.push(BenchRow {
                    kind,
                    n,
                    points: None,
                    stability_factor: None,
                    step_us: None,
                });
                continue;
            };
            let sf = stability_factor(&rule);
            let points = rule.len();
            let step_us = (reps > 0).then(|| time_filter_step(rule, reps));
            rows.push(BenchRow {
                kind,
                n,
                points: Some(points),
                stability_factor: Some(sf),
                step_us,
            });
        }
    }
    rows
}

fn time_filter_step(rule: crate::cubature::CubatureRule, reps: usize) -> f64 {
    let n = rule.n;
    let mut f = CubatureFilter::new(rule);
    let m = FnTransition::new(n, n, |x: &[f64], y: &mut [f64]| {
        for i in 0..x.len() {
            y[i] = x[i] + 0.1 * x[(i + 1) % x.len()].sin();
        }
    });
    let h = FnTransition::new(n, n, |x: &[f64], y: &mut [f64]| {
        for i in 0..x.len() {
            y[i] = x[i] + 0.05 * x[i] * x[i];
        }
    });
    let q = DMatrix::identity(n, n) * 0.1;
    let r = DMatrix::identity(n, n) * 0.2;
    let z = DVector::from_element(n, 0.1);
    let mut b = GaussianBelief::new(DVector::zeros(n), DMatrix::identity(n, n));
    let start = Instant::now();
    for _ in 0..reps {
        if let Ok((p, _)) = f.predict(&b, &m, &q) {
            if let Ok(u) = f.update(&p, &z, &h, &r) {
                b = u.belief;
            }
        }
    }
    start.elapsed().as_secs_f64() * 1e6 / reps as f64
}

pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["kind", "n", "points", "stability_factor", "step_us"]).expect("in-memory write");
    for r in rows {
        w.write_record([
            r.kind.label().to_string(),
            r.n.to_string(),
            r.points.map(|p| p.to_string()).unwrap_or_default(),
            opt17(r.stability_factor),
            opt17(r.step_us),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
}

/// Abrupt single-mode fault, a convenience for tests and examples.
pub fn abrupt(mode: usize, onset: f64, delta: f64) -> FaultEvent {
    FaultEvent {
        mode: Mode(mode),
        onset,
        profile: FaultProfile::Abrupt { delta },
    }
}
