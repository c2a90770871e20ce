//! Dual state/parameter estimation: a state filter and a parameter filter
//! run in lockstep, each conditioning on the other's latest estimate.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cubature::{make_rule, CubatureRule, RuleError, RuleKind};
use crate::filter::{
    eval_rows, tria, weighted_mean, CubatureFilter, FilterError, GaussianBelief, ParticleCloud, Transition,
};

/// Discrete-time plant seen by the estimators.
pub trait DualPlant: Send + Sync {
    fn state_dim(&self) -> usize;
    fn param_dim(&self) -> usize;
    fn meas_dim(&self) -> usize;
    /// `x_k = transition(x_{k-1}, theta, u)`.
    fn transition(&self, x: &[f64], theta: &[f64], u: &[f64], out: &mut [f64]) -> Result<(), String>;
    fn measure(&self, x: &[f64], theta: &[f64], u: &[f64], out: &mut [f64]) -> Result<(), String>;
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DualError {
    #[error("invalid estimator configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Rule(#[from] RuleError),
    #[error("state filter failed: {0}")]
    StateFilter(FilterError),
    #[error("parameter filter failed: {0}")]
    ParamFilter(FilterError),
}

/// Parameter evolution model applied per component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ParamEvolution {
    /// `theta + alpha dt`.
    Linear { alpha: f64, dt: f64 },
    /// `exp(alpha dt) theta + beta (1 - exp(alpha dt))`.
    Exponential { alpha: f64, beta: f64, dt: f64 },
}

impl ParamEvolution {
    pub fn dt(&self) -> f64 {
        match *self {
            ParamEvolution::Linear { dt, .. } | ParamEvolution::Exponential { dt, .. } => dt,
        }
    }

    pub fn apply(&self, theta: f64) -> f64 {
        match *self {
            ParamEvolution::Linear { alpha, dt } => theta + alpha * dt,
            ParamEvolution::Exponential { alpha, beta, dt } => {
                let e = (alpha * dt).exp();
                e * theta + beta * (1.0 - e)
            }
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let dt = self.dt();
        if !(dt.is_finite() && dt > 0.0) {
            return Err(format!("parameter model time step must be positive, got {dt}"));
        }
        Ok(())
    }
}

/// Apply component models; a single model is broadcast to every component.
pub fn param_predict_model(theta: &[f64], models: &[ParamEvolution]) -> Vec<f64> {
    theta
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let m = if models.len() == 1 { &models[0] } else { &models[i] };
            m.apply(*t)
        })
        .collect()
}

/// What the parameter filter compares against `z_k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamMeasurement {
    /// `g(x_{k|k}, theta, u_k)` with measurement noise `R`.
    FrozenPosterior,
    /// `g(f(x_{k-1|k-1}, theta, u_{k-1}), theta, u_k)` with the state filter's
    /// innovation covariance as noise.
    #[default]
    OneStepPrediction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HybridConfig {
    pub state_kind: RuleKind,
    pub param_kind: RuleKind,
    #[serde(default)]
    pub modified_propagation: bool,
    #[serde(default)]
    pub param_meas: ParamMeasurement,
    /// One model per parameter, or a single model for all.
    pub param_models: Vec<ParamEvolution>,
}

impl HybridConfig {
    pub fn new(state_kind: RuleKind, param_kind: RuleKind, models: Vec<ParamEvolution>) -> Self {
        Self {
            state_kind,
            param_kind,
            modified_propagation: false,
            param_meas: ParamMeasurement::default(),
            param_models: models,
        }
    }

    /// `Hybrid{VI-I}`-style name; `Dual-UKF` when both filters use sigma sets.
    pub fn name(&self) -> String {
        let base = if self.state_kind == RuleKind::Ukf && self.param_kind == RuleKind::Ukf {
            "Dual-UKF".to_string()
        } else {
            format!("Hybrid{{{}-{}}}", self.state_kind.short(), self.param_kind.short())
        };
        if self.modified_propagation {
            format!("M-{base}")
        } else {
            base
        }
    }

    pub fn validate(&self, n_theta: usize) -> Result<(), DualError> {
        if !matches!(
            self.param_kind,
            RuleKind::CnfI | RuleKind::CnfIII | RuleKind::CnfV | RuleKind::Ukf
        ) {
            return Err(DualError::Config(format!(
                "parameter rule {} is not allowed (use CNF-I, CNF-III, CNF-V or UKF)",
                self.param_kind
            )));
        }
        if self.param_models.len() != 1 && self.param_models.len() != n_theta {
            return Err(DualError::Config(format!(
                "{} parameter models given for {n_theta} parameters",
                self.param_models.len()
            )));
        }
        for m in &self.param_models {
            m.validate().map_err(DualError::Config)?;
        }
        Ok(())
    }
}

/// Noise square roots and initial beliefs shared by every estimator kind.
#[derive(Debug, Clone, PartialEq)]
pub struct DualSetup {
    pub sqrt_q: DMatrix<f64>,
    pub sqrt_r: DMatrix<f64>,
    pub sqrt_tau: DMatrix<f64>,
    pub x0: GaussianBelief,
    pub theta0: GaussianBelief,
}

/// Per-step record of the modified propagation conditions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PropagationCheck {
    pub step: usize,
    /// `max |sum_i w_i dev_i|` of the predicted deviations.
    pub mean_residual: f64,
    /// `max |sum_i w_i dev_i dev_i^T - (P_pred - Sigma_tau)|`.
    pub cov_residual: f64,
    /// Same check for the carried deviations against `P_post - dE`.
    pub carried_cov_residual: f64,
    pub fell_back: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Diagnostics {
    pub jitter_events: usize,
    pub state_failures: Vec<(usize, String)>,
    pub fallbacks: usize,
    /// Largest eigenvalue of the parameter covariance after each update.
    pub lambda_max: Vec<f64>,
    pub propagation: Vec<PropagationCheck>,
}

/// Beliefs and bookkeeping of one dual estimator.
#[derive(Debug, Clone)]
pub struct DualState {
    pub state: GaussianBelief,
    pub param: GaussianBelief,
    pub step: usize,
    pub diag: Diagnostics,
    /// Parameter-filter deviations carried by the modified propagation
    /// (one column per point).
    pub carried: Option<DMatrix<f64>>,
}

/// Output of one dual step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub state_mean: DVector<f64>,
    pub param_mean: DVector<f64>,
    pub param_cov: DMatrix<f64>,
    /// Set when the state filter failed and both beliefs were held.
    pub frozen: bool,
}

struct StateModel<'a> {
    plant: &'a dyn DualPlant,
    theta: &'a [f64],
    u: &'a [f64],
}

impl Transition for StateModel<'_> {
    fn dim_in(&self) -> usize {
        self.plant.state_dim()
    }
    fn dim_out(&self) -> usize {
        self.plant.state_dim()
    }
    fn eval(&self, x: &[f64], out: &mut [f64]) -> Result<(), FilterError> {
        self.plant.transition(x, self.theta, self.u, out).map_err(FilterError::Model)
    }
}

struct StateMeas<'a> {
    plant: &'a dyn DualPlant,
    theta: &'a [f64],
    u: &'a [f64],
}

impl Transition for StateMeas<'_> {
    fn dim_in(&self) -> usize {
        self.plant.state_dim()
    }
    fn dim_out(&self) -> usize {
        self.plant.meas_dim()
    }
    fn eval(&self, x: &[f64], out: &mut [f64]) -> Result<(), FilterError> {
        self.plant.measure(x, self.theta, self.u, out).map_err(FilterError::Model)
    }
}

struct ParamModel<'a> {
    models: &'a [ParamEvolution],
    n: usize,
}

impl Transition for ParamModel<'_> {
    fn dim_in(&self) -> usize {
        self.n
    }
    fn dim_out(&self) -> usize {
        self.n
    }
    fn eval(&self, th: &[f64], out: &mut [f64]) -> Result<(), FilterError> {
        out.copy_from_slice(&param_predict_model(th, self.models));
        Ok(())
    }
}

/// Measurement seen by the parameter filter with the state frozen.
struct ParamMeas<'a> {
    plant: &'a dyn DualPlant,
    x: &'a [f64],
    /// Propagate `x` one step before measuring.
    predict: bool,
    u_prev: &'a [f64],
    u: &'a [f64],
}

impl Transition for ParamMeas<'_> {
    fn dim_in(&self) -> usize {
        self.plant.param_dim()
    }
    fn dim_out(&self) -> usize {
        self.plant.meas_dim()
    }
    fn eval(&self, th: &[f64], out: &mut [f64]) -> Result<(), FilterError> {
        if self.predict {
            let mut xp = vec![0.0; self.x.len()];
            self.plant.transition(self.x, th, self.u_prev, &mut xp).map_err(FilterError::Model)?;
            self.plant.measure(&xp, th, self.u, out).map_err(FilterError::Model)
        } else {
            self.plant.measure(self.x, th, self.u, out).map_err(FilterError::Model)
        }
    }
}

fn lambda_max(p: &DMatrix<f64>) -> f64 {
    let sym = (p + p.transpose()) * 0.5;
    SymmetricEigen::new(sym).eigenvalues.max()
}

/// Weighted deviations as columns: `dev[:, i] = images[i, :] - mean`.
fn deviations(images: &DMatrix<f64>, mean: &DVector<f64>) -> DMatrix<f64> {
    let mut d = images.transpose();
    for mut c in d.column_iter_mut() {
        c -= mean;
    }
    d
}

fn sqrt_weighted(dev: &DMatrix<f64>, w: &DVector<f64>) -> DMatrix<f64> {
    let mut d = dev.clone();
    for (i, mut c) in d.column_iter_mut().enumerate() {
        c *= w[i].sqrt();
    }
    d
}

fn weighted_cov(dev: &DMatrix<f64>, w: &DVector<f64>) -> DMatrix<f64> {
    let s = sqrt_weighted(dev, w);
    &s * s.transpose()
}

/// Dual cubature estimator (`Hybrid{i-j}` and `Dual-UKF`).
#[derive(Debug, Clone)]
pub struct DualCubature {
    pub cfg: HybridConfig,
    pub ds: DualState,
    state_filter: CubatureFilter,
    param_filter: Option<CubatureFilter>,
    sqrt_q: DMatrix<f64>,
    sqrt_r: DMatrix<f64>,
    sqrt_tau: DMatrix<f64>,
    consecutive_state_failures: usize,
    /// Give up after this many consecutive state-filter failures.
    pub max_state_failures: usize,
}

impl DualCubature {
    pub fn new(cfg: HybridConfig, plant: &dyn DualPlant, setup: &DualSetup) -> Result<Self, DualError> {
        let (nx, nt) = (plant.state_dim(), plant.param_dim());
        if setup.x0.dim() != nx || setup.theta0.dim() != nt || setup.sqrt_q.nrows() != nx || setup.sqrt_tau.nrows() != nt
        {
            return Err(DualError::Config("initial belief or noise dimension mismatch".into()));
        }
        if setup.sqrt_r.nrows() != plant.meas_dim() {
            return Err(DualError::Config("measurement noise dimension mismatch".into()));
        }
        let state_filter = CubatureFilter::new(make_rule(cfg.state_kind, nx)?);
        let param_filter = if nt > 0 {
            cfg.validate(nt)?;
            let rule = make_rule(cfg.param_kind, nt)?;
            if cfg.modified_propagation && (rule.degree != 3 || rule.has_negative_weight()) {
                return Err(DualError::Config(format!(
                    "modified propagation needs a third-degree parameter rule with nonnegative weights, got {}",
                    cfg.param_kind
                )));
            }
            Some(CubatureFilter::new(rule))
        } else {
            None
        };
        Ok(Self {
            cfg,
            ds: DualState {
                state: setup.x0.clone(),
                param: setup.theta0.clone(),
                step: 0,
                diag: Diagnostics::default(),
                carried: None,
            },
            state_filter,
            param_filter,
            sqrt_q: setup.sqrt_q.clone(),
            sqrt_r: setup.sqrt_r.clone(),
            sqrt_tau: setup.sqrt_tau.clone(),
            consecutive_state_failures: 0,
            max_state_failures: 10,
        })
    }

    pub fn state_rule(&self) -> &CubatureRule {
        &self.state_filter.rule
    }

    pub fn param_rule(&self) -> Option<&CubatureRule> {
        self.param_filter.as_ref().map(|f| &f.rule)
    }

    /// One strictly ordered state-then-parameter step.
    pub fn step(
        &mut self,
        plant: &dyn DualPlant,
        u_prev: &[f64],
        u: &[f64],
        z: &DVector<f64>,
    ) -> Result<StepOutput, DualError> {
        let theta_prev: Vec<f64> = self.ds.param.mean.iter().copied().collect();
        let x_prev = self.ds.state.clone();
        let state_out = self.state_step(plant, &theta_prev, u_prev, u, z);
        self.ds.step += 1;
        let (x_post, sqrt_szz) = match state_out {
            Ok(v) => {
                self.consecutive_state_failures = 0;
                v
            }
            Err(e) => {
                self.consecutive_state_failures += 1;
                log::warn!("state filter failed at step {}: {e}; holding beliefs", self.ds.step);
                self.ds.diag.state_failures.push((self.ds.step, e.to_string()));
                if self.consecutive_state_failures > self.max_state_failures {
                    return Err(DualError::StateFilter(e));
                }
                self.ds.diag.jitter_events = self.jitter_events();
                return Ok(self.output(true));
            }
        };
        self.ds.state = x_post;
        if self.param_filter.is_some() {
            self.param_step(plant, &x_prev, u_prev, u, z, &sqrt_szz)
                .map_err(DualError::ParamFilter)?;
        }
        self.ds.diag.jitter_events = self.jitter_events();
        Ok(self.output(false))
    }

    fn jitter_events(&self) -> usize {
        self.state_filter.jitter_events + self.param_filter.as_ref().map_or(0, |f| f.jitter_events)
    }

    fn output(&self, frozen: bool) -> StepOutput {
        StepOutput {
            state_mean: self.ds.state.mean.clone(),
            param_mean: self.ds.param.mean.clone(),
            param_cov: self.ds.param.cov(),
            frozen,
        }
    }

    fn state_step(
        &mut self,
        plant: &dyn DualPlant,
        theta: &[f64],
        u_prev: &[f64],
        u: &[f64],
        z: &DVector<f64>,
    ) -> Result<(GaussianBelief, DMatrix<f64>), FilterError> {
        let m = StateModel {
            plant,
            theta,
            u: u_prev,
        };
        let (pred, _) = self.state_filter.predict(&self.ds.state, &m, &self.sqrt_q)?;
        let h = StateMeas { plant, theta, u };
        let up = self.state_filter.update(&pred, z, &h, &self.sqrt_r)?;
        Ok((up.belief, up.sqrt_szz))
    }

    fn param_step(
        &mut self,
        plant: &dyn DualPlant,
        x_prev: &GaussianBelief,
        u_prev: &[f64],
        u: &[f64],
        z: &DVector<f64>,
        sqrt_szz: &DMatrix<f64>,
    ) -> Result<(), FilterError> {
        let nt = plant.param_dim();
        let pf = self.param_filter.as_mut().expect("parameter filter present");
        let models = ParamModel {
            models: &self.cfg.param_models,
            n: nt,
        };
        let (x_frozen, predict, sqrt_noise) = match self.cfg.param_meas {
            ParamMeasurement::FrozenPosterior => (self.ds.state.mean.as_slice().to_vec(), false, self.sqrt_r.clone()),
            ParamMeasurement::OneStepPrediction => (x_prev.mean.as_slice().to_vec(), true, sqrt_szz.clone()),
        };
        let meas = ParamMeas {
            plant,
            x: &x_frozen,
            predict,
            u_prev,
            u,
        };
        if !self.cfg.modified_propagation {
            let (pred, _) = pf.predict(&self.ds.param, &models, &self.sqrt_tau)?;
            let up = pf.update(&pred, z, &meas, &sqrt_noise)?;
            self.ds.param = up.belief;
            self.ds.diag.lambda_max.push(lambda_max(&self.ds.param.cov()));
            return Ok(());
        }

        // modified propagation: carry deviations instead of resampling
        let w = pf.rule.weights.clone();
        let mean = self.ds.param.mean.clone();
        let carried = match &self.ds.carried {
            Some(c) => c.clone(),
            None => &self.ds.param.sqrt_cov * pf.rule.points.transpose(),
        };
        let mut pts = carried.transpose();
        for mut row in pts.row_iter_mut() {
            row += mean.transpose();
        }
        let images = eval_rows(&models, &pts)?;
        let pmean = weighted_mean(&images, &w);
        let dev1 = deviations(&images, &pmean);
        let l_minus = tria(&sqrt_weighted(&dev1, &w))?;
        let s_pred = tria(&hstack(&sqrt_weighted(&dev1, &w), &self.sqrt_tau))?;
        let pred = GaussianBelief::new(pmean.clone(), s_pred.clone());
        let tau = &self.sqrt_tau * self.sqrt_tau.transpose();
        let mean_residual = (&dev1 * &w).amax();
        let cov_residual = (weighted_cov(&dev1, &w) - (pred.cov() - &tau)).amax();
        // points spanning the full predicted covariance
        let l_inv_dev = l_minus
            .solve_lower_triangular(&dev1)
            .ok_or(FilterError::QrFailure)?;
        let dev2 = &s_pred * &l_inv_dev;
        let mut upts = dev2.transpose();
        for mut row in upts.row_iter_mut() {
            row += pmean.transpose();
        }
        let up = pf.update_from_points(&pred, &upts, z, &meas, &sqrt_noise)?;
        let p_post = up.belief.cov();
        let lam = lambda_max(&p_post);
        let r = &sqrt_noise * sqrt_noise.transpose();
        let de = &up.gain * r * up.gain.transpose() * lam;
        let target = &p_post - &de;
        let sym = (&target + target.transpose()) * 0.5;
        let (next, fell_back, carried_cov_residual) = match sym.clone().cholesky() {
            Some(c) => {
                let next = c.l() * &l_inv_dev;
                let res = (weighted_cov(&next, &w) - &sym).amax();
                (Some(next), false, res)
            }
            None => {
                log::info!("modified propagation fell back to fresh sampling at step {}", self.ds.step);
                (None, true, f64::NAN)
            }
        };
        if fell_back {
            self.ds.diag.fallbacks += 1;
        }
        self.ds.diag.propagation.push(PropagationCheck {
            step: self.ds.step,
            mean_residual,
            cov_residual,
            carried_cov_residual,
            fell_back,
        });
        self.ds.carried = next;
        self.ds.param = up.belief;
        self.ds.diag.lambda_max.push(lam);
        Ok(())
    }
}

fn hstack(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(a.nrows(), a.ncols() + b.ncols());
    out.columns_mut(0, a.ncols()).copy_from(a);
    out.columns_mut(a.ncols(), b.ncols()).copy_from(b);
    out
}

/// Dual bootstrap particle filter baseline.
#[derive(Debug, Clone)]
pub struct DualParticle {
    pub state: ParticleCloud,
    pub param: ParticleCloud,
    sqrt_q: DMatrix<f64>,
    sqrt_r: DMatrix<f64>,
    sqrt_tau: DMatrix<f64>,
    models: Vec<ParamEvolution>,
    state_mean: DVector<f64>,
    param_mean: DVector<f64>,
    pub step: usize,
    pub lambda_max: Vec<f64>,
}

impl DualParticle {
    pub fn new(
        plant: &dyn DualPlant,
        setup: &DualSetup,
        particles: usize,
        models: Vec<ParamEvolution>,
        seed: u64,
    ) -> Result<Self, DualError> {
        if particles < 2 {
            return Err(DualError::Config("particle filter needs at least 2 particles".into()));
        }
        if models.len() != 1 && models.len() != plant.param_dim() {
            return Err(DualError::Config("parameter model count mismatch".into()));
        }
        Ok(Self {
            state: ParticleCloud::from_belief(&setup.x0, particles, seed),
            param: ParticleCloud::from_belief(&setup.theta0, particles, seed ^ 0x9e37_79b9_7f4a_7c15),
            sqrt_q: setup.sqrt_q.clone(),
            sqrt_r: setup.sqrt_r.clone(),
            sqrt_tau: setup.sqrt_tau.clone(),
            models,
            state_mean: setup.x0.mean.clone(),
            param_mean: setup.theta0.mean.clone(),
            step: 0,
            lambda_max: Vec::new(),
        })
    }

    pub fn step(
        &mut self,
        plant: &dyn DualPlant,
        u_prev: &[f64],
        u: &[f64],
        z: &DVector<f64>,
    ) -> Result<StepOutput, DualError> {
        let theta: Vec<f64> = self.param_mean.iter().copied().collect();
        let x_prev: Vec<f64> = self.state_mean.iter().copied().collect();
        let m = StateModel {
            plant,
            theta: &theta,
            u: u_prev,
        };
        let h = StateMeas { plant, theta: &theta, u };
        self.state_mean = self
            .state
            .step(&m, &h, z, &self.sqrt_q, &self.sqrt_r)
            .map_err(DualError::StateFilter)?;
        self.step += 1;
        // innovation spread of the state cloud inflates the parameter likelihood
        let zi = eval_rows(&h, &self.state.particles).map_err(DualError::StateFilter)?;
        let zbar = weighted_mean(&zi, &self.state.weights);
        let spread = crate::filter::weighted_cross(&zi, &zbar, &zi, &zbar, &self.state.weights)
            + &self.sqrt_r * self.sqrt_r.transpose();
        let sqrt_noise = crate::filter::chol_with_jitter(&spread, &mut 0).map_err(DualError::ParamFilter)?;
        let nt = plant.param_dim();
        if nt > 0 {
            let models = ParamModel {
                models: &self.models,
                n: nt,
            };
            let meas = ParamMeas {
                plant,
                x: &x_prev,
                predict: true,
                u_prev,
                u,
            };
            self.param_mean = self
                .param
                .step(&models, &meas, z, &self.sqrt_tau, &sqrt_noise)
                .map_err(DualError::ParamFilter)?;
        }
        let pm = self.param.mean();
        let pcov = crate::filter::weighted_cross(
            &self.param.particles,
            &pm,
            &self.param.particles,
            &pm,
            &self.param.weights,
        );
        if nt > 0 {
            self.lambda_max.push(lambda_max(&pcov));
        }
        Ok(StepOutput {
            state_mean: self.state_mean.clone(),
            param_mean: self.param_mean.clone(),
            param_cov: pcov,
            frozen: false,
        })
    }
}

/// Estimator selection used by scenarios.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EstimatorSpec {
    Cubature(HybridConfig),
    Particle {
        particles: usize,
        param_models: Vec<ParamEvolution>,
    },
}

#[derive(Debug, Clone)]
pub enum Estimator {
    Cubature(Box<DualCubature>),
    Particle(Box<DualParticle>),
}

impl Estimator {
    pub fn new(spec: &EstimatorSpec, plant: &dyn DualPlant, setup: &DualSetup, seed: u64) -> Result<Self, DualError> {
        Ok(match spec {
            EstimatorSpec::Cubature(cfg) => Estimator::Cubature(Box::new(DualCubature::new(cfg.clone(), plant, setup)?)),
            EstimatorSpec::Particle {
                particles,
                param_models,
            } => Estimator::Particle(Box::new(DualParticle::new(
                plant,
                setup,
                *particles,
                param_models.clone(),
                seed,
            )?)),
        })
    }

    pub fn step(
        &mut self,
        plant: &dyn DualPlant,
        u_prev: &[f64],
        u: &[f64],
        z: &DVector<f64>,
    ) -> Result<StepOutput, DualError> {
        match self {
            Estimator::Cubature(e) => e.step(plant, u_prev, u, z),
            Estimator::Particle(e) => e.step(plant, u_prev, u, z),
        }
    }

    pub fn jitter_events(&self) -> usize {
        match self {
            Estimator::Cubature(e) => e.ds.diag.jitter_events,
            Estimator::Particle(_) => 0,
        }
    }
}
