//! Twin-spool gas-turbine surrogate: seven gas-path states, eight
//! multiplicative health parameters and an eight-channel sensor set.
//!
//! State order: `[T_CC, N1, N2, P_LT, P_CC, P_LC, P_HT]`.
//! Measurement order: `[N1, N2, P_HC, T_HC, T_LC, P_LC, T_LT, T_HT]`.
//! Health parameter order follows fault modes M1..M8:
//! `[eta_HC, mdot_HC, eta_HT, mdot_HT, eta_LC, mdot_LC, eta_LT, mdot_LT]`.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

pub const NX: usize = 7;
pub const NZ: usize = 8;
pub const NTHETA: usize = 8;

pub const T_CC: usize = 0;
pub const N1: usize = 1;
pub const N2: usize = 2;
pub const P_LT: usize = 3;
pub const P_CC: usize = 4;
pub const P_LC: usize = 5;
pub const P_HT: usize = 6;

pub const STATE_NAMES: [&str; NX] = ["T_CC", "N1", "N2", "P_LT", "P_CC", "P_LC", "P_HT"];
pub const MEAS_NAMES: [&str; NZ] = ["N1", "N2", "P_HC", "T_HC", "T_LC", "P_LC", "T_LT", "T_HT"];
pub const PARAM_NAMES: [&str; NTHETA] = [
    "eta_HC", "mdot_HC", "eta_HT", "mdot_HT", "eta_LC", "mdot_LC", "eta_LT", "mdot_LT",
];

pub type State = [f64; NX];
pub type Meas = [f64; NZ];
pub type Health = [f64; NTHETA];

pub const HEALTHY: Health = [1.0; NTHETA];

const RPM: f64 = PI / 30.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlantError {
    #[error("simulation fault: {0}")]
    SimulationFault(String),
    #[error("trim solve did not converge (scaled residual {0:e})")]
    TrimFailed(f64),
    #[error("invalid engine constants: {0}")]
    InvalidConstants(String),
}

/// Fault mode M1..M8, stored zero-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Mode(pub usize);

impl Mode {
    pub fn label(self) -> String {
        format!("M{}", self.0 + 1)
    }

    pub fn param_name(self) -> &'static str {
        PARAM_NAMES[self.0]
    }

    /// Compressor parameters (fouling) as opposed to turbine parameters (erosion).
    pub fn is_compressor(self) -> bool {
        matches!(self.0, 0 | 1 | 4 | 5)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "M{}", self.0 + 1)
    }
}

impl FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let t = s.trim();
        let digits = t.strip_prefix('M').or_else(|| t.strip_prefix('m')).unwrap_or(t);
        match digits.parse::<usize>() {
            Ok(k) if (1..=8).contains(&k) => Ok(Mode(k - 1)),
            _ => {
                if let Some(i) = PARAM_NAMES.iter().position(|p| p.eq_ignore_ascii_case(t)) {
                    Ok(Mode(i))
                } else {
                    Err(format!("unknown fault mode '{s}' (expected M1..M8)"))
                }
            }
        }
    }
}

impl Serialize for Mode {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.label())
    }
}

impl<'de> Deserialize<'de> for Mode {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineConstants {
    pub cp: f64,
    pub gamma: f64,
    pub j1: f64,
    pub j2: f64,
    pub v_cc: f64,
    pub v_lc: f64,
    pub v_ht: f64,
    pub v_m: f64,
    pub eta_cc: f64,
    pub eta_mech1: f64,
    pub eta_mech2: f64,
    pub h_u: f64,
    pub beta: f64,
    pub t_d: f64,
    /// Inlet total pressure (kPa).
    pub p_d: f64,
    /// Fractional combustor pressure loss at design flow.
    pub combustor_loss: f64,
}

impl EngineConstants {
    pub fn cv(&self) -> f64 {
        self.cp / self.gamma
    }

    pub fn r_gas(&self) -> f64 {
        self.cp - self.cv()
    }

    fn validate(&self) -> Result<(), PlantError> {
        let fields = [
            self.cp,
            self.gamma,
            self.j1,
            self.j2,
            self.v_cc,
            self.v_lc,
            self.v_ht,
            self.v_m,
            self.eta_cc,
            self.eta_mech1,
            self.eta_mech2,
            self.h_u,
            self.beta,
            self.t_d,
            self.p_d,
        ];
        if fields.iter().any(|v| !(v.is_finite() && *v > 0.0)) || self.combustor_loss < 0.0 {
            return Err(PlantError::InvalidConstants("all constants must be positive".into()));
        }
        if self.gamma <= 1.0 {
            return Err(PlantError::InvalidConstants("gamma must exceed 1".into()));
        }
        Ok(())
    }
}

/// Design-point cycle parameters the maps are anchored to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CycleDesign {
    pub pr_lc: f64,
    pub pr_hc: f64,
    pub t_cc: f64,
    pub m_lc: f64,
    pub n1: f64,
    pub n2: f64,
    pub eta_lc: f64,
    pub eta_hc: f64,
    pub eta_ht: f64,
    pub eta_lt: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapShape {
    pub compressor_slope: f64,
    pub compressor_eta_pr: f64,
    pub compressor_eta_speed: f64,
    pub turbine_eta_pr: f64,
    pub turbine_eta_speed: f64,
}

/// Contents of the engine constants file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineFile {
    pub engine: EngineConstants,
    pub design: CycleDesign,
    pub maps: MapShape,
}

pub const DEFAULT_ENGINE_TOML: &str = include_str!("../configs/engine.toml");

impl EngineFile {
    pub fn from_toml(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }
}

impl Default for EngineFile {
    fn default() -> Self {
        Self::from_toml(DEFAULT_ENGINE_TOML).expect("bundled engine constants parse")
    }
}

/// Compressor map: corrected flow on speed lines and a parabolic efficiency.
#[derive(Debug, Clone, PartialEq)]
pub struct CompressorMap {
    pub m_ref: f64,
    pub pr_ref: f64,
    pub n_ref: f64,
    pub t_in_ref: f64,
    pub p_in_ref: f64,
    pub eta_peak: f64,
    pub slope: f64,
    pub c_pr: f64,
    pub c_speed: f64,
}

impl CompressorMap {
    /// `(mdot, eta)` at shaft speed `n`, inlet `(t_in, p_in)` and pressure ratio `pr`.
    pub fn eval(&self, n: f64, t_in: f64, p_in: f64, pr: f64) -> (f64, f64) {
        let nu = (n / t_in.sqrt()) / (self.n_ref / self.t_in_ref.sqrt());
        let p = (pr - 1.0) / (self.pr_ref - 1.0) / (nu * nu);
        let m = self.m_ref * (p_in / self.p_in_ref) * (self.t_in_ref / t_in).sqrt() * nu * (1.0 + self.slope * (1.0 - p));
        let eta = self.eta_peak * (1.0 - self.c_pr * (p - 1.0).powi(2) - self.c_speed * (nu - 1.0).powi(2));
        (m, eta)
    }
}

/// Turbine map: flow-function capacity and a parabolic efficiency.
#[derive(Debug, Clone, PartialEq)]
pub struct TurbineMap {
    pub m_ref: f64,
    pub pr_ref: f64,
    pub n_ref: f64,
    pub t_in_ref: f64,
    pub p_in_ref: f64,
    pub eta_peak: f64,
    pub c_pr: f64,
    pub c_speed: f64,
}

fn flow_function(pr: f64) -> f64 {
    (1.0 - 1.0 / (pr * pr)).max(0.0).sqrt()
}

impl TurbineMap {
    pub fn eval(&self, n: f64, t_in: f64, p_in: f64, pr: f64) -> (f64, f64) {
        let nu = (n / t_in.sqrt()) / (self.n_ref / self.t_in_ref.sqrt());
        let m = self.m_ref * (p_in / self.p_in_ref) * (self.t_in_ref / t_in).sqrt() * flow_function(pr)
            / flow_function(self.pr_ref);
        let eta = self.eta_peak * (1.0 - self.c_pr * (pr / self.pr_ref - 1.0).powi(2) - self.c_speed * (nu - 1.0).powi(2));
        (m, eta)
    }
}

/// Choked convergent nozzle with fixed area.
#[derive(Debug, Clone, PartialEq)]
pub struct NozzleMap {
    pub m_ref: f64,
    pub p_ref: f64,
    pub t_ref: f64,
}

impl NozzleMap {
    pub fn flow(&self, p: f64, t: f64) -> f64 {
        self.m_ref * (p / self.p_ref) * (self.t_ref / t).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerformanceMaps {
    pub lpc: CompressorMap,
    pub hpc: CompressorMap,
    pub hpt: TurbineMap,
    pub lpt: TurbineMap,
    pub nozzle: NozzleMap,
    /// Core flow through the HPC at design, used by the combustor loss model.
    pub m_hc_ref: f64,
}

/// Design-point cycle values.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignPoint {
    pub state: State,
    pub fuel_flow: f64,
    pub t_lc: f64,
    pub t_hc: f64,
    pub t_ht: f64,
    pub t_lt: f64,
    pub t_m: f64,
    pub p_hc: f64,
}

/// Steady cycle calculation at the design point; anchors every map.
pub fn design_cycle(c: &EngineConstants, d: &CycleDesign, s: &MapShape) -> (DesignPoint, PerformanceMaps) {
    let k = (c.gamma - 1.0) / c.gamma;
    let p_lc = c.p_d * d.pr_lc;
    let t_lc = c.t_d * (1.0 + (d.pr_lc.powf(k) - 1.0) / d.eta_lc);
    let m_hc = d.m_lc / (1.0 + c.beta);
    let m_bp = d.m_lc * c.beta / (1.0 + c.beta);
    let p_hc = p_lc * d.pr_hc;
    let t_hc = t_lc * (1.0 + (d.pr_hc.powf(k) - 1.0) / d.eta_hc);
    let p_cc = p_hc / (1.0 + c.combustor_loss);
    let mf = c.cp * (d.t_cc - t_hc) * m_hc / (c.eta_cc * c.h_u - c.cp * d.t_cc);
    let m_ht = m_hc + mf;
    let w_hc = m_hc * c.cp * (t_hc - t_lc);
    let t_ht = d.t_cc - w_hc / (c.eta_mech1 * m_ht * c.cp);
    let pr_ht = (1.0 - (1.0 - t_ht / d.t_cc) / d.eta_ht).powf(-1.0 / k);
    let p_ht = p_cc / pr_ht;
    let w_lc = d.m_lc * c.cp * (t_lc - c.t_d);
    let t_lt = t_ht - w_lc / (c.eta_mech2 * m_ht * c.cp);
    let pr_lt = (1.0 - (1.0 - t_lt / t_ht) / d.eta_lt).powf(-1.0 / k);
    let p_lt = p_ht / pr_lt;
    let t_m = (m_ht * t_lt + m_bp * t_lc) / (m_ht + m_bp);
    let maps = PerformanceMaps {
        lpc: CompressorMap {
            m_ref: d.m_lc,
            pr_ref: d.pr_lc,
            n_ref: d.n2,
            t_in_ref: c.t_d,
            p_in_ref: c.p_d,
            eta_peak: d.eta_lc,
            slope: s.compressor_slope,
            c_pr: s.compressor_eta_pr,
            c_speed: s.compressor_eta_speed,
        },
        hpc: CompressorMap {
            m_ref: m_hc,
            pr_ref: d.pr_hc,
            n_ref: d.n1,
            t_in_ref: t_lc,
            p_in_ref: p_lc,
            eta_peak: d.eta_hc,
            slope: s.compressor_slope,
            c_pr: s.compressor_eta_pr,
            c_speed: s.compressor_eta_speed,
        },
        hpt: TurbineMap {
            m_ref: m_ht,
            pr_ref: pr_ht,
            n_ref: d.n1,
            t_in_ref: d.t_cc,
            p_in_ref: p_cc,
            eta_peak: d.eta_ht,
            c_pr: s.turbine_eta_pr,
            c_speed: s.turbine_eta_speed,
        },
        lpt: TurbineMap {
            m_ref: m_ht,
            pr_ref: pr_lt,
            n_ref: d.n2,
            t_in_ref: t_ht,
            p_in_ref: p_ht,
            eta_peak: d.eta_lt,
            c_pr: s.turbine_eta_pr,
            c_speed: s.turbine_eta_speed,
        },
        nozzle: NozzleMap {
            m_ref: m_ht + m_bp,
            p_ref: p_lt,
            t_ref: t_m,
        },
        m_hc_ref: m_hc,
    };
    let dp = DesignPoint {
        state: [d.t_cc, d.n1, d.n2, p_lt, p_cc, p_lc, p_ht],
        fuel_flow: mf,
        t_lc,
        t_hc,
        t_ht,
        t_lt,
        t_m,
        p_hc,
    };
    (dp, maps)
}

/// Algebraic gas-path quantities at one state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GasPath {
    pub t_lc: f64,
    pub t_hc: f64,
    pub t_ht: f64,
    pub t_lt: f64,
    pub t_m: f64,
    pub p_hc: f64,
    /// Map flows before health scaling.
    pub m_lc: f64,
    pub m_hc: f64,
    pub m_ht: f64,
    pub m_lt: f64,
    pub m_n: f64,
}

/// Surrogate engine: constants plus maps anchored at the design point.
#[derive(Debug, Clone, PartialEq)]
pub struct GteModel {
    pub c: EngineConstants,
    pub maps: PerformanceMaps,
    pub design: DesignPoint,
}

impl GteModel {
    pub fn new(file: &EngineFile) -> Result<Self, PlantError> {
        file.engine.validate()?;
        let (design, maps) = design_cycle(&file.engine, &file.design, &file.maps);
        if design.state.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(PlantError::InvalidConstants("design cycle is infeasible".into()));
        }
        Ok(Self {
            c: file.engine.clone(),
            maps,
            design,
        })
    }

    pub fn check_envelope(&self, x: &[f64]) -> Result<(), PlantError> {
        for (i, v) in x.iter().enumerate() {
            if !(v.is_finite() && *v > 0.0) {
                return Err(PlantError::SimulationFault(format!("{} = {v} is not positive", STATE_NAMES[i])));
            }
        }
        if !(200.0..=2500.0).contains(&x[T_CC]) {
            return Err(PlantError::SimulationFault(format!("T_CC = {} K outside [200, 2500]", x[T_CC])));
        }
        if x[N1] > 1.5 * self.design.state[N1] || x[N2] > 1.5 * self.design.state[N2] {
            return Err(PlantError::SimulationFault("spool overspeed".into()));
        }
        Ok(())
    }

    pub fn gas_path(&self, x: &[f64], th: &[f64]) -> GasPath {
        let c = &self.c;
        let m = &self.maps;
        let k = (c.gamma - 1.0) / c.gamma;
        let pr_lc = x[P_LC] / c.p_d;
        let (m_lc, eta_lc) = m.lpc.eval(x[N2], c.t_d, c.p_d, pr_lc);
        let t_lc = c.t_d * (1.0 + (pr_lc.powf(k) - 1.0) / (th[4] * eta_lc));
        let pr_hc_map = x[P_CC] * (1.0 + c.combustor_loss) / x[P_LC];
        let (m_hc, eta_hc) = m.hpc.eval(x[N1], t_lc, x[P_LC], pr_hc_map);
        let flow_ratio = th[1] * m_hc / m.m_hc_ref;
        let p_hc = x[P_CC] * (1.0 + c.combustor_loss * flow_ratio * flow_ratio);
        let t_hc = t_lc * (1.0 + ((p_hc / x[P_LC]).powf(k) - 1.0) / (th[0] * eta_hc));
        let pr_ht = x[P_CC] / x[P_HT];
        let (m_ht, eta_ht) = m.hpt.eval(x[N1], x[T_CC], x[P_CC], pr_ht);
        let t_ht = x[T_CC] * (1.0 - th[2] * eta_ht * (1.0 - pr_ht.powf(-k)));
        let pr_lt = x[P_HT] / x[P_LT];
        let (m_lt, eta_lt) = m.lpt.eval(x[N2], t_ht, x[P_HT], pr_lt);
        let t_lt = t_ht * (1.0 - th[6] * eta_lt * (1.0 - pr_lt.powf(-k)));
        let bypass = c.beta / (1.0 + c.beta) * th[5] * m_lc;
        let core = th[7] * m_lt;
        let t_m = (core * t_lt + bypass * t_lc) / (core + bypass);
        let m_n = m.nozzle.flow(x[P_LT], t_m);
        GasPath {
            t_lc,
            t_hc,
            t_ht,
            t_lt,
            t_m,
            p_hc,
            m_lc,
            m_hc,
            m_ht,
            m_lt,
            m_n,
        }
    }

    /// State derivative with inertia and heat-capacity ratio optionally
    /// perturbed (relative) for robustness studies.
    pub fn deriv_perturbed(
        &self,
        x: &[f64],
        th: &[f64],
        mf: f64,
        dj1: f64,
        dj2: f64,
        dgamma: f64,
    ) -> Result<State, PlantError> {
        self.check_envelope(x)?;
        let c = &self.c;
        let g = self.gas_path(x, th);
        let (cp, cv, r) = (c.cp, c.cv(), c.r_gas());
        let m_hc = th[1] * g.m_hc;
        let m_ht = th[3] * g.m_ht;
        let m_lc = th[5] * g.m_lc;
        let m_lt = th[7] * g.m_lt;
        let m_cc = x[P_CC] * 1e3 * c.v_cc / (r * x[T_CC]);
        let dm_cc = m_hc + mf - m_ht;
        let dt_cc = (cp * g.t_hc * m_hc + c.eta_cc * c.h_u * mf - cp * x[T_CC] * m_ht - cv * x[T_CC] * dm_cc) / (cv * m_cc);
        let dn1 = (c.eta_mech1 * m_ht * cp * (x[T_CC] - g.t_ht) - m_hc * cp * (g.t_hc - g.t_lc))
            / (c.j1 * (1.0 + dj1) * x[N1] * RPM * RPM);
        let dn2 = (c.eta_mech2 * m_lt * cp * (g.t_ht - g.t_lt) - m_lc * cp * (g.t_lc - c.t_d))
            / (c.j2 * (1.0 + dj2) * x[N2] * RPM * RPM);
        let bypass = c.beta / (1.0 + c.beta) * m_lc;
        let dp_lt = r * g.t_m / c.v_m * (m_lt + bypass - g.m_n) * 1e-3;
        let dp_cc = x[P_CC] / x[T_CC] * dt_cc + c.gamma * (1.0 + dgamma) * r * x[T_CC] / c.v_cc * dm_cc * 1e-3;
        let dp_lc = r * g.t_lc / c.v_lc * (m_lc / (1.0 + c.beta) - m_hc) * 1e-3;
        let dp_ht = r * g.t_ht / c.v_ht * (m_ht - m_lt) * 1e-3;
        let out = [dt_cc, dn1, dn2, dp_lt, dp_cc, dp_lc, dp_ht];
        if out.iter().any(|v| !v.is_finite()) {
            return Err(PlantError::SimulationFault("non-finite derivative".into()));
        }
        Ok(out)
    }

    pub fn deriv(&self, x: &[f64], th: &[f64], mf: f64) -> Result<State, PlantError> {
        self.deriv_perturbed(x, th, mf, 0.0, 0.0, 0.0)
    }

    /// Noise-free sensor outputs.
    pub fn measure(&self, x: &[f64], th: &[f64]) -> Result<Meas, PlantError> {
        self.check_envelope(x)?;
        let g = self.gas_path(x, th);
        let z = [x[N1], x[N2], g.p_hc, g.t_hc, g.t_lc, x[P_LC], g.t_lt, g.t_ht];
        if z.iter().any(|v| !v.is_finite()) {
            return Err(PlantError::SimulationFault("non-finite measurement".into()));
        }
        Ok(z)
    }

    /// Measurement-space modeling error for relative inertia and
    /// heat-capacity-ratio errors: `[zeta1, zeta2, zeta3, 0, 0, 0, 0, 0]`.
    pub fn uncertainty_zeta(&self, x: &[f64], mf: f64, u: &UncertaintyConfig) -> Meas {
        let mut out = [0.0; NZ];
        if u.dj1 == 0.0 && u.dj2 == 0.0 && u.dgamma == 0.0 {
            return out;
        }
        let c = &self.c;
        let g = self.gas_path(x, &HEALTHY);
        let k1 = c.eta_mech1 * g.m_ht * c.cp;
        let k2 = g.m_hc * c.cp;
        let k3 = c.eta_mech2 * g.m_lt * c.cp;
        let k4 = g.m_lc * c.cp;
        out[0] = u.dj1 * (k1 * (x[T_CC] - g.t_ht) - k2 * (g.t_hc - g.t_lc)) / (x[N2] * RPM * RPM * c.j1);
        out[1] = u.dj2 * (k3 * (g.t_ht - g.t_lt) - k4 * (g.t_lc - c.t_d)) / (x[N1] * RPM * RPM * c.j2);
        out[2] = u.dgamma * c.gamma * c.r_gas() * x[T_CC] * (g.m_hc + mf - g.m_ht) / c.v_cc * 1e-3;
        out
    }

    /// Classical four-stage Runge-Kutta step.
    pub fn rk4_step(&self, x: &State, th: &[f64], mf: f64, dt: f64) -> Result<State, PlantError> {
        rk4(|y| self.deriv(y, th, mf), x, dt)
    }

    pub fn euler_step(&self, x: &State, th: &[f64], mf: f64, dt: f64) -> Result<State, PlantError> {
        let d = self.deriv(x, th, mf)?;
        let mut out = *x;
        for i in 0..NX {
            out[i] += dt * d[i];
        }
        Ok(out)
    }

    /// Steady state at fuel flow `mf`, by damped Newton with a
    /// finite-difference Jacobian.
    pub fn trim(&self, th: &[f64], mf: f64) -> Result<State, PlantError> {
        let scale = self.design.state;
        let resid = |x: &State| -> Result<[f64; NX], PlantError> {
            let d = self.deriv(x, th, mf)?;
            let mut r = [0.0; NX];
            for i in 0..NX {
                r[i] = d[i] / scale[i];
            }
            Ok(r)
        };
        let norm = |r: &[f64; NX]| r.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut x = self.design.state;
        let mut r = resid(&x)?;
        for _ in 0..100 {
            if norm(&r) < 1e-13 {
                return Ok(x);
            }
            let mut jac = nalgebra::SMatrix::<f64, NX, NX>::zeros();
            for j in 0..NX {
                let h = 1e-6 * scale[j];
                let mut xp = x;
                let mut xm = x;
                xp[j] += h;
                xm[j] -= h;
                let (rp, rm) = (resid(&xp)?, resid(&xm)?);
                for i in 0..NX {
                    jac[(i, j)] = (rp[i] - rm[i]) / (2.0 * h);
                }
            }
            let rv = nalgebra::SVector::<f64, NX>::from_row_slice(&r);
            let step = jac
                .lu()
                .solve(&rv)
                .ok_or_else(|| PlantError::TrimFailed(norm(&r)))?;
            let mut alpha = 1.0;
            loop {
                let mut xn = x;
                for i in 0..NX {
                    xn[i] -= alpha * step[i];
                }
                if let Ok(rn) = resid(&xn) {
                    if norm(&rn) < norm(&r) {
                        x = xn;
                        r = rn;
                        break;
                    }
                }
                alpha *= 0.5;
                if alpha < 1e-6 {
                    return if norm(&r) < 1e-10 { Ok(x) } else { Err(PlantError::TrimFailed(norm(&r))) };
                }
            }
        }
        if norm(&r) < 1e-10 {
            Ok(x)
        } else {
            Err(PlantError::TrimFailed(norm(&r)))
        }
    }
}

/// One classical RK4 step for an arbitrary derivative field.
pub fn rk4<const N: usize, F>(f: F, x: &[f64; N], dt: f64) -> Result<[f64; N], PlantError>
where
    F: Fn(&[f64; N]) -> Result<[f64; N], PlantError>,
{
    let add = |a: &[f64; N], b: &[f64; N], s: f64| {
        let mut o = *a;
        for i in 0..N {
            o[i] += s * b[i];
        }
        o
    };
    let k1 = f(x)?;
    let k2 = f(&add(x, &k1, dt / 2.0))?;
    let k3 = f(&add(x, &k2, dt / 2.0))?;
    let k4 = f(&add(x, &k3, dt))?;
    let mut o = *x;
    for i in 0..N {
        o[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    Ok(o)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FaultProfile {
    /// Step multiplier `1 + delta`.
    Abrupt { delta: f64 },
    /// Multiplier `1 + rate (t - onset)`, saturating at +-0.2.
    Ramp { rate: f64 },
    /// Exponential evolution `beta + (1 - beta) exp(alpha (t - onset))`.
    Exponential { alpha: f64, beta: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultEvent {
    pub mode: Mode,
    pub onset: f64,
    #[serde(flatten)]
    pub profile: FaultProfile,
}

impl FaultEvent {
    pub fn abrupt(mode: usize, onset: f64, delta: f64) -> Self {
        Self {
            mode: Mode(mode),
            onset,
            profile: FaultProfile::Abrupt { delta },
        }
    }

    pub fn factor(&self, t: f64) -> f64 {
        if t < self.onset {
            return 1.0;
        }
        let tau = t - self.onset;
        match self.profile {
            FaultProfile::Abrupt { delta } => 1.0 + delta,
            FaultProfile::Ramp { rate } => 1.0 + (rate * tau).clamp(-0.2, 0.2),
            FaultProfile::Exponential { alpha, beta } => beta + (1.0 - beta) * (alpha * tau).exp(),
        }
    }

    /// Multiplier long after onset, used as the identification target.
    pub fn nominal_delta(&self) -> f64 {
        match self.profile {
            FaultProfile::Abrupt { delta } => delta,
            FaultProfile::Ramp { rate } => 0.2f64.copysign(rate),
            FaultProfile::Exponential { beta, .. } => beta - 1.0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FaultSchedule {
    pub events: Vec<FaultEvent>,
}

impl FaultSchedule {
    pub fn validate(&self) -> Result<(), String> {
        for w in self.events.windows(2) {
            if w[1].onset < w[0].onset {
                return Err("fault onset times must be nondecreasing".into());
            }
        }
        for e in &self.events {
            if let FaultProfile::Abrupt { delta } = e.profile {
                if delta.abs() > 0.2 {
                    return Err(format!("fault magnitude {delta} exceeds 0.2"));
                }
            }
            if e.onset < 0.0 {
                return Err("fault onset must be nonnegative".into());
            }
        }
        Ok(())
    }

    /// Modes with an event active at time `t`.
    pub fn active_modes(&self, t: f64) -> Vec<Mode> {
        let mut m: Vec<Mode> = self.events.iter().filter(|e| e.onset <= t).map(|e| e.mode).collect();
        m.sort();
        m.dedup();
        m
    }

    pub fn first_onset(&self) -> Option<f64> {
        self.events.iter().map(|e| e.onset).fold(None, |a, b| Some(a.map_or(b, |a: f64| a.min(b))))
    }
}

/// Health parameters at time `t`; events on the same mode compose
/// multiplicatively.
pub fn inject_fault(healthy: &Health, schedule: &FaultSchedule, t: f64) -> Health {
    let mut th = *healthy;
    for e in &schedule.events {
        th[e.mode.0] *= e.factor(t);
    }
    th
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UncertaintyConfig {
    pub dgamma: f64,
    pub dj1: f64,
    pub dj2: f64,
    pub onset: f64,
    /// Bound on `|zeta_i|` relative to the nominal channel value.
    pub zeta_bar: f64,
}

impl Default for UncertaintyConfig {
    fn default() -> Self {
        Self {
            dgamma: 0.0,
            dj1: 0.0,
            dj2: 0.0,
            onset: 0.0,
            zeta_bar: 0.03,
        }
    }
}

impl UncertaintyConfig {
    pub fn is_active(&self) -> bool {
        self.dgamma != 0.0 || self.dj1 != 0.0 || self.dj2 != 0.0
    }

    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [("dgamma", self.dgamma), ("dj1", self.dj1), ("dj2", self.dj2)] {
            if !(0.0..=0.1).contains(&v) {
                return Err(format!("uncertainty.{name} = {v} outside [0, 0.1]"));
            }
        }
        Ok(())
    }
}

/// Noisy, possibly biased sensor model; `zeta` is clipped to the
/// `zeta_bar` bound of the nominal measurement.
pub fn gte_measure(
    model: &GteModel,
    x: &[f64],
    th: &[f64],
    mf: f64,
    ucfg: Option<&UncertaintyConfig>,
    noise: Option<&Meas>,
    z_nominal: &Meas,
) -> Result<Meas, PlantError> {
    let mut z = model.measure(x, th)?;
    if let Some(u) = ucfg {
        let zeta = model.uncertainty_zeta(x, mf, u);
        for i in 0..NZ {
            let bound = u.zeta_bar * z_nominal[i].abs();
            z[i] += zeta[i].clamp(-bound, bound);
        }
    }
    if let Some(v) = noise {
        for i in 0..NZ {
            z[i] += v[i];
        }
    }
    Ok(z)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Integrator {
    #[default]
    Rk4,
    Euler,
}

/// Sampled engine model used inside the estimators: `substeps` integrator
/// steps per sample, input `u = [fuel flow]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GteDiscrete {
    pub model: GteModel,
    pub sample_time: f64,
    pub substeps: usize,
    pub integrator: Integrator,
}

impl GteDiscrete {
    pub fn new(model: GteModel, sample_time: f64, substeps: usize, integrator: Integrator) -> Self {
        Self {
            model,
            sample_time,
            substeps: substeps.max(1),
            integrator,
        }
    }

    pub fn advance(&self, x: &State, th: &[f64], mf: f64) -> Result<State, PlantError> {
        let h = self.sample_time / self.substeps as f64;
        let mut y = *x;
        for _ in 0..self.substeps {
            y = match self.integrator {
                Integrator::Rk4 => self.model.rk4_step(&y, th, mf, h)?,
                Integrator::Euler => self.model.euler_step(&y, th, mf, h)?,
            };
        }
        Ok(y)
    }
}

impl crate::dual::DualPlant for GteDiscrete {
    fn state_dim(&self) -> usize {
        NX
    }
    fn param_dim(&self) -> usize {
        NTHETA
    }
    fn meas_dim(&self) -> usize {
        NZ
    }
    fn transition(&self, x: &[f64], theta: &[f64], u: &[f64], out: &mut [f64]) -> Result<(), String> {
        let xs: State = x.try_into().map_err(|_| "state length".to_string())?;
        let y = self.advance(&xs, theta, u[0]).map_err(|e| e.to_string())?;
        out.copy_from_slice(&y);
        Ok(())
    }
    fn measure(&self, x: &[f64], theta: &[f64], _u: &[f64], out: &mut [f64]) -> Result<(), String> {
        let z = self.model.measure(x, theta).map_err(|e| e.to_string())?;
        out.copy_from_slice(&z);
        Ok(())
    }
}
