//! Residual generation, threshold calibration, detection/isolation/
//! identification decisions and evaluation metrics.

use serde::{Deserialize, Serialize};
use statrs::statistics::{Data, OrderStatistics};
use thiserror::Error;

use crate::gte::{FaultSchedule, Mode, NTHETA};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FdiiError {
    #[error("threshold calibration needs at least {min} healthy runs, got {got}")]
    InsufficientRuns { got: usize, min: usize },
    #[error("residual length {got} does not match {expected} modes")]
    Dimension { got: usize, expected: usize },
    #[error("invalid calibration policy: {0}")]
    Policy(String),
}

/// `theta_h - theta_hat`.
pub fn residual(theta_healthy: &[f64], theta_hat: &[f64]) -> Vec<f64> {
    theta_healthy.iter().zip(theta_hat).map(|(h, t)| h - t).collect()
}

/// Trailing moving average over `len` samples (shorter at the start).
pub fn trailing_mean(series: &[Vec<f64>], len: usize) -> Vec<Vec<f64>> {
    let len = len.max(1);
    let mut out = Vec::with_capacity(series.len());
    for k in 0..series.len() {
        let lo = (k + 1).saturating_sub(len);
        let win = &series[lo..=k];
        let n = win.len() as f64;
        let mut acc = vec![0.0; series[k].len()];
        for v in win {
            for (a, x) in acc.iter_mut().zip(v) {
                *a += x;
            }
        }
        acc.iter_mut().for_each(|a| *a /= n);
        out.push(acc);
    }
    out
}

/// Mean of `theta_hat` over samples with `start <= t < start + window`.
pub fn healthy_reference(t: &[f64], theta_hat: &[Vec<f64>], start: f64, window: f64) -> Option<Vec<f64>> {
    let n = theta_hat.first()?.len();
    let mut acc = vec![0.0; n];
    let mut count = 0usize;
    for (tk, th) in t.iter().zip(theta_hat) {
        if *tk >= start - 1e-9 && *tk < start + window - 1e-9 {
            for (a, v) in acc.iter_mut().zip(th) {
                *a += v;
            }
            count += 1;
        }
    }
    if count == 0 {
        return None;
    }
    Some(acc.into_iter().map(|a| a / count as f64).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrationPolicy {
    pub quantile: f64,
    pub safety: f64,
    /// Smallest threshold handed out.
    pub floor: f64,
    pub min_runs: usize,
}

impl Default for CalibrationPolicy {
    fn default() -> Self {
        Self {
            quantile: 0.999,
            safety: 1.1,
            floor: 1e-6,
            min_runs: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub r_max: Vec<f64>,
    pub runs: usize,
    pub seed: u64,
    pub policy: CalibrationPolicy,
}

impl Thresholds {
    pub fn uniform(value: f64, n: usize) -> Self {
        Self {
            r_max: vec![value; n],
            runs: 0,
            seed: 0,
            policy: CalibrationPolicy::default(),
        }
    }
}

/// Per-mode `safety * quantile(|r|)` over every sample of every healthy run.
/// `runs[i][k]` is the residual vector of run `i` at monitored sample `k`.
pub fn calibrate_thresholds(
    runs: &[Vec<Vec<f64>>],
    policy: &CalibrationPolicy,
    seed: u64,
) -> Result<Thresholds, FdiiError> {
    if runs.len() < policy.min_runs {
        return Err(FdiiError::InsufficientRuns {
            got: runs.len(),
            min: policy.min_runs,
        });
    }
    if !(0.0..=1.0).contains(&policy.quantile) || policy.safety <= 0.0 || policy.floor <= 0.0 {
        return Err(FdiiError::Policy(format!(
            "quantile {} / safety {} / floor {}",
            policy.quantile, policy.safety, policy.floor
        )));
    }
    let n = runs
        .iter()
        .flat_map(|r| r.first())
        .map(|v| v.len())
        .next()
        .unwrap_or(NTHETA);
    let mut r_max = Vec::with_capacity(n);
    for m in 0..n {
        let mut vals = Vec::new();
        for run in runs {
            for r in run {
                if r.len() != n {
                    return Err(FdiiError::Dimension {
                        got: r.len(),
                        expected: n,
                    });
                }
                vals.push(r[m].abs());
            }
        }
        let q = if vals.is_empty() {
            0.0
        } else {
            Data::new(vals).quantile(policy.quantile)
        };
        r_max.push((policy.safety * q).max(policy.floor));
    }
    Ok(Thresholds {
        r_max,
        runs: runs.len(),
        seed,
        policy: policy.clone(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Overall {
    Healthy,
    Faulty(Vec<Mode>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FdiiRecord {
    pub t: f64,
    pub r: Vec<f64>,
    pub decisions: Vec<bool>,
    /// Identified magnitudes (signed residual) for tripped modes, zero otherwise.
    pub severity: Vec<f64>,
    pub overall: Overall,
}

impl FdiiRecord {
    pub fn tripped(&self) -> impl Iterator<Item = Mode> + '_ {
        self.decisions.iter().enumerate().filter(|(_, d)| **d).map(|(i, _)| Mode(i))
    }
}

/// Stateful persistence filter: a mode trips after `window` consecutive
/// exceedances and clears on the first sample back inside its band.
#[derive(Debug, Clone, PartialEq)]
pub struct Detector {
    pub window: usize,
    counts: Vec<usize>,
}

impl Detector {
    pub fn new(window: usize, modes: usize) -> Self {
        Self {
            window: window.max(1),
            counts: vec![0; modes],
        }
    }

    pub fn reset(&mut self) {
        self.counts.iter_mut().for_each(|c| *c = 0);
    }

    pub fn decide(&mut self, t: f64, r: &[f64], th: &Thresholds) -> FdiiRecord {
        assert_eq!(r.len(), th.r_max.len(), "residual and threshold sizes differ");
        if self.counts.len() != r.len() {
            self.counts = vec![0; r.len()];
        }
        let mut decisions = vec![false; r.len()];
        let mut severity = vec![0.0; r.len()];
        for m in 0..r.len() {
            if r[m].abs() > th.r_max[m] {
                self.counts[m] += 1;
            } else {
                self.counts[m] = 0;
            }
            if self.counts[m] >= self.window {
                decisions[m] = true;
                severity[m] = r[m];
            }
        }
        let modes: Vec<Mode> = (0..r.len()).filter(|m| decisions[*m]).map(Mode).collect();
        FdiiRecord {
            t,
            r: r.to_vec(),
            decisions,
            severity,
            overall: if modes.is_empty() {
                Overall::Healthy
            } else {
                Overall::Faulty(modes)
            },
        }
    }
}

/// Stateless decision over a residual history ending at the current sample.
pub fn decide(t: f64, history: &[Vec<f64>], th: &Thresholds, window: usize) -> FdiiRecord {
    let mut det = Detector::new(window, th.r_max.len());
    let mut last = None;
    for r in history {
        last = Some(det.decide(t, r, th));
    }
    last.unwrap_or_else(|| det.decide(t, &vec![0.0; th.r_max.len()], th))
}

/// Confusion matrix: rows are true classes, columns predicted; index 8 is healthy.
pub type Confusion = [[u64; 9]; 9];

pub const HEALTHY_CLASS: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMetrics {
    pub acc: Option<f64>,
    /// Share of healthy cases flagged as some fault.
    pub fp: Option<f64>,
    /// Per-mode precision `c_jj / sum_i c_ij`.
    pub precision: Vec<Option<f64>>,
}

pub fn confusion_metrics(c: &Confusion) -> ConfusionMetrics {
    let total: u64 = c.iter().flatten().sum();
    let diag: u64 = (0..9).map(|j| c[j][j]).sum();
    let acc = (total > 0).then(|| diag as f64 / total as f64);
    let row9: u64 = c[HEALTHY_CLASS].iter().sum();
    let fp = (row9 > 0).then(|| c[HEALTHY_CLASS][..8].iter().sum::<u64>() as f64 / row9 as f64);
    let precision = (0..8)
        .map(|j| {
            let col: u64 = (0..9).map(|i| c[i][j]).sum();
            (col > 0).then(|| c[j][j] as f64 / col as f64)
        })
        .collect();
    ConfusionMetrics { acc, fp, precision }
}

/// Predicted class at the end of a run: the tripped mode with the largest
/// normalized residual, or healthy.
pub fn classify(record: &FdiiRecord, th: &Thresholds) -> usize {
    record
        .tripped()
        .map(|m| (m.0, record.r[m.0].abs() / th.r_max[m.0]))
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .map_or(HEALTHY_CLASS, |(m, _)| m)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsWindow {
    /// First monitored time.
    pub monitor_start: f64,
    /// Length of the trailing window used for MAE%.
    pub tail: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub mae_pct_theta: Vec<f64>,
    pub mae_pct_x: Vec<f64>,
    pub far: f64,
    pub false_alarm_samples: usize,
    pub monitored_samples: usize,
    pub fdt: Option<f64>,
    pub missed: bool,
}

fn mae_pct(est: &[Vec<f64>], truth: &[Vec<f64>], t: &[f64], from: f64) -> Vec<f64> {
    let n = truth.first().map_or(0, |v| v.len());
    let mut acc = vec![0.0; n];
    let mut count = 0usize;
    for ((e, x), tk) in est.iter().zip(truth).zip(t) {
        if *tk >= from - 1e-9 {
            for i in 0..n {
                acc[i] += ((e[i] - x[i]) / x[i]).abs();
            }
            count += 1;
        }
    }
    acc.into_iter().map(|a| 100.0 * a / count.max(1) as f64).collect()
}

/// Per-run evaluation; trajectories are aligned with `records`.
pub fn run_metrics(
    schedule: &FaultSchedule,
    records: &[FdiiRecord],
    theta_hat: &[Vec<f64>],
    x_hat: &[Vec<f64>],
    theta_true: &[Vec<f64>],
    x_true: &[Vec<f64>],
    window: &MetricsWindow,
) -> RunMetrics {
    let t: Vec<f64> = records.iter().map(|r| r.t).collect();
    let t_end = t.last().copied().unwrap_or(0.0);
    let tail_from = t_end - window.tail;
    let mut monitored = 0usize;
    let mut false_alarms = 0usize;
    let mut fdt = None;
    let onset = schedule.first_onset();
    for rec in records {
        if rec.t < window.monitor_start - 1e-9 {
            continue;
        }
        monitored += 1;
        let active = schedule.active_modes(rec.t);
        if rec.tripped().any(|m| !active.contains(&m)) {
            false_alarms += 1;
        }
        if let Some(t0) = onset {
            if fdt.is_none() && rec.t >= t0 - 1e-9 && rec.tripped().next().is_some() {
                fdt = Some(rec.t - t0);
            }
        }
    }
    RunMetrics {
        mae_pct_theta: mae_pct(theta_hat, theta_true, &t, tail_from),
        mae_pct_x: mae_pct(x_hat, x_true, &t, tail_from),
        far: if monitored > 0 {
            false_alarms as f64 / monitored as f64
        } else {
            0.0
        },
        false_alarm_samples: false_alarms,
        monitored_samples: monitored,
        fdt,
        missed: onset.is_some() && fdt.is_none(),
    }
}

/// Running mean over time of an ensemble-averaged error sequence.
pub fn running_mean(values: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    let mut acc = 0.0;
    for (k, v) in values.iter().enumerate() {
        acc += v;
        out.push(acc / (k + 1) as f64);
    }
    out
}

/// Indices `k >= start` where the running mean rose above its previous
/// value by more than `rel_tol` (relative).
pub fn running_mean_increases(values: &[f64], start: usize, rel_tol: f64) -> Vec<usize> {
    let rm = running_mean(values);
    (start.max(1)..rm.len())
        .filter(|&k| rm[k] > rm[k - 1] * (1.0 + rel_tol))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gte::FaultEvent;

    #[test]
    fn residual_is_difference() {
        assert_eq!(residual(&[1.0, 1.0], &[1.0, 0.97]), vec![0.0, 1.0 - 0.97]);
    }

    #[test]
    fn zero_residuals_give_floor() {
        let runs = vec![vec![vec![0.0; 8]; 10]; 50];
        let th = calibrate_thresholds(&runs, &CalibrationPolicy::default(), 0).unwrap();
        assert!(th.r_max.iter().all(|v| *v == 1e-6));
    }

    #[test]
    fn too_few_runs() {
        let runs = vec![vec![vec![0.0; 8]; 10]; 3];
        assert_eq!(
            calibrate_thresholds(&runs, &CalibrationPolicy::default(), 0),
            Err(FdiiError::InsufficientRuns { got: 3, min: 50 })
        );
    }

    #[test]
    fn persistence_delays_trip() {
        let th = Thresholds::uniform(0.01, 8);
        let mut det = Detector::new(3, 8);
        let mut r = vec![0.0; 8];
        r[1] = 0.015;
        assert_eq!(det.decide(0.0, &r, &th).overall, Overall::Healthy);
        assert_eq!(det.decide(0.1, &r, &th).overall, Overall::Healthy);
        let rec = det.decide(0.2, &r, &th);
        assert_eq!(rec.overall, Overall::Faulty(vec![Mode(1)]));
        assert_eq!(rec.severity[1], 0.015);
        assert_eq!(classify(&rec, &th), 1);
    }

    #[test]
    fn confusion_identity() {
        let mut c = [[0u64; 9]; 9];
        for (i, row) in c.iter_mut().enumerate() {
            row[i] = 5;
        }
        let m = confusion_metrics(&c);
        assert_eq!(m.acc, Some(1.0));
        assert_eq!(m.fp, Some(0.0));
        assert!(m.precision.iter().all(|p| *p == Some(1.0)));
        let empty = confusion_metrics(&[[0; 9]; 9]);
        assert_eq!(empty.acc, None);
        assert_eq!(empty.precision[0], None);
    }

    #[test]
    fn fdt_and_far() {
        let schedule = FaultSchedule {
            events: vec![FaultEvent::abrupt(1, 1.0, -0.03)],
        };
        let th = Thresholds::uniform(0.01, 8);
        let mut det = Detector::new(1, 8);
        let mut recs = Vec::new();
        for k in 0..30 {
            let t = k as f64 * 0.1;
            let mut r = vec![0.0; 8];
            if t >= 1.35 - 1e-9 {
                r[1] = 0.03;
            }
            recs.push(det.decide(t, &r, &th));
        }
        let est = vec![vec![1.0; 8]; 30];
        let m = run_metrics(
            &schedule,
            &recs,
            &est,
            &est,
            &est,
            &est,
            &MetricsWindow {
                monitor_start: 0.5,
                tail: 1.0,
            },
        );
        assert!((m.fdt.unwrap() - 0.4).abs() < 1e-9);
        assert_eq!(m.far, 0.0);
        assert!(!m.missed);
        assert!(m.mae_pct_theta.iter().all(|v| *v == 0.0));
    }
}
