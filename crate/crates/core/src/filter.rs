//! Square-root Gaussian filtering driven by any [`CubatureRule`], plus a
//! bootstrap particle filter.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::cubature::CubatureRule;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FilterError {
    #[error("QR triangularization failed: stacked block is rank deficient")]
    QrFailure,
    #[error("innovation covariance is numerically singular (condition number {0:e})")]
    SingularInnovation(f64),
    #[error("filter diverged: {0}")]
    Diverged(String),
    #[error("all particle likelihoods underflowed")]
    WeightCollapse,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("model evaluation failed: {0}")]
    Model(String),
}

/// Condition number of the innovation covariance above which a step is rejected.
pub const MAX_INNOVATION_CONDITION: f64 = 1e12;

/// Map evaluated at every cubature point.
pub trait Transition {
    fn dim_in(&self) -> usize;
    fn dim_out(&self) -> usize;
    fn eval(&self, x: &[f64], out: &mut [f64]) -> Result<(), FilterError>;
}

/// Adapter turning a closure into a [`Transition`].
pub struct FnTransition<F> {
    pub n_in: usize,
    pub n_out: usize,
    pub f: F,
}

impl<F> FnTransition<F>
where
    F: Fn(&[f64], &mut [f64]),
{
    pub fn new(n_in: usize, n_out: usize, f: F) -> Self {
        Self { n_in, n_out, f }
    }
}

impl<F> Transition for FnTransition<F>
where
    F: Fn(&[f64], &mut [f64]),
{
    fn dim_in(&self) -> usize {
        self.n_in
    }
    fn dim_out(&self) -> usize {
        self.n_out
    }
    fn eval(&self, x: &[f64], out: &mut [f64]) -> Result<(), FilterError> {
        (self.f)(x, out);
        Ok(())
    }
}

/// Linear map `x -> A x`.
pub struct LinearTransition {
    pub a: DMatrix<f64>,
}

impl Transition for LinearTransition {
    fn dim_in(&self) -> usize {
        self.a.ncols()
    }
    fn dim_out(&self) -> usize {
        self.a.nrows()
    }
    fn eval(&self, x: &[f64], out: &mut [f64]) -> Result<(), FilterError> {
        for (i, o) in out.iter_mut().enumerate() {
            *o = (0..x.len()).map(|j| self.a[(i, j)] * x[j]).sum();
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianBelief {
    pub mean: DVector<f64>,
    /// Lower-triangular `S` with `P = S S^T`.
    pub sqrt_cov: DMatrix<f64>,
}

impl GaussianBelief {
    pub fn new(mean: DVector<f64>, sqrt_cov: DMatrix<f64>) -> Self {
        assert_eq!(sqrt_cov.nrows(), mean.len());
        assert_eq!(sqrt_cov.ncols(), mean.len());
        Self { mean, sqrt_cov }
    }

    pub fn from_cov(mean: DVector<f64>, cov: &DMatrix<f64>) -> Result<Self, FilterError> {
        let s = chol_with_jitter(cov, &mut 0)?;
        Ok(Self::new(mean, s))
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn cov(&self) -> DMatrix<f64> {
        &self.sqrt_cov * self.sqrt_cov.transpose()
    }

    pub fn is_finite(&self) -> bool {
        self.mean.iter().all(|v| v.is_finite()) && self.sqrt_cov.iter().all(|v| v.is_finite())
    }
}

/// Lower-triangular `S` with `S S^T = A A^T` and a positive diagonal.
pub fn tria(a: &DMatrix<f64>) -> Result<DMatrix<f64>, FilterError> {
    let m = a.nrows();
    if a.ncols() < m {
        // pad so QR yields an m x m factor
        let mut padded = DMatrix::zeros(m, m);
        padded.columns_mut(0, a.ncols()).copy_from(a);
        return tria(&padded);
    }
    let r = a.transpose().qr().r();
    let mut s = r.transpose();
    for j in 0..m {
        if s[(j, j)] < 0.0 {
            for i in j..m {
                s[(i, j)] = -s[(i, j)];
            }
        }
    }
    if s.iter().any(|v| !v.is_finite()) {
        return Err(FilterError::QrFailure);
    }
    let dmax = (0..m).map(|j| s[(j, j)]).fold(0.0, f64::max);
    if m > 0 && (0..m).any(|j| s[(j, j)] <= 1e-13 * dmax) {
        return Err(FilterError::QrFailure);
    }
    Ok(s)
}

/// Cholesky factor after symmetrization, escalating diagonal jitter from
/// 1e-12 to 1e-6 (relative to the mean diagonal) when needed.
pub fn chol_with_jitter(p: &DMatrix<f64>, jitter_events: &mut usize) -> Result<DMatrix<f64>, FilterError> {
    let sym = (p + p.transpose()) * 0.5;
    if sym.iter().any(|v| !v.is_finite()) {
        return Err(FilterError::Diverged("non-finite covariance".into()));
    }
    if let Some(c) = sym.clone().cholesky() {
        return Ok(c.l());
    }
    let n = sym.nrows();
    let scale = (sym.trace() / n as f64).abs().max(f64::MIN_POSITIVE);
    let mut eps = 1e-12;
    while eps <= 1e-6 * 1.000001 {
        let mut q = sym.clone();
        for i in 0..n {
            q[(i, i)] += eps * scale;
        }
        if let Some(c) = q.cholesky() {
            *jitter_events += 1;
            log::debug!("covariance jitter {eps:e} applied");
            return Ok(c.l());
        }
        eps *= 10.0;
    }
    Err(FilterError::Diverged("covariance not positive definite after jitter".into()))
}

/// Row `i` equals `S xi_i + mean`.
pub fn propagate_points(b: &GaussianBelief, rule: &CubatureRule) -> DMatrix<f64> {
    assert_eq!(rule.n, b.dim(), "rule dimension does not match belief");
    let mut x = &rule.points * b.sqrt_cov.transpose();
    for mut row in x.row_iter_mut() {
        row += b.mean.transpose();
    }
    x
}

/// Evaluate `m` on every row of `x`.
pub fn eval_rows(m: &dyn Transition, x: &DMatrix<f64>) -> Result<DMatrix<f64>, FilterError> {
    if x.ncols() != m.dim_in() {
        return Err(FilterError::Dimension(format!(
            "model expects {} inputs, got {}",
            m.dim_in(),
            x.ncols()
        )));
    }
    let mut out = DMatrix::zeros(x.nrows(), m.dim_out());
    let mut xin = vec![0.0; x.ncols()];
    let mut yout = vec![0.0; m.dim_out()];
    for i in 0..x.nrows() {
        for j in 0..x.ncols() {
            xin[j] = x[(i, j)];
        }
        m.eval(&xin, &mut yout)?;
        for j in 0..yout.len() {
            out[(i, j)] = yout[j];
        }
    }
    Ok(out)
}

pub fn weighted_mean(y: &DMatrix<f64>, w: &DVector<f64>) -> DVector<f64> {
    y.transpose() * w
}

/// Columns `sqrt(w_i) (y_i - mean)`; requires nonnegative weights.
pub fn scaled_deviations(y: &DMatrix<f64>, mean: &DVector<f64>, w: &DVector<f64>) -> DMatrix<f64> {
    let mut d = DMatrix::zeros(y.ncols(), y.nrows());
    for i in 0..y.nrows() {
        let sw = w[i].max(0.0).sqrt();
        for j in 0..y.ncols() {
            d[(j, i)] = sw * (y[(i, j)] - mean[j]);
        }
    }
    d
}

/// `sum_i w_i (a_i - ma)(b_i - mb)^T`.
pub fn weighted_cross(
    a: &DMatrix<f64>,
    ma: &DVector<f64>,
    b: &DMatrix<f64>,
    mb: &DVector<f64>,
    w: &DVector<f64>,
) -> DMatrix<f64> {
    let mut p = DMatrix::zeros(a.ncols(), b.ncols());
    for i in 0..a.nrows() {
        let da = a.row(i).transpose() - ma;
        let db = b.row(i).transpose() - mb;
        p += (&da * db.transpose()) * w[i];
    }
    p
}

fn hstack(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(a.nrows(), a.ncols() + b.ncols());
    out.columns_mut(0, a.ncols()).copy_from(a);
    out.columns_mut(a.ncols(), b.ncols()).copy_from(b);
    out
}

fn check_finite(b: &GaussianBelief) -> Result<(), FilterError> {
    if b.is_finite() {
        Ok(())
    } else {
        Err(FilterError::Diverged("non-finite belief".into()))
    }
}

/// Output of a measurement update.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateOutput {
    pub belief: GaussianBelief,
    pub innovation: DVector<f64>,
    pub sqrt_szz: DMatrix<f64>,
    pub gain: DMatrix<f64>,
}

/// Stateless engine around one rule; counts jitter events of the
/// plain-covariance path used for rules with negative weights.
#[derive(Debug, Clone)]
pub struct CubatureFilter {
    pub rule: CubatureRule,
    pub jitter_events: usize,
    plain: bool,
}

impl CubatureFilter {
    pub fn new(rule: CubatureRule) -> Self {
        let plain = rule.has_negative_weight();
        Self {
            rule,
            jitter_events: 0,
            plain,
        }
    }

    /// Whether covariances are formed in plain (non-square-root) form.
    pub fn uses_plain_covariance(&self) -> bool {
        self.plain
    }

    /// Mean and square root of `sum w (y - mean)(y - mean)^T + Q`.
    pub fn moments(
        &mut self,
        images: &DMatrix<f64>,
        sqrt_q: &DMatrix<f64>,
    ) -> Result<(DVector<f64>, DMatrix<f64>), FilterError> {
        let w = &self.rule.weights;
        let mean = weighted_mean(images, w);
        let s = if self.plain {
            let p = weighted_cross(images, &mean, images, &mean, w) + sqrt_q * sqrt_q.transpose();
            chol_with_jitter(&p, &mut self.jitter_events)?
        } else {
            tria(&hstack(&scaled_deviations(images, &mean, w), sqrt_q))?
        };
        Ok((mean, s))
    }

    pub fn predict(
        &mut self,
        b: &GaussianBelief,
        m: &dyn Transition,
        sqrt_q: &DMatrix<f64>,
    ) -> Result<(GaussianBelief, DMatrix<f64>), FilterError> {
        let x = propagate_points(b, &self.rule);
        let y = eval_rows(m, &x)?;
        if sqrt_q.nrows() != y.ncols() {
            return Err(FilterError::Dimension("process noise size".into()));
        }
        let (mean, s) = self.moments(&y, sqrt_q)?;
        let out = GaussianBelief::new(mean, s);
        check_finite(&out)?;
        Ok((out, y))
    }

    /// Re-draw points from the predicted belief and condition on `z`.
    pub fn update(
        &mut self,
        pred: &GaussianBelief,
        z: &DVector<f64>,
        meas: &dyn Transition,
        sqrt_r: &DMatrix<f64>,
    ) -> Result<UpdateOutput, FilterError> {
        let x = propagate_points(pred, &self.rule);
        self.update_from_points(pred, &x, z, meas, sqrt_r)
    }

    /// Condition on `z` using caller-supplied points whose weighted
    /// deviations from `pred.mean` reproduce `pred`'s covariance.
    pub fn update_from_points(
        &mut self,
        pred: &GaussianBelief,
        x: &DMatrix<f64>,
        z: &DVector<f64>,
        meas: &dyn Transition,
        sqrt_r: &DMatrix<f64>,
    ) -> Result<UpdateOutput, FilterError> {
        if z.len() != meas.dim_out() || sqrt_r.nrows() != z.len() {
            return Err(FilterError::Dimension("measurement size".into()));
        }
        let w = self.rule.weights.clone();
        let zi = eval_rows(meas, x)?;
        let zhat = weighted_mean(&zi, &w);
        let innovation = z - &zhat;
        let xbar = &pred.mean;
        let (belief, szz, gain) = if self.plain {
            let pzz = weighted_cross(&zi, &zhat, &zi, &zhat, &w) + sqrt_r * sqrt_r.transpose();
            let pxz = weighted_cross(x, xbar, &zi, &zhat, &w);
            let szz = chol_with_jitter(&pzz, &mut self.jitter_events)?;
            check_condition(&szz)?;
            let k = gain_from_sqrt(&pxz, &szz)?;
            let p = pred.cov() - &k * (&szz * szz.transpose()) * k.transpose();
            let s = chol_with_jitter(&p, &mut self.jitter_events)?;
            (GaussianBelief::new(xbar + &k * &innovation, s), szz, k)
        } else {
            let dz = scaled_deviations(&zi, &zhat, &w);
            let dx = scaled_deviations(x, xbar, &w);
            let szz = tria(&hstack(&dz, sqrt_r))?;
            check_condition(&szz)?;
            let pxz = &dx * dz.transpose();
            let k = gain_from_sqrt(&pxz, &szz)?;
            let s = tria(&hstack(&(dx - &k * dz), &(&k * sqrt_r)))?;
            (GaussianBelief::new(xbar + &k * &innovation, s), szz, k)
        };
        check_finite(&belief)?;
        Ok(UpdateOutput {
            belief,
            innovation,
            sqrt_szz: szz,
            gain,
        })
    }
}

fn check_condition(szz: &DMatrix<f64>) -> Result<(), FilterError> {
    let sv = szz.singular_values();
    let (smax, smin) = (sv.max(), sv.min());
    let cond = (smax / smin).powi(2);
    if !cond.is_finite() || cond > MAX_INNOVATION_CONDITION {
        return Err(FilterError::SingularInnovation(cond));
    }
    Ok(())
}

/// `K = Pxz (Szz Szz^T)^{-1}` via two triangular solves.
fn gain_from_sqrt(pxz: &DMatrix<f64>, szz: &DMatrix<f64>) -> Result<DMatrix<f64>, FilterError> {
    let y = szz
        .solve_lower_triangular(&pxz.transpose())
        .ok_or(FilterError::SingularInnovation(f64::INFINITY))?;
    let kt = szz
        .transpose()
        .solve_upper_triangular(&y)
        .ok_or(FilterError::SingularInnovation(f64::INFINITY))?;
    Ok(kt.transpose())
}

pub fn predict(
    b: &GaussianBelief,
    m: &dyn Transition,
    rule: &CubatureRule,
    sqrt_q: &DMatrix<f64>,
) -> Result<(GaussianBelief, DMatrix<f64>), FilterError> {
    CubatureFilter::new(rule.clone()).predict(b, m, sqrt_q)
}

pub fn update(
    pred: &GaussianBelief,
    z: &DVector<f64>,
    meas: &dyn Transition,
    rule: &CubatureRule,
    sqrt_r: &DMatrix<f64>,
) -> Result<UpdateOutput, FilterError> {
    CubatureFilter::new(rule.clone()).update(pred, z, meas, sqrt_r)
}

/// Weighted particle set for the bootstrap filter.
#[derive(Debug, Clone)]
pub struct ParticleCloud {
    /// One particle per row.
    pub particles: DMatrix<f64>,
    pub weights: DVector<f64>,
    rng: ChaCha8Rng,
}

impl ParticleCloud {
    pub fn new(particles: DMatrix<f64>, rng: ChaCha8Rng) -> Self {
        let np = particles.nrows();
        Self {
            particles,
            weights: DVector::from_element(np, 1.0 / np as f64),
            rng,
        }
    }

    /// Draw `np` particles from a Gaussian belief.
    pub fn from_belief(b: &GaussianBelief, np: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = b.dim();
        let mut p = DMatrix::zeros(np, n);
        for i in 0..np {
            let e = DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)));
            let x = &b.mean + &b.sqrt_cov * e;
            p.row_mut(i).copy_from(&x.transpose());
        }
        Self::new(p, rng)
    }

    pub fn len(&self) -> usize {
        self.particles.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn mean(&self) -> DVector<f64> {
        weighted_mean(&self.particles, &self.weights)
    }

    /// Bootstrap step: propagate with sampled process noise, weight by the
    /// Gaussian likelihood, return the weighted mean, then resample.
    pub fn step(
        &mut self,
        m: &dyn Transition,
        meas: &dyn Transition,
        z: &DVector<f64>,
        sqrt_q: &DMatrix<f64>,
        sqrt_r: &DMatrix<f64>,
    ) -> Result<DVector<f64>, FilterError> {
        let np = self.len();
        if np < 2 {
            return Err(FilterError::Dimension("particle filter needs at least 2 particles".into()));
        }
        let mut y = eval_rows(m, &self.particles)?;
        let n = y.ncols();
        for i in 0..np {
            let e = DVector::from_iterator(n, (0..n).map(|_| self.rng.sample::<f64, _>(StandardNormal)));
            let noise = sqrt_q * e;
            for j in 0..n {
                y[(i, j)] += noise[j];
            }
        }
        let zi = eval_rows(meas, &y)?;
        let mut logl = DVector::zeros(np);
        for i in 0..np {
            let e = z - zi.row(i).transpose();
            let v = sqrt_r
                .solve_lower_triangular(&e)
                .ok_or(FilterError::Dimension("singular measurement noise".into()))?;
            logl[i] = -0.5 * v.norm_squared();
        }
        let lmax = logl.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        // every linear-domain likelihood would underflow below this
        if !lmax.is_finite() || lmax < -700.0 {
            return Err(FilterError::WeightCollapse);
        }
        let mut w = DVector::from_iterator(np, logl.iter().map(|l| (l - lmax).exp()));
        let total = w.sum();
        w /= total;
        self.particles = y;
        self.weights = w;
        let est = self.mean();
        self.resample();
        Ok(est)
    }

    /// Systematic resampling to uniform weights.
    pub fn resample(&mut self) {
        let np = self.len();
        let u0: f64 = self.rng.random::<f64>() / np as f64;
        let mut out = DMatrix::zeros(np, self.particles.ncols());
        let mut cum = self.weights[0];
        let mut j = 0;
        for i in 0..np {
            let u = u0 + i as f64 / np as f64;
            while u > cum && j + 1 < np {
                j += 1;
                cum += self.weights[j];
            }
            out.row_mut(i).copy_from(&self.particles.row(j));
        }
        self.particles = out;
        self.weights = DVector::from_element(np, 1.0 / np as f64);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cubature::{make_rule, RuleKind};

    fn spd(n: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
        &a * a.transpose() + DMatrix::identity(n, n) * 0.5
    }

    #[test]
    fn tria_reproduces_product() {
        let a = DMatrix::from_fn(3, 7, |i, j| 1.0 / (i + j + 1) as f64 - 0.1 * j as f64);
        let s = tria(&a).unwrap();
        assert!((&s * s.transpose() - &a * a.transpose()).norm() < 1e-12);
        for i in 0..3 {
            assert!(s[(i, i)] > 0.0);
            for j in i + 1..3 {
                assert_eq!(s[(i, j)], 0.0);
            }
        }
    }

    #[test]
    fn propagate_identity_belief_gives_raw_points() {
        let rule = make_rule(RuleKind::CnfIII, 4).unwrap();
        let b = GaussianBelief::new(DVector::zeros(4), DMatrix::identity(4, 4));
        assert_eq!(propagate_points(&b, &rule), rule.points);
    }

    #[test]
    fn propagated_moments_match() {
        let p = spd(5, 3);
        let mu = DVector::from_fn(5, |i, _| i as f64 - 1.0);
        let b = GaussianBelief::from_cov(mu.clone(), &p).unwrap();
        for kind in RuleKind::ALL {
            let rule = make_rule(kind, 5).unwrap();
            let x = propagate_points(&b, &rule);
            let m = weighted_mean(&x, &rule.weights);
            assert!((m - &mu).norm() < 1e-12, "{kind}");
            let c = weighted_cross(&x, &mu, &x, &mu, &rule.weights);
            assert!((c - &p).abs().max() < 1e-10, "{kind}");
        }
    }

    #[test]
    fn identity_predict_keeps_belief() {
        let p = spd(4, 9);
        let b = GaussianBelief::from_cov(DVector::from_element(4, 0.3), &p).unwrap();
        let id = FnTransition::new(4, 4, |x: &[f64], y: &mut [f64]| y.copy_from_slice(x));
        for kind in RuleKind::ALL {
            let rule = make_rule(kind, 4).unwrap();
            let (out, _) = predict(&b, &id, &rule, &DMatrix::zeros(4, 4)).unwrap();
            assert!((&out.mean - &b.mean).norm() < 1e-12);
            assert!((out.cov() - b.cov()).abs().max() < 1e-12, "{kind}");
        }
    }

    #[test]
    fn zero_innovation_leaves_mean() {
        let p = spd(3, 2);
        let b = GaussianBelief::from_cov(DVector::from_element(3, 1.0), &p).unwrap();
        let meas = FnTransition::new(3, 2, |x: &[f64], y: &mut [f64]| {
            y[0] = x[0] * x[1];
            y[1] = x[2].sin();
        });
        let rule = make_rule(RuleKind::CnfI, 3).unwrap();
        let zi = eval_rows(&meas, &propagate_points(&b, &rule)).unwrap();
        let zhat = weighted_mean(&zi, &rule.weights);
        let sr = DMatrix::identity(2, 2) * 0.1;
        let out = update(&b, &zhat, &meas, &rule, &sr).unwrap();
        assert!((&out.belief.mean - &b.mean).norm() < 1e-12);
        // plain covariance reference
        let x = propagate_points(&b, &rule);
        let pzz = weighted_cross(&zi, &zhat, &zi, &zhat, &rule.weights) + &sr * sr.transpose();
        let pxz = weighted_cross(&x, &b.mean, &zi, &zhat, &rule.weights);
        let k = &pxz * pzz.clone().try_inverse().unwrap();
        let pref = b.cov() - &k * pzz * k.transpose();
        assert!((out.belief.cov() - pref).abs().max() < 1e-10);
    }

    #[test]
    fn repeated_updates_shrink_trace() {
        let b0 = GaussianBelief::from_cov(DVector::zeros(3), &spd(3, 5)).unwrap();
        let meas = FnTransition::new(3, 2, |x: &[f64], y: &mut [f64]| {
            y[0] = x[0] + 0.1 * x[1] * x[1];
            y[1] = x[2] - x[0];
        });
        let mut f = CubatureFilter::new(make_rule(RuleKind::CnfVI, 3).unwrap());
        let z = DVector::from_vec(vec![0.4, -0.2]);
        let sr = DMatrix::identity(2, 2) * 0.5;
        let mut b = b0;
        let mut tr = b.cov().trace();
        for _ in 0..20 {
            b = f.update(&b, &z, &meas, &sr).unwrap().belief;
            let t = b.cov().trace();
            assert!(t <= tr + 1e-12);
            tr = t;
        }
    }

    #[test]
    fn plain_path_used_for_negative_weights() {
        let f = CubatureFilter::new(make_rule(RuleKind::Ukf, 7).unwrap());
        assert!(f.uses_plain_covariance());
        let f = CubatureFilter::new(make_rule(RuleKind::CnfII, 7).unwrap());
        assert!(f.uses_plain_covariance());
        let f = CubatureFilter::new(make_rule(RuleKind::CnfVI, 7).unwrap());
        assert!(!f.uses_plain_covariance());
    }

    #[test]
    fn uninformative_measurement_keeps_cloud() {
        let mut p = DMatrix::zeros(50, 2);
        for i in 0..50 {
            p[(i, 0)] = i as f64;
            p[(i, 1)] = -(i as f64);
        }
        let mut cloud = ParticleCloud::new(p.clone(), ChaCha8Rng::seed_from_u64(1));
        let m = FnTransition::new(2, 2, |x: &[f64], y: &mut [f64]| {
            y[0] = 2.0 * x[0];
            y[1] = x[1] + 1.0;
        });
        let h = FnTransition::new(2, 1, |x: &[f64], y: &mut [f64]| y[0] = x[0]);
        let z = DVector::from_vec(vec![3.0]);
        cloud
            .step(&m, &h, &z, &DMatrix::zeros(2, 2), &DMatrix::from_element(1, 1, 1e9))
            .unwrap();
        for i in 0..50 {
            assert_eq!(cloud.particles[(i, 0)], 2.0 * i as f64);
            assert_eq!(cloud.particles[(i, 1)], -(i as f64) + 1.0);
            assert_eq!(cloud.weights[i], 1.0 / 50.0);
        }
    }

    #[test]
    fn collapse_is_reported() {
        let mut cloud = ParticleCloud::new(DMatrix::zeros(10, 1), ChaCha8Rng::seed_from_u64(1));
        let id = FnTransition::new(1, 1, |x: &[f64], y: &mut [f64]| y[0] = x[0]);
        let z = DVector::from_vec(vec![1e6]);
        let r = cloud.step(&id, &id, &z, &DMatrix::zeros(1, 1), &DMatrix::identity(1, 1));
        assert_eq!(r, Err(FilterError::WeightCollapse));
    }
}
