use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use hybridcub::cubature::{make_rule, RuleKind};
use hybridcub::filter::{
    propagate_points, tria, CubatureFilter, FnTransition, GaussianBelief, LinearTransition, ParticleCloud,
};

fn random_matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

fn spd(n: usize, seed: u64) -> DMatrix<f64> {
    let a = random_matrix(n, n, seed);
    &a * a.transpose() + DMatrix::identity(n, n) * 0.5
}

fn chol(p: &DMatrix<f64>) -> DMatrix<f64> {
    p.clone().cholesky().unwrap().l()
}

fn weighted_moments(y: &DMatrix<f64>, w: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let mean = y.transpose() * w;
    let mut cov = DMatrix::zeros(y.ncols(), y.ncols());
    for i in 0..y.nrows() {
        let d = y.row(i).transpose() - &mean;
        cov += &d * d.transpose() * w[i];
    }
    (mean, cov)
}

proptest! {
    #[test]
    fn tria_reproduces_gram_and_is_lower_positive(n in 1usize..7, extra in 0usize..9, seed in any::<u64>()) {
        let a = random_matrix(n, n + extra, seed);
        let s = tria(&a).unwrap();
        prop_assert!((&s * s.transpose() - &a * a.transpose()).amax() < 1e-10 * (1.0 + (&a * a.transpose()).amax()));
        for i in 0..n {
            prop_assert!(s[(i, i)] > 0.0);
            for j in i + 1..n {
                prop_assert_eq!(s[(i, j)], 0.0);
            }
        }
    }

    #[test]
    fn propagated_points_reproduce_belief(
        kind in prop::sample::select(RuleKind::ALL.to_vec()),
        n in 2usize..=7,
        seed in any::<u64>(),
    ) {
        let rule = make_rule(kind, n).unwrap();
        let p = spd(n, seed);
        let mu = random_matrix(n, 1, seed ^ 1).column(0).into_owned();
        let b = GaussianBelief::new(mu.clone(), chol(&p));
        let (m, c) = weighted_moments(&propagate_points(&b, &rule), &rule.weights);
        prop_assert!((m - mu).amax() < 1e-10 * (1.0 + p.amax()));
        prop_assert!((c - &p).amax() < 1e-10 * p.amax());
    }

    #[test]
    fn linear_prediction_is_exact(
        kind in prop::sample::select(RuleKind::ALL.to_vec()),
        n in 2usize..=7,
        seed in any::<u64>(),
    ) {
        let rule = make_rule(kind, n).unwrap();
        let a = random_matrix(n, n, seed);
        let p = spd(n, seed ^ 2);
        let q = spd(n, seed ^ 3) * 0.1;
        let mu = random_matrix(n, 1, seed ^ 4).column(0).into_owned();
        let mut f = CubatureFilter::new(rule);
        let (pred, _) = f
            .predict(&GaussianBelief::new(mu.clone(), chol(&p)), &LinearTransition { a: a.clone() }, &chol(&q))
            .unwrap();
        let want = &a * &p * a.transpose() + &q;
        prop_assert!((&pred.mean - &a * &mu).amax() < 1e-9 * (1.0 + (&a * &mu).amax()));
        prop_assert!((pred.cov() - &want).amax() < 1e-9 * want.amax());
        if !f.uses_plain_covariance() {
            prop_assert!((&pred.sqrt_cov - chol(&want)).amax() < 1e-9 * want.amax().sqrt());
        }
    }

    #[test]
    fn linear_update_matches_kalman(
        kind in prop::sample::select(RuleKind::ALL.to_vec()),
        n in 2usize..=7,
        m in 1usize..=4,
        seed in any::<u64>(),
    ) {
        let rule = make_rule(kind, n).unwrap();
        let h = random_matrix(m, n, seed);
        let p = spd(n, seed ^ 5);
        let r = spd(m, seed ^ 6);
        let mu = random_matrix(n, 1, seed ^ 7).column(0).into_owned();
        let z = random_matrix(m, 1, seed ^ 8).column(0).into_owned();
        let up = CubatureFilter::new(rule)
            .update(&GaussianBelief::new(mu.clone(), chol(&p)), &z, &LinearTransition { a: h.clone() }, &chol(&r))
            .unwrap();
        let s = &h * &p * h.transpose() + &r;
        let k = &p * h.transpose() * s.clone().try_inverse().unwrap();
        let mean = &mu + &k * (&z - &h * &mu);
        let cov = &p - &k * &s * k.transpose();
        prop_assert!((&up.belief.mean - mean).amax() < 1e-9 * (1.0 + mu.amax() + z.amax()));
        prop_assert!((up.belief.cov() - cov).amax() < 1e-9 * p.amax());
        prop_assert!((&up.sqrt_szz * up.sqrt_szz.transpose() - &s).amax() < 1e-9 * s.amax());
    }
}

fn quadratic_map(n: usize) -> FnTransition<impl Fn(&[f64], &mut [f64]) + Send + Sync> {
    FnTransition::new(n, n, |x: &[f64], out: &mut [f64]| {
        for (o, v) in out.iter_mut().zip(x) {
            *o = v + 0.1 * v * v;
        }
    })
}

#[test]
fn quadratic_map_prediction_against_gaussian_moments() {
    // E[x + 0.1 x^2] = 0.1 and Var = 1 + 0.01 Var(x^2) = 1.02, coordinates independent
    let n = 3;
    let want_mean = DVector::from_element(n, 0.1);
    let want_cov = DMatrix::identity(n, n) * 1.02;
    let b = GaussianBelief::new(DVector::zeros(n), DMatrix::identity(n, n));
    let zero_q = DMatrix::zeros(n, n);
    let mut errors = Vec::new();
    for kind in RuleKind::ALL {
        let rule = make_rule(kind, n).unwrap();
        let degree = rule.degree;
        let (pred, _) = CubatureFilter::new(rule).predict(&b, &quadratic_map(n), &zero_q).unwrap();
        let mean_err = (&pred.mean - &want_mean).amax();
        let cov_err = (pred.cov() - &want_cov).amax();
        assert!(mean_err < 1e-12, "{kind}: mean error {mean_err}");
        if degree >= 5 {
            assert!(cov_err < 1e-12, "{kind}: covariance error {cov_err}");
        }
        errors.push((degree, mean_err, cov_err));
    }
    let worst5 = errors.iter().filter(|e| e.0 == 5).map(|e| e.2).fold(0.0, f64::max);
    let best3 = errors.iter().filter(|e| e.0 == 3).map(|e| e.2).fold(f64::INFINITY, f64::min);
    assert!(worst5 <= best3 + 1e-12);
}

#[test]
fn quadratic_map_matches_monte_carlo() {
    let n = 3;
    let samples = 1_000_000;
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut sum = DVector::<f64>::zeros(n);
    let mut sq = DVector::<f64>::zeros(n);
    for _ in 0..samples {
        for i in 0..n {
            let x: f64 = rng.sample(StandardNormal);
            let y = x + 0.1 * x * x;
            sum[i] += y;
            sq[i] += y * y;
        }
    }
    let mean = sum / samples as f64;
    let b = GaussianBelief::new(DVector::zeros(n), DMatrix::identity(n, n));
    for kind in [RuleKind::CnfII, RuleKind::CnfIV, RuleKind::CnfVI] {
        let (pred, _) = CubatureFilter::new(make_rule(kind, n).unwrap())
            .predict(&b, &quadratic_map(n), &DMatrix::zeros(n, n))
            .unwrap();
        for i in 0..n {
            let var = sq[i] / samples as f64 - mean[i] * mean[i];
            let se = (var / samples as f64).sqrt();
            assert!((pred.mean[i] - mean[i]).abs() < 3.0 * se, "{kind} mean {i}");
            // standard error of a sample variance is about sqrt(2/N) var for near-Gaussian data
            let var_se = var * (2.5 / samples as f64).sqrt();
            assert!((pred.cov()[(i, i)] - var).abs() < 3.0 * var_se, "{kind} variance {i}");
        }
    }
}

#[test]
fn zero_innovation_keeps_mean_and_matches_plain_covariance() {
    let n = 4;
    let rule = make_rule(RuleKind::CnfVI, n).unwrap();
    let meas = FnTransition::new(n, 2, |x: &[f64], out: &mut [f64]| {
        out[0] = x[0] + 0.2 * x[1].sin();
        out[1] = x[2] * x[3] * 0.1 + x[1];
    });
    let p = spd(n, 11);
    let b = GaussianBelief::new(DVector::from_element(n, 0.3), chol(&p));
    let sr = DMatrix::identity(2, 2) * 0.3;
    let mut f = CubatureFilter::new(rule.clone());
    let pts = propagate_points(&b, &rule);
    let mut zi = DMatrix::zeros(pts.nrows(), 2);
    for i in 0..pts.nrows() {
        let mut out = [0.0; 2];
        hybridcub::filter::Transition::eval(&meas, pts.row(i).transpose().as_slice(), &mut out).unwrap();
        zi.row_mut(i).copy_from_slice(&out);
    }
    let zhat = zi.transpose() * &rule.weights;
    let up = f.update(&b, &zhat, &meas, &sr).unwrap();
    assert!((&up.belief.mean - &b.mean).amax() < 1e-12);
    let mut pzz = &sr * sr.transpose();
    let mut pxz = DMatrix::zeros(n, 2);
    for i in 0..pts.nrows() {
        let dz = zi.row(i).transpose() - &zhat;
        let dx = pts.row(i).transpose() - &b.mean;
        pzz += &dz * dz.transpose() * rule.weights[i];
        pxz += &dx * dz.transpose() * rule.weights[i];
    }
    let k = &pxz * pzz.clone().try_inverse().unwrap();
    let plain = &p - &k * &pzz * k.transpose();
    assert!((up.belief.cov() - plain).amax() < 1e-10);
}

#[test]
fn particle_filter_matches_kalman_on_linear_gaussian() {
    let n = 2;
    let np = 100_000;
    let a = DMatrix::from_row_slice(2, 2, &[0.9, 0.1, -0.2, 0.8]);
    let h = DMatrix::from_row_slice(1, 2, &[1.0, 0.5]);
    let sq = DMatrix::identity(n, n) * 0.3;
    let sr = DMatrix::identity(1, 1) * 0.8;
    let z = DVector::from_element(1, 0.7);
    let prior = GaussianBelief::new(DVector::from_vec(vec![0.2, -0.1]), DMatrix::identity(n, n));
    let mut cloud = ParticleCloud::from_belief(&prior, np, 3);
    let est = cloud
        .step(&LinearTransition { a: a.clone() }, &LinearTransition { a: h.clone() }, &z, &sq, &sr)
        .unwrap();
    let xp = &a * &prior.mean;
    let pp = &a * a.transpose() + &sq * sq.transpose();
    let s = &h * &pp * h.transpose() + &sr * sr.transpose();
    let k = &pp * h.transpose() / s[(0, 0)];
    let xk = &xp + &k * (&z - &h * &xp);
    for i in 0..n {
        // importance weights are mild here; half the cloud is a safe effective size
        let se = (pp[(i, i)] / (0.5 * np as f64)).sqrt();
        assert!((est[i] - xk[i]).abs() < 3.0 * se, "coordinate {i}: {} vs {}", est[i], xk[i]);
    }
    assert!((cloud.weights.sum() - 1.0).abs() < 1e-9);
    assert!(cloud.weights.iter().all(|w| *w >= 0.0));
}

#[test]
fn particle_filter_is_seeded() {
    let prior = GaussianBelief::new(DVector::zeros(2), DMatrix::identity(2, 2));
    let run = || {
        let mut c = ParticleCloud::from_belief(&prior, 200, 17);
        let m = LinearTransition { a: DMatrix::identity(2, 2) };
        let z = DVector::from_element(2, 0.4);
        let q = DMatrix::identity(2, 2) * 0.1;
        (0..5).map(|_| c.step(&m, &m, &z, &q, &q).unwrap()).collect::<Vec<_>>()
    };
    assert_eq!(run(), run());
}
