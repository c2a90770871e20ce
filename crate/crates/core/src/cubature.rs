//! Cubature point/weight sets for integration against the standard Gaussian.
//!
//! Every [`CubatureRule`] is stored in Gaussian-normalized form: weights sum to
//! one and abscissae already include the `sqrt(2)` factor of the spherical-radial
//! transform, so `sum_i w_i f(xi_i)` approximates `E[f(x)]` for `x ~ N(0, I)`.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, RowDVector};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{gamma, ln_gamma};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RuleError {
    #[error("degree {0} is not supported (expected an odd degree in {{3, 5}})")]
    UnsupportedDegree(usize),
    #[error("{what}: dimension {n} outside the supported range {min}..={max}")]
    DimensionOutOfRange {
        what: &'static str,
        n: usize,
        min: usize,
        max: usize,
    },
    #[error("{what} (n={n}, d={d}): moment system is singular or inconsistent (relative residual {residual:e})")]
    SingularMoments {
        what: &'static str,
        n: usize,
        d: usize,
        residual: f64,
    },
    #[error("dimension mismatch: spherical rule has n={rule}, composition requested n={requested}")]
    DimensionMismatch { rule: usize, requested: usize },
    #[error("n + kappa must be positive (n={n}, kappa={kappa})")]
    DegenerateKappa { n: usize, kappa: f64 },
    #[error("unknown rule kind '{0}'")]
    UnknownKind(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RuleKind {
    #[serde(rename = "CNF-I")]
    CnfI,
    #[serde(rename = "CNF-II")]
    CnfII,
    #[serde(rename = "CNF-III")]
    CnfIII,
    #[serde(rename = "CNF-IV")]
    CnfIV,
    #[serde(rename = "CNF-V")]
    CnfV,
    #[serde(rename = "CNF-VI")]
    CnfVI,
    #[serde(rename = "UKF")]
    Ukf,
}

impl RuleKind {
    pub const ALL: [RuleKind; 7] = [
        RuleKind::CnfI,
        RuleKind::CnfII,
        RuleKind::CnfIII,
        RuleKind::CnfIV,
        RuleKind::CnfV,
        RuleKind::CnfVI,
        RuleKind::Ukf,
    ];

    /// Guaranteed polynomial degree of exactness.
    pub fn degree(self) -> usize {
        match self {
            RuleKind::CnfII | RuleKind::CnfIV | RuleKind::CnfVI => 5,
            _ => 3,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            RuleKind::CnfI => "CNF-I",
            RuleKind::CnfII => "CNF-II",
            RuleKind::CnfIII => "CNF-III",
            RuleKind::CnfIV => "CNF-IV",
            RuleKind::CnfV => "CNF-V",
            RuleKind::CnfVI => "CNF-VI",
            RuleKind::Ukf => "UKF",
        }
    }

    /// Roman-numeral suffix used in hybrid labels such as `VI-I`.
    pub fn short(self) -> &'static str {
        match self {
            RuleKind::CnfI => "I",
            RuleKind::CnfII => "II",
            RuleKind::CnfIII => "III",
            RuleKind::CnfIV => "IV",
            RuleKind::CnfV => "V",
            RuleKind::CnfVI => "VI",
            RuleKind::Ukf => "UKF",
        }
    }
}

impl fmt::Display for RuleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for RuleKind {
    type Err = RuleError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim().to_ascii_uppercase();
        let t = t.strip_prefix("CNF-").or_else(|| t.strip_prefix("CNF")).unwrap_or(&t);
        Ok(match t {
            "I" | "1" => RuleKind::CnfI,
            "II" | "2" => RuleKind::CnfII,
            "III" | "3" => RuleKind::CnfIII,
            "IV" | "4" => RuleKind::CnfIV,
            "V" | "5" => RuleKind::CnfV,
            "VI" | "6" => RuleKind::CnfVI,
            "UKF" => RuleKind::Ukf,
            _ => return Err(RuleError::UnknownKind(s.to_string())),
        })
    }
}

/// Rule on the unit sphere `U_n` with surface-measure weights.
#[derive(Debug, Clone, PartialEq)]
pub struct SphericalRule {
    pub points: DMatrix<f64>,
    pub weights: DVector<f64>,
    pub degree: usize,
}

impl SphericalRule {
    pub fn n(&self) -> usize {
        self.points.ncols()
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// One-dimensional rule for `int_0^inf r^(n-1) exp(-r^2) f(r) dr`.
#[derive(Debug, Clone, PartialEq)]
pub struct RadialRule {
    pub radii: DVector<f64>,
    pub weights: DVector<f64>,
    pub degree: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CubatureRule {
    /// One abscissa per row (N x n).
    pub points: DMatrix<f64>,
    pub weights: DVector<f64>,
    pub degree: usize,
    pub kind: RuleKind,
    pub n: usize,
}

impl CubatureRule {
    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn point(&self, i: usize) -> RowDVector<f64> {
        self.points.row(i).into_owned()
    }

    pub fn has_negative_weight(&self) -> bool {
        self.weights.iter().any(|&w| w < 0.0)
    }

    pub fn stability_factor(&self) -> f64 {
        stability_factor(self)
    }
}

/// `sum |w| / sum w`.
pub fn stability_factor(rule: &CubatureRule) -> f64 {
    let abs: f64 = rule.weights.iter().map(|w| w.abs()).sum();
    let sum: f64 = rule.weights.iter().sum();
    if rule.weights.iter().all(|&w| w >= 0.0) {
        return 1.0;
    }
    abs / sum
}

/// Surface integral of `s^alpha` over the unit sphere.
pub fn sphere_monomial_integral(alpha: &[usize]) -> f64 {
    if alpha.iter().any(|a| a % 2 == 1) {
        return 0.0;
    }
    let betas: Vec<f64> = alpha.iter().map(|&a| (a as f64 + 1.0) / 2.0).collect();
    let total: f64 = betas.iter().sum();
    let log = betas.iter().map(|&b| ln_gamma(b)).sum::<f64>() - ln_gamma(total);
    2.0 * log.exp()
}

pub fn sphere_area(n: usize) -> f64 {
    2.0 * PI.powf(n as f64 / 2.0) / gamma(n as f64 / 2.0)
}

/// All exponent vectors with every entry even and total degree <= d.
fn even_monomials(n: usize, d: usize) -> Vec<Vec<usize>> {
    fn rec(n: usize, left: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == n {
            out.push(cur.clone());
            return;
        }
        let mut e = 0;
        while e <= left {
            cur.push(e);
            rec(n, left - e, cur, out);
            cur.pop();
            e += 2;
        }
    }
    let mut out = Vec::new();
    rec(n, d, &mut Vec::with_capacity(n), &mut out);
    out
}

fn monomial(row: &[f64], alpha: &[usize]) -> f64 {
    row.iter()
        .zip(alpha)
        .map(|(x, &a)| x.powi(a as i32))
        .product()
}

/// Solve for one surface weight per orbit so that all even monomials up to
/// degree `d` integrate exactly over the sphere.
fn orbit_weights(
    what: &'static str,
    orbits: &[Vec<Vec<f64>>],
    n: usize,
    d: usize,
) -> Result<Vec<f64>, RuleError> {
    let alphas = even_monomials(n, d);
    let k = orbits.len();
    let mut a = DMatrix::<f64>::zeros(alphas.len(), k);
    let mut b = DVector::<f64>::zeros(alphas.len());
    for (r, alpha) in alphas.iter().enumerate() {
        b[r] = sphere_monomial_integral(alpha);
        for (c, orbit) in orbits.iter().enumerate() {
            a[(r, c)] = orbit.iter().map(|p| monomial(p, alpha)).sum();
        }
    }
    // minimum-norm solution: coincident orbits (the n = 2 midpoints fall on
    // the negated vertices) share their weight equally
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let w = svd
        .solve(&b, 1e-12 * smax)
        .map_err(|_| RuleError::SingularMoments {
            what,
            n,
            d,
            residual: f64::INFINITY,
        })?;
    let residual = (&a * &w - &b).norm() / b.norm();
    if residual.is_nan() || residual > 1e-10 {
        return Err(RuleError::SingularMoments {
            what,
            n,
            d,
            residual,
        });
    }
    Ok(w.iter().copied().collect())
}

fn assemble_spherical(orbits: &[Vec<Vec<f64>>], weights: &[f64], n: usize, d: usize) -> SphericalRule {
    let total: usize = orbits.iter().map(|o| o.len()).sum();
    let mut points = DMatrix::<f64>::zeros(total, n);
    let mut w = DVector::<f64>::zeros(total);
    let mut r = 0;
    for (orbit, &wo) in orbits.iter().zip(weights) {
        for p in orbit {
            for (j, &v) in p.iter().enumerate() {
                points[(r, j)] = v;
            }
            w[r] = wo;
            r += 1;
        }
    }
    SphericalRule {
        points,
        weights: w,
        degree: d,
    }
}

/// Partitions of `m` into at most `n` parts, largest first.
fn partitions(m: usize, n: usize) -> Vec<Vec<usize>> {
    fn rec(left: usize, max: usize, slots: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if left == 0 {
            out.push(cur.clone());
            return;
        }
        if slots == 0 {
            return;
        }
        for part in (1..=max.min(left)).rev() {
            cur.push(part);
            rec(left - part, part, slots - 1, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(m, m, n, &mut Vec::new(), &mut out);
    out
}

/// Distinct permutations of a multiset in lexicographically descending order.
fn distinct_permutations(v: &[f64]) -> Vec<Vec<f64>> {
    let mut cur: Vec<f64> = v.to_vec();
    cur.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut out = vec![cur.clone()];
    // next permutation in descending order
    loop {
        let n = cur.len();
        let mut i = n;
        while i > 1 && cur[i - 2] <= cur[i - 1] {
            i -= 1;
        }
        if i <= 1 {
            break;
        }
        let pivot = i - 2;
        let mut j = n - 1;
        while cur[j] >= cur[pivot] {
            j -= 1;
        }
        cur.swap(pivot, j);
        cur[pivot + 1..].reverse();
        out.push(cur.clone());
    }
    out
}

/// All sign flips of the nonzero entries, positive first.
fn sign_orbit(p: &[f64]) -> Vec<Vec<f64>> {
    let nz: Vec<usize> = (0..p.len()).filter(|&i| p[i] != 0.0).collect();
    let mut out = Vec::with_capacity(1 << nz.len());
    for mask in 0..(1usize << nz.len()) {
        let mut q = p.to_vec();
        for (bit, &i) in nz.iter().enumerate() {
            if mask & (1 << (nz.len() - 1 - bit)) != 0 {
                q[i] = -q[i];
            }
        }
        out.push(q);
    }
    out
}

fn check_degree(d: usize) -> Result<(), RuleError> {
    if d == 3 || d == 5 {
        Ok(())
    } else {
        Err(RuleError::UnsupportedDegree(d))
    }
}

/// Fully symmetric spherical rule built from the partitions of `m = (d-1)/2`.
pub fn genz_spherical(n: usize, d: usize) -> Result<SphericalRule, RuleError> {
    check_degree(d)?;
    if n < 1 {
        return Err(RuleError::DimensionOutOfRange {
            what: "genz_spherical",
            n,
            min: 1,
            max: usize::MAX,
        });
    }
    let m = (d - 1) / 2;
    let mut orbits = Vec::new();
    for rho in partitions(m, n) {
        let mut gen = vec![0.0; n];
        for (i, &r) in rho.iter().enumerate() {
            gen[i] = (r as f64 / m as f64).sqrt();
        }
        let mut orbit = Vec::new();
        for perm in distinct_permutations(&gen) {
            orbit.extend(sign_orbit(&perm));
        }
        orbits.push(orbit);
    }
    let w = orbit_weights("genz_spherical", &orbits, n, d)?;
    Ok(assemble_spherical(&orbits, &w, n, d))
}

/// Vertices of the regular simplex inscribed in `U_n` (n+1 rows).
pub fn simplex_vertices(n: usize) -> DMatrix<f64> {
    let nf = n as f64;
    DMatrix::from_fn(n + 1, n, |p0, i0| {
        let p = (p0 + 1) as f64;
        let i = (i0 + 1) as f64;
        if i0 < p0 {
            -((nf + 1.0) / (nf * (nf - i + 2.0) * (nf - i + 1.0))).sqrt()
        } else if i0 == p0 {
            ((nf + 1.0) * (nf - p + 1.0) / (nf * (nf - p + 2.0))).sqrt()
        } else {
            0.0
        }
    })
}

/// Simplex-based spherical rule: vertices for degree 3, vertices plus edge
/// midpoint projections for degree 5.
pub fn mysovskikh_spherical(n: usize, d: usize) -> Result<SphericalRule, RuleError> {
    check_degree(d)?;
    if n < 2 {
        return Err(RuleError::DimensionOutOfRange {
            what: "mysovskikh_spherical",
            n,
            min: 2,
            max: usize::MAX,
        });
    }
    let a = simplex_vertices(n);
    let mut verts = Vec::new();
    for p in 0..=n {
        let v: Vec<f64> = a.row(p).iter().copied().collect();
        verts.push(v.clone());
        verts.push(v.iter().map(|x| -x).collect());
    }
    let mut orbits = vec![verts];
    if d == 5 {
        let mut mids = Vec::new();
        for p in 0..=n {
            for q in p + 1..=n {
                let s = a.row(p) + a.row(q);
                let s = &s / s.norm();
                let v: Vec<f64> = s.iter().copied().collect();
                mids.push(v.clone());
                mids.push(v.iter().map(|x| -x).collect());
            }
        }
        orbits.push(mids);
    }
    let w = orbit_weights("mysovskikh_spherical", &orbits, n, d)?;
    Ok(assemble_spherical(&orbits, &w, n, d))
}

/// Radial rule solving `sum_q w_q r_q^l = Gamma((n+l)/2)/2` for even `l < d`.
pub fn radial_moment_match(n: usize, d: usize) -> Result<RadialRule, RuleError> {
    check_degree(d)?;
    if n < 1 {
        return Err(RuleError::DimensionOutOfRange {
            what: "radial_moment_match",
            n,
            min: 1,
            max: usize::MAX,
        });
    }
    let moment = |l: usize| 0.5 * gamma((n + l) as f64 / 2.0);
    if d == 3 {
        let r2 = moment(2) / moment(0);
        return Ok(RadialRule {
            radii: DVector::from_vec(vec![r2.sqrt()]),
            weights: DVector::from_vec(vec![moment(0)]),
            degree: 3,
        });
    }
    // two nodes, one pinned at the origin
    let r2 = moment(4) / moment(2);
    let w1 = moment(2) / r2;
    let w0 = moment(0) - w1;
    Ok(RadialRule {
        radii: DVector::from_vec(vec![0.0, r2.sqrt()]),
        weights: DVector::from_vec(vec![w0, w1]),
        degree: 5,
    })
}

/// Product of a spherical and a radial rule, mapped to the unit Gaussian.
pub fn compose_spherical_radial(
    s: &SphericalRule,
    r: &RadialRule,
    n: usize,
    kind: RuleKind,
) -> Result<CubatureRule, RuleError> {
    if s.n() != n {
        return Err(RuleError::DimensionMismatch {
            rule: s.n(),
            requested: n,
        });
    }
    let norm = PI.powf(n as f64 / 2.0);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut w: Vec<f64> = Vec::new();
    let ssum: f64 = s.weights.iter().sum();
    // center point first
    for q in 0..r.radii.len() {
        if r.radii[q] == 0.0 {
            rows.push(vec![0.0; n]);
            w.push(r.weights[q] * ssum / norm);
        }
    }
    for q in 0..r.radii.len() {
        let rq = r.radii[q];
        if rq == 0.0 {
            continue;
        }
        for p in 0..s.len() {
            rows.push(s.points.row(p).iter().map(|v| 2f64.sqrt() * rq * v).collect());
            w.push(r.weights[q] * s.weights[p] / norm);
        }
    }
    let total: f64 = w.iter().sum();
    let points = DMatrix::from_fn(rows.len(), n, |i, j| rows[i][j]);
    Ok(CubatureRule {
        points,
        weights: DVector::from_iterator(w.len(), w.iter().map(|v| v / total)),
        degree: s.degree.min(r.degree),
        kind,
        n,
    })
}

/// Generator coefficients of the positive-weight fifth-degree rule with
/// `n^2 + n + 2` nodes, expressed for the weight `exp(-x.x)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StroudCoefficients {
    pub eta: f64,
    pub lambda: f64,
    pub xi: f64,
    pub upsilon: f64,
    pub gamma: f64,
    pub w1: f64,
    pub w2: f64,
    pub w3: f64,
}

pub fn stroud_coefficients(n: usize) -> Result<StroudCoefficients, RuleError> {
    if !(2..=7).contains(&n) {
        return Err(RuleError::DimensionOutOfRange {
            what: "stroud_5th",
            n,
            min: 2,
            max: 7,
        });
    }
    let nf = n as f64;
    let r16 = (16.0 - 2.0 * nf).sqrt();
    let r7 = (7.0 - nf).sqrt();
    let gam = ((3.0 + r7) / (2.0 * (16.0 - nf + 4.0 * r16))).sqrt();
    let ups = (-3.0 - r16) * gam;
    // pair sums/differences of the third generator
    let s3 = 2.0 * ups + (nf - 2.0) * gam;
    let d3 = ups - gam;
    let c2 = nf * (nf - 1.0) / 2.0;
    let big_w3 = 1.0 / (4.0 * d3.powi(4));
    let d2sq = (8.0 - nf) * d3 * d3 / (2.0 * d3 * d3 - (nf - 2.0));
    let d2 = d2sq.sqrt();
    let big_w2 = (8.0 - nf) / 4.0 / (d2sq * d2sq);
    let big_w1 = 1.0 - nf * big_w2 - c2 * big_w3;
    let s2 = -(nf - 4.0) * big_w3 * s3 * d3.powi(3) / (big_w2 * d2.powi(3));
    let mut eta2 = (0.5 - big_w2 * s2 * s2 - big_w3 * c2 * s3 * s3 / nf) / (big_w1 * nf);
    if eta2.abs() < 1e-12 {
        eta2 = 0.0;
    }
    let xi = (s2 - d2) / nf;
    Ok(StroudCoefficients {
        eta: eta2.sqrt(),
        lambda: xi + d2,
        xi,
        upsilon: ups,
        gamma: gam,
        w1: big_w1 / 2.0,
        w2: big_w2 / 2.0,
        w3: big_w3 / 2.0,
    })
}

/// Positive-weight fifth-degree rule with one point more than the lower bound.
pub fn stroud_5th(n: usize) -> Result<CubatureRule, RuleError> {
    let c = stroud_coefficients(n)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut w: Vec<f64> = Vec::new();
    let mut push_pair = |v: Vec<f64>, wt: f64, rows: &mut Vec<Vec<f64>>| {
        rows.push(v.iter().map(|x| x * 2f64.sqrt()).collect());
        rows.push(v.iter().map(|x| -x * 2f64.sqrt()).collect());
        w.push(wt);
        w.push(wt);
    };
    push_pair(vec![c.eta; n], c.w1, &mut rows);
    for i in 0..n {
        let mut v = vec![c.xi; n];
        v[i] = c.lambda;
        push_pair(v, c.w2, &mut rows);
    }
    for i in 0..n {
        for j in i + 1..n {
            let mut v = vec![c.gamma; n];
            v[i] = c.upsilon;
            v[j] = c.upsilon;
            push_pair(v, c.w3, &mut rows);
        }
    }
    let total: f64 = w.iter().sum();
    Ok(CubatureRule {
        points: DMatrix::from_fn(rows.len(), n, |i, j| rows[i][j]),
        weights: DVector::from_iterator(w.len(), w.iter().map(|v| v / total)),
        degree: 5,
        kind: RuleKind::CnfVI,
        n,
    })
}

/// Sigma set with center weight `kappa/(n+kappa)`.
pub fn ukf_sigma_set(n: usize, kappa: f64) -> Result<CubatureRule, RuleError> {
    let nk = n as f64 + kappa;
    if nk <= 0.0 {
        return Err(RuleError::DegenerateKappa { n, kappa });
    }
    let scale = nk.sqrt();
    let mut points = DMatrix::<f64>::zeros(2 * n + 1, n);
    let mut w = DVector::<f64>::from_element(2 * n + 1, 1.0 / (2.0 * nk));
    w[0] = kappa / nk;
    for i in 0..n {
        points[(1 + 2 * i, i)] = scale;
        points[(2 + 2 * i, i)] = -scale;
    }
    Ok(CubatureRule {
        points,
        weights: w,
        degree: 3,
        kind: RuleKind::Ukf,
        n,
    })
}

fn binomial(n: usize, k: usize) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut r: u64 = 1;
    for i in 0..k {
        r = r * (n - i) as u64 / (i + 1) as u64;
    }
    r
}

/// Minimum node count of a centrally symmetric rule of odd degree `d`.
pub fn moller_lower_bound(n: usize, d: usize) -> u64 {
    assert!(!d.is_multiple_of(2), "degree must be odd");
    let s = d.div_ceil(2);
    let head = binomial(n + s - 1, n) as f64;
    let tail: f64 = (1..n)
        .map(|k| {
            let kn = 2f64.powi(k as i32 - n as i32);
            if s.is_multiple_of(2) {
                kn * binomial(k + s - 1, k) as f64
            } else {
                (1.0 - kn) * binomial(k + s - 2, k) as f64
            }
        })
        .sum();
    (head + tail).round() as u64
}

/// Default UKF spread parameter.
pub fn default_kappa(n: usize) -> f64 {
    3.0 - n as f64
}

pub fn make_rule(kind: RuleKind, n: usize) -> Result<CubatureRule, RuleError> {
    match kind {
        RuleKind::CnfI => compose_spherical_radial(&genz_spherical(n, 3)?, &radial_moment_match(n, 3)?, n, kind),
        RuleKind::CnfII => compose_spherical_radial(&genz_spherical(n, 5)?, &radial_moment_match(n, 5)?, n, kind),
        RuleKind::CnfIII => {
            compose_spherical_radial(&mysovskikh_spherical(n, 3)?, &radial_moment_match(n, 3)?, n, kind)
        }
        RuleKind::CnfIV => {
            compose_spherical_radial(&mysovskikh_spherical(n, 5)?, &radial_moment_match(n, 5)?, n, kind)
        }
        RuleKind::CnfV => {
            let mut r =
                compose_spherical_radial(&mysovskikh_spherical(n, 3)?, &radial_moment_match(n, 5)?, n, kind)?;
            r.degree = 3;
            Ok(r)
        }
        RuleKind::CnfVI => stroud_5th(n),
        RuleKind::Ukf => ukf_sigma_set(n, default_kappa(n)),
    }
}

/// CSV text with columns `w,x1..xn`, 17 significant digits.
pub fn rule_to_csv(rule: &CubatureRule) -> String {
    let mut s = String::from("w");
    for j in 1..=rule.n {
        s.push_str(&format!(",x{j}"));
    }
    s.push('\n');
    for i in 0..rule.len() {
        s.push_str(&crate::fmt17(rule.weights[i]));
        for j in 0..rule.n {
            s.push(',');
            s.push_str(&crate::fmt17(rule.points[(i, j)]));
        }
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn genz_n2_d3_axes() {
        let s = genz_spherical(2, 3).unwrap();
        assert_eq!(s.len(), 4);
        for w in s.weights.iter() {
            assert_relative_eq!(*w, PI / 2.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn genz_rejects_even_degree() {
        assert_eq!(genz_spherical(3, 4), Err(RuleError::UnsupportedDegree(4)));
        assert!(matches!(mysovskikh_spherical(3, 7), Err(RuleError::UnsupportedDegree(7))));
    }

    #[test]
    fn spherical_weights_sum_to_area() {
        for n in 2..=8 {
            for d in [3, 5] {
                for s in [genz_spherical(n, d).unwrap(), mysovskikh_spherical(n, d).unwrap()] {
                    let sum: f64 = s.weights.iter().sum();
                    assert_relative_eq!(sum, sphere_area(n), max_relative = 1e-10);
                    for i in 0..s.len() {
                        assert!((s.points.row(i).norm() - 1.0).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn simplex_closes() {
        for n in 2..=8 {
            let a = simplex_vertices(n);
            let sum = a.row_sum();
            assert!(sum.norm() < 1e-12);
            for p in 0..=n {
                assert!((a.row(p).norm() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn mysovskikh_triangle() {
        let s = mysovskikh_spherical(2, 3).unwrap();
        assert_eq!(s.len(), 6);
        // adjacent vertices of the triangle are 120 degrees apart
        let a = s.points.row(0);
        let b = s.points.row(2);
        assert_relative_eq!(a.dot(&b), -0.5, epsilon = 1e-12);
    }

    #[test]
    fn radial_rules() {
        let r = radial_moment_match(1, 3).unwrap();
        assert_relative_eq!(r.radii[0], 0.5f64.sqrt(), epsilon = 1e-15);
        assert_relative_eq!(r.weights[0], PI.sqrt() / 2.0, epsilon = 1e-15);
        let r = radial_moment_match(7, 3).unwrap();
        assert_relative_eq!(r.radii[0], 3.5f64.sqrt(), epsilon = 1e-14);
        let r = radial_moment_match(7, 5).unwrap();
        assert_eq!(r.radii[0], 0.0);
        assert_relative_eq!(2f64.sqrt() * r.radii[1], 3.0, epsilon = 1e-14);
        for n in 1..=8 {
            let r = radial_moment_match(n, 5).unwrap();
            for l in [0, 2, 4] {
                let lhs: f64 = (0..2).map(|q| r.weights[q] * r.radii[q].powi(l)).sum();
                assert_relative_eq!(lhs, 0.5 * gamma((n + l as usize) as f64 / 2.0), max_relative = 1e-10);
            }
        }
    }

    #[test]
    fn cnf_tables() {
        let n = 7;
        let r = make_rule(RuleKind::CnfI, n).unwrap();
        assert_eq!(r.len(), 14);
        for i in 0..r.len() {
            assert_relative_eq!(r.weights[i], 1.0 / 14.0, epsilon = 1e-14);
            assert_relative_eq!(r.points.row(i).norm(), 7f64.sqrt(), epsilon = 1e-13);
        }
        let r = make_rule(RuleKind::CnfV, n).unwrap();
        assert_eq!(r.len(), 2 * n + 3);
        assert_relative_eq!(r.weights[0], 2.0 / 9.0, epsilon = 1e-14);
        for i in 1..r.len() {
            assert_relative_eq!(r.weights[i], 7.0 / 144.0, epsilon = 1e-14);
        }
        let nf = n as f64;
        let r = make_rule(RuleKind::CnfII, n).unwrap();
        assert_relative_eq!(r.weights[0], 2.0 / (nf + 2.0), epsilon = 1e-14);
        // axis points come first after the center
        assert_relative_eq!(r.weights[1], (4.0 - nf) / (2.0 * (nf + 2.0).powi(2)), epsilon = 1e-14);
        assert_relative_eq!(r.weights[r.len() - 1], 1.0 / (nf + 2.0).powi(2), epsilon = 1e-14);
        let r = make_rule(RuleKind::CnfIV, 8).unwrap();
        let nf = 8.0_f64;
        assert_relative_eq!(
            r.weights[1],
            nf * nf * (7.0 - nf) / (2.0 * (nf + 1.0).powi(2) * (nf + 2.0).powi(2)),
            epsilon = 1e-14
        );
        assert_relative_eq!(
            r.weights[r.len() - 1],
            2.0 * (nf - 1.0).powi(2) / ((nf + 1.0).powi(2) * (nf + 2.0).powi(2)),
            epsilon = 1e-14
        );
    }

    #[test]
    fn stroud_range() {
        assert!(matches!(stroud_5th(1), Err(RuleError::DimensionOutOfRange { .. })));
        assert!(matches!(stroud_5th(8), Err(RuleError::DimensionOutOfRange { .. })));
        let c = stroud_coefficients(3).unwrap();
        assert_relative_eq!(c.eta * c.eta, 5.0 / 22.0, epsilon = 1e-14);
        assert_relative_eq!(c.w1, 0.242, epsilon = 1e-14);
        assert_relative_eq!(c.w2, 0.081, epsilon = 1e-14);
        assert_relative_eq!(c.w3, 0.005, epsilon = 1e-14);
    }

    #[test]
    fn ukf_1d() {
        let r = ukf_sigma_set(1, 2.0).unwrap();
        assert_relative_eq!(r.weights[0], 2.0 / 3.0, epsilon = 1e-15);
        assert_relative_eq!(r.points[(1, 0)], 3f64.sqrt(), epsilon = 1e-15);
        let m4: f64 = (0..3).map(|i| r.weights[i] * r.points[(i, 0)].powi(4)).sum();
        assert_relative_eq!(m4, 3.0, epsilon = 1e-13);
        assert!(ukf_sigma_set(3, -3.0).is_err());
    }

    #[test]
    fn moller_small() {
        for n in 1..=10 {
            assert_eq!(moller_lower_bound(n, 3), 2 * n as u64);
            assert_eq!(moller_lower_bound(n, 5), (n * n + n + 1) as u64);
        }
    }

    #[test]
    fn kind_parsing() {
        assert_eq!("CNF-VI".parse::<RuleKind>().unwrap(), RuleKind::CnfVI);
        assert_eq!("iv".parse::<RuleKind>().unwrap(), RuleKind::CnfIV);
        assert_eq!("ukf".parse::<RuleKind>().unwrap(), RuleKind::Ukf);
        assert!("VII".parse::<RuleKind>().is_err());
    }
}
