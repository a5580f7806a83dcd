//! Support points: `k` representatives of a point set that minimize the
//! energy distance
//!
//! `E(X, C) = 2/(kN) sum_i sum_j |c_j - x_i| - 1/k^2 sum_i sum_j |x_j - x_i|`
//!
//! (the candidate-candidate constant is dropped). Minimization uses the
//! convex-concave fixed-point update
//!
//! `x_i <- [ (N/k) sum_{j!=i} (x_i - x_j)/|x_i - x_j| + sum_m c_m/|x_i - c_m| ] / sum_m 1/|x_i - c_m|`.

use rand::seq::index::sample;
use rand::Rng as _;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dist, sq_dist};
use crate::par;
use crate::rng::{derive_seed, rng_from_seed, Rng};

fn check_dims(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<usize> {
    let d = a.first().or(b.first()).map_or(0, Vec::len);
    for x in a.iter().chain(b) {
        if x.len() != d {
            return Err(Error::Dimension {
                expected: d,
                got: x.len(),
            });
        }
    }
    Ok(d)
}

/// Energy distance between `reduced` (size k) and `candidates` (size N),
/// without the constant candidate-candidate term.
pub fn energy_distance(reduced: &[Vec<f64>], candidates: &[Vec<f64>]) -> Result<f64> {
    if reduced.is_empty() || candidates.is_empty() {
        return Err(Error::InvalidArgument("energy distance needs non-empty point sets".into()));
    }
    check_dims(reduced, candidates)?;
    let (k, n) = (reduced.len() as f64, candidates.len() as f64);
    let mut cross = 0.0;
    for x in reduced {
        for c in candidates {
            cross += dist(c, x);
        }
    }
    let mut within = 0.0;
    for a in reduced {
        for b in reduced {
            within += dist(a, b);
        }
    }
    Ok(2.0 / (k * n) * cross - within / (k * k))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SupportConfig {
    pub max_iter: usize,
    /// Stop once no point moves farther than this in one iteration, as a
    /// fraction of the RMS distance of the candidates from their centroid.
    pub tol: f64,
    /// Optional box the iterates are clamped to after every update.
    #[serde(skip)]
    pub bounds: Option<(Vec<f64>, Vec<f64>)>,
}

impl Default for SupportConfig {
    fn default() -> Self {
        Self {
            max_iter: 2000,
            tol: 1e-12,
            bounds: None,
        }
    }
}

impl SupportConfig {
    pub fn unit_cube(p: usize) -> Self {
        Self {
            bounds: Some((vec![0.0; p], vec![1.0; p])),
            ..Self::default()
        }
    }
}

/// Support points with the default configuration.
pub fn support_points(candidates: &[Vec<f64>], k: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    support_points_with(candidates, k, seed, &SupportConfig::default())
}

pub fn support_points_with(
    candidates: &[Vec<f64>],
    k: usize,
    seed: u64,
    cfg: &SupportConfig,
) -> Result<Vec<Vec<f64>>> {
    let n = candidates.len();
    if k == 0 || n == 0 {
        return Err(Error::InvalidArgument("support points need k >= 1 and N >= 1".into()));
    }
    if k > n {
        return Err(Error::InvalidArgument(format!(
            "cannot reduce {n} candidates to {k} support points"
        )));
    }
    let d = check_dims(candidates, &[])?;
    if k == n {
        return Ok(candidates.to_vec());
    }
    // work relative to the centroid so a shift of the candidates shifts the
    // iterates exactly
    let center: Vec<f64> = (0..d).map(|j| candidates.iter().map(|c| c[j]).sum::<f64>() / n as f64).collect();
    let shift = |x: &[f64], sign: f64| -> Vec<f64> { x.iter().zip(&center).map(|(v, c)| v + sign * c).collect() };
    let cands: Vec<Vec<f64>> = candidates.iter().map(|c| shift(c, -1.0)).collect();
    let bounds = cfg.bounds.as_ref().map(|(lo, hi)| (shift(lo, -1.0), shift(hi, -1.0)));
    let spread = (cands.iter().map(|c| c.iter().map(|v| v * v).sum::<f64>()).sum::<f64>() / n as f64).sqrt();
    let tol = cfg.tol * spread.max(f64::MIN_POSITIVE);
    let mut rng = rng_from_seed(seed);
    let mut pts: Vec<Vec<f64>> = sample(&mut rng, n, k).into_iter().map(|i| cands[i].clone()).collect();
    let ratio = n as f64 / k as f64;
    for _ in 0..cfg.max_iter {
        // separate coincident iterates, which the update cannot pull apart
        for i in 0..k {
            if (0..i).any(|j| sq_dist(&pts[i], &pts[j]) < 1e-24) {
                let dir: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
                let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
                for (v, u) in pts[i].iter_mut().zip(&dir) {
                    *v += 1e-9 * u / norm;
                }
            }
        }
        let next: Vec<Vec<f64>> = par::map_range(k, |i| {
            let (mut x_new, stays) = weiszfeld_step(&pts[i], i, &pts, &cands, ratio);
            if !stays {
                // near a candidate the plain step crawls; jump onto it when
                // it is itself a fixed point
                let (near, r) = cands
                    .iter()
                    .map(|c| (c, dist(c, &pts[i])))
                    .min_by(|a, b| a.1.total_cmp(&b.1))
                    .expect("candidates are non-empty");
                if r < SNAP * spread && weiszfeld_step(near, i, &pts, &cands, ratio).1 {
                    x_new = near.clone();
                }
            }
            if let Some((lo, hi)) = &bounds {
                for ((v, l), h) in x_new.iter_mut().zip(lo).zip(hi) {
                    *v = v.clamp(*l, *h);
                }
            }
            x_new
        });
        let moved = next.iter().zip(&pts).map(|(a, b)| dist(a, b)).fold(0.0, f64::max);
        pts = next;
        if moved <= tol {
            break;
        }
    }
    Ok(pts
        .iter()
        .map(|x| {
            let mut y = shift(x, 1.0);
            if let Some((lo, hi)) = &cfg.bounds {
                for ((v, l), h) in y.iter_mut().zip(lo).zip(hi) {
                    *v = v.clamp(*l, *h);
                }
            }
            y
        })
        .collect())
}

/// Relative distance below which an iterate is moved onto a candidate that
/// is a fixed point of the update.
const SNAP: f64 = 1e-3;

/// One fixed-point update of iterate `i` evaluated at `x`. The flag is set
/// when `x` coincides with a candidate whose weight holds it in place.
fn weiszfeld_step(x: &[f64], i: usize, pts: &[Vec<f64>], cands: &[Vec<f64>], ratio: f64) -> (Vec<f64>, bool) {
    let d = x.len();
    let mut num = vec![0.0; d];
    let mut q = 0.0;
    // candidates sitting on the iterate (distance 0)
    let mut on = 0.0;
    for c in cands {
        let r = dist(x, c);
        if r < 1e-12 {
            on += 1.0;
            continue;
        }
        q += 1.0 / r;
        for (acc, cv) in num.iter_mut().zip(c) {
            *acc += cv / r;
        }
    }
    if q == 0.0 {
        return (x.to_vec(), true);
    }
    for (j, xj) in pts.iter().enumerate() {
        if j == i {
            continue;
        }
        let r = dist(x, xj);
        if r < 1e-12 {
            continue;
        }
        for ((acc, a), b) in num.iter_mut().zip(x).zip(xj) {
            *acc += ratio * (a - b) / r;
        }
    }
    let mut x_new: Vec<f64> = num.iter().map(|v| v / q).collect();
    if on > 0.0 {
        // Vardi-Zhang step: stay on the candidate unless the pull of the
        // other terms exceeds its weight
        let pull = q * dist(&x_new, x);
        if pull <= on {
            return (x.to_vec(), true);
        }
        let w = on / pull;
        for (v, xv) in x_new.iter_mut().zip(x) {
            *v = (1.0 - w) * *v + w * xv;
        }
    }
    (x_new, false)
}

/// Lloyd's k-means; kept as a comparison baseline for support points.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let n = points.len();
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!("cannot form {k} clusters from {n} points")));
    }
    let d = check_dims(points, &[])?;
    let mut rng = rng_from_seed(seed);
    let mut centers: Vec<Vec<f64>> = sample(&mut rng, n, k).into_iter().map(|i| points[i].clone()).collect();
    let mut assign = vec![usize::MAX; n];
    for _ in 0..100 {
        let mut changed = false;
        for (a, x) in assign.iter_mut().zip(points) {
            let mut best = (0, f64::INFINITY);
            for (c, center) in centers.iter().enumerate() {
                let v = sq_dist(x, center);
                if v < best.1 {
                    best = (c, v);
                }
            }
            if *a != best.0 {
                *a = best.0;
                changed = true;
            }
        }
        let mut sums = vec![vec![0.0; d]; k];
        let mut counts = vec![0usize; k];
        for (a, x) in assign.iter().zip(points) {
            counts[*a] += 1;
            for (s, v) in sums[*a].iter_mut().zip(x) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centers[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
        if !changed {
            break;
        }
    }
    Ok(centers)
}

/// Marginal prior of one calibration parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dist", rename_all = "lowercase", deny_unknown_fields)]
pub enum Marginal {
    Normal { mean: f64, sd: f64 },
    Uniform { lo: f64, hi: f64 },
}

impl Marginal {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Marginal::Normal { mean, sd } if mean.is_finite() && sd.is_finite() && sd > 0.0 => Ok(()),
            Marginal::Uniform { lo, hi } if lo.is_finite() && hi.is_finite() && lo < hi => Ok(()),
            Marginal::Normal { sd, .. } => Err(Error::InvalidArgument(format!("normal prior needs sd > 0, got {sd}"))),
            Marginal::Uniform { lo, hi } => Err(Error::InvalidArgument(format!(
                "uniform prior needs lo < hi, got [{lo}, {hi}]"
            ))),
        }
    }

    pub fn sample(&self, rng: &mut Rng) -> f64 {
        match *self {
            Marginal::Normal { mean, sd } => Normal::new(mean, sd).expect("validated").sample(rng),
            Marginal::Uniform { lo, hi } => lo + (hi - lo) * rng.random::<f64>(),
        }
    }

    /// Log density up to an additive constant.
    pub fn log_density(&self, v: f64) -> f64 {
        match *self {
            Marginal::Normal { mean, sd } => {
                let z = (v - mean) / sd;
                -0.5 * z * z
            }
            Marginal::Uniform { lo, hi } => {
                if (lo..=hi).contains(&v) {
                    0.0
                } else {
                    f64::NEG_INFINITY
                }
            }
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            Marginal::Normal { mean, .. } => mean,
            Marginal::Uniform { lo, hi } => 0.5 * (lo + hi),
        }
    }

    pub fn sd(&self) -> f64 {
        match *self {
            Marginal::Normal { sd, .. } => sd,
            Marginal::Uniform { lo, hi } => (hi - lo) / 12f64.sqrt(),
        }
    }

    fn standardize(&self, v: f64) -> f64 {
        match *self {
            Marginal::Normal { mean, sd } => (v - mean) / sd,
            Marginal::Uniform { lo, hi } => (v - lo) / (hi - lo),
        }
    }

    fn unstandardize(&self, z: f64) -> f64 {
        match *self {
            Marginal::Normal { mean, sd } => mean + sd * z,
            Marginal::Uniform { lo, hi } => (lo + (hi - lo) * z).clamp(lo, hi),
        }
    }
}

/// Independent priors over the `q` calibration parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PriorSpec {
    pub marginals: Vec<Marginal>,
}

impl PriorSpec {
    pub fn new(marginals: Vec<Marginal>) -> Result<Self> {
        let s = Self { marginals };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.marginals.is_empty() {
            return Err(Error::InvalidArgument("prior needs at least one parameter".into()));
        }
        self.marginals.iter().try_for_each(Marginal::validate)
    }

    pub fn dim(&self) -> usize {
        self.marginals.len()
    }

    pub fn sample(&self, rng: &mut Rng) -> Vec<f64> {
        self.marginals.iter().map(|m| m.sample(rng)).collect()
    }

    pub fn log_density(&self, eta: &[f64]) -> f64 {
        self.marginals.iter().zip(eta).map(|(m, v)| m.log_density(*v)).sum()
    }

    pub fn mean(&self) -> Vec<f64> {
        self.marginals.iter().map(Marginal::mean).collect()
    }
}

/// `m` support points of the prior, computed from `oversample * m` seeded
/// Monte Carlo draws. Each coordinate is standardized before the reduction so
/// that parameters on very different scales count equally.
pub fn prior_representatives(prior: &PriorSpec, m: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    prior_representatives_with(prior, m, seed, 50, &SupportConfig::default())
}

pub fn prior_representatives_with(
    prior: &PriorSpec,
    m: usize,
    seed: u64,
    oversample: usize,
    cfg: &SupportConfig,
) -> Result<Vec<Vec<f64>>> {
    prior.validate()?;
    if m == 0 {
        return Err(Error::InvalidArgument("m must be >= 1".into()));
    }
    let mut rng = rng_from_seed(derive_seed(seed, 0));
    let draws: Vec<Vec<f64>> = (0..oversample.max(1) * m)
        .map(|_| {
            prior
                .marginals
                .iter()
                .map(|mg| mg.standardize(mg.sample(&mut rng)))
                .collect()
        })
        .collect();
    let mut cfg = cfg.clone();
    let uniform: Vec<bool> = prior
        .marginals
        .iter()
        .map(|mg| matches!(mg, Marginal::Uniform { .. }))
        .collect();
    if uniform.iter().any(|u| *u) {
        let lo = uniform.iter().map(|u| if *u { 0.0 } else { f64::NEG_INFINITY }).collect();
        let hi = uniform.iter().map(|u| if *u { 1.0 } else { f64::INFINITY }).collect();
        cfg.bounds = Some((lo, hi));
    }
    let pts = support_points_with(&draws, m, derive_seed(seed, 1), &cfg)?;
    Ok(pts
        .into_iter()
        .map(|z| {
            prior
                .marginals
                .iter()
                .zip(z)
                .map(|(mg, v)| mg.unstandardize(v))
                .collect()
        })
        .collect())
}
