//! Gaussian-process emulator with an anisotropic squared-exponential kernel
//!
//! `C(u, v) = tau2 * exp(-sum_k ((u_k - v_k) / theta_k)^2)`,
//!
//! a constant (or zero) mean, and kriging posterior
//! `m(u) = mu + C(u,S) K^-1 (y - mu 1)`,
//! `s2(u) = C(u,u) - C(u,S) K^-1 C(S,u)`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cholesky_escalating, sq_dist};
use crate::optim::{nelder_mead, NelderMead};
use crate::par;
use crate::rng::{derive_seed, rng_from_seed};
use crate::sobol::sobol_test_set;

pub const NUGGET_START: f64 = 1e-10;
pub const NUGGET_MAX: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MeanMode {
    #[default]
    Estimated,
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GpConfig {
    /// Fixed lengthscales; estimated by maximum likelihood when `None`.
    pub lengthscales: Option<Vec<f64>>,
    pub lengthscale_bounds: (f64, f64),
    pub multistarts: usize,
    pub mean: MeanMode,
    /// Fixed process variance; profiled out when `None`.
    pub variance: Option<f64>,
    /// Observation-noise variance in output units. When set and positive the
    /// GP smooths instead of interpolating and the process variance is
    /// estimated jointly with the lengthscales.
    pub noise_variance: Option<f64>,
    /// First rung of the relative nugget ladder (escalates by 10x to 1e-4).
    pub nugget: f64,
    pub seed: u64,
}

impl Default for GpConfig {
    fn default() -> Self {
        Self {
            lengthscales: None,
            lengthscale_bounds: (0.01, 10.0),
            multistarts: 10,
            mean: MeanMode::Estimated,
            variance: None,
            noise_variance: None,
            nugget: NUGGET_START,
            seed: 0,
        }
    }
}

impl GpConfig {
    fn noise(&self) -> f64 {
        self.noise_variance.unwrap_or(0.0)
    }

    fn validate(&self, d: usize) -> Result<()> {
        let (lo, hi) = self.lengthscale_bounds;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::InvalidArgument(format!("invalid lengthscale bounds [{lo}, {hi}]")));
        }
        if let Some(t) = &self.lengthscales {
            if t.len() != d {
                return Err(Error::Dimension { expected: d, got: t.len() });
            }
            if t.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                return Err(Error::InvalidArgument("lengthscales must be positive".into()));
            }
        }
        if let Some(v) = self.variance {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidArgument(format!("variance must be >= 0, got {v}")));
            }
        }
        let nv = self.noise();
        if !(nv.is_finite() && nv >= 0.0) {
            return Err(Error::InvalidArgument(format!("noise variance must be >= 0, got {nv}")));
        }
        if !(self.nugget >= 0.0 && self.nugget <= NUGGET_MAX) {
            return Err(Error::InvalidArgument(format!("nugget must lie in [0, {NUGGET_MAX}]")));
        }
        Ok(())
    }
}

fn correlation(u: &[f64], v: &[f64], theta: &[f64]) -> f64 {
    let s: f64 = u
        .iter()
        .zip(v)
        .zip(theta)
        .map(|((a, b), t)| {
            let z = (a - b) / t;
            z * z
        })
        .sum();
    (-s).exp()
}

fn corr_matrix(s: &[Vec<f64>], theta: &[f64]) -> DMatrix<f64> {
    let n = s.len();
    let mut r = DMatrix::identity(n, n);
    for i in 0..n {
        for j in 0..i {
            let v = correlation(&s[i], &s[j], theta);
            r[(i, j)] = v;
            r[(j, i)] = v;
        }
    }
    r
}

// Everything the likelihood and the posterior need for one set of
// hyperparameters.
struct Factor {
    chol: Cholesky<f64, Dyn>,
    mu: f64,
    tau2: f64,
    nugget: f64,
    alpha: DVector<f64>,
    neg_log_lik: f64,
}

fn gls_mean(chol: &Cholesky<f64, Dyn>, y: &DVector<f64>, mode: MeanMode) -> f64 {
    match mode {
        MeanMode::Zero => 0.0,
        MeanMode::Estimated => {
            let ones = DVector::from_element(y.len(), 1.0);
            let ki1 = chol.solve(&ones);
            let den = ones.dot(&ki1);
            if den > 0.0 {
                ki1.dot(y) / den
            } else {
                y.mean()
            }
        }
    }
}

fn log_det(chol: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

// Noise-free (or fixed-variance) case: factor R + g I with the nugget
// ladder and profile out mu and tau2.
fn factor_profile(s: &[Vec<f64>], y: &DVector<f64>, theta: &[f64], cfg: &GpConfig) -> Result<Factor> {
    let n = s.len() as f64;
    let r = corr_matrix(s, theta);
    let start = if cfg.nugget > 0.0 { cfg.nugget } else { 0.0 };
    let (chol, nugget) = if start == 0.0 {
        match Cholesky::new(r.clone()) {
            Some(c) => (c, 0.0),
            None => cholesky_escalating(&r, 1.0, NUGGET_START, NUGGET_MAX)?,
        }
    } else {
        cholesky_escalating(&r, 1.0, start, NUGGET_MAX)?
    };
    let mu = gls_mean(&chol, y, cfg.mean);
    let resid = y.add_scalar(-mu);
    let ki_r = chol.solve(&resid);
    let quad = resid.dot(&ki_r).max(0.0);
    let (tau2, nll) = match cfg.variance {
        Some(t2) => {
            let t2 = t2.max(1e-300);
            (t2, 0.5 * (n * t2.ln() + log_det(&chol) + quad / t2))
        }
        None => {
            let t2 = (quad / n).max(1e-300);
            (t2, 0.5 * (n * t2.ln() + log_det(&chol)))
        }
    };
    let alpha = ki_r;
    Ok(Factor {
        chol,
        mu,
        tau2,
        nugget,
        alpha,
        neg_log_lik: nll,
    })
}

// Known-noise case: factor tau2 R + noise I; tau2 is a free parameter.
fn factor_noise(s: &[Vec<f64>], y: &DVector<f64>, theta: &[f64], tau2: f64, cfg: &GpConfig) -> Result<Factor> {
    let n = s.len();
    let mut k = corr_matrix(s, theta) * tau2;
    for i in 0..n {
        k[(i, i)] += cfg.noise();
    }
    let scale = tau2 + cfg.noise();
    let (chol, jitter) = cholesky_escalating(&k, scale, cfg.nugget.max(NUGGET_START), NUGGET_MAX)?;
    let mu = gls_mean(&chol, y, cfg.mean);
    let resid = y.add_scalar(-mu);
    let alpha = chol.solve(&resid);
    let nll = 0.5 * (log_det(&chol) + resid.dot(&alpha));
    // stored relative to tau2 so the posterior can use one code path
    let nugget = (cfg.noise() + jitter * scale) / tau2.max(1e-300);
    Ok(Factor {
        chol,
        mu,
        tau2,
        nugget,
        alpha: alpha * tau2,
        neg_log_lik: nll,
    })
}

/// Fitted GP. Immutable; safe to share across threads.
#[derive(Debug, Clone)]
pub struct GpSurrogate {
    inputs: Vec<Vec<f64>>,
    outputs: Vec<f64>,
    theta: Vec<f64>,
    mu: f64,
    tau2: f64,
    nugget: f64,
    // Cholesky of R + nugget I (correlation scale)
    chol: Option<Cholesky<f64, Dyn>>,
    // (R + nugget I)^-1 (y - mu)
    alpha: DVector<f64>,
    neg_log_lik: f64,
}

fn fit_at(s: &[Vec<f64>], y: &DVector<f64>, params: &[f64], d: usize, cfg: &GpConfig) -> Result<Factor> {
    let theta: Vec<f64> = params[..d].iter().map(|v| v.exp()).collect();
    if cfg.noise() > 0.0 {
        let tau2 = cfg.variance.unwrap_or_else(|| params[d].exp());
        let f = factor_noise(s, y, &theta, tau2, cfg)?;
        // refactor on the correlation scale for the shared posterior code
        let mut r = corr_matrix(s, &theta);
        for i in 0..s.len() {
            r[(i, i)] += f.nugget;
        }
        let chol = Cholesky::new(r).ok_or(Error::Factorization { jitter: f.nugget })?;
        let alpha = chol.solve(&y.add_scalar(-f.mu));
        Ok(Factor { chol, alpha, ..f })
    } else {
        factor_profile(s, y, &theta, cfg)
    }
}

/// Fits the GP to `inputs` (normalized coordinates) and `outputs`.
pub fn fit_gp(inputs: &[Vec<f64>], outputs: &[f64], cfg: &GpConfig) -> Result<GpSurrogate> {
    let n = inputs.len();
    if n == 0 || outputs.len() != n {
        return Err(Error::Data(format!(
            "GP needs matching non-empty inputs and outputs, got {n} and {}",
            outputs.len()
        )));
    }
    let d = inputs[0].len();
    if d == 0 {
        return Err(Error::InvalidArgument("GP inputs need at least one dimension".into()));
    }
    for row in inputs {
        if row.len() != d {
            return Err(Error::Dimension { expected: d, got: row.len() });
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("GP input".into()));
        }
    }
    if outputs.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("GP output".into()));
    }
    cfg.validate(d)?;
    let y = DVector::from_column_slice(outputs);
    let (ymin, ymax) = outputs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
    let scale = ymax.abs().max(ymin.abs()).max(1.0);
    let constant = match cfg.mean {
        MeanMode::Estimated => ymax - ymin <= 1e-14 * scale,
        MeanMode::Zero => ymax.abs().max(ymin.abs()) <= 1e-300,
    };
    let fixed_var = cfg.variance == Some(0.0);
    if constant || fixed_var {
        let mu = match cfg.mean {
            MeanMode::Estimated => y.mean(),
            MeanMode::Zero => 0.0,
        };
        let theta = cfg.lengthscales.clone().unwrap_or_else(|| vec![cfg.lengthscale_bounds.1.min(1.0); d]);
        return Ok(GpSurrogate {
            inputs: inputs.to_vec(),
            outputs: outputs.to_vec(),
            theta,
            mu,
            tau2: 0.0,
            nugget: 0.0,
            chol: None,
            alpha: DVector::zeros(n),
            neg_log_lik: f64::NEG_INFINITY,
        });
    }

    let noisy = cfg.noise() > 0.0 && cfg.variance.is_none();
    let var_y = {
        let m = y.mean();
        (y.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n as f64).max(cfg.noise()).max(1e-12)
    };
    let (lo_t, hi_t) = (cfg.lengthscale_bounds.0.ln(), cfg.lengthscale_bounds.1.ln());
    let mut lo = vec![lo_t; d];
    let mut hi = vec![hi_t; d];
    if noisy {
        lo.push((var_y * 1e-6).ln());
        hi.push((var_y * 1e2).ln());
    }

    let params = match &cfg.lengthscales {
        Some(t) if !noisy => t.iter().map(|v| v.ln()).collect::<Vec<_>>(),
        fixed => {
            if fixed.is_none() && n < d + 2 {
                return Err(Error::Data(format!(
                    "estimating {d} lengthscales needs at least {} runs, got {n}",
                    d + 2
                )));
            }
            let objective = |x: &[f64]| -> f64 {
                let mut full: Vec<f64> = match fixed {
                    Some(t) => t.iter().map(|v| v.ln()).collect(),
                    None => x[..d].to_vec(),
                };
                if noisy {
                    full.push(x[x.len() - 1]);
                }
                match fit_at(inputs, &y, &full, d, cfg) {
                    Ok(f) if f.neg_log_lik.is_finite() => f.neg_log_lik,
                    _ => f64::INFINITY,
                }
            };
            let (slo, shi): (Vec<f64>, Vec<f64>) = match fixed {
                Some(_) => (vec![lo[d]], vec![hi[d]]),
                None => (lo.clone(), hi.clone()),
            };
            let dim = slo.len();
            let starts = cfg.multistarts.max(1);
            let nm = NelderMead {
                max_iter: 150 * dim,
                step: 0.5,
                ftol: 1e-10,
                xtol: 1e-7,
            };
            let results = par::map_range(starts, |s| {
                let x0: Vec<f64> = if s == 0 {
                    let mut x: Vec<f64> = (0..dim).map(|_| 0.5f64.ln().clamp(lo_t, hi_t)).collect();
                    if noisy {
                        x[dim - 1] = var_y.ln();
                    }
                    x
                } else {
                    let mut rng = rng_from_seed(derive_seed(cfg.seed, s as u64));
                    slo.iter().zip(&shi).map(|(l, h)| l + (h - l) * rng.random::<f64>()).collect()
                };
                nelder_mead(objective, &x0, &slo, &shi, &nm)
            });
            let vals: Vec<f64> = results.iter().map(|r| r.1).collect();
            let best = par::argmin(&vals).ok_or(Error::Factorization { jitter: NUGGET_MAX })?;
            if !results[best].1.is_finite() {
                return Err(Error::Factorization { jitter: NUGGET_MAX });
            }
            let x = &results[best].0;
            match fixed {
                Some(t) => {
                    let mut full: Vec<f64> = t.iter().map(|v| v.ln()).collect();
                    full.push(x[0]);
                    full
                }
                None => x.clone(),
            }
        }
    };
    let f = fit_at(inputs, &y, &params, d, cfg)?;
    Ok(GpSurrogate {
        inputs: inputs.to_vec(),
        outputs: outputs.to_vec(),
        theta: params[..d].iter().map(|v| v.exp()).collect(),
        mu: f.mu,
        tau2: f.tau2,
        nugget: f.nugget,
        chol: Some(f.chol),
        alpha: f.alpha,
        neg_log_lik: f.neg_log_lik,
    })
}

impl GpSurrogate {
    pub fn dims(&self) -> usize {
        self.theta.len()
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn inputs(&self) -> &[Vec<f64>] {
        &self.inputs
    }

    pub fn outputs(&self) -> &[f64] {
        &self.outputs
    }

    pub fn lengthscales(&self) -> &[f64] {
        &self.theta
    }

    pub fn mean_constant(&self) -> f64 {
        self.mu
    }

    pub fn process_variance(&self) -> f64 {
        self.tau2
    }

    /// Nugget relative to the process variance.
    pub fn nugget(&self) -> f64 {
        self.nugget
    }

    pub fn neg_log_likelihood(&self) -> f64 {
        self.neg_log_lik
    }

    /// Prior covariance `C(u, v)`.
    pub fn kernel(&self, u: &[f64], v: &[f64]) -> f64 {
        self.tau2 * correlation(u, v, &self.theta)
    }

    fn corr_to_train(&self, u: &[f64]) -> DVector<f64> {
        DVector::from_iterator(self.inputs.len(), self.inputs.iter().map(|s| correlation(u, s, &self.theta)))
    }

    pub fn posterior_mean(&self, u: &[f64]) -> f64 {
        if self.chol.is_none() {
            return self.mu;
        }
        self.mu + self.corr_to_train(u).dot(&self.alpha)
    }

    /// Posterior mean and variance at `u`. The variance is clamped at zero.
    pub fn posterior(&self, u: &[f64]) -> (f64, f64) {
        let Some(chol) = &self.chol else {
            return (self.mu, 0.0);
        };
        let r = self.corr_to_train(u);
        let mean = self.mu + r.dot(&self.alpha);
        let v = self.tau2 * (1.0 - r.dot(&chol.solve(&r)));
        (mean, v.max(0.0))
    }

    /// Posterior covariance matrix over `points`.
    pub fn posterior_covariance(&self, points: &[Vec<f64>]) -> DMatrix<f64> {
        let k = points.len();
        let mut c = DMatrix::zeros(k, k);
        let Some(chol) = &self.chol else {
            return c;
        };
        let mut r = DMatrix::zeros(self.inputs.len(), k);
        for (j, u) in points.iter().enumerate() {
            r.set_column(j, &self.corr_to_train(u));
        }
        let w = chol.solve(&r);
        let reduction = r.transpose() * w;
        for i in 0..k {
            for j in 0..=i {
                let v = self.tau2 * (correlation(&points[i], &points[j], &self.theta) - reduction[(i, j)]);
                c[(i, j)] = v;
                c[(j, i)] = v;
            }
        }
        c
    }

    // (R + nugget I)^-1 r(S, u) for each u in `points`, as columns
    fn solve_columns(&self, points: &[Vec<f64>]) -> DMatrix<f64> {
        let mut r = DMatrix::zeros(self.inputs.len(), points.len());
        for (j, u) in points.iter().enumerate() {
            r.set_column(j, &self.corr_to_train(u));
        }
        match &self.chol {
            Some(c) => c.solve(&r),
            None => r * 0.0,
        }
    }

    /// Index of the training input nearest to each of `points`.
    pub fn nearest_training(&self, points: &[Vec<f64>]) -> Vec<usize> {
        points
            .iter()
            .map(|u| {
                let d: Vec<f64> = self.inputs.iter().map(|s| sq_dist(s, u)).collect();
                par::argmin(&d).unwrap_or(0)
            })
            .collect()
    }
}

/// One posterior sample path, drawn at anchor points and extended elsewhere
/// by conditioning the posterior on the drawn anchor values.
#[derive(Debug, Clone)]
pub struct Realization {
    gp: GpSurrogate,
    anchors: Vec<Vec<f64>>,
    values: Vec<f64>,
    jitter: f64,
    // (Sigma_AA + jitter I)^-1 (values - m_A)
    beta: DVector<f64>,
    // (R + nugget I)^-1 r(S, A) beta, folded for fast evaluation
    train_weights: DVector<f64>,
}

impl Realization {
    pub fn anchors(&self) -> &[Vec<f64>] {
        &self.anchors
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Value of the path at `u` (full GP input, normalized).
    pub fn eval(&self, u: &[f64]) -> f64 {
        let mean = self.gp.posterior_mean(u);
        if self.beta.is_empty() {
            return mean;
        }
        let tau2 = self.gp.tau2;
        let mut acc = 0.0;
        for (i, a) in self.anchors.iter().enumerate() {
            let mut c = tau2 * correlation(u, a, &self.gp.theta);
            if u == a.as_slice() {
                c += self.jitter;
            }
            acc += c * self.beta[i];
        }
        let r = self.gp.corr_to_train(u);
        mean + acc - tau2 * r.dot(&self.train_weights)
    }
}

/// Draws one posterior sample path on the slice `eta = eta_slice`
/// (normalized), with `anchor_density` Sobol anchors over x-space. The
/// GP's inputs are ordered `(x, eta)`.
pub fn sample_realization(gp: &GpSurrogate, eta_slice: &[f64], anchor_density: usize, seed: u64) -> Result<Realization> {
    let q = eta_slice.len();
    let d = gp.dims();
    if q >= d {
        return Err(Error::Dimension { expected: d - 1, got: q });
    }
    let p = d - q;
    let anchors: Vec<Vec<f64>> = sobol_test_set(p, anchor_density.max(1), 0)?
        .into_iter()
        .map(|mut x| {
            x.extend_from_slice(eta_slice);
            x
        })
        .collect();
    let means: Vec<f64> = anchors.iter().map(|a| gp.posterior_mean(a)).collect();
    let cov = gp.posterior_covariance(&anchors);
    let max_diag = cov.diagonal().iter().cloned().fold(0.0, f64::max);
    if max_diag <= 1e-14 * gp.tau2.max(1e-300) || gp.chol.is_none() {
        return Ok(Realization {
            gp: gp.clone(),
            anchors,
            values: means,
            jitter: 0.0,
            beta: DVector::zeros(0),
            train_weights: DVector::zeros(0),
        });
    }
    let (chol, rel) = cholesky_escalating(&cov, max_diag, 1e-10, 1e-2)?;
    let jitter = rel * max_diag;
    let mut rng = rng_from_seed(seed);
    let z = DVector::from_iterator(anchors.len(), (0..anchors.len()).map(|_| rng.sample::<f64, _>(StandardNormal)));
    let l = chol.l();
    let values: Vec<f64> = (&l * &z).iter().zip(&means).map(|(a, m)| a + m).collect();
    // (L L^T)^-1 (L z) = L^-T z
    let beta = l
        .transpose()
        .solve_upper_triangular(&z)
        .ok_or(Error::Factorization { jitter: rel })?;
    let w = gp.solve_columns(&anchors);
    let train_weights = &w * &beta;
    Ok(Realization {
        gp: gp.clone(),
        anchors,
        values,
        jitter,
        beta,
        train_weights,
    })
}
