//! Two-step calibration. First `(eta, beta0, beta1, sigma2)` are sampled by
//! adaptive random-walk Metropolis under
//! `y = beta0 + (1 + beta1) f(x; eta) + e`, `e ~ N(0, sigma2)`;
//! then a zero-mean GP is fitted to the residuals of the posterior-mean
//! model.

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ComputerModel;
use crate::par;
use crate::reduce::PriorSpec;
use crate::rng::{derive_seed, rng_from_seed};
use crate::surrogate::{fit_gp, GpConfig, GpSurrogate, MeanMode};

/// Physical-experiment data; `x` in physical units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObsData {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<f64>,
}

impl ObsData {
    pub fn new(x: Vec<Vec<f64>>, y: Vec<f64>) -> Result<Self> {
        if x.len() != y.len() {
            return Err(Error::Data(format!("{} input rows but {} outputs", x.len(), y.len())));
        }
        Ok(Self { x, y })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    fn validate(&self, model: &ComputerModel) -> Result<()> {
        for row in &self.x {
            if row.len() != model.p() {
                return Err(Error::Dimension {
                    expected: model.p(),
                    got: row.len(),
                });
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("data input".into()));
            }
        }
        if self.y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("data output".into()));
        }
        Ok(())
    }

    fn sd(&self) -> f64 {
        let n = self.y.len() as f64;
        let m = self.y.iter().sum::<f64>() / n;
        (self.y.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McmcConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub chains: usize,
    pub seed: u64,
    pub target_acceptance: f64,
    /// Iterations between step-size updates during burn-in.
    pub adapt_batch: usize,
    pub beta_prior_sd: f64,
    /// Scale of the half-normal prior on sigma; `10 * sd(y)` when unset.
    pub sigma_prior_scale: Option<f64>,
    /// Hold `beta0 = beta1 = 0`.
    pub fix_beta: bool,
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self {
            iterations: 10_000,
            burn_in: 5_000,
            thin: 5,
            chains: 1,
            seed: 0,
            target_acceptance: 0.44,
            adapt_batch: 50,
            beta_prior_sd: 10.0,
            sigma_prior_scale: None,
            fix_beta: false,
        }
    }
}

impl McmcConfig {
    fn validate(&self) -> Result<()> {
        if self.iterations <= self.burn_in {
            return Err(Error::InvalidArgument(format!(
                "iterations ({}) must exceed burn_in ({})",
                self.iterations, self.burn_in
            )));
        }
        if self.thin == 0 || self.chains == 0 || self.adapt_batch == 0 {
            return Err(Error::InvalidArgument("thin, chains and adapt_batch must be >= 1".into()));
        }
        if !(self.target_acceptance > 0.0 && self.target_acceptance < 1.0) {
            return Err(Error::InvalidArgument("target_acceptance must lie in (0, 1)".into()));
        }
        if !(self.beta_prior_sd > 0.0) {
            return Err(Error::InvalidArgument("beta_prior_sd must be > 0".into()));
        }
        if let Some(s) = self.sigma_prior_scale {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::InvalidArgument("sigma_prior_scale must be > 0".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Draw {
    pub eta: Vec<f64>,
    pub beta0: f64,
    pub beta1: f64,
    pub sigma2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Post-burn-in acceptance rate over all coordinate updates.
    pub acceptance_rate: f64,
    /// Per coordinate, ordered `eta.., beta0, beta1, log sigma`.
    pub coordinate_acceptance: Vec<f64>,
    /// Split-chain potential scale reduction, same order.
    pub rhat: Vec<f64>,
    pub draws: usize,
    pub reinitializations: usize,
}

#[derive(Debug, Clone)]
pub struct CalibrationFit {
    pub model: ComputerModel,
    pub draws: Vec<Draw>,
    pub diagnostics: Diagnostics,
    pub discrepancy: Option<DiscrepancyFit>,
}

struct Target<'a> {
    model: &'a ComputerModel,
    data: &'a ObsData,
    prior: &'a PriorSpec,
    beta_var: f64,
    sigma_scale: f64,
}

impl Target<'_> {
    fn outputs(&self, eta: &[f64]) -> Option<Vec<f64>> {
        if eta.iter().zip(self.model.eta_bounds()).any(|(v, b)| !b.contains(*v)) {
            return None;
        }
        let f: Vec<f64> = self.data.x.iter().map(|x| self.model.eval_raw(x, eta)).collect();
        f.iter().all(|v| v.is_finite()).then_some(f)
    }

    // state: eta.., beta0, beta1, log sigma
    fn log_post(&self, s: &[f64], f: &[f64]) -> f64 {
        let q = self.prior.dim();
        let lp_eta = self.prior.log_density(&s[..q]);
        if !lp_eta.is_finite() {
            return f64::NEG_INFINITY;
        }
        let (b0, b1, ls) = (s[q], s[q + 1], s[q + 2]);
        let sigma2 = (2.0 * ls).exp();
        if !(sigma2 > 0.0 && sigma2.is_finite()) {
            return f64::NEG_INFINITY;
        }
        let ssr: f64 = self
            .data
            .y
            .iter()
            .zip(f)
            .map(|(y, fv)| {
                let r = y - b0 - (1.0 + b1) * fv;
                r * r
            })
            .sum();
        let n = self.data.len() as f64;
        let loglik = -n * ls - 0.5 * ssr / sigma2;
        let lp_beta = -0.5 * (b0 * b0 + b1 * b1) / self.beta_var;
        // half-normal on sigma, sampled on log sigma
        let lp_sigma = -0.5 * sigma2 / (self.sigma_scale * self.sigma_scale) + ls;
        loglik + lp_eta + lp_beta + lp_sigma
    }
}

struct Chain {
    draws: Vec<Vec<f64>>,
    accepted: Vec<usize>,
    proposed: Vec<usize>,
    reinit: usize,
}

fn run_chain(t: &Target, cfg: &McmcConfig, seed: u64) -> Result<Chain> {
    let q = t.prior.dim();
    let dim = q + 3;
    let mut rng = rng_from_seed(seed);
    let sd_y = t.data.sd().max(1e-8);
    let mut state = vec![0.0; dim];
    let mut reinit = 0;
    let init_eta: Vec<f64> = t
        .prior
        .mean()
        .iter()
        .zip(t.model.eta_bounds())
        .map(|(v, b)| b.clamp(*v))
        .collect();
    state[..q].copy_from_slice(&init_eta);
    state[q + 2] = sd_y.ln();
    let mut f = t.outputs(&state[..q]);
    let mut lp = f.as_ref().map_or(f64::NEG_INFINITY, |f| t.log_post(&state, f));
    while !lp.is_finite() {
        if reinit == 50 {
            return Err(Error::Mcmc("no finite posterior density after 50 initializations from the prior".into()));
        }
        reinit += 1;
        let eta = t.prior.sample(&mut rng);
        state[..q].copy_from_slice(&eta);
        f = t.outputs(&state[..q]);
        lp = f.as_ref().map_or(f64::NEG_INFINITY, |f| t.log_post(&state, f));
    }
    let mut f = f.expect("finite density implies outputs");

    let mut log_step: Vec<f64> = (0..dim)
        .map(|j| {
            let s = if j < q {
                let m = &t.prior.marginals[j];
                (0.1 * m.sd()).min(0.1 * t.model.eta_bounds()[j].width())
            } else if j == q {
                0.1 * sd_y
            } else {
                0.1
            };
            s.max(1e-12).ln()
        })
        .collect();
    let active: Vec<bool> = (0..dim).map(|j| !(cfg.fix_beta && (j == q || j == q + 1))).collect();
    let mut batch_acc = vec![0usize; dim];
    let mut accepted = vec![0usize; dim];
    let mut proposed = vec![0usize; dim];
    let mut draws = Vec::with_capacity((cfg.iterations - cfg.burn_in) / cfg.thin + 1);
    let mut batches = 0usize;

    for it in 0..cfg.iterations {
        for j in 0..dim {
            if !active[j] {
                continue;
            }
            let z: f64 = rng.sample(StandardNormal);
            let mut prop = state.clone();
            prop[j] += log_step[j].exp() * z;
            let (lp_new, f_new) = if j < q {
                match t.outputs(&prop[..q]) {
                    Some(fv) => (t.log_post(&prop, &fv), Some(fv)),
                    None => (f64::NEG_INFINITY, None),
                }
            } else {
                (t.log_post(&prop, &f), None)
            };
            let u: f64 = rng.random();
            let ok = lp_new.is_finite() && u.ln() < lp_new - lp;
            if ok {
                state = prop;
                lp = lp_new;
                if let Some(fv) = f_new {
                    f = fv;
                }
            }
            if it < cfg.burn_in {
                batch_acc[j] += ok as usize;
            } else {
                accepted[j] += ok as usize;
                proposed[j] += 1;
            }
        }
        if it < cfg.burn_in && (it + 1) % cfg.adapt_batch == 0 {
            batches += 1;
            let delta = (0.5f64).min(1.0 / (batches as f64).sqrt());
            for j in 0..dim {
                let rate = batch_acc[j] as f64 / cfg.adapt_batch as f64;
                log_step[j] += if rate > cfg.target_acceptance { delta } else { -delta };
                batch_acc[j] = 0;
            }
        }
        if it >= cfg.burn_in && (it - cfg.burn_in) % cfg.thin == 0 {
            draws.push(state.clone());
        }
    }
    Ok(Chain {
        draws,
        accepted,
        proposed,
        reinit,
    })
}

/// Split-chain potential scale reduction of one scalar over several chains.
pub fn split_rhat(chains: &[Vec<f64>]) -> f64 {
    let mut halves: Vec<&[f64]> = vec![];
    for c in chains {
        let h = c.len() / 2;
        if h < 2 {
            return f64::NAN;
        }
        halves.push(&c[..h]);
        halves.push(&c[c.len() - h..]);
    }
    let n = halves.iter().map(|h| h.len()).min().unwrap_or(0) as f64;
    let m = halves.len() as f64;
    let means: Vec<f64> = halves.iter().map(|h| h.iter().sum::<f64>() / h.len() as f64).collect();
    let grand = means.iter().sum::<f64>() / m;
    let b = n / (m - 1.0) * means.iter().map(|v| (v - grand).powi(2)).sum::<f64>();
    let w = halves
        .iter()
        .zip(&means)
        .map(|(h, mu)| h.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / (h.len() as f64 - 1.0))
        .sum::<f64>()
        / m;
    if w == 0.0 {
        return if b == 0.0 { 1.0 } else { f64::INFINITY };
    }
    (((n - 1.0) / n * w + b / n) / w).sqrt()
}

/// Samples the posterior of `(eta, beta0, beta1, sigma2)` ignoring the
/// discrepancy.
pub fn run_mcmc(model: &ComputerModel, data: &ObsData, prior: &PriorSpec, cfg: &McmcConfig) -> Result<CalibrationFit> {
    cfg.validate()?;
    prior.validate()?;
    data.validate(model)?;
    if prior.dim() != model.q() {
        return Err(Error::Dimension {
            expected: model.q(),
            got: prior.dim(),
        });
    }
    if data.len() < model.q() + 3 {
        return Err(Error::Data(format!(
            "calibration needs at least {} observations, got {}",
            model.q() + 3,
            data.len()
        )));
    }
    let target = Target {
        model,
        data,
        prior,
        beta_var: cfg.beta_prior_sd * cfg.beta_prior_sd,
        sigma_scale: cfg.sigma_prior_scale.unwrap_or(10.0 * data.sd().max(1e-8)),
    };
    let chains: Vec<Chain> = par::map_range(cfg.chains, |c| {
        let seed = if cfg.chains == 1 { cfg.seed } else { derive_seed(cfg.seed, c as u64) };
        run_chain(&target, cfg, seed)
    })
    .into_iter()
    .collect::<Result<_>>()?;

    let q = model.q();
    let dim = q + 3;
    let coordinate_acceptance: Vec<f64> = (0..dim)
        .map(|j| {
            let a: usize = chains.iter().map(|c| c.accepted[j]).sum();
            let p: usize = chains.iter().map(|c| c.proposed[j]).sum();
            if p == 0 {
                f64::NAN
            } else {
                a as f64 / p as f64
            }
        })
        .collect();
    let (acc, prop) = chains.iter().fold((0, 0), |(a, p), c| {
        (a + c.accepted.iter().sum::<usize>(), p + c.proposed.iter().sum::<usize>())
    });
    let rhat = (0..dim)
        .map(|j| {
            let series: Vec<Vec<f64>> = chains.iter().map(|c| c.draws.iter().map(|d| d[j]).collect()).collect();
            split_rhat(&series)
        })
        .collect();
    let draws: Vec<Draw> = chains
        .iter()
        .flat_map(|c| c.draws.iter())
        .map(|s| Draw {
            eta: s[..q].to_vec(),
            beta0: s[q],
            beta1: s[q + 1],
            sigma2: (2.0 * s[q + 2]).exp(),
        })
        .collect();
    let diagnostics = Diagnostics {
        acceptance_rate: if prop == 0 { f64::NAN } else { acc as f64 / prop as f64 },
        coordinate_acceptance,
        rhat,
        draws: draws.len(),
        reinitializations: chains.iter().map(|c| c.reinit).sum(),
    };
    Ok(CalibrationFit {
        model: model.clone(),
        draws,
        diagnostics,
        discrepancy: None,
    })
}

impl CalibrationFit {
    /// Builds a fit from given draws, e.g. for hand-checked predictions.
    pub fn from_draws(model: ComputerModel, draws: Vec<Draw>) -> Result<Self> {
        if draws.is_empty() {
            return Err(Error::InvalidArgument("at least one draw is required".into()));
        }
        for d in &draws {
            if d.eta.len() != model.q() {
                return Err(Error::Dimension {
                    expected: model.q(),
                    got: d.eta.len(),
                });
            }
        }
        let n = draws.len();
        Ok(Self {
            model,
            draws,
            diagnostics: Diagnostics {
                acceptance_rate: f64::NAN,
                coordinate_acceptance: vec![],
                rhat: vec![],
                draws: n,
                reinitializations: 0,
            },
            discrepancy: None,
        })
    }

    pub fn posterior_mean_eta(&self) -> Vec<f64> {
        let n = self.draws.len() as f64;
        let mut m = vec![0.0; self.model.q()];
        for d in &self.draws {
            for (a, v) in m.iter_mut().zip(&d.eta) {
                *a += v / n;
            }
        }
        m
    }

    pub fn posterior_sd_eta(&self) -> Vec<f64> {
        let m = self.posterior_mean_eta();
        let n = self.draws.len() as f64;
        (0..m.len())
            .map(|j| {
                (self.draws.iter().map(|d| (d.eta[j] - m[j]).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt()
            })
            .collect()
    }
}

/// Posterior-draw average of `beta0 + (1 + beta1) f(x; eta)`; `x` physical.
pub fn predict_mean_model(fit: &CalibrationFit, x: &[f64]) -> f64 {
    let n = fit.draws.len() as f64;
    fit.draws
        .iter()
        .map(|d| d.beta0 + (1.0 + d.beta1) * fit.model.eval_raw(x, &d.eta))
        .sum::<f64>()
        / n
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscrepancyConfig {
    /// Noise variance of the residuals. Defaults to the pure-error variance
    /// of replicated locations, or the posterior mean of sigma2 without
    /// replicates.
    pub noise_variance: Option<f64>,
    /// Used when there are too few runs to estimate lengthscales.
    pub fallback_lengthscale: f64,
    pub gp: GpConfig,
}

impl Default for DiscrepancyConfig {
    fn default() -> Self {
        Self {
            noise_variance: None,
            fallback_lengthscale: 0.5,
            gp: GpConfig {
                mean: MeanMode::Zero,
                ..GpConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone)]
pub struct DiscrepancyFit {
    pub gp: GpSurrogate,
    /// `y_i - fhat(x_i)` at the data inputs.
    pub residuals: Vec<f64>,
    pub noise_variance: f64,
}

/// Pooled within-location variance, if any location is replicated.
pub fn pure_error_variance(data: &ObsData) -> Option<f64> {
    let mut seen = vec![false; data.len()];
    let (mut ss, mut dof) = (0.0, 0usize);
    for i in 0..data.len() {
        if seen[i] {
            continue;
        }
        let members: Vec<usize> = (i..data.len()).filter(|&j| data.x[j] == data.x[i]).collect();
        for &j in &members {
            seen[j] = true;
        }
        if members.len() > 1 {
            let m = members.iter().map(|&j| data.y[j]).sum::<f64>() / members.len() as f64;
            ss += members.iter().map(|&j| (data.y[j] - m).powi(2)).sum::<f64>();
            dof += members.len() - 1;
        }
    }
    (dof > 0).then(|| ss / dof as f64)
}

/// Fits the zero-mean discrepancy GP to the residuals of the mean model.
pub fn fit_discrepancy(fit: &CalibrationFit, data: &ObsData, cfg: &DiscrepancyConfig) -> Result<CalibrationFit> {
    data.validate(&fit.model)?;
    if data.is_empty() {
        return Err(Error::Data("no observations".into()));
    }
    let residuals: Vec<f64> = data
        .x
        .iter()
        .zip(&data.y)
        .map(|(x, y)| y - predict_mean_model(fit, x))
        .collect();
    let noise = match cfg.noise_variance {
        Some(v) if v >= 0.0 => v,
        Some(v) => return Err(Error::InvalidArgument(format!("noise variance must be >= 0, got {v}"))),
        None => pure_error_variance(data)
            .unwrap_or_else(|| fit.draws.iter().map(|d| d.sigma2).sum::<f64>() / fit.draws.len() as f64),
    };
    let inputs: Vec<Vec<f64>> = data.x.iter().map(|x| fit.model.to_unit(x)).collect();
    let p = fit.model.p();
    let mut gp_cfg = cfg.gp.clone();
    gp_cfg.noise_variance = (noise > 0.0).then_some(noise);
    if gp_cfg.lengthscales.is_none() && inputs.len() < p + 2 {
        gp_cfg.lengthscales = Some(vec![cfg.fallback_lengthscale; p]);
    }
    let gp = fit_gp(&inputs, &residuals, &gp_cfg)?;
    let mut out = fit.clone();
    out.discrepancy = Some(DiscrepancyFit {
        gp,
        residuals,
        noise_variance: noise,
    });
    Ok(out)
}

/// `fhat(x) + deltahat(x)`; `x` physical. Without a discrepancy fit this is
/// the mean model alone.
pub fn predict_calibrated(fit: &CalibrationFit, x: &[f64]) -> f64 {
    let base = predict_mean_model(fit, x);
    match &fit.discrepancy {
        Some(d) => base + d.gp.posterior_mean(&fit.model.to_unit(x)),
        None => base,
    }
}
