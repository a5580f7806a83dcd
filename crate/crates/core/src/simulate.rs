//! Simulated physical experiments and the RMSPE comparison of designs.
//!
//! Truth is `y(x) = f(x; eta) + delta0(x) + e` with `delta0` one draw of a
//! zero-mean GP with variance `tau2` and squared-exponential correlation.

use std::collections::BTreeMap;

use nalgebra::DVector;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::calibrate::{fit_discrepancy, predict_calibrated, run_mcmc, DiscrepancyConfig, McmcConfig, ObsData};
use crate::design::{Design, Role};
use crate::error::{Error, Result};
use crate::linalg::cholesky_escalating;
use crate::model::ComputerModel;
use crate::par;
use crate::pipeline::{robust_design_bayes, robust_design_local, DesignRequest};
use crate::reduce::PriorSpec;
use crate::rng::{derive_seed, rng_from_seed, stream};
use crate::sobol::sobol_test_set;

pub const DEFAULT_LENGTHSCALE: f64 = 0.25;
pub const DEFAULT_ANCHORS: usize = 256;

/// One realization of the discrepancy over `[0,1]^dims`.
#[derive(Debug, Clone)]
pub struct DiscrepancyField {
    pub tau2: f64,
    pub theta: Vec<f64>,
    pub seed: u64,
    anchors: Vec<Vec<f64>>,
    values: Vec<f64>,
    jitter: f64,
    beta: DVector<f64>,
}

fn se_corr(u: &[f64], v: &[f64], theta: &[f64]) -> f64 {
    let s: f64 = u
        .iter()
        .zip(v)
        .zip(theta)
        .map(|((a, b), t)| ((a - b) / t).powi(2))
        .sum();
    (-s).exp()
}

impl DiscrepancyField {
    pub fn zero(dims: usize) -> Self {
        Self {
            tau2: 0.0,
            theta: vec![DEFAULT_LENGTHSCALE; dims],
            seed: 0,
            anchors: vec![],
            values: vec![],
            jitter: 0.0,
            beta: DVector::zeros(0),
        }
    }

    pub fn dims(&self) -> usize {
        self.theta.len()
    }

    pub fn anchors(&self) -> &[Vec<f64>] {
        &self.anchors
    }

    pub fn anchor_values(&self) -> &[f64] {
        &self.values
    }

    /// `delta0(u)` at a unit-scaled input.
    pub fn eval(&self, u: &[f64]) -> f64 {
        if self.tau2 == 0.0 {
            return 0.0;
        }
        self.anchors
            .iter()
            .zip(self.beta.iter())
            .map(|(a, b)| {
                let mut c = self.tau2 * se_corr(u, a, &self.theta);
                if u == a.as_slice() {
                    c += self.jitter;
                }
                c * b
            })
            .sum()
    }
}

/// Discrepancy field with isotropic lengthscale and the default anchor set.
pub fn sample_discrepancy(tau2: f64, theta: f64, dims: usize, seed: u64) -> Result<DiscrepancyField> {
    sample_discrepancy_with(tau2, &vec![theta; dims], DEFAULT_ANCHORS, seed)
}

pub fn sample_discrepancy_with(tau2: f64, theta: &[f64], anchors: usize, seed: u64) -> Result<DiscrepancyField> {
    if !(tau2 >= 0.0 && tau2.is_finite()) {
        return Err(Error::InvalidArgument(format!("tau2 must be >= 0, got {tau2}")));
    }
    if theta.is_empty() || theta.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
        return Err(Error::InvalidArgument("discrepancy lengthscales must be positive".into()));
    }
    if tau2 == 0.0 {
        let mut f = DiscrepancyField::zero(theta.len());
        f.theta = theta.to_vec();
        f.seed = seed;
        return Ok(f);
    }
    let pts = sobol_test_set(theta.len(), anchors.max(1), 0)?;
    let k = pts.len();
    let mut cov = nalgebra::DMatrix::zeros(k, k);
    for i in 0..k {
        for j in 0..=i {
            let v = tau2 * se_corr(&pts[i], &pts[j], theta);
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    let (chol, rel) = cholesky_escalating(&cov, tau2, 1e-10, 1e-2)?;
    let mut rng = rng_from_seed(seed);
    let z = DVector::from_iterator(k, (0..k).map(|_| rng.sample::<f64, _>(StandardNormal)));
    let l = chol.l();
    let values: Vec<f64> = (&l * &z).iter().copied().collect();
    let beta = l
        .transpose()
        .solve_upper_triangular(&z)
        .ok_or(Error::Factorization { jitter: rel })?;
    Ok(DiscrepancyField {
        tau2,
        theta: theta.to_vec(),
        seed,
        anchors: pts,
        values,
        jitter: rel * tau2,
        beta,
    })
}

fn x_key(x: &[f64]) -> u64 {
    x.iter().fold(0x243f_6a88_85a3_08d3, |h, v| derive_seed(h, v.to_bits()))
}

/// One simulated observation at physical input `x`. The noise depends only
/// on `(seed, x)`, so designs that share a location share its noise.
pub fn simulate_physical(
    model: &ComputerModel,
    eta_true: &[f64],
    field: &DiscrepancyField,
    noise_sd: f64,
    x: &[f64],
    seed: u64,
) -> Result<f64> {
    if !(noise_sd >= 0.0 && noise_sd.is_finite()) {
        return Err(Error::InvalidArgument(format!("noise sd must be >= 0, got {noise_sd}")));
    }
    let f = model.evaluate(x, eta_true)?;
    let delta = field.eval(&model.to_unit(x));
    let e = if noise_sd > 0.0 {
        let mut rng = rng_from_seed(derive_seed(seed, x_key(x)));
        noise_sd * rng.sample::<f64, _>(StandardNormal)
    } else {
        0.0
    };
    Ok(f + delta + e)
}

/// Simulated outputs for every run of `design`; the k-th replicate of a
/// location uses noise stream k.
pub fn simulate_design(
    model: &ComputerModel,
    eta_true: &[f64],
    field: &DiscrepancyField,
    noise_sd: f64,
    design: &Design,
    seed: u64,
) -> Result<ObsData> {
    let mut seen: BTreeMap<Vec<u64>, u64> = BTreeMap::new();
    let mut xs = Vec::with_capacity(design.len());
    let mut ys = Vec::with_capacity(design.len());
    for pt in &design.points {
        let x = model.to_physical(&pt.x);
        let k = seen.entry(pt.x.iter().map(|v| v.to_bits()).collect()).or_insert(0);
        ys.push(simulate_physical(model, eta_true, field, noise_sd, &x, derive_seed(seed, *k))?);
        *k += 1;
        xs.push(x);
    }
    ObsData::new(xs, ys)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    /// `2^p` corners, each run twice.
    FullFactorial2kR2,
    /// `2^(5-2)` with generators `D = AB`, `E = AC`, each run twice.
    Fractional2_5Minus2R2,
    /// Every run spent on the D-optimal points.
    PureComputerModel,
}

impl BaselineKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BaselineKind::FullFactorial2kR2 => "full_factorial_2k_r2",
            BaselineKind::Fractional2_5Minus2R2 => "fractional_2_5_minus_2_r2",
            BaselineKind::PureComputerModel => "pure_computer_model",
        }
    }
}

/// What a baseline needs to know about the problem.
#[derive(Debug, Clone)]
pub struct BaselineContext<'a> {
    pub model: &'a ComputerModel,
    pub n: usize,
    /// Point estimate used by the local regime.
    pub eta0: Option<Vec<f64>>,
    /// Prior used by the pooled regime when no point estimate is given.
    pub prior: Option<&'a PriorSpec>,
    pub request: DesignRequest,
}

fn corners_twice(rows: Vec<Vec<f64>>) -> Design {
    let p = rows.first().map_or(0, Vec::len);
    let mut d = Design::new(p);
    for x in rows {
        let g = d.push(x.clone(), Role::Spacefill);
        d.push_in_group(x, Role::Spacefill, g);
    }
    d
}

pub fn baseline_design(kind: BaselineKind, ctx: &BaselineContext) -> Result<Design> {
    let p = ctx.model.p();
    match kind {
        BaselineKind::FullFactorial2kR2 => {
            let need = 2usize.pow(p as u32) * 2;
            if ctx.n != need {
                return Err(Error::BudgetInfeasible { n: ctx.n, required: need });
            }
            let rows = (0..1usize << p)
                .map(|i| (0..p).map(|j| ((i >> (p - 1 - j)) & 1) as f64).collect())
                .collect();
            Ok(corners_twice(rows))
        }
        BaselineKind::Fractional2_5Minus2R2 => {
            if p != 5 {
                return Err(Error::Dimension { expected: 5, got: p });
            }
            if ctx.n != 16 {
                return Err(Error::BudgetInfeasible { n: ctx.n, required: 16 });
            }
            let rows = (0..8usize)
                .map(|i| {
                    let s = |b: usize| if (i >> b) & 1 == 1 { 1.0 } else { -1.0 };
                    let (a, b, c) = (s(2), s(1), s(0));
                    [a, b, c, a * b, a * c].iter().map(|v| (v + 1.0) / 2.0).collect()
                })
                .collect();
            Ok(corners_twice(rows))
        }
        BaselineKind::PureComputerModel => {
            let q = ctx.model.q();
            let req = DesignRequest {
                n: ctx.n,
                r: ctx.n / q,
                include_location_scale: false,
                ..ctx.request.clone()
            };
            let out = match (&ctx.eta0, ctx.prior) {
                (Some(eta0), _) => robust_design_local(ctx.model, eta0, &req)?,
                (None, Some(prior)) => robust_design_bayes(ctx.model, prior, &req)?,
                (None, None) => {
                    return Err(Error::InvalidArgument(
                        "pure computer model design needs eta0 or a prior".into(),
                    ))
                }
            };
            Ok(out.design)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyConfig {
    pub eta_true: Vec<f64>,
    pub tau2_grid: Vec<f64>,
    pub replications: usize,
    pub lengthscale: f64,
    pub anchors: usize,
    pub noise_sd: f64,
    pub test_size: usize,
    pub seed: u64,
    /// Keep per-test-point absolute errors in the cell records.
    pub keep_abs_errors: bool,
    pub mcmc: McmcConfig,
    pub discrepancy: DiscrepancyConfig,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            eta_true: vec![],
            tau2_grid: vec![0.0, 0.01, 0.05, 0.1, 0.2, 0.3, 0.4, 0.5],
            replications: 20,
            lengthscale: DEFAULT_LENGTHSCALE,
            anchors: DEFAULT_ANCHORS,
            noise_sd: 0.05,
            test_size: 500,
            seed: 0,
            keep_abs_errors: false,
            mcmc: McmcConfig::default(),
            discrepancy: DiscrepancyConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub design: String,
    pub tau2: f64,
    pub replication: usize,
    pub rmspe: Option<f64>,
    /// RMSPE over the reference design's RMSPE in the same cell.
    pub ratio: Option<f64>,
    pub error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub abs_errors: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub design: String,
    pub tau2: f64,
    pub median_ratio: Option<f64>,
    pub median_rmspe: Option<f64>,
    pub valid: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    /// Reference design (ratios are relative to it).
    pub reference: String,
    pub designs: Vec<String>,
    pub tau2_grid: Vec<f64>,
    pub replications: usize,
    pub seed: u64,
    pub test_set: String,
    pub cells: Vec<CellRecord>,
    pub summary: Vec<SummaryRow>,
}

impl ComparisonReport {
    pub fn median_ratio(&self, design: &str, tau2: f64) -> Option<f64> {
        self.summary
            .iter()
            .find(|r| r.design == design && r.tau2 == tau2)
            .and_then(|r| r.median_ratio)
    }

    /// Fraction of (cell, design) records with a valid RMSPE.
    pub fn valid_fraction(&self) -> f64 {
        if self.cells.is_empty() {
            return 0.0;
        }
        self.cells.iter().filter(|c| c.rmspe.is_some()).count() as f64 / self.cells.len() as f64
    }
}

pub fn rmspe(pred: &[f64], truth: &[f64]) -> f64 {
    let n = pred.len() as f64;
    (pred.iter().zip(truth).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n).sqrt()
}

pub fn median(v: &mut [f64]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

fn calibrate_and_score(
    model: &ComputerModel,
    prior: &PriorSpec,
    data: &ObsData,
    test_x: &[Vec<f64>],
    test_y: &[f64],
    cfg: &StudyConfig,
    mcmc_seed: u64,
) -> Result<(f64, Vec<f64>)> {
    let mcmc = McmcConfig {
        seed: mcmc_seed,
        ..cfg.mcmc.clone()
    };
    let fit = run_mcmc(model, data, prior, &mcmc)?;
    let mut disc = cfg.discrepancy.clone();
    disc.gp.seed = derive_seed(mcmc_seed, stream::SURROGATE);
    let fit = fit_discrepancy(&fit, data, &disc)?;
    let pred: Vec<f64> = test_x.iter().map(|x| predict_calibrated(&fit, x)).collect();
    if pred.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("calibrated prediction".into()));
    }
    let abs: Vec<f64> = pred.iter().zip(test_y).map(|(a, b)| (a - b).abs()).collect();
    Ok((rmspe(&pred, test_y), abs))
}

/// Runs every `(tau2, replication)` cell: a fresh discrepancy field, data on
/// each design, two-step calibration, and RMSPE on a shared Sobol test set.
/// The first design is the reference for the ratios. Cell failures are
/// recorded and the study continues.
pub fn rmspe_study(
    designs: &[(String, Design)],
    model: &ComputerModel,
    prior: &PriorSpec,
    cfg: &StudyConfig,
) -> Result<ComparisonReport> {
    if designs.is_empty() {
        return Err(Error::InvalidArgument("the study needs at least one design".into()));
    }
    if cfg.eta_true.len() != model.q() {
        return Err(Error::Dimension {
            expected: model.q(),
            got: cfg.eta_true.len(),
        });
    }
    if cfg.replications == 0 || cfg.tau2_grid.is_empty() {
        return Err(Error::InvalidArgument("the study needs replications >= 1 and a non-empty tau2 grid".into()));
    }
    for (name, d) in designs {
        if d.p != model.p() || !d.in_unit_cube() {
            return Err(Error::InvalidArgument(format!("design {name} does not match the model inputs")));
        }
    }
    let test_u = sobol_test_set(model.p(), cfg.test_size, 0)?;
    let test_x: Vec<Vec<f64>> = test_u.iter().map(|u| model.to_physical(u)).collect();
    let study_seed = derive_seed(cfg.seed, stream::STUDY);
    let n_cells = cfg.tau2_grid.len() * cfg.replications;

    let per_cell: Vec<Vec<CellRecord>> = par::map_range(n_cells, |c| {
        let (ti, rep) = (c / cfg.replications, c % cfg.replications);
        let tau2 = cfg.tau2_grid[ti];
        let cell_seed = derive_seed(study_seed, c as u64);
        let record = |name: &str, res: Result<(f64, Vec<f64>)>| match res {
            Ok((r, abs)) => CellRecord {
                design: name.to_string(),
                tau2,
                replication: rep,
                rmspe: Some(r),
                ratio: None,
                error: None,
                abs_errors: cfg.keep_abs_errors.then_some(abs),
            },
            Err(e) => CellRecord {
                design: name.to_string(),
                tau2,
                replication: rep,
                rmspe: None,
                ratio: None,
                error: Some(e.to_string()),
                abs_errors: None,
            },
        };
        let field = sample_discrepancy_with(
            tau2,
            &vec![cfg.lengthscale; model.p()],
            cfg.anchors,
            derive_seed(cell_seed, stream::FIELD),
        );
        let field = match field {
            Ok(f) => f,
            Err(e) => return designs.iter().map(|(n, _)| record(n, Err(e.clone()))).collect(),
        };
        let noise_seed = derive_seed(cell_seed, stream::NOISE);
        // test outputs use a noise stream no design run can share
        let test_seed = derive_seed(noise_seed, u64::MAX);
        let test_y: Result<Vec<f64>> = test_x
            .iter()
            .map(|x| simulate_physical(model, &cfg.eta_true, &field, cfg.noise_sd, x, test_seed))
            .collect();
        let test_y = match test_y {
            Ok(t) => t,
            Err(e) => return designs.iter().map(|(n, _)| record(n, Err(e.clone()))).collect(),
        };
        let mut recs: Vec<CellRecord> = designs
            .iter()
            .map(|(name, d)| {
                let res = simulate_design(model, &cfg.eta_true, &field, cfg.noise_sd, d, noise_seed).and_then(|data| {
                    calibrate_and_score(
                        model,
                        prior,
                        &data,
                        &test_x,
                        &test_y,
                        cfg,
                        derive_seed(cell_seed, stream::MCMC),
                    )
                });
                record(name, res)
            })
            .collect();
        if let Some(base) = recs[0].rmspe {
            for r in &mut recs {
                r.ratio = r.rmspe.map(|v| if v == base { 1.0 } else { v / base });
            }
        }
        recs
    });
    let cells: Vec<CellRecord> = per_cell.into_iter().flatten().collect();

    let mut summary = vec![];
    for (name, _) in designs {
        for &tau2 in &cfg.tau2_grid {
            let sel: Vec<&CellRecord> = cells.iter().filter(|c| &c.design == name && c.tau2 == tau2).collect();
            let mut ratios: Vec<f64> = sel.iter().filter_map(|c| c.ratio).collect();
            let mut rms: Vec<f64> = sel.iter().filter_map(|c| c.rmspe).collect();
            summary.push(SummaryRow {
                design: name.clone(),
                tau2,
                median_ratio: median(&mut ratios),
                median_rmspe: median(&mut rms),
                valid: rms.len(),
            });
        }
    }
    Ok(ComparisonReport {
        reference: designs[0].0.clone(),
        designs: designs.iter().map(|d| d.0.clone()).collect(),
        tau2_grid: cfg.tau2_grid.clone(),
        replications: cfg.replications,
        seed: cfg.seed,
        test_set: format!("sobol(dims={}, count={}, skip origin)", model.p(), cfg.test_size),
        cells,
        summary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_field() {
        let f = sample_discrepancy(0.0, 0.25, 2, 1).unwrap();
        assert_eq!(f.eval(&[0.3, 0.3]), 0.0);
    }

    #[test]
    fn field_exact_at_anchors() {
        let f = sample_discrepancy_with(0.3, &[0.25, 0.25], 64, 5).unwrap();
        for (a, v) in f.anchors().iter().zip(f.anchor_values()) {
            assert!((f.eval(a) - v).abs() < 1e-8);
        }
    }

    #[test]
    fn noise_free_truth() {
        let m = ComputerModel::toy();
        let f = DiscrepancyField::zero(2);
        let y = simulate_physical(&m, &[0.5], &f, 0.0, &[0.2, 0.7], 3).unwrap();
        assert_eq!(y, m.evaluate(&[0.2, 0.7], &[0.5]).unwrap());
    }

    #[test]
    fn replicates_get_distinct_noise() {
        let m = ComputerModel::toy();
        let mut d = Design::new(2);
        let g = d.push(vec![0.5, 1.0], Role::Dopt);
        d.push_in_group(vec![0.5, 1.0], Role::Dopt, g);
        let data = simulate_design(&m, &[0.5], &DiscrepancyField::zero(2), 0.05, &d, 9).unwrap();
        assert_ne!(data.y[0], data.y[1]);
    }

    #[test]
    fn factorial_baselines() {
        let m = ComputerModel::toy();
        let ctx = BaselineContext {
            model: &m,
            n: 8,
            eta0: Some(vec![0.5]),
            prior: None,
            request: DesignRequest::default(),
        };
        let d = baseline_design(BaselineKind::FullFactorial2kR2, &ctx).unwrap();
        assert_eq!(d.len(), 8);
        let mut corners = d.locations();
        corners.dedup();
        assert_eq!(corners, vec![vec![0.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0], vec![1.0, 1.0]]);
        let bad = BaselineContext { n: 6, ..ctx.clone() };
        assert!(baseline_design(BaselineKind::FullFactorial2kR2, &bad).is_err());
        assert!(baseline_design(BaselineKind::Fractional2_5Minus2R2, &ctx).is_err());
    }

    #[test]
    fn median_even_odd() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&mut []), None);
    }
}
