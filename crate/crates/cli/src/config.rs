//! Run configuration: one TOML file per run. Every random stream is derived
//! from the master `seed` with `derive_seed(seed, stream)` unless the
//! `[seeds]` table pins it.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use calidesign::calibrate::{DiscrepancyConfig, McmcConfig};
use calidesign::doe::SearchConfig;
use calidesign::model::{parse_model, Signature, AGM_LINE_EXPRESSION};
use calidesign::pipeline::DesignRequest;
use calidesign::reduce::{Marginal, PriorSpec};
use calidesign::rng::{derive_seed, stream};
use calidesign::simulate::{BaselineKind, StudyConfig};
use calidesign::spacefill::Criterion;
use calidesign::surrogate::GpConfig;
use calidesign::{ComputerModel, Interval};
use serde::Deserialize;

use crate::error::{CliError, CliResult};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    seed: Option<u64>,
    out: Option<PathBuf>,
    model: Option<RawModel>,
    prior: Option<Vec<Marginal>>,
    design: Option<RawDesign>,
    surrogate: Option<RawSurrogate>,
    calibrate: Option<RawCalibrate>,
    study: Option<RawStudy>,
    seeds: Option<RawSeeds>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModel {
    builtin: Option<String>,
    expression: Option<String>,
    name: Option<String>,
    x_bounds: Option<Vec<Vec<f64>>>,
    eta_bounds: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    constants: BTreeMap<String, f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDesign {
    regime: Option<String>,
    n: Option<i64>,
    r: Option<i64>,
    m: Option<i64>,
    eta0: Option<Vec<f64>>,
    rho: Option<f64>,
    include_location_scale: Option<bool>,
    /// Physical units, one list per input.
    levels: Option<Vec<Vec<f64>>>,
    criterion: Option<String>,
    anchors: Option<i64>,
    search: Option<SearchConfig>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSurrogate {
    training: Option<PathBuf>,
    gp: Option<GpConfig>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCalibrate {
    data: Option<PathBuf>,
    mcmc: Option<McmcConfig>,
    discrepancy: Option<DiscrepancyConfig>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawStudy {
    eta_true: Option<Vec<f64>>,
    tau2_grid: Option<Vec<f64>>,
    replications: Option<i64>,
    baselines: Option<Vec<String>>,
    noise_sd: Option<f64>,
    lengthscale: Option<f64>,
    test_size: Option<i64>,
    anchors: Option<i64>,
    keep_abs_errors: Option<bool>,
    mcmc: Option<McmcConfig>,
    discrepancy: Option<DiscrepancyConfig>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSeeds {
    design: Option<u64>,
    mcmc: Option<u64>,
    study: Option<u64>,
    surrogate: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    Local,
    Bayes,
    Surrogate,
}

impl Regime {
    pub fn as_str(self) -> &'static str {
        match self {
            Regime::Local => "local",
            Regime::Bayes => "bayes",
            Regime::Surrogate => "surrogate",
        }
    }
}

#[derive(Debug, Clone)]
pub struct DesignSpec {
    pub regime: Regime,
    pub eta0: Option<Vec<f64>>,
    pub request: DesignRequest,
}

#[derive(Debug, Clone)]
pub struct SurrogateSpec {
    pub training: PathBuf,
    pub gp: GpConfig,
}

#[derive(Debug, Clone)]
pub struct CalibrateSpec {
    pub data: Option<PathBuf>,
    pub mcmc: McmcConfig,
    pub discrepancy: DiscrepancyConfig,
}

#[derive(Debug, Clone)]
pub struct StudySpec {
    pub baselines: Vec<BaselineKind>,
    pub config: StudyConfig,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct Seeds {
    pub master: u64,
    pub design: u64,
    pub mcmc: u64,
    pub study: u64,
    pub surrogate: u64,
}

/// A validated run configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub out: Option<PathBuf>,
    pub model: Option<ComputerModel>,
    pub x_bounds: Vec<Interval>,
    pub eta_bounds: Vec<Interval>,
    pub prior: Option<PriorSpec>,
    pub design: Option<DesignSpec>,
    pub surrogate: Option<SurrogateSpec>,
    pub calibrate: Option<CalibrateSpec>,
    pub study: Option<StudySpec>,
    pub seeds: Seeds,
}

fn count(field: &str, v: Option<i64>, default: usize, min: usize) -> CliResult<usize> {
    match v {
        None => Ok(default),
        Some(x) if x >= min as i64 => Ok(x as usize),
        Some(x) => Err(CliError::config(field, format!("an integer >= {min}"), x)),
    }
}

fn bounds(field: &str, raw: &[Vec<f64>]) -> CliResult<Vec<Interval>> {
    if raw.is_empty() {
        return Err(CliError::config(field, "a non-empty list of [lo, hi] pairs", "[]"));
    }
    raw.iter()
        .enumerate()
        .map(|(i, b)| match b.as_slice() {
            [lo, hi] if lo.is_finite() && hi.is_finite() && lo < hi => Ok(Interval::new(*lo, *hi)),
            _ => Err(CliError::config(format!("{field}[{i}]"), "[lo, hi] with lo < hi", format!("{b:?}"))),
        })
        .collect()
}

/// The model block. `model` is `None` when only bounds are given, which is
/// allowed for surrogate runs.
fn model_from(raw: &RawModel) -> CliResult<(Option<ComputerModel>, Vec<Interval>, Vec<Interval>)> {
    let x_bounds = raw.x_bounds.as_deref().map(|b| bounds("model.x_bounds", b)).transpose()?;
    let eta_bounds = raw.eta_bounds.as_deref().map(|b| bounds("model.eta_bounds", b)).transpose()?;
    let expression = match (&raw.builtin, &raw.expression) {
        (Some(_), Some(_)) => {
            return Err(CliError::config("model", "at most one of `builtin` or `expression`", "both"));
        }
        (None, None) => None,
        (Some(b), None) => match b.as_str() {
            "toy" | "linear" => {
                let mut m = ComputerModel::builtin(b).expect("known builtin");
                if let Some(xb) = &x_bounds {
                    if xb.len() != m.p() || xb.iter().any(|i| *i != Interval::unit()) {
                        return Err(CliError::config(
                            "model.x_bounds",
                            format!("{} unit intervals for builtin `{b}`", m.p()),
                            format!("{xb:?}"),
                        ));
                    }
                }
                if let Some(eb) = eta_bounds {
                    if eb.len() != m.q() {
                        return Err(CliError::config("model.eta_bounds", format!("{} pairs", m.q()), eb.len()));
                    }
                    m = m.with_eta_bounds(eb)?;
                }
                let (xb, eb) = (m.x_bounds().to_vec(), m.eta_bounds().to_vec());
                return Ok((Some(m), xb, eb));
            }
            "agm_line" => Some(AGM_LINE_EXPRESSION.to_string()),
            other => {
                return Err(CliError::config("model.builtin", "one of toy, linear, agm_line", other));
            }
        },
        (None, Some(e)) => Some(e.clone()),
    };
    let x_bounds = x_bounds.ok_or_else(|| CliError::config("model.x_bounds", "a list of [lo, hi] pairs", "nothing"))?;
    let eta_bounds =
        eta_bounds.ok_or_else(|| CliError::config("model.eta_bounds", "a list of [lo, hi] pairs", "nothing"))?;
    let Some(expression) = expression else {
        return Ok((None, x_bounds, eta_bounds));
    };
    let sig = Signature {
        name: raw.name.clone().or_else(|| raw.builtin.clone()).unwrap_or_else(|| "user".into()),
        x_bounds: x_bounds.clone(),
        eta_bounds: eta_bounds.clone(),
        constants: raw.constants.clone(),
    };
    let model = parse_model(&expression, &sig).map_err(|e| CliError::config("model.expression", "a valid model", e))?;
    Ok((Some(model), x_bounds, eta_bounds))
}

fn prior_from(raw: &[Marginal], q: usize) -> CliResult<PriorSpec> {
    if raw.len() != q {
        return Err(CliError::config("prior", format!("{q} entries (one per calibration parameter)"), raw.len()));
    }
    for (i, m) in raw.iter().enumerate() {
        match *m {
            Marginal::Normal { mean, sd } => {
                if !mean.is_finite() {
                    return Err(CliError::config(format!("prior[{i}].mean"), "a finite number", mean));
                }
                if !(sd > 0.0 && sd.is_finite()) {
                    return Err(CliError::config(format!("prior[{i}].sd"), "a positive number", sd));
                }
            }
            Marginal::Uniform { lo, hi } => {
                if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                    return Err(CliError::config(format!("prior[{i}]"), "lo < hi", format!("[{lo}, {hi}]")));
                }
            }
        }
    }
    Ok(PriorSpec::new(raw.to_vec())?)
}

fn eta_vector(field: &str, v: &[f64], eta_bounds: &[Interval]) -> CliResult<Vec<f64>> {
    if v.len() != eta_bounds.len() {
        return Err(CliError::config(field, format!("{} values", eta_bounds.len()), v.len()));
    }
    for (i, (x, b)) in v.iter().zip(eta_bounds).enumerate() {
        if !b.contains(*x) {
            return Err(CliError::config(
                format!("{field}[{i}]"),
                format!("a value in [{}, {}]", b.lo, b.hi),
                x,
            ));
        }
    }
    Ok(v.to_vec())
}

fn resolve(base: &Path, p: &Path, field: &str) -> CliResult<PathBuf> {
    let full = if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
    if !full.is_file() {
        return Err(CliError::config(field, "an existing file", full.display()));
    }
    Ok(full)
}

fn check_mcmc(field: &str, m: &McmcConfig) -> CliResult<()> {
    if m.iterations <= m.burn_in {
        return Err(CliError::config(
            format!("{field}.iterations"),
            format!("more than burn_in = {}", m.burn_in),
            m.iterations,
        ));
    }
    if m.thin == 0 {
        return Err(CliError::config(format!("{field}.thin"), "an integer >= 1", 0));
    }
    if m.chains == 0 {
        return Err(CliError::config(format!("{field}.chains"), "an integer >= 1", 0));
    }
    Ok(())
}

impl RunConfig {
    pub fn load(path: &Path, seed_override: Option<u64>) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        Self::parse(&text, &base, seed_override)
    }

    pub fn parse(text: &str, base: &Path, seed_override: Option<u64>) -> CliResult<Self> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| CliError::Parse(e.to_string()))?;
        let master = match (seed_override, raw.seed) {
            (Some(s), _) | (None, Some(s)) => s,
            (None, None) => return Err(CliError::config("seed", "an unsigned 64-bit master seed", "nothing")),
        };
        let pinned = raw.seeds.unwrap_or_default();
        let seeds = Seeds {
            master,
            design: pinned.design.unwrap_or_else(|| derive_seed(master, stream::DESIGN)),
            mcmc: pinned.mcmc.unwrap_or_else(|| derive_seed(master, stream::MCMC)),
            // the study splits its own cells from this seed
            study: pinned.study.unwrap_or(master),
            surrogate: pinned.surrogate.unwrap_or_else(|| derive_seed(master, stream::SURROGATE)),
        };
        let raw_model = raw.model.ok_or_else(|| CliError::config("model", "a [model] table", "nothing"))?;
        let (model, x_bounds, eta_bounds) = model_from(&raw_model)?;
        let (p, q) = (x_bounds.len(), eta_bounds.len());
        let prior = raw.prior.as_deref().map(|pr| prior_from(pr, q)).transpose()?;

        let surrogate = match raw.surrogate {
            None => None,
            Some(s) => {
                let training = s
                    .training
                    .ok_or_else(|| CliError::config("surrogate.training", "a CSV file path", "nothing"))?;
                let mut gp = s.gp.unwrap_or_default();
                gp.seed = seeds.surrogate;
                Some(SurrogateSpec {
                    training: resolve(base, &training, "surrogate.training")?,
                    gp,
                })
            }
        };

        let design = match raw.design {
            None => None,
            Some(d) => {
                let regime = match d.regime.as_deref() {
                    Some("local") => Regime::Local,
                    Some("bayes") => Regime::Bayes,
                    Some("surrogate") => Regime::Surrogate,
                    Some(other) => return Err(CliError::config("design.regime", "one of local, bayes, surrogate", other)),
                    None => return Err(CliError::config("design.regime", "one of local, bayes, surrogate", "nothing")),
                };
                let defaults = DesignRequest::default();
                let n = count("design.n", d.n, 0, 1)?;
                if d.n.is_none() {
                    return Err(CliError::config("design.n", "a run budget >= 1", "nothing"));
                }
                let r = count("design.r", d.r, defaults.r, 0)?;
                let m = count("design.m", d.m, defaults.m, 1)?;
                let anchors = count("design.anchors", d.anchors, defaults.anchors, 1)?;
                let rho = d.rho.unwrap_or(defaults.rho);
                if !(rho >= 0.0 && rho.is_finite()) {
                    return Err(CliError::config("design.rho", "a number >= 0", rho));
                }
                let criterion = match d.criterion.as_deref() {
                    None | Some("maxpro") => Criterion::Maxpro,
                    Some("maximin") => Criterion::Maximin,
                    Some(other) => return Err(CliError::config("design.criterion", "maxpro or maximin", other)),
                };
                let levels = match d.levels {
                    None => None,
                    Some(lv) => {
                        if lv.len() != p {
                            return Err(CliError::config("design.levels", format!("{} lists", p), lv.len()));
                        }
                        let mut out = vec![];
                        for (i, (l, b)) in lv.iter().zip(&x_bounds).enumerate() {
                            if l.len() < 2 || l.iter().any(|v| !b.contains(*v)) {
                                return Err(CliError::config(
                                    format!("design.levels[{i}]"),
                                    format!("at least two values in [{}, {}]", b.lo, b.hi),
                                    format!("{l:?}"),
                                ));
                            }
                            let mut u: Vec<f64> = l.iter().map(|v| b.to_unit(*v).clamp(0.0, 1.0)).collect();
                            u.sort_by(f64::total_cmp);
                            u.dedup();
                            out.push(u);
                        }
                        Some(out)
                    }
                };
                let mut search = d.search.unwrap_or_default();
                search.seed = seeds.design;
                if search.multistarts == 0 {
                    return Err(CliError::config("design.search.multistarts", "an integer >= 1", 0));
                }
                if search.grid_levels < 2 {
                    return Err(CliError::config("design.search.grid_levels", "an integer >= 2", search.grid_levels));
                }
                let request = DesignRequest {
                    n,
                    r,
                    m,
                    include_location_scale: d.include_location_scale.unwrap_or(true),
                    levels,
                    rho,
                    criterion,
                    anchors,
                    search,
                };
                let eta0 = d.eta0.as_deref().map(|e| eta_vector("design.eta0", e, &eta_bounds)).transpose()?;
                match regime {
                    Regime::Local if eta0.is_none() => {
                        return Err(CliError::config("design.eta0", format!("{} values for the local regime", q), "nothing"));
                    }
                    Regime::Bayes | Regime::Surrogate if prior.is_none() => {
                        return Err(CliError::config("prior", format!("a prior for the {} regime", regime.as_str()), "nothing"));
                    }
                    Regime::Local | Regime::Bayes if model.is_none() => {
                        return Err(CliError::config(
                            "model",
                            format!("`builtin` or `expression` for the {} regime", regime.as_str()),
                            "bounds only",
                        ));
                    }
                    Regime::Surrogate if surrogate.is_none() => {
                        return Err(CliError::config("surrogate", "a [surrogate] table for the surrogate regime", "nothing"));
                    }
                    _ => {}
                }
                let required = request.required(q);
                if n < required {
                    return Err(CliError::Core(calidesign::Error::BudgetInfeasible { n, required }));
                }
                Some(DesignSpec { regime, eta0, request })
            }
        };

        let calibrate = match raw.calibrate {
            None => None,
            Some(c) => {
                let mut mcmc = c.mcmc.unwrap_or_default();
                mcmc.seed = seeds.mcmc;
                check_mcmc("calibrate.mcmc", &mcmc)?;
                let data = c.data.map(|d| resolve(base, &d, "calibrate.data")).transpose()?;
                Some(CalibrateSpec {
                    data,
                    mcmc,
                    discrepancy: c.discrepancy.unwrap_or_default(),
                })
            }
        };

        let study = match raw.study {
            None => None,
            Some(s) => {
                if model.is_none() {
                    return Err(CliError::config("model", "`builtin` or `expression` for a study", "bounds only"));
                }
                if prior.is_none() {
                    return Err(CliError::config("prior", "a prior for calibration in the study", "nothing"));
                }
                let defaults = StudyConfig::default();
                let eta_true = s
                    .eta_true
                    .as_deref()
                    .ok_or_else(|| CliError::config("study.eta_true", format!("{} values", q), "nothing"))
                    .and_then(|e| eta_vector("study.eta_true", e, &eta_bounds))?;
                let tau2_grid = s.tau2_grid.unwrap_or(defaults.tau2_grid);
                if tau2_grid.is_empty() {
                    return Err(CliError::config("study.tau2_grid", "a non-empty list", "[]"));
                }
                if let Some(t) = tau2_grid.iter().find(|t| !(**t >= 0.0 && t.is_finite())) {
                    return Err(CliError::config("study.tau2_grid", "values >= 0", t));
                }
                let noise_sd = s.noise_sd.unwrap_or(defaults.noise_sd);
                if !(noise_sd >= 0.0 && noise_sd.is_finite()) {
                    return Err(CliError::config("study.noise_sd", "a number >= 0", noise_sd));
                }
                let lengthscale = s.lengthscale.unwrap_or(defaults.lengthscale);
                if !(lengthscale > 0.0 && lengthscale.is_finite()) {
                    return Err(CliError::config("study.lengthscale", "a positive number", lengthscale));
                }
                let baselines = s
                    .baselines
                    .unwrap_or_else(|| vec!["pure_computer_model".into(), "full_factorial_2k_r2".into()])
                    .iter()
                    .map(|b| match b.as_str() {
                        "pure_computer_model" => Ok(BaselineKind::PureComputerModel),
                        "full_factorial_2k_r2" => Ok(BaselineKind::FullFactorial2kR2),
                        "fractional_2_5_minus_2_r2" => Ok(BaselineKind::Fractional2_5Minus2R2),
                        other => Err(CliError::config(
                            "study.baselines",
                            "pure_computer_model, full_factorial_2k_r2 or fractional_2_5_minus_2_r2",
                            other,
                        )),
                    })
                    .collect::<CliResult<Vec<_>>>()?;
                let mut mcmc = s.mcmc.unwrap_or_default();
                check_mcmc("study.mcmc", &mcmc)?;
                mcmc.seed = seeds.mcmc;
                let config = StudyConfig {
                    eta_true,
                    tau2_grid,
                    replications: count("study.replications", s.replications, defaults.replications, 1)?,
                    lengthscale,
                    anchors: count("study.anchors", s.anchors, defaults.anchors, 1)?,
                    noise_sd,
                    test_size: count("study.test_size", s.test_size, defaults.test_size, 1)?,
                    seed: seeds.study,
                    keep_abs_errors: s.keep_abs_errors.unwrap_or(false),
                    mcmc,
                    discrepancy: s.discrepancy.unwrap_or_default(),
                };
                Some(StudySpec { baselines, config })
            }
        };

        Ok(RunConfig {
            out: raw.out.map(|o| if o.is_absolute() { o } else { base.join(o) }),
            model,
            x_bounds,
            eta_bounds,
            prior,
            design,
            surrogate,
            calibrate,
            study,
            seeds,
        })
    }
}
