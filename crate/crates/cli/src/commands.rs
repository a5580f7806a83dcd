use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use calidesign::calibrate::{
    fit_discrepancy, predict_calibrated, predict_mean_model, run_mcmc, CalibrationFit, McmcConfig, ObsData,
};
use calidesign::io::{design_csv, draws_csv, read_observations, read_training, table_csv};
use calidesign::pipeline::{robust_design_bayes, robust_design_local, robust_design_surrogate, RobustDesign, SurrogateModel};
use calidesign::reduce::PriorSpec;
use calidesign::simulate::{baseline_design, rmspe_study, BaselineContext, BaselineKind};
use calidesign::surrogate::{fit_gp, GpConfig};
use calidesign::{ComputerModel, Design};
use serde_json::json;

use crate::config::{Regime, RunConfig};
use crate::error::{CliError, CliResult};

pub struct Context {
    pub config: RunConfig,
    pub out: PathBuf,
    pub verbose: bool,
}

impl Context {
    fn log(&self, msg: impl AsRef<str>) {
        if self.verbose {
            eprintln!("{}", msg.as_ref());
        }
    }

    fn write(&self, name: &str, contents: &str) -> CliResult<()> {
        let path = self.out.join(name);
        std::fs::write(&path, contents).map_err(|e| io_err(&path, e))?;
        self.log(format!("wrote {}", path.display()));
        Ok(())
    }

    fn write_json(&self, name: &str, value: &serde_json::Value) -> CliResult<()> {
        let mut text = serde_json::to_string_pretty(value).expect("json values serialize");
        text.push('\n');
        self.write(name, &text)
    }

    fn prior(&self, why: &str) -> CliResult<&PriorSpec> {
        self.config
            .prior
            .as_ref()
            .ok_or_else(|| CliError::config("prior", format!("a prior for {why}"), "nothing"))
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

fn read(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| io_err(path, e))
}

fn timing(ctx: &Context, command: &str, start: Instant) -> CliResult<()> {
    ctx.write_json(
        "timing.json",
        &json!({ "command": command, "seconds": start.elapsed().as_secs_f64() }),
    )
}

fn role_counts(design: &Design) -> BTreeMap<&'static str, usize> {
    let mut out = BTreeMap::new();
    for pt in &design.points {
        let key = if pt.role.is_extremum() { "EXTREMUM" } else { pt.role.as_str() };
        *out.entry(key).or_insert(0) += 1;
    }
    out
}

/// Fits the emulator from the configured training file, in unit coordinates.
fn surrogate(ctx: &Context) -> CliResult<SurrogateModel> {
    let cfg = &ctx.config;
    let spec = cfg
        .surrogate
        .as_ref()
        .ok_or_else(|| CliError::config("surrogate", "a [surrogate] table", "nothing"))?;
    let (p, q) = (cfg.x_bounds.len(), cfg.eta_bounds.len());
    let (inputs, outputs) = read_training(&read(&spec.training)?, p, q)?;
    let unit: Vec<Vec<f64>> = inputs
        .iter()
        .map(|row| {
            cfg.x_bounds
                .iter()
                .chain(&cfg.eta_bounds)
                .zip(row)
                .map(|(b, v)| b.to_unit(*v))
                .collect()
        })
        .collect();
    ctx.log(format!("fitting GP to {} training runs", unit.len()));
    let gp = fit_gp(&unit, &outputs, &spec.gp)?;
    Ok(SurrogateModel::new(gp, cfg.x_bounds.clone(), cfg.eta_bounds.clone())?)
}

/// The model to calibrate: the configured one, else the emulator mean.
fn calibration_model(ctx: &Context) -> CliResult<ComputerModel> {
    match &ctx.config.model {
        Some(m) => Ok(m.clone()),
        None => Ok(surrogate(ctx)?.mean_model()?),
    }
}

fn build_design(ctx: &Context) -> CliResult<RobustDesign> {
    let cfg = &ctx.config;
    let spec = cfg
        .design
        .as_ref()
        .ok_or_else(|| CliError::config("design", "a [design] table", "nothing"))?;
    ctx.log(format!("building {} design with n = {}", spec.regime.as_str(), spec.request.n));
    Ok(match spec.regime {
        Regime::Local => robust_design_local(
            cfg.model.as_ref().expect("validated"),
            spec.eta0.as_deref().expect("validated"),
            &spec.request,
        )?,
        Regime::Bayes => robust_design_bayes(cfg.model.as_ref().expect("validated"), ctx.prior("bayes")?, &spec.request)?,
        Regime::Surrogate => robust_design_surrogate(&surrogate(ctx)?, ctx.prior("surrogate")?, &spec.request)?,
    })
}

fn bounds_model(ctx: &Context) -> CliResult<ComputerModel> {
    let cfg = &ctx.config;
    match &cfg.model {
        Some(m) => Ok(m.clone()),
        None => Ok(ComputerModel::from_fn(
            "bounds",
            cfg.x_bounds.clone(),
            cfg.eta_bounds.clone(),
            std::sync::Arc::new(|_, _| 0.0),
        )?),
    }
}

pub fn design(ctx: &Context) -> CliResult<()> {
    let start = Instant::now();
    let out = build_design(ctx)?;
    let model = bounds_model(ctx)?;
    ctx.write("design.csv", &design_csv(&out.design, &model))?;
    let spec = ctx.config.design.as_ref().expect("checked in build_design");
    ctx.write_json(
        "run_report.json",
        &json!({
            "command": "design",
            "model": model.name(),
            "regime": out.regime,
            "seeds": ctx.config.seeds,
            "request": spec.request,
            "eta0": spec.eta0,
            "runs": out.design.len(),
            "role_counts": role_counts(&out.design),
            "snapped_extrema": out.snapped_extrema,
            "samples": out.samples,
        }),
    )?;
    timing(ctx, "design", start)
}

fn load_data(ctx: &Context, data: Option<&Path>, p: usize) -> CliResult<ObsData> {
    let path = match data {
        Some(d) => d.to_path_buf(),
        None => ctx
            .config
            .calibrate
            .as_ref()
            .and_then(|c| c.data.clone())
            .ok_or_else(|| CliError::config("calibrate.data", "a data file (or --data)", "nothing"))?,
    };
    let text = read(&path)?;
    read_observations(&text, p).map_err(|e| CliError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

pub fn calibrate(ctx: &Context, data: Option<&Path>) -> CliResult<()> {
    let start = Instant::now();
    let model = calibration_model(ctx)?;
    let data = load_data(ctx, data, model.p())?;
    let prior = ctx.prior("calibration")?;
    let (mcmc, disc) = match &ctx.config.calibrate {
        Some(c) => (c.mcmc.clone(), c.discrepancy.clone()),
        None => (
            McmcConfig {
                seed: ctx.config.seeds.mcmc,
                ..McmcConfig::default()
            },
            Default::default(),
        ),
    };
    ctx.log(format!("running {} MCMC iterations on {} observations", mcmc.iterations, data.len()));
    let fit = run_mcmc(&model, &data, prior, &mcmc)?;
    let mut disc = disc;
    disc.gp.seed = ctx.config.seeds.surrogate;
    let fit = fit_discrepancy(&fit, &data, &disc)?;
    write_fit(ctx, &fit, &data)?;
    timing(ctx, "calibrate", start)
}

fn write_fit(ctx: &Context, fit: &CalibrationFit, data: &ObsData) -> CliResult<()> {
    ctx.write("posterior_draws.csv", &draws_csv(&fit.draws))?;
    let p = fit.model.p();
    let mut header: Vec<String> = (1..=p).map(|i| format!("x{i}")).collect();
    header.extend(["y", "mean_model", "residual", "calibrated"].map(String::from));
    let rows: Vec<Vec<String>> = data
        .x
        .iter()
        .zip(&data.y)
        .map(|(x, y)| {
            let m = predict_mean_model(fit, x);
            let mut row: Vec<String> = x.iter().map(|v| v.to_string()).collect();
            row.extend([*y, m, y - m, predict_calibrated(fit, x)].map(|v| v.to_string()));
            row
        })
        .collect();
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    ctx.write("residuals.csv", &table_csv(&header, &rows))?;
    let disc = fit.discrepancy.as_ref().expect("fit_discrepancy sets it");
    ctx.write_json(
        "discrepancy.json",
        &json!({
            "lengthscales": disc.gp.lengthscales(),
            "process_variance": disc.gp.process_variance(),
            "noise_variance": disc.noise_variance,
            "nugget": disc.gp.nugget(),
            "neg_log_likelihood": disc.gp.neg_log_likelihood(),
        }),
    )?;
    ctx.write_json(
        "diagnostics.json",
        &json!({
            "acceptance_rate": fit.diagnostics.acceptance_rate,
            "coordinate_acceptance": fit.diagnostics.coordinate_acceptance,
            "rhat": fit.diagnostics.rhat,
            "draws": fit.diagnostics.draws,
            "reinitializations": fit.diagnostics.reinitializations,
            "posterior_mean_eta": fit.posterior_mean_eta(),
            "posterior_sd_eta": fit.posterior_sd_eta(),
            "seeds": ctx.config.seeds,
        }),
    )
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn study(ctx: &Context) -> CliResult<()> {
    let start = Instant::now();
    let cfg = &ctx.config;
    let spec = cfg
        .study
        .as_ref()
        .ok_or_else(|| CliError::config("study", "a [study] table", "nothing"))?;
    let dspec = cfg
        .design
        .as_ref()
        .ok_or_else(|| CliError::config("design", "a [design] table for the proposed design", "nothing"))?;
    if dspec.regime == Regime::Surrogate {
        return Err(CliError::config("design.regime", "local or bayes for a study", "surrogate"));
    }
    let model = cfg.model.as_ref().expect("validated");
    let prior = ctx.prior("the study")?;
    let proposed = build_design(ctx)?.design;
    let n = proposed.len();
    let mut designs = vec![("proposed".to_string(), proposed)];
    for kind in &spec.baselines {
        let n = match kind {
            BaselineKind::PureComputerModel => n,
            BaselineKind::FullFactorial2kR2 => 2 * (1 << model.p()),
            BaselineKind::Fractional2_5Minus2R2 => 16,
        };
        let ctx_b = BaselineContext {
            model,
            n,
            eta0: dspec.eta0.clone(),
            prior: Some(prior),
            request: dspec.request.clone(),
        };
        designs.push((kind.as_str().to_string(), baseline_design(*kind, &ctx_b)?));
    }
    for (name, d) in &designs {
        ctx.write(&format!("design_{name}.csv"), &design_csv(d, model))?;
    }
    ctx.log(format!(
        "study: {} designs x {} tau2 values x {} replications",
        designs.len(),
        spec.config.tau2_grid.len(),
        spec.config.replications
    ));
    let report = rmspe_study(&designs, model, prior, &spec.config)?;
    let cells: Vec<Vec<String>> = report
        .cells
        .iter()
        .map(|c| {
            vec![
                c.design.clone(),
                c.tau2.to_string(),
                c.replication.to_string(),
                fmt_opt(c.rmspe),
                fmt_opt(c.ratio),
                c.error.clone().unwrap_or_default(),
            ]
        })
        .collect();
    ctx.write(
        "cells.csv",
        &table_csv(&["design", "tau2", "replication", "rmspe", "ratio", "error"], &cells),
    )?;
    let summary: Vec<Vec<String>> = report
        .summary
        .iter()
        .map(|r| {
            vec![
                r.design.clone(),
                r.tau2.to_string(),
                fmt_opt(r.median_ratio),
                fmt_opt(r.median_rmspe),
                r.valid.to_string(),
            ]
        })
        .collect();
    ctx.write(
        "summary.csv",
        &table_csv(&["design", "tau2", "median_ratio", "median_rmspe", "valid"], &summary),
    )?;
    let valid = report.valid_fraction();
    ctx.write_json(
        "run_report.json",
        &json!({
            "command": "study",
            "model": model.name(),
            "reference": report.reference,
            "designs": report.designs,
            "tau2_grid": report.tau2_grid,
            "replications": report.replications,
            "test_set": report.test_set,
            "seeds": cfg.seeds,
            "valid_fraction": valid,
        }),
    )?;
    timing(ctx, "study", start)?;
    if valid < 0.9 {
        return Err(CliError::Study { valid: 100.0 * valid });
    }
    Ok(())
}

pub fn surrogate_fit(ctx: &Context) -> CliResult<()> {
    let start = Instant::now();
    let s = surrogate(ctx)?;
    let gp_cfg: &GpConfig = &ctx.config.surrogate.as_ref().expect("checked").gp;
    ctx.write_json(
        "surrogate.json",
        &json!({
            "runs": s.gp.len(),
            "dims": s.gp.dims(),
            "x_bounds": s.x_bounds.iter().map(|b| [b.lo, b.hi]).collect::<Vec<_>>(),
            "eta_bounds": s.eta_bounds.iter().map(|b| [b.lo, b.hi]).collect::<Vec<_>>(),
            "lengthscales": s.gp.lengthscales(),
            "mean_constant": s.gp.mean_constant(),
            "process_variance": s.gp.process_variance(),
            "nugget": s.gp.nugget(),
            "neg_log_likelihood": s.gp.neg_log_likelihood(),
            "config": gp_cfg,
        }),
    )?;
    timing(ctx, "surrogate-fit", start)
}

