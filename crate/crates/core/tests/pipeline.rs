use calidesign::pipeline::{robust_design_bayes, robust_design_local, robust_design_surrogate, DesignRequest, SurrogateModel};
use calidesign::reduce::{Marginal, PriorSpec};
use calidesign::spacefill::maxpro_design;
use calidesign::surrogate::{fit_gp, GpConfig};
use calidesign::{ComputerModel, Error, Interval, Role};

fn linf(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn normal(mean: f64, sd: f64) -> PriorSpec {
    PriorSpec::new(vec![Marginal::Normal { mean, sd }]).unwrap()
}

fn dopt(d: &calidesign::Design) -> Vec<Vec<f64>> {
    d.points.iter().filter(|p| p.role == Role::Dopt).map(|p| p.x.clone()).collect()
}

#[test]
fn toy_local_composition() {
    let out = robust_design_local(&ComputerModel::toy(), &[0.5], &DesignRequest::default()).unwrap();
    let d = &out.design;
    assert_eq!(d.len(), 8);
    assert_eq!(d.count(Role::Dopt), 2);
    assert_eq!(d.count(Role::ExtremumMax) + d.count(Role::ExtremumMin), 2);
    assert_eq!(d.count(Role::Spacefill), 4);
    for x in dopt(d) {
        assert!(linf(&x, &[0.5, 1.0]) < 0.03);
    }
    let dgroups: Vec<usize> = d.points.iter().filter(|p| p.role == Role::Dopt).map(|p| p.group).collect();
    assert_eq!(dgroups[0], dgroups[1]);
    assert!(d.in_unit_cube());
}

#[test]
fn budget_extremes() {
    let model = ComputerModel::toy();
    let fill = DesignRequest {
        r: 0,
        include_location_scale: false,
        ..DesignRequest::default()
    };
    let d = robust_design_local(&model, &[0.5], &fill).unwrap().design;
    assert_eq!(d.count(Role::Spacefill), 8);
    let all = DesignRequest {
        r: 8,
        include_location_scale: false,
        ..DesignRequest::default()
    };
    let d = robust_design_local(&model, &[0.5], &all).unwrap().design;
    assert_eq!(d.count(Role::Dopt), 8);
    let short = DesignRequest {
        n: 3,
        ..DesignRequest::default()
    };
    assert!(matches!(
        robust_design_local(&model, &[0.5], &short),
        Err(Error::BudgetInfeasible { n: 3, required: 4 })
    ));
}

#[test]
fn single_representative_equals_local() {
    let model = ComputerModel::toy();
    let req = DesignRequest {
        m: 1,
        ..DesignRequest::default()
    };
    let bayes = robust_design_bayes(&model, &normal(0.5, 0.2), &req).unwrap();
    let eta = bayes.samples[0].eta.clone();
    let local = robust_design_local(&model, &eta, &req).unwrap();
    assert_eq!(bayes.design.len(), local.design.len());
    for (a, b) in bayes.design.points.iter().zip(&local.design.points) {
        assert_eq!(a.role, b.role);
        assert!(linf(&a.x, &b.x) < 1e-9, "{:?} vs {:?}", a.x, b.x);
    }
}

#[test]
fn point_mass_prior_collapses_to_local() {
    let model = ComputerModel::toy();
    let req = DesignRequest::default();
    let bayes = robust_design_bayes(&model, &normal(0.5, 1e-6), &req).unwrap();
    let local = robust_design_local(&model, &[0.5], &req).unwrap();
    for (a, b) in dopt(&bayes.design).iter().zip(dopt(&local.design)) {
        assert!(linf(a, &b) < 0.02);
    }
}

#[test]
fn pooled_toy_design_spreads_the_dopt_runs() {
    let out = robust_design_bayes(&ComputerModel::toy(), &normal(0.5, 0.2), &DesignRequest::default()).unwrap();
    let d = &out.design;
    assert_eq!((d.len(), d.count(Role::Dopt), d.count(Role::Spacefill)), (8, 2, 4));
    assert_eq!(out.samples.len(), 20);
    let pts = dopt(d);
    assert!(linf(&pts[0], &pts[1]) > 1e-3, "{pts:?}");
    for x in &pts {
        assert!(linf(x, &[0.5, 1.0]) < 0.3, "{x:?}");
    }
}

#[test]
fn surrogate_design_resembles_the_pooled_one() {
    let model = ComputerModel::toy();
    let runs = maxpro_design(30, 3, 4).unwrap();
    let y: Vec<f64> = runs.iter().map(|u| model.evaluate(&u[..2], &[u[2]]).unwrap()).collect();
    let gp = fit_gp(&runs, &y, &GpConfig::default()).unwrap();
    let sur = SurrogateModel::new(gp, model.x_bounds().to_vec(), vec![Interval::unit()]).unwrap();
    let req = DesignRequest {
        anchors: 128,
        ..DesignRequest::default()
    };
    let prior = normal(0.5, 0.2);
    let a = robust_design_surrogate(&sur, &prior, &req).unwrap().design;
    let b = robust_design_bayes(&model, &prior, &req).unwrap().design;
    assert_eq!(a.role_counts(), b.role_counts());
    // emulator noise moves the D-optimal runs along the top edge, as in the
    // model-based design
    for x in dopt(&a).iter().chain(&dopt(&b)) {
        assert!(x[1] > 0.95, "{x:?}");
    }
    let max = |d: &calidesign::Design| d.points.iter().find(|p| p.role == Role::ExtremumMax).unwrap().x.clone();
    assert!(linf(&max(&a), &max(&b)) < 0.1);
}

#[test]
fn surrogate_single_representative_tracks_local() {
    let model = ComputerModel::toy();
    let runs = maxpro_design(60, 3, 4).unwrap();
    let y: Vec<f64> = runs.iter().map(|u| model.evaluate(&u[..2], &[u[2]]).unwrap()).collect();
    let gp = fit_gp(&runs, &y, &GpConfig::default()).unwrap();
    let sur = SurrogateModel::new(gp, model.x_bounds().to_vec(), vec![Interval::unit()]).unwrap();
    let req = DesignRequest {
        m: 1,
        anchors: 128,
        ..DesignRequest::default()
    };
    let a = robust_design_surrogate(&sur, &normal(0.5, 0.2), &req).unwrap();
    let local = robust_design_local(&model, &a.samples[0].eta, &req).unwrap();
    for (x, y) in dopt(&a.design).iter().zip(dopt(&local.design)) {
        assert!(linf(x, &y) < 0.1, "{x:?} vs {y:?}");
    }
}

#[test]
fn pooled_regime_is_reproducible() {
    let model = ComputerModel::toy();
    let prior = normal(0.5, 0.2);
    let req = DesignRequest::default();
    assert_eq!(
        robust_design_bayes(&model, &prior, &req).unwrap(),
        robust_design_bayes(&model, &prior, &req).unwrap()
    );
}
