use calidesign::spacefill::maxpro_design;
use calidesign::surrogate::{fit_gp, sample_realization, GpConfig, MeanMode};

fn toy(x: &[f64], eta: f64) -> f64 {
    (-eta * (x[0] - 1.5 * x[1]).powi(2)).exp() + (-2.0 * eta * (x[0] + x[1] - 0.7).powi(2)).exp()
}

/// Hand-solved 2-point kriging with profiled constant mean and variance.
fn kriging_oracle(theta: f64, g: f64, y: [f64; 2], u: f64) -> (f64, f64) {
    let rho = (-(1.0 / theta).powi(2)).exp();
    let (a, b) = (1.0 + g, rho);
    let det = a * a - b * b;
    let inv = [[a / det, -b / det], [-b / det, a / det]];
    let solve = |v: [f64; 2]| [inv[0][0] * v[0] + inv[0][1] * v[1], inv[1][0] * v[0] + inv[1][1] * v[1]];
    let ones = solve([1.0, 1.0]);
    let mu = (ones[0] * y[0] + ones[1] * y[1]) / (ones[0] + ones[1]);
    let resid = [y[0] - mu, y[1] - mu];
    let alpha = solve(resid);
    let tau2 = (resid[0] * alpha[0] + resid[1] * alpha[1]) / 2.0;
    let r = [(-(u / theta).powi(2)).exp(), (-((u - 1.0) / theta).powi(2)).exp()];
    let mean = mu + r[0] * alpha[0] + r[1] * alpha[1];
    let rr = solve(r);
    let var = tau2 * (1.0 - r[0] * rr[0] - r[1] * rr[1]);
    (mean, var)
}

#[test]
fn two_point_kriging_matches_closed_form() {
    let theta = 0.7;
    let cfg = GpConfig {
        lengthscales: Some(vec![theta]),
        ..GpConfig::default()
    };
    let gp = fit_gp(&[vec![0.0], vec![1.0]], &[0.0, 1.0], &cfg).unwrap();
    for u in [0.5, 0.25, 0.9, 1.7] {
        let (m, v) = gp.posterior(&[u]);
        let (om, ov) = kriging_oracle(theta, gp.nugget(), [0.0, 1.0], u);
        assert!((m - om).abs() < 1e-10, "mean at {u}: {m} vs {om}");
        assert!((v - ov).abs() < 1e-10, "variance at {u}: {v} vs {ov}");
    }
}

#[test]
fn maxpro_toy_experiment_interpolates() {
    let design = maxpro_design(30, 3, 2).unwrap();
    let y: Vec<f64> = design.iter().map(|u| toy(&u[..2], u[2])).collect();
    let gp = fit_gp(&design, &y, &GpConfig::default()).unwrap();
    for (u, yi) in design.iter().zip(&y) {
        let m = gp.posterior_mean(u);
        assert!((m - yi).abs() <= 1e-6 * yi.abs(), "{m} vs {yi}");
    }
}

#[test]
fn zero_mean_fixed_variance() {
    let cfg = GpConfig {
        lengthscales: Some(vec![0.5]),
        mean: MeanMode::Zero,
        variance: Some(2.0),
        ..GpConfig::default()
    };
    let gp = fit_gp(&[vec![0.2]], &[1.0], &cfg).unwrap();
    let r = (-(0.3f64 / 0.5).powi(2)).exp();
    let g = gp.nugget();
    let (m, v) = gp.posterior(&[0.5]);
    assert!((m - r / (1.0 + g)).abs() < 1e-12);
    assert!((v - 2.0 * (1.0 - r * r / (1.0 + g))).abs() < 1e-12);
}

#[test]
fn realizations_average_to_the_posterior_mean() {
    let design = maxpro_design(30, 3, 2).unwrap();
    let y: Vec<f64> = design.iter().map(|u| toy(&u[..2], u[2])).collect();
    let gp = fit_gp(&design, &y, &GpConfig::default()).unwrap();
    let slice = [0.37];
    let paths: Vec<_> = (0..200).map(|s| sample_realization(&gp, &slice, 64, s).unwrap()).collect();
    let probes = [[0.11, 0.93, 0.37], [0.52, 0.48, 0.37], [0.87, 0.21, 0.37]];
    let mut some_spread = false;
    for u in probes {
        let vals: Vec<f64> = paths.iter().map(|p| p.eval(&u)).collect();
        let avg = vals.iter().sum::<f64>() / 200.0;
        let (mean, var) = gp.posterior(&u);
        let sd_pool = (vals.iter().map(|v| (v - avg).powi(2)).sum::<f64>() / 199.0).sqrt();
        let se = sd_pool.max(var.sqrt()) / 200f64.sqrt();
        assert!((avg - mean).abs() <= 3.0 * se + 1e-9, "{avg} vs {mean}, se {se}");
        some_spread |= sd_pool > 0.0;
    }
    assert!(some_spread);
    assert_ne!(paths[0].eval(&probes[1]), paths[1].eval(&probes[1]));
    for p in &paths[..5] {
        for (a, v) in p.anchors().iter().zip(p.values()) {
            assert!((p.eval(a) - v).abs() < 1e-8);
        }
    }
}

#[test]
fn zero_variance_realization_is_the_mean() {
    let cfg = GpConfig {
        lengthscales: Some(vec![0.3, 0.3]),
        variance: Some(0.0),
        ..GpConfig::default()
    };
    let gp = fit_gp(&[vec![0.1, 0.2], vec![0.8, 0.6], vec![0.4, 0.9]], &[1.0, 2.0, 3.0], &cfg).unwrap();
    let path = sample_realization(&gp, &[0.5], 16, 4).unwrap();
    for u in [[0.3, 0.5], [0.9, 0.5]] {
        assert_eq!(path.eval(&u), gp.posterior_mean(&u));
    }
}
