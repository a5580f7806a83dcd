//! Locally D-optimal designs and model extrema.
//!
//! Both searches run the same multistart scheme: coordinate exchange over a
//! per-dimension grid to land in a basin, then a Nelder-Mead polish of each
//! point with the others held fixed. Starts are independent and seeded from
//! [`SearchConfig::seed`]; the best start wins, ties to the lowest index.

use nalgebra::DMatrix;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::design::{Design, Role};
use crate::error::{Error, Result};
use crate::linalg::log_abs_det;
use crate::model::ComputerModel;
use crate::optim::{grid_coordinate_descent, nelder_mead, unit_levels, NelderMead};
use crate::par;
use crate::rng::{derive_seed, rng_from_seed};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    pub multistarts: usize,
    pub grid_levels: usize,
    pub polish_iterations: usize,
    pub max_sweeps: usize,
    pub seed: u64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            multistarts: 20,
            grid_levels: 51,
            polish_iterations: 200,
            max_sweeps: 20,
            seed: 0,
        }
    }
}

impl SearchConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    fn polish(&self) -> NelderMead {
        NelderMead {
            max_iter: self.polish_iterations,
            step: 1.0 / (self.grid_levels.max(2) - 1) as f64,
            ftol: 1e-13,
            xtol: 1e-10,
        }
    }
}

/// `q x q` matrix whose row `i` is the `eta` gradient at design point `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityMatrix {
    pub entries: DMatrix<f64>,
    pub eta0: Vec<f64>,
}

impl SensitivityMatrix {
    pub fn new(model: &ComputerModel, points: &[Vec<f64>], eta0: &[f64]) -> Result<Self> {
        let q = model.q();
        let mut entries = DMatrix::zeros(points.len(), q);
        for (i, u) in points.iter().enumerate() {
            let g = model.grad_eta_unit(u, eta0)?;
            for j in 0..q {
                entries[(i, j)] = g[j];
            }
        }
        Ok(Self {
            entries,
            eta0: eta0.to_vec(),
        })
    }

    pub fn log_abs_det(&self) -> f64 {
        if !self.entries.is_square() {
            return f64::NEG_INFINITY;
        }
        log_abs_det(self.entries.clone())
    }
}

/// `log |det J|` for `q` candidate points in the unit cube; `-inf` when `J` is
/// singular or a gradient cannot be evaluated.
pub fn log_det_objective(model: &ComputerModel, candidate: &[Vec<f64>], eta0: &[f64]) -> f64 {
    if candidate.len() != model.q() {
        return f64::NEG_INFINITY;
    }
    for (i, a) in candidate.iter().enumerate() {
        if candidate[..i].iter().any(|b| b == a) {
            return f64::NEG_INFINITY;
        }
    }
    match SensitivityMatrix::new(model, candidate, eta0) {
        Ok(j) => j.log_abs_det(),
        Err(_) => f64::NEG_INFINITY,
    }
}

/// Result of a D-optimal search.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimalDesign {
    /// The `q` support points, unit coordinates.
    pub points: Vec<Vec<f64>>,
    pub log_det: f64,
    /// Index of the winning start.
    pub start: usize,
}

impl OptimalDesign {
    /// `|det J|` at the optimum.
    pub fn objective(&self) -> f64 {
        self.log_det.exp()
    }

    /// Each point replicated `r` times, tagged DOPT, one group per location.
    pub fn to_design(&self, r: usize) -> Design {
        let p = self.points.first().map_or(0, Vec::len);
        let mut d = Design::new(p);
        for x in &self.points {
            if r == 0 {
                continue;
            }
            let g = d.push(x.clone(), Role::Dopt);
            for _ in 1..r {
                d.push_in_group(x.clone(), Role::Dopt, g);
            }
        }
        d
    }
}

fn check_eta(model: &ComputerModel, eta0: &[f64]) -> Result<()> {
    if eta0.len() != model.q() {
        return Err(Error::Dimension {
            expected: model.q(),
            got: eta0.len(),
        });
    }
    for (i, (v, b)) in eta0.iter().zip(model.eta_bounds()).enumerate() {
        if !b.contains(*v) {
            return Err(Error::OutOfBounds {
                what: "eta",
                index: i,
                value: *v,
                lo: b.lo,
                hi: b.hi,
            });
        }
    }
    Ok(())
}

fn grad_row(model: &ComputerModel, u: &[f64], eta0: &[f64]) -> Option<Vec<f64>> {
    model.grad_eta_unit(u, eta0).ok()
}

fn log_det_rows(rows: &[Option<Vec<f64>>], q: usize) -> f64 {
    let mut m = DMatrix::zeros(q, q);
    for (i, r) in rows.iter().enumerate() {
        let Some(r) = r else {
            return f64::NEG_INFINITY;
        };
        for j in 0..q {
            m[(i, j)] = r[j];
        }
    }
    log_abs_det(m)
}

fn d_optimal_start(model: &ComputerModel, eta0: &[f64], search: &SearchConfig, start: usize) -> OptimalDesign {
    let (p, q) = (model.p(), model.q());
    let mut rng = rng_from_seed(derive_seed(search.seed, start as u64));
    let mut pts: Vec<Vec<f64>> = (0..q)
        .map(|_| (0..p).map(|_| rng.random::<f64>()).collect())
        .collect();
    let mut rows: Vec<Option<Vec<f64>>> = pts.iter().map(|u| grad_row(model, u, eta0)).collect();
    let levels = unit_levels(search.grid_levels);
    let mut current = log_det_rows(&rows, q);

    // coordinate exchange: only the row of the moved point changes
    for _ in 0..search.max_sweeps {
        let mut improved = false;
        for i in 0..q {
            for l in 0..p {
                let keep = pts[i][l];
                let mut best = (keep, current, rows[i].clone());
                for &lv in &levels {
                    if lv == keep {
                        continue;
                    }
                    pts[i][l] = lv;
                    let row = grad_row(model, &pts[i], eta0);
                    let saved = std::mem::replace(&mut rows[i], row);
                    let v = log_det_rows(&rows, q);
                    if v > best.1 {
                        best = (lv, v, rows[i].clone());
                    }
                    rows[i] = saved;
                }
                pts[i][l] = best.0;
                rows[i] = best.2;
                if best.1 > current {
                    current = best.1;
                    improved = true;
                }
            }
        }
        if !improved {
            break;
        }
    }

    if current.is_finite() {
        let (lo, hi) = (vec![0.0; p], vec![1.0; p]);
        let nm = search.polish();
        for i in 0..q {
            let objective = |u: &[f64]| {
                let mut local = rows.clone();
                local[i] = grad_row(model, u, eta0);
                -log_det_rows(&local, q)
            };
            let (u, v) = nelder_mead(objective, &pts[i], &lo, &hi, &nm);
            if -v > current {
                current = -v;
                rows[i] = grad_row(model, &u, eta0);
                pts[i] = u;
            }
        }
    }
    OptimalDesign {
        points: pts,
        log_det: current,
        start,
    }
}

/// Locally D-optimal `q`-point design at `eta0`.
pub fn d_optimal_design(
    model: &ComputerModel,
    eta0: &[f64],
    q_points: usize,
    search: &SearchConfig,
) -> Result<OptimalDesign> {
    check_eta(model, eta0)?;
    if q_points != model.q() {
        return Err(Error::InvalidArgument(format!(
            "a D-optimal design for {} parameters needs exactly {} points, got {q_points}",
            model.q(),
            model.q()
        )));
    }
    if search.multistarts == 0 {
        return Err(Error::InvalidArgument("multistarts must be >= 1".into()));
    }
    let results = par::map_range(search.multistarts, |s| d_optimal_start(model, eta0, search, s));
    let neg: Vec<f64> = results.iter().map(|r| -r.log_det).collect();
    let best = par::argmin(&neg).expect("at least one start");
    let out = results[best].clone();
    if !out.log_det.is_finite() {
        return Err(Error::SingularInformation);
    }
    Ok(out)
}

/// Maximizer and minimizer of `f(. ; eta0)` over the design region.
#[derive(Debug, Clone, PartialEq)]
pub struct Extrema {
    pub x_max: Vec<f64>,
    pub f_max: f64,
    pub x_min: Vec<f64>,
    pub f_min: f64,
}

fn minimize_unit<F>(p: usize, search: &SearchConfig, stream: u64, f: F) -> (Vec<f64>, f64)
where
    F: Fn(&[f64]) -> f64 + Sync + Send,
{
    let levels = unit_levels(search.grid_levels);
    let (lo, hi) = (vec![0.0; p], vec![1.0; p]);
    let nm = search.polish();
    let results = par::map_range(search.multistarts.max(1), |s| {
        let mut rng = rng_from_seed(derive_seed(derive_seed(search.seed, stream), s as u64));
        let x0: Vec<f64> = (0..p).map(|_| rng.random::<f64>()).collect();
        let (x, v) = grid_coordinate_descent(&f, &x0, &levels, search.max_sweeps);
        let (xp, vp) = nelder_mead(&f, &x, &lo, &hi, &nm);
        if vp < v {
            (xp, vp)
        } else {
            (x, v)
        }
    });
    let vals: Vec<f64> = results.iter().map(|r| r.1).collect();
    let best = par::argmin(&vals).unwrap_or(0);
    results[best].clone()
}

/// Multistart maximization and minimization of the model over `[0,1]^p`.
pub fn find_extrema(model: &ComputerModel, eta0: &[f64], search: &SearchConfig) -> Result<Extrema> {
    check_eta(model, eta0)?;
    let eval = |u: &[f64]| model.evaluate_unit(u, eta0).unwrap_or(f64::NAN);
    let (x_max, neg_max) = minimize_unit(model.p(), search, 1, |u| {
        let v = eval(u);
        if v.is_nan() {
            f64::INFINITY
        } else {
            -v
        }
    });
    let (x_min, f_min) = minimize_unit(model.p(), search, 2, |u| {
        let v = eval(u);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    });
    let f_max = model.evaluate_unit(&x_max, eta0)?;
    let f_min_checked = model.evaluate_unit(&x_min, eta0)?;
    debug_assert!((f_min - f_min_checked).abs() <= 1e-9 * (1.0 + f_min.abs()));
    debug_assert!((-neg_max - f_max).abs() <= 1e-9 * (1.0 + f_max.abs()));
    Ok(Extrema {
        x_max,
        f_max,
        x_min,
        f_min: f_min_checked,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{parse_model, Interval, Signature};

    #[test]
    fn duplicate_points_hit_the_sentinel() {
        let lin = ComputerModel::linear();
        let eta = [1.0, 1.0, 1.0, 1.0];
        let c = vec![vec![0.0, 0.0], vec![0.0, 0.0], vec![1.0, 0.0], vec![1.0, 1.0]];
        assert_eq!(log_det_objective(&lin, &c, &eta), f64::NEG_INFINITY);
    }

    #[test]
    fn one_by_one_objective_is_log_abs_gradient() {
        let toy = ComputerModel::toy();
        let g = toy.grad_eta(&[0.5, 1.0], &[0.5]).unwrap()[0];
        let v = log_det_objective(&toy, &[vec![0.5, 1.0]], &[0.5]);
        assert!((v - g.abs().ln()).abs() < 1e-12);
    }

    #[test]
    fn permutation_leaves_objective_unchanged() {
        let lin = ComputerModel::linear();
        let eta = [0.3, -1.0, 2.0, 0.5];
        let a = vec![vec![0.1, 0.2], vec![0.9, 0.3], vec![0.4, 0.8], vec![0.7, 0.6]];
        let mut b = a.clone();
        b.swap(0, 3);
        b.swap(1, 2);
        let (va, vb) = (log_det_objective(&lin, &a, &eta), log_det_objective(&lin, &b, &eta));
        assert!((va - vb).abs() < 1e-12);
    }

    #[test]
    fn degenerate_model_is_singular() {
        let sig = Signature {
            name: String::new(),
            x_bounds: vec![Interval::unit()],
            eta_bounds: vec![Interval::unit(), Interval::unit()],
            constants: Default::default(),
        };
        // eta2 never enters the model
        let m = parse_model("eta1 * x1", &sig).unwrap();
        let cfg = SearchConfig {
            multistarts: 3,
            ..Default::default()
        };
        assert_eq!(d_optimal_design(&m, &[0.5, 0.5], 2, &cfg), Err(Error::SingularInformation));
    }

    #[test]
    fn wrong_point_count_is_rejected() {
        let toy = ComputerModel::toy();
        assert!(d_optimal_design(&toy, &[0.5], 2, &SearchConfig::default()).is_err());
        assert!(d_optimal_design(&toy, &[1.5], 1, &SearchConfig::default()).is_err());
    }

    #[test]
    fn identity_model_extrema() {
        let sig = Signature {
            name: String::new(),
            x_bounds: vec![Interval::unit()],
            eta_bounds: vec![Interval::unit()],
            constants: Default::default(),
        };
        let m = parse_model("x1", &sig).unwrap();
        let e = find_extrema(&m, &[0.5], &SearchConfig::default()).unwrap();
        assert_eq!(e.x_max, vec![1.0]);
        assert_eq!(e.x_min, vec![0.0]);
        let c = parse_model("eta1 + 0*x1", &sig).unwrap();
        let e = find_extrema(&c, &[0.5], &SearchConfig::default()).unwrap();
        assert_eq!(e.f_max, e.f_min);
    }

    #[test]
    fn replicated_design_groups() {
        let od = OptimalDesign {
            points: vec![vec![0.5, 1.0]],
            log_det: 0.0,
            start: 0,
        };
        let d = od.to_design(2);
        assert_eq!(d.len(), 2);
        assert_eq!(d.points[0].group, d.points[1].group);
    }
}
