//! Derivative-free local search on the unit box.

/// Settings for [`nelder_mead`].
#[derive(Debug, Clone, Copy)]
pub struct NelderMead {
    pub max_iter: usize,
    /// Initial simplex edge length.
    pub step: f64,
    /// Stop when the spread of simplex values and the simplex diameter fall
    /// below these.
    pub ftol: f64,
    pub xtol: f64,
}

impl Default for NelderMead {
    fn default() -> Self {
        Self {
            max_iter: 200,
            step: 0.05,
            ftol: 1e-12,
            xtol: 1e-9,
        }
    }
}

fn clamp_box(x: &mut [f64], lo: &[f64], hi: &[f64]) {
    for ((v, l), h) in x.iter_mut().zip(lo).zip(hi) {
        *v = v.clamp(*l, *h);
    }
}

fn finite_or_max(v: f64) -> f64 {
    if v.is_nan() {
        f64::INFINITY
    } else {
        v
    }
}

/// Minimizes `f` over the box `[lo, hi]` starting at `x0`. Points are
/// projected onto the box before each evaluation. Returns the best point and
/// value seen.
pub fn nelder_mead<F>(f: F, x0: &[f64], lo: &[f64], hi: &[f64], cfg: &NelderMead) -> (Vec<f64>, f64)
where
    F: Fn(&[f64]) -> f64,
{
    let n = x0.len();
    let eval = |x: &mut Vec<f64>| -> f64 {
        clamp_box(x, lo, hi);
        finite_or_max(f(x))
    };
    let mut start = x0.to_vec();
    let f0 = eval(&mut start);
    if n == 0 {
        return (start, f0);
    }
    let mut simplex: Vec<(Vec<f64>, f64)> = vec![(start.clone(), f0)];
    for i in 0..n {
        let mut v = start.clone();
        let room_up = hi[i] - v[i];
        v[i] += if room_up >= cfg.step { cfg.step } else { -cfg.step };
        let fv = eval(&mut v);
        simplex.push((v, fv));
    }
    let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);
    for _ in 0..cfg.max_iter {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best = simplex[0].1;
        let worst = simplex[n].1;
        let spread = if best.is_finite() && worst.is_finite() {
            (worst - best).abs()
        } else {
            f64::INFINITY
        };
        let diameter = simplex[1..]
            .iter()
            .map(|(v, _)| v.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        if spread <= cfg.ftol * (1.0 + best.abs()) && diameter <= cfg.xtol {
            break;
        }
        if diameter <= cfg.xtol * 1e-3 {
            break;
        }
        let mut centroid = vec![0.0; n];
        for (v, _) in &simplex[..n] {
            for (c, x) in centroid.iter_mut().zip(v) {
                *c += x / n as f64;
            }
        }
        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&simplex[n].0)
                .map(|(c, w)| c + t * (c - w))
                .collect()
        };
        let mut xr = along(alpha);
        let fr = eval(&mut xr);
        if fr < simplex[0].1 {
            let mut xe = along(gamma);
            let fe = eval(&mut xe);
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
            continue;
        }
        let (mut xc, fc) = if fr < simplex[n].1 {
            let mut xc = along(rho);
            let fc = eval(&mut xc);
            (xc, fc)
        } else {
            let mut xc = along(-rho);
            let fc = eval(&mut xc);
            (xc, fc)
        };
        if fc < simplex[n].1.min(fr) {
            clamp_box(&mut xc, lo, hi);
            simplex[n] = (xc, fc);
            continue;
        }
        let x_best = simplex[0].0.clone();
        for item in simplex.iter_mut().skip(1) {
            let mut v: Vec<f64> = x_best
                .iter()
                .zip(&item.0)
                .map(|(b, x)| b + sigma * (x - b))
                .collect();
            let fv = eval(&mut v);
            *item = (v, fv);
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, v) = simplex.swap_remove(0);
    (x, v)
}

/// Evenly spaced levels `0, 1/(k-1), ..., 1`.
pub fn unit_levels(k: usize) -> Vec<f64> {
    if k <= 1 {
        return vec![0.5];
    }
    (0..k).map(|i| i as f64 / (k - 1) as f64).collect()
}

/// Cyclic coordinate descent where each coordinate is replaced by the best of
/// `levels` (the current value competes too). Returns the final point and
/// value.
pub fn grid_coordinate_descent<F>(f: F, x0: &[f64], levels: &[f64], max_sweeps: usize) -> (Vec<f64>, f64)
where
    F: Fn(&[f64]) -> f64,
{
    let mut x = x0.to_vec();
    let mut fx = finite_or_max(f(&x));
    for _ in 0..max_sweeps {
        let mut improved = false;
        for j in 0..x.len() {
            let current = x[j];
            let mut best = (current, fx);
            for &l in levels {
                if l == current {
                    continue;
                }
                x[j] = l;
                let v = finite_or_max(f(&x));
                if v < best.1 {
                    best = (l, v);
                }
            }
            x[j] = best.0;
            if best.1 < fx {
                fx = best.1;
                improved = true;
            }
        }
        if !improved {
            break;
        }
    }
    (x, fx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nelder_mead_finds_interior_minimum() {
        let f = |x: &[f64]| (x[0] - 0.3).powi(2) + 10.0 * (x[1] - 0.7).powi(2);
        let (x, v) = nelder_mead(f, &[0.9, 0.1], &[0.0, 0.0], &[1.0, 1.0], &NelderMead::default());
        assert!((x[0] - 0.3).abs() < 1e-4 && (x[1] - 0.7).abs() < 1e-4, "{x:?}");
        assert!(v < 1e-8);
    }

    #[test]
    fn nelder_mead_respects_box() {
        let f = |x: &[f64]| -(x[0] + x[1]);
        let (x, _) = nelder_mead(f, &[0.5, 0.5], &[0.0, 0.0], &[1.0, 1.0], &NelderMead::default());
        assert!(x.iter().all(|v| (0.0..=1.0).contains(v)));
        assert!((x[0] - 1.0).abs() < 1e-6 && (x[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn grid_descent_reaches_grid_optimum_of_separable() {
        let f = |x: &[f64]| (x[0] - 0.42).abs() + (x[1] - 0.28).abs();
        let (x, _) = grid_coordinate_descent(f, &[0.0, 0.0], &unit_levels(51), 10);
        assert_eq!(x, vec![0.42, 0.28]);
    }
}
