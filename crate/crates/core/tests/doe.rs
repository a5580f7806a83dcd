use calidesign::doe::{d_optimal_design, find_extrema, log_det_objective, SearchConfig};
use calidesign::model::{parse_model, Signature};
use calidesign::spacefill::{augment, maxpro_criterion, AugmentPlan};
use calidesign::{ComputerModel, Design, Interval, Role};

fn toy(x: &[f64], eta: f64) -> f64 {
    (-eta * (x[0] - 1.5 * x[1]).powi(2)).exp() + (-2.0 * eta * (x[0] + x[1] - 0.7).powi(2)).exp()
}

fn linf(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Determinant by Gaussian elimination with partial pivoting.
fn det(mut m: Vec<Vec<f64>>) -> f64 {
    let n = m.len();
    let mut d = 1.0;
    for c in 0..n {
        let p = (c..n).max_by(|&a, &b| m[a][c].abs().total_cmp(&m[b][c].abs())).unwrap();
        if m[p][c] == 0.0 {
            return 0.0;
        }
        if p != c {
            m.swap(p, c);
            d = -d;
        }
        d *= m[c][c];
        for r in c + 1..n {
            let f = m[r][c] / m[c][c];
            for k in c..n {
                m[r][k] -= f * m[c][k];
            }
        }
    }
    d
}

#[test]
fn toy_objective_matches_dense_grid() {
    let model = ComputerModel::toy();
    let h = 1e-6;
    let mut best: f64 = 0.0;
    for i in 0..=200 {
        for j in 0..=200 {
            let x = [i as f64 / 200.0, j as f64 / 200.0];
            let g = (toy(&x, 0.5 + h) - toy(&x, 0.5 - h)) / (2.0 * h);
            best = best.max(g.abs());
        }
    }
    let out = d_optimal_design(&model, &[0.5], 1, &SearchConfig::default()).unwrap();
    let found = out.objective();
    assert!(found >= best * (1.0 - 1e-3), "{found} vs grid {best}");
    assert!((found - best).abs() / best < 1e-3, "{found} vs grid {best}");
    assert!(linf(&out.points[0], &[0.5, 1.0]) < 0.03);
}

#[test]
fn toy_gradient_matches_richardson() {
    let model = ComputerModel::toy();
    let x = [0.5, 1.0];
    let d = |h: f64| (toy(&x, 0.5 + h) - toy(&x, 0.5 - h)) / (2.0 * h);
    // two Richardson levels on the central difference
    let h = 1e-2;
    let r1 = |h: f64| (4.0 * d(h / 2.0) - d(h)) / 3.0;
    let oracle = (16.0 * r1(h / 2.0) - r1(h)) / 15.0;
    let g = model.grad_eta(&x, &[0.5]).unwrap()[0];
    assert!((g - oracle).abs() <= 1e-5 * oracle.abs(), "{g} vs {oracle}");
}

#[test]
fn linear_model_recovers_the_factorial() {
    let model = ComputerModel::linear();
    let eta0 = model.eta_bounds().iter().map(|b| 0.5 * (b.lo + b.hi)).collect::<Vec<_>>();
    let out = d_optimal_design(&model, &eta0, 4, &SearchConfig::default()).unwrap();
    let corners = [[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]];
    let mut hit = [false; 4];
    for p in &out.points {
        let c = corners.iter().position(|c| linf(p, c) < 0.02).expect("point near a corner");
        assert!(!hit[c]);
        hit[c] = true;
    }
    // rows (1, x1, x2, x1 x2) at the corners
    let rows: Vec<Vec<f64>> = corners.iter().map(|c| vec![1.0, c[0], c[1], c[0] * c[1]]).collect();
    let oracle = det(rows).abs().ln();
    let corner_pts: Vec<Vec<f64>> = corners.iter().map(|c| c.to_vec()).collect();
    assert!((log_det_objective(&model, &corner_pts, &eta0) - oracle).abs() < 1e-12);
    assert!(oracle.abs() < 1e-12);
    assert!(out.log_det >= oracle - 1e-6);
}

#[test]
fn toy_extrema() {
    let e = find_extrema(&ComputerModel::toy(), &[0.5], &SearchConfig::default()).unwrap();
    assert!(linf(&e.x_max, &[0.42, 0.28]) < 0.03, "{:?}", e.x_max);
    assert!(linf(&e.x_min, &[1.0, 1.0]) < 0.03, "{:?}", e.x_min);
    assert!((e.f_max - toy(&e.x_max, 0.5)).abs() < 1e-12);
}

#[test]
fn constant_model_extrema_agree() {
    let sig = Signature {
        name: "flat".into(),
        x_bounds: vec![Interval::unit(); 2],
        eta_bounds: vec![Interval::unit()],
        constants: Default::default(),
    };
    let m = parse_model("3 + 0*eta1*x1", &sig).unwrap();
    let e = find_extrema(&m, &[0.5], &SearchConfig::default()).unwrap();
    assert_eq!(e.f_max, e.f_min);
}

#[test]
fn single_point_augmentation_beats_the_grid() {
    let mut existing = Design::new(2);
    existing.push(vec![0.0, 0.0], Role::Spacefill);
    let out = augment(2, &AugmentPlan::new(existing.clone(), 1, 3)).unwrap();
    let added = &out.points[1].x;
    assert!(added[0] >= 0.5 && added[1] >= 0.5, "{added:?}");
    let score = |z: &[f64]| maxpro_criterion(&[vec![0.0, 0.0], z.to_vec()], 2).unwrap();
    let mut grid_best = f64::INFINITY;
    for i in 0..=100 {
        for j in 0..=100 {
            grid_best = grid_best.min(score(&[i as f64 / 100.0, j as f64 / 100.0]));
        }
    }
    assert!(score(added) <= grid_best + 1e-9);
}

#[test]
fn factorial_plus_five_is_interior_and_projection_distinct() {
    let mut existing = Design::new(2);
    for c in [[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]] {
        let g = existing.push(c.to_vec(), Role::Spacefill);
        existing.push_in_group(c.to_vec(), Role::Spacefill, g);
    }
    let out = augment(2, &AugmentPlan::new(existing, 5, 11)).unwrap();
    assert_eq!(out.len(), 13);
    let new: Vec<&Vec<f64>> = out.points[8..].iter().map(|p| &p.x).collect();
    for k in 0..2 {
        let mut coords: Vec<f64> = new.iter().map(|x| x[k]).collect();
        for c in &coords {
            assert!(*c > 0.02 && *c < 0.98, "{c}");
        }
        coords.sort_by(f64::total_cmp);
        for w in coords.windows(2) {
            assert!(w[1] - w[0] > 0.02, "{coords:?}");
        }
    }
}
