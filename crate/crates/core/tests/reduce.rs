use calidesign::reduce::{energy_distance, prior_representatives, support_points, Marginal, PriorSpec};
use proptest::prelude::*;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// 500 draws, half around (-2, 0) and half around (2, 0).
fn mixture() -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let n = Normal::new(0.0, 0.5).unwrap();
    (0..500)
        .map(|i| {
            let c = if i % 2 == 0 { -2.0 } else { 2.0 };
            vec![c + n.sample(&mut rng), n.sample(&mut rng)]
        })
        .collect()
}

#[test]
fn mixture_components_each_get_a_point() {
    let pts = support_points(&mixture(), 2, 1).unwrap();
    let near = |c: f64| pts.iter().any(|p| ((p[0] - c).powi(2) + p[1].powi(2)).sqrt() < 0.15);
    assert!(near(-2.0) && near(2.0), "{pts:?}");
}

#[test]
fn beats_random_subsets() {
    let cands = mixture();
    let k = 20;
    let pts = support_points(&cands, k, 5).unwrap();
    let ours = energy_distance(&pts, &cands).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let best = (0..100)
        .map(|_| {
            let sub: Vec<Vec<f64>> = sample(&mut rng, cands.len(), k).into_iter().map(|i| cands[i].clone()).collect();
            energy_distance(&sub, &cands).unwrap()
        })
        .fold(f64::INFINITY, f64::min);
    assert!(ours <= best, "{ours} > {best}");
}

#[test]
fn normal_prior_moments() {
    let prior = PriorSpec::new(vec![Marginal::Normal { mean: 0.5, sd: 0.2 }]).unwrap();
    let reps = prior_representatives(&prior, 20, 17).unwrap();
    let v: Vec<f64> = reps.iter().map(|r| r[0]).collect();
    let mean = v.iter().sum::<f64>() / 20.0;
    let sd = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 19.0).sqrt();
    assert!((mean - 0.5).abs() < 0.02, "mean {mean}");
    assert!((sd - 0.2).abs() < 0.03, "sd {sd}");
}

#[test]
fn uniform_single_point_is_the_median() {
    let prior = PriorSpec::new(vec![Marginal::Uniform { lo: 0.0, hi: 1.0 }]).unwrap();
    let reps = prior_representatives(&prior, 1, 3).unwrap();
    assert!((reps[0][0] - 0.5).abs() < 0.05);
}

#[test]
fn representatives_stay_in_support() {
    let prior = PriorSpec::new(vec![
        Marginal::Uniform { lo: 0.1, hi: 10.0 },
        Marginal::Uniform { lo: 0.1, hi: 1000.0 },
        Marginal::Uniform { lo: 0.0, hi: 1.0 },
    ])
    .unwrap();
    let reps = prior_representatives(&prior, 20, 8).unwrap();
    assert_eq!(reps.len(), 20);
    for r in reps {
        assert!((0.1..=10.0).contains(&r[0]) && (0.1..=1000.0).contains(&r[1]) && (0.0..=1.0).contains(&r[2]));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn translation_equivariant(dx in -5.0f64..5.0, dy in -5.0f64..5.0, seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = Normal::new(0.0, 1.0).unwrap();
        let cands: Vec<Vec<f64>> = (0..60).map(|_| vec![n.sample(&mut rng), n.sample(&mut rng)]).collect();
        let moved: Vec<Vec<f64>> = cands.iter().map(|c| vec![c[0] + dx, c[1] + dy]).collect();
        let a = support_points(&cands, 5, seed).unwrap();
        let b = support_points(&moved, 5, seed).unwrap();
        for (p, q) in a.iter().zip(&b) {
            prop_assert!((p[0] + dx - q[0]).abs() < 1e-9 && (p[1] + dy - q[1]).abs() < 1e-9);
        }
    }

    #[test]
    fn energy_distance_is_nonnegative_for_subsets(seed in 0u64..1000, k in 1usize..10) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = Normal::new(0.0, 1.0).unwrap();
        let cands: Vec<Vec<f64>> = (0..30).map(|_| vec![n.sample(&mut rng)]).collect();
        let pts = support_points(&cands, k, seed).unwrap();
        prop_assert!(energy_distance(&pts, &cands).unwrap() > -1e-12);
    }
}
