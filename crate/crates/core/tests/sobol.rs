use calidesign::sobol::{sobol_test_set, Sobol};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Rows of a reference 21-dimensional Joe-Kuo Sobol' generator (origin first).
const REFERENCE: [(u64, [f64; 21]); 4] = [
    (
        100,
        [
            0.4140625, 0.2578125, 0.7734375, 0.7265625, 0.8828125, 0.7421875, 0.0234375, 0.4765625, 0.6328125,
            0.6953125, 0.4609375, 0.6796875, 0.4765625, 0.8515625, 0.3203125, 0.4921875, 0.6796875, 0.7421875,
            0.8359375, 0.3359375, 0.7578125,
        ],
    ),
    (
        511,
        [
            0.001953125, 0.501953125, 0.408203125, 0.845703125, 0.353515625, 0.876953125, 0.744140625, 0.462890625,
            0.220703125, 0.201171875, 0.341796875, 0.830078125, 0.060546875, 0.943359375, 0.119140625, 0.646484375,
            0.560546875, 0.255859375, 0.904296875, 0.130859375, 0.662109375,
        ],
    ),
    (
        1000,
        [
            0.2197265625, 0.0966796875, 0.5185546875, 0.6767578125, 0.2802734375, 0.9072265625, 0.0458984375,
            0.8994140625, 0.5009765625, 0.0693359375, 0.0849609375, 0.2548828125, 0.1611328125, 0.3837890625,
            0.1435546875, 0.3701171875, 0.7197265625, 0.3447265625, 0.9912109375, 0.7255859375, 0.5224609375,
        ],
    ),
    (
        1023,
        [
            0.0009765625, 0.7529296875, 0.6123046875, 0.1455078125, 0.1865234375, 0.4384765625, 0.1396484375,
            0.6181640625, 0.3447265625, 0.8505859375, 0.6787109375, 0.0361328125, 0.1298828125, 0.6650390625,
            0.3623046875, 0.4638671875, 0.3134765625, 0.8759765625, 0.5849609375, 0.3193359375, 0.8662109375,
        ],
    ),
];

#[test]
fn matches_reference_rows() {
    let s = Sobol::new(21).unwrap();
    for (i, row) in REFERENCE {
        assert_eq!(s.point(i), row.to_vec(), "row {i}");
    }
}

#[test]
fn first_three_2d_points() {
    let t = sobol_test_set(2, 3, 0).unwrap();
    assert_eq!(t, vec![vec![0.5, 0.5], vec![0.75, 0.25], vec![0.25, 0.75]]);
    assert_eq!(sobol_test_set(2, 1, 0).unwrap().len(), 1);
}

/// Star discrepancy over anchored boxes whose corners are point coordinates
/// (and 1), open and closed.
fn star_discrepancy(pts: &[Vec<f64>]) -> f64 {
    let n = pts.len() as f64;
    let mut xs: Vec<f64> = pts.iter().map(|p| p[0]).chain([1.0]).collect();
    let mut ys: Vec<f64> = pts.iter().map(|p| p[1]).chain([1.0]).collect();
    xs.sort_by(f64::total_cmp);
    ys.sort_by(f64::total_cmp);
    let mut worst: f64 = 0.0;
    for &a in &xs {
        for &b in &ys {
            let open = pts.iter().filter(|p| p[0] < a && p[1] < b).count() as f64 / n;
            let closed = pts.iter().filter(|p| p[0] <= a && p[1] <= b).count() as f64 / n;
            worst = worst.max((a * b - open).abs()).max((closed - a * b).abs());
        }
    }
    worst
}

#[test]
fn lower_discrepancy_than_random() {
    let sob = sobol_test_set(2, 500, 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let rnd: Vec<Vec<f64>> = (0..500).map(|_| vec![rng.random(), rng.random()]).collect();
    let (ds, dr) = (star_discrepancy(&sob), star_discrepancy(&rnd));
    assert!(ds < dr, "{ds} vs {dr}");
}
