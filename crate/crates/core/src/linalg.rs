use nalgebra::{Cholesky, DMatrix, Dyn};

use crate::error::{Error, Result};

/// `log |det m|`, or `-inf` when `m` is singular or non-finite.
pub fn log_abs_det(m: DMatrix<f64>) -> f64 {
    if m.iter().any(|v| !v.is_finite()) {
        return f64::NEG_INFINITY;
    }
    let det = m.lu().determinant();
    if det == 0.0 || !det.is_finite() {
        f64::NEG_INFINITY
    } else {
        det.abs().ln()
    }
}

/// Cholesky of `m + jitter * scale * I`, escalating `jitter` by 10x from
/// `start` up to `max` until the factorization succeeds.
pub fn cholesky_escalating(
    m: &DMatrix<f64>,
    scale: f64,
    start: f64,
    max: f64,
) -> Result<(Cholesky<f64, Dyn>, f64)> {
    let mut jitter = start;
    loop {
        let mut a = m.clone();
        for i in 0..a.nrows() {
            a[(i, i)] += jitter * scale;
        }
        if let Some(c) = Cholesky::new(a) {
            if c.l_dirty().diagonal().iter().all(|d| d.is_finite() && *d > 0.0) {
                return Ok((c, jitter));
            }
        }
        if jitter >= max {
            return Err(Error::Factorization { jitter });
        }
        jitter = (jitter * 10.0).min(max);
    }
}

pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    sq_dist(a, b).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_det_of_triangular() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 1.0, 3.0]);
        assert!((log_abs_det(m) - 6f64.ln()).abs() < 1e-14);
        let s = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 1.0, 2.0]);
        assert_eq!(log_abs_det(s), f64::NEG_INFINITY);
    }

    #[test]
    fn escalation_rescues_semidefinite() {
        let m = DMatrix::from_element(3, 3, 1.0);
        let (_, jitter) = cholesky_escalating(&m, 1.0, 1e-10, 1e-4).unwrap();
        assert!(jitter >= 1e-10);
        let neg = DMatrix::from_diagonal_element(2, 2, -1.0);
        assert!(cholesky_escalating(&neg, 1.0, 1e-10, 1e-4).is_err());
    }
}
