//! Dense symmetric positive-definite solves.

use crate::error::{Error, Result};

pub type Matrix = Vec<Vec<f64>>;

/// Lower-triangular Cholesky factor, or `None` if a pivot is not positive.
pub fn cholesky(a: &Matrix) -> Option<Matrix> {
    let n = a.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let s = a[i][j] - l[i][..j].iter().zip(&l[j][..j]).map(|(x, y)| x * y).sum::<f64>();
            if i == j {
                if !(s > 0.0) || !s.is_finite() {
                    return None;
                }
                l[i][i] = s.sqrt();
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    Some(l)
}

pub const MAX_JITTER: f64 = 1e-6;

/// Factors `a + jitter I`, escalating the jitter tenfold from `start` until
/// the factorization succeeds or the jitter passes [`MAX_JITTER`].
pub fn cholesky_jittered(a: &Matrix, start: f64) -> Result<(Matrix, f64)> {
    let mut jitter = start;
    loop {
        let mut m = a.clone();
        for (i, row) in m.iter_mut().enumerate() {
            row[i] += jitter;
        }
        if let Some(l) = cholesky(&m) {
            return Ok((l, jitter));
        }
        if jitter >= MAX_JITTER * (1.0 - 1e-9) {
            return Err(Error::Conditioning { jitter });
        }
        jitter = (jitter * 10.0).min(MAX_JITTER);
    }
}

/// Solves `L x = b`.
pub fn solve_lower(l: &Matrix, b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut x = vec![0.0; n];
    for i in 0..n {
        let s: f64 = (0..i).map(|k| l[i][k] * x[k]).sum();
        x[i] = (b[i] - s) / l[i][i];
    }
    x
}

/// Solves `Lᵀ x = b`.
pub fn solve_upper_t(l: &Matrix, b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| l[k][i] * x[k]).sum();
        x[i] = (b[i] - s) / l[i][i];
    }
    x
}

/// Solves `L Lᵀ x = b`.
pub fn cho_solve(l: &Matrix, b: &[f64]) -> Vec<f64> {
    solve_upper_t(l, &solve_lower(l, b))
}

pub fn log_det_from_cholesky(l: &Matrix) -> f64 {
    2.0 * l.iter().enumerate().map(|(i, r)| r[i].ln()).sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn factor_and_solve_small_system() {
        let a = vec![vec![4.0, 2.0, 0.4], vec![2.0, 5.0, 1.0], vec![0.4, 1.0, 3.0]];
        let l = cholesky(&a).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let v: f64 = (0..3).map(|k| l[i][k] * l[j][k]).sum();
                assert!((v - a[i][j]).abs() < 1e-12);
            }
        }
        let x = cho_solve(&l, &[1.0, 2.0, 3.0]);
        for i in 0..3 {
            let v: f64 = (0..3).map(|k| a[i][k] * x[k]).sum();
            assert!((v - [1.0, 2.0, 3.0][i]).abs() < 1e-12);
        }
        let det = 4.0 * (5.0 * 3.0 - 1.0) - 2.0 * (2.0 * 3.0 - 0.4) + 0.4 * (2.0 - 5.0 * 0.4);
        assert!((log_det_from_cholesky(&l) - f64::ln(det)).abs() < 1e-12);
    }

    #[test]
    fn singular_matrix_needs_jitter() {
        let a = vec![vec![1.0, 1.0], vec![1.0, 1.0]];
        assert!(cholesky(&a).is_none());
        let (_, j) = cholesky_jittered(&a, 1e-10).unwrap();
        assert!((1e-10..=MAX_JITTER).contains(&j));
    }

    #[test]
    fn indefinite_matrix_fails_after_escalation() {
        let a = vec![vec![1.0, 2.0], vec![2.0, 1.0]];
        assert!(matches!(cholesky_jittered(&a, 1e-10), Err(Error::Conditioning { .. })));
    }
}
