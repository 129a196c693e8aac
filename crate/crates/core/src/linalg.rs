use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Cholesky factor together with the diagonal jitter that was needed.
#[derive(Debug, Clone)]
pub(crate) struct JitteredCholesky {
    pub chol: Cholesky<f64, Dyn>,
    pub jitter: f64,
}

impl JitteredCholesky {
    pub fn l(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    pub fn log_det(&self) -> f64 {
        2.0 * self.chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>()
    }
}

/// Factorizes `m + base·mean(diag)·I`. On failure the jitter restarts at
/// `1e-8·mean(diag)` and grows ×10 up to `1e-2·mean(diag)`.
pub(crate) fn cholesky_with_jitter(m: &DMatrix<f64>, base_rel: f64) -> Result<JitteredCholesky> {
    let n = m.nrows();
    let mean_diag = (m.trace() / n as f64).abs().max(f64::MIN_POSITIVE);
    let mut rel = base_rel;
    loop {
        let jitter = rel * mean_diag;
        let mut a = m.clone();
        if jitter > 0.0 {
            for i in 0..n {
                a[(i, i)] += jitter;
            }
        }
        if a.iter().all(|v| v.is_finite()) {
            if let Some(chol) = Cholesky::new(a) {
                if chol.l_dirty().diagonal().iter().all(|v| *v > 0.0 && v.is_finite()) {
                    return Ok(JitteredCholesky { chol, jitter });
                }
            }
        }
        rel = if rel < 1e-8 { 1e-8 } else { rel * 10.0 };
        if rel > 1e-2 * (1.0 + 1e-9) {
            return Err(Error::Factorization { jitter: 1e-2 * mean_diag });
        }
    }
}

/// `L⁻¹ B` for lower-triangular `L`.
pub(crate) fn solve_lower(l: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    l.solve_lower_triangular(b).expect("triangular factor has a positive diagonal")
}

pub(crate) fn solve_lower_vec(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    l.solve_lower_triangular(b).expect("triangular factor has a positive diagonal")
}

/// `L⁻ᵀ b` for lower-triangular `L`.
pub(crate) fn solve_upper_t_vec(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    l.tr_solve_lower_triangular(b).expect("triangular factor has a positive diagonal")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn singular_matrix_gets_jitter() {
        let m = DMatrix::from_element(3, 3, 1.0);
        let f = cholesky_with_jitter(&m, 0.0).unwrap();
        assert!(f.jitter > 0.0 && f.jitter <= 1e-2);
        let pd = DMatrix::<f64>::identity(3, 3) * 2.0;
        let f = cholesky_with_jitter(&pd, 0.0).unwrap();
        assert_eq!(f.jitter, 0.0);
        assert!((f.log_det() - 3.0 * 2f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn indefinite_matrix_fails() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(matches!(cholesky_with_jitter(&m, 0.0), Err(Error::Factorization { .. })));
    }
}
