//! Minimal dense linear algebra for the small (p+1)-dimensional systems the
//! sampler and the propensity model need. Matrices are row-major `Vec<F>`.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
///
/// `a` is `dim x dim` row-major; only the lower triangle is read.
/// Fails with the index of the first non-positive pivot.
pub fn cholesky<F: Scalar>(a: &[F], dim: usize) -> Result<Vec<F>> {
    assert_eq!(a.len(), dim * dim);
    let mut l = vec![F::zero(); dim * dim];
    for i in 0..dim {
        for j in 0..=i {
            let mut s = a[i * dim + j];
            for k in 0..j {
                s -= l[i * dim + k] * l[j * dim + k];
            }
            if i == j {
                if s <= F::zero() || !s.is_finite() {
                    return Err(Error::numeric(format!(
                        "matrix not positive definite: pivot {i} is {}",
                        s.f64()
                    )));
                }
                l[i * dim + j] = s.sqrt();
            } else {
                l[i * dim + j] = s / l[j * dim + j];
            }
        }
    }
    Ok(l)
}

/// Solves `A x = b` given the Cholesky factor `l` of A (forward then back
/// substitution).
pub fn cholesky_solve<F: Scalar>(l: &[F], dim: usize, b: &[F]) -> Vec<F> {
    let mut y = b.to_vec();
    for i in 0..dim {
        for k in 0..i {
            let t = l[i * dim + k] * y[k];
            y[i] -= t;
        }
        y[i] /= l[i * dim + i];
    }
    for i in (0..dim).rev() {
        for k in (i + 1)..dim {
            let t = l[k * dim + i] * y[k];
            y[i] -= t;
        }
        y[i] /= l[i * dim + i];
    }
    y
}

/// Solves `L' x = b` for lower-triangular `L` (back substitution on the
/// transpose). With `W = L L'`, `x = m + (L')^{-1} z` has covariance `W^{-1}`.
pub fn lower_transpose_solve<F: Scalar>(l: &[F], dim: usize, b: &[F]) -> Vec<F> {
    let mut x = b.to_vec();
    for i in (0..dim).rev() {
        for k in (i + 1)..dim {
            let t = l[k * dim + i] * x[k];
            x[i] -= t;
        }
        x[i] /= l[i * dim + i];
    }
    x
}

/// `L z` for lower-triangular `L` (used to correlate standard-normal draws).
pub fn lower_mul<F: Scalar>(l: &[F], dim: usize, z: &[F]) -> Vec<F> {
    let mut out = vec![F::zero(); dim];
    for i in 0..dim {
        let mut s = F::zero();
        for k in 0..=i {
            s += l[i * dim + k] * z[k];
        }
        out[i] = s;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cholesky_identity() {
        let a = vec![1.0_f64, 0.0, 0.0, 1.0];
        let l = cholesky(&a, 2).unwrap();
        assert_eq!(l, a);
    }

    #[test]
    fn solve_against_hand_computed() {
        // A = [[4,2],[2,3]], b = [2,5] -> x = [-1/2, 2]
        let a = vec![4.0_f64, 2.0, 2.0, 3.0];
        let l = cholesky(&a, 2).unwrap();
        let x = cholesky_solve(&l, 2, &[2.0, 5.0]);
        assert!((x[0] + 0.5).abs() < 1e-12);
        assert!((x[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn non_pd_reports_pivot() {
        // Second pivot fails: the matrix is rank one.
        let a = vec![1.0_f64, 1.0, 1.0, 1.0];
        let err = cholesky(&a, 2).unwrap_err();
        assert!(err.to_string().contains("pivot 1"), "{err}");
    }
}
