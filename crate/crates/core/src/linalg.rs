//! Small dense helpers on top of nalgebra.

use nalgebra::{Cholesky, DMatrix, SVD};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Replaces `m` by `(m + mᵀ) / 2`.
pub fn symmetrize<T: Scalar>(m: &mut DMatrix<T>) {
    let n = m.nrows();
    debug_assert_eq!(n, m.ncols());
    let half = T::of(0.5);
    for j in 0..n {
        for i in (j + 1)..n {
            let v = (m[(i, j)] + m[(j, i)]) * half;
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Inverse of a symmetric positive-definite matrix via Cholesky, re-symmetrized.
pub fn spd_inverse<T: Scalar>(m: &DMatrix<T>) -> Result<DMatrix<T>> {
    let chol = Cholesky::new(m.clone())
        .ok_or_else(|| Error::Numerical("matrix is not positive definite".into()))?;
    let mut inv = chol.inverse();
    symmetrize(&mut inv);
    Ok(inv)
}

/// Solves `m·X = rhs` for SPD `m`.
pub fn spd_solve<T: Scalar>(m: &DMatrix<T>, rhs: &DMatrix<T>) -> Result<DMatrix<T>> {
    let chol = Cholesky::new(m.clone())
        .ok_or_else(|| Error::Numerical("matrix is not positive definite".into()))?;
    Ok(chol.solve(rhs))
}

/// Minimum-norm least-squares solution of `m·X = rhs`, discarding singular
/// values below `rel_cutoff · σ_max`.
pub fn pinv_solve<T: Scalar>(m: &DMatrix<T>, rhs: &DMatrix<T>, rel_cutoff: T) -> DMatrix<T> {
    let svd = SVD::new(m.clone(), true, true);
    let smax = svd.singular_values.iter().copied().fold(T::zero(), |a, b| a.max(b));
    if smax <= T::zero() {
        return DMatrix::zeros(m.ncols(), rhs.ncols());
    }
    let cutoff = rel_cutoff * smax;
    let u = svd.u.as_ref().expect("u requested");
    let vt = svd.v_t.as_ref().expect("v_t requested");
    // X = V Σ⁺ Uᵀ rhs
    let mut utb = u.tr_mul(rhs);
    for (i, s) in svd.singular_values.iter().enumerate() {
        let scale = if *s > cutoff { T::one() / *s } else { T::zero() };
        utb.row_mut(i).scale_mut(scale);
    }
    vt.tr_mul(&utb)
}

pub fn frobenius<T: Scalar>(m: &DMatrix<T>) -> T {
    m.iter().fold(T::zero(), |acc, v| acc + *v * *v).sqrt()
}

/// `‖a − b‖_F / ‖b‖_F`, or the absolute difference when `b` is zero.
pub fn rel_frobenius_diff<T: Scalar>(a: &DMatrix<T>, b: &DMatrix<T>) -> T {
    let diff = frobenius(&(a - b));
    let scale = frobenius(b);
    if scale > T::zero() {
        diff / scale
    } else {
        diff
    }
}

/// `‖inv·m − I‖_F`.
pub fn inverse_defect<T: Scalar>(inv: &DMatrix<T>, m: &DMatrix<T>) -> T {
    let mut p = inv * m;
    for i in 0..p.nrows() {
        p[(i, i)] -= T::one();
    }
    frobenius(&p)
}

pub fn all_finite<T: Scalar>(m: &DMatrix<T>) -> bool {
    m.iter().all(|v| v.finite())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pinv_of_zero_is_zero() {
        let z = DMatrix::<f64>::zeros(3, 3);
        assert_eq!(pinv_solve(&z, &z, 1e-10), z);
    }

    #[test]
    fn pinv_matches_inverse_when_full_rank() {
        let m = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let rhs = DMatrix::identity(2, 2);
        let x = pinv_solve(&m, &rhs, 1e-10);
        assert!(inverse_defect(&x, &m) < 1e-12);
    }

    #[test]
    fn pinv_is_minimum_norm_on_rank_deficient() {
        // [[1,1],[1,1]] x = [2,2]  -> minimum-norm x = [1,1]
        let m = DMatrix::from_element(2, 2, 1.0f64);
        let rhs = DMatrix::from_column_slice(2, 1, &[2.0, 2.0]);
        let x = pinv_solve(&m, &rhs, 1e-10);
        assert!((x[(0, 0)] - 1.0).abs() < 1e-12 && (x[(1, 0)] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn spd_inverse_rejects_indefinite() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(spd_inverse(&m), Err(Error::Numerical(_))));
    }
}
