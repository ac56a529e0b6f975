//! Batch EDMD: Gram accumulation and the plain / λ-regularized solves.
//!
//! With row-vector lifting `Ψ(x) ∈ ℝ^{1×K}`,
//! `G = Σ Ψ(xᵢ)ᵀΨ(xᵢ)` and `A = Σ Ψ(xᵢ)ᵀΨ(yᵢ)`, optionally divided by `M`.
//! The operator satisfies `Ψ(y) ≈ Ψ(x)·K`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::lifting::{Dictionary, SnapshotPair};
use crate::linalg;
use crate::scalar::Scalar;

/// Relative singular-value cutoff for the unregularized solve.
pub const PINV_CUTOFF: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct GramPair<T: Scalar> {
    pub g: DMatrix<T>,
    pub a: DMatrix<T>,
    pub m: usize,
    pub normalized: bool,
}

impl<T: Scalar> GramPair<T> {
    pub fn zeros(k: usize, normalized: bool) -> Self {
        GramPair {
            g: DMatrix::zeros(k, k),
            a: DMatrix::zeros(k, k),
            m: 0,
            normalized,
        }
    }

    pub fn dim(&self) -> usize {
        self.g.nrows()
    }

    /// Converts between the `1/M`-scaled and raw-sum conventions.
    pub fn with_normalization(&self, normalized: bool) -> Self {
        if normalized == self.normalized || self.m == 0 {
            return GramPair {
                normalized,
                ..self.clone()
            };
        }
        let m = T::of(self.m as f64);
        let s = if normalized { T::one() / m } else { m };
        GramPair {
            g: &self.g * s,
            a: &self.a * s,
            m: self.m,
            normalized,
        }
    }
}

/// Accumulates `G` and `A` over `pairs`.
pub fn accumulate_gram<T: Scalar>(
    dict: &Dictionary<T>,
    pairs: &[SnapshotPair<T>],
    normalized: bool,
) -> Result<GramPair<T>> {
    let k = dict.total_dim();
    let n = dict.state_dim();
    let mut psi_x = DMatrix::zeros(pairs.len(), k);
    let mut psi_y = DMatrix::zeros(pairs.len(), k);
    let mut buf = vec![T::zero(); k];
    for (r, p) in pairs.iter().enumerate() {
        if p.x.len() != n || p.y.len() != n {
            return Err(Error::input(format!(
                "pair {r} has dimension {}/{}, dictionary expects {n}",
                p.x.len(),
                p.y.len()
            )));
        }
        dict.lift_into(p.x.as_slice(), &mut buf)?;
        psi_x.row_mut(r).copy_from_slice(&buf);
        dict.lift_into(p.y.as_slice(), &mut buf)?;
        psi_y.row_mut(r).copy_from_slice(&buf);
    }
    Ok(gram_from_lifted(&psi_x, &psi_y, normalized))
}

/// `G = ΨXᵀΨX`, `A = ΨXᵀΨY` from pre-lifted rows (`M×K` each).
pub fn gram_from_lifted<T: Scalar>(
    psi_x: &DMatrix<T>,
    psi_y: &DMatrix<T>,
    normalized: bool,
) -> GramPair<T> {
    assert_eq!(psi_x.shape(), psi_y.shape(), "lifted blocks differ in shape");
    let m = psi_x.nrows();
    let mut g = psi_x.tr_mul(psi_x);
    let mut a = psi_x.tr_mul(psi_y);
    linalg::symmetrize(&mut g);
    if normalized && m > 0 {
        let s = T::one() / T::of(m as f64);
        g *= s;
        a *= s;
    }
    GramPair {
        g,
        a,
        m,
        normalized,
    }
}

/// Minimum-norm solution of `min ‖G·K − A‖_F`.
pub fn solve_edmd<T: Scalar>(gp: &GramPair<T>) -> DMatrix<T> {
    linalg::pinv_solve(&gp.g, &gp.a, T::of(PINV_CUTOFF))
}

/// `K = (G + λI)⁻¹A` via Cholesky.
pub fn solve_robust<T: Scalar>(gp: &GramPair<T>, lambda: T) -> Result<DMatrix<T>> {
    if !(lambda > T::zero()) || !lambda.finite() {
        return Err(Error::config(
            "robust solve needs lambda > 0 (use solve_edmd for the unregularized problem)",
        ));
    }
    let mut reg = gp.g.clone();
    for i in 0..reg.nrows() {
        reg[(i, i)] += lambda;
    }
    linalg::spd_solve(&reg, &gp.a)
}
