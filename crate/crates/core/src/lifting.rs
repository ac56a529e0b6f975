//! Observable dictionaries and the lifting map `x ↦ Ψ(x)`.
//!
//! A dictionary is laid out as `[constant?, identity (N)?, RBF_1..RBF_R]`
//! with isotropic Gaussian RBFs `exp(−‖x − c‖² / (2s²))`.

use std::collections::HashSet;
use std::path::Path;

use log::warn;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Default number of samples buffered before the dictionary is frozen.
pub const DEFAULT_WARMUP: usize = 100;

const KMEANS_MAX_ITERS: usize = 100;

/// User-facing dictionary configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DictionarySpec {
    pub num_rbf: usize,
    /// Fixed RBF width; `None` selects the median pairwise center distance.
    pub bandwidth: Option<f64>,
    pub include_identity: bool,
    pub include_constant: bool,
    /// Seed for k-means++ center initialisation.
    pub seed: u64,
    /// Warmup buffer length used by the pipeline before freezing.
    pub warmup: usize,
}

impl Default for DictionarySpec {
    fn default() -> Self {
        DictionarySpec {
            num_rbf: 0,
            bandwidth: None,
            include_identity: true,
            include_constant: true,
            seed: 0,
            warmup: DEFAULT_WARMUP,
        }
    }
}

impl DictionarySpec {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::config(format!("dictionary spec: {e}")))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }
}

/// One `(x, y = T(x))` sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotPair<T: Scalar> {
    pub x: DVector<T>,
    pub y: DVector<T>,
}

impl<T: Scalar> SnapshotPair<T> {
    pub fn new(x: DVector<T>, y: DVector<T>) -> Result<Self> {
        if x.len() != y.len() {
            return Err(Error::input(format!(
                "snapshot pair has mismatched lengths {} and {}",
                x.len(),
                y.len()
            )));
        }
        if !x.iter().chain(y.iter()).all(|v| v.finite()) {
            return Err(Error::input("snapshot pair contains non-finite values"));
        }
        Ok(SnapshotPair { x, y })
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }
}

/// A frozen observable map `ℝᴺ → ℝᴷ`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary<T: Scalar> {
    state_dim: usize,
    include_constant: bool,
    include_identity: bool,
    /// `num_rbf × N`, one center per row.
    centers: DMatrix<T>,
    bandwidth: T,
    inv_two_s2: T,
}

impl<T: Scalar> Dictionary<T> {
    pub fn new(
        state_dim: usize,
        include_constant: bool,
        include_identity: bool,
        centers: DMatrix<T>,
        bandwidth: T,
    ) -> Result<Self> {
        if state_dim == 0 {
            return Err(Error::config("state dimension must be positive"));
        }
        if centers.nrows() > 0 && centers.ncols() != state_dim {
            return Err(Error::config(format!(
                "RBF centers have {} columns, expected {state_dim}",
                centers.ncols()
            )));
        }
        if !(bandwidth > T::zero()) || !bandwidth.finite() {
            return Err(Error::config("RBF bandwidth must be positive and finite"));
        }
        if !centers.iter().all(|v| v.finite()) {
            return Err(Error::config("RBF centers must be finite"));
        }
        let centers = if centers.nrows() == 0 {
            DMatrix::zeros(0, state_dim)
        } else {
            centers
        };
        let inv_two_s2 = T::one() / (T::of(2.0) * bandwidth * bandwidth);
        Ok(Dictionary {
            state_dim,
            include_constant,
            include_identity,
            centers,
            bandwidth,
            inv_two_s2,
        })
    }

    /// Identity observables only: `Ψ(x) = x`.
    pub fn identity(state_dim: usize) -> Result<Self> {
        Self::new(state_dim, false, true, DMatrix::zeros(0, state_dim), T::one())
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn num_rbf(&self) -> usize {
        self.centers.nrows()
    }

    pub fn includes_constant(&self) -> bool {
        self.include_constant
    }

    pub fn includes_identity(&self) -> bool {
        self.include_identity
    }

    pub fn centers(&self) -> &DMatrix<T> {
        &self.centers
    }

    pub fn bandwidth(&self) -> T {
        self.bandwidth
    }

    /// K, the lifted dimension.
    pub fn total_dim(&self) -> usize {
        usize::from(self.include_constant)
            + if self.include_identity { self.state_dim } else { 0 }
            + self.num_rbf()
    }

    /// Offset of the identity block inside a lifted vector, if present.
    pub fn identity_offset(&self) -> Option<usize> {
        self.include_identity.then_some(usize::from(self.include_constant))
    }

    fn rbf_offset(&self) -> usize {
        self.total_dim() - self.num_rbf()
    }

    /// Writes `Ψ(x)` into `out` (length K).
    pub fn lift_into(&self, x: &[T], out: &mut [T]) -> Result<()> {
        if x.len() != self.state_dim {
            return Err(Error::input(format!(
                "state has length {}, dictionary expects {}",
                x.len(),
                self.state_dim
            )));
        }
        if !x.iter().all(|v| v.finite()) {
            return Err(Error::input("state contains non-finite values"));
        }
        assert_eq!(out.len(), self.total_dim(), "output buffer has wrong length");
        let mut k = 0;
        if self.include_constant {
            out[0] = T::one();
            k = 1;
        }
        if self.include_identity {
            out[k..k + self.state_dim].copy_from_slice(x);
        }
        let off = self.rbf_offset();
        for j in 0..self.num_rbf() {
            let mut d2 = T::zero();
            for (i, xi) in x.iter().enumerate() {
                let d = *xi - self.centers[(j, i)];
                d2 += d * d;
            }
            out[off + j] = (-(d2 * self.inv_two_s2)).exp();
        }
        Ok(())
    }

    pub fn lift(&self, x: &[T]) -> Result<DVector<T>> {
        let mut out = DVector::zeros(self.total_dim());
        self.lift_into(x, out.as_mut_slice())?;
        Ok(out)
    }

    /// Lifts every row of `states` (M×N) into an M×K matrix.
    pub fn lift_batch(&self, states: &DMatrix<T>) -> Result<DMatrix<T>> {
        if states.nrows() > 0 && states.ncols() != self.state_dim {
            return Err(Error::input(format!(
                "batch has {} columns, dictionary expects {}",
                states.ncols(),
                self.state_dim
            )));
        }
        let k = self.total_dim();
        let mut out = DMatrix::zeros(states.nrows(), k);
        let mut x = vec![T::zero(); self.state_dim];
        let mut row = vec![T::zero(); k];
        for r in 0..states.nrows() {
            for (c, xc) in x.iter_mut().enumerate() {
                *xc = states[(r, c)];
            }
            self.lift_into(&x, &mut row)?;
            for (c, v) in row.iter().enumerate() {
                out[(r, c)] = *v;
            }
        }
        Ok(out)
    }
}

/// Outcome of dictionary construction.
#[derive(Debug, Clone)]
pub struct DictionaryBuild<T: Scalar> {
    pub dictionary: Dictionary<T>,
    pub warnings: Vec<String>,
}

/// Builds a dictionary whose RBF centers come from seeded k-means on `warmup`.
pub fn build_dictionary<T: Scalar>(
    spec: &DictionarySpec,
    warmup: &[DVector<T>],
) -> Result<DictionaryBuild<T>> {
    let mut warnings = Vec::new();
    let state_dim = match warmup.first() {
        Some(x) => x.len(),
        None if spec.num_rbf == 0 => {
            return Err(Error::config(
                "cannot infer state dimension from an empty warmup buffer",
            ))
        }
        None => return Err(Error::config("warmup buffer is empty but num_rbf > 0")),
    };
    if warmup.iter().any(|x| x.len() != state_dim) {
        return Err(Error::input("warmup states have inconsistent dimensions"));
    }
    if let Some(s) = spec.bandwidth {
        if !(s > 0.0) || !s.is_finite() {
            return Err(Error::config("bandwidth override must be positive"));
        }
    }

    let points: Vec<Vec<f64>> = warmup
        .iter()
        .map(|x| x.iter().map(|v| v.to_f64_lossy()).collect())
        .collect();
    if points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::input("warmup contains non-finite values"));
    }

    let mut centers = Vec::new();
    if spec.num_rbf > 0 {
        let distinct = distinct_points(&points);
        let k = if distinct.len() < spec.num_rbf {
            let msg = format!(
                "warmup has only {} distinct points; reducing RBF count from {} to {}",
                distinct.len(),
                spec.num_rbf,
                distinct.len()
            );
            warn!("{msg}");
            warnings.push(msg);
            distinct.len()
        } else {
            spec.num_rbf
        };
        centers = kmeans(&points, &distinct, k, spec.seed);
    }

    let bandwidth = match spec.bandwidth {
        Some(s) => s,
        None => match median_pairwise_distance(&centers) {
            Some(s) if s > 0.0 => s,
            _ => {
                if spec.num_rbf > 0 {
                    let msg = "fewer than two distinct centers; bandwidth defaults to 1".to_string();
                    warn!("{msg}");
                    warnings.push(msg);
                }
                1.0
            }
        },
    };

    let center_mat = DMatrix::from_fn(centers.len(), state_dim, |r, c| T::of(centers[r][c]));
    let dictionary = Dictionary::new(
        state_dim,
        spec.include_constant,
        spec.include_identity,
        center_mat,
        T::of(bandwidth),
    )?;
    Ok(DictionaryBuild {
        dictionary,
        warnings,
    })
}

/// Indices of the first occurrence of every bitwise-distinct point.
fn distinct_points(points: &[Vec<f64>]) -> Vec<usize> {
    let mut seen = HashSet::new();
    points
        .iter()
        .enumerate()
        .filter(|(_, p)| seen.insert(p.iter().map(|v| v.to_bits()).collect::<Vec<_>>()))
        .map(|(i, _)| i)
        .collect()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// k-means++ seeding over the distinct points followed by Lloyd iterations.
fn kmeans(points: &[Vec<f64>], distinct: &[usize], k: usize, seed: u64) -> Vec<Vec<f64>> {
    if k == 0 {
        return Vec::new();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cand: Vec<&Vec<f64>> = distinct.iter().map(|&i| &points[i]).collect();

    let mut centers: Vec<Vec<f64>> = vec![cand[rng.random_range(0..cand.len())].clone()];
    let mut d2: Vec<f64> = cand.iter().map(|p| sq_dist(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut idx = d2.len() - 1;
            for (i, w) in d2.iter().enumerate() {
                if *w > 0.0 && target < *w {
                    idx = i;
                    break;
                }
                target -= w;
            }
            // rounding can leave target past the last positive weight
            if d2[idx] == 0.0 {
                idx = d2.iter().rposition(|w| *w > 0.0).unwrap_or(idx);
            }
            idx
        } else {
            break;
        };
        let c = cand[pick].clone();
        for (w, p) in d2.iter_mut().zip(&cand) {
            *w = w.min(sq_dist(p, &c));
        }
        centers.push(c);
    }

    let dim = points[0].len();
    let mut labels = vec![usize::MAX; points.len()];
    for _ in 0..KMEANS_MAX_ITERS {
        let mut changed = false;
        for (p, label) in points.iter().zip(labels.iter_mut()) {
            let best = centers
                .iter()
                .enumerate()
                .map(|(j, c)| (j, sq_dist(p, c)))
                .fold((0, f64::INFINITY), |acc, cur| if cur.1 < acc.1 { cur } else { acc })
                .0;
            if *label != best {
                *label = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = vec![vec![0.0; dim]; centers.len()];
        let mut counts = vec![0usize; centers.len()];
        for (p, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            for (s, v) in sums[l].iter_mut().zip(p) {
                *s += v;
            }
        }
        for ((c, s), n) in centers.iter_mut().zip(sums).zip(counts) {
            // empty clusters keep their previous center
            if n > 0 {
                *c = s.into_iter().map(|v| v / n as f64).collect();
            }
        }
    }
    centers
}

fn median_pairwise_distance(centers: &[Vec<f64>]) -> Option<f64> {
    let mut d = Vec::new();
    for i in 0..centers.len() {
        for j in (i + 1)..centers.len() {
            d.push(sq_dist(&centers[i], &centers[j]).sqrt());
        }
    }
    if d.is_empty() {
        return None;
    }
    d.sort_by(f64::total_cmp);
    let n = d.len();
    Some(if n % 2 == 1 {
        d[n / 2]
    } else {
        0.5 * (d[n / 2 - 1] + d[n / 2])
    })
}
