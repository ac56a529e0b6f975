//! Recursive robust EDMD.
//!
//! The model keeps `Ĝ = Σ ψxᵀψx + λI`, its inverse, and `A = Σ ψxᵀψy`.
//! Each sample costs O(K²): `A` and `Ĝ` take a rank-one addition and `Ĝ⁻¹`
//! a Sherman–Morrison downdate. The operator `Ĝ⁻¹A` is only formed on request.

use std::time::{Duration, Instant};

use log::{debug, warn};
use nalgebra::DMatrix;

use crate::edmd::{self, GramPair};
use crate::error::{Error, Result};
use crate::lifting::{Dictionary, SnapshotPair};
use crate::linalg;
use crate::scalar::Scalar;

/// Default full re-factorization cadence.
pub const DEFAULT_REFRESH_PERIOD: usize = 1000;

/// Share of unusable stream items above which a run aborts.
pub const MAX_SKIP_FRACTION: f64 = 0.10;

/// Items seen before the skip ratio is enforced mid-stream.
const SKIP_CHECK_MIN_ITEMS: usize = 100;

/// What happened during one call to [`KoopmanModel::update`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateStatus {
    Applied,
    /// The periodic refresh ran after this sample.
    Refreshed,
    /// The Sherman–Morrison denominator was not positive; the inverse was
    /// rebuilt from `Ĝ`.
    Recovered,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KoopmanModel<T: Scalar> {
    lambda: T,
    g_hat: DMatrix<T>,
    g_hat_inv: DMatrix<T>,
    a: DMatrix<T>,
    m: usize,
    refresh_period: usize,
    // scratch for Ĝ⁻¹ψᵀ
    work: Vec<T>,
}

impl<T: Scalar> KoopmanModel<T> {
    /// `Ĝ₀ = λI`, `A₀ = 0`. `refresh_period = 0` disables refreshes.
    pub fn new(k_dim: usize, lambda: T, refresh_period: usize) -> Result<Self> {
        check_lambda(lambda)?;
        if k_dim == 0 {
            return Err(Error::config("operator dimension must be positive"));
        }
        let mut g_hat = DMatrix::zeros(k_dim, k_dim);
        let mut g_hat_inv = DMatrix::zeros(k_dim, k_dim);
        let inv = T::one() / lambda;
        for i in 0..k_dim {
            g_hat[(i, i)] = lambda;
            g_hat_inv[(i, i)] = inv;
        }
        Ok(KoopmanModel {
            lambda,
            g_hat,
            g_hat_inv,
            a: DMatrix::zeros(k_dim, k_dim),
            m: 0,
            refresh_period,
            work: vec![T::zero(); k_dim],
        })
    }

    /// Starts from the closed-form solution over an initial batch of pairs.
    pub fn from_batch(
        dict: &Dictionary<T>,
        pairs: &[SnapshotPair<T>],
        lambda: T,
        refresh_period: usize,
    ) -> Result<Self> {
        check_lambda(lambda)?;
        let gp = edmd::accumulate_gram(dict, pairs, false)?;
        let k = gp.dim();
        let mut g_hat = gp.g;
        for i in 0..k {
            g_hat[(i, i)] += lambda;
        }
        let g_hat_inv = linalg::spd_inverse(&g_hat)?;
        Ok(KoopmanModel {
            lambda,
            g_hat,
            g_hat_inv,
            a: gp.a,
            m: pairs.len(),
            refresh_period,
            work: vec![T::zero(); k],
        })
    }

    /// Reassembles a model from stored parts (checkpoint loading).
    pub fn from_parts(
        lambda: T,
        g_hat: DMatrix<T>,
        g_hat_inv: DMatrix<T>,
        a: DMatrix<T>,
        m: usize,
        refresh_period: usize,
    ) -> Result<Self> {
        check_lambda(lambda)?;
        let k = g_hat.nrows();
        if k == 0
            || g_hat.shape() != (k, k)
            || g_hat_inv.shape() != (k, k)
            || a.shape() != (k, k)
        {
            return Err(Error::format("model matrices have inconsistent shapes"));
        }
        Ok(KoopmanModel {
            lambda,
            g_hat,
            g_hat_inv,
            a,
            m,
            refresh_period,
            work: vec![T::zero(); k],
        })
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn lambda(&self) -> T {
        self.lambda
    }

    pub fn samples(&self) -> usize {
        self.m
    }

    pub fn refresh_period(&self) -> usize {
        self.refresh_period
    }

    pub fn g_hat(&self) -> &DMatrix<T> {
        &self.g_hat
    }

    pub fn g_hat_inv(&self) -> &DMatrix<T> {
        &self.g_hat_inv
    }

    pub fn a(&self) -> &DMatrix<T> {
        &self.a
    }

    /// Absorbs one pair, lifting it with `dict`. On error the model is unchanged.
    pub fn update(&mut self, dict: &Dictionary<T>, pair: &SnapshotPair<T>) -> Result<UpdateStatus> {
        if dict.total_dim() != self.dim() {
            return Err(Error::config(format!(
                "dictionary lifts to {} but model has dimension {}",
                dict.total_dim(),
                self.dim()
            )));
        }
        let psi_x = dict.lift(pair.x.as_slice())?;
        let psi_y = dict.lift(pair.y.as_slice())?;
        self.update_lifted(psi_x.as_slice(), psi_y.as_slice())
    }

    /// Absorbs one pre-lifted pair `(ψx, ψy)`.
    pub fn update_lifted(&mut self, psi_x: &[T], psi_y: &[T]) -> Result<UpdateStatus> {
        let k = self.dim();
        if psi_x.len() != k || psi_y.len() != k {
            return Err(Error::input(format!(
                "lifted pair has lengths {}/{}, model expects {k}",
                psi_x.len(),
                psi_y.len()
            )));
        }
        if !psi_x.iter().chain(psi_y).all(|v| v.finite()) {
            return Err(Error::input("lifted pair contains non-finite values"));
        }

        // u = Ĝ⁻¹ψxᵀ; Ĝ⁻¹ is symmetric so column i dotted with ψ is row i.
        let inv = self.g_hat_inv.as_slice();
        let mut denom = T::one();
        for i in 0..k {
            let col = &inv[i * k..(i + 1) * k];
            let ui = dot(col, psi_x);
            self.work[i] = ui;
            denom += psi_x[i] * ui;
        }

        let corrupted = !(denom > T::zero()) || !denom.finite();
        if !corrupted {
            // Ĝ⁻¹ ← Ĝ⁻¹ − u uᵀ / denom. The product (u_i·u_j)·c is symmetric
            // bitwise, so a symmetric inverse stays symmetric.
            let c = T::one() / denom;
            let inv = self.g_hat_inv.as_mut_slice();
            for j in 0..k {
                let uj = self.work[j];
                if uj == T::zero() {
                    continue;
                }
                let col = &mut inv[j * k..(j + 1) * k];
                for (v, ui) in col.iter_mut().zip(&self.work) {
                    *v -= (*ui * uj) * c;
                }
            }
        }

        rank_one_add(self.g_hat.as_mut_slice(), psi_x, psi_x, k);
        rank_one_add(self.a.as_mut_slice(), psi_x, psi_y, k);
        self.m += 1;

        if corrupted {
            warn!(
                "Sherman-Morrison denominator {} at sample {}; rebuilding inverse",
                denom, self.m
            );
            self.refresh()?;
            return Ok(UpdateStatus::Recovered);
        }
        if self.refresh_period > 0 && self.m.is_multiple_of(self.refresh_period) {
            self.refresh()?;
            return Ok(UpdateStatus::Refreshed);
        }
        Ok(UpdateStatus::Applied)
    }

    /// Recomputes `Ĝ⁻¹` from `Ĝ` by Cholesky.
    pub fn refresh(&mut self) -> Result<()> {
        self.g_hat_inv = linalg::spd_inverse(&self.g_hat)?;
        debug!("refreshed inverse at M = {}", self.m);
        Ok(())
    }

    /// `K = Ĝ⁻¹A`. O(K³).
    pub fn operator(&self) -> DMatrix<T> {
        &self.g_hat_inv * &self.a
    }

    /// `‖Ĝ⁻¹Ĝ − I‖_F`.
    pub fn inverse_defect(&self) -> T {
        linalg::inverse_defect(&self.g_hat_inv, &self.g_hat)
    }

    /// Accumulated sums without the regularizer (for oracle comparisons).
    pub fn gram_pair(&self) -> GramPair<T> {
        let mut g = self.g_hat.clone();
        for i in 0..g.nrows() {
            g[(i, i)] -= self.lambda;
        }
        GramPair {
            g,
            a: self.a.clone(),
            m: self.m,
            normalized: false,
        }
    }

    pub fn snapshot(&self) -> ModelSnapshot<T> {
        ModelSnapshot {
            lambda: self.lambda,
            g_hat_inv: self.g_hat_inv.clone(),
            a: self.a.clone(),
            m: self.m,
        }
    }
}

/// Four independent partial sums so the loop vectorizes; the summation order
/// is fixed, so results stay deterministic.
#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [T::zero(); 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in ca.by_ref().zip(cb.by_ref()) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut tail = T::zero();
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        tail += *x * *y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `mat += xᵀy` on a column-major K×K slice.
#[inline]
fn rank_one_add<T: Scalar>(mat: &mut [T], x: &[T], y: &[T], k: usize) {
    for (j, yj) in y.iter().enumerate() {
        if *yj == T::zero() {
            continue;
        }
        let col = &mut mat[j * k..(j + 1) * k];
        for (v, xi) in col.iter_mut().zip(x) {
            *v += *xi * *yj;
        }
    }
}

fn check_lambda<T: Scalar>(lambda: T) -> Result<()> {
    if !(lambda > T::zero()) || !lambda.finite() {
        return Err(Error::config("lambda must be positive and finite"));
    }
    Ok(())
}

/// Read-only deep copy handed to observers; safe to send across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSnapshot<T: Scalar> {
    pub lambda: T,
    pub g_hat_inv: DMatrix<T>,
    pub a: DMatrix<T>,
    pub m: usize,
}

impl<T: Scalar> ModelSnapshot<T> {
    pub fn operator(&self) -> DMatrix<T> {
        &self.g_hat_inv * &self.a
    }
}

/// Receives snapshots from [`run_stream`] at the configured cadence.
pub trait StreamObserver<T: Scalar> {
    fn observe(&mut self, snapshot: &ModelSnapshot<T>) -> Result<()>;
}

impl<T: Scalar, F> StreamObserver<T> for F
where
    F: FnMut(&ModelSnapshot<T>) -> Result<()>,
{
    fn observe(&mut self, snapshot: &ModelSnapshot<T>) -> Result<()> {
        self(snapshot)
    }
}

/// How the model is initialised before streaming.
#[derive(Debug, Clone, PartialEq)]
pub enum InitMode<T: Scalar> {
    /// `Ĝ₀ = λI`, `A₀ = 0`.
    Regularized,
    /// Closed form over the given initial batch.
    FromBatch(Vec<SnapshotPair<T>>),
    /// Continue an existing model (checkpoint resume).
    Resume(KoopmanModel<T>),
}

#[derive(Debug, Clone)]
pub struct StreamConfig<T: Scalar> {
    pub dictionary: Dictionary<T>,
    pub lambda: T,
    pub refresh_period: usize,
    /// Observers fire whenever `M` is a multiple of this; 0 disables them.
    pub observe_every: usize,
    pub init: InitMode<T>,
}

impl<T: Scalar> StreamConfig<T> {
    pub fn new(dictionary: Dictionary<T>, lambda: T) -> Self {
        StreamConfig {
            dictionary,
            lambda,
            refresh_period: DEFAULT_REFRESH_PERIOD,
            observe_every: 0,
            init: InitMode::Regularized,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StreamSummary {
    pub absorbed: usize,
    pub skipped: usize,
    pub refreshes: usize,
    pub recoveries: usize,
    pub update_time: Duration,
}

/// Consumes `source`, updating the model per item.
///
/// Item errors are skipped and counted; if more than 10% of the items are
/// unusable the run stops with [`Error::StreamQuality`].
pub fn run_stream<T, I, E>(
    source: I,
    cfg: StreamConfig<T>,
    observers: &mut [&mut dyn StreamObserver<T>],
) -> Result<(KoopmanModel<T>, StreamSummary)>
where
    T: Scalar,
    I: IntoIterator<Item = std::result::Result<SnapshotPair<T>, E>>,
    E: std::fmt::Display,
{
    let k = cfg.dictionary.total_dim();
    let mut model = match cfg.init {
        InitMode::Regularized => KoopmanModel::new(k, cfg.lambda, cfg.refresh_period)?,
        InitMode::FromBatch(ref batch) => {
            KoopmanModel::from_batch(&cfg.dictionary, batch, cfg.lambda, cfg.refresh_period)?
        }
        InitMode::Resume(m) => {
            if m.dim() != k {
                return Err(Error::config(format!(
                    "resumed model has dimension {}, dictionary lifts to {k}",
                    m.dim()
                )));
            }
            m
        }
    };
    let mut summary = StreamSummary {
        absorbed: 0,
        skipped: 0,
        refreshes: 0,
        recoveries: 0,
        update_time: Duration::ZERO,
    };
    let mut seen = 0usize;
    let too_many = |skipped: usize, seen: usize| skipped as f64 > MAX_SKIP_FRACTION * seen as f64;

    for item in source {
        seen += 1;
        let pair = match item {
            Ok(p) => p,
            Err(e) => {
                debug!("skipping stream item {seen}: {e}");
                summary.skipped += 1;
                if seen >= SKIP_CHECK_MIN_ITEMS && too_many(summary.skipped, seen) {
                    return Err(Error::StreamQuality {
                        skipped: summary.skipped,
                        seen,
                    });
                }
                continue;
            }
        };
        let t0 = Instant::now();
        let status = model.update(&cfg.dictionary, &pair);
        summary.update_time += t0.elapsed();
        match status {
            Ok(UpdateStatus::Applied) => {}
            Ok(UpdateStatus::Refreshed) => summary.refreshes += 1,
            Ok(UpdateStatus::Recovered) => summary.recoveries += 1,
            Err(Error::Input(msg)) => {
                debug!("skipping stream item {seen}: {msg}");
                summary.skipped += 1;
                continue;
            }
            Err(e) => return Err(e),
        }
        summary.absorbed += 1;
        if cfg.observe_every > 0 && model.samples() % cfg.observe_every == 0 && !observers.is_empty() {
            let snap = model.snapshot();
            for obs in observers.iter_mut() {
                obs.observe(&snap)?;
            }
        }
    }
    if seen > 0 && too_many(summary.skipped, seen) {
        return Err(Error::StreamQuality {
            skipped: summary.skipped,
            seen,
        });
    }
    if summary.skipped > 0 {
        warn!("skipped {} of {} stream items", summary.skipped, seen);
    }
    Ok((model, summary))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{inverse_defect, rel_frobenius_diff};
    use nalgebra::DVector;

    #[test]
    fn init_sets_scaled_identity() {
        let m = KoopmanModel::<f64>::new(3, 0.5, 0).unwrap();
        assert_eq!(m.g_hat_inv(), &(DMatrix::identity(3, 3) * 2.0));
        assert_eq!(m.a(), &DMatrix::zeros(3, 3));
        assert_eq!(m.samples(), 0);
    }

    #[test]
    fn fresh_operator_is_zero() {
        let m = KoopmanModel::<f64>::new(1, 1.0, 0).unwrap();
        assert_eq!(m.operator(), DMatrix::zeros(1, 1));
    }

    #[test]
    fn large_k_init() {
        let m = KoopmanModel::<f64>::new(150, 1e-3, 1000).unwrap();
        let expect = DMatrix::<f64>::identity(150, 150) * 1000.0;
        assert!((m.g_hat_inv() - expect).abs().max() < 1e-9);
    }

    #[test]
    fn nonpositive_lambda_rejected() {
        assert!(matches!(KoopmanModel::<f64>::new(2, 0.0, 0), Err(Error::Config(_))));
        assert!(matches!(KoopmanModel::<f64>::new(2, -1.0, 0), Err(Error::Config(_))));
    }

    #[test]
    fn zero_lift_only_counts() {
        let mut m = KoopmanModel::<f64>::new(2, 1.0, 0).unwrap();
        let before = m.clone();
        m.update_lifted(&[0.0, 0.0], &[0.0, 0.0]).unwrap();
        assert_eq!(m.g_hat_inv(), before.g_hat_inv());
        assert_eq!(m.g_hat(), before.g_hat());
        assert_eq!(m.a(), before.a());
        assert_eq!(m.samples(), 1);
    }

    #[test]
    fn single_update_matches_dense_inverse() {
        let mut m = KoopmanModel::<f64>::new(2, 1.0, 0).unwrap();
        m.update_lifted(&[1.0, 0.0], &[0.0, 1.0]).unwrap();
        let dense = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 1.0])
            .try_inverse()
            .unwrap();
        assert!((m.g_hat_inv() - &dense).abs().max() < 1e-15);
        assert!((m.g_hat_inv() - DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 1.0])).abs().max() < 1e-15);
    }

    #[test]
    fn non_finite_update_leaves_model_untouched() {
        let mut m = KoopmanModel::<f64>::new(2, 1.0, 0).unwrap();
        m.update_lifted(&[0.3, 0.1], &[0.2, 0.4]).unwrap();
        let before = m.clone();
        assert!(m.update_lifted(&[f64::NAN, 0.0], &[0.0, 0.0]).is_err());
        assert!(m.update_lifted(&[1.0], &[0.0]).is_err());
        assert_eq!(m, before);
    }

    #[test]
    fn corrupted_inverse_is_recovered() {
        let mut m = KoopmanModel::<f64>::new(2, 1.0, 0).unwrap();
        // poison the inverse so that 1 + ψ Ĝ⁻¹ ψᵀ < 0
        m.g_hat_inv = DMatrix::identity(2, 2) * -5.0;
        let status = m.update_lifted(&[1.0, 0.0], &[0.0, 0.0]).unwrap();
        assert_eq!(status, UpdateStatus::Recovered);
        assert!(m.inverse_defect() < 1e-12);
    }

    #[test]
    fn refresh_period_triggers() {
        let mut m = KoopmanModel::<f64>::new(2, 1.0, 3).unwrap();
        let s: Vec<_> = (0..6)
            .map(|i| m.update_lifted(&[i as f64, 1.0], &[1.0, 0.0]).unwrap())
            .collect();
        assert_eq!(s[2], UpdateStatus::Refreshed);
        assert_eq!(s[5], UpdateStatus::Refreshed);
        assert_eq!(s[0], UpdateStatus::Applied);
    }

    #[test]
    fn sherman_morrison_step_consistency() {
        let mut m = KoopmanModel::<f64>::new(3, 0.2, 0).unwrap();
        for i in 0..50 {
            let t = i as f64 * 0.3;
            let psi = [t.sin(), t.cos(), (0.5 * t).sin()];
            let prev_g = m.g_hat().clone();
            m.update_lifted(&psi, &psi).unwrap();
            let mut g = prev_g;
            for r in 0..3 {
                for c in 0..3 {
                    g[(r, c)] += psi[r] * psi[c];
                }
            }
            assert!(inverse_defect(m.g_hat_inv(), &g) < 1e-8 * 3.0);
            assert_eq!(m.g_hat_inv(), &m.g_hat_inv().transpose());
        }
    }

    #[test]
    fn from_batch_equals_streamed() {
        let dict = Dictionary::<f64>::identity(2).unwrap();
        let pairs: Vec<_> = (0..30)
            .map(|i| {
                let t = i as f64 * 0.2;
                SnapshotPair::new(
                    DVector::from_row_slice(&[t.cos(), t.sin()]),
                    DVector::from_row_slice(&[(t + 0.2).cos(), (t + 0.2).sin()]),
                )
                .unwrap()
            })
            .collect();
        let batch = KoopmanModel::from_batch(&dict, &pairs, 0.1, 0).unwrap();
        let mut streamed = KoopmanModel::new(2, 0.1, 0).unwrap();
        for p in &pairs {
            streamed.update(&dict, p).unwrap();
        }
        assert_eq!(batch.samples(), 30);
        assert!(rel_frobenius_diff(&streamed.operator(), &batch.operator()) < 1e-10);
    }

    #[test]
    fn run_stream_empty_source() {
        let cfg = StreamConfig::new(Dictionary::<f64>::identity(2).unwrap(), 1.0);
        let src: Vec<Result<SnapshotPair<f64>>> = vec![];
        let (m, s) = run_stream(src, cfg, &mut []).unwrap();
        assert_eq!(m.samples(), 0);
        assert_eq!(s.absorbed, 0);
        assert_eq!(m.operator(), DMatrix::zeros(2, 2));
    }

    #[test]
    fn run_stream_skips_and_aborts() {
        let dict = Dictionary::<f64>::identity(1).unwrap();
        let good = || Ok(SnapshotPair::new(DVector::from_element(1, 1.0), DVector::from_element(1, 0.5)).unwrap());
        let mut src: Vec<std::result::Result<SnapshotPair<f64>, String>> = (0..95).map(|_| good()).collect();
        src.extend((0..5).map(|_| Err("bad row".to_string())));
        let (m, s) = run_stream(src, StreamConfig::new(dict.clone(), 1.0), &mut []).unwrap();
        assert_eq!((m.samples(), s.skipped), (95, 5));

        let mut src: Vec<std::result::Result<SnapshotPair<f64>, String>> = (0..80).map(|_| good()).collect();
        src.extend((0..20).map(|_| Err("bad row".to_string())));
        let r = run_stream(src, StreamConfig::new(dict, 1.0), &mut []);
        assert!(matches!(r, Err(Error::StreamQuality { skipped: 20, .. })));
    }

    #[test]
    fn observers_fire_on_cadence() {
        let dict = Dictionary::<f64>::identity(1).unwrap();
        let src: Vec<Result<SnapshotPair<f64>>> = (0..10)
            .map(|i| SnapshotPair::new(DVector::from_element(1, i as f64), DVector::from_element(1, 1.0)))
            .collect();
        let mut cfg = StreamConfig::new(dict, 1.0);
        cfg.observe_every = 4;
        let mut seen = Vec::new();
        let mut obs = |s: &ModelSnapshot<f64>| {
            seen.push(s.m);
            Ok(())
        };
        run_stream(src, cfg, &mut [&mut obs]).unwrap();
        assert_eq!(seen, vec![4, 8]);
    }
}
