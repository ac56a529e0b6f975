//! Timing harness: recursive update vs. batch recomputation, and update cost
//! against dictionary size.

use std::io::Write;
use std::time::Instant;

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dynamics::{simulate_ring, RingConfig};
use crate::edmd::{gram_from_lifted, solve_robust};
use crate::error::{Error, Result};
use crate::lifting::{build_dictionary, Dictionary, DictionarySpec, SnapshotPair};
use crate::linalg::rel_frobenius_diff;
use crate::scalar::Scalar;
use crate::stream::{KoopmanModel, DEFAULT_REFRESH_PERIOD};

pub const METHOD_RR: &str = "rr-edmd";
pub const METHOD_RR_EXTRACT: &str = "rr-edmd-extract";
pub const METHOD_BATCH: &str = "edmd-recompute";

/// Steps dropped from the front of every series before fitting.
pub const WARMUP_DISCARD: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fingerprint {
    pub host: String,
    pub os: String,
    pub arch: String,
    pub profile: String,
    pub cpus: usize,
    pub version: String,
}

impl Fingerprint {
    pub fn current() -> Self {
        let host = std::fs::read_to_string("/proc/sys/kernel/hostname")
            .map(|s| s.trim().to_string())
            .or_else(|_| std::env::var("HOSTNAME"))
            .unwrap_or_else(|_| "unknown".into());
        Fingerprint {
            host,
            os: std::env::consts::OS.into(),
            arch: std::env::consts::ARCH.into(),
            profile: if cfg!(debug_assertions) { "debug" } else { "release" }.into(),
            cpus: std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
            version: env!("CARGO_PKG_VERSION").into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub method: String,
    /// Median over repetitions, one entry per step.
    pub step_nanos: Vec<u64>,
    pub cumulative_nanos: u64,
    pub k: usize,
    pub m: usize,
    pub repetitions: usize,
    pub fingerprint: Fingerprint,
}

impl BenchReport {
    /// Cumulative time over steps `WARMUP_DISCARD..m`.
    pub fn cumulative_at(&self, m: usize) -> u64 {
        self.step_nanos
            .iter()
            .take(m)
            .skip(WARMUP_DISCARD)
            .sum()
    }

    /// Mean step time after the warm-up discard.
    pub fn mean_step_nanos(&self) -> f64 {
        let tail = &self.step_nanos[WARMUP_DISCARD.min(self.step_nanos.len())..];
        if tail.is_empty() {
            0.0
        } else {
            tail.iter().sum::<u64>() as f64 / tail.len() as f64
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerFit {
    pub a: f64,
    pub p: f64,
    pub r2: f64,
}

/// Least-squares fit of `ln y = ln a + p ln x`; non-positive points are ignored.
pub fn fit_power_law(xs: &[f64], ys: &[f64]) -> Option<PowerFit> {
    let pts: Vec<(f64, f64)> = xs
        .iter()
        .zip(ys)
        .filter(|(x, y)| **x > 0.0 && **y > 0.0)
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let p = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { (sxy * sxy) / (sxx * syy) };
    Some(PowerFit {
        a: (my - p * mx).exp(),
        p,
        r2,
    })
}

/// `count` roughly log-spaced integers in `[lo, hi]`.
pub fn log_spaced(lo: usize, hi: usize, count: usize) -> Vec<usize> {
    if lo == 0 || hi < lo || count == 0 {
        return vec![];
    }
    if count == 1 || lo == hi {
        return vec![hi];
    }
    let (l, h) = ((lo as f64).ln(), (hi as f64).ln());
    let mut out: Vec<usize> = (0..count)
        .map(|i| (l + (h - l) * i as f64 / (count - 1) as f64).exp().round() as usize)
        .collect();
    out.dedup();
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareOptions {
    pub repetitions: usize,
    pub refresh_period: usize,
    /// Fit window for the growth exponents.
    pub fit_range: (usize, usize),
    pub fit_points: usize,
}

impl Default for CompareOptions {
    fn default() -> Self {
        CompareOptions {
            repetitions: 3,
            refresh_period: DEFAULT_REFRESH_PERIOD,
            fit_range: (200, 2000),
            fit_points: 25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareSummary {
    pub k: usize,
    pub m: usize,
    pub repetitions: usize,
    pub fit_range: (usize, usize),
    pub rr_fit: Option<PowerFit>,
    pub batch_fit: Option<PowerFit>,
    pub rr_cumulative_nanos: u64,
    pub batch_cumulative_nanos: u64,
    pub extract_cumulative_nanos: u64,
    pub cumulative_ratio: f64,
    /// Largest relative Frobenius gap between the two arms over all steps.
    pub max_rel_diff: f64,
    pub fingerprint: Fingerprint,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareReport {
    pub rr: BenchReport,
    pub batch: BenchReport,
    /// Operator extraction `Ĝ⁻¹A`, timed apart from the update.
    pub extract: BenchReport,
    pub summary: CompareSummary,
}

fn lift_rows<T: Scalar>(dict: &Dictionary<T>, pairs: &[SnapshotPair<T>]) -> Result<(DMatrix<T>, DMatrix<T>)> {
    let k = dict.total_dim();
    let mut psi_x = DMatrix::zeros(pairs.len(), k);
    let mut psi_y = DMatrix::zeros(pairs.len(), k);
    let mut buf = vec![T::zero(); k];
    for (r, p) in pairs.iter().enumerate() {
        dict.lift_into(p.x.as_slice(), &mut buf)?;
        psi_x.row_mut(r).copy_from_slice(&buf);
        dict.lift_into(p.y.as_slice(), &mut buf)?;
        psi_y.row_mut(r).copy_from_slice(&buf);
    }
    Ok((psi_x, psi_y))
}

fn median(v: &mut [u64]) -> u64 {
    v.sort_unstable();
    v[v.len() / 2]
}

fn report(method: &str, runs: &[Vec<u64>], k: usize, fp: &Fingerprint) -> BenchReport {
    let m = runs[0].len();
    let step_nanos: Vec<u64> = (0..m)
        .map(|i| median(&mut runs.iter().map(|r| r[i]).collect::<Vec<_>>()))
        .collect();
    BenchReport {
        method: method.into(),
        cumulative_nanos: step_nanos.iter().sum(),
        step_nanos,
        k,
        m,
        repetitions: runs.len(),
        fingerprint: fp.clone(),
    }
}

fn growth_fit(r: &BenchReport, opts: &CompareOptions) -> Option<PowerFit> {
    let hi = opts.fit_range.1.min(r.m);
    let ms = log_spaced(opts.fit_range.0.max(WARMUP_DISCARD + 1), hi, opts.fit_points);
    let xs: Vec<f64> = ms.iter().map(|m| *m as f64).collect();
    let ys: Vec<f64> = ms.iter().map(|m| r.cumulative_at(*m) as f64).collect();
    fit_power_law(&xs, &ys)
}

/// Per-step cost of the recursive update against a from-scratch robust solve
/// over the first `m` pairs, on identical pre-lifted data.
pub fn bench_streaming_vs_batch<T: Scalar>(
    pairs: &[SnapshotPair<T>],
    dict: &Dictionary<T>,
    lambda: T,
    opts: &CompareOptions,
) -> Result<CompareReport> {
    let m_total = pairs.len();
    if m_total < 100 {
        return Err(Error::config("benchmark needs at least 100 pairs"));
    }
    if opts.repetitions == 0 {
        return Err(Error::config("repetitions must be at least 1"));
    }
    let k = dict.total_dim();
    let (psi_x, psi_y) = lift_rows(dict, pairs)?;
    // contiguous rows for the update path
    let rows_x: Vec<Vec<T>> = (0..m_total).map(|r| psi_x.row(r).iter().copied().collect()).collect();
    let rows_y: Vec<Vec<T>> = (0..m_total).map(|r| psi_y.row(r).iter().copied().collect()).collect();

    let mut rr_runs = Vec::new();
    let mut ex_runs = Vec::new();
    let mut batch_runs = Vec::new();
    let mut max_rel_diff = 0.0f64;
    for rep in 0..opts.repetitions {
        let mut model = KoopmanModel::new(k, lambda, opts.refresh_period)?;
        let mut rr = Vec::with_capacity(m_total);
        let mut ex = Vec::with_capacity(m_total);
        let mut batch = Vec::with_capacity(m_total);
        for m in 0..m_total {
            let t0 = Instant::now();
            model.update_lifted(&rows_x[m], &rows_y[m])?;
            rr.push(t0.elapsed().as_nanos() as u64);

            let t0 = Instant::now();
            let k_rr = model.operator();
            ex.push(t0.elapsed().as_nanos() as u64);

            let t0 = Instant::now();
            let gx = psi_x.rows(0, m + 1).into_owned();
            let gy = psi_y.rows(0, m + 1).into_owned();
            let k_batch = solve_robust(&gram_from_lifted(&gx, &gy, false), lambda)?;
            batch.push(t0.elapsed().as_nanos() as u64);

            if rep == 0 {
                max_rel_diff = max_rel_diff.max(rel_frobenius_diff(&k_rr, &k_batch).to_f64_lossy());
            }
        }
        rr_runs.push(rr);
        ex_runs.push(ex);
        batch_runs.push(batch);
    }

    let fp = Fingerprint::current();
    let rr = report(METHOD_RR, &rr_runs, k, &fp);
    let extract = report(METHOD_RR_EXTRACT, &ex_runs, k, &fp);
    let batch = report(METHOD_BATCH, &batch_runs, k, &fp);
    let rr_cum = rr.cumulative_at(m_total);
    let batch_cum = batch.cumulative_at(m_total);
    let summary = CompareSummary {
        k,
        m: m_total,
        repetitions: opts.repetitions,
        fit_range: opts.fit_range,
        rr_fit: growth_fit(&rr, opts),
        batch_fit: growth_fit(&batch, opts),
        rr_cumulative_nanos: rr_cum,
        batch_cumulative_nanos: batch_cum,
        extract_cumulative_nanos: extract.cumulative_at(m_total),
        cumulative_ratio: if rr_cum == 0 { f64::INFINITY } else { batch_cum as f64 / rr_cum as f64 },
        max_rel_diff,
        fingerprint: fp,
    };
    Ok(CompareReport {
        rr,
        batch,
        extract,
        summary,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingOptions {
    pub ring: RingConfig,
    pub lambda: f64,
    pub repetitions: usize,
    pub refresh_period: usize,
    /// Sizes whose model would need more than this many bytes are skipped.
    pub memory_cap_bytes: u64,
    pub seed: u64,
}

impl Default for ScalingOptions {
    fn default() -> Self {
        ScalingOptions {
            ring: RingConfig::default(),
            lambda: 0.1,
            repetitions: 1,
            refresh_period: DEFAULT_REFRESH_PERIOD,
            memory_cap_bytes: 4 << 30,
            seed: 0,
        }
    }
}

/// `Ĝ`, `Ĝ⁻¹` and `A` in `f64`.
pub fn model_memory_bytes(k: usize) -> u64 {
    3 * (k as u64) * (k as u64) * 8
}

/// Mean recursive-update cost on ring networks of increasing size, with an
/// RBF-only dictionary of `rbf_per_osc · n_osc` functions.
pub fn bench_scaling(
    sizes: &[usize],
    rbf_per_osc: usize,
    samples_per_size: usize,
    opts: &ScalingOptions,
) -> Result<Vec<BenchReport>> {
    if sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::config("ring sizes must be strictly ascending"));
    }
    if rbf_per_osc == 0 || samples_per_size <= WARMUP_DISCARD {
        return Err(Error::config(format!(
            "need rbf_per_osc ≥ 1 and more than {WARMUP_DISCARD} samples per size"
        )));
    }
    let fp = Fingerprint::current();
    let mut out = Vec::new();
    for &n_osc in sizes {
        let k = rbf_per_osc * n_osc;
        let bytes = model_memory_bytes(k);
        if bytes > opts.memory_cap_bytes {
            warn!("skipping n_osc={n_osc}: K={k} needs {bytes} bytes, cap is {}", opts.memory_cap_bytes);
            continue;
        }
        let ring = RingConfig {
            n_osc,
            x0: None,
            ..opts.ring.clone()
        };
        let traj = simulate_ring(&ring, samples_per_size.max(k) + 1)?;
        let spec = DictionarySpec {
            num_rbf: k,
            include_identity: false,
            include_constant: false,
            seed: opts.seed,
            ..Default::default()
        };
        let dict = build_dictionary::<f64>(&spec, &traj)?.dictionary;
        let k = dict.total_dim();
        let lifted: Vec<DVector<f64>> = traj[..=samples_per_size]
            .iter()
            .map(|x| dict.lift(x.as_slice()))
            .collect::<Result<_>>()?;
        let mut runs = Vec::new();
        for _ in 0..opts.repetitions.max(1) {
            let mut model = KoopmanModel::new(k, opts.lambda, opts.refresh_period)?;
            let mut times = Vec::with_capacity(samples_per_size);
            for w in lifted.windows(2) {
                let t0 = Instant::now();
                model.update_lifted(w[0].as_slice(), w[1].as_slice())?;
                times.push(t0.elapsed().as_nanos() as u64);
            }
            runs.push(times);
        }
        out.push(report(METHOD_RR, &runs, k, &fp));
    }
    Ok(out)
}

/// `step,method,K,nanos`, one row per step of every report.
pub fn write_steps_csv<W: Write>(w: &mut W, reports: &[&BenchReport]) -> Result<()> {
    writeln!(w, "step,method,K,nanos")?;
    for r in reports {
        for (i, ns) in r.step_nanos.iter().enumerate() {
            writeln!(w, "{},{},{},{}", i + 1, r.method, r.k, ns)?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub k: usize,
    pub mean_step_nanos: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingSummary {
    pub rows: Vec<ScalingRow>,
    /// Mean step time of each size over the previous one.
    pub ratios: Vec<f64>,
    pub fit: Option<PowerFit>,
    pub fingerprint: Fingerprint,
}

pub fn scaling_summary(reports: &[BenchReport]) -> ScalingSummary {
    let rows: Vec<ScalingRow> = reports
        .iter()
        .map(|r| ScalingRow {
            k: r.k,
            mean_step_nanos: r.mean_step_nanos(),
        })
        .collect();
    let ratios = rows
        .windows(2)
        .map(|w| w[1].mean_step_nanos / w[0].mean_step_nanos)
        .collect();
    let xs: Vec<f64> = rows.iter().map(|r| r.k as f64).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.mean_step_nanos).collect();
    ScalingSummary {
        fit: fit_power_law(&xs, &ys),
        ratios,
        rows,
        fingerprint: reports
            .first()
            .map(|r| r.fingerprint.clone())
            .unwrap_or_else(Fingerprint::current),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{pairs_from_trajectory, simulate_vdp, VdpConfig};

    #[test]
    fn power_law_recovers_exponent() {
        let xs: Vec<f64> = (1..50).map(|i| i as f64 * 10.0).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 * x.powf(1.5)).collect();
        let f = fit_power_law(&xs, &ys).unwrap();
        assert!((f.p - 1.5).abs() < 1e-12);
        assert!((f.a - 3.0).abs() < 1e-9);
        assert!((f.r2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn log_spacing_endpoints() {
        let v = log_spaced(200, 2000, 10);
        assert_eq!(v.first(), Some(&200));
        assert_eq!(v.last(), Some(&2000));
        assert!(v.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn compare_shapes_and_equivalence() {
        let traj = simulate_vdp(&VdpConfig { seed: 1, ..VdpConfig::default() }, 201).unwrap();
        let pairs = pairs_from_trajectory(&traj).unwrap();
        let spec = DictionarySpec { num_rbf: 40, ..Default::default() };
        let dict = build_dictionary(&spec, &traj[..100]).unwrap().dictionary;
        assert_eq!(dict.total_dim(), 43);
        let opts = CompareOptions { repetitions: 1, ..Default::default() };
        let r = bench_streaming_vs_batch(&pairs, &dict, 0.1, &opts).unwrap();
        assert_eq!(r.rr.step_nanos.len(), 200);
        assert_eq!(r.batch.step_nanos.len(), 200);
        assert!(r.summary.max_rel_diff <= 1e-8, "{}", r.summary.max_rel_diff);
    }

    #[test]
    fn compare_needs_100_pairs() {
        let traj = simulate_vdp(&VdpConfig::default(), 50).unwrap();
        let pairs = pairs_from_trajectory(&traj).unwrap();
        let dict = Dictionary::identity(2).unwrap();
        assert!(bench_streaming_vs_batch(&pairs, &dict, 0.1, &CompareOptions::default()).is_err());
    }

    #[test]
    fn scaling_empty_and_capped() {
        let opts = ScalingOptions::default();
        assert!(bench_scaling(&[], 15, 50, &opts).unwrap().is_empty());
        let capped = ScalingOptions { memory_cap_bytes: 1, ..ScalingOptions::default() };
        assert!(bench_scaling(&[2], 15, 50, &capped).unwrap().is_empty());
    }

    #[test]
    fn scaling_dimension() {
        let r = bench_scaling(&[2], 15, 40, &ScalingOptions::default()).unwrap();
        assert_eq!(r[0].k, 30);
        assert_eq!(r[0].step_nanos.len(), 40);
    }

    #[test]
    fn steps_csv_header() {
        let r = bench_scaling(&[2], 2, 20, &ScalingOptions::default()).unwrap();
        let mut buf = Vec::new();
        write_steps_csv(&mut buf, &[&r[0]]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next(), Some("step,method,K,nanos"));
        assert_eq!(text.lines().count(), 21);
    }
}
