//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use rredmd::bench::{self, CompareOptions, ScalingOptions};
use rredmd::container::{self, Checkpoint};
use rredmd::dynamics::{self, RingConfig, VdpConfig};
use rredmd::edmd;
use rredmd::ingest::{self, CsvStreamConfig};
use rredmd::linalg::rel_frobenius_diff;
use rredmd::spectral::{self, EigenSelector, GridSpec};
use rredmd::stream::{ModelSnapshot, StreamObserver};
use rredmd::{build_dictionary, run_stream, Dictionary64, DictionarySpec, KoopmanModel64, StreamConfig};

type Criterion = (&'static str, fn() -> Outcome);

struct Outcome {
    pass: bool,
    detail: String,
}

fn vdp(seed: u64, x0: [f64; 2], n: usize) -> Vec<DVector<f64>> {
    dynamics::simulate_vdp(&VdpConfig { seed, x0, ..VdpConfig::default() }, n).unwrap()
}

fn vdp_dictionary(warm: &[DVector<f64>], num_rbf: usize, bandwidth: Option<f64>) -> Dictionary64 {
    let spec = DictionarySpec {
        num_rbf,
        bandwidth,
        seed: 1,
        ..DictionarySpec::default()
    };
    build_dictionary(&spec, warm).unwrap().dictionary
}

fn within(elapsed: Duration, limit_s: f64) -> bool {
    elapsed.as_secs_f64() < limit_s
}

// 1. streaming operator equals the closed form at every checkpoint m
fn recursive_batch_equivalence() -> Outcome {
    let t0 = Instant::now();
    let traj = vdp(11, [1.0, 0.0], 1001);
    let dict = vdp_dictionary(&traj[..100], 40, None);
    let pairs = dynamics::pairs_from_trajectory(&traj).unwrap();
    let lambda = 0.1;
    let mut model = KoopmanModel64::new(dict.total_dim(), lambda, 1000).unwrap();
    let checks = [1usize, 10, 100, 500, 1000];
    let mut worst = 0.0f64;
    for (i, p) in pairs.iter().enumerate() {
        model.update(&dict, p).unwrap();
        let m = i + 1;
        if checks.contains(&m) {
            let gp = edmd::accumulate_gram(&dict, &pairs[..m], false).unwrap();
            let batch = edmd::solve_robust(&gp, lambda).unwrap();
            worst = worst.max(rel_frobenius_diff(&model.operator(), &batch));
        }
    }
    let el = t0.elapsed();
    Outcome {
        pass: dict.total_dim() == 43 && worst <= 1e-8 && within(el, 30.0),
        detail: format!(
            "K={} max rel Frobenius diff {worst:.3e} over m in {checks:?} (tol 1e-8), {:.2}s (limit 30s)",
            dict.total_dim(),
            el.as_secs_f64()
        ),
    }
}

fn random_stable_matrix(n: usize, radius: f64, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let rho = spectral::spectrum(&m).unwrap().moduli()[0];
    m * (radius / rho)
}

// 2. exact recovery of a linear map through the identity dictionary
fn linear_recovery() -> Outcome {
    let t0 = Instant::now();
    let a_sys = random_stable_matrix(3, 0.9, 2024);
    let traj = dynamics::simulate_linear(&a_sys, &[1.0, -0.5, 0.25], 501, 0.0, 0).unwrap();
    let dict = Dictionary64::identity(3).unwrap();
    let pairs = dynamics::pairs_from_trajectory(&traj).unwrap();
    let mut model = KoopmanModel64::new(3, 1e-10, 1000).unwrap();
    for p in &pairs {
        model.update(&dict, p).unwrap();
    }
    let err = (model.operator() - a_sys.transpose()).norm();
    let el = t0.elapsed();
    Outcome {
        pass: pairs.len() == 500 && err <= 1e-6 && within(el, 1.0),
        detail: format!(
            "‖K − A_sysᵀ‖_F = {err:.3e} (tol 1e-6) after {} pairs, {:.3}s (limit 1s)",
            pairs.len(),
            el.as_secs_f64()
        ),
    }
}

// 3. the maintained inverse stays an inverse
fn inverse_integrity() -> Outcome {
    let t0 = Instant::now();
    let traj = vdp(5, [0.5, 0.5], 10_001);
    let dict = vdp_dictionary(&traj[..100], 97, None);
    let k = dict.total_dim();
    let pairs = dynamics::pairs_from_trajectory(&traj).unwrap();
    let mut model = KoopmanModel64::new(k, 0.1, 1000).unwrap();
    let mut pre_refresh = 0.0f64;
    for (i, p) in pairs.iter().enumerate() {
        model.update(&dict, p).unwrap();
        if (i + 2) % 1000 == 0 {
            pre_refresh = pre_refresh.max(model.inverse_defect());
        }
    }
    let defect = model.inverse_defect();
    let tol = 1e-8 * k as f64;
    let el = t0.elapsed();
    Outcome {
        pass: k == 100 && model.samples() == 10_000 && defect <= tol && within(el, 60.0),
        detail: format!(
            "‖Ĝ⁻¹Ĝ − I‖_F = {defect:.3e} (tol {tol:.0e}) at m=10000; worst just before a refresh {pre_refresh:.3e}; {:.2}s (limit 60s)",
            el.as_secs_f64()
        ),
    }
}

// 4. the near-unit eigenfunction's high-level set traces the limit cycle
fn limit_cycle_property() -> Outcome {
    const LEVEL: f64 = 0.7;
    const RADIUS: f64 = 0.2;
    let t0 = Instant::now();
    // centers from an independent noisy run, transient dropped
    let calib = vdp(99, [0.3, -2.1], 3000);
    let dict = vdp_dictionary(&calib[1000..], 40, Some(0.8));
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x0 = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
    let traj = vdp(7, x0, 2001);
    let pairs = dynamics::pairs_from_trajectory(&traj).unwrap();
    let reference = dynamics::reference_limit_cycle(0.8, 0.01, 10.0).unwrap();
    let grid = GridSpec::planar((-3.0, 3.0), (-4.0, 4.0), 61, 81);

    let mut snaps: Vec<ModelSnapshot<f64>> = Vec::new();
    let mut keep = |s: &ModelSnapshot<f64>| {
        if s.m == 500 || s.m == 2000 {
            snaps.push(s.clone());
        }
        Ok(())
    };
    let mut cfg = StreamConfig::new(dict.clone(), 0.1);
    cfg.observe_every = 500;
    {
        let mut obs: Vec<&mut dyn StreamObserver<f64>> = vec![&mut keep];
        run_stream(pairs.into_iter().map(Ok::<_, String>), cfg, &mut obs).unwrap();
    }
    let mut lines = Vec::new();
    let mut results = Vec::new();
    for s in &snaps {
        let spec = spectral::spectrum(&s.operator()).unwrap();
        let which = EigenSelector::default();
        let j = which.resolve(&spec).unwrap();
        let lam = spec.eigenvalues[j];
        let field = spectral::eigenfunction_on_grid(&dict, &spec, which, &grid).unwrap();
        let ov = spectral::level_set_overlap(&field, LEVEL, &reference, RADIUS);
        lines.push(format!(
            "m={} |λ|={:.4} coverage {:.3} precision {:.3}",
            s.m,
            lam.norm(),
            ov.coverage,
            ov.precision
        ));
        results.push((lam, ov));
    }
    let el = t0.elapsed();
    let ok = results.len() == 2 && {
        let (lam, full) = results[1];
        let (_, partial) = results[0];
        (0.99..=1.01).contains(&lam.norm()) && full.coverage >= 0.8 && partial.coverage < full.coverage
    };
    Outcome {
        pass: ok,
        detail: format!(
            "{} (need |λ| in [0.99,1.01], coverage ≥ 0.8 at 2000, 500 < 2000), {:.2}s",
            lines.join("; "),
            el.as_secs_f64()
        ),
    }
}

// 5. growth exponents of cumulative time
fn timing_growth() -> Outcome {
    let t0 = Instant::now();
    let traj = vdp(3, [1.0, 0.0], 2001);
    let dict = vdp_dictionary(&traj[..100], 40, None);
    let pairs = dynamics::pairs_from_trajectory(&traj).unwrap();
    let opts = CompareOptions {
        repetitions: 3,
        ..CompareOptions::default()
    };
    let r = bench::bench_streaming_vs_batch(&pairs, &dict, 0.1, &opts).unwrap();
    let s = &r.summary;
    let p_rr = s.rr_fit.map(|f| f.p).unwrap_or(f64::NAN);
    let p_b = s.batch_fit.map(|f| f.p).unwrap_or(f64::NAN);
    let el = t0.elapsed();
    Outcome {
        pass: s.k == 43
            && p_rr <= 1.3
            && p_b >= 1.7
            && s.cumulative_ratio >= 5.0
            && s.max_rel_diff <= 1e-8
            && within(el, 300.0),
        detail: format!(
            "p_rr={p_rr:.3} (≤1.3), p_batch={p_b:.3} (≥1.7), ratio at M=2000 {:.1} (≥5), arms agree to {:.2e} (≤1e-8), {:.1}s (limit 300s)",
            s.cumulative_ratio,
            s.max_rel_diff,
            el.as_secs_f64()
        ),
    }
}

// 6. per-step update cost grows like K²
fn scaling_law() -> Outcome {
    let t0 = Instant::now();
    let opts = ScalingOptions {
        repetitions: 5,
        ..ScalingOptions::default()
    };
    let reports = bench::bench_scaling(&[10, 20, 40], 15, 600, &opts).unwrap();
    let s = bench::scaling_summary(&reports);
    let ks: Vec<usize> = s.rows.iter().map(|r| r.k).collect();
    let el = t0.elapsed();
    Outcome {
        pass: ks == [150, 300, 600]
            && s.ratios.len() == 2
            && s.ratios.iter().all(|r| (2.5..=6.0).contains(r))
            && within(el, 600.0),
        detail: format!(
            "K={ks:?} mean step ns {:?}, ratios {:?} (each in [2.5, 6]), {:.1}s (limit 600s)",
            s.rows.iter().map(|r| r.mean_step_nanos.round()).collect::<Vec<_>>(),
            s.ratios.iter().map(|r| (r * 1000.0).round() / 1000.0).collect::<Vec<_>>(),
            el.as_secs_f64()
        ),
    }
}

// 7. eigenvalues of a replayed noisy ring recording stay inside the unit disc
fn stability_monitoring() -> Outcome {
    let t0 = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("ring.csv");
    let ring = RingConfig {
        n_osc: 10,
        seed: 17,
        ..RingConfig::default()
    };
    let traj = dynamics::simulate_ring(&ring, 1001).unwrap();
    ingest::write_csv(&csv, &traj, &ingest::default_column_names(20), 0.01).unwrap();

    let mut cfg = CsvStreamConfig::new(&csv);
    cfg.snr_db = Some(85.0);
    cfg.seed = 5;
    let (mut states, _) = ingest::open_state_stream(&cfg).unwrap();
    let warm: Vec<_> = states.by_ref().take(100).collect();
    let warm_ok: Vec<DVector<f64>> = warm.iter().map(|r| r.as_ref().unwrap().clone()).collect();
    let dict = vdp_dictionary(&warm_ok, 150, None);
    let source = ingest::pairs::<_, f64>(warm.into_iter().chain(states));

    let mut maxima: Vec<(usize, f64)> = Vec::new();
    let mut monitor = |s: &ModelSnapshot<f64>| {
        if [100, 500, 1000].contains(&s.m) {
            let spec = spectral::spectrum(&s.operator())?;
            maxima.push((s.m, spectral::stability_report(&spec.eigenvalues, 0.0).max_modulus));
        }
        Ok(())
    };
    let mut scfg = StreamConfig::new(dict.clone(), 0.1);
    scfg.observe_every = 100;
    {
        let mut obs: Vec<&mut dyn StreamObserver<f64>> = vec![&mut monitor];
        run_stream(source, scfg, &mut obs).unwrap();
    }
    let el = t0.elapsed();
    Outcome {
        pass: maxima.len() == 3 && maxima.iter().all(|(_, m)| *m <= 1.02),
        detail: format!(
            "K={} max |λ| at m=(100,500,1000): {:?} (each ≤ 1.02), {:.2}s",
            dict.total_dim(),
            maxima.iter().map(|(_, m)| (m * 1e5).round() / 1e5).collect::<Vec<_>>(),
            el.as_secs_f64()
        ),
    }
}

// 8. injected noise has the requested standard deviation
fn snr_statistics() -> Outcome {
    // alternating ±1: zero mean and unit variance exactly, over any even prefix
    let n = 100_000;
    let clean: Vec<f64> = (0..n).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
    let input = clean.clone().into_iter().map(|v| Ok(DVector::from_element(1, v)));
    let noisy: Vec<f64> = ingest::add_noise_snr(input, 20.0, 8)
        .unwrap()
        .map(|r| r.unwrap()[0])
        .collect();
    let diff: Vec<f64> = noisy.iter().zip(&clean).map(|(a, b)| a - b).collect();
    let mean = diff.iter().sum::<f64>() / n as f64;
    let std = (diff.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0)).sqrt();
    Outcome {
        pass: (0.097..=0.103).contains(&std),
        detail: format!("empirical noise std {std:.5} over {n} samples (band [0.097, 0.103])"),
    }
}

fn rredmd(args: &[&str], cwd: &Path) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_rredmd"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("run rredmd")
}

// 9. resuming from a mid-run checkpoint reproduces the uninterrupted run
fn checkpoint_resume() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let steps: [&[&str]; 4] = [
        &["simulate", "--system", "vdp", "--samples", "2001", "--seed", "7", "--out", "vdp.csv"],
        &["learn", "--input", "vdp.csv", "--rbf", "40", "--lambda", "0.1", "--out", "full.ckpt"],
        &["learn", "--input", "vdp.csv", "--rbf", "40", "--lambda", "0.1", "--max-pairs", "1000", "--out", "half.ckpt"],
        &["learn", "--input", "vdp.csv", "--lambda", "0.1", "--resume", "half.ckpt", "--out", "resumed.ckpt"],
    ];
    for s in steps {
        let out = rredmd(s, d);
        if !out.status.success() {
            return Outcome {
                pass: false,
                detail: format!("`rredmd {}` failed: {}", s.join(" "), String::from_utf8_lossy(&out.stderr)),
            };
        }
    }
    let full: Checkpoint<f64> = container::load_checkpoint(&d.join("full.ckpt")).unwrap();
    let half: Checkpoint<f64> = container::load_checkpoint(&d.join("half.ckpt")).unwrap();
    let resumed: Checkpoint<f64> = container::load_checkpoint(&d.join("resumed.ckpt")).unwrap();
    let (kf, kr) = (full.model.operator(), resumed.model.operator());
    let rel = rel_frobenius_diff(&kr, &kf);
    let abs = (&kr - &kf).abs().max();
    Outcome {
        pass: half.model.samples() == 1000 && resumed.model.samples() == 2000 && rel <= 1e-10 && abs <= 1e-10,
        detail: format!(
            "m: half {} → resumed {}, full {}; rel diff {rel:.3e}, max abs diff {abs:.3e} (tol 1e-10)",
            half.model.samples(),
            resumed.model.samples(),
            full.model.samples()
        ),
    }
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("recursive-batch oracle equivalence", recursive_batch_equivalence),
        ("linear-system recovery", linear_recovery),
        ("inverse integrity", inverse_integrity),
        ("limit-cycle property", limit_cycle_property),
        ("timing growth", timing_growth),
        ("scaling law", scaling_law),
        ("stability monitoring", stability_monitoring),
        ("SNR injection statistics", snr_statistics),
        ("checkpoint resume", checkpoint_resume),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let o = f();
        if !o.pass {
            failed += 1;
        }
        println!("{} [{}] {name}: {}", if o.pass { "PASS" } else { "FAIL" }, i + 1, o.detail);
    }
    println!("acceptance: {}/{} passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
