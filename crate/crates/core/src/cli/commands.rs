use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::Parser;
use log::{info, warn};
use nalgebra::{DMatrix, DVector};
use serde_json::json;

use super::manifest::{manifest_path, now, RunManifest, MANIFEST_SCHEMA_VERSION};
use super::{
    BenchCommand, Cli, Command, CompareArgs, DictArgs, FormArg, InputArgs, LearnArgs, ModeArg,
    PredictArgs, ReplayArgs, ScalingArgs, SelectLambdaArgs, SimulateArgs, SpectrumArgs, SystemKind,
};
use crate::bench::{self, CompareOptions, ScalingOptions};
use crate::container::{self, Checkpoint, OperatorFile};
use crate::dynamics::{self, RingConfig, VdpConfig, VdpForm};
use crate::edmd;
use crate::error::{Error, Result};
use crate::ingest::{self, ColumnSelection, CsvStreamConfig};
use crate::lifting::{build_dictionary, Dictionary, DictionarySpec, SnapshotPair};
use crate::spectral::{self, EigenSelector, GridSpec, PredictMode};
use crate::stream::{self, InitMode, ModelSnapshot, StreamConfig, StreamObserver};

/// Paths touched by a command, for the manifest.
struct Outcome {
    primary: PathBuf,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    seed: Option<u64>,
}

pub(super) fn dispatch(cmd: &Command, args: &[String]) -> Result<()> {
    let started_at = now();
    let outcome = match cmd {
        Command::Simulate(a) => simulate(a)?,
        Command::Learn(a) => learn(a)?,
        Command::Spectrum(a) => spectrum(a)?,
        Command::Predict(a) => predict(a)?,
        Command::Bench(BenchCommand::Compare(a)) => bench_compare(a)?,
        Command::Bench(BenchCommand::Scaling(a)) => bench_scaling(a)?,
        Command::SelectLambda(a) => select_lambda(a)?,
        Command::Replay(a) => return replay(a),
    };
    let manifest = RunManifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        subcommand: cmd.name().into(),
        tool_version: env!("CARGO_PKG_VERSION").into(),
        args: args.to_vec(),
        resolved_config: serde_json::to_value(cmd).map_err(std::io::Error::other)?,
        inputs: outcome.inputs,
        outputs: outcome.outputs,
        seed: outcome.seed,
        started_at,
        finished_at: now(),
    };
    manifest.save(&manifest_path(&outcome.primary))
}

fn replay(a: &ReplayArgs) -> Result<()> {
    let m = RunManifest::load(&a.manifest)?;
    let cli = Cli::try_parse_from(&m.args)
        .map_err(|e| Error::format(format!("manifest arguments no longer parse: {e}")))?;
    if matches!(cli.command, Command::Replay(_)) {
        return Err(Error::format("a manifest cannot record a replay"));
    }
    dispatch(&cli.command, &m.args)
}

fn print_json(v: serde_json::Value) {
    println!("{v}");
}

fn form(f: FormArg) -> VdpForm {
    match f {
        FormArg::Standard => VdpForm::Standard,
        FormArg::Literal => VdpForm::Literal,
    }
}

fn parse_matrix(s: &str) -> Result<DMatrix<f64>> {
    let rows: Vec<Vec<f64>> = s
        .split(';')
        .map(|r| {
            r.split(',')
                .map(|v| {
                    v.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::config(format!("bad matrix entry {v:?}")))
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let n = rows.len();
    if rows.iter().any(|r| r.len() != n) {
        return Err(Error::config("matrix must be square, rows separated by ';'"));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

fn simulate(a: &SimulateArgs) -> Result<Outcome> {
    let n = a.samples as usize;
    let traj = match a.system {
        SystemKind::Vdp => {
            let x0 = match &a.x0 {
                None => [1.0, 0.0],
                Some(v) if v.len() == 2 => [v[0], v[1]],
                Some(_) => return Err(Error::config("--x0 must have 2 entries for vdp")),
            };
            let cfg = VdpConfig {
                mu: a.mu,
                sigma: a.sigma,
                dt_sample: a.dt,
                substeps: a.substeps,
                seed: a.seed,
                x0,
                form: form(a.form),
            };
            dynamics::simulate_vdp(&cfg, n)?
        }
        SystemKind::Ring => {
            let cfg = RingConfig {
                n_osc: a.n_osc,
                mu: a.mu,
                sigma: a.sigma,
                dt_sample: a.dt,
                substeps: a.substeps,
                seed: a.seed,
                coupling: a.coupling,
                x0: a.x0.clone(),
                form: form(a.form),
            };
            dynamics::simulate_ring(&cfg, n)?
        }
        SystemKind::Linear => {
            let m = parse_matrix(
                a.matrix
                    .as_deref()
                    .ok_or_else(|| Error::config("--matrix is required for the linear system"))?,
            )?;
            let x0 = a.x0.clone().unwrap_or_else(|| vec![1.0; m.nrows()]);
            dynamics::simulate_linear(&m, &x0, n, a.sigma, a.seed)?
        }
    };
    let names = ingest::default_column_names(traj[0].len());
    ingest::write_csv(&a.out, &traj, &names, a.dt)?;
    info!("wrote {} samples to {}", traj.len(), a.out.display());
    Ok(Outcome {
        primary: a.out.clone(),
        inputs: vec![],
        outputs: vec![a.out.clone()],
        seed: Some(a.seed),
    })
}

fn stream_config(a: &InputArgs) -> CsvStreamConfig {
    CsvStreamConfig {
        path: a.input.clone(),
        columns: match &a.columns {
            Some(c) => ColumnSelection::Names(c.clone()),
            None => ColumnSelection::AllStates,
        },
        sample_rate_hz: None,
        snr_db: a.snr_db,
        seed: a.noise_seed,
    }
}

fn dict_spec(a: &DictArgs) -> Result<DictionarySpec> {
    match &a.dictionary {
        Some(p) => DictionarySpec::from_file(p),
        None => Ok(DictionarySpec {
            num_rbf: a.rbf,
            bandwidth: a.bandwidth,
            include_identity: !a.no_identity,
            include_constant: !a.no_constant,
            seed: a.dict_seed,
            warmup: a.warmup,
        }),
    }
}

fn freeze_dictionary(spec: &DictionarySpec, warm: &[Result<DVector<f64>>]) -> Result<Dictionary<f64>> {
    let states: Vec<DVector<f64>> = warm.iter().filter_map(|r| r.as_ref().ok().cloned()).collect();
    let built = build_dictionary(spec, &states)?;
    for w in &built.warnings {
        warn!("{w}");
    }
    Ok(built.dictionary)
}

fn write_with<F>(path: &Path, f: F) -> Result<()>
where
    F: FnOnce(&mut BufWriter<File>) -> Result<()>,
{
    let mut w = BufWriter::new(File::create(path)?);
    f(&mut w)?;
    w.flush()?;
    Ok(())
}

fn learn(a: &LearnArgs) -> Result<Outcome> {
    if !(a.lambda > 0.0) || !a.lambda.is_finite() {
        return Err(Error::config("--lambda must be positive (the robust solver needs λ > 0)"));
    }
    if a.spectrum_every == Some(0) {
        return Err(Error::config("--spectrum-every must be positive"));
    }
    let mut inputs = vec![a.input.input.clone()];
    let (mut states, _names) = ingest::open_state_stream(&stream_config(&a.input))?;

    let (dictionary, init, refresh, buffered, default_skip) = match &a.resume {
        Some(path) => {
            inputs.push(path.clone());
            let ck: Checkpoint<f64> = container::load_checkpoint(path)?;
            if ck.model.lambda() != a.lambda {
                return Err(Error::config(format!(
                    "--lambda {} differs from the checkpoint's λ = {}",
                    a.lambda,
                    ck.model.lambda()
                )));
            }
            let m = ck.model.samples();
            let refresh = ck.model.refresh_period();
            (ck.dictionary, InitMode::Resume(ck.model), refresh, Vec::new(), m)
        }
        None => {
            let spec = dict_spec(&a.dict)?;
            let warm: Vec<Result<DVector<f64>>> = states.by_ref().take(spec.warmup.max(1)).collect();
            let dict = freeze_dictionary(&spec, &warm)?;
            (dict, InitMode::Regularized, a.refresh, warm, 0)
        }
    };
    info!("dictionary: {} observables", dictionary.total_dim());

    let source = ingest::pairs::<_, f64>(buffered.into_iter().chain(states))
        .skip(a.skip_pairs.unwrap_or(default_skip))
        .take(a.max_pairs.unwrap_or(usize::MAX));
    let cfg = StreamConfig {
        dictionary: dictionary.clone(),
        lambda: a.lambda,
        refresh_period: refresh,
        observe_every: a.spectrum_every.unwrap_or(0),
        init,
    };

    let spectrum_dir = match (&a.spectrum_dir, a.out.parent()) {
        (Some(d), _) => d.clone(),
        (None, Some(p)) => p.to_path_buf(),
        (None, None) => PathBuf::from("."),
    };
    if a.spectrum_every.is_some() {
        fs::create_dir_all(&spectrum_dir)?;
    }
    let mut written: Vec<PathBuf> = Vec::new();
    let mut observer = |snap: &ModelSnapshot<f64>| -> Result<()> {
        let s = spectral::spectrum(&snap.operator())?;
        let path = spectrum_dir.join(format!("spectrum_m{:06}.csv", snap.m));
        write_with(&path, |w| s.write_csv(w))?;
        let st = spectral::stability_report(&s.eigenvalues, 0.0);
        info!("m={} max|λ|={:.6} -> {}", snap.m, st.max_modulus, path.display());
        written.push(path);
        Ok(())
    };
    let (model, summary) = {
        let mut observers: Vec<&mut dyn StreamObserver<f64>> = vec![&mut observer];
        stream::run_stream(source, cfg, &mut observers)?
    };

    let mut outputs = written;
    container::save_checkpoint(&a.out, &Checkpoint { dictionary, model: model.clone() })?;
    outputs.push(a.out.clone());
    if a.operator_out.is_some() || a.operator_csv.is_some() {
        let op = model.operator();
        if let Some(p) = &a.operator_out {
            container::save_operator(
                p,
                &OperatorFile {
                    operator: op.clone(),
                    lambda: model.lambda(),
                    m: model.samples(),
                },
            )?;
            outputs.push(p.clone());
        }
        if let Some(p) = &a.operator_csv {
            container::save_matrix_csv(p, &op)?;
            outputs.push(p.clone());
        }
    }
    print_json(json!({
        "k": model.dim(),
        "m": model.samples(),
        "absorbed": summary.absorbed,
        "skipped": summary.skipped,
        "refreshes": summary.refreshes,
        "recoveries": summary.recoveries,
        "update_seconds": summary.update_time.as_secs_f64(),
    }));
    Ok(Outcome {
        primary: a.out.clone(),
        inputs,
        outputs,
        seed: Some(a.dict.dict_seed),
    })
}

fn spectrum(a: &SpectrumArgs) -> Result<Outcome> {
    let ck: Checkpoint<f64> = container::load_checkpoint(&a.checkpoint)?;
    let s = spectral::spectrum(&ck.model.operator())?;
    write_with(&a.out, |w| s.write_csv(w))?;
    let mut outputs = vec![a.out.clone()];
    let st = spectral::stability_report(&s.eigenvalues, a.tolerance);

    if let Some(field_path) = &a.field {
        if a.window.len() != 4 || a.axes.len() != 2 || a.target.len() != 2 {
            return Err(Error::config("--window needs 4 values, --axes and --target 2 each"));
        }
        let grid = GridSpec {
            x_range: (a.window[0], a.window[1]),
            y_range: (a.window[2], a.window[3]),
            nx: a.nx,
            ny: a.ny,
            axes: (a.axes[0], a.axes[1]),
            base: a.slice.clone(),
        };
        let which = match a.index {
            Some(i) => EigenSelector::Index(i),
            None => EigenSelector::Nearest {
                re: a.target[0],
                im: a.target[1],
            },
        };
        let field = spectral::eigenfunction_on_grid(&ck.dictionary, &s, which, &grid)?;
        write_with(field_path, |w| field.write_csv(w))?;
        outputs.push(field_path.clone());
    }
    print_json(json!({
        "k": s.len(),
        "m": ck.model.samples(),
        "max_modulus": st.max_modulus,
        "stable": st.stable,
        "count_outside": st.count_outside,
    }));
    Ok(Outcome {
        primary: a.out.clone(),
        inputs: vec![a.checkpoint.clone()],
        outputs,
        seed: None,
    })
}

fn predict(a: &PredictArgs) -> Result<Outcome> {
    let ck: Checkpoint<f64> = container::load_checkpoint(&a.checkpoint)?;
    if a.x0.len() != ck.dictionary.state_dim() {
        return Err(Error::config(format!(
            "--x0 has {} entries, the model's state dimension is {}",
            a.x0.len(),
            ck.dictionary.state_dim()
        )));
    }
    let mode = match a.mode {
        ModeArg::Lifted => PredictMode::LiftedRollout,
        ModeArg::Relift => PredictMode::ReliftEachStep,
    };
    let traj = spectral::predict(&ck.model.operator(), &ck.dictionary, &a.x0, a.steps, mode)?;
    let names = ingest::default_column_names(a.x0.len());
    ingest::write_csv(&a.out, &traj, &names, a.dt)?;
    Ok(Outcome {
        primary: a.out.clone(),
        inputs: vec![a.checkpoint.clone()],
        outputs: vec![a.out.clone()],
        seed: None,
    })
}

fn bench_compare(a: &CompareArgs) -> Result<Outcome> {
    if !(a.lambda > 0.0) {
        return Err(Error::config("--lambda must be positive"));
    }
    let traj = dynamics::simulate_vdp(&VdpConfig { seed: a.seed, ..VdpConfig::default() }, a.samples + 1)?;
    let spec = DictionarySpec {
        num_rbf: a.rbf,
        seed: a.seed,
        ..DictionarySpec::default()
    };
    let warm = &traj[..spec.warmup.min(traj.len())];
    let dict = build_dictionary(&spec, warm)?.dictionary;
    let pairs = dynamics::pairs_from_trajectory(&traj)?;
    let opts = CompareOptions {
        repetitions: a.reps,
        fit_range: (200.min(a.samples), a.samples),
        ..CompareOptions::default()
    };
    let r = bench::bench_streaming_vs_batch(&pairs, &dict, a.lambda, &opts)?;

    fs::create_dir_all(&a.out_dir)?;
    let steps = a.out_dir.join("compare_steps.csv");
    let summary = a.out_dir.join("compare_summary.json");
    write_with(&steps, |w| bench::write_steps_csv(w, &[&r.rr, &r.batch, &r.extract]))?;
    let text = serde_json::to_string_pretty(&r.summary).map_err(std::io::Error::other)?;
    fs::write(&summary, text + "\n")?;
    print_json(json!({
        "rr_exponent": r.summary.rr_fit.map(|f| f.p),
        "batch_exponent": r.summary.batch_fit.map(|f| f.p),
        "cumulative_ratio": r.summary.cumulative_ratio,
        "max_rel_diff": r.summary.max_rel_diff,
    }));
    Ok(Outcome {
        primary: a.out_dir.clone(),
        inputs: vec![],
        outputs: vec![steps, summary],
        seed: Some(a.seed),
    })
}

fn bench_scaling(a: &ScalingArgs) -> Result<Outcome> {
    let opts = ScalingOptions {
        ring: RingConfig {
            seed: a.seed,
            ..RingConfig::default()
        },
        repetitions: a.reps,
        memory_cap_bytes: a.mem_cap_mb << 20,
        seed: a.seed,
        ..ScalingOptions::default()
    };
    let reports = bench::bench_scaling(&a.sizes, a.rbf_per_osc, a.samples, &opts)?;
    let s = bench::scaling_summary(&reports);

    fs::create_dir_all(&a.out_dir)?;
    let steps = a.out_dir.join("scaling_steps.csv");
    let summary = a.out_dir.join("scaling_summary.json");
    write_with(&steps, |w| bench::write_steps_csv(w, &reports.iter().collect::<Vec<_>>()))?;
    let text = serde_json::to_string_pretty(&s).map_err(std::io::Error::other)?;
    fs::write(&summary, text + "\n")?;
    print_json(json!({
        "k": s.rows.iter().map(|r| r.k).collect::<Vec<_>>(),
        "mean_step_nanos": s.rows.iter().map(|r| r.mean_step_nanos).collect::<Vec<_>>(),
        "ratios": s.ratios,
    }));
    Ok(Outcome {
        primary: a.out_dir.clone(),
        inputs: vec![],
        outputs: vec![steps, summary],
        seed: Some(a.seed),
    })
}

fn select_lambda(a: &SelectLambdaArgs) -> Result<Outcome> {
    if a.grid.is_empty() {
        return Err(Error::config("--grid needs at least one λ"));
    }
    if a.grid.iter().any(|l| !(*l > 0.0) || !l.is_finite()) {
        return Err(Error::config("every λ in --grid must be positive"));
    }
    if !(a.split > 0.0 && a.split < 1.0) {
        return Err(Error::config("--split must lie strictly between 0 and 1"));
    }
    let (states, _) = ingest::open_state_stream(&stream_config(&a.input))?;
    let mut skipped = 0usize;
    let pairs: Vec<SnapshotPair<f64>> = ingest::pairs::<_, f64>(states)
        .filter_map(|p| p.map_err(|_| skipped += 1).ok())
        .collect();
    if skipped > 0 {
        warn!("skipped {skipped} unusable pairs");
    }
    let n_train = (a.split * pairs.len() as f64).floor() as usize;
    if n_train == 0 || n_train == pairs.len() {
        return Err(Error::config(format!(
            "split {} of {} pairs leaves an empty training or validation set",
            a.split,
            pairs.len()
        )));
    }
    let (train, valid) = pairs.split_at(n_train);
    let spec = dict_spec(&a.dict)?;
    let warm: Vec<Result<DVector<f64>>> = train.iter().take(spec.warmup.max(1)).map(|p| Ok(p.x.clone())).collect();
    let dict = freeze_dictionary(&spec, &warm)?;
    let gp = edmd::accumulate_gram(&dict, train, false)?;

    let mut grid = a.grid.clone();
    grid.sort_by(|x, y| x.partial_cmp(y).expect("finite"));
    grid.dedup();
    let mut rows = Vec::with_capacity(grid.len());
    for &lam in &grid {
        let k = edmd::solve_robust(&gp, lam)?;
        rows.push((lam, spectral::lifted_one_step_rmse(&k, &dict, valid)?));
    }
    let best = rows
        .iter()
        .copied()
        .fold(None, |b: Option<(f64, f64)>, r| match b {
            Some(bb) if bb.1 <= r.1 => Some(bb),
            _ => Some(r),
        })
        .expect("non-empty grid");
    write_with(&a.out, |w| {
        writeln!(w, "lambda,rmse")?;
        for (l, e) in &rows {
            writeln!(w, "{l:.16e},{e:.16e}")?;
        }
        Ok(())
    })?;
    print_json(json!({ "argmin_lambda": best.0, "rmse": best.1, "train_pairs": train.len(), "validation_pairs": valid.len() }));
    Ok(Outcome {
        primary: a.out.clone(),
        inputs: vec![a.input.input.clone()],
        outputs: vec![a.out.clone()],
        seed: Some(a.dict.dict_seed),
    })
}
