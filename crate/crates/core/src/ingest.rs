//! CSV replay of multichannel recordings and SNR-controlled noise injection.
//!
//! Canonical format: UTF-8, comma separated, header row, first column `t`,
//! floats written with 17 significant digits.

use std::collections::VecDeque;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::marker::PhantomData;
use std::path::{Path, PathBuf};

use log::warn;
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::lifting::SnapshotPair;
use crate::scalar::Scalar;

/// Samples used to estimate per-channel signal power before noise injection.
pub const SNR_PREFIX: usize = 500;

#[derive(Debug, Clone, PartialEq, Default)]
pub enum ColumnSelection {
    /// Every column except a leading `t`.
    #[default]
    AllStates,
    Names(Vec<String>),
    /// Zero-based positions in the header, `t` included.
    Indices(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CsvStreamConfig {
    pub path: PathBuf,
    pub columns: ColumnSelection,
    /// Informational only; replay is as fast as the consumer reads.
    pub sample_rate_hz: Option<f64>,
    /// `None` or `+∞` disables noise.
    pub snr_db: Option<f64>,
    pub seed: u64,
}

impl CsvStreamConfig {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        CsvStreamConfig {
            path: path.into(),
            columns: ColumnSelection::AllStates,
            sample_rate_hz: None,
            snr_db: None,
            seed: 0,
        }
    }
}

/// Row iterator over selected CSV columns.
pub struct CsvStream {
    records: csv::StringRecordsIntoIter<File>,
    indices: Vec<usize>,
    names: Vec<String>,
    row: usize,
}

impl std::fmt::Debug for CsvStream {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CsvStream")
            .field("names", &self.names)
            .field("row", &self.row)
            .finish()
    }
}

impl CsvStream {
    /// Names of the selected columns, in output order.
    pub fn columns(&self) -> &[String] {
        &self.names
    }
}

impl Iterator for CsvStream {
    type Item = Result<DVector<f64>>;

    fn next(&mut self) -> Option<Self::Item> {
        let rec = self.records.next()?;
        self.row += 1;
        let row = self.row;
        Some(rec.map_err(|e| Error::input(format!("row {row}: {e}"))).and_then(|rec| {
            let mut out = DVector::zeros(self.indices.len());
            for (k, &i) in self.indices.iter().enumerate() {
                let cell = rec
                    .get(i)
                    .ok_or_else(|| Error::input(format!("row {row}: missing column {i}")))?;
                let v: f64 = cell
                    .parse()
                    .map_err(|_| Error::input(format!("row {row}: cannot parse {cell:?}")))?;
                if !v.is_finite() {
                    return Err(Error::input(format!("row {row}: non-finite value {cell:?}")));
                }
                out[k] = v;
            }
            Ok(out)
        }))
    }
}

fn resolve_columns(header: &[String], sel: &ColumnSelection) -> Result<Vec<usize>> {
    let indices = match sel {
        ColumnSelection::AllStates => {
            let skip = usize::from(header.first().map(|h| h == "t").unwrap_or(false));
            (skip..header.len()).collect::<Vec<_>>()
        }
        ColumnSelection::Names(names) => names
            .iter()
            .map(|n| {
                header
                    .iter()
                    .position(|h| h == n)
                    .ok_or_else(|| Error::config(format!("column {n:?} not found in header")))
            })
            .collect::<Result<Vec<_>>>()?,
        ColumnSelection::Indices(ix) => {
            if let Some(bad) = ix.iter().find(|i| **i >= header.len()) {
                return Err(Error::config(format!(
                    "column index {bad} out of range ({} columns)",
                    header.len()
                )));
            }
            ix.clone()
        }
    };
    if indices.is_empty() {
        return Err(Error::config("no state columns selected"));
    }
    let mut sorted = indices.clone();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() != indices.len() {
        return Err(Error::config("selected columns must be distinct"));
    }
    Ok(indices)
}

/// Opens a CSV file for single-pass replay. Noise settings in `cfg` are ignored here.
pub fn open_csv_stream(cfg: &CsvStreamConfig) -> Result<CsvStream> {
    let file = File::open(&cfg.path).map_err(|e| {
        Error::config(format!("cannot open {}: {e}", cfg.path.display()))
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if header.is_empty() || header.iter().all(|h| h.is_empty()) {
        return Err(Error::config(format!("{} has no header row", cfg.path.display())));
    }
    let indices = resolve_columns(&header, &cfg.columns)?;
    let names = indices.iter().map(|i| header[*i].clone()).collect();
    Ok(CsvStream {
        records: reader.into_records(),
        indices,
        names,
        row: 0,
    })
}

pub type StateStream = Box<dyn Iterator<Item = Result<DVector<f64>>> + Send>;

/// Opens the file and applies noise injection if `cfg.snr_db` asks for it.
/// Returns the stream and the selected column names.
pub fn open_state_stream(cfg: &CsvStreamConfig) -> Result<(StateStream, Vec<String>)> {
    let csv = open_csv_stream(cfg)?;
    let names = csv.columns().to_vec();
    let stream: StateStream = match cfg.snr_db {
        Some(db) => Box::new(add_noise_snr(csv, db, cfg.seed)?),
        None => Box::new(csv),
    };
    Ok((stream, names))
}

/// Per-channel additive Gaussian noise at a target SNR.
///
/// Channel power is the mean-removed variance of the first [`SNR_PREFIX`]
/// valid samples; the noise standard deviation stays fixed thereafter.
pub struct NoisyStream<I> {
    inner: I,
    snr_db: f64,
    rng: ChaCha8Rng,
    buffer: VecDeque<Result<DVector<f64>>>,
    std: Option<Vec<f64>>,
    zero_power: Vec<usize>,
}

pub fn add_noise_snr<I>(inner: I, snr_db: f64, seed: u64) -> Result<NoisyStream<I>>
where
    I: Iterator<Item = Result<DVector<f64>>>,
{
    if snr_db.is_nan() || snr_db == f64::NEG_INFINITY {
        return Err(Error::config("SNR must be finite (or +inf to disable noise)"));
    }
    Ok(NoisyStream {
        inner,
        snr_db,
        rng: ChaCha8Rng::seed_from_u64(seed),
        buffer: VecDeque::new(),
        std: None,
        zero_power: Vec::new(),
    })
}

impl<I> NoisyStream<I> {
    /// Noise standard deviation per channel, once the prefix has been read.
    pub fn noise_std(&self) -> Option<&[f64]> {
        self.std.as_deref()
    }

    /// Channels whose prefix power was zero (no noise injected).
    pub fn zero_power_channels(&self) -> &[usize] {
        &self.zero_power
    }
}

impl<I> NoisyStream<I>
where
    I: Iterator<Item = Result<DVector<f64>>>,
{
    fn calibrate(&mut self) {
        let mut valid = 0usize;
        while valid < SNR_PREFIX {
            match self.inner.next() {
                Some(item) => {
                    valid += usize::from(item.is_ok());
                    self.buffer.push_back(item);
                }
                None => break,
            }
        }
        let samples: Vec<&DVector<f64>> = self.buffer.iter().filter_map(|r| r.as_ref().ok()).collect();
        let dim = samples.first().map(|x| x.len()).unwrap_or(0);
        let scale = 10f64.powf(self.snr_db / 10.0);
        let mut std = vec![0.0; dim];
        for (c, s) in std.iter_mut().enumerate() {
            let n = samples.len() as f64;
            let mean = samples.iter().map(|x| x[c]).sum::<f64>() / n;
            let var = samples.iter().map(|x| (x[c] - mean).powi(2)).sum::<f64>() / n;
            if var == 0.0 {
                self.zero_power.push(c);
            }
            *s = (var / scale).sqrt();
        }
        if !self.zero_power.is_empty() && scale.is_finite() {
            warn!("channels {:?} have zero signal power; no noise injected there", self.zero_power);
        }
        self.std = Some(std);
    }

    fn corrupt(&mut self, mut x: DVector<f64>) -> Result<DVector<f64>> {
        let std = self.std.as_ref().expect("calibrated");
        if x.len() != std.len() {
            return Err(Error::input(format!(
                "sample has {} channels, stream started with {}",
                x.len(),
                std.len()
            )));
        }
        for (v, s) in x.iter_mut().zip(std) {
            if *s > 0.0 {
                let xi: f64 = self.rng.sample(StandardNormal);
                *v += s * xi;
            }
        }
        Ok(x)
    }
}

impl<I> Iterator for NoisyStream<I>
where
    I: Iterator<Item = Result<DVector<f64>>>,
{
    type Item = Result<DVector<f64>>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.snr_db == f64::INFINITY {
            return self.inner.next();
        }
        if self.std.is_none() {
            self.calibrate();
        }
        let item = match self.buffer.pop_front() {
            Some(item) => item,
            None => self.inner.next()?,
        };
        Some(item.and_then(|x| self.corrupt(x)))
    }
}

/// Turns a state stream into consecutive snapshot pairs.
///
/// A bad state yields one error and restarts pairing at the next good state.
pub struct PairStream<I, T> {
    inner: I,
    prev: Option<DVector<T>>,
    _t: PhantomData<T>,
}

pub fn pairs<I, T>(inner: I) -> PairStream<I, T>
where
    I: Iterator<Item = Result<DVector<f64>>>,
    T: Scalar,
{
    PairStream {
        inner,
        prev: None,
        _t: PhantomData,
    }
}

impl<I, T> Iterator for PairStream<I, T>
where
    I: Iterator<Item = Result<DVector<f64>>>,
    T: Scalar,
{
    type Item = Result<SnapshotPair<T>>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            match self.inner.next()? {
                Err(e) => {
                    self.prev = None;
                    return Some(Err(e));
                }
                Ok(x) => {
                    let x = x.map(T::of);
                    match self.prev.replace(x.clone()) {
                        None => continue,
                        Some(p) => return Some(SnapshotPair::new(p, x)),
                    }
                }
            }
        }
    }
}

/// `x1, …, xN`.
pub fn default_column_names(n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("x{i}")).collect()
}

pub fn write_csv_to<W: Write, T: Scalar>(
    w: &mut W,
    traj: &[DVector<T>],
    names: &[String],
    dt: f64,
) -> Result<()> {
    if let Some(bad) = traj.iter().find(|x| x.len() != names.len()) {
        return Err(Error::input(format!(
            "state has {} entries but {} column names were given",
            bad.len(),
            names.len()
        )));
    }
    write!(w, "t")?;
    for n in names {
        write!(w, ",{n}")?;
    }
    writeln!(w)?;
    for (i, x) in traj.iter().enumerate() {
        write!(w, "{:.16e}", i as f64 * dt)?;
        for v in x.iter() {
            write!(w, ",{:.16e}", v.to_f64_lossy())?;
        }
        writeln!(w)?;
    }
    Ok(())
}

pub fn write_csv<T: Scalar>(path: &Path, traj: &[DVector<T>], names: &[String], dt: f64) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_csv_to(&mut w, traj, names, dt)?;
    w.flush()?;
    Ok(())
}
