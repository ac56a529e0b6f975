//! Reference simulators: noisy Van der Pol, a diffusively coupled ring of
//! Van der Pol oscillators, and linear maps.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lifting::SnapshotPair;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VdpForm {
    /// `ẍ = μ(1 − x²)ẋ − x`
    #[default]
    Standard,
    /// `ẍ = μ(1 − x²) − x`, without the velocity factor.
    Literal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VdpConfig {
    pub mu: f64,
    pub sigma: f64,
    pub dt_sample: f64,
    pub substeps: usize,
    pub seed: u64,
    pub x0: [f64; 2],
    pub form: VdpForm,
}

impl Default for VdpConfig {
    fn default() -> Self {
        VdpConfig {
            mu: 0.8,
            sigma: 0.2,
            dt_sample: 0.01,
            substeps: 10,
            seed: 0,
            x0: [1.0, 0.0],
            form: VdpForm::Standard,
        }
    }
}

fn validate_common(mu: f64, sigma: f64, dt: f64, substeps: usize) -> Result<()> {
    if !(mu >= 0.0) || !mu.is_finite() {
        return Err(Error::config("mu must be finite and non-negative"));
    }
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::config("sigma must be finite and non-negative"));
    }
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::config("sampling interval must be positive"));
    }
    if substeps == 0 {
        return Err(Error::config("substeps must be at least 1"));
    }
    Ok(())
}

impl VdpConfig {
    pub fn validate(&self) -> Result<()> {
        validate_common(self.mu, self.sigma, self.dt_sample, self.substeps)?;
        if !self.x0.iter().all(|v| v.is_finite()) {
            return Err(Error::config("initial state must be finite"));
        }
        Ok(())
    }
}

#[inline]
fn vdp_accel(form: VdpForm, mu: f64, x: f64, v: f64) -> f64 {
    match form {
        VdpForm::Standard => mu * (1.0 - x * x) * v - x,
        VdpForm::Literal => mu * (1.0 - x * x) - x,
    }
}

/// Euler–Maruyama with step `dt_sample / substeps`; the first sample is `x0`.
pub fn simulate_vdp(cfg: &VdpConfig, n_samples: usize) -> Result<Vec<DVector<f64>>> {
    cfg.validate()?;
    if n_samples == 0 {
        return Err(Error::config("n_samples must be at least 1"));
    }
    let h = cfg.dt_sample / cfg.substeps as f64;
    let noise = cfg.sigma * h.sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let [mut x, mut v] = cfg.x0;
    let mut out = Vec::with_capacity(n_samples);
    out.push(DVector::from_row_slice(&[x, v]));
    for _ in 1..n_samples {
        for _ in 0..cfg.substeps {
            let xi: f64 = rng.sample(StandardNormal);
            let acc = vdp_accel(cfg.form, cfg.mu, x, v);
            (x, v) = (x + h * v, v + h * acc + noise * xi);
        }
        out.push(DVector::from_row_slice(&[x, v]));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RingConfig {
    pub n_osc: usize,
    pub mu: f64,
    pub sigma: f64,
    pub dt_sample: f64,
    pub substeps: usize,
    pub seed: u64,
    pub coupling: f64,
    /// Layout `[x₁, ẋ₁, …, x_n, ẋ_n]`; drawn uniformly from `[-2, 2]` when absent.
    pub x0: Option<Vec<f64>>,
    pub form: VdpForm,
}

impl Default for RingConfig {
    fn default() -> Self {
        RingConfig {
            n_osc: 10,
            mu: 0.8,
            sigma: 0.2,
            dt_sample: 0.01,
            substeps: 10,
            seed: 0,
            coupling: 0.1,
            x0: None,
            form: VdpForm::Standard,
        }
    }
}

impl RingConfig {
    pub fn state_dim(&self) -> usize {
        2 * self.n_osc
    }

    pub fn validate(&self) -> Result<()> {
        validate_common(self.mu, self.sigma, self.dt_sample, self.substeps)?;
        if self.n_osc < 2 {
            return Err(Error::config("a ring needs at least 2 oscillators"));
        }
        if !self.coupling.is_finite() {
            return Err(Error::config("coupling must be finite"));
        }
        if let Some(x0) = &self.x0 {
            if x0.len() != self.state_dim() || !x0.iter().all(|v| v.is_finite()) {
                return Err(Error::config(format!(
                    "initial state must have {} finite entries",
                    self.state_dim()
                )));
            }
        }
        Ok(())
    }
}

/// Seed of oscillator `i`'s noise stream within a ring seeded with `seed`.
pub fn oscillator_seed(seed: u64, i: usize) -> u64 {
    // splitmix64 finalizer over (seed, i)
    let mut z = seed ^ (i as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `coupling · L` with `L` the ring circulant: 2 on the diagonal, −1 on neighbours.
pub fn ring_laplacian(n_osc: usize, coupling: f64) -> DMatrix<f64> {
    let mut l = DMatrix::zeros(n_osc, n_osc);
    for i in 0..n_osc {
        l[(i, i)] += 2.0 * coupling;
        l[(i, (i + 1) % n_osc)] -= coupling;
        l[(i, (i + n_osc - 1) % n_osc)] -= coupling;
    }
    l
}

/// Ring of oscillators with diffusive position coupling `−coupling·(L x)ᵢ`.
pub fn simulate_ring(cfg: &RingConfig, n_samples: usize) -> Result<Vec<DVector<f64>>> {
    cfg.validate()?;
    if n_samples == 0 {
        return Err(Error::config("n_samples must be at least 1"));
    }
    let n = cfg.n_osc;
    let h = cfg.dt_sample / cfg.substeps as f64;
    let noise = cfg.sigma * h.sqrt();
    let mut rngs: Vec<ChaCha8Rng> = (0..n)
        .map(|i| ChaCha8Rng::seed_from_u64(oscillator_seed(cfg.seed, i)))
        .collect();
    let mut s = match &cfg.x0 {
        Some(x0) => x0.clone(),
        None => {
            let mut init = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x005E_ED0F_5A7E);
            (0..2 * n).map(|_| init.random_range(-2.0..=2.0)).collect()
        }
    };
    let mut acc = vec![0.0; n];
    let mut out = Vec::with_capacity(n_samples);
    out.push(DVector::from_row_slice(&s));
    for _ in 1..n_samples {
        for _ in 0..cfg.substeps {
            for i in 0..n {
                let (x, v) = (s[2 * i], s[2 * i + 1]);
                let mut a = vdp_accel(cfg.form, cfg.mu, x, v);
                if cfg.coupling != 0.0 {
                    let left = s[2 * ((i + n - 1) % n)];
                    let right = s[2 * ((i + 1) % n)];
                    a -= cfg.coupling * (2.0 * x - left - right);
                }
                acc[i] = a;
            }
            for i in 0..n {
                let xi: f64 = rngs[i].sample(StandardNormal);
                let (x, v) = (s[2 * i], s[2 * i + 1]);
                s[2 * i] = x + h * v;
                s[2 * i + 1] = v + h * acc[i] + noise * xi;
            }
        }
        out.push(DVector::from_row_slice(&s));
    }
    Ok(out)
}

/// `xₜ₊₁ = A xₜ + σξ`; the first sample is `x0`.
pub fn simulate_linear(
    a_sys: &DMatrix<f64>,
    x0: &[f64],
    n_samples: usize,
    noise_sigma: f64,
    seed: u64,
) -> Result<Vec<DVector<f64>>> {
    let n = x0.len();
    if a_sys.shape() != (n, n) || n == 0 {
        return Err(Error::config(format!(
            "system matrix is {}x{}, initial state has length {n}",
            a_sys.nrows(),
            a_sys.ncols()
        )));
    }
    if !(noise_sigma >= 0.0) || !noise_sigma.is_finite() {
        return Err(Error::config("noise sigma must be finite and non-negative"));
    }
    if n_samples == 0 {
        return Err(Error::config("n_samples must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = DVector::from_row_slice(x0);
    let mut out = Vec::with_capacity(n_samples);
    out.push(x.clone());
    for _ in 1..n_samples {
        x = a_sys * &x;
        if noise_sigma > 0.0 {
            for v in x.iter_mut() {
                let xi: f64 = rng.sample(StandardNormal);
                *v += noise_sigma * xi;
            }
        }
        out.push(x.clone());
    }
    Ok(out)
}

/// Consecutive pairs `(traj[i], traj[i+1])`.
pub fn pairs_from_trajectory<T: Scalar>(traj: &[DVector<T>]) -> Result<Vec<SnapshotPair<T>>> {
    if traj.len() < 2 {
        return Err(Error::input("a trajectory needs at least 2 states to form a pair"));
    }
    traj.windows(2)
        .map(|w| SnapshotPair::new(w[0].clone(), w[1].clone()))
        .collect()
}

/// Converts an `f64` trajectory into another scalar type.
pub fn cast_trajectory<T: Scalar>(traj: &[DVector<f64>]) -> Vec<DVector<T>> {
    traj.iter().map(|x| x.map(T::of)).collect()
}

/// Noise-free orbit of the standard Van der Pol oscillator after a long transient,
/// sampled every `dt` over `span` seconds.
pub fn reference_limit_cycle(mu: f64, dt: f64, span: f64) -> Result<Vec<(f64, f64)>> {
    let burn = 100.0;
    let cfg = VdpConfig {
        mu,
        sigma: 0.0,
        dt_sample: dt,
        substeps: 100,
        seed: 0,
        x0: [2.0, 0.0],
        form: VdpForm::Standard,
    };
    let skip = (burn / dt).ceil() as usize;
    let keep = (span / dt).ceil() as usize;
    let traj = simulate_vdp(&cfg, skip + keep)?;
    Ok(traj[skip..].iter().map(|s| (s[0], s[1])).collect())
}
