//! Eigen-analysis of a learned operator, eigenfunction fields and prediction.

use std::cmp::Ordering;
use std::io::Write;

use nalgebra::{Complex, DMatrix, DVector, Schur};

use crate::error::{Error, Result};
use crate::lifting::{Dictionary, SnapshotPair};
use crate::scalar::Scalar;

type C<T> = Complex<T>;

#[inline]
fn cabs<T: Scalar>(z: C<T>) -> T {
    z.re.hypot(z.im)
}

/// Eigenvalues (descending modulus) with paired right eigenvectors.
#[derive(Debug, Clone)]
pub struct Spectrum<T: Scalar> {
    pub eigenvalues: Vec<C<T>>,
    /// Column `j` pairs with `eigenvalues[j]`; unit 2-norm, first nonzero
    /// component real and positive.
    pub eigenvectors: DMatrix<C<T>>,
    /// `‖K v − λ v‖₂` per pair.
    pub residuals: Vec<T>,
}

impl<T: Scalar> Spectrum<T> {
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    pub fn moduli(&self) -> Vec<T> {
        self.eigenvalues.iter().map(|z| cabs(*z)).collect()
    }

    pub fn eigenvector(&self, j: usize) -> DVector<C<T>> {
        self.eigenvectors.column(j).into_owned()
    }

    /// Index of the eigenvalue closest to `target`; the first in sort order wins ties.
    pub fn nearest(&self, target: C<T>) -> Option<usize> {
        self.eigenvalues
            .iter()
            .enumerate()
            .map(|(i, z)| (i, cabs(*z - target)))
            .fold(None, |best: Option<(usize, T)>, (i, d)| match best {
                Some((_, bd)) if bd <= d => best,
                _ => Some((i, d)),
            })
            .map(|(i, _)| i)
    }

    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "re,im,modulus")?;
        for z in &self.eigenvalues {
            writeln!(
                w,
                "{:.16e},{:.16e},{:.16e}",
                z.re.to_f64_lossy(),
                z.im.to_f64_lossy(),
                cabs(*z).to_f64_lossy()
            )?;
        }
        Ok(())
    }
}

/// Full eigendecomposition of a real square matrix.
pub fn spectrum<T: Scalar>(k_op: &DMatrix<T>) -> Result<Spectrum<T>> {
    let n = k_op.nrows();
    if k_op.ncols() != n {
        return Err(Error::input("operator must be square"));
    }
    if !k_op.iter().all(|v| v.finite()) {
        return Err(Error::input("operator contains non-finite entries"));
    }
    if n == 0 {
        return Ok(Spectrum {
            eigenvalues: vec![],
            eigenvectors: DMatrix::zeros(0, 0),
            residuals: vec![],
        });
    }

    let schur = Schur::try_new(k_op.clone(), T::default_epsilon(), 1000 * n)
        .ok_or_else(|| Error::Numerical("Schur iteration did not converge".into()))?;
    let (q, t) = schur.unpack();
    let blocks = diagonal_blocks(&t);

    let tnorm = t.iter().fold(T::zero(), |a, v| a.max(v.abs()));
    let smin = (T::default_epsilon() * tnorm).max(T::min_value().unwrap_or(T::default_epsilon()));

    // (eigenvalue, eigenvector) in Schur order; conjugate partners share one solve.
    let mut pairs: Vec<(C<T>, DVector<C<T>>)> = Vec::with_capacity(n);
    for (bi, blk) in blocks.iter().enumerate() {
        match blk.size {
            1 => {
                let lam = C::new(t[(blk.start, blk.start)], T::zero());
                let y = back_substitute(&t, &blocks, bi, lam, smin);
                pairs.push((lam, to_state_basis(&q, &y)));
            }
            _ => {
                let (l1, l2) = block_eigenvalues(&t, blk.start);
                if l1.im != T::zero() {
                    // exact conjugates: λ̄ has eigenvector v̄
                    let y = back_substitute(&t, &blocks, bi, l1, smin);
                    let v = to_state_basis(&q, &y);
                    let vbar = v.map(|z| z.conj());
                    pairs.push((l1, v));
                    pairs.push((l1.conj(), vbar));
                } else {
                    for lam in [l1, l2] {
                        let y = back_substitute(&t, &blocks, bi, lam, smin);
                        pairs.push((lam, to_state_basis(&q, &y)));
                    }
                }
            }
        }
    }

    for (_, v) in pairs.iter_mut() {
        normalize_eigenvector(v);
    }
    pairs.sort_by(|a, b| eig_order(a.0, b.0));

    let kc = k_op.map(|v| C::new(v, T::zero()));
    let mut eigenvectors = DMatrix::zeros(n, n);
    let mut eigenvalues = Vec::with_capacity(n);
    let mut residuals = Vec::with_capacity(n);
    for (j, (lam, v)) in pairs.into_iter().enumerate() {
        let r = &kc * &v - v.map(|z| z * lam);
        residuals.push(r.iter().fold(T::zero(), |a, z| a + z.re * z.re + z.im * z.im).sqrt());
        eigenvectors.set_column(j, &v);
        eigenvalues.push(lam);
    }
    Ok(Spectrum {
        eigenvalues,
        eigenvectors,
        residuals,
    })
}

fn eig_order<T: Scalar>(a: C<T>, b: C<T>) -> Ordering {
    let (ma, mb) = (cabs(a), cabs(b));
    mb.partial_cmp(&ma)
        .unwrap_or(Ordering::Equal)
        .then_with(|| b.re.partial_cmp(&a.re).unwrap_or(Ordering::Equal))
        .then_with(|| a.im.partial_cmp(&b.im).unwrap_or(Ordering::Equal))
}

#[derive(Debug, Clone, Copy)]
struct Block {
    start: usize,
    size: usize,
}

fn diagonal_blocks<T: Scalar>(t: &DMatrix<T>) -> Vec<Block> {
    let n = t.nrows();
    let mut out = Vec::new();
    let mut i = 0;
    while i < n {
        if i + 1 < n && t[(i + 1, i)] != T::zero() {
            out.push(Block { start: i, size: 2 });
            i += 2;
        } else {
            out.push(Block { start: i, size: 1 });
            i += 1;
        }
    }
    out
}

/// Eigenvalues of the 2×2 diagonal block at `s`; the positive-imaginary one first.
fn block_eigenvalues<T: Scalar>(t: &DMatrix<T>, s: usize) -> (C<T>, C<T>) {
    let (a, b, c, d) = (t[(s, s)], t[(s, s + 1)], t[(s + 1, s)], t[(s + 1, s + 1)]);
    let half = T::of(0.5);
    let mean = (a + d) * half;
    let diff = (a - d) * half;
    let disc = diff * diff + b * c;
    if disc < T::zero() {
        let w = (-disc).sqrt();
        (C::new(mean, w), C::new(mean, -w))
    } else {
        let w = disc.sqrt();
        // avoid cancellation: compute the larger-magnitude root directly
        let r1 = if mean >= T::zero() { mean + w } else { mean - w };
        let r2 = if r1 != T::zero() { (a * d - b * c) / r1 } else { mean - w };
        (C::new(r1, T::zero()), C::new(r2, T::zero()))
    }
}

/// Solves `(T − λI) y = 0` with `y` supported on blocks `0..=own`.
fn back_substitute<T: Scalar>(
    t: &DMatrix<T>,
    blocks: &[Block],
    own: usize,
    lam: C<T>,
    smin: T,
) -> DVector<C<T>> {
    let n = t.nrows();
    let mut y = DVector::from_element(n, C::new(T::zero(), T::zero()));
    let ob = blocks[own];
    let tc = |i: usize, j: usize| C::new(t[(i, j)], T::zero());

    if ob.size == 1 {
        y[ob.start] = C::new(T::one(), T::zero());
    } else {
        let s = ob.start;
        let (a, b, c, d) = (tc(s, s) - lam, tc(s, s + 1), tc(s + 1, s), tc(s + 1, s + 1) - lam);
        // null vector of [[a,b],[c,d]], from the better-scaled row
        let (y0, y1) = if cabs(a) + cabs(b) >= cabs(c) + cabs(d) {
            (b, -a)
        } else {
            (d, -c)
        };
        let (y0, y1) = if cabs(y0) + cabs(y1) == T::zero() {
            (C::new(T::one(), T::zero()), C::new(T::zero(), T::zero()))
        } else {
            (y0, y1)
        };
        y[s] = y0;
        y[s + 1] = y1;
    }
    let end = ob.start + ob.size;

    for bi in (0..own).rev() {
        let blk = blocks[bi];
        let rows = blk.start..blk.start + blk.size;
        let mut rhs = [C::new(T::zero(), T::zero()); 2];
        for (ri, r) in rows.clone().enumerate() {
            let mut acc = C::new(T::zero(), T::zero());
            for l in (blk.start + blk.size)..end {
                acc += tc(r, l) * y[l];
            }
            rhs[ri] = -acc;
        }
        if blk.size == 1 {
            let mut den = tc(blk.start, blk.start) - lam;
            if cabs(den) < smin {
                den = C::new(smin, T::zero());
            }
            y[blk.start] = rhs[0] / den;
        } else {
            let s = blk.start;
            let (a, b, c, d) = (tc(s, s) - lam, tc(s, s + 1), tc(s + 1, s), tc(s + 1, s + 1) - lam);
            let mut det = a * d - b * c;
            if cabs(det) < smin * smin.max(T::one()) {
                det = C::new(smin, T::zero());
            }
            y[s] = (rhs[0] * d - b * rhs[1]) / det;
            y[s + 1] = (a * rhs[1] - c * rhs[0]) / det;
        }
    }
    y
}

fn to_state_basis<T: Scalar>(q: &DMatrix<T>, y: &DVector<C<T>>) -> DVector<C<T>> {
    let n = q.nrows();
    let mut v = DVector::from_element(n, C::new(T::zero(), T::zero()));
    for (j, yj) in y.iter().enumerate() {
        if yj.re == T::zero() && yj.im == T::zero() {
            continue;
        }
        for i in 0..n {
            v[i] += *yj * q[(i, j)];
        }
    }
    v
}

/// Unit 2-norm; first component above `1e-10·max|vᵢ|` rotated onto the positive real axis.
fn normalize_eigenvector<T: Scalar>(v: &mut DVector<C<T>>) {
    let norm = v.iter().fold(T::zero(), |a, z| a + z.re * z.re + z.im * z.im).sqrt();
    if norm == T::zero() {
        return;
    }
    let inv = T::one() / norm;
    for z in v.iter_mut() {
        *z = C::new(z.re * inv, z.im * inv);
    }
    let vmax = v.iter().fold(T::zero(), |a, z| a.max(cabs(*z)));
    let thresh = vmax * T::of(1e-10);
    if let Some(first) = v.iter().copied().find(|z| cabs(*z) > thresh) {
        let m = cabs(first);
        let phase = C::new(first.re / m, -first.im / m);
        for z in v.iter_mut() {
            *z *= phase;
        }
        // exact zero imaginary part on the reference component
        if let Some(z) = v.iter_mut().find(|z| cabs(**z) > thresh) {
            *z = C::new(cabs(*z), T::zero());
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilityReport {
    pub stable: bool,
    pub max_modulus: f64,
    pub count_outside: usize,
}

/// Stable iff every eigenvalue satisfies `|λ| ≤ 1 + tolerance`.
pub fn stability_report<T: Scalar>(eigenvalues: &[C<T>], tolerance: f64) -> StabilityReport {
    let bound = 1.0 + tolerance.max(0.0);
    let moduli: Vec<f64> = eigenvalues.iter().map(|z| cabs(*z).to_f64_lossy()).collect();
    let max_modulus = moduli.iter().copied().fold(0.0, f64::max);
    let count_outside = moduli.iter().filter(|m| **m > bound).count();
    StabilityReport {
        stable: count_outside == 0,
        max_modulus,
        count_outside,
    }
}

/// Which eigenvector an eigenfunction field is built from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EigenSelector {
    Nearest { re: f64, im: f64 },
    Index(usize),
}

impl Default for EigenSelector {
    fn default() -> Self {
        EigenSelector::Nearest { re: 1.0, im: 0.0 }
    }
}

impl EigenSelector {
    pub fn resolve<T: Scalar>(&self, s: &Spectrum<T>) -> Result<usize> {
        match *self {
            EigenSelector::Index(i) if i < s.len() => Ok(i),
            EigenSelector::Index(i) => Err(Error::config(format!(
                "eigenvalue index {i} out of range ({} eigenvalues)",
                s.len()
            ))),
            EigenSelector::Nearest { re, im } => s
                .nearest(C::new(T::of(re), T::of(im)))
                .ok_or_else(|| Error::config("spectrum is empty")),
        }
    }
}

/// Rectangular lattice over two state coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
    pub nx: usize,
    pub ny: usize,
    /// State coordinates mapped to the grid axes.
    pub axes: (usize, usize),
    /// Full state used for the coordinates not on the grid; required when `N ≠ 2`.
    pub base: Option<Vec<f64>>,
}

impl GridSpec {
    pub fn planar(x_range: (f64, f64), y_range: (f64, f64), nx: usize, ny: usize) -> Self {
        GridSpec {
            x_range,
            y_range,
            nx,
            ny,
            axes: (0, 1),
            base: None,
        }
    }

    fn axis(range: (f64, f64), n: usize, i: usize) -> f64 {
        if n == 1 {
            range.0
        } else {
            range.0 + (range.1 - range.0) * i as f64 / (n - 1) as f64
        }
    }

    /// Node coordinates, x fastest.
    pub fn nodes(&self) -> Vec<(f64, f64)> {
        let mut out = Vec::with_capacity(self.nx * self.ny);
        for iy in 0..self.ny {
            let y = Self::axis(self.y_range, self.ny, iy);
            for ix in 0..self.nx {
                out.push((Self::axis(self.x_range, self.nx, ix), y));
            }
        }
        out
    }

    fn validate(&self, state_dim: usize) -> Result<()> {
        let finite = [self.x_range.0, self.x_range.1, self.y_range.0, self.y_range.1]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.nx == 0 || self.ny == 0 {
            return Err(Error::config("grid bounds must be finite and resolution positive"));
        }
        if self.axes.0 >= state_dim || self.axes.1 >= state_dim || self.axes.0 == self.axes.1 {
            return Err(Error::config("grid axes must be two distinct state coordinates"));
        }
        match &self.base {
            None if state_dim != 2 => Err(Error::config(format!(
                "a 2-D window on a {state_dim}-dimensional system needs a coordinate slice"
            ))),
            Some(b) if b.len() != state_dim => Err(Error::config(format!(
                "slice base has length {}, state dimension is {state_dim}",
                b.len()
            ))),
            _ => Ok(()),
        }
    }
}

/// `Ψ(x)·φ` sampled on a grid.
#[derive(Debug, Clone)]
pub struct EigenfunctionField<T: Scalar> {
    pub grid: GridSpec,
    pub eigenvalue: C<T>,
    pub values: Vec<C<T>>,
    pub modulus: Vec<T>,
}

impl<T: Scalar> EigenfunctionField<T> {
    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "x1,x2,re,im,modulus")?;
        for ((x, y), (v, m)) in self.grid.nodes().iter().zip(self.values.iter().zip(&self.modulus)) {
            writeln!(
                w,
                "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                x,
                y,
                v.re.to_f64_lossy(),
                v.im.to_f64_lossy(),
                m.to_f64_lossy()
            )?;
        }
        Ok(())
    }

    /// Nodes whose modulus lies in the top `1 − level` of the field's range.
    pub fn high_level_set(&self, level: f64) -> Vec<bool> {
        let m: Vec<f64> = self.modulus.iter().map(|v| v.to_f64_lossy()).collect();
        let lo = m.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = m.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = hi - lo;
        if !(span > 0.0) {
            return vec![true; m.len()];
        }
        m.iter().map(|v| (v - lo) / span >= level).collect()
    }
}

pub fn eigenfunction_on_grid<T: Scalar>(
    dict: &Dictionary<T>,
    s: &Spectrum<T>,
    which: EigenSelector,
    grid: &GridSpec,
) -> Result<EigenfunctionField<T>> {
    if s.len() != dict.total_dim() {
        return Err(Error::config(format!(
            "spectrum has {} modes, dictionary lifts to {}",
            s.len(),
            dict.total_dim()
        )));
    }
    grid.validate(dict.state_dim())?;
    let j = which.resolve(s)?;
    let phi = s.eigenvector(j);
    let mut state: Vec<T> = match &grid.base {
        Some(b) => b.iter().map(|v| T::of(*v)).collect(),
        None => vec![T::zero(); dict.state_dim()],
    };
    let mut psi = vec![T::zero(); dict.total_dim()];
    let nodes = grid.nodes();
    let mut values = Vec::with_capacity(nodes.len());
    let mut modulus = Vec::with_capacity(nodes.len());
    for (x, y) in nodes {
        state[grid.axes.0] = T::of(x);
        state[grid.axes.1] = T::of(y);
        dict.lift_into(&state, &mut psi)?;
        let v = psi
            .iter()
            .zip(phi.iter())
            .fold(C::new(T::zero(), T::zero()), |acc, (p, f)| acc + *f * *p);
        modulus.push(cabs(v));
        values.push(v);
    }
    Ok(EigenfunctionField {
        grid: grid.clone(),
        eigenvalue: s.eigenvalues[j],
        values,
        modulus,
    })
}

/// Agreement between a field's high-level set `H` and the tube `T` of
/// grid nodes within `radius` of a reference curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevelSetOverlap {
    /// `|H ∩ T| / |T|`: share of the tube captured by the high-level set.
    pub coverage: f64,
    /// `|H ∩ T| / |H|`.
    pub precision: f64,
    /// `|H| / |grid|`.
    pub high_fraction: f64,
}

pub fn level_set_overlap<T: Scalar>(
    field: &EigenfunctionField<T>,
    level: f64,
    reference: &[(f64, f64)],
    radius: f64,
) -> LevelSetOverlap {
    let high = field.high_level_set(level);
    let r2 = radius * radius;
    let nodes = field.grid.nodes();
    let mut tube = 0usize;
    let mut both = 0usize;
    for (node, h) in nodes.iter().zip(&high) {
        let inside = reference
            .iter()
            .any(|p| (p.0 - node.0).powi(2) + (p.1 - node.1).powi(2) <= r2);
        if inside {
            tube += 1;
            if *h {
                both += 1;
            }
        }
    }
    let n_high = high.iter().filter(|h| **h).count();
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    LevelSetOverlap {
        coverage: ratio(both, tube),
        precision: ratio(both, n_high),
        high_fraction: ratio(n_high, nodes.len()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PredictMode {
    /// Iterate `z ← z·K` in lifted space and read out the identity block.
    #[default]
    LiftedRollout,
    /// Read out the state each step and lift it again.
    ReliftEachStep,
}

/// Multi-step prediction from `x0`; returns `steps + 1` states starting with `x0`.
pub fn predict<T: Scalar>(
    k_op: &DMatrix<T>,
    dict: &Dictionary<T>,
    x0: &[T],
    steps: usize,
    mode: PredictMode,
) -> Result<Vec<DVector<T>>> {
    let off = dict
        .identity_offset()
        .ok_or_else(|| Error::config("prediction needs identity observables in the dictionary"))?;
    let k = dict.total_dim();
    if k_op.shape() != (k, k) {
        return Err(Error::config(format!(
            "operator is {}x{}, dictionary lifts to {k}",
            k_op.nrows(),
            k_op.ncols()
        )));
    }
    let n = dict.state_dim();
    let kt = k_op.transpose();
    let mut z = dict.lift(x0)?;
    let mut out = vec![DVector::from_row_slice(x0)];
    for _ in 0..steps {
        z = &kt * &z;
        let x = DVector::from_row_slice(&z.as_slice()[off..off + n]);
        if !x.iter().all(|v| v.finite()) {
            return Err(Error::Numerical("prediction diverged to non-finite values".into()));
        }
        if mode == PredictMode::ReliftEachStep {
            z = dict.lift(x.as_slice())?;
        }
        out.push(x);
    }
    Ok(out)
}

/// Root-mean-square one-step error `‖Ψ(x)K − Ψ(y)‖` per lifted coordinate.
pub fn lifted_one_step_rmse<T: Scalar>(
    k_op: &DMatrix<T>,
    dict: &Dictionary<T>,
    pairs: &[SnapshotPair<T>],
) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::input("validation set is empty"));
    }
    let kt = k_op.transpose();
    let mut sum = 0.0;
    for p in pairs {
        let zx = dict.lift(p.x.as_slice())?;
        let zy = dict.lift(p.y.as_slice())?;
        let e = &kt * zx - zy;
        sum += e.iter().map(|v| v.to_f64_lossy().powi(2)).sum::<f64>();
    }
    Ok((sum / (pairs.len() * dict.total_dim()) as f64).sqrt())
}
