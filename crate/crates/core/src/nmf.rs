//! Non-negative matrix factorization `X ≈ W·H` under the Frobenius objective.
//!
//! Two monotone solvers share one driver: Lee–Seung multiplicative updates
//! and HALS. HALS is the default; multiplicative updates stall for thousands
//! of iterations on exactly low-rank inputs.
//!
//! `X` is sparse (terms × documents); `W` (terms × k) and `H` (k × documents)
//! are dense. Every product iterates the sparse columns in a fixed order so a
//! given `(X, k, seed)` always produces bit-identical factors.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::{Array2, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::binio;
use crate::corpus::SparseMatrix;
use crate::error::{Error, Result};
use crate::linalg;

/// Added to every update denominator.
pub const EPSILON: f64 = 1e-12;

pub const INNER_ITERS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NmfOptions {
    pub max_iters: usize,
    /// Stop once the relative loss improvement between iterations drops below this.
    pub tol: f64,
    /// Multiplicative steps applied to each factor per outer iteration. The
    /// sparse products `WᵀX` and `XHᵀ` are computed once per outer iteration
    /// and reused by every inner step.
    pub inner_iters: usize,
    pub solver: Solver,
    #[serde(default)]
    pub init: Init,
    /// After each iteration, try the point `new + β(new - old)` and keep it
    /// only when its error is lower. The loss stays non-increasing.
    #[serde(default)]
    pub extrapolate: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    /// Seeded uniform values, see [`init_factors`].
    #[default]
    Uniform,
    /// Non-negative double SVD; exact zeros are filled with small seeded values.
    Nndsvd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Solver {
    /// Lee–Seung multiplicative updates.
    Multiplicative,
    /// Hierarchical alternating least squares: exact minimization over one
    /// row of H (column of W) at a time, projected onto the non-negative orthant.
    #[default]
    Hals,
}

impl Default for NmfOptions {
    fn default() -> Self {
        NmfOptions {
            max_iters: 500,
            tol: 1e-5,
            inner_iters: INNER_ITERS,
            solver: Solver::default(),
            init: Init::default(),
            extrapolate: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NmfFactors {
    pub w: Array2<f64>,
    pub h: Array2<f64>,
    pub k: usize,
    /// Relative Frobenius error after each completed iteration.
    pub loss_history: Vec<f64>,
    pub seed: u64,
}

impl NmfFactors {
    pub fn final_error(&self) -> Option<f64> {
        self.loss_history.last().copied()
    }

    pub fn iterations(&self) -> usize {
        self.loss_history.len()
    }
}

/// Uniform (0, 1) entries scaled by `sqrt(data_mean / k)`.
pub fn init_factors(rows: usize, cols: usize, k: usize, seed: u64, data_mean: f64) -> NmfFactors {
    let k = k.max(1);
    let scale = if data_mean > 0.0 {
        (data_mean / k as f64).sqrt()
    } else {
        1.0
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = || loop {
        let u: f64 = rng.gen();
        if u > 0.0 {
            return u * scale;
        }
    };
    let w = Array2::from_shape_simple_fn((rows, k), &mut draw);
    let h = Array2::from_shape_simple_fn((k, cols), &mut draw);
    NmfFactors {
        w,
        h,
        k,
        loss_history: Vec::new(),
        seed,
    }
}

pub fn factorize(x: &SparseMatrix, k: usize, seed: u64, opts: &NmfOptions) -> Result<NmfFactors> {
    check_rank(x, k)?;
    if opts.max_iters < 1 {
        return Err(Error::param("max_iters must be at least 1"));
    }
    let init = match opts.init {
        Init::Uniform => init_factors(x.rows(), x.cols(), k, seed, x.mean()),
        Init::Nndsvd => nndsvd(x, k, seed),
    };
    Ok(run_updates(x, init, opts))
}

/// Continue multiplicative updates from the given starting factors.
pub fn factorize_from(x: &SparseMatrix, start: NmfFactors, opts: &NmfOptions) -> Result<NmfFactors> {
    check_rank(x, start.k)?;
    check_shapes(x, &start.w, &start.h)?;
    Ok(run_updates(x, start, opts))
}

/// NNDSVD start: each singular pair is split into positive and negative
/// parts and the dominant part kept. Zeros are replaced by draws from
/// `(0, mean(X)/100]` so HALS and multiplicative updates can both move them.
pub fn nndsvd(x: &SparseMatrix, k: usize, seed: u64) -> NmfFactors {
    let svd = linalg::randomized_svd(x, k, seed);
    let (rows, cols) = (x.rows(), x.cols());
    let mut w = Array2::zeros((rows, k));
    let mut h = Array2::zeros((k, cols));
    let norm = |v: &ndarray::Array1<f64>| v.dot(v).sqrt();
    for j in 0..svd.s.len() {
        let u = svd.u.column(j);
        let v = svd.vt.row(j);
        let (up, un) = (u.mapv(|a| a.max(0.0)), u.mapv(|a| (-a).max(0.0)));
        let (vp, vn) = (v.mapv(|a| a.max(0.0)), v.mapv(|a| (-a).max(0.0)));
        let (np, nn) = (norm(&up) * norm(&vp), norm(&un) * norm(&vn));
        let (uu, vv, sigma) = if np >= nn { (up, vp, np) } else { (un, vn, nn) };
        let (nu, nv) = (norm(&uu), norm(&vv));
        if sigma <= 0.0 || nu == 0.0 || nv == 0.0 {
            continue;
        }
        let scale = (svd.s[j] * sigma).sqrt();
        w.column_mut(j).assign(&(uu * (scale / nu)));
        h.row_mut(j).assign(&(vv * (scale / nv)));
    }
    let fill = x.mean() / 100.0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut draw = || loop {
        let u: f64 = rng.gen();
        if u > 0.0 {
            return u * fill;
        }
    };
    w.mapv_inplace(|a| if a == 0.0 { draw() } else { a });
    h.mapv_inplace(|a| if a == 0.0 { draw() } else { a });
    NmfFactors {
        w,
        h,
        k,
        loss_history: Vec::new(),
        seed,
    }
}

fn check_rank(x: &SparseMatrix, k: usize) -> Result<()> {
    if x.is_all_zero() {
        return Err(Error::Data("cannot factorize an all-zero matrix".into()));
    }
    let bound = x.rows().min(x.cols());
    if k < 1 || k > bound {
        return Err(Error::param(format!(
            "k must be in [1, {bound}] for a {}x{} matrix, got {k}",
            x.rows(),
            x.cols()
        )));
    }
    Ok(())
}

fn check_shapes(x: &SparseMatrix, w: &Array2<f64>, h: &Array2<f64>) -> Result<()> {
    let (m, kw) = w.dim();
    let (kh, n) = h.dim();
    if m != x.rows() || n != x.cols() || kw != kh {
        return Err(Error::Dimension {
            expected: format!("W {}xk, H kx{}", x.rows(), x.cols()),
            found: format!("W {m}x{kw}, H {kh}x{n}"),
        });
    }
    Ok(())
}

fn run_updates(x: &SparseMatrix, mut f: NmfFactors, opts: &NmfOptions) -> NmfFactors {
    let x_norm_sq = x.frobenius_sq();
    let mut prev: Option<f64> = None;
    let mut beta = BETA_START;
    for _ in 0..opts.max_iters {
        let old = opts.extrapolate.then(|| (f.w.clone(), f.h.clone()));
        match opts.solver {
            Solver::Multiplicative => {
                update_h_repeated(x, &f.w, &mut f.h, opts.inner_iters);
                update_w_repeated(x, &mut f.w, &f.h, opts.inner_iters);
            }
            Solver::Hals => {
                hals_h(x, &f.w, &mut f.h, opts.inner_iters);
                hals_w(x, &mut f.w, &f.h, opts.inner_iters);
            }
        }
        let mut err = relative_error(x, &f.w, &f.h, x_norm_sq);
        if let Some((w0, h0)) = old {
            let w = extrapolated(&f.w, &w0, beta);
            let h = extrapolated(&f.h, &h0, beta);
            let e = relative_error(x, &w, &h, x_norm_sq);
            if e < err {
                (f.w, f.h, err) = (w, h, e);
                beta = (beta * BETA_GROW).min(BETA_MAX);
            } else {
                beta /= BETA_SHRINK;
            }
        }
        f.loss_history.push(err);
        if err == 0.0 {
            break;
        }
        if let Some(p) = prev {
            if p > 0.0 && (p - err) / p < opts.tol {
                break;
            }
        }
        prev = Some(err);
    }
    f
}

const BETA_START: f64 = 0.5;
const BETA_GROW: f64 = 1.1;
const BETA_SHRINK: f64 = 1.5;
const BETA_MAX: f64 = 4.0;

/// `max(0, new + β(new - old))`
fn extrapolated(new: &Array2<f64>, old: &Array2<f64>, beta: f64) -> Array2<f64> {
    let mut out = new.clone();
    Zip::from(&mut out).and(old).for_each(|n, &o| *n = (*n + beta * (*n - o)).max(0.0));
    out
}

/// `H ← H ⊙ (WᵀX) ⊘ (WᵀW·H + ε)`
pub fn update_h(x: &SparseMatrix, w: &Array2<f64>, h: &mut Array2<f64>) {
    update_h_repeated(x, w, h, 1);
}

/// `W ← W ⊙ (X·Hᵀ) ⊘ (W·H·Hᵀ + ε)`
pub fn update_w(x: &SparseMatrix, w: &mut Array2<f64>, h: &Array2<f64>) {
    update_w_repeated(x, w, h, 1);
}

fn update_h_repeated(x: &SparseMatrix, w: &Array2<f64>, h: &mut Array2<f64>, steps: usize) {
    let numer = wt_x(x, w);
    let gram = w.t().dot(w);
    for _ in 0..steps.max(1) {
        let denom = gram.dot(&*h);
        Zip::from(&mut *h)
            .and(&numer)
            .and(&denom)
            .for_each(|h, &n, &d| *h *= n / (d + EPSILON));
    }
}

fn update_w_repeated(x: &SparseMatrix, w: &mut Array2<f64>, h: &Array2<f64>, steps: usize) {
    let numer = x_ht(x, h);
    let gram = h.dot(&h.t());
    for _ in 0..steps.max(1) {
        let denom = w.dot(&gram);
        Zip::from(&mut *w)
            .and(&numer)
            .and(&denom)
            .for_each(|w, &n, &d| *w *= n / (d + EPSILON));
    }
}

/// Run H-only updates with `w` held fixed, starting from a seeded H.
pub fn refit_h(x: &SparseMatrix, w: &Array2<f64>, seed: u64, opts: &NmfOptions) -> Result<NmfFactors> {
    let k = w.ncols();
    if w.nrows() != x.rows() {
        return Err(Error::Dimension {
            expected: format!("{} rows in W", x.rows()),
            found: format!("{}", w.nrows()),
        });
    }
    let mut f = init_factors(x.rows(), x.cols(), k, seed, x.mean());
    f.w = w.clone();
    let x_norm_sq = x.frobenius_sq();
    let mut prev: Option<f64> = None;
    for _ in 0..opts.max_iters.max(1) {
        match opts.solver {
            Solver::Multiplicative => update_h_repeated(x, &f.w, &mut f.h, opts.inner_iters),
            Solver::Hals => hals_h(x, &f.w, &mut f.h, opts.inner_iters),
        }
        let err = relative_error(x, &f.w, &f.h, x_norm_sq);
        f.loss_history.push(err);
        if let Some(p) = prev {
            if p == 0.0 || (p - err) / p < opts.tol {
                break;
            }
        }
        prev = Some(err);
    }
    Ok(f)
}

/// `‖X − W·H‖_F / ‖X‖_F`.
pub fn reconstruction_error(x: &SparseMatrix, f: &NmfFactors) -> Result<f64> {
    check_shapes(x, &f.w, &f.h)?;
    let norm_sq = x.frobenius_sq();
    if norm_sq == 0.0 {
        return Err(Error::Data("relative error undefined for an all-zero matrix".into()));
    }
    Ok(relative_error(x, &f.w, &f.h, norm_sq))
}

/// Matrices up to this many cells always get the direct error sum.
const DIRECT_ERROR_CELLS: usize = 1 << 12;

// ‖X − WH‖² = Σ_nz (x − ŷ)² + (‖WH‖² − Σ_nz ŷ²), with ŷ = (WH)_rc; the
// second bracket is the mass WH puts on X's zero cells.
// When X is small or has no more zero cells than stored entries, the zero
// cells are summed directly: the difference above cancels badly once WH ≈ X.
fn relative_error(x: &SparseMatrix, w: &Array2<f64>, h: &Array2<f64>, x_norm_sq: f64) -> f64 {
    let cells = x.rows() * x.cols();
    let direct = cells <= DIRECT_ERROR_CELLS || cells - x.nnz() <= x.nnz();
    let mut resid_nz = 0.0;
    let mut model_nz = 0.0;
    let mut off_direct = 0.0;
    for c in 0..x.cols() {
        let hc = h.column(c);
        let mut next_row = 0;
        for (r, v) in x.column(c) {
            let y = w.row(r).dot(&hc);
            resid_nz += (v - y) * (v - y);
            model_nz += y * y;
            if direct {
                for z in next_row..r {
                    off_direct += w.row(z).dot(&hc).powi(2);
                }
                next_row = r + 1;
            }
        }
        if direct {
            for z in next_row..x.rows() {
                off_direct += w.row(z).dot(&hc).powi(2);
            }
        }
    }
    let off_support = if direct {
        off_direct
    } else {
        let wtw = w.t().dot(w);
        let hht = h.dot(&h.t());
        let model_sq: f64 = Zip::from(&wtw).and(&hht).fold(0.0, |acc, &a, &b| acc + a * b);
        (model_sq - model_nz).max(0.0)
    };
    ((resid_nz + off_support) / x_norm_sq).sqrt()
}

fn hals_h(x: &SparseMatrix, w: &Array2<f64>, h: &mut Array2<f64>, sweeps: usize) {
    let numer = wt_x(x, w);
    let gram = w.t().dot(w);
    for _ in 0..sweeps.max(1) {
        for j in 0..h.nrows() {
            let g = gram[[j, j]];
            if g <= 0.0 {
                continue;
            }
            let delta = &numer.row(j) - &gram.row(j).dot(&*h);
            let mut row = h.row_mut(j);
            Zip::from(&mut row).and(&delta).for_each(|v, &d| *v = (*v + d / g).max(0.0));
        }
    }
}

fn hals_w(x: &SparseMatrix, w: &mut Array2<f64>, h: &Array2<f64>, sweeps: usize) {
    let numer = x_ht(x, h);
    let gram = h.dot(&h.t());
    for _ in 0..sweeps.max(1) {
        for j in 0..w.ncols() {
            let g = gram[[j, j]];
            if g <= 0.0 {
                continue;
            }
            let delta = &numer.column(j) - &w.dot(&gram.column(j));
            let mut col = w.column_mut(j);
            Zip::from(&mut col).and(&delta).for_each(|v, &d| *v = (*v + d / g).max(0.0));
        }
    }
}

pub(crate) fn wt_x(x: &SparseMatrix, w: &Array2<f64>) -> Array2<f64> {
    let k = w.ncols();
    let mut out = Array2::zeros((k, x.cols()));
    for c in 0..x.cols() {
        let mut col = out.column_mut(c);
        for (r, v) in x.column(c) {
            col.scaled_add(v, &w.row(r));
        }
    }
    out
}

pub(crate) fn x_ht(x: &SparseMatrix, h: &Array2<f64>) -> Array2<f64> {
    let k = h.nrows();
    let mut out = Array2::zeros((x.rows(), k));
    for c in 0..x.cols() {
        let hc = h.column(c);
        for (r, v) in x.column(c) {
            out.row_mut(r).scaled_add(v, &hc);
        }
    }
    out
}

const FACTORS_MAGIC: &[u8; 4] = b"LXNF";

impl NmfFactors {
    /// Binary container: magic, k, seed, then W and H each as
    /// `rows, cols` followed by row-major values, then the loss history.
    pub fn write_binary(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let inner = || -> std::io::Result<()> {
            let mut w = BufWriter::new(File::create(path)?);
            w.write_all(FACTORS_MAGIC)?;
            binio::write_u64(&mut w, self.k as u64)?;
            binio::write_u64(&mut w, self.seed)?;
            for m in [&self.w, &self.h] {
                binio::write_u64(&mut w, m.nrows() as u64)?;
                binio::write_u64(&mut w, m.ncols() as u64)?;
                for v in m.iter() {
                    binio::write_f64(&mut w, *v)?;
                }
            }
            binio::write_u64(&mut w, self.loss_history.len() as u64)?;
            for v in &self.loss_history {
                binio::write_f64(&mut w, *v)?;
            }
            w.flush()
        };
        inner().map_err(|e| Error::io(path, e))
    }

    pub fn read_binary(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let inner = || -> std::io::Result<NmfFactors> {
            let mut r = BufReader::new(File::open(path)?);
            binio::expect_magic(&mut r, FACTORS_MAGIC)?;
            let k = binio::read_u64(&mut r)? as usize;
            let seed = binio::read_u64(&mut r)?;
            let mut mats = Vec::with_capacity(2);
            for _ in 0..2 {
                let rows = binio::read_u64(&mut r)? as usize;
                let cols = binio::read_u64(&mut r)? as usize;
                let mut vals = Vec::with_capacity(rows.saturating_mul(cols).min(1 << 26));
                for _ in 0..rows * cols {
                    vals.push(binio::read_f64(&mut r)?);
                }
                let m = Array2::from_shape_vec((rows, cols), vals)
                    .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
                mats.push(m);
            }
            let n = binio::read_u64(&mut r)? as usize;
            let mut loss_history = Vec::with_capacity(n.min(1 << 20));
            for _ in 0..n {
                loss_history.push(binio::read_f64(&mut r)?);
            }
            let h = mats.pop().unwrap();
            let w = mats.pop().unwrap();
            Ok(NmfFactors {
                w,
                h,
                k,
                loss_history,
                seed,
            })
        };
        inner().map_err(|e| Error::io(path, e))
    }
}
