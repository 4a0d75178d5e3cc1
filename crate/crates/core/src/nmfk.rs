//! Automatic selection of the latent dimension k.
//!
//! For each candidate k the matrix is perturbed `n_perturbations` times and
//! factorized independently. The resulting W columns are pooled, matched
//! across runs (one column per run per cluster) and scored with cosine
//! silhouettes. A k is accepted when its minimum silhouette clears the
//! threshold; acceptance is treated as monotone non-increasing in k so the
//! largest accepted k is found by binary search.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::SparseMatrix;
use crate::error::{Error, Result};
use crate::nmf::{self, NmfFactors, NmfOptions};
use crate::seed;

/// Distances below this are treated as exact coincidence.
const COINCIDENT: f64 = 1e-12;
const MAX_MATCHING_PASSES: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NmfkConfig {
    pub k_min: usize,
    pub k_max: usize,
    pub n_perturbations: usize,
    pub noise_epsilon: f64,
    pub silhouette_threshold: f64,
    pub base_seed: u64,
    /// A run whose relative error exceeds the best run's by more than this
    /// factor is restarted from a fresh seed.
    pub outlier_tolerance: f64,
    /// Restarts allowed per outlier run; the lowest-error attempt is kept.
    pub max_restarts: usize,
    pub nmf: NmfOptions,
    /// Options for re-fitting H against the consensus W.
    pub refit: NmfOptions,
}

impl Default for NmfkConfig {
    fn default() -> Self {
        NmfkConfig {
            k_min: 1,
            k_max: 30,
            n_perturbations: 20,
            noise_epsilon: 0.015,
            silhouette_threshold: 0.7,
            base_seed: 42,
            outlier_tolerance: 0.001,
            max_restarts: 1,
            nmf: NmfOptions::default(),
            refit: NmfOptions {
                max_iters: 1000,
                tol: 1e-7,
                ..NmfOptions::default()
            },
        }
    }
}

impl NmfkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_min < 1 || self.k_min > self.k_max {
            return Err(Error::param(format!(
                "need 1 <= k_min <= k_max, got [{}, {}]",
                self.k_min, self.k_max
            )));
        }
        if !(self.outlier_tolerance >= 0.0) {
            return Err(Error::param("outlier_tolerance must be non-negative"));
        }
        if self.n_perturbations < 2 {
            return Err(Error::param("n_perturbations must be at least 2"));
        }
        if !(self.noise_epsilon > 0.0 && self.noise_epsilon < 1.0) {
            return Err(Error::param("noise_epsilon must be in (0, 1)"));
        }
        if !(self.silhouette_threshold > 0.0 && self.silhouette_threshold < 1.0) {
            return Err(Error::param("silhouette_threshold must be in (0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KEvaluation {
    pub k: usize,
    pub min_silhouette: f64,
    pub mean_silhouette: f64,
    pub mean_reconstruction_error: f64,
    /// W columns that came out all-zero; each scored −1.
    pub degenerate_columns: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchMode {
    Binary,
    Exhaustive,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NmfkResult {
    pub selected_k: usize,
    /// One entry per probed k, ascending.
    pub evaluations: Vec<KEvaluation>,
    /// terms × selected_k, per-cluster median of the matched unit columns.
    pub consensus_w: Array2<f64>,
    /// selected_k × docs, re-fit with `consensus_w` held fixed.
    pub consensus_h: Array2<f64>,
    /// No probed k met the silhouette threshold.
    pub low_confidence: bool,
    pub mode: SearchMode,
}

/// JSON view of a selection run (factors omitted).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NmfkReport {
    pub selected_k: usize,
    pub low_confidence: bool,
    pub mode: SearchMode,
    pub silhouette_threshold: f64,
    pub evaluations: Vec<KEvaluation>,
}

impl NmfkResult {
    pub fn evaluation(&self, k: usize) -> Option<&KEvaluation> {
        self.evaluations.iter().find(|e| e.k == k)
    }

    pub fn report(&self, threshold: f64) -> NmfkReport {
        NmfkReport {
            selected_k: self.selected_k,
            low_confidence: self.low_confidence,
            mode: self.mode,
            silhouette_threshold: threshold,
            evaluations: self.evaluations.clone(),
        }
    }
}

/// Multiply every stored entry by an independent draw from `U[1−ε, 1+ε]`.
pub fn perturb(x: &SparseMatrix, epsilon: f64, seed: u64) -> SparseMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    x.map_values(|v| v * rng.gen_range(1.0 - epsilon..=1.0 + epsilon))
}

fn run_seeds(base: u64, k: usize, run: usize) -> (u64, u64) {
    (
        seed::derive(base, &[k as u64, run as u64, 0]),
        seed::derive(base, &[k as u64, run as u64, 1]),
    )
}

pub fn evaluate_k(x: &SparseMatrix, k: usize, cfg: &NmfkConfig) -> Result<KEvaluation> {
    Ok(evaluate_k_full(x, k, cfg)?.0)
}

/// Evaluate k with caller-chosen `(perturbation_seed, nmf_seed)` per run.
pub fn evaluate_k_with_seeds(
    x: &SparseMatrix,
    k: usize,
    cfg: &NmfkConfig,
    seeds: &[(u64, u64)],
) -> Result<KEvaluation> {
    Ok(evaluate_runs(x, k, cfg, seeds)?.0)
}

fn evaluate_k_full(x: &SparseMatrix, k: usize, cfg: &NmfkConfig) -> Result<(KEvaluation, Array2<f64>)> {
    cfg.validate()?;
    if k < cfg.k_min || k > cfg.k_max {
        return Err(Error::param(format!(
            "k = {k} outside configured range [{}, {}]",
            cfg.k_min, cfg.k_max
        )));
    }
    let seeds: Vec<_> = (0..cfg.n_perturbations)
        .map(|i| run_seeds(cfg.base_seed, k, i))
        .collect();
    evaluate_runs(x, k, cfg, &seeds)
}

fn evaluate_runs(
    x: &SparseMatrix,
    k: usize,
    cfg: &NmfkConfig,
    seeds: &[(u64, u64)],
) -> Result<(KEvaluation, Array2<f64>)> {
    if seeds.len() < 2 {
        return Err(Error::param("at least two runs are required"));
    }
    let runs: Vec<(NmfFactors, f64)> = seeds
        .par_iter()
        .map(|&(perturb_seed, nmf_seed)| {
            let xp = perturb(x, cfg.noise_epsilon, perturb_seed);
            let f = nmf::factorize(&xp, k, nmf_seed, &cfg.nmf)?;
            let err = nmf::reconstruction_error(x, &f)?;
            Ok((f, err))
        })
        .collect::<Result<Vec<_>>>()?;
    let best = runs.iter().map(|r| r.1).fold(f64::INFINITY, f64::min);
    let cutoff = best * (1.0 + cfg.outlier_tolerance);
    let runs: Vec<(NmfFactors, f64)> = runs
        .into_par_iter()
        .zip(seeds.par_iter())
        .map(|((mut f, mut err), &(perturb_seed, nmf_seed))| {
            if err <= cutoff {
                return Ok((f, err));
            }
            let xp = perturb(x, cfg.noise_epsilon, perturb_seed);
            for attempt in 1..=cfg.max_restarts {
                let g = nmf::factorize(&xp, k, seed::derive(nmf_seed, &[attempt as u64]), &cfg.nmf)?;
                let e = nmf::reconstruction_error(x, &g)?;
                if e < err {
                    f = g;
                    err = e;
                }
                if err <= cutoff {
                    break;
                }
            }
            Ok((f, err))
        })
        .collect::<Result<_>>()?;
    let errors: Vec<f64> = runs.iter().map(|r| r.1).collect();
    let runs: Vec<NmfFactors> = runs.into_iter().map(|r| r.0).collect();
    let mean_err = errors.iter().sum::<f64>() / errors.len() as f64;

    let unit: Vec<Array2<f64>> = runs.iter().map(|f| unit_columns(&f.w)).collect();
    let degenerate: Vec<Vec<bool>> = runs
        .iter()
        .map(|f| f.w.axis_iter(Axis(1)).map(|c| c.iter().all(|v| *v == 0.0)).collect())
        .collect();
    let assignment = match_columns(&unit);
    let sil = silhouettes(&unit, &assignment, k, &degenerate);
    let min = sil.iter().copied().fold(f64::INFINITY, f64::min);
    let mean = sil.iter().sum::<f64>() / sil.len() as f64;
    let consensus = median_columns(&unit, &assignment, k);

    Ok((
        KEvaluation {
            k,
            min_silhouette: min,
            mean_silhouette: mean,
            mean_reconstruction_error: mean_err,
            degenerate_columns: degenerate.iter().flatten().filter(|d| **d).count(),
        },
        consensus,
    ))
}

fn unit_columns(w: &Array2<f64>) -> Array2<f64> {
    let mut out = w.clone();
    for mut col in out.axis_iter_mut(Axis(1)) {
        let norm = col.dot(&col).sqrt();
        if norm > 0.0 {
            col /= norm;
        }
    }
    out
}

/// `assignment[run][column] = cluster`. Run 0 seeds the centroids; each later
/// run is greedily matched to the running centroids, then every run is
/// re-matched against the settled centroids until assignments stop changing.
fn match_columns(unit: &[Array2<f64>]) -> Vec<Vec<usize>> {
    let k = unit[0].ncols();
    let mut assignment: Vec<Vec<usize>> = vec![(0..k).collect()];
    let mut sums = unit[0].clone();
    for w in &unit[1..] {
        let a = greedy_match(w, &normalized(&sums));
        for (col, &cluster) in a.iter().enumerate() {
            let mut target = sums.column_mut(cluster);
            target += &w.column(col);
        }
        assignment.push(a);
    }
    for _ in 0..MAX_MATCHING_PASSES {
        let centroids = normalized(&cluster_sums(unit, &assignment, k));
        let next: Vec<Vec<usize>> = unit.iter().map(|w| greedy_match(w, &centroids)).collect();
        if next == assignment {
            break;
        }
        assignment = next;
    }
    assignment
}

fn cluster_sums(unit: &[Array2<f64>], assignment: &[Vec<usize>], k: usize) -> Array2<f64> {
    let mut sums = Array2::zeros((unit[0].nrows(), k));
    for (w, a) in unit.iter().zip(assignment) {
        for (col, &cluster) in a.iter().enumerate() {
            let mut target = sums.column_mut(cluster);
            target += &w.column(col);
        }
    }
    sums
}

fn normalized(m: &Array2<f64>) -> Array2<f64> {
    unit_columns(m)
}

/// Pick the most similar (column, centroid) pair, remove both, repeat.
/// Ties go to the lowest column, then the lowest centroid index.
fn greedy_match(w: &Array2<f64>, centroids: &Array2<f64>) -> Vec<usize> {
    let k = w.ncols();
    let sim = w.t().dot(centroids);
    let mut out = vec![usize::MAX; k];
    let mut used = vec![false; k];
    for _ in 0..k {
        let mut best: Option<(usize, usize, f64)> = None;
        for col in (0..k).filter(|c| out[*c] == usize::MAX) {
            for cl in (0..k).filter(|c| !used[*c]) {
                let s = sim[[col, cl]];
                if best.map_or(true, |(_, _, b)| s > b) {
                    best = Some((col, cl, s));
                }
            }
        }
        let (col, cl, _) = best.expect("unmatched pair remains");
        out[col] = cl;
        used[cl] = true;
    }
    out
}

fn cosine_distance(a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>) -> f64 {
    let d = 1.0 - a.dot(&b);
    if d < COINCIDENT {
        0.0
    } else {
        d.min(2.0)
    }
}

/// Per-column silhouettes on cosine distance. A single cluster (k = 1) is
/// stable by definition and scores 1; zero columns score −1.
fn silhouettes(unit: &[Array2<f64>], assignment: &[Vec<usize>], k: usize, degenerate: &[Vec<bool>]) -> Vec<f64> {
    let points: Vec<(ndarray::ArrayView1<f64>, usize, bool)> = unit
        .iter()
        .zip(assignment)
        .zip(degenerate)
        .flat_map(|((w, a), d)| (0..k).map(move |c| (w.column(c), a[c], d[c])))
        .collect();
    if k == 1 {
        return points.iter().map(|p| if p.2 { -1.0 } else { 1.0 }).collect();
    }
    let n = points.len();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        if points[i].2 {
            out.push(-1.0);
            continue;
        }
        let mut sum = vec![0.0; k];
        let mut count = vec![0usize; k];
        for j in 0..n {
            if i == j {
                continue;
            }
            sum[points[j].1] += cosine_distance(points[i].0, points[j].0);
            count[points[j].1] += 1;
        }
        let own = points[i].1;
        let a = if count[own] > 0 { sum[own] / count[own] as f64 } else { 0.0 };
        let b = (0..k)
            .filter(|&c| c != own && count[c] > 0)
            .map(|c| sum[c] / count[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        let s = if denom == 0.0 || !b.is_finite() { 0.0 } else { (b - a) / denom };
        out.push(s.clamp(-1.0, 1.0));
    }
    out
}

fn median_columns(unit: &[Array2<f64>], assignment: &[Vec<usize>], k: usize) -> Array2<f64> {
    let rows = unit[0].nrows();
    let mut out = Array2::zeros((rows, k));
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (run, a) in assignment.iter().enumerate() {
        for (col, &cluster) in a.iter().enumerate() {
            members[cluster].push(run * k + col);
        }
    }
    let mut buf = Vec::with_capacity(unit.len());
    for (cluster, m) in members.iter().enumerate() {
        for r in 0..rows {
            buf.clear();
            buf.extend(m.iter().map(|&idx| unit[idx / k][[r, idx % k]]));
            out[[r, cluster]] = median(&mut buf);
        }
    }
    out
}

fn median(v: &mut [f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn select_k(x: &SparseMatrix, cfg: &NmfkConfig) -> Result<NmfkResult> {
    select_k_with_mode(x, cfg, SearchMode::Binary)
}

pub fn select_k_with_mode(x: &SparseMatrix, cfg: &NmfkConfig, mode: SearchMode) -> Result<NmfkResult> {
    cfg.validate()?;
    if x.is_all_zero() {
        return Err(Error::Data("cannot select k for an all-zero matrix".into()));
    }
    let bound = x.rows().min(x.cols());
    if cfg.k_min > bound {
        return Err(Error::param(format!(
            "k_min = {} exceeds the rank bound {bound} of a {}x{} matrix",
            cfg.k_min,
            x.rows(),
            x.cols()
        )));
    }
    let k_max = cfg.k_max.min(bound);
    let mut probed: BTreeMap<usize, (KEvaluation, Array2<f64>)> = BTreeMap::new();
    let accepts = |e: &KEvaluation| e.min_silhouette >= cfg.silhouette_threshold;
    let probe = |k: usize, probed: &mut BTreeMap<usize, (KEvaluation, Array2<f64>)>| -> Result<bool> {
        if !probed.contains_key(&k) {
            let r = evaluate_k_full(x, k, cfg)?;
            log::debug!("k = {k}: min silhouette {:.4}", r.0.min_silhouette);
            probed.insert(k, r);
        }
        Ok(accepts(&probed[&k].0))
    };

    let mut best: Option<usize> = None;
    match mode {
        SearchMode::Exhaustive => {
            for k in cfg.k_min..=k_max {
                if probe(k, &mut probed)? {
                    best = Some(k);
                }
            }
        }
        SearchMode::Binary => {
            let (mut lo, mut hi) = (cfg.k_min, k_max);
            while lo <= hi {
                let mid = lo + (hi - lo) / 2;
                if probe(mid, &mut probed)? {
                    best = Some(mid);
                    lo = mid + 1;
                } else if mid == 0 {
                    break;
                } else {
                    hi = mid - 1;
                }
            }
        }
    }

    let low_confidence = best.is_none();
    let selected_k = best.unwrap_or_else(|| {
        // highest min-silhouette; ties to the smaller k
        probed
            .values()
            .map(|(e, _)| e)
            .fold(None::<&KEvaluation>, |acc, e| match acc {
                Some(a) if a.min_silhouette >= e.min_silhouette => Some(a),
                _ => Some(e),
            })
            .map(|e| e.k)
            .expect("at least one k probed")
    });
    let consensus_w = probed[&selected_k].1.clone();
    let refit_seed = seed::derive(cfg.base_seed, &[selected_k as u64, u64::MAX]);
    let consensus_h = nmf::refit_h(x, &consensus_w, refit_seed, &cfg.refit)?.h;
    Ok(NmfkResult {
        selected_k,
        evaluations: probed.into_values().map(|(e, _)| e).collect(),
        consensus_w,
        consensus_h,
        low_confidence,
        mode,
    })
}

/// True when acceptance never switches from false back to true as k grows.
pub fn acceptance_is_monotone(evaluations: &[KEvaluation], threshold: f64) -> bool {
    let mut sorted: Vec<_> = evaluations.iter().collect();
    sorted.sort_by_key(|e| e.k);
    let mut seen_reject = false;
    for e in sorted {
        let ok = e.min_silhouette >= threshold;
        if ok && seen_reject {
            return false;
        }
        seen_reject |= !ok;
    }
    true
}

/// Column sums of `h`, exposed for callers that need per-document mass.
pub fn column_mass(h: &Array2<f64>) -> Array1<f64> {
    h.sum_axis(Axis(0))
}
