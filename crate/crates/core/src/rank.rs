//! Rank selection by cross-validation over held-out similarity pairs.
//!
//! A low-rank similarity matrix is determined by a small subset of its
//! entries, so naive entry-wise cross-validation leaks: once the training
//! mask passes the completion threshold every rank at or above the true one
//! predicts held-out pairs equally well. The protocol here first calibrates
//! an operating sampling probability `p*` from the spectrum of random
//! subsamples, then draws an outer mask at `p_cv = min(0.95, p*·k/(k−1))`
//! so that each of the `k` training folds keeps a `p*` fraction of pairs
//! regardless of `k`.

use log::warn;
use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SrfError};
use crate::linalg::{subspace_affinity, sym_eigen_desc};
use crate::rng::{derive_seed, rng_from_seed, shuffled};
use crate::simmat::{DenseSimilarity, Mask};
use crate::solver::{fit, SolverConfig};
use crate::stats::{mean, sample_std};

/// Largest outer-mask probability; keeps a non-trivial held-out share.
pub const P_CV_CAP: f64 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub k_cut: usize,
    pub p_star: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationConfig {
    /// Tolerance on the captured spectral mass.
    pub delta: f64,
    /// Minimum mean subspace affinity for an eigendirection to count as stable.
    pub stability_threshold: f64,
    /// Surrogate draws per probe probability.
    pub surrogates: usize,
    /// Probabilities at which eigenspace stability is checked.
    pub stability_probes: Vec<f64>,
    /// Candidate operating probabilities, searched in increasing order.
    pub probe_grid: Vec<f64>,
    pub seed: u64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        CalibrationConfig {
            delta: 0.10,
            stability_threshold: 0.9,
            surrogates: 10,
            stability_probes: vec![0.8, 0.9],
            probe_grid: (1..=19).map(|k| k as f64 / 20.0).collect(),
            seed: 0,
        }
    }
}

impl CalibrationConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(SrfError::invalid(format!(
                "delta must lie in (0, 1), got {}",
                self.delta
            )));
        }
        if self.surrogates == 0 {
            return Err(SrfError::invalid(
                "at least one surrogate per probe is required",
            ));
        }
        let bad = |p: &f64| !(*p > 0.0 && *p <= 1.0);
        if self.stability_probes.is_empty() || self.stability_probes.iter().any(bad) {
            return Err(SrfError::invalid(
                "stability probes must be non-empty and in (0, 1]",
            ));
        }
        if self.probe_grid.is_empty() || self.probe_grid.iter().any(bad) {
            return Err(SrfError::invalid(
                "probe grid must be non-empty and in (0, 1]",
            ));
        }
        Ok(())
    }
}

/// Random off-diagonal subsample of the observed pairs of `s`, rescaled by
/// `1/p`; dropped pairs are zero and the diagonal is kept as is.
pub fn subsampled_surrogate(s: &DenseSimilarity, p: f64, seed: u64) -> DMatrix<f64> {
    let n = s.n();
    let mut rng = rng_from_seed(seed);
    let mut out = DMatrix::zeros(n, n);
    for i in 0..n {
        out[(i, i)] = s.values()[(i, i)];
    }
    for (i, j) in s.mask().observed_pairs() {
        if rng.random::<f64>() < p {
            let v = s.values()[(i, j)] / p;
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    out
}

/// Smallest element of `grid` (taken in the given order) that passes, if any.
pub fn first_passing_probe(grid: &[f64], mut passes: impl FnMut(f64) -> bool) -> Option<f64> {
    grid.iter().copied().find(|&p| passes(p))
}

/// Estimate the stable spectral cutoff `k_cut` and the operating sampling
/// probability `p*`.
///
/// `k_cut` is the largest `k ≤ n/2` whose leading `k`-dimensional
/// eigenspace of the observed matrix is reproduced by random subsamples with
/// mean subspace affinity at least `stability_threshold` at every stability
/// probe. `p*` is the smallest grid probability at which the leading `k_cut`
/// eigenvectors of a subsample capture, on average, at least `1 − δ` of the reference matrix's
/// top-`k_cut` spectral mass.
pub fn calibrate(s: &DenseSimilarity, cfg: &CalibrationConfig) -> Result<Calibration> {
    cfg.validate()?;
    let n = s.n();
    if n < 2 {
        return Err(SrfError::invalid("calibration needs at least two items"));
    }
    if s.mask().observed_offdiag_count() == 0 {
        return Err(SrfError::EmptyMask);
    }
    let reference = s.values().clone();
    let (ref_vals, ref_vecs) = sym_eigen_desc(&reference);
    let k_max = (n / 2).max(1);

    // Stability: mean affinity per (probe, k).
    let tasks: Vec<(usize, usize)> = (0..cfg.stability_probes.len())
        .flat_map(|pi| (0..cfg.surrogates).map(move |d| (pi, d)))
        .collect();
    let affinities: Vec<(usize, Vec<f64>)> = tasks
        .par_iter()
        .map(|&(pi, d)| {
            let p = cfg.stability_probes[pi];
            let sur = subsampled_surrogate(s, p, derive_seed(cfg.seed, &[0, pi as u64, d as u64]));
            let (_, vecs) = sym_eigen_desc(&sur);
            let aff = (1..=k_max)
                .map(|k| subspace_affinity(&ref_vecs, &vecs, k))
                .collect();
            (pi, aff)
        })
        .collect();
    let stable = |k: usize| {
        (0..cfg.stability_probes.len()).all(|pi| {
            let vals: Vec<f64> = affinities
                .iter()
                .filter(|(q, _)| *q == pi)
                .map(|(_, a)| a[k - 1])
                .collect();
            mean(&vals) >= cfg.stability_threshold
        })
    };
    let mut k_cut = (1..=k_max).rev().find(|&k| stable(k)).unwrap_or(0);
    if k_cut == 0 {
        warn!("no eigendirection is stable under subsampling; using k_cut = 1");
        k_cut = 1;
    }

    let ref_mass: f64 = ref_vals[..k_cut].iter().sum();
    let captured = |p: f64| -> f64 {
        let masses: Vec<f64> = (0..cfg.surrogates)
            .into_par_iter()
            .map(|d| {
                let tag = (p * 1e6).round() as u64;
                let sur = subsampled_surrogate(s, p, derive_seed(cfg.seed, &[1, tag, d as u64]));
                let (_, vecs) = sym_eigen_desc(&sur);
                let u = vecs.columns(0, k_cut);
                (u.transpose() * &reference * u).trace()
            })
            .collect();
        mean(&masses)
    };
    let p_star = match first_passing_probe(&cfg.probe_grid, |p| {
        captured(p) >= (1.0 - cfg.delta) * ref_mass
    }) {
        Some(p) => p,
        None => {
            warn!(
                "no probe probability captures the reference spectral mass; using p* = {P_CV_CAP}"
            );
            P_CV_CAP
        }
    };
    Ok(Calibration {
        k_cut,
        p_star,
        delta: cfg.delta,
    })
}

/// Outer-mask probability that makes every training fold keep a `p*`
/// fraction of pairs.
pub fn fold_invariant_p(p_star: f64, folds: usize) -> Result<f64> {
    if folds < 2 {
        return Err(SrfError::invalid(format!(
            "folds must be at least 2, got {folds}"
        )));
    }
    if !(p_star > 0.0 && p_star <= 1.0) {
        return Err(SrfError::invalid(format!(
            "p* must lie in (0, 1], got {p_star}"
        )));
    }
    let k = folds as f64;
    Ok((p_star * k / (k - 1.0)).min(P_CV_CAP))
}

/// Retain each observed off-diagonal pair of `s` independently with
/// probability `p_cv`; the diagonal is always kept.
pub fn outer_mask(s: &DenseSimilarity, p_cv: f64, seed: u64) -> Result<Mask> {
    if !(p_cv > 0.0 && p_cv <= 1.0) {
        return Err(SrfError::invalid(format!(
            "p_cv must lie in (0, 1], got {p_cv}"
        )));
    }
    let mut rng = rng_from_seed(seed);
    let mut mask = Mask::diagonal(s.n());
    for (i, j) in s.mask().observed_pairs() {
        if rng.random::<f64>() < p_cv {
            mask.set_pair(i, j, true);
        }
    }
    Ok(mask)
}

/// Split the observed off-diagonal pairs of `mask` into `folds` disjoint
/// folds of near-equal size by a seeded shuffle.
pub fn assign_folds(mask: &Mask, folds: usize, seed: u64) -> Result<Vec<Vec<(usize, usize)>>> {
    let pairs = mask.observed_pairs();
    let mut rng = rng_from_seed(seed);
    let order = shuffled(pairs.len(), &mut rng);
    let mut out = vec![Vec::new(); folds];
    for (pos, &idx) in order.iter().enumerate() {
        out[pos % folds].push(pairs[idx]);
    }
    if let Some(fold) = out.iter().position(|f| f.is_empty()) {
        return Err(SrfError::EmptyFold { fold });
    }
    for f in &mut out {
        f.sort_unstable();
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CvConfig {
    pub folds: usize,
    pub repeats: usize,
    pub rank_grid: Vec<usize>,
    pub solver: SolverConfig,
    pub seed: u64,
}

impl CvConfig {
    pub fn new(rank_grid: Vec<usize>) -> Self {
        CvConfig {
            folds: 5,
            repeats: 5,
            rank_grid,
            solver: SolverConfig::default(),
            seed: 0,
        }
    }

    fn validate(&self, n: usize) -> Result<()> {
        if self.folds < 2 {
            return Err(SrfError::invalid(format!(
                "folds must be at least 2, got {}",
                self.folds
            )));
        }
        if self.repeats == 0 {
            return Err(SrfError::invalid("repeats must be at least 1"));
        }
        if self.rank_grid.is_empty() {
            return Err(SrfError::invalid("rank grid is empty"));
        }
        if let Some(&rank) = self.rank_grid.iter().find(|&&r| r == 0 || r >= n) {
            return Err(SrfError::InvalidRank { rank, n });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CvCell {
    pub rank: usize,
    pub repeat: usize,
    pub fold: usize,
    pub val_mse: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankScore {
    pub rank: usize,
    pub mean_mse: f64,
    pub std_mse: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CvCurve {
    /// One entry per grid rank, in increasing rank order.
    pub scores: Vec<RankScore>,
    pub cells: Vec<CvCell>,
    pub selected_rank: usize,
    pub p_cv: f64,
}

/// Mean squared error of `(W Wᵀ)_ij` against `s` over the listed pairs.
pub fn heldout_mse(s: &DMatrix<f64>, gram: &DMatrix<f64>, pairs: &[(usize, usize)]) -> f64 {
    let sum: f64 = pairs
        .iter()
        .map(|&(i, j)| (s[(i, j)] - gram[(i, j)]).powi(2))
        .sum();
    sum / pairs.len() as f64
}

/// Rank with the smallest mean held-out error; ties go to the smaller rank.
pub fn select_rank(scores: &[RankScore]) -> usize {
    let mut best = scores[0];
    for sc in &scores[1..] {
        if sc.mean_mse < best.mean_mse || (sc.mean_mse == best.mean_mse && sc.rank < best.rank) {
            best = *sc;
        }
    }
    best.rank
}

/// Held-out validation curve over the rank grid.
pub fn cross_validate(s: &DenseSimilarity, cal: &Calibration, cfg: &CvConfig) -> Result<CvCurve> {
    cfg.validate(s.n())?;
    let p_cv = fold_invariant_p(cal.p_star, cfg.folds)?;
    let mut grid = cfg.rank_grid.clone();
    grid.sort_unstable();
    grid.dedup();

    let mut jobs = Vec::new();
    for repeat in 0..cfg.repeats {
        let outer = outer_mask(s, p_cv, derive_seed(cfg.seed, &[repeat as u64, 0]))?;
        let folds = assign_folds(
            &outer,
            cfg.folds,
            derive_seed(cfg.seed, &[repeat as u64, 1]),
        )?;
        for (fold, held) in folds.into_iter().enumerate() {
            let mut train = outer.clone();
            for &(i, j) in &held {
                train.set_pair(i, j, false);
            }
            let train_s = s.with_mask(train)?;
            for &rank in &grid {
                jobs.push((repeat, fold, rank, train_s.clone(), held.clone()));
            }
        }
    }

    let cells = jobs
        .par_iter()
        .map(|(repeat, fold, rank, train_s, held)| {
            let seed = derive_seed(cfg.seed, &[*repeat as u64, 2, *fold as u64, *rank as u64]);
            let res = fit(train_s, *rank, &cfg.solver.with_seed(seed))?;
            Ok(CvCell {
                rank: *rank,
                repeat: *repeat,
                fold: *fold,
                val_mse: heldout_mse(s.values(), &res.embedding.gram(), held),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let scores: Vec<RankScore> = grid
        .iter()
        .map(|&rank| {
            let v: Vec<f64> = cells
                .iter()
                .filter(|c| c.rank == rank)
                .map(|c| c.val_mse)
                .collect();
            RankScore {
                rank,
                mean_mse: mean(&v),
                std_mse: sample_std(&v),
            }
        })
        .collect();
    Ok(CvCurve {
        selected_rank: select_rank(&scores),
        scores,
        cells,
        p_cv,
    })
}

/// Calibrate, then cross-validate.
pub fn select_rank_cv(
    s: &DenseSimilarity,
    cal_cfg: &CalibrationConfig,
    cfg: &CvConfig,
) -> Result<(Calibration, CvCurve)> {
    let cal = calibrate(s, cal_cfg)?;
    let curve = cross_validate(s, &cal, cfg)?;
    Ok((cal, curve))
}

/// Observation pattern made of every pair touching an anchor item.
pub fn anchor_mask(n: usize, anchors: &[usize]) -> Mask {
    let mut is_anchor = vec![false; n];
    for &a in anchors {
        is_anchor[a] = true;
    }
    Mask::from_fn_and(n, |i, j| is_anchor[i] || is_anchor[j])
}

/// Complete a rank-`|I|` symmetric matrix from the rows of the anchor set
/// `I`: `S_pq = S_{I,p}ᵀ S_I⁻¹ S_{I,q}`. Entries touching an anchor are
/// returned as observed.
pub fn nystrom_complete(observed: &DenseSimilarity, anchors: &[usize]) -> Result<DMatrix<f64>> {
    let n = observed.n();
    let r = anchors.len();
    if r == 0 || r >= n {
        return Err(SrfError::invalid(format!(
            "anchor set size {r} must be in 1..{n}"
        )));
    }
    let mut seen = vec![false; n];
    for &a in anchors {
        if a >= n || seen[a] {
            return Err(SrfError::invalid(format!(
                "anchor {a} is out of range or repeated"
            )));
        }
        seen[a] = true;
    }
    for &a in anchors {
        if let Some(j) = (0..n).find(|&j| !observed.mask().get(a, j)) {
            return Err(SrfError::invalid(format!(
                "pair ({a}, {j}) touching an anchor is unobserved"
            )));
        }
    }
    let block = DMatrix::from_fn(r, r, |x, y| observed.values()[(anchors[x], anchors[y])]);
    let (vals, vecs) = sym_eigen_desc(&block);
    let largest = vals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let smallest = vals.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
    let rcond = if largest > 0.0 {
        smallest / largest
    } else {
        0.0
    };
    if rcond < 1e-10 {
        return Err(SrfError::SingularAnchorBlock { rcond });
    }
    let inv = &vecs
        * DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
            r,
            vals.iter().map(|v| 1.0 / v),
        ))
        * vecs.transpose();
    let cross = DMatrix::from_fn(r, n, |x, q| observed.values()[(anchors[x], q)]);
    let mut out = cross.transpose() * inv * &cross;
    for &a in anchors {
        for q in 0..n {
            let v = observed.values()[(a, q)];
            out[(a, q)] = v;
            out[(q, a)] = v;
        }
    }
    Ok(out)
}

/// Validation error on the pairs outside an anchor pattern after fitting at
/// each rank, for a fully known `s`.
pub fn anchor_leakage_curve(
    s: &DMatrix<f64>,
    anchors: &[usize],
    ranks: &[usize],
    solver: &SolverConfig,
) -> Result<Vec<(usize, f64)>> {
    let n = s.nrows();
    let mask = anchor_mask(n, anchors);
    let train = DenseSimilarity::new(s.clone(), mask.clone())?;
    let held: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .filter(|&(i, j)| !mask.get(i, j))
        .collect();
    ranks
        .par_iter()
        .map(|&rank| {
            let res = fit(&train, rank, solver)?;
            Ok((rank, heldout_mse(s, &res.embedding.gram(), &held)))
        })
        .collect()
}
