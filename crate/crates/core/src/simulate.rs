//! Ground-truth generators, noise and missingness models, recovery metrics
//! and the baseline methods used in the simulation experiments.

use log::warn;
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::consensus::{column_correlations, hungarian};
use crate::embedding::Embedding;
use crate::error::{Result, SrfError};
use crate::linalg::sym_eigenvalues_desc;
use crate::rank::{select_rank_cv, CalibrationConfig, CvConfig};
use crate::rng::{derive_seed, rng_from_seed, SrfRng};
use crate::simmat::{DenseSimilarity, Mask};
use crate::solver::{fit, SolverConfig};
use crate::stats::{mean, median, pearson, percentile_nearest_rank, variance};

/// Where noise enters a synthetic data set.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseMode {
    /// Gaussian noise added to the similarity matrix.
    #[default]
    Similarity,
    /// Gaussian noise added to the generating dimensions before forming
    /// similarities.
    Dimensions,
}

#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub w_true: Embedding,
    pub s_clean: DMatrix<f64>,
    pub s_noisy: DMatrix<f64>,
    pub alpha: f64,
    pub snr: f64,
}

fn log_gamma_draw(dist_shape: f64, rng: &mut SrfRng) -> f64 {
    // For shape < 1, Gamma(a) = Gamma(a + 1) · U^(1/a); taking logs keeps
    // tiny draws representable.
    if dist_shape >= 1.0 {
        let g: f64 = Gamma::new(dist_shape, 1.0)
            .expect("valid shape")
            .sample(rng);
        g.ln()
    } else {
        let g: f64 = Gamma::new(dist_shape + 1.0, 1.0)
            .expect("valid shape")
            .sample(rng);
        let u = 1.0 - rng.random::<f64>();
        g.ln() + u.ln() / dist_shape
    }
}

/// Rows drawn i.i.d. from a symmetric Dirichlet(α) on `r` components.
pub fn dirichlet_embedding(n: usize, r: usize, alpha: f64, seed: u64) -> Result<Embedding> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(SrfError::invalid(format!(
            "Dirichlet concentration must be positive, got {alpha}"
        )));
    }
    if r == 0 {
        return Err(SrfError::invalid("Dirichlet dimension must be at least 1"));
    }
    let mut rng = rng_from_seed(seed);
    let mut w = DMatrix::zeros(n, r);
    let mut logs = vec![0.0; r];
    for i in 0..n {
        for l in logs.iter_mut() {
            *l = log_gamma_draw(alpha, &mut rng);
        }
        let top = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let total: f64 = logs.iter().map(|l| (l - top).exp()).sum();
        for k in 0..r {
            w[(i, k)] = (logs[k] - top).exp() / total;
        }
    }
    Ok(Embedding(w))
}

/// Noise scale `σ ≥ 0` such that `var(x) / var(x + σe) = snr`, by bisection
/// on the branch where the total variance grows with `σ`.
fn noise_scale(signal: &[f64], noise: &[f64], snr: f64) -> Result<f64> {
    let vs = variance(signal);
    let ve = variance(noise);
    if !(vs > 0.0) || !(ve > 0.0) {
        return Err(SrfError::NoiseBracket { snr });
    }
    let ms = mean(signal);
    let me = mean(noise);
    let cov = signal
        .iter()
        .zip(noise)
        .map(|(s, e)| (s - ms) * (e - me))
        .sum::<f64>()
        / signal.len() as f64;
    let total = |sigma: f64| vs + 2.0 * sigma * cov + sigma * sigma * ve;
    let target = vs / snr;
    let mut lo = (-cov / ve).max(0.0);
    let mut hi = lo + (vs / ve).sqrt();
    let mut grow = 0;
    while total(hi) < target {
        hi *= 2.0;
        grow += 1;
        if grow > 200 || !hi.is_finite() {
            return Err(SrfError::NoiseBracket { snr });
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if total(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

fn check_snr(snr: f64) -> Result<()> {
    if !(snr > 0.0 && snr <= 1.0) {
        return Err(SrfError::invalid(format!(
            "SNR must lie in (0, 1], got {snr}"
        )));
    }
    Ok(())
}

/// Symmetric standard-normal matrix: upper triangle and diagonal drawn,
/// lower triangle mirrored.
fn symmetric_normal(n: usize, rng: &mut SrfRng) -> DMatrix<f64> {
    let mut e = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let z: f64 = StandardNormal.sample(rng);
            e[(i, j)] = z;
            e[(j, i)] = z;
        }
    }
    e
}

/// Remove from `noise` its least-squares projection on the centered signal,
/// so the two are uncorrelated in-sample and their variances add.
fn decorrelate(noise: &mut [f64], signal: &[f64]) {
    let ms = mean(signal);
    let (mut num, mut den) = (0.0, 0.0);
    for (e, s) in noise.iter().zip(signal) {
        num += e * (s - ms);
        den += (s - ms) * (s - ms);
    }
    if den > 0.0 {
        let beta = num / den;
        for (e, s) in noise.iter_mut().zip(signal) {
            *e -= beta * (s - ms);
        }
    }
}

/// Symmetric Gaussian noise before clipping, decorrelated from the signal
/// and scaled so that signal variance over total variance equals `snr`
/// (variances over all `n²` entries).
pub fn noisy_unclipped(s: &DMatrix<f64>, snr: f64, seed: u64) -> Result<DMatrix<f64>> {
    check_snr(snr)?;
    if s.nrows() != s.ncols() {
        return Err(SrfError::NotSquare {
            rows: s.nrows(),
            cols: s.ncols(),
        });
    }
    if snr == 1.0 {
        return Ok(s.clone());
    }
    let mut rng = rng_from_seed(seed);
    let mut e = symmetric_normal(s.nrows(), &mut rng);
    decorrelate(e.as_mut_slice(), s.as_slice());
    let sigma = noise_scale(s.as_slice(), e.as_slice(), snr)?;
    Ok(s + e * sigma)
}

/// Add symmetric Gaussian noise at the given SNR, then clip negatives to 0.
pub fn add_noise_to_snr(s: &DMatrix<f64>, snr: f64, seed: u64) -> Result<DMatrix<f64>> {
    let noisy = noisy_unclipped(s, snr, seed)?;
    let sym = (&noisy + noisy.transpose()) * 0.5;
    Ok(sym.map(|x| x.max(0.0)))
}

/// Perturb the dimensions themselves at the given SNR and clip to stay
/// non-negative.
pub fn perturb_dimensions_to_snr(w: &Embedding, snr: f64, seed: u64) -> Result<Embedding> {
    check_snr(snr)?;
    if snr == 1.0 {
        return Ok(w.clone());
    }
    let mut rng = rng_from_seed(seed);
    let mut e = DMatrix::from_fn(w.n(), w.rank(), |_, _| StandardNormal.sample(&mut rng));
    decorrelate(e.as_mut_slice(), w.matrix().as_slice());
    let sigma = noise_scale(w.matrix().as_slice(), e.as_slice(), snr)?;
    Ok(Embedding((w.matrix() + e * sigma).map(|x| x.max(0.0))))
}

/// Dirichlet ground truth with noisy similarities.
pub fn ground_truth(
    n: usize,
    r: usize,
    alpha: f64,
    snr: f64,
    mode: NoiseMode,
    seed: u64,
) -> Result<GroundTruth> {
    let w_true = dirichlet_embedding(n, r, alpha, derive_seed(seed, &[0]))?;
    let s_clean = w_true.gram();
    let s_noisy = match mode {
        NoiseMode::Similarity => add_noise_to_snr(&s_clean, snr, derive_seed(seed, &[1]))?,
        NoiseMode::Dimensions => {
            perturb_dimensions_to_snr(&w_true, snr, derive_seed(seed, &[1]))?.gram()
        }
    };
    Ok(GroundTruth {
        w_true,
        s_clean,
        s_noisy,
        alpha,
        snr,
    })
}

/// Keep each off-diagonal pair independently with probability `retention`.
pub fn random_missing_mask(n: usize, retention: f64, seed: u64) -> Result<Mask> {
    if !(retention > 0.0 && retention <= 1.0) {
        return Err(SrfError::invalid(format!(
            "retention must lie in (0, 1], got {retention}"
        )));
    }
    let mut rng = rng_from_seed(seed);
    let mut mask = Mask::diagonal(n);
    for i in 0..n {
        for j in i + 1..n {
            if rng.random::<f64>() < retention {
                mask.set_pair(i, j, true);
            }
        }
    }
    Ok(mask)
}

/// Observed similarities per model parameter, `m_obs / (n r)`; values below
/// 1 are under-determined.
pub fn sampling_density(m_obs: usize, n: usize, r: usize) -> Result<f64> {
    if m_obs == 0 || n == 0 || r == 0 {
        return Err(SrfError::invalid("sampling density needs positive counts"));
    }
    Ok(m_obs as f64 / (n * r) as f64)
}

fn nonzero_rows(w: &Embedding) -> Vec<Vec<f64>> {
    let rows: Vec<Vec<f64>> = (0..w.n())
        .map(|i| w.matrix().row(i).iter().copied().collect::<Vec<f64>>())
        .collect();
    let skipped = rows.iter().filter(|r| r.iter().all(|&x| x == 0.0)).count();
    if skipped > 0 {
        warn!("{skipped} all-zero rows skipped");
    }
    rows.into_iter()
        .filter(|r| r.iter().any(|&x| x != 0.0))
        .collect()
}

/// Mean row-wise Hoyer sparsity, `(√r − ‖w‖₁/‖w‖₂)/(√r − 1)`.
pub fn hoyer_sparsity(w: &Embedding) -> Result<f64> {
    let r = w.rank();
    if r < 2 {
        return Err(SrfError::invalid(
            "Hoyer sparsity needs at least two dimensions",
        ));
    }
    let rows = nonzero_rows(w);
    if rows.is_empty() {
        return Err(SrfError::invalid("Hoyer sparsity of an all-zero matrix"));
    }
    let sr = (r as f64).sqrt();
    let vals: Vec<f64> = rows
        .iter()
        .map(|row| {
            let l1: f64 = row.iter().map(|x| x.abs()).sum();
            let l2: f64 = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            (sr - l1 / l2) / (sr - 1.0)
        })
        .collect();
    Ok(mean(&vals))
}

/// Mean row-wise Shannon entropy of the normalized row, divided by `ln r`.
pub fn normalized_entropy(w: &Embedding) -> Result<f64> {
    let r = w.rank();
    if r < 2 {
        return Err(SrfError::invalid(
            "normalized entropy needs at least two dimensions",
        ));
    }
    let rows = nonzero_rows(w);
    if rows.is_empty() {
        return Err(SrfError::invalid(
            "normalized entropy of an all-zero matrix",
        ));
    }
    let vals: Vec<f64> = rows
        .iter()
        .map(|row| {
            let total: f64 = row.iter().sum();
            let h: f64 = row
                .iter()
                .filter(|&&x| x > 0.0)
                .map(|&x| {
                    let p = x / total;
                    -p * p.ln()
                })
                .sum();
            h / (r as f64).ln()
        })
        .collect();
    Ok(mean(&vals))
}

/// Mean correlation between ground-truth and recovered dimensions after
/// optimal matching; the narrower matrix is padded with zero columns.
pub fn factor_alignment(w_true: &Embedding, w_hat: &Embedding) -> Result<f64> {
    if w_true.n() != w_hat.n() {
        return Err(SrfError::ShapeMismatch(format!(
            "{} vs {} items",
            w_true.n(),
            w_hat.n()
        )));
    }
    let r = w_true.rank().max(w_hat.rank());
    let (a, b) = (w_true.padded(r), w_hat.padded(r));
    let (corr, _) = column_correlations(a.matrix(), b.matrix(), None);
    let assign = hungarian(&corr.map(|c| 1.0 - c));
    Ok(assign
        .iter()
        .enumerate()
        .map(|(k, &l)| corr[(k, l)])
        .sum::<f64>()
        / r as f64)
}

/// `min_P ‖W − Ŵ P‖²_F / ‖W‖²_F` over column permutations, zero-padding the
/// narrower factor.
pub fn matched_factor_error(w_true: &Embedding, w_hat: &Embedding) -> Result<f64> {
    if w_true.n() != w_hat.n() {
        return Err(SrfError::ShapeMismatch(format!(
            "{} vs {} items",
            w_true.n(),
            w_hat.n()
        )));
    }
    let norm = w_true.matrix().norm_squared();
    if norm == 0.0 {
        return Err(SrfError::ZeroVariance("true factor is zero".into()));
    }
    let r = w_true.rank().max(w_hat.rank());
    let (a, b) = (w_true.padded(r), w_hat.padded(r));
    let cost = DMatrix::from_fn(r, r, |k, l| {
        (a.matrix().column(k) - b.matrix().column(l)).norm_squared()
    });
    let assign = hungarian(&cost);
    Ok(assign.iter().enumerate().map(|(k, &l)| cost[(k, l)]).sum::<f64>() / norm)
}

/// Fill every unobserved entry with the median of the observed off-diagonal
/// values.
pub fn median_impute(s: &DenseSimilarity) -> Result<DMatrix<f64>> {
    let vals = s.observed_offdiag_values();
    if vals.is_empty() {
        return Err(SrfError::EmptyMask);
    }
    let fill = median(&vals);
    let n = s.n();
    Ok(DMatrix::from_fn(n, n, |i, j| s.get(i, j).unwrap_or(fill)))
}

/// Fill each unobserved `(i, j)` with the mean of `S_lj` over the `k` rows
/// `l` most correlated with row `i` (Pearson over co-observed columns),
/// averaged with the `(j, i)` estimate. Entries with no usable neighbour
/// fall back to the median of observed off-diagonal values.
pub fn knn_impute(s: &DenseSimilarity, k: usize) -> Result<DMatrix<f64>> {
    if k == 0 {
        return Err(SrfError::invalid("k must be at least 1"));
    }
    let n = s.n();
    let vals = s.observed_offdiag_values();
    if vals.is_empty() {
        return Err(SrfError::EmptyMask);
    }
    if s.mask().is_full() {
        return Ok(s.values().clone());
    }
    let fallback = median(&vals);
    let mask = s.mask();
    let v = s.values();

    // Row similarities over co-observed columns.
    let row_sim: Vec<Vec<Option<f64>>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (0..n)
                .map(|l| {
                    if l == i {
                        return None;
                    }
                    let (mut xs, mut ys) = (Vec::new(), Vec::new());
                    for c in 0..n {
                        if mask.get(i, c) && mask.get(l, c) {
                            xs.push(v[(i, c)]);
                            ys.push(v[(l, c)]);
                        }
                    }
                    pearson(&xs, &ys)
                })
                .collect()
        })
        .collect();

    let estimate = |i: usize, j: usize| -> Option<f64> {
        let mut cands: Vec<(f64, usize)> = (0..n)
            .filter(|&l| l != i && l != j && mask.get(l, j))
            .filter_map(|l| row_sim[i][l].map(|c| (c, l)))
            .collect();
        if cands.is_empty() {
            return None;
        }
        cands.sort_by(|a, b| {
            b.0.partial_cmp(&a.0)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.1.cmp(&b.1))
        });
        let top = &cands[..k.min(cands.len())];
        Some(top.iter().map(|&(_, l)| v[(l, j)]).sum::<f64>() / top.len() as f64)
    };

    let mut out = v.clone();
    let mut fallbacks = 0;
    for i in 0..n {
        for j in i + 1..n {
            if mask.get(i, j) {
                continue;
            }
            let fill = match (estimate(i, j), estimate(j, i)) {
                (Some(a), Some(b)) => 0.5 * (a + b),
                (Some(a), None) | (None, Some(a)) => a,
                (None, None) => {
                    fallbacks += 1;
                    fallback
                }
            };
            out[(i, j)] = fill;
            out[(j, i)] = fill;
        }
    }
    if fallbacks > 0 {
        warn!("{fallbacks} entries had no co-observed neighbours and were median-imputed");
    }
    Ok(out)
}

/// Number of leading eigenvalues of `s` that exceed the given percentile of
/// the same-index eigenvalues of value-shuffled surrogates.
pub fn parallel_analysis(
    s: &DMatrix<f64>,
    n_surrogates: usize,
    percentile: f64,
    seed: u64,
) -> Result<usize> {
    let n = s.nrows();
    if n != s.ncols() {
        return Err(SrfError::NotSquare {
            rows: n,
            cols: s.ncols(),
        });
    }
    if n_surrogates == 0 || !(percentile > 0.0 && percentile <= 100.0) {
        return Err(SrfError::invalid(
            "parallel analysis needs surrogates and a percentile in (0, 100]",
        ));
    }
    let observed = sym_eigenvalues_desc(s);
    let upper: Vec<f64> = (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .map(|(i, j)| s[(i, j)])
        .collect();
    let spectra: Vec<Vec<f64>> = (0..n_surrogates)
        .into_par_iter()
        .map(|t| {
            let mut rng = rng_from_seed(derive_seed(seed, &[t as u64]));
            let mut vals = upper.clone();
            rand::seq::SliceRandom::shuffle(vals.as_mut_slice(), &mut rng);
            let mut sur = DMatrix::from_fn(n, n, |i, j| if i == j { s[(i, i)] } else { 0.0 });
            let mut it = vals.into_iter();
            for i in 0..n {
                for j in i + 1..n {
                    let x = it.next().expect("one value per pair");
                    sur[(i, j)] = x;
                    sur[(j, i)] = x;
                }
            }
            sym_eigenvalues_desc(&sur)
        })
        .collect();
    let mut count = 0;
    for (idx, &lam) in observed.iter().enumerate() {
        let at: Vec<f64> = spectra.iter().map(|sp| sp[idx]).collect();
        if lam > percentile_nearest_rank(&at, percentile) {
            count += 1;
        } else {
            break;
        }
    }
    Ok(count)
}

/// Elbow of the descending eigenvalue sequence: the index in `1..=n−2`
/// with the largest second difference (first one on ties).
pub fn scree_rank_from_eigenvalues(eig: &[f64]) -> Result<usize> {
    let n = eig.len();
    if n < 3 {
        return Err(SrfError::invalid(format!(
            "scree test needs at least 3 eigenvalues, got {n}"
        )));
    }
    let mut best = 1;
    let mut best_val = f64::NEG_INFINITY;
    for i in 1..n - 1 {
        let d2 = eig[i - 1] - 2.0 * eig[i] + eig[i + 1];
        if d2 > best_val {
            best_val = d2;
            best = i;
        }
    }
    Ok(best)
}

pub fn scree_rank(s: &DMatrix<f64>) -> Result<usize> {
    if s.nrows() != s.ncols() {
        return Err(SrfError::NotSquare {
            rows: s.nrows(),
            cols: s.ncols(),
        });
    }
    scree_rank_from_eigenvalues(&sym_eigenvalues_desc(s))
}

/// `1 − Σ (truth − pred)² / Σ (truth − mean truth)²` over the listed pairs.
pub fn r_squared_on_pairs(
    truth: &DMatrix<f64>,
    pred: &DMatrix<f64>,
    pairs: &[(usize, usize)],
) -> f64 {
    let t: Vec<f64> = pairs.iter().map(|&(i, j)| truth[(i, j)]).collect();
    let m = mean(&t);
    let ss_tot: f64 = t.iter().map(|x| (x - m).powi(2)).sum();
    let ss_res: f64 = pairs
        .iter()
        .map(|&(i, j)| (truth[(i, j)] - pred[(i, j)]).powi(2))
        .sum();
    1.0 - ss_res / ss_tot
}

fn offdiag_pairs(n: usize) -> Vec<(usize, usize)> {
    (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RankMethod {
    Cv,
    ParallelAnalysis,
    Scree,
}

impl RankMethod {
    pub fn name(&self) -> &'static str {
        match self {
            RankMethod::Cv => "cv",
            RankMethod::ParallelAnalysis => "parallel-analysis",
            RankMethod::Scree => "scree",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RankDetectionConfig {
    pub n: usize,
    pub true_ranks: Vec<usize>,
    pub alphas: Vec<f64>,
    pub snrs: Vec<f64>,
    pub retentions: Vec<f64>,
    pub replicates: usize,
    pub cv: CvConfig,
    pub calibration: CalibrationConfig,
    pub pa_surrogates: usize,
    pub pa_percentile: f64,
    pub seed: u64,
}

impl Default for RankDetectionConfig {
    fn default() -> Self {
        RankDetectionConfig {
            n: 100,
            true_ranks: (3..=8).collect(),
            alphas: vec![0.2],
            snrs: vec![0.6, 0.9],
            retentions: vec![0.7, 1.0],
            replicates: 3,
            cv: CvConfig::new((1..=10).collect()),
            calibration: CalibrationConfig::default(),
            pa_surrogates: 100,
            pa_percentile: 95.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankDetectionRow {
    pub cell_id: usize,
    pub method: RankMethod,
    pub true_rank: usize,
    pub selected: usize,
    pub abs_err: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RankDetectionReport {
    pub rows: Vec<RankDetectionRow>,
}

impl RankDetectionReport {
    pub fn mae(&self, method: RankMethod) -> f64 {
        let errs: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.method == method)
            .map(|r| r.abs_err as f64)
            .collect();
        mean(&errs)
    }
}

/// Rank detection by cross-validation, parallel analysis and the scree test
/// over a grid of synthetic data sets. The eigenvalue baselines see the
/// median-imputed matrix when entries are missing.
pub fn rank_detection_experiment(cfg: &RankDetectionConfig) -> Result<RankDetectionReport> {
    let mut cells = Vec::new();
    for &r in &cfg.true_ranks {
        for &alpha in &cfg.alphas {
            for &snr in &cfg.snrs {
                for &retention in &cfg.retentions {
                    for rep in 0..cfg.replicates {
                        cells.push((r, alpha, snr, retention, rep));
                    }
                }
            }
        }
    }
    let per_cell = cells
        .par_iter()
        .enumerate()
        .map(|(cell_id, &(r, alpha, snr, retention, _))| {
            let seed = derive_seed(cfg.seed, &[cell_id as u64]);
            let gt = ground_truth(
                cfg.n,
                r,
                alpha,
                snr,
                NoiseMode::Similarity,
                derive_seed(seed, &[0]),
            )?;
            let mask = random_missing_mask(cfg.n, retention, derive_seed(seed, &[1]))?;
            let s = DenseSimilarity::new(gt.s_noisy.clone(), mask)?;
            let mut cv = cfg.cv.clone();
            cv.seed = derive_seed(seed, &[2]);
            let cal_cfg = cfg.calibration.clone().with_seed(derive_seed(seed, &[3]));
            let (_, curve) = select_rank_cv(&s, &cal_cfg, &cv)?;
            let complete = median_impute(&s)?;
            let pa = parallel_analysis(
                &complete,
                cfg.pa_surrogates,
                cfg.pa_percentile,
                derive_seed(seed, &[4]),
            )?;
            let scree = scree_rank(&complete)?;
            let row = |method, selected: usize| RankDetectionRow {
                cell_id,
                method,
                true_rank: r,
                selected,
                abs_err: selected.abs_diff(r),
            };
            Ok(vec![
                row(RankMethod::Cv, curve.selected_rank),
                row(RankMethod::ParallelAnalysis, pa),
                row(RankMethod::Scree, scree),
            ])
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RankDetectionReport {
        rows: per_cell.into_iter().flatten().collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CompletionMethod {
    Srf,
    KnnThenFit,
    MedianThenFit,
}

impl CompletionMethod {
    pub fn name(&self) -> &'static str {
        match self {
            CompletionMethod::Srf => "srf",
            CompletionMethod::KnnThenFit => "knn-then-fit",
            CompletionMethod::MedianThenFit => "median-then-fit",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MissingDataConfig {
    pub n: usize,
    pub rank: usize,
    pub alpha: f64,
    pub snr: f64,
    pub retentions: Vec<f64>,
    pub knn_k: usize,
    pub solver: SolverConfig,
    pub seed: u64,
}

impl Default for MissingDataConfig {
    fn default() -> Self {
        MissingDataConfig {
            n: 100,
            rank: 5,
            alpha: 0.2,
            snr: 0.9,
            retentions: vec![0.05, 0.1, 0.2, 0.4, 0.7, 1.0],
            knn_k: 5,
            solver: SolverConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MissingDataRow {
    pub retention: f64,
    pub method: CompletionMethod,
    pub sampling_density: f64,
    pub heldout_r2: f64,
    pub factor_alignment: f64,
}

/// Held-out recovery of a masked synthetic matrix by SRF on the observed
/// entries versus fitting after k-NN or median imputation. Held-out R² is
/// measured against the clean matrix on the unobserved off-diagonal pairs
/// (all off-diagonal pairs when nothing is missing).
pub fn missing_data_experiment(cfg: &MissingDataConfig) -> Result<Vec<MissingDataRow>> {
    let gt = ground_truth(
        cfg.n,
        cfg.rank,
        cfg.alpha,
        cfg.snr,
        NoiseMode::Similarity,
        derive_seed(cfg.seed, &[0]),
    )?;
    let per_retention = cfg
        .retentions
        .par_iter()
        .enumerate()
        .map(|(ri, &retention)| {
            let mask =
                random_missing_mask(cfg.n, retention, derive_seed(cfg.seed, &[1, ri as u64]))?;
            let s = DenseSimilarity::new(gt.s_noisy.clone(), mask.clone())?;
            let mut held: Vec<(usize, usize)> = offdiag_pairs(cfg.n)
                .into_iter()
                .filter(|&(i, j)| !mask.get(i, j))
                .collect();
            if held.is_empty() {
                held = offdiag_pairs(cfg.n);
            }
            let density = sampling_density(mask.observed_offdiag_count().max(1), cfg.n, cfg.rank)?;
            let solver = cfg.solver.with_seed(derive_seed(cfg.seed, &[2]));
            let inputs = [
                (CompletionMethod::Srf, s.clone()),
                (
                    CompletionMethod::KnnThenFit,
                    DenseSimilarity::full(knn_impute(&s, cfg.knn_k)?)?,
                ),
                (
                    CompletionMethod::MedianThenFit,
                    DenseSimilarity::full(median_impute(&s)?)?,
                ),
            ];
            inputs
                .into_iter()
                .map(|(method, input)| {
                    let res = fit(&input, cfg.rank, &solver)?;
                    Ok(MissingDataRow {
                        retention,
                        method,
                        sampling_density: density,
                        heldout_r2: r_squared_on_pairs(&gt.s_clean, &res.embedding.gram(), &held),
                        factor_alignment: factor_alignment(&gt.w_true, &res.embedding)?,
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_retention.into_iter().flatten().collect())
}
