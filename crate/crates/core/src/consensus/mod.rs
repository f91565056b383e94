//! Multi-start fitting, dimension alignment across runs, central-run
//! selection and split-half reliability.

mod hungarian;

pub use hungarian::{assignment_cost, hungarian};

use log::warn;
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::embedding::Embedding;
use crate::error::{Result, SrfError};
use crate::rng::{derive_seed, rng_from_seed, shuffled};
use crate::simmat::DenseSimilarity;
use crate::solver::{fit, SolverConfig};
use crate::stats::{pearson, spearman_brown};

/// Embeddings of the same data from different initializations.
#[derive(Debug, Clone)]
pub struct RunSet {
    runs: Vec<Embedding>,
    seeds: Vec<u64>,
}

impl RunSet {
    pub fn new(runs: Vec<Embedding>, seeds: Vec<u64>) -> Result<Self> {
        if runs.is_empty() {
            return Err(SrfError::invalid("a run set needs at least one run"));
        }
        if runs.len() != seeds.len() {
            return Err(SrfError::ShapeMismatch(format!(
                "{} runs but {} seeds",
                runs.len(),
                seeds.len()
            )));
        }
        let (n, r) = (runs[0].n(), runs[0].rank());
        if runs.iter().any(|w| w.n() != n || w.rank() != r) {
            return Err(SrfError::ShapeMismatch("runs differ in shape".into()));
        }
        let mut sorted = seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != seeds.len() {
            return Err(SrfError::invalid("run seeds must be distinct"));
        }
        Ok(RunSet { runs, seeds })
    }

    /// Runs labelled with seeds `0..len`.
    pub fn from_runs(runs: Vec<Embedding>) -> Result<Self> {
        let seeds = (0..runs.len() as u64).collect();
        Self::new(runs, seeds)
    }

    pub fn runs(&self) -> &[Embedding] {
        &self.runs
    }

    pub fn seeds(&self) -> &[u64] {
        &self.seeds
    }

    pub fn len(&self) -> usize {
        self.runs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.runs.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlignmentResult {
    /// `permutation[k]` is the column of `b` matched to column `k` of `a`.
    pub permutation: Vec<usize>,
    pub matched_correlations: Vec<f64>,
}

impl AlignmentResult {
    pub fn mean_correlation(&self) -> f64 {
        crate::stats::mean(&self.matched_correlations)
    }
}

/// Pearson correlations between every column of `a` and every column of
/// `b`, restricted to `rows` when given. Undefined correlations are 0.
pub fn column_correlations(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    rows: Option<&[usize]>,
) -> (DMatrix<f64>, usize) {
    let pick = |m: &DMatrix<f64>, k: usize| -> Vec<f64> {
        match rows {
            Some(idx) => idx.iter().map(|&i| m[(i, k)]).collect(),
            None => m.column(k).iter().copied().collect(),
        }
    };
    let ca: Vec<Vec<f64>> = (0..a.ncols()).map(|k| pick(a, k)).collect();
    let cb: Vec<Vec<f64>> = (0..b.ncols()).map(|k| pick(b, k)).collect();
    let mut undefined = 0;
    let corr = DMatrix::from_fn(a.ncols(), b.ncols(), |k, l| match pearson(&ca[k], &cb[l]) {
        Some(c) => c,
        None => {
            undefined += 1;
            0.0
        }
    });
    (corr, undefined)
}

fn align_on(a: &DMatrix<f64>, b: &DMatrix<f64>, fit_rows: Option<&[usize]>) -> AlignmentResult {
    let (corr, _) = column_correlations(a, b, fit_rows);
    let cost = corr.map(|c| 1.0 - c);
    let permutation = hungarian(&cost);
    let matched_correlations = permutation
        .iter()
        .enumerate()
        .map(|(k, &l)| corr[(k, l)])
        .collect();
    AlignmentResult {
        permutation,
        matched_correlations,
    }
}

/// Match the columns of `b` to those of `a` by maximizing total Pearson
/// correlation.
pub fn align(a: &Embedding, b: &Embedding) -> Result<AlignmentResult> {
    if a.n() != b.n() || a.rank() != b.rank() {
        return Err(SrfError::ShapeMismatch(format!(
            "cannot align {}x{} with {}x{}",
            a.n(),
            a.rank(),
            b.n(),
            b.rank()
        )));
    }
    let (_, undefined) = column_correlations(a.matrix(), b.matrix(), None);
    if undefined > 0 {
        warn!("{undefined} column pairs have zero variance; their correlation is taken as 0");
    }
    Ok(align_on(a.matrix(), b.matrix(), None))
}

/// Symmetric matrix of mean matched correlations between runs, with ones on
/// the diagonal.
pub fn pairwise_mean_correlations(rs: &RunSet) -> DMatrix<f64> {
    let m = rs.len();
    let pairs: Vec<(usize, usize)> = (0..m)
        .flat_map(|i| (i + 1..m).map(move |j| (i, j)))
        .collect();
    let vals: Vec<f64> = pairs
        .par_iter()
        .map(|&(i, j)| align_on(rs.runs[i].matrix(), rs.runs[j].matrix(), None).mean_correlation())
        .collect();
    let mut out = DMatrix::identity(m, m);
    for (&(i, j), v) in pairs.iter().zip(vals) {
        out[(i, j)] = v;
        out[(j, i)] = v;
    }
    out
}

/// Index of the run with the highest average agreement with all other runs;
/// ties go to the lowest index.
pub fn central_run(rs: &RunSet) -> usize {
    let m = rs.len();
    if m == 1 {
        return 0;
    }
    let pair = pairwise_mean_correlations(rs);
    let score = |i: usize| {
        (0..m)
            .filter(|&j| j != i)
            .map(|j| pair[(i, j)])
            .sum::<f64>()
            / (m - 1) as f64
    };
    let mut best = 0;
    let mut best_score = score(0);
    for i in 1..m {
        let s = score(i);
        if s > best_score {
            best = i;
            best_score = s;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Reliability {
    pub raw: f64,
    pub corrected: f64,
}

/// Split-half reliability of dimensions across runs: dimensions are matched
/// on one random half of the items and correlated on the other; the mean
/// over dimensions, run pairs and splits is Spearman-Brown corrected.
pub fn split_half_reliability(rs: &RunSet, n_splits: usize, seed: u64) -> Result<Reliability> {
    let m = rs.len();
    let n = rs.runs[0].n();
    if m < 2 {
        return Err(SrfError::invalid(
            "split-half reliability needs at least two runs",
        ));
    }
    if n < 4 {
        return Err(SrfError::invalid(format!(
            "split-half reliability needs at least 4 items, got {n}"
        )));
    }
    if n_splits == 0 {
        return Err(SrfError::invalid("n_splits must be at least 1"));
    }
    let pairs: Vec<(usize, usize)> = (0..m)
        .flat_map(|i| (i + 1..m).map(move |j| (i, j)))
        .collect();
    let per_split: Vec<f64> = (0..n_splits)
        .into_par_iter()
        .map(|split| {
            let mut rng = rng_from_seed(derive_seed(seed, &[split as u64]));
            let order = shuffled(n, &mut rng);
            let (half_a, half_b) = order.split_at(n.div_ceil(2));
            let total: f64 = pairs
                .iter()
                .map(|&(i, j)| {
                    let (a, b) = (rs.runs[i].matrix(), rs.runs[j].matrix());
                    let matched = align_on(a, b, Some(half_a));
                    let (corr_b, _) = column_correlations(a, b, Some(half_b));
                    let r = matched.permutation.len();
                    matched
                        .permutation
                        .iter()
                        .enumerate()
                        .map(|(k, &l)| corr_b[(k, l)])
                        .sum::<f64>()
                        / r as f64
                })
                .sum();
            total / pairs.len() as f64
        })
        .collect();
    let raw = per_split.iter().sum::<f64>() / n_splits as f64;
    Ok(Reliability {
        raw,
        corrected: spearman_brown(raw),
    })
}

#[derive(Debug, Clone)]
pub struct ConsensusResult {
    pub embedding: Embedding,
    pub central_index: usize,
    pub central_seed: u64,
    pub runs: RunSet,
    /// Absent when only one run was fitted.
    pub reliability: Option<Reliability>,
    pub pairwise: DMatrix<f64>,
    pub final_losses: Vec<f64>,
}

/// Fit `n_runs` random initializations and return the most central run.
/// Runs are never averaged.
pub fn consensus_fit(
    s: &DenseSimilarity,
    rank: usize,
    n_runs: usize,
    cfg: &SolverConfig,
    n_splits: usize,
) -> Result<ConsensusResult> {
    if n_runs == 0 {
        return Err(SrfError::invalid("n_runs must be at least 1"));
    }
    let seeds: Vec<u64> = (0..n_runs as u64)
        .map(|k| derive_seed(cfg.seed(), &[k]))
        .collect();
    let fits = seeds
        .par_iter()
        .map(|&seed| fit(s, rank, &cfg.with_seed(seed)))
        .collect::<Result<Vec<_>>>()?;
    let final_losses = fits.iter().map(|f| f.final_loss).collect();
    let runs = RunSet::new(fits.into_iter().map(|f| f.embedding).collect(), seeds)?;
    let pairwise = pairwise_mean_correlations(&runs);
    let central_index = central_run(&runs);
    let reliability = if n_runs >= 2 && s.n() >= 4 {
        Some(split_half_reliability(
            &runs,
            n_splits,
            derive_seed(cfg.seed(), &[u64::MAX]),
        )?)
    } else {
        None
    };
    Ok(ConsensusResult {
        embedding: runs.runs[central_index].clone(),
        central_index,
        central_seed: runs.seeds[central_index],
        runs,
        reliability,
        pairwise,
        final_losses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    fn random_w(n: usize, r: usize, seed: u64) -> Embedding {
        let mut rng = rng_from_seed(seed);
        Embedding(DMatrix::from_fn(n, r, |_, _| rng.random::<f64>()))
    }

    #[test]
    fn align_recovers_column_permutation() {
        let a = random_w(30, 5, 1);
        let perm = vec![3, 0, 4, 1, 2];
        // b's column l is a's column inv[l]
        let mut b = DMatrix::zeros(30, 5);
        for (k, &l) in perm.iter().enumerate() {
            b.set_column(l, &a.matrix().column(k));
        }
        let res = align(&a, &Embedding(b.clone())).unwrap();
        assert_eq!(res.permutation, perm);
        for c in &res.matched_correlations {
            assert_relative_eq!(*c, 1.0, epsilon = 1e-12);
        }
        assert_eq!(Embedding(b).permute_columns(&res.permutation), a);
    }

    #[test]
    fn align_stable_under_small_noise() {
        let a = random_w(40, 4, 2);
        let b = a.permute_columns(&[2, 3, 1, 0]);
        let clean = align(&a, &b).unwrap();
        let mut rng = rng_from_seed(3);
        let nd = Normal::new(0.0, 1e-3).unwrap();
        let noisy = Embedding(b.matrix().map(|x| x + nd.sample(&mut rng)));
        assert_eq!(align(&a, &noisy).unwrap().permutation, clean.permutation);
    }

    #[test]
    fn independent_runs_align_near_zero() {
        let mut means = Vec::new();
        for s in 0..20 {
            means.push(
                align(&random_w(200, 3, 10 + s), &random_w(200, 3, 100 + s))
                    .unwrap()
                    .mean_correlation(),
            );
        }
        assert!(crate::stats::mean(&means).abs() < 0.1);
    }

    #[test]
    fn zero_variance_column_correlates_zero() {
        let a = random_w(10, 2, 4);
        let mut b = a.matrix().clone();
        b.set_column(1, &DMatrix::from_element(10, 1, 0.5).column(0));
        let res = align(&a, &Embedding(b)).unwrap();
        assert_eq!(res.permutation, vec![0, 1]);
        assert_relative_eq!(res.matched_correlations[0], 1.0, epsilon = 1e-12);
        assert_eq!(res.matched_correlations[1], 0.0);
    }

    #[test]
    fn central_run_ties_and_outliers() {
        let a = random_w(25, 3, 5);
        let rs = RunSet::from_runs(vec![a.clone(), a.clone(), a.clone()]).unwrap();
        assert_eq!(central_run(&rs), 0);
        let rs = RunSet::from_runs(vec![a.clone(), random_w(25, 3, 6)]).unwrap();
        assert_eq!(central_run(&rs), 0);

        let mut rng = rng_from_seed(7);
        let nd = Normal::new(0.0, 0.01).unwrap();
        let mut runs: Vec<Embedding> = (0..5)
            .map(|_| Embedding(a.matrix().map(|x| x + nd.sample(&mut rng))))
            .collect();
        runs[0] = random_w(25, 3, 99);
        let rs = RunSet::from_runs(runs).unwrap();
        assert_ne!(central_run(&rs), 0);
    }

    #[test]
    fn central_run_order_invariant() {
        let base = random_w(30, 3, 8);
        let mut rng = rng_from_seed(9);
        let runs: Vec<Embedding> = (0..6)
            .map(|k| {
                let nd = Normal::new(0.0, 0.02 * (k + 1) as f64).unwrap();
                Embedding(base.matrix().map(|x| x + nd.sample(&mut rng)))
            })
            .collect();
        let c = central_run(&RunSet::from_runs(runs.clone()).unwrap());
        let mut rev = runs.clone();
        rev.reverse();
        let c_rev = central_run(&RunSet::from_runs(rev).unwrap());
        assert_eq!(c, runs.len() - 1 - c_rev);
    }

    #[test]
    fn split_half_of_duplicates_is_one() {
        let a = random_w(20, 3, 11);
        let rs = RunSet::from_runs(vec![a.clone(), a]).unwrap();
        let rel = split_half_reliability(&rs, 10, 0).unwrap();
        assert_relative_eq!(rel.corrected, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn split_half_of_independent_runs_is_near_zero() {
        let runs: Vec<Embedding> = (0..6).map(|k| random_w(200, 3, 50 + k)).collect();
        let rel = split_half_reliability(&RunSet::from_runs(runs).unwrap(), 20, 1).unwrap();
        // matching on half A picks the best of 3! permutations, so raw
        // correlation on half B is only slightly biased
        assert!(rel.corrected.abs() < 0.15, "{rel:?}");
    }

    #[test]
    fn split_half_preconditions() {
        let rs = RunSet::from_runs(vec![random_w(10, 2, 1)]).unwrap();
        assert!(split_half_reliability(&rs, 10, 0).is_err());
        let rs = RunSet::from_runs(vec![random_w(3, 2, 1), random_w(3, 2, 2)]).unwrap();
        assert!(split_half_reliability(&rs, 10, 0).is_err());
    }

    #[test]
    fn run_set_validation() {
        assert!(RunSet::new(vec![random_w(5, 2, 1), random_w(5, 3, 1)], vec![0, 1]).is_err());
        assert!(RunSet::new(vec![random_w(5, 2, 1), random_w(5, 2, 1)], vec![4, 4]).is_err());
    }

    #[test]
    fn consensus_single_run_has_no_reliability() {
        let w = random_w(12, 2, 3);
        let s = DenseSimilarity::full(w.gram()).unwrap();
        let cfg = SolverConfig::default().with_iterations(20, 5).unwrap();
        let res = consensus_fit(&s, 2, 1, &cfg, 10).unwrap();
        assert!(res.reliability.is_none());
        assert_eq!(res.central_index, 0);
    }
}
