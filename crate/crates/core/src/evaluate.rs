//! Downstream checks of a fitted embedding: reconstruction R², odd-one-out
//! accuracy, link-prediction AUC and ridge prediction of item ratings.

use log::warn;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::Embedding;
use crate::error::{Result, SrfError};
use crate::rng::{derive_seed, rng_from_seed, shuffled};
use crate::simmat::{DenseSimilarity, Triplet};
use crate::stats::{mean, spearman};

/// `1 − SSE / SST` over observed off-diagonal pairs.
pub fn explained_variance(s: &DenseSimilarity, w: &Embedding) -> Result<f64> {
    let n = s.n();
    if w.n() != n {
        return Err(SrfError::ShapeMismatch(format!(
            "embedding has {} rows for {n} items",
            w.n()
        )));
    }
    let mut obs = Vec::new();
    let mut fitted = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if let Some(v) = s.get(i, j) {
                obs.push(v);
                fitted.push(w.matrix().row(i).dot(&w.matrix().row(j)));
            }
        }
    }
    if obs.is_empty() {
        return Err(SrfError::EmptyMask);
    }
    let mu = mean(&obs);
    let sst: f64 = obs.iter().map(|v| (v - mu) * (v - mu)).sum();
    if sst <= 0.0 {
        return Err(SrfError::ZeroVariance(
            "observed similarities are constant".into(),
        ));
    }
    let sse: f64 = obs
        .iter()
        .zip(&fitted)
        .map(|(v, f)| (v - f) * (v - f))
        .sum();
    Ok(1.0 - sse / sst)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TripletAccuracy {
    pub accuracy: f64,
    pub correct: usize,
    pub total: usize,
    /// Trials whose most similar pair was not unique.
    pub ties: usize,
}

/// Predicted odd item of `{a, b, c}` under `score`: the item outside the
/// highest-scoring pair. Pairs are compared in lexicographic order of their
/// sorted indices and the first maximum wins. Returns `(odd, tied)`.
pub fn predict_odd_one_out(
    items: [usize; 3],
    score: impl Fn(usize, usize) -> f64,
) -> (usize, bool) {
    let mut t = items;
    t.sort_unstable();
    let pairs = [(t[0], t[1], t[2]), (t[0], t[2], t[1]), (t[1], t[2], t[0])];
    let scores: Vec<f64> = pairs.iter().map(|&(x, y, _)| score(x, y)).collect();
    let best = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let first = scores.iter().position(|&v| v == best).unwrap_or(0);
    let tied = scores.iter().filter(|&&v| v == best).count() > 1;
    (pairs[first].2, tied)
}

/// Share of trials where the item outside the most similar pair under
/// `W Wᵀ` is the chosen odd one.
pub fn triplet_accuracy(w: &Embedding, triplets: &[Triplet]) -> Result<TripletAccuracy> {
    let n = w.n();
    let m = w.matrix();
    let mut correct = 0;
    let mut ties = 0;
    for tr in triplets {
        let items = [tr.a, tr.b, tr.odd];
        if items.iter().any(|&x| x >= n) {
            return Err(SrfError::invalid(format!(
                "triplet {items:?} references an item outside 0..{n}"
            )));
        }
        let (odd, tied) = predict_odd_one_out(items, |x, y| m.row(x).dot(&m.row(y)));
        correct += usize::from(odd == tr.odd);
        ties += usize::from(tied);
    }
    Ok(TripletAccuracy {
        accuracy: if triplets.is_empty() {
            f64::NAN
        } else {
            correct as f64 / triplets.len() as f64
        },
        correct,
        total: triplets.len(),
        ties,
    })
}

/// Mann–Whitney AUC: probability that a positive outranks a negative, ties
/// counting one half.
pub fn auc_from_scores(positives: &[f64], negatives: &[f64]) -> Result<f64> {
    if positives.is_empty() || negatives.is_empty() {
        return Err(SrfError::invalid(
            "AUC needs at least one positive and one negative",
        ));
    }
    let mut neg = negatives.to_vec();
    neg.sort_by(f64::total_cmp);
    let mut wins = 0.0;
    for &p in positives {
        let below = neg.partition_point(|&v| v < p);
        let not_above = neg.partition_point(|&v| v <= p);
        wins += below as f64 + 0.5 * (not_above - below) as f64;
    }
    Ok(wins / (positives.len() as f64 * negatives.len() as f64))
}

/// AUC of `(W Wᵀ)_ij` for positive against negative pairs.
pub fn link_auc(
    w: &Embedding,
    positives: &[(usize, usize)],
    negatives: &[(usize, usize)],
) -> Result<f64> {
    let n = w.n();
    let m = w.matrix();
    let score = |pairs: &[(usize, usize)]| -> Result<Vec<f64>> {
        pairs
            .iter()
            .map(|&(i, j)| {
                if i >= n || j >= n {
                    Err(SrfError::invalid(format!("pair ({i}, {j}) outside 0..{n}")))
                } else {
                    Ok(m.row(i).dot(&m.row(j)))
                }
            })
            .collect()
    };
    auc_from_scores(&score(positives)?, &score(negatives)?)
}

/// `k` pairs drawn without replacement from `pool`.
pub fn sample_pairs(pool: &[(usize, usize)], k: usize, seed: u64) -> Result<Vec<(usize, usize)>> {
    if k > pool.len() {
        return Err(SrfError::invalid(format!(
            "cannot draw {k} pairs from {}",
            pool.len()
        )));
    }
    let mut rng = rng_from_seed(seed);
    Ok(rand::seq::index::sample(&mut rng, pool.len(), k)
        .into_iter()
        .map(|i| pool[i])
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RidgeConfig {
    pub folds: usize,
    pub alpha_grid: Vec<f64>,
    pub seed: u64,
}

impl Default for RidgeConfig {
    fn default() -> Self {
        RidgeConfig {
            folds: 5,
            alpha_grid: vec![0.01, 0.1, 1.0, 10.0, 100.0],
            seed: 0,
        }
    }
}

impl RidgeConfig {
    fn validate(&self) -> Result<()> {
        if self.folds < 2 {
            return Err(SrfError::invalid(
                "ridge prediction needs at least two folds",
            ));
        }
        if self.alpha_grid.is_empty()
            || self.alpha_grid.iter().any(|&a| !(a > 0.0 && a.is_finite()))
        {
            return Err(SrfError::invalid(
                "ridge penalties must be positive and finite",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RidgePrediction {
    pub predictions: Vec<f64>,
    /// Outer fold of each row.
    pub fold: Vec<usize>,
    /// Penalty chosen by the inner search in each outer fold.
    pub alphas: Vec<f64>,
    pub spearman: f64,
}

fn fold_labels(n: usize, folds: usize, seed: u64) -> Vec<usize> {
    let mut rng = rng_from_seed(seed);
    let mut label = vec![0; n];
    for (pos, &i) in shuffled(n, &mut rng).iter().enumerate() {
        label[i] = pos % folds;
    }
    label
}

/// Standardize with training statistics, fit ridge with an unpenalized
/// intercept, predict `test` rows.
fn ridge_fit_predict(
    x: &DMatrix<f64>,
    y: &[f64],
    train: &[usize],
    test: &[usize],
    alpha: f64,
) -> Result<Vec<f64>> {
    let d = x.ncols();
    let nt = train.len() as f64;
    let mut mu = vec![0.0; d];
    let mut sd = vec![1.0; d];
    for c in 0..d {
        let vals: Vec<f64> = train.iter().map(|&i| x[(i, c)]).collect();
        mu[c] = mean(&vals);
        let var = vals.iter().map(|v| (v - mu[c]) * (v - mu[c])).sum::<f64>() / nt;
        if var > 0.0 {
            sd[c] = var.sqrt();
        }
    }
    let z = |i: usize, c: usize| (x[(i, c)] - mu[c]) / sd[c];
    let y_mean = train.iter().map(|&i| y[i]).sum::<f64>() / nt;
    let xt = DMatrix::from_fn(train.len(), d, |a, c| z(train[a], c));
    let yt = DVector::from_iterator(train.len(), train.iter().map(|&i| y[i] - y_mean));
    let mut gram = xt.transpose() * &xt;
    for c in 0..d {
        gram[(c, c)] += alpha;
    }
    let beta = gram
        .cholesky()
        .ok_or_else(|| SrfError::invalid("ridge system is not positive definite"))?
        .solve(&(xt.transpose() * yt));
    Ok(test
        .iter()
        .map(|&i| y_mean + (0..d).map(|c| z(i, c) * beta[c]).sum::<f64>())
        .collect())
}

/// Nested cross-validated ridge regression of `targets` on `features`. The
/// outer split produces out-of-fold predictions; inside each training part
/// an inner split of the same size picks the penalty with the lowest mean
/// squared error (first in grid order on ties).
pub fn ridge_predict(
    features: &DMatrix<f64>,
    targets: &[f64],
    cfg: &RidgeConfig,
) -> Result<RidgePrediction> {
    cfg.validate()?;
    let n = features.nrows();
    if targets.len() != n {
        return Err(SrfError::ShapeMismatch(format!(
            "{} targets for {n} rows",
            targets.len()
        )));
    }
    if n < 2 * cfg.folds {
        return Err(SrfError::invalid(format!(
            "{n} rows are too few for {} folds",
            cfg.folds
        )));
    }
    if targets.iter().any(|v| !v.is_finite()) || features.iter().any(|v| !v.is_finite()) {
        return Err(SrfError::invalid("features and targets must be finite"));
    }
    if targets.iter().all(|&v| v == targets[0]) {
        return Err(SrfError::ZeroVariance("targets are constant".into()));
    }
    let outer = fold_labels(n, cfg.folds, cfg.seed);
    let per_fold: Vec<(Vec<usize>, Vec<f64>, f64)> = (0..cfg.folds)
        .into_par_iter()
        .map(|f| -> Result<(Vec<usize>, Vec<f64>, f64)> {
            let train: Vec<usize> = (0..n).filter(|&i| outer[i] != f).collect();
            let test: Vec<usize> = (0..n).filter(|&i| outer[i] == f).collect();
            let alpha = if cfg.alpha_grid.len() == 1 {
                cfg.alpha_grid[0]
            } else {
                let inner = fold_labels(train.len(), cfg.folds, derive_seed(cfg.seed, &[f as u64]));
                let mut best = (f64::INFINITY, cfg.alpha_grid[0]);
                for &alpha in &cfg.alpha_grid {
                    let mut sse = 0.0;
                    for g in 0..cfg.folds {
                        let tr: Vec<usize> = (0..train.len())
                            .filter(|&a| inner[a] != g)
                            .map(|a| train[a])
                            .collect();
                        let te: Vec<usize> = (0..train.len())
                            .filter(|&a| inner[a] == g)
                            .map(|a| train[a])
                            .collect();
                        let pred = ridge_fit_predict(features, targets, &tr, &te, alpha)?;
                        sse += te
                            .iter()
                            .zip(&pred)
                            .map(|(&i, p)| (targets[i] - p).powi(2))
                            .sum::<f64>();
                    }
                    if sse < best.0 {
                        best = (sse, alpha);
                    }
                }
                best.1
            };
            let pred = ridge_fit_predict(features, targets, &train, &test, alpha)?;
            Ok((test, pred, alpha))
        })
        .collect::<Result<_>>()?;
    let mut predictions = vec![f64::NAN; n];
    let mut alphas = Vec::with_capacity(cfg.folds);
    for (test, pred, alpha) in per_fold {
        for (&i, p) in test.iter().zip(pred) {
            predictions[i] = p;
        }
        alphas.push(alpha);
    }
    let rho = spearman(&predictions, targets).unwrap_or_else(|| {
        warn!("out-of-fold predictions are constant; Spearman correlation set to 0");
        0.0
    });
    Ok(RidgePrediction {
        predictions,
        fold: outer,
        alphas,
        spearman: rho,
    })
}
