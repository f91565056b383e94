//! Permutation tests for hypothesized dimensions.
//!
//! Two tests are compared. The RSA test correlates each hypothesis matrix
//! `x_j x_jᵀ` with the observed similarities (a Mantel test). The SRF test
//! factorizes the similarities, matches every hypothesis to a recovered
//! dimension with leave-one-out alignment and correlates the two.

use log::warn;
use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::consensus::hungarian;
use crate::embedding::Embedding;
use crate::error::{Result, SrfError};
use crate::rng::{derive_seed, rng_from_seed, shuffled};
use crate::simmat::DenseSimilarity;
use crate::simulate::add_noise_to_snr;
use crate::solver::{fit, SolverConfig};
use crate::stats::{pearson_or_zero, percentile_nearest_rank, variance};

const TIE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DesignKind {
    Factorial,
    /// Generated surrogate of a sparse, correlated embedding.
    SparseCorrelated,
    LoadedFromFile,
}

/// Items × features matrix whose columns are the hypotheses under test.
#[derive(Debug, Clone)]
pub struct DesignMatrix {
    pub x: DMatrix<f64>,
    pub kind: DesignKind,
    /// Source rows and columns when sampled from a file.
    pub source_index: Option<(Vec<usize>, Vec<usize>)>,
}

impl DesignMatrix {
    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn k(&self) -> usize {
        self.x.ncols()
    }

    pub fn is_surrogate(&self) -> bool {
        self.kind == DesignKind::SparseCorrelated
    }

    /// `X Xᵀ`: for a factorial design, the number of shared levels.
    pub fn similarity(&self) -> DMatrix<f64> {
        &self.x * self.x.transpose()
    }

    pub fn hypothesis(&self, j: usize) -> DMatrix<f64> {
        let c = self.x.column(j);
        &c * c.transpose()
    }

    pub fn column_variances(&self) -> Vec<f64> {
        (0..self.k())
            .map(|j| variance(self.x.column(j).as_slice()))
            .collect()
    }
}

/// One-hot factorial design. When `n` equals the number of level
/// combinations every combination appears once, in shuffled order.
/// Otherwise each factor's levels are dealt round-robin over a fresh shuffle
/// of the items, so level counts are balanced and factors are independent
/// of one another in expectation.
pub fn factorial_design(levels: &[usize], n: usize, seed: u64) -> Result<DesignMatrix> {
    if levels.is_empty() {
        return Err(SrfError::invalid(
            "a factorial design needs at least one factor",
        ));
    }
    if let Some(&l) = levels.iter().find(|&&l| l < 3) {
        return Err(SrfError::invalid(format!(
            "every factor needs at least 3 levels, got {l}"
        )));
    }
    if n == 0 {
        return Err(SrfError::invalid("a design needs at least one item"));
    }
    if levels.iter().any(|&l| n % l != 0) {
        warn!("{n} items cannot be spread evenly over every factor; level counts differ by one");
    }
    let mut rng = rng_from_seed(seed);
    let cells = levels.iter().try_fold(1usize, |acc, &l| acc.checked_mul(l));
    let assignment: Vec<Vec<usize>> = if cells == Some(n) {
        let order = shuffled(n, &mut rng);
        let mut stride = 1;
        levels
            .iter()
            .map(|&l| {
                let lv = order.iter().map(|&cell| (cell / stride) % l).collect();
                stride *= l;
                lv
            })
            .collect()
    } else {
        levels
            .iter()
            .map(|&l| {
                let order = shuffled(n, &mut rng);
                let mut lv = vec![0; n];
                for (pos, &i) in order.iter().enumerate() {
                    lv[i] = pos % l;
                }
                lv
            })
            .collect()
    };
    let offsets: Vec<usize> = levels
        .iter()
        .scan(0, |acc, &l| {
            let o = *acc;
            *acc += l;
            Some(o)
        })
        .collect();
    let total: usize = levels.iter().sum();
    let mut x = DMatrix::zeros(n, total);
    for (f, lv) in assignment.iter().enumerate() {
        for (i, &l) in lv.iter().enumerate() {
            x[(i, offsets[f] + l)] = 1.0;
        }
    }
    Ok(DesignMatrix {
        x,
        kind: DesignKind::Factorial,
        source_index: None,
    })
}

/// Sparse, non-negative, correlated hypotheses. With a `source` embedding,
/// `n` rows and `k` columns are sampled without replacement. Without one, a
/// surrogate is generated: equicorrelated Gaussians (shared-factor loading
/// 0.5) shifted down by 0.8, truncated at zero and given log-normal column
/// scales.
pub fn sparse_correlated_design(
    n: usize,
    k: usize,
    source: Option<&DMatrix<f64>>,
    seed: u64,
) -> Result<DesignMatrix> {
    if n < 2 || k == 0 {
        return Err(SrfError::invalid(
            "a design needs at least two items and one column",
        ));
    }
    let mut rng = rng_from_seed(seed);
    if let Some(src) = source {
        if src.nrows() < n || src.ncols() < k {
            return Err(SrfError::ShapeMismatch(format!(
                "source embedding is {}x{}, need at least {n}x{k}",
                src.nrows(),
                src.ncols()
            )));
        }
        if src.iter().any(|&v| !(v.is_finite() && v >= 0.0)) {
            return Err(SrfError::invalid(
                "source embedding must be finite and non-negative",
            ));
        }
        let rows = sample(&mut rng, src.nrows(), n).into_vec();
        let cols = sample(&mut rng, src.ncols(), k).into_vec();
        let x = DMatrix::from_fn(n, k, |i, j| src[(rows[i], cols[j])]);
        return Ok(DesignMatrix {
            x,
            kind: DesignKind::LoadedFromFile,
            source_index: Some((rows, cols)),
        });
    }
    let shared = 0.5f64;
    let mut x = DMatrix::zeros(n, k);
    let common: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    for j in 0..k {
        let scale = (0.5 * rng.sample::<f64, _>(StandardNormal)).exp();
        loop {
            let col: Vec<f64> = common
                .iter()
                .map(|&g| {
                    let e: f64 = rng.sample(StandardNormal);
                    (shared.sqrt() * g + (1.0 - shared).sqrt() * e - 0.8).max(0.0) * scale
                })
                .collect();
            // at least two non-zero items so the column has variance
            if col.iter().filter(|&&v| v > 0.0).count() >= 2 {
                x.set_column(j, &nalgebra::DVector::from_vec(col));
                break;
            }
        }
    }
    Ok(DesignMatrix {
        x,
        kind: DesignKind::SparseCorrelated,
        source_index: None,
    })
}

fn check_square_symmetric(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(SrfError::NotSquare {
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    let scale = m.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1.0);
    for i in 0..m.nrows() {
        for j in (i + 1)..m.nrows() {
            if (m[(i, j)] - m[(j, i)]).abs() > 1e-9 * scale {
                return Err(SrfError::invalid(format!(
                    "{what} is not symmetric at ({i}, {j})"
                )));
            }
        }
    }
    Ok(())
}

fn upper_triangle(m: &DMatrix<f64>) -> Vec<f64> {
    let n = m.nrows();
    (0..n)
        .flat_map(|i| ((i + 1)..n).map(move |j| m[(i, j)]))
        .collect()
}

fn centered(v: &[f64]) -> Vec<f64> {
    let mu = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| x - mu).collect()
}

/// Pearson correlation of the strict upper triangles.
pub fn mantel_statistic(h: &DMatrix<f64>, s: &DMatrix<f64>) -> Option<f64> {
    crate::stats::pearson(&upper_triangle(h), &upper_triangle(s))
}

/// One-sided Mantel test of a single hypothesis matrix.
pub fn mantel_test(h: &DMatrix<f64>, s: &DMatrix<f64>, n_perm: usize, seed: u64) -> Result<f64> {
    Ok(mantel_tests(std::slice::from_ref(h), s, n_perm, seed)?[0])
}

/// Mantel tests of several hypotheses against the same `s`, sharing one
/// stream of joint row/column permutations. `p = (1 + #{perm ≥ obs}) /
/// (1 + n_perm)`; `n_perm = 0` gives `p = 1`.
pub fn mantel_tests(
    hs: &[DMatrix<f64>],
    s: &DMatrix<f64>,
    n_perm: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    check_square_symmetric(s, "similarity matrix")?;
    let n = s.nrows();
    for h in hs {
        if h.nrows() != n {
            return Err(SrfError::ShapeMismatch(format!(
                "hypothesis is {}x{}, similarity is {n}x{n}",
                h.nrows(),
                h.ncols()
            )));
        }
        check_square_symmetric(h, "hypothesis matrix")?;
    }
    if n < 3 {
        return Err(SrfError::invalid(
            "a Mantel test needs at least three items",
        ));
    }
    let s_mean = upper_triangle(s).iter().sum::<f64>() / (n * (n - 1) / 2) as f64;
    let s_c = centered(&upper_triangle(s));
    let s_var: f64 = s_c.iter().map(|v| v * v).sum();
    if s_var <= 0.0 {
        warn!("similarity matrix has zero off-diagonal variance; every Mantel p-value is 1");
        return Ok(vec![1.0; hs.len()]);
    }
    let h_c: Vec<Option<Vec<f64>>> = hs
        .iter()
        .enumerate()
        .map(|(idx, h)| {
            let c = centered(&upper_triangle(h));
            if c.iter().all(|&v| v == 0.0) {
                warn!("hypothesis {idx} has zero off-diagonal variance; its p-value is 1");
                None
            } else {
                Some(c)
            }
        })
        .collect();
    if n_perm == 0 {
        return Ok(vec![1.0; hs.len()]);
    }
    // Joint permutations keep the multiset of off-diagonal values, so the
    // norm of the centered similarity vector is fixed and dot products
    // order the statistics.
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let observed: Vec<f64> = h_c
        .iter()
        .map(|h| h.as_ref().map_or(0.0, |h| dot(h, &s_c)))
        .collect();
    let tol: Vec<f64> = h_c
        .iter()
        .map(|h| {
            h.as_ref()
                .map_or(0.0, |h| TIE_EPS * (dot(h, h) * s_var).sqrt())
        })
        .collect();
    let mut exceed = vec![0usize; hs.len()];
    let mut rng = rng_from_seed(seed);
    let mut perm_vec = vec![0.0; s_c.len()];
    for _ in 0..n_perm {
        let pi = shuffled(n, &mut rng);
        let mut a = 0;
        for i in 0..n {
            for j in (i + 1)..n {
                perm_vec[a] = s[(pi[i], pi[j])] - s_mean;
                a += 1;
            }
        }
        for (idx, h) in h_c.iter().enumerate() {
            if let Some(h) = h {
                if dot(h, &perm_vec) >= observed[idx] - tol[idx] {
                    exceed[idx] += 1;
                }
            }
        }
    }
    Ok(h_c
        .iter()
        .zip(&exceed)
        .map(|(h, &e)| match h {
            Some(_) => (1 + e) as f64 / (1 + n_perm) as f64,
            None => 1.0,
        })
        .collect())
}

fn center_columns(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut c = m.clone();
    for mut col in c.column_iter_mut() {
        let mu = col.mean();
        col.add_scalar_mut(-mu);
    }
    c
}

/// Per-hypothesis statistic of the SRF test. For every item `o`, hypotheses
/// are matched to dimensions by a Hungarian assignment on `1 − |corr|`, with
/// correlations computed over all other items; item `o` contributes the
/// weight of its matched dimension. The statistic for hypothesis `j` is the
/// Pearson correlation between `x_j` and these contributions.
pub fn loo_matched_statistics(w: &DMatrix<f64>, x: &DMatrix<f64>) -> Result<Vec<f64>> {
    let (n, r, k) = (w.nrows(), w.ncols(), x.ncols());
    if x.nrows() != n {
        return Err(SrfError::ShapeMismatch(format!(
            "{} hypothesis rows for {n} items",
            x.nrows()
        )));
    }
    if k > r {
        return Err(SrfError::invalid(format!(
            "{k} hypotheses cannot be matched to {r} dimensions"
        )));
    }
    if n < 3 {
        return Err(SrfError::invalid(
            "leave-one-out alignment needs at least three items",
        ));
    }
    let (xc, wc) = (center_columns(x), center_columns(w));
    let xx: Vec<f64> = (0..k).map(|j| xc.column(j).norm_squared()).collect();
    let ww: Vec<f64> = (0..r).map(|l| wc.column(l).norm_squared()).collect();
    let xw = xc.transpose() * &wc;
    let m = (n - 1) as f64;
    let mut cost = DMatrix::from_element(r, r, 1.0);
    let mut contrib = DMatrix::zeros(n, k);
    for o in 0..n {
        for j in 0..k {
            let xo = xc[(o, j)];
            // sums over the other items of the centered column
            let sx = -xo;
            let vx = xx[j] - xo * xo - sx * sx / m;
            for l in 0..r {
                let wo = wc[(o, l)];
                let sw = -wo;
                let vw = ww[l] - wo * wo - sw * sw / m;
                let cov = xw[(j, l)] - xo * wo - sx * sw / m;
                let corr = if vx > TIE_EPS * xx[j] && vw > TIE_EPS * ww[l] && vx > 0.0 && vw > 0.0 {
                    cov / (vx * vw).sqrt()
                } else {
                    0.0
                };
                cost[(j, l)] = 1.0 - corr.abs();
            }
        }
        let assign = hungarian(&cost);
        for j in 0..k {
            contrib[(o, j)] = w[(o, assign[j])];
        }
    }
    Ok((0..k)
        .map(|j| pearson_or_zero(x.column(j).as_slice(), contrib.column(j).as_slice()))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SrfTestResult {
    pub statistics: Vec<f64>,
    pub p_values: Vec<f64>,
}

/// SRF test against a fitted embedding. The null permutes item labels of the
/// hypotheses and recomputes the leave-one-out alignment each time.
pub fn srf_test_embedding(
    w: &Embedding,
    x: &DMatrix<f64>,
    n_perm: usize,
    seed: u64,
) -> Result<SrfTestResult> {
    let statistics = loo_matched_statistics(w.matrix(), x)?;
    if n_perm == 0 {
        return Ok(SrfTestResult {
            p_values: vec![1.0; statistics.len()],
            statistics,
        });
    }
    let n = x.nrows();
    let mut rng = rng_from_seed(seed);
    let mut exceed = vec![0usize; statistics.len()];
    for _ in 0..n_perm {
        let pi = shuffled(n, &mut rng);
        let xp = DMatrix::from_fn(n, x.ncols(), |i, j| x[(pi[i], j)]);
        let t = loo_matched_statistics(w.matrix(), &xp)?;
        for (e, (tp, to)) in exceed.iter_mut().zip(t.iter().zip(&statistics)) {
            if *tp >= to - TIE_EPS {
                *e += 1;
            }
        }
    }
    Ok(SrfTestResult {
        p_values: exceed
            .iter()
            .map(|&e| (1 + e) as f64 / (1 + n_perm) as f64)
            .collect(),
        statistics,
    })
}

/// Fit `s` at `rank` and test every column of `x` against its matched
/// dimension.
pub fn srf_dimension_test(
    s: &DenseSimilarity,
    x: &DMatrix<f64>,
    rank: usize,
    n_perm: usize,
    solver: &SolverConfig,
    seed: u64,
) -> Result<SrfTestResult> {
    let cfg = solver.with_seed(derive_seed(seed, &[0]));
    let fitted = fit(s, rank, &cfg)?;
    srf_test_embedding(&fitted.embedding, x, n_perm, derive_seed(seed, &[1]))
}

/// Benjamini–Hochberg step-up procedure. Non-finite p-values are treated as
/// 1.
pub fn bh_correct(pvals: &[f64], alpha: f64) -> Vec<bool> {
    let m = pvals.len();
    let p: Vec<f64> = pvals
        .iter()
        .map(|&p| if p.is_finite() { p } else { 1.0 })
        .collect();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p[a].total_cmp(&p[b]));
    let cutoff = (1..=m)
        .rev()
        .find(|&i| p[order[i - 1]] <= i as f64 / m as f64 * alpha);
    let mut reject = vec![false; m];
    if let Some(c) = cutoff {
        for &idx in &order[..c] {
            reject[idx] = true;
        }
    }
    reject
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TestMethod {
    Rsa,
    Srf,
}

impl TestMethod {
    pub fn name(self) -> &'static str {
        match self {
            TestMethod::Rsa => "rsa",
            TestMethod::Srf => "srf",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DesignSpec {
    Factorial {
        levels: Vec<usize>,
        n: usize,
    },
    SparseCorrelated {
        n: usize,
        k: usize,
        #[serde(skip)]
        source: Option<DMatrix<f64>>,
    },
}

impl DesignSpec {
    pub fn build(&self, seed: u64) -> Result<DesignMatrix> {
        match self {
            DesignSpec::Factorial { levels, n } => factorial_design(levels, *n, seed),
            DesignSpec::SparseCorrelated { n, k, source } => {
                sparse_correlated_design(*n, *k, source.as_ref(), seed)
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PowerConfig {
    pub design: DesignSpec,
    pub snrs: Vec<f64>,
    pub repeats: usize,
    pub n_perm: usize,
    pub alpha: f64,
    pub solver: SolverConfig,
    pub seed: u64,
}

impl Default for PowerConfig {
    fn default() -> Self {
        PowerConfig {
            design: DesignSpec::Factorial {
                levels: vec![3; 4],
                n: 36,
            },
            snrs: vec![0.2, 0.4, 0.6, 0.8],
            repeats: 1000,
            n_perm: 1000,
            alpha: 0.05,
            solver: SolverConfig::default(),
            seed: 0,
        }
    }
}

impl PowerConfig {
    fn validate(&self) -> Result<()> {
        if self.snrs.is_empty() || self.snrs.iter().any(|&s| !(s > 0.0 && s <= 1.0)) {
            return Err(SrfError::invalid("SNR grid values must lie in (0, 1]"));
        }
        if self.repeats == 0 {
            return Err(SrfError::invalid("at least one repeat is required"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(SrfError::invalid(format!(
                "alpha {} must lie in (0, 1)",
                self.alpha
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerRow {
    pub snr: f64,
    pub method: TestMethod,
    pub hypothesis: usize,
    pub repeat: usize,
    pub rejected: bool,
    pub column_variance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuartilePower {
    pub snr: f64,
    pub method: TestMethod,
    /// 1 holds the lowest-variance hypotheses.
    pub quartile: usize,
    pub power: f64,
    pub count: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PowerResult {
    pub rows: Vec<PowerRow>,
    pub surrogate: bool,
}

impl PowerResult {
    /// Fraction of true hypotheses rejected at `snr` by `method`.
    pub fn power(&self, snr: f64, method: TestMethod) -> f64 {
        let hits: Vec<bool> = self
            .rows
            .iter()
            .filter(|r| r.snr == snr && r.method == method)
            .map(|r| r.rejected)
            .collect();
        if hits.is_empty() {
            return f64::NAN;
        }
        hits.iter().filter(|&&h| h).count() as f64 / hits.len() as f64
    }

    pub fn snrs(&self) -> Vec<f64> {
        let mut out: Vec<f64> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.snr) {
                out.push(r.snr);
            }
        }
        out
    }

    /// Power by quartile of hypothesis-column variance, with cutoffs taken
    /// over every tested hypothesis.
    pub fn quartile_power(&self) -> Vec<QuartilePower> {
        let vars: Vec<f64> = self.rows.iter().map(|r| r.column_variance).collect();
        if vars.is_empty() {
            return Vec::new();
        }
        let cuts: Vec<f64> = [25.0, 50.0, 75.0]
            .iter()
            .map(|&q| percentile_nearest_rank(&vars, q))
            .collect();
        let quartile = |v: f64| 1 + cuts.iter().filter(|&&c| v > c).count();
        let mut out = Vec::new();
        for snr in self.snrs() {
            for method in [TestMethod::Rsa, TestMethod::Srf] {
                for q in 1..=4 {
                    let hits: Vec<bool> = self
                        .rows
                        .iter()
                        .filter(|r| {
                            r.snr == snr && r.method == method && quartile(r.column_variance) == q
                        })
                        .map(|r| r.rejected)
                        .collect();
                    if hits.is_empty() {
                        continue;
                    }
                    out.push(QuartilePower {
                        snr,
                        method,
                        quartile: q,
                        power: hits.iter().filter(|&&h| h).count() as f64 / hits.len() as f64,
                        count: hits.len(),
                    });
                }
            }
        }
        out
    }
}

/// BH-corrected rejections of both tests on one similarity matrix.
fn run_both(
    s: &DMatrix<f64>,
    design: &DesignMatrix,
    cfg: &PowerConfig,
    seed: u64,
) -> Result<(Vec<bool>, Vec<bool>)> {
    let hs: Vec<DMatrix<f64>> = (0..design.k()).map(|j| design.hypothesis(j)).collect();
    let rsa_p = mantel_tests(&hs, s, cfg.n_perm, derive_seed(seed, &[2]))?;
    let dense = DenseSimilarity::full(s.clone())?;
    let srf = srf_dimension_test(
        &dense,
        &design.x,
        design.k(),
        cfg.n_perm,
        &cfg.solver,
        derive_seed(seed, &[3]),
    )?;
    Ok((
        bh_correct(&rsa_p, cfg.alpha),
        bh_correct(&srf.p_values, cfg.alpha),
    ))
}

/// Power of both tests over the SNR grid. Every repeat builds a design,
/// forms `X Xᵀ`, adds noise to the target SNR and tests every column.
pub fn power_experiment(cfg: &PowerConfig) -> Result<PowerResult> {
    cfg.validate()?;
    let jobs: Vec<(usize, usize)> = (0..cfg.snrs.len())
        .flat_map(|si| (0..cfg.repeats).map(move |rep| (si, rep)))
        .collect();
    let per_job: Vec<Vec<PowerRow>> = jobs
        .par_iter()
        .map(|&(si, rep)| -> Result<Vec<PowerRow>> {
            let snr = cfg.snrs[si];
            let seed = derive_seed(cfg.seed, &[si as u64, rep as u64]);
            let design = cfg.design.build(derive_seed(seed, &[0]))?;
            let noisy = add_noise_to_snr(&design.similarity(), snr, derive_seed(seed, &[1]))?;
            let (rsa, srf) = run_both(&noisy, &design, cfg, seed)?;
            let vars = design.column_variances();
            let mut rows = Vec::with_capacity(2 * design.k());
            for (method, rej) in [(TestMethod::Rsa, &rsa), (TestMethod::Srf, &srf)] {
                for j in 0..design.k() {
                    rows.push(PowerRow {
                        snr,
                        method,
                        hypothesis: j,
                        repeat: rep,
                        rejected: rej[j],
                        column_variance: vars[j],
                    });
                }
            }
            Ok(rows)
        })
        .collect::<Result<_>>()?;
    let surrogate = cfg
        .design
        .build(derive_seed(cfg.seed, &[0, 0, 0]))?
        .is_surrogate();
    Ok(PowerResult {
        rows: per_job.into_iter().flatten().collect(),
        surrogate,
    })
}

/// Family-wise detection rates when the similarities carry no signal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NullCalibration {
    pub repeats: usize,
    pub rsa_rate: f64,
    pub srf_rate: f64,
}

/// Each repeat draws a design and an unrelated similarity matrix with
/// independent Uniform(0, 1) entries, then records whether either test
/// rejects any hypothesis after BH correction.
pub fn null_false_positive_rate(cfg: &PowerConfig, repeats: usize) -> Result<NullCalibration> {
    cfg.validate()?;
    if repeats == 0 {
        return Err(SrfError::invalid("at least one null repeat is required"));
    }
    let hits: Vec<(bool, bool)> = (0..repeats)
        .into_par_iter()
        .map(|rep| -> Result<(bool, bool)> {
            let seed = derive_seed(cfg.seed, &[u64::MAX, rep as u64]);
            let design = cfg.design.build(derive_seed(seed, &[0]))?;
            let n = design.n();
            let mut rng = rng_from_seed(derive_seed(seed, &[1]));
            let mut s = DMatrix::zeros(n, n);
            for i in 0..n {
                for j in i..n {
                    let v: f64 = rng.random();
                    s[(i, j)] = v;
                    s[(j, i)] = v;
                }
            }
            let (rsa, srf) = run_both(&s, &design, cfg, seed)?;
            Ok((rsa.iter().any(|&b| b), srf.iter().any(|&b| b)))
        })
        .collect::<Result<_>>()?;
    let rate =
        |f: fn(&(bool, bool)) -> bool| hits.iter().filter(|h| f(h)).count() as f64 / repeats as f64;
    Ok(NullCalibration {
        repeats,
        rsa_rate: rate(|h| h.0),
        srf_rate: rate(|h| h.1),
    })
}
