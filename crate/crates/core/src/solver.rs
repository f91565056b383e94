//! Masked symmetric non-negative factorization `S ≈ W Wᵀ` by ADMM.
//!
//! The auxiliary variable `Z` carries the data term and is confined to the
//! box `[min S, max S]` taken over observed entries; `W` is coupled to `Z`
//! through the penalty `ρ/2 ‖Z − W Wᵀ‖²` and a dual matrix `Λ`. Each outer
//! iteration does
//!
//! 1. a `W`-update: `inner_sweeps` cyclic passes of exact scalar
//!    majorize-minimize steps on `h(W) = ρ/2 ‖Z + Λ/ρ − W Wᵀ‖²`,
//! 2. an entry-wise closed-form `Z`-update followed by projection,
//! 3. the dual ascent step `Λ ← Λ + ρ (Z − W Wᵀ)`.
//!
//! Every scalar step minimizes a convexified quartic that upper-bounds the
//! exact change in `h`, so `h` never increases within a `W`-update. With
//! `ρ ≥ √2` and the projection inactive, the augmented Lagrangian is then
//! non-increasing across outer iterations.

use std::f64::consts::SQRT_2;

use log::warn;
use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::Embedding;
use crate::error::{Result, SrfError};
use crate::rng::rng_from_seed;
use crate::simmat::DenseSimilarity;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    rho: f64,
    outer_iters: usize,
    inner_sweeps: usize,
    tol: f64,
    inner_tol: f64,
    seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            rho: 3.0,
            outer_iters: 200,
            inner_sweeps: 50,
            tol: 1e-5,
            inner_tol: 1e-3,
            seed: 0,
        }
    }
}

impl SolverConfig {
    pub fn new(
        rho: f64,
        outer_iters: usize,
        inner_sweeps: usize,
        tol: f64,
        seed: u64,
    ) -> Result<Self> {
        let cfg = SolverConfig {
            rho,
            outer_iters,
            inner_sweeps,
            tol,
            inner_tol: SolverConfig::default().inner_tol,
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        if !(self.rho >= SQRT_2) {
            return Err(SrfError::invalid(format!(
                "penalty rho = {} is below the descent threshold sqrt(2)",
                self.rho
            )));
        }
        if self.outer_iters == 0 || self.inner_sweeps == 0 {
            return Err(SrfError::invalid(
                "outer_iters and inner_sweeps must be at least 1",
            ));
        }
        if !(self.tol >= 0.0) {
            return Err(SrfError::invalid(format!(
                "tolerance must be non-negative, got {}",
                self.tol
            )));
        }
        if !(self.inner_tol >= 0.0) {
            return Err(SrfError::invalid(format!(
                "inner tolerance must be non-negative, got {}",
                self.inner_tol
            )));
        }
        Ok(())
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_rho(mut self, rho: f64) -> Result<Self> {
        self.rho = rho;
        self.validate()?;
        Ok(self)
    }

    pub fn with_iterations(mut self, outer_iters: usize, inner_sweeps: usize) -> Result<Self> {
        self.outer_iters = outer_iters;
        self.inner_sweeps = inner_sweeps;
        self.validate()?;
        Ok(self)
    }

    pub fn with_tol(mut self, tol: f64) -> Result<Self> {
        self.tol = tol;
        self.validate()?;
        Ok(self)
    }

    /// Stop the inner sweeps of a `W`-update early once a full sweep moves
    /// no entry by more than `inner_tol · max|W|`. Zero always runs every
    /// sweep.
    pub fn with_inner_tol(mut self, inner_tol: f64) -> Result<Self> {
        self.inner_tol = inner_tol;
        self.validate()?;
        Ok(self)
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }
    pub fn outer_iters(&self) -> usize {
        self.outer_iters
    }
    pub fn inner_sweeps(&self) -> usize {
        self.inner_sweeps
    }
    pub fn tol(&self) -> f64 {
        self.tol
    }
    pub fn inner_tol(&self) -> f64 {
        self.inner_tol
    }
    pub fn seed(&self) -> u64 {
        self.seed
    }
}

/// Coefficients of the scalar quartic
/// `g(δ) = a/4 δ⁴ + b/3 δ³ + c/2 δ² + d δ`, the exact change in
/// `2/ρ · h` when one entry of `W` moves by `δ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuarticCoefficients {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl QuarticCoefficients {
    /// The threshold `b²/(3a)` above which `g` is globally convex.
    pub fn convexity_threshold(&self) -> f64 {
        self.b * self.b / (3.0 * self.a)
    }

    pub fn is_convex(&self) -> bool {
        self.c > self.convexity_threshold()
    }

    /// Curvature actually used by the majorizer.
    fn majorizer_c(&self) -> f64 {
        self.c.max(self.convexity_threshold())
    }

    pub fn p(&self) -> f64 {
        let (a, b, c) = (self.a, self.b, self.majorizer_c());
        (3.0 * a * c - b * b) / (3.0 * a * a)
    }

    pub fn q(&self) -> f64 {
        let (a, b, c, d) = (self.a, self.b, self.majorizer_c(), self.d);
        (9.0 * a * b * c - 27.0 * a * a * d - 2.0 * b * b * b) / (27.0 * a * a * a)
    }

    pub fn delta(&self) -> f64 {
        let (p, q) = (self.p(), self.q());
        q * q / 4.0 + p * p * p / 27.0
    }

    /// Exact scalar change `g(δ)`.
    pub fn g(&self, delta: f64) -> f64 {
        let x = delta;
        x * (self.d + x * (self.c / 2.0 + x * (self.b / 3.0 + x * self.a / 4.0)))
    }

    /// Convexified majorizer `g̃(δ) = g(δ) + ½ max(b²/(3a) − c, 0) δ²`.
    pub fn corrected_g(&self, delta: f64) -> f64 {
        let extra = (self.convexity_threshold() - self.c).max(0.0);
        self.g(delta) + 0.5 * extra * delta * delta
    }
}

/// Coefficients for entry `(i, k)` computed directly from `W` and the proxy
/// target `Z̃`.
pub fn scalar_coefficients(
    w: &Embedding,
    target: &DMatrix<f64>,
    i: usize,
    k: usize,
) -> QuarticCoefficients {
    let wm = w.matrix();
    let n = wm.nrows();
    let wik = wm[(i, k)];
    let rii: f64 = wm.row(i).iter().map(|x| x * x).sum();
    let gkk: f64 = wm.column(k).iter().map(|x| x * x).sum();
    let mut lin = 0.0;
    for j in 0..n {
        let rij: f64 = wm.row(i).dot(&wm.row(j));
        lin += (rij - target[(i, j)]) * wm[(j, k)];
    }
    QuarticCoefficients {
        a: 4.0,
        b: 12.0 * wik,
        c: 4.0 * (rii - target[(i, i)] + gkk + wik * wik),
        d: 4.0 * lin,
    }
}

/// Minimizer over `w ≥ 0` of the convexified scalar majorizer.
///
/// `co` must have been computed at the entry value `current`; with `b = 12w`
/// the shift that depresses the stationarity cubic is exactly `current`, so
/// the cubic's real root is the new entry value itself. Falls back to
/// `current` if round-off would make the step increase the objective.
pub fn scalar_update(co: &QuarticCoefficients, current: f64) -> f64 {
    let QuarticCoefficients { a, b, d, .. } = *co;
    let w_star = if co.is_convex() {
        let p = co.p();
        let q = co.q();
        let sq = co.delta().max(0.0).sqrt();
        // Cardano with the cancellation-free pairing u·v = −p/3.
        let u = (0.5 * q + q.signum() * sq).cbrt();
        let mut t = if u == 0.0 { 0.0 } else { u - p / (3.0 * u) };
        let f = t * t * t + p * t - q;
        let fp = 3.0 * t * t + p;
        if fp > 0.0 {
            t -= f / fp;
        }
        t
    } else {
        (b * b * b / (27.0 * a * a * a) - d / a).cbrt()
    };
    let next = w_star.max(0.0);
    if !next.is_finite() || co.g(next - current) > 0.0 {
        current
    } else {
        next
    }
}

/// `h(W) = ρ/2 ‖Z̃ − W Wᵀ‖²_F`.
pub fn subproblem_objective(w: &Embedding, target: &DMatrix<f64>, rho: f64) -> f64 {
    0.5 * rho * (target - w.gram()).norm_squared()
}

/// Working state for cyclic scalar updates. `W` is column-major; row `i` of
/// the residual `D = W Wᵀ − Z̃` is rebuilt when the sweep reaches it, so only
/// the symmetric target and the column norms `diag(Wᵀ W)` are kept.
struct SweepState {
    n: usize,
    r: usize,
    w: Vec<f64>,
    target: Vec<f64>,
    col_sq: Vec<f64>,
    row: Vec<f64>,
}

impl SweepState {
    fn new(n: usize, r: usize, w: Vec<f64>, target: &DMatrix<f64>) -> Self {
        let mut st = SweepState {
            n,
            r,
            w,
            target: Vec::new(),
            col_sq: vec![0.0; r],
            row: vec![0.0; n],
        };
        st.reset_target(target);
        st
    }

    fn reset_target(&mut self, target: &DMatrix<f64>) {
        let n = self.n;
        self.target.clear();
        self.target.extend_from_slice(target.as_slice());
        for k in 0..self.r {
            self.col_sq[k] = self.w[k * n..(k + 1) * n].iter().map(|x| x * x).sum();
        }
    }

    /// Returns the largest absolute change of any entry.
    fn sweep(&mut self) -> f64 {
        let (n, r) = (self.n, self.r);
        let mut max_step: f64 = 0.0;
        for i in 0..n {
            // target is symmetric, so column i is row i
            for (d, t) in self.row.iter_mut().zip(&self.target[i * n..(i + 1) * n]) {
                *d = -t;
            }
            for k in 0..r {
                let wik = self.w[k * n + i];
                let col = &self.w[k * n..(k + 1) * n];
                for (d, c) in self.row.iter_mut().zip(col) {
                    *d += wik * c;
                }
            }
            for k in 0..r {
                let col = &self.w[k * n..(k + 1) * n];
                let old = col[i];
                let lin: f64 = self.row.iter().zip(col).map(|(d, w)| d * w).sum();
                let co = QuarticCoefficients {
                    a: 4.0,
                    b: 12.0 * old,
                    c: 4.0 * (self.row[i] + self.col_sq[k] + old * old),
                    d: 4.0 * lin,
                };
                let new = scalar_update(&co, old);
                let step = new - old;
                if step == 0.0 {
                    continue;
                }
                max_step = max_step.max(step.abs());
                for (d, c) in self.row.iter_mut().zip(col) {
                    *d += step * c;
                }
                self.row[i] += step * (old + step);
                self.col_sq[k] += step * (2.0 * old + step);
                self.w[k * n + i] = new;
            }
        }
        max_step
    }
}

/// One full cyclic pass over all `n·r` entries in row-major `(i, k)` order.
/// `target` must be symmetric.
pub fn w_subproblem_sweep(w: &Embedding, target: &DMatrix<f64>) -> Embedding {
    let (n, r) = (w.n(), w.rank());
    let mut st = SweepState::new(n, r, w.matrix().as_slice().to_vec(), target);
    st.sweep();
    Embedding(DMatrix::from_column_slice(n, r, &st.w))
}

/// Result of the projected `Z`-update.
#[derive(Debug, Clone)]
pub struct ZUpdate {
    pub z: DMatrix<f64>,
    /// Number of entries where the box projection changed the value.
    pub active: usize,
}

/// Entry-wise closed form `(M S + ρ R − Λ) / (ρ + M)`, projected onto
/// `bounds` and symmetrized.
pub fn z_update(
    s: &DenseSimilarity,
    r_mat: &DMatrix<f64>,
    dual: &DMatrix<f64>,
    rho: f64,
    bounds: (f64, f64),
) -> ZUpdate {
    let n = s.n();
    let mut active = 0;
    let mut z = DMatrix::zeros(n, n);
    for j in 0..n {
        for i in 0..n {
            let zhat = if s.mask().get(i, j) {
                (s.values()[(i, j)] + rho * r_mat[(i, j)] - dual[(i, j)]) / (rho + 1.0)
            } else {
                r_mat[(i, j)] - dual[(i, j)] / rho
            };
            let proj = zhat.clamp(bounds.0, bounds.1);
            if proj != zhat {
                active += 1;
            }
            z[(i, j)] = proj;
        }
    }
    let z = (&z + z.transpose()) * 0.5;
    ZUpdate { z, active }
}

/// `Λ + ρ (Z − R)`.
pub fn dual_update(
    dual: &DMatrix<f64>,
    z: &DMatrix<f64>,
    r_mat: &DMatrix<f64>,
    rho: f64,
) -> DMatrix<f64> {
    dual + (z - r_mat) * rho
}

/// `½ Σ_observed (S − W Wᵀ)²`.
pub fn masked_loss(s: &DenseSimilarity, w: &Embedding) -> f64 {
    masked_loss_from_gram(s, &w.gram())
}

fn masked_loss_from_gram(s: &DenseSimilarity, r_mat: &DMatrix<f64>) -> f64 {
    let n = s.n();
    let mut acc = 0.0;
    for j in 0..n {
        for i in 0..n {
            if s.mask().get(i, j) {
                let e = s.values()[(i, j)] - r_mat[(i, j)];
                acc += e * e;
            }
        }
    }
    0.5 * acc
}

/// `½‖M ⊙ (S − Z)‖² + ⟨Λ, Z − W Wᵀ⟩ + ρ/2 ‖Z − W Wᵀ‖²`; the indicator terms
/// vanish because every iterate is feasible.
pub fn augmented_lagrangian(
    s: &DenseSimilarity,
    w: &Embedding,
    z: &DMatrix<f64>,
    dual: &DMatrix<f64>,
    rho: f64,
) -> f64 {
    lagrangian_from_gram(s, &w.gram(), z, dual, rho)
}

fn lagrangian_from_gram(
    s: &DenseSimilarity,
    r_mat: &DMatrix<f64>,
    z: &DMatrix<f64>,
    dual: &DMatrix<f64>,
    rho: f64,
) -> f64 {
    let n = s.n();
    let mut data = 0.0;
    let mut coupling = 0.0;
    let mut penalty = 0.0;
    for j in 0..n {
        for i in 0..n {
            if s.mask().get(i, j) {
                let e = s.values()[(i, j)] - z[(i, j)];
                data += e * e;
            }
            let gap = z[(i, j)] - r_mat[(i, j)];
            coupling += dual[(i, j)] * gap;
            penalty += gap * gap;
        }
    }
    0.5 * data + coupling + 0.5 * rho * penalty
}

/// Full iterate of the ADMM scheme.
#[derive(Debug, Clone)]
pub struct SolverState {
    pub w: Embedding,
    pub z: DMatrix<f64>,
    pub dual: DMatrix<f64>,
    pub bounds: (f64, f64),
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub embedding: Embedding,
    pub converged: bool,
    pub iterations: usize,
    pub final_loss: f64,
    /// Masked loss after each outer iteration.
    pub loss_trace: Vec<f64>,
    /// Augmented Lagrangian after each outer iteration.
    pub lagrangian_trace: Vec<f64>,
    /// `‖Z − W Wᵀ‖_F` after each outer iteration.
    pub residual_trace: Vec<f64>,
    /// Entries clipped by the `Z` projection, per outer iteration.
    pub projection_active: Vec<usize>,
    pub state: SolverState,
}

fn validate_problem(s: &DenseSimilarity, rank: usize) -> Result<()> {
    let n = s.n();
    if rank == 0 || rank >= n {
        return Err(SrfError::InvalidRank { rank, n });
    }
    if s.mask().observed_offdiag_count() == 0 {
        return Err(SrfError::EmptyMask);
    }
    Ok(())
}

/// Box `[min S, max S]` over observed entries, widened if degenerate.
pub fn observed_bounds(s: &DenseSimilarity) -> (f64, f64) {
    let (lo, hi) = s.observed_range();
    if hi - lo <= 0.0 {
        warn!("all observed similarities equal {lo}; widening the reconstruction box by 1e-9");
        (lo - 1e-9, hi + 1e-9)
    } else {
        (lo, hi)
    }
}

/// Uniform(0, 1) initial factor, drawn row by row from the config seed.
pub fn random_init(n: usize, rank: usize, seed: u64) -> Embedding {
    let mut rng = rng_from_seed(seed);
    let mut w = DMatrix::zeros(n, rank);
    for i in 0..n {
        for k in 0..rank {
            w[(i, k)] = rng.random::<f64>();
        }
    }
    Embedding(w)
}

/// Fit `S ≈ W Wᵀ` at the given rank from a seeded uniform initialization.
pub fn fit(s: &DenseSimilarity, rank: usize, cfg: &SolverConfig) -> Result<FitResult> {
    validate_problem(s, rank)?;
    cfg.validate()?;
    fit_from(s, random_init(s.n(), rank, cfg.seed()), cfg)
}

/// Fit starting from a given factor, with `Z ← W Wᵀ` and `Λ ← 0`.
pub fn fit_from(s: &DenseSimilarity, init: Embedding, cfg: &SolverConfig) -> Result<FitResult> {
    let n = s.n();
    let r = init.rank();
    validate_problem(s, r)?;
    cfg.validate()?;
    if init.n() != n {
        return Err(SrfError::ShapeMismatch(format!(
            "initial factor has {} rows for {n} items",
            init.n()
        )));
    }
    if !init.is_nonnegative() {
        return Err(SrfError::invalid("initial factor has negative entries"));
    }
    let rho = cfg.rho();
    let bounds = observed_bounds(s);
    let s_norm = (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .filter_map(|(i, j)| s.get(i, j))
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();

    let mut z = init.gram();
    let mut dual = DMatrix::zeros(n, n);
    let mut sweeper = SweepState::new(n, r, init.matrix().as_slice().to_vec(), &z);

    let mut loss_trace = Vec::new();
    let mut lagrangian_trace = Vec::new();
    let mut residual_trace = Vec::new();
    let mut projection_active = Vec::new();
    let mut converged = false;

    for _ in 0..cfg.outer_iters() {
        let target = &z + &dual / rho;
        sweeper.reset_target(&target);
        for _ in 0..cfg.inner_sweeps() {
            let max_step = sweeper.sweep();
            let scale = sweeper.w.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            if max_step <= cfg.inner_tol() * scale {
                break;
            }
        }
        let w_now = DMatrix::from_column_slice(n, r, &sweeper.w);
        let r_mat = &w_now * w_now.transpose();

        let zu = z_update(s, &r_mat, &dual, rho, bounds);
        z = zu.z;
        dual = dual_update(&dual, &z, &r_mat, rho);

        let residual = (&z - &r_mat).norm();
        loss_trace.push(masked_loss_from_gram(s, &r_mat));
        lagrangian_trace.push(lagrangian_from_gram(s, &r_mat, &z, &dual, rho));
        residual_trace.push(residual);
        projection_active.push(zu.active);

        if residual < cfg.tol() * s_norm {
            converged = true;
            break;
        }
    }

    let embedding = Embedding(DMatrix::from_column_slice(n, r, &sweeper.w));
    Ok(FitResult {
        final_loss: *loss_trace.last().expect("at least one outer iteration"),
        iterations: loss_trace.len(),
        converged,
        loss_trace,
        lagrangian_trace,
        residual_trace,
        projection_active,
        state: SolverState {
            w: embedding.clone(),
            z,
            dual,
            bounds,
        },
        embedding,
    })
}
