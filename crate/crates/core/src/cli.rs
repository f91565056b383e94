//! Command-line front end. Every command writes its outputs plus a
//! `manifest.json` into `--out-dir`; `srf replay` re-runs a manifest.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::consensus::consensus_fit;
use crate::embedding::Embedding;
use crate::error::{Result, SrfError};
use crate::evaluate::{explained_variance, link_auc, ridge_predict, sample_pairs, triplet_accuracy, RidgeConfig};
use crate::hyptest::{null_false_positive_rate, power_experiment, DesignSpec, PowerConfig, TestMethod};
use crate::io;
use crate::rank::{select_rank_cv, CalibrationConfig, CvConfig};
use crate::rng::derive_seed;
use crate::simmat::{
    linear_kernel, ppmi_similarity, preprocess_associations, rbf_kernel, triplet_similarity,
    DenseSimilarity, FeatureMatrix, Mask, PpmiOptions, TripletCounts,
};
use crate::simulate::{
    ground_truth, missing_data_experiment, random_missing_mask, rank_detection_experiment,
    MissingDataConfig, NoiseMode, RankDetectionConfig, RankMethod,
};
use crate::solver::{fit, SolverConfig};

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Parser)]
#[command(name = "srf", version, about = "Masked symmetric non-negative factorization of similarity data")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// Base seed; falls back to SRF_SEED, then 0.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    pub out_dir: PathBuf,

    /// Style of the summary and error messages printed by the tool.
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    pub format: Format,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Json,
}

#[derive(Debug, Clone, Subcommand, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Build a similarity matrix and mask from raw data.
    BuildSim(BuildSimArgs),
    /// Fit an embedding at a fixed rank.
    Fit(FitArgs),
    /// Choose the rank by calibrated cross-validation.
    SelectRank(SelectRankArgs),
    /// Fit several initializations and keep the most central run.
    Consensus(ConsensusArgs),
    /// Synthetic data and simulation experiments.
    #[command(subcommand)]
    Simulate(SimulateCommand),
    /// RSA versus SRF power over an SNR grid.
    Power(PowerArgs),
    /// Score an embedding against held-out behaviour.
    Evaluate(EvaluateArgs),
    /// Re-run the command recorded in a manifest.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SimKind {
    /// Odd-one-out trials `a,b,odd_one_out`.
    Triplets,
    /// Cue-response counts `cue,response,count`.
    Associations,
    /// Non-negative feature rows, linear kernel.
    FeaturesLinear,
    /// Feature rows, Gaussian kernel with median-distance bandwidth.
    FeaturesRbf,
    /// Sparse edge list `i,j,value`.
    Edges,
    /// Dense matrix, symmetrized and clipped.
    Dense,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ZeroPpmi {
    Observed,
    Missing,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct BuildSimArgs {
    #[arg(long, value_enum)]
    pub kind: SimKind,
    #[arg(long)]
    pub input: PathBuf,
    /// Mask for `dense` input.
    #[arg(long)]
    pub mask: Option<PathBuf>,
    /// Item count for triplets and edges (default: largest index + 1).
    #[arg(long)]
    pub n: Option<usize>,
    /// Triplet smoothing pseudo-count.
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    /// RBF bandwidth as a multiple of the median pairwise distance.
    #[arg(long, default_value_t = 0.4)]
    pub multiplier: f64,
    /// How zero-PPMI pairs enter the mask.
    #[arg(long, value_enum, default_value_t = ZeroPpmi::Observed)]
    pub zero_ppmi: ZeroPpmi,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SimilarityInput {
    /// Headerless n x n similarity CSV.
    #[arg(long)]
    pub input: PathBuf,
    /// 0/1 mask CSV; all entries are observed when omitted.
    #[arg(long)]
    pub mask: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SolverArgs {
    #[arg(long, default_value_t = 3.0)]
    pub rho: f64,
    /// Stop once `‖Z − W Wᵀ‖_F` falls below this fraction of `‖S_observed‖_F`.
    #[arg(long, default_value_t = 1e-5)]
    pub tol: f64,
    #[arg(long, default_value_t = 200)]
    pub max_iter: usize,
    #[arg(long, default_value_t = 50)]
    pub inner_sweeps: usize,
    /// Stop the inner sweeps once no entry of W moves by more than this fraction of max|W|.
    #[arg(long, default_value_t = 1e-3)]
    pub inner_tol: f64,
}

impl Default for SolverArgs {
    fn default() -> Self {
        SolverArgs {
            rho: 3.0,
            tol: 1e-5,
            max_iter: 200,
            inner_sweeps: 50,
            inner_tol: 1e-3,
        }
    }
}

impl SolverArgs {
    fn config(&self, seed: u64) -> Result<SolverConfig> {
        SolverConfig::new(self.rho, self.max_iter, self.inner_sweeps, self.tol, seed)?
            .with_inner_tol(self.inner_tol)
    }
}

/// Comma-separated integers and inclusive ranges, e.g. `1-5,8`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RankGrid(pub Vec<usize>);

impl std::str::FromStr for RankGrid {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let bad = |p: &str| format!("bad rank grid entry '{p}'");
        let mut out = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part.split_once('-') {
                Some((a, b)) => {
                    let a: usize = a.trim().parse().map_err(|_| bad(part))?;
                    let b: usize = b.trim().parse().map_err(|_| bad(part))?;
                    if a > b {
                        return Err(bad(part));
                    }
                    out.extend(a..=b);
                }
                None => out.push(part.parse().map_err(|_| bad(part))?),
            }
        }
        out.sort_unstable();
        out.dedup();
        if out.is_empty() {
            return Err("rank grid is empty".into());
        }
        Ok(RankGrid(out))
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct FitArgs {
    #[command(flatten)]
    pub similarity: SimilarityInput,
    #[arg(long)]
    pub rank: usize,
    #[command(flatten)]
    pub solver: SolverArgs,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SelectRankArgs {
    #[command(flatten)]
    pub similarity: SimilarityInput,
    #[arg(long, default_value = "1-10")]
    pub rank_grid: RankGrid,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    #[arg(long, default_value_t = 5)]
    pub repeats: usize,
    /// Tolerance on captured spectral mass during calibration.
    #[arg(long, default_value_t = 0.1)]
    pub delta: f64,
    #[command(flatten)]
    pub solver: SolverArgs,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ConsensusArgs {
    #[command(flatten)]
    pub similarity: SimilarityInput,
    #[arg(long)]
    pub rank: usize,
    /// Random initializations.
    #[arg(long, default_value_t = 10)]
    pub runs: usize,
    /// Random item splits for split-half reliability.
    #[arg(long, default_value_t = 20)]
    pub splits: usize,
    #[command(flatten)]
    pub solver: SolverArgs,
}

#[derive(Debug, Clone, Subcommand, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SimulateCommand {
    /// Dirichlet ground truth with noisy, optionally masked similarities.
    GroundTruth(GroundTruthArgs),
    /// CV, parallel analysis and scree on a grid of synthetic data sets.
    RankDetection(RankDetectionArgs),
    /// SRF against impute-then-fit over a retention sweep.
    MissingData(MissingDataArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseArg {
    Similarity,
    Dimensions,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct GroundTruthArgs {
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    #[arg(long, default_value_t = 5)]
    pub rank: usize,
    /// Dirichlet concentration.
    #[arg(long, default_value_t = 0.2)]
    pub alpha: f64,
    #[arg(long, default_value_t = 1.0)]
    pub snr: f64,
    /// Fraction of off-diagonal pairs kept observed.
    #[arg(long, default_value_t = 1.0)]
    pub retention: f64,
    #[arg(long, value_enum, default_value_t = NoiseArg::Similarity)]
    pub noise: NoiseArg,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct RankDetectionArgs {
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    #[arg(long, default_value = "3-8")]
    pub true_ranks: RankGrid,
    #[arg(long, value_delimiter = ',', default_value = "0.2")]
    pub alphas: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "0.6,0.9")]
    pub snrs: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "0.7,1.0")]
    pub retentions: Vec<f64>,
    /// Replicate data sets per grid cell.
    #[arg(long, default_value_t = 3)]
    pub replicates: usize,
    #[arg(long, default_value = "1-10")]
    pub rank_grid: RankGrid,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    /// Cross-validation repeats.
    #[arg(long, default_value_t = 5)]
    pub repeats: usize,
    #[arg(long, default_value_t = 100)]
    pub pa_surrogates: usize,
    #[command(flatten)]
    pub solver: SolverArgs,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct MissingDataArgs {
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    #[arg(long, default_value_t = 5)]
    pub rank: usize,
    #[arg(long, default_value_t = 0.2)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0.9)]
    pub snr: f64,
    #[arg(long, value_delimiter = ',', default_value = "0.05,0.1,0.2,0.4,0.7,1.0")]
    pub retentions: Vec<f64>,
    #[arg(long, default_value_t = 5)]
    pub knn_k: usize,
    #[command(flatten)]
    pub solver: SolverArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DesignArg {
    Factorial,
    Sparse,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct PowerArgs {
    #[arg(long, value_enum, default_value_t = DesignArg::Factorial)]
    pub design: DesignArg,
    /// Levels per factor of the factorial design.
    #[arg(long, value_delimiter = ',', default_value = "3,3,3,3")]
    pub levels: Vec<usize>,
    #[arg(long, default_value_t = 36)]
    pub n: usize,
    /// Hypothesis columns of the sparse design.
    #[arg(long, default_value_t = 12)]
    pub k: usize,
    /// Embedding to sample the sparse design from (default: surrogate).
    #[arg(long)]
    pub source: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "0.2,0.4,0.6,0.8")]
    pub snrs: Vec<f64>,
    #[arg(long, default_value_t = 1000)]
    pub repeats: usize,
    #[arg(long, default_value_t = 1000)]
    pub n_perm: usize,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Repeats of the no-signal calibration run (0 skips it).
    #[arg(long, default_value_t = 0)]
    pub null_repeats: usize,
    #[command(flatten)]
    pub solver: SolverArgs,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct EvaluateArgs {
    /// Headerless n x r embedding CSV.
    #[arg(long)]
    pub embedding: PathBuf,
    /// Similarity CSV for reconstruction R² and negative-pair sampling.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub mask: Option<PathBuf>,
    /// Odd-one-out trials `a,b,odd_one_out`.
    #[arg(long)]
    pub triplets: Option<PathBuf>,
    /// Positive pairs `i,j` for link prediction.
    #[arg(long)]
    pub positives: Option<PathBuf>,
    /// Negative pairs; sampled from observed zero pairs of `--input` when omitted.
    #[arg(long)]
    pub negatives: Option<PathBuf>,
    /// Ratings `item_id,value` predicted by ridge regression.
    #[arg(long)]
    pub targets: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    #[arg(long, value_delimiter = ',', default_value = "0.01,0.1,1,10,100")]
    pub alpha_grid: Vec<f64>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ReplayArgs {
    pub manifest: PathBuf,
}

/// Record written beside every command's outputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub seed: u64,
    pub command: Command,
    pub config: Value,
    pub inputs: Vec<PathBuf>,
    /// File names relative to the output directory.
    pub outputs: Vec<String>,
    pub notes: Vec<String>,
}

/// Collects the names of files written to one directory.
struct Outputs {
    dir: PathBuf,
    names: Vec<String>,
}

impl Outputs {
    fn new(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| SrfError::io(dir, e))?;
        Ok(Outputs {
            dir: dir.to_path_buf(),
            names: Vec::new(),
        })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.names.push(name.to_string());
        self.dir.join(name)
    }

    fn matrix(&mut self, name: &str, m: &DMatrix<f64>) -> Result<()> {
        let p = self.path(name);
        io::write_matrix(p, m)
    }

    fn mask(&mut self, name: &str, m: &Mask) -> Result<()> {
        let p = self.path(name);
        io::write_mask(p, m)
    }

    fn records<T: Serialize>(&mut self, name: &str, rows: &[T]) -> Result<()> {
        let p = self.path(name);
        io::write_records(p, rows)
    }

    fn json<T: Serialize>(&mut self, name: &str, v: &T) -> Result<()> {
        let p = self.path(name);
        io::write_json(p, v)
    }

    fn lines(&mut self, name: &str, lines: &[String]) -> Result<()> {
        let p = self.path(name);
        let mut text = lines.join("\n");
        text.push('\n');
        std::fs::write(&p, text).map_err(|e| SrfError::io(&p, e))
    }
}

/// What a command reports back besides the files it wrote.
struct Report {
    config: Value,
    summary: Value,
    notes: Vec<String>,
}

fn absolute(p: &Path) -> Result<PathBuf> {
    std::fs::canonicalize(p).map_err(|e| SrfError::io(p, e))
}

fn absolute_opt(p: &mut Option<PathBuf>) -> Result<()> {
    if let Some(path) = p.as_mut() {
        *path = absolute(path)?;
    }
    Ok(())
}

impl Command {
    /// Rewrite input paths as absolute paths so a manifest can be replayed
    /// from any working directory.
    fn resolve_inputs(&mut self) -> Result<Vec<PathBuf>> {
        fn sim(s: &mut SimilarityInput) -> Result<()> {
            s.input = absolute(&s.input)?;
            absolute_opt(&mut s.mask)
        }
        match self {
            Command::BuildSim(a) => {
                a.input = absolute(&a.input)?;
                absolute_opt(&mut a.mask)?;
            }
            Command::Fit(a) => sim(&mut a.similarity)?,
            Command::SelectRank(a) => sim(&mut a.similarity)?,
            Command::Consensus(a) => sim(&mut a.similarity)?,
            Command::Simulate(_) => {}
            Command::Power(a) => absolute_opt(&mut a.source)?,
            Command::Evaluate(a) => {
                a.embedding = absolute(&a.embedding)?;
                for p in [
                    &mut a.input,
                    &mut a.mask,
                    &mut a.triplets,
                    &mut a.positives,
                    &mut a.negatives,
                    &mut a.targets,
                ] {
                    absolute_opt(p)?;
                }
            }
            Command::Replay(_) => {}
        }
        Ok(self.inputs())
    }

    fn inputs(&self) -> Vec<PathBuf> {
        let sim = |s: &SimilarityInput| {
            std::iter::once(s.input.clone())
                .chain(s.mask.clone())
                .collect::<Vec<_>>()
        };
        match self {
            Command::BuildSim(a) => std::iter::once(a.input.clone()).chain(a.mask.clone()).collect(),
            Command::Fit(a) => sim(&a.similarity),
            Command::SelectRank(a) => sim(&a.similarity),
            Command::Consensus(a) => sim(&a.similarity),
            Command::Simulate(_) | Command::Replay(_) => Vec::new(),
            Command::Power(a) => a.source.iter().cloned().collect(),
            Command::Evaluate(a) => std::iter::once(a.embedding.clone())
                .chain(
                    [&a.input, &a.mask, &a.triplets, &a.positives, &a.negatives, &a.targets]
                        .into_iter()
                        .flatten()
                        .cloned(),
                )
                .collect(),
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Command::BuildSim(_) => "build-sim",
            Command::Fit(_) => "fit",
            Command::SelectRank(_) => "select-rank",
            Command::Consensus(_) => "consensus",
            Command::Simulate(SimulateCommand::GroundTruth(_)) => "simulate ground-truth",
            Command::Simulate(SimulateCommand::RankDetection(_)) => "simulate rank-detection",
            Command::Simulate(SimulateCommand::MissingData(_)) => "simulate missing-data",
            Command::Power(_) => "power",
            Command::Evaluate(_) => "evaluate",
            Command::Replay(_) => "replay",
        }
    }
}

/// Resolve the base seed: the flag, then `SRF_SEED`, then 0.
pub fn resolve_seed(flag: Option<u64>) -> Result<u64> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match std::env::var("SRF_SEED") {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| SrfError::invalid(format!("SRF_SEED '{v}' is not a non-negative integer"))),
        Err(_) => Ok(0),
    }
}

/// Run a parsed command line; returns the summary printed on success.
pub fn run(cli: Cli) -> Result<Value> {
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(SrfError::invalid("--threads must be at least 1"));
        }
        // Fails only if a pool already exists, which is harmless.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    let (command, seed) = match cli.command {
        Command::Replay(r) => {
            let text = std::fs::read_to_string(&r.manifest).map_err(|e| SrfError::io(&r.manifest, e))?;
            let m: RunManifest = serde_json::from_str(&text)?;
            if matches!(m.command, Command::Replay(_)) {
                return Err(SrfError::invalid("a manifest cannot record a replay"));
            }
            (m.command, m.seed)
        }
        other => (other, resolve_seed(cli.seed)?),
    };
    execute(command, seed, &cli.out_dir)
}

/// Run one command with a resolved seed and write its manifest.
pub fn execute(mut command: Command, seed: u64, out_dir: &Path) -> Result<Value> {
    let inputs = command.resolve_inputs()?;
    let mut out = Outputs::new(out_dir)?;
    let report = match &command {
        Command::BuildSim(a) => build_sim(a, &mut out)?,
        Command::Fit(a) => cmd_fit(a, seed, &mut out)?,
        Command::SelectRank(a) => select_rank(a, seed, &mut out)?,
        Command::Consensus(a) => consensus(a, seed, &mut out)?,
        Command::Simulate(s) => simulate(s, seed, &mut out)?,
        Command::Power(a) => power(a, seed, &mut out)?,
        Command::Evaluate(a) => evaluate(a, seed, &mut out)?,
        Command::Replay(_) => unreachable!("replay is resolved before execution"),
    };
    let mut outputs = out.names.clone();
    outputs.push(MANIFEST.to_string());
    let manifest = RunManifest {
        tool: "srf".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        seed,
        command: command.clone(),
        config: report.config,
        inputs,
        outputs: outputs.clone(),
        notes: report.notes,
    };
    io::write_json(out_dir.join(MANIFEST), &manifest)?;
    Ok(json!({
        "command": command.name(),
        "outputs": outputs,
        "summary": report.summary,
    }))
}

fn load_similarity(s: &SimilarityInput, notes: &mut Vec<String>) -> Result<DenseSimilarity> {
    if s.mask.is_none() {
        notes.push("no mask given: every entry treated as observed".into());
    }
    io::read_similarity(&s.input, s.mask.as_deref())
}

fn build_sim(a: &BuildSimArgs, out: &mut Outputs) -> Result<Report> {
    let mut notes = Vec::new();
    let sim = match a.kind {
        SimKind::Triplets => {
            let (trials, implied) = io::read_triplets(&a.input)?;
            let n = a.n.unwrap_or(implied);
            let counts = TripletCounts::from_triplets(n, &trials)?;
            triplet_similarity(&counts, a.alpha)?
        }
        SimKind::Associations => {
            let raw = io::read_associations(&a.input)?;
            let counts = preprocess_associations(&raw)?;
            let opts = PpmiOptions {
                zeros_missing: a.zero_ppmi == ZeroPpmi::Missing,
            };
            let s = ppmi_similarity(&counts, opts)?;
            s.with_labels(counts.vocabulary)?
        }
        SimKind::FeaturesLinear => linear_kernel(&FeatureMatrix::new(io::read_matrix(&a.input)?)?)?,
        SimKind::FeaturesRbf => rbf_kernel(&FeatureMatrix::new(io::read_matrix(&a.input)?)?, a.multiplier)?,
        SimKind::Edges => io::read_edge_list(&a.input, a.n)?,
        SimKind::Dense => {
            let values = io::read_matrix(&a.input)?;
            let mask = match &a.mask {
                Some(p) => Some(io::read_mask(p)?.to_matrix().map(|v| v != 0.0)),
                None => {
                    notes.push("no mask given: every entry treated as observed".into());
                    None
                }
            };
            crate::simmat::symmetrize_clip(&values, mask.as_ref())?
        }
    };
    out.matrix("similarity.csv", sim.values())?;
    out.mask("mask.csv", sim.mask())?;
    if let Some(labels) = sim.labels() {
        out.lines("labels.csv", labels)?;
    }
    let n = sim.n();
    let observed = sim.mask().observed_offdiag_count();
    Ok(Report {
        config: serde_json::to_value(a)?,
        summary: json!({
            "n": n,
            "observed_pairs": observed,
            "coverage": observed as f64 / (n * (n - 1) / 2).max(1) as f64,
        }),
        notes,
    })
}

#[derive(Serialize)]
struct TraceRow {
    iter: usize,
    loss: f64,
    lagrangian: f64,
}

fn cmd_fit(a: &FitArgs, seed: u64, out: &mut Outputs) -> Result<Report> {
    let mut notes = Vec::new();
    let s = load_similarity(&a.similarity, &mut notes)?;
    let cfg = a.solver.config(seed)?;
    let res = fit(&s, a.rank, &cfg)?;
    let trace: Vec<TraceRow> = res
        .loss_trace
        .iter()
        .zip(&res.lagrangian_trace)
        .enumerate()
        .map(|(i, (&loss, &lagrangian))| TraceRow {
            iter: i + 1,
            loss,
            lagrangian,
        })
        .collect();
    let r2 = explained_variance(&s, &res.embedding).ok();
    out.matrix("embedding.csv", res.embedding.matrix())?;
    out.records("trace.csv", &trace)?;
    let summary = json!({
        "rank": a.rank,
        "converged": res.converged,
        "iterations": res.iterations,
        "final_loss": res.final_loss,
        "explained_variance": r2,
    });
    out.json("summary.json", &summary)?;
    Ok(Report {
        config: json!({ "solver": cfg, "rank": a.rank }),
        summary,
        notes,
    })
}

fn select_rank(a: &SelectRankArgs, seed: u64, out: &mut Outputs) -> Result<Report> {
    let mut notes = Vec::new();
    let s = load_similarity(&a.similarity, &mut notes)?;
    let cal_cfg = CalibrationConfig {
        delta: a.delta,
        ..CalibrationConfig::default()
    }
    .with_seed(derive_seed(seed, &[0]));
    let cv = CvConfig {
        folds: a.folds,
        repeats: a.repeats,
        rank_grid: a.rank_grid.0.clone(),
        solver: a.solver.config(derive_seed(seed, &[2]))?,
        seed: derive_seed(seed, &[1]),
    };
    let (cal, curve) = select_rank_cv(&s, &cal_cfg, &cv)?;
    out.records("cv.csv", &curve.cells)?;
    out.records("cv_summary.csv", &curve.scores)?;
    let summary = json!({
        "selected_rank": curve.selected_rank,
        "p_star": cal.p_star,
        "p_cv": curve.p_cv,
        "k_cut": cal.k_cut,
        "scores": curve.scores,
        "config": { "calibration": cal_cfg, "cv": cv },
    });
    out.json("summary.json", &summary)?;
    Ok(Report {
        config: json!({ "calibration": cal_cfg, "cv": cv }),
        summary: json!({ "selected_rank": curve.selected_rank, "p_star": cal.p_star }),
        notes,
    })
}

fn consensus(a: &ConsensusArgs, seed: u64, out: &mut Outputs) -> Result<Report> {
    let mut notes = Vec::new();
    let s = load_similarity(&a.similarity, &mut notes)?;
    let cfg = a.solver.config(seed)?;
    let res = consensus_fit(&s, a.rank, a.runs, &cfg, a.splits)?;
    out.matrix("embedding.csv", res.embedding.matrix())?;
    out.matrix("pairwise.csv", &res.pairwise)?;
    let summary = json!({
        "rank": a.rank,
        "runs": a.runs,
        "central_index": res.central_index,
        "central_seed": res.central_seed,
        "reliability": res.reliability,
        "final_losses": res.final_losses,
    });
    out.json("consensus.json", &summary)?;
    Ok(Report {
        config: json!({ "solver": cfg, "rank": a.rank, "runs": a.runs, "splits": a.splits }),
        summary: json!({ "central_index": res.central_index, "reliability": res.reliability }),
        notes,
    })
}

fn simulate(cmd: &SimulateCommand, seed: u64, out: &mut Outputs) -> Result<Report> {
    match cmd {
        SimulateCommand::GroundTruth(a) => {
            let mode = match a.noise {
                NoiseArg::Similarity => NoiseMode::Similarity,
                NoiseArg::Dimensions => NoiseMode::Dimensions,
            };
            let gt = ground_truth(a.n, a.rank, a.alpha, a.snr, mode, derive_seed(seed, &[0]))?;
            let mask = random_missing_mask(a.n, a.retention, derive_seed(seed, &[1]))?;
            let s = DenseSimilarity::new(gt.s_noisy.clone(), mask)?;
            out.matrix("w_true.csv", gt.w_true.matrix())?;
            out.matrix("s_clean.csv", &gt.s_clean)?;
            out.matrix("similarity.csv", s.values())?;
            out.mask("mask.csv", s.mask())?;
            Ok(Report {
                config: serde_json::to_value(a)?,
                summary: json!({ "n": a.n, "rank": a.rank, "observed_pairs": s.mask().observed_offdiag_count() }),
                notes: Vec::new(),
            })
        }
        SimulateCommand::RankDetection(a) => {
            let mut cv = CvConfig::new(a.rank_grid.0.clone());
            cv.folds = a.folds;
            cv.repeats = a.repeats;
            cv.solver = a.solver.config(0)?;
            let cfg = RankDetectionConfig {
                n: a.n,
                true_ranks: a.true_ranks.0.clone(),
                alphas: a.alphas.clone(),
                snrs: a.snrs.clone(),
                retentions: a.retentions.clone(),
                replicates: a.replicates,
                cv,
                pa_surrogates: a.pa_surrogates,
                seed,
                ..RankDetectionConfig::default()
            };
            let report = rank_detection_experiment(&cfg)?;
            out.records("rank_detection.csv", &report.rows)?;
            let mae: serde_json::Map<String, Value> = [RankMethod::Cv, RankMethod::ParallelAnalysis, RankMethod::Scree]
                .iter()
                .map(|m| (m.name().to_string(), json!(report.mae(*m))))
                .collect();
            let summary = json!({ "mae": mae });
            out.json("summary.json", &summary)?;
            Ok(Report {
                config: serde_json::to_value(&cfg)?,
                summary,
                notes: Vec::new(),
            })
        }
        SimulateCommand::MissingData(a) => {
            let cfg = MissingDataConfig {
                n: a.n,
                rank: a.rank,
                alpha: a.alpha,
                snr: a.snr,
                retentions: a.retentions.clone(),
                knn_k: a.knn_k,
                solver: a.solver.config(0)?,
                seed,
            };
            let rows = missing_data_experiment(&cfg)?;
            out.records("missing_data.csv", &rows)?;
            Ok(Report {
                config: serde_json::to_value(&cfg)?,
                summary: json!({ "rows": rows.len() }),
                notes: Vec::new(),
            })
        }
    }
}

#[derive(Serialize)]
struct PowerLongRow {
    snr: f64,
    method: &'static str,
    hypothesis_id: usize,
    repeat: usize,
    rejected: u8,
}

#[derive(Serialize)]
struct PowerAggRow {
    snr: f64,
    method: &'static str,
    power: f64,
}

#[derive(Serialize)]
struct QuartileRow {
    snr: f64,
    method: &'static str,
    quartile: usize,
    power: f64,
    count: usize,
}

fn power(a: &PowerArgs, seed: u64, out: &mut Outputs) -> Result<Report> {
    let mut notes = Vec::new();
    let design = match a.design {
        DesignArg::Factorial => DesignSpec::Factorial {
            levels: a.levels.clone(),
            n: a.n,
        },
        DesignArg::Sparse => DesignSpec::SparseCorrelated {
            n: a.n,
            k: a.k,
            source: a.source.as_ref().map(io::read_matrix).transpose()?,
        },
    };
    if a.design == DesignArg::Sparse && a.source.is_none() {
        notes.push("sparse design drawn from a synthetic surrogate embedding".into());
    }
    let cfg = PowerConfig {
        design,
        snrs: a.snrs.clone(),
        repeats: a.repeats,
        n_perm: a.n_perm,
        alpha: a.alpha,
        solver: a.solver.config(0)?,
        seed,
    };
    notes.push("SRF statistic: correlation of each hypothesis with its leave-one-out matched dimension; null from item-label permutation".into());
    let res = power_experiment(&cfg)?;
    let long: Vec<PowerLongRow> = res
        .rows
        .iter()
        .map(|r| PowerLongRow {
            snr: r.snr,
            method: r.method.name(),
            hypothesis_id: r.hypothesis,
            repeat: r.repeat,
            rejected: r.rejected as u8,
        })
        .collect();
    let mut agg = Vec::new();
    for snr in res.snrs() {
        for m in [TestMethod::Rsa, TestMethod::Srf] {
            agg.push(PowerAggRow {
                snr,
                method: m.name(),
                power: res.power(snr, m),
            });
        }
    }
    let quartiles: Vec<QuartileRow> = res
        .quartile_power()
        .into_iter()
        .map(|q| QuartileRow {
            snr: q.snr,
            method: q.method.name(),
            quartile: q.quartile,
            power: q.power,
            count: q.count,
        })
        .collect();
    out.records("power_long.csv", &long)?;
    out.records("power.csv", &agg)?;
    out.records("power_quartiles.csv", &quartiles)?;
    let null_cal = if a.null_repeats > 0 {
        let n = null_false_positive_rate(&cfg, a.null_repeats)?;
        out.json("null.json", &n)?;
        Some(n)
    } else {
        None
    };
    let summary = json!({
        "surrogate": res.surrogate,
        "power": agg.iter().map(|r| json!({"snr": r.snr, "method": r.method, "power": r.power})).collect::<Vec<_>>(),
        "null": null_cal,
    });
    Ok(Report {
        config: serde_json::to_value(&cfg)?,
        summary,
        notes,
    })
}

#[derive(Serialize)]
struct PredictionRow {
    item_id: usize,
    actual: f64,
    predicted: f64,
    fold: usize,
}

fn evaluate(a: &EvaluateArgs, seed: u64, out: &mut Outputs) -> Result<Report> {
    let w = Embedding::new(io::read_matrix(&a.embedding)?);
    let n = w.n();
    let sim = match &a.input {
        Some(p) => Some(io::read_similarity(p, a.mask.as_deref())?),
        None => None,
    };
    let mut result = serde_json::Map::new();
    if let Some(s) = &sim {
        if s.n() != n {
            return Err(SrfError::ShapeMismatch(format!(
                "similarity has {} items, embedding {n}",
                s.n()
            )));
        }
        result.insert("explained_variance".into(), json!(explained_variance(s, &w)?));
    }
    if let Some(p) = &a.triplets {
        let (trials, _) = io::read_triplets(p)?;
        result.insert("triplets".into(), serde_json::to_value(triplet_accuracy(&w, &trials)?)?);
    }
    if let Some(p) = &a.positives {
        let pos = io::read_pairs(p)?;
        let neg = match (&a.negatives, &sim) {
            (Some(q), _) => io::read_pairs(q)?,
            (None, Some(s)) => {
                let pool: Vec<(usize, usize)> = s
                    .mask()
                    .observed_pairs()
                    .into_iter()
                    .filter(|&(i, j)| i < j && s.values()[(i, j)] == 0.0)
                    .collect();
                sample_pairs(&pool, pos.len(), derive_seed(seed, &[0]))?
            }
            (None, None) => {
                return Err(SrfError::invalid(
                    "link prediction needs --negatives or an --input to sample zero pairs from",
                ))
            }
        };
        result.insert("link_auc".into(), json!(link_auc(&w, &pos, &neg)?));
        result.insert("link_pairs".into(), json!({ "positives": pos.len(), "negatives": neg.len() }));
    }
    let ridge_cfg = RidgeConfig {
        folds: a.folds,
        alpha_grid: a.alpha_grid.clone(),
        seed: derive_seed(seed, &[1]),
    };
    if let Some(p) = &a.targets {
        let targets = io::read_targets(p)?;
        if let Some(&(bad, _)) = targets.iter().find(|t| t.0 >= n) {
            return Err(SrfError::invalid(format!("target item {bad} outside 0..{n}")));
        }
        let rows: Vec<usize> = targets.iter().map(|t| t.0).collect();
        let features = w.rows(&rows).into_matrix();
        let y: Vec<f64> = targets.iter().map(|t| t.1).collect();
        let pred = ridge_predict(&features, &y, &ridge_cfg)?;
        let table: Vec<PredictionRow> = (0..y.len())
            .map(|i| PredictionRow {
                item_id: rows[i],
                actual: y[i],
                predicted: pred.predictions[i],
                fold: pred.fold[i],
            })
            .collect();
        out.records("predictions.csv", &table)?;
        result.insert("ridge".into(), json!({ "spearman": pred.spearman, "alphas": pred.alphas }));
    }
    if result.is_empty() {
        return Err(SrfError::invalid(
            "nothing to evaluate: give --input, --triplets, --positives or --targets",
        ));
    }
    let summary = Value::Object(result);
    out.json("evaluation.json", &summary)?;
    Ok(Report {
        config: json!({ "ridge": ridge_cfg }),
        summary,
        notes: Vec::new(),
    })
}

/// One-line error message for `--format json`.
pub fn error_json(e: &SrfError) -> Value {
    let kind = match e {
        SrfError::Parse { .. } => "parse",
        SrfError::Io { .. } => "io",
        SrfError::Json(_) => "json",
        _ => "invalid-input",
    };
    let mut v = json!({ "error": kind, "message": e.to_string() });
    if let SrfError::Parse { path, line, .. } = e {
        v["path"] = json!(path);
        v["line"] = json!(line);
    }
    v
}
