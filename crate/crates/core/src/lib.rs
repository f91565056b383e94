//! Masked symmetric non-negative matrix factorization of similarity data,
//! with leakage-aware rank selection, multi-start consensus, simulation
//! tools and a permutation-testing power harness.

pub mod cli;
pub mod consensus;
pub mod embedding;
pub mod error;
pub mod evaluate;
pub mod hyptest;
pub mod io;
pub mod linalg;
pub mod rank;
pub mod rng;
pub mod simmat;
pub mod simulate;
pub mod solver;
pub mod stats;

pub use embedding::Embedding;
pub use error::{Result, SrfError};
pub use simmat::{DenseSimilarity, Mask};
pub use solver::{fit, FitResult, SolverConfig};
