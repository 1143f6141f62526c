//! Sparse principal component analysis.
//!
//! Given a covariance `Sigma`, find unit vectors `z` with few nonzero
//! loadings that explain as much variance `z^T Sigma z` as possible.
//!
//! - [`dspca`]: the l1-penalized semidefinite relaxation and its smoothed
//!   first-order solver, with duality-gap stopping.
//! - [`greedy`]: variance sorting, eigenvector thresholding and the full and
//!   approximate greedy forward-selection paths.
//! - [`certificates`]: global optimality certificates for a sparsity
//!   pattern, pruning, and weak-duality upper bounds.
//! - [`experiments`]: synthetic generators, deflation, ROC evaluation and
//!   bound sweeps.
//! - [`io`]: CSV ingestion, sample covariance, log returns and JSON reports.

pub mod certificates;
pub mod component;
pub mod dspca;
pub mod error;
pub mod experiments;
pub mod greedy;
pub mod io;
pub mod linalg;

pub use component::{pattern_solution, SparseComponent, SparsityPattern};
pub use error::{Result, SpcaError};
pub use linalg::{FactorMatrix, SymmetricMatrix};
