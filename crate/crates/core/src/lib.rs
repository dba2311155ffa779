//! Structure learning for multivariate functional data.
//!
//! Each node of an undirected graph carries a random function observed at
//! discrete time points. Edges are scored in two steps: a kernel-based
//! nonlinear sufficient dimension reduction compresses the complement of
//! each node pair into a few predictor directions, and the Hilbert-Schmidt
//! norm of a regularized conditional covariance operator of the pair given
//! those predictors is thresholded to decide the edge.
//!
//! The crate also ships the synthetic structural-equation models used by the
//! benchmark harness, the harness itself, and the file formats the `fsgm`
//! CLI speaks.

pub mod bench;
pub mod ccco;
pub mod config;
pub mod error;
pub mod funcrep;
pub mod graph;
pub mod gsir;
pub mod io;
pub mod kernels;
pub mod simgen;

pub use ccco::{CccoScore, HybridGrams};
pub use config::{DimensionRule, GcvDenominator, PipelineConfig, Tuning};
pub use error::{Error, Result};
pub use funcrep::{BasisGrid, CoordinateSet, FunctionalDataset};
pub use graph::{GraphDiff, ScoredGraph, TuningRecord};
pub use gsir::{PairGrams, SufficientPredictors};
pub use kernels::{BandwidthRule, GramMatrix, KernelChoice, KernelFamily, KernelSpec};
pub use simgen::{GridMode, GroundTruth, ModelId, ModelSpec};
