//! Cluster-based encoder operating-point allocation for large video corpora.
//!
//! The pipeline measures rate/quality curves for a training sample of chunks,
//! clusters the normalized curves with k-means, trains an RBF-kernel SVM to
//! predict a chunk's cluster from cheap complexity features, estimates the
//! corpus cluster distribution, and picks one operating point per cluster so
//! that weighted average bitrate is minimized under average- and
//! worst-quality floors.
//!
//! Quality is PSNR in dB (higher is better); rates are kbps.

pub mod allocation;
pub mod classifier;
pub mod clustering;
pub mod error;
pub mod evaluation;
pub mod io;
pub mod rd_model;
pub mod synth;

pub use allocation::{
    estimate_weights, exhaustive_allocation, per_chunk_allocation, solve_allocation,
    AllocationSolution, CorpusDistribution, PerChunkAllocation, QualityConstraints,
};
pub use classifier::{ClassifierModel, FeatureScaler, FeatureVector, SvmHyperparams, TrainReport};
pub use clustering::{ClusterAssignment, KMeansConfig, KMeansFit};
pub use error::{BindingConstraint, Error, Result};
pub use evaluation::{bd_rate, Sweep, SweepKind, SweepPoint};
pub use rd_model::{CentroidCurve, ClusterModel, NormalizationStats, OperatingPointGrid, RdSample};
pub use synth::{ArchetypeParams, SynthConfig, SyntheticCorpus};

/// Floor applied to standard deviations of constant components.
pub const EPSILON_STD: f64 = 1e-8;
