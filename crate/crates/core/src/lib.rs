//! Feature selection by mutual information with the latent variable of a
//! low-rank CPD (latent class) model of the joint PMF of discrete features
//! and a label.
//!
//! The pipeline is:
//!
//! 1. [`data`]: ingest a CSV, discretize continuous columns into equal-width
//!    bins fitted on training rows, split train/test.
//! 2. [`tensor`]: count the empirical joint PMF as a sparse tensor.
//! 3. [`em`]: fit a rank-F simplex-constrained CPD by KL-divergence EM, with
//!    the rank picked by cross-validation.
//! 4. [`selection`]: greedily pick the K features maximizing `I(X_S; Z)`,
//!    using the exact or Monte-Carlo entropy kernels in [`info`].
//! 5. [`knn`] and [`experiment`]: score the selections with 1-NN.
//!
//! [`verify`] holds the enumeration-based structural checks. All entropies
//! are in nats. Feature positions are 0-based everywhere.

pub mod data;
pub mod em;
pub mod error;
pub mod experiment;
pub mod info;
pub mod io;
pub mod knn;
pub mod rng;
pub mod selection;
pub mod tensor;
pub mod verify;

pub use data::{discretize_equal_width, ingest_csv, split, DiscreteDataset, RawTable, Schema, SplitSpec};
pub use em::{cross_validate_rank, em_fit, em_fit_observed, kl_divergence, predict_label_posterior, FitConfig, FitReport};
pub use error::{Error, Result};
pub use experiment::{
    evaluate_feature_order, run_experiment, EvaluationConfig, EvaluationReport, ExperimentConfig, ExperimentReport,
};
pub use info::{
    bandgap_constant, conditional_entropy_given_latent, joint_entropy_exact, joint_entropy_mc, mi_subset_latent,
    mi_subset_target, EntropyEstimate, JointEntropy,
};
pub use io::ModelDocument;
pub use knn::{accuracy, knn_classify, Metric};
pub use selection::{
    exhaustive_select, greedy_select, lazy_greedy_select, remodeling_select, EntropyMode, SelectionResult, Strategy,
};
pub use tensor::{build_empirical_pmf, CpdModel, Factor, FeatureSubset, SparseCountTensor};
