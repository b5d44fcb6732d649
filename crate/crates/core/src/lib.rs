//! Differentially private synthetic embedding generation with Gaussian
//! mixture models.
//!
//! The pipeline privately clusters an embedding dataset with noisy Lloyd
//! iterations, estimates a Gaussian per cluster by clipping and noising,
//! samples synthetic embeddings from the resulting mixture, and optionally
//! filters them with noisy nearest-neighbour votes from the real data. Every
//! private release is charged to a [`BudgetLedger`].

// Validation uses `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod budget;
pub mod classifier;
pub mod dataset;
mod error;
pub mod estimate;
pub mod exec;
pub mod gmm;
pub mod kmeans;
pub mod linalg;
pub mod mechanisms;
pub mod pipeline;
pub mod report;
pub mod rng;
pub mod textdoc;

pub use budget::{ledger_audit, split_budget, BudgetLedger, Composition, LedgerEntry, PrivacyBudget};
pub use dataset::{load_dataset, save_dataset, split_by_label, EmbeddingDataset, Format};
pub use error::{Error, Result};
pub use estimate::{dp_covariance, dp_mean, dp_weights, EstimatorConfig, GaussianEstimate};
pub use gmm::{
    gmm_wasserstein_bound, sample_gmm, tv_bound_gaussians, w2_gaussian, w2_gaussian_sq, Covariance,
    CovarianceModel, GmmModel, SeparationSpec,
};
pub use kmeans::{assign_and_count, dp_kmeans, ClusteringResult, KMeansConfig, KMeansInit};
pub use mechanisms::{gaussian_mechanism, laplace_mechanism, GaussianNoise, LaplaceNoise};
pub use pipeline::{
    dp_filter_embeddings, fit_private_gmm, run_pipeline, FilterOutcome, FittedGmm, PipelineConfig, SyntheticReport,
};
pub use rng::Streams;
