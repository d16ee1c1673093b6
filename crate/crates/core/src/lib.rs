//! Unsupervised anomaly detection over databases of directed, attributed
//! multi-graphs paired with tabular metadata.
//!
//! The pipeline embeds each multi-graph with a direction-aware GIN whose
//! parallel edges are first pooled by a learned multiset function, fuses the
//! graph embedding with a metadata embedding, and scores samples by their
//! membership-weighted squared distance to `K` learned centroids.
//!
//! Module map:
//! - [`graphdb`]: samples, file format, validation, synthetic data.
//! - [`nnkernel`]: reverse-mode autodiff tape, parameters, optimizer, gradient checker.
//! - [`encoder`], [`fusion`], [`anomalyhead`]: the network and its objective.
//! - [`model`]: parameter layout and the batched forward pass.
//! - [`trainer`]: training loop, hyperparameter grid, unsupervised model selection.
//! - [`injector`]: anomaly injection and benchmark assembly.
//! - [`baselines`]: WL + one-class graph scoring, isolation forest, rank aggregation.
//! - [`metrics`]: AUROC, AUPRC, Wilcoxon signed-rank test.

pub mod anomalyhead;
pub mod baselines;
pub mod encoder;
pub mod fusion;
pub mod graphdb;
pub mod injector;
pub mod metrics;
pub mod model;
pub mod nnkernel;
pub mod trainer;

pub use graphdb::{load_database, write_database, Database, MultiGraph, Sample};
pub use model::{FlattenMode, ModelConfig};
pub use trainer::{HpConfig, TrainedModel};

