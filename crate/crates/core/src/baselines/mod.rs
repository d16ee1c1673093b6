//! Two-stage baselines: Weisfeiler-Lehman histograms with a one-class cosine
//! score for graphs, an isolation forest for metadata, and rank aggregation.

mod aggregate;
mod iforest;
mod wl;

pub use aggregate::{aggregate_bfs, aggregate_inverse_rank, IdMismatch};
pub use iforest::{
    c_factor, metadata_matrix, metadata_scores, IsolationForest, DEFAULT_SUBSAMPLE, DEFAULT_TREES,
};
pub use wl::{initial_labels, one_class_scores, wl_features, wl_scores, Bucketizer, WlHistogram};

/// WL iteration counts swept by the graph baseline.
pub const WL_GRID: [usize; 5] = [1, 2, 4, 8, 16];
