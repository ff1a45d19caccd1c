//! Interactive constrained-projection clustering.
//!
//! A kNN fuzzy graph is laid out in 2D by a cross-entropy objective with
//! must-link / cannot-link penalties. The layout is clustered with DBSCAN
//! and each cluster is explained by a shallow decision tree over the
//! original features.

pub mod cluster;
pub mod constraints;
pub mod data;
pub mod error;
pub mod eval;
pub mod explain;
pub mod graph;
pub mod oracle;
pub mod projection;

pub use cluster::{dbscan, suggest_eps, ClusterResult, NOISE};
pub use constraints::{Constraint, ConstraintKind, ConstraintSet, Insertion, LossBreakdown};
pub use data::{generate_blobs, load_csv, BlobSpec, Dataset, PointId};
pub use error::{Error, Result};
pub use eval::MetricReport;
pub use explain::{explain_all, explain_cluster, ExplainParams, Explanation};
pub use graph::{build_graph, WeightedGraph};
pub use oracle::{run_session, sample_feedback, static_pipeline, PipelineParams, SessionReport, Strategy};
pub use projection::{
    init_layout, optimize, warm_restart, EmbeddingState, Frame, InitMethod, OptimizerParams, StopToken,
};
