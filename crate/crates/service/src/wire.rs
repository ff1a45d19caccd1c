//! JSON request and response bodies.

use ipbc_core::constraints::LossBreakdown;
use ipbc_core::data::BlobSpec;
use ipbc_core::{ClusterResult, ConstraintKind, Explanation, PipelineParams, PointId};
use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

/// One layout snapshot as streamed to clients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub session_id: String,
    pub epoch: usize,
    pub coords: Vec<[f32; 2]>,
    pub loss_total: f64,
    pub loss_umap: f64,
    pub loss_ml: f64,
    pub loss_cl: f64,
}

impl FrameRecord {
    pub fn new(session_id: &str, epoch: usize, coords: ArrayView2<f64>, loss: LossBreakdown) -> Self {
        Self {
            session_id: session_id.to_string(),
            epoch,
            coords: coords.rows().into_iter().map(|r| [r[0] as f32, r[1] as f32]).collect(),
            loss_total: loss.total,
            loss_umap: loss.umap,
            loss_ml: loss.ml,
            loss_cl: loss.cl,
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetSource {
    /// CSV text with a header row.
    Csv { text: String, label_column: Option<String> },
    Blobs(BlobSpec),
    Inline {
        features: Vec<Vec<f64>>,
        #[serde(default)]
        labels: Option<Vec<usize>>,
        #[serde(default)]
        feature_names: Option<Vec<String>>,
        #[serde(default)]
        point_ids: Option<Vec<PointId>>,
    },
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct CreateRequest {
    pub dataset: DatasetSource,
    #[serde(default)]
    pub params: PipelineParams,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CreateResponse {
    pub session_id: String,
    pub n_points: usize,
    pub status: Status,
    pub initial_frame: FrameRecord,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Idle,
    Optimizing,
    Error,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StatusResponse {
    pub session_id: String,
    pub status: Status,
    pub epoch: Option<usize>,
    pub n_points: usize,
    pub must_links: usize,
    pub cannot_links: usize,
    pub error: Option<String>,
}

/// Constraint as sent by clients; `i` and `j` are point ids.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WireConstraint {
    pub kind: ConstraintKind,
    pub i: PointId,
    pub j: PointId,
    #[serde(default = "unit_weight")]
    pub weight: f64,
}

fn unit_weight() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    UnknownPoint,
    Conflict,
    SelfPair,
    BadWeight,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictStatus {
    Accepted,
    Duplicate,
    Rejected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub index: usize,
    pub status: VerdictStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason: Option<RejectReason>,
    /// The stored record a conflicting submission collided with.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub conflicting: Option<WireConstraint>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubmitResponse {
    pub accepted: usize,
    pub duplicates: usize,
    pub rejected: usize,
    pub restarted: bool,
    pub verdicts: Vec<Verdict>,
}

#[derive(Debug, Clone, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterRequest {
    pub eps: Option<f64>,
    pub min_pts: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusterResponse {
    pub clusters: ClusterResult,
    pub explanations: Vec<Explanation>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub message: String,
}
