//! JSON report schema: per-pair result records, benchmark aggregates, and
//! ablation rows. Schema version 1.

use serde::{Deserialize, Serialize};

use crate::registration::{MetricReport, PairMetrics};
use crate::RigidTransform;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComponentFlagsJson {
    pub aug: bool,
    pub hot: bool,
    pub hse: bool,
}

/// Wall-clock per stage, milliseconds. Excluded from determinism checks.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct StageTimingsMs {
    pub backbone: f64,
    pub aug: f64,
    pub hse: f64,
    pub attention: f64,
    pub hot: f64,
    pub matching: f64,
    pub lgr: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CountSummary {
    pub source_points: usize,
    pub target_points: usize,
    pub superpoints_source: usize,
    pub superpoints_target: usize,
    pub dense_correspondences: usize,
    pub lgr_inliers: usize,
}

/// One registration run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResultRecord {
    pub schema: u32,
    pub pair_id: String,
    pub source_path: String,
    pub target_path: String,
    pub flags: ComponentFlagsJson,
    pub seed: u64,
    /// Row-major homogeneous transform aligning source to target.
    pub t_pred: [[f64; 4]; 4],
    pub counts: CountSummary,
    pub metrics: Option<PairMetrics>,
    /// Dense correspondences as (source index, target index, score).
    pub correspondences: Vec<(u32, u32, f64)>,
    pub timings_ms: StageTimingsMs,
    /// Present when registration failed; `t_pred` is then the identity.
    pub error: Option<String>,
}

impl ResultRecord {
    pub fn transform(&self) -> RigidTransform {
        let mut m = nalgebra::Matrix4::identity();
        for r in 0..4 {
            for c in 0..4 {
                m[(r, c)] = self.t_pred[r][c];
            }
        }
        RigidTransform::from_matrix4(&m)
    }
}

pub fn transform_to_rows(t: &RigidTransform) -> [[f64; 4]; 4] {
    let m = t.to_matrix4();
    std::array::from_fn(|r| std::array::from_fn(|c| m[(r, c)]))
}

/// Aggregate of one flag combination over a pair set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationRow {
    pub flags: ComponentFlagsJson,
    pub metrics: MetricReport,
}

/// Full benchmark output.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub schema: u32,
    pub flags: ComponentFlagsJson,
    pub seed: u64,
    pub metrics: MetricReport,
    pub records: Vec<ResultRecord>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ablation: Option<Vec<AblationRow>>,
}

/// Ground-truth sidecar written by `gen` next to each pair's PLY files.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroundTruthFile {
    pub schema: u32,
    pub pair_id: String,
    pub t_gt: [[f64; 4]; 4],
    pub overlap: f64,
    pub noise_sigma: f64,
    /// (source index, target index) pairs from the scene generator.
    pub gt_corr: Vec<(u32, u32)>,
}

impl GroundTruthFile {
    pub fn transform(&self) -> RigidTransform {
        let mut m = nalgebra::Matrix4::identity();
        for r in 0..4 {
            for c in 0..4 {
                m[(r, c)] = self.t_gt[r][c];
            }
        }
        RigidTransform::from_matrix4(&m)
    }
}

/// Zeroes every timing field in a serialized report or record, for
/// byte-level determinism comparisons.
pub fn zero_timings(value: &mut serde_json::Value) {
    match value {
        serde_json::Value::Object(map) => {
            for (key, v) in map.iter_mut() {
                if key == "timings_ms" {
                    *v = serde_json::json!(StageTimingsMs::default());
                } else {
                    zero_timings(v);
                }
            }
        }
        serde_json::Value::Array(items) => {
            for v in items {
                zero_timings(v);
            }
        }
        _ => {}
    }
}
