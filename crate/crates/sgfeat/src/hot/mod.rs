//! High-order saliency transformer: farthest-K anchor selection, triangle
//! angle pooling, angle-biased self-attention inside each frame, and the
//! cross-attention layer that scores inter-frame triangle consistency.
//!
//! All machinery runs on the candidate overlap region: the superpoints named
//! by the top-ranked correspondences. Row `i` of the source region and row
//! `i` of the target region belong to the same candidate correspondence.

pub mod angles;
pub mod attention;
pub mod grad;

pub use angles::{
    angle_pool, select_anchors, sin_embed_angle, triangle_angles, AngleEmbedding, AngleTable,
    AnchorSet,
};
pub use attention::{
    fuse_and_propagate, ho_cross_attention, ho_self_attention, hot_forward, FusionWeights,
    HoCrossWeights, HoSelfWeights, HotGroupWeights, RegionFeatures,
};
pub use grad::{grad_check_cross_attention, CrossInstance};

use crate::matching::CorrespondenceSet;
use crate::{Error, PointCloud, Result};

/// Shape and scale parameters of the high-order transformer.
#[derive(Debug, Clone, Copy)]
pub struct HotConfig {
    /// Farthest anchors per region point.
    pub k_anchors: usize,
    /// Total attention layers; one interleave group counts as two.
    pub n_g: usize,
    /// Normalization scale of the cross-frame embedding differences.
    pub sigma_h: f64,
    /// Base of the angle sinusoid.
    pub sigma_a: f64,
    pub d_t: usize,
    /// Pool anchor embeddings by mean instead of elementwise max.
    pub pool_mean: bool,
}

impl HotConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_anchors < 1 {
            return Err(Error::InvalidConfig("k_anchors must be >= 1".into()));
        }
        if self.n_g < 2 || self.n_g % 2 != 0 {
            return Err(Error::InvalidConfig(format!(
                "n_g must be an even number >= 2, got {}",
                self.n_g
            )));
        }
        if self.sigma_h <= 0.0 || self.sigma_a <= 0.0 {
            return Err(Error::InvalidConfig(
                "sigma_h and sigma_a must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Candidate overlap region, one slot per superpoint correspondence.
/// Slot `i` pairs `points_p[i]` with `points_q[i]`.
#[derive(Debug, Clone)]
pub struct OverlapRegion {
    /// Superpoint index (into the frame's superpoint cloud) per slot.
    pub slots_p: Vec<usize>,
    pub slots_q: Vec<usize>,
    pub points_p: PointCloud,
    pub points_q: PointCloud,
    /// `None` when the region is a single slot; attention then degrades to
    /// an identity geometric bias.
    pub anchors_p: Option<AnchorSet>,
    pub anchors_q: Option<AnchorSet>,
}

impl OverlapRegion {
    /// Builds the region from superpoint correspondences, selecting the
    /// farthest-K anchors per slot in each frame independently.
    pub fn from_correspondences(
        corr: &CorrespondenceSet,
        supers_p: &PointCloud,
        supers_q: &PointCloud,
        k_anchors: usize,
    ) -> Result<Self> {
        if corr.pairs.is_empty() {
            return Err(Error::EmptyInput("overlap region"));
        }
        let slots_p: Vec<usize> = corr.pairs.iter().map(|c| c.source).collect();
        let slots_q: Vec<usize> = corr.pairs.iter().map(|c| c.target).collect();
        let points_p = supers_p.select(&slots_p);
        let points_q = supers_q.select(&slots_q);
        let anchors_p = AnchorSet::build(&points_p, k_anchors).ok();
        let anchors_q = AnchorSet::build(&points_q, k_anchors).ok();
        Ok(Self {
            slots_p,
            slots_q,
            points_p,
            points_q,
            anchors_p,
            anchors_q,
        })
    }

    pub fn len(&self) -> usize {
        self.slots_p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots_p.is_empty()
    }
}
