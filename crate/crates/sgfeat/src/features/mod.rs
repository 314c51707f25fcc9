//! Feature extraction and exchange: the deterministic local descriptor that
//! stands in for a learned backbone, multi-head attention primitives, the
//! pyramid semantic encoder, and the distance-biased geometric transformer.

pub mod attention;
pub mod descriptor;
pub mod encoder;
pub mod geotr;

pub use attention::{
    mh_cross_attention, mh_self_attention, orthogonal_matrix, softmax_rows, AttentionWeights,
    Linear, MlpBlock,
};
pub use descriptor::local_descriptor;
pub use encoder::{fuse_semantic, semantic_encoder, semantic_pool, semantic_upsample, HseWeights};
pub use geotr::{geometric_transformer, GeoTrLayerWeights};

/// Semantic encoder shape parameters.
#[derive(Debug, Clone, Copy)]
pub struct EncoderConfig {
    /// Transformer feature width.
    pub d_t: usize,
    /// Total attention layers in the semantic encoder.
    pub n_s: usize,
    /// Pooling radius used when aggregating a finer level into a coarser one.
    pub pool_radius: [f64; 2],
    /// Voxel cells producing the two mega levels from the superpoint level.
    pub mega_cells: [f64; 2],
}

impl EncoderConfig {
    pub fn validate(&self) -> crate::Result<()> {
        if self.d_t < 8 || self.d_t % 2 != 0 {
            return Err(crate::Error::InvalidConfig(format!(
                "d_t must be an even number >= 8, got {}",
                self.d_t
            )));
        }
        if self.n_s < 1 {
            return Err(crate::Error::InvalidConfig("n_s must be >= 1".into()));
        }
        if self.pool_radius.iter().any(|&r| r <= 0.0)
            || self.mega_cells.iter().any(|&c| c <= 0.0)
        {
            return Err(crate::Error::InvalidConfig(
                "pool radii and mega cells must be positive".into(),
            ));
        }
        Ok(())
    }
}
