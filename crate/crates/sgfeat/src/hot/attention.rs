//! Angle-biased attention layers of the high-order transformer and the
//! fusion/propagation step that carries region features down to dense
//! points.

use nalgebra::DMatrix;
use rand_chacha::ChaCha8Rng;

use crate::cloud::NodePartition;
use crate::error::{Error, Result};
use crate::features::attention::{
    attention_core, normalize_rows, orthogonal_matrix, AttentionWeights, Linear,
};
use crate::hot::angles::{AngleProjections, AngleTable};
use crate::hot::{HotConfig, OverlapRegion};
use crate::FeatureMatrix;

/// Weights of one intra-frame high-order self-attention layer.
#[derive(Debug, Clone)]
pub struct HoSelfWeights {
    /// Single-head query/key/value projections.
    pub attn: AttentionWeights,
    /// Projects the summed angle embedding before the key bias.
    pub bias_linear: Linear,
    /// `W_G`: maps the projected embedding into key space.
    pub wg: DMatrix<f64>,
}

impl HoSelfWeights {
    pub fn seeded(d: usize, bias_gain: f64, rng: &mut ChaCha8Rng) -> Self {
        Self {
            attn: AttentionWeights::seeded(d, 1, rng),
            bias_linear: Linear::seeded(d, d, 1.0, rng),
            wg: orthogonal_matrix(d, rng) * bias_gain,
        }
    }
}

/// Weights of the inter-frame saliency cross-attention layer.
#[derive(Debug, Clone)]
pub struct HoCrossWeights {
    pub attn: AttentionWeights,
    /// Projects the concatenated angle-difference embeddings (3d -> d).
    pub cat_linear: Linear,
    /// `W_H`: maps the difference embedding into key space.
    pub wh: DMatrix<f64>,
}

impl HoCrossWeights {
    pub fn seeded(d: usize, bias_gain: f64, rng: &mut ChaCha8Rng) -> Self {
        Self {
            attn: AttentionWeights::seeded(d, 1, rng),
            cat_linear: Linear::seeded(3 * d, d, 1.0, rng),
            wh: orthogonal_matrix(d, rng) * bias_gain,
        }
    }
}

/// One interleave group: a shared self-attention layer applied to both
/// frames, then cross-attention in both directions.
#[derive(Debug, Clone)]
pub struct HotGroupWeights {
    pub self_w: HoSelfWeights,
    pub cross_w: HoCrossWeights,
}

impl HotGroupWeights {
    pub fn seeded(d: usize, bias_gain: f64, rng: &mut ChaCha8Rng) -> Self {
        Self {
            self_w: HoSelfWeights::seeded(d, bias_gain, rng),
            cross_w: HoCrossWeights::seeded(d, bias_gain, rng),
        }
    }
}

/// Intra-frame self-attention with the pooled-angle key bias. A missing
/// table (singleton region) degrades to a zero bias.
pub fn ho_self_attention(
    f: &FeatureMatrix,
    table: Option<&AngleTable>,
    w: &HoSelfWeights,
) -> FeatureMatrix {
    let bias = table.map(|t| {
        debug_assert_eq!(t.n, f.nrows());
        w.bias_linear.apply(&t.slot_sum()) * &w.wg
    });
    let z = attention_core(f, f, &w.attn, bias.as_ref());
    let mut out = f + z;
    normalize_rows(&mut out);
    out
}

/// Inter-frame cross-attention biased by per-frame angle-embedding
/// differences. Rows of `f_p` and `f_q` are slot-aligned candidate
/// correspondences; the output is aligned to the query frame `f_p`.
pub fn ho_cross_attention(
    f_p: &FeatureMatrix,
    f_q: &FeatureMatrix,
    table_p: Option<&AngleTable>,
    table_q: Option<&AngleTable>,
    sigma_h: f64,
    w: &HoCrossWeights,
) -> FeatureMatrix {
    assert_eq!(
        f_p.nrows(),
        f_q.nrows(),
        "cross-attention needs slot-aligned frames"
    );
    let bias = match (table_p, table_q) {
        (Some(tp), Some(tq)) => {
            let diff = (&tp.data - &tq.data) / sigma_h;
            Some(w.cat_linear.apply(&diff) * &w.wh)
        }
        _ => None,
    };
    let z = attention_core(f_p, f_q, &w.attn, bias.as_ref());
    let mut out = f_p + z;
    normalize_rows(&mut out);
    out
}

/// Runs `n_g` alternating attention layers over the overlap region and
/// returns the high-order features of both frames, slot-aligned.
pub fn hot_forward(
    f_p: &FeatureMatrix,
    f_q: &FeatureMatrix,
    region: &OverlapRegion,
    cfg: &HotConfig,
    wa: &AngleProjections,
    groups: &[HotGroupWeights],
) -> Result<(FeatureMatrix, FeatureMatrix)> {
    cfg.validate()?;
    if region.is_empty() {
        return Err(Error::EmptyInput("hot_forward region"));
    }
    assert_eq!(f_p.nrows(), region.len());
    assert_eq!(f_q.nrows(), region.len());
    assert_eq!(groups.len(), cfg.n_g / 2, "one weight group per two layers");

    let table_p = region
        .anchors_p
        .as_ref()
        .map(|a| AngleTable::build(&region.points_p, a, wa, cfg.sigma_a, cfg.pool_mean));
    let table_q = region
        .anchors_q
        .as_ref()
        .map(|a| AngleTable::build(&region.points_q, a, wa, cfg.sigma_a, cfg.pool_mean));

    let mut fp = f_p.clone();
    let mut fq = f_q.clone();
    for group in groups {
        fp = ho_self_attention(&fp, table_p.as_ref(), &group.self_w);
        fq = ho_self_attention(&fq, table_q.as_ref(), &group.self_w);
        let new_p = ho_cross_attention(
            &fp,
            &fq,
            table_p.as_ref(),
            table_q.as_ref(),
            cfg.sigma_h,
            &group.cross_w,
        );
        let new_q = ho_cross_attention(
            &fq,
            &fp,
            table_q.as_ref(),
            table_p.as_ref(),
            cfg.sigma_h,
            &group.cross_w,
        );
        fp = new_p;
        fq = new_q;
    }
    Ok((fp, fq))
}

/// High-order features of the region superpoints, keyed by superpoint index
/// (slots of the same superpoint already aggregated).
#[derive(Debug, Clone)]
pub struct RegionFeatures {
    pub super_indices: Vec<usize>,
    pub feats: FeatureMatrix,
}

impl RegionFeatures {
    /// Averages slot rows that share a superpoint, ordered by superpoint
    /// index.
    pub fn from_slots(slots: &[usize], slot_feats: &FeatureMatrix) -> Self {
        assert_eq!(slots.len(), slot_feats.nrows());
        let mut by_super: std::collections::BTreeMap<usize, Vec<usize>> =
            std::collections::BTreeMap::new();
        for (slot, &s) in slots.iter().enumerate() {
            by_super.entry(s).or_default().push(slot);
        }
        let d = slot_feats.ncols();
        let mut feats = FeatureMatrix::zeros(by_super.len(), d);
        let mut super_indices = Vec::with_capacity(by_super.len());
        for (row, (s, members)) in by_super.into_iter().enumerate() {
            super_indices.push(s);
            for &slot in &members {
                for c in 0..d {
                    feats[(row, c)] += slot_feats[(slot, c)];
                }
            }
            let inv = 1.0 / members.len() as f64;
            for c in 0..d {
                feats[(row, c)] *= inv;
            }
        }
        Self {
            super_indices,
            feats,
        }
    }
}

/// Projections used by [`fuse_and_propagate`].
#[derive(Debug, Clone)]
pub struct FusionWeights {
    /// Combines backbone superpoint features with high-order features.
    pub fuse: Linear,
    /// Projects `cat[dense feature, fused parent]` back to `d_t`.
    pub dense_proj: Linear,
}

impl FusionWeights {
    pub fn seeded(d: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            fuse: Linear::seeded(2 * d, d, 1.0, rng),
            dense_proj: Linear::seeded(2 * d, d, 1.0, rng),
        }
    }
}

/// Fuses high-order region features with backbone superpoint features and
/// propagates them to every dense point of the owning patches. Dense points
/// outside all region patches pass through the same projection with a zero
/// parent block.
pub fn fuse_and_propagate(
    f_backbone_super: &FeatureMatrix,
    region: &RegionFeatures,
    partition: &NodePartition,
    f_dense: &FeatureMatrix,
    w: &FusionWeights,
) -> Result<FeatureMatrix> {
    let d = f_dense.ncols();
    if f_backbone_super.ncols() != d || region.feats.ncols() != d {
        return Err(Error::InvalidShape(
            "feature widths must agree across levels".into(),
        ));
    }
    if f_backbone_super.nrows() != partition.neighborhoods.len() {
        return Err(Error::InvalidShape(format!(
            "backbone rows {} != partition superpoints {}",
            f_backbone_super.nrows(),
            partition.neighborhoods.len()
        )));
    }
    if f_dense.nrows() != partition.assignment.len() {
        return Err(Error::InvalidShape(format!(
            "dense rows {} != partition assignments {}",
            f_dense.nrows(),
            partition.assignment.len()
        )));
    }

    // Fused parent feature per region superpoint.
    let n_region = region.super_indices.len();
    let mut cat = FeatureMatrix::zeros(n_region, 2 * d);
    for (row, &s) in region.super_indices.iter().enumerate() {
        if s >= f_backbone_super.nrows() {
            return Err(Error::InvalidShape(format!(
                "region superpoint {s} out of range"
            )));
        }
        for c in 0..d {
            cat[(row, c)] = f_backbone_super[(s, c)];
            cat[(row, d + c)] = region.feats[(row, c)];
        }
    }
    let fused = w.fuse.apply(&cat);
    let mut fused_of_super: Vec<Option<usize>> = vec![None; f_backbone_super.nrows()];
    for (row, &s) in region.super_indices.iter().enumerate() {
        fused_of_super[s] = Some(row);
    }

    let n_dense = f_dense.nrows();
    let mut dense_cat = FeatureMatrix::zeros(n_dense, 2 * d);
    for i in 0..n_dense {
        for c in 0..d {
            dense_cat[(i, c)] = f_dense[(i, c)];
        }
        if let Some(row) = fused_of_super[partition.assignment[i]] {
            for c in 0..d {
                dense_cat[(i, d + c)] = fused[(row, c)];
            }
        }
    }
    Ok(w.dense_proj.apply(&dense_cat))
}
