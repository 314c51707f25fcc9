//! High-level semantic encoder: interleaved self/cross attention with two
//! semantic pooling steps down to object-scale mega points, then upsampling
//! back to the superpoint level.

use nalgebra::RowDVector;
use rand_chacha::ChaCha8Rng;

use crate::cloud::voxel_downsample;
use crate::error::{Error, Result};
use crate::features::attention::{
    mh_cross_attention, mh_self_attention, AttentionWeights, Linear, MlpBlock,
};
use crate::features::EncoderConfig;
use crate::spatial::SpatialIndex;
use crate::{FeatureMatrix, PointCloud};

/// Max-pools fine features into each coarse point's radius neighborhood.
///
/// Each contribution is `block(cat[f_j, f_j - seed_i])` where the seed is
/// the feature of the fine point nearest to the coarse point; a coarse point
/// with an empty neighborhood copies its seed feature.
pub fn semantic_pool(
    points_fine: &PointCloud,
    feats_fine: &FeatureMatrix,
    points_coarse: &PointCloud,
    r: f64,
    block: &MlpBlock,
) -> FeatureMatrix {
    assert_eq!(points_fine.len(), feats_fine.nrows());
    let d = feats_fine.ncols();
    let index = SpatialIndex::build(points_fine.points());

    let seeds: Vec<usize> = points_coarse
        .points()
        .iter()
        .map(|p| index.knn(p, 1)[0])
        .collect();
    let neighborhoods: Vec<Vec<usize>> = points_coarse
        .points()
        .iter()
        .map(|p| index.radius(p, r))
        .collect();

    // Stack every (coarse, fine) contribution so instance normalization sees
    // the whole call at once, then max-pool per coarse point.
    let total: usize = neighborhoods.iter().map(Vec::len).sum();
    let mut stacked = FeatureMatrix::zeros(total, 2 * d);
    let mut row = 0;
    for (i, members) in neighborhoods.iter().enumerate() {
        let seed = feats_fine.row(seeds[i]);
        for &j in members {
            let fj = feats_fine.row(j);
            for c in 0..d {
                stacked[(row, c)] = fj[c];
                stacked[(row, d + c)] = fj[c] - seed[c];
            }
            row += 1;
        }
    }
    let activated = block.apply(&stacked);

    let mut out = FeatureMatrix::zeros(points_coarse.len(), d);
    let mut row = 0;
    for (i, members) in neighborhoods.iter().enumerate() {
        if members.is_empty() {
            out.set_row(i, &feats_fine.row(seeds[i]));
            continue;
        }
        let mut pooled = RowDVector::from_element(d, f64::NEG_INFINITY);
        for _ in members {
            for c in 0..d {
                pooled[c] = pooled[c].max(activated[(row, c)]);
            }
            row += 1;
        }
        out.set_row(i, &pooled);
    }
    out
}

/// Pushes coarse features back down: every fine point within `r` of some
/// coarse point adopts `block(cat[f_fine, f_coarse])` from its nearest
/// coarse parent; orphans keep their feature.
pub fn semantic_upsample(
    points_coarse: &PointCloud,
    feats_coarse: &FeatureMatrix,
    points_fine: &PointCloud,
    feats_fine: &FeatureMatrix,
    r: f64,
    block: &MlpBlock,
) -> FeatureMatrix {
    assert_eq!(points_coarse.len(), feats_coarse.nrows());
    assert_eq!(points_fine.len(), feats_fine.nrows());
    let d = feats_fine.ncols();
    let index = SpatialIndex::build(points_coarse.points());

    let parents: Vec<Option<usize>> = points_fine
        .points()
        .iter()
        .map(|p| {
            let nearest = index.knn(p, 1)[0];
            ((points_coarse.points()[nearest] - p).norm() <= r).then_some(nearest)
        })
        .collect();

    let adopted: Vec<usize> = (0..points_fine.len())
        .filter(|&j| parents[j].is_some())
        .collect();
    let mut stacked = FeatureMatrix::zeros(adopted.len(), 2 * d);
    for (row, &j) in adopted.iter().enumerate() {
        let parent = parents[j].unwrap();
        for c in 0..d {
            stacked[(row, c)] = feats_fine[(j, c)];
            stacked[(row, d + c)] = feats_coarse[(parent, c)];
        }
    }
    let activated = block.apply(&stacked);

    let mut out = feats_fine.clone();
    for (row, &j) in adopted.iter().enumerate() {
        out.set_row(j, &activated.row(row));
    }
    out
}

/// All learned state of the semantic encoder.
#[derive(Debug, Clone)]
pub struct HseWeights {
    /// Self-attention before each pooling step (at most two).
    pub sa: Vec<AttentionWeights>,
    /// Mega-level layers; `true` marks a cross-attention layer.
    pub mega: Vec<(bool, AttentionWeights)>,
    pub pool: [MlpBlock; 2],
    pub up: [MlpBlock; 2],
}

impl HseWeights {
    pub fn seeded(cfg: &EncoderConfig, heads: usize, rng: &mut ChaCha8Rng) -> Self {
        let d = cfg.d_t;
        let sa_count = cfg.n_s.saturating_sub(1).min(2);
        let mega_count = cfg.n_s - sa_count;
        let sa = (0..sa_count)
            .map(|_| AttentionWeights::seeded(d, heads, rng))
            .collect();
        let mega = (0..mega_count)
            .map(|k| (k % 2 == 0, AttentionWeights::seeded(d, heads, rng)))
            .collect();
        let pool = [
            MlpBlock::seeded(2 * d, d, rng),
            MlpBlock::seeded(2 * d, d, rng),
        ];
        let up = [
            MlpBlock::seeded(2 * d, d, rng),
            MlpBlock::seeded(2 * d, d, rng),
        ];
        Self { sa, mega, pool, up }
    }
}

/// Runs the full encoder on a frame pair, returning object-level aware
/// superpoint features with unchanged row counts.
pub fn semantic_encoder(
    f_p: &FeatureMatrix,
    f_q: &FeatureMatrix,
    supers_p: &PointCloud,
    supers_q: &PointCloud,
    cfg: &EncoderConfig,
    w: &HseWeights,
) -> Result<(FeatureMatrix, FeatureMatrix)> {
    cfg.validate()?;
    let run = |f0: &FeatureMatrix, cloud0: &PointCloud| -> Result<FramePyramid> {
        let l1 = voxel_downsample(cloud0, cfg.mega_cells[0])?;
        let l2 = voxel_downsample(&l1, cfg.mega_cells[1])?;
        Ok(FramePyramid {
            feats: vec![f0.clone(), FeatureMatrix::zeros(0, 0), FeatureMatrix::zeros(0, 0)],
            clouds: vec![cloud0.clone(), l1, l2],
        })
    };
    let mut p = run(f_p, supers_p)?;
    let mut q = run(f_q, supers_q)?;

    // Descend: optional self-attention, then pool.
    for level in 0..2 {
        if level < w.sa.len() {
            p.feats[level] = mh_self_attention(&p.feats[level], &w.sa[level]);
            q.feats[level] = mh_self_attention(&q.feats[level], &w.sa[level]);
        }
        p.feats[level + 1] = semantic_pool(
            &p.clouds[level],
            &p.feats[level],
            &p.clouds[level + 1],
            cfg.pool_radius[level],
            &w.pool[level],
        );
        q.feats[level + 1] = semantic_pool(
            &q.clouds[level],
            &q.feats[level],
            &q.clouds[level + 1],
            cfg.pool_radius[level],
            &w.pool[level],
        );
    }

    // Exchange at the mega level.
    for (is_cross, attn) in &w.mega {
        if *is_cross {
            let new_p = mh_cross_attention(&p.feats[2], &q.feats[2], attn);
            let new_q = mh_cross_attention(&q.feats[2], &p.feats[2], attn);
            p.feats[2] = new_p;
            q.feats[2] = new_q;
        } else {
            p.feats[2] = mh_self_attention(&p.feats[2], attn);
            q.feats[2] = mh_self_attention(&q.feats[2], attn);
        }
    }

    // Ascend back to the superpoint level.
    for level in (0..2).rev() {
        p.feats[level] = semantic_upsample(
            &p.clouds[level + 1],
            &p.feats[level + 1],
            &p.clouds[level],
            &p.feats[level],
            cfg.pool_radius[level],
            &w.up[level],
        );
        q.feats[level] = semantic_upsample(
            &q.clouds[level + 1],
            &q.feats[level + 1],
            &q.clouds[level],
            &q.feats[level],
            cfg.pool_radius[level],
            &w.up[level],
        );
    }
    Ok((p.feats.swap_remove(0), q.feats.swap_remove(0)))
}

struct FramePyramid {
    feats: Vec<FeatureMatrix>,
    clouds: Vec<PointCloud>,
}

/// Projects `cat[f_hat, f_tilde]` back to width `d_t`.
pub fn fuse_semantic(
    f_hat: &FeatureMatrix,
    f_tilde: &FeatureMatrix,
    fusion: &Linear,
) -> Result<FeatureMatrix> {
    if f_hat.nrows() != f_tilde.nrows() {
        return Err(Error::InvalidShape(format!(
            "fuse_semantic row mismatch: {} vs {}",
            f_hat.nrows(),
            f_tilde.nrows()
        )));
    }
    let d = f_hat.ncols();
    let mut cat = FeatureMatrix::zeros(f_hat.nrows(), 2 * d);
    cat.view_mut((0, 0), (f_hat.nrows(), d)).copy_from(f_hat);
    cat.view_mut((0, d), (f_hat.nrows(), d)).copy_from(f_tilde);
    Ok(fusion.apply(&cat))
}
