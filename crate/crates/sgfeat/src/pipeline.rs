//! End-to-end registration: subsampling and salient superpoint selection,
//! backbone-substitute descriptors, semantic encoding, geometric and
//! high-order attention, dense Sinkhorn matching, and local-to-global
//! estimation. Every stage is timed and every stage is deterministic under
//! the config seed.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cloud::{point_to_node, voxel_downsample, NodePartition};
use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::features::{
    fuse_semantic, geometric_transformer, local_descriptor, semantic_encoder, EncoderConfig,
    GeoTrLayerWeights, HseWeights, Linear,
};
use crate::hot::{
    fuse_and_propagate, hot_forward, FusionWeights, HotConfig, HotGroupWeights,
    OverlapRegion, RegionFeatures,
};
use crate::matching::{
    combined_scores, dense_match, dual_softmax, feature_match_scores, topk_correspondences,
    CorrespondenceSet, DenseMatchConfig, ScoreMatrix,
};
use crate::registration::{
    inlier_ratio, kitti_success, lgr, rmse_and_rr, rre_rte, LgrConfig, PairMetrics,
};
use crate::report::StageTimingsMs;
use crate::saliency::{
    eigen_triples, gamma_score, salient_score_matrix, scatter_at, SaliencyConfig,
};
use crate::spatial::SpatialIndex;
use crate::{FeatureMatrix, PointCloud, RigidTransform};

// Silence an unused-import lint: AngleTable is re-exported for callers that
// drive the high-order layers directly.
pub use crate::hot::angles::AngleProjections;
use crate::saliency::eigen3_sym;

/// Which optional components run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ComponentFlags {
    /// Salient superpoint augmentation plus salient score weighting.
    pub aug: bool,
    /// High-order transformer and feature propagation.
    pub hot: bool,
    /// High-level semantic encoder.
    pub hse: bool,
}

impl Default for ComponentFlags {
    fn default() -> Self {
        Self {
            aug: true,
            hot: true,
            hse: true,
        }
    }
}

impl ComponentFlags {
    pub fn all_off() -> Self {
        Self {
            aug: false,
            hot: false,
            hse: false,
        }
    }

    /// All eight combinations, ordered by (aug, hot, hse) bits.
    pub fn all_combinations() -> Vec<Self> {
        let mut out = Vec::with_capacity(8);
        for bits in 0..8u8 {
            out.push(Self {
                aug: bits & 4 != 0,
                hot: bits & 2 != 0,
                hse: bits & 1 != 0,
            });
        }
        out
    }
}

/// Every seeded weight of the pipeline, built once per config and shared by
/// both frames and across ablation flag combinations.
#[derive(Debug, Clone)]
pub struct PipelineWeights {
    pub hse: HseWeights,
    pub semantic_fusion: Linear,
    pub geotr: Vec<GeoTrLayerWeights>,
    pub wa: AngleProjections,
    pub hot_groups: Vec<HotGroupWeights>,
    pub hot_fusion: FusionWeights,
}

impl PipelineWeights {
    pub fn seeded(cfg: &PipelineConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let d = cfg.d_t;
        let bias_gain = cfg.bias_gain / (d as f64).sqrt();
        let hse = HseWeights::seeded(&encoder_config(cfg), cfg.heads, &mut rng);
        // Context blocks carry feature-normalized rows of norm ~ sqrt(d);
        // scale their gain so `fusion_gain` means a relative contribution.
        let mix_gain = cfg.fusion_gain / (d as f64).sqrt();
        let semantic_fusion = Linear::identity_mix(2 * d, d, mix_gain, &mut rng);
        let geotr = (0..cfg.geotr_layers)
            .map(|_| GeoTrLayerWeights::seeded(d, cfg.heads, bias_gain, &mut rng))
            .collect();
        let wa = [
            crate::features::orthogonal_matrix(d, &mut rng),
            crate::features::orthogonal_matrix(d, &mut rng),
            crate::features::orthogonal_matrix(d, &mut rng),
        ];
        let hot_groups = (0..cfg.n_g / 2)
            .map(|_| HotGroupWeights::seeded(d, bias_gain, &mut rng))
            .collect();
        let hot_fusion = FusionWeights {
            fuse: Linear::identity_mix(2 * d, d, mix_gain, &mut rng),
            dense_proj: Linear::identity_mix(2 * d, d, mix_gain, &mut rng),
        };
        Self {
            hse,
            semantic_fusion,
            geotr,
            wa,
            hot_groups,
            hot_fusion,
        }
    }
}

fn encoder_config(cfg: &PipelineConfig) -> EncoderConfig {
    EncoderConfig {
        d_t: cfg.d_t,
        n_s: cfg.n_s,
        pool_radius: [
            cfg.pool_radius_scale * cfg.cell_mega1,
            cfg.pool_radius_scale * cfg.cell_mega2,
        ],
        mega_cells: [cfg.cell_mega1, cfg.cell_mega2],
    }
}

/// Everything a caller needs from one registration run.
#[derive(Debug, Clone)]
pub struct RegistrationOutput {
    pub transform: RigidTransform,
    pub dense_corr: CorrespondenceSet,
    pub super_corr: CorrespondenceSet,
    pub superpoints_source: usize,
    pub superpoints_target: usize,
    pub lgr_inliers: usize,
    pub timings: StageTimingsMs,
}

struct FrameState {
    supers: PointCloud,
    gammas: Vec<f64>,
    partition: NodePartition,
    f_super: FeatureMatrix,
    f_dense: FeatureMatrix,
}

/// Registers `source` onto `target`, returning the estimated transform and
/// the dense correspondences behind it.
pub fn register_pair(
    source: &PointCloud,
    target: &PointCloud,
    cfg: &PipelineConfig,
    weights: &PipelineWeights,
    flags: ComponentFlags,
) -> Result<RegistrationOutput> {
    cfg.validate()?;
    if source.is_empty() || target.is_empty() {
        return Err(Error::EmptyInput("register_pair"));
    }
    let mut timings = StageTimingsMs::default();
    let total_start = Instant::now();

    // Superpoint selection (augmentation stage) and backbone descriptors.
    let t = Instant::now();
    let mid_p = voxel_downsample(source, cfg.cell_mid)?.with_level(crate::CloudLevel::Super);
    let mid_q = voxel_downsample(target, cfg.cell_mid)?.with_level(crate::CloudLevel::Super);
    let mut state_p = frame_superpoints(source, &mid_p, cfg, flags)?;
    let mut state_q = frame_superpoints(target, &mid_q, cfg, flags)?;
    timings.aug = ms_since(t);

    let t = Instant::now();
    state_p.f_super = local_descriptor(source, &state_p.supers, cfg.descriptor_radius, cfg.d_t);
    state_q.f_super = local_descriptor(target, &state_q.supers, cfg.descriptor_radius, cfg.d_t);
    state_p.f_dense = local_descriptor(source, source, cfg.dense_descriptor_radius, cfg.d_t);
    state_q.f_dense = local_descriptor(target, target, cfg.dense_descriptor_radius, cfg.d_t);
    timings.backbone = ms_since(t);

    // Semantic encoder.
    let t = Instant::now();
    let (mut f_p, mut f_q) = (state_p.f_super.clone(), state_q.f_super.clone());
    if flags.hse {
        let (tilde_p, tilde_q) = semantic_encoder(
            &f_p,
            &f_q,
            &state_p.supers,
            &state_q.supers,
            &encoder_config(cfg),
            &weights.hse,
        )?;
        f_p = fuse_semantic(&f_p, &tilde_p, &weights.semantic_fusion)?;
        f_q = fuse_semantic(&f_q, &tilde_q, &weights.semantic_fusion)?;
    }
    timings.hse = ms_since(t);

    // Low-order geometric transformer.
    let t = Instant::now();
    let (f_p, f_q) = geometric_transformer(
        &f_p,
        &f_q,
        &state_p.supers,
        &state_q.supers,
        &weights.geotr,
        cfg.sigma_d,
    );
    timings.attention = ms_since(t);

    // Superpoint matching scores and the candidate overlap region.
    let mut ms = feature_match_scores(&f_p, &f_q);
    if cfg.super_dual_softmax {
        ms = dual_softmax(&ms, cfg.super_matching_temperature);
    }
    let scores: ScoreMatrix = if flags.aug {
        let ss = salient_score_matrix(&state_p.gammas, &state_q.gammas);
        combined_scores(&ms, &ss)?
    } else {
        ms
    };
    let super_corr = topk_correspondences(&scores, cfg.n_c);

    // High-order transformer and propagation to dense points.
    let t = Instant::now();
    let (dense_feats_p, dense_feats_q) = if flags.hot {
        let region = OverlapRegion::from_correspondences(
            &super_corr,
            &state_p.supers,
            &state_q.supers,
            cfg.k_anchors,
        )?;
        let hot_cfg = HotConfig {
            k_anchors: cfg.k_anchors,
            n_g: cfg.n_g,
            sigma_h: cfg.sigma_h,
            sigma_a: cfg.sigma_a,
            d_t: cfg.d_t,
            pool_mean: cfg.hot_pool_mean,
        };
        let slot_p = gather_rows(&f_p, &region.slots_p);
        let slot_q = gather_rows(&f_q, &region.slots_q);
        let (out_p, out_q) = hot_forward(
            &slot_p,
            &slot_q,
            &region,
            &hot_cfg,
            &weights.wa,
            &weights.hot_groups,
        )?;
        let region_p = RegionFeatures::from_slots(&region.slots_p, &out_p);
        let region_q = RegionFeatures::from_slots(&region.slots_q, &out_q);
        (
            fuse_and_propagate(
                &state_p.f_super,
                &region_p,
                &state_p.partition,
                &state_p.f_dense,
                &weights.hot_fusion,
            )?,
            fuse_and_propagate(
                &state_q.f_super,
                &region_q,
                &state_q.partition,
                &state_q.f_dense,
                &weights.hot_fusion,
            )?,
        )
    } else {
        (state_p.f_dense.clone(), state_q.f_dense.clone())
    };
    timings.hot = ms_since(t);

    // Dense matching inside matched patches. Patches are truncated to the
    // nearest members so one sprawling patch cannot dilute the assignment.
    let t = Instant::now();
    let dm_cfg = DenseMatchConfig {
        sinkhorn_iters: cfg.sinkhorn_iters,
        dustbin_score: cfg.dustbin_score,
        confidence_floor: cfg.confidence_floor,
        temperature: cfg.matching_temperature,
    };
    let capped_p = cap_partition(&state_p.partition, source, &state_p.supers, cfg.max_patch_size);
    let capped_q = cap_partition(&state_q.partition, target, &state_q.supers, cfg.max_patch_size);
    let dense_corr = dense_match(
        &super_corr,
        &capped_p,
        &capped_q,
        &dense_feats_p,
        &dense_feats_q,
        &dm_cfg,
    );
    timings.matching = ms_since(t);

    // Local-to-global estimation.
    let t = Instant::now();
    let lgr_cfg = LgrConfig {
        acceptance_radius: cfg.lgr_acceptance_radius,
        iterations: cfg.lgr_iterations,
        min_hypothesis_size: cfg.lgr_min_hypothesis,
    };
    let lgr_result = lgr(&dense_corr, source.points(), target.points(), &lgr_cfg)?;
    timings.lgr = ms_since(t);
    timings.total = ms_since(total_start);

    Ok(RegistrationOutput {
        transform: lgr_result.transform,
        dense_corr,
        super_corr,
        superpoints_source: state_p.supers.len(),
        superpoints_target: state_q.supers.len(),
        lgr_inliers: lgr_result.inlier_count,
        timings,
    })
}

/// Superpoint selection for one frame: salient mid-level points when
/// augmentation is on, plain grid subsampling otherwise. Saliency scores
/// are always measured against the mid-level cloud.
fn frame_superpoints(
    dense: &PointCloud,
    mid: &PointCloud,
    cfg: &PipelineConfig,
    flags: ComponentFlags,
) -> Result<FrameState> {
    let saliency_cfg = SaliencyConfig {
        r_salient: cfg.r_salient,
        lambda10: cfg.lambda10,
        lambda21: cfg.lambda21,
    };
    let (supers, gammas) = if flags.aug {
        let triples = eigen_triples(mid, cfg.r_salient);
        let mut indices: Vec<usize> = triples
            .iter()
            .enumerate()
            .filter_map(|(i, e)| {
                let eps = e.epsilon();
                let r10 = if e.e0 < eps { 1.0 } else { e.e1 / e.e0 };
                let r21 = if e.e1 < eps { 1.0 } else { e.e2 / e.e1 };
                (r10 < saliency_cfg.lambda10 && r21 < saliency_cfg.lambda21).then_some(i)
            })
            .collect();
        if indices.is_empty() {
            log::warn!("no salient points; falling back to the full mid level");
            indices = (0..mid.len()).collect();
        }
        // Thin the salient set to a grid so patch sizes stay balanced;
        // saliency decides placement, the grid decides spacing.
        let thin_cell = if cfg.salient_thin_cell > 0.0 {
            cfg.salient_thin_cell
        } else {
            cfg.cell_super
        };
        let supers = voxel_downsample(&mid.select(&indices), thin_cell)?;
        let index = SpatialIndex::build(mid.points());
        let gammas = supers
            .points()
            .iter()
            .map(|p| {
                let m = scatter_at(mid.points(), &index, p, cfg.r_salient);
                gamma_score(&eigen3_sym(&m).expect("scatter symmetric"))
            })
            .collect();
        (supers, gammas)
    } else {
        let supers = voxel_downsample(mid, cfg.cell_super)?;
        let index = SpatialIndex::build(mid.points());
        let gammas = supers
            .points()
            .iter()
            .map(|p| {
                let m = scatter_at(mid.points(), &index, p, cfg.r_salient);
                gamma_score(&eigen3_sym(&m).expect("scatter symmetric"))
            })
            .collect();
        (supers, gammas)
    };
    if supers.is_empty() {
        return Err(Error::EmptyInput("superpoint level"));
    }
    let partition = point_to_node(dense, &supers);
    Ok(FrameState {
        supers,
        gammas,
        partition,
        f_super: FeatureMatrix::zeros(0, 0),
        f_dense: FeatureMatrix::zeros(0, 0),
    })
}

fn gather_rows(f: &FeatureMatrix, rows: &[usize]) -> FeatureMatrix {
    let mut out = FeatureMatrix::zeros(rows.len(), f.ncols());
    for (k, &r) in rows.iter().enumerate() {
        out.set_row(k, &f.row(r));
    }
    out
}

fn ms_since(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// Keeps at most `cap` members per patch, nearest to the superpoint first
/// (ties by lower index). A zero cap passes the partition through.
fn cap_partition(
    partition: &NodePartition,
    dense: &PointCloud,
    supers: &PointCloud,
    cap: usize,
) -> NodePartition {
    if cap == 0 {
        return partition.clone();
    }
    let neighborhoods: Vec<Vec<usize>> = partition
        .neighborhoods
        .iter()
        .enumerate()
        .map(|(s, members)| {
            if members.len() <= cap {
                return members.clone();
            }
            let center = supers.points()[s];
            let mut ranked: Vec<(f64, usize)> = members
                .iter()
                .map(|&d| ((dense.points()[d] - center).norm_squared(), d))
                .collect();
            ranked.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
            ranked.truncate(cap);
            let mut kept: Vec<usize> = ranked.into_iter().map(|(_, d)| d).collect();
            kept.sort_unstable();
            kept
        })
        .collect();
    NodePartition {
        assignment: partition.assignment.clone(),
        neighborhoods,
    }
}

/// Evaluates a registration against generator ground truth.
pub fn evaluate_pair(
    output: &RegistrationOutput,
    source: &PointCloud,
    target: &PointCloud,
    t_gt: &RigidTransform,
    gt_corr: &CorrespondenceSet,
    cfg: &PipelineConfig,
) -> Result<PairMetrics> {
    let ir = inlier_ratio(
        &output.dense_corr,
        source.points(),
        target.points(),
        t_gt,
        cfg.ir_tau,
    );
    let (rmse, rr_success) = rmse_and_rr(
        &output.transform,
        gt_corr,
        source.points(),
        target.points(),
        cfg.rmse_threshold,
    )?;
    let (rre_deg, rte_m) = rre_rte(&output.transform, t_gt);
    Ok(PairMetrics {
        ir,
        rmse,
        rr_success,
        rre_deg,
        rte_m,
        kitti_success: kitti_success(rre_deg, rte_m),
    })
}
