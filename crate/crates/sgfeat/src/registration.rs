//! Rigid estimation and evaluation: weighted Procrustes, the local-to-global
//! estimator, and the metric suite (IR, FMR, RR via RMSE, RRE, RTE, and the
//! outdoor success rule).

use std::collections::BTreeMap;

use nalgebra::Matrix3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matching::CorrespondenceSet;
use crate::{Point3, RigidTransform, Vector3};

/// Local-to-global estimator settings.
#[derive(Debug, Clone, Copy)]
pub struct LgrConfig {
    /// Acceptance radius for inlier counting, meters.
    pub acceptance_radius: f64,
    /// Refinement iterations after hypothesis selection.
    pub iterations: usize,
    /// Minimum correspondences a patch needs to produce a hypothesis.
    pub min_hypothesis_size: usize,
}

impl Default for LgrConfig {
    fn default() -> Self {
        Self {
            acceptance_radius: 0.05,
            iterations: 5,
            min_hypothesis_size: 3,
        }
    }
}

/// Result of the local-to-global estimator.
#[derive(Debug, Clone)]
pub struct LgrResult {
    pub transform: RigidTransform,
    pub inlier_count: usize,
    /// Patch index of the winning hypothesis.
    pub hypothesis_patch: usize,
}

/// Weighted least-squares rigid fit `min sum w_k |R p_k + t - q_k|^2` via
/// the 3x3 cross-covariance SVD with determinant-sign correction.
pub fn weighted_procrustes(
    corr: &CorrespondenceSet,
    points_p: &[Point3],
    points_q: &[Point3],
    weights: &[f64],
) -> Result<RigidTransform> {
    if corr.len() < 3 {
        return Err(Error::DegenerateSet(format!(
            "{} correspondences, need at least 3",
            corr.len()
        )));
    }
    assert_eq!(corr.len(), weights.len());
    let w_sum: f64 = weights.iter().sum();
    if !(w_sum > 0.0) {
        return Err(Error::DegenerateSet("weights sum to zero".into()));
    }

    let mut centroid_p = Vector3::zeros();
    let mut centroid_q = Vector3::zeros();
    for (c, &w) in corr.pairs.iter().zip(weights) {
        centroid_p += w * points_p[c.source].coords;
        centroid_q += w * points_q[c.target].coords;
    }
    centroid_p /= w_sum;
    centroid_q /= w_sum;

    let mut h = Matrix3::zeros();
    for (c, &w) in corr.pairs.iter().zip(weights) {
        let dp = points_p[c.source].coords - centroid_p;
        let dq = points_q[c.target].coords - centroid_q;
        h += w * dp * dq.transpose();
    }

    let svd = h.svd(true, true);
    let u = svd.u.ok_or_else(|| Error::DegenerateSet("svd failed".into()))?;
    let v_t = svd
        .v_t
        .ok_or_else(|| Error::DegenerateSet("svd failed".into()))?;
    // Rank 1 or less (collinear points) has no unique rotation.
    let scale = svd.singular_values[0].max(f64::MIN_POSITIVE);
    if svd.singular_values[1] / scale < 1e-12 {
        return Err(Error::DegenerateSet(
            "cross-covariance rank below 2".into(),
        ));
    }
    let v = v_t.transpose();
    let det = (v * u.transpose()).determinant();
    let correction = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, det.signum()));
    let rotation = v * correction * u.transpose();
    let translation = centroid_q - rotation * centroid_p;
    Ok(RigidTransform::new(rotation, translation))
}

/// Local-to-global estimation: one weighted Procrustes hypothesis per patch,
/// global selection by inlier count under the acceptance radius, then
/// iterative refinement on the running inlier set.
pub fn lgr(
    dense_corr: &CorrespondenceSet,
    points_p: &[Point3],
    points_q: &[Point3],
    cfg: &LgrConfig,
) -> Result<LgrResult> {
    // Canonical pair order makes the estimate independent of the caller's
    // list order (floating-point sums and tie breaks included).
    let mut dense_corr = dense_corr.clone();
    dense_corr
        .pairs
        .sort_by(|a, b| (a.source, a.target, a.patch).cmp(&(b.source, b.target, b.patch)));
    let dense_corr = &dense_corr;

    let mut by_patch: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (k, c) in dense_corr.pairs.iter().enumerate() {
        let patch = c
            .patch
            .ok_or_else(|| Error::RegistrationFailed("correspondences lack patch tags".into()))?;
        by_patch.entry(patch).or_default().push(k);
    }

    let candidates: Vec<(usize, Vec<usize>)> = by_patch
        .into_iter()
        .filter(|(_, members)| members.len() >= cfg.min_hypothesis_size)
        .collect();
    if candidates.is_empty() {
        return Err(Error::RegistrationFailed(
            "no patch reaches the minimum hypothesis size".into(),
        ));
    }

    // Per-patch hypothesis: a score-weighted fit followed by two reweighted
    // passes that suppress pairs far from the running estimate. A single
    // wrong pair among a handful would otherwise ruin the hypothesis.
    let fit = |members: &[usize]| -> Result<RigidTransform> {
        let subset = CorrespondenceSet {
            pairs: members.iter().map(|&k| dense_corr.pairs[k]).collect(),
            level: dense_corr.level,
        };
        let scores: Vec<f64> = subset.pairs.iter().map(|c| c.score.max(0.0)).collect();
        let mut transform = weighted_procrustes(&subset, points_p, points_q, &scores)?;
        for _ in 0..2 {
            let residuals: Vec<f64> = subset
                .pairs
                .iter()
                .map(|c| (transform.apply_point(&points_p[c.source]) - points_q[c.target]).norm())
                .collect();
            let mut sorted = residuals.clone();
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let scale = (1.5 * sorted[sorted.len() / 2]).max(cfg.acceptance_radius);
            let weights: Vec<f64> = residuals
                .iter()
                .zip(&scores)
                .map(|(&r, &s)| {
                    if r < scale {
                        let u = r / scale;
                        s * (1.0 - u * u).powi(2)
                    } else {
                        0.0
                    }
                })
                .collect();
            if weights.iter().filter(|&&w| w > 0.0).count() < 3 {
                break;
            }
            match weighted_procrustes(&subset, points_p, points_q, &weights) {
                Ok(t) => transform = t,
                Err(_) => break,
            }
        }
        Ok(transform)
    };

    // Score = (inlier count, residual sum over inliers).
    let score = |t: &RigidTransform| -> (usize, f64) {
        let mut count = 0;
        let mut residual = 0.0;
        for c in &dense_corr.pairs {
            let r = (t.apply_point(&points_p[c.source]) - points_q[c.target]).norm();
            if r < cfg.acceptance_radius {
                count += 1;
                residual += r;
            }
        }
        (count, residual)
    };

    let hypotheses: Vec<(usize, RigidTransform, usize, f64)> = candidates
        .par_iter()
        .filter_map(|(patch, members)| {
            let t = fit(members).ok()?;
            let (count, residual) = score(&t);
            Some((*patch, t, count, residual))
        })
        .collect();
    if hypotheses.is_empty() {
        return Err(Error::RegistrationFailed(
            "every patch hypothesis was degenerate".into(),
        ));
    }

    // Highest inlier count; ties by lower residual, then lower patch index.
    let mut best = &hypotheses[0];
    for h in &hypotheses[1..] {
        let better = h.2 > best.2
            || (h.2 == best.2 && (h.3 < best.3 || (h.3 == best.3 && h.0 < best.0)));
        if better {
            best = h;
        }
    }
    let (patch, mut transform, mut inliers, _) = (best.0, best.1, best.2, best.3);

    // Refinement: re-fit on the running inlier set. Weights combine the
    // match score with a Tukey factor of the current residual so that
    // near-threshold pairs stop biasing the estimate as it converges.
    for _ in 0..cfg.iterations {
        let mut members = Vec::new();
        let mut weights = Vec::new();
        for (k, c) in dense_corr.pairs.iter().enumerate() {
            let r = (transform.apply_point(&points_p[c.source]) - points_q[c.target]).norm();
            if r < cfg.acceptance_radius {
                let tukey = {
                    let u = r / cfg.acceptance_radius;
                    (1.0 - u * u).powi(2)
                };
                members.push(k);
                weights.push(c.score.max(0.0) * tukey);
            }
        }
        if members.len() < cfg.min_hypothesis_size {
            break;
        }
        let subset = CorrespondenceSet {
            pairs: members.iter().map(|&k| dense_corr.pairs[k]).collect(),
            level: dense_corr.level,
        };
        match weighted_procrustes(&subset, points_p, points_q, &weights) {
            Ok(t) => {
                let (count, _) = score(&t);
                transform = t;
                inliers = count;
            }
            Err(_) => break,
        }
    }

    Ok(LgrResult {
        transform,
        inlier_count: inliers,
        hypothesis_patch: patch,
    })
}

/// Fraction of correspondences within `tau` of their partner under the
/// ground-truth transform. Empty sets score 0.
pub fn inlier_ratio(
    corr: &CorrespondenceSet,
    points_p: &[Point3],
    points_q: &[Point3],
    t_gt: &RigidTransform,
    tau: f64,
) -> f64 {
    assert!(tau > 0.0);
    if corr.is_empty() {
        return 0.0;
    }
    let inliers = corr
        .pairs
        .iter()
        .filter(|c| (t_gt.apply_point(&points_p[c.source]) - points_q[c.target]).norm() < tau)
        .count();
    inliers as f64 / corr.len() as f64
}

/// Fraction of pairs whose inlier ratio exceeds the threshold.
pub fn feature_matching_recall(per_pair_ir: &[f64], threshold: f64) -> f64 {
    assert!(threshold > 0.0 && threshold < 1.0);
    if per_pair_ir.is_empty() {
        return 0.0;
    }
    let hits = per_pair_ir.iter().filter(|&&ir| ir > threshold).count();
    hits as f64 / per_pair_ir.len() as f64
}

/// RMSE of the predicted transform over ground-truth correspondences, and
/// whether it beats the success threshold.
pub fn rmse_and_rr(
    t_pred: &RigidTransform,
    gt_corr: &CorrespondenceSet,
    points_p: &[Point3],
    points_q: &[Point3],
    threshold: f64,
) -> Result<(f64, bool)> {
    if gt_corr.is_empty() {
        return Err(Error::UndefinedMetric(
            "RMSE needs ground-truth correspondences".into(),
        ));
    }
    let sum_sq: f64 = gt_corr
        .pairs
        .iter()
        .map(|c| {
            (t_pred.apply_point(&points_p[c.source]) - points_q[c.target]).norm_squared()
        })
        .sum();
    let rmse = (sum_sq / gt_corr.len() as f64).sqrt();
    Ok((rmse, rmse < threshold))
}

/// Relative rotation error in degrees and relative translation error in
/// meters.
pub fn rre_rte(t_pred: &RigidTransform, t_gt: &RigidTransform) -> (f64, f64) {
    let trace = (t_pred.rotation.transpose() * t_gt.rotation).trace();
    let cos = ((trace - 1.0) / 2.0).clamp(-1.0, 1.0);
    let rre = cos.acos().to_degrees();
    let rte = (t_pred.translation - t_gt.translation).norm();
    (rre, rte)
}

/// Outdoor benchmark success rule: RRE under 5 degrees and RTE under 2 m,
/// both strict.
pub fn kitti_success(rre_deg: f64, rte_m: f64) -> bool {
    rre_deg < 5.0 && rte_m < 2.0
}

/// Aggregate metrics over a benchmark run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricReport {
    /// Registration recall: fraction of pairs with RMSE under threshold.
    pub rr: f64,
    /// Mean inlier ratio.
    pub ir: f64,
    /// Feature matching recall at the IR threshold.
    pub fmr: f64,
    /// Mean relative rotation error over successful pairs, degrees.
    pub rre_deg: f64,
    /// Mean relative translation error over successful pairs, meters.
    pub rte_m: f64,
    pub pairs: usize,
}

impl MetricReport {
    /// Reduces per-pair records; RRE/RTE average over successful pairs only.
    pub fn aggregate(records: &[PairMetrics], fmr_threshold: f64) -> Self {
        let n = records.len();
        if n == 0 {
            return Self {
                rr: 0.0,
                ir: 0.0,
                fmr: 0.0,
                rre_deg: 0.0,
                rte_m: 0.0,
                pairs: 0,
            };
        }
        let irs: Vec<f64> = records.iter().map(|r| r.ir).collect();
        let successes: Vec<&PairMetrics> = records.iter().filter(|r| r.rr_success).collect();
        let mean_over = |f: &dyn Fn(&PairMetrics) -> f64| {
            if successes.is_empty() {
                0.0
            } else {
                successes.iter().map(|r| f(r)).sum::<f64>() / successes.len() as f64
            }
        };
        Self {
            rr: successes.len() as f64 / n as f64,
            ir: irs.iter().sum::<f64>() / n as f64,
            fmr: feature_matching_recall(&irs, fmr_threshold),
            rre_deg: mean_over(&|r| r.rre_deg),
            rte_m: mean_over(&|r| r.rte_m),
            pairs: n,
        }
    }
}

/// Per-pair evaluation record.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PairMetrics {
    pub ir: f64,
    pub rmse: f64,
    pub rr_success: bool,
    pub rre_deg: f64,
    pub rte_m: f64,
    pub kitti_success: bool,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matching::{Correspondence, CorrespondenceLevel};
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn identity_corr(n: usize, patch: Option<usize>) -> CorrespondenceSet {
        CorrespondenceSet {
            pairs: (0..n)
                .map(|i| Correspondence {
                    source: i,
                    target: i,
                    score: 1.0,
                    patch,
                })
                .collect(),
            level: CorrespondenceLevel::Dense,
        }
    }

    fn random_points(n: usize, seed: u64) -> Vec<Point3> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                Point3::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                )
            })
            .collect()
    }

    #[test]
    fn procrustes_identity_on_identical_sets() {
        let p = random_points(10, 220);
        let corr = identity_corr(10, None);
        let t = weighted_procrustes(&corr, &p, &p, &vec![1.0; 10]).unwrap();
        assert_relative_eq!(t.rotation, Matrix3::identity(), epsilon = 1e-12);
        assert!(t.translation.norm() < 1e-12);
    }

    #[test]
    fn procrustes_recovers_rotation() {
        let p = random_points(20, 221);
        let t_gt = RigidTransform::from_axis_angle(
            &Vector3::new(0.0, 0.0, 1.0),
            std::f64::consts::FRAC_PI_2,
            Vector3::new(0.5, -0.25, 1.0),
        );
        let q: Vec<Point3> = p.iter().map(|x| t_gt.apply_point(x)).collect();
        let corr = identity_corr(20, None);
        let t = weighted_procrustes(&corr, &p, &q, &vec![1.0; 20]).unwrap();
        assert_relative_eq!(t.rotation, t_gt.rotation, epsilon = 1e-9);
        assert_relative_eq!(t.translation, t_gt.translation, epsilon = 1e-9);
    }

    #[test]
    fn procrustes_weights_downweight_outliers() {
        let p = random_points(12, 222);
        let t_gt = RigidTransform::from_axis_angle(
            &Vector3::new(0.3, 1.0, 0.0),
            0.8,
            Vector3::new(0.1, 0.2, 0.3),
        );
        let mut q: Vec<Point3> = p.iter().map(|x| t_gt.apply_point(x)).collect();
        q[0] = Point3::new(50.0, -20.0, 30.0); // gross outlier
        let corr = identity_corr(12, None);
        let mut weights = vec![1.0; 12];
        weights[0] = 0.0;
        let t = weighted_procrustes(&corr, &p, &q, &weights).unwrap();
        assert_relative_eq!(t.rotation, t_gt.rotation, epsilon = 1e-9);
    }

    #[test]
    fn procrustes_mirrored_target_keeps_proper_rotation() {
        // Coplanar source; target mirrored through the plane normal tempts
        // a reflection.
        let mut p = Vec::new();
        let mut rng = ChaCha8Rng::seed_from_u64(223);
        for _ in 0..15 {
            p.push(Point3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                0.0,
            ));
        }
        let q: Vec<Point3> = p.iter().map(|x| Point3::new(x.y, x.x, 0.0)).collect();
        let corr = identity_corr(15, None);
        let t = weighted_procrustes(&corr, &p, &q, &vec![1.0; 15]).unwrap();
        let det = t.rotation.determinant();
        assert!((det - 1.0).abs() < 1e-9, "det = {det}");
        t.validate().unwrap();

        // Oracle: no rotation from a coarse axis-angle grid beats it.
        let residual = |t: &RigidTransform| -> f64 {
            corr.pairs
                .iter()
                .map(|c| (t.apply_point(&p[c.source]) - q[c.target]).norm_squared())
                .sum()
        };
        let best = residual(&t);
        let centroid_p = p.iter().fold(Vector3::zeros(), |s, x| s + x.coords) / 15.0;
        let centroid_q = q.iter().fold(Vector3::zeros(), |s, x| s + x.coords) / 15.0;
        for ax in 0..26 {
            for ang in 0..36 {
                let axis = Vector3::new(
                    ((ax % 3) as f64) - 1.0,
                    (((ax / 3) % 3) as f64) - 1.0,
                    (((ax / 9) % 3) as f64) - 1.0,
                );
                if axis.norm() < 1e-9 {
                    continue;
                }
                let angle = ang as f64 * 10f64.to_radians();
                let rot =
                    nalgebra::Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle)
                        .into_inner();
                let trans = centroid_q - rot * centroid_p;
                let cand = RigidTransform::new(rot, trans);
                assert!(residual(&cand) >= best - 1e-9);
            }
        }
    }

    #[test]
    fn procrustes_rejects_degenerate_inputs() {
        let p = random_points(2, 224);
        assert!(matches!(
            weighted_procrustes(&identity_corr(2, None), &p, &p, &[1.0, 1.0]),
            Err(Error::DegenerateSet(_))
        ));
        // Collinear points: rank 1 covariance.
        let line: Vec<Point3> = (0..5).map(|i| Point3::new(i as f64, 0.0, 0.0)).collect();
        assert!(matches!(
            weighted_procrustes(&identity_corr(5, None), &line, &line, &vec![1.0; 5]),
            Err(Error::DegenerateSet(_))
        ));
        // All-zero weights.
        assert!(matches!(
            weighted_procrustes(&identity_corr(5, None), &random_points(5, 225), &random_points(5, 226), &vec![0.0; 5]),
            Err(Error::DegenerateSet(_))
        ));
    }

    fn lgr_fixture(
        outlier_fraction: f64,
        seed: u64,
    ) -> (CorrespondenceSet, Vec<Point3>, Vec<Point3>, RigidTransform) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 200;
        let p = random_points(n, seed + 1);
        let t_gt = RigidTransform::from_axis_angle(
            &Vector3::new(0.2, -0.5, 1.0),
            0.9,
            Vector3::new(1.0, 0.5, -0.75),
        );
        let mut q: Vec<Point3> = p.iter().map(|x| t_gt.apply_point(x)).collect();
        let n_out = (n as f64 * outlier_fraction) as usize;
        for i in 0..n_out {
            q[i] = Point3::new(
                rng.gen_range(-5.0..5.0),
                rng.gen_range(-5.0..5.0),
                rng.gen_range(-5.0..5.0),
            );
        }
        // 10 patches of 20 points each.
        let pairs = (0..n)
            .map(|i| Correspondence {
                source: i,
                target: i,
                score: 1.0,
                patch: Some(i / 20),
            })
            .collect();
        (
            CorrespondenceSet {
                pairs,
                level: CorrespondenceLevel::Dense,
            },
            p,
            q,
            t_gt,
        )
    }

    #[test]
    fn lgr_exact_recovery_on_clean_data() {
        let (corr, p, q, t_gt) = lgr_fixture(0.0, 230);
        let cfg = LgrConfig::default();
        let result = lgr(&corr, &p, &q, &cfg).unwrap();
        let (rre, rte) = rre_rte(&result.transform, &t_gt);
        assert!(rre < 0.01, "rre = {rre}");
        assert!(rte < 1e-4, "rte = {rte}");
        assert_eq!(result.inlier_count, 200);
    }

    #[test]
    fn lgr_survives_twenty_percent_outliers() {
        let (corr, p, q, t_gt) = lgr_fixture(0.2, 231);
        let result = lgr(&corr, &p, &q, &LgrConfig::default()).unwrap();
        assert!(result.inlier_count >= 160, "inliers = {}", result.inlier_count);
        let (rre, _) = rre_rte(&result.transform, &t_gt);
        assert!(rre < 0.5, "rre = {rre}");

        // Oracle: exhaustive hypothesis scoring picks a transform that the
        // refined result must not fall behind by more than a rounding margin.
        let mut best_count = 0;
        for patch in 0..10 {
            let members: Vec<Correspondence> = corr
                .pairs
                .iter()
                .copied()
                .filter(|c| c.patch == Some(patch))
                .collect();
            let subset = CorrespondenceSet {
                pairs: members,
                level: CorrespondenceLevel::Dense,
            };
            if let Ok(t) = weighted_procrustes(&subset, &p, &q, &vec![1.0; subset.len()]) {
                let count = corr
                    .pairs
                    .iter()
                    .filter(|c| {
                        (t.apply_point(&p[c.source]) - q[c.target]).norm() < 0.05
                    })
                    .count();
                best_count = best_count.max(count);
            }
        }
        assert!(result.inlier_count >= best_count);
    }

    #[test]
    fn lgr_fails_when_patches_too_small() {
        let (mut corr, p, q, _) = lgr_fixture(0.0, 232);
        // Scatter every pair into its own patch.
        for (k, c) in corr.pairs.iter_mut().enumerate() {
            c.patch = Some(k);
        }
        assert!(matches!(
            lgr(&corr, &p, &q, &LgrConfig::default()),
            Err(Error::RegistrationFailed(_))
        ));
    }

    #[test]
    fn lgr_invariant_to_correspondence_order() {
        let (corr, p, q, _) = lgr_fixture(0.15, 233);
        let a = lgr(&corr, &p, &q, &LgrConfig::default()).unwrap();
        let mut shuffled = corr.clone();
        shuffled.pairs.reverse();
        let b = lgr(&shuffled, &p, &q, &LgrConfig::default()).unwrap();
        assert_eq!(a.transform, b.transform);
    }

    #[test]
    fn inlier_ratio_examples() {
        let p = random_points(10, 234);
        let t = RigidTransform::identity();
        let corr = identity_corr(10, None);
        assert_eq!(inlier_ratio(&corr, &p, &p, &t, 0.1), 1.0);

        // Half displaced by 2 tau.
        let mut q = p.clone();
        for item in q.iter_mut().take(5) {
            item.coords += Vector3::new(0.2, 0.0, 0.0);
        }
        assert_eq!(inlier_ratio(&corr, &p, &q, &t, 0.1), 0.5);

        let empty = CorrespondenceSet {
            pairs: vec![],
            level: CorrespondenceLevel::Dense,
        };
        assert_eq!(inlier_ratio(&empty, &p, &p, &t, 0.1), 0.0);
    }

    #[test]
    fn inlier_ratio_matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(235);
        let p = random_points(50, 236);
        let q = random_points(50, 237);
        let t = RigidTransform::from_axis_angle(
            &Vector3::new(1.0, 1.0, 0.0),
            0.3,
            Vector3::new(0.1, 0.0, 0.0),
        );
        let pairs: Vec<Correspondence> = (0..50)
            .map(|_| Correspondence {
                source: rng.gen_range(0..50),
                target: rng.gen_range(0..50),
                score: 1.0,
                patch: None,
            })
            .collect();
        let corr = CorrespondenceSet {
            pairs: pairs.clone(),
            level: CorrespondenceLevel::Dense,
        };
        let got = inlier_ratio(&corr, &p, &q, &t, 0.5);
        let expected = pairs
            .iter()
            .filter(|c| (t.apply_point(&p[c.source]) - q[c.target]).norm() < 0.5)
            .count() as f64
            / 50.0;
        assert_eq!(got, expected);
    }

    #[test]
    fn fmr_examples() {
        assert_eq!(feature_matching_recall(&[1.0, 1.0, 1.0], 0.05), 1.0);
        assert_eq!(feature_matching_recall(&[0.04, 0.06], 0.05), 0.5);
        assert_eq!(feature_matching_recall(&[], 0.05), 0.0);
    }

    #[test]
    fn rmse_examples() {
        let p = random_points(10, 238);
        let corr = identity_corr(10, None);
        let t = RigidTransform::identity();
        let (rmse, ok) = rmse_and_rr(&t, &corr, &p, &p, 0.2).unwrap();
        assert!(rmse < 1e-15);
        assert!(ok);

        let shifted = RigidTransform::new(Matrix3::identity(), Vector3::new(0.3, 0.0, 0.0));
        let (rmse, ok) = rmse_and_rr(&shifted, &corr, &p, &p, 0.2).unwrap();
        assert_relative_eq!(rmse, 0.3, epsilon = 1e-12);
        assert!(!ok);

        let empty = CorrespondenceSet {
            pairs: vec![],
            level: CorrespondenceLevel::Dense,
        };
        assert!(matches!(
            rmse_and_rr(&t, &empty, &p, &p, 0.2),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn rre_rte_examples_and_quaternion_oracle() {
        let id = RigidTransform::identity();
        assert_eq!(rre_rte(&id, &id), (0.0, 0.0));

        let ten_deg = RigidTransform::from_axis_angle(
            &Vector3::new(0.0, 0.0, 1.0),
            10f64.to_radians(),
            Vector3::zeros(),
        );
        let (rre, rte) = rre_rte(&ten_deg, &id);
        assert_relative_eq!(rre, 10.0, epsilon = 1e-9);
        assert_eq!(rte, 0.0);

        let mut rng = ChaCha8Rng::seed_from_u64(239);
        for _ in 0..100 {
            let mk = |rng: &mut ChaCha8Rng| {
                RigidTransform::from_axis_angle(
                    &Vector3::new(
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0f64),
                    ),
                    rng.gen_range(0.0..3.0),
                    Vector3::zeros(),
                )
            };
            let a = mk(&mut rng);
            let b = mk(&mut rng);
            let (rre, _) = rre_rte(&a, &b);
            // Oracle: quaternion rotation angle of the relative rotation.
            let rel = a.rotation.transpose() * b.rotation;
            let quat = nalgebra::UnitQuaternion::from_matrix(&rel);
            let expected = quat.angle().to_degrees();
            assert_relative_eq!(rre, expected, epsilon = 1e-9);
            // Symmetry.
            let (rre_ba, _) = rre_rte(&b, &a);
            assert_relative_eq!(rre, rre_ba, epsilon = 1e-9);
        }
    }

    #[test]
    fn kitti_rule() {
        assert!(kitti_success(4.9, 1.9));
        assert!(!kitti_success(5.0, 0.0));
        assert!(kitti_success(0.0, 0.0));
        assert!(!kitti_success(0.0, 2.0));
    }
}
