//! Superpoint score fusion, top-N correspondence selection, and dense point
//! matching via log-domain Sinkhorn normalization inside matched patches.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cloud::NodePartition;
use crate::error::{Error, Result};
use crate::FeatureMatrix;

/// What a score matrix holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreKind {
    /// Feature matching scores (normalized inner products).
    Ms,
    /// Salient score outer product.
    Ss,
    /// Elementwise product of the two.
    Combined,
}

/// Scores between source and target superpoints.
#[derive(Debug, Clone)]
pub struct ScoreMatrix {
    pub data: DMatrix<f64>,
    pub kind: ScoreKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CorrespondenceLevel {
    Super,
    Dense,
}

/// A scored index pair, optionally tagged with the patch correspondence it
/// came from (dense level only).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correspondence {
    pub source: usize,
    pub target: usize,
    pub score: f64,
    pub patch: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorrespondenceSet {
    pub pairs: Vec<Correspondence>,
    pub level: CorrespondenceLevel,
}

impl CorrespondenceSet {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Matching scores `MS(i,j) = <f_i / |f_i|, g_j / |g_j|>`. Zero-norm rows
/// score zero against everything.
pub fn feature_match_scores(f_p: &FeatureMatrix, f_q: &FeatureMatrix) -> ScoreMatrix {
    assert_eq!(f_p.ncols(), f_q.ncols(), "feature widths must match");
    let normalize = |f: &FeatureMatrix| {
        let mut out = f.clone();
        for mut row in out.row_iter_mut() {
            let norm = row.norm();
            if norm > 0.0 {
                row /= norm;
            } else {
                row.fill(0.0);
            }
        }
        out
    };
    let np = normalize(f_p);
    let nq = normalize(f_q);
    ScoreMatrix {
        data: np * nq.transpose(),
        kind: ScoreKind::Ms,
    }
}

/// Dual-softmax normalization: the elementwise product of the row-wise and
/// column-wise softmax of `scores / temperature`. Repeated structures share
/// their marginal mass, so many-to-many blocks stop crowding out unique
/// pairs in a global top-k.
pub fn dual_softmax(scores: &ScoreMatrix, temperature: f64) -> ScoreMatrix {
    assert!(temperature > 0.0);
    let scaled = &scores.data / temperature;
    let mut row = scaled.clone();
    crate::features::softmax_rows(&mut row);
    let mut col_t = scaled.transpose();
    crate::features::softmax_rows(&mut col_t);
    ScoreMatrix {
        data: row.component_mul(&col_t.transpose()),
        kind: scores.kind,
    }
}

/// Elementwise product `S = MS .* SS`.
pub fn combined_scores(ms: &ScoreMatrix, ss: &DMatrix<f64>) -> Result<ScoreMatrix> {
    if ms.data.shape() != ss.shape() {
        return Err(Error::InvalidShape(format!(
            "score shapes {:?} vs {:?}",
            ms.data.shape(),
            ss.shape()
        )));
    }
    Ok(ScoreMatrix {
        data: ms.data.component_mul(ss),
        kind: ScoreKind::Combined,
    })
}

/// The `n_c` highest-scoring cells globally, ties broken by lower source
/// index then lower target index.
pub fn topk_correspondences(s: &ScoreMatrix, n_c: usize) -> CorrespondenceSet {
    assert!(n_c >= 1);
    let (rows, cols) = s.data.shape();
    let mut cells: Vec<(f64, usize, usize)> = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        for j in 0..cols {
            cells.push((s.data[(i, j)], i, j));
        }
    }
    cells.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .unwrap()
            .then(a.1.cmp(&b.1))
            .then(a.2.cmp(&b.2))
    });
    cells.truncate(n_c);
    CorrespondenceSet {
        pairs: cells
            .into_iter()
            .map(|(score, source, target)| Correspondence {
                source,
                target,
                score,
                patch: None,
            })
            .collect(),
        level: CorrespondenceLevel::Super,
    }
}

/// Log-domain Sinkhorn normalization. One iteration normalizes rows to sum
/// one, then columns. With a dustbin, the matrix gains one slack row and
/// column at `dustbin_score` and the non-slack block is returned.
pub fn sinkhorn(
    scores: &DMatrix<f64>,
    iters: usize,
    with_dustbin: bool,
    dustbin_score: f64,
) -> Result<DMatrix<f64>> {
    assert!(iters >= 1);
    if scores.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("sinkhorn scores must be finite".into()));
    }
    let (m, n) = scores.shape();
    let (rows, cols) = if with_dustbin { (m + 1, n + 1) } else { (m, n) };
    let mut log_p = DMatrix::from_element(rows, cols, dustbin_score);
    log_p.view_mut((0, 0), (m, n)).copy_from(scores);

    for _ in 0..iters {
        for i in 0..rows {
            let lse = log_sum_exp(log_p.row(i).iter().copied());
            for j in 0..cols {
                log_p[(i, j)] -= lse;
            }
        }
        for j in 0..cols {
            let lse = log_sum_exp(log_p.column(j).iter().copied());
            for i in 0..rows {
                log_p[(i, j)] -= lse;
            }
        }
    }
    let block = log_p.view((0, 0), (m, n)).map(f64::exp);
    Ok(block)
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let sum: f64 = values.map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Settings for dense matching inside matched patches.
#[derive(Debug, Clone, Copy)]
pub struct DenseMatchConfig {
    pub sinkhorn_iters: usize,
    pub dustbin_score: f64,
    /// Minimum assignment mass for a retained pair.
    pub confidence_floor: f64,
    /// Cosine scores are divided by this before Sinkhorn.
    pub temperature: f64,
}

impl Default for DenseMatchConfig {
    fn default() -> Self {
        Self {
            sinkhorn_iters: 100,
            dustbin_score: 0.0,
            confidence_floor: 0.05,
            temperature: 1.0,
        }
    }
}

/// Dense correspondences: per matched patch pair, Sinkhorn with dustbin over
/// the two dense neighborhoods, mutual-maximum extraction with a confidence
/// floor, then a global deduplication keeping the highest score.
pub fn dense_match(
    patch_corr: &CorrespondenceSet,
    partition_p: &NodePartition,
    partition_q: &NodePartition,
    f_dense_p: &FeatureMatrix,
    f_dense_q: &FeatureMatrix,
    cfg: &DenseMatchConfig,
) -> CorrespondenceSet {
    assert_eq!(patch_corr.level, CorrespondenceLevel::Super);
    let per_patch: Vec<Vec<Correspondence>> = patch_corr
        .pairs
        .par_iter()
        .enumerate()
        .map(|(patch_idx, patch)| {
            let members_p = &partition_p.neighborhoods[patch.source];
            let members_q = &partition_q.neighborhoods[patch.target];
            if members_p.is_empty() || members_q.is_empty() {
                return Vec::new();
            }
            let local =
                local_cosine_scores(f_dense_p, f_dense_q, members_p, members_q) / cfg.temperature;
            let assignment = sinkhorn(&local, cfg.sinkhorn_iters, true, cfg.dustbin_score)
                .expect("local scores are finite");
            mutual_max_pairs(&assignment, cfg.confidence_floor)
                .into_iter()
                .map(|(a, b, score)| Correspondence {
                    source: members_p[a],
                    target: members_q[b],
                    score,
                    patch: Some(patch_idx),
                })
                .collect()
        })
        .collect();

    // Union with deduplication: highest score wins, ties keep the earlier
    // patch for determinism.
    let mut best: BTreeMap<(usize, usize), Correspondence> = BTreeMap::new();
    for pairs in per_patch {
        for c in pairs {
            best.entry((c.source, c.target))
                .and_modify(|existing| {
                    if c.score > existing.score {
                        *existing = c;
                    }
                })
                .or_insert(c);
        }
    }
    CorrespondenceSet {
        pairs: best.into_values().collect(),
        level: CorrespondenceLevel::Dense,
    }
}

fn local_cosine_scores(
    f_p: &FeatureMatrix,
    f_q: &FeatureMatrix,
    members_p: &[usize],
    members_q: &[usize],
) -> DMatrix<f64> {
    let d = f_p.ncols();
    let row_unit = |f: &FeatureMatrix, idx: usize| {
        let row = f.row(idx).into_owned();
        let norm = row.norm();
        if norm > 0.0 {
            row / norm
        } else {
            nalgebra::RowDVector::zeros(d)
        }
    };
    let rows_p: Vec<_> = members_p.iter().map(|&i| row_unit(f_p, i)).collect();
    let rows_q: Vec<_> = members_q.iter().map(|&j| row_unit(f_q, j)).collect();
    DMatrix::from_fn(members_p.len(), members_q.len(), |a, b| {
        rows_p[a].dot(&rows_q[b])
    })
}

/// Pairs (a, b) that are each other's argmax in the assignment matrix with
/// mass at or above the floor. Argmax ties go to the lower index.
pub fn mutual_max_pairs(assignment: &DMatrix<f64>, floor: f64) -> Vec<(usize, usize, f64)> {
    let (m, n) = assignment.shape();
    let row_argmax: Vec<usize> = (0..m)
        .map(|i| {
            (0..n)
                .max_by(|&a, &b| {
                    assignment[(i, a)]
                        .partial_cmp(&assignment[(i, b)])
                        .unwrap()
                        .then(b.cmp(&a))
                })
                .unwrap()
        })
        .collect();
    let col_argmax: Vec<usize> = (0..n)
        .map(|j| {
            (0..m)
                .max_by(|&a, &b| {
                    assignment[(a, j)]
                        .partial_cmp(&assignment[(b, j)])
                        .unwrap()
                        .then(b.cmp(&a))
                })
                .unwrap()
        })
        .collect();
    (0..m)
        .filter_map(|i| {
            let j = row_argmax[i];
            (col_argmax[j] == i && assignment[(i, j)] >= floor)
                .then(|| (i, j, assignment[(i, j)]))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::{point_to_node, CloudLevel, PointCloud};
    use crate::Point3;
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_features(n: usize, d: usize, seed: u64) -> FeatureMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        FeatureMatrix::from_fn(n, d, |_, _| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn identical_and_orthogonal_features() {
        let mut f = FeatureMatrix::zeros(1, 4);
        f[(0, 0)] = 2.0;
        let ms = feature_match_scores(&f, &f);
        assert_relative_eq!(ms.data[(0, 0)], 1.0, epsilon = 1e-15);

        let mut g = FeatureMatrix::zeros(1, 4);
        g[(0, 1)] = 3.0;
        let ms = feature_match_scores(&f, &g);
        assert_relative_eq!(ms.data[(0, 0)], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn zero_norm_row_scores_zero() {
        let f = FeatureMatrix::zeros(2, 4);
        let g = random_features(3, 4, 210);
        let ms = feature_match_scores(&f, &g);
        assert!(ms.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn match_scores_against_double_loop_oracle() {
        let f = random_features(5, 8, 211);
        let g = random_features(7, 8, 212);
        let ms = feature_match_scores(&f, &g);
        for i in 0..5 {
            for j in 0..7 {
                let fi = f.row(i).into_owned();
                let gj = g.row(j).into_owned();
                let expected = fi.dot(&gj) / (fi.norm() * gj.norm());
                assert_relative_eq!(ms.data[(i, j)], expected, epsilon = 1e-12);
                assert!(ms.data[(i, j)].abs() <= 1.0 + 1e-12);
            }
        }
    }

    #[test]
    fn combined_scores_elementwise() {
        let ms = feature_match_scores(&random_features(3, 4, 213), &random_features(4, 4, 214));
        let ones = DMatrix::from_element(3, 4, 1.0);
        let s = combined_scores(&ms, &ones).unwrap();
        assert_eq!(s.data, ms.data);

        let mut ss = ones.clone();
        ss[(1, 2)] = 0.0;
        let s = combined_scores(&ms, &ss).unwrap();
        assert_eq!(s.data[(1, 2)], 0.0);
        for i in 0..3 {
            for j in 0..4 {
                assert_eq!(s.data[(i, j)], ms.data[(i, j)] * ss[(i, j)]);
            }
        }

        let bad = DMatrix::zeros(2, 2);
        assert!(matches!(
            combined_scores(&ms, &bad),
            Err(Error::InvalidShape(_))
        ));
    }

    #[test]
    fn topk_basic() {
        let s = ScoreMatrix {
            data: DMatrix::from_row_slice(2, 2, &[0.9, 0.1, 0.2, 0.8]),
            kind: ScoreKind::Combined,
        };
        let top = topk_correspondences(&s, 2);
        assert_eq!(top.pairs[0].source, 0);
        assert_eq!(top.pairs[0].target, 0);
        assert_eq!(top.pairs[1].source, 1);
        assert_eq!(top.pairs[1].target, 1);
    }

    #[test]
    fn topk_returns_all_when_k_exceeds_cells() {
        let s = ScoreMatrix {
            data: DMatrix::from_element(3, 3, 0.5),
            kind: ScoreKind::Combined,
        };
        assert_eq!(topk_correspondences(&s, 100).len(), 9);
    }

    #[test]
    fn topk_matches_full_sort_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(215);
        let data = DMatrix::from_fn(50, 60, |_, _| {
            // Coarse values force plenty of ties.
            (rng.gen_range(0..20) as f64) / 20.0
        });
        let s = ScoreMatrix {
            data: data.clone(),
            kind: ScoreKind::Combined,
        };
        let got = topk_correspondences(&s, 256);

        let mut all: Vec<(f64, usize, usize)> = Vec::new();
        for i in 0..50 {
            for j in 0..60 {
                all.push((data[(i, j)], i, j));
            }
        }
        all.sort_by(|a, b| {
            b.0.partial_cmp(&a.0)
                .unwrap()
                .then(a.1.cmp(&b.1))
                .then(a.2.cmp(&b.2))
        });
        for (k, pair) in got.pairs.iter().enumerate() {
            assert_eq!((pair.source, pair.target), (all[k].1, all[k].2));
        }
    }

    #[test]
    fn sinkhorn_one_by_one() {
        let s = DMatrix::from_element(1, 1, -3.7);
        let p = sinkhorn(&s, 5, false, 0.0).unwrap();
        assert_relative_eq!(p[(0, 0)], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn sinkhorn_uniform_square() {
        let s = DMatrix::from_element(4, 4, 0.3);
        let p = sinkhorn(&s, 10, false, 0.0).unwrap();
        for v in p.iter() {
            assert_relative_eq!(*v, 0.25, epsilon = 1e-12);
        }
    }

    #[test]
    fn sinkhorn_marginals_and_direct_iteration_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(216);
        let s = DMatrix::from_fn(4, 4, |_, _| rng.gen_range(-2.0..2.0));
        let p = sinkhorn(&s, 100, false, 0.0).unwrap();
        for i in 0..4 {
            let row_sum: f64 = p.row(i).iter().sum();
            let col_sum: f64 = p.column(i).iter().sum();
            assert!((row_sum - 1.0).abs() < 1e-6);
            assert!((col_sum - 1.0).abs() < 1e-6);
        }

        // Oracle: direct probability-domain scaling iterations.
        let mut q = s.map(f64::exp);
        for _ in 0..100 {
            for i in 0..4 {
                let sum: f64 = q.row(i).iter().sum();
                for j in 0..4 {
                    q[(i, j)] /= sum;
                }
            }
            for j in 0..4 {
                let sum: f64 = q.column(j).iter().sum();
                for i in 0..4 {
                    q[(i, j)] /= sum;
                }
            }
        }
        assert_relative_eq!(p, q, epsilon = 1e-10);
    }

    #[test]
    fn sinkhorn_rejects_non_finite() {
        let mut s = DMatrix::zeros(2, 2);
        s[(0, 0)] = f64::NAN;
        assert!(matches!(
            sinkhorn(&s, 10, false, 0.0),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn sinkhorn_nonnegative_and_dustbin_block_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(217);
        let s = DMatrix::from_fn(3, 5, |_, _| rng.gen_range(-1.0..4.0));
        let p = sinkhorn(&s, 50, true, 0.1).unwrap();
        assert_eq!(p.shape(), (3, 5));
        assert!(p.iter().all(|&v| v >= 0.0));
    }

    fn two_patch_fixture() -> (
        CorrespondenceSet,
        NodePartition,
        NodePartition,
        FeatureMatrix,
        FeatureMatrix,
    ) {
        // Two patches per frame, two dense points each, exactly matching
        // features across frames.
        let dense_p = PointCloud::new(
            vec![
                Point3::new(0.0, 0.0, 0.0),
                Point3::new(0.1, 0.0, 0.0),
                Point3::new(5.0, 0.0, 0.0),
                Point3::new(5.1, 0.0, 0.0),
            ],
            CloudLevel::Dense,
        );
        let supers_p = PointCloud::new(
            vec![Point3::new(0.05, 0.0, 0.0), Point3::new(5.05, 0.0, 0.0)],
            CloudLevel::Super,
        );
        let part_p = point_to_node(&dense_p, &supers_p);
        let part_q = point_to_node(&dense_p, &supers_p);
        let mut f = FeatureMatrix::zeros(4, 6);
        f[(0, 0)] = 1.0;
        f[(1, 1)] = 1.0;
        f[(2, 2)] = 1.0;
        f[(3, 3)] = 1.0;
        let corr = CorrespondenceSet {
            pairs: vec![
                Correspondence {
                    source: 0,
                    target: 0,
                    score: 1.0,
                    patch: None,
                },
                Correspondence {
                    source: 1,
                    target: 1,
                    score: 0.9,
                    patch: None,
                },
            ],
            level: CorrespondenceLevel::Super,
        };
        (corr, part_p, part_q, f.clone(), f)
    }

    #[test]
    fn dense_match_identity_on_identical_clouds() {
        let (corr, part_p, part_q, fp, fq) = two_patch_fixture();
        let got = dense_match(&corr, &part_p, &part_q, &fp, &fq, &DenseMatchConfig::default());
        assert!(!got.is_empty());
        for pair in &got.pairs {
            assert_eq!(pair.source, pair.target);
            assert!(pair.patch.is_some());
        }
    }

    #[test]
    fn dense_match_single_point_patches() {
        let dense = PointCloud::new(
            vec![Point3::new(0.0, 0.0, 0.0), Point3::new(9.0, 0.0, 0.0)],
            CloudLevel::Dense,
        );
        let supers = dense.clone().with_level(CloudLevel::Super);
        let part = point_to_node(&dense, &supers);
        let mut f = FeatureMatrix::zeros(2, 4);
        f[(0, 0)] = 1.0;
        f[(1, 1)] = 1.0;
        let corr = CorrespondenceSet {
            pairs: vec![Correspondence {
                source: 0,
                target: 0,
                score: 1.0,
                patch: None,
            }],
            level: CorrespondenceLevel::Super,
        };
        let got = dense_match(&corr, &part, &part, &f, &f, &DenseMatchConfig::default());
        assert_eq!(got.len(), 1);
        assert_eq!(got.pairs[0].source, 0);
        assert_eq!(got.pairs[0].target, 0);
    }

    #[test]
    fn dense_match_agrees_with_exhaustive_oracle() {
        let (corr, part_p, part_q, fp, fq) = two_patch_fixture();
        let cfg = DenseMatchConfig::default();
        let got = dense_match(&corr, &part_p, &part_q, &fp, &fq, &cfg);

        // Oracle: for each patch pair, run the same sinkhorn and extract
        // mutual maxima by exhaustive scan.
        let mut expected: Vec<(usize, usize)> = Vec::new();
        for patch in &corr.pairs {
            let mp = &part_p.neighborhoods[patch.source];
            let mq = &part_q.neighborhoods[patch.target];
            let local = local_cosine_scores(&fp, &fq, mp, mq);
            let a = sinkhorn(&local, cfg.sinkhorn_iters, true, cfg.dustbin_score).unwrap();
            for i in 0..mp.len() {
                for j in 0..mq.len() {
                    let best_in_row = (0..mq.len()).all(|j2| {
                        a[(i, j)] > a[(i, j2)] || j2 == j
                    });
                    let best_in_col = (0..mp.len()).all(|i2| {
                        a[(i, j)] > a[(i2, j)] || i2 == i
                    });
                    if best_in_row && best_in_col && a[(i, j)] >= cfg.confidence_floor {
                        expected.push((mp[i], mq[j]));
                    }
                }
            }
        }
        expected.sort_unstable();
        expected.dedup();
        let mut got_pairs: Vec<(usize, usize)> =
            got.pairs.iter().map(|c| (c.source, c.target)).collect();
        got_pairs.sort_unstable();
        assert_eq!(got_pairs, expected);
    }

    #[test]
    fn dense_match_has_no_duplicates_and_stays_in_patches() {
        let (corr, part_p, part_q, fp, fq) = two_patch_fixture();
        let got = dense_match(&corr, &part_p, &part_q, &fp, &fq, &DenseMatchConfig::default());
        let mut seen = std::collections::BTreeSet::new();
        for pair in &got.pairs {
            assert!(seen.insert((pair.source, pair.target)), "duplicate pair");
            let patch = &corr.pairs[pair.patch.unwrap()];
            assert!(part_p.neighborhoods[patch.source].contains(&pair.source));
            assert!(part_q.neighborhoods[patch.target].contains(&pair.target));
        }
    }
}
