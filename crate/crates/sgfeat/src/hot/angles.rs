//! Triangle geometry for the high-order transformer: anchor selection,
//! interior angles, sinusoidal angle embeddings, and the pooled per-pair
//! angle embedding tables.

use std::f64::consts::PI;

use nalgebra::{DMatrix, RowDVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::features::attention::interleaved_sinusoid;
use crate::{Point3, PointCloud, Vector3};

/// Distances below this are treated as coincident points.
const COINCIDENT_EPS: f64 = 1e-12;

/// Per-point farthest-K anchor lists over a region.
#[derive(Debug, Clone)]
pub struct AnchorSet {
    /// Anchor slot indices per region point, farthest first.
    pub anchors: Vec<Vec<usize>>,
}

impl AnchorSet {
    /// Selects the farthest `k` anchors for every region point. Fails with
    /// `EmptyAnchors` on singleton regions.
    pub fn build(region: &PointCloud, k: usize) -> Result<Self> {
        if region.len() < 2 {
            return Err(Error::EmptyAnchors);
        }
        let anchors = (0..region.len())
            .map(|i| select_anchors(region, i, k).expect("region has >= 2 points"))
            .collect();
        Ok(Self { anchors })
    }
}

/// The `k` region indices farthest from point `i` (never `i` itself),
/// ordered by descending distance with ties to the lower index.
pub fn select_anchors(region: &PointCloud, i: usize, k: usize) -> Result<Vec<usize>> {
    assert!(k >= 1, "anchor count must be >= 1");
    if region.len() < 2 {
        return Err(Error::EmptyAnchors);
    }
    let center = region.points()[i];
    let mut ranked: Vec<(f64, usize)> = region
        .points()
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(j, p)| ((p - center).norm_squared(), j))
        .collect();
    ranked.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    ranked.truncate(k);
    Ok(ranked.into_iter().map(|(_, j)| j).collect())
}

/// Interior angles of the triangle (a, b, c), one per vertex in argument
/// order, plus a degeneracy flag. Collinear triples put pi at the middle
/// vertex; coincident pairs take the fixed rule (0, 0, pi).
pub fn triangle_angles(a: &Point3, b: &Point3, c: &Point3) -> (f64, f64, f64, bool) {
    let ab = b - a;
    let ac = c - a;
    let bc = c - b;
    if ab.norm() < COINCIDENT_EPS || ac.norm() < COINCIDENT_EPS || bc.norm() < COINCIDENT_EPS {
        return (0.0, 0.0, PI, true);
    }
    let cross = ab.cross(&ac).norm();
    if cross <= COINCIDENT_EPS * ab.norm() * ac.norm() {
        if ab.dot(&ac) < 0.0 {
            return (PI, 0.0, 0.0, true);
        }
        if (-ab).dot(&bc) < 0.0 {
            return (0.0, PI, 0.0, true);
        }
        return (0.0, 0.0, PI, true);
    }
    let alpha_a = angle_between(&ab, &ac);
    let alpha_b = angle_between(&(-ab), &bc);
    let alpha_c = angle_between(&(-ac), &(-bc));
    (alpha_a, alpha_b, alpha_c, false)
}

fn angle_between(u: &Vector3, v: &Vector3) -> f64 {
    u.cross(v).norm().atan2(u.dot(v))
}

/// Interleaved sine/cosine features of an angle in [0, pi].
pub fn sin_embed_angle(theta: f64, d_t: usize, sigma_a: f64) -> RowDVector<f64> {
    debug_assert!((-1e-12..=PI + 1e-12).contains(&theta), "angle out of range");
    interleaved_sinusoid(theta, d_t, sigma_a)
}

/// Pooled, projected angle embeddings of one ordered region pair (i, j):
/// one slot per triangle angle (at i, at j, at the anchor).
#[derive(Debug, Clone)]
pub struct AngleEmbedding {
    /// Pool of `f_sin(angle at i) W_A1` over anchors.
    pub at_first: RowDVector<f64>,
    /// Pool of `f_sin(angle at j) W_A2`.
    pub at_second: RowDVector<f64>,
    /// Pool of `f_sin(angle at anchor) W_A3`.
    pub at_anchor: RowDVector<f64>,
}

/// Angle projection weights, one matrix per triangle-angle slot.
pub type AngleProjections = [DMatrix<f64>; 3];

/// Pools the three projected angle embeddings of the anchor triangles of
/// pair (i, j). `anchors` must hold the query point's anchor list.
pub fn angle_pool(
    region: &PointCloud,
    anchors: &AnchorSet,
    i: usize,
    j: usize,
    wa: &AngleProjections,
    sigma_a: f64,
    pool_mean: bool,
) -> Result<AngleEmbedding> {
    let list = &anchors.anchors[i];
    if list.is_empty() {
        return Err(Error::EmptyAnchors);
    }
    Ok(pooled_pair(
        region.points(),
        list,
        i,
        j,
        wa,
        sigma_a,
        pool_mean,
    ))
}

fn pooled_pair(
    points: &[Point3],
    anchors: &[usize],
    i: usize,
    j: usize,
    wa: &AngleProjections,
    sigma_a: f64,
    pool_mean: bool,
) -> AngleEmbedding {
    let d = wa[0].nrows();
    let init = if pool_mean { 0.0 } else { f64::NEG_INFINITY };
    let mut acc = [
        RowDVector::from_element(d, init),
        RowDVector::from_element(d, init),
        RowDVector::from_element(d, init),
    ];
    for &y in anchors {
        let (at_i, at_j, at_y, _) = triangle_angles(&points[i], &points[j], &points[y]);
        for (slot, theta) in [at_i, at_j, at_y].into_iter().enumerate() {
            let projected = sin_embed_angle(theta, d, sigma_a) * &wa[slot];
            if pool_mean {
                acc[slot] += projected;
            } else {
                acc[slot].zip_apply(&projected, |a, b| *a = a.max(b));
            }
        }
    }
    if pool_mean {
        let inv = 1.0 / anchors.len() as f64;
        for slot in &mut acc {
            *slot *= inv;
        }
    }
    let [at_first, at_second, at_anchor] = acc;
    AngleEmbedding {
        at_first,
        at_second,
        at_anchor,
    }
}

/// Pooled angle embeddings for every ordered pair of a region, stored as an
/// `(n*n) x 3d` matrix with blocks `[at_first | at_second | at_anchor]` in
/// row-major pair order. Geometry-only: built once and reused by every
/// attention layer.
#[derive(Debug, Clone)]
pub struct AngleTable {
    pub n: usize,
    pub d: usize,
    pub data: DMatrix<f64>,
}

impl AngleTable {
    pub fn build(
        region: &PointCloud,
        anchors: &AnchorSet,
        wa: &AngleProjections,
        sigma_a: f64,
        pool_mean: bool,
    ) -> Self {
        let n = region.len();
        let d = wa[0].nrows();
        let rows: Vec<RowDVector<f64>> = (0..n * n)
            .into_par_iter()
            .map(|pair| {
                let (i, j) = (pair / n, pair % n);
                let e = pooled_pair(
                    region.points(),
                    &anchors.anchors[i],
                    i,
                    j,
                    wa,
                    sigma_a,
                    pool_mean,
                );
                let mut row = RowDVector::zeros(3 * d);
                row.view_mut((0, 0), (1, d)).copy_from(&e.at_first);
                row.view_mut((0, d), (1, d)).copy_from(&e.at_second);
                row.view_mut((0, 2 * d), (1, d)).copy_from(&e.at_anchor);
                row
            })
            .collect();
        let mut data = DMatrix::zeros(n * n, 3 * d);
        for (r, row) in rows.into_iter().enumerate() {
            data.set_row(r, &row);
        }
        Self { n, d, data }
    }

    /// Sum of the three angle-slot blocks, the input of the self-attention
    /// bias projection.
    pub fn slot_sum(&self) -> DMatrix<f64> {
        let mut sum = self.data.view((0, 0), (self.n * self.n, self.d)).into_owned();
        sum += self.data.view((0, self.d), (self.n * self.n, self.d));
        sum += self.data.view((0, 2 * self.d), (self.n * self.n, self.d));
        sum
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::{apply_transform, CloudLevel};
    use crate::RigidTransform;
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn cloud_of(points: Vec<Point3>) -> PointCloud {
        PointCloud::new(points, CloudLevel::Super)
    }

    fn random_region(n: usize, seed: u64) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        cloud_of(
            (0..n)
                .map(|_| {
                    Point3::new(
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                    )
                })
                .collect(),
        )
    }

    #[test]
    fn anchors_on_a_line() {
        let region = cloud_of((0..10).map(|i| Point3::new(i as f64, 0.0, 0.0)).collect());
        assert_eq!(select_anchors(&region, 0, 2).unwrap(), vec![9, 8]);
    }

    #[test]
    fn anchors_cap_at_region_size() {
        let region = random_region(5, 100);
        let got = select_anchors(&region, 2, 64).unwrap();
        assert_eq!(got.len(), 4);
        assert!(!got.contains(&2));
    }

    #[test]
    fn anchors_match_full_sort_oracle() {
        let region = random_region(200, 101);
        for i in [0usize, 37, 120, 199] {
            for k in [1usize, 5, 64, 300] {
                let got = select_anchors(&region, i, k).unwrap();
                // Oracle: full sort by (descending distance, ascending index).
                let center = region.points()[i];
                let mut all: Vec<(f64, usize)> = region
                    .points()
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| j != i)
                    .map(|(j, p)| ((p - center).norm_squared(), j))
                    .collect();
                all.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
                let expected: Vec<usize> =
                    all.into_iter().take(k).map(|(_, j)| j).collect();
                assert_eq!(got, expected);
            }
        }
    }

    #[test]
    fn singleton_region_yields_empty_anchors() {
        let region = cloud_of(vec![Point3::origin()]);
        assert!(matches!(
            select_anchors(&region, 0, 3),
            Err(Error::EmptyAnchors)
        ));
    }

    #[test]
    fn equilateral_triangle_angles() {
        let (a, b, c, degenerate) = triangle_angles(
            &Point3::new(0.0, 0.0, 0.0),
            &Point3::new(1.0, 0.0, 0.0),
            &Point3::new(0.5, 3f64.sqrt() / 2.0, 0.0),
        );
        assert!(!degenerate);
        assert_relative_eq!(a, PI / 3.0, epsilon = 1e-12);
        assert_relative_eq!(b, PI / 3.0, epsilon = 1e-12);
        assert_relative_eq!(c, PI / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn right_triangle_angles() {
        let (a, b, c, degenerate) = triangle_angles(
            &Point3::new(0.0, 0.0, 0.0),
            &Point3::new(1.0, 0.0, 0.0),
            &Point3::new(0.0, 1.0, 0.0),
        );
        assert!(!degenerate);
        assert_relative_eq!(a, PI / 2.0, epsilon = 1e-12);
        assert_relative_eq!(b, PI / 4.0, epsilon = 1e-12);
        assert_relative_eq!(c, PI / 4.0, epsilon = 1e-12);
    }

    #[test]
    fn collinear_flags_middle_vertex() {
        let (a, b, c, degenerate) = triangle_angles(
            &Point3::new(0.0, 0.0, 0.0),
            &Point3::new(1.0, 0.0, 0.0),
            &Point3::new(2.0, 0.0, 0.0),
        );
        assert!(degenerate);
        assert_eq!((a, b, c), (0.0, PI, 0.0));
    }

    #[test]
    fn coincident_pair_rule() {
        let p = Point3::new(1.0, 2.0, 3.0);
        let (a, b, c, degenerate) = triangle_angles(&p, &p, &Point3::new(4.0, 5.0, 6.0));
        assert!(degenerate);
        assert_eq!((a, b, c), (0.0, 0.0, PI));
    }

    #[test]
    fn angle_sum_is_pi() {
        let mut rng = ChaCha8Rng::seed_from_u64(102);
        for _ in 0..500 {
            let mut p = || {
                Point3::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                )
            };
            let (a, b, c, _) = triangle_angles(&p(), &p(), &p());
            assert!((a + b + c - PI).abs() < 1e-9);
        }
    }

    #[test]
    fn angles_invariant_under_rigid_transform() {
        let region = random_region(3, 103);
        let t = RigidTransform::from_axis_angle(
            &Vector3::new(0.5, -1.0, 0.25),
            2.0,
            Vector3::new(10.0, -3.0, 1.0),
        );
        let moved = apply_transform(&region, &t);
        let (a0, b0, c0, _) =
            triangle_angles(&region.points()[0], &region.points()[1], &region.points()[2]);
        let (a1, b1, c1, _) =
            triangle_angles(&moved.points()[0], &moved.points()[1], &moved.points()[2]);
        assert_relative_eq!(a0, a1, epsilon = 1e-8);
        assert_relative_eq!(b0, b1, epsilon = 1e-8);
        assert_relative_eq!(c0, c1, epsilon = 1e-8);
    }

    #[test]
    fn embed_at_zero() {
        let v = sin_embed_angle(0.0, 8, 2.0);
        for m in 0..4 {
            assert_eq!(v[2 * m], 0.0);
            assert_eq!(v[2 * m + 1], 1.0);
        }
    }

    #[test]
    fn embed_matches_scalar_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(104);
        for _ in 0..100 {
            let theta = rng.gen_range(0.0..PI);
            let d = 16;
            let sigma = 2.0;
            let got = sin_embed_angle(theta, d, sigma);
            for m in 0..d / 2 {
                let arg = theta / sigma.powf(2.0 * m as f64 / d as f64);
                assert!((got[2 * m] - arg.sin()).abs() < 1e-15);
                assert!((got[2 * m + 1] - arg.cos()).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn embed_injective_on_angle_range() {
        // The first (sin, cos) pair pins the angle uniquely on [0, pi].
        let a = sin_embed_angle(0.3, 8, 2.0);
        let b = sin_embed_angle(PI - 0.3, 8, 2.0);
        assert!((a[0] - b[0]).abs() < 1e-15); // same sine
        assert!((a[1] - b[1]).abs() > 0.1); // cosine separates them
    }

    fn seeded_projections(d: usize, seed: u64) -> AngleProjections {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        [
            crate::features::attention::orthogonal_matrix(d, &mut rng),
            crate::features::attention::orthogonal_matrix(d, &mut rng),
            crate::features::attention::orthogonal_matrix(d, &mut rng),
        ]
    }

    #[test]
    fn pool_with_single_anchor_is_identity() {
        let region = random_region(4, 105);
        let wa = seeded_projections(8, 106);
        let anchors = AnchorSet::build(&region, 1).unwrap();
        let got = angle_pool(&region, &anchors, 0, 1, &wa, 2.0, false).unwrap();
        let y = anchors.anchors[0][0];
        let (at_i, at_j, at_y, _) =
            triangle_angles(&region.points()[0], &region.points()[1], &region.points()[y]);
        assert_relative_eq!(
            got.at_first,
            sin_embed_angle(at_i, 8, 2.0) * &wa[0],
            epsilon = 1e-15
        );
        assert_relative_eq!(
            got.at_second,
            sin_embed_angle(at_j, 8, 2.0) * &wa[1],
            epsilon = 1e-15
        );
        assert_relative_eq!(
            got.at_anchor,
            sin_embed_angle(at_y, 8, 2.0) * &wa[2],
            epsilon = 1e-15
        );
    }

    #[test]
    fn pool_idempotent_under_duplicated_anchors() {
        let region = random_region(5, 107);
        let wa = seeded_projections(8, 108);
        let single = AnchorSet {
            anchors: vec![vec![3]; 5],
        };
        let doubled = AnchorSet {
            anchors: vec![vec![3, 3]; 5],
        };
        let a = angle_pool(&region, &single, 0, 1, &wa, 2.0, false).unwrap();
        let b = angle_pool(&region, &doubled, 0, 1, &wa, 2.0, false).unwrap();
        assert_eq!(a.at_first, b.at_first);
        assert_eq!(a.at_second, b.at_second);
        assert_eq!(a.at_anchor, b.at_anchor);
    }

    #[test]
    fn pool_invariant_to_anchor_order() {
        let region = random_region(8, 109);
        let wa = seeded_projections(8, 110);
        let fwd = AnchorSet {
            anchors: vec![vec![2, 4, 6]; 8],
        };
        let rev = AnchorSet {
            anchors: vec![vec![6, 4, 2]; 8],
        };
        let a = angle_pool(&region, &fwd, 0, 1, &wa, 2.0, false).unwrap();
        let b = angle_pool(&region, &rev, 0, 1, &wa, 2.0, false).unwrap();
        assert_eq!(a.at_first, b.at_first);
        assert_eq!(a.at_second, b.at_second);
        assert_eq!(a.at_anchor, b.at_anchor);
    }

    #[test]
    fn pool_matches_triple_loop_oracle() {
        let region = random_region(6, 111);
        let d = 8;
        let wa = seeded_projections(d, 112);
        let anchors = AnchorSet::build(&region, 3).unwrap();
        let got = angle_pool(&region, &anchors, 1, 4, &wa, 2.0, false).unwrap();

        // Oracle: explicit loops over anchors, components, and slots.
        let mut expected = [vec![f64::NEG_INFINITY; d], vec![f64::NEG_INFINITY; d], vec![f64::NEG_INFINITY; d]];
        for &y in &anchors.anchors[1] {
            let (ai, aj, ay, _) =
                triangle_angles(&region.points()[1], &region.points()[4], &region.points()[y]);
            for (slot, theta) in [ai, aj, ay].into_iter().enumerate() {
                let emb = sin_embed_angle(theta, d, 2.0);
                for c in 0..d {
                    let mut proj = 0.0;
                    for r in 0..d {
                        proj += emb[r] * wa[slot][(r, c)];
                    }
                    expected[slot][c] = expected[slot][c].max(proj);
                }
            }
        }
        for c in 0..d {
            assert_relative_eq!(got.at_first[c], expected[0][c], epsilon = 1e-12);
            assert_relative_eq!(got.at_second[c], expected[1][c], epsilon = 1e-12);
            assert_relative_eq!(got.at_anchor[c], expected[2][c], epsilon = 1e-12);
        }
    }

    #[test]
    fn table_rows_match_angle_pool() {
        let region = random_region(5, 113);
        let wa = seeded_projections(8, 114);
        let anchors = AnchorSet::build(&region, 2).unwrap();
        let table = AngleTable::build(&region, &anchors, &wa, 2.0, false);
        for i in 0..5 {
            for j in 0..5 {
                let e = angle_pool(&region, &anchors, i, j, &wa, 2.0, false).unwrap();
                let row = table.data.row(i * 5 + j);
                for c in 0..8 {
                    assert_eq!(row[c], e.at_first[c]);
                    assert_eq!(row[8 + c], e.at_second[c]);
                    assert_eq!(row[16 + c], e.at_anchor[c]);
                }
            }
        }
    }
}
