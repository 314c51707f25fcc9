//! Core 3D geometry: point storage, voxel-grid subsampling, point-to-node
//! partitions, and rigid transforms.

use std::collections::BTreeMap;

use nalgebra::{Matrix3, Matrix4, Rotation3, Unit};

use crate::error::{Error, Result};
use crate::spatial::SpatialIndex;
use crate::{Point3, Vector3};

/// Resolution tier of a cloud in the subsampling pyramid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CloudLevel {
    /// Raw scan points (tens of thousands).
    Dense,
    /// Patch-level superpoints (hundreds).
    Super,
    /// Object-level mega points (tens).
    Mega,
}

/// Ordered set of 3D points. Indices are stable for the cloud's lifetime.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<Point3>,
    level: CloudLevel,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>, level: CloudLevel) -> Self {
        debug_assert!(
            points.iter().all(|p| p.coords.iter().all(|c| c.is_finite())),
            "point cloud coordinates must be finite"
        );
        Self { points, level }
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn level(&self) -> CloudLevel {
        self.level
    }

    pub fn with_level(mut self, level: CloudLevel) -> Self {
        self.level = level;
        self
    }

    /// Cloud containing the listed point indices, in the given order.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            points: indices.iter().map(|&i| self.points[i]).collect(),
            level: self.level,
        }
    }
}

/// Proper rigid motion: rotation plus translation, acting as `R p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3,
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn from_axis_angle(axis: &Vector3, angle: f64, translation: Vector3) -> Self {
        let rotation = Rotation3::from_axis_angle(&Unit::new_normalize(*axis), angle);
        Self {
            rotation: rotation.into_inner(),
            translation,
        }
    }

    /// Checks `RᵀR = I` and `det(R) = +1` within 1e-9.
    pub fn validate(&self) -> Result<()> {
        let gram = self.rotation.transpose() * self.rotation;
        let ortho_err = (gram - Matrix3::identity()).abs().max();
        if ortho_err > 1e-9 {
            return Err(Error::InvalidMatrix(format!(
                "rotation not orthonormal (|R'R - I| = {ortho_err:.3e})"
            )));
        }
        let det = self.rotation.determinant();
        if (det - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidMatrix(format!(
                "rotation determinant {det} != +1"
            )));
        }
        if !self.translation.iter().all(|c| c.is_finite()) {
            return Err(Error::InvalidMatrix("translation not finite".into()));
        }
        Ok(())
    }

    pub fn apply_point(&self, p: &Point3) -> Point3 {
        Point3::from(self.rotation * p.coords + self.translation)
    }

    /// Composition that applies `other` first, then `self`.
    pub fn compose(&self, other: &RigidTransform) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// Row-major 4x4 homogeneous matrix, as stored in result records.
    pub fn to_matrix4(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn from_matrix4(m: &Matrix4<f64>) -> Self {
        Self {
            rotation: m.fixed_view::<3, 3>(0, 0).into_owned(),
            translation: m.fixed_view::<3, 1>(0, 3).into_owned(),
        }
    }
}

/// Assignment of every dense point to its nearest superpoint, together with
/// the inverse map (superpoint -> member dense indices).
#[derive(Debug, Clone)]
pub struct NodePartition {
    pub assignment: Vec<usize>,
    pub neighborhoods: Vec<Vec<usize>>,
}

/// Grid subsampling: one centroid per occupied voxel.
///
/// The voxel origin is fixed at (0,0,0); voxel id is `floor(coord / cell)`.
/// Output order is ascending lexicographic voxel coordinate, which makes the
/// result independent of input point order.
pub fn voxel_downsample(cloud: &PointCloud, cell: f64) -> Result<PointCloud> {
    assert!(cell > 0.0, "voxel cell must be positive");
    if cloud.is_empty() {
        return Err(Error::EmptyInput("voxel_downsample"));
    }
    let mut cells: BTreeMap<(i64, i64, i64), (Vector3, usize)> = BTreeMap::new();
    for p in cloud.points() {
        let key = (
            (p.x / cell).floor() as i64,
            (p.y / cell).floor() as i64,
            (p.z / cell).floor() as i64,
        );
        let entry = cells.entry(key).or_insert((Vector3::zeros(), 0));
        entry.0 += p.coords;
        entry.1 += 1;
    }
    let points = cells
        .values()
        .map(|(sum, n)| Point3::from(sum / *n as f64))
        .collect();
    Ok(PointCloud::new(points, cloud.level()))
}

/// Maps each dense point to its nearest superpoint (ties to the lower
/// superpoint index) and builds the inverse neighborhoods.
pub fn point_to_node(dense: &PointCloud, supers: &PointCloud) -> NodePartition {
    assert!(!dense.is_empty() && !supers.is_empty());
    let index = SpatialIndex::build(supers.points());
    let assignment: Vec<usize> = dense
        .points()
        .iter()
        .map(|p| index.knn(p, 1)[0])
        .collect();
    let mut neighborhoods = vec![Vec::new(); supers.len()];
    for (dense_idx, &super_idx) in assignment.iter().enumerate() {
        neighborhoods[super_idx].push(dense_idx);
    }
    NodePartition {
        assignment,
        neighborhoods,
    }
}

/// Applies `R p + t` to every point, preserving order.
pub fn apply_transform(cloud: &PointCloud, transform: &RigidTransform) -> PointCloud {
    let points = cloud
        .points()
        .iter()
        .map(|p| transform.apply_point(p))
        .collect();
    PointCloud::new(points, cloud.level())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_cloud(n: usize, seed: u64) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let points = (0..n)
            .map(|_| {
                Point3::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                )
            })
            .collect();
        PointCloud::new(points, CloudLevel::Dense)
    }

    fn unit_cube_corners() -> PointCloud {
        let mut points = Vec::new();
        for x in [0.0, 1.0] {
            for y in [0.0, 1.0] {
                for z in [0.0, 1.0] {
                    points.push(Point3::new(x, y, z));
                }
            }
        }
        PointCloud::new(points, CloudLevel::Dense)
    }

    #[test]
    fn voxel_collapses_cube_to_centroid() {
        let out = voxel_downsample(&unit_cube_corners(), 2.0).unwrap();
        assert_eq!(out.len(), 1);
        assert_relative_eq!(out.points()[0], Point3::new(0.5, 0.5, 0.5));
    }

    #[test]
    fn voxel_keeps_separated_points() {
        let out = voxel_downsample(&unit_cube_corners(), 0.5).unwrap();
        assert_eq!(out.len(), 8);
    }

    #[test]
    fn voxel_matches_brute_force_occupancy() {
        let cloud = random_cloud(1000, 3);
        let cell = 0.25;
        let out = voxel_downsample(&cloud, cell).unwrap();

        // Oracle: hash voxel ids directly.
        let mut occupied = std::collections::BTreeSet::new();
        for p in cloud.points() {
            occupied.insert((
                (p.x / cell).floor() as i64,
                (p.y / cell).floor() as i64,
                (p.z / cell).floor() as i64,
            ));
        }
        assert_eq!(out.len(), occupied.len());

        // Every output point lies within cell*sqrt(3)/2 of some input point.
        let half_diag = cell * 3f64.sqrt() / 2.0;
        for q in out.points() {
            let nearest = cloud
                .points()
                .iter()
                .map(|p| (p - q).norm())
                .fold(f64::INFINITY, f64::min);
            assert!(nearest <= half_diag + 1e-12);
        }
    }

    #[test]
    fn voxel_rejects_empty() {
        let empty = PointCloud::new(vec![], CloudLevel::Dense);
        assert!(matches!(
            voxel_downsample(&empty, 1.0),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn voxel_count_non_increasing_for_nested_cells() {
        let cloud = random_cloud(500, 11);
        let mut prev = usize::MAX;
        for cell in [0.125, 0.25, 0.5, 1.0] {
            let n = voxel_downsample(&cloud, cell).unwrap().len();
            assert!(n <= prev, "count grew from {prev} to {n} at cell {cell}");
            prev = n;
        }
    }

    #[test]
    fn point_to_node_basic_and_tie() {
        let supers = PointCloud::new(
            vec![Point3::new(0.0, 0.0, 0.0), Point3::new(10.0, 0.0, 0.0)],
            CloudLevel::Super,
        );
        let dense = PointCloud::new(
            vec![Point3::new(1.0, 0.0, 0.0), Point3::new(5.0, 0.0, 0.0)],
            CloudLevel::Dense,
        );
        let part = point_to_node(&dense, &supers);
        assert_eq!(part.assignment[0], 0);
        // Equidistant: lower superpoint index wins.
        assert_eq!(part.assignment[1], 0);
        assert_eq!(part.neighborhoods[0], vec![0, 1]);
        assert!(part.neighborhoods[1].is_empty());
    }

    #[test]
    fn point_to_node_matches_brute_force() {
        let dense = random_cloud(2000, 5);
        let supers = random_cloud(50, 6).with_level(CloudLevel::Super);
        let part = point_to_node(&dense, &supers);
        for (d, p) in dense.points().iter().enumerate() {
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for (s, q) in supers.points().iter().enumerate() {
                let dist = (p - q).norm_squared();
                if dist < best_d {
                    best_d = dist;
                    best = s;
                }
            }
            assert_eq!(part.assignment[d], best, "dense point {d}");
        }
        // Assignment and neighborhoods are inverse maps.
        for (s, members) in part.neighborhoods.iter().enumerate() {
            for &d in members {
                assert_eq!(part.assignment[d], s);
            }
        }
        let total: usize = part.neighborhoods.iter().map(Vec::len).sum();
        assert_eq!(total, dense.len());
    }

    #[test]
    fn transform_rotates_about_z() {
        let t = RigidTransform::from_axis_angle(
            &Vector3::new(0.0, 0.0, 1.0),
            std::f64::consts::FRAC_PI_2,
            Vector3::zeros(),
        );
        t.validate().unwrap();
        let p = t.apply_point(&Point3::new(1.0, 0.0, 0.0));
        assert_relative_eq!(p, Point3::new(0.0, 1.0, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn compose_with_inverse_is_identity() {
        let cloud = random_cloud(100, 9);
        let t = RigidTransform::from_axis_angle(
            &Vector3::new(1.0, 2.0, -0.5),
            1.1,
            Vector3::new(0.3, -4.0, 2.0),
        );
        let round = apply_transform(&apply_transform(&cloud, &t), &t.inverse());
        for (a, b) in cloud.points().iter().zip(round.points()) {
            assert_relative_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn transform_preserves_pairwise_distances() {
        let cloud = random_cloud(60, 13);
        let t = RigidTransform::from_axis_angle(
            &Vector3::new(0.2, 1.0, 0.7),
            2.4,
            Vector3::new(1.0, 2.0, 3.0),
        );
        let moved = apply_transform(&cloud, &t);
        for i in 0..cloud.len() {
            for j in (i + 1)..cloud.len() {
                let d0 = (cloud.points()[i] - cloud.points()[j]).norm();
                let d1 = (moved.points()[i] - moved.points()[j]).norm();
                assert!((d0 - d1).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn matrix4_round_trip() {
        let t = RigidTransform::from_axis_angle(
            &Vector3::new(0.1, -0.4, 0.9),
            0.77,
            Vector3::new(-2.0, 0.5, 1.25),
        );
        let back = RigidTransform::from_matrix4(&t.to_matrix4());
        assert_relative_eq!(t.rotation, back.rotation, epsilon = 1e-15);
        assert_relative_eq!(t.translation, back.translation, epsilon = 1e-15);
    }
}
