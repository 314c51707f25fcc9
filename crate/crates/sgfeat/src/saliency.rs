//! Intrinsic-shape-signature machinery: local scatter matrices, their
//! eigenvalue triples, per-point saliency scores, salient point selection,
//! and the salient score matrix used to reweight superpoint matching.

use nalgebra::{DMatrix, DVector, Matrix3};

use crate::error::{Error, Result};
use crate::spatial::SpatialIndex;
use crate::{Point3, PointCloud};

/// Eigenvalues of a 3x3 scatter matrix, sorted descending and clamped to be
/// nonnegative (values above -1e-12 are snapped to zero).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EigenTriple {
    pub e0: f64,
    pub e1: f64,
    pub e2: f64,
}

impl EigenTriple {
    /// Scale-aware degeneracy floor: eigenvalues below this are treated as
    /// zero in ratio computations.
    pub fn epsilon(&self) -> f64 {
        1e-10 * (self.e0 + self.e1 + self.e2) + 1e-15
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SaliencyConfig {
    /// Spherical neighborhood radius for the scatter matrix, meters.
    pub r_salient: f64,
    /// Threshold on e1/e0; a point passes when the ratio is strictly below.
    pub lambda10: f64,
    /// Threshold on e2/e1.
    pub lambda21: f64,
}

impl Default for SaliencyConfig {
    fn default() -> Self {
        Self {
            r_salient: 0.075,
            lambda10: 0.9,
            lambda21: 0.9,
        }
    }
}

/// Salient point selection result. `fallback` is set when no point passed
/// the eigenratio test and the full index set was returned instead.
#[derive(Debug, Clone)]
pub struct SalientSelection {
    pub indices: Vec<usize>,
    pub fallback: bool,
}

/// Normalized scatter matrix of the radius neighborhood of point `i`
/// (the point itself is included).
pub fn scatter_matrix(cloud: &PointCloud, i: usize, r_salient: f64) -> Matrix3<f64> {
    let index = SpatialIndex::build(cloud.points());
    let neighbors = index.radius(&cloud.points()[i], r_salient);
    scatter_of(cloud.points(), &neighbors)
}

/// Scatter of the radius ball around an arbitrary center point. The center
/// need not be a member of the cloud. Returns the zero matrix when the ball
/// holds fewer than one point.
pub fn scatter_at(
    points: &[Point3],
    index: &SpatialIndex,
    center: &Point3,
    r: f64,
) -> Matrix3<f64> {
    let neighbors = index.radius(center, r);
    scatter_of(points, &neighbors)
}

/// Normalized scatter of an explicit neighbor index set.
pub fn scatter_of(points: &[Point3], neighbors: &[usize]) -> Matrix3<f64> {
    if neighbors.is_empty() {
        return Matrix3::zeros();
    }
    let n = neighbors.len() as f64;
    let mut mean = crate::Vector3::zeros();
    for &j in neighbors {
        mean += points[j].coords;
    }
    mean /= n;
    let mut m = Matrix3::zeros();
    for &j in neighbors {
        let d = points[j].coords - mean;
        m += d * d.transpose();
    }
    m / n
}

/// Eigenvalues of a symmetric 3x3 matrix, descending.
pub fn eigen3_sym(m: &Matrix3<f64>) -> Result<EigenTriple> {
    let asym = (m - m.transpose()).abs().max();
    if asym > 1e-9 {
        return Err(Error::InvalidMatrix(format!(
            "matrix not symmetric (max asymmetry {asym:.3e})"
        )));
    }
    let mut eigs: Vec<f64> = m.symmetric_eigenvalues().iter().copied().collect();
    eigs.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let clamp = |e: f64| if e < 0.0 { 0.0 } else { e };
    Ok(EigenTriple {
        e0: clamp(eigs[0]),
        e1: clamp(eigs[1]),
        e2: clamp(eigs[2]),
    })
}

/// Saliency score `gamma = (1 - e1/e0)(1 - e2/e1)` with the degenerate
/// rule: a vanishing e0 or e1 forces the score to zero.
pub fn gamma_score(e: &EigenTriple) -> f64 {
    let eps = e.epsilon();
    if e.e0 < eps || e.e1 < eps {
        return 0.0;
    }
    let g = (1.0 - e.e1 / e.e0) * (1.0 - e.e2 / e.e1);
    g.clamp(0.0, 1.0)
}

/// Per-point eigen triples of `cloud` under `r_salient` neighborhoods.
pub fn eigen_triples(cloud: &PointCloud, r_salient: f64) -> Vec<EigenTriple> {
    let index = SpatialIndex::build(cloud.points());
    cloud
        .points()
        .iter()
        .map(|p| {
            let m = scatter_at(cloud.points(), &index, p, r_salient);
            eigen3_sym(&m).expect("scatter matrix is symmetric by construction")
        })
        .collect()
}

/// Indices whose eigenratios pass both thresholds. Degenerate ratios count
/// as 1 and therefore fail. Falls back to the full index set when nothing
/// passes.
pub fn select_salient(cloud: &PointCloud, cfg: &SaliencyConfig) -> SalientSelection {
    assert!(!cloud.is_empty(), "select_salient needs a nonempty cloud");
    let triples = eigen_triples(cloud, cfg.r_salient);
    let indices: Vec<usize> = triples
        .iter()
        .enumerate()
        .filter_map(|(i, e)| {
            let eps = e.epsilon();
            let r10 = if e.e0 < eps { 1.0 } else { e.e1 / e.e0 };
            let r21 = if e.e1 < eps { 1.0 } else { e.e2 / e.e1 };
            (r10 < cfg.lambda10 && r21 < cfg.lambda21).then_some(i)
        })
        .collect();
    if indices.is_empty() {
        SalientSelection {
            indices: (0..cloud.len()).collect(),
            fallback: true,
        }
    } else {
        SalientSelection {
            indices,
            fallback: false,
        }
    }
}

/// Outer product `SS(i,j) = gamma_p[i] * gamma_q[j]`.
pub fn salient_score_matrix(gamma_p: &[f64], gamma_q: &[f64]) -> DMatrix<f64> {
    let gp = DVector::from_column_slice(gamma_p);
    let gq = DVector::from_column_slice(gamma_q);
    &gp * gq.transpose()
}
