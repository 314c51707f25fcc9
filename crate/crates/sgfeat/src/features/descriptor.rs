//! Deterministic local descriptors standing in for learned backbone
//! features. Every ingredient (eigenvalue shape ratios and magnitudes,
//! neighbor counts, centroid offsets, radial shells, residuals against the
//! local tangent plane) is invariant under rigid motion. Each point is
//! described at two scales, the query radius and half of it, which keeps the
//! descriptor informative when single-scale shape statistics get noisy.

use nalgebra::RowDVector;
use rayon::prelude::*;

use crate::saliency::{eigen3_sym, gamma_score, scatter_of};
use crate::spatial::SpatialIndex;
use crate::{FeatureMatrix, Point3, PointCloud};

const SHELLS: usize = 8;
/// Per-scale feature block width.
const SCALE_DIM: usize = 12 + SHELLS;
/// Raw descriptor width before padding to `d_t`: two scale blocks plus a
/// degenerate flag.
pub const BASE_DIM: usize = 2 * SCALE_DIM + 1;

/// One descriptor row per point of `supers`, built from the `r`-ball of
/// `cloud` around it and L2-normalized. Points whose full-scale ball holds
/// fewer than two cloud points take a fixed constant vector.
pub fn local_descriptor(
    cloud: &PointCloud,
    supers: &PointCloud,
    r: f64,
    d_t: usize,
) -> FeatureMatrix {
    assert!(r > 0.0, "descriptor radius must be positive");
    let index = SpatialIndex::build(cloud.points());
    let rows: Vec<RowDVector<f64>> = supers
        .points()
        .par_iter()
        .map(|center| {
            let neighbors = index.radius(center, r);
            let mut base = RowDVector::zeros(BASE_DIM);
            if neighbors.len() < 2 {
                base[BASE_DIM - 1] = 1.0;
            } else {
                let inner: Vec<usize> = neighbors
                    .iter()
                    .copied()
                    .filter(|&j| (cloud.points()[j] - center).norm() <= 0.5 * r)
                    .collect();
                scale_block(cloud.points(), &neighbors, center, r)
                    .transfer_into(&mut base, 0);
                scale_block(cloud.points(), &inner, center, 0.5 * r)
                    .transfer_into(&mut base, SCALE_DIM);
            }
            widen(&base, d_t)
        })
        .collect();

    let mut out = FeatureMatrix::zeros(supers.len(), d_t);
    for (i, mut row) in rows.into_iter().enumerate() {
        let norm = row.norm();
        if norm > 0.0 {
            row /= norm;
        }
        out.set_row(i, &row);
    }
    out
}

struct ScaleBlock {
    values: [f64; SCALE_DIM],
}

impl ScaleBlock {
    fn transfer_into(&self, base: &mut RowDVector<f64>, offset: usize) {
        for (k, v) in self.values.iter().enumerate() {
            base[offset + k] = *v;
        }
    }
}

fn scale_block(points: &[Point3], neighbors: &[usize], center: &Point3, r: f64) -> ScaleBlock {
    let mut values = [0.0; SCALE_DIM];
    if neighbors.len() < 2 {
        return ScaleBlock { values };
    }
    let n = neighbors.len() as f64;
    let mut mean = crate::Vector3::zeros();
    for &j in neighbors {
        mean += points[j].coords;
    }
    mean /= n;

    let m = scatter_of(points, neighbors);
    let e = eigen3_sym(&m).expect("scatter is symmetric");
    let eps = e.epsilon();
    let div = |num: f64, den: f64| if den < eps { 0.0 } else { num / den };
    values[0] = div(e.e1, e.e0);
    values[1] = div(e.e2, e.e1);
    values[2] = div(e.e2, e.e0);
    values[3] = gamma_score(&e);
    values[4] = div(e.e0 - e.e1, e.e0); // linearity
    values[5] = div(e.e1 - e.e2, e.e0); // planarity
    values[6] = div(3.0 * e.e2, e.e0 + e.e1 + e.e2); // scatter-ness
    // Absolute spread, log-scaled so walls and thin structures separate.
    values[7] = (1.0 + 1e4 * e.e0).ln() / 10.0;
    values[8] = (1.0 + 1e4 * e.e2).ln() / 10.0;
    values[9] = (1.0 + n).ln() / 8.0;
    values[10] = (mean - center.coords).norm() / r;

    // RMS residual against the local tangent plane (the eigenvector of the
    // smallest scatter eigenvalue), normalized by the radius.
    let normal = smallest_eigenvector(&m);
    let mut rms = 0.0;
    for &j in neighbors {
        let d = (points[j].coords - mean).dot(&normal);
        rms += d * d;
    }
    values[11] = (rms / n).sqrt() / r;

    for &j in neighbors {
        let dist = (points[j] - center).norm();
        let shell = ((dist / r * SHELLS as f64) as usize).min(SHELLS - 1);
        values[12 + shell] += 1.0 / n;
    }
    ScaleBlock { values }
}

fn smallest_eigenvector(m: &nalgebra::Matrix3<f64>) -> crate::Vector3 {
    let eig = nalgebra::SymmetricEigen::new(*m);
    let mut best = 0;
    for k in 1..3 {
        if eig.eigenvalues[k] < eig.eigenvalues[best] {
            best = k;
        }
    }
    eig.eigenvectors.column(best).into_owned()
}

/// Zero-pads the base vector to `d_t`; narrower targets fold the tail back
/// onto the front so no component is dropped.
fn widen(base: &RowDVector<f64>, d_t: usize) -> RowDVector<f64> {
    let mut out = RowDVector::zeros(d_t);
    for (i, &v) in base.iter().enumerate() {
        out[i % d_t] += v;
    }
    out
}
