//! Low-order geometric transformer: interleaved self-attention with a
//! pairwise-distance sinusoidal key bias, and plain cross-attention between
//! frames. The distance embedding depends only on point distances, so the
//! whole stack is rigid-invariant.

use nalgebra::DMatrix;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::features::attention::{
    attention_core, interleaved_sinusoid, mh_cross_attention, normalize_rows, orthogonal_matrix,
    AttentionWeights,
};
use crate::{FeatureMatrix, PointCloud};

/// Base of the distance sinusoid; distances are pre-scaled by `sigma_d`.
const DISTANCE_SINUSOID_BASE: f64 = 1.0e4;

/// One interleaved block: biased self-attention plus cross-attention.
#[derive(Debug, Clone)]
pub struct GeoTrLayerWeights {
    pub self_attn: AttentionWeights,
    /// Projection of the distance embedding added to keys.
    pub bias_proj: DMatrix<f64>,
    pub cross_attn: AttentionWeights,
}

impl GeoTrLayerWeights {
    pub fn seeded(d: usize, heads: usize, bias_gain: f64, rng: &mut ChaCha8Rng) -> Self {
        Self {
            self_attn: AttentionWeights::seeded(d, heads, rng),
            bias_proj: orthogonal_matrix(d, rng) * bias_gain,
            cross_attn: AttentionWeights::seeded(d, heads, rng),
        }
    }
}

/// Sinusoidal embedding of a pairwise distance at temperature `sigma_d`.
pub fn distance_embedding(dist: f64, d_t: usize, sigma_d: f64) -> nalgebra::RowDVector<f64> {
    interleaved_sinusoid(dist / sigma_d, d_t, DISTANCE_SINUSOID_BASE)
}

/// All pairwise distance embeddings of a cloud, row-major pair order.
fn embedding_table(cloud: &PointCloud, d_t: usize, sigma_d: f64) -> FeatureMatrix {
    let n = cloud.len();
    let rows: Vec<nalgebra::RowDVector<f64>> = (0..n * n)
        .into_par_iter()
        .map(|pair| {
            let (i, j) = (pair / n, pair % n);
            let dist = (cloud.points()[i] - cloud.points()[j]).norm();
            distance_embedding(dist, d_t, sigma_d)
        })
        .collect();
    let mut table = FeatureMatrix::zeros(n * n, d_t);
    for (r, row) in rows.into_iter().enumerate() {
        table.set_row(r, &row);
    }
    table
}

fn biased_self_attention(
    f: &FeatureMatrix,
    table: &FeatureMatrix,
    layer: &GeoTrLayerWeights,
) -> FeatureMatrix {
    let bias = table * &layer.bias_proj;
    let z = attention_core(f, f, &layer.self_attn, Some(&bias));
    let mut out = f + z;
    normalize_rows(&mut out);
    out
}

/// Interleaved [biased self-attention; cross-attention] over both frames.
pub fn geometric_transformer(
    f_p: &FeatureMatrix,
    f_q: &FeatureMatrix,
    supers_p: &PointCloud,
    supers_q: &PointCloud,
    layers: &[GeoTrLayerWeights],
    sigma_d: f64,
) -> (FeatureMatrix, FeatureMatrix) {
    assert!(sigma_d > 0.0);
    assert_eq!(f_p.nrows(), supers_p.len());
    assert_eq!(f_q.nrows(), supers_q.len());
    if layers.is_empty() {
        return (f_p.clone(), f_q.clone());
    }
    let d_t = f_p.ncols();
    let table_p = embedding_table(supers_p, d_t, sigma_d);
    let table_q = embedding_table(supers_q, d_t, sigma_d);

    let mut fp = f_p.clone();
    let mut fq = f_q.clone();
    for layer in layers {
        fp = biased_self_attention(&fp, &table_p, layer);
        fq = biased_self_attention(&fq, &table_q, layer);
        let new_p = mh_cross_attention(&fp, &fq, &layer.cross_attn);
        let new_q = mh_cross_attention(&fq, &fp, &layer.cross_attn);
        fp = new_p;
        fq = new_q;
    }
    (fp, fq)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::{apply_transform, CloudLevel};
    use crate::features::attention::{mh_self_attention, softmax_rows, NORM_EPS};
    use crate::{Point3, RigidTransform, Vector3};
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand::SeedableRng;

    fn fixture(n: usize, d: usize, seed: u64) -> (PointCloud, FeatureMatrix) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cloud = PointCloud::new(
            (0..n)
                .map(|_| {
                    Point3::new(
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                    )
                })
                .collect(),
            CloudLevel::Super,
        );
        let feats = FeatureMatrix::from_fn(n, d, |_, _| rng.gen_range(-1.0..1.0));
        (cloud, feats)
    }

    #[test]
    fn zero_bias_projection_reduces_to_plain_attention() {
        let d = 16;
        let mut rng = ChaCha8Rng::seed_from_u64(90);
        let mut layer = GeoTrLayerWeights::seeded(d, 4, 1.0, &mut rng);
        layer.bias_proj = DMatrix::zeros(d, d);
        let (p, fp) = fixture(6, d, 91);
        let (q, fq) = fixture(7, d, 92);
        let (gp, gq) = geometric_transformer(&fp, &fq, &p, &q, &[layer.clone()], 0.05);

        let sp = mh_self_attention(&fp, &layer.self_attn);
        let sq = mh_self_attention(&fq, &layer.self_attn);
        let ep = mh_cross_attention(&sp, &sq, &layer.cross_attn);
        let eq = mh_cross_attention(&sq, &sp, &layer.cross_attn);
        assert_relative_eq!(gp, ep, epsilon = 1e-12);
        assert_relative_eq!(gq, eq, epsilon = 1e-12);
    }

    #[test]
    fn outputs_rigid_invariant() {
        let d = 16;
        let mut rng = ChaCha8Rng::seed_from_u64(93);
        let layers: Vec<_> = (0..2)
            .map(|_| GeoTrLayerWeights::seeded(d, 4, 0.5, &mut rng))
            .collect();
        let (p, fp) = fixture(8, d, 94);
        let (q, fq) = fixture(9, d, 95);
        let (gp0, gq0) = geometric_transformer(&fp, &fq, &p, &q, &layers, 0.05);
        let t = RigidTransform::from_axis_angle(
            &Vector3::new(0.4, 1.0, -0.2),
            1.3,
            Vector3::new(2.0, -1.0, 0.7),
        );
        let (gp1, gq1) = geometric_transformer(
            &fp,
            &fq,
            &apply_transform(&p, &t),
            &apply_transform(&q, &t),
            &layers,
            0.05,
        );
        assert_relative_eq!(gp0, gp1, epsilon = 1e-8);
        assert_relative_eq!(gq0, gq1, epsilon = 1e-8);
    }

    /// Dense-loop oracle for one biased self-attention layer.
    fn oracle_biased_self(
        f: &FeatureMatrix,
        cloud: &PointCloud,
        layer: &GeoTrLayerWeights,
        sigma_d: f64,
    ) -> FeatureMatrix {
        let n = f.nrows();
        let d = f.ncols();
        let h = layer.self_attn.heads;
        let dh = d / h;
        let q = f * &layer.self_attn.wq;
        let k = f * &layer.self_attn.wk;
        let v = f * &layer.self_attn.wv;
        let mut z = FeatureMatrix::zeros(n, d);
        for head in 0..h {
            let mut scores = DMatrix::zeros(n, n);
            for i in 0..n {
                for j in 0..n {
                    let dist = (cloud.points()[i] - cloud.points()[j]).norm();
                    let bias =
                        distance_embedding(dist, d, sigma_d) * &layer.bias_proj;
                    let mut dot = 0.0;
                    for c in 0..dh {
                        dot += q[(i, head * dh + c)] * (k[(j, head * dh + c)] + bias[head * dh + c]);
                    }
                    scores[(i, j)] = dot / (dh as f64).sqrt();
                }
            }
            softmax_rows(&mut scores);
            for i in 0..n {
                for c in 0..dh {
                    let mut acc = 0.0;
                    for j in 0..n {
                        acc += scores[(i, j)] * v[(j, head * dh + c)];
                    }
                    z[(i, head * dh + c)] = acc;
                }
            }
        }
        let mut out = f + z;
        for mut row in out.row_iter_mut() {
            let len = row.len() as f64;
            let mean = row.iter().sum::<f64>() / len;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / len;
            let inv = 1.0 / (var + NORM_EPS).sqrt();
            for x in row.iter_mut() {
                *x = (*x - mean) * inv;
            }
        }
        out
    }

    #[test]
    fn biased_self_attention_matches_dense_loop_oracle() {
        let d = 16;
        let mut rng = ChaCha8Rng::seed_from_u64(96);
        let layer = GeoTrLayerWeights::seeded(d, 4, 0.7, &mut rng);
        let (p, fp) = fixture(6, d, 97);
        let table = embedding_table(&p, d, 0.05);
        let got = biased_self_attention(&fp, &table, &layer);
        let expected = oracle_biased_self(&fp, &p, &layer, 0.05);
        assert_relative_eq!(got, expected, epsilon = 1e-10);
    }
}
