//! Multi-head attention and the small dense-layer primitives shared by the
//! semantic encoder, the geometric transformer, and the high-order layers.

use nalgebra::{DMatrix, RowDVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::FeatureMatrix;

/// Epsilon under the square root of the feature-wise normalization.
pub const NORM_EPS: f64 = 1e-6;

/// Projection matrices for one attention layer. Heads are column slices of
/// the projected features; `d_t` must be divisible by `heads`.
#[derive(Debug, Clone)]
pub struct AttentionWeights {
    pub wq: DMatrix<f64>,
    pub wk: DMatrix<f64>,
    pub wv: DMatrix<f64>,
    pub heads: usize,
}

impl AttentionWeights {
    pub fn new(wq: DMatrix<f64>, wk: DMatrix<f64>, wv: DMatrix<f64>, heads: usize) -> Self {
        let d = wq.nrows();
        assert!(wq.is_square() && wk.is_square() && wv.is_square());
        assert_eq!(wk.nrows(), d);
        assert_eq!(wv.nrows(), d);
        assert!(heads >= 1 && d % heads == 0, "d_t must be divisible by heads");
        Self { wq, wk, wv, heads }
    }

    pub fn seeded(d: usize, heads: usize, rng: &mut ChaCha8Rng) -> Self {
        Self::new(
            orthogonal_matrix(d, rng),
            orthogonal_matrix(d, rng),
            orthogonal_matrix(d, rng),
            heads,
        )
    }

    pub fn identity(d: usize, heads: usize) -> Self {
        Self::new(
            DMatrix::identity(d, d),
            DMatrix::identity(d, d),
            DMatrix::identity(d, d),
            heads,
        )
    }

    pub fn d(&self) -> usize {
        self.wq.nrows()
    }
}

/// Dense affine layer applied row-wise: `y = x W + b`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: DMatrix<f64>,
    pub bias: RowDVector<f64>,
}

impl Linear {
    pub fn new(weight: DMatrix<f64>, bias: RowDVector<f64>) -> Self {
        assert_eq!(weight.ncols(), bias.len());
        Self { weight, bias }
    }

    pub fn zeros(d_in: usize, d_out: usize) -> Self {
        Self::new(DMatrix::zeros(d_in, d_out), RowDVector::zeros(d_out))
    }

    /// Orthogonal rows rescaled by `gain`; bias zero.
    pub fn seeded(d_in: usize, d_out: usize, gain: f64, rng: &mut ChaCha8Rng) -> Self {
        let d = d_in.max(d_out);
        let q = orthogonal_matrix(d, rng);
        let weight = q.view((0, 0), (d_in, d_out)).into_owned() * gain;
        Self::new(weight, RowDVector::zeros(d_out))
    }

    /// Weight selecting the first `d_out` input columns verbatim (used by
    /// configured-weights tests).
    pub fn select_first_block(d_in: usize, d_out: usize) -> Self {
        let mut weight = DMatrix::zeros(d_in, d_out);
        for i in 0..d_out.min(d_in) {
            weight[(i, i)] = 1.0;
        }
        Self::new(weight, RowDVector::zeros(d_out))
    }

    /// Fusion initialization for `cat[primary, context]` inputs: the primary
    /// block passes through unchanged, the context block enters through a
    /// scaled orthogonal mix. `d_in` must be `2 * d_out`.
    pub fn identity_mix(d_in: usize, d_out: usize, gain: f64, rng: &mut ChaCha8Rng) -> Self {
        assert_eq!(d_in, 2 * d_out);
        let mut weight = DMatrix::zeros(d_in, d_out);
        for i in 0..d_out {
            weight[(i, i)] = 1.0;
        }
        let q = orthogonal_matrix(d_out, rng) * gain;
        weight.view_mut((d_out, 0), (d_out, d_out)).copy_from(&q);
        Self::new(weight, RowDVector::zeros(d_out))
    }

    /// Weight selecting input columns `d_in - d_out ..` verbatim.
    pub fn select_last_block(d_in: usize, d_out: usize) -> Self {
        let mut weight = DMatrix::zeros(d_in, d_out);
        let offset = d_in - d_out;
        for i in 0..d_out {
            weight[(offset + i, i)] = 1.0;
        }
        Self::new(weight, RowDVector::zeros(d_out))
    }

    pub fn apply(&self, x: &FeatureMatrix) -> FeatureMatrix {
        let mut y = x * &self.weight;
        for mut row in y.row_iter_mut() {
            row += &self.bias;
        }
        y
    }

    pub fn apply_row(&self, x: &RowDVector<f64>) -> RowDVector<f64> {
        x * &self.weight + &self.bias
    }
}

/// Linear map with optional instance normalization and rectifier, the
/// `h_theta` block of the semantic pooling and upsampling layers.
#[derive(Debug, Clone)]
pub struct MlpBlock {
    pub linear: Linear,
    pub normalize: bool,
    pub relu: bool,
}

impl MlpBlock {
    pub fn seeded(d_in: usize, d_out: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            linear: Linear::seeded(d_in, d_out, 1.0, rng),
            normalize: true,
            relu: true,
        }
    }

    /// Plain linear block with normalization and rectifier disabled; the
    /// configured-weights shape used by tests.
    pub fn plain(linear: Linear) -> Self {
        Self {
            linear,
            normalize: false,
            relu: false,
        }
    }

    /// Applies the block to a batch of rows. Instance normalization is per
    /// channel across all rows of this call.
    pub fn apply(&self, x: &FeatureMatrix) -> FeatureMatrix {
        let mut y = self.linear.apply(x);
        if self.normalize && y.nrows() > 0 {
            let n = y.nrows() as f64;
            for c in 0..y.ncols() {
                let mut col = y.column_mut(c);
                let mean = col.iter().sum::<f64>() / n;
                let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                let inv = 1.0 / (var + NORM_EPS).sqrt();
                for v in col.iter_mut() {
                    *v = (*v - mean) * inv;
                }
            }
        }
        if self.relu {
            y.apply(|v| *v = v.max(0.0));
        }
        y
    }
}

/// Deterministic orthogonal matrix: QR of a seeded Gaussian sample with the
/// sign fixed by the R diagonal.
pub fn orthogonal_matrix(d: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let a = DMatrix::from_fn(d, d, |_, _| {
        // Box-Muller keeps us off rand_distr for one sampler.
        let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
        let u2: f64 = rng.gen_range(0.0..1.0);
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    });
    let qr = a.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..d {
        if r[(j, j)] < 0.0 {
            for i in 0..d {
                q[(i, j)] = -q[(i, j)];
            }
        }
    }
    q
}

/// Interleaved sinusoidal features: component `2m` is
/// `sin(value / base^(2m/d))`, component `2m+1` the matching cosine.
pub fn interleaved_sinusoid(value: f64, d: usize, base: f64) -> RowDVector<f64> {
    assert!(d % 2 == 0, "sinusoid width must be even");
    let mut out = RowDVector::zeros(d);
    for m in 0..d / 2 {
        let arg = value / base.powf(2.0 * m as f64 / d as f64);
        out[2 * m] = arg.sin();
        out[2 * m + 1] = arg.cos();
    }
    out
}

/// In-place row softmax with max subtraction. Every row sums to 1.
pub fn softmax_rows(scores: &mut DMatrix<f64>) {
    for mut row in scores.row_iter_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

/// Feature-wise normalization of each row: subtract the row mean, divide by
/// the row standard deviation.
pub fn normalize_rows(x: &mut FeatureMatrix) {
    let d = x.ncols() as f64;
    for mut row in x.row_iter_mut() {
        let mean = row.iter().sum::<f64>() / d;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
        let inv = 1.0 / (var + NORM_EPS).sqrt();
        for v in row.iter_mut() {
            *v = (*v - mean) * inv;
        }
    }
}

/// Multi-head attention core: queries from `fq`, keys/values from `fkv`,
/// optional per-pair additive key bias. Returns the pre-residual output.
pub(crate) fn attention_core(
    fq: &FeatureMatrix,
    fkv: &FeatureMatrix,
    w: &AttentionWeights,
    key_bias: Option<&FeatureMatrix>, // (n_q * n_kv) x d_t, row-major pair order
) -> FeatureMatrix {
    let d = w.d();
    assert_eq!(fq.ncols(), d, "query width mismatch");
    assert_eq!(fkv.ncols(), d, "key/value width mismatch");
    let (n_q, n_kv) = (fq.nrows(), fkv.nrows());
    let dh = d / w.heads;
    let scale = 1.0 / (dh as f64).sqrt();

    let q = fq * &w.wq;
    let k = fkv * &w.wk;
    let v = fkv * &w.wv;

    let mut out = FeatureMatrix::zeros(n_q, d);
    for h in 0..w.heads {
        let cols = h * dh;
        let qh = q.view((0, cols), (n_q, dh));
        let kh = k.view((0, cols), (n_kv, dh));
        let vh = v.view((0, cols), (n_kv, dh));
        let mut scores = DMatrix::zeros(n_q, n_kv);
        for i in 0..n_q {
            for j in 0..n_kv {
                let mut dot = 0.0;
                for c in 0..dh {
                    let kb = key_bias.map_or(0.0, |b| b[(i * n_kv + j, cols + c)]);
                    dot += qh[(i, c)] * (kh[(j, c)] + kb);
                }
                scores[(i, j)] = dot * scale;
            }
        }
        softmax_rows(&mut scores);
        let zh = scores * vh;
        out.view_mut((0, cols), (n_q, dh)).copy_from(&zh);
    }
    out
}

/// Standard multi-head self-attention with residual add and feature-wise
/// normalization.
pub fn mh_self_attention(f: &FeatureMatrix, w: &AttentionWeights) -> FeatureMatrix {
    mh_cross_attention(f, f, w)
}

/// Multi-head cross-attention: queries from `fa`, keys/values from `fb`.
pub fn mh_cross_attention(
    fa: &FeatureMatrix,
    fb: &FeatureMatrix,
    w: &AttentionWeights,
) -> FeatureMatrix {
    let z = attention_core(fa, fb, w, None);
    let mut out = fa + z;
    normalize_rows(&mut out);
    out
}
