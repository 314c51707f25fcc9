//! Analytic gradients of the saliency cross-attention layer, verified
//! against central finite differences. This is the verification harness for
//! the one genuinely novel layer; no training loop uses it.

use nalgebra::{DMatrix, RowDVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::features::attention::NORM_EPS;
use crate::hot::attention::HoCrossWeights;
use crate::FeatureMatrix;

/// A self-contained differentiable instance of the cross layer: inputs,
/// constant angle-difference embeddings, weights, and the score scale
/// (0 freezes attention to uniform, removing the softmax path).
#[derive(Debug, Clone)]
pub struct CrossInstance {
    pub x_p: FeatureMatrix,
    pub x_q: FeatureMatrix,
    /// `(n*m) x 3d` constant block of normalized embedding differences.
    pub g_diff: DMatrix<f64>,
    pub w: HoCrossWeights,
    pub score_scale: f64,
}

/// Gradients of the scalar loss `sum(output)` with respect to every input
/// and parameter of the layer.
#[derive(Debug, Clone)]
pub struct CrossGradients {
    pub x_p: FeatureMatrix,
    pub x_q: FeatureMatrix,
    pub wq: DMatrix<f64>,
    pub wk: DMatrix<f64>,
    pub wv: DMatrix<f64>,
    pub wh: DMatrix<f64>,
    pub lin_w: DMatrix<f64>,
    pub lin_b: RowDVector<f64>,
}

impl CrossInstance {
    /// Random instance of the given size. `d` is the feature width.
    pub fn random(n: usize, m: usize, d: usize, rng: &mut ChaCha8Rng) -> Self {
        fn mat(r: usize, c: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
            DMatrix::from_fn(r, c, |_, _| rng.gen_range(-0.8..0.8))
        }
        let x_p = mat(n, d, rng);
        let x_q = mat(m, d, rng);
        let g_diff = mat(n * m, 3 * d, rng);
        let lin_w = mat(3 * d, d, rng);
        let lin_b = RowDVector::from_fn(d, |_, _| rng.gen_range(-0.5..0.5));
        let w = HoCrossWeights {
            attn: crate::features::attention::AttentionWeights::new(
                mat(d, d, rng),
                mat(d, d, rng),
                mat(d, d, rng),
                1,
            ),
            cat_linear: crate::features::attention::Linear::new(lin_w, lin_b),
            wh: mat(d, d, rng),
        };
        Self {
            x_p,
            x_q,
            g_diff,
            w,
            score_scale: 1.0,
        }
    }

    /// Instance with every input, embedding, and parameter zero.
    pub fn zeros(n: usize, m: usize, d: usize) -> Self {
        Self {
            x_p: DMatrix::zeros(n, d),
            x_q: DMatrix::zeros(m, d),
            g_diff: DMatrix::zeros(n * m, 3 * d),
            w: HoCrossWeights {
                attn: crate::features::attention::AttentionWeights::new(
                    DMatrix::zeros(d, d),
                    DMatrix::zeros(d, d),
                    DMatrix::zeros(d, d),
                    1,
                ),
                cat_linear: crate::features::attention::Linear::zeros(3 * d, d),
                wh: DMatrix::zeros(d, d),
            },
            score_scale: 1.0,
        }
    }

    fn dims(&self) -> (usize, usize, usize) {
        (self.x_p.nrows(), self.x_q.nrows(), self.x_p.ncols())
    }

    /// Forward pass; returns the scalar loss `sum(output)`.
    pub fn loss(&self) -> f64 {
        self.forward().0
    }

    /// Forward pass keeping intermediates for the backward pass.
    fn forward(&self) -> (f64, ForwardCache) {
        let (n, m, d) = self.dims();
        let q = &self.x_p * &self.w.attn.wq;
        let k = &self.x_q * &self.w.attn.wk;
        let v = &self.x_q * &self.w.attn.wv;
        let g = self.w.cat_linear.apply(&self.g_diff); // (n*m) x d
        let bias = &g * &self.w.wh; // (n*m) x d
        let scale = self.score_scale / (d as f64).sqrt();

        let mut scores = DMatrix::zeros(n, m);
        for i in 0..n {
            for j in 0..m {
                let mut dot = 0.0;
                for c in 0..d {
                    dot += q[(i, c)] * (k[(j, c)] + bias[(i * m + j, c)]);
                }
                scores[(i, j)] = dot * scale;
            }
        }
        let mut attn = scores.clone();
        crate::features::attention::softmax_rows(&mut attn);
        let z = &attn * &v;
        let u = &self.x_p + &z;

        // Feature-wise normalization per row.
        let mut y = u.clone();
        let mut mu = vec![0.0; n];
        let mut sigma = vec![0.0; n];
        for i in 0..n {
            let row = u.row(i);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / d as f64;
            let sd = (var + NORM_EPS).sqrt();
            mu[i] = mean;
            sigma[i] = sd;
            for c in 0..d {
                y[(i, c)] = (u[(i, c)] - mean) / sd;
            }
        }
        let loss = y.iter().sum();
        (
            loss,
            ForwardCache {
                q,
                k,
                v,
                g,
                bias,
                attn,
                y,
                sigma,
            },
        )
    }

    /// Analytic gradients of `sum(output)`.
    pub fn backward(&self) -> CrossGradients {
        let (n, m, d) = self.dims();
        let (_, cache) = self.forward();
        let scale = self.score_scale / (d as f64).sqrt();

        let mut dx_p = FeatureMatrix::zeros(n, d);
        let mut dx_q = FeatureMatrix::zeros(m, d);
        let mut dq = FeatureMatrix::zeros(n, d);
        let mut dk = FeatureMatrix::zeros(m, d);
        let mut dv = FeatureMatrix::zeros(m, d);
        let mut dwh = DMatrix::zeros(d, d);
        let mut dlin_w = DMatrix::zeros(3 * d, d);
        let mut dlin_b = RowDVector::zeros(d);

        // d(loss)/dy = 1 everywhere; push through the row normalization.
        let mut du = FeatureMatrix::zeros(n, d);
        for i in 0..n {
            let y_row = cache.y.row(i);
            let mean_dy = 1.0; // mean of all-ones
            let mean_dyy = y_row.iter().sum::<f64>() / d as f64;
            for c in 0..d {
                du[(i, c)] = (1.0 - mean_dy - y_row[c] * mean_dyy) / cache.sigma[i];
            }
        }
        // Residual path.
        dx_p += &du;
        // z = attn * v.
        let dz = du;
        let da = &dz * cache.v.transpose(); // n x m
        dv += cache.attn.transpose() * &dz;

        // Softmax backward: de_ij = a_ij (da_ij - sum_k a_ik da_ik).
        let mut de = DMatrix::zeros(n, m);
        for i in 0..n {
            let dot: f64 = (0..m).map(|j| cache.attn[(i, j)] * da[(i, j)]).sum();
            for j in 0..m {
                de[(i, j)] = cache.attn[(i, j)] * (da[(i, j)] - dot);
            }
        }

        // Score backward through q, k, and the bias chain.
        for i in 0..n {
            for j in 0..m {
                let f = de[(i, j)] * scale;
                if f == 0.0 {
                    continue;
                }
                let row = i * m + j;
                for c in 0..d {
                    dq[(i, c)] += f * (cache.k[(j, c)] + cache.bias[(row, c)]);
                    dk[(j, c)] += f * cache.q[(i, c)];
                }
                // Bias chain: bias_row = g_row * wh, d(bias_row) = f * q_i.
                for b_idx in 0..d {
                    let db = f * cache.q[(i, b_idx)];
                    for g_idx in 0..d {
                        dwh[(g_idx, b_idx)] += cache.g[(row, g_idx)] * db;
                    }
                }
                let mut dg_row = RowDVector::zeros(d);
                for r in 0..d {
                    let mut acc = 0.0;
                    for c in 0..d {
                        acc += f * cache.q[(i, c)] * self.w.wh[(r, c)];
                    }
                    dg_row[r] = acc;
                }
                // Through the cat linear: g = g_diff W_L + b_L.
                for r in 0..3 * d {
                    let gd = self.g_diff[(row, r)];
                    if gd != 0.0 {
                        for c in 0..d {
                            dlin_w[(r, c)] += gd * dg_row[c];
                        }
                    }
                }
                dlin_b += dg_row;
            }
        }

        // Projections.
        let dwq = self.x_p.transpose() * &dq;
        let dwk = self.x_q.transpose() * &dk;
        let dwv = self.x_q.transpose() * &dv;
        dx_p += dq * self.w.attn.wq.transpose();
        dx_q += dk * self.w.attn.wk.transpose();
        dx_q += dv * self.w.attn.wv.transpose();

        CrossGradients {
            x_p: dx_p,
            x_q: dx_q,
            wq: dwq,
            wk: dwk,
            wv: dwv,
            wh: dwh,
            lin_w: dlin_w,
            lin_b: dlin_b,
        }
    }
}

struct ForwardCache {
    q: FeatureMatrix,
    k: FeatureMatrix,
    v: FeatureMatrix,
    g: DMatrix<f64>,
    bias: DMatrix<f64>,
    attn: DMatrix<f64>,
    y: FeatureMatrix,
    sigma: Vec<f64>,
}

/// Compares analytic gradients against central finite differences with the
/// given step and returns the maximum relative error, where relative error
/// is `|a - n| / max(|a|, |n|, 1e-3)`. The floor guards near-zero gradients
/// against finite-difference noise; entries where both sides are below
/// 1e-10 count as exact agreement.
pub fn grad_check_cross_attention(instance: &CrossInstance, step: f64) -> f64 {
    let analytic = instance.backward();
    let mut max_err = 0.0f64;

    let mut check = |analytic_val: f64, mut bump: Box<dyn FnMut(f64) -> f64>| {
        let plus = bump(step);
        let minus = bump(-step);
        let numeric = (plus - minus) / (2.0 * step);
        if analytic_val.abs() <= 1e-10 && numeric.abs() <= 1e-10 {
            return;
        }
        let denom = analytic_val.abs().max(numeric.abs()).max(1e-3);
        let err = (analytic_val - numeric).abs() / denom;
        if err > max_err {
            max_err = err;
        }
    };

    macro_rules! check_matrix {
        ($field:ident, $grad:expr) => {{
            let grad = $grad;
            for r in 0..grad.nrows() {
                for c in 0..grad.ncols() {
                    let base = instance.clone();
                    check(
                        grad[(r, c)],
                        Box::new(move |h| {
                            let mut inst = base.clone();
                            inst.$field[(r, c)] += h;
                            inst.loss()
                        }),
                    );
                }
            }
        }};
    }

    check_matrix!(x_p, &analytic.x_p);
    check_matrix!(x_q, &analytic.x_q);

    // Weight matrices live behind the weights struct; perturb through it.
    for r in 0..instance.w.attn.wq.nrows() {
        for c in 0..instance.w.attn.wq.ncols() {
            let base = instance.clone();
            check(
                analytic.wq[(r, c)],
                Box::new(move |h| {
                    let mut inst = base.clone();
                    inst.w.attn.wq[(r, c)] += h;
                    inst.loss()
                }),
            );
            let base = instance.clone();
            check(
                analytic.wk[(r, c)],
                Box::new(move |h| {
                    let mut inst = base.clone();
                    inst.w.attn.wk[(r, c)] += h;
                    inst.loss()
                }),
            );
            let base = instance.clone();
            check(
                analytic.wv[(r, c)],
                Box::new(move |h| {
                    let mut inst = base.clone();
                    inst.w.attn.wv[(r, c)] += h;
                    inst.loss()
                }),
            );
            let base = instance.clone();
            check(
                analytic.wh[(r, c)],
                Box::new(move |h| {
                    let mut inst = base.clone();
                    inst.w.wh[(r, c)] += h;
                    inst.loss()
                }),
            );
        }
    }
    for r in 0..instance.w.cat_linear.weight.nrows() {
        for c in 0..instance.w.cat_linear.weight.ncols() {
            let base = instance.clone();
            check(
                analytic.lin_w[(r, c)],
                Box::new(move |h| {
                    let mut inst = base.clone();
                    inst.w.cat_linear.weight[(r, c)] += h;
                    inst.loss()
                }),
            );
        }
    }
    for c in 0..instance.w.cat_linear.bias.len() {
        let base = instance.clone();
        check(
            analytic.lin_b[c],
            Box::new(move |h| {
                let mut inst = base.clone();
                inst.w.cat_linear.bias[c] += h;
                inst.loss()
            }),
        );
    }

    max_err
}
