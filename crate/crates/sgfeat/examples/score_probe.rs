//! Superpoint score diagnostics: how well MS / SS / S rank true pairs
//! (development aid).

use sgfeat::cloud::voxel_downsample;
use sgfeat::features::{geometric_transformer, local_descriptor};
use sgfeat::matching::{combined_scores, feature_match_scores, topk_correspondences};
use sgfeat::pipeline::PipelineWeights;
use sgfeat::saliency::{eigen_triples, gamma_score, salient_score_matrix};
use sgfeat::scenes::{generate_scene, make_pair, SceneSpec};
use sgfeat::{PipelineConfig, PointCloud};

fn salient(cloud: &PointCloud, cfg: &PipelineConfig) -> (PointCloud, Vec<f64>) {
    let triples = eigen_triples(cloud, cfg.r_salient);
    let idx: Vec<usize> = triples
        .iter()
        .enumerate()
        .filter_map(|(i, e)| {
            let eps = e.epsilon();
            let r10 = if e.e0 < eps { 1.0 } else { e.e1 / e.e0 };
            let r21 = if e.e1 < eps { 1.0 } else { e.e2 / e.e1 };
            (r10 < cfg.lambda10 && r21 < cfg.lambda21).then_some(i)
        })
        .collect();
    let gammas = idx.iter().map(|&i| gamma_score(&triples[i])).collect();
    (cloud.select(&idx), gammas)
}

fn main() {
    let mut cfg = PipelineConfig::synthetic();
    cfg.seed = 7;
    let overrides: String = std::env::args()
        .skip(1)
        .filter(|a| a.contains('='))
        .map(|a| a.replace('=', " = ") + "\n")
        .collect();
    let mut sigma = 0.0;
    let mut overlap = 1.0;
    for a in std::env::args().skip(1) {
        if let Some(v) = a.strip_prefix("sigma:") {
            sigma = v.parse().unwrap();
        }
        if let Some(v) = a.strip_prefix("overlap:") {
            overlap = v.parse().unwrap();
        }
    }
    if !overrides.is_empty() {
        cfg = PipelineConfig::parse(&format!("preset = synthetic\nseed = 7\n{overrides}")).unwrap();
        println!("overrides: {}", overrides.replace('\n', " "));
    }
    println!("sigma {sigma} overlap {overlap}");
    let weights = PipelineWeights::seeded(&cfg);
    let scene = generate_scene(&SceneSpec::fig1(110.0, 21));
    let pair = make_pair(&scene, overlap, sigma, 22).unwrap();

    let mid_p = voxel_downsample(&pair.source, cfg.cell_mid).unwrap();
    let mid_q = voxel_downsample(&pair.target, cfg.cell_mid).unwrap();
    let (supers_p, gp) = salient(&mid_p, &cfg);
    let (supers_q, gq) = salient(&mid_q, &cfg);
    println!("supers: {} / {}", supers_p.len(), supers_q.len());

    // True partner: nearest target super within 0.3 under gt.
    let truth: Vec<Option<usize>> = supers_p
        .points()
        .iter()
        .map(|p| {
            let moved = pair.t_gt.apply_point(p);
            let mut best = (f64::INFINITY, 0usize);
            for (j, q) in supers_q.points().iter().enumerate() {
                let d = (moved - q).norm_squared();
                if d < best.0 {
                    best = (d, j);
                }
            }
            (best.0.sqrt() < 0.3).then_some(best.1)
        })
        .collect();
    let with_truth = truth.iter().flatten().count();
    println!("source supers with a true partner: {with_truth}");

    let f_p0 = local_descriptor(&pair.source, &supers_p, cfg.descriptor_radius, cfg.d_t);
    let f_q0 = local_descriptor(&pair.target, &supers_q, cfg.descriptor_radius, cfg.d_t);
    let (f_p, f_q) = geometric_transformer(
        &f_p0, &f_q0, &supers_p, &supers_q, &weights.geotr, cfg.sigma_d,
    );

    for (tag, fp, fq) in [("raw", &f_p0, &f_q0), ("geotr", &f_p, &f_q)] {
        let ms = feature_match_scores(fp, fq);
        // Rank of the true partner within each row.
        let mut ranks = Vec::new();
        for (i, t) in truth.iter().enumerate() {
            if let Some(j_true) = t {
                let s_true = ms.data[(i, *j_true)];
                let rank = (0..supers_q.len())
                    .filter(|&j| ms.data[(i, j)] > s_true)
                    .count();
                ranks.push(rank);
            }
        }
        ranks.sort_unstable();
        let ss = salient_score_matrix(&gp, &gq);
        let s = combined_scores(&ms, &ss).unwrap();
        let count_true = |top: &sgfeat::CorrespondenceSet| {
            top.pairs
                .iter()
                .filter(|c| truth[c.source] == Some(c.target))
                .count()
        };
        let top_ms = topk_correspondences(&ms, cfg.n_c);
        let top_s = topk_correspondences(&s, cfg.n_c);
        println!(
            "{tag}: true-partner rank median {} p90 {} | top{} MS true {} | top{} S true {}",
            ranks[ranks.len() / 2],
            ranks[ranks.len() * 9 / 10],
            cfg.n_c,
            count_true(&top_ms),
            cfg.n_c,
            count_true(&top_s),
        );
        // Dual-softmax normalization before the SS product.
        for temp in [1.0, 0.1, 0.05, 0.02] {
            let scaled = &ms.data / temp;
            let mut row = scaled.clone();
            sgfeat::features::softmax_rows(&mut row);
            let mut col_t = scaled.transpose();
            sgfeat::features::softmax_rows(&mut col_t);
            let dual = row.component_mul(&col_t.transpose());
            let dual_ms = sgfeat::matching::ScoreMatrix {
                data: dual.clone(),
                kind: sgfeat::matching::ScoreKind::Ms,
            };
            let dual_s = sgfeat::matching::ScoreMatrix {
                data: dual.component_mul(&ss),
                kind: sgfeat::matching::ScoreKind::Combined,
            };
            println!(
                "  {tag} dsm T={temp}: top{} dsm true {} | top{} dsm*SS true {}",
                cfg.n_c,
                count_true(&topk_correspondences(&dual_ms, cfg.n_c)),
                cfg.n_c,
                count_true(&topk_correspondences(&dual_s, cfg.n_c)),
            );
        }
    }
}
