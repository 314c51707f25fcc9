//! Pipeline stage diagnostics on a generated pair (development aid).

use sgfeat::cloud::{point_to_node, voxel_downsample};
use sgfeat::pipeline::{evaluate_pair, register_pair, ComponentFlags, PipelineWeights};
use sgfeat::saliency::{eigen_triples, SaliencyConfig};
use sgfeat::scenes::{generate_scene, make_pair, SceneSpec};
use sgfeat::PipelineConfig;

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
    }
    let weights = PipelineWeights::seeded(&cfg);
    let scene = generate_scene(&SceneSpec::fig1(110.0, 21));
    println!("scene points: {} sigma {sigma} overlap {overlap}", scene.len());

    let pair = make_pair(&scene, overlap, sigma, 22).unwrap();
    let mid = voxel_downsample(&pair.source, cfg.cell_mid).unwrap();
    println!("mid points: {}", mid.len());
    let mid_q = voxel_downsample(&pair.target, cfg.cell_mid).unwrap();
    let triples = eigen_triples(&mid, cfg.r_salient);
    let sal_cfg = SaliencyConfig {
        r_salient: cfg.r_salient,
        lambda10: cfg.lambda10,
        lambda21: cfg.lambda21,
    };
    let select = |cloud: &sgfeat::PointCloud| -> sgfeat::PointCloud {
        let triples = eigen_triples(cloud, sal_cfg.r_salient);
        let idx: Vec<usize> = triples
            .iter()
            .enumerate()
            .filter_map(|(i, e)| {
                let eps = e.epsilon();
                let r10 = if e.e0 < eps { 1.0 } else { e.e1 / e.e0 };
                let r21 = if e.e1 < eps { 1.0 } else { e.e2 / e.e1 };
                (r10 < sal_cfg.lambda10 && r21 < sal_cfg.lambda21).then_some(i)
            })
            .collect();
        cloud.select(&idx)
    };
    let _ = &triples;
    let supers = select(&mid);
    let supers_q = select(&mid_q);
    println!("salient supers: {} / {}", supers.len(), supers_q.len());
    if !supers.is_empty() {
        let part = point_to_node(&pair.source, &supers);
        let mut sizes: Vec<usize> = part.neighborhoods.iter().map(Vec::len).collect();
        sizes.sort_unstable();
        println!(
            "patch sizes: min {} median {} p90 {} max {}",
            sizes[0],
            sizes[sizes.len() / 2],
            sizes[sizes.len() * 9 / 10],
            sizes[sizes.len() - 1]
        );
    }

    for flags in ComponentFlags::all_combinations() {
        let out = register_pair(&pair.source, &pair.target, &cfg, &weights, flags);
        match out {
            Ok(out) => {
                let m = evaluate_pair(&out, &pair.source, &pair.target, &pair.t_gt, &pair.gt_corr, &cfg)
                    .unwrap();
                // How many super/dense pairs are geometrically correct?
                let src = &pair.source;
                let tgt = &pair.target;
                let dense_true = out
                    .dense_corr
                    .pairs
                    .iter()
                    .filter(|c| {
                        (pair.t_gt.apply_point(&src.points()[c.source]) - tgt.points()[c.target])
                            .norm()
                            < 0.05
                    })
                    .count();
                let super_true = if flags.aug {
                    out.super_corr
                        .pairs
                        .iter()
                        .filter(|c| {
                            (pair.t_gt.apply_point(&supers.points()[c.source])
                                - supers_q.points()[c.target])
                                .norm()
                                < 0.35
                        })
                        .count()
                } else {
                    0
                };
                let _ = super_true;
                println!(
                    "flags [aug={} hot={} hse={}]: supers {}/{} super_corr {} (true {}) dense {} (true {}) inliers {} rre {:.4} rte {:.6} t={}ms",
                    flags.aug as u8,
                    flags.hot as u8,
                    flags.hse as u8,
                    out.superpoints_source,
                    out.superpoints_target,
                    out.super_corr.len(),
                    super_true,
                    out.dense_corr.len(),
                    dense_true,
                    out.lgr_inliers,
                    m.rre_deg,
                    m.rte_m,
                    out.timings.total as u64,
                );
            }
            Err(e) => println!("flags {flags:?}: FAILED {e}"),
        }
    }
}
