//! Mini benchmark over generated pairs (development aid): exact-recovery
//! margins at sigma = 0 and robust registration at sigma = 5 mm.

use sgfeat::pipeline::{evaluate_pair, register_pair, ComponentFlags, PipelineWeights};
use sgfeat::scenes::{generate_scene, make_pair, SceneSpec};
use sgfeat::PipelineConfig;

fn main() {
    let mut cfg = PipelineConfig::synthetic();
    cfg.seed = 7;
    // Overrides: key=value args using the config text syntax.
    let overrides: String = std::env::args()
        .skip(1)
        .filter(|a| a.contains('='))
        .map(|a| a.replace('=', " = ") + "\n")
        .collect();
    if !overrides.is_empty() {
        let text = format!("preset = synthetic\nseed = 7\n{overrides}");
        cfg = PipelineConfig::parse(&text).expect("bad override");
        println!("overrides:\n{overrides}");
    }
    let weights = PipelineWeights::seeded(&cfg);

    let run = |label: &str, n: usize, overlap: f64, sigma: f64, flags: ComponentFlags| {
        let mut stats = Vec::new();
        let t0 = std::time::Instant::now();
        for k in 0..n {
            let scene = generate_scene(&SceneSpec::fig1(110.0, 1000 + k as u64));
            let target_overlap = if overlap >= 1.0 {
                1.0
            } else {
                overlap + (k as f64 / n as f64) * (0.95 - overlap)
            };
            let pair = match make_pair(&scene, target_overlap, sigma, 2000 + k as u64) {
                Ok(p) => p,
                Err(e) => {
                    println!("  pair {k}: generation failed: {e}");
                    continue;
                }
            };
            match register_pair(&pair.source, &pair.target, &cfg, &weights, flags) {
                Ok(out) => {
                    let m = evaluate_pair(
                        &out,
                        &pair.source,
                        &pair.target,
                        &pair.t_gt,
                        &pair.gt_corr,
                        &cfg,
                    )
                    .unwrap();
                    if std::env::args().any(|a| a == "verbose") {
                        let dense_true = out
                            .dense_corr
                            .pairs
                            .iter()
                            .filter(|c| {
                                (pair.t_gt.apply_point(&pair.source.points()[c.source])
                                    - pair.target.points()[c.target])
                                    .norm()
                                    < 0.05
                            })
                            .count();
                        println!(
                            "  pair {k} ov {:.2} supers {}/{} dense {} (true {}) inliers {} rre {:.3} rte {:.4} {}",
                            pair.overlap,
                            out.superpoints_source,
                            out.superpoints_target,
                            out.dense_corr.len(),
                            dense_true,
                            out.lgr_inliers,
                            m.rre_deg,
                            m.rte_m,
                            if m.rr_success { "OK" } else { "FAIL" },
                        );
                    }
                    stats.push((m.rr_success, m.rre_deg, m.rte_m, out.timings.total));
                }
                Err(e) => {
                    println!("  pair {k} (ov {target_overlap:.2}): register failed: {e}");
                    stats.push((false, 180.0, 10.0, 0.0));
                }
            }
        }
        let n_ok = stats.iter().filter(|s| s.0).count();
        let successes: Vec<_> = stats.iter().filter(|s| s.0).collect();
        let mean = |f: &dyn Fn(&(bool, f64, f64, f64)) -> f64| {
            if successes.is_empty() {
                0.0
            } else {
                successes.iter().map(|s| f(s)).sum::<f64>() / successes.len() as f64
            }
        };
        let max_rre = stats.iter().map(|s| s.1).fold(0.0f64, f64::max);
        println!(
            "{label}: RR {}/{} mean_rre {:.4} deg max_rre {:.4} mean_rte {:.5} m mean_time {:.0} ms total {:.1}s",
            n_ok,
            stats.len(),
            mean(&|s| s.1),
            max_rre,
            mean(&|s| s.2),
            mean(&|s| s.3),
            t0.elapsed().as_secs_f64(),
        );
    };

    if std::env::args().any(|a| a == "robust32") {
        run(
            "robust32 full",
            32,
            0.35,
            0.005,
            ComponentFlags::default(),
        );
        return;
    }
    if std::env::args().any(|a| a == "augonly") {
        run(
            "aug only",
            16,
            0.3,
            0.005,
            ComponentFlags {
                aug: true,
                hot: false,
                hse: false,
            },
        );
        return;
    }
    if std::env::args().any(|a| a == "combos") {
        for flags in ComponentFlags::all_combinations() {
            let label = format!(
                "combo aug={} hot={} hse={}",
                flags.aug as u8, flags.hot as u8, flags.hse as u8
            );
            run(&label, 16, 0.3, 0.005, flags);
        }
        return;
    }
    run("exact sigma=0 ov=1.0 full", 12, 1.0, 0.0, ComponentFlags::default());
    run("robust sigma=5mm ov>=0.3 full", 16, 0.3, 0.005, ComponentFlags::default());
    run("robust sigma=5mm ov>=0.3 off ", 16, 0.3, 0.005, ComponentFlags::all_off());
}
