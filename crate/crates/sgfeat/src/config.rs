//! Pipeline configuration and the flat key-value config text format used by
//! the CLI for both pipeline configs and scene specs.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::scenes::{Primitive, SceneSpec};
use crate::{Point3, Vector3};

/// Every tunable of the registration pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Transformer feature width.
    pub d_t: usize,
    /// Attention heads in the semantic encoder and geometric transformer.
    pub heads: usize,

    /// Voxel cell of the first subsampling level (dense -> mid).
    pub cell_mid: f64,
    /// Voxel cell of the superpoint level (used when augmentation is off).
    pub cell_super: f64,
    /// Voxel cells of the two semantic pooling levels.
    pub cell_mega1: f64,
    pub cell_mega2: f64,

    /// Voxel cell for thinning the selected salient points into the
    /// superpoint set; zero reuses `cell_super`.
    pub salient_thin_cell: f64,
    /// Scatter neighborhood radius for saliency scores.
    pub r_salient: f64,
    pub lambda10: f64,
    pub lambda21: f64,

    /// Local descriptor radius at the superpoint level.
    pub descriptor_radius: f64,
    /// Local descriptor radius at the dense level.
    pub dense_descriptor_radius: f64,

    /// Attention layers in the semantic encoder.
    pub n_s: usize,
    /// Pooling radius as a multiple of the target level's voxel cell.
    pub pool_radius_scale: f64,

    /// Interleaved layers in the geometric transformer.
    pub geotr_layers: usize,
    /// Distance-embedding temperature.
    pub sigma_d: f64,
    /// Scale of the geometric key-bias projections, divided by sqrt(d_t).
    pub bias_gain: f64,
    /// Scale of the context block in fusion layers (semantic fusion and
    /// high-order propagation); the primary block passes through unchanged.
    pub fusion_gain: f64,

    /// Superpoint correspondences kept for the candidate overlap region.
    pub n_c: usize,
    pub sinkhorn_iters: usize,
    pub dustbin_score: f64,
    /// Assignment floor for retained dense matches.
    pub confidence_floor: f64,
    /// Divides dense cosine scores before Sinkhorn; values below 1 sharpen
    /// the assignment.
    pub matching_temperature: f64,
    /// Dense points per patch considered by dense matching; the nearest
    /// members win. Zero disables the cap.
    pub max_patch_size: usize,
    /// Dual-softmax normalization of superpoint scores before the salient
    /// reweighting and top-N_c selection.
    pub super_dual_softmax: bool,
    /// Temperature of the dual-softmax.
    pub super_matching_temperature: f64,
    /// Matching radius tau (drives metric and estimator defaults).
    pub match_radius_tau: f64,

    /// Farthest anchors per region point.
    pub k_anchors: usize,
    /// High-order attention layers (even; one group is two layers).
    pub n_g: usize,
    pub sigma_h: f64,
    pub sigma_a: f64,
    /// Pool anchor triangles by mean instead of the formula's max.
    pub hot_pool_mean: bool,

    pub lgr_acceptance_radius: f64,
    pub lgr_iterations: usize,
    pub lgr_min_hypothesis: usize,

    /// Inlier-ratio radius.
    pub ir_tau: f64,
    /// Feature-matching-recall threshold on IR.
    pub fmr_threshold: f64,
    /// RMSE threshold of the registration-recall rule.
    pub rmse_threshold: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self::indoor()
    }
}

impl PipelineConfig {
    /// Indoor preset: 5 cm matching radius, 2.5 cm base cell doubling per
    /// level.
    pub fn indoor() -> Self {
        Self {
            seed: 0,
            d_t: 64,
            heads: 4,
            cell_mid: 0.025,
            cell_super: 0.05,
            cell_mega1: 0.1,
            cell_mega2: 0.2,
            salient_thin_cell: 0.0,
            r_salient: 0.075,
            lambda10: 0.9,
            lambda21: 0.9,
            descriptor_radius: 0.125,
            dense_descriptor_radius: 0.0625,
            n_s: 3,
            pool_radius_scale: 1.5,
            geotr_layers: 3,
            sigma_d: 0.05,
            bias_gain: 1.0,
            fusion_gain: 0.5,
            n_c: 256,
            sinkhorn_iters: 100,
            dustbin_score: 0.0,
            confidence_floor: 0.05,
            matching_temperature: 1.0,
            max_patch_size: 64,
            super_dual_softmax: true,
            super_matching_temperature: 0.05,
            match_radius_tau: 0.05,
            k_anchors: 64,
            n_g: 6,
            sigma_h: 1.0,
            sigma_a: 2.0,
            hot_pool_mean: false,
            lgr_acceptance_radius: 0.05,
            lgr_iterations: 5,
            lgr_min_hypothesis: 3,
            ir_tau: 0.1,
            fmr_threshold: 0.05,
            rmse_threshold: 0.2,
        }
    }

    /// Outdoor preset: 30 cm matching radius, cells scaled accordingly.
    pub fn outdoor() -> Self {
        Self {
            cell_mid: 0.15,
            cell_super: 0.3,
            cell_mega1: 0.6,
            cell_mega2: 1.2,
            r_salient: 0.45,
            descriptor_radius: 0.75,
            dense_descriptor_radius: 0.375,
            sigma_d: 0.3,
            match_radius_tau: 0.3,
            lgr_acceptance_radius: 0.3,
            ir_tau: 0.6,
            rmse_threshold: 1.2,
            ..Self::indoor()
        }
    }

    /// Preset for the generated room-scale scenes (a few thousand points at
    /// roughly 10 cm spacing): coarser cells and a narrower transformer so
    /// a pair registers in well under a second.
    pub fn synthetic() -> Self {
        Self {
            d_t: 48,
            cell_mid: 0.16,
            cell_super: 0.32,
            cell_mega1: 0.64,
            cell_mega2: 1.28,
            salient_thin_cell: 0.32,
            r_salient: 0.45,
            lambda10: 0.65,
            lambda21: 0.95,
            descriptor_radius: 0.45,
            dense_descriptor_radius: 0.22,
            geotr_layers: 1,
            fusion_gain: 0.1,
            pool_radius_scale: 2.5,
            matching_temperature: 0.1,
            n_c: 192,
            super_matching_temperature: 0.02,
            k_anchors: 4,
            n_g: 2,
            ..Self::indoor()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("cell_mid", self.cell_mid),
            ("cell_super", self.cell_super),
            ("cell_mega1", self.cell_mega1),
            ("cell_mega2", self.cell_mega2),
            ("r_salient", self.r_salient),
            ("descriptor_radius", self.descriptor_radius),
            ("dense_descriptor_radius", self.dense_descriptor_radius),
            ("pool_radius_scale", self.pool_radius_scale),
            ("sigma_d", self.sigma_d),
            ("sigma_h", self.sigma_h),
            ("sigma_a", self.sigma_a),
            ("matching_temperature", self.matching_temperature),
            ("super_matching_temperature", self.super_matching_temperature),
            ("match_radius_tau", self.match_radius_tau),
            ("lgr_acceptance_radius", self.lgr_acceptance_radius),
            ("ir_tau", self.ir_tau),
            ("rmse_threshold", self.rmse_threshold),
        ];
        for (name, value) in positive {
            if !(value > 0.0) || !value.is_finite() {
                return Err(Error::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if self.d_t < 8 || self.d_t % (2 * self.heads) != 0 {
            return Err(Error::InvalidConfig(
                "d_t must be >= 8 and divisible by 2*heads".into(),
            ));
        }
        if self.n_c < 1 || self.k_anchors < 1 {
            return Err(Error::InvalidConfig("n_c and k_anchors must be >= 1".into()));
        }
        if self.n_g < 2 || self.n_g % 2 != 0 {
            return Err(Error::InvalidConfig("n_g must be even and >= 2".into()));
        }
        if self.n_s < 1 {
            return Err(Error::InvalidConfig("n_s must be >= 1".into()));
        }
        if self.sinkhorn_iters < 1 || self.lgr_iterations < 1 {
            return Err(Error::InvalidConfig("iteration counts must be >= 1".into()));
        }
        if self.lgr_min_hypothesis < 3 {
            return Err(Error::InvalidConfig(
                "lgr_min_hypothesis must be >= 3".into(),
            ));
        }
        if !(self.fmr_threshold > 0.0 && self.fmr_threshold < 1.0) {
            return Err(Error::InvalidConfig("fmr_threshold must be in (0,1)".into()));
        }
        if !(self.lambda10 > 0.0 && self.lambda21 > 0.0) {
            return Err(Error::InvalidConfig("lambda thresholds must be > 0".into()));
        }
        Ok(())
    }

    /// Serializes every field as `key = value` lines. `parse` of the result
    /// reproduces the config exactly.
    pub fn serialize(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("seed", self.seed.to_string());
        kv("d_t", self.d_t.to_string());
        kv("heads", self.heads.to_string());
        kv("cell_mid", fmt_f64(self.cell_mid));
        kv("cell_super", fmt_f64(self.cell_super));
        kv("cell_mega1", fmt_f64(self.cell_mega1));
        kv("cell_mega2", fmt_f64(self.cell_mega2));
        kv("salient_thin_cell", fmt_f64(self.salient_thin_cell));
        kv("r_salient", fmt_f64(self.r_salient));
        kv("lambda10", fmt_f64(self.lambda10));
        kv("lambda21", fmt_f64(self.lambda21));
        kv("descriptor_radius", fmt_f64(self.descriptor_radius));
        kv(
            "dense_descriptor_radius",
            fmt_f64(self.dense_descriptor_radius),
        );
        kv("n_s", self.n_s.to_string());
        kv("pool_radius_scale", fmt_f64(self.pool_radius_scale));
        kv("geotr_layers", self.geotr_layers.to_string());
        kv("sigma_d", fmt_f64(self.sigma_d));
        kv("bias_gain", fmt_f64(self.bias_gain));
        kv("fusion_gain", fmt_f64(self.fusion_gain));
        kv("n_c", self.n_c.to_string());
        kv("sinkhorn_iters", self.sinkhorn_iters.to_string());
        kv("dustbin_score", fmt_f64(self.dustbin_score));
        kv("confidence_floor", fmt_f64(self.confidence_floor));
        kv("matching_temperature", fmt_f64(self.matching_temperature));
        kv("max_patch_size", self.max_patch_size.to_string());
        kv("super_dual_softmax", self.super_dual_softmax.to_string());
        kv(
            "super_matching_temperature",
            fmt_f64(self.super_matching_temperature),
        );
        kv("match_radius_tau", fmt_f64(self.match_radius_tau));
        kv("k_anchors", self.k_anchors.to_string());
        kv("n_g", self.n_g.to_string());
        kv("sigma_h", fmt_f64(self.sigma_h));
        kv("sigma_a", fmt_f64(self.sigma_a));
        kv("hot_pool_mean", self.hot_pool_mean.to_string());
        kv("lgr_acceptance_radius", fmt_f64(self.lgr_acceptance_radius));
        kv("lgr_iterations", self.lgr_iterations.to_string());
        kv("lgr_min_hypothesis", self.lgr_min_hypothesis.to_string());
        kv("ir_tau", fmt_f64(self.ir_tau));
        kv("fmr_threshold", fmt_f64(self.fmr_threshold));
        kv("rmse_threshold", fmt_f64(self.rmse_threshold));
        s
    }

    /// Parses `key = value` lines over the indoor defaults. `preset` may
    /// name a different base (`indoor`, `outdoor`, `synthetic`).
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::indoor();
        // A preset line, if present, must be applied before overrides.
        for (line_no, key, value) in kv_lines(text)? {
            if key == "preset" {
                cfg = match value.as_str() {
                    "indoor" => Self::indoor(),
                    "outdoor" => Self::outdoor(),
                    "synthetic" => Self::synthetic(),
                    other => {
                        return Err(Error::ParseError {
                            line: line_no,
                            message: format!("unknown preset {other}"),
                        })
                    }
                };
            }
        }
        for (line_no, key, value) in kv_lines(text)? {
            let bad = |what: &str| Error::ParseError {
                line: line_no,
                message: format!("bad {what} value: {value}"),
            };
            match key.as_str() {
                "preset" => {}
                "seed" => cfg.seed = value.parse().map_err(|_| bad("integer"))?,
                "d_t" => cfg.d_t = value.parse().map_err(|_| bad("integer"))?,
                "heads" => cfg.heads = value.parse().map_err(|_| bad("integer"))?,
                "cell_mid" => cfg.cell_mid = value.parse().map_err(|_| bad("float"))?,
                "cell_super" => cfg.cell_super = value.parse().map_err(|_| bad("float"))?,
                "cell_mega1" => cfg.cell_mega1 = value.parse().map_err(|_| bad("float"))?,
                "cell_mega2" => cfg.cell_mega2 = value.parse().map_err(|_| bad("float"))?,
                "salient_thin_cell" => {
                    cfg.salient_thin_cell = value.parse().map_err(|_| bad("float"))?
                }
                "r_salient" => cfg.r_salient = value.parse().map_err(|_| bad("float"))?,
                "lambda10" => cfg.lambda10 = value.parse().map_err(|_| bad("float"))?,
                "lambda21" => cfg.lambda21 = value.parse().map_err(|_| bad("float"))?,
                "descriptor_radius" => {
                    cfg.descriptor_radius = value.parse().map_err(|_| bad("float"))?
                }
                "dense_descriptor_radius" => {
                    cfg.dense_descriptor_radius = value.parse().map_err(|_| bad("float"))?
                }
                "n_s" => cfg.n_s = value.parse().map_err(|_| bad("integer"))?,
                "pool_radius_scale" => {
                    cfg.pool_radius_scale = value.parse().map_err(|_| bad("float"))?
                }
                "geotr_layers" => cfg.geotr_layers = value.parse().map_err(|_| bad("integer"))?,
                "sigma_d" => cfg.sigma_d = value.parse().map_err(|_| bad("float"))?,
                "bias_gain" => cfg.bias_gain = value.parse().map_err(|_| bad("float"))?,
                "fusion_gain" => cfg.fusion_gain = value.parse().map_err(|_| bad("float"))?,
                "n_c" => cfg.n_c = value.parse().map_err(|_| bad("integer"))?,
                "sinkhorn_iters" => {
                    cfg.sinkhorn_iters = value.parse().map_err(|_| bad("integer"))?
                }
                "dustbin_score" => cfg.dustbin_score = value.parse().map_err(|_| bad("float"))?,
                "confidence_floor" => {
                    cfg.confidence_floor = value.parse().map_err(|_| bad("float"))?
                }
                "matching_temperature" => {
                    cfg.matching_temperature = value.parse().map_err(|_| bad("float"))?
                }
                "max_patch_size" => {
                    cfg.max_patch_size = value.parse().map_err(|_| bad("integer"))?
                }
                "super_dual_softmax" => {
                    cfg.super_dual_softmax = value.parse().map_err(|_| bad("bool"))?
                }
                "super_matching_temperature" => {
                    cfg.super_matching_temperature = value.parse().map_err(|_| bad("float"))?
                }
                "match_radius_tau" => {
                    cfg.match_radius_tau = value.parse().map_err(|_| bad("float"))?
                }
                "k_anchors" => cfg.k_anchors = value.parse().map_err(|_| bad("integer"))?,
                "n_g" => cfg.n_g = value.parse().map_err(|_| bad("integer"))?,
                "sigma_h" => cfg.sigma_h = value.parse().map_err(|_| bad("float"))?,
                "sigma_a" => cfg.sigma_a = value.parse().map_err(|_| bad("float"))?,
                "hot_pool_mean" => {
                    cfg.hot_pool_mean = value.parse().map_err(|_| bad("bool"))?
                }
                "lgr_acceptance_radius" => {
                    cfg.lgr_acceptance_radius = value.parse().map_err(|_| bad("float"))?
                }
                "lgr_iterations" => {
                    cfg.lgr_iterations = value.parse().map_err(|_| bad("integer"))?
                }
                "lgr_min_hypothesis" => {
                    cfg.lgr_min_hypothesis = value.parse().map_err(|_| bad("integer"))?
                }
                "ir_tau" => cfg.ir_tau = value.parse().map_err(|_| bad("float"))?,
                "fmr_threshold" => cfg.fmr_threshold = value.parse().map_err(|_| bad("float"))?,
                "rmse_threshold" => {
                    cfg.rmse_threshold = value.parse().map_err(|_| bad("float"))?
                }
                other => {
                    return Err(Error::ParseError {
                        line: line_no,
                        message: format!("unknown config key {other}"),
                    })
                }
            }
        }
        Ok(cfg)
    }
}

fn fmt_f64(v: f64) -> String {
    // Shortest representation that parses back to the same bits.
    let s = format!("{v}");
    if s.contains('.') || s.contains('e') || s.contains("inf") || s.contains("nan") {
        s
    } else {
        format!("{s}.0")
    }
}

fn kv_lines(text: &str) -> Result<Vec<(usize, String, String)>> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or(Error::ParseError {
            line: idx + 1,
            message: format!("expected 'key = value', got '{line}'"),
        })?;
        out.push((idx + 1, key.trim().to_string(), value.trim().to_string()));
    }
    Ok(out)
}

/// Parses a scene spec: `density`, `seed`, optional `preset = fig1`, and
/// `primitive = <type> <numbers...>` lines.
pub fn parse_scene_spec(text: &str) -> Result<SceneSpec> {
    let mut density = 120.0;
    let mut seed = 0u64;
    let mut primitives: Vec<Primitive> = Vec::new();
    let mut preset_primitives: Option<Vec<Primitive>> = None;

    for (line_no, key, value) in kv_lines(text)? {
        match key.as_str() {
            "density" => {
                density = value.parse().map_err(|_| Error::ParseError {
                    line: line_no,
                    message: format!("bad density {value}"),
                })?
            }
            "seed" => {
                seed = value.parse().map_err(|_| Error::ParseError {
                    line: line_no,
                    message: format!("bad seed {value}"),
                })?
            }
            "preset" => match value.as_str() {
                "fig1" => {
                    preset_primitives = Some(SceneSpec::fig1(1.0, 0).primitives);
                }
                other => {
                    return Err(Error::ParseError {
                        line: line_no,
                        message: format!("unknown scene preset {other}"),
                    })
                }
            },
            "primitive" => primitives.push(parse_primitive(&value, line_no)?),
            other => {
                return Err(Error::ParseError {
                    line: line_no,
                    message: format!("unknown scene key {other}"),
                })
            }
        }
    }
    let mut all = preset_primitives.unwrap_or_default();
    all.extend(primitives);
    if all.is_empty() {
        return Err(Error::InvalidConfig("scene spec has no primitives".into()));
    }
    Ok(SceneSpec {
        primitives: all,
        density,
        seed,
    })
}

fn parse_primitive(value: &str, line: usize) -> Result<Primitive> {
    let mut tokens = value.split_whitespace();
    let kind = tokens.next().ok_or(Error::ParseError {
        line,
        message: "empty primitive".into(),
    })?;
    let nums: Vec<f64> = tokens
        .map(|t| {
            t.parse::<f64>().map_err(|_| Error::ParseError {
                line,
                message: format!("bad number {t}"),
            })
        })
        .collect::<Result<_>>()?;
    let need = |n: usize| -> Result<()> {
        if nums.len() == n {
            Ok(())
        } else {
            Err(Error::ParseError {
                line,
                message: format!("{kind} expects {n} numbers, got {}", nums.len()),
            })
        }
    };
    Ok(match kind {
        // plane cx cy cz nx ny nz half_u half_v
        "plane" => {
            need(8)?;
            Primitive::Plane {
                center: Point3::new(nums[0], nums[1], nums[2]),
                normal: Vector3::new(nums[3], nums[4], nums[5]),
                half_u: nums[6],
                half_v: nums[7],
            }
        }
        // box cx cy cz hx hy hz
        "box" => {
            need(6)?;
            Primitive::Cuboid {
                center: Point3::new(nums[0], nums[1], nums[2]),
                half_extents: Vector3::new(nums[3], nums[4], nums[5]),
            }
        }
        // disk cx cy cz nx ny nz radius
        "disk" => {
            need(7)?;
            Primitive::Disk {
                center: Point3::new(nums[0], nums[1], nums[2]),
                normal: Vector3::new(nums[3], nums[4], nums[5]),
                radius: nums[6],
            }
        }
        // cylinder cx cy cz ax ay az radius half_height
        "cylinder" => {
            need(8)?;
            Primitive::Cylinder {
                center: Point3::new(nums[0], nums[1], nums[2]),
                axis: Vector3::new(nums[3], nums[4], nums[5]),
                radius: nums[6],
                half_height: nums[7],
            }
        }
        other => {
            return Err(Error::ParseError {
                line,
                message: format!("unknown primitive {other}"),
            })
        }
    })
}

/// Serializes a scene spec to the flat key-value format.
pub fn serialize_scene_spec(spec: &SceneSpec) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "density = {}", fmt_f64(spec.density));
    let _ = writeln!(s, "seed = {}", spec.seed);
    for p in &spec.primitives {
        match p {
            Primitive::Plane {
                center,
                normal,
                half_u,
                half_v,
            } => {
                let _ = writeln!(
                    s,
                    "primitive = plane {} {} {} {} {} {} {} {}",
                    fmt_f64(center.x),
                    fmt_f64(center.y),
                    fmt_f64(center.z),
                    fmt_f64(normal.x),
                    fmt_f64(normal.y),
                    fmt_f64(normal.z),
                    fmt_f64(*half_u),
                    fmt_f64(*half_v)
                );
            }
            Primitive::Cuboid {
                center,
                half_extents,
            } => {
                let _ = writeln!(
                    s,
                    "primitive = box {} {} {} {} {} {}",
                    fmt_f64(center.x),
                    fmt_f64(center.y),
                    fmt_f64(center.z),
                    fmt_f64(half_extents.x),
                    fmt_f64(half_extents.y),
                    fmt_f64(half_extents.z)
                );
            }
            Primitive::Disk {
                center,
                normal,
                radius,
            } => {
                let _ = writeln!(
                    s,
                    "primitive = disk {} {} {} {} {} {} {}",
                    fmt_f64(center.x),
                    fmt_f64(center.y),
                    fmt_f64(center.z),
                    fmt_f64(normal.x),
                    fmt_f64(normal.y),
                    fmt_f64(normal.z),
                    fmt_f64(*radius)
                );
            }
            Primitive::Cylinder {
                center,
                axis,
                radius,
                half_height,
            } => {
                let _ = writeln!(
                    s,
                    "primitive = cylinder {} {} {} {} {} {} {} {}",
                    fmt_f64(center.x),
                    fmt_f64(center.y),
                    fmt_f64(center.z),
                    fmt_f64(axis.x),
                    fmt_f64(axis.y),
                    fmt_f64(axis.z),
                    fmt_f64(*radius),
                    fmt_f64(*half_height)
                );
            }
        }
    }
    s
}
