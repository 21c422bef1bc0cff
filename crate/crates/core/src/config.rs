//! Scene-config file loading: a TOML document with `scene`, `camera`,
//! `sim`, `render`, `train`, and `eval` sections. Unknown keys are
//! rejected, every module invariant is checked at load time, and the raw
//! bytes are hashed so datasets can name the exact config that produced
//! them.

use crate::camgeom::{CamError, CameraModel, Extrinsics, Intrinsics, Mat3};
use crate::detect::{DetectParams, TrainConfig};
use crate::evalkit::{ApMode, EvalConfig, EvalError};
use crate::geom2d::{PolyError, Polygon};
use crate::rasterlab::RenderMode;
use crate::scenesim::{Obstacle, SceneDescription, SimConfig, SimError};
use serde::Deserialize;
use sha2::{Digest, Sha256};
use std::fs;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("TOML parse: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("camera: {0}")]
    Camera(#[from] CamError),
    #[error("scene polygon: {0}")]
    Polygon(#[from] PolyError),
    #[error("scene: {0}")]
    Scene(#[from] SimError),
    #[error("eval: {0}")]
    Eval(#[from] EvalError),
    #[error("{0}")]
    Invalid(String),
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub scene: SceneSection,
    pub camera: CameraSection,
    pub sim: SimSection,
    #[serde(default)]
    pub render: RenderSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub eval: EvalSection,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSection {
    pub background: Option<String>,
    pub walkable: Vec<Vec<[f64; 2]>>,
    #[serde(default)]
    pub obstacles: Vec<ObstacleSection>,
    pub spawn_zones: Vec<Vec<[f64; 2]>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObstacleSection {
    pub footprint: Vec<[f64; 2]>,
    pub height_mm: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraSection {
    pub f_mm: f64,
    pub dx_mm: f64,
    pub dy_mm: f64,
    pub u0: f64,
    pub v0: f64,
    pub width: u32,
    pub height: u32,
    /// Row-major world-to-camera rotation.
    pub rotation: [f64; 9],
    pub translation_mm: [f64; 3],
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    /// Inclusive [min, max] agent count.
    pub n_agents: [u32; 2],
    /// [min, max] walking speed.
    pub speed_mm_s: [f64; 2],
    pub p_group: f64,
    pub p_phone: f64,
    pub dt_s: f64,
    pub frames: u32,
    pub seed: u64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenderSection {
    /// composite | silhouette | instance
    pub mode: String,
}

impl Default for RenderSection {
    fn default() -> Self {
        Self {
            mode: "composite".to_string(),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub epochs: u32,
    pub learning_rate: f64,
    pub l2_lambda: f64,
    pub hard_negative_rounds: u32,
    pub negatives_per_frame: u32,
    pub hard_negatives_per_frame: u32,
    pub min_positive_height_px: u32,
    pub mining_score_threshold: f64,
    pub seed: u64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        Self {
            epochs: d.epochs,
            learning_rate: d.learning_rate,
            l2_lambda: d.l2_lambda,
            hard_negative_rounds: d.hard_negative_rounds,
            negatives_per_frame: d.negatives_per_frame,
            hard_negatives_per_frame: d.hard_negatives_per_frame,
            min_positive_height_px: d.min_positive_height_px,
            mining_score_threshold: d.mining_score_threshold,
            seed: d.seed,
        }
    }
}

/// Evaluation keys plus the detector's scan-time knobs; the config file
/// has exactly these six sections, so detection settings ride here.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub iou_threshold: f64,
    /// voc2007 | continuous
    pub ap_mode: String,
    pub ignore_difficult: bool,
    pub pixel_area: bool,
    pub score_threshold: f64,
    pub nms_iou: f64,
    pub pyramid_scale: f64,
    pub stride_px: u32,
}

impl Default for EvalSection {
    fn default() -> Self {
        let e = EvalConfig::default();
        let d = DetectParams::default();
        Self {
            iou_threshold: e.iou_threshold,
            ap_mode: "voc2007".to_string(),
            ignore_difficult: e.ignore_difficult,
            pixel_area: e.pixel_area,
            score_threshold: d.score_threshold,
            nms_iou: d.nms_iou,
            pyramid_scale: d.pyramid_scale,
            stride_px: d.stride_px,
        }
    }
}

/// A fully validated configuration, ready to drive the pipeline.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub scene: SceneDescription,
    pub sim: SimConfig,
    pub render_mode: RenderMode,
    pub train: TrainConfig,
    pub detect: DetectParams,
    pub eval: EvalConfig,
    /// SHA-256 of the raw config text, hex encoded.
    pub config_hash: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

pub fn load_config(path: &Path) -> Result<LoadedConfig, ConfigError> {
    parse_config(&fs::read_to_string(path)?)
}

pub fn parse_config(text: &str) -> Result<LoadedConfig, ConfigError> {
    let file: ConfigFile = toml::from_str(text)?;
    validate_config(&file, sha256_hex(text.as_bytes()))
}

fn polygons(lists: &[Vec<[f64; 2]>], what: &str) -> Result<Vec<Polygon>, ConfigError> {
    if lists.is_empty() {
        return Err(invalid(format!("{what} must list at least one polygon")));
    }
    lists
        .iter()
        .map(|pts| Polygon::new(pts.clone()).map_err(ConfigError::from))
        .collect()
}

fn validate_config(file: &ConfigFile, config_hash: String) -> Result<LoadedConfig, ConfigError> {
    let c = &file.camera;
    let rotation = Mat3([
        [c.rotation[0], c.rotation[1], c.rotation[2]],
        [c.rotation[3], c.rotation[4], c.rotation[5]],
        [c.rotation[6], c.rotation[7], c.rotation[8]],
    ]);
    let extrinsics = Extrinsics::new(rotation, c.translation_mm)?;
    let intrinsics = Intrinsics::new(c.f_mm, c.dx_mm, c.dy_mm, c.u0, c.v0, c.width, c.height)?;
    let camera = CameraModel::new(extrinsics, intrinsics);

    let walkable = polygons(&file.scene.walkable, "scene.walkable")?;
    let spawn_zones = polygons(&file.scene.spawn_zones, "scene.spawn_zones")?;
    let obstacles = file
        .scene
        .obstacles
        .iter()
        .map(|o| -> Result<Obstacle, ConfigError> {
            if !(o.height_mm > 0.0) || !o.height_mm.is_finite() {
                return Err(invalid(format!(
                    "obstacle height must be positive, got {}",
                    o.height_mm
                )));
            }
            Ok(Obstacle {
                footprint: Polygon::new(o.footprint.clone())?,
                height_mm: o.height_mm,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let scene = SceneDescription {
        background: file.scene.background.clone(),
        camera,
        walkable,
        obstacles,
        spawn_zones,
    };
    scene.validate()?;

    let s = &file.sim;
    if s.n_agents[0] > s.n_agents[1] {
        return Err(invalid(format!(
            "sim.n_agents range [{}, {}] is inverted",
            s.n_agents[0], s.n_agents[1]
        )));
    }
    if !(s.speed_mm_s[0] >= 0.0 && s.speed_mm_s[0] <= s.speed_mm_s[1]) {
        return Err(invalid(format!(
            "sim.speed_mm_s range [{}, {}] is invalid",
            s.speed_mm_s[0], s.speed_mm_s[1]
        )));
    }
    for (name, p) in [("p_group", s.p_group), ("p_phone", s.p_phone)] {
        if !(0.0..=1.0).contains(&p) {
            return Err(invalid(format!("sim.{name} must lie in [0, 1], got {p}")));
        }
    }
    if s.p_group + s.p_phone > 1.0 {
        return Err(invalid(format!(
            "sim.p_group + sim.p_phone must not exceed 1, got {}",
            s.p_group + s.p_phone
        )));
    }
    if !(s.dt_s > 0.0) || !s.dt_s.is_finite() {
        return Err(invalid(format!("sim.dt_s must be positive, got {}", s.dt_s)));
    }
    let sim = SimConfig {
        n_agents: (s.n_agents[0], s.n_agents[1]),
        speed_min: s.speed_mm_s[0],
        speed_max: s.speed_mm_s[1],
        p_group: s.p_group,
        p_phone: s.p_phone,
        dt: s.dt_s,
        frames: s.frames,
        rng_seed: s.seed,
    };

    let render_mode = match file.render.mode.as_str() {
        "composite" => RenderMode::Composite,
        "silhouette" => RenderMode::Silhouette,
        "instance" => RenderMode::InstanceColor,
        other => {
            return Err(invalid(format!(
                "render.mode must be composite, silhouette, or instance, got {other:?}"
            )))
        }
    };

    let t = &file.train;
    if t.epochs == 0 {
        return Err(invalid("train.epochs must be at least 1"));
    }
    if !(t.learning_rate > 0.0) || !t.learning_rate.is_finite() {
        return Err(invalid(format!(
            "train.learning_rate must be positive, got {}",
            t.learning_rate
        )));
    }
    if !(t.l2_lambda >= 0.0) || !t.l2_lambda.is_finite() {
        return Err(invalid(format!(
            "train.l2_lambda must be non-negative, got {}",
            t.l2_lambda
        )));
    }
    let train = TrainConfig {
        epochs: t.epochs,
        learning_rate: t.learning_rate,
        l2_lambda: t.l2_lambda,
        seed: t.seed,
        hard_negative_rounds: t.hard_negative_rounds,
        negatives_per_frame: t.negatives_per_frame,
        hard_negatives_per_frame: t.hard_negatives_per_frame,
        min_positive_height_px: t.min_positive_height_px,
        mining_score_threshold: t.mining_score_threshold,
    };

    let e = &file.eval;
    let ap_mode = match e.ap_mode.as_str() {
        "voc2007" => ApMode::Voc2007ElevenPoint,
        "continuous" => ApMode::ContinuousAuc,
        other => {
            return Err(invalid(format!(
                "eval.ap_mode must be voc2007 or continuous, got {other:?}"
            )))
        }
    };
    let eval = EvalConfig {
        iou_threshold: e.iou_threshold,
        ap_mode,
        ignore_difficult: e.ignore_difficult,
        pixel_area: e.pixel_area,
    };
    eval.validate()?;
    if !(e.pyramid_scale > 1.0) {
        return Err(invalid(format!(
            "eval.pyramid_scale must exceed 1, got {}",
            e.pyramid_scale
        )));
    }
    if e.stride_px == 0 {
        return Err(invalid("eval.stride_px must be positive"));
    }
    if !(0.0..1.0).contains(&e.nms_iou) && e.nms_iou != 1.0 {
        return Err(invalid(format!(
            "eval.nms_iou must lie in (0, 1], got {}",
            e.nms_iou
        )));
    }
    let detect = DetectParams {
        score_threshold: e.score_threshold,
        nms_iou: e.nms_iou,
        pyramid_scale: e.pyramid_scale,
        stride_px: e.stride_px,
    };

    Ok(LoadedConfig {
        scene,
        sim,
        render_mode,
        train,
        detect,
        eval,
        config_hash,
    })
}

/// The directional experiment's inputs: a scene-matched config, a
/// deliberately mismatched one, the train/test split, and the seeds to
/// repeat over.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub specific_scene: PathBuf,
    pub generic_scene: PathBuf,
    /// Fraction of generated frames held out for testing, in (0, 1).
    pub test_fraction: f64,
    pub seeds: Vec<u64>,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(invalid(format!(
                "test_fraction must lie in (0, 1), got {}",
                self.test_fraction
            )));
        }
        if self.seeds.is_empty() {
            return Err(invalid("seeds must list at least one seed"));
        }
        Ok(())
    }
}

/// Load an experiment spec, resolving relative scene paths against the
/// spec file's own directory.
pub fn load_experiment_spec(path: &Path) -> Result<ExperimentSpec, ConfigError> {
    let text = fs::read_to_string(path)?;
    let mut spec: ExperimentSpec = toml::from_str(&text)?;
    spec.validate()?;
    if let Some(dir) = path.parent() {
        if spec.specific_scene.is_relative() {
            spec.specific_scene = dir.join(&spec.specific_scene);
        }
        if spec.generic_scene.is_relative() {
            spec.generic_scene = dir.join(&spec.generic_scene);
        }
    }
    Ok(spec)
}
