//! Pipeline configuration: a flat JSON object with dotted keys
//! (`bg.*`, `tan.*`, `det.*`, `pipeline.*`). Every key has a default;
//! unknown keys are hard errors so typos cannot silently skew a run.

use std::path::PathBuf;

use serde_json::Value;

use crate::activenet::EnergyParams;
use crate::background::GainParams;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    /// Background model parameters (`bg.gain`, `bg.alpha`, `bg.beta`, `bg.sigma`).
    pub bg: GainParams,
    /// Foreground threshold as a fraction of the per-pixel density peak (`bg.tau`).
    pub bg_tau: f64,
    /// Mesh energy parameters (`tan.*`).
    pub tan: EnergyParams,
    /// Loss balance between classification and regression (`det.lambda`).
    pub det_lambda: f64,
    /// SGD learning rate (`det.lr`).
    pub det_lr: f64,
    /// SGD momentum (`det.momentum`).
    pub det_momentum: f64,
    /// Frames per mini-batch (`det.images_per_batch`).
    pub det_images_per_batch: usize,
    /// RoIs sampled per frame (`det.rois_per_image`).
    pub det_rois_per_image: usize,
    /// Training epochs (`det.epochs`).
    pub det_epochs: usize,
    /// Confidence threshold for emitting detections (`det.confidence`).
    pub det_confidence: f64,
    /// Minimum connected-component area for proposals (`det.min_area`).
    pub det_min_area: usize,
    /// Optional path to a trained `TDET1` model blob (`det.model`, "" = none).
    pub det_model: Option<PathBuf>,
    /// Approximate pixels per mesh node (`pipeline.mesh_px_per_node`).
    pub mesh_px_per_node: f64,
    /// Mesh node count clamp per axis (`pipeline.mesh_min_nodes` / `pipeline.mesh_max_nodes`).
    pub mesh_min_nodes: usize,
    pub mesh_max_nodes: usize,
    /// Output toggles (`pipeline.write_masks` / `write_meshes` / `write_detections`).
    pub write_masks: bool,
    pub write_meshes: bool,
    pub write_detections: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            bg: GainParams::default(),
            bg_tau: 0.05,
            tan: EnergyParams::default(),
            det_lambda: 1.0,
            det_lr: 0.01,
            det_momentum: 0.9,
            det_images_per_batch: 5,
            det_rois_per_image: 8,
            det_epochs: 200,
            det_confidence: 0.5,
            det_min_area: 16,
            det_model: None,
            mesh_px_per_node: 4.0,
            mesh_min_nodes: 4,
            mesh_max_nodes: 16,
            write_masks: true,
            write_meshes: true,
            write_detections: true,
        }
    }
}

fn want_f64(key: &str, value: &Value) -> Result<f64> {
    value
        .as_f64()
        .ok_or_else(|| Error::Config(format!("key {key:?} must be a number, got {value}")))
}

fn want_usize(key: &str, value: &Value) -> Result<usize> {
    value.as_u64().map(|v| v as usize).ok_or_else(|| {
        Error::Config(format!(
            "key {key:?} must be a non-negative integer, got {value}"
        ))
    })
}

fn want_bool(key: &str, value: &Value) -> Result<bool> {
    value
        .as_bool()
        .ok_or_else(|| Error::Config(format!("key {key:?} must be a boolean, got {value}")))
}

fn want_f64_array(key: &str, value: &Value) -> Result<Vec<f64>> {
    value
        .as_array()
        .and_then(|a| a.iter().map(|v| v.as_f64()).collect::<Option<Vec<f64>>>())
        .ok_or_else(|| {
            Error::Config(format!(
                "key {key:?} must be an array of numbers, got {value}"
            ))
        })
}

impl PipelineConfig {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let value: Value =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("bad JSON: {e}")))?;
        let object = value
            .as_object()
            .ok_or_else(|| Error::Config("config must be a JSON object".into()))?;

        let mut cfg = Self::default();
        for (key, v) in object {
            match key.as_str() {
                "bg.gain" => cfg.bg.gain = want_f64(key, v)?,
                "bg.alpha" => cfg.bg.alpha = want_f64(key, v)?,
                "bg.beta" => cfg.bg.beta = want_f64(key, v)?,
                "bg.sigma" => cfg.bg.sigma = want_f64(key, v)?,
                "bg.tau" => cfg.bg_tau = want_f64(key, v)?,
                "tan.elasticity" => cfg.tan.elasticity = want_f64(key, v)?,
                "tan.rigidity" => cfg.tan.rigidity = want_f64(key, v)?,
                "tan.w_internal" => cfg.tan.w_internal = want_f64(key, v)?,
                "tan.w_boundary" => cfg.tan.w_boundary = want_f64(key, v)?,
                "tan.w_distance" => cfg.tan.w_distance = want_f64(key, v)?,
                "tan.search_radius" => cfg.tan.search_radius = want_usize(key, v)? as u32,
                "tan.max_passes" => cfg.tan.max_passes = want_usize(key, v)?,
                "tan.cut_thresholds" => cfg.tan.cut_thresholds = want_f64_array(key, v)?,
                "det.lambda" => cfg.det_lambda = want_f64(key, v)?,
                "det.lr" => cfg.det_lr = want_f64(key, v)?,
                "det.momentum" => cfg.det_momentum = want_f64(key, v)?,
                "det.images_per_batch" => cfg.det_images_per_batch = want_usize(key, v)?,
                "det.rois_per_image" => cfg.det_rois_per_image = want_usize(key, v)?,
                "det.epochs" => cfg.det_epochs = want_usize(key, v)?,
                "det.confidence" => cfg.det_confidence = want_f64(key, v)?,
                "det.min_area" => cfg.det_min_area = want_usize(key, v)?,
                "det.model" => {
                    let path = v.as_str().ok_or_else(|| {
                        Error::Config(format!("key \"det.model\" must be a string, got {v}"))
                    })?;
                    cfg.det_model = (!path.is_empty()).then(|| PathBuf::from(path));
                }
                "pipeline.mesh_px_per_node" => cfg.mesh_px_per_node = want_f64(key, v)?,
                "pipeline.mesh_min_nodes" => cfg.mesh_min_nodes = want_usize(key, v)?,
                "pipeline.mesh_max_nodes" => cfg.mesh_max_nodes = want_usize(key, v)?,
                "pipeline.write_masks" => cfg.write_masks = want_bool(key, v)?,
                "pipeline.write_meshes" => cfg.write_meshes = want_bool(key, v)?,
                "pipeline.write_detections" => cfg.write_detections = want_bool(key, v)?,
                other => {
                    return Err(Error::Config(format!("unknown config key {other:?}")));
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.bg.validate()?;
        self.tan.validate()?;
        if !(self.bg_tau > 0.0 && self.bg_tau <= 1.0) {
            return Err(Error::Config(format!(
                "bg.tau must be in (0, 1], got {}",
                self.bg_tau
            )));
        }
        if self.det_images_per_batch == 0 || self.det_rois_per_image == 0 {
            return Err(Error::Config("det batch sizes must be >= 1".into()));
        }
        if self.det_lr.is_nan() || self.det_lr <= 0.0 {
            return Err(Error::Config(format!(
                "det.lr must be > 0, got {}",
                self.det_lr
            )));
        }
        if !(0.0..1.0).contains(&self.det_momentum) {
            return Err(Error::Config(format!(
                "det.momentum must be in [0, 1), got {}",
                self.det_momentum
            )));
        }
        if !(0.0..=1.0).contains(&self.det_confidence) {
            return Err(Error::Config(format!(
                "det.confidence must be in [0, 1], got {}",
                self.det_confidence
            )));
        }
        if self.mesh_min_nodes < 2 || self.mesh_max_nodes < self.mesh_min_nodes {
            return Err(Error::Config(
                "mesh node clamp must satisfy 2 <= min <= max".into(),
            ));
        }
        if self.mesh_px_per_node.is_nan() || self.mesh_px_per_node <= 0.0 {
            return Err(Error::Config(
                "pipeline.mesh_px_per_node must be > 0".into(),
            ));
        }
        Ok(())
    }

    /// Mesh grid size for one detection box: about one node per
    /// `mesh_px_per_node` pixels, clamped per axis.
    pub fn mesh_dims_for(&self, width: u32, height: u32) -> (usize, usize) {
        let clamp = |px: u32| {
            ((px as f64 / self.mesh_px_per_node).round() as usize)
                .clamp(self.mesh_min_nodes, self.mesh_max_nodes)
        };
        (clamp(height), clamp(width))
    }
}
