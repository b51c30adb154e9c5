//! # segtraffic
//!
//! Vehicle segmentation for traffic video, built from four cooperating
//! stages plus an evaluation harness:
//!
//! 1. **Adaptive background modeling** ([`background`]): a per-pixel
//!    density over intensities with a sigmoid-scheduled learning gain;
//!    foreground is whatever the model explains poorly.
//! 2. **Detection subnet** ([`detect`]): a small fixed convnet with RoI max
//!    pooling and sibling softmax/box-delta heads, trained by hierarchical
//!    mini-batch SGD on a multitask loss. Region proposals come from the
//!    foreground mask's connected components.
//! 3. **Mesh refinement** ([`activenet`]): a topological active net whose
//!    nodes greedily minimize an internal + external energy; links over
//!    background are cut, producing hole-based meshes, with a seeded
//!    perturbation step to escape local minima.
//! 4. **Evaluation** ([`eval`]): IoU matching, precision/recall curves,
//!    per-class average precision, and mAP.
//!
//! [`pipeline`] wires the stages over a frame directory and [`cli`] exposes
//! the `run` / `train` / `eval` / `synth` batch commands. [`imageio`]
//! handles bit-exact PGM/PPM frames and deterministic synthetic scenes.
//!
//! ## Quick start
//!
//! ```
//! use segtraffic::background::{init_model, GainParams};
//! use segtraffic::imageio::{gen_synthetic_sequence, SceneConfig, ObjectSpec};
//!
//! let scene = SceneConfig {
//!     width: 32, height: 32, frames: 30, background: 40, noise: 2,
//!     objects: vec![ObjectSpec {
//!         class_id: 0, x: 4.0, y: 10.0, w: 10, h: 10,
//!         vx: 0.5, vy: 0.0, intensity: 220,
//!     }],
//! };
//! let (frames, _gt) = gen_synthetic_sequence(&scene, 7).unwrap();
//!
//! let mut model = init_model(frames.frame(1), GainParams::default()).unwrap();
//! for j in 2..=frames.len() {
//!     model.update(frames.frame(j)).unwrap();
//! }
//! let mask = model.extract_foreground(frames.frame(frames.len()), 0.05).unwrap();
//! assert!(mask.data().iter().any(|&v| v == 255));
//! ```
//!
//! The `examples/` directory walks through each capability; see the README
//! for the CLI and file formats.

pub mod activenet;
pub mod background;
pub mod cli;
pub mod config;
pub mod detect;
pub mod error;
pub mod eval;
pub mod imageio;
pub mod pipeline;

pub use activenet::{
    cut_links, greedy_deform_pass, init_mesh, mesh_energy, segment, subnet_mask, ActiveNetMesh,
    EnergyParams, MeshRecord,
};
pub use background::{
    background_estimate, extract_foreground, gain_at, init_model, update_model, BackgroundModel,
    GainParams, IntensityDensity,
};
pub use config::PipelineConfig;
pub use detect::{
    conv_forward, detect_objects, multitask_loss, propose_from_mask, roi_max_pool,
    roi_pool_backward, sample_rois_hierarchical, sgd_step, sibling_heads, Detection, FeatureMap,
    RoiBox, TinyDetector,
};
pub use error::{Error, Result};
pub use eval::{average_precision, evaluate, iou, match_detections, EvalReport, PRPoint};
pub use imageio::{
    gen_synthetic_sequence, read_pgm, write_pgm, Frame, FrameSequence, GroundTruth, SceneConfig,
};
pub use pipeline::{run_pipeline, train_detector, FrameResult, RunSummary, TrainingLog};
