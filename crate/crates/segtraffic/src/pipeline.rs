//! Four-stage pipeline over a frame directory: adaptive background,
//! foreground-driven proposals, subnet detection, and active-net mesh
//! refinement — plus detector training against ground truth.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::activenet::{init_mesh, segment, ActiveNetMesh};
use crate::background::{init_model, BackgroundModel};
use crate::config::PipelineConfig;
use crate::detect::{
    detect_objects, mix_seed, propose_from_mask, Detection, RoiSample, TinyDetector, TrainConfig,
    TrainingFrame, BACKGROUND_CLASS,
};
use crate::error::{Error, Result};
use crate::eval::{iou, parse_jsonl, DetectionRecord};
use crate::imageio::{frame_file_name, read_frame, write_pgm, Frame, GroundTruth};

/// Accumulated per-stage wall-clock time in milliseconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub background_ms: f64,
    pub propose_ms: f64,
    pub detect_ms: f64,
    pub segment_ms: f64,
    pub io_ms: f64,
    /// Wall time of the whole frame loop; the stage buckets sum to this
    /// up to loop bookkeeping.
    pub wall_ms: f64,
}

/// Result of `run` over one frame directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub frames: usize,
    pub warmup_frames: usize,
    pub detections: usize,
    pub seed: u64,
    pub timings: StageTimings,
}

/// Everything the pipeline produced for one frame.
#[derive(Debug, Clone)]
pub struct FrameResult {
    pub frame_index: usize,
    pub mask: Frame,
    pub detections: Vec<Detection>,
    /// One converged mesh per detection, same order.
    pub meshes: Vec<ActiveNetMesh>,
    pub stage: StageTimings,
}

fn timed<R>(bucket: &mut f64, f: impl FnOnce() -> R) -> R {
    let start = Instant::now();
    let result = f();
    *bucket += start.elapsed().as_secs_f64() * 1e3;
    result
}

/// Frame files (`.pgm`/`.ppm`) of a directory in lexical order.
pub fn list_frames(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .collect::<std::io::Result<Vec<_>>>()?
        .into_iter()
        .map(|e| e.path())
        .filter(|p| {
            matches!(
                p.extension().and_then(|e| e.to_str()),
                Some("pgm") | Some("ppm")
            )
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Empty(format!(
            "no .pgm/.ppm frames in {}",
            dir.display()
        )));
    }
    Ok(paths)
}

fn load_frame(path: &Path) -> Result<Frame> {
    let bytes = fs::read(path).map_err(|e| {
        log::error!("reading {}: {e}", path.display());
        Error::UnreadableFrame(path.to_path_buf())
    })?;
    read_frame(&bytes).map_err(|e| {
        log::error!("decoding {}: {e}", path.display());
        Error::UnreadableFrame(path.to_path_buf())
    })
}

fn load_detector(config: &PipelineConfig, seed: u64) -> Result<TinyDetector> {
    match &config.det_model {
        Some(path) => TinyDetector::from_bytes(&fs::read(path)?),
        None => Ok(TinyDetector::new(seed, config.det_lambda)),
    }
}

fn refine_detections(
    frame: &Frame,
    mask: &Frame,
    detections: &[Detection],
    config: &PipelineConfig,
    seed: u64,
    frame_index: usize,
) -> Result<Vec<ActiveNetMesh>> {
    let mut meshes = Vec::with_capacity(detections.len());
    for (k, det) in detections.iter().enumerate() {
        let (rows, cols) = config.mesh_dims_for(det.bbox.w, det.bbox.h);
        let mesh = init_mesh(rows, cols, &det.bbox)?;
        let mesh_seed = mix_seed(seed, frame_index as u64, k as u64);
        meshes.push(segment(&mesh, frame, mask, &config.tan, mesh_seed)?);
    }
    Ok(meshes)
}

/// Runs the full pipeline: frame 1 initializes the background model; every
/// later frame is folded into the model, thresholded into a foreground
/// mask, proposed, detected, and mesh-refined. Artifacts are written under
/// `out_dir` (`masks/`, `meshes/`, `detections.jsonl`, `summary.json`).
/// Detections are suppressed during the first `bg.alpha` warmup frames.
/// Deterministic per seed (timings aside).
pub fn run_pipeline(
    frames_dir: &Path,
    config: &PipelineConfig,
    out_dir: &Path,
    seed: u64,
) -> Result<RunSummary> {
    config.validate()?;
    let paths = list_frames(frames_dir)?;
    if paths.len() < 2 {
        return Err(Error::Empty(format!(
            "need at least 2 frames, found {} in {}",
            paths.len(),
            frames_dir.display()
        )));
    }
    let detector = load_detector(config, seed)?;
    let warmup_frames = config.bg.alpha.ceil().max(0.0) as usize;

    fs::create_dir_all(out_dir)?;
    if config.write_masks {
        fs::create_dir_all(out_dir.join("masks"))?;
    }
    if config.write_meshes {
        fs::create_dir_all(out_dir.join("meshes"))?;
    }
    let mut detections_out = if config.write_detections {
        Some(std::io::BufWriter::new(fs::File::create(
            out_dir.join("detections.jsonl"),
        )?))
    } else {
        None
    };

    let mut timings = StageTimings::default();
    let mut model: Option<BackgroundModel> = None;
    let mut total_detections = 0usize;
    let wall = Instant::now();

    for (i, path) in paths.iter().enumerate() {
        let frame_index = i + 1;
        let frame = timed(&mut timings.io_ms, || load_frame(path))?;

        if model.is_none() {
            model = Some(timed(&mut timings.background_ms, || {
                init_model(&frame, config.bg)
            })?);
            continue;
        }
        let bg = model.as_mut().expect("initialized on frame 1");
        let mask = timed(&mut timings.background_ms, || -> Result<Frame> {
            bg.update(&frame)?;
            bg.extract_foreground(&frame, config.bg_tau)
        })?;
        if config.write_masks {
            timed(&mut timings.io_ms, || {
                fs::write(
                    out_dir.join("masks").join(frame_file_name(frame_index)),
                    write_pgm(&mask),
                )
            })?;
        }
        if frame_index <= warmup_frames {
            continue;
        }

        let proposals = timed(&mut timings.propose_ms, || {
            propose_from_mask(&mask, config.det_min_area)
        });
        let detections = timed(&mut timings.detect_ms, || {
            detect_objects(&detector, &frame, &proposals, config.det_confidence)
        })?;
        let meshes = timed(&mut timings.segment_ms, || {
            refine_detections(&frame, &mask, &detections, config, seed, frame_index)
        })?;

        timed(&mut timings.io_ms, || -> Result<()> {
            if let Some(out) = detections_out.as_mut() {
                for det in &detections {
                    let record = DetectionRecord {
                        frame: frame_index,
                        class_id: det.class_id,
                        bbox: det.bbox,
                        score: det.score,
                    };
                    serde_json::to_writer(&mut *out, &record)
                        .map_err(|e| Error::Format(e.to_string()))?;
                    out.write_all(b"\n")?;
                }
            }
            if config.write_meshes && !meshes.is_empty() {
                let records: Vec<_> = meshes.iter().map(|m| m.to_record()).collect();
                fs::write(
                    out_dir
                        .join("meshes")
                        .join(format!("frame_{frame_index:06}.json")),
                    serde_json::to_string(&records).map_err(|e| Error::Format(e.to_string()))?,
                )?;
            }
            Ok(())
        })?;

        log::info!(
            "frame {frame_index}: {} proposals, {} detections",
            proposals.len(),
            detections.len()
        );
        total_detections += detections.len();
    }

    if let Some(mut out) = detections_out.take() {
        timed(&mut timings.io_ms, || out.flush())?;
    }
    timings.wall_ms = wall.elapsed().as_secs_f64() * 1e3;

    let summary = RunSummary {
        frames: paths.len(),
        warmup_frames,
        detections: total_detections,
        seed,
        timings,
    };
    fs::write(
        out_dir.join("summary.json"),
        serde_json::to_string_pretty(&summary).map_err(|e| Error::Format(e.to_string()))?,
    )?;
    Ok(summary)
}

/// Outcome of a training run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: usize,
    pub frames_used: usize,
    pub positive_rois: usize,
    pub background_rois: usize,
    /// Mean per-RoI loss of each epoch, `epochs` entries.
    pub losses: Vec<f64>,
    pub model_path: PathBuf,
    pub loss_csv_path: PathBuf,
}

/// Builds labeled RoIs by running the background/proposal stages over the
/// frames and matching proposals against ground truth at IoU >= 0.5.
fn build_training_corpus(
    paths: &[PathBuf],
    gts: &[GroundTruth],
    config: &PipelineConfig,
) -> Result<(Vec<TrainingFrame>, usize, usize)> {
    let warmup_frames = config.bg.alpha.ceil().max(0.0) as usize;
    let mut model: Option<BackgroundModel> = None;
    let mut corpus = Vec::new();
    let mut positives = 0usize;
    let mut backgrounds = 0usize;

    for (i, path) in paths.iter().enumerate() {
        let frame_index = i + 1;
        let frame = load_frame(path)?;
        if model.is_none() {
            model = Some(init_model(&frame, config.bg)?);
            continue;
        }
        let bg = model.as_mut().expect("initialized on frame 1");
        bg.update(&frame)?;
        if frame_index <= warmup_frames {
            continue;
        }
        let mask = bg.extract_foreground(&frame, config.bg_tau)?;
        let proposals = propose_from_mask(&mask, config.det_min_area);
        if proposals.is_empty() {
            continue;
        }
        let frame_gts: Vec<&GroundTruth> = gts.iter().filter(|g| g.frame == frame_index).collect();
        let mut rois = Vec::with_capacity(proposals.len());
        for proposal in proposals {
            let best = frame_gts
                .iter()
                .map(|g| (iou(&proposal, &g.bbox), *g))
                .filter(|(v, _)| *v >= 0.5)
                .max_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
            match best {
                Some((_, g)) => {
                    positives += 1;
                    rois.push(RoiSample {
                        roi: proposal,
                        label: g.class_id as usize,
                        target: [
                            g.bbox.x as f64 - proposal.x as f64,
                            g.bbox.y as f64 - proposal.y as f64,
                            g.bbox.w as f64 - proposal.w as f64,
                            g.bbox.h as f64 - proposal.h as f64,
                        ],
                    });
                }
                None => {
                    backgrounds += 1;
                    rois.push(RoiSample {
                        roi: proposal,
                        label: BACKGROUND_CLASS,
                        target: [0.0; 4],
                    });
                }
            }
        }
        corpus.push(TrainingFrame { frame, rois });
    }
    Ok((corpus, positives, backgrounds))
}

/// Trains the detection subnet on proposals labeled against ground truth,
/// writing the `TDET1` model blob to `out_model` and a per-epoch loss CSV
/// (`epoch,loss` per row, no header) next to it.
pub fn train_detector(
    frames_dir: &Path,
    gt_file: &Path,
    config: &PipelineConfig,
    out_model: &Path,
    seed: u64,
) -> Result<TrainingLog> {
    config.validate()?;
    let paths = list_frames(frames_dir)?;
    if paths.len() < 2 {
        return Err(Error::Empty(format!(
            "need at least 2 frames, found {} in {}",
            paths.len(),
            frames_dir.display()
        )));
    }
    let gts: Vec<GroundTruth> = parse_jsonl(&fs::read_to_string(gt_file)?)?;
    if gts.is_empty() {
        return Err(Error::Empty(format!(
            "no ground truth in {}",
            gt_file.display()
        )));
    }

    let (corpus, positive_rois, background_rois) = build_training_corpus(&paths, &gts, config)?;
    if positive_rois == 0 {
        return Err(Error::NoPositiveRois);
    }
    log::info!(
        "training corpus: {} frames, {positive_rois} positive / {background_rois} background RoIs",
        corpus.len()
    );

    let mut detector = TinyDetector::new(seed, config.det_lambda);
    let train_cfg = TrainConfig {
        images_per_batch: config.det_images_per_batch,
        rois_per_image: config.det_rois_per_image,
        epochs: config.det_epochs,
        learning_rate: config.det_lr,
        momentum: config.det_momentum,
    };
    let losses = crate::detect::train_epochs(&mut detector, &corpus, &train_cfg, seed)?;

    if let Some(parent) = out_model.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    fs::write(out_model, detector.to_bytes())?;
    let loss_csv_path = PathBuf::from(format!("{}.loss.csv", out_model.display()));
    let mut csv = String::new();
    for (epoch, loss) in losses.iter().enumerate() {
        csv.push_str(&format!("{},{}\n", epoch + 1, loss));
    }
    fs::write(&loss_csv_path, csv)?;

    Ok(TrainingLog {
        epochs: train_cfg.epochs,
        frames_used: corpus.len(),
        positive_rois,
        background_rois,
        losses,
        model_path: out_model.to_path_buf(),
        loss_csv_path,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imageio::{gen_synthetic_sequence, ground_truth_jsonl, SceneConfig};

    fn write_scene(dir: &Path, cfg: &SceneConfig, seed: u64) {
        let (frames, gt) = gen_synthetic_sequence(cfg, seed).unwrap();
        fs::create_dir_all(dir).unwrap();
        for (i, frame) in frames.iter().enumerate() {
            fs::write(dir.join(frame_file_name(i + 1)), write_pgm(frame)).unwrap();
        }
        fs::write(dir.join("gt.jsonl"), ground_truth_jsonl(&gt)).unwrap();
    }

    fn quiet_scene(frames: usize) -> SceneConfig {
        SceneConfig {
            width: 32,
            height: 32,
            frames,
            background: 40,
            noise: 2,
            objects: vec![],
        }
    }

    fn fast_config() -> PipelineConfig {
        PipelineConfig {
            bg: crate::background::GainParams {
                alpha: 3.0,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn static_scene_produces_no_detections() {
        let tmp = tempfile::tempdir().unwrap();
        let frames_dir = tmp.path().join("frames");
        write_scene(&frames_dir, &quiet_scene(8), 1);
        let out = tmp.path().join("out");
        let summary = run_pipeline(&frames_dir, &fast_config(), &out, 1).unwrap();
        assert_eq!(summary.frames, 8);
        assert_eq!(summary.detections, 0);
        assert!(out.join("summary.json").exists());
        assert!(out.join("detections.jsonl").exists());
        assert_eq!(
            fs::read_to_string(out.join("detections.jsonl")).unwrap(),
            ""
        );
        // masks exist for frames 2..=8
        for j in 2..=8 {
            assert!(out.join("masks").join(frame_file_name(j)).exists());
        }
        assert!(!out.join("masks").join(frame_file_name(1)).exists());
    }

    #[test]
    fn empty_or_too_small_directories_error() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("frames");
        fs::create_dir_all(&dir).unwrap();
        assert!(run_pipeline(&dir, &fast_config(), &tmp.path().join("o"), 0).is_err());
        write_scene(&dir, &quiet_scene(1), 0);
        assert!(run_pipeline(&dir, &fast_config(), &tmp.path().join("o"), 0).is_err());
    }

    #[test]
    fn unreadable_frame_aborts_with_its_name() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("frames");
        write_scene(&dir, &quiet_scene(4), 3);
        fs::write(dir.join("frame_000002.pgm"), b"P5\n9 9\n255\nshort").unwrap();
        let err = run_pipeline(&dir, &fast_config(), &tmp.path().join("o"), 0).unwrap_err();
        assert!(err.to_string().contains("frame_000002.pgm"), "{err}");
    }

    #[test]
    fn zero_epoch_training_writes_seeded_init() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("frames");
        // object enters from off-canvas after warmup so it sweeps pixels the
        // background model has only ever seen as background
        let mut scene = SceneConfig {
            width: 48,
            height: 24,
            frames: 14,
            background: 40,
            noise: 2,
            objects: vec![],
        };
        scene.objects.push(crate::imageio::ObjectSpec {
            class_id: 0,
            x: -12.0,
            y: 6.0,
            w: 12,
            h: 12,
            vx: 2.0,
            vy: 0.0,
            intensity: 220,
        });
        write_scene(&dir, &scene, 5);
        let mut config = fast_config();
        config.bg_tau = 0.3;
        config.det_epochs = 0;
        let model_path = tmp.path().join("model.tdet");
        let log = train_detector(&dir, &dir.join("gt.jsonl"), &config, &model_path, 42).unwrap();
        assert_eq!(log.epochs, 0);
        assert!(log.losses.is_empty());
        assert!(log.positive_rois > 0);
        let written = TinyDetector::from_bytes(&fs::read(&model_path).unwrap()).unwrap();
        assert_eq!(written, TinyDetector::new(42, config.det_lambda));
        // empty CSV: zero rows for zero epochs
        assert_eq!(fs::read_to_string(&log.loss_csv_path).unwrap(), "");
    }

    #[test]
    fn no_positive_rois_is_reported() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("frames");
        let mut scene = quiet_scene(10);
        scene.objects.push(crate::imageio::ObjectSpec {
            class_id: 0,
            x: 8.0,
            y: 8.0,
            w: 12,
            h: 12,
            vx: 0.0,
            vy: 0.0,
            intensity: 220,
        });
        write_scene(&dir, &scene, 5);
        // ground truth nowhere near the object
        let bogus_gt = tmp.path().join("bogus.jsonl");
        fs::write(
            &bogus_gt,
            "{\"frame\":5,\"class_id\":0,\"bbox\":[0,0,2,2]}\n",
        )
        .unwrap();
        let err =
            train_detector(&dir, &bogus_gt, &fast_config(), &tmp.path().join("m"), 0).unwrap_err();
        assert!(matches!(err, Error::NoPositiveRois));
    }
}
