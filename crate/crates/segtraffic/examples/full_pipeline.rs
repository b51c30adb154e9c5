//! The whole chain in one process: synthesize a scene, train the detector,
//! run the four-stage pipeline, and score the detections against ground
//! truth — the library equivalent of
//! `segtraffic synth && segtraffic train && segtraffic run && segtraffic eval`.
//!
//! ```bash
//! cargo run --release -p segtraffic --example full_pipeline
//! ```

use std::fs;
use std::path::PathBuf;

use segtraffic::config::PipelineConfig;
use segtraffic::eval::evaluate;
use segtraffic::imageio::{
    frame_file_name, gen_synthetic_sequence, ground_truth_jsonl, write_pgm, ObjectSpec, SceneConfig,
};
use segtraffic::pipeline::{run_pipeline, train_detector};

fn main() -> segtraffic::Result<()> {
    let dir = PathBuf::from("target/example-pipeline");
    let frames_dir = dir.join("frames");
    let out_dir = dir.join("out");
    let seed = 42;

    // stage 0: synthesize a scene with two vehicle classes in separate lanes
    let mut objects = Vec::new();
    for k in 0..4 {
        objects.push(ObjectSpec {
            class_id: 0,
            x: -6.0 - 42.0 * k as f64,
            y: 3.0,
            w: 6,
            h: 6,
            vx: 1.0,
            vy: 0.0,
            intensity: 220,
        });
        objects.push(ObjectSpec {
            class_id: 1,
            x: -35.0 - 42.0 * k as f64,
            y: 14.0,
            w: 14,
            h: 14,
            vx: 1.0,
            vy: 0.0,
            intensity: 220,
        });
    }
    let scene = SceneConfig {
        width: 32,
        height: 32,
        frames: 120,
        background: 40,
        noise: 3,
        objects,
    };
    fs::create_dir_all(&frames_dir)?;
    let (frames, gt) = gen_synthetic_sequence(&scene, seed)?;
    for (i, frame) in frames.iter().enumerate() {
        fs::write(frames_dir.join(frame_file_name(i + 1)), write_pgm(frame))?;
    }
    let gt_file = dir.join("gt.jsonl");
    fs::write(&gt_file, ground_truth_jsonl(&gt))?;
    println!(
        "synth: {} frames into {}",
        frames.len(),
        frames_dir.display()
    );

    // train the subnet on proposals labeled against ground truth
    let mut config = PipelineConfig {
        bg_tau: 0.3,
        det_min_area: 12,
        det_epochs: 80,
        ..PipelineConfig::default()
    };
    let model_path = dir.join("model.tdet");
    let log = train_detector(&frames_dir, &gt_file, &config, &model_path, seed)?;
    println!(
        "train: {} epochs, loss {:.3} -> {:.3} ({} positives)",
        log.epochs,
        log.losses.first().copied().unwrap_or(0.0),
        log.losses.last().copied().unwrap_or(0.0),
        log.positive_rois
    );

    // run all four stages with the trained model
    config.det_model = Some(model_path);
    let summary = run_pipeline(&frames_dir, &config, &out_dir, seed)?;
    println!(
        "run: {} detections over {} frames ({} warmup); stages: bg {:.0}ms, propose {:.0}ms, detect {:.0}ms, segment {:.0}ms, io {:.0}ms",
        summary.detections,
        summary.frames,
        summary.warmup_frames,
        summary.timings.background_ms,
        summary.timings.propose_ms,
        summary.timings.detect_ms,
        summary.timings.segment_ms,
        summary.timings.io_ms,
    );

    // score against the synthetic ground truth
    let report = evaluate(&out_dir.join("detections.jsonl"), &gt_file, 0.5)?;
    for (class_id, class_eval) in &report.per_class {
        println!(
            "eval: class {class_id} AP {:.3} ({} gt)",
            class_eval.ap, class_eval.num_gt
        );
    }
    println!("eval: mAP {:.3}", report.map);
    println!(
        "artifacts: {}/masks, {}/meshes, detections.jsonl, summary.json",
        out_dir.display(),
        out_dir.display()
    );
    Ok(())
}
