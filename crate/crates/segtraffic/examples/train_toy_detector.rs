//! Trains the detection subnet on a two-class synthetic corpus and runs it
//! back over the frames. Small vs large bright rectangles play the role of
//! the two vehicle classes.
//!
//! ```bash
//! cargo run --release -p segtraffic --example train_toy_detector
//! ```

use std::fs;
use std::path::PathBuf;

use segtraffic::config::PipelineConfig;
use segtraffic::detect::{detect_objects, TinyDetector};
use segtraffic::imageio::{
    frame_file_name, gen_synthetic_sequence, ground_truth_jsonl, write_pgm, ObjectSpec, SceneConfig,
};
use segtraffic::pipeline::train_detector;

fn scene() -> SceneConfig {
    let mut objects = Vec::new();
    for k in 0..3 {
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
    SceneConfig {
        width: 32,
        height: 32,
        frames: 100,
        background: 40,
        noise: 3,
        objects,
    }
}

fn main() -> segtraffic::Result<()> {
    let dir = PathBuf::from("target/example-train");
    let frames_dir = dir.join("frames");
    fs::create_dir_all(&frames_dir)?;
    let (frames, gt) = gen_synthetic_sequence(&scene(), 99)?;
    for (i, frame) in frames.iter().enumerate() {
        fs::write(frames_dir.join(frame_file_name(i + 1)), write_pgm(frame))?;
    }
    let gt_file = dir.join("gt.jsonl");
    fs::write(&gt_file, ground_truth_jsonl(&gt))?;

    let config = PipelineConfig {
        bg_tau: 0.3,
        det_min_area: 12,
        det_epochs: 60,
        ..PipelineConfig::default()
    };
    let model_path = dir.join("model.tdet");
    println!(
        "training {} epochs on {} frames...",
        config.det_epochs,
        frames.len()
    );
    let log = train_detector(&frames_dir, &gt_file, &config, &model_path, 0)?;
    println!(
        "corpus: {} frames, {} positive / {} background RoIs",
        log.frames_used, log.positive_rois, log.background_rois
    );
    for (epoch, loss) in log.losses.iter().enumerate() {
        if epoch % 10 == 0 || epoch + 1 == log.losses.len() {
            println!("  epoch {:>3}: mean loss {loss:.4}", epoch + 1);
        }
    }

    // reload the blob and classify the proposals of one late frame
    let detector = TinyDetector::from_bytes(&fs::read(&model_path)?)?;
    let j = frames.len();
    let frame = frames.frame(j);
    let proposals: Vec<_> = gt[j - 1].iter().map(|g| g.bbox).collect();
    let detections = detect_objects(&detector, frame, &proposals, 0.5)?;
    println!(
        "frame {j}: ground truth {:?}",
        gt[j - 1]
            .iter()
            .map(|g| (g.class_id, g.bbox))
            .collect::<Vec<_>>()
    );
    for d in &detections {
        println!(
            "  detected class {} score {:.3} at {:?}",
            d.class_id, d.score, d.bbox
        );
    }
    println!(
        "model blob: {} ({} bytes)",
        model_path.display(),
        fs::metadata(&model_path)?.len()
    );
    Ok(())
}
