//! Renders a deterministic synthetic traffic scene and writes the frames
//! plus ground truth, the same artifacts `segtraffic synth` produces.
//!
//! ```bash
//! cargo run -p segtraffic --example synth_scene
//! ```

use std::fs;
use std::path::PathBuf;

use segtraffic::imageio::{
    frame_file_name, gen_synthetic_sequence, ground_truth_jsonl, write_pgm, ObjectSpec, SceneConfig,
};

fn main() -> segtraffic::Result<()> {
    let scene = SceneConfig {
        width: 64,
        height: 48,
        frames: 40,
        background: 40,
        noise: 3,
        objects: vec![
            ObjectSpec {
                class_id: 0,
                x: -8.0,
                y: 6.0,
                w: 8,
                h: 8,
                vx: 2.0,
                vy: 0.0,
                intensity: 220,
            },
            ObjectSpec {
                class_id: 1,
                x: 70.0,
                y: 26.0,
                w: 16,
                h: 16,
                vx: -1.5,
                vy: 0.0,
                intensity: 200,
            },
        ],
    };

    let seed = 7;
    let (frames, gt) = gen_synthetic_sequence(&scene, seed)?;

    let out = PathBuf::from("target/example-synth");
    fs::create_dir_all(&out)?;
    for (i, frame) in frames.iter().enumerate() {
        fs::write(out.join(frame_file_name(i + 1)), write_pgm(frame))?;
    }
    fs::write(out.join("gt.jsonl"), ground_truth_jsonl(&gt))?;

    let boxes: usize = gt.iter().map(|g| g.len()).sum();
    println!(
        "wrote {} frames ({}x{}) to {}",
        frames.len(),
        scene.width,
        scene.height,
        out.display()
    );
    println!(
        "ground truth: {boxes} boxes across {} frames",
        gt.iter().filter(|g| !g.is_empty()).count()
    );
    for (j, frame_gt) in gt.iter().enumerate().take(5) {
        println!(
            "  frame {}: {:?}",
            j + 1,
            frame_gt.iter().map(|g| g.bbox).collect::<Vec<_>>()
        );
    }
    println!("re-running with seed {seed} reproduces these bytes exactly");
    Ok(())
}
