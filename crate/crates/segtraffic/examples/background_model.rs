//! Adaptive background modeling on a synthetic sequence: watch the gain
//! schedule ramp up, then pull a foreground mask for a moving object.
//!
//! ```bash
//! cargo run -p segtraffic --example background_model
//! ```

use std::fs;
use std::path::PathBuf;

use segtraffic::background::{gain_at, init_model, GainParams};
use segtraffic::imageio::{
    frame_file_name, gen_synthetic_sequence, write_pgm, ObjectSpec, SceneConfig,
};

fn main() -> segtraffic::Result<()> {
    let params = GainParams::default();
    println!(
        "gain schedule (gain={}, alpha={}, beta={}):",
        params.gain, params.alpha, params.beta
    );
    for cont in [1, 5, 10, 20, 40, 80] {
        println!(
            "  frame {cont:>3}: gain {:.4}",
            gain_at(&params, cont as f64)
        );
    }

    // a bright square sweeps across the canvas after the model has warmed up
    let scene = SceneConfig {
        width: 64,
        height: 48,
        frames: 60,
        background: 50,
        noise: 3,
        objects: vec![ObjectSpec {
            class_id: 0,
            x: -12.0,
            y: 18.0,
            w: 12,
            h: 12,
            vx: 1.5,
            vy: 0.0,
            intensity: 230,
        }],
    };
    let (frames, _) = gen_synthetic_sequence(&scene, 11)?;

    // fold frames in sequentially, grabbing the mask while the object is
    // mid-canvas
    let probe_frame = 40;
    let mut model = init_model(frames.frame(1), params)?;
    let mut mask = None;
    for j in 2..=frames.len() {
        model.update(frames.frame(j))?;
        if j == probe_frame {
            mask = Some(model.extract_foreground(frames.frame(j), 0.3)?);
        }
    }
    let mask = mask.expect("probe frame inside the sequence");

    let estimate = model.background_estimate();
    let residual: f64 = estimate
        .data()
        .iter()
        .map(|&v| (v as f64 - scene.background as f64).abs())
        .sum::<f64>()
        / estimate.data().len() as f64;
    println!(
        "background estimate after {} frames: mean |error| {residual:.2} intensity levels",
        frames.len()
    );

    let foreground = mask.data().iter().filter(|&&v| v == 255).count();
    println!("frame {probe_frame}: {foreground} foreground pixels (object is 12x12 = 144)");

    let out = PathBuf::from("target/example-background");
    fs::create_dir_all(&out)?;
    fs::write(out.join("estimate.pgm"), write_pgm(&estimate))?;
    fs::write(
        out.join(frame_file_name(probe_frame)),
        write_pgm(frames.frame(probe_frame)),
    )?;
    fs::write(out.join("mask.pgm"), write_pgm(&mask))?;
    println!(
        "wrote estimate.pgm, {}, mask.pgm to {}",
        frame_file_name(probe_frame),
        out.display()
    );
    Ok(())
}
