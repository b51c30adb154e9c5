//! Precision/recall evaluation walkthrough: matching, per-class AP, and
//! how ranking mistakes show up in the numbers.
//!
//! ```bash
//! cargo run -p segtraffic --example evaluate_detections
//! ```

use segtraffic::detect::RoiBox;
use segtraffic::eval::{average_precision, evaluate_records, iou, DetectionRecord};
use segtraffic::imageio::GroundTruth;

fn main() -> segtraffic::Result<()> {
    let a = RoiBox::new(0, 0, 10, 10);
    let b = RoiBox::new(5, 0, 10, 10);
    println!("iou of {a:?} and {b:?} = {:.4}", iou(&a, &b));

    // ranking matters: a false positive above the true positive halves AP
    let (ap_fp_first, _) = average_precision(&[(0.9, false), (0.8, true)], 1);
    let (ap_tp_first, _) = average_precision(&[(0.9, true), (0.8, false)], 1);
    println!("AP with FP ranked first: {ap_fp_first:.3}; with TP first: {ap_tp_first:.3}");

    // a small two-class benchmark
    let gt = |frame, class_id, x, y, w, h| GroundTruth {
        frame,
        class_id,
        bbox: RoiBox::new(x, y, w, h),
    };
    let pred = |frame, class_id, x, y, w, h, score| DetectionRecord {
        frame,
        class_id,
        bbox: RoiBox::new(x, y, w, h),
        score,
    };
    let gts = vec![
        gt(1, 0, 0, 0, 10, 10),
        gt(1, 0, 20, 0, 10, 10),
        gt(2, 0, 0, 0, 10, 10),
        gt(1, 1, 50, 50, 8, 8),
    ];
    let preds = vec![
        pred(1, 0, 0, 0, 10, 10, 0.9),
        pred(1, 0, 20, 2, 10, 10, 0.8),
        pred(1, 0, 1, 1, 10, 10, 0.7), // duplicate of the first object
        pred(2, 0, 40, 40, 5, 5, 0.6), // misses entirely
        pred(1, 1, 50, 50, 8, 8, 0.95),
    ];
    let report = evaluate_records(&preds, &gts, 0.5)?;
    for (class_id, class_eval) in &report.per_class {
        println!(
            "class {class_id}: AP {:.4} over {} ground truths",
            class_eval.ap, class_eval.num_gt
        );
        for p in &class_eval.points {
            println!(
                "  threshold {:.2}: recall {:.3} precision {:.3} (tp {} fp {} fn {})",
                p.threshold, p.recall, p.precision, p.tp, p.fp, p.false_negatives
            );
        }
    }
    println!("mAP = {:.4}", report.map);
    println!(
        "report JSON: {}",
        serde_json::to_string(&report).expect("serializable")
    );
    Ok(())
}
