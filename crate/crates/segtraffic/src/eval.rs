//! Detection evaluation: IoU, greedy matching, precision/recall curves,
//! per-class average precision (all-points interpolation), and mAP.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::detect::{Detection, RoiBox};
use crate::error::{Error, Result};
use crate::imageio::GroundTruth;

/// One point of a precision/recall curve and the score threshold that
/// produced it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PRPoint {
    pub threshold: f64,
    pub recall: f64,
    pub precision: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub false_negatives: usize,
}

/// Per-class evaluation: AP plus the PR points behind it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassEval {
    pub ap: f64,
    pub num_gt: usize,
    pub points: Vec<PRPoint>,
}

/// Full report: per-class APs and their mean over classes with ground truth.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_class: BTreeMap<u32, ClassEval>,
    pub map: f64,
}

/// A detection as serialized to JSON lines:
/// `{"frame":int,"class_id":int,"bbox":[x,y,w,h],"score":float}`.
/// A missing score defaults to 1.0 so ground-truth files also parse.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub frame: usize,
    pub class_id: u32,
    pub bbox: RoiBox,
    #[serde(default = "default_score")]
    pub score: f64,
}

fn default_score() -> f64 {
    1.0
}

/// Intersection over union of two boxes on the continuous plane; 0 when
/// disjoint.
pub fn iou(a: &RoiBox, b: &RoiBox) -> f64 {
    let ix = (a.right().min(b.right()) as f64 - a.x.max(b.x) as f64).max(0.0);
    let iy = (a.bottom().min(b.bottom()) as f64 - a.y.max(b.y) as f64).max(0.0);
    let inter = ix * iy;
    let union = a.area() as f64 + b.area() as f64 - inter;
    inter / union
}

/// Outcome of matching one class's detections against ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    /// `(score, is_true_positive)` in match order (score descending).
    pub labels: Vec<(f64, bool)>,
    /// Ground-truth boxes left unmatched.
    pub false_negatives: usize,
}

/// Greedy matching: detections sorted by score descending (ties: larger box
/// first, then input order); each takes the unmatched ground truth of
/// highest IoU >= `iou_min`. A ground truth matches at most one detection.
pub fn match_detections(dets: &[Detection], gts: &[RoiBox], iou_min: f64) -> MatchResult {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        dets[b]
            .score
            .partial_cmp(&dets[a].score)
            .unwrap()
            .then(dets[b].bbox.area().cmp(&dets[a].bbox.area()))
            .then(a.cmp(&b))
    });

    let mut taken = vec![false; gts.len()];
    let mut labels = Vec::with_capacity(dets.len());
    for &d in &order {
        let mut best: Option<(f64, usize)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if taken[g] {
                continue;
            }
            let overlap = iou(&dets[d].bbox, gt);
            if overlap >= iou_min && best.is_none_or(|(b, _)| overlap > b) {
                best = Some((overlap, g));
            }
        }
        match best {
            Some((_, g)) => {
                taken[g] = true;
                labels.push((dets[d].score, true));
            }
            None => labels.push((dets[d].score, false)),
        }
    }
    MatchResult {
        labels,
        false_negatives: taken.iter().filter(|&&t| !t).count(),
    }
}

/// All-points interpolated average precision from `(score, is_tp)` labels.
/// Thresholds sweep every distinct score; the precision envelope
/// `p_interp(r) = max over r' >= r of p(r')` is integrated over recall.
pub fn average_precision(labels: &[(f64, bool)], num_gt: usize) -> (f64, Vec<PRPoint>) {
    assert!(
        num_gt >= 1,
        "classes without ground truth are excluded upstream"
    );
    let mut sorted = labels.to_vec();
    sorted.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());

    // one PR point per distinct score
    let mut points = Vec::new();
    let mut tp = 0usize;
    let mut fp = 0usize;
    for (i, &(score, is_tp)) in sorted.iter().enumerate() {
        if is_tp {
            tp += 1;
        } else {
            fp += 1;
        }
        let last_of_score = i + 1 == sorted.len() || sorted[i + 1].0 != score;
        if last_of_score {
            points.push(PRPoint {
                threshold: score,
                recall: tp as f64 / num_gt as f64,
                precision: tp as f64 / (tp + fp) as f64,
                tp,
                fp,
                false_negatives: num_gt - tp,
            });
        }
    }

    // precision envelope, then integrate over recall increments
    let mut envelope = vec![0.0; points.len()];
    let mut running = 0.0f64;
    for (i, p) in points.iter().enumerate().rev() {
        running = running.max(p.precision);
        envelope[i] = running;
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (p, &env) in points.iter().zip(&envelope) {
        ap += (p.recall - prev_recall) * env;
        prev_recall = p.recall;
    }
    (ap, points)
}

/// Evaluates in-memory records: per class, detections are matched per frame
/// and their labels pooled across frames; mAP averages over classes that
/// have at least one ground truth.
pub fn evaluate_records(
    preds: &[DetectionRecord],
    gts: &[GroundTruth],
    iou_min: f64,
) -> Result<EvalReport> {
    if iou_min.is_nan() || iou_min <= 0.0 || iou_min > 1.0 {
        return Err(Error::InvalidParam(format!(
            "iou_min must be in (0, 1], got {iou_min}"
        )));
    }
    let classes: BTreeSet<u32> = gts.iter().map(|g| g.class_id).collect();
    let mut per_class = BTreeMap::new();
    for &class_id in &classes {
        let class_gts: Vec<&GroundTruth> = gts.iter().filter(|g| g.class_id == class_id).collect();
        let frames: BTreeSet<usize> = class_gts
            .iter()
            .map(|g| g.frame)
            .chain(
                preds
                    .iter()
                    .filter(|p| p.class_id == class_id)
                    .map(|p| p.frame),
            )
            .collect();
        let mut labels = Vec::new();
        for frame in frames {
            let frame_dets: Vec<Detection> = preds
                .iter()
                .filter(|p| p.class_id == class_id && p.frame == frame)
                .map(|p| Detection {
                    bbox: p.bbox,
                    class_id,
                    score: p.score,
                })
                .collect();
            let frame_gts: Vec<RoiBox> = class_gts
                .iter()
                .filter(|g| g.frame == frame)
                .map(|g| g.bbox)
                .collect();
            labels.extend(match_detections(&frame_dets, &frame_gts, iou_min).labels);
        }
        let num_gt = class_gts.len();
        let (ap, points) = average_precision(&labels, num_gt);
        per_class.insert(class_id, ClassEval { ap, num_gt, points });
    }
    let map = if per_class.is_empty() {
        0.0
    } else {
        per_class.values().map(|c| c.ap).sum::<f64>() / per_class.len() as f64
    };
    Ok(EvalReport { per_class, map })
}

/// Parses one JSON-lines file, reporting the 1-based line number on failure.
pub fn parse_jsonl<T: serde::de::DeserializeOwned>(text: &str) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

/// Evaluates prediction and ground-truth JSON-lines files.
pub fn evaluate(pred_file: &Path, gt_file: &Path, iou_min: f64) -> Result<EvalReport> {
    let preds: Vec<DetectionRecord> = parse_jsonl(&std::fs::read_to_string(pred_file)?)?;
    let gts: Vec<GroundTruth> = parse_jsonl(&std::fs::read_to_string(gt_file)?)?;
    evaluate_records(&preds, &gts, iou_min)
}

/// PR points of every class as CSV (`class_id,threshold,recall,precision,tp,fp,fn`).
pub fn pr_points_csv(report: &EvalReport) -> String {
    let mut out = String::from("class_id,threshold,recall,precision,tp,fp,fn\n");
    for (class_id, class_eval) in &report.per_class {
        for p in &class_eval.points {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                class_id, p.threshold, p.recall, p.precision, p.tp, p.fp, p.false_negatives
            ));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det(x: u32, y: u32, w: u32, h: u32, score: f64) -> Detection {
        Detection {
            bbox: RoiBox::new(x, y, w, h),
            class_id: 0,
            score,
        }
    }

    /// Pixel-count IoU oracle for integer boxes: counts unit cells.
    fn iou_oracle(a: &RoiBox, b: &RoiBox) -> f64 {
        let mut inter = 0u64;
        let mut union = 0u64;
        let x_hi = a.right().max(b.right());
        let y_hi = a.bottom().max(b.bottom());
        for y in 0..y_hi {
            for x in 0..x_hi {
                let in_a = x >= a.x && x < a.right() && y >= a.y && y < a.bottom();
                let in_b = x >= b.x && x < b.right() && y >= b.y && y < b.bottom();
                if in_a && in_b {
                    inter += 1;
                }
                if in_a || in_b {
                    union += 1;
                }
            }
        }
        inter as f64 / union as f64
    }

    #[test]
    fn iou_basics() {
        let a = RoiBox::new(0, 0, 10, 10);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &RoiBox::new(20, 20, 5, 5)), 0.0);
        let b = RoiBox::new(5, 0, 10, 10);
        assert!((iou(&a, &b) - 1.0 / 3.0).abs() < 1e-12);
        assert!((iou(&a, &b) - iou_oracle(&a, &b)).abs() < 1e-12);
    }

    #[test]
    fn iou_properties_on_random_boxes() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let a = RoiBox::new(
                rng.gen_range(0..20),
                rng.gen_range(0..20),
                rng.gen_range(1..15),
                rng.gen_range(1..15),
            );
            let b = RoiBox::new(
                rng.gen_range(0..20),
                rng.gen_range(0..20),
                rng.gen_range(1..15),
                rng.gen_range(1..15),
            );
            let v = iou(&a, &b);
            assert!((v - iou(&b, &a)).abs() < 1e-15);
            assert!((0.0..=1.0).contains(&v));
            assert!((v - iou_oracle(&a, &b)).abs() < 1e-12);
            let bound = a.area().min(b.area()) as f64 / a.area().max(b.area()) as f64;
            assert!(v <= bound + 1e-12);
            if v == 1.0 {
                assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn match_simple_cases() {
        let gt = vec![RoiBox::new(0, 0, 10, 10)];
        let m = match_detections(&[det(0, 0, 10, 10, 0.9)], &gt, 0.5);
        assert_eq!(m.labels, vec![(0.9, true)]);
        assert_eq!(m.false_negatives, 0);

        // two detections on one gt: higher score wins, other is FP
        let m = match_detections(&[det(1, 0, 10, 10, 0.6), det(0, 0, 10, 10, 0.8)], &gt, 0.5);
        assert_eq!(m.labels, vec![(0.8, true), (0.6, false)]);
        assert_eq!(m.false_negatives, 0);
    }

    /// Independent oracle: walks detections in the same order, recomputing
    /// every IoU from the pixel-count oracle and scanning assignments
    /// explicitly.
    fn match_oracle(dets: &[Detection], gts: &[RoiBox], iou_min: f64) -> Vec<(f64, bool)> {
        let mut order: Vec<usize> = (0..dets.len()).collect();
        order.sort_by(|&a, &b| {
            dets[b]
                .score
                .partial_cmp(&dets[a].score)
                .unwrap()
                .then(dets[b].bbox.area().cmp(&dets[a].bbox.area()))
                .then(a.cmp(&b))
        });
        let mut used = vec![false; gts.len()];
        let mut out = Vec::new();
        for &d in &order {
            let mut choice = None;
            let mut best_iou = -1.0;
            for (g, gt) in gts.iter().enumerate() {
                if used[g] {
                    continue;
                }
                let v = iou_oracle(&dets[d].bbox, gt);
                if v >= iou_min && v > best_iou {
                    best_iou = v;
                    choice = Some(g);
                }
            }
            if let Some(g) = choice {
                used[g] = true;
                out.push((dets[d].score, true));
            } else {
                out.push((dets[d].score, false));
            }
        }
        out
    }

    #[test]
    fn mixed_overlaps_match_enumeration_oracle() {
        let gts = vec![RoiBox::new(0, 0, 10, 10), RoiBox::new(8, 0, 10, 10)];
        let dets = vec![
            det(1, 1, 10, 10, 0.7),
            det(7, 0, 10, 10, 0.9),
            det(0, 0, 9, 10, 0.8),
        ];
        let got = match_detections(&dets, &gts, 0.5);
        assert_eq!(got.labels, match_oracle(&dets, &gts, 0.5));
        let tp = got.labels.iter().filter(|l| l.1).count();
        assert_eq!(got.false_negatives, gts.len() - tp);
    }

    #[test]
    fn random_matching_agrees_with_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        for _ in 0..100 {
            let gts: Vec<RoiBox> = (0..rng.gen_range(0..5))
                .map(|_| {
                    RoiBox::new(
                        rng.gen_range(0..20),
                        rng.gen_range(0..20),
                        rng.gen_range(2..12),
                        rng.gen_range(2..12),
                    )
                })
                .collect();
            let dets: Vec<Detection> = (0..rng.gen_range(0..6))
                .map(|_| {
                    det(
                        rng.gen_range(0..20),
                        rng.gen_range(0..20),
                        rng.gen_range(2..12),
                        rng.gen_range(2..12),
                        (rng.gen_range(1..100) as f64) / 100.0,
                    )
                })
                .collect();
            let got = match_detections(&dets, &gts, 0.5);
            assert_eq!(got.labels, match_oracle(&dets, &gts, 0.5));
        }
    }

    #[test]
    fn ap_hand_sweeps() {
        // single TP, one gt
        let (ap, _) = average_precision(&[(0.9, true)], 1);
        assert_eq!(ap, 1.0);
        // FP outranks TP: recall 1 reached at precision 1/2
        let (ap, _) = average_precision(&[(0.9, false), (0.8, true)], 1);
        assert!((ap - 0.5).abs() < 1e-12);
        // TP outranks FP: envelope keeps precision 1 at recall 1
        let (ap, _) = average_precision(&[(0.9, true), (0.8, false)], 1);
        assert!((ap - 1.0).abs() < 1e-12);
        // no detections at all
        let (ap, points) = average_precision(&[], 3);
        assert_eq!(ap, 0.0);
        assert!(points.is_empty());
    }

    #[test]
    fn ap_is_invariant_under_monotone_score_transforms() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        for _ in 0..100 {
            let n = rng.gen_range(1..12);
            let mut labels: Vec<(f64, bool)> = (0..n)
                .map(|i| (1.0 - i as f64 * 0.05, rng.gen_bool(0.5)))
                .collect();
            let num_gt = labels.iter().filter(|l| l.1).count().max(1);
            let (ap, _) = average_precision(&labels, num_gt);
            // strictly monotone transform: order preserved
            let scale = rng.gen_range(0.1..5.0);
            let shift = rng.gen_range(-2.0..2.0);
            for l in labels.iter_mut() {
                l.0 = (l.0 * scale + shift).exp();
            }
            let (ap2, _) = average_precision(&labels, num_gt);
            assert!((ap - ap2).abs() < 1e-12);
        }
    }

    #[test]
    fn trailing_fp_never_increases_ap() {
        let labels = vec![(0.9, true), (0.7, true), (0.5, false)];
        let (ap, _) = average_precision(&labels, 3);
        let mut more = labels.clone();
        more.push((0.4, false));
        let (ap2, _) = average_precision(&more, 3);
        assert!(ap2 <= ap + 1e-12);
    }

    #[test]
    fn counts_balance_at_every_threshold() {
        let labels = vec![
            (0.9, true),
            (0.8, false),
            (0.7, true),
            (0.6, false),
            (0.5, true),
        ];
        let (_, points) = average_precision(&labels, 4);
        for p in &points {
            assert_eq!(p.tp + p.false_negatives, 4);
        }
    }

    fn gt(frame: usize, class_id: u32, b: [u32; 4]) -> GroundTruth {
        GroundTruth {
            frame,
            class_id,
            bbox: RoiBox::new(b[0], b[1], b[2], b[3]),
        }
    }

    fn pred(frame: usize, class_id: u32, b: [u32; 4], score: f64) -> DetectionRecord {
        DetectionRecord {
            frame,
            class_id,
            bbox: RoiBox::new(b[0], b[1], b[2], b[3]),
            score,
        }
    }

    #[test]
    fn crafted_two_class_fixture_matches_hand_computation() {
        let gts = vec![
            gt(1, 0, [0, 0, 10, 10]),
            gt(1, 0, [20, 0, 10, 10]),
            gt(2, 0, [0, 0, 10, 10]),
            gt(1, 1, [50, 50, 8, 8]),
        ];
        let preds = vec![
            pred(1, 0, [0, 0, 10, 10], 0.9),  // TP on gt 1
            pred(1, 0, [20, 2, 10, 10], 0.8), // TP on gt 2, IoU 2/3
            pred(1, 0, [1, 1, 10, 10], 0.7),  // FP: best gt already taken
            pred(2, 0, [40, 40, 5, 5], 0.6),  // FP: disjoint
            pred(1, 1, [50, 50, 8, 8], 0.95), // TP
            pred(2, 1, [50, 50, 8, 8], 0.85), // FP: wrong frame
        ];
        let report = evaluate_records(&preds, &gts, 0.5).unwrap();
        let class0 = &report.per_class[&0];
        let class1 = &report.per_class[&1];
        assert!(
            (class0.ap - 2.0 / 3.0).abs() < 1e-12,
            "class 0 AP {}",
            class0.ap
        );
        assert!((class1.ap - 1.0).abs() < 1e-12, "class 1 AP {}", class1.ap);
        assert!((report.map - 5.0 / 6.0).abs() < 1e-12, "mAP {}", report.map);
        assert_eq!(class0.num_gt, 3);
        // last threshold of class 0: tp 2, fp 2, fn 1
        let last = class0.points.last().unwrap();
        assert_eq!((last.tp, last.fp, last.false_negatives), (2, 2, 1));
    }

    #[test]
    fn perfect_predictions_give_map_one_and_empty_give_zero() {
        let gts = vec![gt(1, 0, [0, 0, 4, 4]), gt(2, 3, [8, 8, 6, 6])];
        let preds: Vec<DetectionRecord> = gts
            .iter()
            .map(|g| {
                pred(
                    g.frame,
                    g.class_id,
                    [g.bbox.x, g.bbox.y, g.bbox.w, g.bbox.h],
                    1.0,
                )
            })
            .collect();
        let report = evaluate_records(&preds, &gts, 0.5).unwrap();
        assert_eq!(report.map, 1.0);

        let report = evaluate_records(&[], &gts, 0.5).unwrap();
        assert_eq!(report.map, 0.0);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let text = "{\"frame\":1,\"class_id\":0,\"bbox\":[0,0,2,2]}\nnot json\n";
        let err = parse_jsonl::<DetectionRecord>(text).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn report_serializes_with_expected_shape() {
        let gts = vec![gt(1, 2, [0, 0, 4, 4])];
        let preds = vec![pred(1, 2, [0, 0, 4, 4], 1.0)];
        let report = evaluate_records(&preds, &gts, 0.5).unwrap();
        let json = serde_json::to_string(&report).unwrap();
        assert!(json.starts_with("{\"per_class\":{\"2\":"));
        assert!(json.contains("\"map\":1.0"));
        assert!(json.contains("\"fn\":0"));
        let csv = pr_points_csv(&report);
        assert_eq!(csv.lines().count(), 2);
        assert!(csv.lines().nth(1).unwrap().starts_with("2,1,1,1,"));
    }
}
