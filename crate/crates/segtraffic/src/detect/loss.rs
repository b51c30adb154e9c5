//! Joint classification + box-regression loss.

use crate::detect::NUM_CLASSES;

const PROB_FLOOR: f64 = 1e-12;

/// 0.5 x^2 for |x| < 1, |x| - 0.5 otherwise.
pub fn smooth_l1(x: f64) -> f64 {
    let a = x.abs();
    if a < 1.0 {
        0.5 * x * x
    } else {
        a - 0.5
    }
}

fn smooth_l1_grad(x: f64) -> f64 {
    if x.abs() < 1.0 {
        x
    } else {
        x.signum()
    }
}

/// `-log p[true_class] + lambda * [true_class != background] *
/// sum_k smoothL1(delta_k - target_k)`, where the deltas are the true
/// class's row. `true_class` 6 is background; probabilities are clamped to
/// 1e-12 before the log.
pub fn multitask_loss(
    class_probs: &[f64],
    true_class: usize,
    box_deltas: &[[f64; 4]; NUM_CLASSES],
    box_target: Option<&[f64; 4]>,
    lambda: f64,
) -> f64 {
    assert!(
        true_class < class_probs.len(),
        "true_class {true_class} out of range"
    );
    let cls_loss = -class_probs[true_class].max(PROB_FLOOR).ln();
    if true_class >= NUM_CLASSES {
        return cls_loss; // background: no regression term
    }
    let target = box_target.expect("box_target required for a non-background class");
    let reg: f64 = box_deltas[true_class]
        .iter()
        .zip(target)
        .map(|(d, t)| smooth_l1(d - t))
        .sum();
    cls_loss + lambda * reg
}

/// Gradients of [`multitask_loss`] composed with softmax: returns
/// (d loss / d logits, d loss / d deltas). `deltas` is the flat 24-vector.
pub fn loss_gradients(
    probs: &[f64],
    true_class: usize,
    deltas: &[f64],
    target: &[f64; 4],
    lambda: f64,
) -> (Vec<f64>, Vec<f64>) {
    let mut d_logits = probs.to_vec();
    d_logits[true_class] -= 1.0;
    let mut d_deltas = vec![0.0; deltas.len()];
    if true_class < NUM_CLASSES {
        let row = true_class * 4;
        for (k, &t) in target.iter().enumerate() {
            d_deltas[row + k] = lambda * smooth_l1_grad(deltas[row + k] - t);
        }
    }
    (d_logits, d_deltas)
}
