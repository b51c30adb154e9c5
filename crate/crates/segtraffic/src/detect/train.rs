//! Hierarchical mini-batch sampling and SGD with momentum.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::detect::net::frame_rois_grads;
use crate::detect::{DetectorParams, RoiBox, TinyDetector, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::imageio::Frame;

/// Label value of the background class.
pub const BACKGROUND_CLASS: usize = NUM_CLASSES;

/// One labeled training RoI: region, class label (6 = background), and the
/// additive box offsets toward its matched ground truth.
#[derive(Debug, Clone)]
pub struct RoiSample {
    pub roi: RoiBox,
    pub label: usize,
    pub target: [f64; 4],
}

/// A frame together with its labeled RoIs.
#[derive(Debug, Clone)]
pub struct TrainingFrame {
    pub frame: Frame,
    pub rois: Vec<RoiSample>,
}

/// Knobs of the SGD loop. Defaults mirror the small-batch grid the method
/// was tuned over (batch sizes 5..40, epochs 100..500).
#[derive(Debug, Clone, Copy)]
pub struct TrainConfig {
    pub images_per_batch: usize,
    pub rois_per_image: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            images_per_batch: 5,
            rois_per_image: 8,
            epochs: 200,
            learning_rate: 0.01,
            momentum: 0.9,
        }
    }
}

/// Hierarchical mini-batch: samples `images_per_batch` frame indices without
/// replacement (all frames when fewer are available), then `rois_per_image`
/// RoI indices per sampled frame — without replacement when enough RoIs
/// exist, with replacement otherwise. Deterministic per seed. Returns
/// `(frame_index, roi_index)` pairs grouped by frame.
pub fn sample_rois_hierarchical(
    rois_per_frame: &[usize],
    images_per_batch: usize,
    rois_per_image: usize,
    seed: u64,
) -> Result<Vec<(usize, Vec<usize>)>> {
    if rois_per_frame.is_empty() {
        return Err(Error::Empty("training corpus".into()));
    }
    if let Some(empty) = rois_per_frame.iter().position(|&n| n == 0) {
        return Err(Error::Empty(format!("frame {empty} has no RoIs")));
    }
    if images_per_batch == 0 || rois_per_image == 0 {
        return Err(Error::InvalidParam("batch sizes must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut frame_order: Vec<usize> = (0..rois_per_frame.len()).collect();
    frame_order.shuffle(&mut rng);
    frame_order.truncate(images_per_batch.min(rois_per_frame.len()));

    let mut batch = Vec::with_capacity(frame_order.len());
    for frame_idx in frame_order {
        let available = rois_per_frame[frame_idx];
        let picks = if available >= rois_per_image {
            let mut order: Vec<usize> = (0..available).collect();
            order.shuffle(&mut rng);
            order.truncate(rois_per_image);
            order
        } else {
            (0..rois_per_image)
                .map(|_| rng.gen_range(0..available))
                .collect()
        };
        batch.push((frame_idx, picks));
    }
    Ok(batch)
}

/// One SGD-with-momentum update:
/// `velocity <- momentum * velocity - lr * grad; param <- param + velocity`.
/// Rejects the step (leaving params and velocity untouched) when any
/// gradient is non-finite.
pub fn sgd_step(
    params: &mut DetectorParams,
    velocity: &mut DetectorParams,
    grads: &DetectorParams,
    learning_rate: f64,
    momentum: f64,
) -> Result<()> {
    if learning_rate.is_nan() || learning_rate <= 0.0 {
        return Err(Error::InvalidParam(format!(
            "learning rate must be > 0, got {learning_rate}"
        )));
    }
    if !(0.0..1.0).contains(&momentum) {
        return Err(Error::InvalidParam(format!(
            "momentum must be in [0, 1), got {momentum}"
        )));
    }
    for (name, g) in grads.tensors() {
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient(name.to_string()));
        }
    }
    for (((_, p), (_, v)), (_, g)) in params
        .tensors_mut()
        .into_iter()
        .zip(velocity.tensors_mut())
        .zip(grads.tensors())
    {
        for ((p, v), g) in p.iter_mut().zip(v.iter_mut()).zip(g) {
            *v = momentum * *v - learning_rate * g;
            *p += *v;
        }
    }
    Ok(())
}

pub(crate) fn mix_seed(base: u64, a: u64, b: u64) -> u64 {
    // splitmix64 over the combined words
    let mut z = base ^ a.rotate_left(17) ^ b.rotate_left(43);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Runs hierarchical mini-batch SGD for `cfg.epochs` epochs. An epoch is
/// `ceil(frames / images_per_batch)` batches. Returns the mean per-RoI loss
/// of each epoch (exactly `cfg.epochs` entries).
pub fn train_epochs(
    detector: &mut TinyDetector,
    corpus: &[TrainingFrame],
    cfg: &TrainConfig,
    seed: u64,
) -> Result<Vec<f64>> {
    if corpus.is_empty() {
        return Err(Error::Empty("training corpus".into()));
    }
    let rois_per_frame: Vec<usize> = corpus.iter().map(|f| f.rois.len()).collect();
    let batches_per_epoch = corpus.len().div_ceil(cfg.images_per_batch);
    let mut velocity = DetectorParams::zeros();
    let mut losses = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let mut epoch_loss = 0.0;
        let mut epoch_rois = 0usize;
        for batch_idx in 0..batches_per_epoch {
            let batch = sample_rois_hierarchical(
                &rois_per_frame,
                cfg.images_per_batch,
                cfg.rois_per_image,
                mix_seed(seed, epoch as u64, batch_idx as u64),
            )?;
            let mut grads = DetectorParams::zeros();
            let mut batch_loss = 0.0;
            let mut batch_rois = 0usize;
            for (frame_idx, roi_indices) in batch {
                let tf = &corpus[frame_idx];
                let rois: Vec<(RoiBox, usize, [f64; 4])> = roi_indices
                    .iter()
                    .map(|&i| {
                        let s = &tf.rois[i];
                        (s.roi, s.label, s.target)
                    })
                    .collect();
                batch_loss += frame_rois_grads(detector, &tf.frame, &rois, &mut grads)?;
                batch_rois += rois.len();
            }
            grads.scale(1.0 / batch_rois as f64);
            sgd_step(
                &mut detector.params,
                &mut velocity,
                &grads,
                cfg.learning_rate,
                cfg.momentum,
            )?;
            epoch_loss += batch_loss;
            epoch_rois += batch_rois;
        }
        losses.push(epoch_loss / epoch_rois as f64);
        log::debug!("epoch {epoch}: mean loss {:.6}", losses[epoch]);
    }
    Ok(losses)
}
