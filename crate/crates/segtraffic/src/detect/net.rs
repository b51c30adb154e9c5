//! The fixed two-layer detection subnet.
//!
//! Architecture: conv 3x3 (1 -> 8 channels, pad 1) -> ReLU -> 2x2 max pool,
//! conv 3x3 (8 -> 16, pad 1) -> ReLU -> 2x2 max pool, giving a 16-channel
//! feature map at total stride 4. Each proposal is RoI max pooled to 4x4,
//! flattened (256 values), pushed through a 32-unit fully connected layer
//! with ReLU, and read out by sibling heads: softmax class probabilities
//! over 7 = 6 vehicle classes + background, and 4 additive box deltas per
//! non-background class.
//!
//! Parameters serialize to a binary blob: magic `TDET1`, then seed (u64),
//! lambda (f64), then every tensor in declaration order, all little-endian
//! 64-bit values.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::detect::{
    loss_gradients, multitask_loss, roi_max_pool, roi_pool_backward, Detection, FeatureMap, RoiBox,
};
use crate::error::{Error, Result};
use crate::imageio::Frame;

/// Number of vehicle classes (class ids 0..=5).
pub const NUM_CLASSES: usize = 6;
/// Class logits: vehicle classes plus background.
pub const NUM_LOGITS: usize = NUM_CLASSES + 1;
/// Downsampling factor between image and feature-map coordinates.
pub const TOTAL_STRIDE: u32 = 4;

const C1: usize = 8;
const C2: usize = 16;
const FC: usize = 32;
const POOL_GRID: usize = 4;
const POOLED_LEN: usize = C2 * POOL_GRID * POOL_GRID;
const MIN_FRAME: usize = 8;

const MAGIC: &[u8; 5] = b"TDET1";

/// All learnable tensors, also reused as the shape of gradients and of the
/// SGD velocity.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorParams {
    pub conv1_w: Vec<f64>, // [8][1][3][3]
    pub conv1_b: Vec<f64>, // [8]
    pub conv2_w: Vec<f64>, // [16][8][3][3]
    pub conv2_b: Vec<f64>, // [16]
    pub fc_w: Vec<f64>,    // [32][256]
    pub fc_b: Vec<f64>,    // [32]
    pub cls_w: Vec<f64>,   // [7][32]
    pub cls_b: Vec<f64>,   // [7]
    pub box_w: Vec<f64>,   // [24][32]
    pub box_b: Vec<f64>,   // [24]
}

impl DetectorParams {
    pub fn zeros() -> Self {
        Self {
            conv1_w: vec![0.0; C1 * 9],
            conv1_b: vec![0.0; C1],
            conv2_w: vec![0.0; C2 * C1 * 9],
            conv2_b: vec![0.0; C2],
            fc_w: vec![0.0; FC * POOLED_LEN],
            fc_b: vec![0.0; FC],
            cls_w: vec![0.0; NUM_LOGITS * FC],
            cls_b: vec![0.0; NUM_LOGITS],
            box_w: vec![0.0; 4 * NUM_CLASSES * FC],
            box_b: vec![0.0; 4 * NUM_CLASSES],
        }
    }

    /// Seeded init: weights uniform in [-0.05, 0.05], biases zero.
    pub fn seeded(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Self::zeros();
        for w in [
            &mut p.conv1_w,
            &mut p.conv2_w,
            &mut p.fc_w,
            &mut p.cls_w,
            &mut p.box_w,
        ] {
            for v in w.iter_mut() {
                *v = rng.gen_range(-0.05..0.05);
            }
        }
        p
    }

    pub fn tensors(&self) -> [(&'static str, &Vec<f64>); 10] {
        [
            ("conv1_w", &self.conv1_w),
            ("conv1_b", &self.conv1_b),
            ("conv2_w", &self.conv2_w),
            ("conv2_b", &self.conv2_b),
            ("fc_w", &self.fc_w),
            ("fc_b", &self.fc_b),
            ("cls_w", &self.cls_w),
            ("cls_b", &self.cls_b),
            ("box_w", &self.box_w),
            ("box_b", &self.box_b),
        ]
    }

    pub fn tensors_mut(&mut self) -> [(&'static str, &mut Vec<f64>); 10] {
        [
            ("conv1_w", &mut self.conv1_w),
            ("conv1_b", &mut self.conv1_b),
            ("conv2_w", &mut self.conv2_w),
            ("conv2_b", &mut self.conv2_b),
            ("fc_w", &mut self.fc_w),
            ("fc_b", &mut self.fc_b),
            ("cls_w", &mut self.cls_w),
            ("cls_b", &mut self.cls_b),
            ("box_w", &mut self.box_w),
            ("box_b", &mut self.box_b),
        ]
    }

    pub fn scale(&mut self, factor: f64) {
        for (_, t) in self.tensors_mut() {
            for v in t.iter_mut() {
                *v *= factor;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }
}

/// Detector state: parameters plus the loss balance and init seed.
#[derive(Debug, Clone, PartialEq)]
pub struct TinyDetector {
    pub params: DetectorParams,
    pub lambda: f64,
    pub seed: u64,
}

impl TinyDetector {
    pub fn new(seed: u64, lambda: f64) -> Self {
        Self {
            params: DetectorParams::seeded(seed),
            lambda,
            seed,
        }
    }

    pub fn zeroed(lambda: f64) -> Self {
        Self {
            params: DetectorParams::zeros(),
            lambda,
            seed: 0,
        }
    }

    /// Serializes to the versioned `TDET1` blob.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.extend_from_slice(&self.lambda.to_le_bytes());
        for (_, t) in self.params.tensors() {
            for v in t {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
            return Err(Error::Format("bad detector blob magic (want TDET1)".into()));
        }
        let mut pos = MAGIC.len();
        let mut take8 = |what: &str| -> Result<[u8; 8]> {
            let chunk = bytes
                .get(pos..pos + 8)
                .ok_or_else(|| Error::Format(format!("detector blob truncated at {what}")))?;
            pos += 8;
            Ok(chunk.try_into().unwrap())
        };
        let seed = u64::from_le_bytes(take8("seed")?);
        let lambda = f64::from_le_bytes(take8("lambda")?);
        let mut params = DetectorParams::zeros();
        for (name, t) in params.tensors_mut() {
            for v in t.iter_mut() {
                *v = f64::from_le_bytes(take8(name)?);
            }
        }
        if pos != bytes.len() {
            return Err(Error::Format(format!(
                "detector blob has {} trailing bytes",
                bytes.len() - pos
            )));
        }
        Ok(Self {
            params,
            lambda,
            seed,
        })
    }
}

/// Intermediate activations of the convolutional stack, kept for backward.
pub struct ConvTrace {
    pub input: FeatureMap,
    pub conv1_pre: FeatureMap,
    pub pool1: FeatureMap,
    pub pool1_argmax: Vec<usize>,
    pub conv2_pre: FeatureMap,
    pub pool2: FeatureMap,
    pub pool2_argmax: Vec<usize>,
}

fn frame_to_input(frame: &Frame) -> FeatureMap {
    let data = frame.data().iter().map(|&v| v as f64 / 255.0).collect();
    FeatureMap {
        channels: 1,
        height: frame.height(),
        width: frame.width(),
        data,
    }
}

/// conv 3x3, stride 1, zero pad 1.
fn conv3x3(input: &FeatureMap, weights: &[f64], bias: &[f64], c_out: usize) -> FeatureMap {
    let (c_in, h, w) = input.shape();
    debug_assert_eq!(weights.len(), c_out * c_in * 9);
    let mut out = FeatureMap::zeros(c_out, h, w);
    for co in 0..c_out {
        let out_base = co * h * w;
        out.data[out_base..out_base + h * w].fill(bias[co]);
        for ci in 0..c_in {
            let in_base = ci * h * w;
            let kernel = &weights[(co * c_in + ci) * 9..(co * c_in + ci) * 9 + 9];
            for (tap, &kv) in kernel.iter().enumerate() {
                let dy = (tap / 3) as isize - 1;
                let dx = (tap % 3) as isize - 1;
                for y in 0..h {
                    let iy = y as isize + dy;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let x_lo = if dx < 0 { 1usize } else { 0 };
                    let x_hi = if dx > 0 { w - 1 } else { w };
                    let in_row = (in_base + iy as usize * w) as isize + dx;
                    let src = &input.data
                        [(in_row + x_lo as isize) as usize..(in_row + x_hi as isize) as usize];
                    let dst = &mut out.data[out_base + y * w + x_lo..out_base + y * w + x_hi];
                    for (o, i) in dst.iter_mut().zip(src) {
                        *o += kv * i;
                    }
                }
            }
        }
    }
    out
}

/// Accumulates conv parameter gradients and optionally the input gradient.
#[allow(clippy::needless_range_loop)] // co drives several derived offsets
fn conv3x3_backward(
    input: &FeatureMap,
    weights: &[f64],
    c_out: usize,
    d_pre: &FeatureMap,
    d_w: &mut [f64],
    d_b: &mut [f64],
    want_d_input: bool,
) -> Option<FeatureMap> {
    let (c_in, h, w) = input.shape();
    let mut d_input = want_d_input.then(|| FeatureMap::zeros(c_in, h, w));
    for co in 0..c_out {
        let out_base = co * h * w;
        d_b[co] += d_pre.data[out_base..out_base + h * w].iter().sum::<f64>();
        for ci in 0..c_in {
            let in_base = ci * h * w;
            let kbase = (co * c_in + ci) * 9;
            for tap in 0..9 {
                let dy = (tap / 3) as isize - 1;
                let dx = (tap % 3) as isize - 1;
                let kv = weights[kbase + tap];
                let mut acc = 0.0;
                for y in 0..h {
                    let iy = y as isize + dy;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let x_lo = if dx < 0 { 1usize } else { 0 };
                    let x_hi = if dx > 0 { w - 1 } else { w };
                    let in_row = (in_base + iy as usize * w) as isize + dx;
                    let in_span =
                        (in_row + x_lo as isize) as usize..(in_row + x_hi as isize) as usize;
                    let grads = &d_pre.data[out_base + y * w + x_lo..out_base + y * w + x_hi];
                    let src = &input.data[in_span.clone()];
                    for (g, i) in grads.iter().zip(src) {
                        acc += g * i;
                    }
                    if let Some(di) = d_input.as_mut() {
                        for (d, g) in di.data[in_span].iter_mut().zip(grads) {
                            *d += g * kv;
                        }
                    }
                }
                d_w[kbase + tap] += acc;
            }
        }
    }
    d_input
}

/// ReLU followed by 2x2 max pooling, stride 2. Returns the pooled map and
/// the flat pre-activation index of each cell's winner (first occurrence in
/// row-major order on ties).
fn relu_pool2x2(pre: &FeatureMap) -> (FeatureMap, Vec<usize>) {
    let (c, h, w) = pre.shape();
    let (oh, ow) = (h / 2, w / 2);
    let mut out = FeatureMap::zeros(c, oh, ow);
    let mut argmax = vec![0usize; c * oh * ow];
    for ci in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = f64::NEG_INFINITY;
                let mut best_idx = 0usize;
                for yy in (2 * oy)..(2 * oy + 2) {
                    for xx in (2 * ox)..(2 * ox + 2) {
                        let idx = (ci * h + yy) * w + xx;
                        let v = pre.data[idx].max(0.0);
                        if v > best {
                            best = v;
                            best_idx = idx;
                        }
                    }
                }
                let o = (ci * oh + oy) * ow + ox;
                out.data[o] = best;
                argmax[o] = best_idx;
            }
        }
    }
    (out, argmax)
}

pub(crate) fn forward_trace(params: &DetectorParams, frame: &Frame) -> Result<ConvTrace> {
    if frame.width() < MIN_FRAME || frame.height() < MIN_FRAME {
        return Err(Error::InvalidParam(format!(
            "frame must be at least {MIN_FRAME}x{MIN_FRAME}, got {}x{}",
            frame.width(),
            frame.height()
        )));
    }
    let input = frame_to_input(frame);
    let conv1_pre = conv3x3(&input, &params.conv1_w, &params.conv1_b, C1);
    let (pool1, pool1_argmax) = relu_pool2x2(&conv1_pre);
    let conv2_pre = conv3x3(&pool1, &params.conv2_w, &params.conv2_b, C2);
    let (pool2, pool2_argmax) = relu_pool2x2(&conv2_pre);
    Ok(ConvTrace {
        input,
        conv1_pre,
        pool1,
        pool1_argmax,
        conv2_pre,
        pool2,
        pool2_argmax,
    })
}

/// Accumulates convolutional parameter gradients from the gradient of the
/// final feature map.
pub(crate) fn conv_backward(
    params: &DetectorParams,
    trace: &ConvTrace,
    d_fmap: &FeatureMap,
    grads: &mut DetectorParams,
) {
    // unpool 2, ReLU mask 2
    let mut d_conv2_pre = FeatureMap::zeros(
        trace.conv2_pre.channels,
        trace.conv2_pre.height,
        trace.conv2_pre.width,
    );
    for (k, &idx) in trace.pool2_argmax.iter().enumerate() {
        if trace.conv2_pre.data[idx] > 0.0 {
            d_conv2_pre.data[idx] += d_fmap.data[k];
        }
    }
    let d_pool1 = conv3x3_backward(
        &trace.pool1,
        &params.conv2_w,
        C2,
        &d_conv2_pre,
        &mut grads.conv2_w,
        &mut grads.conv2_b,
        true,
    )
    .expect("input gradient requested");

    // unpool 1, ReLU mask 1
    let mut d_conv1_pre = FeatureMap::zeros(
        trace.conv1_pre.channels,
        trace.conv1_pre.height,
        trace.conv1_pre.width,
    );
    for (k, &idx) in trace.pool1_argmax.iter().enumerate() {
        if trace.conv1_pre.data[idx] > 0.0 {
            d_conv1_pre.data[idx] += d_pool1.data[k];
        }
    }
    conv3x3_backward(
        &trace.input,
        &params.conv1_w,
        C1,
        &d_conv1_pre,
        &mut grads.conv1_w,
        &mut grads.conv1_b,
        false,
    );
}

/// Feature extraction: two conv/ReLU/pool blocks. Output spatial dims are
/// `floor(input / 4)` per axis with 16 channels.
pub fn conv_forward(detector: &TinyDetector, frame: &Frame) -> Result<FeatureMap> {
    Ok(forward_trace(&detector.params, frame)?.pool2)
}

pub(crate) struct HeadTrace {
    pub pooled: Vec<f64>,
    pub fc_pre: Vec<f64>,
    pub fc_act: Vec<f64>,
    pub probs: Vec<f64>,
    pub deltas: Vec<f64>,
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub(crate) fn heads_forward(params: &DetectorParams, pooled: &[f64]) -> HeadTrace {
    debug_assert_eq!(pooled.len(), POOLED_LEN);
    let mut fc_pre = params.fc_b.clone();
    for (u, pre) in fc_pre.iter_mut().enumerate() {
        let row = &params.fc_w[u * POOLED_LEN..(u + 1) * POOLED_LEN];
        *pre += row.iter().zip(pooled).map(|(w, p)| w * p).sum::<f64>();
    }
    let fc_act: Vec<f64> = fc_pre.iter().map(|&v| v.max(0.0)).collect();
    let mut logits = params.cls_b.clone();
    for (k, logit) in logits.iter_mut().enumerate() {
        let row = &params.cls_w[k * FC..(k + 1) * FC];
        *logit += row.iter().zip(&fc_act).map(|(w, a)| w * a).sum::<f64>();
    }
    let mut deltas = params.box_b.clone();
    for (d, delta) in deltas.iter_mut().enumerate() {
        let row = &params.box_w[d * FC..(d + 1) * FC];
        *delta += row.iter().zip(&fc_act).map(|(w, a)| w * a).sum::<f64>();
    }
    HeadTrace {
        pooled: pooled.to_vec(),
        fc_pre,
        fc_act,
        probs: softmax(&logits),
        deltas,
    }
}

/// Accumulates head and fc gradients; returns the gradient w.r.t. the
/// pooled feature vector.
pub(crate) fn heads_backward(
    params: &DetectorParams,
    trace: &HeadTrace,
    d_logits: &[f64],
    d_deltas: &[f64],
    grads: &mut DetectorParams,
) -> Vec<f64> {
    let mut d_fc_act = vec![0.0; FC];
    let mut linear_back =
        |weights: &[f64], w_grads: &mut [f64], b_grads: &mut [f64], out_grads: &[f64]| {
            for (k, &g) in out_grads.iter().enumerate() {
                b_grads[k] += g;
                let w_row = &weights[k * FC..(k + 1) * FC];
                let gw_row = &mut w_grads[k * FC..(k + 1) * FC];
                for (((dfa, gw), w), a) in d_fc_act
                    .iter_mut()
                    .zip(gw_row)
                    .zip(w_row)
                    .zip(&trace.fc_act)
                {
                    *gw += g * a;
                    *dfa += g * w;
                }
            }
        };
    linear_back(&params.cls_w, &mut grads.cls_w, &mut grads.cls_b, d_logits);
    linear_back(&params.box_w, &mut grads.box_w, &mut grads.box_b, d_deltas);

    let mut d_pooled = vec![0.0; POOLED_LEN];
    for (u, &pre) in trace.fc_pre.iter().enumerate() {
        if pre <= 0.0 {
            continue; // ReLU gate closed
        }
        let g = d_fc_act[u];
        grads.fc_b[u] += g;
        let w_row = &params.fc_w[u * POOLED_LEN..(u + 1) * POOLED_LEN];
        let gw_row = &mut grads.fc_w[u * POOLED_LEN..(u + 1) * POOLED_LEN];
        for (((dp, gw), w), p) in d_pooled
            .iter_mut()
            .zip(gw_row)
            .zip(w_row)
            .zip(&trace.pooled)
        {
            *gw += g * p;
            *dp += g * w;
        }
    }
    d_pooled
}

/// Runs the sibling output layers on a pooled 16x4x4 feature block.
/// Returns softmax class probabilities (summing to 1) and the 4 box deltas
/// per non-background class.
pub fn sibling_heads(
    detector: &TinyDetector,
    pooled: &FeatureMap,
) -> Result<(Vec<f64>, [[f64; 4]; NUM_CLASSES])> {
    if pooled.shape() != (C2, POOL_GRID, POOL_GRID) {
        return Err(Error::Dimension(format!(
            "pooled block must be {C2}x{POOL_GRID}x{POOL_GRID}, got {:?}",
            pooled.shape()
        )));
    }
    let trace = heads_forward(&detector.params, &pooled.data);
    let mut deltas = [[0.0; 4]; NUM_CLASSES];
    for (row, chunk) in deltas.iter_mut().zip(trace.deltas.chunks_exact(4)) {
        row.copy_from_slice(chunk);
    }
    Ok((trace.probs, deltas))
}

/// Maps an image-space box to feature-map coordinates (divide by the total
/// stride, floor), growing the window to at least the pooling grid and
/// clipping it into the map. `None` when the map is smaller than the grid.
pub(crate) fn project_roi(roi: &RoiBox, fmap_h: usize, fmap_w: usize) -> Option<RoiBox> {
    if fmap_h < POOL_GRID || fmap_w < POOL_GRID {
        return None;
    }
    let s = TOTAL_STRIDE;
    let fw = ((roi.w / s) as usize).clamp(POOL_GRID, fmap_w);
    let fh = ((roi.h / s) as usize).clamp(POOL_GRID, fmap_h);
    let fx = ((roi.x / s) as usize).min(fmap_w - fw);
    let fy = ((roi.y / s) as usize).min(fmap_h - fh);
    Some(RoiBox::new(fx as u32, fy as u32, fw as u32, fh as u32))
}

/// Applies a class's deltas as additive offsets to (x, y, w, h) and clamps
/// the result into the frame.
pub(crate) fn refine_box(
    roi: &RoiBox,
    deltas: &[f64; 4],
    frame_w: usize,
    frame_h: usize,
) -> RoiBox {
    let (fw, fh) = (frame_w as f64, frame_h as f64);
    let x = (roi.x as f64 + deltas[0]).round().clamp(0.0, fw - 1.0);
    let y = (roi.y as f64 + deltas[1]).round().clamp(0.0, fh - 1.0);
    let w = (roi.w as f64 + deltas[2]).round().clamp(1.0, fw - x);
    let h = (roi.h as f64 + deltas[3]).round().clamp(1.0, fh - y);
    RoiBox::new(x as u32, y as u32, w as u32, h as u32)
}

/// Classifies every proposal on one frame. The convolutional features are
/// computed once and shared across proposals. A detection is emitted when
/// the best non-background probability reaches `confidence_threshold`; its
/// box is the proposal refined by the winning class's deltas.
pub fn detect_objects(
    detector: &TinyDetector,
    frame: &Frame,
    proposals: &[RoiBox],
    confidence_threshold: f64,
) -> Result<Vec<Detection>> {
    if proposals.is_empty() {
        return Ok(Vec::new());
    }
    let fmap = conv_forward(detector, frame)?;
    let mut detections = Vec::new();
    for proposal in proposals {
        let Some(feat_roi) = project_roi(proposal, fmap.height, fmap.width) else {
            continue;
        };
        let (pooled, _) = roi_max_pool(&fmap, &feat_roi, POOL_GRID, POOL_GRID)?;
        let trace = heads_forward(&detector.params, &pooled.data);
        let (winner, &score) = trace.probs[..NUM_CLASSES]
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .expect("non-empty class list");
        if score >= confidence_threshold {
            let mut deltas = [0.0; 4];
            deltas.copy_from_slice(&trace.deltas[winner * 4..winner * 4 + 4]);
            detections.push(Detection {
                bbox: refine_box(proposal, &deltas, frame.width(), frame.height()),
                class_id: winner as u32,
                score,
            });
        }
    }
    Ok(detections)
}

/// Max-pool/ReLU decision pattern of one forward pass. Two passes with the
/// same signature lie on the same smooth piece of the loss, which is what
/// finite-difference gradient checks require.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PathSignature {
    pool1: Vec<usize>,
    pool2: Vec<usize>,
    roi: Vec<(usize, usize)>,
    relu1: Vec<bool>,
    relu2: Vec<bool>,
    relu_fc: Vec<bool>,
}

fn one_roi_forward(
    params: &DetectorParams,
    lambda: f64,
    frame: &Frame,
    roi: &RoiBox,
    label: usize,
    target: &[f64; 4],
) -> Result<(f64, ConvTrace, crate::detect::roi::RoutingRecord, HeadTrace)> {
    let trace = forward_trace(params, frame)?;
    let feat_roi = project_roi(roi, trace.pool2.height, trace.pool2.width)
        .ok_or_else(|| Error::InvalidParam("frame too small for RoI pooling grid".into()))?;
    let (pooled, routing) = roi_max_pool(&trace.pool2, &feat_roi, POOL_GRID, POOL_GRID)?;
    let heads = heads_forward(params, &pooled.data);
    let mut deltas = [[0.0; 4]; NUM_CLASSES];
    for (row, chunk) in deltas.iter_mut().zip(heads.deltas.chunks_exact(4)) {
        row.copy_from_slice(chunk);
    }
    let target_opt = (label < NUM_CLASSES).then_some(target);
    let loss = multitask_loss(&heads.probs, label, &deltas, target_opt, lambda);
    Ok((loss, trace, routing, heads))
}

/// Loss of a single labeled RoI plus the full parameter gradient.
pub fn roi_loss_and_grads(
    detector: &TinyDetector,
    frame: &Frame,
    roi: &RoiBox,
    label: usize,
    target: &[f64; 4],
) -> Result<(f64, DetectorParams)> {
    let params = &detector.params;
    let (loss, trace, routing, heads) =
        one_roi_forward(params, detector.lambda, frame, roi, label, target)?;
    let mut grads = DetectorParams::zeros();
    let (d_logits, d_deltas) =
        loss_gradients(&heads.probs, label, &heads.deltas, target, detector.lambda);
    let d_pooled = heads_backward(params, &heads, &d_logits, &d_deltas, &mut grads);
    let d_pooled_map = FeatureMap::from_data(C2, POOL_GRID, POOL_GRID, d_pooled)?;
    let d_fmap = roi_pool_backward(&d_pooled_map, &routing, trace.pool2.shape())?;
    conv_backward(params, &trace, &d_fmap, &mut grads);
    Ok((loss, grads))
}

/// Loss of a single labeled RoI plus the decision pattern the evaluation
/// followed. Used by gradient checks to exclude tie points.
pub fn roi_loss_with_signature(
    detector: &TinyDetector,
    frame: &Frame,
    roi: &RoiBox,
    label: usize,
    target: &[f64; 4],
) -> Result<(f64, PathSignature)> {
    let (loss, trace, routing, heads) =
        one_roi_forward(&detector.params, detector.lambda, frame, roi, label, target)?;
    let signature = PathSignature {
        pool1: trace.pool1_argmax.clone(),
        pool2: trace.pool2_argmax.clone(),
        roi: routing.argmax.clone(),
        relu1: trace.conv1_pre.data.iter().map(|&v| v > 0.0).collect(),
        relu2: trace.conv2_pre.data.iter().map(|&v| v > 0.0).collect(),
        relu_fc: heads.fc_pre.iter().map(|&v| v > 0.0).collect(),
    };
    Ok((loss, signature))
}

/// Batch machinery: accumulates gradients for several RoIs of one frame,
/// sharing a single conv forward/backward. Returns the summed loss.
pub(crate) fn frame_rois_grads(
    detector: &TinyDetector,
    frame: &Frame,
    rois: &[(RoiBox, usize, [f64; 4])],
    grads: &mut DetectorParams,
) -> Result<f64> {
    let params = &detector.params;
    let trace = forward_trace(params, frame)?;
    let mut d_fmap = FeatureMap::zeros(trace.pool2.channels, trace.pool2.height, trace.pool2.width);
    let mut total_loss = 0.0;
    for (roi, label, target) in rois {
        let feat_roi = project_roi(roi, trace.pool2.height, trace.pool2.width)
            .ok_or_else(|| Error::InvalidParam("frame too small for RoI pooling grid".into()))?;
        let (pooled, routing) = roi_max_pool(&trace.pool2, &feat_roi, POOL_GRID, POOL_GRID)?;
        let heads = heads_forward(params, &pooled.data);
        let mut deltas = [[0.0; 4]; NUM_CLASSES];
        for (row, chunk) in deltas.iter_mut().zip(heads.deltas.chunks_exact(4)) {
            row.copy_from_slice(chunk);
        }
        let target_opt = (*label < NUM_CLASSES).then_some(target);
        total_loss += multitask_loss(&heads.probs, *label, &deltas, target_opt, detector.lambda);
        let (d_logits, d_deltas) =
            loss_gradients(&heads.probs, *label, &heads.deltas, target, detector.lambda);
        let d_pooled = heads_backward(params, &heads, &d_logits, &d_deltas, grads);
        let d_pooled_map = FeatureMap::from_data(C2, POOL_GRID, POOL_GRID, d_pooled)?;
        let d_roi = roi_pool_backward(&d_pooled_map, &routing, trace.pool2.shape())?;
        for (dst, src) in d_fmap.data.iter_mut().zip(&d_roi.data) {
            *dst += src;
        }
    }
    conv_backward(params, &trace, &d_fmap, grads);
    Ok(total_loss)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gradient_frame(seed: u64, size: usize) -> Frame {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..size * size).map(|_| rng.gen_range(0..=255)).collect();
        Frame::new(size, size, data).unwrap()
    }

    #[test]
    fn zero_weights_give_zero_feature_map() {
        let det = TinyDetector::zeroed(1.0);
        let frame = gradient_frame(1, 16);
        let fmap = conv_forward(&det, &frame).unwrap();
        assert!(fmap.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn output_shape_for_64x64_is_16x16x16() {
        let det = TinyDetector::new(3, 1.0);
        let fmap = conv_forward(&det, &gradient_frame(2, 64)).unwrap();
        assert_eq!(fmap.shape(), (16, 16, 16));
    }

    #[test]
    fn undersized_frame_is_rejected() {
        let det = TinyDetector::new(3, 1.0);
        assert!(conv_forward(&det, &Frame::filled(7, 16, 0)).is_err());
    }

    #[test]
    fn identity_kernel_layer_is_blockwise_max() {
        // one layer in isolation: center tap 1 on channel 0, zero bias
        let mut params = DetectorParams::zeros();
        params.conv1_w[4] = 1.0; // channel 0, center tap
        let frame = gradient_frame(7, 10);
        let input = frame_to_input(&frame);
        let conv1 = conv3x3(&input, &params.conv1_w, &params.conv1_b, C1);
        let (pooled, _) = relu_pool2x2(&conv1);
        // oracle: blockwise max of ReLU(frame)/255 on channel 0
        for oy in 0..5 {
            for ox in 0..5 {
                let mut want = f64::NEG_INFINITY;
                for yy in (2 * oy)..(2 * oy + 2) {
                    for xx in (2 * ox)..(2 * ox + 2) {
                        want = want.max(frame.get(xx, yy) as f64 / 255.0);
                    }
                }
                assert!((pooled.at(0, oy, ox) - want).abs() < 1e-15);
            }
        }
        // remaining channels have zero weights: all zeros
        for c in 1..C1 {
            for oy in 0..5 {
                for ox in 0..5 {
                    assert_eq!(pooled.at(c, oy, ox), 0.0);
                }
            }
        }
    }

    #[test]
    fn softmax_of_zeros_is_uniform_and_shift_invariant() {
        let det = TinyDetector::zeroed(1.0);
        let pooled = FeatureMap::zeros(C2, POOL_GRID, POOL_GRID);
        let (probs, deltas) = sibling_heads(&det, &pooled).unwrap();
        for p in &probs {
            assert!((p - 1.0 / 7.0).abs() < 1e-12);
        }
        assert!(deltas.iter().flatten().all(|&d| d == 0.0));

        let logits = [1.3, -0.2, 0.0, 2.0, -1.0, 0.7, 0.1];
        let shifted: Vec<f64> = logits.iter().map(|v| v + 5.0).collect();
        let (a, b) = (softmax(&logits), softmax(&shifted));
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn hand_set_logit_closed_form() {
        // logits [1, 0, 0, 0, 0, 0, 0] -> p0 = e / (e + 6)
        let probs = softmax(&[1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let e = 1f64.exp();
        assert!((probs[0] - e / (e + 6.0)).abs() < 1e-12);
    }

    #[test]
    fn probs_sum_to_one_for_random_parameters() {
        let det = TinyDetector::new(17, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let data: Vec<f64> = (0..POOLED_LEN).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let pooled = FeatureMap::from_data(C2, POOL_GRID, POOL_GRID, data).unwrap();
            let (probs, _) = sibling_heads(&det, &pooled).unwrap();
            assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(probs.iter().all(|&p| (0.0..=1.0).contains(&p)));
        }
    }

    #[test]
    fn zero_weight_detector_emits_nothing_at_threshold() {
        let det = TinyDetector::zeroed(1.0);
        let frame = gradient_frame(9, 32);
        let proposals = vec![RoiBox::new(4, 4, 16, 16)];
        // uniform probs 1/7 < 0.4
        assert!(detect_objects(&det, &frame, &proposals, 0.4)
            .unwrap()
            .is_empty());
        // threshold 0 emits one per proposal
        let dets = detect_objects(&det, &frame, &proposals, 0.0).unwrap();
        assert_eq!(dets.len(), 1);
        assert!(dets[0].score >= 0.0 && dets[0].score <= 1.0);
        let b = dets[0].bbox;
        assert!(b.right() <= 32 && b.bottom() <= 32);
    }

    #[test]
    fn detections_stay_in_frame_bounds() {
        let det = TinyDetector::new(23, 1.0);
        let frame = gradient_frame(10, 40);
        let proposals = vec![
            RoiBox::new(0, 0, 6, 6),
            RoiBox::new(30, 30, 10, 10),
            RoiBox::new(10, 2, 24, 30),
        ];
        for d in detect_objects(&det, &frame, &proposals, 0.0).unwrap() {
            assert!(d.bbox.right() <= 40 && d.bbox.bottom() <= 40);
            assert!((0.0..=1.0).contains(&d.score));
            assert!((d.class_id as usize) < NUM_CLASSES);
        }
    }

    #[test]
    fn blob_round_trip() {
        let det = TinyDetector::new(77, 1.5);
        let bytes = det.to_bytes();
        let back = TinyDetector::from_bytes(&bytes).unwrap();
        assert_eq!(det, back);
        assert!(TinyDetector::from_bytes(&bytes[..100]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(TinyDetector::from_bytes(&bad).is_err());
        bad = bytes;
        bad.push(0);
        assert!(TinyDetector::from_bytes(&bad).is_err());
    }

    #[test]
    fn single_roi_gradient_matches_finite_differences() {
        // spot check on a couple of tensors; the acceptance suite does the
        // full 20-draw sweep
        let frame = gradient_frame(31, 16);
        let roi = RoiBox::new(0, 0, 16, 16);
        let target = [0.3, -0.2, 0.5, 0.1];
        let det = TinyDetector::new(5, 1.0);
        let (_, grads) = roi_loss_and_grads(&det, &frame, &roi, 2, &target).unwrap();

        let eps = 1e-5;
        let mut checked = 0;
        for (t_idx, param_idx) in [
            (0usize, 3usize),
            (2, 100),
            (4, 999),
            (6, 50),
            (8, 200),
            (1, 2),
            (9, 11),
        ] {
            let mut plus = det.clone();
            plus.params.tensors_mut()[t_idx].1[param_idx] += eps;
            let mut minus = det.clone();
            minus.params.tensors_mut()[t_idx].1[param_idx] -= eps;
            let (lp, sp) = roi_loss_with_signature(&plus, &frame, &roi, 2, &target).unwrap();
            let (lm, sm) = roi_loss_with_signature(&minus, &frame, &roi, 2, &target).unwrap();
            if sp != sm {
                continue; // tie point of a max; excluded
            }
            let numeric = (lp - lm) / (2.0 * eps);
            let analytic = grads.tensors()[t_idx].1[param_idx];
            let denom = numeric.abs().max(analytic.abs()).max(1e-8);
            assert!(
                ((numeric - analytic) / denom).abs() < 1e-4,
                "tensor {t_idx} param {param_idx}: numeric {numeric} vs analytic {analytic}"
            );
            checked += 1;
        }
        assert!(checked >= 5, "too many tie points skipped");
    }

    #[test]
    fn frame_batch_grads_equal_sum_of_single_roi_grads() {
        let frame = gradient_frame(41, 24);
        let det = TinyDetector::new(9, 1.0);
        let rois = vec![
            (RoiBox::new(0, 0, 16, 16), 1usize, [0.1, 0.0, -0.3, 0.2]),
            (RoiBox::new(4, 4, 20, 20), 6usize, [0.0; 4]),
        ];
        let mut batch_grads = DetectorParams::zeros();
        let batch_loss = frame_rois_grads(&det, &frame, &rois, &mut batch_grads).unwrap();

        let mut sum_loss = 0.0;
        let mut sum_grads = DetectorParams::zeros();
        for (roi, label, target) in &rois {
            let (l, g) = roi_loss_and_grads(&det, &frame, roi, *label, target).unwrap();
            sum_loss += l;
            for ((_, dst), (_, src)) in sum_grads.tensors_mut().into_iter().zip(g.tensors()) {
                for (a, b) in dst.iter_mut().zip(src) {
                    *a += b;
                }
            }
        }
        assert!((batch_loss - sum_loss).abs() < 1e-10);
        for ((_, a), (_, b)) in batch_grads.tensors().into_iter().zip(sum_grads.tensors()) {
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() < 1e-10);
            }
        }
    }
}
