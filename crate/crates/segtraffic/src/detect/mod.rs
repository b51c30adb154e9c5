//! Desk-scale detection subnet: feature extraction, RoI max pooling,
//! sibling classification/regression heads, multitask loss, hierarchical
//! mini-batch SGD, and mask-driven region proposal.

mod loss;
mod net;
mod propose;
mod roi;
mod train;

pub use loss::{loss_gradients, multitask_loss, smooth_l1};
pub use net::{
    conv_forward, detect_objects, roi_loss_and_grads, roi_loss_with_signature, sibling_heads,
    ConvTrace, DetectorParams, PathSignature, TinyDetector, NUM_CLASSES, NUM_LOGITS, TOTAL_STRIDE,
};
pub use propose::propose_from_mask;
pub use roi::{roi_max_pool, roi_pool_backward, RoutingRecord};
pub(crate) use train::mix_seed;
pub use train::{
    sample_rois_hierarchical, sgd_step, train_epochs, RoiSample, TrainConfig, TrainingFrame,
    BACKGROUND_CLASS,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A region of interest: top-left corner plus extent, in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "[u32; 4]", into = "[u32; 4]")]
pub struct RoiBox {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl RoiBox {
    /// Builds a box; panics if the extent is zero.
    pub fn new(x: u32, y: u32, w: u32, h: u32) -> Self {
        assert!(w >= 1 && h >= 1, "RoiBox extent must be >= 1, got {w}x{h}");
        Self { x, y, w, h }
    }

    pub fn area(&self) -> u64 {
        self.w as u64 * self.h as u64
    }

    pub fn right(&self) -> u32 {
        self.x + self.w
    }

    pub fn bottom(&self) -> u32 {
        self.y + self.h
    }
}

impl TryFrom<[u32; 4]> for RoiBox {
    type Error = String;

    fn try_from(v: [u32; 4]) -> std::result::Result<Self, String> {
        if v[2] == 0 || v[3] == 0 {
            return Err(format!("box extent must be >= 1, got {}x{}", v[2], v[3]));
        }
        Ok(Self {
            x: v[0],
            y: v[1],
            w: v[2],
            h: v[3],
        })
    }
}

impl From<RoiBox> for [u32; 4] {
    fn from(b: RoiBox) -> Self {
        [b.x, b.y, b.w, b.h]
    }
}

/// A classified region with a confidence score in [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: RoiBox,
    pub class_id: u32,
    pub score: f64,
}

/// Dense real-valued tensor, row-major within each channel.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl FeatureMap {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn from_data(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::Dimension(format!(
                "tensor data has {} values, expected {channels}x{height}x{width}",
                data.len()
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    #[inline]
    pub fn add(&mut self, c: usize, y: usize, x: usize, v: f64) {
        self.data[(c * self.height + y) * self.width + x] += v;
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }
}
