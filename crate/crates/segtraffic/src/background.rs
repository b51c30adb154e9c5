//! Adaptive per-pixel background model with a sigmoid gain schedule.
//!
//! Each pixel keeps a density over the 256 intensity values. Every observed
//! frame deposits a Gaussian kernel centered at the observed intensity,
//! scaled by the reciprocal of the gain at that point in the sequence; the
//! normalized density is the model's belief over background intensities.
//! The background estimate is the per-pixel density mode, and foreground is
//! whatever the model explains poorly relative to that mode.

use crate::error::{Error, Result};
use crate::imageio::Frame;

pub const INTENSITY_BINS: usize = 256;

/// Parameters of the gain schedule and kernel bandwidth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GainParams {
    /// Gain scale; the schedule saturates at `2 * gain`.
    pub gain: f64,
    /// Inflection point of the sigmoid, in frames.
    pub alpha: f64,
    /// Gradient control: larger values flatten the schedule.
    pub beta: f64,
    /// Gaussian kernel bandwidth in intensity units.
    pub sigma: f64,
}

impl Default for GainParams {
    fn default() -> Self {
        Self {
            gain: 1.0,
            alpha: 20.0,
            beta: 5.0,
            sigma: 4.0,
        }
    }
}

impl GainParams {
    pub fn validate(&self) -> Result<()> {
        // NaN fails every check below
        if self.gain.is_nan() || self.gain <= 0.0 {
            return Err(Error::InvalidParam(format!(
                "gain must be > 0, got {}",
                self.gain
            )));
        }
        if self.beta.is_nan() || self.beta <= 0.0 {
            return Err(Error::InvalidParam(format!(
                "beta must be > 0, got {}",
                self.beta
            )));
        }
        if self.sigma.is_nan() || self.sigma <= 0.0 {
            return Err(Error::InvalidParam(format!(
                "sigma must be > 0, got {}",
                self.sigma
            )));
        }
        if !self.alpha.is_finite() {
            return Err(Error::InvalidParam("alpha must be finite".into()));
        }
        Ok(())
    }
}

/// Learning-rate gain after `cont` frames:
/// `gain * 2 / (1 + exp(-(cont - alpha) / beta))`.
///
/// Strictly increasing in `cont`, bounded in `(0, 2 * gain)`, and equal to
/// `gain` exactly at `cont = alpha`. The exponent argument is clamped to
/// ±500 so the evaluation saturates instead of overflowing.
pub fn gain_at(params: &GainParams, cont: f64) -> f64 {
    let arg = (-(cont - params.alpha) / params.beta).clamp(-500.0, 500.0);
    params.gain * 2.0 / (1.0 + arg.exp())
}

/// Per-pixel density over intensity values.
#[derive(Debug, Clone)]
pub struct IntensityDensity {
    accumulator: Vec<f64>,
    total: f64,
}

impl IntensityDensity {
    fn new() -> Self {
        Self {
            accumulator: vec![0.0; INTENSITY_BINS],
            total: 0.0,
        }
    }

    fn deposit(&mut self, kernel: &KernelTable, center: u8, gp: f64) {
        let c = center as usize;
        for (y, acc) in self.accumulator.iter_mut().enumerate() {
            let k = kernel.at(y.abs_diff(c)) / gp;
            *acc += k;
            self.total += k;
        }
    }

    pub fn accumulator(&self) -> &[f64] {
        &self.accumulator
    }

    /// Normalized density value at one intensity.
    pub fn normalized_at(&self, y: u8) -> f64 {
        self.accumulator[y as usize] / self.total
    }

    /// The full normalized density (sums to 1 once any update has occurred).
    pub fn normalized(&self) -> Vec<f64> {
        self.accumulator.iter().map(|a| a / self.total).collect()
    }

    /// Density mode; ties broken toward the lowest intensity.
    pub fn mode(&self) -> u8 {
        let mut best = 0usize;
        for y in 1..INTENSITY_BINS {
            if self.accumulator[y] > self.accumulator[best] {
                best = y;
            }
        }
        best as u8
    }

    fn peak(&self) -> f64 {
        self.accumulator.iter().cloned().fold(0.0, f64::max)
    }
}

/// Precomputed Gaussian kernel values by |y - center|, including the
/// `1 / (sigma * sqrt(2 pi))` normalization.
struct KernelTable {
    values: Vec<f64>,
}

impl KernelTable {
    fn new(sigma: f64) -> Self {
        let norm = 1.0 / (sigma * (2.0 * std::f64::consts::PI).sqrt());
        let values = (0..INTENSITY_BINS)
            .map(|d| {
                let z = d as f64 / sigma;
                norm * (-0.5 * z * z).exp()
            })
            .collect();
        Self { values }
    }

    #[inline]
    fn at(&self, delta: usize) -> f64 {
        self.values[delta]
    }
}

/// Per-pixel density grid plus the frame counter driving the gain schedule.
pub struct BackgroundModel {
    width: usize,
    height: usize,
    densities: Vec<IntensityDensity>,
    frames_seen: u64,
    params: GainParams,
    kernel: KernelTable,
}

/// Builds the model from the first frame: each pixel's density is a single
/// Gaussian kernel centered at that pixel's intensity.
pub fn init_model(first_frame: &Frame, params: GainParams) -> Result<BackgroundModel> {
    params.validate()?;
    let kernel = KernelTable::new(params.sigma);
    let gp = gain_at(&params, 1.0);
    let mut densities = vec![IntensityDensity::new(); first_frame.width() * first_frame.height()];
    for (density, &value) in densities.iter_mut().zip(first_frame.data()) {
        density.deposit(&kernel, value, gp);
    }
    Ok(BackgroundModel {
        width: first_frame.width(),
        height: first_frame.height(),
        densities,
        frames_seen: 1,
        params,
        kernel,
    })
}

impl BackgroundModel {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn frames_seen(&self) -> u64 {
        self.frames_seen
    }

    pub fn params(&self) -> &GainParams {
        &self.params
    }

    pub fn density(&self, x: usize, y: usize) -> &IntensityDensity {
        &self.densities[y * self.width + x]
    }

    fn check_dims(&self, frame: &Frame) -> Result<()> {
        if frame.width() != self.width || frame.height() != self.height {
            return Err(Error::Dimension(format!(
                "frame is {}x{}, model is {}x{}",
                frame.width(),
                frame.height(),
                self.width,
                self.height
            )));
        }
        Ok(())
    }

    /// Deposits one observed frame into every pixel's density. Must be called
    /// in frame order; the kernel is scaled by `1 / gain_at(frames_seen)`.
    pub fn update(&mut self, frame: &Frame) -> Result<()> {
        self.check_dims(frame)?;
        let gp = gain_at(&self.params, self.frames_seen as f64);
        for (density, &value) in self.densities.iter_mut().zip(frame.data()) {
            density.deposit(&self.kernel, value, gp);
        }
        self.frames_seen += 1;
        Ok(())
    }

    /// Per-pixel density mode; ties broken toward the lowest intensity.
    pub fn background_estimate(&self) -> Frame {
        let data = self.densities.iter().map(|d| d.mode()).collect();
        Frame::new(self.width, self.height, data).expect("model dims are valid")
    }

    /// Marks a pixel foreground when the normalized density at its observed
    /// intensity falls below `tau` times that pixel's peak density.
    /// Mask values are {0, 255}.
    pub fn extract_foreground(&self, frame: &Frame, tau: f64) -> Result<Frame> {
        self.check_dims(frame)?;
        if tau.is_nan() || tau <= 0.0 || tau > 1.0 {
            return Err(Error::InvalidParam(format!(
                "tau must be in (0, 1], got {tau}"
            )));
        }
        let data = self
            .densities
            .iter()
            .zip(frame.data())
            .map(|(density, &value)| {
                let observed = density.accumulator[value as usize];
                if observed < tau * density.peak() {
                    255
                } else {
                    0
                }
            })
            .collect();
        Frame::new(self.width, self.height, data)
    }
}

/// Free-function form of [`BackgroundModel::update`].
pub fn update_model(model: &mut BackgroundModel, frame: &Frame) -> Result<()> {
    model.update(frame)
}

/// Free-function form of [`BackgroundModel::background_estimate`].
pub fn background_estimate(model: &BackgroundModel) -> Frame {
    model.background_estimate()
}

/// Free-function form of [`BackgroundModel::extract_foreground`].
pub fn extract_foreground(model: &BackgroundModel, frame: &Frame, tau: f64) -> Result<Frame> {
    model.extract_foreground(frame, tau)
}
