//! Frame and mask I/O plus deterministic synthetic scenes.
//!
//! Frames are 8-bit grayscale, stored row-major. On disk they are binary
//! PGM (`P5`); binary PPM (`P6`) is accepted on read and converted to luma.
//! Masks are ordinary frames restricted to the values {0, 255}.

mod pnm;
mod synth;

pub use pnm::{read_frame, read_pgm, read_ppm_luma, write_pgm};
pub use synth::{gen_synthetic_sequence, ground_truth_jsonl, GroundTruth, ObjectSpec, SceneConfig};

use crate::error::{Error, Result};

/// A single 8-bit grayscale frame, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl Frame {
    /// Builds a frame, checking that `data` covers `width * height` pixels.
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidParam(format!(
                "frame dimensions must be >= 1, got {width}x{height}"
            )));
        }
        if data.len() != width * height {
            return Err(Error::Dimension(format!(
                "frame data has {} bytes, expected {}x{} = {}",
                data.len(),
                width,
                height,
                width * height
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    /// A frame filled with a constant intensity.
    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        Self::new(width, height, vec![value; width * height]).expect("positive dims")
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        debug_assert!(x < self.width && y < self.height);
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: u8) {
        debug_assert!(x < self.width && y < self.height);
        self.data[y * self.width + x] = value;
    }

    /// Nearest-pixel lookup with coordinates clamped into the frame.
    #[inline]
    pub fn get_clamped(&self, x: i64, y: i64) -> u8 {
        let xc = x.clamp(0, self.width as i64 - 1) as usize;
        let yc = y.clamp(0, self.height as i64 - 1) as usize;
        self.data[yc * self.width + xc]
    }

    pub fn same_dims(&self, other: &Frame) -> bool {
        self.width == other.width && self.height == other.height
    }
}

/// An ordered, dimension-uniform list of frames. Frame indices are 1-based.
#[derive(Debug, Clone)]
pub struct FrameSequence {
    frames: Vec<Frame>,
}

impl FrameSequence {
    pub fn new(frames: Vec<Frame>) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| Error::Empty("frame sequence".into()))?;
        if let Some(bad) = frames.iter().position(|f| !f.same_dims(first)) {
            return Err(Error::Dimension(format!(
                "frame {} is {}x{}, sequence is {}x{}",
                bad + 1,
                frames[bad].width(),
                frames[bad].height(),
                first.width(),
                first.height()
            )));
        }
        Ok(Self { frames })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        false // non-empty by construction
    }

    /// 1-based frame access.
    pub fn frame(&self, j: usize) -> &Frame {
        assert!(
            j >= 1 && j <= self.frames.len(),
            "frame index {j} out of range"
        );
        &self.frames[j - 1]
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Frame> {
        self.frames.iter()
    }

    pub fn width(&self) -> usize {
        self.frames[0].width()
    }

    pub fn height(&self) -> usize {
        self.frames[0].height()
    }
}

/// Canonical frame file name inside a frames directory: `frame_%06d.pgm`, 1-based.
pub fn frame_file_name(index: usize) -> String {
    format!("frame_{index:06}.pgm")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_rejects_bad_data_length() {
        assert!(Frame::new(2, 2, vec![0; 3]).is_err());
        assert!(Frame::new(0, 2, vec![]).is_err());
    }

    #[test]
    fn sequence_rejects_mixed_dims() {
        let a = Frame::filled(2, 2, 0);
        let b = Frame::filled(3, 2, 0);
        assert!(FrameSequence::new(vec![a.clone(), b]).is_err());
        assert!(FrameSequence::new(vec![]).is_err());
        let seq = FrameSequence::new(vec![a.clone(), a]).unwrap();
        assert_eq!(seq.len(), 2);
        assert_eq!(seq.frame(1).width(), 2);
    }
}
