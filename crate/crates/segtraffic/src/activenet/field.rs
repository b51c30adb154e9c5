//! Precomputed image coupling fields for the mesh energy: foreground
//! occupancy, normalized Sobel edge magnitude, and a chamfer distance
//! transform to the nearest edge pixel.

use crate::error::{Error, Result};
use crate::imageio::Frame;

/// Edge pixels for the distance transform: normalized gradient at or above
/// this fraction of the image maximum.
const EDGE_LEVEL: f64 = 0.5;

pub struct ImageField {
    width: usize,
    height: usize,
    /// Foreground occupancy in {0, 1}.
    fg: Vec<f64>,
    /// Sobel gradient magnitude normalized to [0, 1].
    edge: Vec<f64>,
    /// 3-4 chamfer distance to the nearest edge pixel, in pixel units
    /// (zero everywhere when the image has no edges).
    dist: Vec<f64>,
}

impl ImageField {
    pub fn build(image: &Frame, fg_mask: &Frame) -> Result<Self> {
        if !image.same_dims(fg_mask) {
            return Err(Error::Dimension(format!(
                "image is {}x{}, mask is {}x{}",
                image.width(),
                image.height(),
                fg_mask.width(),
                fg_mask.height()
            )));
        }
        let (w, h) = (image.width(), image.height());
        let fg = fg_mask
            .data()
            .iter()
            .map(|&v| if v > 0 { 1.0 } else { 0.0 })
            .collect();
        let edge = sobel_magnitude(image);
        let dist = chamfer_34(&edge, w, h);
        Ok(Self {
            width: w,
            height: h,
            fg,
            edge,
            dist,
        })
    }

    #[inline]
    fn clamp_index(&self, x: f64, y: f64) -> usize {
        let xi = (x.round() as i64).clamp(0, self.width as i64 - 1) as usize;
        let yi = (y.round() as i64).clamp(0, self.height as i64 - 1) as usize;
        yi * self.width + xi
    }

    /// Foreground occupancy at the nearest pixel to (x, y).
    pub fn fg_at(&self, x: f64, y: f64) -> f64 {
        self.fg[self.clamp_index(x, y)]
    }

    /// Normalized edge strength at the nearest pixel to (x, y).
    pub fn edge_at(&self, x: f64, y: f64) -> f64 {
        self.edge[self.clamp_index(x, y)]
    }

    /// Distance to the nearest edge pixel at the nearest pixel to (x, y).
    pub fn dist_at(&self, x: f64, y: f64) -> f64 {
        self.dist[self.clamp_index(x, y)]
    }
}

/// Sobel magnitude with replicated borders, normalized by the global max.
fn sobel_magnitude(image: &Frame) -> Vec<f64> {
    let (w, h) = (image.width(), image.height());
    let mut mag = vec![0.0; w * h];
    let sample = |x: i64, y: i64| image.get_clamped(x, y) as f64;
    let mut max = 0.0f64;
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let gx = -sample(x - 1, y - 1) + sample(x + 1, y - 1) - 2.0 * sample(x - 1, y)
                + 2.0 * sample(x + 1, y)
                - sample(x - 1, y + 1)
                + sample(x + 1, y + 1);
            let gy = -sample(x - 1, y - 1) - 2.0 * sample(x, y - 1) - sample(x + 1, y - 1)
                + sample(x - 1, y + 1)
                + 2.0 * sample(x, y + 1)
                + sample(x + 1, y + 1);
            let m = (gx * gx + gy * gy).sqrt();
            mag[y as usize * w + x as usize] = m;
            max = max.max(m);
        }
    }
    if max > 0.0 {
        for m in mag.iter_mut() {
            *m /= max;
        }
    }
    mag
}

/// Two-pass 3-4 chamfer distance transform from the edge set, converted to
/// approximate pixel units (divided by the unit step 3).
fn chamfer_34(edge: &[f64], w: usize, h: usize) -> Vec<f64> {
    const INF: u32 = u32::MAX / 2;
    let mut d: Vec<u32> = edge
        .iter()
        .map(|&e| if e >= EDGE_LEVEL { 0 } else { INF })
        .collect();
    if d.iter().all(|&v| v != 0) {
        return vec![0.0; w * h]; // no edges anywhere: field stays inert
    }
    // forward: left, up, up-left, up-right
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let mut best = d[i];
            if x > 0 {
                best = best.min(d[i - 1] + 3);
            }
            if y > 0 {
                best = best.min(d[i - w] + 3);
                if x > 0 {
                    best = best.min(d[i - w - 1] + 4);
                }
                if x + 1 < w {
                    best = best.min(d[i - w + 1] + 4);
                }
            }
            d[i] = best;
        }
    }
    // backward: right, down, down-right, down-left
    for y in (0..h).rev() {
        for x in (0..w).rev() {
            let i = y * w + x;
            let mut best = d[i];
            if x + 1 < w {
                best = best.min(d[i + 1] + 3);
            }
            if y + 1 < h {
                best = best.min(d[i + w] + 3);
                if x + 1 < w {
                    best = best.min(d[i + w + 1] + 4);
                }
                if x > 0 {
                    best = best.min(d[i + w - 1] + 4);
                }
            }
            d[i] = best;
        }
    }
    d.into_iter().map(|v| v as f64 / 3.0).collect()
}
