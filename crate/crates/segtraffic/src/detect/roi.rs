//! RoI max pooling over a feature map, with the argmax routing needed for
//! backpropagation.

use crate::detect::{FeatureMap, RoiBox};
use crate::error::{Error, Result};

/// Argmax positions recorded by a forward pooling call, one `(y, x)` feature
/// map position per output cell, laid out `(channel, row, col)` row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoutingRecord {
    pub channels: usize,
    pub grid_h: usize,
    pub grid_w: usize,
    pub fmap_height: usize,
    pub fmap_width: usize,
    pub argmax: Vec<(usize, usize)>,
}

/// Max-pools the `roi` window of `fmap` (coordinates in feature-map space)
/// onto a `grid_h x grid_w` grid, independently per channel.
///
/// Output cell `(i, j)` covers window rows `[floor(i*h/grid_h),
/// ceil((i+1)*h/grid_h))` and the analogous column span. Ties take the first
/// occurrence in row-major order.
pub fn roi_max_pool(
    fmap: &FeatureMap,
    roi: &RoiBox,
    grid_h: usize,
    grid_w: usize,
) -> Result<(FeatureMap, RoutingRecord)> {
    let (rx, ry, rw, rh) = (
        roi.x as usize,
        roi.y as usize,
        roi.w as usize,
        roi.h as usize,
    );
    if rx + rw > fmap.width || ry + rh > fmap.height {
        return Err(Error::InvalidParam(format!(
            "roi {}x{}+{}+{} exceeds feature map {}x{}",
            rw, rh, rx, ry, fmap.width, fmap.height
        )));
    }
    if grid_h == 0 || grid_w == 0 || grid_h > rh || grid_w > rw {
        return Err(Error::InvalidParam(format!(
            "pooling grid {grid_h}x{grid_w} larger than window {rh}x{rw}"
        )));
    }

    let mut out = FeatureMap::zeros(fmap.channels, grid_h, grid_w);
    let mut argmax = Vec::with_capacity(fmap.channels * grid_h * grid_w);
    for c in 0..fmap.channels {
        for i in 0..grid_h {
            let y0 = ry + i * rh / grid_h;
            let y1 = ry + ((i + 1) * rh).div_ceil(grid_h);
            for j in 0..grid_w {
                let x0 = rx + j * rw / grid_w;
                let x1 = rx + ((j + 1) * rw).div_ceil(grid_w);
                let mut best = f64::NEG_INFINITY;
                let mut best_pos = (y0, x0);
                for y in y0..y1 {
                    for x in x0..x1 {
                        let v = fmap.at(c, y, x);
                        if v > best {
                            best = v;
                            best_pos = (y, x);
                        }
                    }
                }
                out.set(c, i, j, best);
                argmax.push(best_pos);
            }
        }
    }

    Ok((
        out,
        RoutingRecord {
            channels: fmap.channels,
            grid_h,
            grid_w,
            fmap_height: fmap.height,
            fmap_width: fmap.width,
            argmax,
        },
    ))
}

/// Routes each output-cell gradient back to its recorded argmax position,
/// accumulating where cells share a winner. All other positions stay zero.
pub fn roi_pool_backward(
    grad_out: &FeatureMap,
    routing: &RoutingRecord,
    fmap_shape: (usize, usize, usize),
) -> Result<FeatureMap> {
    let (channels, height, width) = fmap_shape;
    if grad_out.shape() != (routing.channels, routing.grid_h, routing.grid_w) {
        return Err(Error::Dimension(format!(
            "gradient shape {:?} does not match routing grid {:?}",
            grad_out.shape(),
            (routing.channels, routing.grid_h, routing.grid_w)
        )));
    }
    if channels != routing.channels || height != routing.fmap_height || width != routing.fmap_width
    {
        return Err(Error::Dimension(format!(
            "feature map shape {:?} does not match routing source {:?}",
            fmap_shape,
            (routing.channels, routing.fmap_height, routing.fmap_width)
        )));
    }
    let mut grad_in = FeatureMap::zeros(channels, height, width);
    let mut k = 0;
    for c in 0..routing.channels {
        for i in 0..routing.grid_h {
            for j in 0..routing.grid_w {
                let (y, x) = routing.argmax[k];
                grad_in.add(c, y, x, grad_out.at(c, i, j));
                k += 1;
            }
        }
    }
    Ok(grad_in)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    /// Brute-force oracle: nested loops, no shortcuts shared with the
    /// implementation beyond the cell-boundary formula the contract fixes.
    fn oracle_pool(fmap: &FeatureMap, roi: &RoiBox, gh: usize, gw: usize) -> FeatureMap {
        let mut out = FeatureMap::zeros(fmap.channels, gh, gw);
        for c in 0..fmap.channels {
            for i in 0..gh {
                for j in 0..gw {
                    let y0 = (i * roi.h as usize) / gh;
                    let y1 = ((i + 1) * roi.h as usize).div_ceil(gh);
                    let x0 = (j * roi.w as usize) / gw;
                    let x1 = ((j + 1) * roi.w as usize).div_ceil(gw);
                    let mut vals = Vec::new();
                    for y in y0..y1 {
                        for x in x0..x1 {
                            vals.push(fmap.at(c, roi.y as usize + y, roi.x as usize + x));
                        }
                    }
                    let m = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    out.set(c, i, j, m);
                }
            }
        }
        out
    }

    fn iota_map(channels: usize, h: usize, w: usize) -> FeatureMap {
        let data = (0..channels * h * w).map(|i| i as f64 + 1.0).collect();
        FeatureMap::from_data(channels, h, w, data).unwrap()
    }

    #[test]
    fn identity_grid_returns_window_verbatim() {
        let fmap = iota_map(2, 6, 6);
        let roi = RoiBox::new(1, 2, 3, 4);
        let (out, routing) = roi_max_pool(&fmap, &roi, 4, 3).unwrap();
        for c in 0..2 {
            for i in 0..4 {
                for j in 0..3 {
                    assert_eq!(out.at(c, i, j), fmap.at(c, 2 + i, 1 + j));
                }
            }
        }
        // identity routing: each cell points at its own pixel
        assert_eq!(routing.argmax[0], (2, 1));
    }

    #[test]
    fn quadrants_of_a_4x4_window() {
        // window values 1..16 row-major, 2x2 grid -> [[6, 8], [14, 16]]
        let fmap = iota_map(1, 4, 4);
        let roi = RoiBox::new(0, 0, 4, 4);
        let (out, _) = roi_max_pool(&fmap, &roi, 2, 2).unwrap();
        assert_eq!(out.data, vec![6.0, 8.0, 14.0, 16.0]);
    }

    #[test]
    fn rejects_oversized_grid_and_out_of_bounds_roi() {
        let fmap = iota_map(1, 4, 4);
        assert!(roi_max_pool(&fmap, &RoiBox::new(0, 0, 2, 2), 3, 2).is_err());
        assert!(roi_max_pool(&fmap, &RoiBox::new(3, 0, 2, 2), 1, 1).is_err());
    }

    #[test]
    fn random_cases_match_brute_force_oracle() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        for _ in 0..100 {
            let c = rng.gen_range(1..4);
            let h = rng.gen_range(4..14);
            let w = rng.gen_range(4..14);
            let data: Vec<f64> = (0..c * h * w).map(|_| rng.gen_range(-10.0..10.0)).collect();
            let fmap = FeatureMap::from_data(c, h, w, data).unwrap();
            let rw = rng.gen_range(1..=w as u32);
            let rh = rng.gen_range(1..=h as u32);
            let rx = rng.gen_range(0..=(w as u32 - rw));
            let ry = rng.gen_range(0..=(h as u32 - rh));
            let roi = RoiBox::new(rx, ry, rw, rh);
            let gh = rng.gen_range(1..=rh as usize);
            let gw = rng.gen_range(1..=rw as usize);
            let (got, _) = roi_max_pool(&fmap, &roi, gh, gw).unwrap();
            let want = oracle_pool(&fmap, &roi, gh, gw);
            assert_eq!(got, want, "c={c} h={h} w={w} roi={roi:?} grid={gh}x{gw}");
        }
    }

    #[test]
    fn channel_permutation_equivariance() {
        let fmap = iota_map(3, 5, 5);
        let roi = RoiBox::new(0, 1, 5, 4);
        let (out, _) = roi_max_pool(&fmap, &roi, 2, 2).unwrap();
        // permute channels 0<->2 and re-pool
        let mut permuted = fmap.clone();
        for y in 0..5 {
            for x in 0..5 {
                permuted.set(0, y, x, fmap.at(2, y, x));
                permuted.set(2, y, x, fmap.at(0, y, x));
            }
        }
        let (out_p, _) = roi_max_pool(&permuted, &roi, 2, 2).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert_eq!(out.at(0, i, j), out_p.at(2, i, j));
                assert_eq!(out.at(2, i, j), out_p.at(0, i, j));
                assert_eq!(out.at(1, i, j), out_p.at(1, i, j));
            }
        }
    }

    #[test]
    fn backward_routes_to_argmax_only() {
        let fmap = iota_map(1, 4, 4);
        let roi = RoiBox::new(0, 0, 4, 4);
        let (_, routing) = roi_max_pool(&fmap, &roi, 2, 2).unwrap();
        let grad_out = FeatureMap::from_data(1, 2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let grad_in = roi_pool_backward(&grad_out, &routing, fmap.shape()).unwrap();
        assert_eq!(grad_in.at(0, 1, 1), 1.0); // value 6
        assert_eq!(grad_in.at(0, 1, 3), 2.0); // value 8
        assert_eq!(grad_in.at(0, 3, 1), 3.0); // value 14
        assert_eq!(grad_in.at(0, 3, 3), 4.0); // value 16
        assert_eq!(grad_in.data.iter().filter(|&&v| v != 0.0).count(), 4);
    }

    #[test]
    fn backward_zero_grad_is_zero_and_identity_passes_through() {
        let fmap = iota_map(2, 3, 3);
        let roi = RoiBox::new(0, 0, 3, 3);
        let (_, routing) = roi_max_pool(&fmap, &roi, 3, 3).unwrap();
        let zeros = FeatureMap::zeros(2, 3, 3);
        let grad_in = roi_pool_backward(&zeros, &routing, fmap.shape()).unwrap();
        assert!(grad_in.data.iter().all(|&v| v == 0.0));

        let grad_out = FeatureMap::from_data(2, 3, 3, (0..18).map(|i| i as f64).collect()).unwrap();
        let grad_in = roi_pool_backward(&grad_out, &routing, fmap.shape()).unwrap();
        assert_eq!(grad_in.data, grad_out.data);
    }

    #[test]
    fn backward_rejects_shape_mismatch() {
        let fmap = iota_map(1, 4, 4);
        let (_, routing) = roi_max_pool(&fmap, &RoiBox::new(0, 0, 4, 4), 2, 2).unwrap();
        let bad = FeatureMap::zeros(1, 3, 2);
        assert!(roi_pool_backward(&bad, &routing, fmap.shape()).is_err());
        let good = FeatureMap::zeros(1, 2, 2);
        assert!(roi_pool_backward(&good, &routing, (1, 5, 5)).is_err());
    }

    #[test]
    fn pooled_sum_directional_derivative_matches_routing() {
        // finite-difference check of d(sum of pooled)/d(input), away from ties
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let data: Vec<f64> = (0..36).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let fmap = FeatureMap::from_data(1, 6, 6, data).unwrap();
        let roi = RoiBox::new(1, 1, 5, 4);
        let (_, routing) = roi_max_pool(&fmap, &roi, 2, 3).unwrap();
        let ones = FeatureMap::from_data(1, 2, 3, vec![1.0; 6]).unwrap();
        let analytic = roi_pool_backward(&ones, &routing, fmap.shape()).unwrap();

        let eps = 1e-5;
        let pooled_sum = |f: &FeatureMap| {
            let (out, _) = roi_max_pool(f, &roi, 2, 3).unwrap();
            out.data.iter().sum::<f64>()
        };
        for idx in 0..fmap.data.len() {
            let mut plus = fmap.clone();
            plus.data[idx] += eps;
            let mut minus = fmap.clone();
            minus.data[idx] -= eps;
            let numeric = (pooled_sum(&plus) - pooled_sum(&minus)) / (2.0 * eps);
            assert!(
                (numeric - analytic.data[idx]).abs() < 1e-6,
                "idx {idx}: numeric {numeric} vs analytic {}",
                analytic.data[idx]
            );
        }
    }
}
