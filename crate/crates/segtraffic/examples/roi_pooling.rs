//! RoI max pooling on a tiny feature map: the forward grid, the argmax
//! routing, and the backward scatter.
//!
//! ```bash
//! cargo run -p segtraffic --example roi_pooling
//! ```

use segtraffic::detect::{roi_max_pool, roi_pool_backward, FeatureMap, RoiBox};

fn print_grid(label: &str, map: &FeatureMap, channel: usize) {
    println!("{label}:");
    for y in 0..map.height {
        let row: Vec<String> = (0..map.width)
            .map(|x| format!("{:5.1}", map.at(channel, y, x)))
            .collect();
        println!("  {}", row.join(" "));
    }
}

fn main() -> segtraffic::Result<()> {
    // one channel, 6x6, values 1..36 row-major
    let fmap = FeatureMap::from_data(1, 6, 6, (1..=36).map(f64::from).collect())?;
    print_grid("feature map", &fmap, 0);

    // a 5x4 window pooled onto a 2x2 grid: non-divisible ratios split with
    // floor/ceil boundaries, so cells overlap by at most one row/column
    let roi = RoiBox::new(1, 2, 5, 4);
    let (pooled, routing) = roi_max_pool(&fmap, &roi, 2, 2)?;
    print_grid("pooled 2x2 over the 5x4 window at (1,2)", &pooled, 0);
    println!("argmax routing (feature-map coordinates):");
    for i in 0..2 {
        for j in 0..2 {
            let (y, x) = routing.argmax[i * 2 + j];
            println!("  cell ({i},{j}) <- ({y},{x})");
        }
    }

    // gradients flow only to the recorded winners
    let grad_out = FeatureMap::from_data(1, 2, 2, vec![1.0, 10.0, 100.0, 1000.0])?;
    let grad_in = roi_pool_backward(&grad_out, &routing, fmap.shape())?;
    print_grid("backward scatter of [[1,10],[100,1000]]", &grad_in, 0);

    // identity pooling: grid equal to the window returns it verbatim
    let (identity, _) = roi_max_pool(&fmap, &roi, 4, 5)?;
    print_grid("identity pooling (grid = window)", &identity, 0);
    Ok(())
}
