//! Region proposals from a foreground mask.

use crate::detect::RoiBox;
use crate::imageio::Frame;

/// Finds 4-connected foreground components with area >= `min_area` and
/// reports each as its tight bounding box, sorted by area descending, then
/// by (y, x) of the top-left corner.
///
/// Any nonzero mask value counts as foreground. An empty mask yields an
/// empty list.
pub fn propose_from_mask(mask: &Frame, min_area: usize) -> Vec<RoiBox> {
    let (w, h) = (mask.width(), mask.height());
    let mut visited = vec![false; w * h];
    let mut boxes: Vec<(usize, RoiBox)> = Vec::new();
    let mut stack = Vec::new();

    for start_y in 0..h {
        for start_x in 0..w {
            let idx = start_y * w + start_x;
            if visited[idx] || mask.data()[idx] == 0 {
                continue;
            }
            // flood-fill one component
            let (mut min_x, mut max_x, mut min_y, mut max_y) = (start_x, start_x, start_y, start_y);
            let mut area = 0usize;
            visited[idx] = true;
            stack.push((start_x, start_y));
            while let Some((x, y)) = stack.pop() {
                area += 1;
                min_x = min_x.min(x);
                max_x = max_x.max(x);
                min_y = min_y.min(y);
                max_y = max_y.max(y);
                let mut visit = |nx: usize, ny: usize, visited: &mut Vec<bool>| {
                    let nidx = ny * w + nx;
                    if !visited[nidx] && mask.data()[nidx] != 0 {
                        visited[nidx] = true;
                        stack.push((nx, ny));
                    }
                };
                if x > 0 {
                    visit(x - 1, y, &mut visited);
                }
                if x + 1 < w {
                    visit(x + 1, y, &mut visited);
                }
                if y > 0 {
                    visit(x, y - 1, &mut visited);
                }
                if y + 1 < h {
                    visit(x, y + 1, &mut visited);
                }
            }
            if area >= min_area {
                boxes.push((
                    area,
                    RoiBox::new(
                        min_x as u32,
                        min_y as u32,
                        (max_x - min_x + 1) as u32,
                        (max_y - min_y + 1) as u32,
                    ),
                ));
            }
        }
    }

    boxes.sort_by(|(area_a, a), (area_b, b)| {
        area_b.cmp(area_a).then(a.y.cmp(&b.y)).then(a.x.cmp(&b.x))
    });
    boxes.into_iter().map(|(_, b)| b).collect()
}
