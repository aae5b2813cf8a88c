//! Binary morphology with disc structuring elements.
//!
//! Only in-image neighbours are considered, so erosion never eats pixels at
//! the raster border and closing stays extensive.

use crate::raster::BinaryMask;
use crate::region::{connected_components, Connectivity};

/// Offsets `(dx, dy)` with `dx² + dy² ≤ r²`.
pub fn disc_offsets(radius: u32) -> Vec<(i64, i64)> {
    let r = radius as i64;
    let mut out = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if dx * dx + dy * dy <= r * r {
                out.push((dx, dy));
            }
        }
    }
    out
}

fn apply(mask: &BinaryMask, offsets: &[(i64, i64)], erode: bool) -> BinaryMask {
    let (w, h) = (mask.width() as i64, mask.height() as i64);
    BinaryMask::from_fn(mask.width(), mask.height(), |x, y| {
        let (x, y) = (x as i64, y as i64);
        let mut hits = offsets.iter().filter_map(|&(dx, dy)| {
            let (nx, ny) = (x + dx, y + dy);
            (nx >= 0 && ny >= 0 && nx < w && ny < h).then(|| mask.get(nx as u32, ny as u32))
        });
        if erode {
            hits.all(|b| b)
        } else {
            hits.any(|b| b)
        }
    })
}

pub fn erode(mask: &BinaryMask, radius: u32) -> BinaryMask {
    apply(mask, &disc_offsets(radius), true)
}

pub fn dilate(mask: &BinaryMask, radius: u32) -> BinaryMask {
    apply(mask, &disc_offsets(radius), false)
}

pub fn open(mask: &BinaryMask, radius: u32) -> BinaryMask {
    dilate(&erode(mask, radius), radius)
}

pub fn close(mask: &BinaryMask, radius: u32) -> BinaryMask {
    erode(&dilate(mask, radius), radius)
}

/// Drops 8-connected components smaller than `min_area`.
pub fn remove_small_components(mask: &BinaryMask, min_area: usize) -> BinaryMask {
    let mut out = BinaryMask::new(mask.width(), mask.height());
    for region in connected_components(mask, Connectivity::Eight) {
        if region.area() >= min_area {
            region.paint(&mut out, true);
        }
    }
    out
}
