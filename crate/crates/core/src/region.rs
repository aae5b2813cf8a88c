//! Pixel sets and connected-component labelling.

use std::collections::VecDeque;

use crate::raster::BinaryMask;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Connectivity {
    Four,
    Eight,
}

impl Connectivity {
    pub fn offsets(self) -> &'static [(i64, i64)] {
        const FOUR: [(i64, i64); 4] = [(1, 0), (0, 1), (-1, 0), (0, -1)];
        const EIGHT: [(i64, i64); 8] = [
            (1, 0),
            (1, 1),
            (0, 1),
            (-1, 1),
            (-1, 0),
            (-1, -1),
            (0, -1),
            (1, -1),
        ];
        match self {
            Connectivity::Four => &FOUR,
            Connectivity::Eight => &EIGHT,
        }
    }
}

/// A set of pixels stored as a tight mask plus its offset in the parent frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PixelRegion {
    x0: i64,
    y0: i64,
    mask: BinaryMask,
    area: usize,
}

impl PixelRegion {
    /// Builds a region from absolute pixel coordinates. Duplicates are merged.
    pub fn from_pixels(pixels: &[(i64, i64)]) -> Self {
        if pixels.is_empty() {
            return Self {
                x0: 0,
                y0: 0,
                mask: BinaryMask::new(0, 0),
                area: 0,
            };
        }
        let (mut x0, mut y0, mut x1, mut y1) = (i64::MAX, i64::MAX, i64::MIN, i64::MIN);
        for &(x, y) in pixels {
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
        }
        let mut mask = BinaryMask::new((x1 - x0 + 1) as u32, (y1 - y0 + 1) as u32);
        for &(x, y) in pixels {
            mask.set((x - x0) as u32, (y - y0) as u32, true);
        }
        let area = mask.count();
        Self { x0, y0, mask, area }
    }

    /// Region covering the foreground of a whole mask (offset 0,0).
    pub fn from_mask(mask: &BinaryMask) -> Self {
        let pixels: Vec<(i64, i64)> = mask.foreground().map(|(x, y)| (x as i64, y as i64)).collect();
        Self::from_pixels(&pixels)
    }

    pub fn area(&self) -> usize {
        self.area
    }

    pub fn is_empty(&self) -> bool {
        self.area == 0
    }

    /// Inclusive bounding box `(x0, y0, x1, y1)` in the parent frame.
    pub fn bbox(&self) -> (i64, i64, i64, i64) {
        (
            self.x0,
            self.y0,
            self.x0 + self.mask.width() as i64 - 1,
            self.y0 + self.mask.height() as i64 - 1,
        )
    }

    pub fn bbox_width(&self) -> u32 {
        self.mask.width()
    }

    pub fn bbox_height(&self) -> u32 {
        self.mask.height()
    }

    pub fn offset(&self) -> (i64, i64) {
        (self.x0, self.y0)
    }

    pub fn local_mask(&self) -> &BinaryMask {
        &self.mask
    }

    #[inline]
    pub fn contains(&self, x: i64, y: i64) -> bool {
        self.mask.get_signed(x - self.x0, y - self.y0)
    }

    /// Absolute pixel coordinates in raster order.
    pub fn pixels(&self) -> impl Iterator<Item = (i64, i64)> + '_ {
        self.mask
            .foreground()
            .map(move |(x, y)| (x as i64 + self.x0, y as i64 + self.y0))
    }

    pub fn centroid(&self) -> (f64, f64) {
        let (mut sx, mut sy) = (0.0, 0.0);
        for (x, y) in self.pixels() {
            sx += x as f64;
            sy += y as f64;
        }
        let n = self.area.max(1) as f64;
        (sx / n, sy / n)
    }

    /// Pixels with at least one 4-neighbour outside the region.
    pub fn boundary_pixels(&self) -> Vec<(i64, i64)> {
        self.pixels()
            .filter(|&(x, y)| {
                Connectivity::Four
                    .offsets()
                    .iter()
                    .any(|(dx, dy)| !self.contains(x + dx, y + dy))
            })
            .collect()
    }

    /// True when some background pixel inside the bounding box is not reachable
    /// from outside the box.
    pub fn has_holes(&self) -> bool {
        let (w, h) = (self.mask.width() as i64 + 2, self.mask.height() as i64 + 2);
        let mut seen = vec![false; (w * h) as usize];
        let idx = |x: i64, y: i64| (y * w + x) as usize;
        let inside = |x: i64, y: i64| self.mask.get_signed(x - 1, y - 1);
        let mut queue = VecDeque::from([(0i64, 0i64)]);
        seen[0] = true;
        let mut outside = 1usize;
        while let Some((x, y)) = queue.pop_front() {
            for &(dx, dy) in Connectivity::Four.offsets() {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= w || ny >= h {
                    continue;
                }
                if seen[idx(nx, ny)] || inside(nx, ny) {
                    continue;
                }
                seen[idx(nx, ny)] = true;
                outside += 1;
                queue.push_back((nx, ny));
            }
        }
        (outside + self.area) < (w * h) as usize
    }

    /// Region with interior holes filled.
    pub fn filled(&self) -> PixelRegion {
        let (w, h) = (self.mask.width() as i64 + 2, self.mask.height() as i64 + 2);
        let mut outside = vec![false; (w * h) as usize];
        let idx = |x: i64, y: i64| (y * w + x) as usize;
        let inside = |x: i64, y: i64| self.mask.get_signed(x - 1, y - 1);
        let mut queue = VecDeque::from([(0i64, 0i64)]);
        outside[0] = true;
        while let Some((x, y)) = queue.pop_front() {
            for &(dx, dy) in Connectivity::Four.offsets() {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= w || ny >= h {
                    continue;
                }
                if outside[idx(nx, ny)] || inside(nx, ny) {
                    continue;
                }
                outside[idx(nx, ny)] = true;
                queue.push_back((nx, ny));
            }
        }
        let mut pixels = Vec::new();
        for y in 1..h - 1 {
            for x in 1..w - 1 {
                if !outside[idx(x, y)] {
                    pixels.push((x - 1 + self.x0, y - 1 + self.y0));
                }
            }
        }
        PixelRegion::from_pixels(&pixels)
    }

    /// Paints the region into a mask of the parent frame, clipping at its edges.
    pub fn paint(&self, target: &mut BinaryMask, value: bool) {
        for (x, y) in self.pixels() {
            if x >= 0 && y >= 0 && (x as u64) < target.width() as u64 && (y as u64) < target.height() as u64
            {
                target.set(x as u32, y as u32, value);
            }
        }
    }

    /// Row runs `[y, x_start, length]` in raster order.
    pub fn runs(&self) -> Vec<[i64; 3]> {
        let mut runs = Vec::new();
        for ly in 0..self.mask.height() {
            let mut lx = 0;
            while lx < self.mask.width() {
                if self.mask.get(lx, ly) {
                    let start = lx;
                    while lx < self.mask.width() && self.mask.get(lx, ly) {
                        lx += 1;
                    }
                    runs.push([ly as i64 + self.y0, start as i64 + self.x0, (lx - start) as i64]);
                } else {
                    lx += 1;
                }
            }
        }
        runs
    }

    pub fn from_runs(runs: &[[i64; 3]]) -> Self {
        let mut pixels = Vec::new();
        for &[y, x, len] in runs {
            for dx in 0..len {
                pixels.push((x + dx, y));
            }
        }
        Self::from_pixels(&pixels)
    }
}

/// Labels connected foreground components, ordered by their first pixel in raster order.
pub fn connected_components(mask: &BinaryMask, connectivity: Connectivity) -> Vec<PixelRegion> {
    let (w, h) = (mask.width() as i64, mask.height() as i64);
    let mut seen = vec![false; (w * h) as usize];
    let mut regions = Vec::new();
    let mut queue = VecDeque::new();
    for (sx, sy) in mask.foreground() {
        let start = (sy as i64 * w + sx as i64) as usize;
        if seen[start] {
            continue;
        }
        seen[start] = true;
        queue.push_back((sx as i64, sy as i64));
        let mut pixels = Vec::new();
        while let Some((x, y)) = queue.pop_front() {
            pixels.push((x, y));
            for &(dx, dy) in connectivity.offsets() {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= w || ny >= h {
                    continue;
                }
                let i = (ny * w + nx) as usize;
                if !seen[i] && mask.get(nx as u32, ny as u32) {
                    seen[i] = true;
                    queue.push_back((nx, ny));
                }
            }
        }
        regions.push(PixelRegion::from_pixels(&pixels));
    }
    regions
}

/// Components of a pixel region itself (used after cutting a region).
pub fn region_components(region: &PixelRegion, connectivity: Connectivity) -> Vec<PixelRegion> {
    let (ox, oy) = region.offset();
    connected_components(region.local_mask(), connectivity)
        .into_iter()
        .map(|r| {
            let shifted: Vec<(i64, i64)> = r.pixels().map(|(x, y)| (x + ox, y + oy)).collect();
            PixelRegion::from_pixels(&shifted)
        })
        .collect()
}
