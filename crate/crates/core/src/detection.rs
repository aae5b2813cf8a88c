//! Steatosis candidate segmentation and shape-feature classification.

use std::collections::VecDeque;
use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::contour::{trace_boundary, Contour};
use crate::error::DetectionError;
use crate::hull::{convex_hull, lattice_points_in_hull};
use crate::morphology;
use crate::raster::{BinaryMask, GrayRaster, RgbRaster};
use crate::region::{connected_components, Connectivity, PixelRegion};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectionParams {
    pub hysteresis_low: f64,
    pub hysteresis_high: f64,
    pub inv_circ_max: f64,
    pub solidity_single: f64,
    pub extent_min: f64,
    pub min_region_area: usize,
    pub morph_radius: u32,
    pub clahe_tile: u32,
    pub clahe_clip: f64,
    /// Treat dark structures as steatosis.
    pub invert: bool,
}

impl Default for DetectionParams {
    fn default() -> Self {
        Self {
            hysteresis_low: 0.65,
            hysteresis_high: 0.8,
            inv_circ_max: 3.0,
            solidity_single: 0.95,
            extent_min: 0.5,
            min_region_area: 50,
            morph_radius: 2,
            clahe_tile: 64,
            clahe_clip: 2.0,
            invert: false,
        }
    }
}

impl DetectionParams {
    pub fn validate(&self) -> Result<(), DetectionError> {
        let bad = |m: &str| Err(DetectionError::InvalidParams(m.to_string()));
        if !(0.0..=1.0).contains(&self.hysteresis_low)
            || !(0.0..=1.0).contains(&self.hysteresis_high)
            || self.hysteresis_low >= self.hysteresis_high
        {
            return bad("need 0 <= hysteresis_low < hysteresis_high <= 1");
        }
        if self.inv_circ_max <= 0.0 || self.solidity_single <= 0.0 || self.extent_min <= 0.0 {
            return bad("cascade thresholds must be positive");
        }
        if self.clahe_tile == 0 || self.clahe_clip <= 0.0 {
            return bad("clahe_tile and clahe_clip must be positive");
        }
        if self.min_region_area == 0 {
            return bad("min_region_area must be positive");
        }
        Ok(())
    }
}

pub fn to_grayscale(img: &RgbRaster) -> GrayRaster {
    img.to_gray()
}

const CLAHE_BINS: usize = 256;

fn clahe_bin(v: f32) -> usize {
    ((v.clamp(0.0, 1.0) * CLAHE_BINS as f32) as usize).min(CLAHE_BINS - 1)
}

/// Per-tile lookup with clipped, uniformly redistributed histogram.
/// Values are midpoint CDFs so a flat histogram maps close to identity.
fn tile_lut(img: &GrayRaster, x0: u32, x1: u32, y0: u32, y1: u32, clip: f64) -> [f32; CLAHE_BINS] {
    let mut hist = [0f64; CLAHE_BINS];
    for y in y0..y1 {
        for x in x0..x1 {
            hist[clahe_bin(img.get(x, y))] += 1.0;
        }
    }
    let n: f64 = ((x1 - x0) * (y1 - y0)) as f64;
    let limit = (clip * n / CLAHE_BINS as f64).max(1.0);
    let mut excess = 0.0;
    for h in hist.iter_mut() {
        if *h > limit {
            excess += *h - limit;
            *h = limit;
        }
    }
    let add = excess / CLAHE_BINS as f64;
    let mut lut = [0f32; CLAHE_BINS];
    let mut cdf = 0.0;
    for (k, h) in hist.iter().enumerate() {
        let hk = h + add;
        lut[k] = ((cdf + hk / 2.0) / n) as f32;
        cdf += hk;
    }
    lut
}

/// Contrast-limited adaptive histogram equalization with bilinear blending
/// between tile centers. Images smaller than one tile use a single tile.
pub fn equalize_adaptive(img: &GrayRaster, tile: u32, clip: f64) -> GrayRaster {
    let (w, h) = (img.width(), img.height());
    if w == 0 || h == 0 {
        return img.clone();
    }
    let nx = w.div_ceil(tile.max(1));
    let ny = h.div_ceil(tile.max(1));
    let xb = |i: u32| (i as u64 * w as u64 / nx as u64) as u32;
    let yb = |j: u32| (j as u64 * h as u64 / ny as u64) as u32;
    let luts: Vec<[f32; CLAHE_BINS]> = (0..ny * nx)
        .into_par_iter()
        .map(|t| {
            let (i, j) = (t % nx, t / nx);
            tile_lut(img, xb(i), xb(i + 1), yb(j), yb(j + 1), clip)
        })
        .collect();
    let cx: Vec<f64> = (0..nx).map(|i| (xb(i) + xb(i + 1)) as f64 / 2.0 - 0.5).collect();
    let cy: Vec<f64> = (0..ny).map(|j| (yb(j) + yb(j + 1)) as f64 / 2.0 - 0.5).collect();
    // interpolation cell and weight per coordinate
    let locate = |c: &[f64], v: f64| -> (usize, usize, f64) {
        if v <= c[0] {
            return (0, 0, 0.0);
        }
        if v >= c[c.len() - 1] {
            return (c.len() - 1, c.len() - 1, 0.0);
        }
        let k = c.partition_point(|&ck| ck <= v) - 1;
        (k, k + 1, (v - c[k]) / (c[k + 1] - c[k]))
    };
    let xs: Vec<(usize, usize, f64)> = (0..w).map(|x| locate(&cx, x as f64)).collect();
    let rows: Vec<Vec<f32>> = (0..h)
        .into_par_iter()
        .map(|y| {
            let (j0, j1, fy) = locate(&cy, y as f64);
            (0..w)
                .map(|x| {
                    let (i0, i1, fx) = xs[x as usize];
                    let b = clahe_bin(img.get(x, y));
                    let l = |i: usize, j: usize| luts[j * nx as usize + i][b] as f64;
                    let top = l(i0, j0) * (1.0 - fx) + l(i1, j0) * fx;
                    let bot = l(i0, j1) * (1.0 - fx) + l(i1, j1) * fx;
                    (top * (1.0 - fy) + bot * fy).clamp(0.0, 1.0) as f32
                })
                .collect()
        })
        .collect();
    GrayRaster::from_vec(w, h, rows.concat()).expect("dimensions preserved")
}

/// Pixels `>= high`, plus pixels `>= low` that reach one of them through an
/// 8-connected path of pixels `>= low`.
pub fn hysteresis_binarize(img: &GrayRaster, low: f64, high: f64) -> BinaryMask {
    let (w, h) = (img.width() as i64, img.height() as i64);
    let mut out = BinaryMask::new(img.width(), img.height());
    let mut queue = VecDeque::new();
    for y in 0..img.height() {
        for x in 0..img.width() {
            if img.get(x, y) as f64 >= high {
                out.set(x, y, true);
                queue.push_back((x as i64, y as i64));
            }
        }
    }
    while let Some((x, y)) = queue.pop_front() {
        for &(dx, dy) in Connectivity::Eight.offsets() {
            let (nx, ny) = (x + dx, y + dy);
            if nx < 0 || ny < 0 || nx >= w || ny >= h {
                continue;
            }
            let (ux, uy) = (nx as u32, ny as u32);
            if !out.get(ux, uy) && img.get(ux, uy) as f64 >= low {
                out.set(ux, uy, true);
                queue.push_back((nx, ny));
            }
        }
    }
    out
}

/// Opening then closing with a disc, then removal of small components.
pub fn morphological_cleanup(mask: &BinaryMask, morph_radius: u32, min_region_area: usize) -> BinaryMask {
    let smoothed = if morph_radius > 0 {
        morphology::close(&morphology::open(mask, morph_radius), morph_radius)
    } else {
        mask.clone()
    };
    morphology::remove_small_components(&smoothed, min_region_area)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapeFeatures {
    pub area: f64,
    pub perimeter: f64,
    pub inv_circularity: f64,
    pub solidity: f64,
    pub extent: f64,
}

/// Area is the pixel count. The perimeter is the traced chain length through
/// boundary pixel centers plus `π`, which is the length of that chain pushed
/// half a pixel outward onto the pixel edges. Solidity compares the area with
/// the number of pixels inside the convex hull of the region's pixel centers.
pub fn compute_shape_features(region: &PixelRegion, contour: &Contour) -> Result<ShapeFeatures, DetectionError> {
    let area = region.area();
    if area == 0 {
        return Err(DetectionError::ZeroArea);
    }
    let a = area as f64;
    let perimeter = contour.perimeter() + PI;
    let hull = convex_hull(&contour.points);
    let hull_pixels = lattice_points_in_hull(&hull).max(area as u64);
    let bbox = region.bbox_width() as f64 * region.bbox_height() as f64;
    Ok(ShapeFeatures {
        area: a,
        perimeter,
        inv_circularity: perimeter * perimeter / (4.0 * PI * a),
        solidity: a / hull_pixels as f64,
        extent: a / bbox,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    NonCircular,
    LowExtent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    Isolated,
    Overlapped,
    Rejected(RejectReason),
}

pub fn classify_region(f: &ShapeFeatures, params: &DetectionParams) -> Classification {
    if f.inv_circularity > params.inv_circ_max {
        Classification::Rejected(RejectReason::NonCircular)
    } else if f.solidity > params.solidity_single {
        Classification::Isolated
    } else if f.extent < params.extent_min {
        Classification::Rejected(RejectReason::LowExtent)
    } else {
        Classification::Overlapped
    }
}

/// A connected steatosis candidate in the frame of its tissue image.
#[derive(Debug, Clone)]
pub struct Region {
    pub id: usize,
    pub pixels: PixelRegion,
    pub contour: Contour,
    pub features: ShapeFeatures,
    pub classification: Classification,
    pub border: bool,
}

impl Region {
    pub fn from_pixels(id: usize, pixels: PixelRegion, params: &DetectionParams, frame: (u32, u32)) -> Result<Self, DetectionError> {
        let contour = trace_boundary(&pixels);
        let features = compute_shape_features(&pixels, &contour)?;
        let (x0, y0, x1, y1) = pixels.bbox();
        let border = x0 <= 0 || y0 <= 0 || x1 >= frame.0 as i64 - 1 || y1 >= frame.1 as i64 - 1;
        Ok(Self {
            id,
            classification: classify_region(&features, params),
            pixels,
            contour,
            features,
            border,
        })
    }
}

/// Foreground mask of bright candidates, before component analysis.
pub fn candidate_mask(img: &RgbRaster, support: Option<&BinaryMask>, params: &DetectionParams) -> BinaryMask {
    let mut gray = to_grayscale(img);
    if params.invert {
        gray = GrayRaster::from_fn(gray.width(), gray.height(), |x, y| 1.0 - gray.get(x, y));
    }
    let eq = equalize_adaptive(&gray, params.clahe_tile, params.clahe_clip);
    let mut fg = hysteresis_binarize(&eq, params.hysteresis_low, params.hysteresis_high);
    if let Some(s) = support {
        fg = BinaryMask::from_fn(fg.width(), fg.height(), |x, y| fg.get(x, y) && s.get(x, y));
    }
    morphological_cleanup(&fg, params.morph_radius, params.min_region_area)
}

/// Segments and classifies candidates. `support` limits detection to the
/// tissue footprint; pixels outside it are never foreground, and regions
/// touching its edge are flagged as border regions.
pub fn detect_regions(
    img: &RgbRaster,
    support: Option<&BinaryMask>,
    params: &DetectionParams,
) -> Result<Vec<Region>, DetectionError> {
    params.validate()?;
    let mask = candidate_mask(img, support, params);
    let frame = (img.width(), img.height());
    connected_components(&mask, Connectivity::Eight)
        .into_par_iter()
        .enumerate()
        .map(|(id, px)| {
            let mut r = Region::from_pixels(id, px, params, frame)?;
            if let Some(s) = support {
                r.border |= touches_outside(&r.pixels, s);
            }
            Ok(r)
        })
        .collect()
}

fn touches_outside(region: &PixelRegion, support: &BinaryMask) -> bool {
    region.boundary_pixels().iter().any(|&(x, y)| {
        Connectivity::Eight
            .offsets()
            .iter()
            .any(|(dx, dy)| !support.get_signed(x + dx, y + dy))
    })
}
