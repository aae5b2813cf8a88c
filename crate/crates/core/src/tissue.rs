//! Tissue component detection at low resolution and rotated extraction at
//! full resolution.
//!
//! Pixel coordinates follow the index convention: pixel `k` is sampled at
//! coordinate `k`. A pixel `i` at level `L` therefore covers level-0 pixels
//! `2^L i .. 2^L (i + 1) - 1` and has its center at `2^L i + (2^L - 1) / 2`.

use serde::{Deserialize, Serialize};

use crate::contour::trace_boundary;
use crate::error::TissueError;
use crate::raster::{BinaryMask, GrayRaster, RgbRaster};
use crate::region::{connected_components, Connectivity, PixelRegion};
use crate::slide::{read_region, BoundingBox, Frame, Point2, PyramidImage};

pub const OTSU_BINS: usize = 256;
/// Eigenvalue ratio below which a mask is treated as isotropic.
pub const ISOTROPY_RATIO: f64 = 1.05;
pub const DEFAULT_MIN_TISSUE_AREA: usize = 5000;
pub const DEFAULT_FILL: [u8; 3] = [255, 255, 255];

/// Bin of a sample in `[0, 1]`.
#[inline]
pub fn otsu_bin_of(v: f32) -> usize {
    ((v.clamp(0.0, 1.0) * OTSU_BINS as f32) as usize).min(OTSU_BINS - 1)
}

pub fn histogram(img: &GrayRaster) -> [u64; OTSU_BINS] {
    let mut h = [0u64; OTSU_BINS];
    for &v in img.samples() {
        h[otsu_bin_of(v)] += 1;
    }
    h
}

/// Last bin `t` of the lower class maximizing the between-class variance
/// `ω0 ω1 (μ0 - μ1)²` for the split `{0..=t} | {t+1..}`. Ties go to the lowest
/// `t`. `None` when fewer than two bins are populated.
pub fn otsu_bin(hist: &[u64]) -> Option<usize> {
    if hist.iter().filter(|&&c| c > 0).count() < 2 {
        return None;
    }
    let total: f64 = hist.iter().map(|&c| c as f64).sum();
    let sum_all: f64 = hist.iter().enumerate().map(|(i, &c)| i as f64 * c as f64).sum();
    let (mut w0, mut sum0) = (0.0, 0.0);
    let mut best: Option<(usize, f64)> = None;
    for (t, &c) in hist.iter().enumerate().take(hist.len() - 1) {
        w0 += c as f64;
        sum0 += t as f64 * c as f64;
        let w1 = total - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let m0 = sum0 / w0;
        let m1 = (sum_all - sum0) / w1;
        let var = w0 * w1 * (m0 - m1) * (m0 - m1);
        match best {
            Some((_, b)) if var <= b * (1.0 + 1e-12) => {}
            _ => best = Some((t, var)),
        }
    }
    best.map(|(t, _)| t)
}

/// Otsu threshold over a 256-bin histogram. Returns the threshold and the
/// mask of pixels below it (tissue is darker than glass).
pub fn otsu_threshold(img: &GrayRaster) -> Result<(f32, BinaryMask), TissueError> {
    let t = otsu_bin(&histogram(img)).ok_or(TissueError::DegenerateHistogram)?;
    let threshold = (t + 1) as f32 / OTSU_BINS as f32;
    Ok((threshold, threshold_below(img, threshold)))
}

/// Pixels whose bin lies below the bin of `threshold`.
pub fn threshold_below(img: &GrayRaster, threshold: f32) -> BinaryMask {
    let tb = otsu_bin_of(threshold);
    BinaryMask::from_fn(img.width(), img.height(), |x, y| otsu_bin_of(img.get(x, y)) < tb)
}

/// Principal axes of a pixel set. `center` is the centroid at the mask level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RotationEstimate {
    pub angle: f64,
    pub center: Point2,
    pub major_axis: [f64; 2],
    pub minor_axis: [f64; 2],
    pub eigenvalues: [f64; 2],
}

impl RotationEstimate {
    pub fn identity(center: Point2) -> Self {
        Self {
            angle: 0.0,
            center,
            major_axis: [1.0, 0.0],
            minor_axis: [0.0, 1.0],
            eigenvalues: [0.0, 0.0],
        }
    }

    pub fn from_angle(angle: f64, center: Point2) -> Self {
        Self {
            angle,
            center,
            major_axis: [angle.cos(), angle.sin()],
            minor_axis: [-angle.sin(), angle.cos()],
            eigenvalues: [0.0, 0.0],
        }
    }
}

fn normalize_angle(mut a: f64) -> f64 {
    use std::f64::consts::PI;
    while a > PI / 2.0 {
        a -= PI;
    }
    while a <= -PI / 2.0 {
        a += PI;
    }
    a
}

/// PCA of foreground pixel coordinates at `level`.
pub fn estimate_rotation(mask: &BinaryMask, level: u32) -> Result<RotationEstimate, TissueError> {
    let pts: Vec<(f64, f64)> = mask.foreground().map(|(x, y)| (x as f64, y as f64)).collect();
    rotation_from_points(&pts, level)
}

pub fn rotation_from_points(pts: &[(f64, f64)], level: u32) -> Result<RotationEstimate, TissueError> {
    if pts.len() < 3 {
        return Err(TissueError::TooFewPixels(pts.len()));
    }
    let n = pts.len() as f64;
    let (mx, my) = pts
        .iter()
        .fold((0.0, 0.0), |(a, b), &(x, y)| (a + x, b + y));
    let (mx, my) = (mx / n, my / n);
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for &(x, y) in pts {
        let (dx, dy) = (x - mx, y - my);
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    let (sxx, syy, sxy) = (sxx / n, syy / n, sxy / n);
    let tr = sxx + syy;
    let disc = ((sxx - syy) * (sxx - syy) / 4.0 + sxy * sxy).sqrt();
    let (l1, l2) = (tr / 2.0 + disc, tr / 2.0 - disc);
    let center = Point2::global(mx, my, level);
    if l2 > 0.0 && l1 / l2 < ISOTROPY_RATIO {
        let mut r = RotationEstimate::identity(center);
        r.eigenvalues = [l1, l2];
        return Ok(r);
    }
    let angle = normalize_angle(0.5 * (2.0 * sxy).atan2(sxx - syy));
    let mut r = RotationEstimate::from_angle(angle, center);
    r.eigenvalues = [l1, l2];
    Ok(r)
}

/// Tight box over the foreground, at `level`.
pub fn fit_bounding_box(mask: &BinaryMask, level: u32) -> Result<BoundingBox, TissueError> {
    let (mut x0, mut y0, mut x1, mut y1) = (u32::MAX, u32::MAX, 0, 0);
    for (x, y) in mask.foreground() {
        x0 = x0.min(x);
        y0 = y0.min(y);
        x1 = x1.max(x);
        y1 = y1.max(y);
    }
    if x0 == u32::MAX {
        return Err(TissueError::EmptyMask);
    }
    Ok(BoundingBox {
        x0,
        y0,
        width: x1 - x0 + 1,
        height: y1 - y0 + 1,
        level,
    })
}

/// One connected tissue piece detected at the analysis level.
#[derive(Debug, Clone)]
pub struct TissueComponent {
    pub level: u32,
    pub region: PixelRegion,
    pub bbox_low: BoundingBox,
    pub bbox_l0: BoundingBox,
    pub rotation: RotationEstimate,
    /// Outer contour at level 0 (pixel centers of the low-resolution contour).
    pub boundary_l0: Vec<Point2>,
}

impl TissueComponent {
    pub fn from_region(region: PixelRegion, level: u32) -> Result<Self, TissueError> {
        let (x0, y0, x1, y1) = region.bbox();
        if region.is_empty() {
            return Err(TissueError::EmptyMask);
        }
        let bbox_low = BoundingBox {
            x0: x0 as u32,
            y0: y0 as u32,
            width: (x1 - x0 + 1) as u32,
            height: (y1 - y0 + 1) as u32,
            level,
        };
        let pts: Vec<(f64, f64)> = region.pixels().map(|(x, y)| (x as f64, y as f64)).collect();
        let rotation = rotation_from_points(&pts, level)?;
        let s = (1u64 << level) as f64;
        let half = (s - 1.0) / 2.0;
        let boundary_l0 = trace_boundary(&region)
            .points
            .iter()
            .map(|&(x, y)| Point2::global(x as f64 * s + half, y as f64 * s + half, 0))
            .collect();
        Ok(Self {
            level,
            bbox_l0: bbox_low.to_level(0),
            region,
            bbox_low,
            rotation,
            boundary_l0,
        })
    }

    /// This component alone as a mask of the full analysis-level frame.
    pub fn mask(&self, width: u32, height: u32) -> BinaryMask {
        let mut m = BinaryMask::new(width, height);
        self.region.paint(&mut m, true);
        m
    }

    /// Boundary in the frame of the level-0 bounding-box crop.
    pub fn boundary_local(&self) -> Vec<Point2> {
        let (ox, oy) = (self.bbox_l0.x0 as f64, self.bbox_l0.y0 as f64);
        self.boundary_l0
            .iter()
            .map(|p| Point2::local(p.x - ox, p.y - oy))
            .collect()
    }

    /// Centroid in the frame of the level-0 crop.
    pub fn center_local(&self) -> Point2 {
        let s = (1u64 << self.level) as f64;
        let half = (s - 1.0) / 2.0;
        Point2::local(
            self.rotation.center.x * s + half - self.bbox_l0.x0 as f64,
            self.rotation.center.y * s + half - self.bbox_l0.y0 as f64,
        )
    }

    /// Area of the component with interior holes filled, in level-0 pixels.
    pub fn filled_area_l0(&self) -> u64 {
        self.region.filled().area() as u64 * (1u64 << (2 * self.level))
    }
}

/// 8-connected components with at least `min_area` pixels, largest first.
pub fn find_tissue_components(
    mask: &BinaryMask,
    min_area: usize,
    level: u32,
) -> Result<Vec<TissueComponent>, TissueError> {
    let mut regions: Vec<PixelRegion> = connected_components(mask, Connectivity::Eight)
        .into_iter()
        .filter(|r| r.area() >= min_area.max(3))
        .collect();
    // stable: equal areas keep raster order of their first pixel
    regions.sort_by_key(|r| std::cmp::Reverse(r.area()));
    regions
        .into_iter()
        .map(|r| TissueComponent::from_region(r, level))
        .collect()
}

/// Extent of a tissue piece along its principal axes.
///
/// `p1, p2` lie on the major-axis line through the input center, `p3, p4` on
/// the minor-axis line. `center` is the midpoint of both extents, which is
/// where the rotated image is centered.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RotatedExtent {
    pub width: f64,
    pub height: f64,
    pub p1: Point2,
    pub p2: Point2,
    pub p3: Point2,
    pub p4: Point2,
    pub center: Point2,
    pub used_fallback: bool,
}

impl RotatedExtent {
    /// Grows both dimensions by `margin`, keeping the center.
    pub fn padded(mut self, margin: f64) -> Self {
        self.width += margin;
        self.height += margin;
        self
    }

    pub fn pixel_width(&self) -> u32 {
        (self.width - 1e-9).ceil().max(1.0) as u32
    }

    pub fn pixel_height(&self) -> u32 {
        (self.height - 1e-9).ceil().max(1.0) as u32
    }
}

/// Signed parameters `t` where `c + t d` crosses the closed polyline.
fn line_crossings(boundary: &[Point2], c: (f64, f64), d: (f64, f64)) -> Vec<f64> {
    let n = boundary.len();
    let mut ts = Vec::new();
    for i in 0..n {
        let a = (boundary[i].x, boundary[i].y);
        let b = (boundary[(i + 1) % n].x, boundary[(i + 1) % n].y);
        let e = (b.0 - a.0, b.1 - a.1);
        let denom = d.0 * e.1 - d.1 * e.0;
        if denom.abs() < 1e-12 {
            continue;
        }
        let w = (a.0 - c.0, a.1 - c.1);
        let t = (w.0 * e.1 - w.1 * e.0) / denom;
        let s = (w.0 * d.1 - w.1 * d.0) / denom;
        if (-1e-9..=1.0 + 1e-9).contains(&s) {
            ts.push(t);
        }
    }
    ts
}

fn axis_extent(boundary: &[Point2], c: (f64, f64), d: (f64, f64)) -> (f64, f64, bool) {
    let ts = line_crossings(boundary, c, d);
    let max_pos = ts.iter().cloned().filter(|&t| t > 0.0).fold(f64::NAN, f64::max);
    let min_neg = ts.iter().cloned().filter(|&t| t < 0.0).fold(f64::NAN, f64::min);
    if max_pos.is_finite() && min_neg.is_finite() {
        return (min_neg, max_pos, false);
    }
    let proj = boundary.iter().map(|p| (p.x - c.0) * d.0 + (p.y - c.1) * d.1);
    let (lo, hi) = proj.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), t| (lo.min(t), hi.max(t)));
    (lo, hi, true)
}

/// Extent of `boundary` along the principal axes through `center`, using the
/// outermost boundary crossings on each side of the center. If an axis line
/// does not cross the boundary on both sides, the projection extent of all
/// boundary points onto that axis is used instead.
pub fn rotated_extent(
    boundary: &[Point2],
    center: Point2,
    rot: &RotationEstimate,
) -> Result<RotatedExtent, TissueError> {
    if boundary.len() < 3 {
        return Err(TissueError::ShortContour(boundary.len()));
    }
    let c = (center.x, center.y);
    let u = (rot.major_axis[0], rot.major_axis[1]);
    let v = (rot.minor_axis[0], rot.minor_axis[1]);
    let (u0, u1, fu) = axis_extent(boundary, c, u);
    let (v0, v1, fv) = axis_extent(boundary, c, v);
    let at = |d: (f64, f64), t: f64| Point2::new(c.0 + d.0 * t, c.1 + d.1 * t, center.frame);
    let (um, vm) = ((u0 + u1) / 2.0, (v0 + v1) / 2.0);
    Ok(RotatedExtent {
        width: u1 - u0,
        height: v1 - v0,
        p1: at(u, u0),
        p2: at(u, u1),
        p3: at(v, v0),
        p4: at(v, v1),
        center: Point2::new(
            c.0 + u.0 * um + v.0 * vm,
            c.1 + u.1 * um + v.1 * vm,
            center.frame,
        ),
        used_fallback: fu || fv,
    })
}

/// Geometry linking a rotated tissue image to its level-0 crop and to the
/// whole slide.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TissueTransform {
    /// Top-left of the crop in global level-0 coordinates.
    pub origin: [f64; 2],
    pub crop_width: u32,
    pub crop_height: u32,
    pub width: u32,
    pub height: u32,
    pub angle: f64,
    /// Rotation center in the crop frame.
    pub source_center: [f64; 2],
    /// Rotation center in the rotated frame.
    pub dest_center: [f64; 2],
}

impl TissueTransform {
    pub fn new(bbox_l0: &BoundingBox, extent: &RotatedExtent, angle: f64) -> Self {
        let (w, h) = (extent.pixel_width(), extent.pixel_height());
        Self {
            origin: [bbox_l0.x0 as f64, bbox_l0.y0 as f64],
            crop_width: bbox_l0.width,
            crop_height: bbox_l0.height,
            width: w,
            height: h,
            angle,
            source_center: [extent.center.x, extent.center.y],
            dest_center: [(w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0],
        }
    }

    /// `x̂ = R (x̃ - c̃) + ĉ`.
    #[inline]
    pub fn rotated_to_local_xy(&self, x: f64, y: f64) -> (f64, f64) {
        let (s, c) = self.angle.sin_cos();
        let (dx, dy) = (x - self.dest_center[0], y - self.dest_center[1]);
        (
            c * dx - s * dy + self.source_center[0],
            s * dx + c * dy + self.source_center[1],
        )
    }

    #[inline]
    pub fn local_to_rotated_xy(&self, x: f64, y: f64) -> (f64, f64) {
        let (s, c) = self.angle.sin_cos();
        let (dx, dy) = (x - self.source_center[0], y - self.source_center[1]);
        (
            c * dx + s * dy + self.dest_center[0],
            -s * dx + c * dy + self.dest_center[1],
        )
    }

    #[inline]
    pub fn rotated_to_global_xy(&self, x: f64, y: f64) -> (f64, f64) {
        let (lx, ly) = self.rotated_to_local_xy(x, y);
        (lx + self.origin[0], ly + self.origin[1])
    }

    #[inline]
    pub fn global_to_rotated_xy(&self, x: f64, y: f64) -> (f64, f64) {
        self.local_to_rotated_xy(x - self.origin[0], y - self.origin[1])
    }

    pub fn rotated_to_global(&self, p: Point2) -> Result<Point2, TissueError> {
        if p.frame != Frame::Rotated {
            return Err(crate::error::SlideError::FrameMismatch {
                expected: Frame::Rotated.to_string(),
                got: p.frame.to_string(),
            }
            .into());
        }
        let (x, y) = self.rotated_to_global_xy(p.x, p.y);
        Ok(Point2::global(x, y, 0))
    }
}

/// Bilinear sample at a sub-pixel position, or `None` outside the raster.
pub fn sample_bilinear(src: &RgbRaster, x: f64, y: f64) -> Option<[u8; 3]> {
    const EPS: f64 = 1e-6;
    let (w, h) = (src.width() as f64, src.height() as f64);
    if x < -EPS || y < -EPS || x > w - 1.0 + EPS || y > h - 1.0 + EPS {
        return None;
    }
    let x = x.clamp(0.0, w - 1.0);
    let y = y.clamp(0.0, h - 1.0);
    let (x0, y0) = (x.floor() as u32, y.floor() as u32);
    let (x1, y1) = ((x0 + 1).min(src.width() - 1), (y0 + 1).min(src.height() - 1));
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    let (a, b, c, d) = (src.get(x0, y0), src.get(x1, y0), src.get(x0, y1), src.get(x1, y1));
    let mut out = [0u8; 3];
    for k in 0..3 {
        let top = a[k] as f64 * (1.0 - fx) + b[k] as f64 * fx;
        let bot = c[k] as f64 * (1.0 - fx) + d[k] as f64 * fx;
        out[k] = (top * (1.0 - fy) + bot * fy).round().clamp(0.0, 255.0) as u8;
    }
    Some(out)
}

/// Resamples `src` into a `width × height` image rotated by `angle` about
/// `source_center` (in `src` pixels). Pixels whose source falls outside `src`
/// receive `fill`.
pub fn rotate_raster(
    src: &RgbRaster,
    source_center: (f64, f64),
    angle: f64,
    width: u32,
    height: u32,
    fill: [u8; 3],
) -> RgbRaster {
    let t = TissueTransform {
        origin: [0.0, 0.0],
        crop_width: src.width(),
        crop_height: src.height(),
        width,
        height,
        angle,
        source_center: [source_center.0, source_center.1],
        dest_center: [(width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0],
    };
    resample(src, &t, fill)
}

fn resample(src: &RgbRaster, t: &TissueTransform, fill: [u8; 3]) -> RgbRaster {
    let mut out = RgbRaster::new(t.width, t.height, fill);
    for y in 0..t.height {
        for x in 0..t.width {
            let (sx, sy) = t.rotated_to_local_xy(x as f64, y as f64);
            if let Some(px) = sample_bilinear(src, sx, sy) {
                out.put(x, y, px);
            }
        }
    }
    out
}

/// Rotated, background-minimal level-0 image of one tissue component.
pub fn extract_rotated_tissue(
    p: &PyramidImage,
    comp: &TissueComponent,
    ext: &RotatedExtent,
    fill: [u8; 3],
) -> Result<(RgbRaster, TissueTransform), TissueError> {
    let base = p.raster(0)?;
    let bbox = comp.bbox_l0.clamped(base.width(), base.height());
    let crop = read_region(p, 0, &bbox)?;
    let transform = TissueTransform::new(&bbox, ext, comp.rotation.angle);
    Ok((resample(&crop, &transform, fill), transform))
}

/// A tissue component together with its rotated level-0 image.
#[derive(Debug, Clone)]
pub struct ExtractedTissue {
    pub index: usize,
    pub component: TissueComponent,
    pub extent: RotatedExtent,
    pub transform: TissueTransform,
    pub image: RgbRaster,
    pub otsu_threshold: f32,
}

/// Otsu mask of the `level` raster split into tissue components. A blank
/// slide yields no components.
pub fn detect_tissues(
    p: &PyramidImage,
    level: u32,
    min_area: usize,
) -> Result<(Vec<TissueComponent>, f32), TissueError> {
    let low = p.raster(level)?.to_gray();
    let (threshold, mask) = match otsu_threshold(&low) {
        Ok(v) => v,
        Err(TissueError::DegenerateHistogram) => return Ok((Vec::new(), 0.0)),
        Err(e) => return Err(e),
    };
    Ok((find_tissue_components(&mask, min_area, level)?, threshold))
}

/// Extent and rotated image of a single component. The extent is padded by
/// one analysis-level pixel so the outermost low-resolution pixels are
/// covered in full.
pub fn extract_component(
    p: &PyramidImage,
    index: usize,
    comp: TissueComponent,
    fill: [u8; 3],
    otsu_threshold: f32,
) -> Result<ExtractedTissue, TissueError> {
    let margin = (1u64 << comp.level) as f64;
    let extent = rotated_extent(&comp.boundary_local(), comp.center_local(), &comp.rotation)?
        .padded(margin);
    let (image, transform) = extract_rotated_tissue(p, &comp, &extent, fill)?;
    Ok(ExtractedTissue {
        index,
        component: comp,
        extent,
        transform,
        image,
        otsu_threshold,
    })
}
