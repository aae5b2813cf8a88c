//! Splitting overlapped steatosis into two components.
//!
//! Concave high-curvature points on the region contour are paired; each pair
//! defines a chord that cuts the region in two, and each side is scored by
//! how well an ellipse fitted to its boundary covers it.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::contour::{trace_boundary, Contour};
use crate::ellipse::{fit_ellipse, EllipseParams};
use crate::error::SegregationError;
use crate::region::{region_components, Connectivity, PixelRegion};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitAggregation {
    Min,
    Mean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegregationParams {
    pub enabled: bool,
    pub smooth_window: usize,
    /// Index offset of the central differences.
    pub derivative_step: usize,
    pub kappa_threshold: f64,
    pub merge_gap: usize,
    pub max_points: usize,
    pub accept_threshold: f64,
    pub aggregation: FitAggregation,
    pub min_region_area: usize,
    pub min_side_fraction: f64,
    /// Boundary points closer than this to the chord are left out of the fit.
    pub chord_exclusion: f64,
}

impl Default for SegregationParams {
    fn default() -> Self {
        Self {
            enabled: true,
            smooth_window: 5,
            derivative_step: 4,
            kappa_threshold: 0.08,
            merge_gap: 5,
            max_points: 12,
            accept_threshold: 0.7,
            aggregation: FitAggregation::Min,
            min_region_area: 50,
            min_side_fraction: 0.1,
            chord_exclusion: 1.5,
        }
    }
}

impl SegregationParams {
    pub fn validate(&self) -> Result<(), String> {
        if self.smooth_window == 0 || self.derivative_step == 0 {
            return Err("smooth_window and derivative_step must be positive".into());
        }
        if self.kappa_threshold <= 0.0 || !(0.0..=1.0).contains(&self.accept_threshold) {
            return Err("kappa_threshold must be positive and accept_threshold in [0, 1]".into());
        }
        if self.max_points < 2 {
            return Err("max_points must be at least 2".into());
        }
        if !(0.0..0.5).contains(&self.min_side_fraction) {
            return Err("min_side_fraction must be in [0, 0.5)".into());
        }
        Ok(())
    }
}

/// Signed curvature at every contour point.
///
/// Coordinates are smoothed by a centered circular moving average of
/// `smooth_window` points, then differentiated by central differences over
/// `step` indices. Convex arcs of a positively oriented contour have `κ > 0`.
/// Contours shorter than `2 smooth_window + 5` give an empty result.
pub fn compute_curvature(contour: &[(i64, i64)], smooth_window: usize, step: usize) -> Vec<f64> {
    let n = contour.len();
    if n < 2 * smooth_window + 5 || n < 2 * step + 1 {
        return Vec::new();
    }
    let half = smooth_window / 2;
    let width = (2 * half + 1) as f64;
    let at = |i: isize| contour[i.rem_euclid(n as isize) as usize];
    let smooth: Vec<(f64, f64)> = (0..n as isize)
        .map(|i| {
            let (mut sx, mut sy) = (0.0, 0.0);
            for k in -(half as isize)..=half as isize {
                let p = at(i + k);
                sx += p.0 as f64;
                sy += p.1 as f64;
            }
            (sx / width, sy / width)
        })
        .collect();
    let h = step as f64;
    (0..n)
        .map(|i| {
            let a = smooth[(i + n - step) % n];
            let b = smooth[(i + step) % n];
            let c = smooth[i];
            let (x1, y1) = ((b.0 - a.0) / (2.0 * h), (b.1 - a.1) / (2.0 * h));
            let (x2, y2) = ((b.0 - 2.0 * c.0 + a.0) / (h * h), (b.1 - 2.0 * c.1 + a.1) / (h * h));
            let speed = (x1 * x1 + y1 * y1).powf(1.5);
            if speed < 1e-12 {
                0.0
            } else {
                (x1 * y2 - y1 * x2) / speed
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvaturePoint {
    pub contour_index: usize,
    pub x: f64,
    pub y: f64,
    pub kappa: f64,
    /// First and last contour index of the merged run.
    pub run: (usize, usize),
}

/// Concave points (`κ < -κ_threshold`), with nearby points merged.
///
/// Selected indices closer than `merge_gap + 1` positions along the contour
/// (circularly) form one run, represented by its most negative point.
pub fn detect_high_curvature_points(
    kappa: &[f64],
    contour: &[(i64, i64)],
    kappa_threshold: f64,
    merge_gap: usize,
) -> Vec<CurvaturePoint> {
    let n = kappa.len().min(contour.len());
    let sel: Vec<usize> = (0..n).filter(|&i| kappa[i] < -kappa_threshold).collect();
    if sel.is_empty() {
        return Vec::new();
    }
    let mut runs: Vec<Vec<usize>> = vec![vec![sel[0]]];
    for w in sel.windows(2) {
        if w[1] - w[0] <= merge_gap {
            runs.last_mut().expect("nonempty").push(w[1]);
        } else {
            runs.push(vec![w[1]]);
        }
    }
    if runs.len() > 1 {
        let first = runs[0][0];
        let last = *runs.last().and_then(|r| r.last()).expect("nonempty");
        if first + n - last <= merge_gap {
            let head = runs.remove(0);
            runs.last_mut().expect("nonempty").extend(head);
        }
    }
    let mut out: Vec<CurvaturePoint> = runs
        .iter()
        .map(|run| {
            let best = *run
                .iter()
                .min_by(|&&a, &&b| kappa[a].total_cmp(&kappa[b]).then(a.cmp(&b)))
                .expect("nonempty run");
            CurvaturePoint {
                contour_index: best,
                x: contour[best].0 as f64,
                y: contour[best].1 as f64,
                kappa: kappa[best],
                run: (run[0], *run.last().expect("nonempty run")),
            }
        })
        .collect();
    out.sort_by_key(|p| p.contour_index);
    out
}

/// Keeps the `max` most concave points, returned in contour order.
pub fn cap_points(mut points: Vec<CurvaturePoint>, max: usize) -> Vec<CurvaturePoint> {
    if points.len() > max {
        points.sort_by(|a, b| a.kappa.total_cmp(&b.kappa).then(a.contour_index.cmp(&b.contour_index)));
        points.truncate(max);
        points.sort_by_key(|p| p.contour_index);
    }
    points
}

/// Intersection over union of `region` and the pixels whose centers lie in `e`.
pub fn fit_quality(region: &PixelRegion, e: &EllipseParams) -> f64 {
    if region.is_empty() {
        return 0.0;
    }
    let ellipse = e.rasterize();
    let inter = ellipse.iter().filter(|&&(x, y)| region.contains(x, y)).count();
    let union = region.area() + ellipse.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Pixels crossed by the segment `a`–`b`, 4-connected.
pub fn chord_pixels(a: (i64, i64), b: (i64, i64)) -> Vec<(i64, i64)> {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let (nx, ny) = (dx.abs(), dy.abs());
    let (sx, sy) = (dx.signum(), dy.signum());
    let mut p = a;
    let mut out = vec![p];
    let (mut ix, mut iy) = (0i64, 0i64);
    while ix < nx || iy < ny {
        // compare (ix + 0.5) / nx with (iy + 0.5) / ny without division
        let lhs = (2 * ix + 1) * ny;
        let rhs = (2 * iy + 1) * nx;
        if iy >= ny || (ix < nx && lhs <= rhs) {
            p.0 += sx;
            ix += 1;
        } else {
            p.1 += sy;
            iy += 1;
        }
        out.push(p);
    }
    out
}

fn side_of(a: (i64, i64), b: (i64, i64), p: (f64, f64)) -> f64 {
    (b.0 - a.0) as f64 * (p.1 - a.1 as f64) - (b.1 - a.1) as f64 * (p.0 - a.0 as f64)
}

/// Cuts `region` along the chord `p_i`–`p_j`.
///
/// The chord pixels are removed and the rest labelled 8-connected; the two
/// largest pieces become the sides, provided they lie on opposite sides of
/// the chord. Small leftover fragments join the side of the chord they lie
/// on, and chord pixels join side A (the left of `p_i → p_j` in raw
/// coordinates).
pub fn split_region(
    region: &PixelRegion,
    p_i: (i64, i64),
    p_j: (i64, i64),
) -> Result<(PixelRegion, PixelRegion), SegregationError> {
    if p_i == p_j {
        return Err(SegregationError::CoincidentEndpoints);
    }
    let chord: Vec<(i64, i64)> = chord_pixels(p_i, p_j)
        .into_iter()
        .filter(|&(x, y)| region.contains(x, y))
        .collect();
    let chord_set: std::collections::HashSet<(i64, i64)> = chord.iter().copied().collect();
    let rest: Vec<(i64, i64)> = region.pixels().filter(|p| !chord_set.contains(p)).collect();
    let rest = PixelRegion::from_pixels(&rest);
    let mut parts = region_components(&rest, Connectivity::Eight);
    if parts.len() < 2 {
        return Err(SegregationError::EmptySide);
    }
    parts.sort_by(|a, b| b.area().cmp(&a.area()).then(a.bbox().cmp(&b.bbox())));
    let s0 = side_of(p_i, p_j, parts[0].centroid());
    let s1 = side_of(p_i, p_j, parts[1].centroid());
    if s0 * s1 >= 0.0 {
        return Err(SegregationError::DisconnectedSide);
    }
    let fragment_limit = (region.area() / 50).max(3);
    let mut left: Vec<(i64, i64)> = chord.clone();
    let mut right: Vec<(i64, i64)> = Vec::new();
    for (k, part) in parts.iter().enumerate() {
        if k >= 2 && part.area() > fragment_limit {
            return Err(SegregationError::DisconnectedSide);
        }
        if side_of(p_i, p_j, part.centroid()) > 0.0 {
            left.extend(part.pixels());
        } else {
            right.extend(part.pixels());
        }
    }
    Ok((PixelRegion::from_pixels(&left), PixelRegion::from_pixels(&right)))
}

/// Distance from `p` to the segment `a`–`b`.
fn segment_distance(p: (f64, f64), a: (i64, i64), b: (i64, i64)) -> f64 {
    let (ax, ay, bx, by) = (a.0 as f64, a.1 as f64, b.0 as f64, b.1 as f64);
    let (dx, dy) = (bx - ax, by - ay);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p.0 - ax) * dx + (p.1 - ay) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (p.0 - ax - t * dx).hypot(p.1 - ay - t * dy)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitCandidate {
    pub i: usize,
    pub j: usize,
    pub p_i: (i64, i64),
    pub p_j: (i64, i64),
    pub f: f64,
    pub f_a: f64,
    pub f_b: f64,
    pub ellipse_a: EllipseParams,
    pub ellipse_b: EllipseParams,
}

#[derive(Debug, Clone)]
#[allow(clippy::large_enum_variant)]
pub enum SegregationOutcome {
    Split {
        a: PixelRegion,
        b: PixelRegion,
        chosen: SplitCandidate,
    },
    NonSeparable {
        best_f: f64,
    },
}

#[derive(Debug, Clone)]
pub struct SegregationResult {
    pub outcome: SegregationOutcome,
    pub points: Vec<CurvaturePoint>,
    pub candidates: Vec<SplitCandidate>,
}

impl SegregationResult {
    pub fn is_split(&self) -> bool {
        matches!(self.outcome, SegregationOutcome::Split { .. })
    }

    pub fn best_f(&self) -> f64 {
        match &self.outcome {
            SegregationOutcome::Split { chosen, .. } => chosen.f,
            SegregationOutcome::NonSeparable { best_f } => *best_f,
        }
    }
}

fn side_fit(side: &PixelRegion, p_i: (i64, i64), p_j: (i64, i64), exclusion: f64) -> Option<(EllipseParams, f64)> {
    let contour = trace_boundary(side);
    let pts: Vec<(f64, f64)> = contour
        .points
        .iter()
        .map(|&(x, y)| (x as f64, y as f64))
        .filter(|&p| segment_distance(p, p_i, p_j) > exclusion)
        .collect();
    let e = fit_ellipse(&pts).ok()?;
    Some((e, fit_quality(side, &e)))
}

/// Scores the chord between two curvature points. `None` when the cut is
/// invalid or either side is too small to score.
pub fn score_candidate(
    region: &PixelRegion,
    points: &[CurvaturePoint],
    i: usize,
    j: usize,
    params: &SegregationParams,
) -> Option<(SplitCandidate, PixelRegion, PixelRegion)> {
    let p_i = (points[i].x as i64, points[i].y as i64);
    let p_j = (points[j].x as i64, points[j].y as i64);
    let (a, b) = split_region(region, p_i, p_j).ok()?;
    let min_side = (params.min_region_area as f64).max(params.min_side_fraction * region.area() as f64);
    if (a.area() as f64) < min_side || (b.area() as f64) < min_side {
        return None;
    }
    let (ea, fa) = side_fit(&a, p_i, p_j, params.chord_exclusion)?;
    let (eb, fb) = side_fit(&b, p_i, p_j, params.chord_exclusion)?;
    let f = match params.aggregation {
        FitAggregation::Min => fa.min(fb),
        FitAggregation::Mean => (fa + fb) / 2.0,
    };
    Some((
        SplitCandidate {
            i,
            j,
            p_i,
            p_j,
            f,
            f_a: fa,
            f_b: fb,
            ellipse_a: ea,
            ellipse_b: eb,
        },
        a,
        b,
    ))
}

/// Searches all pairs of concave points for the best-fitting split.
pub fn segregate(region: &PixelRegion, contour: &Contour, params: &SegregationParams) -> SegregationResult {
    let kappa = compute_curvature(&contour.points, params.smooth_window, params.derivative_step);
    let points = cap_points(
        detect_high_curvature_points(&kappa, &contour.points, params.kappa_threshold, params.merge_gap),
        params.max_points,
    );
    if points.len() < 2 {
        return SegregationResult {
            outcome: SegregationOutcome::NonSeparable { best_f: 0.0 },
            points,
            candidates: Vec::new(),
        };
    }
    let pairs: Vec<(usize, usize)> = (0..points.len())
        .flat_map(|i| (i + 1..points.len()).map(move |j| (i, j)))
        .collect();
    let scored: Vec<Option<(SplitCandidate, PixelRegion, PixelRegion)>> = pairs
        .par_iter()
        .map(|&(i, j)| score_candidate(region, &points, i, j, params))
        .collect();
    let mut best: Option<&(SplitCandidate, PixelRegion, PixelRegion)> = None;
    for s in scored.iter().flatten() {
        // strict comparison keeps the lexicographically first pair on ties
        if best.is_none_or(|b| s.0.f > b.0.f) {
            best = Some(s);
        }
    }
    let candidates: Vec<SplitCandidate> = scored.iter().flatten().map(|s| s.0).collect();
    let outcome = match best {
        Some((c, a, b)) if c.f > params.accept_threshold => SegregationOutcome::Split {
            a: a.clone(),
            b: b.clone(),
            chosen: *c,
        },
        Some((c, _, _)) => SegregationOutcome::NonSeparable { best_f: c.f },
        None => SegregationOutcome::NonSeparable { best_f: 0.0 },
    };
    SegregationResult {
        outcome,
        points,
        candidates,
    }
}
