//! Synthetic slides with known steatosis geometry, and accuracy evaluation of
//! a report against that ground truth.

use std::cmp::Ordering;
use std::f64::consts::{PI, TAU};
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::ellipse::{normalize_half_turn, EllipseParams};
use crate::error::{PhantomError, ReportError};
use crate::raster::{BinaryMask, RgbRaster};
use crate::region::PixelRegion;
use crate::report::{InstanceClass, QuantReport};
use crate::slide::{write_pyramid, PyramidImage, MIN_TOP_LEVEL};

pub const GROUND_TRUTH_NAME: &str = "phantom.json";
pub const DEFAULT_IOU_THRESHOLD: f64 = 0.75;
pub const MATCH_CRITERION: &str =
    "greedy maximum-IoU matching at the stated threshold; an automated proxy for visual validation";

const HARMONIC_ORDERS: [u32; 3] = [2, 3, 4];
const MAX_HARMONIC_AMPLITUDE: f64 = 0.02;
const CONTAINMENT_SAMPLES: usize = 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TissueShape {
    Ellipse,
    Blob,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomSpec {
    pub slide_id: Option<String>,
    pub canvas_size: u32,
    pub tissue_shape: TissueShape,
    /// Tissue major-axis angle in radians.
    pub theta_true: f64,
    /// Tissue semi-axes as fractions of the canvas size.
    pub tissue_axes: [f64; 2],
    pub n_isolated: usize,
    pub n_overlap_pairs: usize,
    /// Semi-axis range in px.
    pub radius_range: [f64; 2],
    /// Overlap depth `f`: the two ellipses' centers sit `(1 - f)·(ρ₁ + ρ₂)`
    /// apart, with `ρ` each ellipse's radial extent along the center line.
    pub overlap_fraction_range: [f64; 2],
    /// Largest a/b of isolated instances.
    pub isolated_max_aspect: f64,
    /// Largest a/b of pair members.
    pub pair_max_eccentricity: f64,
    /// Gap between bounding circles of distinct objects, px.
    pub min_separation: f64,
    /// Distance kept between instances and the tissue edge, px.
    pub edge_margin: f64,
    pub background_rgb: [u8; 3],
    pub tissue_rgb: [u8; 3],
    pub steatosis_rgb: [u8; 3],
    /// Per-channel Gaussian noise in 8-bit units.
    pub noise_sigma: f64,
    pub microns_per_pixel: Option<f64>,
    pub top_level: u32,
    pub max_tries: usize,
    pub rng_seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            slide_id: None,
            canvas_size: 2048,
            tissue_shape: TissueShape::Blob,
            theta_true: 0.35,
            tissue_axes: [0.45, 0.33],
            n_isolated: 50,
            n_overlap_pairs: 10,
            radius_range: [8.0, 30.0],
            overlap_fraction_range: [0.1, 0.4],
            isolated_max_aspect: 1.3,
            pair_max_eccentricity: 1.5,
            min_separation: 8.0,
            edge_margin: 32.0,
            background_rgb: [245, 245, 245],
            tissue_rgb: [200, 120, 160],
            steatosis_rgb: [240, 240, 245],
            noise_sigma: 4.0,
            microns_per_pixel: None,
            top_level: MIN_TOP_LEVEL,
            max_tries: 200,
            rng_seed: 42,
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<(), PhantomError> {
        let bad = |m: String| Err(PhantomError::InvalidSpec(m));
        let [r0, r1] = self.radius_range;
        let [f0, f1] = self.overlap_fraction_range;
        let [ta, tb] = self.tissue_axes;
        if self.canvas_size < 64 {
            return bad(format!("canvas_size {} is below 64", self.canvas_size));
        }
        if !(r0 >= 5.0 && r1 >= r0 && r1.is_finite()) {
            return bad(format!("radius_range [{r0}, {r1}] must satisfy 5 <= min <= max"));
        }
        if !(f0 > 0.0 && f1 >= f0 && f1 <= 0.6) {
            return bad(format!("overlap_fraction_range [{f0}, {f1}] must lie in (0, 0.6]"));
        }
        if !(ta > 0.0 && tb > 0.0 && ta <= 0.45 && tb <= 0.45) {
            return bad(format!("tissue_axes [{ta}, {tb}] must lie in (0, 0.45]"));
        }
        if !(self.isolated_max_aspect >= 1.0 && self.pair_max_eccentricity >= 1.0) {
            return bad("aspect limits must be at least 1".into());
        }
        if self.min_separation.is_nan() || self.min_separation < 3.0 {
            return bad(format!("min_separation {} is below 3 px", self.min_separation));
        }
        if !(self.edge_margin >= 0.0 && self.noise_sigma >= 0.0) {
            return bad("edge_margin and noise_sigma must be nonnegative".into());
        }
        if !self.theta_true.is_finite() {
            return bad("theta_true must be finite".into());
        }
        if self.steatosis_rgb == self.tissue_rgb || self.tissue_rgb == self.background_rgb {
            return bad("palette colors must differ".into());
        }
        if self.max_tries == 0 {
            return bad("max_tries must be positive".into());
        }
        Ok(())
    }

    pub fn resolved_slide_id(&self) -> String {
        self.slide_id
            .clone()
            .unwrap_or_else(|| format!("phantom-{}", self.rng_seed))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Harmonic {
    pub order: u32,
    pub amplitude: f64,
    pub phase: f64,
}

/// Tissue outline: a rotated ellipse whose polar radius is optionally
/// modulated by low-order harmonics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TissueGeometry {
    pub shape: TissueShape,
    pub center: [f64; 2],
    pub semi_axes: [f64; 2],
    pub angle: f64,
    pub harmonics: Vec<Harmonic>,
}

impl TissueGeometry {
    fn polar(&self, x: f64, y: f64) -> (f64, f64) {
        let (dx, dy) = (x - self.center[0], y - self.center[1]);
        let (s, c) = self.angle.sin_cos();
        let (u, v) = (c * dx + s * dy, -s * dx + c * dy);
        (u.hypot(v), v.atan2(u))
    }

    /// Boundary radius in direction `omega` of the tissue frame.
    pub fn radius_at(&self, omega: f64) -> f64 {
        let [a, b] = self.semi_axes;
        let base = 1.0 / ((omega.cos() / a).powi(2) + (omega.sin() / b).powi(2)).sqrt();
        let m: f64 = self
            .harmonics
            .iter()
            .map(|h| h.amplitude * (h.order as f64 * omega + h.phase).cos())
            .sum();
        base * (1.0 + m)
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        self.depth(x, y) >= 0.0
    }

    /// Radial distance inside the outline; negative outside.
    fn depth(&self, x: f64, y: f64) -> f64 {
        let (r, omega) = self.polar(x, y);
        self.radius_at(omega) - r
    }

    pub fn mask(&self, width: u32, height: u32) -> BinaryMask {
        BinaryMask::from_fn(width, height, |x, y| self.contains(x as f64, y as f64))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtInstance {
    pub id: usize,
    pub cx: f64,
    pub cy: f64,
    pub a: f64,
    pub b: f64,
    pub phi: f64,
    pub pair_id: Option<usize>,
}

impl GtInstance {
    pub fn ellipse(&self) -> EllipseParams {
        EllipseParams::new(self.cx, self.cy, self.a, self.b, self.phi)
    }

    pub fn is_pair_member(&self) -> bool {
        self.pair_id.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtPair {
    pub pair_id: usize,
    pub members: [usize; 2],
    pub overlap_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub slide_id: String,
    pub canvas_size: u32,
    pub theta_true: f64,
    pub tissue: TissueGeometry,
    pub instances: Vec<GtInstance>,
    pub pairs: Vec<GtPair>,
    pub spec: PhantomSpec,
}

impl GroundTruth {
    pub fn tissue_mask(&self) -> BinaryMask {
        self.tissue.mask(self.canvas_size, self.canvas_size)
    }

    pub fn steatosis_mask(&self) -> BinaryMask {
        let n = self.canvas_size;
        let mut m = BinaryMask::new(n, n);
        for inst in &self.instances {
            for (x, y) in inst.ellipse().rasterize() {
                if x >= 0 && y >= 0 && (x as u32) < n && (y as u32) < n {
                    m.set(x as u32, y as u32, true);
                }
            }
        }
        m
    }

    pub fn isolated(&self) -> impl Iterator<Item = &GtInstance> {
        self.instances.iter().filter(|i| !i.is_pair_member())
    }
}

/// Radial extent of `e` from its center along direction `psi`.
fn radial_extent(e: &EllipseParams, psi: f64) -> f64 {
    let t = psi - e.phi;
    1.0 / ((t.cos() / e.a).powi(2) + (t.sin() / e.b).powi(2)).sqrt()
}

#[derive(Debug, Clone, Copy)]
struct Disc {
    x: f64,
    y: f64,
    r: f64,
}

struct Placer<'a> {
    tissue: &'a TissueGeometry,
    canvas: f64,
    margin: f64,
    separation: f64,
    placed: Vec<Disc>,
}

impl Placer<'_> {
    fn fits(&self, d: &Disc) -> bool {
        if d.x - d.r < self.margin
            || d.y - d.r < self.margin
            || d.x + d.r > self.canvas - 1.0 - self.margin
            || d.y + d.r > self.canvas - 1.0 - self.margin
        {
            return false;
        }
        let inside = (0..CONTAINMENT_SAMPLES).all(|k| {
            let t = TAU * k as f64 / CONTAINMENT_SAMPLES as f64;
            self.tissue.depth(d.x + d.r * t.cos(), d.y + d.r * t.sin()) >= self.margin
        });
        inside
            && self
                .placed
                .iter()
                .all(|o| (o.x - d.x).hypot(o.y - d.y) >= o.r + d.r + self.separation)
    }

    fn sample_center(&self, rng: &mut ChaCha8Rng) -> (f64, f64) {
        let reach = self.tissue.semi_axes[0].max(self.tissue.semi_axes[1]) * 1.1;
        let [cx, cy] = self.tissue.center;
        (
            rng.random_range(cx - reach..=cx + reach),
            rng.random_range(cy - reach..=cy + reach),
        )
    }
}

fn draw_axes(rng: &mut ChaCha8Rng, range: [f64; 2], max_aspect: f64) -> (f64, f64, f64) {
    let a = rng.random_range(range[0]..=range[1]);
    let aspect = rng.random_range(1.0..=max_aspect);
    let b = (a / aspect).max(range[0]).min(a);
    let phi = rng.random_range(-PI / 2.0..PI / 2.0);
    (a, b, phi)
}

fn build_tissue(spec: &PhantomSpec, rng: &mut ChaCha8Rng) -> TissueGeometry {
    let n = spec.canvas_size as f64;
    let harmonics = match spec.tissue_shape {
        TissueShape::Ellipse => Vec::new(),
        TissueShape::Blob => HARMONIC_ORDERS
            .iter()
            .map(|&order| Harmonic {
                order,
                amplitude: rng.random_range(0.0..=MAX_HARMONIC_AMPLITUDE),
                phase: rng.random_range(0.0..TAU),
            })
            .collect(),
    };
    TissueGeometry {
        shape: spec.tissue_shape,
        center: [(n - 1.0) / 2.0, (n - 1.0) / 2.0],
        semi_axes: [spec.tissue_axes[0] * n, spec.tissue_axes[1] * n],
        angle: normalize_half_turn(spec.theta_true),
        harmonics,
    }
}

/// Places pairs first, then isolated instances, each by bounded rejection
/// sampling against bounding circles.
fn place_instances(
    spec: &PhantomSpec,
    tissue: &TissueGeometry,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<GtInstance>, Vec<GtPair>), PhantomError> {
    let mut placer = Placer {
        tissue,
        canvas: spec.canvas_size as f64,
        margin: spec.edge_margin,
        separation: spec.min_separation,
        placed: Vec::new(),
    };
    let mut instances = Vec::new();
    let mut pairs = Vec::new();
    for p in 0..spec.n_overlap_pairs {
        let (a1, b1, phi1) = draw_axes(rng, spec.radius_range, spec.pair_max_eccentricity);
        let (a2, b2, phi2) = draw_axes(rng, spec.radius_range, spec.pair_max_eccentricity);
        let f = rng.random_range(spec.overlap_fraction_range[0]..=spec.overlap_fraction_range[1]);
        let psi = rng.random_range(0.0..TAU);
        let (ux, uy) = (psi.cos(), psi.sin());
        let e1 = EllipseParams::new(0.0, 0.0, a1, b1, phi1);
        let e2 = EllipseParams::new(0.0, 0.0, a2, b2, phi2);
        let d = (1.0 - f) * (radial_extent(&e1, psi) + radial_extent(&e2, psi + PI));
        let mut ok = false;
        for _ in 0..spec.max_tries {
            let (cx, cy) = placer.sample_center(rng);
            let d1 = Disc { x: cx - 0.5 * d * ux, y: cy - 0.5 * d * uy, r: e1.a };
            let d2 = Disc { x: cx + 0.5 * d * ux, y: cy + 0.5 * d * uy, r: e2.a };
            if placer.fits(&d1) && placer.fits(&d2) {
                placer.placed.push(d1);
                placer.placed.push(d2);
                let id = instances.len();
                for (disc, e) in [(d1, e1), (d2, e2)] {
                    instances.push(GtInstance {
                        id: instances.len(),
                        cx: disc.x,
                        cy: disc.y,
                        a: e.a,
                        b: e.b,
                        phi: e.phi,
                        pair_id: Some(p),
                    });
                }
                pairs.push(GtPair {
                    pair_id: p,
                    members: [id, id + 1],
                    overlap_fraction: f,
                });
                ok = true;
                break;
            }
        }
        if !ok {
            return Err(PhantomError::PlacementFailure {
                kind: "overlap pair",
                index: p,
                tries: spec.max_tries,
            });
        }
    }
    for i in 0..spec.n_isolated {
        let (a, b, phi) = draw_axes(rng, spec.radius_range, spec.isolated_max_aspect);
        let mut ok = false;
        for _ in 0..spec.max_tries {
            let (cx, cy) = placer.sample_center(rng);
            let disc = Disc { x: cx, y: cy, r: a };
            if placer.fits(&disc) {
                placer.placed.push(disc);
                let e = EllipseParams::new(cx, cy, a, b, phi);
                instances.push(GtInstance {
                    id: instances.len(),
                    cx,
                    cy,
                    a: e.a,
                    b: e.b,
                    phi: e.phi,
                    pair_id: None,
                });
                ok = true;
                break;
            }
        }
        if !ok {
            return Err(PhantomError::PlacementFailure {
                kind: "isolated instance",
                index: i,
                tries: spec.max_tries,
            });
        }
    }
    Ok((instances, pairs))
}

fn render(spec: &PhantomSpec, gt: &GroundTruth, rng: &mut ChaCha8Rng) -> RgbRaster {
    let n = spec.canvas_size;
    let tissue = gt.tissue_mask();
    let steatosis = gt.steatosis_mask();
    let mut img = RgbRaster::new(n, n, spec.background_rgb);
    let noise = (spec.noise_sigma > 0.0).then(|| Normal::new(0.0, spec.noise_sigma).expect("finite sigma"));
    for y in 0..n {
        for x in 0..n {
            let base = if steatosis.get(x, y) {
                spec.steatosis_rgb
            } else if tissue.get(x, y) {
                spec.tissue_rgb
            } else {
                spec.background_rgb
            };
            let px = match &noise {
                Some(d) => base.map(|c| (c as f64 + d.sample(rng)).round().clamp(0.0, 255.0) as u8),
                None => base,
            };
            img.put(x, y, px);
        }
    }
    img
}

/// Renders a phantom slide. Deterministic in `spec.rng_seed`.
pub fn generate_phantom(spec: &PhantomSpec) -> Result<(PyramidImage, GroundTruth), PhantomError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    let tissue = build_tissue(spec, &mut rng);
    let (instances, pairs) = place_instances(spec, &tissue, &mut rng)?;
    let gt = GroundTruth {
        slide_id: spec.resolved_slide_id(),
        canvas_size: spec.canvas_size,
        theta_true: tissue.angle,
        tissue,
        instances,
        pairs,
        spec: spec.clone(),
    };
    let base = render(spec, &gt, &mut rng);
    let pyramid = PyramidImage::from_base(gt.slide_id.clone(), base, spec.top_level)
        .with_microns_per_pixel(spec.microns_per_pixel);
    Ok((pyramid, gt))
}

/// Writes the pyramid levels and the `phantom.json` ground truth into `dir`.
pub fn write_phantom(p: &PyramidImage, gt: &GroundTruth, dir: impl AsRef<Path>) -> Result<(), PhantomError> {
    let dir = dir.as_ref();
    let levels: Vec<u32> = (0..p.level_count()).collect();
    write_pyramid(p, dir, &levels)?;
    write_ground_truth(gt, dir.join(GROUND_TRUTH_NAME))
}

pub fn write_ground_truth(gt: &GroundTruth, path: impl AsRef<Path>) -> Result<(), PhantomError> {
    fs::write(path, serde_json::to_string_pretty(gt)? + "\n")?;
    Ok(())
}

/// Reads ground truth from a `phantom.json` file or a phantom directory.
pub fn read_ground_truth(path: impl AsRef<Path>) -> Result<GroundTruth, PhantomError> {
    let path = path.as_ref();
    let file = if path.is_dir() { path.join(GROUND_TRUTH_NAME) } else { path.to_path_buf() };
    Ok(serde_json::from_str(&fs::read_to_string(file)?)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceMatch {
    pub gt_id: usize,
    pub region_id: Option<usize>,
    pub class: Option<InstanceClass>,
    pub iou: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairOutcome {
    /// Both members matched by distinct split sub-regions.
    SplitCorrect,
    /// Split, but at least one sub-region failed to match.
    SplitInaccurate,
    /// Classified overlapped without an accepted split.
    Nonseparable,
    /// The merged region passed the cascade as a single instance.
    DetectedIsolated,
    Missed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairDiagnostic {
    pub pair_id: usize,
    pub overlap_fraction: f64,
    pub outcome: PairOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub slide_id: String,
    pub iou_threshold: f64,
    pub match_criterion: String,
    /// Isolated ground truth matched by an instance reported as isolated.
    pub isolated_accuracy: Option<f64>,
    pub overlap_split_accuracy: Option<f64>,
    pub isolated_total: usize,
    pub isolated_matched: usize,
    /// Isolated ground truth matched by a region the cascade called overlapped.
    pub isolated_matched_as_overlapped: usize,
    pub pairs_total: usize,
    pub pairs_correct: usize,
    pub matched: usize,
    pub missed: usize,
    pub spurious: usize,
    pub split_detections: usize,
    /// Accepted splits not matching both members of one pair.
    pub spurious_splits: usize,
    pub matches: Vec<InstanceMatch>,
    pub pair_diagnostics: Vec<PairDiagnostic>,
}

struct Detection {
    region_id: usize,
    tissue_index: usize,
    class: InstanceClass,
    source_region: usize,
    pixels: PixelRegion,
    bbox: (i64, i64, i64, i64),
}

fn bbox_overlap(a: (i64, i64, i64, i64), b: (i64, i64, i64, i64)) -> bool {
    a.0 <= b.2 && b.0 <= a.2 && a.1 <= b.3 && b.1 <= a.3
}

fn bbox_of(px: &[(i64, i64)]) -> (i64, i64, i64, i64) {
    px.iter().fold((i64::MAX, i64::MAX, i64::MIN, i64::MIN), |b, &(x, y)| {
        (b.0.min(x), b.1.min(y), b.2.max(x), b.3.max(y))
    })
}

/// Ground-truth ellipse rasterized in a tissue's rotated frame.
struct GtRaster {
    tissue_index: usize,
    pixels: Vec<(i64, i64)>,
    bbox: (i64, i64, i64, i64),
}

fn gt_rasters(report: &QuantReport, inst: &GtInstance) -> Option<GtRaster> {
    report.tissues.iter().find_map(|t| {
        let tr = &t.transform;
        let (x, y) = tr.global_to_rotated_xy(inst.cx, inst.cy);
        if x < 0.0 || y < 0.0 || x > tr.width as f64 - 1.0 || y > tr.height as f64 - 1.0 {
            return None;
        }
        let e = EllipseParams::new(x, y, inst.a, inst.b, inst.phi - tr.angle);
        let pixels = e.rasterize();
        let bbox = bbox_of(&pixels);
        Some(GtRaster { tissue_index: t.tissue_index, pixels, bbox })
    })
}

fn intersection(gt: &GtRaster, d: &Detection) -> usize {
    gt.pixels.iter().filter(|&&(x, y)| d.pixels.contains(x, y)).count()
}

/// Matches reported instances to ground truth and scores both classes.
pub fn evaluate(report: &QuantReport, gt: &GroundTruth, iou_threshold: f64) -> Result<EvalMetrics, ReportError> {
    if report.slide_id != gt.slide_id {
        return Err(ReportError::SlideIdMismatch {
            report: report.slide_id.clone(),
            truth: gt.slide_id.clone(),
        });
    }
    if !(iou_threshold > 0.0 && iou_threshold <= 1.0) {
        return Err(ReportError::Schema(format!("IoU threshold {iou_threshold} outside (0, 1]")));
    }
    let mut dets: Vec<Detection> = report
        .regions
        .iter()
        .map(|r| {
            let pixels = r.pixels();
            let (x0, y0, x1, y1) = pixels.bbox();
            Detection {
                region_id: r.region_id,
                tissue_index: r.tissue_index,
                class: r.class,
                source_region: r.source_region,
                pixels,
                bbox: (x0, y0, x1, y1),
            }
        })
        .collect();
    // canonical order so that matching does not depend on region ids
    dets.sort_by(|a, b| {
        (a.tissue_index, a.bbox, a.pixels.runs()).cmp(&(b.tissue_index, b.bbox, b.pixels.runs()))
    });

    let rasters: Vec<Option<GtRaster>> = gt.instances.iter().map(|i| gt_rasters(report, i)).collect();
    let mut cands: Vec<(f64, usize, usize)> = Vec::new();
    let mut best_overlap: Vec<Option<(usize, usize)>> = vec![None; gt.instances.len()];
    for (g, r) in rasters.iter().enumerate() {
        let Some(r) = r else { continue };
        for (k, d) in dets.iter().enumerate() {
            if d.tissue_index != r.tissue_index || !bbox_overlap(r.bbox, d.bbox) {
                continue;
            }
            let inter = intersection(r, d);
            if inter == 0 {
                continue;
            }
            if best_overlap[g].is_none_or(|(_, i)| inter > i) {
                best_overlap[g] = Some((k, inter));
            }
            let iou = inter as f64 / (r.pixels.len() + d.pixels.area() - inter) as f64;
            if iou >= iou_threshold {
                cands.push((iou, g, k));
            }
        }
    }
    cands.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal).then((a.1, a.2).cmp(&(b.1, b.2))));
    let mut gt_match: Vec<Option<(usize, f64)>> = vec![None; gt.instances.len()];
    let mut det_used = vec![false; dets.len()];
    for (iou, g, k) in cands {
        if gt_match[g].is_none() && !det_used[k] {
            gt_match[g] = Some((k, iou));
            det_used[k] = true;
        }
    }

    let matches: Vec<InstanceMatch> = gt
        .instances
        .iter()
        .zip(&gt_match)
        .map(|(inst, m)| InstanceMatch {
            gt_id: inst.id,
            region_id: m.map(|(k, _)| dets[k].region_id),
            class: m.map(|(k, _)| dets[k].class),
            iou: m.map(|(_, iou)| iou).unwrap_or(0.0),
        })
        .collect();

    let mut isolated_total = 0;
    let mut isolated_matched = 0;
    let mut isolated_as_overlapped = 0;
    for (inst, m) in gt.instances.iter().zip(&gt_match) {
        if inst.is_pair_member() {
            continue;
        }
        isolated_total += 1;
        match m.map(|(k, _)| dets[k].class) {
            Some(InstanceClass::Isolated) => isolated_matched += 1,
            Some(_) => isolated_as_overlapped += 1,
            None => {}
        }
    }

    let mut pairs_correct = 0;
    let mut diagnostics = Vec::new();
    let mut correct_sources = Vec::new();
    for p in &gt.pairs {
        let [m1, m2] = p.members.map(|i| gt_match[i].map(|(k, _)| k));
        let correct = match (m1, m2) {
            (Some(k1), Some(k2)) => {
                k1 != k2 && dets[k1].class == InstanceClass::Split && dets[k2].class == InstanceClass::Split
            }
            _ => false,
        };
        let outcome = if correct {
            pairs_correct += 1;
            let (k1, k2) = (m1.unwrap(), m2.unwrap());
            correct_sources.push((dets[k1].tissue_index, dets[k1].source_region));
            correct_sources.push((dets[k2].tissue_index, dets[k2].source_region));
            PairOutcome::SplitCorrect
        } else {
            let covering = p
                .members
                .iter()
                .filter_map(|&i| best_overlap[i])
                .max_by_key(|&(_, inter)| inter)
                .map(|(k, _)| dets[k].class);
            match covering {
                Some(InstanceClass::Split) => PairOutcome::SplitInaccurate,
                Some(InstanceClass::Nonseparable) => PairOutcome::Nonseparable,
                Some(InstanceClass::Isolated) => PairOutcome::DetectedIsolated,
                None => PairOutcome::Missed,
            }
        };
        diagnostics.push(PairDiagnostic {
            pair_id: p.pair_id,
            overlap_fraction: p.overlap_fraction,
            outcome,
        });
    }

    let mut split_sources: Vec<(usize, usize)> = dets
        .iter()
        .filter(|d| d.class == InstanceClass::Split)
        .map(|d| (d.tissue_index, d.source_region))
        .collect();
    split_sources.sort_unstable();
    split_sources.dedup();
    correct_sources.sort_unstable();
    correct_sources.dedup();
    let split_detections = split_sources.len();
    let spurious_splits = split_sources.iter().filter(|s| correct_sources.binary_search(s).is_err()).count();

    let matched = gt_match.iter().filter(|m| m.is_some()).count();
    let ratio = |n: usize, d: usize| (d > 0).then(|| n as f64 / d as f64);
    Ok(EvalMetrics {
        slide_id: gt.slide_id.clone(),
        iou_threshold,
        match_criterion: MATCH_CRITERION.to_string(),
        isolated_accuracy: ratio(isolated_matched, isolated_total),
        overlap_split_accuracy: ratio(pairs_correct, gt.pairs.len()),
        isolated_total,
        isolated_matched,
        isolated_matched_as_overlapped: isolated_as_overlapped,
        pairs_total: gt.pairs.len(),
        pairs_correct,
        matched,
        missed: gt.instances.len() - matched,
        spurious: det_used.iter().filter(|u| !**u).count(),
        split_detections,
        spurious_splits,
        matches,
        pair_diagnostics: diagnostics,
    })
}

impl EvalMetrics {
    /// Accuracy table with IS and OS columns.
    pub fn table(&self) -> String {
        let pct = |v: Option<f64>| v.map(|a| format!("{:.1}%", 100.0 * a)).unwrap_or_else(|| "n/a".into());
        crate::report::format_table(&[
            ("slide", self.slide_id.clone()),
            (
                "IS accuracy",
                format!("{} ({}/{})", pct(self.isolated_accuracy), self.isolated_matched, self.isolated_total),
            ),
            (
                "OS accuracy",
                format!("{} ({}/{})", pct(self.overlap_split_accuracy), self.pairs_correct, self.pairs_total),
            ),
            ("matched", self.matched.to_string()),
            ("missed", self.missed.to_string()),
            ("spurious", self.spurious.to_string()),
            ("spurious splits", self.spurious_splits.to_string()),
            ("IoU threshold", format!("{:.2}", self.iou_threshold)),
            ("criterion", self.match_criterion.clone()),
        ])
    }
}
