//! End-to-end analysis of one slide: tissue extraction, steatosis detection,
//! overlap segregation and reporting.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detection::{detect_regions, Classification, DetectionParams, Region};
use crate::error::{Error, Result};
use crate::raster::{BinaryMask, RgbRaster};
use crate::region::{connected_components, Connectivity};
use crate::report::{aggregate, render_overlay, write_report, OverlayStyle, QuantReport, ReportFormat, TissueAnalysis};
use crate::segregation::{chord_pixels, segregate, SegregationOutcome, SegregationParams, SegregationResult};
use crate::slide::{load_pyramid, read_region, PyramidImage};
use crate::tissue::{
    detect_tissues, extract_component, otsu_bin_of, ExtractedTissue, TissueTransform, DEFAULT_FILL,
    DEFAULT_MIN_TISSUE_AREA,
};

pub const REPORT_JSON: &str = "report.json";
pub const REPORT_CSV: &str = "report.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub analysis_level: u32,
    /// Smallest tissue component, in analysis-level pixels.
    pub min_tissue_area: usize,
    pub fill: [u8; 3],
    pub detection: DetectionParams,
    pub segregation: SegregationParams,
    pub overlay: OverlayStyle,
    pub write_overlays: bool,
    /// Worker threads for tissue components; all CPUs when absent.
    pub workers: Option<usize>,
    pub out_dir: Option<PathBuf>,
    pub debug_dir: Option<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            analysis_level: 4,
            min_tissue_area: DEFAULT_MIN_TISSUE_AREA,
            fill: DEFAULT_FILL,
            detection: DetectionParams::default(),
            segregation: SegregationParams::default(),
            overlay: OverlayStyle::default(),
            write_overlays: true,
            workers: None,
            out_dir: None,
            debug_dir: None,
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let c: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    pub fn validate(&self) -> Result<()> {
        self.detection.validate()?;
        self.segregation.validate().map_err(Error::Config)?;
        if self.analysis_level > 8 {
            return Err(Error::Config(format!("analysis_level {} exceeds 8", self.analysis_level)));
        }
        if self.workers == Some(0) {
            return Err(Error::Config("workers must be positive".into()));
        }
        let o = &self.overlay;
        if o.isolated_color == o.overlapped_color
            || o.isolated_color == o.split_line_color
            || o.overlapped_color == o.split_line_color
        {
            return Err(Error::Config("overlay colors must be distinct".into()));
        }
        if o.line_width == 0 {
            return Err(Error::Config("overlay line_width must be positive".into()));
        }
        Ok(())
    }

    /// Parameters recorded in the report. Paths and worker count do not
    /// affect the result and are left out.
    pub fn snapshot(&self) -> serde_json::Value {
        let mut c = self.clone();
        c.workers = None;
        c.out_dir = None;
        c.debug_dir = None;
        serde_json::to_value(c).expect("config serializes")
    }
}

/// Analysis of one tissue component, kept for overlays and debugging.
#[derive(Debug, Clone)]
pub struct TissueOutput {
    pub extracted: ExtractedTissue,
    pub support: BinaryMask,
    pub analysis: TissueAnalysis,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub report: QuantReport,
    pub tissues: Vec<TissueOutput>,
    pub tissue_mask: Option<BinaryMask>,
}

impl PipelineOutput {
    pub fn overlay(&self, k: usize, style: &OverlayStyle) -> RgbRaster {
        let t = &self.tissues[k];
        render_overlay(&t.extracted.image, &t.analysis.regions, &t.analysis.segregations, style)
    }
}

/// Footprint of the filled analysis-level component in the rotated frame.
pub fn coarse_support(t: &ExtractedTissue) -> BinaryMask {
    let filled = t.component.region.filled();
    let level = t.component.level;
    let tr = &t.transform;
    BinaryMask::from_fn(tr.width, tr.height, |x, y| {
        let (gx, gy) = tr.rotated_to_global_xy(x as f64, y as f64);
        let (gx, gy) = (gx.round(), gy.round());
        gx >= 0.0 && gy >= 0.0 && filled.contains(gx as i64 >> level, gy as i64 >> level)
    })
}

/// Tissue support at full resolution: the largest component of rotated-image
/// pixels below the slide Otsu threshold inside the coarse footprint, holes
/// filled. Falls back to the coarse footprint when nothing is dark.
pub fn tissue_support(t: &ExtractedTissue) -> BinaryMask {
    let coarse = coarse_support(t);
    let gray = t.image.to_gray();
    let dark = BinaryMask::from_fn(gray.width(), gray.height(), |x, y| {
        coarse.get(x, y) && otsu_bin_of(gray.get(x, y)) < otsu_bin_of(t.otsu_threshold)
    });
    match connected_components(&dark, Connectivity::Eight).into_iter().max_by_key(|r| r.area()) {
        Some(r) => {
            let mut m = BinaryMask::new(gray.width(), gray.height());
            r.filled().paint(&mut m, true);
            m
        }
        None => coarse,
    }
}

fn disabled_result() -> SegregationResult {
    SegregationResult {
        outcome: SegregationOutcome::NonSeparable { best_f: 0.0 },
        points: Vec::new(),
        candidates: Vec::new(),
    }
}

fn analyze_tissue(t: ExtractedTissue, cfg: &PipelineConfig) -> Result<TissueOutput> {
    let support = tissue_support(&t);
    let regions = detect_regions(&t.image, Some(&support), &cfg.detection)?;
    let segregations: Vec<(usize, SegregationResult)> = regions
        .par_iter()
        .filter(|r| r.classification == Classification::Overlapped)
        .map(|r| {
            let s = if cfg.segregation.enabled {
                segregate(&r.pixels, &r.contour, &cfg.segregation)
            } else {
                disabled_result()
            };
            (r.id, s)
        })
        .collect();
    let tissue_area_px = support.count() as u64;
    let analysis = TissueAnalysis {
        index: t.index,
        regions,
        segregations,
        tissue_area_px,
        transform: t.transform,
    };
    Ok(TissueOutput { extracted: t, support, analysis })
}

/// Runs every stage on an in-memory pyramid. Tissue components run on a
/// bounded pool and are merged in tissue-index order.
pub fn run_pipeline(slide: &PyramidImage, cfg: &PipelineConfig) -> Result<PipelineOutput> {
    cfg.validate()?;
    let (components, otsu) = detect_tissues(slide, cfg.analysis_level, cfg.min_tissue_area)?;
    let tissue_mask = (!components.is_empty()).then(|| {
        let info = slide.level_info(cfg.analysis_level).expect("analysis level exists");
        let mut m = BinaryMask::new(info.width, info.height);
        for c in &components {
            c.region.paint(&mut m, true);
        }
        m
    });
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cfg.workers {
        pool = pool.num_threads(n);
    }
    let pool = pool.build().map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    let tissues: Vec<TissueOutput> = pool.install(|| {
        components
            .into_par_iter()
            .enumerate()
            .map(|(k, comp)| {
                let t = extract_component(slide, k, comp, cfg.fill, otsu)?;
                analyze_tissue(t, cfg)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let analyses: Vec<TissueAnalysis> = tissues.iter().map(|t| t.analysis.clone()).collect();
    let report = aggregate(slide.slide_id(), slide.microns_per_pixel(), cfg.snapshot(), &analyses)?;
    Ok(PipelineOutput { report, tissues, tissue_mask })
}

fn save_png(img: impl FnOnce() -> image::DynamicImage, path: PathBuf) -> Result<()> {
    img().save(&path).map_err(|e| Error::Io(std::io::Error::other(format!("{}: {e}", path.display()))))
}

/// Loads the slide, runs the pipeline and writes `report.json`,
/// `report.csv`, overlays and, if configured, debug intermediates.
pub fn analyze(slide_path: impl AsRef<Path>, cfg: &PipelineConfig) -> Result<PipelineOutput> {
    let slide = load_pyramid(slide_path)?;
    let out = run_pipeline(&slide, cfg)?;
    if let Some(dir) = &cfg.out_dir {
        write_outputs(&out, cfg, dir)?;
    }
    if let Some(dir) = &cfg.debug_dir {
        write_debug(&slide, &out, cfg, dir)?;
    }
    Ok(out)
}

pub fn write_outputs(out: &PipelineOutput, cfg: &PipelineConfig, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_report(&out.report, ReportFormat::Json, dir.join(REPORT_JSON))?;
    write_report(&out.report, ReportFormat::Csv, dir.join(REPORT_CSV))?;
    if cfg.write_overlays {
        for (k, t) in out.tissues.iter().enumerate() {
            let img = out.overlay(k, &cfg.overlay);
            save_png(|| img.to_image().into(), dir.join(format!("overlay_tissue_{}.png", t.analysis.index)))?;
        }
    }
    Ok(())
}

fn draw_box(img: &mut RgbRaster, x0: u32, y0: u32, w: u32, h: u32, color: [u8; 3]) {
    let (x1, y1) = ((x0 + w).min(img.width()) - 1, (y0 + h).min(img.height()) - 1);
    for x in x0..=x1 {
        img.put(x, y0, color);
        img.put(x, y1, color);
    }
    for y in y0..=y1 {
        img.put(x0, y, color);
        img.put(x1, y, color);
    }
}

const DEBUG_SCALE: u32 = 4;
const DEBUG_PAD: i64 = 4;

/// Enlarged view of one overlapped region: contour, curvature points,
/// every scored chord and the accepted split.
pub fn render_split_debug(img: &RgbRaster, region: &Region, seg: &SegregationResult) -> RgbRaster {
    let (x0, y0, x1, y1) = region.pixels.bbox();
    let ox = (x0 - DEBUG_PAD).max(0);
    let oy = (y0 - DEBUG_PAD).max(0);
    let w = ((x1 + DEBUG_PAD).min(img.width() as i64 - 1) - ox + 1) as u32;
    let h = ((y1 + DEBUG_PAD).min(img.height() as i64 - 1) - oy + 1) as u32;
    let crop = img.crop(ox as u32, oy as u32, w, h);
    let mut out = RgbRaster::new(w * DEBUG_SCALE, h * DEBUG_SCALE, [0, 0, 0]);
    for y in 0..out.height() {
        for x in 0..out.width() {
            out.put(x, y, crop.get(x / DEBUG_SCALE, y / DEBUG_SCALE));
        }
    }
    let mut mark = |x: i64, y: i64, color: [u8; 3], size: u32| {
        let (px, py) = (x - ox, y - oy);
        if px < 0 || py < 0 || px >= w as i64 || py >= h as i64 {
            return;
        }
        let c = DEBUG_SCALE / 2;
        for dy in 0..size {
            for dx in 0..size {
                let xx = (px as u32 * DEBUG_SCALE + c + dx).saturating_sub(size / 2);
                let yy = (py as u32 * DEBUG_SCALE + c + dy).saturating_sub(size / 2);
                if xx < out.width() && yy < out.height() {
                    out.put(xx, yy, color);
                }
            }
        }
    };
    for c in &seg.candidates {
        for (x, y) in chord_pixels(c.p_i, c.p_j) {
            mark(x, y, [150, 150, 150], 1);
        }
    }
    for &(x, y) in &region.contour.points {
        mark(x, y, [230, 160, 0], 2);
    }
    if let SegregationOutcome::Split { chosen, .. } = &seg.outcome {
        for (x, y) in chord_pixels(chosen.p_i, chosen.p_j) {
            mark(x, y, [0, 60, 255], 2);
        }
    }
    for p in &seg.points {
        mark(p.x.round() as i64, p.y.round() as i64, [255, 0, 0], 5);
    }
    out
}

/// Stage intermediates in pipeline order: analysis-level mask, analysis-level
/// box, level-0 crop, level-0 rotated image, candidate mask, split views.
pub fn write_debug(slide: &PyramidImage, out: &PipelineOutput, cfg: &PipelineConfig, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let level = cfg.analysis_level;
    if let Some(m) = &out.tissue_mask {
        save_png(|| m.to_image().into(), dir.join(format!("01_L{level}_mask.png")))?;
    }
    let low = slide.raster(level)?;
    for t in &out.tissues {
        let k = t.analysis.index;
        let c = &t.extracted.component;
        let mut boxed = low.clone();
        let b = &c.bbox_low;
        draw_box(&mut boxed, b.x0, b.y0, b.width, b.height, [255, 0, 0]);
        save_png(|| boxed.to_image().into(), dir.join(format!("tissue_{k}_02_L{level}_box.png")))?;
        let crop = read_region(slide, 0, &c.bbox_l0.clamped(slide.level_info(0)?.width, slide.level_info(0)?.height))?;
        save_png(|| crop.to_image().into(), dir.join(format!("tissue_{k}_03_L0_crop.png")))?;
        save_png(|| t.extracted.image.to_image().into(), dir.join(format!("tissue_{k}_04_L0_rotated.png")))?;
        save_png(|| t.support.to_image().into(), dir.join(format!("tissue_{k}_05_support.png")))?;
        let mut cand = BinaryMask::new(t.extracted.image.width(), t.extracted.image.height());
        for r in &t.analysis.regions {
            r.pixels.paint(&mut cand, true);
        }
        save_png(|| cand.to_image().into(), dir.join(format!("tissue_{k}_06_regions.png")))?;
        for (id, seg) in &t.analysis.segregations {
            let region = t.analysis.regions.iter().find(|r| r.id == *id).expect("result belongs to a region");
            let img = render_split_debug(&t.extracted.image, region, seg);
            save_png(|| img.to_image().into(), dir.join(format!("tissue_{k}_07_region_{id}_split.png")))?;
        }
    }
    Ok(())
}

/// Transform of every tissue in `out`, by tissue index.
pub fn transforms(out: &PipelineOutput) -> Vec<TissueTransform> {
    out.tissues.iter().map(|t| t.analysis.transform).collect()
}
