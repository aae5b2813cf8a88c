//! Per-slide quantification reports, their canonical serialization, and
//! overlay rendering.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::contour::trace_boundary;
use crate::detection::{compute_shape_features, Classification, Region, ShapeFeatures};
use crate::error::ReportError;
use crate::raster::RgbRaster;
use crate::region::PixelRegion;
use crate::segregation::{chord_pixels, SegregationOutcome, SegregationResult};
use crate::tissue::TissueTransform;

pub const FLOAT_DECIMALS: i32 = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstanceClass {
    Isolated,
    Split,
    Nonseparable,
}

impl InstanceClass {
    pub fn as_str(&self) -> &'static str {
        match self {
            InstanceClass::Isolated => "isolated",
            InstanceClass::Split => "split",
            InstanceClass::Nonseparable => "nonseparable",
        }
    }
}

/// One reported steatosis instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionRecord {
    pub region_id: usize,
    pub tissue_index: usize,
    pub class: InstanceClass,
    /// Centroid in global level-0 coordinates.
    pub x0_global: f64,
    pub y0_global: f64,
    pub area_px: u64,
    pub area_um2: Option<f64>,
    pub perimeter_px: f64,
    pub inv_circularity: f64,
    pub solidity: f64,
    pub extent: f64,
    pub split_partner_id: Option<usize>,
    pub border_flag: bool,
    /// Id of the detected region within its tissue image.
    pub source_region: usize,
    /// Fit quality of the accepted split, or the best score for non-separable regions.
    pub fit_quality: Option<f64>,
    /// Row runs `[y, x_start, length]` in the rotated tissue frame.
    pub runs: Vec<[i64; 3]>,
}

impl RegionRecord {
    pub fn pixels(&self) -> PixelRegion {
        PixelRegion::from_runs(&self.runs)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TissueEntry {
    pub tissue_index: usize,
    pub isolated_count: usize,
    /// Overlapped regions before splitting.
    pub overlapped_count: usize,
    pub split_success_count: usize,
    pub nonseparable_count: usize,
    pub rejected_count: usize,
    pub instance_count: usize,
    pub total_steatosis_area_px: u64,
    pub tissue_area_px: u64,
    pub steatosis_area_fraction: f64,
    pub total_steatosis_area_um2: Option<f64>,
    pub tissue_area_um2: Option<f64>,
    pub transform: TissueTransform,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ReportSummary {
    pub tissue_count: usize,
    pub isolated_count: usize,
    pub overlapped_count: usize,
    pub split_success_count: usize,
    pub nonseparable_count: usize,
    pub rejected_count: usize,
    pub instance_count: usize,
    pub total_steatosis_area_px: u64,
    pub tissue_area_px: u64,
    pub steatosis_area_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantReport {
    pub slide_id: String,
    pub microns_per_pixel: Option<f64>,
    pub parameters: Value,
    pub tissues: Vec<TissueEntry>,
    pub regions: Vec<RegionRecord>,
    pub summary: ReportSummary,
}

/// Detection and segregation output for one tissue image.
#[derive(Debug, Clone)]
pub struct TissueAnalysis {
    pub index: usize,
    pub regions: Vec<Region>,
    /// One result per overlapped region, keyed by region id.
    pub segregations: Vec<(usize, SegregationResult)>,
    pub tissue_area_px: u64,
    pub transform: TissueTransform,
}

fn features_of(px: &PixelRegion) -> ShapeFeatures {
    let contour = trace_boundary(px);
    compute_shape_features(px, &contour).expect("sub-regions are nonempty")
}

fn fraction(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        (num as f64 / den as f64).min(1.0)
    }
}

/// Builds the report. Every overlapped region must have exactly one
/// segregation result and no other region may have one.
pub fn aggregate(
    slide_id: &str,
    microns_per_pixel: Option<f64>,
    parameters: Value,
    tissues: &[TissueAnalysis],
) -> Result<QuantReport, ReportError> {
    let um2 = |px: u64| microns_per_pixel.map(|m| px as f64 * m * m);
    let mut regions = Vec::new();
    let mut entries = Vec::new();
    for t in tissues {
        let mut seg: HashMap<usize, &SegregationResult> = HashMap::new();
        for (id, r) in &t.segregations {
            if seg.insert(*id, r).is_some() {
                return Err(ReportError::Mismatch(format!(
                    "tissue {}: region {id} has more than one segregation result",
                    t.index
                )));
            }
        }
        let mut sorted: Vec<&Region> = t.regions.iter().collect();
        sorted.sort_by_key(|r| r.id);
        let (mut iso, mut ovl, mut split, mut nonsep, mut rej) = (0, 0, 0, 0, 0);
        let first_record = regions.len();
        let record = |id: usize, class, px: &PixelRegion, f: &ShapeFeatures, src: &Region, fq: Option<f64>| {
            let (cx, cy) = px.centroid();
            let (gx, gy) = t.transform.rotated_to_global_xy(cx, cy);
            RegionRecord {
                region_id: id,
                tissue_index: t.index,
                class,
                x0_global: gx,
                y0_global: gy,
                area_px: px.area() as u64,
                area_um2: um2(px.area() as u64),
                perimeter_px: f.perimeter,
                inv_circularity: f.inv_circularity,
                solidity: f.solidity,
                extent: f.extent,
                split_partner_id: None,
                border_flag: src.border,
                source_region: src.id,
                fit_quality: fq,
                runs: px.runs(),
            }
        };
        for r in sorted {
            match r.classification {
                Classification::Rejected(_) => {
                    rej += 1;
                    if seg.contains_key(&r.id) {
                        return Err(ReportError::Mismatch(format!(
                            "tissue {}: rejected region {} has a segregation result",
                            t.index, r.id
                        )));
                    }
                }
                Classification::Isolated => {
                    if seg.contains_key(&r.id) {
                        return Err(ReportError::Mismatch(format!(
                            "tissue {}: isolated region {} has a segregation result",
                            t.index, r.id
                        )));
                    }
                    iso += 1;
                    regions.push(record(regions.len(), InstanceClass::Isolated, &r.pixels, &r.features, r, None));
                }
                Classification::Overlapped => {
                    ovl += 1;
                    let s = seg.get(&r.id).ok_or_else(|| {
                        ReportError::Mismatch(format!(
                            "tissue {}: overlapped region {} has no segregation result",
                            t.index, r.id
                        ))
                    })?;
                    match &s.outcome {
                        SegregationOutcome::Split { a, b, chosen } => {
                            split += 1;
                            let ia = regions.len();
                            let mut ra = record(ia, InstanceClass::Split, a, &features_of(a), r, Some(chosen.f));
                            let mut rb = record(ia + 1, InstanceClass::Split, b, &features_of(b), r, Some(chosen.f));
                            ra.split_partner_id = Some(ia + 1);
                            rb.split_partner_id = Some(ia);
                            regions.push(ra);
                            regions.push(rb);
                        }
                        SegregationOutcome::NonSeparable { best_f } => {
                            nonsep += 1;
                            regions.push(record(
                                regions.len(),
                                InstanceClass::Nonseparable,
                                &r.pixels,
                                &r.features,
                                r,
                                Some(*best_f),
                            ));
                        }
                    }
                }
            }
        }
        let instances = &regions[first_record..];
        let area: u64 = instances.iter().map(|r| r.area_px).sum();
        entries.push(TissueEntry {
            tissue_index: t.index,
            isolated_count: iso,
            overlapped_count: ovl,
            split_success_count: split,
            nonseparable_count: nonsep,
            rejected_count: rej,
            instance_count: instances.len(),
            total_steatosis_area_px: area,
            tissue_area_px: t.tissue_area_px,
            steatosis_area_fraction: fraction(area, t.tissue_area_px),
            total_steatosis_area_um2: um2(area),
            tissue_area_um2: um2(t.tissue_area_px),
            transform: t.transform,
        });
        if seg.keys().any(|id| !t.regions.iter().any(|r| r.id == *id)) {
            return Err(ReportError::Mismatch(format!(
                "tissue {}: segregation result for an unknown region",
                t.index
            )));
        }
    }
    let summary = summarize(&entries);
    let report = QuantReport {
        slide_id: slide_id.to_string(),
        microns_per_pixel,
        parameters,
        tissues: entries,
        regions,
        summary,
    };
    check_counting_identity(&report)?;
    Ok(report)
}

fn summarize(entries: &[TissueEntry]) -> ReportSummary {
    let mut s = ReportSummary {
        tissue_count: entries.len(),
        ..Default::default()
    };
    for e in entries {
        s.isolated_count += e.isolated_count;
        s.overlapped_count += e.overlapped_count;
        s.split_success_count += e.split_success_count;
        s.nonseparable_count += e.nonseparable_count;
        s.rejected_count += e.rejected_count;
        s.instance_count += e.instance_count;
        s.total_steatosis_area_px += e.total_steatosis_area_px;
        s.tissue_area_px += e.tissue_area_px;
    }
    s.steatosis_area_fraction = fraction(s.total_steatosis_area_px, s.tissue_area_px);
    s
}

/// `isolated + 2·splits + nonseparable == instances`, per tissue and overall.
pub fn check_counting_identity(r: &QuantReport) -> Result<(), ReportError> {
    let ok = |iso: usize, split: usize, non: usize, total: usize| iso + 2 * split + non == total;
    for t in &r.tissues {
        let rows = r.regions.iter().filter(|x| x.tissue_index == t.tissue_index).count();
        if !ok(t.isolated_count, t.split_success_count, t.nonseparable_count, t.instance_count)
            || rows != t.instance_count
        {
            return Err(ReportError::Mismatch(format!(
                "counting identity violated for tissue {}",
                t.tissue_index
            )));
        }
    }
    let s = &r.summary;
    if !ok(s.isolated_count, s.split_success_count, s.nonseparable_count, s.instance_count)
        || r.regions.len() != s.instance_count
    {
        return Err(ReportError::Mismatch("counting identity violated in summary".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

impl ReportFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "csv" => Some(ReportFormat::Csv),
            "json" => Some(ReportFormat::Json),
            _ => None,
        }
    }
}

fn round_floats(v: &mut Value) {
    match v {
        Value::Number(n) if !(n.is_i64() || n.is_u64()) => {
            if let Some(f) = n.as_f64() {
                let scale = 10f64.powi(FLOAT_DECIMALS);
                let mut r = (f * scale).round() / scale;
                if r == 0.0 {
                    r = 0.0;
                }
                *v = serde_json::Number::from_f64(r).map(Value::Number).unwrap_or(Value::Null);
            }
        }
        Value::Array(a) => a.iter_mut().for_each(round_floats),
        Value::Object(o) => o.values_mut().for_each(round_floats),
        _ => {}
    }
}

/// Canonical JSON: sorted keys, floats rounded to 6 decimals, trailing newline.
pub fn to_json_string<T: Serialize>(value: &T) -> Result<String, ReportError> {
    let mut v = serde_json::to_value(value)?;
    round_floats(&mut v);
    // serde_json maps are ordered by key without the preserve_order feature
    let sorted: BTreeMap<String, Value> = match v {
        Value::Object(o) => o.into_iter().collect(),
        other => return Ok(serde_json::to_string_pretty(&other)? + "\n"),
    };
    Ok(serde_json::to_string_pretty(&sorted)? + "\n")
}

pub const CSV_COLUMNS: [&str; 12] = [
    "region_id",
    "tissue_index",
    "class",
    "x0_global",
    "y0_global",
    "area_px",
    "perimeter_px",
    "inv_circularity",
    "solidity",
    "extent",
    "split_partner_id",
    "border_flag",
];

pub const CSV_SUMMARY_MARKER: &str = "# summary";

fn fmt_f(v: f64) -> String {
    let s = format!("{:.*}", FLOAT_DECIMALS as usize, v);
    if s.starts_with('-') && s[1..].bytes().all(|b| b == b'0' || b == b'.') {
        s[1..].to_string()
    } else {
        s
    }
}

fn summary_pairs(r: &QuantReport) -> Vec<(String, String)> {
    let s = &r.summary;
    let mut v = vec![
        ("slide_id".to_string(), r.slide_id.clone()),
        ("tissue_count".into(), s.tissue_count.to_string()),
        ("isolated_count".into(), s.isolated_count.to_string()),
        ("overlapped_count".into(), s.overlapped_count.to_string()),
        ("split_success_count".into(), s.split_success_count.to_string()),
        ("nonseparable_count".into(), s.nonseparable_count.to_string()),
        ("rejected_count".into(), s.rejected_count.to_string()),
        ("instance_count".into(), s.instance_count.to_string()),
        ("total_steatosis_area_px".into(), s.total_steatosis_area_px.to_string()),
        ("tissue_area_px".into(), s.tissue_area_px.to_string()),
        ("steatosis_area_fraction".into(), fmt_f(s.steatosis_area_fraction)),
    ];
    if let Some(m) = r.microns_per_pixel {
        v.push(("microns_per_pixel".into(), fmt_f(m)));
        v.push((
            "total_steatosis_area_um2".into(),
            fmt_f(s.total_steatosis_area_px as f64 * m * m),
        ));
    }
    v
}

/// Region rows in the fixed column order, then a `# summary` block of
/// `key,value` records.
pub fn to_csv_string(r: &QuantReport) -> Result<String, ReportError> {
    let mut w = csv::WriterBuilder::new().flexible(true).from_writer(Vec::new());
    w.write_record(CSV_COLUMNS)?;
    for x in &r.regions {
        w.write_record([
            x.region_id.to_string(),
            x.tissue_index.to_string(),
            x.class.as_str().to_string(),
            fmt_f(x.x0_global),
            fmt_f(x.y0_global),
            x.area_px.to_string(),
            fmt_f(x.perimeter_px),
            fmt_f(x.inv_circularity),
            fmt_f(x.solidity),
            fmt_f(x.extent),
            x.split_partner_id.map(|p| p.to_string()).unwrap_or_default(),
            x.border_flag.to_string(),
        ])?;
    }
    w.write_record([CSV_SUMMARY_MARKER])?;
    for (k, v) in summary_pairs(r) {
        w.write_record([k, v])?;
    }
    let bytes = w.into_inner().map_err(|e| ReportError::Io(e.into_error()))?;
    String::from_utf8(bytes).map_err(|e| ReportError::Schema(e.to_string()))
}

/// Parsed CSV report: region rows and summary records, as text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CsvReport {
    pub rows: Vec<Vec<String>>,
    pub summary: Vec<(String, String)>,
}

impl CsvReport {
    pub fn parse(text: &str) -> Result<Self, ReportError> {
        let mut rd = csv::ReaderBuilder::new()
            .flexible(true)
            .has_headers(true)
            .from_reader(text.as_bytes());
        let headers: Vec<String> = rd.headers()?.iter().map(String::from).collect();
        if headers != CSV_COLUMNS {
            return Err(ReportError::Schema(format!("unexpected CSV header {headers:?}")));
        }
        let (mut rows, mut summary) = (Vec::new(), Vec::new());
        let mut in_summary = false;
        for rec in rd.records() {
            let rec = rec?;
            if !in_summary && rec.get(0) == Some(CSV_SUMMARY_MARKER) {
                in_summary = true;
                continue;
            }
            if in_summary {
                if rec.len() != 2 {
                    return Err(ReportError::Schema("summary records need two fields".into()));
                }
                summary.push((rec[0].to_string(), rec[1].to_string()));
            } else {
                if rec.len() != CSV_COLUMNS.len() {
                    return Err(ReportError::Schema(format!("region row with {} fields", rec.len())));
                }
                rows.push(rec.iter().map(String::from).collect());
            }
        }
        Ok(Self { rows, summary })
    }

    pub fn to_csv_string(&self) -> Result<String, ReportError> {
        let mut w = csv::WriterBuilder::new().flexible(true).from_writer(Vec::new());
        w.write_record(CSV_COLUMNS)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.write_record([CSV_SUMMARY_MARKER])?;
        for (k, v) in &self.summary {
            w.write_record([k, v])?;
        }
        let bytes = w.into_inner().map_err(|e| ReportError::Io(e.into_error()))?;
        String::from_utf8(bytes).map_err(|e| ReportError::Schema(e.to_string()))
    }

    pub fn summary_value(&self, key: &str) -> Option<&str> {
        self.summary.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }
}

pub fn write_report(r: &QuantReport, format: ReportFormat, path: impl AsRef<Path>) -> Result<(), ReportError> {
    let text = match format {
        ReportFormat::Csv => to_csv_string(r)?,
        ReportFormat::Json => to_json_string(r)?,
    };
    fs::write(path, text)?;
    Ok(())
}

pub fn read_report(path: impl AsRef<Path>) -> Result<QuantReport, ReportError> {
    let text = fs::read_to_string(path)?;
    let r: QuantReport = serde_json::from_str(&text).map_err(|e| ReportError::Schema(e.to_string()))?;
    check_counting_identity(&r)?;
    Ok(r)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct OverlayStyle {
    pub isolated_color: [u8; 3],
    pub overlapped_color: [u8; 3],
    pub split_line_color: [u8; 3],
    pub line_width: u32,
}

impl Default for OverlayStyle {
    fn default() -> Self {
        Self {
            isolated_color: [0, 200, 0],
            overlapped_color: [230, 160, 0],
            split_line_color: [0, 60, 255],
            line_width: 1,
        }
    }
}

fn stroke(img: &mut RgbRaster, x: i64, y: i64, width: u32, color: [u8; 3]) {
    let lo = -((width as i64 - 1) / 2);
    let hi = width as i64 / 2;
    for dy in lo..=hi {
        for dx in lo..=hi {
            let (px, py) = (x + dx, y + dy);
            if px >= 0 && py >= 0 && (px as u32) < img.width() && (py as u32) < img.height() {
                img.put(px as u32, py as u32, color);
            }
        }
    }
}

/// Strokes instance contours by class and accepted split chords on a copy of
/// the tissue image. Rejected regions are left undrawn.
pub fn render_overlay(
    tissue_img: &RgbRaster,
    regions: &[Region],
    segregations: &[(usize, SegregationResult)],
    style: &OverlayStyle,
) -> RgbRaster {
    let mut out = tissue_img.clone();
    for r in regions {
        let color = match r.classification {
            Classification::Isolated => style.isolated_color,
            Classification::Overlapped => style.overlapped_color,
            Classification::Rejected(_) => continue,
        };
        for &(x, y) in &r.contour.points {
            stroke(&mut out, x, y, style.line_width, color);
        }
    }
    for (_, s) in segregations {
        if let SegregationOutcome::Split { chosen, .. } = &s.outcome {
            for (x, y) in chord_pixels(chosen.p_i, chosen.p_j) {
                stroke(&mut out, x, y, style.line_width, style.split_line_color);
            }
        }
    }
    out
}

/// Plain-text accuracy table.
pub fn format_table(rows: &[(&str, String)]) -> String {
    let w = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    let mut s = String::new();
    for (k, v) in rows {
        let _ = writeln!(s, "{k:<w$}  {v}");
    }
    s
}
