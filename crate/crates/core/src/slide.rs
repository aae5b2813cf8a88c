//! Multi-resolution slide model.
//!
//! A [`PyramidImage`] holds every level from 0 (full resolution) up to at
//! least level 4, each downsampled by exactly `2^L` relative to level 0.
//! Points carry an explicit [`Frame`] so that global, extracted-local and
//! rotated coordinates are never mixed silently.
//!
//! On disk a pyramid is a directory with a `pyramid.json` manifest and one
//! PNG or 8-bit RGB TIFF per stored level:
//!
//! ```json
//! { "width0": 4096, "height0": 4096,
//!   "levels": [ { "level": 0, "width": 4096, "height": 4096, "file": "level_0.png" },
//!               { "level": 4, "width": 256,  "height": 256,  "file": "level_4.png" } ] }
//! ```
//!
//! Optional manifest fields are `slide_id` and `microns_per_pixel`. Levels
//! that are absent are synthesized by repeated 2×2 box filtering from the
//! nearest finer level.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::SlideError;
use crate::raster::RgbRaster;

/// Lowest level that must be present or derivable; tissue detection runs there.
pub const MIN_TOP_LEVEL: u32 = 4;

/// Allowed deviation between a level's dimensions and `floor(dim0 / 2^L)`.
pub const LEVEL_DIM_TOLERANCE: u32 = 1;

pub const MANIFEST_NAME: &str = "pyramid.json";

/// Coordinate frame of a [`Point2`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Frame {
    /// Whole-slide coordinates at a pyramid level.
    Global { level: u32 },
    /// Coordinates relative to an extracted (non-rotated) tissue crop at level 0.
    Local,
    /// Coordinates in a rotated tissue image at level 0.
    Rotated,
}

impl fmt::Display for Frame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Frame::Global { level } => write!(f, "global@L{level}"),
            Frame::Local => write!(f, "local-extracted@L0"),
            Frame::Rotated => write!(f, "rotated@L0"),
        }
    }
}

/// Sub-pixel point tagged with its frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
    pub frame: Frame,
}

impl Point2 {
    pub fn new(x: f64, y: f64, frame: Frame) -> Self {
        Self { x, y, frame }
    }

    pub fn global(x: f64, y: f64, level: u32) -> Self {
        Self::new(x, y, Frame::Global { level })
    }

    pub fn local(x: f64, y: f64) -> Self {
        Self::new(x, y, Frame::Local)
    }

    pub fn rotated(x: f64, y: f64) -> Self {
        Self::new(x, y, Frame::Rotated)
    }

    pub fn distance(&self, other: &Point2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    fn expect_frame(&self, expected: Frame) -> Result<(), SlideError> {
        if self.frame == expected {
            Ok(())
        } else {
            Err(SlideError::FrameMismatch {
                expected: expected.to_string(),
                got: self.frame.to_string(),
            })
        }
    }
}

/// Axis-aligned integer box in global coordinates at `level`.
///
/// `center()` is the continuous center `origin + (W/2, H/2)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x0: u32,
    pub y0: u32,
    pub width: u32,
    pub height: u32,
    pub level: u32,
}

impl BoundingBox {
    pub fn origin(&self) -> Point2 {
        Point2::global(self.x0 as f64, self.y0 as f64, self.level)
    }

    pub fn center(&self) -> Point2 {
        Point2::global(
            self.x0 as f64 + self.width as f64 / 2.0,
            self.y0 as f64 + self.height as f64 / 2.0,
            self.level,
        )
    }

    /// Maps the box corners through the `2^L` scaling. Moving to a finer level is
    /// exact; moving to a coarser level rounds outward so the box still covers
    /// the same area.
    pub fn to_level(&self, to_level: u32) -> BoundingBox {
        if to_level <= self.level {
            let s = 1u32 << (self.level - to_level);
            BoundingBox {
                x0: self.x0 * s,
                y0: self.y0 * s,
                width: self.width * s,
                height: self.height * s,
                level: to_level,
            }
        } else {
            let s = 1u32 << (to_level - self.level);
            let x1 = (self.x0 + self.width).div_ceil(s);
            let y1 = (self.y0 + self.height).div_ceil(s);
            let x0 = self.x0 / s;
            let y0 = self.y0 / s;
            BoundingBox {
                x0,
                y0,
                width: x1 - x0,
                height: y1 - y0,
                level: to_level,
            }
        }
    }

    /// Intersects the box with a `width × height` raster extent.
    pub fn clamped(&self, width: u32, height: u32) -> BoundingBox {
        let x0 = self.x0.min(width.saturating_sub(1));
        let y0 = self.y0.min(height.saturating_sub(1));
        let x1 = (self.x0 + self.width).min(width).max(x0 + 1);
        let y1 = (self.y0 + self.height).min(height).max(y0 + 1);
        BoundingBox {
            x0,
            y0,
            width: x1 - x0,
            height: y1 - y0,
            level: self.level,
        }
    }

    pub fn contains(&self, p: &Point2) -> bool {
        p.frame == (Frame::Global { level: self.level })
            && p.x >= self.x0 as f64
            && p.y >= self.y0 as f64
            && p.x <= (self.x0 + self.width) as f64
            && p.y <= (self.y0 + self.height) as f64
    }
}

/// Where a level's pixels came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LevelBacking {
    File(PathBuf),
    Synthesized { from_level: u32 },
    Memory,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LevelInfo {
    pub level_index: u32,
    pub width: u32,
    pub height: u32,
    pub backing: LevelBacking,
}

#[derive(Debug, Clone)]
struct Level {
    info: LevelInfo,
    raster: RgbRaster,
}

/// Immutable multi-resolution raster. Level `L` is stored at index `L`.
#[derive(Debug, Clone)]
pub struct PyramidImage {
    slide_id: String,
    microns_per_pixel: Option<f64>,
    levels: Vec<Level>,
}

impl PyramidImage {
    /// Builds a pyramid from the base raster, deriving levels `1..=top_level`.
    pub fn from_base(slide_id: impl Into<String>, base: RgbRaster, top_level: u32) -> Self {
        Self::from_levels(slide_id, vec![(0, base, LevelBacking::Memory)], top_level)
            .expect("a lone base level is always consistent")
    }

    /// Assembles a pyramid from the levels that are available, synthesizing any
    /// gap up to `max(top_level, MIN_TOP_LEVEL, highest given level)`.
    pub fn from_levels(
        slide_id: impl Into<String>,
        mut given: Vec<(u32, RgbRaster, LevelBacking)>,
        top_level: u32,
    ) -> Result<Self, SlideError> {
        given.sort_by_key(|(l, _, _)| *l);
        given.dedup_by_key(|(l, _, _)| *l);
        if given.first().map(|(l, _, _)| *l) != Some(0) {
            return Err(SlideError::NoBaseLevel);
        }
        let (w0, h0) = (given[0].1.width(), given[0].1.height());
        for (level, raster, _) in &given[1..] {
            check_level_dims(*level, raster.width(), raster.height(), w0, h0)?;
        }
        let top = given
            .last()
            .map(|(l, _, _)| *l)
            .unwrap_or(0)
            .max(top_level)
            .max(MIN_TOP_LEVEL);

        let mut levels: Vec<Level> = Vec::with_capacity(top as usize + 1);
        let mut given = given.into_iter().peekable();
        for level in 0..=top {
            let stored = match given.peek() {
                Some((l, _, _)) if *l == level => given.next(),
                _ => None,
            };
            let entry = match stored {
                Some((_, raster, backing)) => Level {
                    info: LevelInfo {
                        level_index: level,
                        width: raster.width(),
                        height: raster.height(),
                        backing,
                    },
                    raster,
                },
                None => {
                    let finer = levels.last().expect("level 0 is always present");
                    let raster = finer.raster.downsample_2x();
                    Level {
                        info: LevelInfo {
                            level_index: level,
                            width: raster.width(),
                            height: raster.height(),
                            backing: LevelBacking::Synthesized {
                                from_level: level - 1,
                            },
                        },
                        raster,
                    }
                }
            };
            levels.push(entry);
        }
        Ok(Self {
            slide_id: slide_id.into(),
            microns_per_pixel: None,
            levels,
        })
    }

    pub fn with_microns_per_pixel(mut self, mpp: Option<f64>) -> Self {
        self.microns_per_pixel = mpp;
        self
    }

    pub fn slide_id(&self) -> &str {
        &self.slide_id
    }

    pub fn microns_per_pixel(&self) -> Option<f64> {
        self.microns_per_pixel
    }

    pub fn level_count(&self) -> u32 {
        self.levels.len() as u32
    }

    pub fn levels(&self) -> impl Iterator<Item = &LevelInfo> {
        self.levels.iter().map(|l| &l.info)
    }

    pub fn level_info(&self, level: u32) -> Result<&LevelInfo, SlideError> {
        self.levels
            .get(level as usize)
            .map(|l| &l.info)
            .ok_or(SlideError::MissingLevel(level))
    }

    pub fn raster(&self, level: u32) -> Result<&RgbRaster, SlideError> {
        self.levels
            .get(level as usize)
            .map(|l| &l.raster)
            .ok_or(SlideError::MissingLevel(level))
    }

    pub fn downsample_factor(level: u32) -> f64 {
        (1u64 << level) as f64
    }
}

fn check_level_dims(level: u32, w: u32, h: u32, w0: u32, h0: u32) -> Result<(), SlideError> {
    let ew = (w0 >> level).max(1);
    let eh = (h0 >> level).max(1);
    if w.abs_diff(ew) > LEVEL_DIM_TOLERANCE || h.abs_diff(eh) > LEVEL_DIM_TOLERANCE || w == 0 || h == 0
    {
        return Err(SlideError::InconsistentPyramid {
            level,
            width: w,
            height: h,
            expected_width: ew,
            expected_height: eh,
        });
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    width0: u32,
    height0: u32,
    levels: Vec<ManifestLevel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    slide_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    microns_per_pixel: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ManifestLevel {
    level: u32,
    width: u32,
    height: u32,
    file: String,
}

fn read_raster(path: &Path) -> Result<RgbRaster, SlideError> {
    let img = image::open(path).map_err(|e| SlideError::UnreadableRaster {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    Ok(RgbRaster::from_image(&img.to_rgb8()))
}

/// Loads the on-disk pyramid layout rooted at `path`.
pub fn load_pyramid(path: impl AsRef<Path>) -> Result<PyramidImage, SlideError> {
    let dir = path.as_ref();
    if !dir.exists() {
        return Err(SlideError::PathNotFound(dir.to_path_buf()));
    }
    let manifest_path = dir.join(MANIFEST_NAME);
    if !manifest_path.exists() {
        return Err(SlideError::NoBaseLevel);
    }
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(&manifest_path)?)
        .map_err(|e| SlideError::BadMetadata(e.to_string()))?;
    if !manifest.levels.iter().any(|l| l.level == 0) {
        return Err(SlideError::NoBaseLevel);
    }
    if manifest.width0 == 0 || manifest.height0 == 0 {
        return Err(SlideError::BadMetadata("zero base dimensions".into()));
    }

    let mut given = Vec::with_capacity(manifest.levels.len());
    for entry in &manifest.levels {
        check_level_dims(
            entry.level,
            entry.width,
            entry.height,
            manifest.width0,
            manifest.height0,
        )?;
        let file = dir.join(&entry.file);
        let raster = read_raster(&file)?;
        if raster.width() != entry.width || raster.height() != entry.height {
            return Err(SlideError::InconsistentPyramid {
                level: entry.level,
                width: raster.width(),
                height: raster.height(),
                expected_width: entry.width,
                expected_height: entry.height,
            });
        }
        given.push((entry.level, raster, LevelBacking::File(file)));
    }

    let slide_id = manifest.slide_id.clone().unwrap_or_else(|| {
        dir.file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "slide".to_owned())
    });
    Ok(PyramidImage::from_levels(slide_id, given, MIN_TOP_LEVEL)?
        .with_microns_per_pixel(manifest.microns_per_pixel))
}

/// Writes `levels` of the pyramid as `level_<L>.png` plus the manifest.
pub fn write_pyramid(
    p: &PyramidImage,
    dir: impl AsRef<Path>,
    levels: &[u32],
) -> Result<(), SlideError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let base = p.level_info(0)?;
    let mut entries = Vec::new();
    for &level in levels {
        let info = p.level_info(level)?;
        let file = format!("level_{level}.png");
        p.raster(level)?
            .to_image()
            .save(dir.join(&file))
            .map_err(|e| SlideError::UnreadableRaster {
                path: dir.join(&file),
                reason: e.to_string(),
            })?;
        entries.push(ManifestLevel {
            level,
            width: info.width,
            height: info.height,
            file,
        });
    }
    let manifest = Manifest {
        width0: base.width,
        height0: base.height,
        levels: entries,
        slide_id: Some(p.slide_id.clone()),
        microns_per_pixel: p.microns_per_pixel,
    };
    let text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| SlideError::BadMetadata(e.to_string()))?;
    fs::write(dir.join(MANIFEST_NAME), text + "\n")?;
    Ok(())
}

/// Pixel-exact crop of `box` from the stored raster at `level`.
pub fn read_region(p: &PyramidImage, level: u32, bbox: &BoundingBox) -> Result<RgbRaster, SlideError> {
    let raster = p.raster(level)?;
    let oob = SlideError::OutOfBounds {
        level,
        x0: bbox.x0,
        y0: bbox.y0,
        width: bbox.width,
        height: bbox.height,
        level_width: raster.width(),
        level_height: raster.height(),
    };
    if bbox.level != level || bbox.width == 0 || bbox.height == 0 {
        return Err(oob);
    }
    if bbox.x0 as u64 + bbox.width as u64 > raster.width() as u64
        || bbox.y0 as u64 + bbox.height as u64 > raster.height() as u64
    {
        return Err(oob);
    }
    Ok(raster.crop(bbox.x0, bbox.y0, bbox.width, bbox.height))
}

/// Scales a global point by `2^(from_level - to_level)` without rounding.
pub fn map_level_coords(pt: Point2, from_level: u32, to_level: u32) -> Result<Point2, SlideError> {
    pt.expect_frame(Frame::Global { level: from_level })?;
    let scale = 2f64.powi(from_level as i32 - to_level as i32);
    Ok(Point2::global(pt.x * scale, pt.y * scale, to_level))
}

/// `global = local + center - (W'/2, H'/2)` at level 0.
pub fn global_from_local(
    local: Point2,
    center: Point2,
    width: f64,
    height: f64,
) -> Result<Point2, SlideError> {
    local.expect_frame(Frame::Local)?;
    center.expect_frame(Frame::Global { level: 0 })?;
    Ok(Point2::global(
        local.x + center.x - width / 2.0,
        local.y + center.y - height / 2.0,
        0,
    ))
}

/// Inverse of [`global_from_local`].
pub fn local_from_global(
    global: Point2,
    center: Point2,
    width: f64,
    height: f64,
) -> Result<Point2, SlideError> {
    global.expect_frame(Frame::Global { level: 0 })?;
    center.expect_frame(Frame::Global { level: 0 })?;
    Ok(Point2::local(
        global.x - center.x + width / 2.0,
        global.y - center.y + height / 2.0,
    ))
}
