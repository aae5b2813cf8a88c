use std::path::PathBuf;

use thiserror::Error;

/// Errors from the slide model: pyramid loading, rasters and frames.
#[derive(Debug, Error)]
pub enum SlideError {
    #[error("path not found: {0}")]
    PathNotFound(PathBuf),
    #[error("no base level")]
    NoBaseLevel,
    #[error("inconsistent pyramid: level {level} is {width}x{height}, expected {expected_width}x{expected_height} (±1)")]
    InconsistentPyramid {
        level: u32,
        width: u32,
        height: u32,
        expected_width: u32,
        expected_height: u32,
    },
    #[error("unreadable raster {path}: {reason}")]
    UnreadableRaster { path: PathBuf, reason: String },
    #[error("invalid pyramid metadata: {0}")]
    BadMetadata(String),
    #[error("level {0} not present in pyramid")]
    MissingLevel(u32),
    #[error("box {x0},{y0} {width}x{height} outside level {level} extent {level_width}x{level_height}")]
    OutOfBounds {
        level: u32,
        x0: u32,
        y0: u32,
        width: u32,
        height: u32,
        level_width: u32,
        level_height: u32,
    },
    #[error("frame mismatch: expected {expected}, got {got}")]
    FrameMismatch { expected: String, got: String },
    #[error("raster buffer has {got} samples, expected {expected}")]
    BufferSize { expected: usize, got: usize },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Errors from tissue detection and extraction.
#[derive(Debug, Error)]
pub enum TissueError {
    #[error("degenerate histogram: image has fewer than two distinct gray levels")]
    DegenerateHistogram,
    #[error("mask has {0} foreground pixels, need at least 3 for rotation estimation")]
    TooFewPixels(usize),
    #[error("empty mask")]
    EmptyMask,
    #[error("contour has {0} points, too few for extent estimation")]
    ShortContour(usize),
    #[error(transparent)]
    Slide(#[from] SlideError),
}

/// Errors from steatosis detection.
#[derive(Debug, Error)]
pub enum DetectionError {
    #[error("region has zero area")]
    ZeroArea,
    #[error("invalid detection parameters: {0}")]
    InvalidParams(String),
}

/// Errors from ellipse fitting and overlap segregation.
#[derive(Debug, Error)]
pub enum SegregationError {
    #[error("too few points: need {needed}, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("degenerate conic")]
    DegenerateConic,
    #[error("split produced an empty side")]
    EmptySide,
    #[error("split produced a disconnected side")]
    DisconnectedSide,
    #[error("split endpoints coincide")]
    CoincidentEndpoints,
}

/// Errors from report aggregation and serialization.
#[derive(Debug, Error)]
pub enum ReportError {
    #[error("region/segregation mismatch: {0}")]
    Mismatch(String),
    #[error("slide id mismatch: report {report} vs ground truth {truth}")]
    SlideIdMismatch { report: String, truth: String },
    #[error("schema: {0}")]
    Schema(String),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Errors from phantom generation.
#[derive(Debug, Error)]
pub enum PhantomError {
    #[error("invalid phantom spec: {0}")]
    InvalidSpec(String),
    #[error("placement failure: could not place {kind} {index} after {tries} tries")]
    PlacementFailure {
        kind: &'static str,
        index: usize,
        tries: usize,
    },
    #[error(transparent)]
    Slide(#[from] SlideError),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Pipeline-level error; each variant tags the stage that produced it.
#[derive(Debug, Error)]
pub enum Error {
    #[error("slide: {0}")]
    Slide(#[from] SlideError),
    #[error("tissue: {0}")]
    Tissue(#[from] TissueError),
    #[error("detection: {0}")]
    Detection(#[from] DetectionError),
    #[error("segregation: {0}")]
    Segregation(#[from] SegregationError),
    #[error("report: {0}")]
    Report(#[from] ReportError),
    #[error("phantom: {0}")]
    Phantom(#[from] PhantomError),
    #[error("config: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True when the failure stems from bad user input rather than a pipeline fault.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Slide(_)
                | Error::Config(_)
                | Error::Detection(DetectionError::InvalidParams(_))
                | Error::Tissue(TissueError::Slide(_))
                | Error::Report(
                    ReportError::SlideIdMismatch { .. } | ReportError::Schema(_) | ReportError::Json(_) | ReportError::Io(_)
                )
                | Error::Phantom(
                    PhantomError::InvalidSpec(_)
                        | PhantomError::PlacementFailure { .. }
                        | PhantomError::Json(_)
                        | PhantomError::Io(_)
                )
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
