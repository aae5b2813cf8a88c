pub mod contour;
pub mod detection;
pub mod ellipse;
pub mod error;
pub mod hull;
pub mod morphology;
pub mod phantom;
pub mod pipeline;
pub mod raster;
pub mod region;
pub mod report;
pub mod segregation;
pub mod slide;
pub mod tissue;
