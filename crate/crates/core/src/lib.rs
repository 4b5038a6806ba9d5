//! Pedestrian detection post-processing.
//!
//! Proposals are re-scored with a saliency map and pruned by NMS, then
//! aligned using dense confidence maps obtained by shift-and-stitch from a
//! pluggable scorer backend. Part detectors evaluated around the aligned
//! anchor contribute a penalized weighted score, and results are scored
//! with the log-average miss rate over FPPI.
//!
//! Neural scorers live behind [`heatmap::ScorerBackend`]; the crate ships
//! an analytic backend over synthetic scenes and a replay backend over
//! recorded outputs.

pub mod alignment;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod heatmap;
pub mod parts;
pub mod pipeline;
pub mod saliency;

pub use config::RunConfig;
pub use error::{Error, ErrorKind, Result};
pub use geometry::{iou, nms, BBox, MapFrame, ScoredBox};
pub use heatmap::{ConfidenceMap, Detector, FeatureGrid, ScorerBackend};
pub use saliency::SaliencyMap;
