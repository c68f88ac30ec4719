//! Phase-one detections without a neural backbone: ingestion of external
//! detection files, a classical blob detector, and a synthetic generator.

mod blob;
mod synth;

pub use blob::{blob_detect, BlobDetectParams};
pub use synth::{
    generate_synthetic, write_synthetic_dataset, SeverityRule, SynthSpec, SyntheticImage,
};

use std::path::Path;

use crate::error::Result;
use crate::model::{read_detection_file, DetectionSet};

/// Reads a detection record file: one set per distinct `image_id`, in order
/// of first appearance, detections in file order.
pub fn ingest_detections(path: &Path) -> Result<Vec<DetectionSet>> {
    read_detection_file(path)
}
