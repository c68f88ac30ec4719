//! Turns a detection set into the recurrent classifier's input sequence.
//!
//! Each detection contributes one step. Its base vector is the box
//! `[x_min, y_min, x_max, y_max]` (optionally divided by the image size)
//! followed by the one-hot kind `[EX, MA]`, zero-padded to `feature_dim`.
//! With masks enabled, the instance mask is cropped to its box, resampled to
//! `mask_crop_size`² and passed through a three-stage convolutional encoder
//! whose output is added to (or concatenated with) the base vector.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::{BinaryMask, BoundingBox, Detection, DetectionSet};
use crate::neural::MaskEncoder;

/// How the mask branch joins the box/kind branch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Combine {
    #[default]
    Add,
    Concat,
}

impl Combine {
    pub fn as_str(&self) -> &'static str {
        match self {
            Combine::Add => "add",
            Combine::Concat => "concat",
        }
    }
}

impl FromStr for Combine {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "add" => Ok(Combine::Add),
            "concat" => Ok(Combine::Concat),
            other => Err(Error::Format(format!("unknown combine mode {other:?}"))),
        }
    }
}

/// The three input variants compared for severity grading.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    /// Classes and raw pixel boxes.
    BoxesRaw,
    /// Classes and boxes divided by the image size.
    BoxesNorm,
    /// Classes, normalized boxes and instance masks.
    BoxesNormMasks,
}

impl Ablation {
    pub const ALL: [Ablation; 3] = [Ablation::BoxesRaw, Ablation::BoxesNorm, Ablation::BoxesNormMasks];

    pub fn as_str(&self) -> &'static str {
        match self {
            Ablation::BoxesRaw => "boxes_raw",
            Ablation::BoxesNorm => "boxes_norm",
            Ablation::BoxesNormMasks => "boxes_norm_masks",
        }
    }

    pub fn description(&self) -> &'static str {
        match self {
            Ablation::BoxesRaw => "Classes, bounding boxes, without normalization",
            Ablation::BoxesNorm => "Classes, bounding boxes, with normalization",
            Ablation::BoxesNormMasks => "Classes, bounding boxes, masks",
        }
    }

    /// `(normalize_boxes, use_masks)`.
    pub fn switches(&self) -> (bool, bool) {
        match self {
            Ablation::BoxesRaw => (false, false),
            Ablation::BoxesNorm => (true, false),
            Ablation::BoxesNormMasks => (true, true),
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| {
                Error::Format(format!(
                    "unknown ablation {s:?}, expected boxes_raw, boxes_norm or boxes_norm_masks"
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub use_masks: bool,
    pub normalize_boxes: bool,
    /// Side of the (square) image the boxes live in.
    pub image_size: usize,
    pub mask_crop_size: usize,
    pub feature_dim: usize,
    pub combine: Combine,
    /// Append the detection score after the one-hot kind.
    pub include_score: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            use_masks: false,
            normalize_boxes: true,
            image_size: 1024,
            mask_crop_size: 32,
            feature_dim: 6,
            combine: Combine::Add,
            include_score: false,
        }
    }
}

impl EncoderConfig {
    pub fn for_ablation(ablation: Ablation, image_size: usize) -> Self {
        let (normalize_boxes, use_masks) = ablation.switches();
        Self {
            use_masks,
            normalize_boxes,
            image_size,
            ..Self::default()
        }
    }

    /// Switches these settings to `ablation`, keeping everything else.
    pub fn with_ablation(&self, ablation: Ablation) -> Self {
        let (normalize_boxes, use_masks) = ablation.switches();
        Self {
            use_masks,
            normalize_boxes,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.mask_crop_size;
        if s < 8 || !s.is_power_of_two() {
            return Err(Error::InvalidParameter(format!(
                "mask_crop_size {s} must be a power of two >= 8"
            )));
        }
        let min_dim = if self.include_score { 7 } else { 6 };
        if self.feature_dim < min_dim {
            return Err(Error::InvalidParameter(format!(
                "feature_dim {} below {min_dim}",
                self.feature_dim
            )));
        }
        if self.image_size == 0 {
            return Err(Error::InvalidParameter("image_size must be positive".into()));
        }
        Ok(())
    }

    /// Length of each step vector reaching the recurrent cell.
    pub fn step_dim(&self) -> usize {
        if self.use_masks && self.combine == Combine::Concat {
            2 * self.feature_dim
        } else {
            self.feature_dim
        }
    }
}

/// Box/kind vector of one detection, before the mask branch.
pub fn base_vector(det: &Detection, cfg: &EncoderConfig) -> Result<Vec<f64>> {
    let b = det.bbox();
    if !b.fits_within(cfg.image_size, cfg.image_size) {
        return Err(Error::Validation(format!(
            "box {b} outside {0}x{0} image",
            cfg.image_size
        )));
    }
    let scale = if cfg.normalize_boxes {
        cfg.image_size as f64
    } else {
        1.0
    };
    let mut v = vec![0.0; cfg.feature_dim];
    for (slot, coord) in v.iter_mut().zip(b.as_array()) {
        *slot = coord as f64 / scale;
    }
    let [ex, ma] = det.kind().one_hot();
    v[4] = ex;
    v[5] = ma;
    if cfg.include_score {
        v[6] = det.score();
    }
    Ok(v)
}

/// Crops `mask` to `bbox` and resamples it to `size`×`size` by nearest
/// neighbour, as 0/1 values.
pub fn crop_mask(mask: &BinaryMask, bbox: &BoundingBox, size: usize) -> Result<Vec<f64>> {
    if mask.is_empty() {
        return Err(Error::DegenerateInput("cannot encode an empty mask".into()));
    }
    if !bbox.fits_within(mask.width(), mask.height()) {
        return Err(Error::Validation(format!("box {bbox} outside mask")));
    }
    let (bw, bh) = (bbox.width() as usize, bbox.height() as usize);
    let mut out = vec![0.0; size * size];
    for v in 0..size {
        let y = bbox.y_min as usize + (v * bh) / size;
        for u in 0..size {
            let x = bbox.x_min as usize + (u * bw) / size;
            if mask.get(x, y) {
                out[v * size + u] = 1.0;
            }
        }
    }
    Ok(out)
}

/// Mask-branch output for one instance.
pub fn encode_mask(mask: &BinaryMask, bbox: &BoundingBox, encoder: &MaskEncoder) -> Result<Vec<f64>> {
    let crop = crop_mask(mask, bbox, encoder.crop_size())?;
    Ok(encoder.forward(&crop)?.0)
}

pub fn combine_step(base: &[f64], mask_features: Option<&[f64]>, combine: Combine) -> Vec<f64> {
    match (mask_features, combine) {
        (None, _) => base.to_vec(),
        (Some(m), Combine::Add) => base.iter().zip(m).map(|(a, b)| a + b).collect(),
        (Some(m), Combine::Concat) => base.iter().chain(m).copied().collect(),
    }
}

/// Feature vector of one detection; `encoder` is required when masks are on.
pub fn encode_detection(
    det: &Detection,
    cfg: &EncoderConfig,
    encoder: Option<&MaskEncoder>,
) -> Result<Vec<f64>> {
    let base = base_vector(det, cfg)?;
    if !cfg.use_masks {
        return Ok(base);
    }
    let mask = det.mask().ok_or(Error::MissingMask)?;
    let encoder = encoder.ok_or_else(|| {
        Error::InvalidParameter("mask encoder weights required when use_masks is set".into())
    })?;
    let m = encode_mask(mask, det.bbox(), encoder)?;
    Ok(combine_step(&base, Some(&m), cfg.combine))
}

/// Detections in raster order of their boxes: `(y_min, x_min)`, then EX
/// before MA, then remaining box extent and descending score.
pub fn order_detections(dets: &DetectionSet) -> Vec<&Detection> {
    let mut v: Vec<&Detection> = dets.detections().iter().collect();
    v.sort_by(|a, b| {
        let (ba, bb) = (a.bbox(), b.bbox());
        (ba.y_min, ba.x_min, a.kind(), ba.y_max, ba.x_max)
            .cmp(&(bb.y_min, bb.x_min, b.kind(), bb.y_max, bb.x_max))
            .then(b.score().total_cmp(&a.score()))
    });
    v
}

/// One step of trainable input: the base vector and, with masks on, the
/// resampled mask crop that the model's own encoder consumes.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceStep {
    pub features: Vec<f64>,
    pub mask_crop: Option<Vec<f64>>,
}

/// Raw per-detection input for end-to-end training through the mask encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceInput {
    pub image_id: String,
    pub steps: Vec<SequenceStep>,
}

/// Fully encoded sequence: one feature vector per detection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSequence {
    pub image_id: String,
    pub steps: Vec<Vec<f64>>,
}

impl FeatureSequence {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Single-line JSON record for debugging dumps.
    pub fn to_record(&self) -> String {
        serde_json::to_string(self).expect("finite values serialize")
    }
}

/// Ordered steps for `dets`; an empty set becomes one all-zero step.
pub fn prepare_sequence(dets: &DetectionSet, cfg: &EncoderConfig) -> Result<SequenceInput> {
    cfg.validate()?;
    let mut steps = Vec::with_capacity(dets.len().max(1));
    for det in order_detections(dets) {
        let features = base_vector(det, cfg)?;
        let mask_crop = if cfg.use_masks {
            let mask = det.mask().ok_or(Error::MissingMask)?;
            Some(crop_mask(mask, det.bbox(), cfg.mask_crop_size)?)
        } else {
            None
        };
        steps.push(SequenceStep { features, mask_crop });
    }
    if steps.is_empty() {
        steps.push(SequenceStep {
            features: vec![0.0; cfg.feature_dim],
            mask_crop: None,
        });
    }
    Ok(SequenceInput {
        image_id: dets.image_id().to_string(),
        steps,
    })
}

/// Sentinel step vector used for images with no detections.
pub fn sentinel_step(cfg: &EncoderConfig) -> Vec<f64> {
    vec![0.0; cfg.step_dim()]
}

pub fn build_sequence(
    dets: &DetectionSet,
    cfg: &EncoderConfig,
    encoder: Option<&MaskEncoder>,
) -> Result<FeatureSequence> {
    cfg.validate()?;
    let steps = if dets.is_empty() {
        vec![sentinel_step(cfg)]
    } else {
        order_detections(dets)
            .into_iter()
            .map(|d| encode_detection(d, cfg, encoder))
            .collect::<Result<_>>()?
    };
    Ok(FeatureSequence {
        image_id: dets.image_id().to_string(),
        steps,
    })
}
