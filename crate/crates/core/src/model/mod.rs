//! Shared domain types: rasters, boxes, detections and severity grades.

mod manifest;
mod records;

pub use manifest::{
    validate_manifest, DatasetManifest, ManifestEntry, ManifestIssue, Split, ValidationReport,
};
pub use records::{
    decode_rle, encode_rle, parse_detection_records, read_detection_file, write_detection_file,
    write_detection_records, DetectionRecord,
};

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// An RGB retina photograph with intensities in `[0, 1]`, stored row-major
/// and channel-interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct FundusImage {
    id: String,
    width: usize,
    height: usize,
    pixels: Vec<f32>,
}

impl FundusImage {
    pub const CHANNELS: usize = 3;

    pub fn new(id: impl Into<String>, width: usize, height: usize, pixels: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Shape(format!("image must be non-empty, got {width}x{height}")));
        }
        if pixels.len() != width * height * Self::CHANNELS {
            return Err(Error::Shape(format!(
                "expected {} intensities for {width}x{height} RGB, got {}",
                width * height * Self::CHANNELS,
                pixels.len()
            )));
        }
        if let Some(bad) = pixels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Range(format!("intensity {bad} outside [0,1]")));
        }
        Ok(Self {
            id: id.into(),
            width,
            height,
            pixels,
        })
    }

    /// Image filled with a single color.
    pub fn filled(id: impl Into<String>, width: usize, height: usize, rgb: [f32; 3]) -> Result<Self> {
        let pixels = (0..width * height).flat_map(|_| rgb).collect();
        Self::new(id, width, height, pixels)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, channel: usize) -> f32 {
        self.pixels[(y * self.width + x) * Self::CHANNELS + channel]
    }

    #[inline]
    pub fn rgb(&self, x: usize, y: usize) -> [f32; 3] {
        let i = (y * self.width + x) * Self::CHANNELS;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    /// Writes a pixel, clamping every channel into `[0, 1]`.
    #[inline]
    pub fn set_rgb(&mut self, x: usize, y: usize, rgb: [f32; 3]) {
        let i = (y * self.width + x) * Self::CHANNELS;
        for (c, v) in rgb.into_iter().enumerate() {
            self.pixels[i + c] = v.clamp(0.0, 1.0);
        }
    }

    /// One channel as a dense plane.
    pub fn channel(&self, channel: usize) -> Vec<f32> {
        self.pixels
            .iter()
            .skip(channel)
            .step_by(Self::CHANNELS)
            .copied()
            .collect()
    }

    /// Mean of the three channels per pixel.
    pub fn gray(&self) -> Vec<f32> {
        self.pixels
            .chunks_exact(Self::CHANNELS)
            .map(|p| (p[0] + p[1] + p[2]) / 3.0)
            .collect()
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }
}

/// One boolean per pixel, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn from_bits(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width * height {
            return Err(Error::Shape(format!(
                "mask of {width}x{height} needs {} bits, got {}",
                width * height,
                bits.len()
            )));
        }
        Ok(Self { width, height, bits })
    }

    /// Mask with every pixel of `bbox` set.
    pub fn from_box(width: usize, height: usize, bbox: &BoundingBox) -> Self {
        let mut m = Self::new(width, height);
        for y in bbox.y_min as usize..(bbox.y_max as usize).min(height) {
            for x in bbox.x_min as usize..(bbox.x_max as usize).min(width) {
                m.set(x, y, true);
            }
        }
        m
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        self.bits[y * self.width + x] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|b| *b)
    }

    pub fn same_shape(&self, other: &BinaryMask) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Number of pixels set in both masks.
    pub fn intersection_count(&self, other: &BinaryMask) -> usize {
        self.bits
            .iter()
            .zip(&other.bits)
            .filter(|(a, b)| **a && **b)
            .count()
    }

    /// Number of pixels set in either mask.
    pub fn union_count(&self, other: &BinaryMask) -> usize {
        self.bits
            .iter()
            .zip(&other.bits)
            .filter(|(a, b)| **a || **b)
            .count()
    }

    pub fn union_with(&mut self, other: &BinaryMask) {
        for (a, b) in self.bits.iter_mut().zip(&other.bits) {
            *a |= *b;
        }
    }

    /// Iterator over `(x, y)` of set pixels in raster order.
    pub fn set_pixels(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let w = self.width;
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, b)| **b)
            .map(move |(i, _)| (i % w, i / w))
    }

    /// Minimal half-open box containing every set pixel, `None` when empty.
    pub fn tight_bbox(&self) -> Option<BoundingBox> {
        let mut acc: Option<(usize, usize, usize, usize)> = None;
        for (x, y) in self.set_pixels() {
            acc = Some(match acc {
                None => (x, y, x, y),
                Some((x0, y0, x1, y1)) => (x0.min(x), y0.min(y), x1.max(x), y1.max(y)),
            });
        }
        acc.map(|(x0, y0, x1, y1)| BoundingBox {
            x_min: x0 as u32,
            y_min: y0 as u32,
            x_max: x1 as u32 + 1,
            y_max: y1 as u32 + 1,
        })
    }
}

/// Integer pixel box, half-open: `[x_min, x_max) x [y_min, y_max)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x_min: u32,
    pub y_min: u32,
    pub x_max: u32,
    pub y_max: u32,
}

impl BoundingBox {
    pub fn new(x_min: u32, y_min: u32, x_max: u32, y_max: u32) -> Result<Self> {
        if x_min >= x_max || y_min >= y_max {
            return Err(Error::Validation(format!(
                "box [{x_min},{y_min},{x_max},{y_max}] has non-positive area"
            )));
        }
        Ok(Self {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }

    pub fn width(&self) -> u32 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> u32 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> u64 {
        self.width() as u64 * self.height() as u64
    }

    pub fn fits_within(&self, width: usize, height: usize) -> bool {
        self.x_max as usize <= width && self.y_max as usize <= height
    }

    pub fn intersection_area(&self, other: &BoundingBox) -> u64 {
        let w = self.x_max.min(other.x_max).saturating_sub(self.x_min.max(other.x_min));
        let h = self.y_max.min(other.y_max).saturating_sub(self.y_min.max(other.y_min));
        w as u64 * h as u64
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        (self.x_min as usize..self.x_max as usize).contains(&x)
            && (self.y_min as usize..self.y_max as usize).contains(&y)
    }

    pub fn as_array(&self) -> [u32; 4] {
        [self.x_min, self.y_min, self.x_max, self.y_max]
    }
}

impl fmt::Display for BoundingBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{},{},{},{}]", self.x_min, self.y_min, self.x_max, self.y_max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LesionKind {
    /// Exudate: bright lipid deposit.
    #[serde(rename = "EX")]
    Ex,
    /// Microaneurysm: tiny dark vascular lesion.
    #[serde(rename = "MA")]
    Ma,
}

impl LesionKind {
    pub const ALL: [LesionKind; 2] = [LesionKind::Ex, LesionKind::Ma];

    pub fn as_str(&self) -> &'static str {
        match self {
            LesionKind::Ex => "EX",
            LesionKind::Ma => "MA",
        }
    }

    pub fn one_hot(&self) -> [f64; 2] {
        match self {
            LesionKind::Ex => [1.0, 0.0],
            LesionKind::Ma => [0.0, 1.0],
        }
    }
}

impl fmt::Display for LesionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LesionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "EX" => Ok(LesionKind::Ex),
            "MA" => Ok(LesionKind::Ma),
            other => Err(Error::Format(format!("unknown lesion kind {other:?}, expected EX or MA"))),
        }
    }
}

/// One lesion instance.
///
/// When a mask is present the box is always the tight bounding box of the
/// mask, whatever box the source supplied.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    kind: LesionKind,
    score: f64,
    bbox: BoundingBox,
    mask: Option<BinaryMask>,
}

fn check_score(score: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&score) {
        return Err(Error::Range(format!("score {score} outside [0,1]")));
    }
    Ok(())
}

impl Detection {
    pub fn from_box(kind: LesionKind, score: f64, bbox: BoundingBox) -> Result<Self> {
        check_score(score)?;
        let bbox = BoundingBox::new(bbox.x_min, bbox.y_min, bbox.x_max, bbox.y_max)?;
        Ok(Self {
            kind,
            score,
            bbox,
            mask: None,
        })
    }

    pub fn from_mask(kind: LesionKind, score: f64, mask: BinaryMask) -> Result<Self> {
        check_score(score)?;
        let bbox = mask
            .tight_bbox()
            .ok_or_else(|| Error::DegenerateInput("instance mask has no set pixels".into()))?;
        Ok(Self {
            kind,
            score,
            bbox,
            mask: Some(mask),
        })
    }

    pub fn kind(&self) -> LesionKind {
        self.kind
    }

    pub fn score(&self) -> f64 {
        self.score
    }

    pub fn bbox(&self) -> &BoundingBox {
        &self.bbox
    }

    pub fn mask(&self) -> Option<&BinaryMask> {
        self.mask.as_ref()
    }

    pub fn with_score(mut self, score: f64) -> Result<Self> {
        check_score(score)?;
        self.score = score;
        Ok(self)
    }

    pub fn without_mask(mut self) -> Self {
        self.mask = None;
        self
    }
}

/// All lesion instances reported for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionSet {
    image_id: String,
    detections: Vec<Detection>,
}

impl DetectionSet {
    pub fn new(image_id: impl Into<String>, detections: Vec<Detection>) -> Result<Self> {
        let mut shape = None;
        for d in &detections {
            if let Some(m) = d.mask() {
                match shape {
                    None => shape = Some((m.width(), m.height())),
                    Some(s) if s != (m.width(), m.height()) => {
                        return Err(Error::Shape(format!(
                            "masks in one detection set disagree: {}x{} vs {}x{}",
                            s.0,
                            s.1,
                            m.width(),
                            m.height()
                        )))
                    }
                    Some(_) => {}
                }
            }
        }
        Ok(Self {
            image_id: image_id.into(),
            detections,
        })
    }

    pub fn empty(image_id: impl Into<String>) -> Self {
        Self {
            image_id: image_id.into(),
            detections: Vec::new(),
        }
    }

    pub fn image_id(&self) -> &str {
        &self.image_id
    }

    pub fn detections(&self) -> &[Detection] {
        &self.detections
    }

    pub fn len(&self) -> usize {
        self.detections.len()
    }

    pub fn is_empty(&self) -> bool {
        self.detections.is_empty()
    }

    pub fn into_detections(self) -> Vec<Detection> {
        self.detections
    }

    /// Dimensions shared by the masks, if any detection carries one.
    pub fn mask_shape(&self) -> Option<(usize, usize)> {
        self.detections
            .iter()
            .find_map(|d| d.mask().map(|m| (m.width(), m.height())))
    }

    pub fn count_kind(&self, kind: LesionKind) -> usize {
        self.detections.iter().filter(|d| d.kind() == kind).count()
    }
}

/// Three-level retinopathy severity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum SeverityGrade {
    Healthy = 0,
    Medium = 1,
    Severe = 2,
}

impl SeverityGrade {
    pub const ALL: [SeverityGrade; 3] = [
        SeverityGrade::Healthy,
        SeverityGrade::Medium,
        SeverityGrade::Severe,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Result<Self> {
        Self::ALL
            .get(i)
            .copied()
            .ok_or_else(|| Error::Range(format!("severity {i} outside 0..=2")))
    }
}

impl From<SeverityGrade> for u8 {
    fn from(g: SeverityGrade) -> u8 {
        g as u8
    }
}

impl TryFrom<u8> for SeverityGrade {
    type Error = Error;

    fn try_from(v: u8) -> Result<Self> {
        SeverityGrade::from_index(v as usize)
    }
}

impl fmt::Display for SeverityGrade {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.index())
    }
}

/// Table collapsing the 0–4 screening scale onto three grades.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeverityMapping {
    pub table: [SeverityGrade; 5],
}

impl Default for SeverityMapping {
    fn default() -> Self {
        use SeverityGrade::*;
        Self {
            table: [Healthy, Medium, Medium, Severe, Severe],
        }
    }
}

impl SeverityMapping {
    pub fn map(&self, raw: i64) -> Result<SeverityGrade> {
        usize::try_from(raw)
            .ok()
            .and_then(|i| self.table.get(i).copied())
            .ok_or_else(|| Error::Range(format!("raw severity {raw} outside 0..=4")))
    }
}

/// Maps a raw 0–4 label with the default table.
pub fn map_raw_severity(raw: i64) -> Result<SeverityGrade> {
    SeverityMapping::default().map(raw)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn raw_severity_default_table() {
        assert_eq!(map_raw_severity(0).unwrap(), SeverityGrade::Healthy);
        assert_eq!(map_raw_severity(1).unwrap(), SeverityGrade::Medium);
        assert_eq!(map_raw_severity(2).unwrap(), SeverityGrade::Medium);
        assert_eq!(map_raw_severity(3).unwrap(), SeverityGrade::Severe);
        assert_eq!(map_raw_severity(4).unwrap(), SeverityGrade::Severe);
        assert!(matches!(map_raw_severity(5), Err(Error::Range(_))));
        assert!(matches!(map_raw_severity(-1), Err(Error::Range(_))));
    }

    #[test]
    fn default_mapping_is_surjective() {
        let m = SeverityMapping::default();
        let mut seen: Vec<_> = (0..5).map(|r| m.map(r).unwrap()).collect();
        seen.dedup();
        assert_eq!(seen, SeverityGrade::ALL.to_vec());
    }

    #[test]
    fn detection_rejects_empty_mask_and_bad_score() {
        let m = BinaryMask::new(4, 4);
        assert!(matches!(
            Detection::from_mask(LesionKind::Ma, 0.5, m.clone()),
            Err(Error::DegenerateInput(_))
        ));
        let mut m = m;
        m.set(1, 2, true);
        assert!(Detection::from_mask(LesionKind::Ma, 1.5, m.clone()).is_err());
        assert!(Detection::from_mask(LesionKind::Ma, -0.1, m.clone()).is_err());
        assert!(Detection::from_mask(LesionKind::Ma, f64::NAN, m.clone()).is_err());
        let d = Detection::from_mask(LesionKind::Ma, 1.0, m).unwrap();
        assert_eq!(*d.bbox(), BoundingBox::new(1, 2, 2, 3).unwrap());
    }

    #[test]
    fn box_validation() {
        assert!(BoundingBox::new(3, 3, 3, 4).is_err());
        let b = BoundingBox::new(0, 0, 10, 10).unwrap();
        assert_eq!(b.area(), 100);
        assert_eq!(b.intersection_area(&BoundingBox::new(5, 0, 15, 10).unwrap()), 50);
        assert_eq!(b.intersection_area(&BoundingBox::new(20, 20, 30, 30).unwrap()), 0);
    }

    #[test]
    fn detection_set_rejects_mixed_shapes() {
        let mut a = BinaryMask::new(4, 4);
        a.set(0, 0, true);
        let mut b = BinaryMask::new(5, 4);
        b.set(0, 0, true);
        let dets = vec![
            Detection::from_mask(LesionKind::Ex, 0.9, a).unwrap(),
            Detection::from_mask(LesionKind::Ex, 0.9, b).unwrap(),
        ];
        assert!(matches!(DetectionSet::new("x", dets), Err(Error::Shape(_))));
    }

    #[test]
    fn fundus_image_rejects_out_of_range() {
        assert!(FundusImage::new("a", 1, 1, vec![0.0, 0.5, 1.2]).is_err());
        assert!(FundusImage::new("a", 1, 1, vec![0.0, 0.5]).is_err());
        assert!(FundusImage::new("a", 0, 1, vec![]).is_err());
        assert!(FundusImage::new("a", 1, 1, vec![0.0, 0.5, 1.0]).is_ok());
    }
}
