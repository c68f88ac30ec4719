//! Line-delimited detection records.
//!
//! Each line is a JSON object:
//!
//! ```text
//! {"image_id":"img_001","kind":"EX","score":0.93,"box":[12,40,19,46],"mask_rle":"256,256;10252,3,253,5"}
//! ```
//!
//! `mask_rle` is optional. It starts with `W,H;` followed by comma separated
//! run lengths that alternate between 0s and 1s, always starting with a run
//! of 0s (possibly of length zero), in row-major order. A line carrying only
//! `image_id` declares an image with no detections.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{BinaryMask, BoundingBox, Detection, DetectionSet, LesionKind};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionRecord {
    pub image_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<LesionKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    #[serde(rename = "box", default, skip_serializing_if = "Option::is_none")]
    pub bbox: Option<[u32; 4]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_rle: Option<String>,
}

impl DetectionRecord {
    pub fn from_detection(image_id: &str, det: &Detection) -> Self {
        Self {
            image_id: image_id.to_string(),
            kind: Some(det.kind()),
            score: Some(det.score()),
            bbox: Some(det.bbox().as_array()),
            mask_rle: det.mask().map(encode_rle),
        }
    }

    pub fn empty_image(image_id: &str) -> Self {
        Self {
            image_id: image_id.to_string(),
            kind: None,
            score: None,
            bbox: None,
            mask_rle: None,
        }
    }

    /// `Ok(None)` for an empty-image marker line.
    pub fn to_detection(&self) -> Result<Option<Detection>> {
        let (kind, score, bbox) = match (self.kind, self.score, self.bbox) {
            (None, None, None) if self.mask_rle.is_none() => return Ok(None),
            (Some(k), Some(s), Some(b)) => (k, s, b),
            _ => {
                return Err(Error::Format(
                    "record needs kind, score and box (or none of them)".into(),
                ))
            }
        };
        let bbox = BoundingBox::new(bbox[0], bbox[1], bbox[2], bbox[3])?;
        let det = match &self.mask_rle {
            Some(rle) => {
                let mask = decode_rle(rle)?;
                if !bbox.fits_within(mask.width(), mask.height()) {
                    return Err(Error::Validation(format!(
                        "box {bbox} outside {}x{} mask",
                        mask.width(),
                        mask.height()
                    )));
                }
                Detection::from_mask(kind, score, mask)?
            }
            None => Detection::from_box(kind, score, bbox)?,
        };
        Ok(Some(det))
    }
}

/// Run-length encodes a mask as `W,H;r0,r1,...`.
pub fn encode_rle(mask: &BinaryMask) -> String {
    let mut runs: Vec<usize> = Vec::new();
    let mut current = false;
    let mut len = 0usize;
    for &b in mask.bits() {
        if b == current {
            len += 1;
        } else {
            runs.push(len);
            current = b;
            len = 1;
        }
    }
    runs.push(len);
    let body: Vec<String> = runs.iter().map(|r| r.to_string()).collect();
    format!("{},{};{}", mask.width(), mask.height(), body.join(","))
}

pub fn decode_rle(text: &str) -> Result<BinaryMask> {
    let (header, body) = text
        .split_once(';')
        .ok_or_else(|| Error::Format("RLE missing `W,H;` header".into()))?;
    let (w, h) = header
        .split_once(',')
        .ok_or_else(|| Error::Format(format!("bad RLE header {header:?}")))?;
    let parse = |s: &str| {
        s.trim()
            .parse::<usize>()
            .map_err(|_| Error::Format(format!("bad RLE integer {s:?}")))
    };
    let (width, height) = (parse(w)?, parse(h)?);
    let total = width
        .checked_mul(height)
        .ok_or_else(|| Error::Format("RLE dimensions overflow".into()))?;
    let mut bits = Vec::with_capacity(total);
    let mut value = false;
    if !body.trim().is_empty() {
        for run in body.split(',') {
            let n = parse(run)?;
            if bits.len() + n > total {
                return Err(Error::Format(format!(
                    "RLE runs exceed declared {width}x{height}"
                )));
            }
            bits.extend(std::iter::repeat_n(value, n));
            value = !value;
        }
    }
    if bits.len() != total {
        return Err(Error::Format(format!(
            "RLE runs cover {} pixels, declared {width}x{height} = {total}",
            bits.len()
        )));
    }
    BinaryMask::from_bits(width, height, bits)
}

/// Parses detection records, grouping them by `image_id` in order of first
/// appearance. Blank lines are ignored.
pub fn parse_detection_records(reader: impl BufRead) -> Result<Vec<DetectionSet>> {
    let mut order: Vec<String> = Vec::new();
    let mut groups: HashMap<String, Vec<Detection>> = HashMap::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let at_line = |e: Error| Error::Parse {
            line: line_no,
            message: e.to_string(),
        };
        let record: DetectionRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let det = record.to_detection().map_err(at_line)?;
        let group = groups.entry(record.image_id.clone()).or_insert_with(|| {
            order.push(record.image_id.clone());
            Vec::new()
        });
        if let Some(d) = det {
            group.push(d);
        }
    }
    order
        .into_iter()
        .map(|id| {
            let dets = groups.remove(&id).unwrap_or_default();
            DetectionSet::new(id, dets)
        })
        .collect()
}

pub fn write_detection_records(mut out: impl Write, sets: &[DetectionSet]) -> std::io::Result<()> {
    for set in sets {
        if set.is_empty() {
            let rec = DetectionRecord::empty_image(set.image_id());
            writeln!(out, "{}", serde_json::to_string(&rec)?)?;
        }
        for det in set.detections() {
            let rec = DetectionRecord::from_detection(set.image_id(), det);
            writeln!(out, "{}", serde_json::to_string(&rec)?)?;
        }
    }
    Ok(())
}

pub fn read_detection_file(path: &Path) -> Result<Vec<DetectionSet>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_detection_records(BufReader::new(file))
}

pub fn write_detection_file(path: &Path, sets: &[DetectionSet]) -> Result<()> {
    let mut buf = Vec::new();
    write_detection_records(&mut buf, sets).map_err(|e| Error::io(path, e))?;
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}
