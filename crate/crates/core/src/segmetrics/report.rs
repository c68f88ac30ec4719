//! Phase-one tables: mAP per split at several IOU thresholds.

use std::fmt::Write as _;

use rayon::prelude::*;

use super::ap::{average_precision_exact, to_f64};
use super::matching::check_threshold;
use crate::error::{Error, Result};
use crate::model::{DetectionSet, Split};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::Zero;

pub const DEFAULT_THRESHOLDS: [f64; 3] = [0.35, 0.50, 0.75];

/// Column header in the `mAP_35` style.
pub fn threshold_label(t: f64) -> String {
    let pct = t * 100.0;
    if (pct - pct.round()).abs() < 1e-9 {
        format!("mAP_{}", pct.round() as i64)
    } else {
        format!("mAP_{pct}")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageAp {
    pub image_id: String,
    pub ground_truths: usize,
    pub predictions: usize,
    /// One entry per threshold; `None` when the image has no ground truth.
    pub ap: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitRow {
    pub split: Split,
    pub images: usize,
    pub eligible_images: usize,
    pub predictions: usize,
    pub ground_truths: usize,
    pub map: Vec<f64>,
    pub per_image: Vec<ImageAp>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub thresholds: Vec<f64>,
    pub rows: Vec<SplitRow>,
}

/// Pairs of `(predictions, ground truth)` for every image of one split.
pub type SplitResults = Vec<(DetectionSet, DetectionSet)>;

fn evaluate_split(split: Split, results: &[(DetectionSet, DetectionSet)], thresholds: &[f64]) -> Result<SplitRow> {
    if results.is_empty() {
        return Err(Error::Config(format!("split {split} has no images")));
    }
    // per-image work in parallel, reduction in input order
    let exact: Vec<Vec<Option<BigRational>>> = results
        .par_iter()
        .map(|(p, g)| {
            thresholds
                .iter()
                .map(|&t| average_precision_exact(p, g, t))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let eligible = results.iter().filter(|(_, g)| !g.is_empty()).count();
    if eligible == 0 {
        return Err(Error::UndefinedMetric(format!(
            "split {split} has no image with ground truth"
        )));
    }
    let map = (0..thresholds.len())
        .map(|k| {
            let sum = exact
                .iter()
                .filter_map(|row| row[k].as_ref())
                .fold(BigRational::zero(), |acc, v| acc + v);
            to_f64(&(sum / BigInt::from(eligible)))
        })
        .collect();
    let per_image = results
        .iter()
        .zip(&exact)
        .map(|((p, g), row)| ImageAp {
            image_id: g.image_id().to_string(),
            ground_truths: g.len(),
            predictions: p.len(),
            ap: row.iter().map(|v| v.as_ref().map(to_f64)).collect(),
        })
        .collect();
    Ok(SplitRow {
        split,
        images: results.len(),
        eligible_images: eligible,
        predictions: results.iter().map(|(p, _)| p.len()).sum(),
        ground_truths: results.iter().map(|(_, g)| g.len()).sum(),
        map,
        per_image,
    })
}

pub fn phase1_report(splits: &[(Split, SplitResults)], thresholds: &[f64]) -> Result<EvalReport> {
    if splits.is_empty() {
        return Err(Error::Config("no splits to evaluate".into()));
    }
    if thresholds.is_empty() {
        return Err(Error::InvalidParameter("no IOU thresholds".into()));
    }
    for &t in thresholds {
        check_threshold(t)?;
    }
    let rows = splits
        .iter()
        .map(|(s, r)| evaluate_split(*s, r, thresholds))
        .collect::<Result<_>>()?;
    Ok(EvalReport {
        thresholds: thresholds.to_vec(),
        rows,
    })
}

impl EvalReport {
    /// Aligned plain-text table, values with 4 decimals.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let labels: Vec<String> = self.thresholds.iter().map(|t| threshold_label(*t)).collect();
        let _ = write!(out, "{:<12}", "test option");
        for l in &labels {
            let _ = write!(out, " {l:>8}");
        }
        out.push('\n');
        for row in &self.rows {
            let _ = write!(out, "{:<12}", row.split.as_str());
            for v in &row.map {
                let _ = write!(out, " {v:>8.4}");
            }
            out.push('\n');
        }
        out
    }

    /// One JSON object per split, numbers with exactly 4 decimals.
    pub fn to_records(&self) -> String {
        let mut out = String::new();
        for row in &self.rows {
            let _ = write!(
                out,
                "{{\"split\":\"{}\",\"images\":{},\"eligible_images\":{},\"predictions\":{},\"ground_truths\":{}",
                row.split, row.images, row.eligible_images, row.predictions, row.ground_truths
            );
            for (t, v) in self.thresholds.iter().zip(&row.map) {
                let _ = write!(out, ",\"{}\":{v:.4}", threshold_label(*t));
            }
            out.push_str("}\n");
        }
        out
    }

    /// Per-image AP as CSV; images without ground truth show `NA`.
    pub fn per_image_csv(&self) -> String {
        let mut out = String::from("image_id,split,ground_truths,predictions");
        for t in &self.thresholds {
            let _ = write!(out, ",ap_{}", &threshold_label(*t)[4..]);
        }
        out.push('\n');
        for row in &self.rows {
            for img in &row.per_image {
                let _ = write!(out, "{},{},{},{}", img.image_id, row.split, img.ground_truths, img.predictions);
                for v in &img.ap {
                    match v {
                        Some(v) => {
                            let _ = write!(out, ",{v:.4}");
                        }
                        None => out.push_str(",NA"),
                    }
                }
                out.push('\n');
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{BoundingBox, Detection, LesionKind};

    fn set(id: &str, boxes: &[[u32; 4]]) -> DetectionSet {
        DetectionSet::new(
            id,
            boxes
                .iter()
                .map(|b| Detection::from_box(LesionKind::Ex, 1.0, BoundingBox::new(b[0], b[1], b[2], b[3]).unwrap()).unwrap())
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn perfect_detector_gives_ones() {
        let g = set("a", &[[0, 0, 8, 8], [10, 10, 20, 20]]);
        let splits: Vec<(Split, SplitResults)> =
            Split::ALL.iter().map(|s| (*s, vec![(g.clone(), g.clone())])).collect();
        let r = phase1_report(&splits, &DEFAULT_THRESHOLDS).unwrap();
        assert_eq!(r.rows.len(), 3);
        for row in &r.rows {
            assert_eq!(row.map, vec![1.0; 3]);
        }
        assert!(r.to_table().contains("mAP_35"));
        assert!(r.to_table().contains("1.0000"));
        assert!(r.to_records().contains("\"mAP_75\":1.0000"));
    }

    #[test]
    fn empty_split_is_config_error() {
        let splits = vec![(Split::Train, vec![])];
        assert!(matches!(phase1_report(&splits, &DEFAULT_THRESHOLDS), Err(Error::Config(_))));
        let e = DetectionSet::empty("x");
        let splits = vec![(Split::Train, vec![(e.clone(), e)])];
        assert!(matches!(phase1_report(&splits, &DEFAULT_THRESHOLDS), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn labels() {
        assert_eq!(threshold_label(0.35), "mAP_35");
        assert_eq!(threshold_label(0.5), "mAP_50");
        assert_eq!(threshold_label(0.75), "mAP_75");
    }

    #[test]
    fn csv_marks_skipped_images() {
        let g = set("a", &[[0, 0, 8, 8]]);
        let splits = vec![(Split::Test, vec![(g.clone(), g), (set("b", &[]), set("b", &[]))])];
        let csv = phase1_report(&splits, &[0.5]).unwrap().per_image_csv();
        assert_eq!(csv, "image_id,split,ground_truths,predictions,ap_50\na,test,1,1,1.0000\nb,test,0,0,NA\n");
    }
}
