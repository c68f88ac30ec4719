//! Per-image average precision and its mean over a dataset.
//!
//! AP is the area under the interpolated precision/recall curve: walking the
//! ranked predictions, every true positive adds `1 / |gt|` of recall at the
//! best precision reachable from that rank onward. Sums are kept as exact
//! rationals and rounded to `f64` once.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use serde::Serialize;

use super::matching::match_detections;
use crate::error::{Error, Result};
use crate::model::DetectionSet;

fn ratio(n: usize, d: usize) -> BigRational {
    BigRational::new(BigInt::from(n), BigInt::from(d))
}

/// Exact AP from true-positive flags in rank order. `None` when there is no
/// ground truth.
pub fn average_precision_from_hits(hits: &[bool], gt_count: usize) -> Option<BigRational> {
    if gt_count == 0 {
        return None;
    }
    let mut tp = 0usize;
    let precision: Vec<BigRational> = hits
        .iter()
        .enumerate()
        .map(|(k, hit)| {
            tp += *hit as usize;
            ratio(tp, k + 1)
        })
        .collect();
    // running maximum from the right gives the interpolated envelope
    let mut envelope = precision.clone();
    for k in (0..envelope.len().saturating_sub(1)).rev() {
        if envelope[k + 1] > envelope[k] {
            envelope[k] = envelope[k + 1].clone();
        }
    }
    let sum = hits
        .iter()
        .zip(envelope)
        .filter(|(h, _)| **h)
        .fold(BigRational::zero(), |acc, (_, p)| acc + p);
    Some(sum / BigInt::from(gt_count))
}

/// Exact AP of one image, matching with masks where both sides have them.
pub fn average_precision_exact(
    preds: &DetectionSet,
    gts: &DetectionSet,
    threshold: f64,
) -> Result<Option<BigRational>> {
    let m = match_detections(preds, gts, threshold, true)?;
    Ok(average_precision_from_hits(&m.hits_in_rank_order(), gts.len()))
}

/// AP of one image; `Ok(None)` signals an image without ground truth, which
/// is skipped rather than scored.
pub fn average_precision(preds: &DetectionSet, gts: &DetectionSet, threshold: f64) -> Result<Option<f64>> {
    Ok(average_precision_exact(preds, gts, threshold)?.map(|r| to_f64(&r)))
}

pub(crate) fn to_f64(r: &BigRational) -> f64 {
    r.to_f64().expect("AP is a finite rational in [0,1]")
}

/// Exact mean of per-image AP over images with at least one ground truth.
pub fn mean_average_precision_exact(
    results: &[(DetectionSet, DetectionSet)],
    threshold: f64,
) -> Result<BigRational> {
    let mut sum = BigRational::zero();
    let mut n = 0usize;
    for (preds, gts) in results {
        if let Some(ap) = average_precision_exact(preds, gts, threshold)? {
            sum += ap;
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::UndefinedMetric(
            "mAP needs at least one image with ground truth".into(),
        ));
    }
    Ok(sum / BigInt::from(n))
}

pub fn mean_average_precision(results: &[(DetectionSet, DetectionSet)], threshold: f64) -> Result<f64> {
    mean_average_precision_exact(results, threshold).map(|r| to_f64(&r))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PrPoint {
    pub rank: usize,
    pub score: f64,
    pub precision: f64,
    pub recall: f64,
}

/// Raw precision/recall after each ranked prediction.
pub fn pr_curve(preds: &DetectionSet, gts: &DetectionSet, threshold: f64) -> Result<Vec<PrPoint>> {
    let m = match_detections(preds, gts, threshold, true)?;
    let g = gts.len().max(1) as f64;
    let mut tp = 0usize;
    Ok(m.ranking
        .iter()
        .zip(m.hits_in_rank_order())
        .enumerate()
        .map(|(k, (&pi, hit))| {
            tp += hit as usize;
            PrPoint {
                rank: k + 1,
                score: preds.detections()[pi].score(),
                precision: tp as f64 / (k + 1) as f64,
                recall: tp as f64 / g,
            }
        })
        .collect())
}
