use std::cmp::Ordering;

use serde::Serialize;

use super::iou::detection_iou;
use crate::error::{Error, Result};
use crate::model::DetectionSet;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MatchPair {
    pub prediction: usize,
    pub ground_truth: usize,
    pub iou: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchResult {
    /// Pairs in the order predictions were processed.
    pub pairs: Vec<MatchPair>,
    pub unmatched_predictions: Vec<usize>,
    pub unmatched_gts: Vec<usize>,
    pub threshold: f64,
    /// Prediction indices in ranking order (the order they claimed ground truth).
    pub ranking: Vec<usize>,
}

impl MatchResult {
    /// True-positive flag for each entry of `ranking`.
    pub fn hits_in_rank_order(&self) -> Vec<bool> {
        let mut matched = vec![false; self.ranking.len()];
        for p in &self.pairs {
            matched[p.prediction] = true;
        }
        self.ranking.iter().map(|&i| matched[i]).collect()
    }
}

pub(crate) fn check_threshold(threshold: f64) -> Result<()> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "IOU threshold {threshold} outside (0, 1]"
        )));
    }
    Ok(())
}

/// Greedy score-ordered matching.
///
/// Predictions are visited by descending score (equal scores: larger best
/// IOU first, then lower index); each claims the unclaimed ground truth of
/// the same kind with the highest IOU, provided it reaches `threshold`
/// (equal IOU: lower ground-truth index).
pub fn match_detections(
    preds: &DetectionSet,
    gts: &DetectionSet,
    threshold: f64,
    use_masks: bool,
) -> Result<MatchResult> {
    check_threshold(threshold)?;
    let p = preds.detections();
    let g = gts.detections();
    let iou: Vec<Vec<f64>> = p
        .iter()
        .map(|pd| {
            g.iter()
                .map(|gd| {
                    if pd.kind() == gd.kind() {
                        detection_iou(pd, gd, use_masks)
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();
    let best: Vec<f64> = iou
        .iter()
        .map(|row| row.iter().copied().fold(0.0, f64::max))
        .collect();

    let mut ranking: Vec<usize> = (0..p.len()).collect();
    ranking.sort_by(|&a, &b| {
        p[b].score()
            .total_cmp(&p[a].score())
            .then(best[b].total_cmp(&best[a]))
            .then(a.cmp(&b))
    });

    let mut claimed = vec![false; g.len()];
    let mut pairs = Vec::new();
    let mut unmatched_predictions = Vec::new();
    for &pi in &ranking {
        let mut choice: Option<usize> = None;
        for gi in 0..g.len() {
            if claimed[gi] || p[pi].kind() != g[gi].kind() || iou[pi][gi] < threshold {
                continue;
            }
            choice = match choice {
                Some(c) if iou[pi][c].total_cmp(&iou[pi][gi]) != Ordering::Less => Some(c),
                _ => Some(gi),
            };
        }
        match choice {
            Some(gi) => {
                claimed[gi] = true;
                pairs.push(MatchPair {
                    prediction: pi,
                    ground_truth: gi,
                    iou: iou[pi][gi],
                });
            }
            None => unmatched_predictions.push(pi),
        }
    }
    let unmatched_gts = (0..g.len()).filter(|&i| !claimed[i]).collect();
    Ok(MatchResult {
        pairs,
        unmatched_predictions,
        unmatched_gts,
        threshold,
        ranking,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{BoundingBox, Detection, LesionKind};

    fn det(kind: LesionKind, score: f64, b: [u32; 4]) -> Detection {
        Detection::from_box(kind, score, BoundingBox::new(b[0], b[1], b[2], b[3]).unwrap()).unwrap()
    }

    #[test]
    fn identical_sets_fully_match() {
        let gts = DetectionSet::new(
            "a",
            vec![
                det(LesionKind::Ex, 1.0, [0, 0, 10, 10]),
                det(LesionKind::Ma, 1.0, [20, 20, 24, 24]),
            ],
        )
        .unwrap();
        let m = match_detections(&gts, &gts, 0.5, true).unwrap();
        assert_eq!(m.pairs.len(), 2);
        assert!(m.unmatched_gts.is_empty() && m.unmatched_predictions.is_empty());
    }

    #[test]
    fn empty_predictions() {
        let gts = DetectionSet::new("a", vec![det(LesionKind::Ex, 1.0, [0, 0, 10, 10])]).unwrap();
        let m = match_detections(&DetectionSet::empty("a"), &gts, 0.5, true).unwrap();
        assert_eq!(m.unmatched_gts, vec![0]);
    }

    #[test]
    fn higher_score_claims_first() {
        let gts = DetectionSet::new("a", vec![det(LesionKind::Ex, 1.0, [0, 0, 10, 10])]).unwrap();
        let preds = DetectionSet::new(
            "a",
            vec![
                det(LesionKind::Ex, 0.8, [0, 0, 10, 10]),
                det(LesionKind::Ex, 0.9, [0, 0, 10, 9]),
            ],
        )
        .unwrap();
        let m = match_detections(&preds, &gts, 0.5, true).unwrap();
        assert_eq!(m.pairs.len(), 1);
        assert_eq!(m.pairs[0].prediction, 1);
        assert_eq!(m.unmatched_predictions, vec![0]);
    }

    #[test]
    fn kinds_never_cross_match() {
        let gts = DetectionSet::new("a", vec![det(LesionKind::Ma, 1.0, [0, 0, 10, 10])]).unwrap();
        let preds = DetectionSet::new("a", vec![det(LesionKind::Ex, 0.9, [0, 0, 10, 10])]).unwrap();
        let m = match_detections(&preds, &gts, 0.35, true).unwrap();
        assert!(m.pairs.is_empty());
    }

    #[test]
    fn tie_breaks() {
        // equal scores: the prediction with larger IOU goes first
        let gts = DetectionSet::new("a", vec![det(LesionKind::Ex, 1.0, [0, 0, 10, 10])]).unwrap();
        let preds = DetectionSet::new(
            "a",
            vec![
                det(LesionKind::Ex, 0.5, [0, 0, 10, 8]),
                det(LesionKind::Ex, 0.5, [0, 0, 10, 10]),
            ],
        )
        .unwrap();
        let m = match_detections(&preds, &gts, 0.5, true).unwrap();
        assert_eq!(m.ranking, vec![1, 0]);
        assert_eq!(m.pairs[0].prediction, 1);

        // equal IOU: lower ground-truth index wins
        let gts = DetectionSet::new(
            "a",
            vec![det(LesionKind::Ex, 1.0, [0, 0, 4, 4]), det(LesionKind::Ex, 1.0, [0, 0, 4, 4])],
        )
        .unwrap();
        let preds = DetectionSet::new("a", vec![det(LesionKind::Ex, 0.5, [0, 0, 4, 4])]).unwrap();
        let m = match_detections(&preds, &gts, 0.5, true).unwrap();
        assert_eq!(m.pairs[0].ground_truth, 0);
    }

    #[test]
    fn threshold_range() {
        let e = DetectionSet::empty("a");
        assert!(match_detections(&e, &e, 0.0, true).is_err());
        assert!(match_detections(&e, &e, 1.01, true).is_err());
        assert!(match_detections(&e, &e, 1.0, true).is_ok());
    }
}
