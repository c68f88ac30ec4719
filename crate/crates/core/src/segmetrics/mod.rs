//! Segmentation and classification metrics: IOU, greedy matching, AP/mAP,
//! accuracy and confusion matrices.

mod ap;
mod confusion;
mod iou;
mod matching;
mod report;

pub use ap::{
    average_precision, average_precision_exact, average_precision_from_hits,
    mean_average_precision, mean_average_precision_exact, pr_curve, PrPoint,
};
pub use confusion::{accuracy, confusion_from_labels, BinaryCounts, ConfusionMatrix};
pub use iou::{detection_iou, iou_box, iou_mask};
pub use matching::{match_detections, MatchPair, MatchResult};
pub use report::{
    phase1_report, threshold_label, EvalReport, ImageAp, SplitResults, SplitRow,
    DEFAULT_THRESHOLDS,
};
