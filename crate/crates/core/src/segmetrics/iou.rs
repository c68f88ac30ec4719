use crate::error::{Error, Result};
use crate::model::{BinaryMask, BoundingBox, Detection};

/// Intersection over union of two boxes on the integer pixel grid.
pub fn iou_box(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    inter as f64 / union as f64
}

/// `popcount(a & b) / popcount(a | b)`; undefined when both masks are empty.
pub fn iou_mask(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(Error::Shape(format!(
            "mask IOU on {}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    let union = a.union_count(b);
    if union == 0 {
        return Err(Error::UndefinedMetric("IOU of two empty masks".into()));
    }
    Ok(a.intersection_count(b) as f64 / union as f64)
}

// Both masks live inside their boxes, so counting over the union of the two
// boxes is exact.
fn mask_iou_in_boxes(a: &BinaryMask, ab: &BoundingBox, b: &BinaryMask, bb: &BoundingBox) -> f64 {
    if ab.intersection_area(bb) == 0 {
        return 0.0;
    }
    let (x0, y0) = (ab.x_min.min(bb.x_min) as usize, ab.y_min.min(bb.y_min) as usize);
    let (x1, y1) = (ab.x_max.max(bb.x_max) as usize, ab.y_max.max(bb.y_max) as usize);
    let (mut inter, mut union) = (0u64, 0u64);
    for y in y0..y1 {
        for x in x0..x1 {
            let (p, q) = (a.get(x, y), b.get(x, y));
            inter += (p && q) as u64;
            union += (p || q) as u64;
        }
    }
    inter as f64 / union as f64
}

/// IOU between two detections: mask IOU when `use_masks` and both carry a
/// mask of the same shape, box IOU otherwise.
pub fn detection_iou(a: &Detection, b: &Detection, use_masks: bool) -> f64 {
    match (use_masks, a.mask(), b.mask()) {
        (true, Some(ma), Some(mb)) if ma.same_shape(mb) => {
            mask_iou_in_boxes(ma, a.bbox(), mb, b.bbox())
        }
        _ => iou_box(a.bbox(), b.bbox()),
    }
}
