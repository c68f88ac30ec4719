//! 8-connected component labeling and instance splitting.

use crate::error::{Error, Result};
use crate::model::{BinaryMask, BoundingBox, Detection, LesionKind};

/// One connected component: its pixels in discovery order and tight box.
#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    pub pixels: Vec<(usize, usize)>,
    pub bbox: BoundingBox,
}

impl Component {
    pub fn area(&self) -> usize {
        self.pixels.len()
    }

    pub fn to_mask(&self, width: usize, height: usize) -> BinaryMask {
        let mut m = BinaryMask::new(width, height);
        for &(x, y) in &self.pixels {
            m.set(x, y, true);
        }
        m
    }
}

/// Labels the 8-connected components of `mask`, sorted by `(y_min, x_min)`
/// of their boxes.
pub fn label_components(mask: &BinaryMask) -> Vec<Component> {
    let (w, h) = (mask.width(), mask.height());
    let mut seen = vec![false; w * h];
    let mut out = Vec::new();
    let mut stack = Vec::new();
    for start in 0..w * h {
        if seen[start] || !mask.bits()[start] {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let mut pixels = Vec::new();
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        while let Some(i) = stack.pop() {
            let (x, y) = (i % w, i / w);
            pixels.push((x, y));
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
            for ny in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                for nx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                    let j = ny * w + nx;
                    if !seen[j] && mask.bits()[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
        out.push(Component {
            pixels,
            bbox: BoundingBox {
                x_min: x0 as u32,
                y_min: y0 as u32,
                x_max: x1 as u32 + 1,
                y_max: y1 as u32 + 1,
            },
        });
    }
    // Raster-order discovery already sorts by the first pixel; boxes can still
    // start further left on a later row.
    out.sort_by_key(|c| (c.bbox.y_min, c.bbox.x_min));
    out
}

/// A single lesion instance carved out of a combined per-kind mask.
#[derive(Debug, Clone, PartialEq)]
pub struct LesionInstance {
    pub mask: BinaryMask,
    pub bbox: BoundingBox,
    pub kind: LesionKind,
}

impl LesionInstance {
    /// Ground-truth detection with score 1.
    pub fn into_detection(self) -> Detection {
        Detection::from_mask(self.kind, 1.0, self.mask).expect("components are non-empty")
    }
}

/// One entry per 8-connected component of `mask`, ordered by `(y_min, x_min)`.
pub fn split_instances(mask: &BinaryMask, kind: LesionKind) -> Vec<LesionInstance> {
    label_components(mask)
        .into_iter()
        .map(|c| LesionInstance {
            mask: c.to_mask(mask.width(), mask.height()),
            bbox: c.bbox,
            kind,
        })
        .collect()
}

pub fn tight_bbox(mask: &BinaryMask) -> Result<BoundingBox> {
    mask.tight_bbox()
        .ok_or_else(|| Error::DegenerateInput("tight box of an empty mask".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask_from(rows: &[&str]) -> BinaryMask {
        let h = rows.len();
        let w = rows[0].len();
        let bits = rows.iter().flat_map(|r| r.chars().map(|c| c == '#')).collect();
        BinaryMask::from_bits(w, h, bits).unwrap()
    }

    #[test]
    fn tight_bbox_cases() {
        let mut m = BinaryMask::new(10, 10);
        m.set(3, 7, true);
        assert_eq!(tight_bbox(&m).unwrap().as_array(), [3, 7, 4, 8]);
        let full = BinaryMask::from_bits(5, 4, vec![true; 20]).unwrap();
        assert_eq!(tight_bbox(&full).unwrap().as_array(), [0, 0, 5, 4]);
        assert!(matches!(
            tight_bbox(&BinaryMask::new(3, 3)),
            Err(Error::DegenerateInput(_))
        ));
        // L-shape over rows 2..=5, cols 1..=4
        let l = mask_from(&[
            "......", "......", ".#....", ".#....", ".#....", ".####.", "......",
        ]);
        assert_eq!(tight_bbox(&l).unwrap().as_array(), [1, 2, 5, 6]);
    }

    #[test]
    fn diagonal_pixels_join() {
        let m = mask_from(&["#..", ".#.", "..#"]);
        assert_eq!(split_instances(&m, LesionKind::Ma).len(), 1);
    }

    #[test]
    fn two_blobs_sorted() {
        let m = mask_from(&[
            ".....##", "......#", "##.....", "###....",
        ]);
        let inst = split_instances(&m, LesionKind::Ex);
        assert_eq!(inst.len(), 2);
        assert_eq!(inst[0].mask.count(), 3);
        assert_eq!(inst[0].bbox.as_array(), [5, 0, 7, 2]);
        assert_eq!(inst[1].mask.count(), 5);
        assert_eq!(inst[1].mask.intersection_count(&inst[0].mask), 0);
        assert!(split_instances(&BinaryMask::new(4, 4), LesionKind::Ex).is_empty());
    }

    #[test]
    fn single_blob_is_identity() {
        let m = mask_from(&["....", ".##.", ".#..", "...."]);
        let inst = split_instances(&m, LesionKind::Ma);
        assert_eq!(inst.len(), 1);
        assert_eq!(inst[0].mask, m);
        assert_eq!(inst[0].kind, LesionKind::Ma);
    }

    #[test]
    fn sort_uses_box_origin_not_discovery() {
        // The second component is discovered first (row 0) but its box
        // starts at x=3 on the same row as the other's y_min.
        let m = mask_from(&["...#", "#..#"]);
        let inst = split_instances(&m, LesionKind::Ex);
        assert_eq!(inst[0].bbox.as_array(), [3, 0, 4, 2]);
        assert_eq!(inst[1].bbox.as_array(), [0, 1, 1, 2]);
    }
}
