use crate::error::{Error, Result};
use crate::model::{Detection, DetectionSet, FundusImage, LesionKind};

pub const EX_COLOR: [f32; 3] = [1.0, 0.0, 0.0];
pub const MA_COLOR: [f32; 3] = [0.0, 0.0, 0.0];
/// Ground-truth outlines: green, dashed.
pub const GT_COLOR: [f32; 3] = [0.0, 1.0, 0.0];
const MASK_ALPHA: f32 = 0.5;

fn kind_color(kind: LesionKind) -> [f32; 3] {
    match kind {
        LesionKind::Ex => EX_COLOR,
        LesionKind::Ma => MA_COLOR,
    }
}

fn check(img: &FundusImage, set: &DetectionSet) -> Result<()> {
    for d in set.detections() {
        if !d.bbox().fits_within(img.width(), img.height()) {
            return Err(Error::Validation(format!(
                "box {} outside {}x{} image {:?}",
                d.bbox(),
                img.width(),
                img.height(),
                set.image_id()
            )));
        }
        if let Some(m) = d.mask() {
            if (m.width(), m.height()) != (img.width(), img.height()) {
                return Err(Error::Shape(format!(
                    "mask {}x{} on {}x{} image",
                    m.width(),
                    m.height(),
                    img.width(),
                    img.height()
                )));
            }
        }
    }
    Ok(())
}

fn outline(img: &mut FundusImage, d: &Detection, color: [f32; 3], dashed: bool) {
    let b = d.bbox();
    let (x0, y0, x1, y1) = (
        b.x_min as usize,
        b.y_min as usize,
        b.x_max as usize - 1,
        b.y_max as usize - 1,
    );
    let mut perimeter: Vec<(usize, usize)> = Vec::new();
    for x in x0..=x1 {
        perimeter.push((x, y0));
        if y1 != y0 {
            perimeter.push((x, y1));
        }
    }
    for y in y0 + 1..y1 {
        perimeter.push((x0, y));
        if x1 != x0 {
            perimeter.push((x1, y));
        }
    }
    for (x, y) in perimeter {
        // 2-on / 2-off dash keyed on position along the edge
        if dashed && ((x + y) / 2) % 2 == 1 {
            continue;
        }
        img.set_rgb(x, y, color);
    }
}

/// Draws detections onto a copy of `img`: mask pixels blended 50/50 with the
/// kind colour (EX red, MA black), then box outlines. Ground truth, when
/// given, is outlined dashed in [`GT_COLOR`] beneath the detections.
pub fn render_overlay(
    img: &FundusImage,
    dets: &DetectionSet,
    gts: Option<&DetectionSet>,
) -> Result<FundusImage> {
    check(img, dets)?;
    if let Some(g) = gts {
        check(img, g)?;
    }
    let mut out = img.clone();
    for d in dets.detections() {
        if let Some(m) = d.mask() {
            let color = kind_color(d.kind());
            for (x, y) in m.set_pixels() {
                let p = img.rgb(x, y);
                let mut blended = [0.0; 3];
                for c in 0..3 {
                    blended[c] = (1.0 - MASK_ALPHA) * p[c] + MASK_ALPHA * color[c];
                }
                out.set_rgb(x, y, blended);
            }
        }
    }
    if let Some(g) = gts {
        for d in g.detections() {
            outline(&mut out, d, GT_COLOR, true);
        }
    }
    for d in dets.detections() {
        outline(&mut out, d, kind_color(d.kind()), false);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{BinaryMask, BoundingBox};

    fn gray(w: usize, h: usize) -> FundusImage {
        FundusImage::filled("g", w, h, [0.3, 0.3, 0.3]).unwrap()
    }

    #[test]
    fn empty_set_is_identity() {
        let img = gray(10, 10);
        let out = render_overlay(&img, &DetectionSet::empty("g"), None).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn ex_box_changes_exactly_perimeter() {
        let img = gray(20, 20);
        let b = BoundingBox::new(3, 4, 10, 9).unwrap();
        let set = DetectionSet::new("g", vec![Detection::from_box(LesionKind::Ex, 0.9, b).unwrap()]).unwrap();
        let out = render_overlay(&img, &set, None).unwrap();
        let changed = (0..20)
            .flat_map(|y| (0..20).map(move |x| (x, y)))
            .filter(|&(x, y)| out.get(x, y, 0) != img.get(x, y, 0))
            .count();
        let (w, h) = (b.width() as usize, b.height() as usize);
        assert_eq!(changed, 2 * w + 2 * h - 4);
    }

    #[test]
    fn mask_pixels_blended() {
        let img = gray(8, 8);
        let mut m = BinaryMask::new(8, 8);
        for y in 2..6 {
            for x in 2..6 {
                m.set(x, y, true);
            }
        }
        let set = DetectionSet::new("g", vec![Detection::from_mask(LesionKind::Ex, 0.9, m).unwrap()]).unwrap();
        let out = render_overlay(&img, &set, None).unwrap();
        // interior (not on the outline)
        let p = out.rgb(3, 3);
        assert!((p[0] - (0.5 * 0.3 + 0.5 * 1.0)).abs() < 1e-6);
        assert!((p[1] - 0.15).abs() < 1e-6);
    }

    #[test]
    fn out_of_bounds_box_rejected() {
        let img = gray(8, 8);
        let set = DetectionSet::new(
            "g",
            vec![Detection::from_box(LesionKind::Ma, 0.9, BoundingBox::new(5, 5, 9, 7).unwrap()).unwrap()],
        )
        .unwrap();
        assert!(matches!(render_overlay(&img, &set, None), Err(Error::Validation(_))));
    }
}
