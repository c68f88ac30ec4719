//! Classical stand-in for the instance-segmentation network: thresholds the
//! difference between each pixel and its Gaussian local mean, then keeps the
//! connected components whose area is in range.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imageproc::{label_components, masked_gaussian_blur};
use crate::model::{BinaryMask, Detection, DetectionSet, FundusImage, LesionKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BlobDetectParams {
    /// Minimum excess over the local mean for a bright (EX) pixel.
    pub bright_threshold: f64,
    /// Minimum deficit below the local mean for a dark (MA) pixel.
    pub dark_threshold: f64,
    pub min_area: usize,
    pub max_area: usize,
    pub score_scale: f64,
    /// Local-mean Gaussian sigma as a fraction of the image width.
    pub background_sigma: f64,
    /// Restrict detection to the inscribed circle, shrunk by `rim_margin`.
    pub circular_support: bool,
    /// Band along the disc rim to ignore, as a fraction of the image width.
    pub rim_margin: f64,
}

impl Default for BlobDetectParams {
    fn default() -> Self {
        Self {
            bright_threshold: 0.15,
            dark_threshold: 0.15,
            min_area: 4,
            max_area: 20_000,
            score_scale: 1.5,
            background_sigma: 0.05,
            circular_support: true,
            rim_margin: 0.03,
        }
    }
}

impl BlobDetectParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.bright_threshold > 0.0 && self.dark_threshold > 0.0) {
            return Err(Error::InvalidParameter("blob thresholds must be positive".into()));
        }
        if self.min_area == 0 || self.min_area > self.max_area {
            return Err(Error::InvalidParameter(format!(
                "need 0 < min_area ({}) <= max_area ({})",
                self.min_area, self.max_area
            )));
        }
        if !(self.background_sigma > 0.0) || !(self.rim_margin >= 0.0) || !self.score_scale.is_finite() {
            return Err(Error::InvalidParameter(
                "background_sigma must be positive, rim_margin non-negative".into(),
            ));
        }
        Ok(())
    }
}

fn support(img: &FundusImage, p: &BlobDetectParams) -> Vec<bool> {
    let (w, h) = (img.width(), img.height());
    if !p.circular_support {
        return vec![true; w * h];
    }
    let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);
    let r = (w.min(h) as f64 / 2.0 - p.rim_margin * w as f64).max(0.0);
    (0..w * h)
        .map(|i| {
            let dx = (i % w) as f64 + 0.5 - cx;
            let dy = (i / w) as f64 + 0.5 - cy;
            dx * dx + dy * dy <= r * r
        })
        .collect()
}

/// Detects bright blobs as EX and dark blobs as MA.
///
/// Scores are `clamp(score_scale * mean |excess|, 0, 1)`. Output is ordered
/// by descending score, then descending area, then box origin `(y, x)`.
pub fn blob_detect(img: &FundusImage, p: &BlobDetectParams) -> Result<DetectionSet> {
    p.validate()?;
    let (w, h) = (img.width(), img.height());
    let gray: Vec<f64> = img.gray().into_iter().map(f64::from).collect();
    let support = support(img, p);
    let weights: Vec<f64> = support.iter().map(|s| *s as u8 as f64).collect();
    let mean = masked_gaussian_blur(&gray, &weights, w, h, p.background_sigma * w as f64);
    let excess: Vec<f64> = gray.iter().zip(&mean).map(|(g, m)| g - m).collect();

    let mut found: Vec<(Detection, usize)> = Vec::new();
    for (kind, sign, threshold) in [
        (LesionKind::Ex, 1.0, p.bright_threshold),
        (LesionKind::Ma, -1.0, p.dark_threshold),
    ] {
        let bits = excess
            .iter()
            .zip(&support)
            .map(|(e, s)| *s && sign * e > threshold)
            .collect();
        let candidates = BinaryMask::from_bits(w, h, bits)?;
        for comp in label_components(&candidates) {
            let area = comp.area();
            if area < p.min_area || area > p.max_area {
                continue;
            }
            let mean_excess =
                comp.pixels.iter().map(|&(x, y)| sign * excess[y * w + x]).sum::<f64>() / area as f64;
            let score = (p.score_scale * mean_excess).clamp(0.0, 1.0);
            let det = Detection::from_mask(kind, score, comp.to_mask(w, h))?;
            found.push((det, area));
        }
    }
    found.sort_by(|(a, area_a), (b, area_b)| {
        b.score()
            .total_cmp(&a.score())
            .then(area_b.cmp(area_a))
            .then((a.bbox().y_min, a.bbox().x_min).cmp(&(b.bbox().y_min, b.bbox().x_min)))
            .then(a.kind().cmp(&b.kind()))
    });
    DetectionSet::new(img.id(), found.into_iter().map(|(d, _)| d).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::segmetrics::iou_mask;

    fn plant(img: &mut FundusImage, cx: f64, cy: f64, a: f64, b: f64, delta: f32) -> BinaryMask {
        let mut m = BinaryMask::new(img.width(), img.height());
        for y in 0..img.height() {
            for x in 0..img.width() {
                let dx = (x as f64 + 0.5 - cx) / a;
                let dy = (y as f64 + 0.5 - cy) / b;
                if dx * dx + dy * dy <= 1.0 {
                    let p = img.rgb(x, y);
                    img.set_rgb(x, y, p.map(|v| v + delta));
                    m.set(x, y, true);
                }
            }
        }
        m
    }

    #[test]
    fn uniform_image_has_no_detections() {
        let img = FundusImage::filled("u", 64, 64, [0.5; 3]).unwrap();
        assert!(blob_detect(&img, &BlobDetectParams::default()).unwrap().is_empty());
    }

    #[test]
    fn planted_bright_ellipse_found() {
        let mut img = FundusImage::filled("e", 96, 96, [0.5; 3]).unwrap();
        let truth = plant(&mut img, 40.0, 50.0, 6.0, 4.0, 0.4);
        let set = blob_detect(&img, &BlobDetectParams::default()).unwrap();
        assert_eq!(set.len(), 1);
        let d = &set.detections()[0];
        assert_eq!(d.kind(), LesionKind::Ex);
        assert!(iou_mask(d.mask().unwrap(), &truth).unwrap() >= 0.5);
        assert!(d.score() > 0.0 && d.score() <= 1.0);
    }

    #[test]
    fn dark_blob_is_ma_and_area_filter_applies() {
        let mut img = FundusImage::filled("d", 96, 96, [0.5; 3]).unwrap();
        plant(&mut img, 48.0, 48.0, 2.5, 2.5, -0.4);
        let set = blob_detect(&img, &BlobDetectParams::default()).unwrap();
        assert_eq!(set.len(), 1);
        assert_eq!(set.detections()[0].kind(), LesionKind::Ma);

        let p = BlobDetectParams {
            min_area: 200,
            ..BlobDetectParams::default()
        };
        assert!(blob_detect(&img, &p).unwrap().is_empty());
    }

    #[test]
    fn params_validated() {
        let p = BlobDetectParams {
            min_area: 10,
            max_area: 5,
            ..BlobDetectParams::default()
        };
        assert!(p.validate().is_err());
    }
}
