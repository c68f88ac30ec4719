use lesionkit::detect::{blob_detect, generate_synthetic, BlobDetectParams, SynthSpec};
use lesionkit::imageproc::{circle_support, normalize_image, PreprocessParams};
use lesionkit::model::{FundusImage, LesionKind};
use lesionkit::segmetrics::match_detections;

/// Disc inscribed in a `t`x`t` frame, so normalization samples pixel centres
/// one-to-one, with a bright blob planted at `(bx, by)`.
fn disc_with_blob(t: usize, bx: f64, by: f64, radius: f64) -> FundusImage {
    let support = circle_support(t);
    let mut img = FundusImage::filled("disc", t, t, [0.0; 3]).unwrap();
    for y in 0..t {
        for x in 0..t {
            if !support[y * t + x] {
                continue;
            }
            let d2 = (x as f64 + 0.5 - bx).powi(2) + (y as f64 + 0.5 - by).powi(2);
            let base = [0.55, 0.35, 0.2];
            let lift = if d2 <= radius * radius { 0.3 } else { 0.0 };
            img.set_rgb(x, y, base.map(|v| v + lift));
        }
    }
    img
}

/// Direct evaluation of the masked local-mean subtraction: 2-D Gaussian over
/// the square window of half-width ceil(4 sigma), in-disc pixels only.
fn reference_normalize(img: &FundusImage, p: &PreprocessParams) -> Vec<f64> {
    let t = img.width();
    let support = circle_support(t);
    let sigma = p.contrast_blur_radius * t as f64;
    let r = (4.0 * sigma).ceil() as i64;
    let mut out = vec![0.0; t * t * 3];
    for y in 0..t as i64 {
        for x in 0..t as i64 {
            let i = (y as usize) * t + x as usize;
            if !support[i] {
                continue;
            }
            for c in 0..3 {
                let (mut num, mut den) = (0.0, 0.0);
                for yy in (y - r).max(0)..=(y + r).min(t as i64 - 1) {
                    for xx in (x - r).max(0)..=(x + r).min(t as i64 - 1) {
                        let j = yy as usize * t + xx as usize;
                        if !support[j] {
                            continue;
                        }
                        let w = (-(((xx - x).pow(2) + (yy - y).pow(2)) as f64) / (2.0 * sigma * sigma)).exp();
                        num += w * img.get(xx as usize, yy as usize, c) as f64;
                        den += w;
                    }
                }
                let v = img.get(x as usize, y as usize, c) as f64;
                out[i * 3 + c] = (p.contrast_gain * (v - num / den) + 0.5).clamp(0.0, 1.0);
            }
        }
    }
    out
}

#[test]
fn normalization_matches_direct_gaussian_reference() {
    let t = 64;
    let img = disc_with_blob(t, 22.0, 30.0, 3.0);
    let p = PreprocessParams {
        target_size: t,
        ..PreprocessParams::default()
    };
    let out = normalize_image(&img, &p).unwrap();
    let reference = reference_normalize(&img, &p);
    let worst = out
        .pixels()
        .iter()
        .zip(&reference)
        .map(|(a, b)| (*a as f64 - b).abs())
        .fold(0.0, f64::max);
    assert!(worst < 1e-5, "max deviation {worst}");

    // blob centre brighter than its surround in every channel
    for c in 0..3 {
        let centre = out.get(21, 29, c);
        for (x, y) in [(14, 29), (29, 29), (21, 21), (21, 37)] {
            assert!(centre > out.get(x, y, c), "channel {c} at ({x},{y})");
        }
    }
}

#[test]
fn normalization_twice_keeps_size_and_support() {
    let img = disc_with_blob(80, 40.0, 40.0, 4.0);
    let p = PreprocessParams {
        target_size: 48,
        contrast_gain: 1.0,
        ..PreprocessParams::default()
    };
    let once = normalize_image(&img, &p).unwrap();
    let twice = normalize_image(&once, &p).unwrap();
    assert_eq!((twice.width(), twice.height()), (48, 48));
    let support = circle_support(48);
    for y in 0..48 {
        for x in 0..48 {
            if !support[y * 48 + x] {
                assert_eq!(once.rgb(x, y), [0.0; 3]);
                assert_eq!(twice.rgb(x, y), [0.0; 3]);
            }
        }
    }
}

/// Generator ground truth is the oracle: the blob detector recovers at least
/// 90% of planted lesions at IOU 0.35 on a fixed 50-image suite.
#[test]
fn blob_detector_recovers_planted_lesions() {
    let spec = SynthSpec {
        image_count: 50,
        seed: 2024,
        ..SynthSpec::default()
    };
    let params = BlobDetectParams::default();
    let (mut planted, mut found) = (0, 0);
    for item in generate_synthetic(&spec).unwrap() {
        let pred = blob_detect(&item.image, &params).unwrap();
        let m = match_detections(&pred, &item.truth, 0.35, true).unwrap();
        planted += item.truth.len();
        found += m.pairs.len();
    }
    let recall = found as f64 / planted as f64;
    assert!(planted > 100);
    assert!(recall >= 0.9, "recovered {found} of {planted}");
}

#[test]
fn generator_labels_follow_count_rule() {
    let spec = SynthSpec {
        image_count: 30,
        seed: 5,
        ..SynthSpec::default()
    };
    for item in generate_synthetic(&spec).unwrap() {
        let n = item.truth.count_kind(LesionKind::Ex) + item.truth.count_kind(LesionKind::Ma);
        assert_eq!(item.severity, spec.severity_rule.grade(n), "{}", item.image.id());
    }
}
