//! Seeded synthetic fundus generator with exact lesion ground truth.
//!
//! Each image is a vignetted reddish disc on black with bright elliptical
//! exudates and small dark microaneurysms planted away from the rim. Image
//! `i` draws from its own ChaCha stream (root seed, stream `i`), so images
//! can be generated in any order or in parallel with identical output.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imageproc::io::{save_fundus, save_mask};
use crate::model::{
    write_detection_file, BinaryMask, DatasetManifest, Detection, DetectionSet, FundusImage,
    LesionKind, ManifestEntry, SeverityGrade,
};

/// Severity as a function of the total planted lesion count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeverityRule {
    /// Smallest count graded medium.
    pub medium_min: usize,
    /// Smallest count graded severe.
    pub severe_min: usize,
}

impl Default for SeverityRule {
    fn default() -> Self {
        Self {
            medium_min: 1,
            severe_min: 4,
        }
    }
}

impl SeverityRule {
    pub fn grade(&self, lesion_count: usize) -> SeverityGrade {
        if lesion_count >= self.severe_min {
            SeverityGrade::Severe
        } else if lesion_count >= self.medium_min {
            SeverityGrade::Medium
        } else {
            SeverityGrade::Healthy
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub image_count: usize,
    pub image_size: usize,
    /// Inclusive `[min, max]` exudate count for a non-healthy image.
    pub ex_count: [usize; 2],
    pub ma_count: [usize; 2],
    /// Probability that an image is drawn lesion-free.
    pub healthy_fraction: f64,
    /// Semi-major axis range of exudates, pixels.
    pub ex_radius: [f64; 2],
    pub ma_radius: [f64; 2],
    /// Brightness added to exudate pixels.
    pub ex_intensity: f64,
    /// Brightness removed from microaneurysm pixels.
    pub ma_intensity: f64,
    /// Amplitude of uniform pixel noise.
    pub noise: f64,
    /// Minimum clearance between lesion outlines, pixels.
    pub min_gap: f64,
    pub max_retries: usize,
    pub severity_rule: SeverityRule,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            image_count: 60,
            image_size: 256,
            ex_count: [0, 2],
            ma_count: [1, 4],
            healthy_fraction: 1.0 / 3.0,
            ex_radius: [4.0, 8.0],
            ma_radius: [1.6, 2.6],
            ex_intensity: 0.35,
            ma_intensity: 0.3,
            noise: 0.01,
            min_gap: 14.0,
            max_retries: 500,
            severity_rule: SeverityRule::default(),
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.image_size < 32 {
            return bad(format!("image_size {} below 32", self.image_size));
        }
        if self.ex_count[0] > self.ex_count[1] || self.ma_count[0] > self.ma_count[1] {
            return bad("lesion count ranges must be [min, max]".into());
        }
        for (name, r) in [("ex_radius", self.ex_radius), ("ma_radius", self.ma_radius)] {
            if !(r[0] >= 0.5 && r[0] <= r[1] && r[1].is_finite()) {
                return bad(format!("{name} must satisfy 0.5 <= min <= max"));
            }
        }
        if !(0.0..=1.0).contains(&self.healthy_fraction) {
            return bad("healthy_fraction outside [0,1]".into());
        }
        if self.severity_rule.medium_min > self.severity_rule.severe_min {
            return bad("severity rule needs medium_min <= severe_min".into());
        }
        Ok(())
    }

    pub fn image_id(&self, index: usize) -> String {
        format!("synth_{index:04}")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticImage {
    pub image: FundusImage,
    pub truth: DetectionSet,
    pub severity: SeverityGrade,
}

struct Lesion {
    kind: LesionKind,
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    angle: f64,
}

impl Lesion {
    fn contains(&self, px: f64, py: f64) -> bool {
        let (dx, dy) = (px - self.cx, py - self.cy);
        let (s, c) = self.angle.sin_cos();
        let u = (dx * c + dy * s) / self.a;
        let v = (-dx * s + dy * c) / self.b;
        u * u + v * v <= 1.0
    }
}

fn generate_one(spec: &SynthSpec, index: usize) -> Result<SyntheticImage> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index as u64);
    let n = spec.image_size;
    let size = n as f64;

    let disc_r = size * rng.gen_range(0.43..=0.47);
    let disc_cx = size / 2.0 + size * rng.gen_range(-0.02..=0.02);
    let disc_cy = size / 2.0 + size * rng.gen_range(-0.02..=0.02);
    let base = [
        rng.gen_range(0.55..=0.68),
        rng.gen_range(0.26..=0.34),
        rng.gen_range(0.12..=0.18),
    ];
    let tilt = rng.gen_range(-0.08..=0.08);

    let healthy = rng.gen_bool(spec.healthy_fraction);
    let (n_ex, n_ma) = if healthy {
        (0, 0)
    } else {
        (
            rng.gen_range(spec.ex_count[0]..=spec.ex_count[1]),
            rng.gen_range(spec.ma_count[0]..=spec.ma_count[1]),
        )
    };

    let mut lesions: Vec<Lesion> = Vec::new();
    let kinds = std::iter::repeat_n(LesionKind::Ex, n_ex)
        .chain(std::iter::repeat_n(LesionKind::Ma, n_ma));
    for kind in kinds {
        let range = match kind {
            LesionKind::Ex => spec.ex_radius,
            LesionKind::Ma => spec.ma_radius,
        };
        let a = rng.gen_range(range[0]..=range[1]);
        let b = match kind {
            LesionKind::Ex => a * rng.gen_range(0.6..=1.0),
            LesionKind::Ma => a,
        };
        let angle = rng.gen_range(0.0..std::f64::consts::PI);
        let mut placed = false;
        for _ in 0..spec.max_retries.max(1) {
            let rho = disc_r * 0.75 * rng.gen::<f64>().sqrt();
            let phi = rng.gen_range(0.0..std::f64::consts::TAU);
            let (cx, cy) = (disc_cx + rho * phi.cos(), disc_cy + rho * phi.sin());
            let clear = lesions.iter().all(|o| {
                let d = ((o.cx - cx).powi(2) + (o.cy - cy).powi(2)).sqrt();
                d >= o.a + a + spec.min_gap
            });
            if clear {
                lesions.push(Lesion { kind, cx, cy, a, b, angle });
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::Generation(format!(
                "image {index}: could not place lesion {} of {} after {} attempts",
                lesions.len() + 1,
                n_ex + n_ma,
                spec.max_retries
            )));
        }
    }

    let mut pixels = vec![0.0f32; n * n * 3];
    let mut masks: Vec<BinaryMask> = lesions.iter().map(|_| BinaryMask::new(n, n)).collect();
    for y in 0..n {
        for x in 0..n {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let d2 = ((px - disc_cx).powi(2) + (py - disc_cy).powi(2)) / (disc_r * disc_r);
            if d2 > 1.0 {
                continue;
            }
            let shade = (1.0 - 0.3 * d2) * (1.0 + tilt * (px - disc_cx) / disc_r);
            let mut rgb = base.map(|c| c * shade);
            for (lesion, mask) in lesions.iter().zip(masks.iter_mut()) {
                if lesion.contains(px, py) {
                    mask.set(x, y, true);
                    let delta = match lesion.kind {
                        LesionKind::Ex => [1.0, 1.0, 0.4].map(|k| k * spec.ex_intensity),
                        LesionKind::Ma => [1.0, 0.8, 0.3].map(|k| -k * spec.ma_intensity),
                    };
                    for c in 0..3 {
                        rgb[c] += delta[c];
                    }
                }
            }
            let i = (y * n + x) * 3;
            for c in 0..3 {
                let jitter = if spec.noise > 0.0 {
                    rng.gen_range(-spec.noise..=spec.noise)
                } else {
                    0.0
                };
                pixels[i + c] = (rgb[c] + jitter).clamp(0.0, 1.0) as f32;
            }
        }
    }

    let id = spec.image_id(index);
    let detections = lesions
        .iter()
        .zip(masks)
        .map(|(l, m)| Detection::from_mask(l.kind, 1.0, m))
        .collect::<Result<Vec<_>>>()
        .map_err(|e| Error::Generation(format!("image {index}: {e}")))?;
    let severity = spec.severity_rule.grade(detections.len());
    Ok(SyntheticImage {
        image: FundusImage::new(id.clone(), n, n, pixels)?,
        truth: DetectionSet::new(id, detections)?,
        severity,
    })
}

/// Generates `spec.image_count` images; identical for identical specs.
pub fn generate_synthetic(spec: &SynthSpec) -> Result<Vec<SyntheticImage>> {
    spec.validate()?;
    (0..spec.image_count)
        .into_par_iter()
        .map(|i| generate_one(spec, i))
        .collect()
}

/// Writes a generated dataset under `dir`:
///
/// ```text
/// manifest.jsonl
/// truth.dets            ground truth in source coordinates
/// images/<id>.png
/// masks/<id>_ex.png     union of all EX instances
/// masks/<id>_ma.png
/// ```
///
/// Returns the manifest path.
pub fn write_synthetic_dataset(dir: &Path, spec: &SynthSpec) -> Result<PathBuf> {
    let items = generate_synthetic(spec)?;
    for sub in ["images", "masks"] {
        let p = dir.join(sub);
        fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    let entries: Vec<ManifestEntry> = items
        .par_iter()
        .map(|item| -> Result<ManifestEntry> {
            let id = item.image.id();
            let image_rel = PathBuf::from(format!("images/{id}.png"));
            save_fundus(&item.image, &dir.join(&image_rel))?;
            let mut entry = ManifestEntry::new(image_rel);
            for kind in LesionKind::ALL {
                let mut union = BinaryMask::new(item.image.width(), item.image.height());
                for d in item.truth.detections().iter().filter(|d| d.kind() == kind) {
                    union.union_with(d.mask().expect("synthetic truth has masks"));
                }
                let rel = PathBuf::from(format!("masks/{id}_{}.png", kind.as_str().to_lowercase()));
                save_mask(&union, &dir.join(&rel))?;
                match kind {
                    LesionKind::Ex => entry.masks_ex = Some(rel),
                    LesionKind::Ma => entry.masks_ma = Some(rel),
                }
            }
            entry.severity = Some(item.severity.index() as i64);
            Ok(entry)
        })
        .collect::<Result<_>>()?;
    let truth: Vec<DetectionSet> = items.into_iter().map(|i| i.truth).collect();
    write_detection_file(&dir.join("truth.dets"), &truth)?;
    let manifest = DatasetManifest::new(dir, entries);
    let path = dir.join("manifest.jsonl");
    manifest.save(&path)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> SynthSpec {
        SynthSpec {
            image_count: 6,
            image_size: 96,
            ex_radius: [2.5, 4.0],
            min_gap: 6.0,
            seed,
            ..SynthSpec::default()
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let a = generate_synthetic(&small(3)).unwrap();
        let b = generate_synthetic(&small(3)).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic(&small(4)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn zero_lesions_means_healthy() {
        let spec = SynthSpec {
            ex_count: [0, 0],
            ma_count: [0, 0],
            ..small(1)
        };
        for item in generate_synthetic(&spec).unwrap() {
            assert_eq!(item.severity, SeverityGrade::Healthy);
            assert!(item.truth.is_empty());
        }
    }

    #[test]
    fn five_lesions_means_severe() {
        let spec = SynthSpec {
            ex_count: [2, 2],
            ma_count: [3, 3],
            healthy_fraction: 0.0,
            ..small(9)
        };
        for item in generate_synthetic(&spec).unwrap() {
            assert_eq!(item.truth.len(), 5);
            assert_eq!(item.severity, SeverityGrade::Severe);
        }
    }

    #[test]
    fn severity_matches_recount_and_masks_are_disjoint() {
        let spec = small(11);
        for item in generate_synthetic(&spec).unwrap() {
            assert_eq!(item.severity, spec.severity_rule.grade(item.truth.len()));
            let dets = item.truth.detections();
            for i in 0..dets.len() {
                for j in i + 1..dets.len() {
                    assert_eq!(dets[i].mask().unwrap().intersection_count(dets[j].mask().unwrap()), 0);
                }
            }
        }
    }

    #[test]
    fn crowded_spec_fails_cleanly() {
        let spec = SynthSpec {
            image_count: 1,
            image_size: 32,
            ex_count: [30, 30],
            healthy_fraction: 0.0,
            max_retries: 5,
            ..SynthSpec::default()
        };
        assert!(matches!(generate_synthetic(&spec), Err(Error::Generation(_))));
    }
}
