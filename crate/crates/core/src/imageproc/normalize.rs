//! Geometric and photometric normalization of fundus photographs.
//!
//! The retina disc is found by thresholding the red channel at 5% of its
//! maximum and keeping the largest 8-connected component. The square that
//! encloses that component's circle is resampled to `target_size` and
//! everything outside the inscribed circle is zeroed. Contrast is then
//! normalized per channel as
//! `clamp(gain * (pixel - local_mean) + 0.5, 0, 1)`, where the local mean is
//! a Gaussian average restricted to the disc.

use rayon::prelude::*;

use super::blur::masked_gaussian_blur;
use super::components::label_components;
use super::PreprocessParams;
use crate::error::{Error, Result};
use crate::model::{BinaryMask, FundusImage};

const DISC_THRESHOLD_FRACTION: f32 = 0.05;
const MIN_DISC_PEAK: f32 = 1.0 / 255.0;

/// Circle enclosing the detected retina disc, in source pixel coordinates
/// (pixel `i` spans `[i, i + 1)`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscGeometry {
    pub center_x: f64,
    pub center_y: f64,
    pub radius: f64,
}

impl DiscGeometry {
    /// Maps the centre of output pixel `(u, v)` back into source coordinates.
    #[inline]
    fn source_point(&self, u: usize, v: usize, target: usize) -> (f64, f64) {
        let scale = 2.0 * self.radius / target as f64;
        (
            self.center_x - self.radius + (u as f64 + 0.5) * scale,
            self.center_y - self.radius + (v as f64 + 0.5) * scale,
        )
    }
}

pub fn detect_disc(img: &FundusImage) -> Result<DiscGeometry> {
    let red = img.channel(0);
    let peak = red.iter().copied().fold(0.0f32, f32::max);
    if peak < MIN_DISC_PEAK {
        return Err(Error::DegenerateInput(format!(
            "image {:?} has no detectable retina disc",
            img.id()
        )));
    }
    let threshold = DISC_THRESHOLD_FRACTION * peak;
    let bits = red.iter().map(|v| *v > threshold).collect();
    let fg = BinaryMask::from_bits(img.width(), img.height(), bits)?;
    let largest = label_components(&fg)
        .into_iter()
        .max_by(|a, b| a.area().cmp(&b.area()).then(b.bbox.cmp(&a.bbox)))
        .ok_or_else(|| Error::DegenerateInput("no pixels above disc threshold".into()))?;
    let b = largest.bbox;
    Ok(DiscGeometry {
        center_x: (b.x_min + b.x_max) as f64 / 2.0,
        center_y: (b.y_min + b.y_max) as f64 / 2.0,
        radius: b.width().max(b.height()) as f64 / 2.0,
    })
}

/// Inscribed-circle support of a `size`×`size` raster, tested at pixel centres.
pub fn circle_support(size: usize) -> Vec<bool> {
    let c = size as f64 / 2.0;
    let r2 = c * c;
    (0..size * size)
        .map(|i| {
            let dx = (i % size) as f64 + 0.5 - c;
            let dy = (i / size) as f64 + 0.5 - c;
            dx * dx + dy * dy <= r2
        })
        .collect()
}

fn bilinear(img: &FundusImage, sx: f64, sy: f64) -> [f64; 3] {
    // pixel centres sit at integer + 0.5
    let fx = sx - 0.5;
    let fy = sy - 0.5;
    let x0 = fx.floor();
    let y0 = fy.floor();
    let ax = fx - x0;
    let ay = fy - y0;
    let (w, h) = (img.width() as i64, img.height() as i64);
    let mut out = [0.0; 3];
    for (dy, wy) in [(0i64, 1.0 - ay), (1, ay)] {
        for (dx, wx) in [(0i64, 1.0 - ax), (1, ax)] {
            let (x, y) = (x0 as i64 + dx, y0 as i64 + dy);
            let wt = wx * wy;
            if wt == 0.0 || x < 0 || y < 0 || x >= w || y >= h {
                continue;
            }
            let p = img.rgb(x as usize, y as usize);
            for c in 0..3 {
                out[c] += wt * p[c] as f64;
            }
        }
    }
    out
}

pub fn normalize_image(img: &FundusImage, p: &PreprocessParams) -> Result<FundusImage> {
    normalize_with_geometry(img, p).map(|(out, _)| out)
}

/// Normalizes `img` and returns the disc geometry used, so masks annotating
/// the same photograph can be mapped with [`warp_mask`].
pub fn normalize_with_geometry(
    img: &FundusImage,
    p: &PreprocessParams,
) -> Result<(FundusImage, DiscGeometry)> {
    p.validate()?;
    let geom = detect_disc(img)?;
    let t = p.target_size;
    let support: Vec<bool> = if p.circular_crop {
        circle_support(t)
    } else {
        vec![true; t * t]
    };

    let mut planes = vec![vec![0.0f64; t * t]; 3];
    let resampled: Vec<[f64; 3]> = (0..t * t)
        .into_par_iter()
        .map(|i| {
            let (sx, sy) = geom.source_point(i % t, i / t, t);
            bilinear(img, sx, sy)
        })
        .collect();
    for (i, rgb) in resampled.into_iter().enumerate() {
        if support[i] {
            for c in 0..3 {
                planes[c][i] = rgb[c];
            }
        }
    }

    let weights: Vec<f64> = support.iter().map(|s| if *s { 1.0 } else { 0.0 }).collect();
    let sigma = p.contrast_blur_radius * t as f64;
    let mut pixels = vec![0.0f32; t * t * 3];
    for (c, plane) in planes.iter().enumerate() {
        let mean = masked_gaussian_blur(plane, &weights, t, t, sigma);
        for i in 0..t * t {
            if support[i] {
                let v = p.contrast_gain * (plane[i] - mean[i]) + 0.5;
                pixels[i * 3 + c] = v.clamp(0.0, 1.0) as f32;
            }
        }
    }
    Ok((FundusImage::new(img.id(), t, t, pixels)?, geom))
}

/// Nearest-neighbour resampling of a mask through the same disc geometry.
pub fn warp_mask(
    mask: &BinaryMask,
    geom: &DiscGeometry,
    p: &PreprocessParams,
) -> BinaryMask {
    let t = p.target_size;
    let support = if p.circular_crop {
        Some(circle_support(t))
    } else {
        None
    };
    let mut out = BinaryMask::new(t, t);
    for v in 0..t {
        for u in 0..t {
            if let Some(s) = &support {
                if !s[v * t + u] {
                    continue;
                }
            }
            let (sx, sy) = geom.source_point(u, v, t);
            let (x, y) = (sx.floor(), sy.floor());
            if x < 0.0 || y < 0.0 || x >= mask.width() as f64 || y >= mask.height() as f64 {
                continue;
            }
            if mask.get(x as usize, y as usize) {
                out.set(u, v, true);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn disc_image(w: usize, h: usize, cx: f64, cy: f64, r: f64, rgb: [f32; 3]) -> FundusImage {
        let mut img = FundusImage::filled("disc", w, h, [0.0; 3]).unwrap();
        for y in 0..h {
            for x in 0..w {
                let dx = x as f64 + 0.5 - cx;
                let dy = y as f64 + 0.5 - cy;
                if dx * dx + dy * dy <= r * r {
                    img.set_rgb(x, y, rgb);
                }
            }
        }
        img
    }

    fn small_params(t: usize) -> PreprocessParams {
        PreprocessParams {
            target_size: t,
            ..PreprocessParams::default()
        }
    }

    #[test]
    fn output_is_square_target() {
        let img = disc_image(96, 72, 48.0, 36.0, 30.0, [0.6, 0.3, 0.2]);
        let out = normalize_image(&img, &small_params(32)).unwrap();
        assert_eq!((out.width(), out.height()), (32, 32));
        assert_eq!(out.id(), "disc");
    }

    #[test]
    fn black_image_is_degenerate() {
        let img = FundusImage::filled("black", 20, 20, [0.0; 3]).unwrap();
        assert!(matches!(
            normalize_image(&img, &small_params(16)),
            Err(Error::DegenerateInput(_))
        ));
    }

    #[test]
    fn disc_geometry_found() {
        let img = disc_image(100, 80, 40.0, 50.0, 20.0, [0.5, 0.5, 0.5]);
        let g = detect_disc(&img).unwrap();
        assert!((g.center_x - 40.0).abs() <= 0.5);
        assert!((g.center_y - 50.0).abs() <= 0.5);
        assert!((g.radius - 20.0).abs() <= 1.0);
    }

    #[test]
    fn outside_circle_is_zero() {
        let img = disc_image(64, 64, 32.0, 32.0, 28.0, [0.7, 0.4, 0.2]);
        let t = 48;
        let out = normalize_image(&img, &small_params(t)).unwrap();
        let support = circle_support(t);
        for (i, inside) in support.iter().enumerate() {
            if !inside {
                assert_eq!(out.rgb(i % t, i / t), [0.0; 3]);
            }
        }
    }

    #[test]
    fn warp_mask_follows_geometry() {
        let img = disc_image(80, 80, 40.0, 40.0, 40.0, [0.5; 3]);
        let mut m = BinaryMask::new(80, 80);
        for y in 38..42 {
            for x in 38..42 {
                m.set(x, y, true);
            }
        }
        let p = small_params(40);
        let (_, g) = normalize_with_geometry(&img, &p).unwrap();
        let w = warp_mask(&m, &g, &p);
        assert_eq!(w.tight_bbox().unwrap().as_array(), [19, 19, 21, 21]);
    }
}
