//! 8-bit raster I/O. The format follows the file extension (PNG, PGM, PPM).
//! Masks are single-channel with 0/255 values; any value >= 128 reads as set.

use std::path::Path;

use image::{GrayImage, Luma, Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::model::{BinaryMask, FundusImage};

fn image_err(path: &Path, source: image::ImageError) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        source,
    }
}

/// Loads an RGB image; the file stem becomes the image id.
pub fn load_fundus(path: &Path) -> Result<FundusImage> {
    let rgb = image::open(path).map_err(|e| image_err(path, e))?.to_rgb8();
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let (w, h) = rgb.dimensions();
    let pixels = rgb.into_raw().into_iter().map(|v| v as f32 / 255.0).collect();
    FundusImage::new(id, w as usize, h as usize, pixels)
}

pub fn to_rgb8(img: &FundusImage) -> RgbImage {
    RgbImage::from_fn(img.width() as u32, img.height() as u32, |x, y| {
        let p = img.rgb(x as usize, y as usize);
        Rgb(p.map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8))
    })
}

pub fn save_fundus(img: &FundusImage, path: &Path) -> Result<()> {
    to_rgb8(img).save(path).map_err(|e| image_err(path, e))
}

pub fn load_mask(path: &Path) -> Result<BinaryMask> {
    let gray = image::open(path).map_err(|e| image_err(path, e))?.to_luma8();
    let (w, h) = gray.dimensions();
    let bits = gray.into_raw().into_iter().map(|v| v >= 128).collect();
    BinaryMask::from_bits(w as usize, h as usize, bits)
}

pub fn save_mask(mask: &BinaryMask, path: &Path) -> Result<()> {
    let img = GrayImage::from_fn(mask.width() as u32, mask.height() as u32, |x, y| {
        Luma([if mask.get(x as usize, y as usize) { 255 } else { 0 }])
    });
    img.save(path).map_err(|e| image_err(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mask_round_trip_png_and_pgm() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = BinaryMask::new(9, 5);
        m.set(2, 3, true);
        m.set(8, 0, true);
        for name in ["m.png", "m.pgm"] {
            let p = dir.path().join(name);
            save_mask(&m, &p).unwrap();
            assert_eq!(load_mask(&p).unwrap(), m);
        }
    }

    #[test]
    fn fundus_round_trip_is_8bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let pixels: Vec<f32> = (0..4 * 3 * 3).map(|i| (i * 7 % 256) as f32 / 255.0).collect();
        let img = FundusImage::new("x", 4, 3, pixels).unwrap();
        for name in ["x.png", "x.ppm"] {
            let p = dir.path().join(name);
            save_fundus(&img, &p).unwrap();
            let back = load_fundus(&p).unwrap();
            assert_eq!(back, img);
        }
    }
}
