use rayon::prelude::*;

/// Normalized 1-D Gaussian taps for offsets `-r..=r`, `r = ceil(4 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (4.0 * sigma).ceil().max(1.0) as i64;
    let two_s2 = 2.0 * sigma * sigma;
    let mut k: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / two_s2).exp()).collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

fn horizontal(plane: &[f64], width: usize, kernel: &[f64]) -> Vec<f64> {
    let r = kernel.len() / 2;
    let mut out = vec![0.0; plane.len()];
    out.par_chunks_mut(width)
        .zip(plane.par_chunks(width))
        .for_each(|(dst, src)| {
            for (x, d) in dst.iter_mut().enumerate() {
                let lo = x.saturating_sub(r);
                let hi = (x + r).min(width - 1);
                let mut acc = 0.0;
                for sx in lo..=hi {
                    acc += kernel[sx + r - x] * src[sx];
                }
                *d = acc;
            }
        });
    out
}

fn vertical(plane: &[f64], width: usize, height: usize, kernel: &[f64]) -> Vec<f64> {
    let r = kernel.len() / 2;
    let mut out = vec![0.0; plane.len()];
    out.par_chunks_mut(width).enumerate().for_each(|(y, dst)| {
        let lo = y.saturating_sub(r);
        let hi = (y + r).min(height - 1);
        for sy in lo..=hi {
            let w = kernel[sy + r - y];
            let src = &plane[sy * width..(sy + 1) * width];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += w * s;
            }
        }
    });
    out
}

/// Gaussian-weighted local mean of `plane` over pixels with non-zero
/// `weights`: `blur(plane * weights) / blur(weights)`.
///
/// Pixels beyond the image border carry zero weight. Where the blurred
/// weight vanishes the result is 0.
pub fn masked_gaussian_blur(
    plane: &[f64],
    weights: &[f64],
    width: usize,
    height: usize,
    sigma: f64,
) -> Vec<f64> {
    debug_assert_eq!(plane.len(), width * height);
    debug_assert_eq!(weights.len(), width * height);
    let kernel = gaussian_kernel(sigma);
    let weighted: Vec<f64> = plane.iter().zip(weights).map(|(p, w)| p * w).collect();
    let num = vertical(&horizontal(&weighted, width, &kernel), width, height, &kernel);
    let den = vertical(&horizontal(weights, width, &kernel), width, height, &kernel);
    num.iter()
        .zip(&den)
        .map(|(n, d)| if *d > 1e-12 { n / d } else { 0.0 })
        .collect()
}
