use crate::error::{Error, Result};
use crate::model::BinaryMask;

/// Binary dilation with a `kernel`×`kernel` square, repeated `iterations`
/// times. The structuring element is clipped at the image border.
pub fn dilate_mask(mask: &BinaryMask, kernel: usize, iterations: usize) -> Result<BinaryMask> {
    if kernel == 0 || kernel.is_multiple_of(2) {
        return Err(Error::InvalidParameter(format!(
            "dilation kernel {kernel} must be odd and >= 1"
        )));
    }
    let r = kernel / 2;
    let mut current = mask.clone();
    for _ in 0..iterations {
        if r == 0 {
            break;
        }
        current = dilate_once(&current, r);
    }
    Ok(current)
}

// A square element is separable: a row pass followed by a column pass.
fn dilate_once(mask: &BinaryMask, r: usize) -> BinaryMask {
    let (w, h) = (mask.width(), mask.height());
    let src = mask.bits();
    let mut rows = vec![false; w * h];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        // prefix counts make each window test O(1)
        let mut prefix = vec![0usize; w + 1];
        for x in 0..w {
            prefix[x + 1] = prefix[x] + row[x] as usize;
        }
        for x in 0..w {
            let lo = x.saturating_sub(r);
            let hi = (x + r + 1).min(w);
            rows[y * w + x] = prefix[hi] > prefix[lo];
        }
    }
    let mut out = vec![false; w * h];
    let mut prefix = vec![0usize; h + 1];
    for x in 0..w {
        for y in 0..h {
            prefix[y + 1] = prefix[y] + rows[y * w + x] as usize;
        }
        for y in 0..h {
            let lo = y.saturating_sub(r);
            let hi = (y + r + 1).min(h);
            out[y * w + x] = prefix[hi] > prefix[lo];
        }
    }
    BinaryMask::from_bits(w, h, out).expect("same shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(w: usize, h: usize, x: usize, y: usize) -> BinaryMask {
        let mut m = BinaryMask::new(w, h);
        m.set(x, y, true);
        m
    }

    #[test]
    fn single_pixel_square() {
        let d = dilate_mask(&single(20, 20, 10, 10), 5, 1).unwrap();
        assert_eq!(d.count(), 25);
        assert_eq!(d.tight_bbox().unwrap().as_array(), [8, 8, 13, 13]);
        let d = dilate_mask(&single(20, 20, 10, 10), 5, 2).unwrap();
        assert_eq!(d.count(), 81);
        assert_eq!(d.tight_bbox().unwrap().as_array(), [6, 6, 15, 15]);
    }

    #[test]
    fn clipped_at_border() {
        let d = dilate_mask(&single(10, 10, 0, 1), 5, 1).unwrap();
        assert_eq!(d.count(), 3 * 4);
    }

    #[test]
    fn empty_and_identity_cases() {
        let e = BinaryMask::new(7, 5);
        assert_eq!(dilate_mask(&e, 5, 2).unwrap(), e);
        let m = single(7, 5, 3, 2);
        assert_eq!(dilate_mask(&m, 1, 3).unwrap(), m);
        assert_eq!(dilate_mask(&m, 5, 0).unwrap(), m);
    }

    #[test]
    fn even_kernel_rejected() {
        assert!(matches!(
            dilate_mask(&BinaryMask::new(3, 3), 4, 1),
            Err(Error::InvalidParameter(_))
        ));
        assert!(dilate_mask(&BinaryMask::new(3, 3), 0, 1).is_err());
    }
}
