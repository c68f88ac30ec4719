//! Fundus preprocessing: disc-centred resizing, contrast normalization,
//! mask dilation and per-instance mask splitting.

mod blur;
mod components;
pub mod io;
mod morphology;
mod normalize;
mod overlay;

pub use blur::{gaussian_kernel, masked_gaussian_blur};
pub use components::{label_components, split_instances, tight_bbox, Component, LesionInstance};
pub use morphology::dilate_mask;
pub use normalize::{
    circle_support, detect_disc, normalize_image, normalize_with_geometry, warp_mask, DiscGeometry,
};
pub use overlay::{render_overlay, GT_COLOR};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::LesionKind;

/// Which lesion kinds get their ground-truth masks dilated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DilationTarget {
    #[default]
    MaOnly,
    Both,
    None,
}

impl DilationTarget {
    pub fn applies_to(&self, kind: LesionKind) -> bool {
        match self {
            DilationTarget::MaOnly => kind == LesionKind::Ma,
            DilationTarget::Both => true,
            DilationTarget::None => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessParams {
    /// Output side length in pixels.
    pub target_size: usize,
    /// Side of the square structuring element, odd.
    pub dilation_kernel: usize,
    pub dilation_iterations: usize,
    pub dilate_kinds: DilationTarget,
    /// Gaussian sigma of the local-mean estimate, as a fraction of the output width.
    pub contrast_blur_radius: f64,
    pub contrast_gain: f64,
    pub circular_crop: bool,
}

impl Default for PreprocessParams {
    fn default() -> Self {
        Self {
            target_size: 1024,
            dilation_kernel: 5,
            dilation_iterations: 2,
            dilate_kinds: DilationTarget::MaOnly,
            contrast_blur_radius: 0.1,
            contrast_gain: 4.0,
            circular_crop: true,
        }
    }
}

impl PreprocessParams {
    pub fn validate(&self) -> Result<()> {
        if self.target_size < 16 {
            return Err(Error::InvalidParameter(format!(
                "target_size {} below 16",
                self.target_size
            )));
        }
        if self.dilation_kernel == 0 || self.dilation_kernel.is_multiple_of(2) {
            return Err(Error::InvalidParameter(format!(
                "dilation kernel {} must be odd and >= 1",
                self.dilation_kernel
            )));
        }
        if !(self.contrast_blur_radius > 0.0 && self.contrast_blur_radius.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "contrast_blur_radius {} must be positive",
                self.contrast_blur_radius
            )));
        }
        if !(self.contrast_gain >= 0.0 && self.contrast_gain.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "contrast_gain {} must be non-negative",
                self.contrast_gain
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn params_validation() {
        assert!(PreprocessParams::default().validate().is_ok());
        let mut p = PreprocessParams::default();
        p.dilation_kernel = 4;
        assert!(p.validate().is_err());
        p.dilation_kernel = 5;
        p.target_size = 8;
        assert!(p.validate().is_err());
    }

    #[test]
    fn dilation_target() {
        assert!(DilationTarget::MaOnly.applies_to(LesionKind::Ma));
        assert!(!DilationTarget::MaOnly.applies_to(LesionKind::Ex));
        assert!(DilationTarget::Both.applies_to(LesionKind::Ex));
        assert!(!DilationTarget::None.applies_to(LesionKind::Ma));
    }
}
