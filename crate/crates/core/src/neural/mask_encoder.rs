use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{max_pool2, max_pool2_backward, Conv2d, Dense};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaskEncoderConfig {
    pub crop_size: usize,
    pub filters: [usize; 3],
    pub kernel: usize,
}

impl Default for MaskEncoderConfig {
    fn default() -> Self {
        Self {
            crop_size: 32,
            filters: [8, 16, 16],
            kernel: 3,
        }
    }
}

impl MaskEncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.crop_size < 8 || !self.crop_size.is_power_of_two() {
            return Err(Error::InvalidParameter(format!(
                "crop size {} must be a power of two >= 8",
                self.crop_size
            )));
        }
        if self.kernel.is_multiple_of(2) {
            return Err(Error::InvalidParameter(format!("kernel {} must be odd", self.kernel)));
        }
        if self.filters.contains(&0) {
            return Err(Error::InvalidParameter("filter counts must be positive".into()));
        }
        Ok(())
    }

    /// Length of the flattened map after the three pooled stages.
    pub fn flat_len(&self) -> usize {
        let side = self.crop_size / 8;
        self.filters[2] * side * side
    }
}

/// Three `[conv → tanh → 2×2 max-pool]` stages and a linear projection.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskEncoder {
    crop_size: usize,
    pub convs: Vec<Conv2d>,
    pub proj: Dense,
}

#[derive(Debug, Clone)]
pub struct MaskEncoderCache {
    inputs: Vec<Vec<f64>>,
    acts: Vec<Vec<f64>>,
    argmax: Vec<Vec<usize>>,
    flat: Vec<f64>,
}

impl MaskEncoder {
    fn channels(cfg: &MaskEncoderConfig) -> [(usize, usize); 3] {
        let f = cfg.filters;
        [(1, f[0]), (f[0], f[1]), (f[1], f[2])]
    }

    pub fn zeros(cfg: &MaskEncoderConfig, feature_dim: usize) -> Self {
        Self {
            crop_size: cfg.crop_size,
            convs: Self::channels(cfg)
                .iter()
                .map(|&(i, o)| Conv2d::zeros(i, o, cfg.kernel))
                .collect(),
            proj: Dense::zeros(cfg.flat_len(), feature_dim),
        }
    }

    /// Glorot-initialized; `rngs` supplies one generator per weight tensor.
    pub fn init<R: Rng>(cfg: &MaskEncoderConfig, feature_dim: usize, mut rngs: impl FnMut() -> R) -> Self {
        Self {
            crop_size: cfg.crop_size,
            convs: Self::channels(cfg)
                .iter()
                .map(|&(i, o)| Conv2d::init(i, o, cfg.kernel, &mut rngs()))
                .collect(),
            proj: Dense::init(cfg.flat_len(), feature_dim, &mut rngs()),
        }
    }

    pub fn config(&self) -> MaskEncoderConfig {
        MaskEncoderConfig {
            crop_size: self.crop_size,
            filters: [
                self.convs[0].out_channels(),
                self.convs[1].out_channels(),
                self.convs[2].out_channels(),
            ],
            kernel: self.convs[0].kernel(),
        }
    }

    pub fn crop_size(&self) -> usize {
        self.crop_size
    }

    pub fn feature_dim(&self) -> usize {
        self.proj.output_size()
    }

    /// Encodes a `crop_size`² crop (row-major).
    pub fn forward(&self, crop: &[f64]) -> Result<(Vec<f64>, MaskEncoderCache)> {
        let s = self.crop_size;
        if crop.len() != s * s {
            return Err(Error::Shape(format!("mask crop must be {s}x{s}, got {} values", crop.len())));
        }
        let mut cache = MaskEncoderCache {
            inputs: Vec::with_capacity(3),
            acts: Vec::with_capacity(3),
            argmax: Vec::with_capacity(3),
            flat: Vec::new(),
        };
        let mut x = crop.to_vec();
        let mut side = s;
        for conv in &self.convs {
            let a: Vec<f64> = conv.forward(&x, side, side)?.into_iter().map(f64::tanh).collect();
            let (pooled, arg) = max_pool2(&a, conv.out_channels(), side, side)?;
            cache.inputs.push(std::mem::replace(&mut x, pooled));
            cache.acts.push(a);
            cache.argmax.push(arg);
            side /= 2;
        }
        let out = self.proj.forward(&x)?;
        cache.flat = x;
        Ok((out, cache))
    }

    pub fn backward(&self, cache: &MaskEncoderCache, dout: &[f64], grad: &mut MaskEncoder) {
        let mut d = self.proj.backward(&cache.flat, dout, &mut grad.proj);
        for k in (0..self.convs.len()).rev() {
            let side = self.crop_size >> k;
            let act = &cache.acts[k];
            let mut da = max_pool2_backward(&d, &cache.argmax[k], act.len());
            for (g, a) in da.iter_mut().zip(act) {
                *g *= 1.0 - a * a;
            }
            d = self.convs[k]
                .backward(&cache.inputs[k], side, side, &da, &mut grad.convs[k], k > 0)
                .unwrap_or_default();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_weights_give_zero_vector() {
        let enc = MaskEncoder::zeros(&MaskEncoderConfig::default(), 6);
        let (v, _) = enc.forward(&vec![1.0; 32 * 32]).unwrap();
        assert_eq!(v, vec![0.0; 6]);
        assert!(enc.forward(&[1.0; 10]).is_err());
    }

    #[test]
    fn config_round_trip() {
        let cfg = MaskEncoderConfig {
            crop_size: 16,
            filters: [2, 3, 4],
            kernel: 3,
        };
        assert_eq!(cfg.flat_len(), 16);
        assert_eq!(MaskEncoder::zeros(&cfg, 7).config(), cfg);
        assert!(MaskEncoderConfig { crop_size: 12, ..cfg.clone() }.validate().is_err());
        assert!(MaskEncoderConfig { kernel: 2, ..cfg }.validate().is_err());
    }
}
