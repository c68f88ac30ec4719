use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::detect::{BlobDetectParams, SynthSpec};
use crate::encoder::{Ablation, EncoderConfig};
use crate::error::{Error, Result};
use crate::imageproc::PreprocessParams;
use crate::neural::{MaskEncoderConfig, ModelConfig, TrainParams};
use crate::segmetrics::DEFAULT_THRESHOLDS;

/// Where images, masks and labels come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    /// JSON-lines manifest on disk.
    Manifest(PathBuf),
    /// Generated into `<output_dir>/data` at run time.
    Synthetic(SynthSpec),
}

/// Where phase-one detections come from. Exactly one is selected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectionSource {
    /// Detection records in the normalized image frame.
    Ingest(PathBuf),
    Blob(BlobDetectParams),
    /// Ground truth echoed back as predictions (score 1).
    GroundTruth,
}

impl Default for DetectionSource {
    fn default() -> Self {
        DetectionSource::Blob(BlobDetectParams::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelParams {
    pub hidden_size: usize,
    pub mask_filters: [usize; 3],
    pub mask_kernel: usize,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self {
            hidden_size: 16,
            mask_filters: [8, 16, 16],
            mask_kernel: 3,
        }
    }
}

fn default_thresholds() -> Vec<f64> {
    DEFAULT_THRESHOLDS.to_vec()
}

fn default_fractions() -> [f64; 3] {
    [0.70, 0.15, 0.15]
}

fn default_true() -> bool {
    true
}

fn default_overlays() -> usize {
    4
}

/// Everything a run needs. Read from TOML; see the README for the schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Root seed; dataset generation, splitting, initialization and
    /// shuffling all derive from it.
    #[serde(default)]
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Worker threads for per-image stages; all cores when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    #[serde(default = "default_thresholds")]
    pub thresholds: Vec<f64>,
    /// Train / validation / test fractions for manifests without splits.
    #[serde(default = "default_fractions")]
    pub split_fractions: [f64; 3],
    /// Dilate blob-detected masks of the kinds whose ground truth is dilated.
    #[serde(default = "default_true")]
    pub dilate_predictions: bool,
    /// Number of test images rendered as overlays.
    #[serde(default = "default_overlays")]
    pub overlays: usize,
    pub dataset: DatasetSource,
    #[serde(default)]
    pub detection: DetectionSource,
    #[serde(default)]
    pub preprocess: PreprocessParams,
    #[serde(default)]
    pub encoder: EncoderConfig,
    #[serde(default)]
    pub model: ModelParams,
    #[serde(default)]
    pub train: TrainParams,
}

impl RunConfig {
    pub fn new(dataset: DatasetSource, output_dir: impl Into<PathBuf>) -> Self {
        Self {
            seed: 0,
            output_dir: output_dir.into(),
            workers: None,
            thresholds: default_thresholds(),
            split_fractions: default_fractions(),
            dilate_predictions: true,
            overlays: default_overlays(),
            dataset,
            detection: DetectionSource::default(),
            preprocess: PreprocessParams::default(),
            encoder: EncoderConfig::default(),
            model: ModelParams::default(),
            train: TrainParams::default(),
        }
    }

    /// Configuration used by the 60-image synthetic acceptance run.
    pub fn synthetic_default(output_dir: impl Into<PathBuf>) -> Self {
        let mut cfg = Self::new(DatasetSource::Synthetic(SynthSpec::default()), output_dir);
        cfg.preprocess.target_size = 256;
        cfg
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        // relative paths in a config file are relative to the file
        let base = path.parent().unwrap_or(Path::new(""));
        if let DatasetSource::Manifest(p) = &mut cfg.dataset {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if let DetectionSource::Ingest(p) = &mut cfg.detection {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run configuration serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.preprocess.validate()?;
        self.encoder.validate()?;
        self.train.validate()?;
        self.model_config(Ablation::BoxesNormMasks).validate()?;
        if let DatasetSource::Synthetic(s) = &self.dataset {
            s.validate()?;
        }
        if let DetectionSource::Blob(b) = &self.detection {
            b.validate()?;
        }
        let f = self.split_fractions;
        if f.iter().any(|v| !(*v >= 0.0)) || (f.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split fractions {f:?} must be non-negative and sum to 1")));
        }
        if self.thresholds.is_empty() {
            return Err(Error::Config("no IOU thresholds".into()));
        }
        if self.workers == Some(0) {
            return Err(Error::Config("workers must be positive".into()));
        }
        Ok(())
    }

    /// Encoder settings for `ablation` in the normalized image frame.
    pub fn encoder_config(&self, ablation: Ablation) -> EncoderConfig {
        EncoderConfig {
            image_size: self.preprocess.target_size,
            ..self.encoder.with_ablation(ablation)
        }
    }

    pub fn model_config(&self, ablation: Ablation) -> ModelConfig {
        let enc = self.encoder_config(ablation);
        ModelConfig {
            feature_dim: enc.feature_dim,
            hidden_size: self.model.hidden_size,
            combine: enc.combine,
            mask: enc.use_masks.then_some(MaskEncoderConfig {
                crop_size: enc.mask_crop_size,
                filters: self.model.mask_filters,
                kernel: self.model.mask_kernel,
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip() {
        let cfg = RunConfig::synthetic_default("out");
        let back = RunConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn minimal_file() {
        let cfg = RunConfig::from_toml("output_dir = \"r\"\n[dataset]\nmanifest = \"m.jsonl\"\n").unwrap();
        assert_eq!(cfg.detection, DetectionSource::default());
        assert_eq!(cfg.thresholds, DEFAULT_THRESHOLDS.to_vec());
        let cfg = RunConfig::from_toml(
            "output_dir = \"r\"\ndetection = \"ground_truth\"\n[dataset.synthetic]\nimage_count = 9\n",
        )
        .unwrap();
        assert_eq!(cfg.detection, DetectionSource::GroundTruth);
        assert!(matches!(cfg.dataset, DatasetSource::Synthetic(ref s) if s.image_count == 9));
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(matches!(
            RunConfig::from_toml("output_dir = \"r\"\nbogus = 1\n[dataset]\nmanifest = \"m\"\n"),
            Err(Error::Config(_))
        ));
        let mut cfg = RunConfig::synthetic_default("o");
        cfg.split_fractions = [0.5, 0.5, 0.5];
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn ablation_drives_encoder() {
        let cfg = RunConfig::synthetic_default("o");
        for a in Ablation::ALL {
            let e = cfg.encoder_config(a);
            assert_eq!((e.normalize_boxes, e.use_masks), a.switches());
            assert_eq!(e.image_size, 256);
            assert_eq!(cfg.model_config(a).mask.is_some(), e.use_masks);
        }
    }
}
