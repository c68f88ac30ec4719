//! Run orchestration: preprocessing, detection, phase-one evaluation and
//! phase-two severity training for each input ablation.
//!
//! Run directory:
//!
//! ```text
//! config.toml                      configuration snapshot (output_dir = ".")
//! data/                            generated dataset, synthetic runs only
//! preprocess/images/<id>.png       normalized images
//! preprocess/ground_truth.dets     dilated, split ground-truth instances
//! preprocess/splits.csv            image_id,split,severity
//! detect/predictions.dets
//! phase1/report.txt|report.jsonl|per_image.csv
//! phase2/<ablation>/result.json    accuracy and confusion on the test split
//! phase2/<ablation>/model.ckpt
//! phase2/<ablation>/history.csv
//! phase2/<ablation>/predictions.csv
//! phase2/<ablation>/sequences.jsonl
//! overlays/<id>.png
//! artifacts.json                   SHA-256 of every file above
//! ```

mod artifacts;
mod config;

pub use artifacts::{write_artifact_manifest, ArtifactEntry, PHASE2_RESULT_ROLE};
pub use config::{DatasetSource, DetectionSource, ModelParams, RunConfig};

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::RngCore;
use rayon::prelude::*;
use serde::Serialize;

use crate::detect::{blob_detect, ingest_detections, write_synthetic_dataset};
use crate::encoder::{build_sequence, prepare_sequence, Ablation, SequenceInput};
use crate::error::{Error, Result};
use crate::imageproc::io::{load_fundus, load_mask, save_fundus};
use crate::imageproc::{dilate_mask, normalize_with_geometry, render_overlay, split_instances, warp_mask, PreprocessParams};
use crate::model::{
    write_detection_file, BinaryMask, DatasetManifest, Detection, DetectionSet, FundusImage, LesionKind,
    SeverityGrade, SeverityMapping, Split,
};
use crate::neural::{
    checkpoint_to_string, predict_severity, stream_rng, train, SeverityModel, TrainHistory,
};
use crate::segmetrics::{accuracy, confusion_from_labels, phase1_report, ConfusionMatrix, EvalReport, SplitResults};

/// Published test accuracy (percent) of each ablation, kept next to the
/// reproduced numbers for comparison. Not expected to match: they come from
/// a trained Mask R-CNN on the original retinal datasets.
pub fn published_accuracy(ablation: Ablation) -> f64 {
    match ablation {
        Ablation::BoxesRaw => 92.67,
        Ablation::BoxesNorm => 84.37,
        Ablation::BoxesNormMasks => 93.47,
    }
}

const SPLIT_STREAM: u64 = 1;
const SYNTH_STREAM: u64 = 2;
const MODEL_STREAM: u64 = 10;
const SHUFFLE_STREAM: u64 = 20;

/// Seed for one purpose, derived from the run's root seed.
pub fn derive_seed(root: u64, stream: u64) -> u64 {
    stream_rng(root, stream).next_u64()
}

/// One image after preprocessing.
#[derive(Debug, Clone)]
pub struct PreparedImage {
    pub id: String,
    pub split: Split,
    pub grade: Option<SeverityGrade>,
    /// Normalized image, `target_size` square.
    pub image: FundusImage,
    /// Ground-truth instances in the normalized frame; `None` without masks.
    pub truth: Option<DetectionSet>,
}

#[derive(Debug, Clone)]
pub struct PreparedRun {
    pub images: Vec<PreparedImage>,
    pub predictions: Vec<DetectionSet>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Phase2Result {
    pub ablation: Ablation,
    pub description: &'static str,
    pub normalize_boxes: bool,
    pub use_masks: bool,
    pub train_images: usize,
    pub test_images: usize,
    pub epochs_run: usize,
    pub final_train_loss: f64,
    pub final_train_accuracy: f64,
    pub test_accuracy: f64,
    pub confusion: ConfusionMatrix,
    pub published_accuracy_percent: f64,
    #[serde(skip)]
    pub model: Option<SeverityModel>,
    #[serde(skip)]
    pub history: TrainHistory,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub phase1: EvalReport,
    pub phase2: Vec<Phase2Result>,
    pub artifacts: Vec<ArtifactEntry>,
}

fn create_dir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

fn write_text(p: &Path, text: &str) -> Result<()> {
    if let Some(parent) = p.parent() {
        create_dir(parent)?;
    }
    fs::write(p, text).map_err(|e| Error::io(p, e))
}

fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    match workers {
        None => f(),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(format!("cannot start {n} workers: {e}")))?
            .install(f),
    }
}

/// Loads the manifest, generating the synthetic dataset first if asked to.
pub fn load_dataset(cfg: &RunConfig) -> Result<DatasetManifest> {
    match &cfg.dataset {
        DatasetSource::Manifest(p) => DatasetManifest::load(p),
        DatasetSource::Synthetic(spec) => {
            let spec = crate::detect::SynthSpec {
                seed: derive_seed(cfg.seed, SYNTH_STREAM),
                ..spec.clone()
            };
            let dir = cfg.output_dir.join("data");
            let path = write_synthetic_dataset(&dir, &spec)?;
            DatasetManifest::load(&path)
        }
    }
}

/// Explicit splits are kept when every entry has one; otherwise a seeded
/// shuffle is cut by `fractions` (train, validation, test).
pub fn assign_splits(manifest: &DatasetManifest, fractions: [f64; 3], seed: u64) -> Vec<Split> {
    let n = manifest.entries.len();
    if n > 0 && manifest.entries.iter().all(|e| e.split.is_some()) {
        return manifest.entries.iter().map(|e| e.split.unwrap()).collect();
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream_rng(seed, SPLIT_STREAM));
    let n_train = (fractions[0] * n as f64).round() as usize;
    let n_val = ((fractions[1] * n as f64).round() as usize).min(n - n_train.min(n));
    let mut out = vec![Split::Test; n];
    for (rank, &i) in order.iter().enumerate() {
        out[i] = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_val {
            Split::Validation
        } else {
            Split::Test
        };
    }
    out
}

/// Normalizes one image and, when masks are listed, maps them into the
/// normalized frame, dilates them and splits them into instances.
pub fn preprocess_entry(
    manifest: &DatasetManifest,
    index: usize,
    params: &PreprocessParams,
) -> Result<(FundusImage, Option<DetectionSet>)> {
    let entry = &manifest.entries[index];
    let raw = load_fundus(&manifest.resolve(&entry.image))?;
    let id = entry.image_id();
    let (image, geom) = normalize_with_geometry(&raw, params)?;
    let image = image.with_id(&id);
    if !entry.has_masks() {
        return Ok((image, None));
    }
    let mut dets = Vec::new();
    for (kind, path) in [(LesionKind::Ex, &entry.masks_ex), (LesionKind::Ma, &entry.masks_ma)] {
        let Some(path) = path else { continue };
        let mask = load_mask(&manifest.resolve(path))?;
        if (mask.width(), mask.height()) != (raw.width(), raw.height()) {
            return Err(Error::Validation(format!(
                "{id}: {kind} mask is {}x{}, image is {}x{}",
                mask.width(),
                mask.height(),
                raw.width(),
                raw.height()
            )));
        }
        let mut warped = warp_mask(&mask, &geom, params);
        if params.dilate_kinds.applies_to(kind) {
            warped = dilate_mask(&warped, params.dilation_kernel, params.dilation_iterations)?;
        }
        dets.extend(split_instances(&warped, kind).into_iter().map(|i| i.into_detection()));
    }
    Ok((image, Some(DetectionSet::new(id, dets)?)))
}

fn dilate_predictions(set: DetectionSet, params: &PreprocessParams) -> Result<DetectionSet> {
    let id = set.image_id().to_string();
    let dets = set
        .into_detections()
        .into_iter()
        .map(|d| match d.mask() {
            Some(m) if params.dilate_kinds.applies_to(d.kind()) => {
                let grown: BinaryMask = dilate_mask(m, params.dilation_kernel, params.dilation_iterations)?;
                Detection::from_mask(d.kind(), d.score(), grown)
            }
            _ => Ok(d),
        })
        .collect::<Result<_>>()?;
    DetectionSet::new(id, dets)
}

fn detect(cfg: &RunConfig, images: &[PreparedImage]) -> Result<Vec<DetectionSet>> {
    match &cfg.detection {
        DetectionSource::Blob(p) => images
            .par_iter()
            .map(|im| {
                let set = blob_detect(&im.image, p)?;
                if cfg.dilate_predictions {
                    dilate_predictions(set, &cfg.preprocess)
                } else {
                    Ok(set)
                }
            })
            .collect(),
        DetectionSource::GroundTruth => images
            .iter()
            .map(|im| {
                im.truth
                    .clone()
                    .ok_or_else(|| Error::Config(format!("{}: ground-truth detections need masks", im.id)))
            })
            .collect(),
        DetectionSource::Ingest(path) => {
            let mut sets = ingest_detections(path)?;
            for s in &sets {
                if !images.iter().any(|im| im.id == s.image_id()) {
                    return Err(Error::Validation(format!(
                        "detections for unknown image {:?}",
                        s.image_id()
                    )));
                }
            }
            // images without records have no detections
            Ok(images
                .iter()
                .map(|im| match sets.iter().position(|s| s.image_id() == im.id) {
                    Some(k) => sets.swap_remove(k),
                    None => DetectionSet::empty(&im.id),
                })
                .collect())
        }
    }
}

/// Preprocesses every image and obtains detections, persisting both.
pub fn prepare(cfg: &RunConfig) -> Result<PreparedRun> {
    cfg.validate()?;
    let manifest = load_dataset(cfg)?;
    if manifest.entries.is_empty() {
        return Err(Error::Config("manifest lists no images".into()));
    }
    let splits = assign_splits(&manifest, cfg.split_fractions, cfg.seed);
    let mapping = SeverityMapping::default();
    let images: Vec<PreparedImage> = (0..manifest.entries.len())
        .into_par_iter()
        .map(|i| {
            let (image, truth) = preprocess_entry(&manifest, i, &cfg.preprocess)?;
            Ok(PreparedImage {
                id: image.id().to_string(),
                split: splits[i],
                grade: manifest.entries[i].severity_grade(&mapping)?,
                image,
                truth,
            })
        })
        .collect::<Result<_>>()?;
    let mut seen = std::collections::HashSet::new();
    for im in &images {
        if !seen.insert(&im.id) {
            return Err(Error::Validation(format!("duplicate image id {:?}", im.id)));
        }
    }

    let out = &cfg.output_dir;
    let img_dir = out.join("preprocess/images");
    create_dir(&img_dir)?;
    images
        .par_iter()
        .map(|im| save_fundus(&im.image, &img_dir.join(format!("{}.png", im.id))))
        .collect::<Result<Vec<()>>>()?;
    let truth: Vec<DetectionSet> = images.iter().filter_map(|im| im.truth.clone()).collect();
    write_detection_file(&out.join("preprocess/ground_truth.dets"), &truth)?;
    let mut csv = String::from("image_id,split,severity\n");
    for im in &images {
        let sev = im.grade.map(|g| g.index().to_string()).unwrap_or_else(|| "NA".into());
        let _ = writeln!(csv, "{},{},{sev}", im.id, im.split);
    }
    write_text(&out.join("preprocess/splits.csv"), &csv)?;

    let predictions = detect(cfg, &images)?;
    create_dir(&out.join("detect"))?;
    write_detection_file(&out.join("detect/predictions.dets"), &predictions)?;
    Ok(PreparedRun { images, predictions })
}

/// Phase-one report from prepared data; writes `phase1/`.
pub fn phase1_from(cfg: &RunConfig, run: &PreparedRun) -> Result<EvalReport> {
    let mut grouped: Vec<(Split, SplitResults)> = Vec::new();
    for split in Split::ALL {
        let mut rows = Vec::new();
        for (im, pred) in run.images.iter().zip(&run.predictions) {
            if im.split != split {
                continue;
            }
            let gt = im
                .truth
                .clone()
                .ok_or_else(|| Error::Config(format!("{}: phase one needs ground-truth masks", im.id)))?;
            rows.push((pred.clone(), gt));
        }
        if !rows.is_empty() {
            grouped.push((split, rows));
        }
    }
    let report = phase1_report(&grouped, &cfg.thresholds)?;
    let dir = cfg.output_dir.join("phase1");
    write_text(&dir.join("report.txt"), &report.to_table())?;
    write_text(&dir.join("report.jsonl"), &report.to_records())?;
    write_text(&dir.join("per_image.csv"), &report.per_image_csv())?;
    Ok(report)
}

/// Trains on the train split and scores the test split for one ablation;
/// writes `phase2/<ablation>/`.
pub fn phase2_from(cfg: &RunConfig, run: &PreparedRun, ablation: Ablation) -> Result<Phase2Result> {
    let enc = cfg.encoder_config(ablation);
    let mut seqs: Vec<(SequenceInput, SeverityGrade, Split)> = Vec::with_capacity(run.images.len());
    for (im, pred) in run.images.iter().zip(&run.predictions) {
        let grade = im
            .grade
            .ok_or_else(|| Error::Config(format!("{}: no severity label", im.id)))?;
        seqs.push((prepare_sequence(pred, &enc)?, grade, im.split));
    }
    let train_set: Vec<(SequenceInput, SeverityGrade)> = seqs
        .iter()
        .filter(|s| s.2 == Split::Train)
        .map(|s| (s.0.clone(), s.1))
        .collect();
    let n_test = seqs.iter().filter(|s| s.2 == Split::Test).count();
    if train_set.is_empty() || n_test == 0 {
        return Err(Error::Config("phase two needs non-empty train and test splits".into()));
    }
    let stream = Ablation::ALL.iter().position(|a| *a == ablation).unwrap() as u64;
    let model = SeverityModel::init(cfg.model_config(ablation), derive_seed(cfg.seed, MODEL_STREAM + stream))?;
    let params = crate::neural::TrainParams {
        seed: derive_seed(cfg.seed, SHUFFLE_STREAM + stream),
        ..cfg.train.clone()
    };
    let (model, history) = train(model, &train_set, &params)?;

    let predicted: Vec<(SeverityGrade, [f64; 3])> = seqs
        .par_iter()
        .map(|s| predict_severity(&model, &s.0))
        .collect::<Result<_>>()?;
    let (truth, pred): (Vec<SeverityGrade>, Vec<SeverityGrade>) = seqs
        .iter()
        .zip(&predicted)
        .filter(|(s, _)| s.2 == Split::Test)
        .map(|(s, p)| (s.1, p.0))
        .unzip();
    let confusion = confusion_from_labels(&truth, &pred)?;
    let last = *history.last().expect("history has the initial entry");
    let (normalize_boxes, use_masks) = ablation.switches();
    let result = Phase2Result {
        ablation,
        description: ablation.description(),
        normalize_boxes,
        use_masks,
        train_images: train_set.len(),
        test_images: n_test,
        epochs_run: last.epoch,
        final_train_loss: last.loss,
        final_train_accuracy: last.accuracy,
        test_accuracy: accuracy(&confusion)?,
        confusion,
        published_accuracy_percent: published_accuracy(ablation),
        model: None,
        history,
    };

    let dir = cfg.output_dir.join("phase2").join(ablation.as_str());
    create_dir(&dir)?;
    write_text(
        &dir.join("result.json"),
        &(serde_json::to_string_pretty(&result).expect("result serializes") + "\n"),
    )?;
    write_text(&dir.join("model.ckpt"), &checkpoint_to_string(&model))?;
    write_text(&dir.join("history.csv"), &result.history.to_csv())?;
    let mut csv = String::from("image_id,split,severity,predicted,p_healthy,p_medium,p_severe\n");
    for (s, (g, p)) in seqs.iter().zip(&predicted) {
        let _ = writeln!(
            csv,
            "{},{},{},{},{:.6},{:.6},{:.6}",
            s.0.image_id,
            s.2,
            s.1.index(),
            g.index(),
            p[0],
            p[1],
            p[2]
        );
    }
    write_text(&dir.join("predictions.csv"), &csv)?;
    let mut lines = String::new();
    for pred in &run.predictions {
        let fs = build_sequence(pred, &enc, model.mask_encoder.as_ref())?;
        lines.push_str(&fs.to_record());
        lines.push('\n');
    }
    write_text(&dir.join("sequences.jsonl"), &lines)?;
    Ok(Phase2Result {
        model: Some(model),
        ..result
    })
}

fn render_overlays(cfg: &RunConfig, run: &PreparedRun) -> Result<()> {
    let dir = cfg.output_dir.join("overlays");
    create_dir(&dir)?;
    let picks: Vec<usize> = (0..run.images.len())
        .filter(|&i| run.images[i].split == Split::Test)
        .take(cfg.overlays)
        .collect();
    picks
        .par_iter()
        .map(|&i| {
            let im = &run.images[i];
            let over = render_overlay(&im.image, &run.predictions[i], im.truth.as_ref())?;
            save_fundus(&over, &dir.join(format!("{}.png", im.id)))
        })
        .collect::<Result<Vec<()>>>()?;
    Ok(())
}

fn snapshot_config(cfg: &RunConfig) -> Result<()> {
    let snap = RunConfig {
        output_dir: PathBuf::from("."),
        workers: None,
        ..cfg.clone()
    };
    write_text(&cfg.output_dir.join("config.toml"), &snap.to_toml())
}

pub fn run_phase1(cfg: &RunConfig) -> Result<EvalReport> {
    with_workers(cfg.workers, || {
        snapshot_config(cfg)?;
        let run = prepare(cfg)?;
        phase1_from(cfg, &run)
    })
}

pub fn run_phase2(cfg: &RunConfig, ablation: Ablation) -> Result<Phase2Result> {
    with_workers(cfg.workers, || {
        snapshot_config(cfg)?;
        let run = prepare(cfg)?;
        phase2_from(cfg, &run, ablation)
    })
}

/// Phase one, then phase two for every ablation, overlays, and the digest
/// manifest `artifacts.json`.
pub fn run_end_to_end(cfg: &RunConfig) -> Result<RunSummary> {
    with_workers(cfg.workers, || {
        let out = &cfg.output_dir;
        if out.join("artifacts.json").exists() {
            // stale files from an earlier run would end up in the manifest
            for sub in ["preprocess", "detect", "phase1", "phase2", "overlays", "data"] {
                let p = out.join(sub);
                if p.exists() {
                    fs::remove_dir_all(&p).map_err(|e| Error::io(&p, e))?;
                }
            }
        }
        snapshot_config(cfg)?;
        let run = prepare(cfg)?;
        let phase1 = phase1_from(cfg, &run)?;
        let phase2 = Ablation::ALL
            .par_iter()
            .map(|a| phase2_from(cfg, &run, *a))
            .collect::<Result<Vec<_>>>()?;
        render_overlays(cfg, &run)?;
        let artifacts = write_artifact_manifest(out)?;
        Ok(RunSummary {
            phase1,
            phase2,
            artifacts,
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ManifestEntry;

    #[test]
    fn seeded_split_partitions() {
        let entries = (0..20).map(|i| ManifestEntry::new(format!("i{i}.png"))).collect();
        let m = DatasetManifest::new(".", entries);
        let s = assign_splits(&m, [0.7, 0.15, 0.15], 3);
        assert_eq!(s.iter().filter(|x| **x == Split::Train).count(), 14);
        assert_eq!(s.iter().filter(|x| **x == Split::Validation).count(), 3);
        assert_eq!(s.iter().filter(|x| **x == Split::Test).count(), 3);
        assert_eq!(s, assign_splits(&m, [0.7, 0.15, 0.15], 3));
        assert_ne!(s, assign_splits(&m, [0.7, 0.15, 0.15], 4));
    }

    #[test]
    fn explicit_splits_kept() {
        let mut e = ManifestEntry::new("a.png");
        e.split = Some(Split::Test);
        let m = DatasetManifest::new(".", vec![e]);
        assert_eq!(assign_splits(&m, [1.0, 0.0, 0.0], 0), vec![Split::Test]);
    }
}
