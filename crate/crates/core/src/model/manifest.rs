//! Dataset manifests: one JSON object per line.
//!
//! ```text
//! {"image":"images/img_000.png","masks_ex":"masks/img_000_ex.png","masks_ma":"masks/img_000_ma.png","severity":1,"split":"train"}
//! {"image":"kaggle/10_left.jpeg","severity_raw":3}
//! ```
//!
//! Relative paths resolve against the manifest's directory. Blank lines and
//! lines starting with `#` are skipped.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{SeverityGrade, SeverityMapping};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Validation, Split::Test];

    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub image: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub masks_ex: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub masks_ma: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub severity_raw: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub severity: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
}

impl ManifestEntry {
    pub fn new(image: impl Into<PathBuf>) -> Self {
        Self {
            image: image.into(),
            masks_ex: None,
            masks_ma: None,
            severity_raw: None,
            severity: None,
            split: None,
        }
    }

    /// File stem of the image path.
    pub fn image_id(&self) -> String {
        self.image
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    }

    pub fn has_masks(&self) -> bool {
        self.masks_ex.is_some() || self.masks_ma.is_some()
    }

    /// Explicit `severity` wins; otherwise `severity_raw` is mapped.
    pub fn severity_grade(&self, mapping: &SeverityMapping) -> Result<Option<SeverityGrade>> {
        if let Some(s) = self.severity {
            let idx = usize::try_from(s)
                .map_err(|_| Error::Range(format!("severity {s} outside 0..=2")))?;
            return SeverityGrade::from_index(idx).map(Some);
        }
        self.severity_raw.map(|r| mapping.map(r)).transpose()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    /// Directory relative paths resolve against.
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
    /// 1-based source line of each entry.
    pub lines: Vec<usize>,
}

impl DatasetManifest {
    pub fn new(root: impl Into<PathBuf>, entries: Vec<ManifestEntry>) -> Self {
        let lines = (1..=entries.len()).collect();
        Self {
            root: root.into(),
            entries,
            lines,
        }
    }

    pub fn parse(text: &str, root: impl Into<PathBuf>) -> Result<Self> {
        let mut entries = Vec::new();
        let mut lines = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let entry: ManifestEntry = serde_json::from_str(trimmed).map_err(|e| Error::Parse {
                line: idx + 1,
                message: e.to_string(),
            })?;
            entries.push(entry);
            lines.push(idx + 1);
        }
        Ok(Self {
            root: root.into(),
            entries,
            lines,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, root)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e).expect("manifest entries serialize"));
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ManifestIssue {
    MissingFile { line: usize, path: PathBuf },
    UnreadableImage { line: usize, path: PathBuf, message: String },
    DimensionMismatch { line: usize, path: PathBuf, expected: (u32, u32), found: (u32, u32) },
    RawLabelOutOfRange { line: usize, value: i64 },
    LabelOutOfRange { line: usize, value: i64 },
    LabelConflict { line: usize, raw: i64, severity: i64 },
    DuplicateImageId { line: usize, image_id: String },
}

impl fmt::Display for ManifestIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ManifestIssue::MissingFile { line, path } => {
                write!(f, "line {line}: missing file {}", path.display())
            }
            ManifestIssue::UnreadableImage { line, path, message } => {
                write!(f, "line {line}: cannot read {}: {message}", path.display())
            }
            ManifestIssue::DimensionMismatch { line, path, expected, found } => write!(
                f,
                "line {line}: {} is {}x{}, image is {}x{}",
                path.display(),
                found.0,
                found.1,
                expected.0,
                expected.1
            ),
            ManifestIssue::RawLabelOutOfRange { line, value } => {
                write!(f, "line {line}: raw severity {value} outside 0..=4")
            }
            ManifestIssue::LabelOutOfRange { line, value } => {
                write!(f, "line {line}: severity {value} outside 0..=2")
            }
            ManifestIssue::LabelConflict { line, raw, severity } => {
                write!(f, "line {line}: raw severity {raw} does not map to severity {severity}")
            }
            ManifestIssue::DuplicateImageId { line, image_id } => {
                write!(f, "line {line}: duplicate image id {image_id:?}")
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub issues: Vec<ManifestIssue>,
}

impl ValidationReport {
    pub fn ok(&self) -> bool {
        self.issues.is_empty()
    }
}

/// Checks every referenced file exists, masks match their image's
/// dimensions, and labels are in range.
pub fn validate_manifest(manifest: &DatasetManifest, mapping: &SeverityMapping) -> ValidationReport {
    let mut issues = Vec::new();
    let mut ids = HashSet::new();
    for (entry, &line) in manifest.entries.iter().zip(&manifest.lines) {
        let id = entry.image_id();
        if !ids.insert(id.clone()) {
            issues.push(ManifestIssue::DuplicateImageId { line, image_id: id });
        }

        let image_path = manifest.resolve(&entry.image);
        let image_dims = if image_path.is_file() {
            match image::image_dimensions(&image_path) {
                Ok(d) => Some(d),
                Err(e) => {
                    issues.push(ManifestIssue::UnreadableImage {
                        line,
                        path: image_path.clone(),
                        message: e.to_string(),
                    });
                    None
                }
            }
        } else {
            issues.push(ManifestIssue::MissingFile { line, path: image_path });
            None
        };

        for mask in [&entry.masks_ex, &entry.masks_ma].into_iter().flatten() {
            let mask_path = manifest.resolve(mask);
            if !mask_path.is_file() {
                issues.push(ManifestIssue::MissingFile { line, path: mask_path });
                continue;
            }
            match image::image_dimensions(&mask_path) {
                Ok(found) => {
                    if let Some(expected) = image_dims {
                        if found != expected {
                            issues.push(ManifestIssue::DimensionMismatch {
                                line,
                                path: mask_path,
                                expected,
                                found,
                            });
                        }
                    }
                }
                Err(e) => issues.push(ManifestIssue::UnreadableImage {
                    line,
                    path: mask_path,
                    message: e.to_string(),
                }),
            }
        }

        let mapped = match entry.severity_raw {
            Some(raw) => match mapping.map(raw) {
                Ok(g) => Some(g),
                Err(_) => {
                    issues.push(ManifestIssue::RawLabelOutOfRange { line, value: raw });
                    None
                }
            },
            None => None,
        };
        if let Some(s) = entry.severity {
            if !(0..=2).contains(&s) {
                issues.push(ManifestIssue::LabelOutOfRange { line, value: s });
            } else if let (Some(g), Some(raw)) = (mapped, entry.severity_raw) {
                if g.index() as i64 != s {
                    issues.push(ManifestIssue::LabelConflict { line, raw, severity: s });
                }
            }
        }
    }
    ValidationReport { issues }
}
