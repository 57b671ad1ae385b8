//! JSON-lines dataset manifests and entry loading.
//!
//! A dataset lives under a root directory holding `manifest.jsonl`; each line
//! names one image and paths relative to that root:
//!
//! ```text
//! {"id": "img-000", "score_map_path": "scores/img-000.npy", "mask_path": "pred/img-000.pgm", "truth_path": "truth/img-000.pgm"}
//! ```
//!
//! At least one of `score_map_path` and `mask_path` is required.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{load_mask, load_scoremap};
use crate::error::{Error, Result};
use crate::inner::{FamilyKind, InnerFamily, PREDICTION_LEVEL};
use crate::mask::{BinaryMask, ScoreMap, StructuringElement};
use crate::risk::LabeledPrediction;

pub const MANIFEST_FILE: &str = "manifest.jsonl";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score_map_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth_path: Option<String>,
}

impl ManifestEntry {
    fn paths(&self) -> impl Iterator<Item = &String> {
        [&self.score_map_path, &self.mask_path, &self.truth_path]
            .into_iter()
            .flatten()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn resolve(&self, relative: &str) -> PathBuf {
        self.root.join(relative)
    }

    pub fn has_scores(&self) -> bool {
        !self.entries.is_empty() && self.entries.iter().all(|e| e.score_map_path.is_some())
    }

    /// Decodes every entry, in manifest order.
    pub fn load_all(&self) -> Result<Vec<LoadedEntry>> {
        self.entries
            .par_iter()
            .map(|e| self.load_entry(e))
            .collect()
    }

    pub fn load_entry(&self, entry: &ManifestEntry) -> Result<LoadedEntry> {
        let id = &entry.id;
        let load = || -> Result<LoadedEntry> {
            let scores = entry
                .score_map_path
                .as_deref()
                .map(|p| load_scoremap(self.resolve(p)))
                .transpose()?;
            let mask = entry
                .mask_path
                .as_deref()
                .map(|p| load_mask(self.resolve(p)))
                .transpose()?;
            let truth = entry
                .truth_path
                .as_deref()
                .map(|p| load_mask(self.resolve(p)))
                .transpose()?;
            let dims: Vec<(usize, usize)> = scores
                .iter()
                .map(ScoreMap::dims)
                .chain(mask.iter().map(BinaryMask::dims))
                .chain(truth.iter().map(BinaryMask::dims))
                .collect();
            if let Some(&(w, h)) = dims.iter().find(|&&d| d != dims[0]) {
                return Err(Error::DimensionMismatch {
                    left_width: dims[0].0,
                    left_height: dims[0].1,
                    right_width: w,
                    right_height: h,
                });
            }
            Ok(LoadedEntry {
                id: id.clone(),
                scores,
                mask,
                truth,
            })
        };
        load().map_err(|e| e.in_entry(id))
    }
}

/// Decoded files of one manifest entry.
#[derive(Clone, Debug, PartialEq)]
pub struct LoadedEntry {
    pub id: String,
    pub scores: Option<ScoreMap>,
    pub mask: Option<BinaryMask>,
    pub truth: Option<BinaryMask>,
}

impl LoadedEntry {
    /// Builds the inner family; erosion prefers the stored mask and falls back
    /// to the score map cut at 0.5.
    pub fn family(&self, kind: FamilyKind, se: Option<&StructuringElement>) -> Result<InnerFamily> {
        match kind {
            FamilyKind::Threshold => {
                let scores = self
                    .scores
                    .clone()
                    .ok_or_else(|| Error::ScoresRequired(self.id.clone()))?;
                Ok(InnerFamily::threshold(scores))
            }
            FamilyKind::Erosion => {
                let base = match (&self.mask, &self.scores) {
                    (Some(mask), _) => mask.clone(),
                    (None, Some(scores)) => scores.threshold(PREDICTION_LEVEL),
                    (None, None) => unreachable!("manifest entries carry scores or a mask"),
                };
                let se = se.cloned().unwrap_or_else(StructuringElement::cross4);
                Ok(InnerFamily::erosion(base, se))
            }
        }
    }

    pub fn labeled(
        &self,
        kind: FamilyKind,
        se: Option<&StructuringElement>,
    ) -> Result<LabeledPrediction> {
        let truth = self
            .truth
            .clone()
            .ok_or_else(|| Error::TruthRequired(self.id.clone()))?;
        LabeledPrediction::new(self.family(kind, se)?, truth).map_err(|e| e.in_entry(&self.id))
    }
}

/// Parses and validates a manifest: ids unique, every referenced file present.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut entries = Vec::new();
    let mut seen = HashSet::new();
    for (k, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let entry: ManifestEntry = serde_json::from_str(line).map_err(|e| Error::Manifest {
            path: path.to_path_buf(),
            line: k + 1,
            message: e.to_string(),
        })?;
        if entry.score_map_path.is_none() && entry.mask_path.is_none() {
            return Err(Error::Manifest {
                path: path.to_path_buf(),
                line: k + 1,
                message: format!("entry {}: needs score_map_path or mask_path", entry.id),
            });
        }
        if !seen.insert(entry.id.clone()) {
            return Err(Error::DuplicateId(entry.id));
        }
        for rel in entry.paths() {
            let full = root.join(rel);
            if !full.is_file() {
                return Err(Error::MissingFile {
                    id: entry.id.clone(),
                    path: full,
                });
            }
        }
        entries.push(entry);
    }
    Ok(DatasetManifest { root, entries })
}

/// Accepts either a manifest file or a directory containing `manifest.jsonl`.
pub fn load_manifest_at(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    if path.is_dir() {
        load_manifest(path.join(MANIFEST_FILE))
    } else {
        load_manifest(path)
    }
}

pub fn write_manifest(path: impl AsRef<Path>, entries: &[ManifestEntry]) -> Result<()> {
    let path = path.as_ref();
    let mut text = String::new();
    for e in entries {
        text.push_str(&serde_json::to_string(e).expect("manifest entry serializes"));
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::save_mask;

    fn entry(id: &str, mask: &str) -> String {
        format!(r#"{{"id": "{id}", "mask_path": "{mask}"}}"#)
    }

    #[test]
    fn empty_file_is_empty_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join(MANIFEST_FILE);
        fs::write(&p, "").unwrap();
        let m = load_manifest(&p).unwrap();
        assert!(m.is_empty());
        assert_eq!(m.root, dir.path());
    }

    #[test]
    fn duplicate_ids_are_named() {
        let dir = tempfile::tempdir().unwrap();
        save_mask(dir.path().join("a.pgm"), &BinaryMask::full(2, 2).unwrap()).unwrap();
        let p = dir.path().join(MANIFEST_FILE);
        fs::write(
            &p,
            format!("{}\n{}\n", entry("x", "a.pgm"), entry("x", "a.pgm")),
        )
        .unwrap();
        let err = load_manifest(&p).unwrap_err();
        assert!(matches!(&err, Error::DuplicateId(id) if id == "x"));
        assert!(err.to_string().contains("\"x\""));
    }

    #[test]
    fn missing_file_and_malformed_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join(MANIFEST_FILE);
        fs::write(&p, entry("y", "nope.pgm")).unwrap();
        assert!(matches!(load_manifest(&p), Err(Error::MissingFile { id, .. }) if id == "y"));
        save_mask(dir.path().join("a.pgm"), &BinaryMask::full(2, 2).unwrap()).unwrap();
        fs::write(&p, format!("{}\n\n{{not json\n", entry("a", "a.pgm"))).unwrap();
        let err = load_manifest(&p).unwrap_err();
        assert!(matches!(err, Error::Manifest { line: 3, .. }));
        assert!(err.to_string().contains(":3:"));
        fs::write(&p, r#"{"id": "z", "truth_path": "a.pgm"}"#).unwrap();
        assert!(matches!(
            load_manifest(&p),
            Err(Error::Manifest { line: 1, .. })
        ));
    }

    #[test]
    fn entry_dimensions_must_agree() {
        let dir = tempfile::tempdir().unwrap();
        save_mask(dir.path().join("a.pgm"), &BinaryMask::full(2, 2).unwrap()).unwrap();
        save_mask(dir.path().join("b.pgm"), &BinaryMask::full(3, 2).unwrap()).unwrap();
        let p = dir.path().join(MANIFEST_FILE);
        fs::write(
            &p,
            r#"{"id": "q", "mask_path": "a.pgm", "truth_path": "b.pgm"}"#,
        )
        .unwrap();
        let m = load_manifest_at(dir.path()).unwrap();
        let err = m.load_all().unwrap_err();
        assert!(err.to_string().starts_with("entry q:"));
    }

    #[test]
    fn threshold_family_needs_scores() {
        let e = LoadedEntry {
            id: "m".into(),
            scores: None,
            mask: Some(BinaryMask::full(2, 2).unwrap()),
            truth: None,
        };
        assert!(matches!(
            e.family(FamilyKind::Threshold, None),
            Err(Error::ScoresRequired(_))
        ));
        assert!(e.family(FamilyKind::Erosion, None).is_ok());
        assert!(matches!(
            e.labeled(FamilyKind::Erosion, None),
            Err(Error::TruthRequired(_))
        ));
    }
}
