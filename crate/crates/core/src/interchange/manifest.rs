//! Dataset manifests: JSON index of spectrogram/posteriorgram files with
//! labels and ground truth. Paths are stored relative to the manifest's
//! directory. See `docs/formats.md` for the schema.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::npy;
use super::types::{Label, Posteriorgram, Spectrogram};
use crate::error::{Error, Result};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Noise,
    FakePhoneme,
    External,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

/// Known anomalous region of a sample.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroundTruth {
    /// Frames `[start, end)` carrying injected noise.
    NoiseWindow { start: usize, end: usize },
    /// Indices into the sample's planted segmentation.
    CorruptedSegments(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub sample_id: String,
    pub split: Split,
    pub label: Label,
    pub spectrogram: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub posteriorgram: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<GroundTruth>,
    /// For derived samples (e.g. a fake made from a real one), the source id.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_id: Option<String>,
    /// Set by exporters when this entry could not be produced; such entries
    /// are skipped.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub kind: DatasetKind,
    pub seed: u64,
    /// Echo of the generator configuration.
    #[serde(default)]
    pub generator: serde_json::Value,
    /// Phoneme labels for every posteriorgram row.
    #[serde(default)]
    pub vocab: Vec<String>,
    pub entries: Vec<ManifestEntry>,
}

/// A manifest together with the directory its relative paths resolve against.
#[derive(Debug, Clone)]
pub struct LoadedManifest {
    pub manifest: DatasetManifest,
    pub root: PathBuf,
}

impl DatasetManifest {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<LoadedManifest> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let manifest: DatasetManifest =
            serde_json::from_str(&text).map_err(|source| Error::Json {
                path: path.to_path_buf(),
                source,
            })?;
        if manifest.format_version != MANIFEST_VERSION {
            return Err(Error::validation(format!(
                "unsupported manifest format_version {}",
                manifest.format_version
            )));
        }
        let root = path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        Ok(LoadedManifest { manifest, root })
    }

    /// Entries without an exporter error, optionally restricted to a split.
    pub fn usable(&self, split: Option<Split>) -> impl Iterator<Item = &ManifestEntry> {
        self.entries
            .iter()
            .filter(move |e| e.error.is_none() && split.is_none_or(|s| e.split == s))
    }
}

impl LoadedManifest {
    pub fn resolve(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn load_spectrogram(&self, entry: &ManifestEntry) -> Result<Spectrogram> {
        let m = npy::load_matrix(self.resolve(&entry.spectrogram))?;
        Spectrogram::new(entry.sample_id.clone(), m)
    }

    pub fn load_posteriorgram(&self, entry: &ManifestEntry) -> Result<Posteriorgram> {
        let rel = entry.posteriorgram.as_deref().ok_or_else(|| {
            Error::validation(format!("entry '{}' has no posteriorgram", entry.sample_id))
        })?;
        let m = npy::load_matrix(self.resolve(rel))?;
        Posteriorgram::new(m, self.manifest.vocab.clone())
    }

    pub fn find(&self, sample_id: &str) -> Option<&ManifestEntry> {
        self.manifest
            .entries
            .iter()
            .find(|e| e.sample_id == sample_id)
    }

    /// Referential-integrity pass: ids unique, every referenced file present
    /// and parseable, ground truth within bounds.
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for e in &self.manifest.entries {
            if !seen.insert(e.sample_id.as_str()) {
                return Err(Error::validation(format!(
                    "duplicate sample_id '{}'",
                    e.sample_id
                )));
            }
        }
        for e in self.manifest.usable(None) {
            let spec = self.load_spectrogram(e)?;
            let frames = spec.data().cols();
            if e.posteriorgram.is_some() {
                let ppg = self.load_posteriorgram(e)?;
                if ppg.frames() == 0 {
                    return Err(Error::validation(format!(
                        "posteriorgram of '{}' has no frames",
                        e.sample_id
                    )));
                }
            }
            match &e.ground_truth {
                Some(GroundTruth::NoiseWindow { start, end }) if start >= end || *end > frames => {
                    return Err(Error::validation(format!(
                        "noise window [{start}, {end}) of '{}' outside [0, {frames})",
                        e.sample_id
                    )));
                }
                Some(GroundTruth::CorruptedSegments(_)) if e.posteriorgram.is_none() => {
                    return Err(Error::validation(format!(
                        "'{}' lists corrupted segments but has no posteriorgram",
                        e.sample_id
                    )));
                }
                Some(GroundTruth::CorruptedSegments(idx)) => {
                    let seg =
                        crate::alignment::segment_posteriorgram(&self.load_posteriorgram(e)?)?;
                    if let Some(bad) = idx.iter().find(|&&i| i >= seg.len()) {
                        return Err(Error::validation(format!(
                            "corrupted segment {bad} of '{}' out of range ({} segments)",
                            e.sample_id,
                            seg.len()
                        )));
                    }
                }
                _ => {}
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::Matrix;

    fn entry(id: &str) -> ManifestEntry {
        ManifestEntry {
            sample_id: id.into(),
            split: Split::Test,
            label: Label::Noisy,
            spectrogram: format!("{id}.npy"),
            posteriorgram: None,
            ground_truth: Some(GroundTruth::NoiseWindow { start: 1, end: 3 }),
            source_id: None,
            error: None,
        }
    }

    fn manifest(entries: Vec<ManifestEntry>) -> DatasetManifest {
        DatasetManifest {
            format_version: MANIFEST_VERSION,
            kind: DatasetKind::Noise,
            seed: 1,
            generator: serde_json::json!({}),
            vocab: vec![],
            entries,
        }
    }

    #[test]
    fn validation_detects_missing_and_malformed_files() {
        let dir = tempfile::tempdir().unwrap();
        let m = manifest(vec![entry("a")]);
        let path = dir.path().join("manifest.json");
        m.save(&path).unwrap();

        let loaded = DatasetManifest::load(&path).unwrap();
        assert!(loaded.validate().unwrap_err().is_io());

        npy::save_matrix(
            &Matrix::zeros(2, 4),
            dir.path().join("a.npy"),
            npy::Precision::F64,
        )
        .unwrap();
        loaded.validate().unwrap();

        fs::write(dir.path().join("a.npy"), b"garbage").unwrap();
        assert!(matches!(loaded.validate(), Err(Error::Format { .. })));
    }

    #[test]
    fn window_outside_bounds_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut e = entry("a");
        e.ground_truth = Some(GroundTruth::NoiseWindow { start: 2, end: 9 });
        let path = dir.path().join("manifest.json");
        manifest(vec![e]).save(&path).unwrap();
        npy::save_matrix(
            &Matrix::zeros(2, 4),
            dir.path().join("a.npy"),
            npy::Precision::F64,
        )
        .unwrap();
        assert!(matches!(
            DatasetManifest::load(&path).unwrap().validate(),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn duplicate_ids_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.json");
        manifest(vec![entry("a"), entry("a")]).save(&path).unwrap();
        assert!(DatasetManifest::load(&path).unwrap().validate().is_err());
    }

    #[test]
    fn json_is_stable_and_round_trips() {
        let m = manifest(vec![entry("a")]);
        let text = m.to_json();
        let back: DatasetManifest = serde_json::from_str(&text).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_json(), text);
        assert!(text.contains("\"noise_window\""));
    }

    #[test]
    fn entries_with_errors_are_skipped() {
        let mut bad = entry("b");
        bad.error = Some("model load failed".into());
        let m = manifest(vec![entry("a"), bad]);
        let ids: Vec<_> = m.usable(None).map(|e| e.sample_id.as_str()).collect();
        assert_eq!(ids, ["a"]);
    }
}
