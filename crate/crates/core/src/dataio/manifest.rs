//! Dataset directory: recording containers plus `manifest.json`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::container::{read_recording, write_recording};
use super::segment::{build_dataset, DataConfig, SegmentRef, SegmentView, SplitSegments};
use super::Recording;
use crate::error::{Error, Result};
use crate::sigproc::{split_recording, Split, SplitSpec};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    /// Container path relative to the manifest's directory.
    pub path: String,
    pub subject_id: String,
    pub recording_id: String,
    pub n_samples: usize,
    pub sample_rate_hz: u32,
    /// Held-out subjects are excluded from pooled (SI) training.
    #[serde(default)]
    pub holdout: bool,
    pub splits: SplitSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: u32,
    pub recordings: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn entry_for(rec: &Recording, path: String, holdout: bool) -> Result<ManifestEntry> {
        Ok(ManifestEntry {
            path,
            subject_id: rec.subject_id().to_string(),
            recording_id: rec.recording_id().to_string(),
            n_samples: rec.n_samples(),
            sample_rate_hz: rec.sample_rate_hz(),
            holdout,
            splits: split_recording(rec.n_samples().max(10))?,
        })
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let m: Manifest =
            serde_json::from_str(&text).map_err(|source| Error::Json { path: path.clone(), source })?;
        if m.version != 1 {
            return Err(Error::invalid(format!(
                "{}: unsupported manifest version {}",
                path.display(),
                m.version
            )));
        }
        Ok(m)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
    }
}

/// Writes every recording as `<subject>_<recording>.nmm` plus the manifest.
pub fn write_dataset_dir(dir: &Path, recordings: &[(Recording, bool)]) -> Result<Manifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(recordings.len());
    for (rec, holdout) in recordings {
        let name = format!("{}_{}.nmm", rec.subject_id(), rec.recording_id());
        write_recording(&dir.join(&name), rec)?;
        entries.push(Manifest::entry_for(rec, name, *holdout)?);
    }
    let manifest = Manifest {
        version: 1,
        recordings: entries,
    };
    manifest.write(dir)?;
    Ok(manifest)
}

/// All recordings of one subject with their segments.
#[derive(Clone, Debug)]
pub struct SubjectData {
    pub subject_id: String,
    pub holdout: bool,
    pub recordings: Vec<Recording>,
    pub segments: SplitSegments,
    pub window: usize,
}

impl SubjectData {
    pub fn new(
        subject_id: impl Into<String>,
        holdout: bool,
        recordings: Vec<Recording>,
        cfg: &DataConfig,
    ) -> Result<Self> {
        let Some(first) = recordings.first() else {
            return Err(Error::invalid("subject has no recordings"));
        };
        let window = cfg.windowing(first.sample_rate_hz())?.window;
        let segments = build_dataset(&recordings, cfg)?;
        Ok(Self {
            subject_id: subject_id.into(),
            holdout,
            recordings,
            segments,
            window,
        })
    }

    pub fn view(&self, seg: &SegmentRef) -> SegmentView<'_> {
        SegmentView::new(&self.recordings, seg, self.window)
    }

    pub fn views(&self, split: Split) -> Vec<SegmentView<'_>> {
        self.segments
            .get(split)
            .iter()
            .map(|s| self.view(s))
            .collect()
    }
}

/// Reads a dataset directory and groups recordings by subject (sorted by id).
pub fn load_subjects(dir: &Path, cfg: &DataConfig) -> Result<Vec<SubjectData>> {
    let manifest = Manifest::read(dir)?;
    let mut grouped: BTreeMap<String, (bool, Vec<Recording>)> = BTreeMap::new();
    for entry in &manifest.recordings {
        let path: PathBuf = dir.join(&entry.path);
        let rec = read_recording(&path)?;
        if rec.subject_id() != entry.subject_id || rec.n_samples() != entry.n_samples {
            return Err(Error::invalid(format!(
                "{}: container does not match its manifest entry",
                path.display()
            )));
        }
        let slot = grouped
            .entry(entry.subject_id.clone())
            .or_insert((entry.holdout, Vec::new()));
        slot.0 |= entry.holdout;
        slot.1.push(rec);
    }
    grouped
        .into_iter()
        .map(|(sid, (holdout, recs))| SubjectData::new(sid, holdout, recs, cfg))
        .collect()
}
