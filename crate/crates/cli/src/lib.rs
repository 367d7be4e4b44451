//! Command implementations behind the `bsk` binary: feature extraction,
//! training, evaluation and synthetic corpora.

pub mod config;
pub mod evaluate;
pub mod extract;
pub mod synth;
pub mod train;

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use bsk::dataset::{encode_sed_targets, AnnotationEvent, LabelVocabulary, TargetSet};
use bsk::features::FeatureSet;
use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};

pub use config::{Overrides, RunConfig};

/// File name of the sidecar index in a feature directory.
pub const INDEX_FILE: &str = "index.json";

/// A failure tied to one input item; the command carries on with the rest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemError {
    pub item: String,
    pub message: String,
}

impl ItemError {
    pub fn new(item: impl Into<String>, err: &anyhow::Error) -> Self {
        Self {
            item: item.into(),
            message: format!("{err:#}"),
        }
    }
}

/// Machine-readable error list printed when a command fails.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorList {
    pub errors: Vec<ItemError>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowEntry {
    /// Feature file name inside the feature directory.
    pub file: String,
    pub valid_frames: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordingEntry {
    pub audio: PathBuf,
    pub scene: String,
    pub annotation: PathBuf,
    pub total_frames: usize,
    pub events: Vec<AnnotationEvent>,
    pub windows: Vec<WindowEntry>,
}

/// Sidecar written next to the feature files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureIndex {
    pub feature_set: FeatureSet,
    pub sample_rate: u32,
    pub mels: usize,
    /// Window length in frames.
    pub frames: usize,
    /// Seconds between frames.
    pub frame_hop: f64,
    pub vocabulary: LabelVocabulary,
    /// Lag of each GCC-PHAT row, for layouts that carry one.
    pub gcc_lags: Option<Vec<i64>>,
    pub recordings: Vec<RecordingEntry>,
}

impl FeatureIndex {
    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(INDEX_FILE);
        let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join(INDEX_FILE);
        let text = serde_json::to_string_pretty(self)? + "\n";
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
    }

    /// Frame targets of a whole recording.
    pub fn recording_targets(&self, rec: &RecordingEntry) -> Result<TargetSet> {
        let sed = encode_sed_targets(&rec.events, self.frame_hop, rec.total_frames, &self.vocabulary)?;
        let scene = self.vocabulary.scene_index(&rec.scene)?;
        Ok(TargetSet::new(sed, scene, self.vocabulary.scene_classes.len())?)
    }

    /// Targets of window `j`, zero past its valid frames.
    pub fn window_targets(&self, rec: &RecordingEntry, whole: &TargetSet, j: usize) -> TargetSet {
        let start = j * self.frames;
        let valid = rec.windows[j].valid_frames.min(whole.frames().saturating_sub(start));
        let mut sed = Array2::zeros((self.frames, whole.sed.ncols()));
        sed.slice_mut(s![..valid, ..]).assign(&whole.sed.slice(s![start..start + valid, ..]));
        TargetSet {
            sed,
            scene: whole.scene.clone(),
        }
    }
}

/// Writes `value` as pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let text = serde_json::to_string_pretty(value)? + "\n";
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}
