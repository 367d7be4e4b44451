//! Recordings, annotations and training targets.

pub mod annotations;
pub mod manifest;
pub mod wav;

use std::collections::BTreeSet;
use std::path::PathBuf;

use ndarray::{s, Array2, Array3};
use serde::{Deserialize, Serialize};

pub use annotations::{format_annotations, parse_annotations, parse_annotations_str, AnnotationEvent};
pub use manifest::{format_manifest, parse_manifest_str, read_manifest, ManifestEntry};
pub use wav::{encode_wav_pcm16, parse_wav, read_wav, write_wav_pcm16};

use crate::dsp::AudioClip;
use crate::features::FeatureTensor;
use crate::{Error, Result};

/// One annotated recording.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipMeta {
    pub audio_path: PathBuf,
    pub scene_label: String,
    pub events: Vec<AnnotationEvent>,
}

/// Event and scene class lists in lexicographic order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelVocabulary {
    pub event_classes: Vec<String>,
    pub scene_classes: Vec<String>,
}

impl LabelVocabulary {
    /// Sorts and deduplicates the given labels.
    pub fn new<E, S>(events: E, scenes: S) -> Self
    where
        E: IntoIterator,
        E::Item: Into<String>,
        S: IntoIterator,
        S::Item: Into<String>,
    {
        let sorted = |it: Vec<String>| it.into_iter().collect::<BTreeSet<_>>().into_iter().collect();
        Self {
            event_classes: sorted(events.into_iter().map(Into::into).collect()),
            scene_classes: sorted(scenes.into_iter().map(Into::into).collect()),
        }
    }

    pub fn from_metas<'a>(metas: impl IntoIterator<Item = &'a ClipMeta>) -> Self {
        let mut events = Vec::new();
        let mut scenes = Vec::new();
        for meta in metas {
            scenes.push(meta.scene_label.clone());
            events.extend(meta.events.iter().map(|e| e.label.clone()));
        }
        Self::new(events, scenes)
    }

    pub fn event_index(&self, label: &str) -> Result<usize> {
        self.event_classes
            .binary_search_by(|c| c.as_str().cmp(label))
            .map_err(|_| Error::UnknownClass(label.to_string()))
    }

    pub fn scene_index(&self, label: &str) -> Result<usize> {
        self.scene_classes
            .binary_search_by(|c| c.as_str().cmp(label))
            .map_err(|_| Error::UnknownClass(label.to_string()))
    }
}

/// Frame-level event activity and the one-hot scene of a clip.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TargetSet {
    /// `frames x event classes`, entries 0 or 1.
    pub sed: Array2<u8>,
    /// One-hot scene vector.
    pub scene: Vec<u8>,
}

impl TargetSet {
    pub fn new(sed: Array2<u8>, scene_index: usize, scene_classes: usize) -> Result<Self> {
        if scene_index >= scene_classes {
            return Err(Error::InvalidInput(format!(
                "scene index {scene_index} out of range for {scene_classes} classes"
            )));
        }
        if sed.iter().any(|&v| v > 1) {
            return Err(Error::InvalidInput("SED targets must be 0 or 1".into()));
        }
        let mut scene = vec![0; scene_classes];
        scene[scene_index] = 1;
        Ok(Self { sed, scene })
    }

    pub fn scene_index(&self) -> usize {
        self.scene.iter().position(|&v| v == 1).unwrap_or(0)
    }

    pub fn frames(&self) -> usize {
        self.sed.nrows()
    }
}

/// `(L + R) / 2`.
pub fn mono_downmix(clip: &AudioClip) -> Result<AudioClip> {
    if clip.channel_count() != 2 {
        return Err(Error::InvalidInput(format!(
            "downmix needs 2 channels, got {}",
            clip.channel_count()
        )));
    }
    let mixed = clip
        .channel(0)
        .iter()
        .zip(clip.channel(1))
        .map(|(l, r)| (l + r) / 2.0)
        .collect();
    AudioClip::mono(mixed, clip.sample_rate())
}

/// Whether `[a0, a1)` and `[b0, b1)` share a positive-length interval.
pub(crate) fn intervals_overlap(a0: f64, a1: f64, b0: f64, b1: f64) -> bool {
    a0 < b1 && b0 < a1
}

/// Marks frame `n` of class `c` active when `[n * hop, (n + 1) * hop)`
/// overlaps any event of class `c`. Events past the last frame are clamped.
pub fn encode_sed_targets(
    events: &[AnnotationEvent],
    frame_hop: f64,
    frames: usize,
    vocab: &LabelVocabulary,
) -> Result<Array2<u8>> {
    if !(frame_hop > 0.0 && frame_hop.is_finite()) {
        return Err(Error::InvalidConfig(format!("frame hop {frame_hop} must be positive")));
    }
    let mut out = Array2::zeros((frames, vocab.event_classes.len()));
    for ev in events {
        let class = vocab.event_index(&ev.label)?;
        if frames == 0 {
            continue;
        }
        let first = ((ev.onset / frame_hop).floor() as i64 - 1).max(0) as usize;
        let last = ((ev.offset / frame_hop).ceil() as i64 + 1).clamp(0, frames as i64 - 1) as usize;
        for n in first..=last {
            let start = n as f64 * frame_hop;
            let end = (n + 1) as f64 * frame_hop;
            if intervals_overlap(start, end, ev.onset, ev.offset) {
                out[[n, class]] = 1;
            }
        }
    }
    Ok(out)
}

/// A fixed-length window of a recording; frames past `valid_frames` are
/// zero padding.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipWindow {
    pub features: FeatureTensor,
    pub targets: TargetSet,
    pub valid_frames: usize,
}

impl ClipWindow {
    /// Per-frame validity mask.
    pub fn mask(&self) -> Vec<bool> {
        (0..self.features.frames()).map(|t| t < self.valid_frames).collect()
    }
}

/// Cuts a recording into consecutive non-overlapping windows of `frames`;
/// the final partial window is zero padded.
pub fn split_into_clips(
    features: &FeatureTensor,
    targets: &TargetSet,
    frames: usize,
) -> Result<Vec<ClipWindow>> {
    if frames == 0 {
        return Err(Error::InvalidConfig("clip length must be positive".into()));
    }
    let total = features.frames();
    if targets.frames() != total {
        return Err(Error::Shape(format!(
            "{} feature frames but {} target frames",
            total,
            targets.frames()
        )));
    }
    let (ch, _, mels) = features.data.dim();
    let classes = targets.sed.ncols();
    let mut out = Vec::new();
    let mut start = 0;
    while start < total {
        let valid = frames.min(total - start);
        let mut data = Array3::zeros((ch, frames, mels));
        data.slice_mut(s![.., ..valid, ..])
            .assign(&features.data.slice(s![.., start..start + valid, ..]));
        let mut sed = Array2::zeros((frames, classes));
        sed.slice_mut(s![..valid, ..])
            .assign(&targets.sed.slice(s![start..start + valid, ..]));
        out.push(ClipWindow {
            features: FeatureTensor {
                data,
                layout: features.layout,
            },
            targets: TargetSet {
                sed,
                scene: targets.scene.clone(),
            },
            valid_frames: valid,
        });
        start += frames;
    }
    Ok(out)
}
