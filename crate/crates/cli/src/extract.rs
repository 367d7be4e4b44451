use std::path::Path;

use anyhow::{bail, Context, Result};
use bsk::dataset::{
    parse_annotations, read_manifest, read_wav, split_into_clips, AnnotationEvent, LabelVocabulary, ManifestEntry,
    TargetSet,
};
use bsk::features::{file as feature_file, FeatureExtractor, FeatureSet, GccLagMap};
use rayon::prelude::*;

use crate::{FeatureIndex, ItemError, RecordingEntry, RunConfig, WindowEntry};

fn load_vocabulary(path: &Path) -> Result<LabelVocabulary> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let vocab: LabelVocabulary =
        serde_json::from_str(&text).with_context(|| format!("parsing vocabulary {}", path.display()))?;
    // normalize ordering so indices follow the documented convention
    Ok(LabelVocabulary::new(vocab.event_classes, vocab.scene_classes))
}

fn window_name(index: usize, entry: &ManifestEntry, window: usize) -> String {
    let stem = entry
        .audio_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let stem: String = stem
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    format!("{index:04}_{stem}_w{window:03}.bft")
}

struct Extracted {
    sample_rate: u32,
    total_frames: usize,
    windows: Vec<WindowEntry>,
}

fn extract_one(
    cfg: &RunConfig,
    out_dir: &Path,
    index: usize,
    entry: &ManifestEntry,
    events: &[AnnotationEvent],
    vocab: &LabelVocabulary,
) -> Result<Extracted> {
    let clip = read_wav(&entry.audio_path)?;
    let extractor = FeatureExtractor::new(clip.sample_rate(), cfg.model.mels)?;
    let features = extractor.stack_features(cfg.feature_set, &clip)?;
    let total = features.frames();
    let sed = bsk::dataset::encode_sed_targets(events, extractor.frame_hop_seconds(), total, vocab)?;
    let targets = TargetSet::new(sed, vocab.scene_index(&entry.scene_label)?, vocab.scene_classes.len())?;
    let mut windows = Vec::new();
    for (j, window) in split_into_clips(&features, &targets, cfg.model.frames)?.into_iter().enumerate() {
        let name = window_name(index, entry, j);
        feature_file::write(&out_dir.join(&name), &window.features)?;
        windows.push(WindowEntry {
            file: name,
            valid_frames: window.valid_frames,
        });
    }
    Ok(Extracted {
        sample_rate: clip.sample_rate(),
        total_frames: total,
        windows,
    })
}

/// Writes one feature file per clip window plus the sidecar index. Returns
/// the per-recording failures; recordings that fail are left out of the
/// index.
pub fn run(cfg: &RunConfig, out_dir: &Path) -> Result<Vec<ItemError>> {
    cfg.validate()?;
    let manifest = cfg.require(&cfg.paths.manifest, "manifest")?;
    let entries = read_manifest(manifest)?;
    if entries.is_empty() {
        bail!("manifest {} lists no recordings", manifest.display());
    }
    std::fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;

    let mut errors = Vec::new();
    let mut annotated = Vec::new();
    for (i, entry) in entries.iter().enumerate() {
        match parse_annotations(&entry.annotation_path) {
            Ok(events) => annotated.push((i, entry, events)),
            Err(e) => errors.push(ItemError::new(entry.annotation_path.display().to_string(), &e.into())),
        }
    }
    let vocab = match &cfg.paths.vocabulary {
        Some(path) => load_vocabulary(path)?,
        None => LabelVocabulary::new(
            annotated.iter().flat_map(|(_, _, ev)| ev.iter().map(|e| e.label.clone())),
            annotated.iter().map(|(_, entry, _)| entry.scene_label.clone()),
        ),
    };

    let results: Vec<_> = annotated
        .par_iter()
        .map(|(i, entry, events)| extract_one(cfg, out_dir, *i, entry, events, &vocab))
        .collect();

    let mut recordings = Vec::new();
    let mut sample_rate = None;
    for ((_, entry, events), result) in annotated.iter().zip(results) {
        let item = entry.audio_path.display().to_string();
        match result {
            Ok(x) => {
                let expected = *sample_rate.get_or_insert(x.sample_rate);
                if x.sample_rate != expected {
                    errors.push(ItemError::new(
                        item,
                        &anyhow::anyhow!("sampled at {} Hz, earlier recordings at {expected} Hz", x.sample_rate),
                    ));
                    continue;
                }
                log::info!("{item}: {} frames in {} window(s)", x.total_frames, x.windows.len());
                recordings.push(RecordingEntry {
                    audio: entry.audio_path.clone(),
                    scene: entry.scene_label.clone(),
                    annotation: entry.annotation_path.clone(),
                    total_frames: x.total_frames,
                    events: events.clone(),
                    windows: x.windows,
                });
            }
            Err(e) => errors.push(ItemError::new(item, &e)),
        }
    }
    let Some(sample_rate) = sample_rate else {
        log::error!("no recording could be processed");
        return Ok(errors);
    };
    let extractor = FeatureExtractor::new(sample_rate, cfg.model.mels)?;
    let index = FeatureIndex {
        feature_set: cfg.feature_set,
        sample_rate,
        mels: cfg.model.mels,
        frames: cfg.model.frames,
        frame_hop: extractor.frame_hop_seconds(),
        vocabulary: vocab,
        gcc_lags: (cfg.feature_set == FeatureSet::MelGcc).then(|| GccLagMap::centered(cfg.model.mels).lag_values),
        recordings,
    };
    index.write(out_dir)?;
    Ok(errors)
}
