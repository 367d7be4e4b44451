use std::path::Path;

use anyhow::{bail, Context, Result};
use bsk::features::{file as feature_file, FeatureTensor};
use bsk::metrics::{asc_f1, sed_scores, segmentize, AscReport, Averaging, MetricsReport, SedReport, SegmentScores};
use bsk::model::{checkpoint, MtlNetwork};
use ndarray::{s, Array1, Array2};
use rayon::prelude::*;

use crate::{write_json, FeatureIndex, ItemError, RecordingEntry, RunConfig};

/// Scoring settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scoring {
    pub threshold: f64,
    pub granularity: f64,
    pub averaging: Averaging,
}

/// Scores of one recording, merged across recordings afterwards.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordingResult {
    pub sed: Option<SegmentScores>,
    pub scene: Option<(usize, usize)>,
}

/// Runs the network over the windows of one recording and scores it.
pub fn score_recording(
    net: &MtlNetwork,
    index: &FeatureIndex,
    rec: &RecordingEntry,
    windows: &[FeatureTensor],
    scoring: Scoring,
) -> Result<RecordingResult> {
    if windows.len() != rec.windows.len() {
        bail!("{} windows loaded, index lists {}", windows.len(), rec.windows.len());
    }
    let classes = net.config.sed_classes;
    let mut sed_probs = Array2::<f64>::zeros((rec.total_frames, classes));
    let mut scene_sum = Array1::<f64>::zeros(net.config.asc_classes);
    for (j, (w, entry)) in windows.iter().zip(&rec.windows).enumerate() {
        let pred = net.infer(w)?;
        if let Some(p) = &pred.sed {
            let start = j * index.frames;
            let valid = entry.valid_frames.min(rec.total_frames.saturating_sub(start));
            sed_probs
                .slice_mut(s![start..start + valid, ..])
                .assign(&p.slice(s![..valid, ..]));
        }
        if let Some(p) = &pred.asc {
            scene_sum += p;
        }
    }
    let targets = index.recording_targets(rec)?;
    let sed = if net.mode.has_sed() {
        let predicted = sed_probs.mapv(|p| u8::from(p >= scoring.threshold));
        let reference = segmentize(&targets.sed, index.frame_hop, scoring.granularity)?;
        let predicted = segmentize(&predicted, index.frame_hop, scoring.granularity)?;
        Some(sed_scores(&reference, &predicted)?)
    } else {
        None
    };
    let scene = net.mode.has_asc().then(|| {
        let mut best = 0;
        for (i, &v) in scene_sum.iter().enumerate() {
            if v > scene_sum[best] {
                best = i;
            }
        }
        (targets.scene_index(), best)
    });
    Ok(RecordingResult { sed, scene })
}

/// Merges per-recording results into the report.
pub fn merge(net: &MtlNetwork, results: &[RecordingResult], scoring: Scoring) -> Result<MetricsReport> {
    let sed = net.mode.has_sed().then(|| {
        let total: SegmentScores = results.iter().filter_map(|r| r.sed).sum();
        SedReport::new(total, scoring.granularity)
    });
    let asc = if net.mode.has_asc() {
        let (reference, predicted): (Vec<usize>, Vec<usize>) = results.iter().filter_map(|r| r.scene).unzip();
        Some(AscReport {
            f1: asc_f1(&reference, &predicted, net.config.asc_classes, scoring.averaging)?,
        })
    } else {
        None
    };
    Ok(MetricsReport { sed, asc, mode: net.mode })
}

pub fn load_recording_windows(dir: &Path, rec: &RecordingEntry) -> Result<Vec<FeatureTensor>> {
    rec.windows
        .iter()
        .map(|w| Ok(feature_file::read(&dir.join(&w.file))?))
        .collect()
}

/// Evaluates the checkpoint on the feature directory and writes the report.
pub fn run(cfg: &RunConfig, report_path: &Path) -> Result<(MetricsReport, Vec<ItemError>)> {
    cfg.validate()?;
    let dir = cfg.require(&cfg.paths.features, "features")?;
    let ckpt = cfg.require(&cfg.paths.checkpoint, "checkpoint")?;
    let net = checkpoint::read(ckpt)?;
    let index = FeatureIndex::read(dir)?;
    if net.mode != cfg.mode {
        bail!("checkpoint was trained as {} but the config mode is {}", net.mode, cfg.mode);
    }
    if net.layout != Some(index.feature_set) || index.feature_set != cfg.feature_set {
        bail!(
            "checkpoint layout {:?}, features {}, config {} must agree",
            net.layout,
            index.feature_set,
            cfg.feature_set
        );
    }
    if index.frames != net.config.frames || index.mels != net.config.mels {
        bail!("feature windows do not match the checkpoint input size");
    }
    if net.mode.has_sed() && index.vocabulary.event_classes.len() != net.config.sed_classes {
        bail!("feature vocabulary has a different number of event classes than the checkpoint");
    }
    if net.mode.has_asc() && index.vocabulary.scene_classes.len() != net.config.asc_classes {
        bail!("feature vocabulary has a different number of scene classes than the checkpoint");
    }
    let scoring = Scoring {
        threshold: cfg.sed_threshold,
        granularity: cfg.granularity,
        averaging: cfg.asc_averaging,
    };
    let outcomes: Vec<Result<RecordingResult>> = index
        .recordings
        .par_iter()
        .map(|rec| {
            let windows = load_recording_windows(dir, rec)?;
            score_recording(&net, &index, rec, &windows, scoring)
                .with_context(|| format!("scoring {}", rec.audio.display()))
        })
        .collect();
    let mut results = Vec::new();
    let mut errors = Vec::new();
    for (rec, outcome) in index.recordings.iter().zip(outcomes) {
        match outcome {
            Ok(r) => results.push(r),
            Err(e) => errors.push(ItemError::new(rec.audio.display().to_string(), &e)),
        }
    }
    let report = merge(&net, &results, scoring)?;
    write_json(report_path, &report)?;
    Ok((report, errors))
}
