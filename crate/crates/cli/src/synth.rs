use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use bsk::features::FeatureSet;
use bsk::metrics::TaskMode;
use bsk::model::ModelConfig;
use bsk::synth::{make_micro_corpus, micro_corpus_classes, write_corpus, SynthSpec};

use crate::config::{Paths, TrainOptions};
use crate::{write_json, Overrides, RunConfig};

/// Name of the run configuration written next to the micro-corpus.
pub const RUN_CONFIG: &str = "run.json";

/// Batch size that works well for the eight-clip corpus.
pub const MICRO_BATCH_SIZE: usize = 4;

/// Parses one spec or a list of specs, reporting line and column on error.
pub fn parse_specs(text: &str) -> Result<Vec<SynthSpec>> {
    let parsed = if text.trim_start().starts_with('[') {
        serde_json::from_str::<Vec<SynthSpec>>(text)
    } else {
        serde_json::from_str::<SynthSpec>(text).map(|s| vec![s])
    };
    let specs = parsed.map_err(|e| anyhow::anyhow!("line {}, column {}: {e}", e.line(), e.column()))?;
    for (i, spec) in specs.iter().enumerate() {
        spec.validate().with_context(|| format!("spec {i}"))?;
    }
    Ok(specs)
}

/// Run configuration matching the micro-corpus.
pub fn micro_run_config(out_dir: &Path, overrides: &Overrides) -> RunConfig {
    let feature_set = overrides.feature_set.unwrap_or(FeatureSet::Mel1ch);
    let scenes = micro_corpus_classes();
    let mut cfg = RunConfig {
        feature_set,
        model: ModelConfig::micro(feature_set.channels(), scenes.len() * scenes[0].1.len(), scenes.len()),
        mode: TaskMode::Mtl,
        sed_threshold: 0.5,
        granularity: 1.0,
        asc_averaging: Default::default(),
        seed: 0,
        train: TrainOptions {
            batch_size: MICRO_BATCH_SIZE,
            ..TrainOptions::default()
        },
        paths: Paths {
            manifest: Some(out_dir.join("manifest.tsv")),
            features: Some(out_dir.join("features")),
            checkpoint: Some(out_dir.join("model.bmk")),
            log: None,
            report: Some(out_dir.join("report.json")),
            vocabulary: None,
        },
    };
    cfg.apply(overrides);
    cfg
}

/// Renders `spec_path` (one spec or a list) or, without one, the micro-corpus
/// plus a matching `run.json`. Returns the manifest path.
pub fn run(spec_path: Option<&Path>, out_dir: &Path, overrides: &Overrides) -> Result<PathBuf> {
    match spec_path {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let mut specs = parse_specs(&text).with_context(|| format!("parsing spec {}", path.display()))?;
            if let Some(seed) = overrides.seed {
                for (i, spec) in specs.iter_mut().enumerate() {
                    spec.seed = seed.wrapping_add(i as u64);
                }
            }
            Ok(write_corpus(&specs, out_dir)?)
        }
        None => {
            let seed = overrides.seed.unwrap_or(0);
            let manifest = make_micro_corpus(out_dir, seed)?;
            let mut cfg = micro_run_config(out_dir, overrides);
            cfg.paths = cfg.paths.relative_to(out_dir);
            write_json(&out_dir.join(RUN_CONFIG), &cfg)?;
            Ok(manifest)
        }
    }
}
