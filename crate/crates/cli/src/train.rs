use std::path::Path;

use anyhow::{bail, Context, Result};
use bsk::dataset::ClipWindow;
use bsk::features::file as feature_file;
use bsk::model::{checkpoint, train as train_network, EpochControl, MtlNetwork, TrainConfig, TrainingLog};
use serde::{Deserialize, Serialize};

use crate::{write_json, FeatureIndex, RunConfig};

/// Training log file contents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub feature_set: bsk::features::FeatureSet,
    pub mode: bsk::metrics::TaskMode,
    pub seed: u64,
    pub windows: usize,
    #[serde(flatten)]
    pub log: TrainingLog,
}

/// Fails unless the feature directory was produced for this configuration.
pub fn check_index(cfg: &RunConfig, index: &FeatureIndex) -> Result<()> {
    if index.feature_set != cfg.feature_set {
        bail!(
            "features were extracted as {} but the config asks for {}",
            index.feature_set,
            cfg.feature_set
        );
    }
    if index.mels != cfg.model.mels || index.frames != cfg.model.frames {
        bail!(
            "features have {} mels x {} frames per window, model expects {} x {}",
            index.mels,
            index.frames,
            cfg.model.mels,
            cfg.model.frames
        );
    }
    let vocab = &index.vocabulary;
    if cfg.mode.has_sed() && vocab.event_classes.len() != cfg.model.sed_classes {
        bail!(
            "{} event classes in the features ({:?}), model.sed_classes is {}",
            vocab.event_classes.len(),
            vocab.event_classes,
            cfg.model.sed_classes
        );
    }
    if cfg.mode.has_asc() && vocab.scene_classes.len() != cfg.model.asc_classes {
        bail!(
            "{} scene classes in the features ({:?}), model.asc_classes is {}",
            vocab.scene_classes.len(),
            vocab.scene_classes,
            cfg.model.asc_classes
        );
    }
    Ok(())
}

/// Every window in the feature directory with its targets.
pub fn load_windows(dir: &Path, index: &FeatureIndex) -> Result<Vec<ClipWindow>> {
    let mut out = Vec::new();
    for rec in &index.recordings {
        let whole = index
            .recording_targets(rec)
            .with_context(|| format!("targets of {}", rec.audio.display()))?;
        for (j, w) in rec.windows.iter().enumerate() {
            let features = feature_file::read(&dir.join(&w.file))?;
            out.push(ClipWindow {
                features,
                targets: index.window_targets(rec, &whole, j),
                valid_frames: w.valid_frames,
            });
        }
    }
    Ok(out)
}

/// Network of the configured mode with label counts that the event or scene
/// branch does not use padded to 1.
pub fn build_network(cfg: &RunConfig, index: &FeatureIndex) -> Result<MtlNetwork> {
    let mut model = cfg.model.clone();
    if !cfg.mode.has_sed() {
        model.sed_classes = index.vocabulary.event_classes.len().max(1);
    }
    if !cfg.mode.has_asc() {
        model.asc_classes = index.vocabulary.scene_classes.len().max(1);
    }
    Ok(MtlNetwork::new(model, cfg.mode, Some(cfg.feature_set), cfg.seed)?)
}

pub fn run(cfg: &RunConfig, checkpoint_path: &Path) -> Result<TrainReport> {
    cfg.validate()?;
    let dir = cfg.require(&cfg.paths.features, "features")?;
    let index = FeatureIndex::read(dir)?;
    check_index(cfg, &index)?;
    let data = load_windows(dir, &index)?;
    let mut net = build_network(cfg, &index)?;
    let train_cfg = TrainConfig {
        epochs: cfg.train.epochs,
        batch_size: cfg.train.batch_size,
        seed: cfg.seed,
        adam: cfg.train.adam,
        lr_scale: [1.0; 3],
    };
    log::info!(
        "training {} on {} windows of {}, {} parameters",
        cfg.mode,
        data.len(),
        cfg.feature_set,
        net.params.count()
    );
    let log = train_network(&mut net, &data, &train_cfg, |epoch, _, report| {
        if epoch == 1 || epoch % 10 == 0 {
            log::info!("epoch {epoch}: loss {:.6}", report.total);
        }
        EpochControl::Continue
    })?;
    if let Some(dir) = checkpoint_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    checkpoint::write(checkpoint_path, &net)?;
    let report = TrainReport {
        feature_set: cfg.feature_set,
        mode: cfg.mode,
        seed: cfg.seed,
        windows: data.len(),
        log,
    };
    write_json(&cfg.log_path()?, &report)?;
    Ok(report)
}
