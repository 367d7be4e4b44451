use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use bsk::features::FeatureSet;
use bsk::metrics::{Averaging, TaskMode, ONE_SECOND_SEGMENT};
use bsk::model::{AdamConfig, ModelConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    #[serde(default)]
    pub adam: AdamConfig,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 8,
            adam: AdamConfig::default(),
        }
    }
}

/// Input and output locations. Relative paths resolve against the directory
/// of the config file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    /// Recording manifest read by `extract`.
    #[serde(default)]
    pub manifest: Option<PathBuf>,
    /// Feature directory written by `extract`, read by `train` and `evaluate`.
    #[serde(default)]
    pub features: Option<PathBuf>,
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
    /// Training log; defaults to the checkpoint path with `.log.json`.
    #[serde(default)]
    pub log: Option<PathBuf>,
    #[serde(default)]
    pub report: Option<PathBuf>,
    /// Fixed label vocabulary (JSON) so a test set shares the training
    /// class indices; derived from the manifest when absent.
    #[serde(default)]
    pub vocabulary: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub feature_set: FeatureSet,
    pub model: ModelConfig,
    pub mode: TaskMode,
    #[serde(default = "default_threshold")]
    pub sed_threshold: f64,
    /// Evaluation segment length in seconds.
    #[serde(default = "default_granularity")]
    pub granularity: f64,
    #[serde(default)]
    pub asc_averaging: Averaging,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub train: TrainOptions,
    #[serde(default)]
    pub paths: Paths,
}

fn default_threshold() -> f64 {
    0.5
}

fn default_granularity() -> f64 {
    ONE_SECOND_SEGMENT
}

/// Command-line values that replace config file fields.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub feature_set: Option<FeatureSet>,
    pub mode: Option<TaskMode>,
    pub seed: Option<u64>,
    pub granularity: Option<f64>,
    pub threshold: Option<f64>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| anyhow::anyhow!("line {}, column {}: {e}", e.line(), e.column()))
    }

    /// Reads a config file, resolving relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg = Self::from_json(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or_else(|| Path::new(""));
        cfg.paths.resolve(base);
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(set) = o.feature_set {
            self.feature_set = set;
            self.model.in_channels = set.channels();
        }
        if let Some(mode) = o.mode {
            self.mode = mode;
        }
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        if let Some(g) = o.granularity {
            self.granularity = g;
        }
        if let Some(t) = o.threshold {
            self.sed_threshold = t;
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.model.in_channels != self.feature_set.channels() {
            bail!(
                "model.in_channels is {} but {} has {} channels",
                self.model.in_channels,
                self.feature_set,
                self.feature_set.channels()
            );
        }
        if !(self.sed_threshold > 0.0 && self.sed_threshold < 1.0) {
            bail!("sed_threshold {} must lie in (0, 1)", self.sed_threshold);
        }
        if !(self.granularity > 0.0 && self.granularity.is_finite()) {
            bail!("granularity {} must be positive", self.granularity);
        }
        if self.train.batch_size == 0 {
            bail!("train.batch_size must be positive");
        }
        Ok(())
    }

    pub fn require<'a>(&self, path: &'a Option<PathBuf>, name: &str) -> Result<&'a Path> {
        match path {
            Some(p) => Ok(p),
            None => bail!("paths.{name} is not set (config file or --out)"),
        }
    }

    pub fn log_path(&self) -> Result<PathBuf> {
        if let Some(p) = &self.paths.log {
            return Ok(p.clone());
        }
        let ckpt = self.require(&self.paths.checkpoint, "checkpoint")?;
        let mut name = ckpt.file_name().unwrap_or_default().to_os_string();
        name.push(".log.json");
        Ok(ckpt.with_file_name(name))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

impl Paths {
    fn resolve(&mut self, base: &Path) {
        for p in [
            &mut self.manifest,
            &mut self.features,
            &mut self.checkpoint,
            &mut self.log,
            &mut self.report,
            &mut self.vocabulary,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    /// Stores paths relative to `base` where possible.
    pub fn relative_to(&self, base: &Path) -> Self {
        let rel = |p: &Option<PathBuf>| p.as_ref().map(|p| p.strip_prefix(base).map(Path::to_path_buf).unwrap_or_else(|_| p.clone()));
        Self {
            manifest: rel(&self.manifest),
            features: rel(&self.features),
            checkpoint: rel(&self.checkpoint),
            log: rel(&self.log),
            report: rel(&self.report),
            vocabulary: rel(&self.vocabulary),
        }
    }
}
