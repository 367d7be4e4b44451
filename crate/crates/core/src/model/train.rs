use ndarray::{Array2, Array3};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::NormMode;
use super::network::{stack_features, BatchTargets, LossReport, MtlNetwork};
use super::params::Branch;
use crate::dataset::ClipWindow;
use crate::features::FeatureTensor;
use crate::{Error, Result};

/// RNG stream reserved for batch ordering; streams 0..=2 seed the weights.
const SHUFFLE_STREAM: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Seeds the batch order.
    pub seed: u64,
    #[serde(default)]
    pub adam: AdamConfig,
    /// Learning-rate multipliers for the shared encoder and the two
    /// branches; 0 freezes a part.
    #[serde(default = "unit_scales")]
    pub lr_scale: [f64; 3],
}

fn unit_scales() -> [f64; 3] {
    [1.0; 3]
}

impl TrainConfig {
    pub fn new(epochs: usize, batch_size: usize, seed: u64) -> Self {
        Self {
            epochs,
            batch_size,
            seed,
            adam: AdamConfig::default(),
            lr_scale: unit_scales(),
        }
    }

    fn scale(&self, branch: Branch) -> f64 {
        match branch {
            Branch::Shared => self.lr_scale[0],
            Branch::Sed => self.lr_scale[1],
            Branch::Asc => self.lr_scale[2],
        }
    }
}

/// Returned by the per-epoch callback.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EpochControl {
    Continue,
    Stop,
}

/// Mean training-mode losses, one entry per completed epoch.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<LossReport>,
}

impl TrainingLog {
    pub fn first(&self) -> Option<&LossReport> {
        self.epochs.first()
    }

    pub fn last(&self) -> Option<&LossReport> {
        self.epochs.last()
    }
}

/// Stacks windows into one batch.
pub fn batch_from_windows(windows: &[&ClipWindow]) -> (ndarray::Array4<f64>, BatchTargets) {
    let tensors: Vec<&FeatureTensor> = windows.iter().map(|w| &w.features).collect();
    let x = stack_features(&tensors);
    let frames = x.dim().2;
    let classes = windows.first().map(|w| w.targets.sed.ncols()).unwrap_or(0);
    let mut sed = Array3::zeros((windows.len(), frames, classes));
    let mut mask = Array2::from_elem((windows.len(), frames), false);
    for (bi, w) in windows.iter().enumerate() {
        let rows = w.targets.sed.nrows().min(frames);
        for t in 0..rows {
            for (k, &v) in w.targets.sed.row(t).iter().enumerate().take(classes) {
                sed[[bi, t, k]] = f64::from(v);
            }
        }
        for t in 0..w.valid_frames.min(frames) {
            mask[[bi, t]] = true;
        }
    }
    let scenes = windows.iter().map(|w| w.targets.scene_index()).collect();
    (x, BatchTargets { sed, mask, scenes })
}

fn check_dataset(net: &MtlNetwork, data: &[ClipWindow]) -> Result<()> {
    if data.is_empty() {
        return Err(Error::InvalidInput("training set is empty".into()));
    }
    let cfg = &net.config;
    for (i, w) in data.iter().enumerate() {
        let (c, t, m) = w.features.data.dim();
        if (c, t, m) != (cfg.in_channels, cfg.frames, cfg.mels) {
            return Err(Error::Shape(format!(
                "window {i} has shape {:?}, model expects [{}, {}, {}]",
                w.features.data.shape(),
                cfg.in_channels,
                cfg.frames,
                cfg.mels
            )));
        }
        if let Some(layout) = net.layout {
            if w.features.layout != layout {
                return Err(Error::Shape(format!(
                    "window {i} is {} but the model was built for {layout}",
                    w.features.layout
                )));
            }
        }
        if w.targets.sed.dim() != (cfg.frames, cfg.sed_classes) {
            return Err(Error::Shape(format!(
                "window {i} has {:?} event targets, expected [{}, {}]",
                w.targets.sed.shape(),
                cfg.frames,
                cfg.sed_classes
            )));
        }
        if w.targets.scene.len() != cfg.asc_classes {
            return Err(Error::Shape(format!(
                "window {i} has {} scene classes, expected {}",
                w.targets.scene.len(),
                cfg.asc_classes
            )));
        }
    }
    Ok(())
}

/// Adam over shuffled batches. `on_epoch` sees the network after each epoch
/// and may stop training early.
pub fn train(
    net: &mut MtlNetwork,
    data: &[ClipWindow],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(usize, &MtlNetwork, &LossReport) -> EpochControl,
) -> Result<TrainingLog> {
    check_dataset(net, data)?;
    if cfg.batch_size == 0 {
        return Err(Error::InvalidConfig("batch size must be positive".into()));
    }
    let adam = cfg.adam;
    if !(adam.learning_rate >= 0.0 && (0.0..1.0).contains(&adam.beta1) && (0.0..1.0).contains(&adam.beta2) && adam.epsilon > 0.0)
        || cfg.lr_scale.iter().any(|s| !(*s >= 0.0))
    {
        return Err(Error::InvalidConfig(format!("invalid optimizer settings {adam:?}")));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(SHUFFLE_STREAM);
    let mut first_moment = net.params.zeros_like();
    let mut second_moment = net.params.zeros_like();
    let mut step = 0i32;
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut log = TrainingLog::default();

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = LossReport::default();
        for chunk in order.chunks(cfg.batch_size) {
            let windows: Vec<&ClipWindow> = chunk.iter().map(|&i| &data[i]).collect();
            let (x, targets) = batch_from_windows(&windows);
            let pass = net.forward(x.view(), NormMode::Train)?;
            let (report, grads) = net.backward(&pass, &targets)?;
            net.update_running_stats(&pass);
            let n = chunk.len() as f64;
            sum.sed_loss += report.sed_loss * n;
            sum.asc_loss += report.asc_loss * n;
            sum.total += report.total * n;

            step += 1;
            let bias1 = 1.0 - adam.beta1.powi(step);
            let bias2 = 1.0 - adam.beta2.powi(step);
            let params = net.params.tensors_mut();
            let grads = grads.tensors();
            let m = first_moment.tensors_mut();
            let v = second_moment.tensors_mut();
            for ((((branch, p), (_, _, g, _)), (_, m)), (_, v)) in params.into_iter().zip(grads).zip(m).zip(v) {
                let lr = adam.learning_rate * cfg.scale(branch);
                if lr == 0.0 {
                    continue;
                }
                for i in 0..p.len() {
                    m[i] = adam.beta1 * m[i] + (1.0 - adam.beta1) * g[i];
                    v[i] = adam.beta2 * v[i] + (1.0 - adam.beta2) * g[i] * g[i];
                    let m_hat = m[i] / bias1;
                    let v_hat = v[i] / bias2;
                    p[i] -= lr * m_hat / (v_hat.sqrt() + adam.epsilon);
                }
            }
        }
        let n = data.len() as f64;
        let report = LossReport {
            sed_loss: sum.sed_loss / n,
            asc_loss: sum.asc_loss / n,
            total: sum.total / n,
        };
        if !report.total.is_finite() {
            return Err(Error::InvalidInput(format!("loss diverged at epoch {}", epoch + 1)));
        }
        log::debug!(
            "epoch {}: total {:.6} sed {:.6} asc {:.6}",
            epoch + 1,
            report.total,
            report.sed_loss,
            report.asc_loss
        );
        log.epochs.push(report);
        if on_epoch(epoch + 1, net, &report) == EpochControl::Stop {
            break;
        }
    }
    Ok(log)
}

/// Thresholded event activity and scene index for one clip.
pub fn predict(net: &MtlNetwork, x: &FeatureTensor, sed_threshold: f64) -> Result<(Option<Array2<u8>>, Option<usize>)> {
    Ok(net.infer(x)?.decide(sed_threshold))
}
