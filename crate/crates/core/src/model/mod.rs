//! The two-branch CRNN: shared convolutional encoder, a bidirectional-GRU
//! event detection branch and a convolutional scene classification branch.

pub mod checkpoint;
pub mod layers;
mod network;
mod params;
mod train;

use serde::{Deserialize, Serialize};

pub use network::{stack_features, BatchTargets, ForwardPass, LossReport, MtlNetwork, Prediction, RunningStats};
pub use params::{AscParams, Branch, ConvBlockParams, Parameters, SedParams};
pub use train::{batch_from_windows, predict, train, AdamConfig, EpochControl, TrainConfig, TrainingLog};

use crate::{Error, Result};

/// Scene-branch loss weight relative to the event branch.
pub const DEFAULT_ASC_LOSS_WEIGHT: f64 = 0.0001;

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Input feature channels (depends on the feature layout).
    pub in_channels: usize,
    /// Mel bands `M`.
    pub mels: usize,
    /// Frames per clip `T`.
    pub frames: usize,
    /// Convolution kernel `(height, width)` over `(frames, mels)`.
    pub kernel: [usize; 2],
    /// Filters of the shared (`P1`) and scene (`P2`) convolutions.
    pub filters: [usize; 2],
    /// Pooling factors: three over mels (shared), two over time (scene).
    pub pooling: [usize; 5],
    /// Concatenated bidirectional GRU output width `Q`.
    pub gru_width: usize,
    /// Dense widths: event hidden layer, then the two scene hidden layers.
    pub dense: [usize; 3],
    pub sed_classes: usize,
    pub asc_classes: usize,
    pub asc_loss_weight: f64,
}

impl ModelConfig {
    /// Configuration for TUT Sound Events 2016/2017 with Acoustic Scenes 2016.
    pub fn tut_2016_2017(in_channels: usize) -> Self {
        Self {
            in_channels,
            mels: 64,
            frames: 500,
            kernel: [3, 3],
            filters: [128, 256],
            pooling: [8, 2, 2, 25, 20],
            gru_width: 64,
            dense: [128, 512, 256],
            sed_classes: 25,
            asc_classes: 4,
            asc_loss_weight: DEFAULT_ASC_LOSS_WEIGHT,
        }
    }

    /// Configuration for TUT SED 2009.
    pub fn tut_sed_2009(in_channels: usize) -> Self {
        Self {
            in_channels,
            mels: 40,
            frames: 1000,
            kernel: [5, 5],
            filters: [192, 96],
            pooling: [5, 4, 2, 25, 20],
            gru_width: 128,
            dense: [128, 512, 256],
            sed_classes: 63,
            asc_classes: 10,
            asc_loss_weight: DEFAULT_ASC_LOSS_WEIGHT,
        }
    }

    /// Small network for gradient checks.
    pub fn tiny(in_channels: usize) -> Self {
        Self {
            in_channels,
            mels: 8,
            frames: 8,
            kernel: [3, 3],
            filters: [2, 2],
            pooling: [2, 2, 1, 2, 2],
            gru_width: 4,
            dense: [3, 4, 3],
            sed_classes: 3,
            asc_classes: 2,
            asc_loss_weight: DEFAULT_ASC_LOSS_WEIGHT,
        }
    }

    /// Desk-scale network for the synthetic micro-corpus.
    pub fn micro(in_channels: usize, sed_classes: usize, asc_classes: usize) -> Self {
        Self {
            in_channels,
            mels: 32,
            frames: 100,
            kernel: [3, 3],
            filters: [16, 16],
            pooling: [4, 2, 2, 5, 4],
            gru_width: 16,
            dense: [32, 32, 16],
            sed_classes,
            asc_classes,
            asc_loss_weight: DEFAULT_ASC_LOSS_WEIGHT,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        let positive = [
            ("in_channels", self.in_channels),
            ("mels", self.mels),
            ("frames", self.frames),
            ("sed_classes", self.sed_classes),
            ("asc_classes", self.asc_classes),
            ("gru_width", self.gru_width),
        ];
        for (name, v) in positive {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if self.kernel.iter().chain(&self.filters).chain(&self.pooling).chain(&self.dense).any(|&v| v == 0) {
            return bad("kernel, filters, pooling and dense sizes must be positive".into());
        }
        if self.kernel.iter().any(|k| k % 2 == 0) {
            return bad(format!("kernel {:?} must have odd sides", self.kernel));
        }
        let mel_pool = self.pooling[..3].iter().try_fold(1usize, |a, &p| a.checked_mul(p));
        if mel_pool.filter(|&p| self.mels.is_multiple_of(p)).is_none() {
            return bad(format!("{} mels not divisible by mel pooling {:?}", self.mels, &self.pooling[..3]));
        }
        let [.., t1, t2] = self.pooling;
        if t1.saturating_mul(t2) > self.frames || !self.frames.is_multiple_of(t1) || !(self.frames / t1).is_multiple_of(t2) {
            return bad(format!(
                "{} frames cannot be pooled by {t1} then {t2}",
                self.frames
            ));
        }
        if !self.gru_width.is_multiple_of(2) {
            return bad(format!("GRU width {} must be even (split over two directions)", self.gru_width));
        }
        if !(self.asc_loss_weight >= 0.0 && self.asc_loss_weight.is_finite()) {
            return bad(format!("ASC loss weight {} must be nonnegative", self.asc_loss_weight));
        }
        Ok(())
    }

    /// Mel bands left after the shared encoder.
    pub fn encoded_mels(&self) -> usize {
        self.mels / self.pooling[..3].iter().product::<usize>()
    }

    /// Frames left after the scene branch's time pooling.
    pub fn pooled_frames(&self) -> usize {
        self.frames / (self.pooling[3] * self.pooling[4])
    }

    pub fn gru_input(&self) -> usize {
        self.filters[0] * self.encoded_mels()
    }
}
