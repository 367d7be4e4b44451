use ndarray::{s, Array1, Array2, Array3, Array4, ArrayView4, Axis};
use serde::{Deserialize, Serialize};

use super::layers::{
    batchnorm_backward, batchnorm_forward, bigru_backward, bigru_forward, conv2d_backward, conv2d_forward,
    dense_backward, dense_forward, from_sequence, maxpool_backward, maxpool_forward, relu_backward, relu_forward,
    sigmoid, softmax_rows, to_sequence, update_running_stats, BatchNormCache, GruCache, NormMode, PoolAxis,
};
use super::params::{AscParams, ConvBlockParams, Parameters, SedParams};
use super::ModelConfig;
use crate::features::{FeatureSet, FeatureTensor};
use crate::metrics::TaskMode;
use crate::{Error, Result};

/// Lower and upper bound applied to probabilities inside the logs.
pub const PROB_CLAMP: f64 = 1e-7;

/// Running batch-norm statistics of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    pub mean: Array1<f64>,
    pub var: Array1<f64>,
}

impl RunningStats {
    fn new(channels: usize) -> Self {
        Self {
            mean: Array1::zeros(channels),
            var: Array1::ones(channels),
        }
    }
}

/// Targets of a training batch.
#[derive(Debug, Clone)]
pub struct BatchTargets {
    /// `batch x frames x event classes`, 0 or 1.
    pub sed: Array3<f64>,
    /// `batch x frames`; false marks padding.
    pub mask: Array2<bool>,
    pub scenes: Vec<usize>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub sed_loss: f64,
    pub asc_loss: f64,
    pub total: f64,
}

/// Output probabilities for one clip.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// `frames x event classes`.
    pub sed: Option<Array2<f64>>,
    pub asc: Option<Array1<f64>>,
}

impl Prediction {
    /// Thresholded event activity and the most probable scene (lowest index
    /// on ties).
    pub fn decide(&self, threshold: f64) -> (Option<Array2<u8>>, Option<usize>) {
        let sed = self.sed.as_ref().map(|p| p.mapv(|v| u8::from(v >= threshold)));
        let scene = self.asc.as_ref().map(|p| {
            let mut best = 0;
            for (i, &v) in p.iter().enumerate() {
                if v > p[best] {
                    best = i;
                }
            }
            best
        });
        (sed, scene)
    }
}

#[derive(Debug, Clone)]
struct BlockCache {
    input: Array4<f64>,
    bn: BatchNormCache,
    activated: Array4<f64>,
    argmax: Vec<usize>,
}

#[derive(Debug, Clone)]
struct SedCache {
    sequence: Array3<f64>,
    gru: Vec<[GruCache; 2]>,
    gru_out: Array2<f64>,
    hidden: Array2<f64>,
}

#[derive(Debug, Clone)]
struct AscCache {
    blocks: Vec<BlockCache>,
    pooled_shape: [usize; 4],
    global_argmax: Vec<usize>,
    flat: Array2<f64>,
    hidden1: Array2<f64>,
    hidden2: Array2<f64>,
}

/// Result of a batched forward pass, with what backpropagation needs.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    /// `batch x frames x event classes` probabilities.
    pub sed: Option<Array3<f64>>,
    /// `batch x scene classes` probabilities.
    pub asc: Option<Array2<f64>>,
    shared: Vec<BlockCache>,
    encoded: Array4<f64>,
    sed_cache: Option<SedCache>,
    asc_cache: Option<AscCache>,
}

/// Shared encoder plus the branches selected by the task mode.
#[derive(Debug, Clone, PartialEq)]
pub struct MtlNetwork {
    pub config: ModelConfig,
    pub mode: TaskMode,
    /// Input layout the network was built for, if known.
    pub layout: Option<FeatureSet>,
    pub params: Parameters,
    /// Shared encoder layers first, then the scene branch layers.
    pub running: Vec<RunningStats>,
}

fn block_forward(
    x: Array4<f64>,
    p: &ConvBlockParams,
    stats: &RunningStats,
    mode: NormMode,
    axis: PoolAxis,
    factor: usize,
) -> Result<(Array4<f64>, BlockCache)> {
    let conv = conv2d_forward(x.view(), p.conv_w.view(), p.conv_b.view())?;
    let (mut y, bn) = batchnorm_forward(
        conv.view(),
        p.gamma.view(),
        p.beta.view(),
        stats.mean.view(),
        stats.var.view(),
        mode,
    );
    relu_forward(&mut y);
    let (pooled, argmax) = maxpool_forward(y.view(), axis, factor)?;
    Ok((
        pooled,
        BlockCache {
            input: x,
            bn,
            activated: y,
            argmax,
        },
    ))
}

fn block_backward(dy: ArrayView4<'_, f64>, p: &ConvBlockParams, cache: &BlockCache, grad: &mut ConvBlockParams) -> Array4<f64> {
    let (b, c, t, m) = cache.activated.dim();
    let mut d = maxpool_backward(dy, &cache.argmax, [b, c, t, m]);
    relu_backward(&mut d, cache.activated.view());
    let (dconv, dgamma, dbeta) = batchnorm_backward(d.view(), p.gamma.view(), &cache.bn);
    let (dx, dw, db) = conv2d_backward(cache.input.view(), p.conv_w.view(), dconv.view());
    grad.conv_w = dw;
    grad.conv_b = db;
    grad.gamma = dgamma;
    grad.beta = dbeta;
    dx
}

fn clamp_prob(p: f64) -> (f64, bool) {
    if p < PROB_CLAMP {
        (PROB_CLAMP, true)
    } else if p > 1.0 - PROB_CLAMP {
        (1.0 - PROB_CLAMP, true)
    } else {
        (p, false)
    }
}

impl MtlNetwork {
    /// Freshly initialized network; `seed` fixes every initial weight.
    pub fn new(config: ModelConfig, mode: TaskMode, layout: Option<FeatureSet>, seed: u64) -> Result<Self> {
        config.validate()?;
        if let Some(layout) = layout {
            if layout.channels() != config.in_channels {
                return Err(Error::InvalidConfig(format!(
                    "{layout} has {} channels but the model expects {}",
                    layout.channels(),
                    config.in_channels
                )));
            }
        }
        let params = Parameters::init(&config, mode, seed);
        let running = Self::fresh_stats(&config, mode);
        Ok(Self {
            config,
            mode,
            layout,
            params,
            running,
        })
    }

    pub(crate) fn fresh_stats(config: &ModelConfig, mode: TaskMode) -> Vec<RunningStats> {
        let mut running = vec![RunningStats::new(config.filters[0]); 3];
        if mode.has_asc() {
            running.extend([RunningStats::new(config.filters[1]), RunningStats::new(config.filters[1])]);
        }
        running
    }

    /// Checks a batch against the configured input shape.
    fn check_input(&self, x: &ArrayView4<'_, f64>) -> Result<()> {
        let (b, c, t, m) = x.dim();
        let cfg = &self.config;
        if b == 0 || c != cfg.in_channels || t != cfg.frames || m != cfg.mels {
            return Err(Error::Shape(format!(
                "input {:?} does not match the model input [batch, {}, {}, {}]",
                x.shape(),
                cfg.in_channels,
                cfg.frames,
                cfg.mels
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("input contains non-finite values".into()));
        }
        Ok(())
    }

    /// Batched forward pass over `batch x channels x frames x mels`.
    pub fn forward(&self, x: ArrayView4<'_, f64>, mode: NormMode) -> Result<ForwardPass> {
        self.check_input(&x)?;
        let cfg = &self.config;
        let mut h = x.to_owned();
        let mut shared = Vec::with_capacity(3);
        for i in 0..3 {
            let (y, cache) = block_forward(h, &self.params.shared[i], &self.running[i], mode, PoolAxis::Mel, cfg.pooling[i])?;
            shared.push(cache);
            h = y;
        }
        let encoded = h;
        let (sed, sed_cache) = match &self.params.sed {
            Some(p) => {
                let (probs, cache) = self.sed_forward(p, &encoded);
                (Some(probs), Some(cache))
            }
            None => (None, None),
        };
        let (asc, asc_cache) = match &self.params.asc {
            Some(p) => {
                let (probs, cache) = self.asc_forward(p, &encoded, mode)?;
                (Some(probs), Some(cache))
            }
            None => (None, None),
        };
        Ok(ForwardPass {
            sed,
            asc,
            shared,
            encoded,
            sed_cache,
            asc_cache,
        })
    }

    fn sed_forward(&self, p: &SedParams, encoded: &Array4<f64>) -> (Array3<f64>, SedCache) {
        let (b, _, t, _) = encoded.dim();
        let sequence = to_sequence(encoded.view());
        let q = self.config.gru_width;
        let mut gru_out = Array2::zeros((b * t, q));
        let mut gru = Vec::with_capacity(b);
        for bi in 0..b {
            let (y, caches) = bigru_forward(sequence.index_axis(Axis(0), bi), &p.gru_fwd, &p.gru_bwd);
            gru_out.slice_mut(s![bi * t..(bi + 1) * t, ..]).assign(&y);
            gru.push(caches);
        }
        let hidden = dense_forward(gru_out.view(), p.hidden_w.view(), p.hidden_b.view());
        let logits = dense_forward(hidden.view(), p.out_w.view(), p.out_b.view());
        let probs = logits
            .mapv(sigmoid)
            .into_shape_with_order((b, t, self.config.sed_classes))
            .expect("contiguous");
        (
            probs,
            SedCache {
                sequence,
                gru,
                gru_out,
                hidden,
            },
        )
    }

    fn asc_forward(&self, p: &AscParams, encoded: &Array4<f64>, mode: NormMode) -> Result<(Array2<f64>, AscCache)> {
        let cfg = &self.config;
        let mut h = encoded.clone();
        let mut blocks = Vec::with_capacity(2);
        for i in 0..2 {
            let (y, cache) = block_forward(h, &p.blocks[i], &self.running[3 + i], mode, PoolAxis::Time, cfg.pooling[3 + i])?;
            blocks.push(cache);
            h = y;
        }
        // whatever time extent is left collapses to one step
        let (b, c, t, m) = h.dim();
        let pooled_shape = [b, c, t, m];
        let (global, global_argmax) = maxpool_forward(h.view(), PoolAxis::Time, t)?;
        let flat = global.into_shape_with_order((b, c * m)).expect("contiguous");
        let hidden1 = dense_forward(flat.view(), p.hidden1_w.view(), p.hidden1_b.view());
        let hidden2 = dense_forward(hidden1.view(), p.hidden2_w.view(), p.hidden2_b.view());
        let logits = dense_forward(hidden2.view(), p.out_w.view(), p.out_b.view());
        Ok((
            softmax_rows(logits.view()),
            AscCache {
                blocks,
                pooled_shape,
                global_argmax,
                flat,
                hidden1,
                hidden2,
            },
        ))
    }

    fn check_targets(&self, pass: &ForwardPass, targets: &BatchTargets) -> Result<()> {
        let b = pass.encoded.dim().0;
        let cfg = &self.config;
        if let Some(sed) = &pass.sed {
            if targets.sed.dim() != sed.dim() || targets.mask.dim() != (b, cfg.frames) {
                return Err(Error::Shape(format!(
                    "SED targets {:?} / mask {:?} do not match predictions {:?}",
                    targets.sed.shape(),
                    targets.mask.shape(),
                    sed.shape()
                )));
            }
        }
        if pass.asc.is_some() {
            if targets.scenes.len() != b {
                return Err(Error::Shape(format!(
                    "{} scene labels for a batch of {b}",
                    targets.scenes.len()
                )));
            }
            if let Some(&bad) = targets.scenes.iter().find(|&&s| s >= cfg.asc_classes) {
                return Err(Error::InvalidInput(format!("scene index {bad} out of range")));
            }
        }
        Ok(())
    }

    /// Losses of a forward pass and their gradients with respect to the
    /// branch logits.
    fn loss_and_logit_grads(
        &self,
        pass: &ForwardPass,
        targets: &BatchTargets,
    ) -> Result<(LossReport, Option<Array2<f64>>, Option<Array2<f64>>)> {
        self.check_targets(pass, targets)?;
        let mut report = LossReport::default();
        let mut d_sed = None;
        if let Some(probs) = &pass.sed {
            let (b, t, k) = probs.dim();
            let valid = targets.mask.iter().filter(|&&m| m).count();
            let count = (valid * k) as f64;
            let mut grad = Array2::zeros((b * t, k));
            let mut sum = 0.0;
            if valid > 0 {
                for bi in 0..b {
                    for ti in 0..t {
                        if !targets.mask[[bi, ti]] {
                            continue;
                        }
                        for ki in 0..k {
                            let y = targets.sed[[bi, ti, ki]];
                            let (p, clamped) = clamp_prob(probs[[bi, ti, ki]]);
                            sum -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
                            if !clamped {
                                grad[[bi * t + ti, ki]] = (p - y) / count;
                            }
                        }
                    }
                }
                report.sed_loss = sum / count;
            }
            d_sed = Some(grad);
        }
        let mut d_asc = None;
        if let Some(probs) = &pass.asc {
            let b = probs.nrows();
            let mut grad = Array2::zeros(probs.dim());
            let mut sum = 0.0;
            for (bi, &scene) in targets.scenes.iter().enumerate() {
                let (p, clamped) = clamp_prob(probs[[bi, scene]]);
                sum -= p.ln();
                if !clamped {
                    for ci in 0..probs.ncols() {
                        let y = if ci == scene { 1.0 } else { 0.0 };
                        grad[[bi, ci]] = (probs[[bi, ci]] - y) / b as f64;
                    }
                }
            }
            report.asc_loss = sum / b as f64;
            d_asc = Some(grad);
        }
        let w = self.asc_weight();
        report.total = match self.mode {
            TaskMode::Asc => report.asc_loss,
            _ => report.sed_loss + w * report.asc_loss,
        };
        if let Some(g) = &mut d_asc {
            if self.mode != TaskMode::Asc {
                g.mapv_inplace(|v| v * w);
            }
        }
        Ok((report, d_sed, d_asc))
    }

    fn asc_weight(&self) -> f64 {
        self.config.asc_loss_weight
    }

    pub fn loss(&self, pass: &ForwardPass, targets: &BatchTargets) -> Result<LossReport> {
        Ok(self.loss_and_logit_grads(pass, targets)?.0)
    }

    /// Loss and analytic gradients of every parameter, laid out like
    /// `self.params`.
    pub fn backward(&self, pass: &ForwardPass, targets: &BatchTargets) -> Result<(LossReport, Parameters)> {
        let (report, d_sed, d_asc) = self.loss_and_logit_grads(pass, targets)?;
        let mut grads = self.params.zeros_like();
        let mut d_encoded = Array4::<f64>::zeros(pass.encoded.dim());

        if let (Some(p), Some(cache), Some(dlogits), Some(g)) =
            (&self.params.sed, &pass.sed_cache, d_sed, grads.sed.as_mut())
        {
            let (dhidden, dw, db) = dense_backward(cache.hidden.view(), p.out_w.view(), dlogits.view());
            g.out_w = dw;
            g.out_b = db;
            let (dgru, dw, db) = dense_backward(cache.gru_out.view(), p.hidden_w.view(), dhidden.view());
            g.hidden_w = dw;
            g.hidden_b = db;
            let (b, t, f) = cache.sequence.dim();
            let mut dseq = Array3::zeros((b, t, f));
            for bi in 0..b {
                let (dx, gf, gb) = bigru_backward(
                    cache.sequence.index_axis(Axis(0), bi),
                    &p.gru_fwd,
                    &p.gru_bwd,
                    &cache.gru[bi],
                    dgru.slice(s![bi * t..(bi + 1) * t, ..]),
                );
                dseq.index_axis_mut(Axis(0), bi).assign(&dx);
                for (acc, part) in [(&mut g.gru_fwd, gf), (&mut g.gru_bwd, gb)] {
                    acc.w += &part.w;
                    acc.u += &part.u;
                    acc.b += &part.b;
                }
            }
            d_encoded += &from_sequence(dseq.view(), self.config.filters[0]);
        }

        if let (Some(p), Some(cache), Some(dlogits), Some(g)) =
            (&self.params.asc, &pass.asc_cache, d_asc, grads.asc.as_mut())
        {
            let (dh2, dw, db) = dense_backward(cache.hidden2.view(), p.out_w.view(), dlogits.view());
            g.out_w = dw;
            g.out_b = db;
            let (dh1, dw, db) = dense_backward(cache.hidden1.view(), p.hidden2_w.view(), dh2.view());
            g.hidden2_w = dw;
            g.hidden2_b = db;
            let (dflat, dw, db) = dense_backward(cache.flat.view(), p.hidden1_w.view(), dh1.view());
            g.hidden1_w = dw;
            g.hidden1_b = db;
            let [b, c, _, m] = cache.pooled_shape;
            let dglobal = dflat.into_shape_with_order((b, c, 1, m)).expect("contiguous");
            let mut d = maxpool_backward(dglobal.view(), &cache.global_argmax, cache.pooled_shape);
            for i in (0..2).rev() {
                d = block_backward(d.view(), &p.blocks[i], &cache.blocks[i], &mut g.blocks[i]);
            }
            d_encoded += &d;
        }

        let mut d = d_encoded;
        for i in (0..3).rev() {
            d = block_backward(d.view(), &self.params.shared[i], &pass.shared[i], &mut grads.shared[i]);
        }
        Ok((report, grads))
    }

    /// Folds the batch statistics of a training pass into the running ones.
    pub fn update_running_stats(&mut self, pass: &ForwardPass) {
        let caches = pass
            .shared
            .iter()
            .chain(pass.asc_cache.iter().flat_map(|c| c.blocks.iter()));
        for (stats, cache) in self.running.iter_mut().zip(caches) {
            update_running_stats(&mut stats.mean, &mut stats.var, &cache.bn);
        }
    }

    /// Inference on one clip with running batch-norm statistics.
    pub fn infer(&self, x: &FeatureTensor) -> Result<Prediction> {
        if let Some(layout) = self.layout {
            if x.layout != layout {
                return Err(Error::Shape(format!(
                    "network trained on {layout} but input is {}",
                    x.layout
                )));
            }
        }
        let batch = stack_features(&[x]);
        let pass = self.forward(batch.view(), NormMode::Eval)?;
        Ok(Prediction {
            sed: pass.sed.map(|p| p.index_axis_move(Axis(0), 0)),
            asc: pass.asc.map(|p| p.index_axis_move(Axis(0), 0)),
        })
    }
}

/// `batch x channels x frames x mels` from single-clip tensors.
pub fn stack_features(xs: &[&FeatureTensor]) -> Array4<f64> {
    let (c, t, m) = xs.first().map(|x| x.data.dim()).unwrap_or((0, 0, 0));
    let mut out = Array4::zeros((xs.len(), c, t, m));
    for (mut dst, x) in out.outer_iter_mut().zip(xs) {
        if x.data.dim() == (c, t, m) {
            dst.zip_mut_with(&x.data, |d, &v| *d = f64::from(v));
        } else {
            // shape errors surface in the forward pass
            dst.fill(f64::NAN);
        }
    }
    out
}
