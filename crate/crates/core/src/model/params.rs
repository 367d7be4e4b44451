use ndarray::{Array1, Array2, Array4, ArrayD};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layers::GruWeights;
use super::ModelConfig;
use crate::metrics::TaskMode;

/// Part of the network a parameter belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Branch {
    Shared,
    Sed,
    Asc,
}

impl Branch {
    fn stream(self) -> u64 {
        match self {
            Branch::Shared => 0,
            Branch::Sed => 1,
            Branch::Asc => 2,
        }
    }
}

/// Convolution, then batch-norm scale and shift.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvBlockParams {
    pub conv_w: Array4<f64>,
    pub conv_b: Array1<f64>,
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SedParams {
    pub gru_fwd: GruWeights,
    pub gru_bwd: GruWeights,
    pub hidden_w: Array2<f64>,
    pub hidden_b: Array1<f64>,
    pub out_w: Array2<f64>,
    pub out_b: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AscParams {
    pub blocks: [ConvBlockParams; 2],
    pub hidden1_w: Array2<f64>,
    pub hidden1_b: Array1<f64>,
    pub hidden2_w: Array2<f64>,
    pub hidden2_b: Array1<f64>,
    pub out_w: Array2<f64>,
    pub out_b: Array1<f64>,
}

/// Every trainable tensor of a network, also used to hold gradients and
/// optimizer moments with the same layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters {
    pub shared: [ConvBlockParams; 3],
    pub sed: Option<SedParams>,
    pub asc: Option<AscParams>,
}

fn glorot<D: ndarray::Dimension>(
    shape: impl ndarray::ShapeBuilder<Dim = D>,
    fan_in: usize,
    fan_out: usize,
    rng: &mut ChaCha8Rng,
) -> ndarray::Array<f64, D> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    ndarray::Array::from_shape_simple_fn(shape, || rng.random_range(-limit..limit))
}

impl ConvBlockParams {
    fn init(inputs: usize, filters: usize, kernel: [usize; 2], rng: &mut ChaCha8Rng) -> Self {
        let area = kernel[0] * kernel[1];
        Self {
            conv_w: glorot((filters, inputs, kernel[0], kernel[1]), inputs * area, filters * area, rng),
            conv_b: Array1::zeros(filters),
            gamma: Array1::ones(filters),
            beta: Array1::zeros(filters),
        }
    }

    fn zeros_like(&self) -> Self {
        Self {
            conv_w: Array4::zeros(self.conv_w.dim()),
            conv_b: Array1::zeros(self.conv_b.len()),
            gamma: Array1::zeros(self.gamma.len()),
            beta: Array1::zeros(self.beta.len()),
        }
    }

    fn push<'a>(&'a self, out: &mut Vec<ArrayRef<'a>>, branch: Branch) {
        out.push((branch, "conv_w", self.conv_w.as_slice().unwrap(), self.conv_w.shape().to_vec()));
        out.push((branch, "conv_b", self.conv_b.as_slice().unwrap(), self.conv_b.shape().to_vec()));
        out.push((branch, "bn_gamma", self.gamma.as_slice().unwrap(), self.gamma.shape().to_vec()));
        out.push((branch, "bn_beta", self.beta.as_slice().unwrap(), self.beta.shape().to_vec()));
    }

    fn push_mut<'a>(&'a mut self, out: &mut Vec<(Branch, &'a mut [f64])>, branch: Branch) {
        out.push((branch, self.conv_w.as_slice_mut().unwrap()));
        out.push((branch, self.conv_b.as_slice_mut().unwrap()));
        out.push((branch, self.gamma.as_slice_mut().unwrap()));
        out.push((branch, self.beta.as_slice_mut().unwrap()));
    }
}

fn gru_init(input: usize, hidden: usize, rng: &mut ChaCha8Rng) -> GruWeights {
    let mut w = Array2::zeros((3 * hidden, input));
    let mut u = Array2::zeros((3 * hidden, hidden));
    // each gate matrix is initialized on its own
    for gate in 0..3 {
        let rows = gate * hidden..(gate + 1) * hidden;
        w.slice_mut(ndarray::s![rows.clone(), ..])
            .assign(&glorot((hidden, input), input, hidden, rng));
        u.slice_mut(ndarray::s![rows, ..])
            .assign(&glorot((hidden, hidden), hidden, hidden, rng));
    }
    GruWeights {
        w,
        u,
        b: Array1::zeros(3 * hidden),
    }
}

fn dense_init(inputs: usize, outputs: usize, rng: &mut ChaCha8Rng) -> (Array2<f64>, Array1<f64>) {
    (glorot((outputs, inputs), inputs, outputs, rng), Array1::zeros(outputs))
}

type ArrayRef<'a> = (Branch, &'static str, &'a [f64], Vec<usize>);

fn push_gru<'a>(out: &mut Vec<ArrayRef<'a>>, g: &'a GruWeights, prefix: &'static [&'static str; 3]) {
    out.push((Branch::Sed, prefix[0], g.w.as_slice().unwrap(), g.w.shape().to_vec()));
    out.push((Branch::Sed, prefix[1], g.u.as_slice().unwrap(), g.u.shape().to_vec()));
    out.push((Branch::Sed, prefix[2], g.b.as_slice().unwrap(), g.b.shape().to_vec()));
}

impl Parameters {
    /// Glorot-uniform weights, zero biases, unit batch-norm scales. Each
    /// branch draws from its own seeded stream, so removing one branch does
    /// not change the initialization of the others.
    pub fn init(cfg: &ModelConfig, mode: TaskMode, seed: u64) -> Self {
        let rng_for = |branch: Branch| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(branch.stream());
            rng
        };
        let [p1, p2] = cfg.filters;
        let mut rng = rng_for(Branch::Shared);
        let shared = [
            ConvBlockParams::init(cfg.in_channels, p1, cfg.kernel, &mut rng),
            ConvBlockParams::init(p1, p1, cfg.kernel, &mut rng),
            ConvBlockParams::init(p1, p1, cfg.kernel, &mut rng),
        ];
        let sed = mode.has_sed().then(|| {
            let mut rng = rng_for(Branch::Sed);
            let hidden = cfg.gru_width / 2;
            let gru_fwd = gru_init(cfg.gru_input(), hidden, &mut rng);
            let gru_bwd = gru_init(cfg.gru_input(), hidden, &mut rng);
            let (hidden_w, hidden_b) = dense_init(cfg.gru_width, cfg.dense[0], &mut rng);
            let (out_w, out_b) = dense_init(cfg.dense[0], cfg.sed_classes, &mut rng);
            SedParams {
                gru_fwd,
                gru_bwd,
                hidden_w,
                hidden_b,
                out_w,
                out_b,
            }
        });
        let asc = mode.has_asc().then(|| {
            let mut rng = rng_for(Branch::Asc);
            let blocks = [
                ConvBlockParams::init(p1, p2, cfg.kernel, &mut rng),
                ConvBlockParams::init(p2, p2, cfg.kernel, &mut rng),
            ];
            let flat = p2 * cfg.encoded_mels();
            let (hidden1_w, hidden1_b) = dense_init(flat, cfg.dense[1], &mut rng);
            let (hidden2_w, hidden2_b) = dense_init(cfg.dense[1], cfg.dense[2], &mut rng);
            let (out_w, out_b) = dense_init(cfg.dense[2], cfg.asc_classes, &mut rng);
            AscParams {
                blocks,
                hidden1_w,
                hidden1_b,
                hidden2_w,
                hidden2_b,
                out_w,
                out_b,
            }
        });
        Self { shared, sed, asc }
    }

    /// Same layout, all zeros.
    pub fn zeros_like(&self) -> Self {
        Self {
            shared: [
                self.shared[0].zeros_like(),
                self.shared[1].zeros_like(),
                self.shared[2].zeros_like(),
            ],
            sed: self.sed.as_ref().map(|s| SedParams {
                gru_fwd: GruWeights::zeros(s.gru_fwd.w.ncols(), s.gru_fwd.hidden()),
                gru_bwd: GruWeights::zeros(s.gru_bwd.w.ncols(), s.gru_bwd.hidden()),
                hidden_w: Array2::zeros(s.hidden_w.dim()),
                hidden_b: Array1::zeros(s.hidden_b.len()),
                out_w: Array2::zeros(s.out_w.dim()),
                out_b: Array1::zeros(s.out_b.len()),
            }),
            asc: self.asc.as_ref().map(|a| AscParams {
                blocks: [a.blocks[0].zeros_like(), a.blocks[1].zeros_like()],
                hidden1_w: Array2::zeros(a.hidden1_w.dim()),
                hidden1_b: Array1::zeros(a.hidden1_b.len()),
                hidden2_w: Array2::zeros(a.hidden2_w.dim()),
                hidden2_b: Array1::zeros(a.hidden2_b.len()),
                out_w: Array2::zeros(a.out_w.dim()),
                out_b: Array1::zeros(a.out_b.len()),
            }),
        }
    }

    /// Tensors in declaration order: `(branch, name, values, shape)`.
    pub fn tensors(&self) -> Vec<(Branch, &'static str, &[f64], Vec<usize>)> {
        let mut out = Vec::new();
        for block in &self.shared {
            block.push(&mut out, Branch::Shared);
        }
        if let Some(s) = &self.sed {
            push_gru(&mut out, &s.gru_fwd, &["gru_fwd_w", "gru_fwd_u", "gru_fwd_b"]);
            push_gru(&mut out, &s.gru_bwd, &["gru_bwd_w", "gru_bwd_u", "gru_bwd_b"]);
            out.push((Branch::Sed, "sed_hidden_w", s.hidden_w.as_slice().unwrap(), s.hidden_w.shape().to_vec()));
            out.push((Branch::Sed, "sed_hidden_b", s.hidden_b.as_slice().unwrap(), s.hidden_b.shape().to_vec()));
            out.push((Branch::Sed, "sed_out_w", s.out_w.as_slice().unwrap(), s.out_w.shape().to_vec()));
            out.push((Branch::Sed, "sed_out_b", s.out_b.as_slice().unwrap(), s.out_b.shape().to_vec()));
        }
        if let Some(a) = &self.asc {
            for block in &a.blocks {
                block.push(&mut out, Branch::Asc);
            }
            out.push((Branch::Asc, "asc_hidden1_w", a.hidden1_w.as_slice().unwrap(), a.hidden1_w.shape().to_vec()));
            out.push((Branch::Asc, "asc_hidden1_b", a.hidden1_b.as_slice().unwrap(), a.hidden1_b.shape().to_vec()));
            out.push((Branch::Asc, "asc_hidden2_w", a.hidden2_w.as_slice().unwrap(), a.hidden2_w.shape().to_vec()));
            out.push((Branch::Asc, "asc_hidden2_b", a.hidden2_b.as_slice().unwrap(), a.hidden2_b.shape().to_vec()));
            out.push((Branch::Asc, "asc_out_w", a.out_w.as_slice().unwrap(), a.out_w.shape().to_vec()));
            out.push((Branch::Asc, "asc_out_b", a.out_b.as_slice().unwrap(), a.out_b.shape().to_vec()));
        }
        out
    }

    /// Mutable views in the same order as [`Parameters::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<(Branch, &mut [f64])> {
        let mut out = Vec::new();
        for block in &mut self.shared {
            block.push_mut(&mut out, Branch::Shared);
        }
        if let Some(s) = &mut self.sed {
            for g in [&mut s.gru_fwd, &mut s.gru_bwd] {
                out.push((Branch::Sed, g.w.as_slice_mut().unwrap()));
                out.push((Branch::Sed, g.u.as_slice_mut().unwrap()));
                out.push((Branch::Sed, g.b.as_slice_mut().unwrap()));
            }
            out.push((Branch::Sed, s.hidden_w.as_slice_mut().unwrap()));
            out.push((Branch::Sed, s.hidden_b.as_slice_mut().unwrap()));
            out.push((Branch::Sed, s.out_w.as_slice_mut().unwrap()));
            out.push((Branch::Sed, s.out_b.as_slice_mut().unwrap()));
        }
        if let Some(a) = &mut self.asc {
            for block in &mut a.blocks {
                block.push_mut(&mut out, Branch::Asc);
            }
            out.push((Branch::Asc, a.hidden1_w.as_slice_mut().unwrap()));
            out.push((Branch::Asc, a.hidden1_b.as_slice_mut().unwrap()));
            out.push((Branch::Asc, a.hidden2_w.as_slice_mut().unwrap()));
            out.push((Branch::Asc, a.hidden2_b.as_slice_mut().unwrap()));
            out.push((Branch::Asc, a.out_w.as_slice_mut().unwrap()));
            out.push((Branch::Asc, a.out_b.as_slice_mut().unwrap()));
        }
        out
    }

    pub fn count(&self) -> usize {
        self.tensors().iter().map(|t| t.2.len()).sum()
    }

    /// Euclidean norm over every tensor.
    pub fn norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|t| t.2.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    /// Owned copies of every tensor, for serialization.
    pub fn to_arrays(&self) -> Vec<ArrayD<f64>> {
        self.tensors()
            .into_iter()
            .map(|(_, _, data, shape)| ArrayD::from_shape_vec(shape, data.to_vec()).unwrap())
            .collect()
    }
}
