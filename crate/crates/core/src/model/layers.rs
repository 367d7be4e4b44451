//! Layer kernels with hand-written gradients. Batched activations are
//! `batch x channels x frames x mels`.

use ndarray::{s, Array1, Array2, Array3, Array4, ArrayView1, ArrayView2, ArrayView3, ArrayView4, Axis};

use crate::{Error, Result};

/// Variance floor inside batch normalization.
pub const BN_EPSILON: f64 = 1e-5;
/// Weight of the previous running statistic when updating it.
pub const BN_MOMENTUM: f64 = 0.9;

/// Copies `x` shifted by kernel offset `(di, dj)` into a `channels x (batch *
/// frames * mels)` matrix, zero outside the input.
fn shifted(x: ArrayView4<'_, f64>, di: usize, dj: usize, ph: usize, pw: usize) -> Array2<f64> {
    let (b, c, t, m) = x.dim();
    let mut out = Array2::zeros((c, b * t * m));
    // output column (bi, ti, mi) reads input (ti + di - ph, mi + dj - pw)
    let m_lo = pw.saturating_sub(dj);
    let m_hi = (m + pw).saturating_sub(dj).min(m);
    if m_lo >= m_hi {
        return out;
    }
    for bi in 0..b {
        for ci in 0..c {
            for ti in 0..t {
                let src_t = ti + di;
                if src_t < ph || src_t - ph >= t {
                    continue;
                }
                let src_row = x.slice(s![bi, ci, src_t - ph, ..]);
                let base = (bi * t + ti) * m;
                let mut dst = out.slice_mut(s![ci, base + m_lo..base + m_hi]);
                let src = src_row.slice(s![m_lo + dj - pw..m_hi + dj - pw]);
                dst.assign(&src);
            }
        }
    }
    out
}

/// Adds a shifted-layout matrix back into a `batch x channels x frames x mels` gradient.
fn unshift_add(dx: &mut Array4<f64>, cols: ArrayView2<'_, f64>, di: usize, dj: usize, ph: usize, pw: usize) {
    let (b, c, t, m) = dx.dim();
    let m_lo = pw.saturating_sub(dj);
    let m_hi = (m + pw).saturating_sub(dj).min(m);
    if m_lo >= m_hi {
        return;
    }
    for bi in 0..b {
        for ci in 0..c {
            for ti in 0..t {
                let src_t = ti + di;
                if src_t < ph || src_t - ph >= t {
                    continue;
                }
                let base = (bi * t + ti) * m;
                let g = cols.slice(s![ci, base + m_lo..base + m_hi]);
                let mut dst = dx.slice_mut(s![bi, ci, src_t - ph, m_lo + dj - pw..m_hi + dj - pw]);
                dst += &g;
            }
        }
    }
}

fn check_conv(x: &ArrayView4<'_, f64>, w: &ArrayView4<'_, f64>, bias: &ArrayView1<'_, f64>) -> Result<()> {
    let (_, c, _, _) = x.dim();
    let (p, wc, kh, kw) = w.dim();
    if wc != c || bias.len() != p {
        return Err(Error::Shape(format!(
            "conv input has {c} channels, weights {:?}, bias {}",
            w.dim(),
            bias.len()
        )));
    }
    if kh % 2 == 0 || kw % 2 == 0 {
        return Err(Error::InvalidConfig(format!(
            "'same' padding needs odd kernel sizes, got {kh}x{kw}"
        )));
    }
    Ok(())
}

/// "Same"-padded 2D cross-correlation with bias; `w` is `filters x
/// channels x kh x kw`.
pub fn conv2d_forward(
    x: ArrayView4<'_, f64>,
    w: ArrayView4<'_, f64>,
    bias: ArrayView1<'_, f64>,
) -> Result<Array4<f64>> {
    check_conv(&x, &w, &bias)?;
    let (b, _, t, m) = x.dim();
    let (p, _, kh, kw) = w.dim();
    let (ph, pw) = (kh / 2, kw / 2);
    let mut acc = Array2::<f64>::zeros((p, b * t * m));
    for di in 0..kh {
        for dj in 0..kw {
            let cols = shifted(x, di, dj, ph, pw);
            let wk = w.slice(s![.., .., di, dj]);
            ndarray::linalg::general_mat_mul(1.0, &wk, &cols, 1.0, &mut acc);
        }
    }
    let mut out = Array4::zeros((b, p, t, m));
    for bi in 0..b {
        for pi in 0..p {
            let src = acc.slice(s![pi, bi * t * m..(bi + 1) * t * m]);
            let mut dst = out.slice_mut(s![bi, pi, .., ..]);
            for (d, &v) in dst.iter_mut().zip(src.iter()) {
                *d = v + bias[pi];
            }
        }
    }
    Ok(out)
}

/// Gradients of [`conv2d_forward`]: `(dx, dw, dbias)`.
pub fn conv2d_backward(
    x: ArrayView4<'_, f64>,
    w: ArrayView4<'_, f64>,
    dy: ArrayView4<'_, f64>,
) -> (Array4<f64>, Array4<f64>, Array1<f64>) {
    let (b, c, t, m) = x.dim();
    let (p, _, kh, kw) = w.dim();
    let (ph, pw) = (kh / 2, kw / 2);

    let mut dy_cols = Array2::<f64>::zeros((p, b * t * m));
    for bi in 0..b {
        for pi in 0..p {
            let mut dst = dy_cols.slice_mut(s![pi, bi * t * m..(bi + 1) * t * m]);
            for (d, &v) in dst.iter_mut().zip(dy.slice(s![bi, pi, .., ..]).iter()) {
                *d = v;
            }
        }
    }
    let dbias = dy_cols.sum_axis(Axis(1));
    let mut dw = Array4::zeros((p, c, kh, kw));
    let mut dx = Array4::zeros((b, c, t, m));
    for di in 0..kh {
        for dj in 0..kw {
            let cols = shifted(x, di, dj, ph, pw);
            let dwk = dy_cols.dot(&cols.t());
            dw.slice_mut(s![.., .., di, dj]).assign(&dwk);
            let wk = w.slice(s![.., .., di, dj]);
            let dcols = wk.t().dot(&dy_cols);
            unshift_add(&mut dx, dcols.view(), di, dj, ph, pw);
        }
    }
    (dx, dw, dbias)
}

/// Whether batch normalization uses batch or running statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormMode {
    Train,
    Eval,
}

/// Values kept from a training-mode batch-norm pass.
#[derive(Debug, Clone)]
pub struct BatchNormCache {
    pub normalized: Array4<f64>,
    pub inv_std: Array1<f64>,
    pub batch_mean: Array1<f64>,
    pub batch_var: Array1<f64>,
}

/// Per-channel normalization over batch, frames and mels, then
/// `gamma * x_hat + beta`.
pub fn batchnorm_forward(
    x: ArrayView4<'_, f64>,
    gamma: ArrayView1<'_, f64>,
    beta: ArrayView1<'_, f64>,
    running_mean: ArrayView1<'_, f64>,
    running_var: ArrayView1<'_, f64>,
    mode: NormMode,
) -> (Array4<f64>, BatchNormCache) {
    let (b, c, t, m) = x.dim();
    let count = (b * t * m) as f64;
    let (mean, var) = match mode {
        NormMode::Train => {
            let mut mean = Array1::zeros(c);
            let mut var = Array1::zeros(c);
            for ci in 0..c {
                let lane = x.slice(s![.., ci, .., ..]);
                let mu = lane.sum() / count;
                mean[ci] = mu;
                var[ci] = lane.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / count;
            }
            (mean, var)
        }
        NormMode::Eval => (running_mean.to_owned(), running_var.to_owned()),
    };
    let inv_std = var.mapv(|v| 1.0 / (v + BN_EPSILON).sqrt());
    let mut normalized = x.to_owned();
    let mut out = Array4::zeros((b, c, t, m));
    for ci in 0..c {
        let (mu, is, g, be) = (mean[ci], inv_std[ci], gamma[ci], beta[ci]);
        let mut n_lane = normalized.slice_mut(s![.., ci, .., ..]);
        n_lane.mapv_inplace(|v| (v - mu) * is);
        let mut o_lane = out.slice_mut(s![.., ci, .., ..]);
        o_lane.zip_mut_with(&n_lane, |o, &n| *o = g * n + be);
    }
    (
        out,
        BatchNormCache {
            normalized,
            inv_std,
            batch_mean: mean,
            batch_var: var,
        },
    )
}

/// Training-mode gradients: `(dx, dgamma, dbeta)`.
pub fn batchnorm_backward(
    dy: ArrayView4<'_, f64>,
    gamma: ArrayView1<'_, f64>,
    cache: &BatchNormCache,
) -> (Array4<f64>, Array1<f64>, Array1<f64>) {
    let (b, c, t, m) = dy.dim();
    let count = (b * t * m) as f64;
    let mut dx = Array4::zeros((b, c, t, m));
    let mut dgamma = Array1::zeros(c);
    let mut dbeta = Array1::zeros(c);
    for ci in 0..c {
        let dy_lane = dy.slice(s![.., ci, .., ..]);
        let n_lane = cache.normalized.slice(s![.., ci, .., ..]);
        let sum_dy = dy_lane.sum();
        let sum_dy_n: f64 = dy_lane.iter().zip(n_lane.iter()).map(|(a, b)| a * b).sum();
        dgamma[ci] = sum_dy_n;
        dbeta[ci] = sum_dy;
        let scale = gamma[ci] * cache.inv_std[ci] / count;
        let mut dx_lane = dx.slice_mut(s![.., ci, .., ..]);
        ndarray::Zip::from(&mut dx_lane)
            .and(&dy_lane)
            .and(&n_lane)
            .for_each(|d, &g, &n| *d = scale * (count * g - sum_dy - n * sum_dy_n));
    }
    (dx, dgamma, dbeta)
}

/// Moves running statistics toward the batch statistics.
pub fn update_running_stats(running_mean: &mut Array1<f64>, running_var: &mut Array1<f64>, cache: &BatchNormCache) {
    running_mean.zip_mut_with(&cache.batch_mean, |r, &b| *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * b);
    running_var.zip_mut_with(&cache.batch_var, |r, &b| *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * b);
}

pub fn relu_forward(x: &mut Array4<f64>) {
    x.mapv_inplace(|v| v.max(0.0));
}

/// Gradient through ReLU given the ReLU output.
pub fn relu_backward(dy: &mut Array4<f64>, y: ArrayView4<'_, f64>) {
    dy.zip_mut_with(&y, |d, &v| {
        if v <= 0.0 {
            *d = 0.0;
        }
    });
}

/// Axis a pooling layer reduces.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolAxis {
    Time,
    Mel,
}

impl PoolAxis {
    fn index(self) -> usize {
        match self {
            PoolAxis::Time => 2,
            PoolAxis::Mel => 3,
        }
    }
}

/// Non-overlapping max over windows of `factor` along `axis`. Returns the
/// pooled tensor and, per output element, the flat input index of the max
/// (first one on ties).
pub fn maxpool_forward(x: ArrayView4<'_, f64>, axis: PoolAxis, factor: usize) -> Result<(Array4<f64>, Vec<usize>)> {
    let ax = axis.index();
    let len = x.shape()[ax];
    if factor == 0 || !len.is_multiple_of(factor) {
        return Err(Error::Shape(format!(
            "axis of length {len} is not divisible by pooling factor {factor}"
        )));
    }
    let mut shape = [0; 4];
    shape.copy_from_slice(x.shape());
    shape[ax] = len / factor;
    let mut out = Array4::zeros(shape);
    let mut argmax = Vec::with_capacity(out.len());
    let strides: Vec<usize> = {
        let (_, c, t, m) = x.dim();
        vec![c * t * m, t * m, m, 1]
    };
    let x = x.as_standard_layout();
    let flat = x.as_slice().unwrap();
    for (idx, dst) in out.indexed_iter_mut() {
        let mut src = [idx.0, idx.1, idx.2, idx.3];
        src[ax] *= factor;
        let base: usize = src.iter().zip(&strides).map(|(i, s)| i * s).sum();
        let mut best = base;
        for k in 1..factor {
            let at = base + k * strides[ax];
            if flat[at] > flat[best] {
                best = at;
            }
        }
        *dst = flat[best];
        argmax.push(best);
    }
    Ok((out, argmax))
}

/// Routes pooled gradients back to the winning inputs.
pub fn maxpool_backward(dy: ArrayView4<'_, f64>, argmax: &[usize], input_shape: [usize; 4]) -> Array4<f64> {
    let mut dx = Array4::<f64>::zeros(input_shape);
    let flat = dx.as_slice_mut().unwrap();
    for (&g, &at) in dy.iter().zip(argmax) {
        flat[at] += g;
    }
    dx
}

/// `x W^T + b` for rows of `x`.
pub fn dense_forward(x: ArrayView2<'_, f64>, w: ArrayView2<'_, f64>, bias: ArrayView1<'_, f64>) -> Array2<f64> {
    let mut y = x.dot(&w.t());
    y += &bias;
    y
}

/// `(dx, dw, dbias)`.
pub fn dense_backward(
    x: ArrayView2<'_, f64>,
    w: ArrayView2<'_, f64>,
    dy: ArrayView2<'_, f64>,
) -> (Array2<f64>, Array2<f64>, Array1<f64>) {
    (dy.dot(&w), dy.t().dot(&x), dy.sum_axis(Axis(0)))
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Row-wise softmax.
pub fn softmax_rows(logits: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut out = logits.to_owned();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

/// Weights of one GRU direction. Gate blocks are stacked in the order
/// update (z), reset (r), candidate (h).
#[derive(Debug, Clone, PartialEq)]
pub struct GruWeights {
    /// `3H x F` input weights.
    pub w: Array2<f64>,
    /// `3H x H` recurrent weights.
    pub u: Array2<f64>,
    /// `3H` biases.
    pub b: Array1<f64>,
}

impl GruWeights {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            w: Array2::zeros((3 * hidden, input)),
            u: Array2::zeros((3 * hidden, hidden)),
            b: Array1::zeros(3 * hidden),
        }
    }

    pub fn hidden(&self) -> usize {
        self.u.ncols()
    }
}

/// Per-step state of one GRU direction, indexed by processing order.
#[derive(Debug, Clone)]
pub struct GruCache {
    h_prev: Vec<Array1<f64>>,
    z: Vec<Array1<f64>>,
    r: Vec<Array1<f64>>,
    n: Vec<Array1<f64>>,
}

/// Runs one direction over `x` (`frames x F`). With `reverse`, frames are
/// visited last to first; outputs are stored at their frame index.
///
/// `z = s(Wz x + Uz h + bz)`, `r = s(Wr x + Ur h + br)`,
/// `n = tanh(Wh x + Uh (r * h) + bh)`, `h' = (1 - z) * h + z * n`.
pub fn gru_direction_forward(x: ArrayView2<'_, f64>, p: &GruWeights, reverse: bool) -> (Array2<f64>, GruCache) {
    let frames = x.nrows();
    let hidden = p.hidden();
    let ax = dense_forward(x, p.w.view(), p.b.view());
    let uz = p.u.slice(s![0..hidden, ..]);
    let ur = p.u.slice(s![hidden..2 * hidden, ..]);
    let uh = p.u.slice(s![2 * hidden.., ..]);

    let mut out = Array2::zeros((frames, hidden));
    let mut cache = GruCache {
        h_prev: Vec::with_capacity(frames),
        z: Vec::with_capacity(frames),
        r: Vec::with_capacity(frames),
        n: Vec::with_capacity(frames),
    };
    let mut h = Array1::<f64>::zeros(hidden);
    for step in 0..frames {
        let t = if reverse { frames - 1 - step } else { step };
        let a = ax.row(t);
        let z = (&a.slice(s![0..hidden]) + &uz.dot(&h)).mapv(sigmoid);
        let r = (&a.slice(s![hidden..2 * hidden]) + &ur.dot(&h)).mapv(sigmoid);
        let rh = &r * &h;
        let n = (&a.slice(s![2 * hidden..]) + &uh.dot(&rh)).mapv(f64::tanh);
        let h_next = &h + &(&z * &(&n - &h));
        out.row_mut(t).assign(&h_next);
        cache.h_prev.push(std::mem::replace(&mut h, h_next));
        cache.z.push(z);
        cache.r.push(r);
        cache.n.push(n);
    }
    (out, cache)
}

/// Backpropagation through time for one direction. Returns `dx` and the
/// weight gradients.
pub fn gru_direction_backward(
    x: ArrayView2<'_, f64>,
    p: &GruWeights,
    cache: &GruCache,
    dy: ArrayView2<'_, f64>,
    reverse: bool,
) -> (Array2<f64>, GruWeights) {
    let frames = x.nrows();
    let hidden = p.hidden();
    let uz = p.u.slice(s![0..hidden, ..]);
    let ur = p.u.slice(s![hidden..2 * hidden, ..]);
    let uh = p.u.slice(s![2 * hidden.., ..]);

    let mut grads = GruWeights::zeros(x.ncols(), hidden);
    let mut da_all = Array2::<f64>::zeros((frames, 3 * hidden));
    let mut dh_next = Array1::<f64>::zeros(hidden);
    for step in (0..frames).rev() {
        let t = if reverse { frames - 1 - step } else { step };
        let (h_prev, z, r, n) = (&cache.h_prev[step], &cache.z[step], &cache.r[step], &cache.n[step]);
        let dh = &dy.row(t) + &dh_next;

        let dn = &dh * z;
        let dz = &dh * &(n - h_prev);
        let mut dh_prev = &dh * &z.mapv(|v| 1.0 - v);

        let da_n = &dn * &n.mapv(|v| 1.0 - v * v);
        let rh = r * h_prev;
        let drh = uh.t().dot(&da_n);
        let dr = &drh * h_prev;
        dh_prev += &(&drh * r);

        let da_z = &dz * &z.mapv(|v| v * (1.0 - v));
        let da_r = &dr * &r.mapv(|v| v * (1.0 - v));
        dh_prev += &uz.t().dot(&da_z);
        dh_prev += &ur.t().dot(&da_r);

        let outer = |a: &Array1<f64>, b: &Array1<f64>| {
            a.view().insert_axis(Axis(1)).dot(&b.view().insert_axis(Axis(0)))
        };
        grads.u.slice_mut(s![0..hidden, ..]).scaled_add(1.0, &outer(&da_z, h_prev));
        grads.u.slice_mut(s![hidden..2 * hidden, ..]).scaled_add(1.0, &outer(&da_r, h_prev));
        grads.u.slice_mut(s![2 * hidden.., ..]).scaled_add(1.0, &outer(&da_n, &rh));

        let mut da = da_all.row_mut(t);
        da.slice_mut(s![0..hidden]).assign(&da_z);
        da.slice_mut(s![hidden..2 * hidden]).assign(&da_r);
        da.slice_mut(s![2 * hidden..]).assign(&da_n);
        dh_next = dh_prev;
    }
    let (dx, dw, db) = dense_backward(x, p.w.view(), da_all.view());
    grads.w = dw;
    grads.b = db;
    (dx, grads)
}

/// Bidirectional GRU over `x` (`frames x F`): forward and backward outputs
/// concatenated per frame.
pub fn bigru_forward(x: ArrayView2<'_, f64>, fwd: &GruWeights, bwd: &GruWeights) -> (Array2<f64>, [GruCache; 2]) {
    let (yf, cf) = gru_direction_forward(x, fwd, false);
    let (yb, cb) = gru_direction_forward(x, bwd, true);
    let y = ndarray::concatenate(Axis(1), &[yf.view(), yb.view()]).unwrap();
    (y, [cf, cb])
}

/// Gradients of [`bigru_forward`]: `(dx, forward grads, backward grads)`.
pub fn bigru_backward(
    x: ArrayView2<'_, f64>,
    fwd: &GruWeights,
    bwd: &GruWeights,
    caches: &[GruCache; 2],
    dy: ArrayView2<'_, f64>,
) -> (Array2<f64>, GruWeights, GruWeights) {
    let h = fwd.hidden();
    let (dxf, gf) = gru_direction_backward(x, fwd, &caches[0], dy.slice(s![.., ..h]), false);
    let (dxb, gb) = gru_direction_backward(x, bwd, &caches[1], dy.slice(s![.., h..]), true);
    (dxf + dxb, gf, gb)
}

/// `batch x channels x frames x mels` to `batch x frames x (channels * mels)`.
pub fn to_sequence(x: ArrayView4<'_, f64>) -> Array3<f64> {
    let (b, c, t, m) = x.dim();
    let permuted = x.permuted_axes([0, 2, 1, 3]);
    permuted
        .as_standard_layout()
        .into_owned()
        .into_shape_with_order((b, t, c * m))
        .expect("contiguous")
}

/// Inverse of [`to_sequence`].
pub fn from_sequence(x: ArrayView3<'_, f64>, channels: usize) -> Array4<f64> {
    let (b, t, f) = x.dim();
    let m = f / channels;
    let split = x
        .as_standard_layout()
        .into_owned()
        .into_shape_with_order((b, t, channels, m))
        .expect("contiguous");
    split.permuted_axes([0, 2, 1, 3]).as_standard_layout().into_owned()
}
