//! Direct-evaluation references, written without the library's kernels.

use std::f64::consts::PI;

use bsk::dsp::Complex64;
use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn noise(rng: &mut impl Rng, len: usize, amplitude: f64) -> Vec<f64> {
    (0..len).map(|_| rng.random_range(-amplitude..amplitude)).collect()
}

pub fn hamming(len: usize) -> Vec<f64> {
    (0..len)
        .map(|i| 0.54 - 0.46 * (2.0 * PI * i as f64 / (len as f64 - 1.0)).cos())
        .collect()
}

/// One-sided DFT of `frame` zero-padded to `n`, evaluated term by term.
pub fn naive_dft(frame: &[f64], n: usize) -> Vec<Complex64> {
    (0..=n / 2)
        .map(|k| {
            let mut acc = Complex64::new(0.0, 0.0);
            for (t, &x) in frame.iter().enumerate() {
                // reduce k*t mod n first so the angle stays small and exact
                let phase = -2.0 * PI * ((k * t) % n) as f64 / n as f64;
                acc += Complex64::from_polar(x, phase);
            }
            acc
        })
        .collect()
}

/// Naive STFT: frame `f` covers `[f*hop, f*hop + window)`.
pub fn naive_stft(x: &[f64], window: usize, hop: usize, n: usize) -> Vec<Vec<Complex64>> {
    let w = hamming(window);
    let mut frames = Vec::new();
    let mut start = 0;
    while start + window <= x.len() {
        let windowed: Vec<f64> = x[start..start + window].iter().zip(&w).map(|(a, b)| a * b).collect();
        frames.push(naive_dft(&windowed, n));
        start += hop;
    }
    frames
}

/// `out[n][m] = sum_k x[n][k] * h[m][k]`.
pub fn triple_loop(x: &Array2<Complex64>, h: &Array2<f64>) -> Array2<Complex64> {
    let (frames, bins) = x.dim();
    let mels = h.nrows();
    let mut out = Array2::from_elem((frames, mels), Complex64::new(0.0, 0.0));
    for n in 0..frames {
        for m in 0..mels {
            let mut acc = Complex64::new(0.0, 0.0);
            for k in 0..bins {
                acc += x[[n, k]] * h[[m, k]];
            }
            out[[n, m]] = acc;
        }
    }
    out
}

/// `sum_t a[t + d] * b[t]` over the overlap.
pub fn xcorr(a: &[f64], b: &[f64], d: i64) -> f64 {
    let mut acc = 0.0;
    for (t, &bv) in b.iter().enumerate() {
        let i = t as i64 + d;
        if i >= 0 && (i as usize) < a.len() {
            acc += a[i as usize] * bv;
        }
    }
    acc
}

/// Lag in `-max..=max` maximizing the time-domain cross-correlation.
pub fn xcorr_peak(a: &[f64], b: &[f64], max: i64) -> i64 {
    (-max..=max)
        .max_by(|&x, &y| xcorr(a, b, x).total_cmp(&xcorr(a, b, y)))
        .expect("non-empty lag range")
}

pub fn max_abs_diff(a: impl IntoIterator<Item = f64>, b: impl IntoIterator<Item = f64>) -> f64 {
    a.into_iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Difference of two angles folded into `[0, pi]`.
pub fn angle_gap(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(2.0 * PI);
    d.min(2.0 * PI - d)
}
