//! Deterministic front-end transforms: framing, Hamming window, STFT, mel
//! filterbank and the complex mel projection that every feature builds on.

use std::f64::consts::PI;

use ndarray::{Array2, ArrayView2};
pub use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::{Error, Result};

/// Analysis window length in seconds.
pub const WINDOW_SECONDS: f64 = 0.040;

/// Multichannel audio with samples in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    channels: Vec<Vec<f64>>,
    sample_rate: u32,
}

impl AudioClip {
    pub fn new(channels: Vec<Vec<f64>>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidInput("sample rate must be positive".into()));
        }
        if channels.is_empty() || channels.len() > 2 {
            return Err(Error::InvalidInput(format!(
                "expected 1 or 2 channels, got {}",
                channels.len()
            )));
        }
        let len = channels[0].len();
        if channels.iter().any(|c| c.len() != len) {
            return Err(Error::InvalidInput("channels differ in length".into()));
        }
        Ok(Self {
            channels,
            sample_rate,
        })
    }

    pub fn mono(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        Self::new(vec![samples], sample_rate)
    }

    pub fn stereo(left: Vec<f64>, right: Vec<f64>, sample_rate: u32) -> Result<Self> {
        Self::new(vec![left, right], sample_rate)
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn channel_count(&self) -> usize {
        self.channels.len()
    }

    /// Samples per channel.
    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn duration(&self) -> f64 {
        self.len() as f64 / f64::from(self.sample_rate)
    }

    pub fn channel(&self, index: usize) -> &[f64] {
        &self.channels[index]
    }

    pub fn channels(&self) -> &[Vec<f64>] {
        &self.channels
    }

    pub fn into_channels(self) -> Vec<Vec<f64>> {
        self.channels
    }
}

/// Framing parameters of the short-time Fourier transform.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StftConfig {
    window_length: usize,
    hop_length: usize,
    fft_size: usize,
}

impl StftConfig {
    /// Window of `window_length` samples, hop of half a window, FFT size the
    /// next power of two.
    pub fn new(window_length: usize) -> Result<Self> {
        if window_length < 2 {
            return Err(Error::InvalidConfig(format!(
                "window length {window_length} is shorter than 2 samples"
            )));
        }
        Ok(Self {
            window_length,
            hop_length: window_length / 2,
            fft_size: window_length.next_power_of_two(),
        })
    }

    /// 40 ms Hamming window with 50% overlap at the given rate.
    pub fn for_sample_rate(sample_rate: u32) -> Result<Self> {
        let window = (WINDOW_SECONDS * f64::from(sample_rate)).round() as usize;
        Self::new(window)
    }

    pub fn window_length(&self) -> usize {
        self.window_length
    }

    pub fn hop_length(&self) -> usize {
        self.hop_length
    }

    pub fn fft_size(&self) -> usize {
        self.fft_size
    }

    /// One-sided bin count `fft_size / 2 + 1`.
    pub fn bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    /// Frames produced for a signal of `len` samples; zero when shorter
    /// than one window.
    pub fn frame_count(&self, len: usize) -> usize {
        if len < self.window_length {
            0
        } else {
            1 + (len - self.window_length) / self.hop_length
        }
    }

    /// Hop expressed in seconds.
    pub fn frame_hop_seconds(&self, sample_rate: u32) -> f64 {
        self.hop_length as f64 / f64::from(sample_rate)
    }
}

/// One-sided complex STFT of a single channel, `frames x bins`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrogram {
    pub bins: Array2<Complex64>,
    pub fft_size: usize,
}

impl ComplexSpectrogram {
    pub fn frames(&self) -> usize {
        self.bins.nrows()
    }

    pub fn bin_count(&self) -> usize {
        self.bins.ncols()
    }
}

/// Complex spectrogram projected onto a mel filterbank, `frames x mels`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexMelSpectrogram {
    pub bins: Array2<Complex64>,
}

impl ComplexMelSpectrogram {
    pub fn frames(&self) -> usize {
        self.bins.nrows()
    }

    pub fn mels(&self) -> usize {
        self.bins.ncols()
    }
}

/// Symmetric Hamming window `0.54 - 0.46 cos(2 pi i / (len - 1))`.
pub fn hamming_window(length: usize) -> Result<Vec<f64>> {
    if length < 2 {
        return Err(Error::InvalidConfig(format!(
            "window length {length} is shorter than 2 samples"
        )));
    }
    let denom = (length - 1) as f64;
    Ok((0..length)
        .map(|i| 0.54 - 0.46 * (2.0 * PI * i as f64 / denom).cos())
        .collect())
}

/// STFT of every channel in the clip.
pub fn stft(clip: &AudioClip, cfg: &StftConfig) -> Result<Vec<ComplexSpectrogram>> {
    let mut planner = FftPlanner::new();
    let window = hamming_window(cfg.window_length)?;
    clip.channels()
        .iter()
        .map(|samples| stft_with(samples, cfg, &window, &mut planner))
        .collect()
}

/// STFT of one channel.
pub fn stft_channel(samples: &[f64], cfg: &StftConfig) -> Result<ComplexSpectrogram> {
    let window = hamming_window(cfg.window_length)?;
    stft_with(samples, cfg, &window, &mut FftPlanner::new())
}

fn stft_with(
    samples: &[f64],
    cfg: &StftConfig,
    window: &[f64],
    planner: &mut FftPlanner<f64>,
) -> Result<ComplexSpectrogram> {
    let frames = cfg.frame_count(samples.len());
    if frames == 0 {
        return Err(Error::TooShort {
            len: samples.len(),
            needed: cfg.window_length,
        });
    }
    let n = cfg.fft_size;
    let k = cfg.bins();
    let fft = planner.plan_fft_forward(n);
    let mut scratch = vec![Complex64::default(); fft.get_inplace_scratch_len()];
    let mut buf = vec![Complex64::default(); n];
    let mut out = Array2::zeros((frames, k));

    for (frame, mut row) in out.rows_mut().into_iter().enumerate() {
        let start = frame * cfg.hop_length;
        let segment = &samples[start..start + cfg.window_length];
        buf.fill(Complex64::default());
        for ((dst, &x), &w) in buf.iter_mut().zip(segment).zip(window) {
            dst.re = x * w;
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        for (dst, src) in row.iter_mut().zip(&buf[..k]) {
            *dst = *src;
        }
    }
    Ok(ComplexSpectrogram {
        bins: out,
        fft_size: n,
    })
}

/// HTK mel scale.
pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular mel filters over one-sided FFT bins.
#[derive(Debug, Clone, PartialEq)]
pub struct MelFilterbank {
    /// `mels x bins`, nonnegative, every row peaks at exactly 1.
    pub weights: Array2<f64>,
    /// Center frequency of each filter in Hz.
    pub band_centers: Vec<f64>,
}

impl MelFilterbank {
    pub fn mels(&self) -> usize {
        self.weights.nrows()
    }

    pub fn bin_count(&self) -> usize {
        self.weights.ncols()
    }
}

/// Builds `mels` peak-normalised triangular filters whose centers are equally
/// spaced on the mel scale between `f_min` and `f_max`.
///
/// `bins` is the one-sided bin count, so bin `k` sits at
/// `k * sample_rate / (2 * (bins - 1))` Hz.
pub fn mel_filterbank(
    mels: usize,
    bins: usize,
    sample_rate: u32,
    f_min: f64,
    f_max: f64,
) -> Result<MelFilterbank> {
    let nyquist = f64::from(sample_rate) / 2.0;
    if mels == 0 {
        return Err(Error::InvalidConfig("mel filter count must be positive".into()));
    }
    if bins < 2 {
        return Err(Error::InvalidConfig(format!("{bins} FFT bins is too few")));
    }
    if !(f_min >= 0.0 && f_min < f_max && f_max <= nyquist) {
        return Err(Error::InvalidConfig(format!(
            "need 0 <= f_min < f_max <= {nyquist} Hz, got [{f_min}, {f_max}]"
        )));
    }

    let mel_lo = hz_to_mel(f_min);
    let step = (hz_to_mel(f_max) - mel_lo) / (mels + 1) as f64;
    let edges: Vec<f64> = (0..mels + 2)
        .map(|i| mel_to_hz(mel_lo + step * i as f64))
        .collect();
    let bin_hz = nyquist / (bins - 1) as f64;

    let mut weights = Array2::zeros((mels, bins));
    for (m, mut row) in weights.rows_mut().into_iter().enumerate() {
        let (lo, center, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        let mut peak = 0.0f64;
        for (k, w) in row.iter_mut().enumerate() {
            let f = k as f64 * bin_hz;
            let rising = (f - lo) / (center - lo);
            let falling = (hi - f) / (hi - center);
            *w = rising.min(falling).max(0.0);
            peak = peak.max(*w);
        }
        if peak <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "mel filter {m} ({lo:.1}-{hi:.1} Hz) covers no FFT bin; \
                 {mels} filters are too many for {bins} bins"
            )));
        }
        row.mapv_inplace(|w| w / peak);
    }

    Ok(MelFilterbank {
        weights,
        band_centers: edges[1..=mels].to_vec(),
    })
}

/// `X_mel[n, m] = sum_k X[n, k] H_m[k]`, summing complex bins.
pub fn complex_mel(spec: &ComplexSpectrogram, bank: &MelFilterbank) -> Result<ComplexMelSpectrogram> {
    complex_mel_view(spec.bins.view(), bank)
}

pub(crate) fn complex_mel_view(
    bins: ArrayView2<'_, Complex64>,
    bank: &MelFilterbank,
) -> Result<ComplexMelSpectrogram> {
    if bins.ncols() != bank.bin_count() {
        return Err(Error::Shape(format!(
            "spectrogram has {} bins, filterbank expects {}",
            bins.ncols(),
            bank.bin_count()
        )));
    }
    let (frames, mels) = (bins.nrows(), bank.mels());
    let mut out = Array2::<Complex64>::zeros((frames, mels));
    for (x_row, mut out_row) in bins.rows().into_iter().zip(out.rows_mut()) {
        for (h_row, dst) in bank.weights.rows().into_iter().zip(out_row.iter_mut()) {
            let mut acc = Complex64::default();
            for (&x, &h) in x_row.iter().zip(h_row.iter()) {
                if h != 0.0 {
                    acc += x * h;
                }
            }
            *dst = acc;
        }
    }
    Ok(ComplexMelSpectrogram { bins: out })
}
