//! Spectral and binaural feature maps and the stacked network inputs.
//!
//! Every map except GCC-PHAT is computed on the complex mel-projected
//! spectrogram, so all of them share one `frames x mels` grid. GCC-PHAT is
//! computed from the raw one-sided bins and truncated to `mels` lags
//! centered on zero, which puts it on the same grid.

pub mod file;

use std::f64::consts::PI;
use std::fmt;

use ndarray::{Array2, Array3, Axis};
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::dataset::mono_downmix;
use crate::dsp::{
    complex_mel, mel_filterbank, stft, AudioClip, ComplexMelSpectrogram, ComplexSpectrogram,
    MelFilterbank, StftConfig,
};
use crate::{Error, Result};

/// Magnitude floor used by logmel, ILD and the PHAT weighting.
pub const EPSILON: f64 = 1e-10;

/// Network input layouts, one per feature combination.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FeatureSet {
    /// Logmel of the `(L + R) / 2` downmix.
    Mel1ch,
    /// Logmel of each channel.
    Mel2ch,
    /// Logmels plus the phase of each channel.
    MelPhase,
    /// Logmels plus the interaural phase difference.
    #[serde(rename = "MelIPD")]
    MelIpd,
    /// Logmels plus sine and cosine of the IPD.
    MelSinCos,
    /// Logmels plus GCC-PHAT.
    #[serde(rename = "MelGCC")]
    MelGcc,
    /// Logmels plus the interaural level difference.
    #[serde(rename = "MelILD")]
    MelIld,
}

impl FeatureSet {
    pub const ALL: [FeatureSet; 7] = [
        FeatureSet::Mel1ch,
        FeatureSet::Mel2ch,
        FeatureSet::MelPhase,
        FeatureSet::MelIpd,
        FeatureSet::MelSinCos,
        FeatureSet::MelGcc,
        FeatureSet::MelIld,
    ];

    pub fn channels(self) -> usize {
        match self {
            FeatureSet::Mel1ch => 1,
            FeatureSet::Mel2ch => 2,
            FeatureSet::MelPhase | FeatureSet::MelSinCos => 4,
            FeatureSet::MelIpd | FeatureSet::MelGcc | FeatureSet::MelIld => 3,
        }
    }

    pub fn tag(self) -> u8 {
        Self::ALL.iter().position(|&s| s == self).unwrap() as u8
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Self::ALL.get(tag as usize).copied()
    }

    pub fn requires_binaural(self) -> bool {
        self != FeatureSet::Mel1ch
    }

    pub fn name(self) -> &'static str {
        match self {
            FeatureSet::Mel1ch => "Mel1ch",
            FeatureSet::Mel2ch => "Mel2ch",
            FeatureSet::MelPhase => "MelPhase",
            FeatureSet::MelIpd => "MelIPD",
            FeatureSet::MelSinCos => "MelSinCos",
            FeatureSet::MelGcc => "MelGCC",
            FeatureSet::MelIld => "MelILD",
        }
    }
}

impl fmt::Display for FeatureSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for FeatureSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|set| set.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                let names: Vec<_> = Self::ALL.iter().map(|s| s.name()).collect();
                Error::InvalidConfig(format!("unknown feature set {s:?}, expected one of {names:?}"))
            })
    }
}

/// Stacked `channels x frames x mels` network input.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTensor {
    pub data: Array3<f32>,
    pub layout: FeatureSet,
}

impl FeatureTensor {
    pub fn channels(&self) -> usize {
        self.data.dim().0
    }

    pub fn frames(&self) -> usize {
        self.data.dim().1
    }

    pub fn mels(&self) -> usize {
        self.data.dim().2
    }
}

/// Signed sample lags kept from the GCC-PHAT output, ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GccLagMap {
    pub lag_values: Vec<i64>,
}

impl GccLagMap {
    /// Lags `-floor(width/2) ..= ceil(width/2) - 1`; lag 0 sits at index `width / 2`.
    pub fn centered(width: usize) -> Self {
        let lo = -((width / 2) as i64);
        Self {
            lag_values: (0..width as i64).map(|i| lo + i).collect(),
        }
    }

    pub fn zero_index(&self) -> usize {
        self.lag_values.len() / 2
    }
}

/// `ln(|X_mel| + eps)`.
pub fn logmel(xmel: &ComplexMelSpectrogram) -> Array2<f64> {
    xmel.bins.mapv(|c| (c.norm() + EPSILON).ln())
}

/// `(|L| + eps) / (|R| + eps)` per mel band.
pub fn ild(left: &ComplexMelSpectrogram, right: &ComplexMelSpectrogram) -> Result<Array2<f64>> {
    check_same_shape(left.bins.dim(), right.bins.dim())?;
    let mut out = Array2::zeros(left.bins.dim());
    ndarray::Zip::from(&mut out)
        .and(&left.bins)
        .and(&right.bins)
        .for_each(|o, l, r| *o = (l.norm() + EPSILON) / (r.norm() + EPSILON));
    Ok(out)
}

/// Phase angle in `(-pi, pi]`, with `arg(0) = 0`.
pub fn phase(xmel: &ComplexMelSpectrogram) -> Array2<f64> {
    xmel.bins.mapv(complex_arg)
}

fn complex_arg(c: Complex64) -> f64 {
    if c.re == 0.0 && c.im == 0.0 {
        return 0.0;
    }
    let a = c.im.atan2(c.re);
    // atan2 returns -pi for (negative, -0.0)
    if a == -PI {
        PI
    } else {
        a
    }
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_phase(angle: f64) -> f64 {
    let two_pi = 2.0 * PI;
    let mut a = angle % two_pi;
    if a > PI {
        a -= two_pi;
    } else if a <= -PI {
        a += two_pi;
    }
    a
}

/// Interaural phase difference `arg(L) - arg(R)` wrapped to `(-pi, pi]`.
pub fn ipd(left: &ComplexMelSpectrogram, right: &ComplexMelSpectrogram) -> Result<Array2<f64>> {
    check_same_shape(left.bins.dim(), right.bins.dim())?;
    let mut out = Array2::zeros(left.bins.dim());
    ndarray::Zip::from(&mut out)
        .and(&left.bins)
        .and(&right.bins)
        .for_each(|o, &l, &r| *o = wrap_phase(complex_arg(l) - complex_arg(r)));
    Ok(out)
}

/// Element-wise sine and cosine of a phase-difference map.
pub fn sincos_ipd(ipd: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
    (ipd.mapv(f64::sin), ipd.mapv(f64::cos))
}

/// GCC-PHAT per frame, truncated to `width` lags centered on zero.
///
/// Column `j` holds the correlation at lag `lag_values[j]`, where a peak at
/// lag `d` means `left[t + d]` lines up with `right[t]`. A right channel
/// delayed by `tau` samples therefore peaks at `d = -tau`.
pub fn gcc_phat(
    left: &ComplexSpectrogram,
    right: &ComplexSpectrogram,
    width: usize,
) -> Result<(Array2<f64>, GccLagMap)> {
    check_same_shape(left.bins.dim(), right.bins.dim())?;
    if left.fft_size != right.fft_size {
        return Err(Error::Shape(format!(
            "FFT sizes differ: {} vs {}",
            left.fft_size, right.fft_size
        )));
    }
    let n = left.fft_size;
    let k = left.bin_count();
    if k != n / 2 + 1 {
        return Err(Error::Shape(format!(
            "{k} bins is not one-sided for FFT size {n}"
        )));
    }
    if width == 0 || width > n {
        return Err(Error::InvalidConfig(format!(
            "GCC width {width} must be in 1..={n}"
        )));
    }

    let lags = GccLagMap::centered(width);
    let ifft = FftPlanner::new().plan_fft_inverse(n);
    let mut scratch = vec![Complex64::default(); ifft.get_inplace_scratch_len()];
    let mut buf = vec![Complex64::default(); n];
    let mut out = Array2::zeros((left.frames(), width));
    let scale = 1.0 / n as f64;

    for ((l_row, r_row), mut out_row) in left
        .bins
        .rows()
        .into_iter()
        .zip(right.bins.rows())
        .zip(out.rows_mut())
    {
        for (i, (&l, &r)) in l_row.iter().zip(r_row.iter()).enumerate() {
            let cross = l * r.conj() / (l.norm() * r.norm() + EPSILON);
            buf[i] = cross;
            if i > 0 && i < n - i {
                buf[n - i] = cross.conj();
            }
        }
        ifft.process_with_scratch(&mut buf, &mut scratch);
        for (dst, &lag) in out_row.iter_mut().zip(&lags.lag_values) {
            *dst = buf[lag.rem_euclid(n as i64) as usize].re * scale;
        }
    }
    Ok((out, lags))
}

fn check_same_shape(a: (usize, usize), b: (usize, usize)) -> Result<()> {
    if a != b {
        return Err(Error::Shape(format!("{a:?} vs {b:?}")));
    }
    Ok(())
}

/// STFT and mel configuration bound to one sample rate.
#[derive(Debug, Clone)]
pub struct FeatureExtractor {
    sample_rate: u32,
    stft: StftConfig,
    bank: MelFilterbank,
}

impl FeatureExtractor {
    /// 40 ms / 50% STFT and `mels` filters spanning 0 Hz to Nyquist.
    pub fn new(sample_rate: u32, mels: usize) -> Result<Self> {
        let stft = StftConfig::for_sample_rate(sample_rate)?;
        let bank = mel_filterbank(mels, stft.bins(), sample_rate, 0.0, f64::from(sample_rate) / 2.0)?;
        Ok(Self {
            sample_rate,
            stft,
            bank,
        })
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn stft_config(&self) -> &StftConfig {
        &self.stft
    }

    pub fn filterbank(&self) -> &MelFilterbank {
        &self.bank
    }

    pub fn mels(&self) -> usize {
        self.bank.mels()
    }

    pub fn frame_hop_seconds(&self) -> f64 {
        self.stft.frame_hop_seconds(self.sample_rate)
    }

    pub fn frame_count(&self, samples: usize) -> usize {
        self.stft.frame_count(samples)
    }

    /// Builds the stacked input for `set`. Channel order: logmels first
    /// (left, right), then the spatial maps.
    pub fn stack_features(&self, set: FeatureSet, clip: &AudioClip) -> Result<FeatureTensor> {
        if clip.sample_rate() != self.sample_rate {
            return Err(Error::InvalidInput(format!(
                "clip sampled at {} Hz, extractor configured for {} Hz",
                clip.sample_rate(),
                self.sample_rate
            )));
        }
        if set.requires_binaural() && clip.channel_count() != 2 {
            return Err(Error::InvalidInput(format!(
                "feature set {set} needs a binaural clip, got {} channel(s)",
                clip.channel_count()
            )));
        }

        let maps: Vec<Array2<f64>> = if set == FeatureSet::Mel1ch {
            let mono = if clip.channel_count() == 2 {
                mono_downmix(clip)?
            } else {
                clip.clone()
            };
            let spec = stft(&mono, &self.stft)?;
            vec![logmel(&complex_mel(&spec[0], &self.bank)?)]
        } else {
            let spec = stft(clip, &self.stft)?;
            let l = complex_mel(&spec[0], &self.bank)?;
            let r = complex_mel(&spec[1], &self.bank)?;
            let mut maps = vec![logmel(&l), logmel(&r)];
            match set {
                FeatureSet::Mel1ch | FeatureSet::Mel2ch => {}
                FeatureSet::MelPhase => {
                    maps.push(phase(&l));
                    maps.push(phase(&r));
                }
                FeatureSet::MelIpd => maps.push(ipd(&l, &r)?),
                FeatureSet::MelSinCos => {
                    let (si, ci) = sincos_ipd(&ipd(&l, &r)?);
                    maps.push(si);
                    maps.push(ci);
                }
                FeatureSet::MelGcc => maps.push(gcc_phat(&spec[0], &spec[1], self.mels())?.0),
                FeatureSet::MelIld => maps.push(ild(&l, &r)?),
            }
            maps
        };
        debug_assert_eq!(maps.len(), set.channels());

        let views: Vec<_> = maps.iter().map(|m| m.view()).collect();
        let stacked = ndarray::stack(Axis(0), &views).map_err(|e| Error::Shape(e.to_string()))?;
        let data = stacked.mapv(|v| v as f32);
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite feature value".into()));
        }
        Ok(FeatureTensor { data, layout: set })
    }
}
