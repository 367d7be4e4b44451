//! Synthetic binaural scenes with known event boundaries, interaural time
//! and level differences.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::dataset::{
    format_annotations, format_manifest, write_wav_pcm16, AnnotationEvent, ClipMeta, ManifestEntry,
};
use crate::dsp::AudioClip;
use crate::{Error, Result};

/// Largest accepted interaural delay in samples.
pub const MAX_ITD: i32 = 64;

/// Peak amplitude of tones and clicks; noise bands get the matching RMS.
const SOURCE_AMPLITUDE: f64 = 0.25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SourceKind {
    Tone { frequency: f64 },
    NoiseBand { low: f64, high: f64 },
    ClickTrain { rate: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthEvent {
    pub class: String,
    pub onset: f64,
    pub offset: f64,
    pub source: SourceKind,
    /// Right-channel delay in samples; negative values lead.
    #[serde(default)]
    pub itd: i32,
    /// Right-channel attenuation in decibels.
    #[serde(default)]
    pub ild_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub scene_label: String,
    pub events: Vec<SynthEvent>,
    pub duration: f64,
    pub sample_rate: u32,
    /// Level of independent white noise per channel, dB re full scale RMS.
    #[serde(default)]
    pub noise_floor_db: Option<f64>,
    #[serde(default)]
    pub seed: u64,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.sample_rate == 0 {
            return bad("sample rate must be positive".into());
        }
        if !(self.duration > 0.0 && self.duration.is_finite()) || self.samples() == 0 {
            return bad(format!("duration {} must be positive", self.duration));
        }
        // ten minutes is far beyond any test scene
        if self.duration > 600.0 {
            return bad(format!("duration {} s exceeds 600 s", self.duration));
        }
        if self.scene_label.trim().is_empty() {
            return bad("scene label must not be empty".into());
        }
        if matches!(self.noise_floor_db, Some(db) if !db.is_finite()) {
            return bad("noise floor must be finite".into());
        }
        let nyquist = f64::from(self.sample_rate) / 2.0;
        for (i, ev) in self.events.iter().enumerate() {
            let ctx = |msg: String| Error::InvalidConfig(format!("event {i} ({}): {msg}", ev.class));
            if ev.class.trim().is_empty() || ev.class.contains(['\t', '\n', '\r']) {
                return Err(ctx("class must be a non-empty single-line label".into()));
            }
            if !(ev.onset >= 0.0 && ev.onset < ev.offset && ev.offset <= self.duration) {
                return Err(ctx(format!(
                    "needs 0 <= onset < offset <= {}, got [{}, {}]",
                    self.duration, ev.onset, ev.offset
                )));
            }
            if ev.itd.abs() > MAX_ITD {
                return Err(ctx(format!("|itd| {} exceeds {MAX_ITD} samples", ev.itd)));
            }
            if !ev.ild_db.is_finite() {
                return Err(ctx("ild_db must be finite".into()));
            }
            let ok = match ev.source {
                SourceKind::Tone { frequency } => frequency > 0.0 && frequency < nyquist,
                SourceKind::NoiseBand { low, high } => low >= 0.0 && low < high && high <= nyquist,
                SourceKind::ClickTrain { rate } => rate > 0.0 && rate <= f64::from(self.sample_rate),
            };
            if !ok {
                return Err(ctx(format!("source {:?} is outside (0, {nyquist}) Hz", ev.source)));
            }
        }
        Ok(())
    }

    fn samples(&self) -> usize {
        (self.duration * f64::from(self.sample_rate)).round() as usize
    }

    fn to_sample(&self, seconds: f64) -> usize {
        ((seconds * f64::from(self.sample_rate)).round() as usize).min(self.samples())
    }
}

/// White noise limited to `[low, high]` Hz by zeroing FFT bins, scaled to
/// the RMS of a sine of peak `SOURCE_AMPLITUDE`.
fn noise_band(len: usize, low: f64, high: f64, sample_rate: u32, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut buf: Vec<Complex64> = (0..len)
        .map(|_| Complex64::new(StandardNormal.sample(rng), 0.0))
        .collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(len).process(&mut buf);
    let sr = f64::from(sample_rate);
    for (k, v) in buf.iter_mut().enumerate() {
        let freq = k.min(len - k) as f64 * sr / len as f64;
        if freq < low || freq > high {
            *v = Complex64::new(0.0, 0.0);
        }
    }
    planner.plan_fft_inverse(len).process(&mut buf);
    let mut out: Vec<f64> = buf.iter().map(|c| c.re).collect();
    let rms = (out.iter().map(|v| v * v).sum::<f64>() / len as f64).sqrt();
    if rms > 0.0 {
        let scale = SOURCE_AMPLITUDE / 2f64.sqrt() / rms;
        out.iter_mut().for_each(|v| *v *= scale);
    }
    out
}

fn source_signal(ev: &SynthEvent, start: usize, len: usize, sample_rate: u32, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let sr = f64::from(sample_rate);
    match ev.source {
        SourceKind::Tone { frequency } => (start..start + len)
            .map(|n| SOURCE_AMPLITUDE * (2.0 * PI * frequency * n as f64 / sr).sin())
            .collect(),
        SourceKind::NoiseBand { low, high } => noise_band(len, low, high, sample_rate, rng),
        SourceKind::ClickTrain { rate } => {
            let period = sr / rate;
            let mut out = vec![0.0; len];
            let mut k = 0usize;
            loop {
                let at = (k as f64 * period).round() as usize;
                if at >= len {
                    break;
                }
                out[at] = SOURCE_AMPLITUDE;
                k += 1;
            }
            out
        }
    }
}

/// Left = sources + noise; right = sources delayed by `itd` samples and
/// attenuated by `ild_db`, plus independent noise.
pub fn render(spec: &SynthSpec) -> Result<(AudioClip, ClipMeta)> {
    spec.validate()?;
    let n = spec.samples();
    let mut left = vec![0.0; n];
    let mut right = vec![0.0; n];
    for (i, ev) in spec.events.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(1 + i as u64);
        let start = spec.to_sample(ev.onset);
        let end = spec.to_sample(ev.offset);
        let signal = source_signal(ev, start, end - start, spec.sample_rate, &mut rng);
        let gain = 10f64.powf(-ev.ild_db / 20.0);
        for (j, &v) in signal.iter().enumerate() {
            let t = start + j;
            left[t] += v;
            let shifted = t as i64 + i64::from(ev.itd);
            if (0..n as i64).contains(&shifted) {
                right[shifted as usize] += gain * v;
            }
        }
    }
    if let Some(db) = spec.noise_floor_db {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(0);
        let level = 10f64.powf(db / 20.0);
        for ch in [&mut left, &mut right] {
            for v in ch.iter_mut() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *v += level * z;
            }
        }
    }
    let mut events = spec
        .events
        .iter()
        .map(|e| AnnotationEvent::new(e.onset, e.offset, e.class.clone()))
        .collect::<Result<Vec<_>>>()?;
    events.sort_by(|a, b| a.onset.total_cmp(&b.onset).then_with(|| a.label.cmp(&b.label)));
    let clip = AudioClip::stereo(left, right, spec.sample_rate)?;
    let meta = ClipMeta {
        audio_path: PathBuf::new(),
        scene_label: spec.scene_label.clone(),
        events,
    };
    Ok((clip, meta))
}

pub const MICRO_SAMPLE_RATE: u32 = 8000;
/// 16160 samples: exactly 100 STFT frames at 8 kHz.
pub const MICRO_DURATION: f64 = 2.02;
pub const MICRO_CLIPS: usize = 8;

/// Event classes of the micro-corpus by scene. "phone" and "horn" are the
/// same tone and differ only in their interaural delay.
pub fn micro_corpus_classes() -> [(&'static str, [(&'static str, SourceKind, i32, f64); 2]); 2] {
    [
        (
            "office",
            [
                ("keyboard", SourceKind::ClickTrain { rate: 50.0 }, -3, 0.0),
                ("phone", SourceKind::Tone { frequency: 1200.0 }, 5, 3.0),
            ],
        ),
        (
            "street",
            [
                ("car", SourceKind::NoiseBand { low: 200.0, high: 800.0 }, -6, -2.0),
                ("horn", SourceKind::Tone { frequency: 1200.0 }, -5, 3.0),
            ],
        ),
    ]
}

/// The eight scene specifications, four per scene, with seeded event
/// placement.
pub fn micro_corpus_specs(seed: u64) -> Vec<SynthSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(7);
    let quantize = |x: f64| (x * 100.0).round() / 100.0;
    let scenes = micro_corpus_classes();
    (0..MICRO_CLIPS)
        .map(|i| {
            let (scene, classes) = &scenes[i % 2];
            let mut events = Vec::new();
            for (class, source, itd, ild_db) in classes.iter() {
                let count = rng.random_range(1..=2);
                // split the clip into `count` slots so events of one class never overlap
                let slot = MICRO_DURATION / count as f64;
                for s in 0..count {
                    let length = quantize(rng.random_range(0.3..0.7f64).min(slot - 0.05));
                    let onset = quantize(s as f64 * slot + rng.random_range(0.0..slot - length));
                    let offset = quantize((onset + length).min(MICRO_DURATION));
                    events.push(SynthEvent {
                        class: class.to_string(),
                        onset,
                        offset,
                        source: source.clone(),
                        itd: *itd,
                        ild_db: *ild_db,
                    });
                }
            }
            SynthSpec {
                scene_label: scene.to_string(),
                events,
                duration: MICRO_DURATION,
                sample_rate: MICRO_SAMPLE_RATE,
                noise_floor_db: Some(-50.0),
                seed: seed.wrapping_add(i as u64),
            }
        })
        .collect()
}

/// Renders specs into `out_dir` as `<stem>.wav` and `<stem>.ann`, plus
/// `manifest.tsv`. Returns the manifest path.
pub fn write_corpus(specs: &[SynthSpec], out_dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::from(e).in_file(out_dir))?;
    let mut entries = Vec::with_capacity(specs.len());
    for (i, spec) in specs.iter().enumerate() {
        let stem = format!("clip_{i:02}_{}", spec.scene_label);
        let (clip, meta) = render(spec)?;
        let audio_path = out_dir.join(format!("{stem}.wav"));
        let annotation_path = out_dir.join(format!("{stem}.ann"));
        write_wav_pcm16(&audio_path, &clip)?;
        std::fs::write(&annotation_path, format_annotations(&meta.events))
            .map_err(|e| Error::from(e).in_file(&annotation_path))?;
        entries.push(ManifestEntry {
            audio_path,
            scene_label: meta.scene_label,
            annotation_path,
        });
    }
    let manifest = out_dir.join("manifest.tsv");
    std::fs::write(&manifest, format_manifest(&entries, out_dir)).map_err(|e| Error::from(e).in_file(&manifest))?;
    Ok(manifest)
}

/// The deterministic eight-clip corpus used for end-to-end checks.
pub fn make_micro_corpus(out_dir: &Path, seed: u64) -> Result<PathBuf> {
    write_corpus(&micro_corpus_specs(seed), out_dir)
}
