use std::f64::consts::PI;

use bsk::dsp::{complex_mel, hz_to_mel, mel_filterbank, stft, stft_channel, AudioClip, Complex64, ComplexMelSpectrogram, ComplexSpectrogram, MelFilterbank, StftConfig};
use bsk::features::{gcc_phat, ild, ipd, logmel, phase, sincos_ipd, FeatureExtractor, FeatureSet, EPSILON};
use bsk::synth::{render, SourceKind, SynthEvent, SynthSpec};
use ndarray::{Array2, Axis};
use rand::Rng;

use crate::oracle::{self, angle_gap, max_abs_diff};

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

const RATES: [u32; 4] = [8000, 16000, 22050, 44100];

fn random_complex(rng: &mut impl Rng, rows: usize, cols: usize) -> Array2<Complex64> {
    Array2::from_shape_fn((rows, cols), |_| {
        Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
    })
}

fn mel_of(bins: Array2<Complex64>) -> ComplexMelSpectrogram {
    ComplexMelSpectrogram { bins }
}

pub fn oracle_equivalence() -> Result<String, String> {
    let mut rng = oracle::rng(1);
    let mut worst_stft = 0.0f64;
    for i in 0..50 {
        let sr = RATES[i % RATES.len()];
        let cfg = StftConfig::for_sample_rate(sr).map_err(|e| e.to_string())?;
        let len = cfg.window_length() + 2 * cfg.hop_length() + rng.random_range(0..cfg.hop_length());
        let x = oracle::noise(&mut rng, len, 1.0);
        let got = stft_channel(&x, &cfg).map_err(|e| e.to_string())?;
        let want = oracle::naive_stft(&x, cfg.window_length(), cfg.hop_length(), cfg.fft_size());
        ensure!(got.frames() == want.len(), "input {i}: {} frames, oracle {}", got.frames(), want.len());
        let scale = want.iter().flatten().map(|c| c.norm()).fold(0.0, f64::max);
        for (row, w) in got.bins.rows().into_iter().zip(&want) {
            let err = row.iter().zip(w).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max) / scale;
            worst_stft = worst_stft.max(err);
        }
    }
    ensure!(worst_stft <= 1e-9, "STFT relative error {worst_stft:.3e} > 1e-9");

    let mut worst_mel = 0.0f64;
    for i in 0..50 {
        let (frames, bins, mels) = if i % 2 == 0 { (8, 16, 5) } else { (rng.random_range(1..20), rng.random_range(2..80), rng.random_range(1..12)) };
        let x = random_complex(&mut rng, frames, bins);
        let bank = MelFilterbank {
            weights: Array2::from_shape_fn((mels, bins), |_| rng.random_range(0.0..1.0)),
            band_centers: vec![0.0; mels],
        };
        let spec = ComplexSpectrogram { bins: x.clone(), fft_size: 2 * (bins - 1) };
        let got = complex_mel(&spec, &bank).map_err(|e| e.to_string())?;
        let want = oracle::triple_loop(&x, &bank.weights);
        let scale = want.iter().map(|c| c.norm()).fold(f64::MIN_POSITIVE, f64::max);
        let err = got.bins.iter().zip(&want).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max) / scale;
        worst_mel = worst_mel.max(err);
    }
    ensure!(worst_mel <= 1e-12, "complex mel relative error {worst_mel:.3e} > 1e-12");

    // filter centers re-derived from the mel formula
    let bank = mel_filterbank(40, 1025, 44100, 0.0, 22050.0).map_err(|e| e.to_string())?;
    let top = 2595.0 * (1.0 + 22050.0f64 / 700.0).log10();
    for (m, &c) in bank.band_centers.iter().enumerate() {
        let mel = top * (m + 1) as f64 / 41.0;
        let hz = 700.0 * (10f64.powf(mel / 2595.0) - 1.0);
        ensure!((c - hz).abs() <= 1e-6 * hz.max(1.0), "filter {m} center {c} Hz, formula {hz} Hz");
        ensure!(bank.weights.row(m).iter().cloned().fold(0.0, f64::max) == 1.0, "filter {m} does not peak at 1");
    }
    ensure!((hz_to_mel(700.0) - 2595.0 * 2f64.log10()).abs() < 1e-12, "mel(700 Hz)");
    Ok(format!("STFT {worst_stft:.1e}, mel {worst_mel:.1e} (limits 1e-9, 1e-12)"))
}

fn tone(freq: f64, sr: u32, len: usize, delay: usize) -> Vec<f64> {
    (0..len)
        .map(|t| {
            let t = t as f64 - delay as f64;
            (2.0 * PI * freq * t / f64::from(sr)).sin()
        })
        .collect()
}

fn spatial(ex: &FeatureExtractor, clip: &AudioClip) -> Result<(Vec<ComplexSpectrogram>, ComplexMelSpectrogram, ComplexMelSpectrogram), String> {
    let spec = stft(clip, ex.stft_config()).map_err(|e| e.to_string())?;
    let l = complex_mel(&spec[0], ex.filterbank()).map_err(|e| e.to_string())?;
    let r = complex_mel(&spec[1], ex.filterbank()).map_err(|e| e.to_string())?;
    Ok((spec, l, r))
}

fn argmax(row: ndarray::ArrayView1<'_, f64>) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn band_of(ex: &FeatureExtractor, freq: f64) -> usize {
    let bank = ex.filterbank();
    let bin = (freq * ex.stft_config().fft_size() as f64 / f64::from(ex.sample_rate())).round() as usize;
    argmax(bank.weights.column(bin))
}

fn feature_examples() -> Result<usize, String> {
    let mut checks = 0;
    let err = |e: bsk::Error| e.to_string();

    // logmel
    let zero = mel_of(Array2::from_elem((3, 4), Complex64::new(0.0, 0.0)));
    ensure!(logmel(&zero).iter().all(|&v| (v - EPSILON.ln()).abs() < 1e-12 && (v + 23.026).abs() < 1e-3), "logmel of zero");
    let unit = mel_of(Array2::from_elem((3, 4), Complex64::new(1.0, 0.0)));
    ensure!(logmel(&unit).iter().all(|&v| v.abs() <= 1e-9), "logmel of one");
    let ex = FeatureExtractor::new(16000, 40).map_err(err)?;
    let sine = tone(1000.0, 16000, 16000 / 4, 0);
    let spec = stft_channel(&sine, ex.stft_config()).map_err(err)?;
    let lm = logmel(&complex_mel(&spec, ex.filterbank()).map_err(err)?);
    let cfg = ex.stft_config();
    let naive = oracle::naive_stft(&sine, cfg.window_length(), cfg.hop_length(), cfg.fft_size());
    let naive = Array2::from_shape_fn((naive.len(), naive[0].len()), |(n, k)| naive[n][k]);
    let want = oracle::triple_loop(&naive, &ex.filterbank().weights).mapv(|c| (c.norm() + EPSILON).ln());
    ensure!(max_abs_diff(lm.iter().cloned(), want.iter().cloned()) <= 1e-6, "logmel of a 1 kHz sine differs from the oracle");
    let band = band_of(&ex, 1000.0);
    ensure!(lm.rows().into_iter().all(|r| argmax(r) == band), "1 kHz band is not the row maximum");
    checks += 5;

    // ild
    let mut rng = oracle::rng(2);
    let l = mel_of(random_complex(&mut rng, 4, 6));
    ensure!(ild(&l, &l).map_err(err)?.iter().all(|&v| v == 1.0), "ILD of identical channels");
    let left = oracle::noise(&mut rng, 4000, 0.5);
    let half: Vec<f64> = left.iter().map(|v| 0.5 * v).collect();
    let clip = AudioClip::stereo(left.clone(), half, 16000).map_err(err)?;
    let (_, l, r) = spatial(&ex, &clip)?;
    ensure!(ild(&l, &r).map_err(err)?.iter().all(|&v| (v - 2.0).abs() <= 1e-6), "ILD of half-amplitude right");
    let one = mel_of(Array2::from_elem((2, 3), Complex64::new(0.0, 1.0)));
    ensure!(ild(&one, &zero_like(&one)).map_err(err)?.iter().all(|&v| (v / 1e10 - 1.0).abs() < 1e-6), "ILD floor");
    checks += 3;

    // phase
    ensure!(phase(&mel_of(Array2::from_elem((2, 2), Complex64::new(3.0, 0.0)))).iter().all(|&v| v == 0.0), "phase of positive reals");
    ensure!(phase(&mel_of(Array2::from_elem((2, 2), Complex64::new(0.0, 2.0)))).iter().all(|&v| (v - PI / 2.0).abs() < 1e-15), "phase of i");
    let z = random_complex(&mut rng, 5, 7);
    let ph = phase(&mel_of(z.clone()));
    ensure!(ph.iter().zip(&z).all(|(&p, c)| p == c.im.atan2(c.re)), "phase differs from atan2");
    checks += 3;

    // ipd
    let zl = mel_of(z.clone());
    ensure!(ipd(&zl, &zl).map_err(err)?.iter().all(|&v| v == 0.0), "IPD of identical channels");
    let neg = mel_of(z.mapv(|c| -c));
    // rounding in the two arguments may land either side of the cut, so
    // compare on the circle; an exactly representable case must give +pi
    ensure!(ipd(&zl, &neg).map_err(err)?.iter().all(|&v| angle_gap(v, PI) < 1e-12), "IPD of negated right is not pi");
    let pos = mel_of(Array2::from_elem((2, 2), Complex64::new(0.5, 0.0)));
    ensure!(ipd(&pos, &mel_of(pos.bins.mapv(|c| -c))).map_err(err)?.iter().all(|&v| v == PI), "IPD of a negated positive real is not +pi");
    for tau in [1usize, 3, 5] {
        let sr = 16000;
        let l = tone(500.0, sr, 8000, 0);
        let r = tone(500.0, sr, 8000, tau);
        let clip = AudioClip::stereo(l, r, sr).map_err(err)?;
        let (_, xl, xr) = spatial(&ex, &clip)?;
        let d = ipd(&xl, &xr).map_err(err)?;
        let band = band_of(&ex, 500.0);
        let expect = 2.0 * PI * 500.0 * tau as f64 / f64::from(sr);
        for v in d.column(band) {
            ensure!(angle_gap(*v, expect) <= 0.05, "500 Hz tone delayed {tau}: IPD {v}, analytic {expect}");
        }
    }
    checks += 3;

    // sin and cos
    let (si, ci) = sincos_ipd(&Array2::zeros((2, 2)));
    ensure!(si.iter().all(|&v| v == 0.0) && ci.iter().all(|&v| v == 1.0), "sin/cos of 0");
    let (si, ci) = sincos_ipd(&Array2::from_elem((2, 2), PI));
    ensure!(si.iter().all(|&v| v.abs() <= 1e-15) && ci.iter().all(|&v| v == -1.0), "sin/cos of pi");
    let angles = Array2::from_shape_fn((6, 6), |_| rng.random_range(-PI..PI));
    let (si, ci) = sincos_ipd(&angles);
    ensure!(si.iter().zip(&ci).all(|(s, c)| (s * s + c * c - 1.0).abs() <= 1e-12), "sin^2 + cos^2 != 1");
    checks += 3;

    // gcc
    let width = 40;
    let x = oracle::noise(&mut rng, 8000, 0.5);
    let spec = stft_channel(&x, ex.stft_config()).map_err(err)?;
    let (g, lags) = gcc_phat(&spec, &spec, width).map_err(err)?;
    ensure!(g.rows().into_iter().all(|r| lags.lag_values[argmax(r)] == 0), "identical channels do not peak at lag 0");
    let delayed: Vec<f64> = (0..x.len()).map(|t| if t >= 5 { x[t - 5] } else { 0.0 }).collect();
    let expect = oracle::xcorr_peak(&x, &delayed, 20);
    ensure!(expect == -5, "time-domain oracle peaks at {expect} for a 5-sample delay");
    let spec_r = stft_channel(&delayed, ex.stft_config()).map_err(err)?;
    let (g, lags) = gcc_phat(&spec, &spec_r, width).map_err(err)?;
    ensure!(g.rows().into_iter().all(|r| lags.lag_values[argmax(r)] == expect), "5-sample delay not at the oracle lag");
    let silent = stft_channel(&vec![0.0; 2000], ex.stft_config()).map_err(err)?;
    ensure!(gcc_phat(&silent, &silent, width).map_err(err)?.0.iter().all(|v| v.is_finite()), "silent GCC not finite");
    checks += 3;

    // stacked layouts
    let stereo = AudioClip::stereo(x.clone(), x.clone(), 16000).map_err(err)?;
    for (set, ch) in [
        (FeatureSet::Mel1ch, 1),
        (FeatureSet::Mel2ch, 2),
        (FeatureSet::MelPhase, 4),
        (FeatureSet::MelIpd, 3),
        (FeatureSet::MelSinCos, 4),
        (FeatureSet::MelGcc, 3),
        (FeatureSet::MelIld, 3),
    ] {
        let t = ex.stack_features(set, &stereo).map_err(err)?;
        ensure!(t.channels() == ch && set.channels() == ch, "{set} has {} channels, expected {ch}", t.channels());
    }
    let t = ex.stack_features(FeatureSet::MelIpd, &stereo).map_err(err)?;
    ensure!(t.data.index_axis(Axis(0), 2).iter().all(|&v| v == 0.0), "identical L/R IPD channel not zero");
    let t = ex.stack_features(FeatureSet::MelIld, &stereo).map_err(err)?;
    ensure!(t.data.index_axis(Axis(0), 2).iter().all(|&v| v == 1.0), "identical L/R ILD channel not one");
    let mono = AudioClip::mono(x, 16000).map_err(err)?;
    ensure!(ex.stack_features(FeatureSet::Mel1ch, &mono).map_err(err)?.channels() == 1, "Mel1ch of mono");
    ensure!(ex.stack_features(FeatureSet::MelIpd, &mono).is_err(), "binaural set accepted a mono clip");
    checks += 4;
    Ok(checks)
}

fn zero_like(x: &ComplexMelSpectrogram) -> ComplexMelSpectrogram {
    mel_of(Array2::from_elem(x.bins.dim(), Complex64::new(0.0, 0.0)))
}

/// Cells where the epsilon floor shifts ratios and logs by under 1e-10 even
/// after scaling by `gain`.
fn strong(l: &ComplexMelSpectrogram, r: &ComplexMelSpectrogram, gain: f64) -> Vec<bool> {
    let floor = 1.0 / gain.min(1.0);
    l.bins.iter().zip(&r.bins).map(|(a, b)| a.norm() >= floor && b.norm() >= floor).collect()
}

fn properties() -> Result<usize, String> {
    let err = |e: bsk::Error| e.to_string();
    let extractors = [FeatureExtractor::new(8000, 32).map_err(err)?, FeatureExtractor::new(16000, 40).map_err(err)?];
    let mut rng = oracle::rng(3);
    let mut strong_cells = 0;
    let mut gcc_frames = 0;
    for i in 0..100 {
        let ex = &extractors[i % 2];
        let sr = ex.sample_rate();
        let len = sr as usize / 4 + rng.random_range(0..sr as usize / 8);
        let (l, r) = if i % 10 == 9 {
            (vec![0.0; len], vec![0.0; len])
        } else {
            let amp = 10f64.powf(rng.random_range(-1.0..0.0));
            (oracle::noise(&mut rng, len, amp), oracle::noise(&mut rng, len, amp))
        };
        let clip = AudioClip::stereo(l.clone(), r.clone(), sr).map_err(err)?;
        let swapped = AudioClip::stereo(r.clone(), l.clone(), sr).map_err(err)?;
        let c = rng.random_range(0.1..10.0);
        let scaled = AudioClip::stereo(l.iter().map(|v| c * v).collect(), r.iter().map(|v| c * v).collect(), sr).map_err(err)?;

        for set in FeatureSet::ALL {
            for input in [&clip, &swapped, &scaled] {
                let t = ex.stack_features(set, input).map_err(err)?;
                ensure!(t.data.iter().all(|v| v.is_finite()), "clip {i}: non-finite {set} value");
            }
        }
        if i % 10 == 9 {
            continue;
        }

        let (spec, xl, xr) = spatial(ex, &clip)?;
        let (spec_s, sl, sr_) = spatial(ex, &swapped)?;
        let (spec_c, cl, cr) = spatial(ex, &scaled)?;
        let mask = strong(&xl, &xr, c);
        strong_cells += mask.iter().filter(|&&m| m).count();

        let d = ipd(&xl, &xr).map_err(err)?;
        let ds = ipd(&sl, &sr_).map_err(err)?;
        ensure!(d.iter().zip(&ds).all(|(a, b)| angle_gap(*a, -*b) <= 1e-9), "clip {i}: IPD not antisymmetric");
        let dc = ipd(&cl, &cr).map_err(err)?;
        ensure!(d.iter().zip(&dc).all(|(a, b)| angle_gap(*a, *b) <= 1e-9), "clip {i}: IPD not gain invariant");
        let (s1, c1) = sincos_ipd(&d);
        let (s2, c2) = sincos_ipd(&dc);
        ensure!(max_abs_diff(s1.iter().chain(&c1).cloned(), s2.iter().chain(&c2).cloned()) <= 1e-9, "clip {i}: sin/cos not gain invariant");

        let a = ild(&xl, &xr).map_err(err)?;
        let b = ild(&sl, &sr_).map_err(err)?;
        let g = ild(&cl, &cr).map_err(err)?;
        for ((j, &m), ((x, y), z)) in mask.iter().enumerate().zip(a.iter().zip(&b).zip(&g)) {
            if m {
                ensure!((x * y - 1.0).abs() <= 1e-9, "clip {i} cell {j}: ILD not reciprocal");
                ensure!((x / z - 1.0).abs() <= 1e-9, "clip {i} cell {j}: ILD not gain invariant");
            }
        }

        let shift = c.ln();
        for (j, ((x, y), &m)) in logmel(&xl).iter().zip(&logmel(&cl)).zip(&mask).enumerate() {
            if m {
                ensure!((y - x - shift).abs() <= 1e-9, "clip {i} cell {j}: logmel shift {} vs ln c {shift}", y - x);
            }
        }

        let width = ex.mels();
        let (gl, lags) = gcc_phat(&spec[0], &spec[1], width).map_err(err)?;
        let (gs, _) = gcc_phat(&spec_s[0], &spec_s[1], width).map_err(err)?;
        let (gc, _) = gcc_phat(&spec_c[0], &spec_c[1], width).map_err(err)?;
        // PHAT divides by |L||R| + eps; frames with a near-empty bin carry an
        // eps error above 1e-9 and are left out of the gain comparison
        let scale = c.min(1.0).powi(2);
        for (n, (a, b)) in gl.rows().into_iter().zip(gc.rows()).enumerate() {
            let weakest = spec[0].bins.row(n).iter().zip(spec[1].bins.row(n)).map(|(x, y)| x.norm() * y.norm()).fold(f64::INFINITY, f64::min);
            if weakest * scale < 1e-2 {
                continue;
            }
            gcc_frames += 1;
            let gd = max_abs_diff(a.iter().cloned(), b.iter().cloned());
            ensure!(gd <= 1e-9, "clip {i} frame {n}: GCC not gain invariant ({gd:.2e})");
        }
        let lo = lags.lag_values[0];
        for (j, &d) in lags.lag_values.iter().enumerate() {
            let mirror = -d - lo;
            if mirror < 0 || mirror as usize >= width {
                continue;
            }
            let diff = max_abs_diff(gl.column(j).iter().cloned(), gs.column(mirror as usize).iter().cloned());
            ensure!(diff <= 1e-9, "clip {i}: GCC lag {d} not mirrored under channel swap ({diff:.2e})");
        }
    }
    ensure!(strong_cells > 10_000, "only {strong_cells} cells far above the epsilon floor");
    ensure!(gcc_frames > 500, "only {gcc_frames} frames for the GCC gain check");
    Ok(100)
}

pub fn feature_formulas() -> Result<String, String> {
    let examples = feature_examples()?;
    let clips = properties()?;
    Ok(format!("{examples} example groups, properties on {clips} clips"))
}

fn noise_spec(itd: i32, sr: u32, seed: u64) -> SynthSpec {
    SynthSpec {
        scene_label: "test".into(),
        events: vec![SynthEvent {
            class: "noise".into(),
            onset: 0.0,
            offset: 1.0,
            source: SourceKind::NoiseBand { low: 50.0, high: f64::from(sr) / 2.0 - 50.0 },
            itd,
            ild_db: 20.0 * 2f64.log10(),
        }],
        duration: 1.0,
        sample_rate: sr,
        // source RMS is about -15 dBFS, so -40 dB noise leaves 25 dB SNR
        noise_floor_db: Some(-40.0),
        seed,
    }
}

pub fn gcc_delay_recovery() -> Result<String, String> {
    let err = |e: bsk::Error| e.to_string();
    let sr = 16000;
    let width = 64;
    let cfg = StftConfig::for_sample_rate(sr).map_err(err)?;
    let mut hits = 0;
    let mut frames = 0;
    for itd in -8..=8 {
        let (clip, _) = render(&noise_spec(itd, sr, (40 + itd) as u64)).map_err(err)?;
        let (l, r) = (clip.channel(0), clip.channel(1));
        let expect = oracle::xcorr_peak(l, r, 16);
        ensure!(expect == -i64::from(itd), "time-domain oracle peaks at {expect} for itd {itd}");
        let spec = stft(&clip, &cfg).map_err(err)?;
        let (g, lags) = gcc_phat(&spec[0], &spec[1], width).map_err(err)?;
        for row in g.rows() {
            frames += 1;
            hits += usize::from(lags.lag_values[argmax(row)] == expect);
        }
    }
    let rate = hits as f64 / frames as f64;
    ensure!(rate >= 0.95, "{hits}/{frames} frames at the oracle lag ({:.1}%)", 100.0 * rate);

    // level difference and delay through the full feature path
    let ex = FeatureExtractor::new(sr, 40).map_err(err)?;
    let (clip, _) = render(&noise_spec(3, sr, 7)).map_err(err)?;
    let (spec, xl, xr) = spatial(&ex, &clip)?;
    let ratio = ild(&xl, &xr).map_err(err)?;
    // the delay rotates phases across each band, so single cells scatter;
    // the median over all active cells is the level estimate
    let mut active: Vec<f64> = Vec::new();
    for (m, &centre) in ex.filterbank().band_centers.iter().enumerate() {
        if (200.0..f64::from(sr) / 2.0 - 200.0).contains(&centre) {
            active.extend(ratio.column(m));
        }
    }
    active.sort_by(f64::total_cmp);
    let median = active[active.len() / 2];
    let worst = (median / 2.0 - 1.0).abs();
    ensure!(worst <= 0.05, "median ILD over active bands is {median:.4}, not within 5% of 2");
    let (g, lags) = gcc_phat(&spec[0], &spec[1], ex.mels()).map_err(err)?;
    let at = g.rows().into_iter().filter(|r| lags.lag_values[argmax(*r)] == -3).count();
    ensure!(at * 100 >= g.nrows() * 95, "rendered itd 3 found in {at}/{} frames", g.nrows());
    Ok(format!("{hits}/{frames} frames ({:.1}%) at the oracle lag; ILD within {:.2}% of 2", 100.0 * rate, 100.0 * worst))
}
