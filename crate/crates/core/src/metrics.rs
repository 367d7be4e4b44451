//! Segment-based error rate and F1 for event detection, clip-level F1 for
//! scene classification, and the JSON report both are written to.

use std::ops::{Add, AddAssign};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::dataset::intervals_overlap;
use crate::{Error, Result};

/// Frame-level evaluation granularity, in seconds.
pub const FRAME_SEGMENT: f64 = 0.04;
/// Segment-level evaluation granularity, in seconds.
pub const ONE_SECOND_SEGMENT: f64 = 1.0;

/// Length of one evaluation segment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalGranularity {
    pub segment_length: f64,
}

impl EvalGranularity {
    pub fn new(segment_length: f64) -> Result<Self> {
        if !(segment_length > 0.0 && segment_length.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "segment length {segment_length} must be positive"
            )));
        }
        Ok(Self { segment_length })
    }
}

/// Maps frame activity (`frames x classes`) onto segments of
/// `segment_length` seconds. A segment is active for a class when any frame
/// overlapping it is active; the final partial segment is kept.
pub fn segmentize(activity: &Array2<u8>, frame_hop: f64, segment_length: f64) -> Result<Array2<u8>> {
    if !(frame_hop > 0.0 && segment_length >= frame_hop && segment_length.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "need 0 < frame_hop <= segment_length, got {frame_hop} and {segment_length}"
        )));
    }
    let frames = activity.nrows();
    let duration = frames as f64 * frame_hop;
    let segments = segment_count(duration, segment_length);
    let mut out = Array2::zeros((segments, activity.ncols()));
    // overlaps shorter than this are rounding noise at shared boundaries
    let slack = frame_hop * 1e-9;
    for (n, row) in activity.rows().into_iter().enumerate() {
        if row.iter().all(|&v| v == 0) {
            continue;
        }
        let f0 = n as f64 * frame_hop;
        let f1 = (n + 1) as f64 * frame_hop;
        let first = ((f0 / segment_length).floor() as usize).saturating_sub(1);
        let last = ((f1 / segment_length).ceil() as usize + 1).min(segments);
        for s in first..last {
            let s0 = s as f64 * segment_length;
            let s1 = (s + 1) as f64 * segment_length;
            if intervals_overlap(f0 + slack, f1 - slack, s0, s1) {
                for (dst, &v) in out.row_mut(s).iter_mut().zip(row.iter()) {
                    *dst |= v;
                }
            }
        }
    }
    Ok(out)
}

fn segment_count(duration: f64, segment_length: f64) -> usize {
    let ratio = duration / segment_length;
    let rounded = ratio.round();
    // absorb floating error when the duration is a whole number of segments
    if (ratio - rounded).abs() < 1e-9 {
        rounded as usize
    } else {
        ratio.ceil() as usize
    }
}

/// Error counts accumulated over segments.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentScores {
    /// Active reference entries.
    pub n_ref: u64,
    pub substitutions: u64,
    pub deletions: u64,
    pub insertions: u64,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl SegmentScores {
    /// `(S + D + I) / N`; zero when nothing was expected or produced,
    /// infinite when `N = 0` but errors were made.
    pub fn error_rate(&self) -> f64 {
        let errors = self.substitutions + self.deletions + self.insertions;
        if self.n_ref == 0 {
            if errors == 0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            errors as f64 / self.n_ref as f64
        }
    }

    /// `2 TP / (2 TP + FP + FN)` as a fraction; zero when undefined.
    pub fn f1(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            0.0
        } else {
            2.0 * self.tp as f64 / denom as f64
        }
    }

    pub fn f1_percent(&self) -> f64 {
        100.0 * self.f1()
    }

    /// Counts contributed by a single segment.
    pub fn from_segment(reference: &[u8], predicted: &[u8]) -> Self {
        let mut tp = 0;
        let mut fp = 0;
        let mut fn_ = 0;
        for (&r, &p) in reference.iter().zip(predicted) {
            match (r != 0, p != 0) {
                (true, true) => tp += 1,
                (false, true) => fp += 1,
                (true, false) => fn_ += 1,
                (false, false) => {}
            }
        }
        Self {
            n_ref: tp + fn_,
            substitutions: fn_.min(fp),
            deletions: fn_.saturating_sub(fp),
            insertions: fp.saturating_sub(fn_),
            tp,
            fp,
            fn_,
        }
    }
}

impl AddAssign for SegmentScores {
    fn add_assign(&mut self, o: Self) {
        self.n_ref += o.n_ref;
        self.substitutions += o.substitutions;
        self.deletions += o.deletions;
        self.insertions += o.insertions;
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
    }
}

impl Add for SegmentScores {
    type Output = Self;

    fn add(mut self, o: Self) -> Self {
        self += o;
        self
    }
}

impl std::iter::Sum for SegmentScores {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::default(), Add::add)
    }
}

/// Scores segment activity matrices (`segments x classes`) against each other.
pub fn sed_scores(reference: &Array2<u8>, predicted: &Array2<u8>) -> Result<SegmentScores> {
    if reference.dim() != predicted.dim() {
        return Err(Error::Shape(format!(
            "reference {:?} vs prediction {:?}",
            reference.dim(),
            predicted.dim()
        )));
    }
    Ok(reference
        .rows()
        .into_iter()
        .zip(predicted.rows())
        .map(|(r, p)| SegmentScores::from_segment(&r.to_vec(), &p.to_vec()))
        .sum())
}

/// How per-class F1 values are combined for scene classification.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Averaging {
    /// Pooled counts; equal to accuracy for single-label clips.
    #[default]
    Micro,
    /// Mean of per-class F1 over classes present in reference or prediction.
    Macro,
}

/// Clip-level scene F1 in percent.
pub fn asc_f1(
    reference: &[usize],
    predicted: &[usize],
    classes: usize,
    averaging: Averaging,
) -> Result<f64> {
    if reference.len() != predicted.len() {
        return Err(Error::InvalidInput(format!(
            "{} reference scenes vs {} predictions",
            reference.len(),
            predicted.len()
        )));
    }
    if let Some(bad) = reference.iter().chain(predicted).find(|&&c| c >= classes) {
        return Err(Error::InvalidInput(format!(
            "scene index {bad} out of range for {classes} classes"
        )));
    }
    if reference.is_empty() {
        return Ok(0.0);
    }
    let mut tp = vec![0u64; classes];
    let mut fp = vec![0u64; classes];
    let mut fn_ = vec![0u64; classes];
    for (&r, &p) in reference.iter().zip(predicted) {
        if r == p {
            tp[r] += 1;
        } else {
            fp[p] += 1;
            fn_[r] += 1;
        }
    }
    let f1 = |tp: u64, fp: u64, fn_: u64| {
        let denom = 2 * tp + fp + fn_;
        if denom == 0 {
            0.0
        } else {
            2.0 * tp as f64 / denom as f64
        }
    };
    let value = match averaging {
        Averaging::Micro => f1(tp.iter().sum(), fp.iter().sum(), fn_.iter().sum()),
        Averaging::Macro => {
            let present: Vec<usize> = (0..classes).filter(|&c| tp[c] + fp[c] + fn_[c] > 0).collect();
            present.iter().map(|&c| f1(tp[c], fp[c], fn_[c])).sum::<f64>() / present.len() as f64
        }
    };
    Ok(100.0 * value)
}

/// Task configuration a network was trained for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TaskMode {
    #[serde(rename = "SED")]
    Sed,
    #[serde(rename = "ASC")]
    Asc,
    #[serde(rename = "MTL")]
    Mtl,
}

impl TaskMode {
    pub fn has_sed(self) -> bool {
        matches!(self, TaskMode::Sed | TaskMode::Mtl)
    }

    pub fn has_asc(self) -> bool {
        matches!(self, TaskMode::Asc | TaskMode::Mtl)
    }

    pub fn tag(self) -> u8 {
        match self {
            TaskMode::Sed => 0,
            TaskMode::Asc => 1,
            TaskMode::Mtl => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(TaskMode::Sed),
            1 => Some(TaskMode::Asc),
            2 => Some(TaskMode::Mtl),
            _ => None,
        }
    }
}

impl std::fmt::Display for TaskMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TaskMode::Sed => "SED",
            TaskMode::Asc => "ASC",
            TaskMode::Mtl => "MTL",
        })
    }
}

impl std::str::FromStr for TaskMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "SED" => Ok(TaskMode::Sed),
            "ASC" => Ok(TaskMode::Asc),
            "MTL" => Ok(TaskMode::Mtl),
            _ => Err(Error::InvalidConfig(format!("unknown mode {s:?}, expected SED, ASC or MTL"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SedReport {
    /// `null` when the error rate is infinite.
    pub er: Option<f64>,
    pub f1: f64,
    pub granularity_s: f64,
    pub counts: SegmentScores,
}

impl SedReport {
    pub fn new(scores: SegmentScores, granularity_s: f64) -> Self {
        let er = scores.error_rate();
        Self {
            er: er.is_finite().then_some(er),
            f1: scores.f1_percent(),
            granularity_s,
            counts: scores,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AscReport {
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sed: Option<SedReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub asc: Option<AscReport>,
    pub mode: TaskMode,
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}
