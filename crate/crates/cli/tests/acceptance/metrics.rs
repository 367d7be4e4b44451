use bsk::metrics::{asc_f1, sed_scores, Averaging, SegmentScores};
use ndarray::{array, Array2};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::oracle;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn scores(reference: &Array2<u8>, predicted: &Array2<u8>) -> Result<SegmentScores, String> {
    sed_scores(reference, predicted).map_err(|e| e.to_string())
}

fn hand_sed() -> Result<(), String> {
    let r = array![[1u8, 0], [0, 1], [1, 1]];
    let s = scores(&r, &r)?;
    ensure!(s.error_rate() == 0.0 && s.f1_percent() == 100.0, "perfect match: ER {}, F1 {}", s.error_rate(), s.f1_percent());

    let s = scores(&array![[1u8], [0]], &array![[0u8], [1]])?;
    let want = SegmentScores { n_ref: 1, substitutions: 0, deletions: 1, insertions: 1, tp: 0, fp: 1, fn_: 1 };
    ensure!(s == want, "different segments: {s:?}");
    ensure!(s.error_rate() == 2.0 && s.f1() == 0.0, "different segments: ER {}, F1 {}", s.error_rate(), s.f1());

    let s = scores(&array![[1u8, 0]], &array![[0u8, 1]])?;
    let want = SegmentScores { n_ref: 1, substitutions: 1, deletions: 0, insertions: 0, tp: 0, fp: 1, fn_: 1 };
    ensure!(s == want, "same segment: {s:?}");
    ensure!(s.error_rate() == 1.0 && s.f1() == 0.0, "same segment: ER {}, F1 {}", s.error_rate(), s.f1());
    Ok(())
}

fn hand_asc() -> Result<(), String> {
    let f1 = |r: &[usize], p: &[usize], c| asc_f1(r, p, c, Averaging::Micro).map_err(|e| e.to_string());
    let all = [0, 1, 2, 3, 1, 2];
    ensure!(f1(&all, &all, 4)? == 100.0, "all correct");
    let reference = [0, 1, 2, 3, 0, 1, 2, 3, 0, 1];
    let predicted = [0, 1, 2, 3, 0, 0, 3, 0, 1, 2];
    ensure!(f1(&reference, &predicted, 4)? == 50.0, "half correct: {}", f1(&reference, &predicted, 4)?);

    let mut rng = oracle::rng(7);
    for _ in 0..200 {
        let n = rng.random_range(1..60);
        let c = rng.random_range(2..12);
        let r: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
        let p: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
        let mut confusion = vec![vec![0u64; c]; c];
        for (&a, &b) in r.iter().zip(&p) {
            confusion[a][b] += 1;
        }
        let diagonal: u64 = (0..c).map(|i| confusion[i][i]).sum();
        let accuracy = 100.0 * (diagonal as f64 / n as f64);
        ensure!(f1(&r, &p, c)? == accuracy, "confusion table oracle {accuracy} vs {}", f1(&r, &p, c)?);
    }
    Ok(())
}

fn merging() -> Result<usize, String> {
    let mut rng = oracle::rng(8);
    for round in 0..1000 {
        let segments = rng.random_range(1..40);
        let classes = rng.random_range(1..6);
        let reference = Array2::from_shape_fn((segments, classes), |_| u8::from(rng.random_bool(0.4)));
        let predicted = Array2::from_shape_fn((segments, classes), |_| u8::from(rng.random_bool(0.4)));
        let whole = scores(&reference, &predicted)?;

        let mut cuts: Vec<usize> = (1..segments).filter(|_| rng.random_bool(0.3)).collect();
        cuts.insert(0, 0);
        cuts.push(segments);
        let mut parts = Vec::new();
        for w in cuts.windows(2) {
            let r = reference.slice(ndarray::s![w[0]..w[1], ..]).to_owned();
            let p = predicted.slice(ndarray::s![w[0]..w[1], ..]).to_owned();
            parts.push(scores(&r, &p)?);
        }
        let left_fold = parts.iter().fold(SegmentScores::default(), |a, &b| a + b);
        let right_fold = parts.iter().rev().fold(SegmentScores::default(), |a, &b| b + a);
        parts.shuffle(&mut rng);
        let split = rng.random_range(0..=parts.len());
        let grouped = parts[..split].iter().copied().sum::<SegmentScores>() + parts[split..].iter().copied().sum::<SegmentScores>();
        for merged in [left_fold, right_fold, grouped] {
            ensure!(merged == whole, "round {round}: merged {merged:?} vs whole {whole:?}");
            ensure!(merged.error_rate().to_bits() == whole.error_rate().to_bits(), "round {round}: ER differs");
        }
    }
    Ok(1000)
}

pub fn hand_cases() -> Result<String, String> {
    hand_sed()?;
    hand_asc()?;
    let n = merging()?;
    Ok(format!("3 event cases, 3 scene cases, {n} merge partitions"))
}
