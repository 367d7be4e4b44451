use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;

use bsk::features::FeatureSet;
use bsk::metrics::MetricsReport;
use bsk::model::{checkpoint, train, EpochControl, TrainConfig};
use bsk_cli::evaluate::{self, Scoring};
use bsk_cli::{extract, synth, train as cli_train, FeatureIndex, Overrides, RunConfig};

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

const EPOCHS: usize = 200;
const SED_F1: f64 = 90.0;

struct Overfit {
    first_loss: f64,
    last_loss: f64,
    /// First epoch whose training-set event F1 reached the target.
    sed_epoch: Option<usize>,
    report: MetricsReport,
}

fn overfit_run(dir: &Path, set: FeatureSet) -> Result<Overfit, String> {
    let err = |e: anyhow::Error| format!("{set}: {e:#}");
    let overrides = Overrides { feature_set: Some(set), ..Overrides::default() };
    synth::run(None, dir, &overrides).map_err(err)?;
    let cfg = RunConfig::load(&dir.join(synth::RUN_CONFIG)).map_err(err)?;
    ensure!(cfg.train.epochs <= EPOCHS, "{set}: config asks for {} epochs", cfg.train.epochs);
    let features = cfg.require(&cfg.paths.features, "features").map_err(err)?.to_path_buf();
    let failures = extract::run(&cfg, &features).map_err(err)?;
    ensure!(failures.is_empty(), "{set}: extraction failures {failures:?}");

    let index = FeatureIndex::read(&features).map_err(err)?;
    let data = cli_train::load_windows(&features, &index).map_err(err)?;
    let recordings = index
        .recordings
        .iter()
        .map(|rec| evaluate::load_recording_windows(&features, rec))
        .collect::<anyhow::Result<Vec<_>>>()
        .map_err(err)?;
    let scoring = Scoring { threshold: cfg.sed_threshold, granularity: cfg.granularity, averaging: cfg.asc_averaging };
    let mut net = cli_train::build_network(&cfg, &index).map_err(err)?;
    let train_cfg = TrainConfig {
        epochs: cfg.train.epochs,
        batch_size: cfg.train.batch_size,
        seed: cfg.seed,
        adam: cfg.train.adam,
        lr_scale: [1.0; 3],
    };

    let mut sed_epoch = None;
    let mut failure = None;
    let log = train(&mut net, &data, &train_cfg, |epoch, net, _| {
        if sed_epoch.is_some() {
            return EpochControl::Continue;
        }
        let scored = index
            .recordings
            .iter()
            .zip(&recordings)
            .map(|(rec, windows)| evaluate::score_recording(net, &index, rec, windows, scoring))
            .collect::<anyhow::Result<Vec<_>>>()
            .and_then(|results| evaluate::merge(net, &results, scoring));
        match scored {
            Ok(report) => {
                if report.sed.as_ref().is_some_and(|s| s.f1 >= SED_F1) {
                    sed_epoch = Some(epoch);
                }
                EpochControl::Continue
            }
            Err(e) => {
                failure = Some(format!("{e:#}"));
                EpochControl::Stop
            }
        }
    })
    .map_err(|e| e.to_string())?;
    if let Some(e) = failure {
        return Err(format!("{set}: scoring failed: {e}"));
    }

    // final scores go through the on-disk evaluate path
    let ckpt = cfg.require(&cfg.paths.checkpoint, "checkpoint").map_err(err)?;
    checkpoint::write(ckpt, &net).map_err(|e| e.to_string())?;
    let report_path = cfg.require(&cfg.paths.report, "report").map_err(err)?;
    let (report, failures) = evaluate::run(&cfg, report_path).map_err(err)?;
    ensure!(failures.is_empty(), "{set}: evaluation failures {failures:?}");
    Ok(Overfit {
        first_loss: log.first().map_or(f64::NAN, |r| r.total),
        last_loss: log.last().map_or(f64::NAN, |r| r.total),
        sed_epoch,
        report,
    })
}

pub fn overfit() -> Result<String, String> {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut runs = Vec::new();
    for set in [FeatureSet::Mel1ch, FeatureSet::MelSinCos] {
        let run = overfit_run(&tmp.path().join(set.name()), set)?;
        let sed = run.report.sed.as_ref().ok_or("no event scores")?;
        let asc = run.report.asc.as_ref().ok_or("no scene scores")?;
        ensure!(
            run.last_loss < 0.1 * run.first_loss,
            "{set}: loss {:.4} -> {:.4} is not below a tenth",
            run.first_loss,
            run.last_loss
        );
        ensure!(sed.f1 >= SED_F1, "{set}: event F1 {:.1}% < {SED_F1}%", sed.f1);
        ensure!(asc.f1 == 100.0, "{set}: scene F1 {:.1}%", asc.f1);
        runs.push((set, run));
    }
    let epochs: Vec<Option<usize>> = runs.iter().map(|(_, r)| r.sed_epoch).collect();
    let (Some(mono), Some(sincos)) = (epochs[0], epochs[1]) else {
        return Err(format!("event F1 target not reached during training: {epochs:?}"));
    };
    ensure!(sincos <= mono, "MelSinCos needed {sincos} epochs, Mel1ch {mono}");
    let detail: Vec<String> = runs
        .iter()
        .map(|(set, r)| {
            format!(
                "{set}: loss {:.3}->{:.4}, F1 {:.1}/{:.0} at {EPOCHS} epochs, target at epoch {}",
                r.first_loss,
                r.last_loss,
                r.report.sed.as_ref().map_or(f64::NAN, |s| s.f1),
                r.report.asc.as_ref().map_or(f64::NAN, |a| a.f1),
                r.sed_epoch.unwrap_or(0)
            )
        })
        .collect();
    Ok(detail.join("; "))
}

const DETERMINISM_EPOCHS: u64 = 30;

fn bsk(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_bsk"))
        .args(args)
        .env("BSK_LOG", "warn")
        .output()
        .map_err(|e| e.to_string())?;
    ensure!(
        out.status.success(),
        "bsk {} exited with {}: {}",
        args.join(" "),
        out.status,
        String::from_utf8_lossy(&out.stdout)
    );
    Ok(())
}

fn snapshot(dir: &Path) -> Result<BTreeMap<PathBuf, Vec<u8>>, String> {
    let mut files = BTreeMap::new();
    let mut pending = vec![dir.to_path_buf()];
    while let Some(d) = pending.pop() {
        for entry in std::fs::read_dir(&d).map_err(|e| e.to_string())? {
            let path = entry.map_err(|e| e.to_string())?.path();
            if path.is_dir() {
                pending.push(path);
            } else {
                let bytes = std::fs::read(&path).map_err(|e| e.to_string())?;
                files.insert(path.strip_prefix(dir).expect("inside dir").to_path_buf(), bytes);
            }
        }
    }
    Ok(files)
}

fn pipeline(dir: &Path) -> Result<BTreeMap<PathBuf, Vec<u8>>, String> {
    let d = dir.to_str().ok_or("non-UTF-8 temp path")?;
    bsk(&["synth", "--out", d, "--feature-set", "MelGCC", "--seed", "3"])?;
    let cfg_path = dir.join(synth::RUN_CONFIG);
    let text = std::fs::read_to_string(&cfg_path).map_err(|e| e.to_string())?;
    let mut cfg: serde_json::Value = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    cfg["train"]["epochs"] = DETERMINISM_EPOCHS.into();
    std::fs::write(&cfg_path, serde_json::to_string_pretty(&cfg).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let c = cfg_path.to_str().ok_or("non-UTF-8 temp path")?;
    for cmd in ["extract", "train", "evaluate"] {
        bsk(&[cmd, "--config", c])?;
    }
    snapshot(dir)
}

pub fn determinism() -> Result<String, String> {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let dir = tmp.path().join("run");
    let first = pipeline(&dir)?;
    std::fs::remove_dir_all(&dir).map_err(|e| e.to_string())?;
    let second = pipeline(&dir)?;
    let names: Vec<_> = first.keys().collect();
    ensure!(names == second.keys().collect::<Vec<_>>(), "file sets differ between runs");
    for (path, bytes) in &first {
        ensure!(second[path] == *bytes, "{} differs between runs", path.display());
    }
    let kinds = ["wav", "ann", "tsv", "bft", "json", "bmk"];
    for kind in kinds {
        ensure!(
            first.keys().any(|p| p.extension().is_some_and(|e| e == kind)),
            "no .{kind} output to compare"
        );
    }
    let bytes: usize = first.values().map(Vec::len).sum();
    Ok(format!("{} files ({bytes} bytes) identical across two runs", first.len()))
}
