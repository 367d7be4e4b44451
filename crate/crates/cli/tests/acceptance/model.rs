use bsk::metrics::TaskMode;
use bsk::model::layers::NormMode;
use bsk::model::{BatchTargets, Branch, ModelConfig, MtlNetwork};
use ndarray::{Array2, Array3, Array4, Axis};
use rand::Rng;

use crate::oracle;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn random_batch(rng: &mut impl Rng, cfg: &ModelConfig, batch: usize) -> (Array4<f64>, BatchTargets) {
    let x = Array4::from_shape_fn((batch, cfg.in_channels, cfg.frames, cfg.mels), |_| rng.random_range(-1.0..1.0));
    let sed = Array3::from_shape_fn((batch, cfg.frames, cfg.sed_classes), |_| f64::from(u8::from(rng.random_bool(0.3))));
    // the last two frames of the final clip are padding
    let mask = Array2::from_shape_fn((batch, cfg.frames), |(b, t)| b + 1 < batch || t + 2 < cfg.frames);
    let scenes = (0..batch).map(|_| rng.random_range(0..cfg.asc_classes)).collect();
    (x, BatchTargets { sed, mask, scenes })
}

fn total_loss(net: &MtlNetwork, x: &Array4<f64>, y: &BatchTargets) -> f64 {
    let pass = net.forward(x.view(), NormMode::Train).expect("forward");
    net.loss(&pass, y).expect("loss").total
}

pub fn gradient_check() -> Result<String, String> {
    const H: f64 = 1e-5;
    const FLOOR: f64 = 1e-6;
    let mut worst = (0.0f64, String::new());
    let mut checked = 0;
    for seed in 0..5u64 {
        let mut cfg = ModelConfig::tiny(2);
        // a unit scene weight keeps the scene-branch gradients far above the floor
        cfg.asc_loss_weight = 1.0;
        let mut net = MtlNetwork::new(cfg.clone(), TaskMode::Mtl, None, seed).map_err(|e| e.to_string())?;
        let mut rng = oracle::rng(100 + seed);
        let (x, y) = random_batch(&mut rng, &cfg, 2);
        let pass = net.forward(x.view(), NormMode::Train).map_err(|e| e.to_string())?;
        let (_, grads) = net.backward(&pass, &y).map_err(|e| e.to_string())?;
        let analytic: Vec<(Branch, &'static str, Vec<f64>)> =
            grads.tensors().into_iter().map(|(b, name, data, _)| (b, name, data.to_vec())).collect();
        let names: Vec<(Branch, &'static str)> = net.params.tensors().into_iter().map(|(b, n, _, _)| (b, n)).collect();
        ensure!(names.len() == analytic.len(), "gradient layout differs from parameter layout");
        let tensors = names.len();
        let mut branches = [false; 3];
        for (ti, (branch, name, grad)) in analytic.iter().enumerate().take(tensors) {
            branches[*branch as usize] = true;
            for (j, &a) in grad.iter().enumerate() {
                let original = net.params.tensors_mut()[ti].1[j];
                net.params.tensors_mut()[ti].1[j] = original + H;
                let up = total_loss(&net, &x, &y);
                net.params.tensors_mut()[ti].1[j] = original - H;
                let down = total_loss(&net, &x, &y);
                net.params.tensors_mut()[ti].1[j] = original;
                let numeric = (up - down) / (2.0 * H);
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(FLOOR);
                checked += 1;
                if rel > worst.0 {
                    worst = (rel, format!("seed {seed} {branch:?}.{name}[{j}]: analytic {a:.6e}, numeric {numeric:.6e}"));
                }
            }
        }
        ensure!(branches.iter().all(|&b| b), "seed {seed}: not every branch has parameters");
    }
    ensure!(worst.0 <= 1e-4, "max relative error {:.3e} > 1e-4 at {}", worst.0, worst.1);
    Ok(format!("{checked} parameters over 5 seeds, max relative error {:.2e} ({})", worst.0, worst.1))
}

pub fn shape_contract() -> Result<String, String> {
    let mut out = Vec::new();
    for (cfg, sed, asc) in [
        (ModelConfig::tut_2016_2017(2), (500, 25), 4),
        (ModelConfig::tut_sed_2009(1), (1000, 63), 10),
    ] {
        let net = MtlNetwork::new(cfg.clone(), TaskMode::Mtl, None, 0).map_err(|e| e.to_string())?;
        let mut rng = oracle::rng(5);
        let x = Array4::from_shape_fn((1, cfg.in_channels, cfg.frames, cfg.mels), |_| rng.random_range(-1.0..1.0));
        let pass = net.forward(x.view(), NormMode::Eval).map_err(|e| e.to_string())?;
        let s = pass.sed.ok_or("no event output")?;
        let a = pass.asc.ok_or("no scene output")?;
        let s = s.index_axis(Axis(0), 0);
        let a = a.index_axis(Axis(0), 0);
        ensure!(s.dim() == sed && a.len() == asc, "shapes {:?}, {} instead of {sed:?}, {asc}", s.dim(), a.len());
        ensure!(s.iter().all(|p| (0.0..=1.0).contains(p)), "event output outside [0, 1]");
        ensure!((a.sum() - 1.0).abs() <= 1e-9 && a.iter().all(|p| p.is_finite()), "scene output does not sum to 1");
        out.push(format!("({}x{}, {})", s.nrows(), s.ncols(), a.len()));
    }
    Ok(out.join(" "))
}

pub fn loss_weighting() -> Result<String, String> {
    let mut rng = oracle::rng(6);
    let mut worst = 0.0f64;
    for seed in 0..5 {
        let cfg = ModelConfig::tiny(1);
        let net = MtlNetwork::new(cfg.clone(), TaskMode::Mtl, None, seed).map_err(|e| e.to_string())?;
        let (x, y) = random_batch(&mut rng, &cfg, 3);
        let pass = net.forward(x.view(), NormMode::Train).map_err(|e| e.to_string())?;
        let r = net.loss(&pass, &y).map_err(|e| e.to_string())?;
        ensure!(cfg.asc_loss_weight == 0.0001, "default scene weight is {}", cfg.asc_loss_weight);
        let gap = (r.total - r.sed_loss - 0.0001 * r.asc_loss).abs();
        worst = worst.max(gap);
        ensure!(gap <= 1e-12, "total - sed - 0.0001 asc = {gap:.3e}");
    }

    let mut uniform = Vec::new();
    for classes in [2usize, 4, 10] {
        let mut cfg = ModelConfig::tiny(1);
        cfg.asc_classes = classes;
        let mut net = MtlNetwork::new(cfg.clone(), TaskMode::Mtl, None, 0).map_err(|e| e.to_string())?;
        let asc = net.params.asc.as_mut().ok_or("no scene branch")?;
        asc.out_w.fill(0.0);
        asc.out_b.fill(0.0);
        let (x, y) = random_batch(&mut rng, &cfg, 2);
        let pass = net.forward(x.view(), NormMode::Train).map_err(|e| e.to_string())?;
        let r = net.loss(&pass, &y).map_err(|e| e.to_string())?;
        let err = (r.asc_loss - (classes as f64).ln()).abs();
        ensure!(err <= 1e-9, "uniform scene loss {} vs ln {classes} (error {err:.3e})", r.asc_loss);
        uniform.push(err);
    }
    Ok(format!(
        "weighting gap {worst:.1e}, uniform CE error {:.1e}",
        uniform.iter().cloned().fold(0.0, f64::max)
    ))
}
