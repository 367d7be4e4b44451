use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use bsk::features::FeatureSet;
use bsk::metrics::TaskMode;
use bsk_cli::{evaluate, extract, synth, train, ErrorList, ItemError, Overrides, RunConfig};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "bsk", version, about = "Binaural sound event detection and scene classification toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute feature files for every recording in the manifest.
    Extract(Common),
    /// Train a network on extracted features and write a checkpoint.
    Train(Common),
    /// Score a checkpoint on extracted features and write a metrics report.
    Evaluate(Common),
    /// Render a synthetic corpus; `--config` takes a scene spec, otherwise
    /// the eight-clip micro-corpus is written.
    Synth(Common),
}

#[derive(Args)]
struct Common {
    /// Run configuration (JSON); for `synth`, a scene spec or list of specs.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    feature_set: Option<FeatureSet>,
    /// SED, ASC or MTL.
    #[arg(long)]
    mode: Option<TaskMode>,
    #[arg(long)]
    seed: Option<u64>,
    /// Evaluation segment length in seconds.
    #[arg(long)]
    granularity: Option<f64>,
    /// Event detection threshold.
    #[arg(long)]
    threshold: Option<f64>,
    /// Output path: feature directory, checkpoint, report or corpus
    /// directory depending on the command.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides {
            feature_set: self.feature_set,
            mode: self.mode,
            seed: self.seed,
            granularity: self.granularity,
            threshold: self.threshold,
        }
    }

    fn run_config(&self) -> Result<RunConfig> {
        let Some(path) = &self.config else {
            anyhow::bail!("--config is required");
        };
        let mut cfg = RunConfig::load(path)?;
        cfg.apply(&self.overrides());
        Ok(cfg)
    }
}

fn output(flag: &Option<PathBuf>, configured: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
    flag.clone()
        .or_else(|| configured.clone())
        .ok_or_else(|| anyhow::anyhow!("no {what} path: set it in the config or pass --out"))
}

fn execute(cli: &Cli) -> Result<Vec<ItemError>> {
    match &cli.command {
        Command::Extract(args) => {
            let mut cfg = args.run_config()?;
            let out = output(&args.out, &cfg.paths.features, "features")?;
            cfg.paths.features = Some(out.clone());
            let errors = extract::run(&cfg, &out)?;
            log::info!("features written to {}", out.display());
            Ok(errors)
        }
        Command::Train(args) => {
            let mut cfg = args.run_config()?;
            let out = output(&args.out, &cfg.paths.checkpoint, "checkpoint")?;
            cfg.paths.checkpoint = Some(out.clone());
            let report = train::run(&cfg, &out)?;
            if let (Some(first), Some(last)) = (report.log.first(), report.log.last()) {
                log::info!("loss {:.6} -> {:.6}; checkpoint {}", first.total, last.total, out.display());
            }
            Ok(Vec::new())
        }
        Command::Evaluate(args) => {
            let cfg = args.run_config()?;
            let out = output(&args.out, &cfg.paths.report, "report")?;
            let (report, errors) = evaluate::run(&cfg, &out)?;
            eprintln!("{}", report.to_json());
            Ok(errors)
        }
        Command::Synth(args) => {
            let Some(out) = &args.out else {
                anyhow::bail!("synth needs --out <directory>");
            };
            let manifest = synth::run(args.config.as_deref(), out, &args.overrides())?;
            log::info!("corpus manifest {}", manifest.display());
            Ok(Vec::new())
        }
    }
}

fn print_errors(errors: Vec<ItemError>) {
    let list = ErrorList { errors };
    println!("{}", serde_json::to_string_pretty(&list).expect("error list serializes"));
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("BSK_LOG", "info")).init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(errors) if errors.is_empty() => ExitCode::SUCCESS,
        Ok(errors) => {
            for e in &errors {
                log::error!("{}: {}", e.item, e.message);
            }
            print_errors(errors);
            ExitCode::from(1)
        }
        Err(e) => {
            log::error!("{e:#}");
            let item = std::env::args().nth(1).unwrap_or_default();
            print_errors(vec![ItemError::new(item, &e)]);
            ExitCode::from(2)
        }
    }
}
