//! `espsim` — experiment orchestration for the cheater/detector simulation
//! engine. Stages run in dependency order, record their artifacts in the
//! output directory's manifest, and are deterministic given (config, seed):
//! re-running a stage reproduces its metric files byte for byte.

mod config;
mod manifest;
mod stages;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use espsim_core::adversarial::{AdvMode, CheaterArch};
use espsim_core::{Error, Result};

use config::{parse_arch, parse_mode, parse_variant, DetectorVariant, LoadedConfig};
use stages::adv::RunOverrides;

#[derive(Parser)]
#[command(
    name = "espsim",
    version,
    about = "Adversarial co-training of game cheaters and cheat detectors",
    after_help = "Config keys can be overridden per invocation through the \
                  environment: ESPSIM_SECTION__KEY=value (e.g. \
                  ESPSIM_ADVERSARIAL__ITERATIONS=50). Exit codes: 2 config, \
                  3 io/artifact, 4 numeric failure."
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// Experiment definition (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Base seed; defaults to the first entry of adversarial.seeds.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides the config's out_dir.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train the non-cheater and pure-cheater policies.
    Pretrain(Common),
    /// Roll out the pretrained pair into balanced labeled episode splits.
    MakeDataset(Common),
    /// Train a detector on a saved dataset and report its test performance.
    PretrainDetector {
        #[command(flatten)]
        common: Common,
        /// Detector design; defaults to the configured variant.
        #[arg(long, value_parser = parse_variant)]
        detector: Option<DetectorVariant>,
    },
    /// Adversarially co-train the cheater against the detector.
    AdvTrain {
        #[command(flatten)]
        common: Common,
        /// Detection-penalty weight; defaults to the configured lambda.
        #[arg(long)]
        lambda: Option<f64>,
        /// joint (detector keeps learning) or cheater_only (frozen detector).
        #[arg(long, value_parser = parse_mode)]
        mode: Option<AdvMode>,
        #[arg(long, value_parser = parse_variant)]
        detector: Option<DetectorVariant>,
        /// structured (gated blend) or unstructured (monolithic finetune).
        #[arg(long, value_parser = parse_arch)]
        cheater: Option<CheaterArch>,
    },
    /// Score the pretrained pair with a pretrained detector (per-player table).
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = parse_variant)]
        detector: Option<DetectorVariant>,
    },
    /// One adv-train per (lambda, detector, mode, cheater, seed) combination.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated lambda values; defaults to adversarial.lambdas.
        #[arg(long, value_delimiter = ',')]
        lambda: Option<Vec<f64>>,
    },
    /// Aggregate a sweep into mean ± stdev summaries and plot-data CSVs.
    Report(Common),
}

fn load(common: &Common) -> Result<LoadedConfig> {
    let loaded = config::load(&common.config, common.out.as_deref())?;
    for key in &loaded.overrides {
        eprintln!("override applied: {key}");
    }
    std::fs::create_dir_all(&loaded.cfg.out_dir)?;
    Ok(loaded)
}

/// `--seed` wins; otherwise the first configured seed.
fn one_seed(common: &Common, loaded: &LoadedConfig) -> u64 {
    common.seed.unwrap_or(loaded.cfg.adversarial.seeds[0])
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Pretrain(common) => {
            let loaded = load(&common)?;
            stages::pretrain::run(&loaded.cfg, &loaded.hash, one_seed(&common, &loaded))
        }
        Cmd::MakeDataset(common) => {
            let loaded = load(&common)?;
            stages::dataset::run(&loaded.cfg, &loaded.hash, one_seed(&common, &loaded))
        }
        Cmd::PretrainDetector { common, detector } => {
            let loaded = load(&common)?;
            let variant = detector.unwrap_or(loaded.cfg.detector.variant);
            stages::detect::run(&loaded.cfg, &loaded.hash, one_seed(&common, &loaded), variant)
        }
        Cmd::AdvTrain { common, lambda, mode, detector, cheater } => {
            let loaded = load(&common)?;
            let ov = RunOverrides { lambda, mode, detector, cheater };
            stages::adv::run(&loaded.cfg, one_seed(&common, &loaded), &ov)
        }
        Cmd::Eval { common, detector } => {
            let loaded = load(&common)?;
            let variant = detector.unwrap_or(loaded.cfg.detector.variant);
            stages::eval::run(&loaded.cfg, &loaded.hash, one_seed(&common, &loaded), variant)
        }
        Cmd::Sweep { common, lambda } => {
            let loaded = load(&common)?;
            let seeds = match common.seed {
                Some(s) => vec![s],
                None => loaded.cfg.adversarial.seeds.clone(),
            };
            stages::sweep::run(&loaded.cfg, &loaded.hash, seeds, lambda)
        }
        Cmd::Report(common) => {
            let loaded = load(&common)?;
            stages::report::run(&loaded.cfg, &loaded.hash)
        }
    }
}

/// Failure categories: 2 configuration, 3 io/artifact, 4 numeric.
fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) => 2,
        Error::Io(_) | Error::Format(_) | Error::Contract(_) => 3,
        Error::Numeric(_) => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
