//! `espsim sweep`: the Cartesian product of the configured sweep axes
//! (lambdas x detector variants x modes x cheater architectures x seeds),
//! one adversarial run per combination, summarized in a single aggregate
//! CSV. Runs that diverge are recorded with their status and the sweep
//! moves on.

use std::fs;

use espsim_core::adversarial::{AdvMode, CheaterArch};
use espsim_core::{Error, Result};

use crate::config::{DetectorVariant, ExperimentConfig};
use crate::manifest::RunManifest;
use crate::stages::adv::{execute_run, write_aggregate, RunOverrides, RunSummary};
use crate::stages::rel;

/// The resolved sweep grid; empty config lists fall back to the single
/// configured value so a sweep is always well-defined.
pub struct Grid {
    pub lambdas: Vec<f64>,
    pub detectors: Vec<DetectorVariant>,
    pub modes: Vec<AdvMode>,
    pub cheaters: Vec<CheaterArch>,
    pub seeds: Vec<u64>,
}

impl Grid {
    pub fn resolve(
        cfg: &ExperimentConfig,
        lambda_flag: Option<Vec<f64>>,
        seeds: Vec<u64>,
    ) -> Result<Self> {
        let lambdas = match lambda_flag {
            Some(l) if !l.is_empty() => l,
            Some(_) => return Err(Error::Config("--lambda list must not be empty".into())),
            None if cfg.adversarial.lambdas.is_empty() => vec![cfg.adversarial.base.lambda],
            None => cfg.adversarial.lambdas.clone(),
        };
        for &l in &lambdas {
            if !l.is_finite() || l < 0.0 {
                return Err(Error::Config(format!(
                    "lambda values must be finite and non-negative, got {l}"
                )));
            }
        }
        let or_single = |list: &[DetectorVariant], single| {
            if list.is_empty() {
                vec![single]
            } else {
                list.to_vec()
            }
        };
        Ok(Grid {
            lambdas,
            detectors: or_single(&cfg.adversarial.detectors, cfg.detector.variant),
            modes: if cfg.adversarial.modes.is_empty() {
                vec![cfg.adversarial.base.mode]
            } else {
                cfg.adversarial.modes.clone()
            },
            cheaters: if cfg.adversarial.cheaters.is_empty() {
                vec![cfg.adversarial.base.cheater_arch]
            } else {
                cfg.adversarial.cheaters.clone()
            },
            seeds,
        })
    }

    pub fn len(&self) -> usize {
        self.lambdas.len()
            * self.detectors.len()
            * self.modes.len()
            * self.cheaters.len()
            * self.seeds.len()
    }
}

pub fn run(
    cfg: &ExperimentConfig,
    hash: &str,
    seeds: Vec<u64>,
    lambda_flag: Option<Vec<f64>>,
) -> Result<()> {
    let grid = Grid::resolve(cfg, lambda_flag, seeds)?;
    let total = grid.len();
    let mut rows: Vec<RunSummary> = Vec::with_capacity(total);
    let mut done = 0;
    for &lambda in &grid.lambdas {
        for &detector in &grid.detectors {
            for &mode in &grid.modes {
                for &cheater in &grid.cheaters {
                    for &seed in &grid.seeds {
                        done += 1;
                        eprintln!(
                            "[{done}/{total}] lambda={lambda} detector={detector} mode={mode} \
                             cheater={cheater} seed={seed}"
                        );
                        let ov = RunOverrides {
                            lambda: Some(lambda),
                            mode: Some(mode),
                            detector: Some(detector),
                            cheater: Some(cheater),
                        };
                        let summary = execute_run(cfg, seed, &ov)?;
                        if let Some(it) = summary.diverged_at {
                            eprintln!("  diverged at iteration {it}; recorded and continuing");
                        }
                        rows.push(summary);
                    }
                }
            }
        }
    }

    let out = &cfg.out_dir;
    fs::create_dir_all(out.join("sweep"))?;
    let aggregate = "sweep/aggregate.csv";
    write_aggregate(&out.join(aggregate), &rows)?;
    eprintln!("sweep complete: {total} runs, aggregate at {aggregate}");

    // The manifest is reloaded because every inner run recorded its own
    // stage while this function held an older copy.
    let mut manifest = RunManifest::load_or_new(out)?;
    manifest.record("sweep", hash, [("aggregate".to_string(), rel(aggregate))]);
    manifest.save(out)
}
