//! `espsim pretrain-detector`: supervised training of the configured
//! detector design on a saved dataset, keeping the lowest-validation-loss
//! checkpoint and writing a per-player score report on the held-out test
//! split.

use std::fs;
use std::path::Path;

use espsim_core::detector::{DetectorModel, DetectorRecord, LabeledDataset};
use espsim_core::detector::pretrain_detector;
use espsim_core::env::{Environment, EpisodeJsonRecord, PlayerLabel};
use espsim_core::io::{csv_float, read_jsonl, write_csv, DetectorCheckpoint};
use espsim_core::{Error, Result};

use crate::config::{DetectorVariant, ExperimentConfig};
use crate::manifest::RunManifest;
use crate::stages::{
    dataset_stage, detector_stage, dispatch_env, rel, score_table, write_score_table,
    DETECTOR_SALT,
};

pub fn run(
    cfg: &ExperimentConfig,
    hash: &str,
    seed: u64,
    variant: DetectorVariant,
) -> Result<()> {
    dispatch_env!(&cfg.env, |env| execute(&env, cfg, hash, seed, variant))
}

/// Builds a fresh model of the requested design. The scalar designs start at
/// the all-zero parametrization, which scores 0.5 everywhere.
pub fn init_model(
    variant: DetectorVariant,
    input_width: usize,
    hidden: &[usize],
    seed: u64,
) -> DetectorModel<f64> {
    match variant {
        DetectorVariant::Trajectory => {
            DetectorModel::trajectory(input_width, hidden.to_vec(), seed)
        }
        DetectorVariant::Length => DetectorModel::length(0.0, 0.0),
        DetectorVariant::Reward => DetectorModel::reward(0.0, 0.0),
    }
}

/// Reads one JSONL split back into scoring records, checking that it was
/// produced for the configured environment.
pub fn load_split<E: Environment<f64>>(
    env: &E,
    path: &Path,
) -> Result<Vec<DetectorRecord<f64>>> {
    let rows: Vec<EpisodeJsonRecord<f64>> = read_jsonl(path)?;
    rows.iter()
        .map(|row| {
            if row.env != env.name() {
                return Err(Error::Contract(format!(
                    "dataset {} holds `{}` episodes but the config selects `{}`",
                    path.display(),
                    row.env,
                    env.name()
                )));
            }
            if row.encoded_detector_input.len() != env.detector_width() {
                return Err(Error::Contract(format!(
                    "dataset {} encodes {}-wide detector inputs, expected {}",
                    path.display(),
                    row.encoded_detector_input.len(),
                    env.detector_width()
                )));
            }
            Ok(DetectorRecord {
                input: row.encoded_detector_input.clone(),
                length: row.length,
                episode_return: row.total_return,
                label: match row.label {
                    PlayerLabel::NonCheater => 0,
                    PlayerLabel::Cheater => 1,
                },
            })
        })
        .collect()
}

fn execute<E: Environment<f64>>(
    env: &E,
    cfg: &ExperimentConfig,
    hash: &str,
    seed: u64,
    variant: DetectorVariant,
) -> Result<()> {
    let out = &cfg.out_dir;
    let mut manifest = RunManifest::load_or_new(out)?;
    let stage = dataset_stage(seed);
    let hint = format!("make-dataset --seed {seed}");
    let mut splits = Vec::with_capacity(3);
    for name in ["train", "valid", "test"] {
        let path = manifest.require(&stage, name, &hint)?;
        splits.push(load_split(env, &out.join(path))?);
    }
    let test = splits.pop().unwrap();
    let valid = splits.pop().unwrap();
    let train = splits.pop().unwrap();
    let dataset = LabeledDataset { train, valid, test };

    let model = init_model(variant, env.detector_width(), &cfg.detector.train.hidden, seed ^ DETECTOR_SALT);
    eprintln!(
        "training {variant} detector for {} epochs on {} records (seed {seed})",
        cfg.detector.train.epochs,
        dataset.train.len()
    );
    let res = pretrain_detector(model, &dataset, &cfg.detector.train, seed ^ DETECTOR_SALT)?;
    eprintln!(
        "  best valid loss {:.4}; test loss {:.4}, AP {:.3}, AUROC {:.3}",
        res.best_valid_loss, res.test_loss, res.test_ap, res.test_auroc
    );

    fs::create_dir_all(out.join("checkpoints"))?;
    fs::create_dir_all(out.join("curves"))?;
    fs::create_dir_all(out.join("reports"))?;
    let ckpt = format!("checkpoints/detector_{variant}_seed{seed}.json");
    DetectorCheckpoint::new(res.model.clone(), None).save(out.join(&ckpt))?;
    let curve = format!("curves/detector_{variant}_seed{seed}.csv");
    let curve_rows: Vec<Vec<String>> = res
        .curve
        .iter()
        .map(|p| vec![p.epoch.to_string(), csv_float(p.train_loss), csv_float(p.valid_loss)])
        .collect();
    write_csv(out.join(&curve), &["epoch", "train_loss", "valid_loss"], &curve_rows)?;

    // Per-player report on the held-out split: the first half of the
    // non-cheater test records serves as the shared baseline, the rest form
    // the non-cheater player block.
    let (non, che): (Vec<_>, Vec<_>) =
        dataset.test.iter().cloned().partition(|r| r.label == 0);
    if non.len() < 2 {
        return Err(Error::Contract(
            "per-player report needs at least 2 non-cheater test records".into(),
        ));
    }
    let (baseline, non_player) = non.split_at(non.len() / 2);
    let rows = score_table(
        &res.model,
        baseline,
        &[("non_cheater", non_player), ("pure_cheater", &che)],
    )?;
    let report = format!("reports/detector_{variant}_seed{seed}.csv");
    write_score_table(&out.join(&report), &rows)?;

    manifest.record(
        &detector_stage(variant, seed),
        hash,
        [
            ("checkpoint".to_string(), rel(&ckpt)),
            ("curve".to_string(), rel(&curve)),
            ("report".to_string(), rel(&report)),
        ],
    );
    manifest.save(out)
}
