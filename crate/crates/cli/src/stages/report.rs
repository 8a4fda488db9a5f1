//! `espsim report`: aggregates a sweep into per-configuration means with
//! population standard deviations over seeds, plus two plot-ready data files
//! (detectability/reward as functions of lambda, and the reward-versus-
//! detectability trade-off curve).
//!
//! The deviation convention is the population form (divide by n): the
//! aggregate describes exactly the seeds that ran, not an estimate of a
//! larger seed population.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use espsim_core::io::{csv_float, write_csv};
use espsim_core::metrics::{mean, std_population};
use espsim_core::{Error, Result};

use crate::config::ExperimentConfig;
use crate::manifest::RunManifest;
use crate::stages::rel;

/// One parsed aggregate row (a completed adversarial run).
struct RunRow {
    lambda: f64,
    detector: String,
    mode: String,
    cheater: String,
    status: String,
    ap: f64,
    auroc: f64,
    cheater_reward: f64,
    cheater_length: f64,
    relative_reward: Option<f64>,
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    (mean(values), std_population(values))
}

fn required(fields: &[&str], idx: usize, line: usize, name: &str) -> Result<f64> {
    fields
        .get(idx)
        .and_then(|s| s.parse::<f64>().ok())
        .ok_or_else(|| Error::Format(format!("aggregate line {line}: bad `{name}` field")))
}

fn optional(fields: &[&str], idx: usize) -> Option<f64> {
    fields.get(idx).and_then(|s| if s.is_empty() { None } else { s.parse().ok() })
}

fn parse_aggregate(path: &Path) -> Result<Vec<RunRow>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let header = lines
        .next()
        .ok_or_else(|| Error::Format(format!("{}: empty aggregate", path.display())))?
        .1;
    let expected = super::adv::SUMMARY_HEADER.join(",");
    if header != expected {
        return Err(Error::Format(format!(
            "{}: unexpected aggregate header; expected `{expected}`",
            path.display()
        )));
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != super::adv::SUMMARY_HEADER.len() {
            return Err(Error::Format(format!(
                "{}: line {} has {} fields, expected {}",
                path.display(),
                i + 1,
                f.len(),
                super::adv::SUMMARY_HEADER.len()
            )));
        }
        rows.push(RunRow {
            lambda: required(&f, 0, i + 1, "lambda")?,
            detector: f[1].to_string(),
            mode: f[2].to_string(),
            cheater: f[3].to_string(),
            status: f[5].to_string(),
            ap: required(&f, 9, i + 1, "ap")?,
            auroc: required(&f, 10, i + 1, "auroc")?,
            cheater_reward: required(&f, 11, i + 1, "cheater_reward")?,
            cheater_length: required(&f, 12, i + 1, "cheater_length")?,
            relative_reward: optional(&f, 15),
        });
    }
    Ok(rows)
}

/// Aggregated statistics of one (lambda, detector, mode, cheater) cell.
struct Group {
    lambda: f64,
    detector: String,
    mode: String,
    cheater: String,
    seeds: usize,
    ap: (f64, f64),
    auroc: (f64, f64),
    reward: (f64, f64),
    length: (f64, f64),
    relative: Option<(f64, f64)>,
}

fn group_rows(rows: &[RunRow]) -> Vec<Group> {
    // Keyed on the textual fields plus the lambda bit pattern: the CSV's
    // shortest-roundtrip floats reparse exactly, so equal lambdas regroup.
    let mut cells: BTreeMap<(String, String, String, u64), Vec<&RunRow>> = BTreeMap::new();
    for row in rows.iter().filter(|r| r.status == "ok") {
        cells
            .entry((
                row.detector.clone(),
                row.mode.clone(),
                row.cheater.clone(),
                row.lambda.to_bits(),
            ))
            .or_default()
            .push(row);
    }
    let mut groups: Vec<Group> = cells
        .into_iter()
        .map(|((detector, mode, cheater, _), members)| {
            let pick = |f: fn(&RunRow) -> f64| {
                let v: Vec<f64> = members.iter().map(|r| f(r)).collect();
                mean_std(&v)
            };
            let relatives: Vec<f64> =
                members.iter().filter_map(|r| r.relative_reward).collect();
            Group {
                lambda: members[0].lambda,
                detector,
                mode,
                cheater,
                seeds: members.len(),
                ap: pick(|r| r.ap),
                auroc: pick(|r| r.auroc),
                reward: pick(|r| r.cheater_reward),
                length: pick(|r| r.cheater_length),
                relative: (!relatives.is_empty()).then(|| mean_std(&relatives)),
            }
        })
        .collect();
    groups.sort_by(|a, b| {
        (&a.detector, &a.mode, &a.cheater)
            .cmp(&(&b.detector, &b.mode, &b.cheater))
            .then(a.lambda.total_cmp(&b.lambda))
    });
    groups
}

fn pair_cells(p: (f64, f64)) -> [String; 2] {
    [csv_float(p.0), csv_float(p.1)]
}

fn opt_pair_cells(p: Option<(f64, f64)>) -> [String; 2] {
    match p {
        Some(p) => pair_cells(p),
        None => [String::new(), String::new()],
    }
}

pub fn run(cfg: &ExperimentConfig, hash: &str) -> Result<()> {
    let out = &cfg.out_dir;
    let mut manifest = RunManifest::load_or_new(out)?;
    let aggregate = manifest.require("sweep", "aggregate", "sweep")?;
    let rows = parse_aggregate(&out.join(&aggregate))?;
    let skipped = rows.iter().filter(|r| r.status != "ok").count();
    let groups = group_rows(&rows);
    if groups.is_empty() {
        return Err(Error::Contract(format!(
            "aggregate {} has no completed runs to report",
            aggregate.display()
        )));
    }
    if skipped > 0 {
        eprintln!("skipping {skipped} diverged run(s)");
    }

    fs::create_dir_all(out.join("reports"))?;
    let summary = "reports/summary.csv";
    let summary_rows: Vec<Vec<String>> = groups
        .iter()
        .map(|g| {
            let mut row = vec![
                csv_float(g.lambda),
                g.detector.clone(),
                g.mode.clone(),
                g.cheater.clone(),
                g.seeds.to_string(),
            ];
            row.extend(pair_cells(g.ap));
            row.extend(pair_cells(g.auroc));
            row.extend(pair_cells(g.reward));
            row.extend(pair_cells(g.length));
            row.extend(opt_pair_cells(g.relative));
            row
        })
        .collect();
    write_csv(
        out.join(summary),
        &[
            "lambda",
            "detector",
            "mode",
            "cheater",
            "seeds",
            "ap_mean",
            "ap_std",
            "auroc_mean",
            "auroc_std",
            "reward_mean",
            "reward_std",
            "length_mean",
            "length_std",
            "relative_reward_mean",
            "relative_reward_std",
        ],
        &summary_rows,
    )?;

    // Plot data, Fig-4 style: each metric as a function of lambda, one series
    // per (mode, detector, cheater) combination.
    let mut by_lambda: Vec<&Group> = groups.iter().collect();
    by_lambda.sort_by(|a, b| {
        (&a.mode, &a.detector, &a.cheater)
            .cmp(&(&b.mode, &b.detector, &b.cheater))
            .then(a.lambda.total_cmp(&b.lambda))
    });
    let metrics_file = "reports/fig_metrics_vs_lambda.csv";
    let metric_rows: Vec<Vec<String>> = by_lambda
        .iter()
        .map(|g| {
            let mut row = vec![
                csv_float(g.lambda),
                g.mode.clone(),
                g.detector.clone(),
                g.cheater.clone(),
            ];
            row.extend(pair_cells(g.auroc));
            row.extend(pair_cells(g.ap));
            row.extend(pair_cells(g.reward));
            row.extend(opt_pair_cells(g.relative));
            row
        })
        .collect();
    write_csv(
        out.join(metrics_file),
        &[
            "lambda",
            "mode",
            "detector",
            "cheater",
            "auroc_mean",
            "auroc_std",
            "ap_mean",
            "ap_std",
            "reward_mean",
            "reward_std",
            "relative_reward_mean",
            "relative_reward_std",
        ],
        &metric_rows,
    )?;

    // Plot data, Fig-5 style: one (detectability, retained reward) point per
    // cell, the lambda sweep tracing the trade-off curve.
    let tradeoff_file = "reports/fig_reward_vs_detectability.csv";
    let tradeoff_rows: Vec<Vec<String>> = by_lambda
        .iter()
        .map(|g| {
            vec![
                csv_float(g.lambda),
                g.mode.clone(),
                g.detector.clone(),
                g.cheater.clone(),
                csv_float(g.auroc.0),
                g.relative.map(|p| csv_float(p.0)).unwrap_or_default(),
            ]
        })
        .collect();
    write_csv(
        out.join(tradeoff_file),
        &["lambda", "mode", "detector", "cheater", "auroc", "relative_reward"],
        &tradeoff_rows,
    )?;

    for g in &groups {
        println!(
            "lambda={} detector={} mode={} cheater={} ({} seeds): AUROC {:.3} ± {:.4}, \
             cheater reward {:.3} ± {:.4}",
            g.lambda, g.detector, g.mode, g.cheater, g.seeds, g.auroc.0, g.auroc.1, g.reward.0,
            g.reward.1
        );
    }

    manifest.record(
        "report",
        hash,
        [
            ("summary".to_string(), rel(summary)),
            ("fig_metrics_vs_lambda".to_string(), rel(metrics_file)),
            ("fig_reward_vs_detectability".to_string(), rel(tradeoff_file)),
        ],
    );
    manifest.save(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_and_population_stdev_match_the_worked_example() {
        let (m, s) = mean_std(&[0.1, 0.2, 0.3]);
        assert!((m - 0.2).abs() < 1e-12);
        // sqrt(((0.1)^2 + 0 + (0.1)^2) / 3) = sqrt(1/150)
        assert!((s - (1.0f64 / 150.0).sqrt()).abs() < 1e-12);
        assert!((s - 0.0816).abs() < 5e-5, "rounds to the documented 0.0816, got {s}");
    }

    #[test]
    fn grouping_pools_seeds_and_skips_diverged_runs() {
        let rows = vec![
            RunRow {
                lambda: 0.1,
                detector: "trajectory".into(),
                mode: "joint".into(),
                cheater: "structured".into(),
                status: "ok".into(),
                ap: 0.7,
                auroc: 0.8,
                cheater_reward: 1.0,
                cheater_length: 5.0,
                relative_reward: Some(0.9),
            },
            RunRow {
                lambda: 0.1,
                detector: "trajectory".into(),
                mode: "joint".into(),
                cheater: "structured".into(),
                status: "ok".into(),
                ap: 0.5,
                auroc: 0.6,
                cheater_reward: 3.0,
                cheater_length: 7.0,
                relative_reward: Some(0.7),
            },
            RunRow {
                lambda: 0.1,
                detector: "trajectory".into(),
                mode: "joint".into(),
                cheater: "structured".into(),
                status: "diverged@3".into(),
                ap: 0.0,
                auroc: 0.0,
                cheater_reward: 0.0,
                cheater_length: 0.0,
                relative_reward: None,
            },
            RunRow {
                lambda: 1.0,
                detector: "trajectory".into(),
                mode: "joint".into(),
                cheater: "structured".into(),
                status: "ok".into(),
                ap: 0.4,
                auroc: 0.5,
                cheater_reward: 0.5,
                cheater_length: 4.0,
                relative_reward: None,
            },
        ];
        let groups = group_rows(&rows);
        assert_eq!(groups.len(), 2);
        assert_eq!(groups[0].lambda, 0.1);
        assert_eq!(groups[0].seeds, 2);
        assert!((groups[0].auroc.0 - 0.7).abs() < 1e-12);
        assert!((groups[0].auroc.1 - 0.1).abs() < 1e-12);
        assert_eq!(groups[0].relative.unwrap().0, 0.8);
        assert_eq!(groups[1].lambda, 1.0);
        assert_eq!(groups[1].seeds, 1);
        assert_eq!(groups[1].relative, None);
        assert_eq!(groups[1].auroc.1, 0.0);
    }
}
