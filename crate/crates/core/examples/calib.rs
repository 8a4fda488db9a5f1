//! Scratch calibration tool for sizing desk-scale budgets. Not part of the
//! shipped surface; run with `cargo run --example calib -- <cmd> ...`.

use std::time::Instant;

use espsim_core::adversarial::{
    adversarial_train, AdvMode, AdversarialCheater, AdversarialConfig, CheaterArch,
};
use espsim_core::detector::{build_dataset, evaluate_detector, pretrain_detector, DetectorModel, DetectorTrainConfig, SplitSizes};
use espsim_core::env::blackjack::{Blackjack, BlackjackConfig};
use espsim_core::env::gridworld::{GridConfig, Gridworld};
use espsim_core::env::{collect_rollouts, Environment, EnvSpec, Observability, PlayerLabel};
use espsim_core::io::{DetectorCheckpoint, PolicyCheckpoint};
use espsim_core::learner::{evaluate_policy, pretrain_policy, TrainConfig};
use espsim_core::detector::record_from_episode;
use espsim_core::Real;

fn role(arg: &str) -> (Observability, PlayerLabel) {
    match arg {
        "non" => (Observability::Partial, PlayerLabel::NonCheater),
        "pure" => (Observability::Full, PlayerLabel::Cheater),
        other => panic!("unknown role {other}"),
    }
}

fn hidden(arg: &str) -> Vec<usize> {
    arg.split(',').map(|s| s.parse().unwrap()).collect()
}

fn env_f64(name: &str, default: f64) -> f64 {
    std::env::var(name).ok().and_then(|v| v.parse().ok()).unwrap_or(default)
}

fn train_cfg(hidden_arg: &str) -> TrainConfig {
    TrainConfig {
        hidden: hidden(hidden_arg),
        episodes_per_iter: 256,
        eval_episodes: 256,
        eval_every: 20,
        ent_coef: env_f64("CALIB_ENT", 0.01),
        lr: env_f64("CALIB_LR", 3e-4),
        ..TrainConfig::default()
    }
}

fn pretrain<E: Environment<Real, State = S>, S: Clone + PartialEq + std::fmt::Debug>(
    env: &E,
    role_arg: &str,
    budget: usize,
    seed: u64,
    hidden_arg: &str,
    out: &str,
    episodes_per_iter: usize,
) {
    let (mode, label) = role(role_arg);
    let mut cfg = train_cfg(hidden_arg);
    cfg.episodes_per_iter = episodes_per_iter;
    let t0 = Instant::now();
    let res = pretrain_policy::<Real, E>(env, mode, label, &cfg, budget, seed).unwrap();
    let dt = t0.elapsed().as_secs_f64();
    for p in res.curve.iter().filter(|p| p.eval_return.is_some()) {
        println!(
            "iter {:5}  steps {:8}  train_ret {:+.3}  len {:6.1}  eval {:+.3}",
            p.iteration,
            p.env_steps,
            p.train_return,
            p.train_length,
            p.eval_return.unwrap()
        );
    }
    let fin = evaluate_policy::<Real, _, _>(&res.policy, env, mode, label, 9_999_000, 1024, 1)
        .map_err(|e| format!("{e}"));
    let fin = match fin {
        Ok(s) => s,
        Err(e) => panic!("{e}"),
    };
    println!(
        "DONE {role_arg} budget={budget} seed={seed} hidden={hidden_arg}: best_eval {:+.4} | fresh-block mean {:+.4} len {:.1} | {dt:.1}s ({:.0} steps/s)",
        res.best_eval,
        fin.mean_return,
        fin.mean_length,
        budget as f64 / dt
    );
    PolicyCheckpoint::new(res.policy, None).save(out).unwrap();
}

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let cmd = args[0].as_str();
    match cmd {
        // bj-pretrain <role> <budget> <seed> <hidden> <out.json>
        "bj-pretrain" => {
            let env = Blackjack::new(BlackjackConfig::default()).unwrap();
            pretrain(
                &env,
                &args[1],
                args[2].parse().unwrap(),
                args[3].parse().unwrap(),
                &args[4],
                &args[5],
                512,
            );
        }
        // gw-pretrain <role> <budget> <seed> <hidden> <out.json>
        "gw-pretrain" => {
            let env = Gridworld::new(GridConfig::desk()).unwrap();
            pretrain(
                &env,
                &args[1],
                args[2].parse().unwrap(),
                args[3].parse().unwrap(),
                &args[4],
                &args[5],
                32,
            );
        }
        // bj-detector <non.json> <pure.json> <train> <valid> <test> <epochs> <seed> <out.json>
        "bj-detector" => {
            let env = Blackjack::new(BlackjackConfig::default()).unwrap();
            let non = PolicyCheckpoint::<Real>::load(&args[1]).unwrap().policy;
            let pure = PolicyCheckpoint::<Real>::load(&args[2]).unwrap().policy;
            let sizes = SplitSizes {
                train: args[3].parse().unwrap(),
                valid: args[4].parse().unwrap(),
                test: args[5].parse().unwrap(),
            };
            let epochs: usize = args[6].parse().unwrap();
            let seed: u64 = args[7].parse().unwrap();
            let t0 = Instant::now();
            let data = build_dataset(&env, &pure, &non, &sizes, seed, 1).unwrap();
            let built = t0.elapsed().as_secs_f64();
            let cfg = DetectorTrainConfig { epochs, ..DetectorTrainConfig::default() };
            let model = match std::env::var("CALIB_VARIANT").as_deref() {
                Ok("length") => DetectorModel::<Real>::length(0.0, 0.0),
                Ok("reward") => DetectorModel::<Real>::reward(0.0, 0.0),
                _ => DetectorModel::<Real>::trajectory(env.detector_width(), cfg.hidden.clone(), seed),
            };
            let t1 = Instant::now();
            let res = pretrain_detector(model, &data, &cfg, seed).unwrap();
            println!(
                "DETECTOR: test AP {:.4} AUROC {:.4} valid {:.4} | build {built:.1}s train {:.1}s",
                res.test_ap,
                res.test_auroc,
                res.best_valid_loss,
                t1.elapsed().as_secs_f64()
            );
            DetectorCheckpoint::new(res.model, None).save(&args[8]).unwrap();
        }
        // gw-detector <non.json> <pure.json> <train> <valid> <test> <epochs> <seed> <out.json>
        "gw-detector" => {
            let env = Gridworld::new(GridConfig::desk()).unwrap();
            let non = PolicyCheckpoint::<Real>::load(&args[1]).unwrap().policy;
            let pure = PolicyCheckpoint::<Real>::load(&args[2]).unwrap().policy;
            let sizes = SplitSizes {
                train: args[3].parse().unwrap(),
                valid: args[4].parse().unwrap(),
                test: args[5].parse().unwrap(),
            };
            let epochs: usize = args[6].parse().unwrap();
            let seed: u64 = args[7].parse().unwrap();
            let t0 = Instant::now();
            let data = build_dataset(&env, &pure, &non, &sizes, seed, 1).unwrap();
            let built = t0.elapsed().as_secs_f64();
            let cfg = DetectorTrainConfig {
                epochs,
                hidden: hidden(&std::env::var("CALIB_DHID").unwrap_or_else(|_| "64,64".into())),
                lr: env_f64("CALIB_DLR", 3e-4),
                ..DetectorTrainConfig::default()
            };
            let model = DetectorModel::<Real>::trajectory(env.detector_width(), cfg.hidden.clone(), seed);
            let t1 = Instant::now();
            let res = pretrain_detector(model, &data, &cfg, seed).unwrap();
            println!(
                "GW DETECTOR: test AP {:.4} AUROC {:.4} | build {built:.1}s train {:.1}s",
                res.test_ap,
                res.test_auroc,
                t1.elapsed().as_secs_f64()
            );
            DetectorCheckpoint::new(res.model, None).save(&args[8]).unwrap();
        }
        // gw-adv <non.json> <pure.json> <det.json> <lambda> <mode> <arch> <iters> <eps> <seed>
        "gw-adv" => {
            let env = Gridworld::new(GridConfig::desk()).unwrap();
            run_adv(&env, &args);
        }
        // bj-adv <non.json> <pure.json> <det.json> <lambda> <joint|cheater_only> <structured|unstructured> <iters> <eps> <seed>
        "bj-adv" => {
            let env = Blackjack::new(BlackjackConfig::default()).unwrap();
            run_adv(&env, &args);
        }
        // gw-eval <ckpt> <role> : report pretrained gridworld policy stats
        "gw-eval" => {
            let env = Gridworld::new(GridConfig::desk()).unwrap();
            let p = PolicyCheckpoint::<Real>::load(&args[1]).unwrap().policy;
            let (mode, label) = role(&args[2]);
            let s = evaluate_policy::<Real, _, _>(&p, &env, mode, label, 77_000, 256, 1).unwrap();
            println!("GW {}: mean_return {:+.3} mean_length {:.1}", args[2], s.mean_return, s.mean_length);
        }
        other => panic!("unknown command {other}"),
    }
}

fn run_adv<E>(env: &E, args: &[String])
where
    E: Environment<Real>,
{
    let non = PolicyCheckpoint::<Real>::load(&args[1]).unwrap().policy;
            let pure = PolicyCheckpoint::<Real>::load(&args[2]).unwrap().policy;
            let det = DetectorCheckpoint::<Real>::load(&args[3]).unwrap().model;
            let lambda: f64 = args[4].parse().unwrap();
            let mode = match args[5].as_str() {
                "joint" => AdvMode::Joint,
                _ => AdvMode::CheaterOnly,
            };
            let arch = match args[6].as_str() {
                "structured" => CheaterArch::Structured,
                _ => CheaterArch::Unstructured,
            };
            let iterations: usize = args[7].parse().unwrap();
            let eps: usize = args[8].parse().unwrap();
            let seed: u64 = args[9].parse().unwrap();
            let cfg = AdversarialConfig {
                lambda,
                mode,
                cheater_arch: arch,
                iterations,
                episodes_per_iter: eps,
                detector_passes: env_f64("CALIB_DPASSES", 1.0) as usize,
                detector_lr: env_f64("CALIB_DLR", 3e-4),
                gate_hidden: vec![32],
                train: TrainConfig {
                    hidden: pure.arch.hidden.clone(),
                    episodes_per_iter: eps,
                    eval_episodes: 128,
                    lr: env_f64("CALIB_ALR", 3e-4),
                    ent_coef: env_f64("CALIB_AENT", 0.01),
                    ..TrainConfig::default()
                },
                ..AdversarialConfig::default()
            };
            let cheater = match arch {
                CheaterArch::Structured => AdversarialCheater::structured(
                    non.clone(),
                    pure.clone(),
                    cfg.gate_hidden.clone(),
                    seed ^ 0x6A7E,
                )
                .unwrap(),
                CheaterArch::Unstructured => AdversarialCheater::Unstructured(pure.clone()),
            };
            let t0 = Instant::now();
            let res = adversarial_train(env, cheater, &non, det, &cfg, seed, |m, _, _| {
                if (m.iteration + 1) % 10 == 0 || m.iteration == 0 {
                    println!(
                        "it {:4} ap {:.3} auroc {:.3} chR {:+.3} nonR {:+.3} shaped {:+.3} omega {} dloss {}",
                        m.iteration,
                        m.ap,
                        m.auroc,
                        m.cheater_reward,
                        m.noncheater_reward,
                        m.shaped_return,
                        m.mean_omega.map(|o| format!("{o:.3}")).unwrap_or_default(),
                        m.detector_loss.map(|l| format!("{l:.3}")).unwrap_or_default(),
                    );
                }
            })
            .unwrap();
            let dt = t0.elapsed().as_secs_f64();
            // Final eval: fresh disjoint blocks, AUROC of final detector on
            // final cheater vs fresh non-cheater episodes.
            let n = 256;
            let base = seed ^ 0xE7A1;
            let non_r = collect_rollouts::<Real, _, _>(&non, env, Observability::Partial, PlayerLabel::NonCheater, base, n, 1).unwrap();
            let che_r = collect_rollouts::<Real, _, _>(&res.cheater, env, Observability::Full, PlayerLabel::Cheater, base + n as u64, n, 1).unwrap();
            let records: Vec<_> = non_r
                .iter()
                .chain(che_r.iter())
                .map(|r| record_from_episode(env, &r.episode))
                .collect();
            let (ap, auroc) = evaluate_detector(&res.detector, &records).unwrap();
            let che_reward: f64 = che_r.iter().map(|r| r.episode.total_return).sum::<f64>() / n as f64;
            let last = res.history.last().unwrap();
            let tail: Vec<f64> = res.history.iter().rev().take(50).map(|m| m.cheater_reward).collect();
            let tail_var = {
                let m = tail.iter().sum::<f64>() / tail.len() as f64;
                tail.iter().map(|r| (r - m) * (r - m)).sum::<f64>() / tail.len() as f64
            };
            println!("tail-50 reward variance: {tail_var:.6}");
            println!(
                "ADV DONE lambda={lambda} mode={:?} arch={:?} seed={seed}: final-eval AP {ap:.3} AUROC {auroc:.3} chR {che_reward:+.3} | last-iter auroc {:.3} chR {:+.3} omega {} | diverged {:?} | {dt:.1}s ({:.2}s/iter)",
                mode,
                arch,
                last.auroc,
                last.cheater_reward,
                last.mean_omega.map(|o| format!("{o:.3}")).unwrap_or_default(),
                res.diverged_at,
                dt / iterations as f64
            );
}
