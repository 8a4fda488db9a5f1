//! Actor-critic training: generalized advantage estimation, the clipped
//! surrogate objective, and the collect/update pretraining loop.
//!
//! Episodes are undiscounted, so GAE runs with a discount of exactly 1 and
//! only the trace parameter `gae_lambda` shapes the advantage estimates.
//! Updates differentiate the full loss (clipped policy term, value
//! regression, entropy bonus) through the tape; gradients are averaged over
//! minibatches with a fixed chunking scheme so worker count never changes the
//! result.

use crate::adam::Adam;
use crate::env::{
    collect_rollouts, rng_from_seed, sample_categorical, ActStep, ActingPolicy, Environment,
    GateCtx, Observability, PlayerLabel, Rollout,
};
use crate::error::{Error, Result};
use crate::nn::{PolicyArch, PolicyNet};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Fixed per-thread work unit for gradient accumulation; chunk results are
/// reduced in index order, keeping updates bit-identical for any worker count.
const GRAD_CHUNK: usize = 32;

fn default_hidden() -> Vec<usize> {
    vec![64, 64]
}
fn default_gae_lambda() -> f64 {
    0.95
}
fn default_clip() -> f64 {
    0.2
}
fn default_vf_coef() -> f64 {
    0.5
}
fn default_ent_coef() -> f64 {
    0.01
}
fn default_epochs() -> usize {
    4
}
fn default_minibatch() -> usize {
    64
}
fn default_lr() -> f64 {
    3e-4
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_episodes_per_iter() -> usize {
    64
}
fn default_true() -> bool {
    true
}
fn default_eval_episodes() -> usize {
    64
}
fn default_eval_every() -> usize {
    10
}
fn default_workers() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Hidden layer widths of the tanh trunk.
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "default_gae_lambda")]
    pub gae_lambda: f64,
    #[serde(default = "default_clip")]
    pub clip: f64,
    #[serde(default = "default_vf_coef")]
    pub vf_coef: f64,
    #[serde(default = "default_ent_coef")]
    pub ent_coef: f64,
    /// Optimization passes over each collected batch.
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_minibatch")]
    pub minibatch: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_beta1")]
    pub adam_beta1: f64,
    #[serde(default = "default_beta2")]
    pub adam_beta2: f64,
    /// Episodes collected per training iteration.
    #[serde(default = "default_episodes_per_iter")]
    pub episodes_per_iter: usize,
    /// Normalize advantages to zero mean / unit deviation per batch.
    /// Advantages are constants of the loss, so this never affects gradient
    /// correctness, only scale.
    #[serde(default = "default_true")]
    pub normalize_advantages: bool,
    #[serde(default = "default_eval_episodes")]
    pub eval_episodes: usize,
    /// Evaluate (and consider checkpointing) every this many iterations.
    #[serde(default = "default_eval_every")]
    pub eval_every: usize,
    /// Rollout worker threads; any value reproduces the same episodes.
    #[serde(default = "default_workers")]
    pub workers: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            hidden: default_hidden(),
            gae_lambda: default_gae_lambda(),
            clip: default_clip(),
            vf_coef: default_vf_coef(),
            ent_coef: default_ent_coef(),
            epochs: default_epochs(),
            minibatch: default_minibatch(),
            lr: default_lr(),
            adam_beta1: default_beta1(),
            adam_beta2: default_beta2(),
            episodes_per_iter: default_episodes_per_iter(),
            normalize_advantages: default_true(),
            eval_episodes: default_eval_episodes(),
            eval_every: default_eval_every(),
            workers: default_workers(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::Config("hidden layers must be non-empty".into()));
        }
        if !(self.gae_lambda >= 0.0 && self.gae_lambda <= 1.0) {
            return Err(Error::Config("gae_lambda must lie in [0, 1]".into()));
        }
        if self.clip <= 0.0 {
            return Err(Error::Config("clip range must be positive".into()));
        }
        if self.vf_coef < 0.0 || self.ent_coef < 0.0 {
            return Err(Error::Config("loss coefficients must be non-negative".into()));
        }
        if self.epochs == 0 || self.minibatch == 0 || self.episodes_per_iter == 0 {
            return Err(Error::Config("epochs, minibatch and rollout size must be positive".into()));
        }
        if self.lr <= 0.0 {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if self.workers == 0 || self.eval_episodes == 0 || self.eval_every == 0 {
            return Err(Error::Config("workers, eval_episodes, eval_every must be positive".into()));
        }
        Ok(())
    }

    pub fn optimizer<T: Scalar>(&self, n_params: usize) -> Adam<T> {
        Adam::new(n_params, T::fl(self.lr), T::fl(self.adam_beta1), T::fl(self.adam_beta2))
    }
}

/// Generalized advantage estimation at discount 1.
///
/// `terminal[t]` marks transitions after which no value bootstraps (episode
/// end). The last flag must be set: batches are built from whole episodes.
/// Returns `(advantages, value targets)` with `target = advantage + value`.
pub fn gae_advantages<T: Scalar>(
    rewards: &[T],
    values: &[T],
    terminal: &[bool],
    gae_lambda: T,
) -> (Vec<T>, Vec<T>) {
    let n = rewards.len();
    assert_eq!(values.len(), n);
    assert_eq!(terminal.len(), n);
    assert!(n > 0 && terminal[n - 1], "sequences must cover whole episodes");
    let mut advantages = vec![T::zero(); n];
    let mut acc = T::zero();
    for t in (0..n).rev() {
        let carry = if terminal[t] { T::zero() } else { T::one() };
        let next_value = if terminal[t] { T::zero() } else { values[t + 1] };
        let delta = rewards[t] + carry * next_value - values[t];
        acc = delta + gae_lambda * carry * acc;
        advantages[t] = acc;
    }
    let targets = advantages.iter().zip(values).map(|(a, v)| *a + *v).collect();
    (advantages, targets)
}

/// One training sample: everything the surrogate loss needs for one step.
#[derive(Clone, Debug)]
pub struct Sample<T> {
    pub obs: Vec<T>,
    pub action: usize,
    /// Log-probability recorded at collection time.
    pub old_logp: T,
    pub advantage: T,
    /// Value regression target.
    pub ret: T,
    /// Frozen-component context, present only for gated policies.
    pub gate_ctx: Option<GateCtx<T>>,
}

#[derive(Clone, Debug)]
pub struct Batch<T> {
    pub samples: Vec<Sample<T>>,
    pub mean_return: T,
    pub mean_length: T,
}

/// Flattens rollouts into training samples using the recorded rewards.
pub fn build_batch<T: Scalar, S: Clone + PartialEq + std::fmt::Debug>(
    rollouts: &[Rollout<T, S>],
    cfg: &TrainConfig,
) -> Batch<T> {
    let rewards: Vec<Vec<T>> = rollouts.iter().map(|r| r.episode.rewards.clone()).collect();
    build_batch_with_rewards(rollouts, &rewards, cfg)
}

/// Flattens rollouts into training samples, substituting per-step rewards
/// (used for detector-shaped returns). Diagnostics still use the substituted
/// rewards; episode lengths come from the rollouts.
pub fn build_batch_with_rewards<T: Scalar, S: Clone + PartialEq + std::fmt::Debug>(
    rollouts: &[Rollout<T, S>],
    rewards: &[Vec<T>],
    cfg: &TrainConfig,
) -> Batch<T> {
    assert_eq!(rollouts.len(), rewards.len());
    let lambda = T::fl(cfg.gae_lambda);
    let mut samples = Vec::new();
    let mut return_sum = T::zero();
    let mut length_sum = T::zero();
    for (rollout, rs) in rollouts.iter().zip(rewards) {
        let n = rollout.episode.length;
        assert_eq!(rs.len(), n, "substituted rewards must align with the episode");
        let values: Vec<T> = rollout.steps.iter().map(|s| s.value).collect();
        let mut terminal = vec![false; n];
        terminal[n - 1] = true;
        let (advantages, targets) = gae_advantages(rs, &values, &terminal, lambda);
        for i in 0..n {
            samples.push(Sample {
                obs: rollout.obs[i].clone(),
                action: rollout.episode.actions[i],
                old_logp: rollout.steps[i].logp,
                advantage: advantages[i],
                ret: targets[i],
                gate_ctx: rollout.steps[i].gate_ctx.clone(),
            });
        }
        return_sum += rs.iter().cloned().sum::<T>();
        length_sum += T::from_usize_(n);
    }
    if cfg.normalize_advantages && samples.len() > 1 {
        let advs: Vec<T> = samples.iter().map(|s| s.advantage).collect();
        let m = crate::metrics::mean(&advs);
        let sd = crate::metrics::std_population(&advs);
        let denom = sd + T::fl(1e-8);
        for s in &mut samples {
            s.advantage = (s.advantage - m) / denom;
        }
    }
    let n_eps = T::from_usize_(rollouts.len());
    Batch { samples, mean_return: return_sum / n_eps, mean_length: length_sum / n_eps }
}

/// Per-sample loss terms a trainable policy contributes to the tape.
pub struct PolicyTerms {
    /// Log-probability of the sample's action under the current parameters.
    pub logp: Var,
    /// State-value prediction.
    pub value: Var,
    /// Entropy of the action distribution.
    pub entropy: Var,
}

/// A policy the clipped-surrogate update can differentiate.
pub trait TrainablePolicy<T: Scalar>: ActingPolicy<T> {
    fn params(&self) -> &[T];
    fn params_mut(&mut self) -> &mut [T];
    /// Rebuilds the differentiable per-sample terms on `tape`, whose
    /// parameter buffer is this policy's `params()`.
    fn sample_terms<'p>(&self, tape: &mut Tape<'p, T>, sample: &Sample<T>) -> PolicyTerms;
}

impl<T: Scalar> ActingPolicy<T> for PolicyNet<T> {
    fn act(&self, obs: &[T], rng: &mut ChaCha8Rng) -> ActStep<T> {
        let (probs, value) = self.forward(obs);
        let action = sample_categorical(&probs, rng);
        ActStep { action, logp: probs[action].ln(), value, omega: None, gate_ctx: None }
    }

    fn input_width(&self) -> Option<usize> {
        Some(self.arch.input)
    }
}

impl<T: Scalar> TrainablePolicy<T> for PolicyNet<T> {
    fn params(&self) -> &[T] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    fn sample_terms<'p>(&self, tape: &mut Tape<'p, T>, sample: &Sample<T>) -> PolicyTerms {
        let x = tape.constant(&sample.obs);
        let (logits, value) = self.graph(tape, x);
        let logp_all = tape.log_softmax(logits);
        let probs = tape.softmax(logits);
        let logp = tape.gather(logp_all, sample.action);
        let plogp = tape.mul(probs, logp_all);
        let neg_entropy = tape.sum(plogp);
        let entropy = tape.ax_plus_b(neg_entropy, -T::one(), T::zero());
        PolicyTerms { logp, value, entropy }
    }
}

/// Builds the full surrogate loss for one sample and returns its tape node.
/// Loss = -min(ratio*A, clip(ratio)*A) + vf_coef*(V - target)^2 - ent_coef*H.
fn sample_loss<'p, T: Scalar, P: TrainablePolicy<T>>(
    policy: &P,
    tape: &mut Tape<'p, T>,
    sample: &Sample<T>,
    cfg: &TrainConfig,
) -> Var {
    let terms = policy.sample_terms(tape, sample);
    let old = tape.scalar_constant(sample.old_logp);
    let log_ratio = tape.sub(terms.logp, old);
    let ratio = tape.exp(log_ratio);
    let clip = T::fl(cfg.clip);
    let clipped = tape.clamp(ratio, T::one() - clip, T::one() + clip);
    let adv = sample.advantage;
    let surr1 = tape.ax_plus_b(ratio, adv, T::zero());
    let surr2 = tape.ax_plus_b(clipped, adv, T::zero());
    let policy_obj = tape.min(surr1, surr2);
    let target = tape.scalar_constant(sample.ret);
    let verr = tape.sub(terms.value, target);
    let vloss = tape.square(verr);
    let neg_obj = tape.ax_plus_b(policy_obj, -T::one(), T::zero());
    let scaled_v = tape.ax_plus_b(vloss, T::fl(cfg.vf_coef), T::zero());
    let scaled_h = tape.ax_plus_b(terms.entropy, -T::fl(cfg.ent_coef), T::zero());
    let partial = tape.add(neg_obj, scaled_v);
    tape.add(partial, scaled_h)
}

/// Mean loss over samples (forward only); the finite-difference reference
/// evaluates this.
pub fn batch_loss<T: Scalar, P: TrainablePolicy<T>>(
    policy: &P,
    samples: &[Sample<T>],
    cfg: &TrainConfig,
) -> T {
    let mut tape = Tape::new(policy.params());
    let mut acc = T::zero();
    for s in samples {
        let loss = sample_loss(policy, &mut tape, s, cfg);
        acc += tape.scalar(loss);
        tape.clear();
    }
    acc / T::from_usize_(samples.len())
}

/// Gradient of [`batch_loss`] with respect to the policy parameters.
///
/// Samples are processed in fixed chunks of [`GRAD_CHUNK`]; chunk gradients
/// are summed in index order, so the result does not depend on how rayon
/// schedules the chunks.
pub fn batch_gradient<T: Scalar, P: TrainablePolicy<T>>(
    policy: &P,
    samples: &[Sample<T>],
    cfg: &TrainConfig,
) -> Vec<T> {
    let n_params = policy.params().len();
    let scale = T::one() / T::from_usize_(samples.len());
    let chunk_grads: Vec<Vec<T>> = samples
        .par_chunks(GRAD_CHUNK)
        .map(|chunk| {
            let mut grad = vec![T::zero(); n_params];
            let mut tape = Tape::new(policy.params());
            for s in chunk {
                let loss = sample_loss(policy, &mut tape, s, cfg);
                tape.backward_scaled(loss, scale, &mut grad);
                tape.clear();
            }
            grad
        })
        .collect();
    let mut grad = vec![T::zero(); n_params];
    for cg in chunk_grads {
        for (g, c) in grad.iter_mut().zip(cg) {
            *g += c;
        }
    }
    grad
}

/// Diagnostics averaged over the epoch's minibatches.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UpdateStats<T> {
    pub policy_loss: T,
    pub value_loss: T,
    pub entropy: T,
}

/// Runs `cfg.epochs` passes of shuffled minibatch updates over the batch.
/// Fails with a numeric error (parameters already advanced for the current
/// epoch) if any gradient turns non-finite; callers snapshot-and-restore.
pub fn ppo_update<T: Scalar, P: TrainablePolicy<T>>(
    policy: &mut P,
    batch: &Batch<T>,
    cfg: &TrainConfig,
    opt: &mut Adam<T>,
    rng: &mut ChaCha8Rng,
) -> Result<UpdateStats<T>> {
    if batch.samples.is_empty() {
        return Err(Error::Contract("ppo update on an empty batch".into()));
    }
    let mut indices: Vec<usize> = (0..batch.samples.len()).collect();
    for _epoch in 0..cfg.epochs {
        indices.shuffle(rng);
        for mb in indices.chunks(cfg.minibatch) {
            let samples: Vec<Sample<T>> =
                mb.iter().map(|&i| batch.samples[i].clone()).collect();
            let grad = batch_gradient(policy, &samples, cfg);
            if grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Numeric("non-finite gradient in policy update".into()));
            }
            opt.step(policy.params_mut(), &grad);
        }
    }
    // Diagnostic pass at the final parameters.
    let mut stats = UpdateStats { policy_loss: T::zero(), value_loss: T::zero(), entropy: T::zero() };
    let mut tape = Tape::new(policy.params());
    for s in &batch.samples {
        let terms = policy.sample_terms(&mut tape, s);
        let logp = tape.scalar(terms.logp);
        let value = tape.scalar(terms.value);
        let entropy = tape.scalar(terms.entropy);
        let ratio = (logp - s.old_logp).exp();
        let clipped = ratio.max(T::one() - T::fl(cfg.clip)).min(T::one() + T::fl(cfg.clip));
        stats.policy_loss += -(ratio * s.advantage).min(clipped * s.advantage);
        let verr = value - s.ret;
        stats.value_loss += verr * verr;
        stats.entropy += entropy;
        tape.clear();
    }
    let n = T::from_usize_(batch.samples.len());
    stats.policy_loss /= n;
    stats.value_loss /= n;
    stats.entropy /= n;
    if !stats.policy_loss.is_finite() || !stats.value_loss.is_finite() {
        return Err(Error::Numeric("non-finite loss after policy update".into()));
    }
    Ok(stats)
}

/// Evaluation summary over a fixed seed block.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalStats<T> {
    pub mean_return: T,
    pub mean_length: T,
    pub returns: Vec<T>,
    pub lengths: Vec<usize>,
}

/// Plays `episodes` seeded episodes without training.
pub fn evaluate_policy<T, E, P>(
    policy: &P,
    env: &E,
    mode: Observability,
    label: PlayerLabel,
    base_seed: u64,
    episodes: usize,
    workers: usize,
) -> Result<EvalStats<T>>
where
    T: Scalar,
    E: Environment<T>,
    P: ActingPolicy<T>,
{
    let rollouts = collect_rollouts(policy, env, mode, label, base_seed, episodes, workers)?;
    let returns: Vec<T> = rollouts.iter().map(|r| r.episode.total_return).collect();
    let lengths: Vec<usize> = rollouts.iter().map(|r| r.episode.length).collect();
    let n = T::from_usize_(episodes);
    let mean_return = returns.iter().cloned().sum::<T>() / n;
    let mean_length =
        lengths.iter().map(|&l| T::from_usize_(l)).sum::<T>() / n;
    Ok(EvalStats { mean_return, mean_length, returns, lengths })
}

/// One row of the training curve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub iteration: usize,
    pub env_steps: usize,
    pub train_return: f64,
    pub train_length: f64,
    pub eval_return: Option<f64>,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
}

#[derive(Clone, Debug)]
pub struct PretrainResult<T: Scalar> {
    /// The checkpoint with the best evaluation return seen during training.
    pub policy: PolicyNet<T>,
    /// Parameters at the end of training (may differ from the best).
    pub final_policy: PolicyNet<T>,
    pub curve: Vec<CurvePoint>,
    pub best_eval: T,
    pub env_steps: usize,
    /// Iteration at which training was stopped by a numeric failure.
    pub diverged_at: Option<usize>,
}

/// Offset separating evaluation seed blocks from training seed blocks.
const EVAL_SEED_OFFSET: u64 = 0x9E37_79B9_7F4A_7C15;

/// Collect/update loop for `budget` environment steps; returns the checkpoint
/// that maximizes mean evaluation return over a fixed seed block. A zero
/// budget returns the freshly initialized policy (evaluated once).
pub fn pretrain_policy<T, E>(
    env: &E,
    mode: Observability,
    label: PlayerLabel,
    cfg: &TrainConfig,
    budget: usize,
    seed: u64,
) -> Result<PretrainResult<T>>
where
    T: Scalar,
    E: Environment<T>,
{
    cfg.validate()?;
    let arch = PolicyArch {
        input: env.obs_width(mode),
        hidden: cfg.hidden.clone(),
        actions: env.action_count(),
    };
    let mut policy = PolicyNet::<T>::init(arch, seed);
    let mut opt = cfg.optimizer::<T>(policy.params.len());
    let mut shuffle_rng = rng_from_seed(seed ^ 0x5EED_5EED_5EED_5EED);
    let eval_seed = seed.wrapping_add(EVAL_SEED_OFFSET);
    let eval = |p: &PolicyNet<T>| {
        evaluate_policy(p, env, mode, label, eval_seed, cfg.eval_episodes, cfg.workers)
    };
    let first = eval(&policy)?;
    let mut best = policy.clone();
    let mut best_eval = first.mean_return;
    let mut curve = Vec::new();
    let mut env_steps = 0usize;
    let mut iteration = 0usize;
    let mut diverged_at = None;
    while env_steps < budget {
        let base = seed.wrapping_add(1 + (iteration as u64) * cfg.episodes_per_iter as u64);
        let rollouts = collect_rollouts(
            &policy,
            env,
            mode,
            label,
            base,
            cfg.episodes_per_iter,
            cfg.workers,
        )?;
        env_steps += rollouts.iter().map(|r| r.episode.length).sum::<usize>();
        let batch = build_batch(&rollouts, cfg);
        let snapshot = policy.params.clone();
        let stats = match ppo_update(&mut policy, &batch, cfg, &mut opt, &mut shuffle_rng) {
            Ok(stats) => stats,
            Err(Error::Numeric(_)) => {
                policy.params = snapshot;
                diverged_at = Some(iteration);
                break;
            }
            Err(e) => return Err(e),
        };
        let mut point = CurvePoint {
            iteration,
            env_steps,
            train_return: batch.mean_return.to_f64_(),
            train_length: batch.mean_length.to_f64_(),
            eval_return: None,
            policy_loss: stats.policy_loss.to_f64_(),
            value_loss: stats.value_loss.to_f64_(),
            entropy: stats.entropy.to_f64_(),
        };
        let last_iteration = env_steps >= budget;
        if (iteration + 1) % cfg.eval_every == 0 || last_iteration {
            let stats = eval(&policy)?;
            point.eval_return = Some(stats.mean_return.to_f64_());
            if stats.mean_return > best_eval {
                best_eval = stats.mean_return;
                best = policy.clone();
            }
        }
        curve.push(point);
        iteration += 1;
    }
    Ok(PretrainResult {
        policy: best,
        final_policy: policy,
        curve,
        best_eval,
        env_steps,
        diverged_at,
    })
}
