//! Episode and rollout contract shared by both games.
//!
//! Episodes are undiscounted (the discount is pinned at 1 and validated, not
//! configurable) and fully determined by a single `u64` seed: the seed drives
//! environment randomness and action sampling through one `ChaCha8` stream,
//! so `run_episode` is a pure function of (policy parameters, environment
//! config, seed).
//!
//! Observability is two-level. `Partial` is what a non-cheating player sees.
//! `Full` is the cheater's feed; its encoding always starts with the exact
//! partial encoding as a prefix and appends the full-visibility bundle, so a
//! frozen non-cheater policy can be evaluated on a slice of a cheater
//! observation without knowing the game.

pub mod blackjack;
pub mod gridworld;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Single source for seeded randomness across the crate.
pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Observability {
    /// Player-visible slice plus memory features.
    Partial,
    /// Ground-truth bundle appended after the partial encoding.
    Full,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlayerLabel {
    NonCheater,
    Cheater,
}

impl PlayerLabel {
    pub fn is_cheater(self) -> bool {
        matches!(self, PlayerLabel::Cheater)
    }
}

impl std::fmt::Display for PlayerLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PlayerLabel::NonCheater => write!(f, "non_cheater"),
            PlayerLabel::Cheater => write!(f, "cheater"),
        }
    }
}

/// Result of one environment transition.
#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome<S, T> {
    pub next_state: S,
    pub reward: T,
    pub terminated: bool,
    pub truncated: bool,
}

/// One complete episode. `states[i]` is the state *before* `actions[i]`, so
/// all three sequences share one length.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord<T, S> {
    pub states: Vec<S>,
    pub actions: Vec<usize>,
    pub rewards: Vec<T>,
    /// Partial-mode policy encoding at each step, regardless of who played.
    pub noncheater_obs: Vec<Vec<T>>,
    pub length: usize,
    pub total_return: T,
    pub seed: u64,
    pub player_label: PlayerLabel,
}

impl<T: Scalar, S> EpisodeRecord<T, S> {
    /// Validates the structural invariants every completed episode satisfies.
    pub fn check(&self) -> Result<()> {
        if self.length == 0 {
            return Err(Error::Contract("episode has no transitions".into()));
        }
        if self.states.len() != self.length
            || self.actions.len() != self.length
            || self.rewards.len() != self.length
            || self.noncheater_obs.len() != self.length
        {
            return Err(Error::Contract("episode sequence lengths disagree".into()));
        }
        let total: T = self.rewards.iter().cloned().sum();
        if (total - self.total_return).abs() > T::fl(1e-9) {
            return Err(Error::Contract("total_return does not match reward sum".into()));
        }
        Ok(())
    }
}

/// Shape and dynamics of a game, independent of numeric precision: states,
/// action space, episode limits and encoding widths.
pub trait EnvSpec: Sync {
    type State: Clone + PartialEq + std::fmt::Debug + Send + Sync;

    fn name(&self) -> &'static str;
    fn action_count(&self) -> usize;
    /// Width of the flat policy encoding for the given observability.
    /// The partial encoding is always a prefix of the full one.
    fn obs_width(&self, mode: Observability) -> usize;
    /// Hard episode-length cap; reaching it forces truncation.
    fn max_len(&self) -> usize;
    /// Width of the label-blind detector encoding.
    fn detector_width(&self) -> usize;
    fn reset(&self, rng: &mut ChaCha8Rng) -> Result<Self::State>;
    fn is_terminal(&self, state: &Self::State) -> bool;
}

/// Numeric side of the game contract. Transitions are pure; all randomness is
/// consumed at reset (shuffles, placement) or during action sampling, never
/// inside `step`. The state transition itself never depends on `T`.
pub trait Environment<T: Scalar>: EnvSpec {
    fn step(&self, state: &Self::State, action: usize) -> Result<StepOutcome<Self::State, T>>;
    fn observe(&self, state: &Self::State, mode: Observability) -> Vec<T>;
    /// Label-blind, constant-length detector input for a finished episode.
    fn encode_detector(&self, episode: &EpisodeRecord<T, Self::State>) -> Vec<T>;
}

/// Per-step context a gated cheater needs to rebuild its loss graph later:
/// the frozen component policies' action distributions and the frozen value.
#[derive(Clone, Debug, PartialEq)]
pub struct GateCtx<T> {
    pub noncheater_probs: Vec<T>,
    pub cheater_probs: Vec<T>,
    pub frozen_value: T,
}

/// One acted step: what the policy chose and what it predicted.
#[derive(Clone, Debug, PartialEq)]
pub struct ActStep<T> {
    pub action: usize,
    pub logp: T,
    pub value: T,
    /// Interpolation weight, present only for gated policies.
    pub omega: Option<T>,
    /// Present only for gated policies.
    pub gate_ctx: Option<GateCtx<T>>,
}

/// Anything that can drive an episode.
pub trait ActingPolicy<T: Scalar>: Sync {
    fn act(&self, obs: &[T], rng: &mut ChaCha8Rng) -> ActStep<T>;
    /// Expected observation width, if the policy has a fixed one.
    fn input_width(&self) -> Option<usize> {
        None
    }
}

/// Samples an index from a probability vector using one uniform draw.
pub fn sample_categorical<T: Scalar>(probs: &[T], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rand::Rng::gen(rng);
    let u = T::fl(u);
    let mut acc = T::zero();
    for (i, p) in probs.iter().enumerate() {
        acc += *p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Episode plus the per-step policy outputs training needs.
#[derive(Clone, Debug, PartialEq)]
pub struct Rollout<T, S> {
    pub episode: EpisodeRecord<T, S>,
    /// Observation actually fed to the acting policy at each step.
    pub obs: Vec<Vec<T>>,
    pub steps: Vec<ActStep<T>>,
}

/// Plays one episode. Pure in (policy params, env config, seed).
pub fn run_episode<T, E, P>(
    policy: &P,
    env: &E,
    mode: Observability,
    label: PlayerLabel,
    seed: u64,
) -> Result<EpisodeRecord<T, E::State>>
where
    T: Scalar,
    E: Environment<T>,
    P: ActingPolicy<T>,
{
    play_episode(policy, env, mode, label, seed).map(|r| r.episode)
}

/// Plays one episode keeping the per-step policy outputs.
pub fn play_episode<T, E, P>(
    policy: &P,
    env: &E,
    mode: Observability,
    label: PlayerLabel,
    seed: u64,
) -> Result<Rollout<T, E::State>>
where
    T: Scalar,
    E: Environment<T>,
    P: ActingPolicy<T>,
{
    if let Some(w) = policy.input_width() {
        if w != env.obs_width(mode) {
            return Err(Error::Config(format!(
                "policy expects input width {w} but {} produces {} for {:?} observability",
                env.name(),
                env.obs_width(mode),
                mode
            )));
        }
    }
    let mut rng = rng_from_seed(seed);
    let mut state = env.reset(&mut rng)?;
    let mut episode = EpisodeRecord {
        states: Vec::new(),
        actions: Vec::new(),
        rewards: Vec::new(),
        noncheater_obs: Vec::new(),
        length: 0,
        total_return: T::zero(),
        seed,
        player_label: label,
    };
    let mut obs_log = Vec::new();
    let mut steps = Vec::new();
    while !env.is_terminal(&state) && episode.length < env.max_len() {
        let obs = env.observe(&state, mode);
        let act = policy.act(&obs, &mut rng);
        let outcome = env.step(&state, act.action)?;
        episode.noncheater_obs.push(env.observe(&state, Observability::Partial));
        episode.states.push(state);
        episode.actions.push(act.action);
        episode.rewards.push(outcome.reward);
        episode.total_return += outcome.reward;
        episode.length += 1;
        obs_log.push(obs);
        steps.push(act);
        state = outcome.next_state;
        if outcome.terminated || outcome.truncated {
            break;
        }
    }
    Ok(Rollout { episode, obs: obs_log, steps })
}

/// Collects `n` episodes with seeds `base_seed .. base_seed + n`.
///
/// The per-episode seed fully determines each episode, so any worker count
/// yields the same multiset; output is sorted by episode seed.
pub fn collect_rollouts<T, E, P>(
    policy: &P,
    env: &E,
    mode: Observability,
    label: PlayerLabel,
    base_seed: u64,
    n: usize,
    workers: usize,
) -> Result<Vec<Rollout<T, E::State>>>
where
    T: Scalar,
    E: Environment<T>,
    P: ActingPolicy<T>,
{
    if n == 0 {
        return Err(Error::Contract("rollout collection needs at least one episode".into()));
    }
    if workers == 0 {
        return Err(Error::Config("worker count must be at least 1".into()));
    }
    let seeds: Vec<u64> = (0..n as u64).map(|i| base_seed.wrapping_add(i)).collect();
    let mut rollouts = if workers == 1 {
        seeds
            .iter()
            .map(|&s| play_episode(policy, env, mode, label, s))
            .collect::<Result<Vec<_>>>()?
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
        pool.install(|| {
            seeds
                .par_iter()
                .map(|&s| play_episode(policy, env, mode, label, s))
                .collect::<Result<Vec<_>>>()
        })?
    };
    rollouts.sort_by_key(|r| r.episode.seed);
    Ok(rollouts)
}

/// JSONL episode dataset row. Field order is part of the format.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeJsonRecord<T> {
    pub env: String,
    pub label: PlayerLabel,
    pub seed: u64,
    pub actions: Vec<usize>,
    pub rewards: Vec<T>,
    pub length: usize,
    #[serde(rename = "return")]
    pub total_return: T,
    pub encoded_detector_input: Vec<T>,
}

impl<T: Scalar> EpisodeJsonRecord<T> {
    pub fn from_episode<E>(env: &E, episode: &EpisodeRecord<T, E::State>) -> Self
    where
        E: Environment<T>,
    {
        EpisodeJsonRecord {
            env: env.name().to_string(),
            label: episode.player_label,
            seed: episode.seed,
            actions: episode.actions.clone(),
            rewards: episode.rewards.clone(),
            length: episode.length,
            total_return: episode.total_return,
            encoded_detector_input: env.encode_detector(episode),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Game {
    Gridworld,
    Blackjack,
}

impl std::fmt::Display for Game {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Game::Gridworld => write!(f, "gridworld"),
            Game::Blackjack => write!(f, "blackjack"),
        }
    }
}

fn default_discount() -> f64 {
    1.0
}

/// Environment selection plus the invariants shared by both games.
///
/// The discount is undiscounted by contract; the field exists so configs that
/// try to change it fail loudly instead of silently drifting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub game: Game,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_discount")]
    pub discount: f64,
    #[serde(default)]
    pub gridworld: Option<gridworld::GridConfig>,
    #[serde(default)]
    pub blackjack: Option<blackjack::BlackjackConfig>,
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.discount != 1.0 {
            return Err(Error::Config(format!(
                "episodes are undiscounted; discount must be exactly 1, got {}",
                self.discount
            )));
        }
        assert!(self.discount == 1.0);
        match self.game {
            Game::Gridworld => self
                .gridworld
                .as_ref()
                .map(|c| c.validate())
                .unwrap_or_else(|| Err(Error::Config("missing [env.gridworld] section".into()))),
            Game::Blackjack => self
                .blackjack
                .as_ref()
                .map(|c| c.validate())
                .unwrap_or_else(|| Err(Error::Config("missing [env.blackjack] section".into()))),
        }
    }
}

/// Scripted policies for probing environments, replaying recorded episodes,
/// and anchoring baselines in tests and the CLI.
pub mod scripted {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    /// Always plays the same action.
    pub struct FixedAction(pub usize);

    impl<T: Scalar> ActingPolicy<T> for FixedAction {
        fn act(&self, _obs: &[T], _rng: &mut ChaCha8Rng) -> ActStep<T> {
            ActStep { action: self.0, logp: T::zero(), value: T::zero(), omega: None, gate_ctx: None }
        }
    }

    /// Uniform random over `n` actions.
    pub struct UniformRandom(pub usize);

    impl<T: Scalar> ActingPolicy<T> for UniformRandom {
        fn act(&self, _obs: &[T], rng: &mut ChaCha8Rng) -> ActStep<T> {
            let probs = vec![T::one() / T::from_usize_(self.0); self.0];
            let action = sample_categorical(&probs, rng);
            ActStep {
                action,
                logp: probs[action].ln(),
                value: T::zero(),
                omega: None,
                gate_ctx: None,
            }
        }
    }

    /// Replays a fixed action list, cycling if the episode runs longer.
    /// Holds a cursor, so each instance should drive a single episode.
    pub struct ActionSequence {
        actions: Vec<usize>,
        cursor: AtomicUsize,
    }

    impl ActionSequence {
        pub fn new(actions: Vec<usize>) -> Self {
            assert!(!actions.is_empty(), "an action sequence cannot be empty");
            ActionSequence { actions, cursor: AtomicUsize::new(0) }
        }
    }

    impl<T: Scalar> ActingPolicy<T> for ActionSequence {
        fn act(&self, _obs: &[T], _rng: &mut ChaCha8Rng) -> ActStep<T> {
            let i = self.cursor.fetch_add(1, Ordering::Relaxed);
            ActStep {
                action: self.actions[i % self.actions.len()],
                logp: T::zero(),
                value: T::zero(),
                omega: None,
                gate_ctx: None,
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::scripted::*;
    use super::*;
    use crate::env::blackjack::{Blackjack, BlackjackConfig};
    use crate::env::gridworld::{GridConfig, Gridworld};

    fn blackjack() -> Blackjack {
        Blackjack::new(BlackjackConfig::default()).unwrap()
    }

    fn gridworld() -> Gridworld {
        Gridworld::new(GridConfig::default()).unwrap()
    }

    #[test]
    fn stand_only_blackjack_episode_has_one_step() {
        let env = blackjack();
        let ep: EpisodeRecord<f64, _> = run_episode(
            &FixedAction(blackjack::action::STAND),
            &env,
            Observability::Partial,
            PlayerLabel::NonCheater,
            123,
        )
        .unwrap();
        assert_eq!(ep.length, 1);
        assert_eq!(ep.player_label, PlayerLabel::NonCheater);
        ep.check().unwrap();
    }

    #[test]
    fn same_seed_reproduces_episode_bit_for_bit() {
        let env = blackjack();
        let pol = UniformRandom(env.action_count());
        for seed in [0u64, 7, 991] {
            let a: EpisodeRecord<f64, _> =
                run_episode(&pol, &env, Observability::Partial, PlayerLabel::NonCheater, seed)
                    .unwrap();
            let b =
                run_episode(&pol, &env, Observability::Partial, PlayerLabel::NonCheater, seed)
                    .unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn spinning_in_place_truncates_at_max_len_with_zero_return() {
        let env = gridworld();
        let ep: EpisodeRecord<f64, _> = run_episode(
            &FixedAction(gridworld::action::TURN_LEFT),
            &env,
            Observability::Partial,
            PlayerLabel::NonCheater,
            5,
        )
        .unwrap();
        assert_eq!(ep.length, env.max_len());
        assert_eq!(ep.total_return, 0.0);
    }

    #[test]
    fn collection_assigns_consecutive_seeds() {
        let env = blackjack();
        let pol = UniformRandom(env.action_count());
        let rollouts: Vec<Rollout<f64, _>> = collect_rollouts(
            &pol,
            &env,
            Observability::Partial,
            PlayerLabel::NonCheater,
            100,
            4,
            1,
        )
        .unwrap();
        let seeds: Vec<u64> = rollouts.iter().map(|r| r.episode.seed).collect();
        assert_eq!(seeds, vec![100, 101, 102, 103]);
    }

    #[test]
    fn parallel_collection_matches_serial_collection() {
        let env = gridworld();
        let pol = UniformRandom(env.action_count());
        let serial: Vec<Rollout<f64, _>> = collect_rollouts(
            &pol,
            &env,
            Observability::Full,
            PlayerLabel::Cheater,
            40,
            6,
            1,
        )
        .unwrap();
        let parallel = collect_rollouts(
            &pol,
            &env,
            Observability::Full,
            PlayerLabel::Cheater,
            40,
            6,
            4,
        )
        .unwrap();
        assert_eq!(serial, parallel);
    }

    #[test]
    fn empty_collection_is_rejected() {
        let env = blackjack();
        let pol = UniformRandom(env.action_count());
        let err = collect_rollouts::<f64, _, _>(
            &pol,
            &env,
            Observability::Partial,
            PlayerLabel::NonCheater,
            0,
            0,
            1,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn json_record_field_order_is_stable() {
        let env = blackjack();
        let ep: EpisodeRecord<f64, _> = run_episode(
            &FixedAction(blackjack::action::STAND),
            &env,
            Observability::Partial,
            PlayerLabel::Cheater,
            9,
        )
        .unwrap();
        let rec = EpisodeJsonRecord::from_episode(&env, &ep);
        let line = serde_json::to_string(&rec).unwrap();
        let order = [
            "\"env\"",
            "\"label\"",
            "\"seed\"",
            "\"actions\"",
            "\"rewards\"",
            "\"length\"",
            "\"return\"",
            "\"encoded_detector_input\"",
        ];
        let mut last = 0;
        for key in order {
            let pos = line.find(key).unwrap_or_else(|| panic!("missing {key}"));
            assert!(pos >= last, "field {key} out of order in {line}");
            last = pos;
        }
        let parsed: EpisodeJsonRecord<f64> = serde_json::from_str(&line).unwrap();
        assert_eq!(parsed, rec);
    }

    #[test]
    fn discount_other_than_one_is_rejected() {
        let cfg = EnvConfig {
            game: Game::Blackjack,
            seed: 0,
            discount: 0.99,
            gridworld: None,
            blackjack: Some(BlackjackConfig::default()),
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let ok = EnvConfig { discount: 1.0, ..cfg };
        ok.validate().unwrap();
    }

    #[test]
    fn partial_encoding_is_prefix_of_full_encoding() {
        // The gated cheater relies on this to feed its frozen non-cheater.
        let gw = gridworld();
        let bj = blackjack();
        let mut rng = rng_from_seed(3);
        let s = gw.reset(&mut rng).unwrap();
        let partial: Vec<f64> = gw.observe(&s, Observability::Partial);
        let full: Vec<f64> = gw.observe(&s, Observability::Full);
        assert_eq!(&full[..partial.len()], partial.as_slice());
        let mut rng = rng_from_seed(3);
        let s = bj.reset(&mut rng).unwrap();
        let partial: Vec<f64> = bj.observe(&s, Observability::Partial);
        let full: Vec<f64> = bj.observe(&s, Observability::Full);
        assert_eq!(&full[..partial.len()], partial.as_slice());
    }
}
