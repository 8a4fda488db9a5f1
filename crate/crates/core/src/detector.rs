//! Trajectory classifiers: a learned network over the environment's episode
//! encoding, plus two logistic baselines keyed on trajectory length and
//! episode return. All three train with binary cross-entropy on labeled
//! episode datasets; the pretraining loop keeps the lowest-validation-loss
//! checkpoint.

use crate::adam::Adam;
use crate::env::{rng_from_seed, EpisodeRecord, Environment, PlayerLabel};
use crate::error::{Error, Result};
use crate::metrics::{auroc, average_precision};
use crate::nn::Mlp;
use crate::scalar::Scalar;
use crate::tape::{sigmoid, Tape, Var};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

/// Scores stay inside `[CLAMP, 1 - CLAMP]` so no downstream logarithm
/// (cross-entropy or shaped reward) can reach minus infinity when the
/// classifier saturates.
pub const SCORE_CLAMP: f64 = 1e-6;

pub fn clamp_probability<T: Scalar>(p: T) -> T {
    let lo = T::fl(SCORE_CLAMP);
    let hi = T::one() - T::fl(SCORE_CLAMP);
    p.max(lo).min(hi)
}

/// One scoring input: the episode's feature encoding plus the two summary
/// statistics the logistic variants read.
#[derive(Clone, Debug, PartialEq)]
pub struct DetectorRecord<T> {
    pub input: Vec<T>,
    pub length: usize,
    pub episode_return: T,
    /// 0 for the non-cheater, 1 for the cheater.
    pub label: u8,
}

/// Extracts a scoring record from a finished episode. The feature encoding
/// carries no label information; the label rides alongside for training.
pub fn record_from_episode<T, E>(env: &E, episode: &EpisodeRecord<T, E::State>) -> DetectorRecord<T>
where
    T: Scalar,
    E: Environment<T>,
{
    DetectorRecord {
        input: env.encode_detector(episode),
        length: episode.length,
        episode_return: episode.total_return,
        label: match episode.player_label {
            PlayerLabel::NonCheater => 0,
            PlayerLabel::Cheater => 1,
        },
    }
}

/// A trajectory → cheater-probability classifier.
///
/// The logistic variants score `sigmoid(w * (x - b))` where `x` is the
/// trajectory length or the episode return. `w` is the *inverse* of the
/// logistic scale (`w = 1/t` for scale `t`): the inverse form has no
/// singularity at zero, so both parameters can be trained by gradient
/// descent and the orientation (whether long or short trajectories look
/// suspicious) is learnable through the sign of `w`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "", rename_all = "snake_case")]
pub enum DetectorModel<T: Scalar> {
    /// Fully-connected network over the env's episode encoding; the single
    /// output passes through a sigmoid.
    Trajectory(Mlp<T>),
    /// `params = [midpoint b, inverse scale w]` applied to trajectory length.
    Length { params: Vec<T> },
    /// `params = [midpoint b, inverse scale w]` applied to episode return.
    Reward { params: Vec<T> },
}

impl<T: Scalar> DetectorModel<T> {
    pub fn trajectory(input: usize, hidden: Vec<usize>, seed: u64) -> Self {
        DetectorModel::Trajectory(Mlp::init(input, hidden, 1, 1.0, seed))
    }

    pub fn length(midpoint: T, inverse_scale: T) -> Self {
        DetectorModel::Length { params: vec![midpoint, inverse_scale] }
    }

    pub fn reward(midpoint: T, inverse_scale: T) -> Self {
        DetectorModel::Reward { params: vec![midpoint, inverse_scale] }
    }

    /// Builds a length detector from the textbook logistic parametrization
    /// `1 / (1 + exp(-(l - b) / t))` with scale `t != 0`.
    pub fn length_with_scale(midpoint: T, scale: T) -> Result<Self> {
        if scale == T::zero() {
            return Err(Error::Config("logistic scale must be nonzero".into()));
        }
        Ok(Self::length(midpoint, T::one() / scale))
    }

    pub fn reward_with_scale(midpoint: T, scale: T) -> Result<Self> {
        if scale == T::zero() {
            return Err(Error::Config("logistic scale must be nonzero".into()));
        }
        Ok(Self::reward(midpoint, T::one() / scale))
    }

    pub fn variant_name(&self) -> &'static str {
        match self {
            DetectorModel::Trajectory(_) => "trajectory",
            DetectorModel::Length { .. } => "length",
            DetectorModel::Reward { .. } => "reward",
        }
    }

    /// Feature width the trajectory variant expects; `None` for the scalar
    /// detectors, which ignore the encoding.
    pub fn input_width(&self) -> Option<usize> {
        match self {
            DetectorModel::Trajectory(mlp) => Some(mlp.input),
            _ => None,
        }
    }

    pub fn params(&self) -> &[T] {
        match self {
            DetectorModel::Trajectory(mlp) => &mlp.params,
            DetectorModel::Length { params } | DetectorModel::Reward { params } => params,
        }
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        match self {
            DetectorModel::Trajectory(mlp) => &mut mlp.params,
            DetectorModel::Length { params } | DetectorModel::Reward { params } => params,
        }
    }

    /// Cheater probability for one episode, clamped away from {0, 1}.
    pub fn score(&self, rec: &DetectorRecord<T>) -> T {
        let raw = match self {
            DetectorModel::Trajectory(mlp) => {
                assert_eq!(rec.input.len(), mlp.input, "encoding width mismatch");
                sigmoid(mlp.infer(&rec.input)[0])
            }
            DetectorModel::Length { params } => {
                sigmoid(params[1] * (T::from_usize_(rec.length) - params[0]))
            }
            DetectorModel::Reward { params } => {
                sigmoid(params[1] * (rec.episode_return - params[0]))
            }
        };
        clamp_probability(raw)
    }

    /// Differentiable score on `tape` (whose parameter buffer must be this
    /// model's `params()`), clamped like [`score`](Self::score).
    pub fn score_graph<'p>(&self, tape: &mut Tape<'p, T>, rec: &DetectorRecord<T>) -> Var {
        let raw = match self {
            DetectorModel::Trajectory(mlp) => {
                let x = tape.constant(&rec.input);
                let out = mlp.graph(tape, x);
                let logit = tape.gather(out, 0);
                tape.sigmoid(logit)
            }
            DetectorModel::Length { .. } | DetectorModel::Reward { .. } => {
                let x = match self {
                    DetectorModel::Length { .. } => T::from_usize_(rec.length),
                    _ => rec.episode_return,
                };
                let p = tape.param_slice(0, 2);
                let b = tape.gather(p, 0);
                let w = tape.gather(p, 1);
                let xv = tape.scalar_constant(x);
                let diff = tape.sub(xv, b);
                let z = tape.mul(diff, w);
                tape.sigmoid(z)
            }
        };
        tape.clamp(raw, T::fl(SCORE_CLAMP), T::one() - T::fl(SCORE_CLAMP))
    }
}

/// Binary cross-entropy of one already-clamped score against its label.
fn bce_term<T: Scalar>(score: T, label: u8) -> T {
    if label == 1 {
        -score.ln()
    } else {
        -(T::one() - score).ln()
    }
}

/// Mean binary cross-entropy of the model over `records` (forward only).
pub fn bce_loss<T: Scalar>(model: &DetectorModel<T>, records: &[DetectorRecord<T>]) -> T {
    assert!(!records.is_empty(), "loss over an empty record set");
    let sum: T = records.iter().map(|r| bce_term(model.score(r), r.label)).sum();
    sum / T::from_usize_(records.len())
}

/// Gradient of [`bce_loss`] with respect to the model parameters.
pub fn bce_gradient<T: Scalar>(model: &DetectorModel<T>, records: &[DetectorRecord<T>]) -> Vec<T> {
    let mut grad = vec![T::zero(); model.params().len()];
    let scale = T::one() / T::from_usize_(records.len());
    let mut tape = Tape::new(model.params());
    for rec in records {
        let d = model.score_graph(&mut tape, rec);
        let loss = if rec.label == 1 {
            let logd = tape.log(d);
            tape.ax_plus_b(logd, -T::one(), T::zero())
        } else {
            let one_minus = tape.ax_plus_b(d, -T::one(), T::one());
            let log1m = tape.log(one_minus);
            tape.ax_plus_b(log1m, -T::one(), T::zero())
        };
        tape.backward_scaled(loss, scale, &mut grad);
        tape.clear();
    }
    grad
}

/// One Adam step on the minibatch's mean cross-entropy; returns the loss at
/// the pre-step parameters. Fails without touching the parameters if the
/// gradient goes non-finite.
pub fn bce_train_step<T: Scalar>(
    model: &mut DetectorModel<T>,
    batch: &[DetectorRecord<T>],
    opt: &mut Adam<T>,
) -> Result<T> {
    if batch.is_empty() {
        return Err(Error::Contract("detector update on an empty minibatch".into()));
    }
    let loss = bce_loss(model, batch);
    let grad = bce_gradient(model, batch);
    if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::Numeric("non-finite detector gradient".into()));
    }
    opt.step(model.params_mut(), &grad);
    Ok(loss)
}

/// Ranking quality of the model over labeled records: (AP, AUROC).
pub fn evaluate_detector<T: Scalar>(
    model: &DetectorModel<T>,
    records: &[DetectorRecord<T>],
) -> Result<(T, T)> {
    let scores: Vec<T> = records.iter().map(|r| model.score(r)).collect();
    let labels: Vec<bool> = records.iter().map(|r| r.label == 1).collect();
    Ok((average_precision(&scores, &labels)?, auroc(&scores, &labels)?))
}

/// Per-class record counts for the train/valid/test splits.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub valid: usize,
    pub test: usize,
}

impl Default for SplitSizes {
    fn default() -> Self {
        SplitSizes { train: 2000, valid: 400, test: 400 }
    }
}

impl SplitSizes {
    pub fn per_class(&self) -> usize {
        self.train + self.valid + self.test
    }

    pub fn validate(&self) -> Result<()> {
        if self.train == 0 || self.valid == 0 || self.test == 0 {
            return Err(Error::Config("every dataset split needs records".into()));
        }
        Ok(())
    }
}

/// Seed mixer applied to the dataset base seed before splitting, keeping the
/// balance shuffle stream disjoint from the rollout seed blocks.
pub const BALANCE_SALT: u64 = 0xDA7A_5E7;

/// Shuffles each class independently, slices off the per-class split sizes,
/// and interleaves the classes so every split is exactly balanced. Generic
/// over the record representation so encoded scoring records and raw episode
/// JSON rows split identically under the same seed.
pub fn balanced_splits<R>(
    cheater: Vec<R>,
    noncheater: Vec<R>,
    sizes: &SplitSizes,
    seed: u64,
) -> Result<[Vec<R>; 3]> {
    sizes.validate()?;
    let need = sizes.per_class();
    if cheater.len() < need || noncheater.len() < need {
        return Err(Error::Contract(format!(
            "need {need} records per class, got {} cheater / {} non-cheater",
            cheater.len(),
            noncheater.len()
        )));
    }
    let mut rng = rng_from_seed(seed);
    let mut cheater = cheater;
    let mut noncheater = noncheater;
    cheater.shuffle(&mut rng);
    noncheater.shuffle(&mut rng);
    let mut take = |n: usize, c: &mut Vec<R>, nc: &mut Vec<R>| {
        let mut split: Vec<R> = Vec::with_capacity(2 * n);
        for _ in 0..n {
            split.push(c.pop().unwrap());
            split.push(nc.pop().unwrap());
        }
        split.shuffle(&mut rng);
        split
    };
    let train = take(sizes.train, &mut cheater, &mut noncheater);
    let valid = take(sizes.valid, &mut cheater, &mut noncheater);
    let test = take(sizes.test, &mut cheater, &mut noncheater);
    Ok([train, valid, test])
}

/// Class-balanced train/valid/test splits of labeled scoring records.
#[derive(Clone, Debug)]
pub struct LabeledDataset<T> {
    pub train: Vec<DetectorRecord<T>>,
    pub valid: Vec<DetectorRecord<T>>,
    pub test: Vec<DetectorRecord<T>>,
}

impl<T: Scalar> LabeledDataset<T> {
    /// Splits via [`balanced_splits`] after checking that the class labels
    /// agree with the vectors they arrived in.
    pub fn balanced(
        cheater: Vec<DetectorRecord<T>>,
        noncheater: Vec<DetectorRecord<T>>,
        sizes: &SplitSizes,
        seed: u64,
    ) -> Result<Self> {
        if cheater.iter().any(|r| r.label != 1) || noncheater.iter().any(|r| r.label != 0) {
            return Err(Error::Contract("record labels disagree with their class".into()));
        }
        let [train, valid, test] = balanced_splits(cheater, noncheater, sizes, seed)?;
        Ok(LabeledDataset { train, valid, test })
    }

    pub fn class_counts(split: &[DetectorRecord<T>]) -> (usize, usize) {
        let pos = split.iter().filter(|r| r.label == 1).count();
        (split.len() - pos, pos)
    }
}

/// Rolls out both policies and encodes their episodes into balanced splits.
/// The non-cheater plays from partial observations, the cheater from full
/// ones; each class gets its own seed block.
pub fn build_dataset<T, E, Pc, Pn>(
    env: &E,
    cheater_policy: &Pc,
    noncheater_policy: &Pn,
    sizes: &SplitSizes,
    base_seed: u64,
    workers: usize,
) -> Result<LabeledDataset<T>>
where
    T: Scalar,
    E: Environment<T>,
    Pc: crate::env::ActingPolicy<T>,
    Pn: crate::env::ActingPolicy<T>,
{
    use crate::env::{collect_rollouts, Observability};
    let n = sizes.per_class();
    let non = collect_rollouts(
        noncheater_policy,
        env,
        Observability::Partial,
        PlayerLabel::NonCheater,
        base_seed,
        n,
        workers,
    )?;
    let che = collect_rollouts(
        cheater_policy,
        env,
        Observability::Full,
        PlayerLabel::Cheater,
        base_seed.wrapping_add(n as u64),
        n,
        workers,
    )?;
    let to_records = |rollouts: &[crate::env::Rollout<T, E::State>]| {
        rollouts.iter().map(|r| record_from_episode(env, &r.episode)).collect::<Vec<_>>()
    };
    LabeledDataset::balanced(to_records(&che), to_records(&non), sizes, base_seed ^ BALANCE_SALT)
}

fn default_epochs() -> usize {
    100
}
fn default_minibatch() -> usize {
    8
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
fn default_hidden() -> Vec<usize> {
    vec![64, 64]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectorTrainConfig {
    /// Hidden widths of the trajectory network (ignored by the logistic
    /// variants).
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
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
}

impl Default for DetectorTrainConfig {
    fn default() -> Self {
        DetectorTrainConfig {
            hidden: default_hidden(),
            epochs: default_epochs(),
            minibatch: default_minibatch(),
            lr: default_lr(),
            adam_beta1: default_beta1(),
            adam_beta2: default_beta2(),
        }
    }
}

impl DetectorTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::Config("trajectory net needs non-empty hidden layers".into()));
        }
        if self.epochs == 0 || self.minibatch == 0 {
            return Err(Error::Config("epochs and minibatch must be positive".into()));
        }
        if self.lr <= 0.0 {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        Ok(())
    }

    pub fn optimizer<T: Scalar>(&self, n_params: usize) -> Adam<T> {
        Adam::new(n_params, T::fl(self.lr), T::fl(self.adam_beta1), T::fl(self.adam_beta2))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectorCurvePoint {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_loss: f64,
}

#[derive(Clone, Debug)]
pub struct DetectorPretrainResult<T: Scalar> {
    /// Checkpoint with the lowest validation loss.
    pub model: DetectorModel<T>,
    pub best_valid_loss: T,
    pub curve: Vec<DetectorCurvePoint>,
    pub test_loss: T,
    pub test_ap: T,
    pub test_auroc: T,
}

/// Trains `model` with shuffled-minibatch cross-entropy for `cfg.epochs`
/// passes over the train split, returning the lowest-validation-loss
/// checkpoint together with its held-out test metrics.
pub fn pretrain_detector<T: Scalar>(
    mut model: DetectorModel<T>,
    dataset: &LabeledDataset<T>,
    cfg: &DetectorTrainConfig,
    seed: u64,
) -> Result<DetectorPretrainResult<T>> {
    cfg.validate()?;
    if dataset.train.is_empty() || dataset.valid.is_empty() || dataset.test.is_empty() {
        return Err(Error::Contract("detector pretraining needs all three splits".into()));
    }
    let mut opt = cfg.optimizer::<T>(model.params().len());
    let mut rng = rng_from_seed(seed);
    let mut best = model.clone();
    let mut best_valid_loss = bce_loss(&model, &dataset.valid);
    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut indices: Vec<usize> = (0..dataset.train.len()).collect();
    for epoch in 0..cfg.epochs {
        indices.shuffle(&mut rng);
        let mut train_loss = T::zero();
        let mut batches = 0usize;
        for mb in indices.chunks(cfg.minibatch) {
            let batch: Vec<DetectorRecord<T>> =
                mb.iter().map(|&i| dataset.train[i].clone()).collect();
            train_loss += bce_train_step(&mut model, &batch, &mut opt)?;
            batches += 1;
        }
        let valid_loss = bce_loss(&model, &dataset.valid);
        if valid_loss < best_valid_loss {
            best_valid_loss = valid_loss;
            best = model.clone();
        }
        curve.push(DetectorCurvePoint {
            epoch,
            train_loss: (train_loss / T::from_usize_(batches)).to_f64_(),
            valid_loss: valid_loss.to_f64_(),
        });
    }
    let test_loss = bce_loss(&best, &dataset.test);
    let (test_ap, test_auroc) = evaluate_detector(&best, &dataset.test)?;
    Ok(DetectorPretrainResult { model: best, best_valid_loss, curve, test_loss, test_ap, test_auroc })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    fn rec(input: Vec<f64>, length: usize, episode_return: f64, label: u8) -> DetectorRecord<f64> {
        DetectorRecord { input, length, episode_return, label }
    }

    #[test]
    fn length_score_at_the_midpoint_is_half() {
        for w in [0.3, -2.0, 11.0] {
            let d = DetectorModel::length(7.0, w);
            assert_eq!(d.score(&rec(vec![], 7, 0.0, 0)), 0.5);
        }
    }

    #[test]
    fn length_score_matches_logistic_arithmetic() {
        // scale -1, input five below the midpoint: 1 / (1 + e^{-5})
        let d = DetectorModel::<f64>::length_with_scale(7.0, -1.0).unwrap();
        let got = d.score(&rec(vec![], 2, 0.0, 1));
        assert_relative_eq!(got, 1.0 / (1.0 + (-5.0f64).exp()), max_relative = 1e-14);
        assert_relative_eq!(got, 0.9933, max_relative = 1e-4);
        assert!(DetectorModel::<f64>::length_with_scale(7.0, 0.0).is_err());
    }

    #[test]
    fn reward_detector_reads_the_return() {
        let d = DetectorModel::reward(0.0, 3.0);
        let hi = d.score(&rec(vec![], 5, 1.0, 1));
        let lo = d.score(&rec(vec![], 5, -1.0, 0));
        assert_relative_eq!(hi, sigmoid(3.0), max_relative = 1e-14);
        assert_relative_eq!(lo, sigmoid(-3.0), max_relative = 1e-14);
    }

    #[test]
    fn zero_weight_trajectory_detector_scores_half_everywhere() {
        let d = DetectorModel::Trajectory(Mlp::<f64>::zeros(6, vec![8], 1));
        let mut rng = rng_from_seed(3);
        for _ in 0..10 {
            let input: Vec<f64> = (0..6).map(|_| rng.gen_range(-2.0..2.0)).collect();
            assert_eq!(d.score(&rec(input, 4, 0.7, 1)), 0.5);
        }
    }

    #[test]
    fn scores_are_clamped_inside_the_open_interval() {
        let d = DetectorModel::length(0.0, 1e6);
        assert_eq!(d.score(&rec(vec![], 100, 0.0, 1)), 1.0 - 1e-6);
        let flipped = DetectorModel::length(200.0, 1e6);
        assert_eq!(flipped.score(&rec(vec![], 100, 0.0, 0)), 1e-6);
    }

    #[test]
    fn logistic_scores_are_monotone_with_the_sign_of_the_scale() {
        let rising = DetectorModel::length(8.0, 0.7);
        let falling = DetectorModel::length(8.0, -0.7);
        let scores = |d: &DetectorModel<f64>| {
            (0..20).map(|l| d.score(&rec(vec![], l, 0.0, 0))).collect::<Vec<_>>()
        };
        let up = scores(&rising);
        let down = scores(&falling);
        for i in 1..up.len() {
            assert!(up[i] > up[i - 1]);
            assert!(down[i] < down[i - 1]);
        }
    }

    #[test]
    fn coin_flip_detector_loss_is_ln_two() {
        let d = DetectorModel::Trajectory(Mlp::<f64>::zeros(3, vec![4], 1));
        let records =
            vec![rec(vec![0.1, 0.2, 0.3], 5, 1.0, 1), rec(vec![0.9, 0.1, 0.4], 9, -0.5, 0)];
        assert_relative_eq!(bce_loss(&d, &records), 2.0f64.ln(), max_relative = 1e-15);
    }

    #[test]
    fn near_certain_detector_loss_is_near_zero() {
        // Calibrate the logistic so the cheater length scores 0.999 and the
        // non-cheater length 0.001; the mean loss is then -ln(0.999).
        let w = -(999.0f64.ln()) / 3.0;
        let d = DetectorModel::length(7.0, w);
        let records = vec![rec(vec![], 4, 0.0, 1), rec(vec![], 10, 0.0, 0)];
        assert_relative_eq!(d.score(&records[0]), 0.999, max_relative = 1e-12);
        let loss = bce_loss(&d, &records);
        assert_relative_eq!(loss, -(0.999f64.ln()), max_relative = 1e-12);
        assert!((loss - 0.001).abs() < 1e-5);
    }

    #[test]
    fn bce_gradient_matches_finite_differences() {
        let mut rng = rng_from_seed(41);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let records: Vec<DetectorRecord<f64>> = (0..12)
            .map(|i| {
                let input: Vec<f64> = (0..5).map(|_| normal.sample(&mut rng)).collect();
                rec(input, 3 + (i % 9), normal.sample(&mut rng), (i % 2) as u8)
            })
            .collect();
        let models = [
            DetectorModel::trajectory(5, vec![6], 13),
            DetectorModel::length(6.0, -0.4),
            DetectorModel::reward(0.2, 1.3),
        ];
        for model in models {
            let grad = bce_gradient(&model, &records);
            let mut m = model.clone();
            for i in 0..m.params().len() {
                let orig = m.params()[i];
                let h = 1e-5 * orig.abs().max(1.0);
                m.params_mut()[i] = orig + h;
                let up = bce_loss(&m, &records);
                m.params_mut()[i] = orig - h;
                let down = bce_loss(&m, &records);
                m.params_mut()[i] = orig;
                let fd = (up - down) / (2.0 * h);
                let denom = grad[i].abs().max(fd.abs()).max(1e-4);
                assert!(
                    (grad[i] - fd).abs() / denom < 1e-4,
                    "{} param {i}: analytic {} vs fd {fd}",
                    model.variant_name(),
                    grad[i]
                );
            }
        }
    }

    #[test]
    fn train_step_reduces_loss_and_rejects_empty_batches() {
        let mut model = DetectorModel::trajectory(4, vec![8], 7);
        let cfg = DetectorTrainConfig::default();
        let mut opt = cfg.optimizer::<f64>(model.params().len());
        let records = vec![
            rec(vec![1.0, 1.0, 0.5, 0.0], 3, 1.0, 1),
            rec(vec![-1.0, -0.5, 0.0, 1.0], 9, -0.5, 0),
        ];
        let first = bce_train_step(&mut model, &records, &mut opt).unwrap();
        let mut last = first;
        for _ in 0..200 {
            last = bce_train_step(&mut model, &records, &mut opt).unwrap();
        }
        assert!(last < first, "loss should fall on a fixed batch: {first} -> {last}");
        assert!(bce_train_step(&mut model, &[], &mut opt).is_err());
    }

    /// Two shifted Gaussian clouds with correlated length/return gaps, so
    /// every detector variant has signal to find.
    fn synthetic_dataset(sizes: &SplitSizes, seed: u64, shuffle_labels: bool) -> LabeledDataset<f64> {
        let mut rng = rng_from_seed(seed);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let n = sizes.per_class();
        let mut make = |label: u8| -> Vec<DetectorRecord<f64>> {
            (0..n)
                .map(|_| {
                    let shift = if label == 1 { 0.8 } else { -0.8 };
                    let input: Vec<f64> =
                        (0..8).map(|_| normal.sample(&mut rng) + shift).collect();
                    let length =
                        if label == 1 { rng.gen_range(3..7) } else { rng.gen_range(8..13) };
                    let ret = normal.sample(&mut rng) * 0.3
                        + if label == 1 { 1.0 } else { -0.5 };
                    rec(input, length, ret, label)
                })
                .collect()
        };
        let mut cheater = make(1);
        let mut noncheater = make(0);
        if shuffle_labels {
            // Swap class membership of half the records at random while
            // keeping the label fields consistent with their new class.
            let mut pool: Vec<DetectorRecord<f64>> =
                cheater.drain(..).chain(noncheater.drain(..)).collect();
            pool.shuffle(&mut rng);
            for (i, r) in pool.iter_mut().enumerate() {
                r.label = (i % 2) as u8;
            }
            cheater = pool.iter().filter(|r| r.label == 1).cloned().collect();
            noncheater = pool.iter().filter(|r| r.label == 0).cloned().collect();
        }
        LabeledDataset::balanced(cheater, noncheater, sizes, seed ^ 0xF00D).unwrap()
    }

    #[test]
    fn balanced_splits_have_equal_class_counts() {
        let sizes = SplitSizes { train: 32, valid: 8, test: 8 };
        let ds = synthetic_dataset(&sizes, 11, false);
        for (split, n) in [(&ds.train, 32), (&ds.valid, 8), (&ds.test, 8)] {
            let (neg, pos) = LabeledDataset::class_counts(split);
            assert_eq!((neg, pos), (n, n));
        }
        // insufficient records per class
        let few = vec![rec(vec![], 3, 0.0, 1); 10];
        let many = vec![rec(vec![], 9, 0.0, 0); 100];
        assert!(LabeledDataset::balanced(few, many, &sizes, 0).is_err());
    }

    #[test]
    fn every_variant_separates_the_synthetic_classes() {
        let sizes = SplitSizes { train: 96, valid: 32, test: 64 };
        let ds = synthetic_dataset(&sizes, 21, false);
        let cfg = DetectorTrainConfig { epochs: 40, ..DetectorTrainConfig::default() };
        let inits = [
            DetectorModel::trajectory(8, vec![16], 5),
            DetectorModel::length(0.0, 0.0),
            DetectorModel::reward(0.0, 0.0),
        ];
        for init in inits {
            let name = init.variant_name();
            let out = pretrain_detector(init, &ds, &cfg, 17).unwrap();
            assert!(
                out.test_auroc > 0.9,
                "{name} detector should separate the clouds, AUROC {}",
                out.test_auroc
            );
            assert!(out.test_ap > 0.9, "{name} AP {}", out.test_ap);
        }
    }

    #[test]
    fn learned_length_detector_orients_toward_short_trajectories() {
        // Cheater lengths are drawn strictly shorter, so the trained inverse
        // scale must come out negative.
        let sizes = SplitSizes { train: 96, valid: 32, test: 32 };
        let ds = synthetic_dataset(&sizes, 29, false);
        let cfg = DetectorTrainConfig { epochs: 40, ..DetectorTrainConfig::default() };
        let out = pretrain_detector(DetectorModel::length(0.0, 0.0), &ds, &cfg, 3).unwrap();
        assert!(out.model.params()[1] < 0.0, "inverse scale {:?}", out.model.params());
    }

    #[test]
    fn shuffled_labels_score_near_chance() {
        let sizes = SplitSizes { train: 128, valid: 64, test: 256 };
        let ds = synthetic_dataset(&sizes, 77, true);
        let cfg = DetectorTrainConfig { epochs: 15, ..DetectorTrainConfig::default() };
        let out = pretrain_detector(DetectorModel::trajectory(8, vec![16], 9), &ds, &cfg, 1).unwrap();
        assert!(
            (out.test_auroc - 0.5).abs() <= 0.05,
            "label-blind data must not be separable: AUROC {}",
            out.test_auroc
        );
    }

    #[test]
    fn pretraining_returns_the_lowest_validation_checkpoint() {
        let sizes = SplitSizes { train: 64, valid: 32, test: 32 };
        let ds = synthetic_dataset(&sizes, 5, false);
        let cfg = DetectorTrainConfig { epochs: 25, ..DetectorTrainConfig::default() };
        let out = pretrain_detector(DetectorModel::trajectory(8, vec![12], 2), &ds, &cfg, 8).unwrap();
        let curve_min =
            out.curve.iter().map(|p| p.valid_loss).fold(f64::INFINITY, f64::min);
        assert_relative_eq!(out.best_valid_loss, curve_min, max_relative = 1e-12);
        assert_relative_eq!(
            bce_loss(&out.model, &ds.valid),
            out.best_valid_loss,
            max_relative = 1e-12
        );
        assert_eq!(out.curve.len(), 25);
    }

    #[test]
    fn pretraining_is_deterministic() {
        let sizes = SplitSizes { train: 48, valid: 16, test: 16 };
        let ds = synthetic_dataset(&sizes, 31, false);
        let cfg = DetectorTrainConfig { epochs: 6, ..DetectorTrainConfig::default() };
        let run = || {
            pretrain_detector(DetectorModel::trajectory(8, vec![10], 4), &ds, &cfg, 12).unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a.model, b.model);
        assert_eq!(a.curve, b.curve);
    }

    #[test]
    fn checkpoint_serialization_roundtrips() {
        let models = [
            DetectorModel::trajectory(4, vec![5], 6),
            DetectorModel::length(7.5, -0.25),
            DetectorModel::reward(0.1, 2.0),
        ];
        for model in models {
            let json = serde_json::to_string(&model).unwrap();
            let back: DetectorModel<f64> = serde_json::from_str(&json).unwrap();
            assert_eq!(model, back);
        }
    }
}
