//! Training loop: epsilon-greedy interaction, random reward weights and
//! discount factors, hindsight augmentation with counterfactual steps, and
//! checkpointing.
//!
//! Each step of a multi-reward run pushes the real experience plus `k`
//! counterfactual ones. A counterfactual draws fresh `(w', gamma')`, picks an
//! action under them and evaluates it from the same state with the
//! deterministic environment; the real trajectory does not move.
//!
//! Training updates (and checkpoints) happen only on the episodes listed in
//! `train_episodes`.

use std::collections::BTreeSet;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::env::{ActionSpace, EnvConfig, EnvState, EpisodeStart, TradingEnv};
use crate::error::{Error, Result};
use crate::evaluation::{self, EvaluationReport};
use crate::market_data::{DataSplit, PriceSeries, RangeKind};
use crate::qnet::{
    argmax, bellman_targets, fit_batch, InputLayout, QNetwork, Sgd, TargetNetwork, Transition,
};
use crate::replay::{whiten_batch, Experience, ReplayBuffer, DEFAULT_EIGEN_FLOOR};
use crate::rewards::RewardComponent;
use crate::rng::{stream, Stream};

/// Non-negative reward weights summing to one, ordered `(lr, alr, sr, powc)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct WeightVector([f64; 4]);

impl WeightVector {
    pub fn new(w: [f64; 4]) -> Result<Self> {
        if w.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(Error::invalid(
                "weights",
                format!("{w:?} has a negative or non-finite entry"),
            ));
        }
        let sum: f64 = w.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(
                "weights",
                format!("{w:?} sums to {sum}, not 1"),
            ));
        }
        Ok(Self(w))
    }

    /// Skips the simplex check. Only whitening cares about the direction of
    /// `w`, so tests use this to build scaled copies.
    pub fn new_unchecked(w: [f64; 4]) -> Self {
        Self(w)
    }

    pub fn one_hot(c: RewardComponent) -> Self {
        let mut w = [0.0; 4];
        w[c.index()] = 1.0;
        Self(w)
    }

    pub fn uniform() -> Self {
        Self([0.25; 4])
    }

    pub fn as_array(&self) -> &[f64; 4] {
        &self.0
    }

    pub fn norm2(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

impl TryFrom<[f64; 4]> for WeightVector {
    type Error = Error;

    fn try_from(w: [f64; 4]) -> Result<Self> {
        Self::new(w)
    }
}

impl From<WeightVector> for [f64; 4] {
    fn from(w: WeightVector) -> Self {
        w.0
    }
}

impl FromStr for WeightVector {
    type Err = Error;

    /// Four comma-separated reals.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<f64> = s
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::invalid("weights", format!("`{s}`: {e}")))?;
        let arr: [f64; 4] = parts
            .try_into()
            .map_err(|_| Error::invalid("weights", format!("`{s}` needs exactly four values")))?;
        Self::new(arr)
    }
}

/// What a counterfactual experience does with the action.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HindsightAction {
    /// Choose a fresh epsilon-greedy action under the new weights.
    #[default]
    Resample,
    /// Keep the real action; only the weights and discount are relabelled.
    Reuse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub mode: ActionSpace,
    pub multi_reward: bool,
    /// Target reward of a single-reward run.
    pub reward: RewardComponent,
    pub generalize_gamma: bool,
    /// Fixed discount factor; also the one used for evaluation.
    pub gamma: f64,
    pub gamma_range: [f64; 2],
    /// Blend between the current estimate and the Bellman backup.
    pub alpha: f64,
    /// Exploration probability.
    pub tol: f64,
    pub batchsize: usize,
    /// Counterfactual experiences per real step.
    pub k: usize,
    pub episodes: usize,
    /// 1-based episodes on which the network trains and is checkpointed.
    pub train_episodes: BTreeSet<usize>,
    pub window: usize,
    pub lookback: usize,
    pub random_access: bool,
    pub episode_len: usize,
    pub fee: f64,
    /// Replay age bound in network updates.
    pub max_age: u64,
    pub hidden: Vec<usize>,
    pub learn_rate: f64,
    pub momentum: f64,
    pub sync_period: u64,
    pub seed: u64,
    pub whiten: bool,
    pub eigen_floor: f64,
    pub hindsight_action: HindsightAction,
    /// Replaces the sampled weights of real steps in multi-reward runs.
    pub pinned_weights: Option<WeightVector>,
    pub return_scale: f64,
    /// Weights used for evaluation; defaults per [`TrainConfig::evaluation_weights`].
    pub eval_weights: Option<WeightVector>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: ActionSpace::LSP,
            multi_reward: true,
            reward: RewardComponent::Lr,
            generalize_gamma: false,
            gamma: 0.95,
            gamma_range: [0.5, 0.999],
            alpha: 1.0,
            tol: 0.1,
            batchsize: 64,
            k: 3,
            episodes: 50,
            train_episodes: (1..=50).collect(),
            window: crate::rewards::DEFAULT_WINDOW,
            lookback: 30,
            random_access: false,
            episode_len: 500,
            fee: 0.0,
            max_age: 5000,
            hidden: vec![64, 64],
            learn_rate: 1e-3,
            momentum: 0.9,
            sync_period: 100,
            seed: 0,
            whiten: true,
            eigen_floor: DEFAULT_EIGEN_FLOOR,
            hindsight_action: HindsightAction::Resample,
            pinned_weights: None,
            return_scale: 100.0,
            eval_weights: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let open_unit = |key: &str, v: f64| {
            if v > 0.0 && v < 1.0 {
                Ok(())
            } else {
                Err(Error::invalid(key, format!("{v} not in (0,1)")))
            }
        };
        open_unit("gamma", self.gamma)?;
        open_unit("tol", self.tol)?;
        let [lo, hi] = self.gamma_range;
        if !(lo > 0.0 && lo <= hi && hi < 1.0) {
            return Err(Error::invalid(
                "gamma_range",
                format!("[{lo},{hi}] not inside (0,1)"),
            ));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::invalid(
                "alpha",
                format!("{} not in (0,1]", self.alpha),
            ));
        }
        if !(self.fee >= 0.0 && self.fee < 1.0) {
            return Err(Error::invalid("fee", format!("{} not in [0,1)", self.fee)));
        }
        for (key, v) in [
            ("batchsize", self.batchsize),
            ("episodes", self.episodes),
            ("window", self.window),
            ("lookback", self.lookback),
            ("episode_len", self.episode_len),
        ] {
            if v == 0 {
                return Err(Error::invalid(key, "must be positive"));
            }
        }
        if let Some(&bad) = self
            .train_episodes
            .iter()
            .find(|&&e| e == 0 || e > self.episodes)
        {
            return Err(Error::invalid(
                "train_episodes",
                format!("episode {bad} outside 1..={}", self.episodes),
            ));
        }
        if self.max_age < self.batchsize as u64 {
            return Err(Error::invalid("max_age", "must be at least batchsize"));
        }
        if self.sync_period == 0 {
            return Err(Error::invalid("sync_period", "must be positive"));
        }
        if !(self.learn_rate > 0.0 && self.learn_rate.is_finite()) {
            return Err(Error::invalid("learn_rate", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid("momentum", "must be in [0,1)"));
        }
        if self.eigen_floor.is_nan() || self.eigen_floor <= 0.0 {
            return Err(Error::invalid("eigen_floor", "must be positive"));
        }
        if !(self.return_scale > 0.0 && self.return_scale.is_finite()) {
            return Err(Error::invalid("return_scale", "must be positive"));
        }
        if self.hidden.contains(&0) {
            return Err(Error::invalid("hidden", "layer widths must be positive"));
        }
        Ok(())
    }

    pub fn env_config(&self) -> EnvConfig {
        EnvConfig {
            mode: self.mode,
            lookback: self.lookback,
            window: self.window,
            fee: self.fee,
        }
    }

    pub fn layout(&self) -> InputLayout {
        InputLayout {
            mode: self.mode,
            lookback: self.lookback,
            generalize_gamma: self.generalize_gamma,
            return_scale: self.return_scale,
        }
    }

    /// Explicit evaluation weights, else uniform in multi-reward runs and
    /// the one-hot target otherwise.
    pub fn evaluation_weights(&self) -> WeightVector {
        self.eval_weights.unwrap_or(if self.multi_reward {
            WeightVector::uniform()
        } else {
            WeightVector::one_hot(self.reward)
        })
    }

    fn episode_start(&self) -> EpisodeStart {
        if self.random_access {
            EpisodeStart::Random {
                len: self.episode_len,
            }
        } else {
            EpisodeStart::Full
        }
    }
}

/// Uniform draw from the 4-simplex via normalised exponentials.
pub fn sample_weights<R: Rng + ?Sized>(rng: &mut R) -> WeightVector {
    let e: [f64; 4] = std::array::from_fn(|_| Exp1.sample(rng));
    let sum: f64 = e.iter().sum();
    WeightVector(e.map(|x| x / sum))
}

/// Uniform in `range` when generalising the discount, else the fixed value.
/// Consumes one draw only when generalising.
pub fn sample_gamma<R: Rng + ?Sized>(
    rng: &mut R,
    generalize: bool,
    fixed: f64,
    range: [f64; 2],
) -> f64 {
    if !generalize {
        return fixed;
    }
    let u: f64 = rng.random();
    range[0] + (range[1] - range[0]) * u
}

/// Random valid action with probability `tol`, else the greedy one.
pub fn act_epsilon_greedy<R: Rng + ?Sized>(
    net: &QNetwork,
    state: &[f64],
    weights: &WeightVector,
    gamma: f64,
    tol: f64,
    rng: &mut R,
) -> Result<usize> {
    let u: f64 = rng.random();
    if u < tol {
        return Ok(rng.random_range(0..net.layout.mode.count()));
    }
    Ok(argmax(&net.q_values(state, weights.as_array(), gamma)?))
}

/// Lookback followed by the position encoding.
pub fn state_features(state: &EnvState) -> Vec<f64> {
    let mut f = Vec::with_capacity(state.lookback.len() + 1);
    f.extend_from_slice(&state.lookback);
    f.push(state.position.sign());
    f
}

/// Source of `(w, gamma)` for a step.
struct Conditioning<'c> {
    config: &'c TrainConfig,
}

impl Conditioning<'_> {
    fn weights<R: Rng + ?Sized>(&self, rng: &mut R) -> WeightVector {
        if self.config.multi_reward {
            self.config
                .pinned_weights
                .unwrap_or_else(|| sample_weights(rng))
        } else {
            WeightVector::one_hot(self.config.reward)
        }
    }

    fn gamma<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let c = self.config;
        sample_gamma(rng, c.generalize_gamma, c.gamma, c.gamma_range)
    }
}

/// `k` counterfactual experiences from `state`; nothing is advanced.
#[allow(clippy::too_many_arguments)]
pub fn augment_experiences<R: Rng + ?Sized>(
    env: &TradingEnv<'_>,
    state: &EnvState,
    real_action: usize,
    net: &QNetwork,
    config: &TrainConfig,
    rng: &mut R,
) -> Result<Vec<Experience>> {
    let features = state_features(state);
    let mut out = Vec::with_capacity(config.k);
    for _ in 0..config.k {
        let w = sample_weights(rng);
        let gamma = sample_gamma(
            rng,
            config.generalize_gamma,
            config.gamma,
            config.gamma_range,
        );
        let action = match config.hindsight_action {
            HindsightAction::Resample => {
                act_epsilon_greedy(net, &features, &w, gamma, config.tol, rng)?
            }
            HindsightAction::Reuse => real_action,
        };
        let step = env.step(state, action)?;
        out.push(Experience::new(
            features.clone(),
            gamma,
            w,
            step.reward,
            action,
            state_features(&step.next_state),
            step.done,
        ));
    }
    Ok(out)
}

/// Network snapshot taken after a training episode, with its evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub episode: usize,
    pub net: QNetwork,
    pub metrics: CheckpointMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMetrics {
    pub episode: usize,
    pub train: EvaluationReport,
    pub eval: EvaluationReport,
    pub test: EvaluationReport,
}

impl CheckpointMetrics {
    pub fn get(&self, which: RangeKind) -> &EvaluationReport {
        match which {
            RangeKind::Train => &self.train,
            RangeKind::Eval => &self.eval,
            RangeKind::Test => &self.test,
        }
    }
}

/// Snapshot of one training update, for monitoring.
#[derive(Debug)]
pub struct UpdateInfo<'a> {
    pub episode: usize,
    pub update: u64,
    pub loss: f64,
    pub replay_len: usize,
    pub oldest_age: u64,
    /// The sampled minibatch after normalisation.
    pub batch: &'a [Experience],
    pub targets: &'a [f64],
}

impl UpdateInfo<'_> {
    /// Sample variance of the normalised scalar rewards in the minibatch.
    pub fn batch_reward_variance(&self) -> f64 {
        let n = self.batch.len();
        if n < 2 {
            return 0.0;
        }
        let mean = self.batch.iter().map(|e| e.scalar_reward).sum::<f64>() / n as f64;
        self.batch
            .iter()
            .map(|e| (e.scalar_reward - mean).powi(2))
            .sum::<f64>()
            / (n - 1) as f64
    }
}

/// Hooks into the training loop. Every method defaults to doing nothing.
pub trait TrainObserver {
    /// Called for every experience entering the replay.
    fn on_experience(&mut self, _experience: &Experience, _real: bool) {}
    /// Called with the state before every real step.
    fn on_state(&mut self, _episode: usize, _state: &EnvState) {}
    fn on_update(&mut self, _info: &UpdateInfo<'_>) {}
    fn on_checkpoint(&mut self, _checkpoint: &Checkpoint) {}
}

impl TrainObserver for () {}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub net: QNetwork,
    pub checkpoints: Vec<Checkpoint>,
    pub updates: u64,
    pub real_steps: u64,
    pub replay_len: usize,
    /// Mean over updates of the minibatch scalar-reward variance after
    /// normalisation; close to 1 when whitening is on.
    pub mean_batch_reward_variance: f64,
}

pub fn train(
    config: &TrainConfig,
    series: &PriceSeries,
    split: &DataSplit,
) -> Result<TrainOutcome> {
    train_with_observer(config, series, split, &mut ())
}

pub fn train_with_observer(
    config: &TrainConfig,
    series: &PriceSeries,
    split: &DataSplit,
    observer: &mut dyn TrainObserver,
) -> Result<TrainOutcome> {
    config.validate()?;
    let env = TradingEnv::new(series, config.env_config())?;
    let layout = config.layout();
    let seed = config.seed;
    let mut env_rng = stream(seed, Stream::EnvStart);
    let mut explore_rng = stream(seed, Stream::Exploration);
    let mut weight_rng = stream(seed, Stream::Weights);
    let mut gamma_rng = stream(seed, Stream::Gamma);
    let mut batch_rng = stream(seed, Stream::Batch);
    let mut aug_rng = stream(seed, Stream::Augmentation);
    let mut net = QNetwork::init(layout, &config.hidden, &mut stream(seed, Stream::NetInit))?;
    let mut target = TargetNetwork::new(&net.mlp, config.sync_period);
    let mut opt = Sgd::new(config.learn_rate, config.momentum);
    let mut replay = ReplayBuffer::new(config.max_age);
    let conditioning = Conditioning { config };

    let mut checkpoints = Vec::new();
    let mut real_steps = 0u64;
    let mut variance_sum = 0.0;
    let mut inputs = Vec::with_capacity(config.batchsize * layout.input_width());

    for episode in 1..=config.episodes {
        let training = config.train_episodes.contains(&episode);
        let mut state = env.reset(split.train, config.episode_start(), &mut env_rng)?;
        while !state.is_done() {
            observer.on_state(episode, &state);
            let w = conditioning.weights(&mut weight_rng);
            let gamma = conditioning.gamma(&mut gamma_rng);
            let features = state_features(&state);
            let action =
                act_epsilon_greedy(&net, &features, &w, gamma, config.tol, &mut explore_rng)?;
            let step = env.step(&state, action)?;
            let real = Experience::new(
                features,
                gamma,
                w,
                step.reward,
                action,
                state_features(&step.next_state),
                step.done,
            );
            observer.on_experience(&real, true);
            replay.push(real);
            real_steps += 1;
            if config.multi_reward {
                for extra in augment_experiences(&env, &state, action, &net, config, &mut aug_rng)?
                {
                    observer.on_experience(&extra, false);
                    replay.push(extra);
                }
            }
            state = step.next_state;

            if training && real_steps >= config.batchsize as u64 && replay.len() >= config.batchsize
            {
                let sampled = replay.sample_batch(config.batchsize, &mut batch_rng)?;
                let batch = if config.whiten {
                    whiten_batch(&sampled, &replay.compute_whitening(config.eigen_floor)?)
                } else {
                    sampled
                };
                let transitions: Vec<Transition> = batch
                    .iter()
                    .map(|e| Transition {
                        input: layout.encode(&e.state, e.weights.as_array(), e.gamma),
                        action: e.action,
                        reward: e.scalar_reward,
                        gamma: e.gamma,
                        next_input: layout.encode(&e.next_state, e.weights.as_array(), e.gamma),
                        terminal: e.terminal,
                    })
                    .collect();
                let targets = bellman_targets(&transitions, &net.mlp, target.net(), config.alpha)?;
                inputs.clear();
                for t in &transitions {
                    inputs.extend_from_slice(&t.input);
                }
                let loss = fit_batch(&mut net.mlp, &mut opt, &inputs, &targets, transitions.len())?;
                replay.advance_updates(1);
                target.sync(&net.mlp);
                let info = UpdateInfo {
                    episode,
                    update: replay.update_counter(),
                    loss,
                    replay_len: replay.len(),
                    oldest_age: replay.oldest_age().unwrap_or(0),
                    batch: &batch,
                    targets: &targets,
                };
                variance_sum += info.batch_reward_variance();
                observer.on_update(&info);
            }
        }

        if training {
            let metrics = evaluate_checkpoint(&net, series, split, config, episode)?;
            let checkpoint = Checkpoint {
                episode,
                net: net.clone(),
                metrics,
            };
            observer.on_checkpoint(&checkpoint);
            checkpoints.push(checkpoint);
        }
    }

    let updates = replay.update_counter();
    Ok(TrainOutcome {
        net,
        checkpoints,
        updates,
        real_steps,
        replay_len: replay.len(),
        mean_batch_reward_variance: if updates > 0 {
            variance_sum / updates as f64
        } else {
            0.0
        },
    })
}

/// Greedy evaluation of `net` on all three ranges of `split`.
pub fn evaluate_checkpoint(
    net: &QNetwork,
    series: &PriceSeries,
    split: &DataSplit,
    config: &TrainConfig,
    episode: usize,
) -> Result<CheckpointMetrics> {
    let weights = config.evaluation_weights();
    let env_cfg = config.env_config();
    let report = |which: RangeKind| {
        evaluation::vectorized_rollout(
            net,
            series,
            split.get(which),
            &weights,
            config.gamma,
            &env_cfg,
        )
        .map(|r| r.report.with_range_id(which.as_str()))
    };
    Ok(CheckpointMetrics {
        episode,
        train: report(RangeKind::Train)?,
        eval: report(RangeKind::Eval)?,
        test: report(RangeKind::Test)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market_data::make_split;
    use crate::rng::StreamRng;

    fn rng(seed: u64) -> StreamRng {
        stream(seed, Stream::Weights)
    }

    #[test]
    fn weights_on_simplex() {
        let mut r = rng(1);
        for _ in 0..1000 {
            let w = sample_weights(&mut r);
            assert!(w.as_array().iter().all(|&x| x >= 0.0));
            assert!((w.as_array().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn weight_means_are_a_quarter() {
        let mut r = rng(2);
        let n = 100_000;
        let mut sums = [0.0; 4];
        for _ in 0..n {
            for (s, x) in sums.iter_mut().zip(sample_weights(&mut r).as_array()) {
                *s += x;
            }
        }
        for s in sums {
            assert!((s / n as f64 - 0.25).abs() < 0.01);
        }
    }

    #[test]
    fn single_reward_weights_are_constant_one_hot() {
        let config = TrainConfig {
            multi_reward: false,
            reward: RewardComponent::Powc,
            ..TrainConfig::default()
        };
        let c = Conditioning { config: &config };
        let mut r = rng(3);
        for _ in 0..10 {
            assert_eq!(
                c.weights(&mut r),
                WeightVector::one_hot(RewardComponent::Powc)
            );
        }
    }

    #[test]
    fn gamma_sampling() {
        let mut r = stream(1, Stream::Gamma);
        assert_eq!(sample_gamma(&mut r, true, 0.95, [0.9, 0.9]), 0.9);
        assert_eq!(sample_gamma(&mut r, false, 0.95, [0.5, 0.999]), 0.95);
        let n = 100_000;
        let mean = (0..n)
            .map(|_| sample_gamma(&mut r, true, 0.95, [0.5, 1.0]))
            .sum::<f64>()
            / n as f64;
        assert!((mean - 0.75).abs() < 0.005, "{mean}");
    }

    fn hand_net(q: [f64; 3]) -> QNetwork {
        let layout = InputLayout {
            mode: ActionSpace::LSP,
            lookback: 2,
            generalize_gamma: false,
            return_scale: 1.0,
        };
        let mut mlp = crate::qnet::Mlp::zeros(&[layout.input_width(), 3]).unwrap();
        mlp.layers_mut()[0].bias_mut().copy_from_slice(&q);
        QNetwork::from_parts(layout, mlp).unwrap()
    }

    #[test]
    fn greedy_and_random_actions() {
        let s = [0.0, 0.0, 0.0];
        let w = WeightVector::uniform();
        let mut r = stream(1, Stream::Exploration);
        assert_eq!(
            act_epsilon_greedy(&hand_net([1.0, 3.0, 2.0]), &s, &w, 0.9, 0.0, &mut r).unwrap(),
            1
        );
        assert_eq!(
            act_epsilon_greedy(&hand_net([2.0, 2.0, 0.0]), &s, &w, 0.9, 0.0, &mut r).unwrap(),
            0
        );

        let net = hand_net([0.0, 5.0, 0.0]);
        let n = 100_000;
        let mut counts = [0usize; 3];
        for _ in 0..n {
            counts[act_epsilon_greedy(&net, &s, &w, 0.9, 1.0, &mut r).unwrap()] += 1;
        }
        let p = 1.0 / 3.0;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - n as f64 * p).abs() < 3.0 * sigma, "{counts:?}");
        }
    }

    fn sine(n: usize) -> PriceSeries {
        PriceSeries::from_closes(
            "sine",
            (0..n)
                .map(|t| 100.0 * (1.0 + 0.1 * (2.0 * std::f64::consts::PI * t as f64 / 50.0).sin()))
                .collect(),
        )
        .unwrap()
    }

    fn small_config() -> TrainConfig {
        TrainConfig {
            episodes: 2,
            train_episodes: [2].into_iter().collect(),
            lookback: 5,
            window: 4,
            batchsize: 8,
            max_age: 64,
            hidden: vec![8],
            ..TrainConfig::default()
        }
    }

    #[test]
    fn counterfactuals_leave_state_alone() {
        let series = sine(200);
        let config = TrainConfig {
            k: 4,
            ..small_config()
        };
        let env = TradingEnv::new(&series, config.env_config()).unwrap();
        let state = env
            .reset(
                series.full_range(),
                EpisodeStart::Full,
                &mut stream(0, Stream::EnvStart),
            )
            .unwrap();
        let net = QNetwork::init(
            config.layout(),
            &config.hidden,
            &mut stream(0, Stream::NetInit),
        )
        .unwrap();
        let before = state.clone();
        let extra = augment_experiences(
            &env,
            &state,
            0,
            &net,
            &config,
            &mut stream(0, Stream::Augmentation),
        )
        .unwrap();
        assert_eq!(extra.len(), 4);
        assert_eq!(state, before);
        let none = augment_experiences(
            &env,
            &state,
            0,
            &net,
            &TrainConfig {
                k: 0,
                ..config.clone()
            },
            &mut stream(0, Stream::Augmentation),
        )
        .unwrap();
        assert!(none.is_empty());
    }

    #[test]
    fn counterfactual_with_real_action_matches_real_experience() {
        let series = sine(200);
        let config = TrainConfig {
            k: 1,
            hindsight_action: HindsightAction::Reuse,
            ..small_config()
        };
        let env = TradingEnv::new(&series, config.env_config()).unwrap();
        let state = env
            .reset(
                series.full_range(),
                EpisodeStart::Full,
                &mut stream(0, Stream::EnvStart),
            )
            .unwrap();
        let net = QNetwork::init(
            config.layout(),
            &config.hidden,
            &mut stream(0, Stream::NetInit),
        )
        .unwrap();
        let extra = augment_experiences(
            &env,
            &state,
            0,
            &net,
            &config,
            &mut stream(0, Stream::Augmentation),
        )
        .unwrap()
        .remove(0);
        let step = env.step(&state, 0).unwrap();
        let real = Experience::new(
            state_features(&state),
            extra.gamma,
            extra.weights,
            step.reward,
            0,
            state_features(&step.next_state),
            step.done,
        );
        assert_eq!(extra, real);
    }

    #[test]
    fn no_training_episodes_leaves_network_at_init() {
        let series = sine(300);
        let split = make_split(&series, [0.64, 0.16, 0.2]).unwrap();
        let config = TrainConfig {
            episodes: 1,
            train_episodes: BTreeSet::new(),
            ..small_config()
        };
        let out = train(&config, &series, &split).unwrap();
        let init = QNetwork::init(
            config.layout(),
            &config.hidden,
            &mut stream(config.seed, Stream::NetInit),
        )
        .unwrap();
        assert_eq!(out.net, init);
        assert!(out.checkpoints.is_empty());
        assert_eq!(out.updates, 0);
    }

    #[test]
    fn checkpoints_follow_train_episodes() {
        let series = sine(300);
        let split = make_split(&series, [0.64, 0.16, 0.2]).unwrap();
        let config = TrainConfig {
            episodes: 4,
            train_episodes: [2, 4].into_iter().collect(),
            ..small_config()
        };
        let out = train(&config, &series, &split).unwrap();
        let eps: Vec<usize> = out.checkpoints.iter().map(|c| c.episode).collect();
        assert_eq!(eps, vec![2, 4]);
        assert!(out.updates > 0);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = |c: TrainConfig| c.validate().unwrap_err().kind();
        assert_eq!(
            bad(TrainConfig {
                fee: -0.1,
                ..Default::default()
            }),
            "InvalidValue"
        );
        assert_eq!(
            bad(TrainConfig {
                gamma: 1.0,
                ..Default::default()
            }),
            "InvalidValue"
        );
        assert_eq!(
            bad(TrainConfig {
                train_episodes: [0].into_iter().collect(),
                ..Default::default()
            }),
            "InvalidValue"
        );
    }

    #[test]
    fn weight_vector_parsing() {
        let w: WeightVector = "0.1, 0.2, 0.3, 0.4".parse().unwrap();
        assert_eq!(w.as_array(), &[0.1, 0.2, 0.3, 0.4]);
        assert!("0.5,0.5".parse::<WeightVector>().is_err());
        assert!("0.5,0.5,0.5,0.5".parse::<WeightVector>().is_err());
        assert!(serde_json::from_str::<WeightVector>("[1.0,0.0,0.0,0.5]").is_err());
    }
}
