//! Greedy rollouts, trading metrics, the buy-and-hold benchmark,
//! best-checkpoint selection and the walk-forward driver.
//!
//! Apart from the position, every input of the network along a rollout is
//! known in advance (prices do not react to the agent). The vectorized
//! rollout therefore evaluates the network in large batches, one block of
//! steps per visited position, and walks the resulting Q-table.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agent::{self, Checkpoint, CheckpointMetrics, TrainConfig, WeightVector};
use crate::env::{Action, EnvConfig, EnvState, EpisodeStart, Position, TradingEnv};
use crate::error::{Error, Result};
use crate::market_data::{DataSplit, FoldPlan, IndexRange, PriceSeries};
use crate::qnet::{argmax, PrefixFinisher, QNetwork};
use crate::rewards::{sharpe, RewardVector};
use crate::rng::{stream, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub range_id: String,
    pub range: IndexRange,
    /// Undiscounted sum of `w . r` along the rollout.
    pub total_reward: f64,
    /// `exp(sum of portfolio log-returns) - 1`, fees included.
    pub total_profit: f64,
    /// Mean over population std of all per-step portfolio log-returns.
    pub sharpe: f64,
    /// Fraction of steps spent Long.
    pub long_exposure: f64,
    pub trades: usize,
    pub buy_and_hold_profit: f64,
    pub buy_and_hold_sharpe: f64,
}

impl EvaluationReport {
    pub fn with_range_id(mut self, id: impl Into<String>) -> Self {
        self.range_id = id.into();
        self
    }

    pub fn metric(&self, metric: ReportMetric) -> f64 {
        match metric {
            ReportMetric::Sharpe => self.sharpe,
            ReportMetric::Profit => self.total_profit,
        }
    }

    /// Metric name/value pairs in the order used by the plot CSV.
    pub fn metric_values(&self) -> [(&'static str, f64); 5] {
        [
            ("total_reward", self.total_reward),
            ("total_profit", self.total_profit),
            ("sharpe", self.sharpe),
            ("long_exposure", self.long_exposure),
            ("trades", self.trades as f64),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportMetric {
    #[default]
    Sharpe,
    #[serde(alias = "total_profit")]
    Profit,
}

impl FromStr for ReportMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sharpe" => Ok(ReportMetric::Sharpe),
            "profit" | "total_profit" => Ok(ReportMetric::Profit),
            other => Err(Error::invalid(
                "metric",
                format!("`{other}` is not sharpe|profit"),
            )),
        }
    }
}

impl fmt::Display for ReportMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ReportMetric::Sharpe => "sharpe",
            ReportMetric::Profit => "profit",
        })
    }
}

/// Per-step record of a rollout.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PositionTrace {
    /// Position held after each step's action.
    pub positions: Vec<Position>,
    pub actions: Vec<usize>,
    pub log_returns: Vec<f64>,
    pub rewards: Vec<RewardVector>,
    pub trades: Vec<bool>,
}

impl PositionTrace {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

/// Steps per batch of first-layer lookback sums.
pub const TABLE_BLOCK: usize = 200;

/// Q-values per (position, step), evaluated on demand. The first-layer sums
/// over the lookback inputs do not depend on the position and are computed
/// for [`TABLE_BLOCK`] steps at a time; each entry then only finishes its own
/// forward pass. A greedy rollout touches one position per step.
#[derive(Debug, Clone)]
pub struct QTable {
    pub first_cursor: usize,
    pub steps: usize,
    pub positions: Vec<Position>,
    pub actions: usize,
    lookback: usize,
    /// Log-returns of the range, `returns[i] = lp[start + i + 1] - lp[start + i]`.
    returns: Vec<f64>,
    /// Per position, the encoded inputs after the lookback.
    rests: Vec<Vec<f64>>,
    /// `[position]`, row-major `steps x actions`.
    values: Vec<Vec<f64>>,
    filled: Vec<Vec<bool>>,
    /// Step-major lookback sums (`hidden` values per step) of one block.
    prefix: Vec<f64>,
    prefix_block: Option<usize>,
    hidden: usize,
    scratch: [Vec<f64>; 2],
    finisher: PrefixFinisher,
}

impl QTable {
    fn new(
        net: &QNetwork,
        env: &TradingEnv<'_>,
        range: IndexRange,
        weights: &WeightVector,
        gamma: f64,
    ) -> Self {
        let lookback = env.config().lookback;
        let first = range.start + lookback;
        let steps = range.end - 1 - first;
        let positions = env.config().mode.positions().to_vec();
        let returns = env.log_prices()[range.start..range.end]
            .windows(2)
            .map(|w| w[1] - w[0])
            .collect();
        let rests = positions
            .iter()
            .map(|p| {
                let mut state = vec![0.0; lookback + 1];
                state[lookback] = p.sign();
                net.layout.encode(&state, weights.as_array(), gamma)[lookback..].to_vec()
            })
            .collect();
        let actions = net.mlp.output_dim();
        Self {
            first_cursor: first,
            steps,
            actions,
            values: vec![vec![0.0; steps * actions]; positions.len()],
            filled: vec![vec![false; steps]; positions.len()],
            prefix: Vec::new(),
            prefix_block: None,
            scratch: [Vec::new(), Vec::new()],
            hidden: net.mlp.widths()[1],
            finisher: PrefixFinisher::new(&net.mlp, lookback),
            rests,
            positions,
            lookback,
            returns,
        }
    }

    fn slot(&self, cursor: usize, position: Position) -> (usize, usize) {
        let p = self
            .positions
            .iter()
            .position(|&q| q == position)
            .expect("position reachable in this mode");
        (p, cursor - self.first_cursor)
    }

    /// Q-values at `cursor` for `position`, if that entry was evaluated.
    pub fn get(&self, cursor: usize, position: Position) -> Option<&[f64]> {
        let (p, t) = self.slot(cursor, position);
        self.filled[p][t].then(|| &self.values[p][t * self.actions..(t + 1) * self.actions])
    }

    fn ensure(&mut self, net: &QNetwork, cursor: usize, position: Position) -> Result<&[f64]> {
        let (p, t) = self.slot(cursor, position);
        let a = self.actions;
        if !self.filled[p][t] {
            let (b, i) = (t / TABLE_BLOCK, t % TABLE_BLOCK);
            let h = self.hidden;
            if self.prefix_block != Some(b) {
                self.lookback_sums(net, b);
            }
            self.finisher.finish(
                &self.prefix[i * h..(i + 1) * h],
                &self.rests[p],
                &mut self.values[p][t * a..(t + 1) * a],
            );
            self.filled[p][t] = true;
        }
        Ok(&self.values[p][t * a..(t + 1) * a])
    }

    /// Step-major first-layer sums over the lookback inputs for block `b`.
    fn lookback_sums(&mut self, net: &QNetwork, b: usize) {
        let t0 = b * TABLE_BLOCK;
        let n = TABLE_BLOCK.min(self.steps - t0);
        let scale = net.layout.return_scale;
        let [x, sums] = &mut self.scratch;
        // feature-major: row k holds lookback input k of every step
        x.clear();
        for k in 0..self.lookback {
            x.extend(self.returns[t0 + k..t0 + k + n].iter().map(|r| r * scale));
        }
        net.mlp.shared_prefix_into(x, self.lookback, n, sums);
        let h = self.hidden;
        self.prefix.resize(h * n, 0.0);
        for j in 0..h {
            for (i, &v) in sums[j * n..(j + 1) * n].iter().enumerate() {
                self.prefix[i * h + j] = v;
            }
        }
        self.prefix_block = Some(b);
    }

    fn fill(&mut self, net: &QNetwork) -> Result<()> {
        for t in 0..self.steps {
            for position in self.positions.clone() {
                self.ensure(net, self.first_cursor + t, position)?;
            }
        }
        Ok(())
    }

    /// Number of evaluated (position, step) entries.
    pub fn evaluated(&self) -> usize {
        self.filled.iter().flatten().filter(|&&f| f).count()
    }
}

#[derive(Debug, Clone)]
pub struct Rollout {
    pub trace: PositionTrace,
    pub report: EvaluationReport,
}

#[derive(Debug, Clone)]
pub struct VectorizedRollout {
    pub table: QTable,
    pub trace: PositionTrace,
    pub report: EvaluationReport,
}

/// Runs `policy` from the start of `range` until the range is exhausted.
pub fn rollout_with<F>(
    env: &TradingEnv<'_>,
    range: IndexRange,
    weights: &WeightVector,
    mut policy: F,
) -> Result<Rollout>
where
    F: FnMut(&EnvState) -> Result<usize>,
{
    let mut state = env.reset(range, EpisodeStart::Full, &mut stream(0, Stream::EnvStart))?;
    let steps = range.len() - env.config().lookback - 1;
    let mut trace = PositionTrace {
        positions: Vec::with_capacity(steps),
        actions: Vec::with_capacity(steps),
        log_returns: Vec::with_capacity(steps),
        rewards: Vec::with_capacity(steps),
        trades: Vec::with_capacity(steps),
    };
    while !state.is_done() {
        let action = policy(&state)?;
        let out = env.advance(&mut state, action)?;
        trace.positions.push(state.position);
        trace.actions.push(action);
        trace.log_returns.push(out.portfolio_log_return);
        trace.rewards.push(out.reward);
        trace.trades.push(out.trade_occurred);
    }
    let benchmark = benchmark_stats(env, range)?;
    let report = summarize(&trace, range, weights, benchmark);
    Ok(Rollout { trace, report })
}

fn summarize(
    trace: &PositionTrace,
    range: IndexRange,
    weights: &WeightVector,
    benchmark: (f64, f64),
) -> EvaluationReport {
    let n = trace.len();
    let log_sum: f64 = trace.log_returns.iter().sum();
    let longs = trace
        .positions
        .iter()
        .filter(|&&p| p == Position::Long)
        .count();
    EvaluationReport {
        range_id: String::new(),
        range,
        total_reward: trace
            .rewards
            .iter()
            .map(|r| r.dot(weights.as_array()))
            .sum(),
        total_profit: log_sum.exp() - 1.0,
        sharpe: sharpe(trace.log_returns.iter().copied()),
        long_exposure: if n == 0 { 0.0 } else { longs as f64 / n as f64 },
        trades: trace.trades.iter().filter(|&&t| t).count(),
        buy_and_hold_profit: benchmark.0,
        buy_and_hold_sharpe: benchmark.1,
    }
}

/// Profit and Sharpe of holding Long from the first step to the end.
fn benchmark_stats(env: &TradingEnv<'_>, range: IndexRange) -> Result<(f64, f64)> {
    let state = env.reset(range, EpisodeStart::Full, &mut stream(0, Stream::EnvStart))?;
    let returns: Vec<f64> = (state.cursor..state.end - 1)
        .map(|t| {
            let old = if t == state.cursor {
                state.position
            } else {
                Position::Long
            };
            env.portfolio_log_return(t, old, Position::Long)
        })
        .collect();
    Ok((
        returns.iter().sum::<f64>().exp() - 1.0,
        sharpe(returns.iter().copied()),
    ))
}

fn check_layout(net: &QNetwork, env_cfg: &EnvConfig) -> Result<()> {
    if net.layout.lookback != env_cfg.lookback {
        return Err(Error::ShapeMismatch {
            expected: env_cfg.lookback,
            actual: net.layout.lookback,
        });
    }
    if net.layout.mode != env_cfg.mode {
        return Err(Error::invalid(
            "mode",
            format!(
                "network trained for {} but environment is {}",
                net.layout.mode, env_cfg.mode
            ),
        ));
    }
    Ok(())
}

/// Greedy rollout evaluating the network one step at a time.
pub fn run_policy(
    net: &QNetwork,
    series: &PriceSeries,
    range: IndexRange,
    weights: &WeightVector,
    gamma: f64,
    env_cfg: &EnvConfig,
) -> Result<Rollout> {
    check_layout(net, env_cfg)?;
    let env = TradingEnv::new(series, *env_cfg)?;
    rollout_with(&env, range, weights, |state| {
        let features = agent::state_features(state);
        Ok(argmax(&net.q_values(
            &features,
            weights.as_array(),
            gamma,
        )?))
    })
}

/// Always-Long benchmark entering at the first step of `range`.
pub fn buy_and_hold(
    series: &PriceSeries,
    range: IndexRange,
    weights: &WeightVector,
    env_cfg: &EnvConfig,
) -> Result<Rollout> {
    let env = TradingEnv::new(series, *env_cfg)?;
    let buy = env_cfg.mode.id_of(Action::Buy)?;
    rollout_with(&env, range, weights, |_| Ok(buy))
}

/// Greedy rollout reading Q-values from a block-batched table. Produces the
/// same actions and metrics as [`run_policy`].
pub fn vectorized_rollout(
    net: &QNetwork,
    series: &PriceSeries,
    range: IndexRange,
    weights: &WeightVector,
    gamma: f64,
    env_cfg: &EnvConfig,
) -> Result<VectorizedRollout> {
    check_layout(net, env_cfg)?;
    let env = TradingEnv::new(series, *env_cfg)?;
    check_range(&env, series, range)?;
    let mut table = QTable::new(net, &env, range, weights, gamma);
    let rollout = rollout_with(&env, range, weights, |state| {
        Ok(argmax(table.ensure(net, state.cursor, state.position)?))
    })?;
    Ok(VectorizedRollout {
        table,
        trace: rollout.trace,
        report: rollout.report,
    })
}

/// The complete Q-table of `net` over `range`.
pub fn q_table(
    net: &QNetwork,
    series: &PriceSeries,
    range: IndexRange,
    weights: &WeightVector,
    gamma: f64,
    env_cfg: &EnvConfig,
) -> Result<QTable> {
    check_layout(net, env_cfg)?;
    let env = TradingEnv::new(series, *env_cfg)?;
    check_range(&env, series, range)?;
    let mut table = QTable::new(net, &env, range, weights, gamma);
    table.fill(net)?;
    Ok(table)
}

fn check_range(env: &TradingEnv<'_>, series: &PriceSeries, range: IndexRange) -> Result<()> {
    if range.end > series.len() || range.len() < env.min_range_len() {
        return Err(Error::RangeTooShort {
            needed: env.min_range_len(),
            actual: range.len(),
        });
    }
    Ok(())
}

/// Best checkpoint by `metric` on the eval range; ties go to the earliest.
pub fn select_best_checkpoint(
    checkpoints: &[Checkpoint],
    metric: ReportMetric,
) -> Result<&Checkpoint> {
    let metrics: Vec<&CheckpointMetrics> = checkpoints.iter().map(|c| &c.metrics).collect();
    let best = best_index(&metrics, metric)?;
    Ok(&checkpoints[best])
}

/// Index of the best entry by eval-range `metric`; ties go to the earliest.
pub fn best_index(metrics: &[&CheckpointMetrics], metric: ReportMetric) -> Result<usize> {
    if metrics.is_empty() {
        return Err(Error::EmptyCheckpointList);
    }
    let mut best = 0;
    for (i, m) in metrics.iter().enumerate().skip(1) {
        if m.eval.metric(metric) > metrics[best].eval.metric(metric) {
            best = i;
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub seed: u64,
    pub split: DataSplit,
    /// Episode of the selected checkpoint, absent when the final network was used.
    pub selected_episode: Option<usize>,
    pub train: EvaluationReport,
    pub eval: EvaluationReport,
    pub test: EvaluationReport,
}

/// Seed of fold `fold` (0-based); fold 0 uses the master seed itself.
pub fn fold_seed(master: u64, fold: usize) -> u64 {
    master.wrapping_add(fold as u64)
}

/// Trains independently on every fold and reports the best checkpoint (by
/// `metric` on the eval range), or the final network when no checkpoint
/// exists.
pub fn run_walk_forward(
    config: &TrainConfig,
    series: &PriceSeries,
    plan: &FoldPlan,
    metric: ReportMetric,
) -> Result<Vec<FoldReport>> {
    plan.folds
        .par_iter()
        .enumerate()
        .map(|(fold, split)| {
            let fold_config = TrainConfig {
                seed: fold_seed(config.seed, fold),
                ..config.clone()
            };
            let outcome = agent::train(&fold_config, series, split)?;
            let (selected_episode, metrics) =
                match select_best_checkpoint(&outcome.checkpoints, metric) {
                    Ok(best) => (Some(best.episode), best.metrics.clone()),
                    Err(_) => (
                        None,
                        agent::evaluate_checkpoint(
                            &outcome.net,
                            series,
                            split,
                            &fold_config,
                            config.episodes,
                        )?,
                    ),
                };
            Ok(FoldReport {
                fold,
                seed: fold_config.seed,
                split: *split,
                selected_episode,
                train: metrics.train,
                eval: metrics.eval,
                test: metrics.test,
            })
        })
        .collect()
}
