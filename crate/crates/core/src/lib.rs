//! Multi-reward deep Q-learning for single-asset trading.
//!
//! One Q-network is conditioned on a reward weight vector (and optionally on
//! the discount factor), so a single training run serves every linear
//! combination of four trading rewards: last log-return, average log-return,
//! windowed Sharpe ratio and profit-only-when-closed.
//!
//! The crate is organised bottom-up:
//!
//! - [`market_data`]: price series loading, splits and walk-forward folds.
//! - [`rewards`]: the four reward components.
//! - [`env`]: the deterministic trading environment.
//! - [`replay`]: same-age experience replay and reward whitening.
//! - [`qnet`]: the feed-forward Q-network, Bellman targets and SGD fitting.
//! - [`agent`]: the training loop with hindsight augmentation.
//! - [`evaluation`]: greedy rollouts, metrics and the walk-forward driver.
//! - [`config`] and [`synthetic`]: run configuration and synthetic prices.

pub mod agent;
pub mod config;
pub mod env;
pub mod error;
pub mod evaluation;
pub mod market_data;
pub mod qnet;
pub mod replay;
pub mod rewards;
pub mod rng;
pub mod synthetic;

pub use agent::{train, Checkpoint, TrainConfig, TrainOutcome, WeightVector};
pub use env::{
    Action, ActionSpace, EnvConfig, EnvState, Position, StepInfo, StepOutcome, TradingEnv,
};
pub use error::{Error, Result};
pub use evaluation::{EvaluationReport, PositionTrace};
pub use market_data::{DataSplit, FoldPlan, IndexRange, PriceSeries};
pub use qnet::{InputLayout, Mlp, QNetwork, TargetNetwork};
pub use replay::{Experience, ReplayBuffer, WhiteningStats};
pub use rewards::{ReturnTrace, RewardComponent, RewardVector};
