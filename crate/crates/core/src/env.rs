//! Deterministic single-asset trading environment.
//!
//! Actions name the position to hold next (target-position semantics):
//! `Buy` -> Long, `Sell` -> Short, `Hold` -> Neutral. A trade happens exactly
//! when the target differs from the current position, and it executes at the
//! current close. The position chosen at cursor `t` is held over `(t, t+1]`.
//!
//! [`TradingEnv::step`] is a pure function of `(state, action)`, which is what
//! lets the agent evaluate counterfactual actions without advancing anything.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market_data::{IndexRange, PriceSeries};
use crate::rewards::{reward_vector, CloseEvent, ReturnTrace, RewardVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Position {
    Long,
    Short,
    Neutral,
}

impl Position {
    pub fn sign(self) -> f64 {
        match self {
            Position::Long => 1.0,
            Position::Short => -1.0,
            Position::Neutral => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Action {
    Buy,
    Sell,
    Hold,
}

impl Action {
    pub fn target(self) -> Position {
        match self {
            Action::Buy => Position::Long,
            Action::Sell => Position::Short,
            Action::Hold => Position::Neutral,
        }
    }
}

/// Long-only (`LP`: Buy, Hold) or long-and-short (`LSP`: Buy, Sell, Hold).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum ActionSpace {
    #[serde(alias = "lp")]
    LP,
    #[default]
    #[serde(alias = "lsp", alias = "L&SP")]
    LSP,
}

const LP_ACTIONS: [Action; 2] = [Action::Buy, Action::Hold];
const LSP_ACTIONS: [Action; 3] = [Action::Buy, Action::Sell, Action::Hold];

impl ActionSpace {
    pub fn actions(self) -> &'static [Action] {
        match self {
            ActionSpace::LP => &LP_ACTIONS,
            ActionSpace::LSP => &LSP_ACTIONS,
        }
    }

    pub fn count(self) -> usize {
        self.actions().len()
    }

    /// Positions reachable in this mode, in a fixed order.
    pub fn positions(self) -> &'static [Position] {
        match self {
            ActionSpace::LP => &[Position::Neutral, Position::Long],
            ActionSpace::LSP => &[Position::Neutral, Position::Long, Position::Short],
        }
    }

    pub fn action(self, id: usize) -> Result<Action> {
        self.actions()
            .get(id)
            .copied()
            .ok_or(Error::InvalidActionForMode {
                action: id,
                mode: self.as_str(),
            })
    }

    pub fn id_of(self, action: Action) -> Result<usize> {
        self.actions()
            .iter()
            .position(|&a| a == action)
            .ok_or(Error::InvalidActionForMode {
                action: action as usize,
                mode: self.as_str(),
            })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ActionSpace::LP => "LP",
            ActionSpace::LSP => "LSP",
        }
    }
}

impl fmt::Display for ActionSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ActionSpace {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "LP" => Ok(ActionSpace::LP),
            "LSP" | "L&SP" => Ok(ActionSpace::LSP),
            _ => Err(Error::invalid("mode", format!("`{s}` is not LP|LSP"))),
        }
    }
}

/// Applies action `action` (an id in `mode`) to the current position.
pub fn position_transition(
    _current: Position,
    action: usize,
    mode: ActionSpace,
) -> Result<Position> {
    Ok(mode.action(action)?.target())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub mode: ActionSpace,
    /// Number of log-returns in the state.
    pub lookback: usize,
    /// Window `L` of the ALR and SR rewards.
    pub window: usize,
    /// Per-leg proportional fee in `[0, 1)`.
    pub fee: f64,
}

/// How an episode picks its sub-range of the data.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EpisodeStart {
    /// Start at the first index of the range that admits a full lookback.
    Full,
    /// Draw a start uniformly so the episode runs exactly `len` steps.
    Random { len: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    /// The `lookback` most recent raw log-returns, oldest first.
    pub lookback: Vec<f64>,
    pub position: Position,
    pub cursor: usize,
    /// Index of the last position change, absent until the first trade.
    pub trade_anchor: Option<usize>,
    pub trace: ReturnTrace,
    /// Exclusive end of the episode range; the last usable cursor is `end - 1`.
    pub end: usize,
}

impl EnvState {
    pub fn is_done(&self) -> bool {
        self.cursor + 1 >= self.end
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub next_state: EnvState,
    pub reward: RewardVector,
    pub done: bool,
    pub trade_occurred: bool,
    /// Portfolio log-return of the step, fee legs included.
    pub portfolio_log_return: f64,
    /// Number of fee legs charged (0, 1, or 2 on a direct flip).
    pub fee_legs: u32,
}

fn fee_legs(old: Position, new: Position) -> u32 {
    if new == old {
        0
    } else {
        u32::from(old != Position::Neutral) + u32::from(new != Position::Neutral)
    }
}

/// A [`StepOutcome`] without the next state.
#[derive(Debug, Clone, PartialEq)]
pub struct StepInfo {
    pub reward: RewardVector,
    pub done: bool,
    pub trade_occurred: bool,
    pub portfolio_log_return: f64,
    pub fee_legs: u32,
}

pub struct TradingEnv<'a> {
    series: &'a PriceSeries,
    log_prices: Vec<f64>,
    config: EnvConfig,
    log_fee: f64,
}

impl<'a> TradingEnv<'a> {
    pub fn new(series: &'a PriceSeries, config: EnvConfig) -> Result<Self> {
        if !(config.fee >= 0.0 && config.fee < 1.0) {
            return Err(Error::invalid(
                "fee",
                format!("{} not in [0,1)", config.fee),
            ));
        }
        if config.lookback == 0 {
            return Err(Error::invalid("lookback", "must be at least 1"));
        }
        if config.window == 0 {
            return Err(Error::invalid("window", "must be at least 1"));
        }
        Ok(Self {
            series,
            log_prices: series.log_prices(),
            config,
            log_fee: (1.0 - config.fee).ln(),
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn series(&self) -> &PriceSeries {
        self.series
    }

    pub fn log_prices(&self) -> &[f64] {
        &self.log_prices
    }

    /// Smallest range length that supports one full lookback and one step.
    pub fn min_range_len(&self) -> usize {
        self.config.lookback + 2
    }

    pub fn lookback_at(&self, cursor: usize) -> Vec<f64> {
        let l = self.config.lookback;
        (cursor + 1 - l..=cursor)
            .map(|s| self.log_prices[s] - self.log_prices[s - 1])
            .collect()
    }

    pub fn reset<R: Rng + ?Sized>(
        &self,
        range: IndexRange,
        start: EpisodeStart,
        rng: &mut R,
    ) -> Result<EnvState> {
        let needed = self.min_range_len();
        if range.end > self.series.len() || range.len() < needed {
            return Err(Error::RangeTooShort {
                needed,
                actual: range
                    .len()
                    .min(self.series.len().saturating_sub(range.start)),
            });
        }
        let (start, end) = match start {
            EpisodeStart::Full => (range.start, range.end),
            EpisodeStart::Random { len } => {
                let span = len + self.config.lookback + 1;
                if len == 0 || span > range.len() {
                    return Err(Error::RangeTooShort {
                        needed: span.max(needed),
                        actual: range.len(),
                    });
                }
                let s = rng.random_range(range.start..=range.end - span);
                (s, s + span)
            }
        };
        let cursor = start + self.config.lookback;
        Ok(EnvState {
            lookback: self.lookback_at(cursor),
            position: Position::Neutral,
            cursor,
            trade_anchor: None,
            trace: ReturnTrace::new(self.config.window),
            end,
        })
    }

    /// Log-return over `[t, t + 1]` when moving from `old` into `new` at `t`,
    /// fees included.
    pub fn portfolio_log_return(&self, t: usize, old: Position, new: Position) -> f64 {
        let legs = fee_legs(old, new);
        let mut log_return = new.sign() * (self.log_prices[t + 1] - self.log_prices[t]);
        if legs > 0 && self.config.fee > 0.0 {
            log_return += f64::from(legs) * self.log_fee;
        }
        log_return
    }

    pub fn step(&self, state: &EnvState, action: usize) -> Result<StepOutcome> {
        let mut next_state = state.clone();
        let info = self.advance(&mut next_state, action)?;
        Ok(StepOutcome {
            done: info.done,
            next_state,
            reward: info.reward,
            trade_occurred: info.trade_occurred,
            portfolio_log_return: info.portfolio_log_return,
            fee_legs: info.fee_legs,
        })
    }

    /// [`TradingEnv::step`] updating `state` in place. On error `state` is
    /// left unchanged.
    pub fn advance(&self, state: &mut EnvState, action: usize) -> Result<StepInfo> {
        let t = state.cursor;
        if t + 1 >= state.end || t + 1 >= self.log_prices.len() {
            return Err(Error::EpisodeExhausted(t));
        }
        let old = state.position;
        let new = position_transition(old, action, self.config.mode)?;
        let trade = new != old;
        let fee_legs = fee_legs(old, new);
        let price_move = self.log_prices[t + 1] - self.log_prices[t];
        let log_return = self.portfolio_log_return(t, old, new);

        let close = match (trade, old, state.trade_anchor) {
            (true, Position::Long | Position::Short, Some(anchor)) => Some(CloseEvent {
                position: old,
                open_price: self.series.close()[anchor],
                close_price: self.series.close()[t],
            }),
            _ => None,
        };

        state.trace.push(log_return);
        let reward = reward_vector(&state.trace, close, self.config.window);

        if !state.lookback.is_empty() {
            state.lookback.copy_within(1.., 0);
            *state.lookback.last_mut().expect("non-empty lookback") = price_move;
        }
        state.position = new;
        state.cursor = t + 1;
        if trade {
            state.trade_anchor = Some(t);
        }
        Ok(StepInfo {
            reward,
            done: state.is_done(),
            trade_occurred: trade,
            portfolio_log_return: log_return,
            fee_legs,
        })
    }
}
