//! The four reward components, always in the order `(lr, alr, sr, powc)`.
//!
//! `lr` is the step's portfolio log-return; `alr` and `sr` are the mean and
//! the mean/std ratio over the last `L` portfolio log-returns; `powc` pays the
//! whole log-profit of a trade on the step that closes it and is zero
//! otherwise.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::env::Position;
use crate::error::{Error, Result};

/// Below this standard deviation the Sharpe ratio is reported as zero.
pub const SHARPE_STD_FLOOR: f64 = 1e-12;

pub const DEFAULT_WINDOW: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RewardComponent {
    Lr,
    Alr,
    Sr,
    Powc,
}

impl RewardComponent {
    pub const ALL: [RewardComponent; 4] = [
        RewardComponent::Lr,
        RewardComponent::Alr,
        RewardComponent::Sr,
        RewardComponent::Powc,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RewardComponent::Lr => "lr",
            RewardComponent::Alr => "alr",
            RewardComponent::Sr => "sr",
            RewardComponent::Powc => "powc",
        }
    }
}

impl fmt::Display for RewardComponent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RewardComponent {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        RewardComponent::ALL
            .into_iter()
            .find(|c| c.as_str() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::invalid("reward", format!("`{s}` is not lr|alr|sr|powc")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardVector {
    pub lr: f64,
    pub alr: f64,
    pub sr: f64,
    pub powc: f64,
}

impl RewardVector {
    pub const ZERO: RewardVector = RewardVector {
        lr: 0.0,
        alr: 0.0,
        sr: 0.0,
        powc: 0.0,
    };

    pub fn from_array(v: [f64; 4]) -> Self {
        Self {
            lr: v[0],
            alr: v[1],
            sr: v[2],
            powc: v[3],
        }
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.lr, self.alr, self.sr, self.powc]
    }

    pub fn get(&self, c: RewardComponent) -> f64 {
        self.to_array()[c.index()]
    }

    pub fn dot(&self, weights: &[f64; 4]) -> f64 {
        let r = self.to_array();
        r[0] * weights[0] + r[1] * weights[1] + r[2] * weights[2] + r[3] * weights[3]
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|x| x.is_finite())
    }
}

/// Rolling window of the most recent portfolio log-returns.
///
/// The window always holds exactly `L` entries: before `L` steps have
/// elapsed it is left-padded with zeros, which is what a Neutral position
/// would have earned.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnTrace {
    window: VecDeque<f64>,
}

impl ReturnTrace {
    pub fn new(window: usize) -> Self {
        assert!(window >= 1, "reward window must be at least 1");
        Self {
            window: std::iter::repeat_n(0.0, window).collect(),
        }
    }

    /// Builds a trace whose window ends with `recent` (zero padded on the left).
    pub fn from_recent(window: usize, recent: &[f64]) -> Self {
        let mut trace = Self::new(window);
        for &r in recent {
            trace.push(r);
        }
        trace
    }

    pub fn push(&mut self, log_return: f64) {
        self.window.pop_front();
        self.window.push_back(log_return);
    }

    pub fn window_len(&self) -> usize {
        self.window.len()
    }

    pub fn last(&self) -> f64 {
        *self.window.back().expect("window is never empty")
    }

    /// The last `l` entries (clamped to the window length), oldest first.
    pub fn tail(&self, l: usize) -> impl Iterator<Item = f64> + Clone + '_ {
        let l = l.min(self.window.len());
        self.window.iter().skip(self.window.len() - l).copied()
    }
}

pub fn reward_lr(trace: &ReturnTrace) -> f64 {
    trace.last()
}

pub fn reward_alr(trace: &ReturnTrace, window: usize) -> f64 {
    let l = window.min(trace.window_len()).max(1);
    trace.tail(l).sum::<f64>() / l as f64
}

/// Non-annualized Sharpe ratio with population standard deviation.
pub fn reward_sr(trace: &ReturnTrace, window: usize) -> f64 {
    let l = window.min(trace.window_len()).max(1);
    sharpe(trace.tail(l))
}

/// Mean over population std of `returns`, or 0 when the std is below
/// [`SHARPE_STD_FLOOR`] (including the empty and single-element cases).
pub fn sharpe(returns: impl Iterator<Item = f64> + Clone) -> f64 {
    let (n, sum) = returns
        .clone()
        .fold((0usize, 0.0), |(n, s), r| (n + 1, s + r));
    if n == 0 {
        return 0.0;
    }
    let mean = sum / n as f64;
    let var = returns.map(|r| (r - mean) * (r - mean)).sum::<f64>() / n as f64;
    let std = var.sqrt();
    if std < SHARPE_STD_FLOOR {
        0.0
    } else {
        mean / std
    }
}

/// A position closed on the current step, valued between its opening and
/// closing execution prices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CloseEvent {
    pub position: Position,
    pub open_price: f64,
    pub close_price: f64,
}

pub fn reward_powc(
    closed: bool,
    closed_position: Position,
    open_price: f64,
    close_price: f64,
) -> f64 {
    if !closed {
        return 0.0;
    }
    let gain = close_price.ln() - open_price.ln();
    match closed_position {
        Position::Long => gain,
        Position::Short => -gain,
        Position::Neutral => 0.0,
    }
}

pub fn reward_vector(
    trace: &ReturnTrace,
    close: Option<CloseEvent>,
    window: usize,
) -> RewardVector {
    let powc = close.map_or(0.0, |c| {
        reward_powc(true, c.position, c.open_price, c.close_price)
    });
    RewardVector {
        lr: reward_lr(trace),
        alr: reward_alr(trace, window),
        sr: reward_sr(trace, window),
        powc,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const LN_1_1: f64 = 0.095_310_179_804_324_87;

    #[test]
    fn lr_is_last_entry() {
        assert!((reward_lr(&ReturnTrace::from_recent(3, &[LN_1_1])) - 0.0953102).abs() < 1e-7);
        assert_eq!(reward_lr(&ReturnTrace::new(3)), 0.0);
        assert_eq!(reward_lr(&ReturnTrace::from_recent(3, &[-LN_1_1])), -LN_1_1);
    }

    #[test]
    fn alr_examples() {
        assert!((reward_alr(&ReturnTrace::from_recent(2, &[0.01, 0.03]), 2) - 0.02).abs() < 1e-15);
        assert_eq!(reward_alr(&ReturnTrace::new(4), 4), 0.0);
        assert_eq!(
            reward_alr(&ReturnTrace::from_recent(2, &[LN_1_1, -LN_1_1]), 2),
            0.0
        );
    }

    #[test]
    fn alr_pads_with_zeros() {
        let t = ReturnTrace::from_recent(4, &[0.04]);
        assert!((reward_alr(&t, 4) - 0.01).abs() < 1e-15);
    }

    #[test]
    fn sr_examples() {
        assert_eq!(
            reward_sr(&ReturnTrace::from_recent(2, &[0.02, -0.02]), 2),
            0.0
        );
        let sr = reward_sr(&ReturnTrace::from_recent(2, &[0.01, 0.03]), 2);
        assert!((sr - 2.0).abs() < 1e-12, "{sr}");
        assert_eq!(
            reward_sr(&ReturnTrace::from_recent(2, &[0.05, 0.05]), 2),
            0.0
        );
    }

    #[test]
    fn powc_examples() {
        let long = reward_powc(true, Position::Long, 100.0, 120.0);
        assert!((long - 0.182_321_556_793_954_6).abs() < 1e-12);
        assert_eq!(reward_powc(false, Position::Long, 100.0, 120.0), 0.0);
        let short = reward_powc(true, Position::Short, 100.0, 80.0);
        assert!((short - 0.223_143_551_314_209_76).abs() < 1e-12);
    }

    #[test]
    fn vector_examples() {
        assert_eq!(
            reward_vector(&ReturnTrace::new(20), None, 20),
            RewardVector::ZERO
        );

        let t = ReturnTrace::from_recent(1, &[LN_1_1]);
        let v = reward_vector(&t, None, 1);
        assert_eq!(v.to_array(), [LN_1_1, LN_1_1, 0.0, 0.0]);

        let ln12 = 1.2f64.ln();
        let t = ReturnTrace::from_recent(1, &[ln12]);
        let close = CloseEvent {
            position: Position::Long,
            open_price: 100.0,
            close_price: 120.0,
        };
        let v = reward_vector(&t, Some(close), 1);
        assert!((v.powc - v.lr).abs() < 1e-15);
    }

    #[test]
    fn component_names_round_trip() {
        for c in RewardComponent::ALL {
            assert_eq!(c.as_str().parse::<RewardComponent>().unwrap(), c);
        }
        assert!("sharpe".parse::<RewardComponent>().is_err());
    }

    proptest! {
        #[test]
        fn sr_invariant_under_positive_scaling(
            xs in prop::collection::vec(-0.1f64..0.1, 2..30),
            scale in 0.01f64..100.0,
        ) {
            let l = xs.len();
            let a = ReturnTrace::from_recent(l, &xs);
            let scaled: Vec<f64> = xs.iter().map(|x| x * scale).collect();
            let b = ReturnTrace::from_recent(l, &scaled);
            let std_ok = |v: &[f64]| {
                let m = v.iter().sum::<f64>() / v.len() as f64;
                (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64).sqrt() >= SHARPE_STD_FLOOR
            };
            prop_assume!(std_ok(&xs) && std_ok(&scaled));
            let (sa, sb) = (reward_sr(&a, l), reward_sr(&b, l));
            prop_assert!((sa - sb).abs() <= 1e-9 * sa.abs().max(1.0), "{} vs {}", sa, sb);
        }

        #[test]
        fn components_are_finite(xs in prop::collection::vec(-1.0f64..1.0, 0..40), window in 1usize..25) {
            let t = ReturnTrace::from_recent(window, &xs);
            prop_assert!(reward_vector(&t, None, window).is_finite());
        }
    }
}
