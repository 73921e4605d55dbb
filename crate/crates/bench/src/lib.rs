//! Helpers shared by the benchmarks and experiment scripts.

use mrdqn::rng::{stream, Stream};
use mrdqn::synthetic::{generate_synthetic, SyntheticSpec};
use mrdqn::{ActionSpace, InputLayout, PriceSeries, QNetwork, RewardComponent, TrainConfig};

/// Sine prices used by the learning experiments: period 50, amplitude 10%.
pub fn sine_series(len: usize) -> PriceSeries {
    generate_synthetic(&SyntheticSpec::sine(len, 0.1, 50.0)).expect("valid sine spec")
}

pub fn random_walk(len: usize, seed: u64) -> PriceSeries {
    generate_synthetic(&SyntheticSpec::random_walk(len, 0.0, 0.01, seed)).expect("valid walk spec")
}

/// Untrained network of the given shape with seeded weights.
pub fn random_net(mode: ActionSpace, lookback: usize, hidden: &[usize], seed: u64) -> QNetwork {
    let layout = InputLayout {
        mode,
        lookback,
        generalize_gamma: false,
        return_scale: 100.0,
    };
    QNetwork::init(layout, hidden, &mut stream(seed, Stream::NetInit)).expect("valid layout")
}

/// Small training setup on random episodes that finishes in seconds.
pub fn quick_config(
    mode: ActionSpace,
    reward: RewardComponent,
    multi_reward: bool,
    episodes: usize,
    seed: u64,
) -> TrainConfig {
    TrainConfig {
        mode,
        multi_reward,
        reward,
        episodes,
        train_episodes: (1..=episodes).collect(),
        random_access: true,
        episode_len: 256,
        lookback: 10,
        hidden: vec![32, 32],
        max_age: 2000,
        batchsize: 32,
        seed,
        ..TrainConfig::default()
    }
}

pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "median of nothing");
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_odd_and_even() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
