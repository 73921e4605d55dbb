//! Multi-reward against POWC-only training on the sine series in LP mode.
//! Reports the best eval-range POWC reward of each run and the medians over
//! seeds. Slow and noisy by nature, so it is not part of the test suite.
//!
//! cargo run --release -p mrdqn-bench --example sparse_reward [seeds] [episodes]

use mrdqn::market_data::make_split;
use mrdqn::{train, ActionSpace, RewardComponent, WeightVector};
use mrdqn_bench::{median, quick_config, sine_series};

fn main() {
    let mut args = std::env::args()
        .skip(1)
        .map(|a| a.parse::<usize>().expect("integer argument"));
    let seeds = args.next().unwrap_or(10) as u64;
    let episodes = args.next().unwrap_or(150);
    let series = sine_series(5000);
    let split = make_split(&series, [0.7, 0.15, 0.15]).expect("valid split");

    let mut medians = Vec::new();
    for multi in [true, false] {
        let label = if multi { "multi-reward" } else { "single POWC" };
        let mut best = Vec::new();
        for seed in 0..seeds {
            let cfg = mrdqn::TrainConfig {
                eval_weights: Some(WeightVector::one_hot(RewardComponent::Powc)),
                ..quick_config(
                    ActionSpace::LP,
                    RewardComponent::Powc,
                    multi,
                    episodes,
                    seed,
                )
            };
            let out = train(&cfg, &series, &split).expect("training run");
            let b = out
                .checkpoints
                .iter()
                .map(|c| c.metrics.eval.total_reward)
                .fold(f64::NEG_INFINITY, f64::max);
            println!("{label:>13} seed {seed}: best eval POWC {b:.4}");
            best.push(b);
        }
        let m = median(&best);
        println!("{label:>13} median: {m:.4}");
        medians.push(m);
    }
    println!(
        "multi-reward median {} single-reward median ({:.4} vs {:.4})",
        if medians[0] >= medians[1] { ">=" } else { "<" },
        medians[0],
        medians[1]
    );
}
