//! Trains LR agents on the sine series, keeps the most profitable one and
//! replays it with a 0.03% fee.
//!
//! cargo run --release -p mrdqn-bench --example fee_degradation [seeds] [episodes]

use mrdqn::evaluation::run_policy;
use mrdqn::market_data::make_split;
use mrdqn::{train, ActionSpace, EnvConfig, RewardComponent};
use mrdqn_bench::{quick_config, sine_series};

const FEE: f64 = 0.0003;

fn main() {
    let mut args = std::env::args()
        .skip(1)
        .map(|a| a.parse::<usize>().expect("integer argument"));
    let seeds = args.next().unwrap_or(3) as u64;
    let episodes = args.next().unwrap_or(300);
    let series = sine_series(5000);
    let split = make_split(&series, [0.7, 0.15, 0.15]).expect("valid split");

    let mut best = None;
    for seed in 0..seeds {
        let cfg = quick_config(ActionSpace::LSP, RewardComponent::Lr, false, episodes, seed);
        let out = train(&cfg, &series, &split).expect("training run");
        let r = run_policy(
            &out.net,
            &series,
            split.train,
            &cfg.evaluation_weights(),
            cfg.gamma,
            &cfg.env_config(),
        )
        .expect("rollout");
        println!(
            "seed {seed}: train profit {:.4}, buy-and-hold {:.4}",
            r.report.total_profit, r.report.buy_and_hold_profit
        );
        if best
            .as_ref()
            .is_none_or(|(p, _, _)| r.report.total_profit > *p)
        {
            best = Some((r.report.total_profit, out.net, cfg));
        }
    }
    let (_, net, cfg) = best.expect("at least one seed");
    let w = cfg.evaluation_weights();
    for fee in [0.0, FEE] {
        let env_cfg = EnvConfig {
            fee,
            ..cfg.env_config()
        };
        let r = run_policy(&net, &series, split.train, &w, cfg.gamma, &env_cfg).expect("rollout");
        println!(
            "fee {fee}: {} trades, total profit {:.4}, log profit {:.4}",
            r.report.trades,
            r.report.total_profit,
            (1.0 + r.report.total_profit).ln()
        );
    }
}
