//! `mrdqn` command-line driver.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use mrdqn::agent::{train_with_observer, Checkpoint, CheckpointMetrics, TrainObserver};
use mrdqn::config::{parse_config, RunConfig};
use mrdqn::evaluation::{best_index, run_policy, run_walk_forward, ReportMetric};
use mrdqn::market_data::RangeKind;
use mrdqn::{Error, QNetwork, Result, WeightVector};
use serde_json::json;

#[derive(Parser)]
#[command(
    name = "mrdqn",
    version,
    about = "Multi-reward deep Q-learning for trading"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train an agent and write checkpoints plus metrics.jsonl.
    Train(Common),
    /// Evaluate a checkpoint on one range and write report.json.
    Backtest {
        #[command(flatten)]
        common: Common,
        /// Checkpoint file; defaults to the best one recorded in the run directory.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        range: RangeKind,
    },
    /// Train on every walk-forward fold and write per-fold reports.
    Walkforward(Common),
    /// Summarize metrics.jsonl and write curves.csv.
    Report {
        /// Run directory holding metrics.jsonl.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        metric: Option<ReportMetric>,
    },
}

#[derive(Args)]
struct Common {
    /// Flat key=value config, or a config.resolved.json from an earlier run.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Evaluation weights as four comma-separated reals.
    #[arg(long)]
    weights: Option<WeightVector>,
    #[arg(long)]
    metric: Option<ReportMetric>,
}

impl Common {
    fn load(&self) -> Result<RunConfig> {
        let mut config = if self.config.extension().is_some_and(|e| e == "json") {
            if !self.config.exists() {
                return Err(Error::MissingFile(self.config.clone()));
            }
            RunConfig::from_json(&fs::read_to_string(&self.config)?)?
        } else {
            parse_config(&self.config)?
        };
        if let Some(out) = &self.out {
            config.out_dir = out.clone();
        }
        if let Some(seed) = self.seed {
            config.train.seed = seed;
        }
        if let Some(w) = self.weights {
            config.train.eval_weights = Some(w);
        }
        if let Some(m) = self.metric {
            config.report_metric = m;
        }
        config.validate()?;
        Ok(config)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(common) => common.load().and_then(|c| cmd_train(&c)),
        Command::Backtest {
            common,
            checkpoint,
            range,
        } => common
            .load()
            .and_then(|c| cmd_backtest(&c, checkpoint.as_deref(), range)),
        Command::Walkforward(common) => common.load().and_then(|c| cmd_walkforward(&c)),
        Command::Report { out, metric } => cmd_report(&out, metric.unwrap_or_default()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", json!({ "error": e.kind(), "message": e.to_string() }));
            ExitCode::FAILURE
        }
    }
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

/// Streams checkpoints to disk as training proceeds.
struct RunWriter {
    dir: PathBuf,
    metrics: BufWriter<File>,
    timings: BufWriter<File>,
    started: Instant,
    error: Option<Error>,
}

impl RunWriter {
    fn record(&mut self, checkpoint: &Checkpoint) -> Result<()> {
        checkpoint.net.save(
            self.dir
                .join(format!("checkpoint_{}.bin", checkpoint.episode)),
        )?;
        serde_json::to_writer(&mut self.metrics, &checkpoint.metrics)?;
        writeln!(self.metrics)?;
        self.metrics.flush()?;
        let timing = json!({
            "episode": checkpoint.episode,
            "wall_seconds": self.started.elapsed().as_secs_f64(),
        });
        writeln!(self.timings, "{timing}")?;
        Ok(())
    }
}

impl TrainObserver for RunWriter {
    fn on_checkpoint(&mut self, checkpoint: &Checkpoint) {
        if self.error.is_none() {
            self.error = self.record(checkpoint).err();
        }
    }
}

fn cmd_train(config: &RunConfig) -> Result<()> {
    let (series, split) = config.load_data()?;
    let dir = &config.out_dir;
    fs::create_dir_all(dir)?;
    fs::write(dir.join("config.resolved.json"), config.to_json()? + "\n")?;
    let mut writer = RunWriter {
        dir: dir.clone(),
        metrics: BufWriter::new(File::create(dir.join("metrics.jsonl"))?),
        timings: BufWriter::new(File::create(dir.join("timings.jsonl"))?),
        started: Instant::now(),
        error: None,
    };
    let outcome = train_with_observer(&config.train, &series, &split, &mut writer)?;
    if let Some(e) = writer.error.take() {
        return Err(e);
    }
    writer.timings.flush()?;
    outcome.net.save(dir.join("final.bin"))?;
    println!(
        "trained {} episodes, {} updates, {} checkpoints in {}",
        config.train.episodes,
        outcome.updates,
        outcome.checkpoints.len(),
        dir.display()
    );
    Ok(())
}

fn read_metrics(dir: &Path) -> Result<Vec<CheckpointMetrics>> {
    let path = dir.join("metrics.jsonl");
    if !path.exists() {
        return Err(Error::MissingFile(path));
    }
    let mut out = Vec::new();
    for line in BufReader::new(File::open(&path)?).lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

fn cmd_backtest(config: &RunConfig, checkpoint: Option<&Path>, range: RangeKind) -> Result<()> {
    let path = match checkpoint {
        Some(p) => p.to_path_buf(),
        None => {
            let metrics = read_metrics(&config.out_dir)?;
            let refs: Vec<&CheckpointMetrics> = metrics.iter().collect();
            let best = best_index(&refs, config.report_metric)?;
            config
                .out_dir
                .join(format!("checkpoint_{}.bin", metrics[best].episode))
        }
    };
    let net = QNetwork::load(&path)?;
    let (series, split) = config.load_data()?;
    let t = &config.train;
    let rollout = run_policy(
        &net,
        &series,
        split.get(range),
        &t.evaluation_weights(),
        t.gamma,
        &t.env_config(),
    )?;
    let report = rollout.report.with_range_id(range.as_str());
    fs::create_dir_all(&config.out_dir)?;
    write_json(&config.out_dir.join("report.json"), &report)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn cmd_walkforward(config: &RunConfig) -> Result<()> {
    let series = config.data.load()?;
    let plan = config.fold_plan(&series)?;
    let folds = run_walk_forward(&config.train, &series, &plan, config.report_metric)?;
    let dir = &config.out_dir;
    fs::create_dir_all(dir)?;
    fs::write(dir.join("config.resolved.json"), config.to_json()? + "\n")?;
    for fold in &folds {
        write_json(&dir.join(format!("fold_{}.json", fold.fold)), fold)?;
    }
    write_json(&dir.join("walkforward.json"), &folds)?;
    println!(
        "{:>4} {:>8} {:>12} {:>12} {:>12}",
        "fold", "episode", "test_profit", "test_sharpe", "bh_profit"
    );
    for f in &folds {
        let ep = f
            .selected_episode
            .map_or("final".to_string(), |e| e.to_string());
        println!(
            "{:>4} {:>8} {:>12.4} {:>12.4} {:>12.4}",
            f.fold, ep, f.test.total_profit, f.test.sharpe, f.test.buy_and_hold_profit
        );
    }
    Ok(())
}

fn cmd_report(dir: &Path, metric: ReportMetric) -> Result<()> {
    let metrics = read_metrics(dir)?;
    let mut csv = BufWriter::new(File::create(dir.join("curves.csv"))?);
    writeln!(csv, "episode,range,metric,value")?;
    for m in &metrics {
        for kind in RangeKind::ALL {
            for (name, value) in m.get(kind).metric_values() {
                writeln!(csv, "{},{},{},{}", m.episode, kind.as_str(), name, value)?;
            }
        }
    }
    csv.flush()?;

    println!(
        "{:>8} {:>6} {:>14} {:>12} {:>10} {:>8} {:>8}",
        "episode", "range", "total_reward", "profit", "sharpe", "long", "trades"
    );
    for m in &metrics {
        for kind in RangeKind::ALL {
            let r = m.get(kind);
            println!(
                "{:>8} {:>6} {:>14.6} {:>12.4} {:>10.4} {:>8.3} {:>8}",
                m.episode,
                kind.as_str(),
                r.total_reward,
                r.total_profit,
                r.sharpe,
                r.long_exposure,
                r.trades
            );
        }
    }
    let refs: Vec<&CheckpointMetrics> = metrics.iter().collect();
    let best = &metrics[best_index(&refs, metric)?];
    println!(
        "best by eval {metric}: episode {} (test profit {:.4}, test sharpe {:.4})",
        best.episode, best.test.total_profit, best.test.sharpe
    );
    Ok(())
}
