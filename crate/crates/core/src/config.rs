//! Run configuration: a flat `key = value` file (TOML syntax, no tables).
//!
//! Every key is optional; omitted keys take the defaults of
//! [`TrainConfig::default`] and [`RunConfig`]. Unknown keys are rejected.
//! Exactly one of `data` (CSV path) or `synthetic` (generator kind) must be
//! given.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agent::{HindsightAction, TrainConfig, WeightVector};
use crate::env::ActionSpace;
use crate::error::{Error, Result};
use crate::evaluation::ReportMetric;
use crate::market_data::{
    load_csv, make_split, walk_forward_folds, ColumnMap, FoldPlan, PriceSeries,
};
use crate::rewards::RewardComponent;
use crate::synthetic::{generate_synthetic, SyntheticKind, SyntheticSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Csv { path: PathBuf, columns: ColumnMap },
    Synthetic(SyntheticSpec),
}

impl DataSource {
    pub fn load(&self) -> Result<PriceSeries> {
        match self {
            DataSource::Csv { path, columns } => load_csv(path, columns),
            DataSource::Synthetic(spec) => generate_synthetic(spec),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub data: DataSource,
    pub out_dir: PathBuf,
    pub report_metric: ReportMetric,
    /// Train, eval and test fractions.
    pub split: [f64; 3],
    pub n_folds: usize,
}

impl RunConfig {
    pub fn with_data(data: DataSource) -> Self {
        Self {
            train: TrainConfig::default(),
            data,
            out_dir: PathBuf::from("runs"),
            report_metric: ReportMetric::Sharpe,
            split: [0.64, 0.16, 0.20],
            n_folds: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if let DataSource::Synthetic(spec) = &self.data {
            spec.validate()?;
            if spec.length < self.train.lookback + 2 {
                return Err(Error::invalid(
                    "synthetic_length",
                    format!("{} is shorter than lookback + 2", spec.length),
                ));
            }
        }
        if self.n_folds == 0 {
            return Err(Error::invalid("n_folds", "must be positive"));
        }
        if self.split.iter().any(|f| f.is_nan() || *f <= 0.0)
            || (self.split.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return Err(Error::invalid(
                "split",
                format!("{:?} must be positive and sum to 1", self.split),
            ));
        }
        Ok(())
    }

    /// The series plus its train/eval/test split.
    pub fn load_data(&self) -> Result<(PriceSeries, crate::market_data::DataSplit)> {
        let series = self.data.load()?;
        let split = make_split(&series, self.split)?;
        Ok((series, split))
    }

    pub fn fold_plan(&self, series: &PriceSeries) -> Result<FoldPlan> {
        walk_forward_folds(series, self.n_folds, self.split[1], self.split[2])
    }

    /// Flat file text that parses back to `self`.
    pub fn to_file_string(&self) -> Result<String> {
        let raw = RawConfig::from(self);
        toml::to_string(&raw).map_err(|e| Error::invalid("config", e.to_string()))
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_file_string()?)?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let config: RunConfig = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }
}

/// On-disk form; `None` means "use the default".
#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    data: Option<PathBuf>,
    timestamp_column: Option<String>,
    close_column: Option<String>,
    synthetic: Option<SyntheticKind>,
    synthetic_length: Option<usize>,
    synthetic_base: Option<f64>,
    synthetic_amplitude: Option<f64>,
    synthetic_period: Option<f64>,
    synthetic_drift: Option<f64>,
    synthetic_vol: Option<f64>,
    synthetic_seed: Option<u64>,
    out_dir: Option<PathBuf>,
    report_metric: Option<ReportMetric>,
    split: Option<[f64; 3]>,
    n_folds: Option<usize>,

    mode: Option<ActionSpace>,
    multi_reward: Option<bool>,
    reward: Option<RewardComponent>,
    generalize_gamma: Option<bool>,
    gamma: Option<f64>,
    gamma_range: Option<[f64; 2]>,
    alpha: Option<f64>,
    tol: Option<f64>,
    batchsize: Option<usize>,
    k: Option<usize>,
    episodes: Option<usize>,
    train_episodes: Option<BTreeSet<usize>>,
    window: Option<usize>,
    lookback: Option<usize>,
    random_access: Option<bool>,
    episode_len: Option<usize>,
    fee: Option<f64>,
    max_age: Option<u64>,
    hidden: Option<Vec<usize>>,
    learn_rate: Option<f64>,
    momentum: Option<f64>,
    sync_period: Option<u64>,
    seed: Option<u64>,
    whiten: Option<bool>,
    eigen_floor: Option<f64>,
    hindsight_action: Option<HindsightAction>,
    pinned_weights: Option<WeightVector>,
    return_scale: Option<f64>,
    eval_weights: Option<WeightVector>,
}

impl From<&RunConfig> for RawConfig {
    fn from(c: &RunConfig) -> Self {
        let t = &c.train;
        let mut raw = RawConfig {
            out_dir: Some(c.out_dir.clone()),
            report_metric: Some(c.report_metric),
            split: Some(c.split),
            n_folds: Some(c.n_folds),
            mode: Some(t.mode),
            multi_reward: Some(t.multi_reward),
            reward: Some(t.reward),
            generalize_gamma: Some(t.generalize_gamma),
            gamma: Some(t.gamma),
            gamma_range: t.generalize_gamma.then_some(t.gamma_range),
            alpha: Some(t.alpha),
            tol: Some(t.tol),
            batchsize: Some(t.batchsize),
            k: Some(t.k),
            episodes: Some(t.episodes),
            train_episodes: Some(t.train_episodes.clone()),
            window: Some(t.window),
            lookback: Some(t.lookback),
            random_access: Some(t.random_access),
            episode_len: Some(t.episode_len),
            fee: Some(t.fee),
            max_age: Some(t.max_age),
            hidden: Some(t.hidden.clone()),
            learn_rate: Some(t.learn_rate),
            momentum: Some(t.momentum),
            sync_period: Some(t.sync_period),
            seed: Some(t.seed),
            whiten: Some(t.whiten),
            eigen_floor: Some(t.eigen_floor),
            hindsight_action: Some(t.hindsight_action),
            pinned_weights: t.pinned_weights,
            return_scale: Some(t.return_scale),
            eval_weights: t.eval_weights,
            ..RawConfig::default()
        };
        match &c.data {
            DataSource::Csv { path, columns } => {
                raw.data = Some(path.clone());
                raw.timestamp_column = Some(columns.timestamp.clone());
                raw.close_column = Some(columns.close.clone());
            }
            DataSource::Synthetic(s) => {
                raw.synthetic = Some(s.kind);
                raw.synthetic_length = Some(s.length);
                raw.synthetic_base = Some(s.base);
                raw.synthetic_amplitude = Some(s.amplitude);
                raw.synthetic_period = Some(s.period);
                raw.synthetic_drift = Some(s.drift);
                raw.synthetic_vol = Some(s.vol);
                raw.synthetic_seed = Some(s.seed);
            }
        }
        raw
    }
}

impl RawConfig {
    fn resolve(self) -> Result<RunConfig> {
        let synthetic_keys = self.synthetic_length.is_some()
            || self.synthetic_base.is_some()
            || self.synthetic_amplitude.is_some()
            || self.synthetic_period.is_some()
            || self.synthetic_drift.is_some()
            || self.synthetic_vol.is_some()
            || self.synthetic_seed.is_some();
        let data = match (self.data, self.synthetic) {
            (Some(_), Some(_)) => {
                return Err(Error::invalid(
                    "data",
                    "give either `data` or `synthetic`, not both",
                ))
            }
            (None, None) => {
                return Err(Error::invalid(
                    "data",
                    "one of `data` or `synthetic` is required",
                ))
            }
            (Some(path), None) => {
                if synthetic_keys {
                    return Err(Error::invalid("data", "synthetic_* keys need `synthetic`"));
                }
                let d = ColumnMap::default();
                DataSource::Csv {
                    path,
                    columns: ColumnMap {
                        timestamp: self.timestamp_column.unwrap_or(d.timestamp),
                        close: self.close_column.unwrap_or(d.close),
                    },
                }
            }
            (None, Some(kind)) => {
                if self.timestamp_column.is_some() || self.close_column.is_some() {
                    return Err(Error::invalid("synthetic", "column names need `data`"));
                }
                let d = SyntheticSpec::default();
                DataSource::Synthetic(SyntheticSpec {
                    kind,
                    length: self.synthetic_length.unwrap_or(d.length),
                    base: self.synthetic_base.unwrap_or(d.base),
                    amplitude: self.synthetic_amplitude.unwrap_or(d.amplitude),
                    period: self.synthetic_period.unwrap_or(d.period),
                    drift: self.synthetic_drift.unwrap_or(d.drift),
                    vol: self.synthetic_vol.unwrap_or(d.vol),
                    seed: self.synthetic_seed.unwrap_or(d.seed),
                })
            }
        };

        let generalize_gamma = self.generalize_gamma.unwrap_or(false);
        if self.gamma_range.is_some() && !generalize_gamma {
            return Err(Error::invalid(
                "gamma_range",
                "only meaningful with generalize_gamma = true",
            ));
        }

        let d = TrainConfig::default();
        let episodes = self.episodes.unwrap_or(d.episodes);
        let train = TrainConfig {
            mode: self.mode.unwrap_or(d.mode),
            multi_reward: self.multi_reward.unwrap_or(d.multi_reward),
            reward: self.reward.unwrap_or(d.reward),
            generalize_gamma,
            gamma: self.gamma.unwrap_or(d.gamma),
            gamma_range: self.gamma_range.unwrap_or(d.gamma_range),
            alpha: self.alpha.unwrap_or(d.alpha),
            tol: self.tol.unwrap_or(d.tol),
            batchsize: self.batchsize.unwrap_or(d.batchsize),
            k: self.k.unwrap_or(d.k),
            episodes,
            train_episodes: self
                .train_episodes
                .unwrap_or_else(|| (1..=episodes).collect()),
            window: self.window.unwrap_or(d.window),
            lookback: self.lookback.unwrap_or(d.lookback),
            random_access: self.random_access.unwrap_or(d.random_access),
            episode_len: self.episode_len.unwrap_or(d.episode_len),
            fee: self.fee.unwrap_or(d.fee),
            max_age: self.max_age.unwrap_or(d.max_age),
            hidden: self.hidden.unwrap_or(d.hidden),
            learn_rate: self.learn_rate.unwrap_or(d.learn_rate),
            momentum: self.momentum.unwrap_or(d.momentum),
            sync_period: self.sync_period.unwrap_or(d.sync_period),
            seed: self.seed.unwrap_or(d.seed),
            whiten: self.whiten.unwrap_or(d.whiten),
            eigen_floor: self.eigen_floor.unwrap_or(d.eigen_floor),
            hindsight_action: self.hindsight_action.unwrap_or(d.hindsight_action),
            pinned_weights: self.pinned_weights,
            return_scale: self.return_scale.unwrap_or(d.return_scale),
            eval_weights: self.eval_weights,
        };
        let mut config = RunConfig::with_data(data);
        config.train = train;
        if let Some(out) = self.out_dir {
            config.out_dir = out;
        }
        if let Some(m) = self.report_metric {
            config.report_metric = m;
        }
        if let Some(s) = self.split {
            config.split = s;
        }
        if let Some(n) = self.n_folds {
            config.n_folds = n;
        }
        config.validate()?;
        Ok(config)
    }
}

/// Parses config text. Relative paths are left as written.
pub fn parse_config_str(text: &str) -> Result<RunConfig> {
    let raw: RawConfig = toml::from_str(text).map_err(classify_toml_error)?;
    raw.resolve()
}

pub fn parse_config(path: impl AsRef<Path>) -> Result<RunConfig> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    parse_config_str(&std::fs::read_to_string(path)?)
}

fn classify_toml_error(e: toml::de::Error) -> Error {
    let msg = e.message().to_string();
    if let Some(rest) = msg.strip_prefix("unknown field `") {
        if let Some(name) = rest.split('`').next() {
            return Error::UnknownKey(name.to_string());
        }
    }
    // serde reports the failing key in the span, not the message
    let key = e
        .span()
        .map(|_| msg.split('`').nth(1).unwrap_or("config").to_string())
        .unwrap_or_else(|| "config".to_string());
    Error::InvalidValue { key, reason: msg }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_with_data_path() {
        let c = parse_config_str("data = \"prices.csv\"").unwrap();
        let t = &c.train;
        assert_eq!(t.mode, ActionSpace::LSP);
        assert!(t.multi_reward);
        assert_eq!(t.window, 20);
        assert_eq!(t.lookback, 30);
        assert_eq!(t.gamma, 0.95);
        assert!(!t.generalize_gamma);
        assert_eq!(t.tol, 0.1);
        assert_eq!(t.k, 3);
        assert_eq!(t.batchsize, 64);
        assert_eq!(t.max_age, 5000);
        assert_eq!(t.fee, 0.0);
        assert_eq!(*t, TrainConfig::default());
        assert_eq!(c.report_metric, ReportMetric::Sharpe);
        assert!(matches!(c.data, DataSource::Csv { .. }));
    }

    #[test]
    fn gamma_range_needs_generalization() {
        let err = parse_config_str(
            "data = \"p.csv\"\ngamma_range = [0.5, 0.999]\ngeneralize_gamma = false",
        )
        .unwrap_err();
        assert!(matches!(err, Error::InvalidValue { ref key, .. } if key == "gamma_range"));
        parse_config_str("data = \"p.csv\"\ngamma_range = [0.5, 0.999]\ngeneralize_gamma = true")
            .unwrap();
    }

    #[test]
    fn negative_fee_rejected() {
        let err = parse_config_str("data = \"p.csv\"\nfee = -0.1").unwrap_err();
        assert!(matches!(err, Error::InvalidValue { ref key, .. } if key == "fee"));
    }

    #[test]
    fn unknown_key_rejected() {
        let err = parse_config_str("data = \"p.csv\"\nlearning_rate = 0.1").unwrap_err();
        assert!(
            matches!(err, Error::UnknownKey(ref k) if k == "learning_rate"),
            "{err:?}"
        );
    }

    #[test]
    fn wrong_type_is_invalid_value() {
        let err = parse_config_str("data = \"p.csv\"\nk = \"three\"").unwrap_err();
        assert_eq!(err.kind(), "InvalidValue");
    }

    #[test]
    fn data_source_required_and_exclusive() {
        assert!(parse_config_str("").is_err());
        assert!(parse_config_str("data = \"p.csv\"\nsynthetic = \"sine\"").is_err());
        assert!(parse_config_str("data = \"p.csv\"\nsynthetic_period = 3.0").is_err());
    }

    #[test]
    fn missing_file() {
        assert!(matches!(
            parse_config("/no/such/config.toml"),
            Err(Error::MissingFile(_))
        ));
    }

    #[test]
    fn train_episodes_follow_episodes() {
        let c = parse_config_str("synthetic = \"sine\"\nepisodes = 10").unwrap();
        assert_eq!(c.train.train_episodes, (1..=10).collect());
        let c = parse_config_str("synthetic = \"sine\"\nepisodes = 10\ntrain_episodes = [5, 10]")
            .unwrap();
        assert_eq!(c.train.train_episodes.len(), 2);
        assert!(
            parse_config_str("synthetic = \"sine\"\nepisodes = 10\ntrain_episodes = [11]").is_err()
        );
    }

    #[test]
    fn synthetic_too_short_for_lookback() {
        let err = parse_config_str("synthetic = \"sine\"\nsynthetic_length = 20\nlookback = 30")
            .unwrap_err();
        assert_eq!(err.kind(), "InvalidValue");
    }

    #[test]
    fn round_trips() {
        let texts = [
            "data = \"p.csv\"",
            "synthetic = \"random-walk\"\nsynthetic_seed = 4\nmode = \"lp\"\nmulti_reward = false\nreward = \"powc\"",
            "synthetic = \"sine\"\ngeneralize_gamma = true\ngamma_range = [0.6, 0.9]\neval_weights = [0.5, 0.5, 0.0, 0.0]\npinned_weights = [0.0, 0.0, 0.0, 1.0]\nhidden = []\nfee = 0.0003",
        ];
        for text in texts {
            let c = parse_config_str(text).unwrap();
            let again = parse_config_str(&c.to_file_string().unwrap()).unwrap();
            assert_eq!(c, again);
            assert_eq!(RunConfig::from_json(&c.to_json().unwrap()).unwrap(), c);
        }
    }
}
