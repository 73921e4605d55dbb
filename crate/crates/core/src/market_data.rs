//! Single-asset price series: CSV loading, train/eval/test splits and
//! anchored walk-forward fold plans.
//!
//! All splitting works on indices, never on timestamps, so irregular
//! sampling (weekends, market closures) needs no special handling.

use std::fmt;
use std::path::Path;

use chrono::{DateTime, NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Timestamped close prices of one asset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceSeries {
    asset_id: String,
    /// Epoch seconds, strictly increasing.
    timestamps: Vec<i64>,
    close: Vec<f64>,
}

impl PriceSeries {
    /// Builds a series, checking ordering and positivity. Error row numbers
    /// are 1-based positions in `close`.
    pub fn new(asset_id: impl Into<String>, timestamps: Vec<i64>, close: Vec<f64>) -> Result<Self> {
        if timestamps.len() != close.len() {
            return Err(Error::ShapeMismatch {
                expected: timestamps.len(),
                actual: close.len(),
            });
        }
        for (i, &z) in close.iter().enumerate() {
            if !(z > 0.0 && z.is_finite()) {
                return Err(Error::NonPositivePrice(i + 1));
            }
        }
        for i in 1..timestamps.len() {
            if timestamps[i] <= timestamps[i - 1] {
                return Err(Error::NonMonotonicTimestamp(i + 1));
            }
        }
        Ok(Self {
            asset_id: asset_id.into(),
            timestamps,
            close,
        })
    }

    /// A series sampled at unit spacing starting at epoch 0.
    pub fn from_closes(asset_id: impl Into<String>, close: Vec<f64>) -> Result<Self> {
        let timestamps = (0..close.len() as i64).collect();
        Self::new(asset_id, timestamps, close)
    }

    pub fn asset_id(&self) -> &str {
        &self.asset_id
    }

    pub fn timestamps(&self) -> &[i64] {
        &self.timestamps
    }

    pub fn close(&self) -> &[f64] {
        &self.close
    }

    pub fn len(&self) -> usize {
        self.close.len()
    }

    pub fn is_empty(&self) -> bool {
        self.close.is_empty()
    }

    pub fn full_range(&self) -> IndexRange {
        IndexRange::new(0, self.len())
    }

    pub fn log_prices(&self) -> Vec<f64> {
        self.close.iter().map(|z| z.ln()).collect()
    }
}

/// Half-open index range `[start, end)`. Serialized as a two-element array.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "[usize; 2]", into = "[usize; 2]")]
pub struct IndexRange {
    pub start: usize,
    pub end: usize,
}

impl IndexRange {
    pub const fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains_range(&self, other: &IndexRange) -> bool {
        other.start >= self.start && other.end <= self.end
    }
}

impl From<[usize; 2]> for IndexRange {
    fn from(v: [usize; 2]) -> Self {
        IndexRange::new(v[0], v[1])
    }
}

impl From<IndexRange> for [usize; 2] {
    fn from(r: IndexRange) -> Self {
        [r.start, r.end]
    }
}

impl fmt::Display for IndexRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{},{})", self.start, self.end)
    }
}

/// Contiguous, disjoint train < eval < test ranges.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataSplit {
    pub train: IndexRange,
    pub eval: IndexRange,
    pub test: IndexRange,
}

impl DataSplit {
    pub fn get(&self, which: RangeKind) -> IndexRange {
        match which {
            RangeKind::Train => self.train,
            RangeKind::Eval => self.eval,
            RangeKind::Test => self.test,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RangeKind {
    Train,
    Eval,
    Test,
}

impl RangeKind {
    pub const ALL: [RangeKind; 3] = [RangeKind::Train, RangeKind::Eval, RangeKind::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            RangeKind::Train => "train",
            RangeKind::Eval => "eval",
            RangeKind::Test => "test",
        }
    }
}

impl fmt::Display for RangeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for RangeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(RangeKind::Train),
            "eval" => Ok(RangeKind::Eval),
            "test" => Ok(RangeKind::Test),
            other => Err(Error::invalid(
                "range",
                format!("`{other}` is not train|eval|test"),
            )),
        }
    }
}

/// Anchored walk-forward plan: every fold trains from index 0.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub folds: Vec<DataSplit>,
}

/// Names of the timestamp and close columns in a CSV export.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ColumnMap {
    pub timestamp: String,
    pub close: String,
}

impl Default for ColumnMap {
    fn default() -> Self {
        Self {
            timestamp: "timestamp".into(),
            close: "close".into(),
        }
    }
}

/// Loads a price series from a CSV file with one header row. Extra columns
/// are ignored. Timestamps are integer epoch seconds or ISO-8601.
pub fn load_csv(path: impl AsRef<Path>, columns: &ColumnMap) -> Result<PriceSeries> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(csv_to_error)?;
    let headers = reader.headers().map_err(csv_to_error)?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let ts_col = find(&columns.timestamp)?;
    let close_col = find(&columns.close)?;

    let mut timestamps = Vec::new();
    let mut close = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| Error::UnparsableRow {
            row,
            reason: e.to_string(),
        })?;
        let field = |col: usize| {
            record.get(col).ok_or_else(|| Error::UnparsableRow {
                row,
                reason: "row has too few fields".into(),
            })
        };
        let ts = parse_timestamp(field(ts_col)?).ok_or_else(|| Error::UnparsableRow {
            row,
            reason: format!("bad timestamp `{}`", field(ts_col).unwrap_or_default()),
        })?;
        let price_text = field(close_col)?;
        let price: f64 = price_text.parse().map_err(|_| Error::UnparsableRow {
            row,
            reason: format!("bad close `{price_text}`"),
        })?;
        if !price.is_finite() {
            return Err(Error::UnparsableRow {
                row,
                reason: format!("bad close `{price_text}`"),
            });
        }
        if price <= 0.0 {
            return Err(Error::NonPositivePrice(row));
        }
        if let Some(&prev) = timestamps.last() {
            if ts <= prev {
                return Err(Error::NonMonotonicTimestamp(row));
            }
        }
        timestamps.push(ts);
        close.push(price);
    }
    let asset_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    PriceSeries::new(asset_id, timestamps, close)
}

fn csv_to_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::UnparsableRow {
            row: 0,
            reason: format!("{other:?}"),
        },
    }
}

fn parse_timestamp(text: &str) -> Option<i64> {
    if let Ok(secs) = text.parse::<i64>() {
        return Some(secs);
    }
    if let Ok(dt) = DateTime::parse_from_rfc3339(text) {
        return Some(dt.timestamp());
    }
    for fmt in ["%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M"] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(text, fmt) {
            return Some(dt.and_utc().timestamp());
        }
    }
    NaiveDate::parse_from_str(text, "%Y-%m-%d").ok().map(|d| {
        d.and_hms_opt(0, 0, 0)
            .expect("midnight")
            .and_utc()
            .timestamp()
    })
}

// Absorbs representation error such as 0.29 * 100 = 28.999999999999996.
fn floor_index(x: f64) -> usize {
    (x + 1e-9).floor().max(0.0) as usize
}

pub const MIN_SPLIT_LEN: usize = 10;

/// Splits `series` into contiguous train/eval/test ranges by index.
pub fn make_split(series: &PriceSeries, fractions: [f64; 3]) -> Result<DataSplit> {
    split_len(series.len(), fractions)
}

pub(crate) fn split_len(n: usize, fractions: [f64; 3]) -> Result<DataSplit> {
    if fractions.iter().any(|f| !(f.is_finite() && *f > 0.0)) {
        return Err(Error::InvalidFractions(format!(
            "every fraction must be positive, got {fractions:?}"
        )));
    }
    let sum: f64 = fractions.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidFractions(format!(
            "fractions sum to {sum}, not 1"
        )));
    }
    if n < MIN_SPLIT_LEN {
        return Err(Error::SeriesTooShort {
            needed: MIN_SPLIT_LEN,
            actual: n,
        });
    }
    let a = floor_index(fractions[0] * n as f64);
    let b = floor_index((fractions[0] + fractions[1]) * n as f64).min(n);
    let split = DataSplit {
        train: IndexRange::new(0, a),
        eval: IndexRange::new(a, b),
        test: IndexRange::new(b, n),
    };
    if split.train.is_empty() || split.eval.is_empty() || split.test.is_empty() {
        return Err(Error::SeriesTooShort {
            needed: MIN_SPLIT_LEN,
            actual: n,
        });
    }
    Ok(split)
}

/// `ln z[t+1] - ln z[t]` for every consecutive pair.
pub fn log_return_series(series: &PriceSeries) -> Result<Vec<f64>> {
    if series.len() < 2 {
        return Err(Error::SeriesTooShort {
            needed: 2,
            actual: series.len(),
        });
    }
    Ok(series
        .close()
        .windows(2)
        .map(|w| w[1].ln() - w[0].ln())
        .collect())
}

/// Anchored walk-forward folds. Fold `k` (1-based) trains on
/// `[0, N*k/(n_folds+1))` and evaluates/tests on the following
/// `eval_frac*N` and `test_frac*N` points. A single fold degenerates to
/// [`make_split`] with fractions `(1 - eval - test, eval, test)`.
pub fn walk_forward_folds(
    series: &PriceSeries,
    n_folds: usize,
    eval_frac: f64,
    test_frac: f64,
) -> Result<FoldPlan> {
    let n = series.len();
    if n_folds == 0 {
        return Err(Error::InfeasibleFoldPlan("need at least one fold".into()));
    }
    for (name, f) in [("eval", eval_frac), ("test", test_frac)] {
        if !(f.is_finite() && f > 0.0 && f < 1.0) {
            return Err(Error::InfeasibleFoldPlan(format!(
                "{name} fraction {f} not in (0,1)"
            )));
        }
    }
    if eval_frac + test_frac >= 1.0 {
        return Err(Error::InfeasibleFoldPlan(
            "eval + test fractions leave no training data".into(),
        ));
    }
    if n_folds == 1 {
        let split = split_len(n, [1.0 - eval_frac - test_frac, eval_frac, test_frac])
            .map_err(|e| Error::InfeasibleFoldPlan(e.to_string()))?;
        return Ok(FoldPlan { folds: vec![split] });
    }

    let eval_len = floor_index(eval_frac * n as f64);
    let test_len = floor_index(test_frac * n as f64);
    let mut folds = Vec::with_capacity(n_folds);
    let mut prev_train_end = 0;
    for k in 1..=n_folds {
        let train_end = n * k / (n_folds + 1);
        let eval_end = train_end + eval_len;
        let test_end = eval_end + test_len;
        if train_end <= prev_train_end || eval_len == 0 || test_len == 0 {
            return Err(Error::InfeasibleFoldPlan(format!(
                "fold {k} of {n_folds} has an empty range over {n} points"
            )));
        }
        if test_end > n {
            return Err(Error::InfeasibleFoldPlan(format!(
                "fold {k} test range ends at {test_end}, past the series end {n}"
            )));
        }
        folds.push(DataSplit {
            train: IndexRange::new(0, train_end),
            eval: IndexRange::new(train_end, eval_end),
            test: IndexRange::new(eval_end, test_end),
        });
        prev_train_end = train_end;
    }
    Ok(FoldPlan { folds })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_csv(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::Builder::new().suffix(".csv").tempfile().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    fn series(n: usize) -> PriceSeries {
        PriceSeries::from_closes("t", vec![100.0; n]).unwrap()
    }

    #[test]
    fn loads_three_rows() {
        let f = write_csv("timestamp,open,close\n1,1,100\n2,1,110\n3,1,121\n");
        let s = load_csv(f.path(), &ColumnMap::default()).unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s.close(), &[100.0, 110.0, 121.0]);
    }

    #[test]
    fn loads_iso_timestamps() {
        let f = write_csv(
            "close,timestamp\n100,2020-01-01\n101,2020-01-02T00:00:00Z\n102,2020-01-02 01:00:00\n",
        );
        let s = load_csv(f.path(), &ColumnMap::default()).unwrap();
        assert_eq!(s.timestamps()[0], 1_577_836_800);
        assert_eq!(s.timestamps()[1] - s.timestamps()[0], 86_400);
        assert_eq!(s.timestamps()[2] - s.timestamps()[1], 3_600);
    }

    #[test]
    fn rejects_zero_price() {
        let f = write_csv("timestamp,close\n1,100\n2,0\n3,121\n");
        let err = load_csv(f.path(), &ColumnMap::default()).unwrap_err();
        assert!(matches!(err, Error::NonPositivePrice(2)), "{err:?}");
    }

    #[test]
    fn rejects_decreasing_timestamps() {
        let f = write_csv("timestamp,close\n1,100\n3,110\n2,121\n");
        let err = load_csv(f.path(), &ColumnMap::default()).unwrap_err();
        assert!(matches!(err, Error::NonMonotonicTimestamp(3)), "{err:?}");
    }

    #[test]
    fn missing_column_and_bad_rows() {
        let f = write_csv("time,close\n1,100\n");
        assert!(matches!(
            load_csv(f.path(), &ColumnMap::default()),
            Err(Error::MissingColumn(c)) if c == "timestamp"
        ));
        let f = write_csv("timestamp,close\n1,100\n2,abc\n");
        assert!(matches!(
            load_csv(f.path(), &ColumnMap::default()),
            Err(Error::UnparsableRow { row: 2, .. })
        ));
        assert!(matches!(
            load_csv("/nonexistent/prices.csv", &ColumnMap::default()),
            Err(Error::MissingFile(_))
        ));
    }

    #[test]
    fn custom_column_map() {
        let f = write_csv("Date,Close\n2021-03-01,5\n2021-03-02,6\n");
        let cols = ColumnMap {
            timestamp: "Date".into(),
            close: "Close".into(),
        };
        assert_eq!(load_csv(f.path(), &cols).unwrap().close(), &[5.0, 6.0]);
    }

    #[test]
    fn default_split_of_thousand() {
        let s = make_split(&series(1000), [0.64, 0.16, 0.20]).unwrap();
        assert_eq!(s.train, IndexRange::new(0, 640));
        assert_eq!(s.eval, IndexRange::new(640, 800));
        assert_eq!(s.test, IndexRange::new(800, 1000));
    }

    #[test]
    fn small_split_and_too_short() {
        let s = make_split(&series(10), [0.5, 0.25, 0.25]).unwrap();
        assert_eq!(
            (s.train, s.eval, s.test),
            (
                IndexRange::new(0, 5),
                IndexRange::new(5, 7),
                IndexRange::new(7, 10)
            )
        );
        assert!(matches!(
            make_split(&series(5), [0.64, 0.16, 0.2]),
            Err(Error::SeriesTooShort { .. })
        ));
        assert!(matches!(
            make_split(&series(100), [0.5, 0.5, 0.0]),
            Err(Error::InvalidFractions(_))
        ));
    }

    #[test]
    fn log_returns() {
        let s = PriceSeries::from_closes("t", vec![100.0, 110.0]).unwrap();
        let r = log_return_series(&s).unwrap();
        assert!((r[0] - 0.095_310_179_804_324_87).abs() < 1e-15);

        let s = PriceSeries::from_closes("t", vec![50.0; 3]).unwrap();
        assert_eq!(log_return_series(&s).unwrap(), vec![0.0, 0.0]);

        let s = PriceSeries::from_closes("t", vec![100.0, 110.0, 100.0]).unwrap();
        let r = log_return_series(&s).unwrap();
        assert_eq!(r[0], -r[1]);
        assert!((r[0] - 1.1f64.ln()).abs() < 1e-15);

        let s = PriceSeries::from_closes("t", vec![100.0]).unwrap();
        assert!(log_return_series(&s).is_err());
    }

    #[test]
    fn single_fold_matches_default_split() {
        let s = series(1000);
        let plan = walk_forward_folds(&s, 1, 0.16, 0.20).unwrap();
        assert_eq!(
            plan.folds,
            vec![make_split(&s, [0.64, 0.16, 0.20]).unwrap()]
        );
    }

    #[test]
    fn two_fold_plan_by_hand() {
        let plan = walk_forward_folds(&series(900), 2, 0.1, 0.1).unwrap();
        let got: Vec<_> = plan
            .folds
            .iter()
            .map(|f| (f.train.end, f.eval, f.test))
            .collect();
        assert_eq!(
            got,
            vec![
                (300, IndexRange::new(300, 390), IndexRange::new(390, 480)),
                (600, IndexRange::new(600, 690), IndexRange::new(690, 780)),
            ]
        );
        assert!(plan.folds.iter().all(|f| f.train.start == 0));
    }

    #[test]
    fn infeasible_plans() {
        assert!(matches!(
            walk_forward_folds(&series(50), 20, 0.16, 0.2),
            Err(Error::InfeasibleFoldPlan(_))
        ));
        assert!(walk_forward_folds(&series(50), 0, 0.1, 0.1).is_err());
        assert!(walk_forward_folds(&series(50), 2, 0.6, 0.5).is_err());
    }

    #[test]
    fn index_range_serializes_as_pair() {
        let json = serde_json::to_string(&IndexRange::new(3, 9)).unwrap();
        assert_eq!(json, "[3,9]");
        assert_eq!(IndexRange::new(3, 9).to_string(), "[3,9)");
    }
}
