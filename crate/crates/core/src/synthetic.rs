//! Seeded synthetic price series.

use std::f64::consts::TAU;
use std::fmt;
use std::str::FromStr;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market_data::PriceSeries;
use crate::rng::{stream, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SyntheticKind {
    /// `base * (1 + amplitude * sin(2 pi t / period))`.
    Sine,
    /// `base * exp(drift * t)` times the sine factor.
    Trend,
    /// Geometric random walk with Gaussian log-returns `N(drift, vol^2)`.
    RandomWalk,
}

impl SyntheticKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SyntheticKind::Sine => "sine",
            SyntheticKind::Trend => "trend",
            SyntheticKind::RandomWalk => "random-walk",
        }
    }
}

impl fmt::Display for SyntheticKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SyntheticKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sine" => Ok(SyntheticKind::Sine),
            "trend" => Ok(SyntheticKind::Trend),
            "random-walk" | "random_walk" => Ok(SyntheticKind::RandomWalk),
            other => Err(Error::invalid(
                "synthetic",
                format!("unknown kind `{other}`"),
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub kind: SyntheticKind,
    pub length: usize,
    pub base: f64,
    pub amplitude: f64,
    pub period: f64,
    pub drift: f64,
    pub vol: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            kind: SyntheticKind::Sine,
            length: 5000,
            base: 100.0,
            amplitude: 0.1,
            period: 50.0,
            drift: 0.0,
            vol: 0.01,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn sine(length: usize, amplitude: f64, period: f64) -> Self {
        Self {
            length,
            amplitude,
            period,
            ..Self::default()
        }
    }

    pub fn random_walk(length: usize, drift: f64, vol: f64, seed: u64) -> Self {
        Self {
            kind: SyntheticKind::RandomWalk,
            length,
            drift,
            vol,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.length < 2 {
            return Err(Error::invalid("synthetic_length", "need at least 2 prices"));
        }
        if !(self.base > 0.0 && self.base.is_finite()) {
            return Err(Error::invalid("synthetic_base", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.amplitude) {
            return Err(Error::invalid(
                "synthetic_amplitude",
                format!("{} not in [0,1)", self.amplitude),
            ));
        }
        if !(self.period > 0.0 && self.period.is_finite()) {
            return Err(Error::invalid("synthetic_period", "must be positive"));
        }
        if !self.drift.is_finite() {
            return Err(Error::invalid("synthetic_drift", "must be finite"));
        }
        if !(self.vol >= 0.0 && self.vol.is_finite()) {
            return Err(Error::invalid("synthetic_vol", "must be non-negative"));
        }
        Ok(())
    }
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<PriceSeries> {
    spec.validate()?;
    let wave = |t: usize| 1.0 + spec.amplitude * (TAU * t as f64 / spec.period).sin();
    let close: Vec<f64> = match spec.kind {
        SyntheticKind::Sine => (0..spec.length).map(|t| spec.base * wave(t)).collect(),
        SyntheticKind::Trend => (0..spec.length)
            .map(|t| spec.base * (spec.drift * t as f64).exp() * wave(t))
            .collect(),
        SyntheticKind::RandomWalk => {
            let mut rng = stream(spec.seed, Stream::Synthetic);
            let normal = Normal::new(spec.drift, spec.vol)
                .map_err(|e| Error::invalid("synthetic_vol", e.to_string()))?;
            let mut log_price = spec.base.ln();
            let mut out = Vec::with_capacity(spec.length);
            out.push(spec.base);
            for _ in 1..spec.length {
                log_price += normal.sample(&mut rng);
                out.push(log_price.exp());
            }
            out
        }
    };
    PriceSeries::from_closes(spec.kind.as_str(), close)
}
