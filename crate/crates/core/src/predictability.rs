//! Return series and the Anatolyev–Gerko excess profitability (EP) test.
//!
//! The EP statistic compares the mean return of a sign-following rule with the
//! return it would earn if its signs were independent of realized returns:
//!
//! ```text
//! A_T = (1/T) Σ sign(ŷ_t) y_t
//! B_T = ((1/T) Σ sign(ŷ_t)) ((1/T) Σ y_t)
//! p̂   = (1 + (1/T) Σ sign(ŷ_t)) / 2
//! V̂   = (4/T²) p̂ (1 - p̂) Σ (y_t - ȳ)²
//! EP  = (A_T - B_T) / √V̂
//! ```
//!
//! Under the null of no directional predictability EP is asymptotically
//! standard normal. `prob` is the two-sided confidence level `2Φ(|EP|) - 1`.

use serde::{Deserialize, Serialize};
use std::f64::consts::SQRT_2;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PredictabilityError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("degenerate test (zero variance estimate): A_T={a_t}, B_T={b_t}")]
    Degenerate { a_t: f64, b_t: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReturnKind {
    #[default]
    Log,
    Simple,
}

impl ReturnKind {
    fn of(self, from: f64, to: f64) -> f64 {
        match self {
            ReturnKind::Log => (to / from).ln(),
            ReturnKind::Simple => to / from - 1.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ReturnKind::Log => "log",
            ReturnKind::Simple => "simple",
        }
    }
}

impl FromStr for ReturnKind {
    type Err = PredictabilityError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "log" => Ok(ReturnKind::Log),
            "simple" => Ok(ReturnKind::Simple),
            other => Err(PredictabilityError::Input(format!("unknown return kind '{other}'"))),
        }
    }
}

fn check_positive(values: &[f64], what: &str) -> Result<(), PredictabilityError> {
    match values.iter().position(|&p| !(p > 0.0 && p.is_finite())) {
        Some(i) => Err(PredictabilityError::Domain(format!(
            "{what}[{i}] = {} is not a positive finite number",
            values[i]
        ))),
        None => Ok(()),
    }
}

pub fn returns(prices: &[f64], kind: ReturnKind) -> Result<Vec<f64>, PredictabilityError> {
    if prices.len() < 2 {
        return Err(PredictabilityError::Input(format!(
            "need at least 2 prices, got {}",
            prices.len()
        )));
    }
    check_positive(prices, "price")?;
    Ok(prices.windows(2).map(|w| kind.of(w[0], w[1])).collect())
}

/// `ln(p_t / p_{t-1})`.
pub fn log_returns(prices: &[f64]) -> Result<Vec<f64>, PredictabilityError> {
    returns(prices, ReturnKind::Log)
}

pub fn simple_returns(prices: &[f64]) -> Result<Vec<f64>, PredictabilityError> {
    returns(prices, ReturnKind::Simple)
}

/// Forecast return `ŷ_t = ln(f_t / p_{t-1})` for `t = 1..n`.
///
/// `f_t` must be a forecast available at `t-1`; `forecast[0]` is unused.
pub fn forecast_returns(
    forecast: &[f64],
    realized: &[f64],
) -> Result<Vec<f64>, PredictabilityError> {
    forecast_returns_with(forecast, realized, ReturnKind::Log)
}

pub fn forecast_returns_with(
    forecast: &[f64],
    realized: &[f64],
    kind: ReturnKind,
) -> Result<Vec<f64>, PredictabilityError> {
    if forecast.len() != realized.len() {
        return Err(PredictabilityError::Input(format!(
            "forecast has {} values, realized has {}",
            forecast.len(),
            realized.len()
        )));
    }
    if realized.len() < 2 {
        return Err(PredictabilityError::Input("need at least 2 periods".into()));
    }
    check_positive(forecast, "forecast")?;
    check_positive(realized, "realized")?;
    Ok((1..realized.len())
        .map(|t| kind.of(realized[t - 1], forecast[t]))
        .collect())
}

/// Realized and forecast returns over the same `T` periods.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnPair {
    y: Vec<f64>,
    y_hat: Vec<f64>,
}

impl ReturnPair {
    pub fn new(y: Vec<f64>, y_hat: Vec<f64>) -> Result<Self, PredictabilityError> {
        if y.len() != y_hat.len() {
            return Err(PredictabilityError::Input(format!(
                "realized has {} returns, forecast has {}",
                y.len(),
                y_hat.len()
            )));
        }
        if y.len() < 2 {
            return Err(PredictabilityError::Input(format!(
                "EP test needs T >= 2, got {}",
                y.len()
            )));
        }
        if y.iter().chain(&y_hat).any(|v| !v.is_finite()) {
            return Err(PredictabilityError::Input("non-finite return".into()));
        }
        Ok(Self { y, y_hat })
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn y_hat(&self) -> &[f64] {
        &self.y_hat
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpResult {
    pub t: usize,
    pub a_t: f64,
    pub b_t: f64,
    pub p_hat: f64,
    pub variance: f64,
    pub ep: f64,
    pub prob: f64,
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub fn ep_test(pair: &ReturnPair) -> Result<EpResult, PredictabilityError> {
    let t = pair.len();
    let n = t as f64;
    let signs: Vec<f64> = pair.y_hat.iter().map(|&v| sign(v)).collect();
    let mean_sign = signs.iter().sum::<f64>() / n;
    let mean_y = pair.y.iter().sum::<f64>() / n;
    let a_t = signs.iter().zip(&pair.y).map(|(s, y)| s * y).sum::<f64>() / n;
    let b_t = mean_sign * mean_y;
    let p_hat = 0.5 * (1.0 + mean_sign);
    let ss: f64 = pair.y.iter().map(|y| (y - mean_y).powi(2)).sum();
    let variance = 4.0 / (n * n) * p_hat * (1.0 - p_hat) * ss;
    if !(variance > 0.0) {
        return Err(PredictabilityError::Degenerate { a_t, b_t });
    }
    let ep = (a_t - b_t) / variance.sqrt();
    Ok(EpResult {
        t,
        a_t,
        b_t,
        p_hat,
        variance,
        ep,
        prob: two_sided_confidence(ep),
    })
}

/// Standard normal CDF, `Φ(z) = erfc(-z/√2) / 2`.
///
/// Backed by the `statrs` complementary error function, which is accurate to
/// near machine precision across the real line.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-z / SQRT_2)
}

/// `1 - 2(1 - Φ(|z|))`, computed through `erfc` to keep precision in the tail.
pub fn two_sided_confidence(z: f64) -> f64 {
    (1.0 - statrs::function::erf::erfc(z.abs() / SQRT_2)).clamp(0.0, 1.0)
}
