//! Weekly long/short backtesting on forecast signs.
//!
//! Every week the strategy holds one unit of exposure in the direction of the
//! forecast. Equity compounds simple returns and pays a proportional cost each
//! time the position changes. The clairvoyant "perfect equity" benchmark
//! compounds `|r_t|` with no costs.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_COST_RATE: f64 = 0.001;
pub const DEFAULT_WEEKS_PER_YEAR: f64 = 52.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BacktestError {
    #[error("invalid input: {0}")]
    Input(String),
    #[error("equity reached {equity} on {date}")]
    Bankrupt { date: NaiveDate, equity: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Position {
    Short,
    Flat,
    Long,
}

impl Position {
    pub fn from_forecast(x: f64) -> Self {
        if x > 0.0 {
            Position::Long
        } else if x < 0.0 {
            Position::Short
        } else {
            Position::Flat
        }
    }

    pub fn exposure(self) -> f64 {
        match self {
            Position::Short => -1.0,
            Position::Flat => 0.0,
            Position::Long => 1.0,
        }
    }

    pub fn as_i8(self) -> i8 {
        match self {
            Position::Short => -1,
            Position::Flat => 0,
            Position::Long => 1,
        }
    }
}

pub fn signals(forecast_returns: &[f64]) -> Vec<Position> {
    forecast_returns.iter().map(|&x| Position::from_forecast(x)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquityCurve {
    /// Date at the end of each period.
    pub dates: Vec<NaiveDate>,
    /// `equity[0]` is the initial capital; `equity[t+1]` follows period `t`.
    pub equity: Vec<f64>,
    pub positions: Vec<Position>,
    pub realized_returns: Vec<f64>,
    /// Strategy return for each period, costs included.
    pub period_returns: Vec<f64>,
}

impl EquityCurve {
    pub fn periods(&self) -> usize {
        self.period_returns.len()
    }

    pub fn initial(&self) -> f64 {
        self.equity[0]
    }

    pub fn final_value(&self) -> f64 {
        *self.equity.last().expect("equity is never empty")
    }
}

fn check_inputs(dates: &[NaiveDate], returns: &[f64], initial: f64) -> Result<(), BacktestError> {
    if dates.len() != returns.len() {
        return Err(BacktestError::Input(format!(
            "{} dates for {} returns",
            dates.len(),
            returns.len()
        )));
    }
    if !(initial > 0.0 && initial.is_finite()) {
        return Err(BacktestError::Input(format!("initial capital {initial} must be positive")));
    }
    if let Some(i) = returns.iter().position(|r| !r.is_finite()) {
        return Err(BacktestError::Input(format!("non-finite return at period {i}")));
    }
    Ok(())
}

/// Compounds `E_t = E_{t-1} (1 + s_t r_t)(1 - c·[s_t ≠ s_{t-1}])`, starting flat.
pub fn equity_curve(
    dates: &[NaiveDate],
    positions: &[Position],
    realized_returns: &[f64],
    initial: f64,
    cost_rate: f64,
) -> Result<EquityCurve, BacktestError> {
    check_inputs(dates, realized_returns, initial)?;
    if positions.len() != realized_returns.len() {
        return Err(BacktestError::Input(format!(
            "{} signals for {} returns",
            positions.len(),
            realized_returns.len()
        )));
    }
    if !(0.0..1.0).contains(&cost_rate) {
        return Err(BacktestError::Input(format!("cost rate {cost_rate} outside [0, 1)")));
    }
    let mut equity = Vec::with_capacity(positions.len() + 1);
    let mut period_returns = Vec::with_capacity(positions.len());
    equity.push(initial);
    let mut held = Position::Flat;
    let mut value = initial;
    for ((&pos, &r), &date) in positions.iter().zip(realized_returns).zip(dates) {
        let cost = if pos != held { cost_rate } else { 0.0 };
        let factor = (1.0 + pos.exposure() * r) * (1.0 - cost);
        value *= factor;
        if !(value > 0.0) {
            return Err(BacktestError::Bankrupt { date, equity: value });
        }
        equity.push(value);
        period_returns.push(factor - 1.0);
        held = pos;
    }
    Ok(EquityCurve {
        dates: dates.to_vec(),
        equity,
        positions: positions.to_vec(),
        realized_returns: realized_returns.to_vec(),
        period_returns,
    })
}

pub fn perfect_equity(
    dates: &[NaiveDate],
    realized_returns: &[f64],
    initial: f64,
) -> Result<EquityCurve, BacktestError> {
    check_inputs(dates, realized_returns, initial)?;
    let mut equity = Vec::with_capacity(realized_returns.len() + 1);
    equity.push(initial);
    let mut value = initial;
    for &r in realized_returns {
        value *= 1.0 + r.abs();
        equity.push(value);
    }
    Ok(EquityCurve {
        dates: dates.to_vec(),
        equity,
        positions: signals(realized_returns),
        realized_returns: realized_returns.to_vec(),
        period_returns: realized_returns.iter().map(|r| r.abs()).collect(),
    })
}

/// Summary statistics of a strategy run against its perfect-equity benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestReport {
    pub observations: usize,
    pub hits: usize,
    pub misses: usize,
    pub hit_rate: f64,
    pub initial_capital: f64,
    pub final_capital: f64,
    pub annualized_return: f64,
    /// Mean of the negative period returns (a non-positive number).
    pub mean_negative_volatility: f64,
    pub perfect_equity_final: f64,
    pub equity_over_perfect: f64,
    /// Largest single-period fall in equity, as a fraction of the prior value.
    pub max_drawdown: f64,
    /// Largest fall from a running peak.
    pub max_peak_to_trough_drawdown: f64,
}

pub fn annualized_return(initial: f64, final_value: f64, periods: usize, periods_per_year: f64) -> f64 {
    (final_value / initial).powf(periods_per_year / periods as f64) - 1.0
}

/// Largest `(E_{t-1} - E_t) / E_{t-1}` over the curve, floored at zero.
pub fn max_period_drawdown(equity: &[f64]) -> f64 {
    equity
        .windows(2)
        .map(|w| (w[0] - w[1]) / w[0])
        .fold(0.0, f64::max)
}

pub fn max_peak_to_trough_drawdown(equity: &[f64]) -> f64 {
    let mut peak = f64::NEG_INFINITY;
    let mut worst: f64 = 0.0;
    for &e in equity {
        peak = peak.max(e);
        worst = worst.max((peak - e) / peak);
    }
    worst
}

pub fn metrics(
    curve: &EquityCurve,
    perfect: &EquityCurve,
    weeks_per_year: f64,
) -> Result<BacktestReport, BacktestError> {
    let periods = curve.periods();
    if periods == 0 {
        return Err(BacktestError::Input("backtest has no periods".into()));
    }
    if perfect.periods() != periods {
        return Err(BacktestError::Input(format!(
            "strategy has {periods} periods, perfect benchmark has {}",
            perfect.periods()
        )));
    }
    if !(weeks_per_year > 0.0) {
        return Err(BacktestError::Input(format!("weeks_per_year {weeks_per_year} must be positive")));
    }
    let outcomes = curve
        .positions
        .iter()
        .zip(&curve.realized_returns)
        .map(|(p, r)| p.exposure() * r);
    let (mut hits, mut misses) = (0, 0);
    for o in outcomes {
        if o > 0.0 {
            hits += 1;
        } else if o < 0.0 {
            misses += 1;
        }
    }
    let decided = hits + misses;
    let negatives: Vec<f64> = curve.period_returns.iter().copied().filter(|&r| r < 0.0).collect();
    let mean_negative_volatility = if negatives.is_empty() {
        0.0
    } else {
        negatives.iter().sum::<f64>() / negatives.len() as f64
    };
    let final_capital = curve.final_value();
    Ok(BacktestReport {
        observations: periods,
        hits,
        misses,
        hit_rate: if decided == 0 { 0.0 } else { hits as f64 / decided as f64 },
        initial_capital: curve.initial(),
        final_capital,
        annualized_return: annualized_return(curve.initial(), final_capital, periods, weeks_per_year),
        mean_negative_volatility,
        perfect_equity_final: perfect.final_value(),
        equity_over_perfect: final_capital / perfect.final_value(),
        max_drawdown: max_period_drawdown(&curve.equity),
        max_peak_to_trough_drawdown: max_peak_to_trough_drawdown(&curve.equity),
    })
}
