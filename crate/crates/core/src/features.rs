//! Network input/output table construction.
//!
//! Inputs are trailing moving averages (excluding the current week) and lagged
//! copies of the weekly series; the target is a moving average of price
//! projected `horizon` weeks ahead. Rows with any absent cell are trimmed and
//! the remainder is split chronologically into train / test / new-data ranges.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use std::ops::Range;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeatureError {
    #[error("invalid input: {0}")]
    Input(String),
    #[error("column '{name}': {reason}")]
    Column { name: String, reason: String },
    #[error("assembly error: {0}")]
    Assembly(String),
    #[error("split error: {0}")]
    Split(String),
}

/// Trailing mean of the `window` values strictly before each position.
///
/// A window touching an absent value is itself absent.
pub fn sma_opt(series: &[Option<f64>], window: usize) -> Result<Vec<Option<f64>>, FeatureError> {
    if window == 0 {
        return Err(FeatureError::Input("SMA window must be at least 1".into()));
    }
    Ok((0..series.len())
        .map(|t| {
            if t < window {
                return None;
            }
            series[t - window..t]
                .iter()
                .copied()
                .sum::<Option<f64>>()
                .map(|s| s / window as f64)
        })
        .collect())
}

/// [`sma_opt`] over a fully observed series.
pub fn sma(series: &[f64], window: usize) -> Result<Vec<Option<f64>>, FeatureError> {
    let wrapped: Vec<Option<f64>> = series.iter().copied().map(Some).collect();
    sma_opt(&wrapped, window)
}

/// Shifts the series `k` weeks later; the first `k` entries become absent.
pub fn lag(series: &[Option<f64>], k: usize) -> Vec<Option<f64>> {
    (0..series.len())
        .map(|t| if t >= k { series[t - k] } else { None })
        .collect()
}

/// Mean of `price[t+horizon-window+1 ..= t+horizon]` for each `t`.
pub fn make_target(
    price: &[f64],
    window: usize,
    horizon: usize,
) -> Result<Vec<Option<f64>>, FeatureError> {
    if window == 0 || horizon == 0 {
        return Err(FeatureError::Input(format!(
            "target window ({window}) and horizon ({horizon}) must both be at least 1"
        )));
    }
    Ok((0..price.len())
        .map(|t| {
            let end = t + horizon;
            if end >= price.len() || end + 1 < window {
                return None;
            }
            let slice = &price[end + 1 - window..=end];
            Some(slice.iter().sum::<f64>() / window as f64)
        })
        .collect())
}

/// A named column aligned to the weekly calendar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureColumn {
    name: String,
    values: Vec<Option<f64>>,
}

impl FeatureColumn {
    /// Present values must be finite and form a single contiguous block.
    pub fn new(name: impl Into<String>, values: Vec<Option<f64>>) -> Result<Self, FeatureError> {
        let name = name.into();
        let first = values.iter().position(Option::is_some);
        let last = values.iter().rposition(Option::is_some);
        if let (Some(first), Some(last)) = (first, last) {
            if let Some(gap) = values[first..=last].iter().position(Option::is_none) {
                return Err(FeatureError::Column {
                    name,
                    reason: format!("interior gap at index {}", first + gap),
                });
            }
            if let Some(bad) = values.iter().position(|v| v.is_some_and(|x| !x.is_finite())) {
                return Err(FeatureError::Column {
                    name,
                    reason: format!("non-finite value at index {bad}"),
                });
            }
        }
        Ok(Self { name, values })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn values(&self) -> &[Option<f64>] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Index range where the column is present, if any.
    pub fn defined_range(&self) -> Option<Range<usize>> {
        let first = self.values.iter().position(Option::is_some)?;
        let last = self.values.iter().rposition(Option::is_some)?;
        Some(first..last + 1)
    }
}

/// Which transform of a raw weekly series feeds the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Transform {
    Raw,
    Sma(usize),
}

/// Builds the lagged input columns for one weekly series, named
/// `<id>.<raw|smaW>.lagK`.
pub fn input_columns(
    id: &str,
    values: &[f64],
    transforms: &[Transform],
    lags: &[usize],
) -> Result<Vec<FeatureColumn>, FeatureError> {
    let mut out = Vec::with_capacity(transforms.len() * lags.len());
    for &transform in transforms {
        let (tag, base) = match transform {
            Transform::Raw => ("raw".to_string(), values.iter().copied().map(Some).collect()),
            Transform::Sma(w) => (format!("sma{w}"), sma(values, w)?),
        };
        for &k in lags {
            out.push(FeatureColumn::new(format!("{id}.{tag}.lag{k}"), lag(&base, k))?);
        }
    }
    Ok(out)
}

/// Rectangular, gap-free rows cut from the calendar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub input_names: Vec<String>,
    pub target_name: String,
    /// Calendar index of each retained row.
    pub calendar_index: Vec<usize>,
    pub inputs: Vec<Vec<f64>>,
    pub target: Vec<f64>,
}

impl Table {
    pub fn len(&self) -> usize {
        self.target.len()
    }

    pub fn is_empty(&self) -> bool {
        self.target.is_empty()
    }
}

/// Keeps the calendar rows on which every input and the target are present.
pub fn assemble(columns: &[FeatureColumn], target: &FeatureColumn) -> Result<Table, FeatureError> {
    if columns.is_empty() {
        return Err(FeatureError::Assembly("no input columns".into()));
    }
    let len = target.len();
    if let Some(bad) = columns.iter().find(|c| c.len() != len) {
        return Err(FeatureError::Assembly(format!(
            "column '{}' has {} rows, target has {len}",
            bad.name(),
            bad.len()
        )));
    }
    let mut start = 0;
    let mut end = len;
    for col in columns.iter().chain(std::iter::once(target)) {
        let Some(range) = col.defined_range() else {
            return Err(FeatureError::Assembly(format!(
                "column '{}' is entirely absent",
                col.name()
            )));
        };
        start = start.max(range.start);
        end = end.min(range.end);
    }
    if start >= end {
        return Err(FeatureError::Assembly(
            "no row has every input and the target present".into(),
        ));
    }
    let rows = start..end;
    Ok(Table {
        input_names: columns.iter().map(|c| c.name().to_string()).collect(),
        target_name: target.name().to_string(),
        calendar_index: rows.clone().collect(),
        inputs: rows
            .clone()
            .map(|t| columns.iter().map(|c| c.values()[t].expect("inside defined range")).collect())
            .collect(),
        target: rows.map(|t| target.values()[t].expect("inside defined range")).collect(),
    })
}

/// Contiguous chronological partition of the table rows.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ranges {
    pub train: Range<usize>,
    pub test: Range<usize>,
    pub new_data: Range<usize>,
}

impl Ranges {
    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.train.len(), self.test.len(), self.new_data.len())
    }
}

/// Aligned feature matrix, target and dates, partitioned for training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelingDataset {
    pub dates: Vec<NaiveDate>,
    pub table: Table,
    pub ranges: Ranges,
}

impl ModelingDataset {
    pub fn rows(&self, range: &Range<usize>) -> (&[Vec<f64>], &[f64]) {
        (&self.table.inputs[range.clone()], &self.table.target[range.clone()])
    }

    pub fn train(&self) -> (&[Vec<f64>], &[f64]) {
        self.rows(&self.ranges.train)
    }

    pub fn test(&self) -> (&[Vec<f64>], &[f64]) {
        self.rows(&self.ranges.test)
    }

    pub fn new_data(&self) -> (&[Vec<f64>], &[f64]) {
        self.rows(&self.ranges.new_data)
    }
}

fn fraction_count(n: usize, frac: f64) -> usize {
    // Guards against 0.6 * 10 landing a hair under 6.
    (n as f64 * frac + 1e-9).floor() as usize
}

/// Floors train and test sizes; new data takes the remainder.
pub fn split_ranges(n: usize, train_frac: f64, test_frac: f64) -> Result<Ranges, FeatureError> {
    if !(train_frac > 0.0 && test_frac > 0.0 && train_frac + test_frac < 1.0) {
        return Err(FeatureError::Split(format!(
            "fractions train={train_frac} test={test_frac} must be positive with sum below 1"
        )));
    }
    let train = fraction_count(n, train_frac);
    let test = fraction_count(n, test_frac);
    let ranges = Ranges {
        train: 0..train,
        test: train..train + test,
        new_data: (train + test).min(n)..n,
    };
    let (a, b, c) = ranges.sizes();
    if a == 0 || b == 0 || c == 0 {
        return Err(FeatureError::Split(format!(
            "{n} rows split {train_frac}/{test_frac} leaves an empty range ({a}/{b}/{c})"
        )));
    }
    Ok(ranges)
}

pub fn split(
    table: Table,
    calendar: &[NaiveDate],
    train_frac: f64,
    test_frac: f64,
) -> Result<ModelingDataset, FeatureError> {
    let ranges = split_ranges(table.len(), train_frac, test_frac)?;
    let dates = table
        .calendar_index
        .iter()
        .map(|&i| {
            calendar.get(i).copied().ok_or_else(|| {
                FeatureError::Assembly(format!("row index {i} outside calendar of {}", calendar.len()))
            })
        })
        .collect::<Result<_, _>>()?;
    Ok(ModelingDataset {
        dates,
        table,
        ranges,
    })
}
