//! Weekly oil-price forecasting: homogenize mixed-frequency inputs, build
//! smoothed and lagged features, train feedforward "experts", judge their
//! directional forecasts with the excess profitability test and an equity
//! curve backtest.

// Negated comparisons are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod backtest;
pub mod features;
pub mod neuralnet;
pub mod pipeline;
pub mod predictability;
pub mod series;
pub mod synthetic;
