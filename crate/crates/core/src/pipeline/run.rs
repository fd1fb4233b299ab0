//! End-to-end orchestration: ingest → homogenize → features → split → train
//! → select → (perturb) → save/reload → evaluate → backtest.
//!
//! Forecast alignment: the network output of row `t-1` is the forecast used
//! to position for week `t`. Its direction against the last observed price
//! `p_{t-1}` is the trading call, and `p_t / p_{t-1}` is the realized move.

use chrono::NaiveDate;
use serde::Serialize;
use std::fmt;
use std::ops::Range;
use thiserror::Error;

use super::config::{ConfigError, PipelineConfig};
use super::ingest::{ingest_csv, IngestError};
use crate::backtest::{self, BacktestError, BacktestReport, EquityCurve};
use crate::features::{self, FeatureColumn, FeatureError, ModelingDataset, Transform};
use crate::neuralnet::{
    self, generate_experts, load_expert, perturb_improve, save_expert, select_expert, ExpertScore, MlpExpert,
    NetError, PerturbOutcome, Selection, TrainingData,
};
use crate::predictability::{self, EpResult, PredictabilityError, ReturnPair};
use crate::series::{self, FitReport, Frequency, SeriesError, TimeSeries};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Config,
    Ingest,
    Interpolate,
    Features,
    Split,
    Train,
    Select,
    Perturb,
    Save,
    Evaluate,
    Backtest,
    Report,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Config => "config",
            Stage::Ingest => "ingest",
            Stage::Interpolate => "interpolate",
            Stage::Features => "features",
            Stage::Split => "split",
            Stage::Train => "train",
            Stage::Select => "select",
            Stage::Perturb => "perturb",
            Stage::Save => "save",
            Stage::Evaluate => "evaluate",
            Stage::Backtest => "backtest",
            Stage::Report => "report",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A failure tagged with the stage it happened in and a short error kind.
#[derive(Debug, Error)]
#[error("stage={stage} error={kind}: {message}")]
pub struct PipelineError {
    pub stage: Stage,
    pub kind: &'static str,
    pub message: String,
}

impl PipelineError {
    pub fn new(stage: Stage, kind: &'static str, message: impl fmt::Display) -> Self {
        Self {
            stage,
            kind,
            message: message.to_string(),
        }
    }

    /// The one-line `stage=<name> error=<kind>` form printed by the CLI.
    pub fn machine_line(&self) -> String {
        format!("stage={} error={} message={:?}", self.stage, self.kind, self.message)
    }
}

/// Maps a module error to its short kind and pipeline stage.
pub trait ErrorKind: fmt::Display {
    fn kind(&self) -> &'static str;

    fn at(self, stage: Stage) -> PipelineError
    where
        Self: Sized,
    {
        PipelineError::new(stage, self.kind(), &self)
    }
}

impl ErrorKind for ConfigError {
    fn kind(&self) -> &'static str {
        match self {
            ConfigError::Io { .. } => "io",
            ConfigError::Syntax { .. } => "syntax",
            ConfigError::Value { .. } => "value",
            ConfigError::MissingKey { .. } => "missing_key",
            ConfigError::Reference(_) => "reference",
            ConfigError::MissingFile(_) => "missing_file",
            ConfigError::Invalid(_) => "invalid",
        }
    }
}

impl ErrorKind for IngestError {
    fn kind(&self) -> &'static str {
        match self {
            IngestError::Io { .. } => "io",
            IngestError::Header { .. } => "header",
            IngestError::Row { .. } => "row",
        }
    }
}

impl ErrorKind for SeriesError {
    fn kind(&self) -> &'static str {
        match self {
            SeriesError::Input(_) => "input",
            SeriesError::NonMonotone { .. } => "order",
            SeriesError::Duplicate { .. } => "duplicate",
            SeriesError::Frequency { .. } => "frequency",
            SeriesError::NonFinite { .. } => "non_finite",
            SeriesError::Fit(_) => "fit",
            SeriesError::Numeric(_) => "numeric",
        }
    }
}

impl ErrorKind for FeatureError {
    fn kind(&self) -> &'static str {
        match self {
            FeatureError::Input(_) => "input",
            FeatureError::Column { .. } => "column",
            FeatureError::Assembly(_) => "assembly",
            FeatureError::Split(_) => "split",
        }
    }
}

impl ErrorKind for NetError {
    fn kind(&self) -> &'static str {
        match self {
            NetError::Input(_) => "input",
            NetError::Scaling { .. } => "scaling",
            NetError::State(_) => "state",
            NetError::Diverged { .. } => "diverged",
            NetError::Expert { source, .. } => source.kind(),
            NetError::Selection { .. } => "selection",
            NetError::Format { .. } => "format",
        }
    }
}

impl ErrorKind for PredictabilityError {
    fn kind(&self) -> &'static str {
        match self {
            PredictabilityError::Domain(_) => "domain",
            PredictabilityError::Input(_) => "input",
            PredictabilityError::Degenerate { .. } => "degenerate",
        }
    }
}

impl ErrorKind for BacktestError {
    fn kind(&self) -> &'static str {
        match self {
            BacktestError::Input(_) => "input",
            BacktestError::Bankrupt { .. } => "bankrupt",
        }
    }
}

impl ErrorKind for std::io::Error {
    fn kind(&self) -> &'static str {
        "io"
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeriesSummary {
    pub id: String,
    pub frequency: Frequency,
    pub units: String,
    pub observations: usize,
    /// Present for series that went through polynomial interpolation.
    pub fit: Option<FitReport>,
}

/// Every configured series on the shared weekly calendar, in config order.
#[derive(Debug, Clone)]
pub struct Homogenized {
    pub calendar: Vec<NaiveDate>,
    pub series: Vec<TimeSeries>,
    pub summaries: Vec<SeriesSummary>,
}

impl Homogenized {
    pub fn get(&self, id: &str) -> Option<&TimeSeries> {
        self.series.iter().find(|s| s.id() == id)
    }
}

pub fn homogenize(cfg: &PipelineConfig) -> Result<Homogenized, PipelineError> {
    let raw = cfg
        .series
        .iter()
        .map(|sc| ingest_csv(&sc.path, &sc.id, sc.frequency, &sc.units).map_err(|e| e.at(Stage::Ingest)))
        .collect::<Result<Vec<_>, _>>()?;
    let target = raw
        .iter()
        .find(|s| s.id() == cfg.target.series)
        .expect("config validates the target reference");
    if target.len() < 2 {
        return Err(PipelineError::new(
            Stage::Interpolate,
            "input",
            format!("target series '{}' has fewer than 2 observations", target.id()),
        ));
    }
    let first = target.points()[0].0;
    let last = target.points()[target.len() - 1].0;
    let calendar = series::weekly_calendar(first, last).map_err(|e| e.at(Stage::Interpolate))?;

    let mut weekly = Vec::with_capacity(raw.len());
    let mut summaries = Vec::with_capacity(raw.len());
    for (s, sc) in raw.iter().zip(&cfg.series) {
        let (aligned, fit) = if s.frequency() == Frequency::Weekly {
            (series::align_weekly(s, &calendar), None)
        } else {
            match series::interpolate_to_weekly(s, &calendar, sc.max_degree, sc.r2_threshold) {
                Ok((w, f)) => (Ok(w), Some(f)),
                Err(e) => (Err(e), None),
            }
        };
        let aligned = aligned.map_err(|e| e.at(Stage::Interpolate))?;
        summaries.push(SeriesSummary {
            id: s.id().to_string(),
            frequency: s.frequency(),
            units: s.units().to_string(),
            observations: s.len(),
            fit,
        });
        weekly.push(aligned);
    }
    Ok(Homogenized {
        calendar,
        series: weekly,
        summaries,
    })
}

/// Homogenized inputs turned into a split modeling dataset.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub homogenized: Homogenized,
    pub dataset: ModelingDataset,
    /// Observed target-series value at each dataset row.
    pub price: Vec<f64>,
}

pub fn target_column_name(cfg: &PipelineConfig) -> String {
    format!("{}.target.sma{}.h{}", cfg.target.series, cfg.target.window, cfg.target.horizon)
}

pub fn prepare(cfg: &PipelineConfig) -> Result<Prepared, PipelineError> {
    let homogenized = homogenize(cfg)?;
    let mut columns: Vec<FeatureColumn> = Vec::new();
    for (sc, s) in cfg.series.iter().zip(&homogenized.series) {
        if !sc.input {
            continue;
        }
        let mut transforms = Vec::new();
        if sc.raw {
            transforms.push(Transform::Raw);
        }
        transforms.extend(sc.sma.iter().map(|&w| Transform::Sma(w)));
        let cols = features::input_columns(&sc.id, &s.values(), &transforms, &sc.lags)
            .map_err(|e| e.at(Stage::Features))?;
        columns.extend(cols);
    }
    let price_weekly = homogenized
        .get(&cfg.target.series)
        .expect("target series is homogenized")
        .values();
    let target = features::make_target(&price_weekly, cfg.target.window, cfg.target.horizon)
        .and_then(|t| FeatureColumn::new(target_column_name(cfg), t))
        .map_err(|e| e.at(Stage::Features))?;
    let table = features::assemble(&columns, &target).map_err(|e| e.at(Stage::Features))?;
    let price = table.calendar_index.iter().map(|&i| price_weekly[i]).collect();
    let dataset = features::split(table, &homogenized.calendar, cfg.train.train_frac, cfg.train.test_frac)
        .map_err(|e| e.at(Stage::Split))?;
    Ok(Prepared {
        homogenized,
        dataset,
        price,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum EpOutcome {
    Ok(EpResult),
    Degenerate { t: usize, a_t: f64, b_t: f64 },
}

impl EpOutcome {
    pub fn prob(&self) -> Option<f64> {
        match self {
            EpOutcome::Ok(r) => Some(r.prob),
            EpOutcome::Degenerate { .. } => None,
        }
    }
}

/// Realized and forecast returns for one range of dataset rows.
#[derive(Debug, Clone)]
pub struct RangeSeries {
    pub dates: Vec<NaiveDate>,
    /// Realized returns of the configured kind, used by the EP test.
    pub y: Vec<f64>,
    pub y_hat: Vec<f64>,
    /// Simple realized returns, used by the backtest.
    pub simple: Vec<f64>,
}

/// Builds the return series for dataset rows `range`, using the row before
/// the range start as the first forecast origin.
pub fn range_series(
    prepared: &Prepared,
    predictions: &[f64],
    range: &Range<usize>,
    cfg: &PipelineConfig,
) -> Result<RangeSeries, PipelineError> {
    if range.start == 0 || range.is_empty() {
        return Err(PipelineError::new(
            Stage::Evaluate,
            "input",
            format!("range {range:?} has no preceding forecast origin"),
        ));
    }
    let rows = range.start - 1..range.end;
    let realized = &prepared.price[rows.clone()];
    // forecast[t] is the prediction made at row t-1; forecast[0] is unused.
    let mut forecast = Vec::with_capacity(realized.len());
    forecast.push(realized[0]);
    forecast.extend_from_slice(&predictions[rows.start..range.end - 1]);
    let kind = cfg.train.returns;
    let y = predictability::returns(realized, kind).map_err(|e| e.at(Stage::Evaluate))?;
    let y_hat = predictability::forecast_returns_with(&forecast, realized, kind).map_err(|e| e.at(Stage::Evaluate))?;
    let simple = predictability::simple_returns(realized).map_err(|e| e.at(Stage::Evaluate))?;
    Ok(RangeSeries {
        dates: prepared.dataset.dates[range.clone()].to_vec(),
        y,
        y_hat,
        simple,
    })
}

pub fn ep_outcome(series: &RangeSeries) -> Result<EpOutcome, PipelineError> {
    let pair = ReturnPair::new(series.y.clone(), series.y_hat.clone()).map_err(|e| e.at(Stage::Evaluate))?;
    match predictability::ep_test(&pair) {
        Ok(r) => Ok(EpOutcome::Ok(r)),
        Err(PredictabilityError::Degenerate { a_t, b_t }) => Ok(EpOutcome::Degenerate { t: pair.len(), a_t, b_t }),
        Err(e) => Err(e.at(Stage::Evaluate)),
    }
}

pub fn backtest_series(
    series: &RangeSeries,
    cfg: &PipelineConfig,
) -> Result<(EquityCurve, EquityCurve), BacktestError> {
    let b = &cfg.backtest;
    let positions = backtest::signals(&series.y_hat);
    let curve = backtest::equity_curve(&series.dates, &positions, &series.simple, b.initial_capital, b.cost_rate)?;
    let perfect = backtest::perfect_equity(&series.dates, &series.simple, b.initial_capital)?;
    Ok((curve, perfect))
}

fn predict(expert: &MlpExpert, prepared: &Prepared, stage: Stage) -> Result<Vec<f64>, PipelineError> {
    expert.predict(&prepared.dataset.table.inputs).map_err(|e| e.at(stage))
}

/// Test-range score used for selection and perturbation. A bankrupt
/// strategy scores zero equity.
pub fn score_on_range(
    expert: &MlpExpert,
    prepared: &Prepared,
    range: &Range<usize>,
    cfg: &PipelineConfig,
) -> Result<ExpertScore, PipelineError> {
    let predictions = predict(expert, prepared, Stage::Select)?;
    let series = range_series(prepared, &predictions, range, cfg)?;
    let ep = ep_outcome(&series)?;
    let equity = match backtest_series(&series, cfg) {
        Ok((curve, _)) => curve.final_value(),
        Err(BacktestError::Bankrupt { .. }) => 0.0,
        Err(e) => return Err(e.at(Stage::Select)),
    };
    Ok(ExpertScore {
        ep_prob: ep.prob(),
        equity,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExpertSummary {
    pub index: usize,
    pub seed: u64,
    pub epochs: usize,
    pub converged_fraction: f64,
    pub test_ep_prob: Option<f64>,
    pub test_equity: f64,
    pub passed_ep: bool,
}

#[derive(Debug, Clone)]
pub struct Trained {
    pub experts: Vec<ExpertSummary>,
    pub selection: Selection,
    pub perturbation: Option<PerturbOutcome>,
    pub expert: MlpExpert,
}

pub fn train_and_select(cfg: &PipelineConfig, prepared: &Prepared) -> Result<Trained, PipelineError> {
    let ds = &prepared.dataset;
    let (inputs, targets) = ds.train();
    let data = TrainingData {
        input_names: &ds.table.input_names,
        target_name: &ds.table.target_name,
        inputs,
        targets,
    };
    let hidden = cfg.train.hidden.unwrap_or(ds.table.input_names.len());
    let experts = generate_experts(cfg.train.n_experts, cfg.train.base_seed, hidden, data, &cfg.train.net)
        .map_err(|e| e.at(Stage::Train))?;
    let test = ds.ranges.test.clone();
    let (best, selection) = select_expert(&experts, cfg.train.ep_threshold, |e| {
        score_on_range(e, prepared, &test, cfg)
    })
    .map_err(|e| e.at(Stage::Select))?;
    let summaries = experts
        .iter()
        .zip(&selection.scores)
        .map(|(e, s)| ExpertSummary {
            index: s.index,
            seed: e.seed(),
            epochs: e.history().len(),
            converged_fraction: e.converged_fraction(),
            test_ep_prob: s.score.ep_prob,
            test_equity: s.score.equity,
            passed_ep: s.passed_ep,
        })
        .collect();
    let (expert, perturbation) = if cfg.train.perturb_rounds > 0 {
        let (e, out) = perturb_improve(
            &best,
            cfg.train.perturb_epsilon,
            cfg.train.perturb_rounds,
            cfg.train.perturb_seed,
            |e| score_on_range(e, prepared, &test, cfg).map(|s| s.equity),
        )
        .map_err(|e| e.at(Stage::Perturb))?;
        (e, Some(out))
    } else {
        (best, None)
    };
    Ok(Trained {
        experts: summaries,
        selection,
        perturbation,
        expert,
    })
}

/// Full evaluation of one expert on one dataset range.
#[derive(Debug, Clone)]
pub struct RangeEvaluation {
    pub series: RangeSeries,
    pub ep: EpOutcome,
    pub curve: EquityCurve,
    pub perfect: EquityCurve,
    pub report: BacktestReport,
}

pub fn evaluate_range(
    prepared: &Prepared,
    predictions: &[f64],
    range: &Range<usize>,
    cfg: &PipelineConfig,
) -> Result<RangeEvaluation, PipelineError> {
    let series = range_series(prepared, predictions, range, cfg)?;
    let ep = ep_outcome(&series)?;
    let (curve, perfect) = backtest_series(&series, cfg).map_err(|e| e.at(Stage::Backtest))?;
    let report = backtest::metrics(&curve, &perfect, cfg.backtest.weeks_per_year).map_err(|e| e.at(Stage::Backtest))?;
    Ok(RangeEvaluation {
        series,
        ep,
        curve,
        perfect,
        report,
    })
}

/// Predictions over every dataset row plus test and new-data evaluations.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub predictions: Vec<f64>,
    pub test: RangeEvaluation,
    pub new_data: RangeEvaluation,
}

pub fn evaluate(expert: &MlpExpert, prepared: &Prepared, cfg: &PipelineConfig) -> Result<Evaluation, PipelineError> {
    let ds = &prepared.dataset;
    if expert.n_inputs() != ds.table.input_names.len() {
        return Err(PipelineError::new(
            Stage::Evaluate,
            "input",
            format!(
                "expert expects {} inputs, dataset has {}",
                expert.n_inputs(),
                ds.table.input_names.len()
            ),
        ));
    }
    if let Some(mismatch) = expert
        .input_scaling()
        .iter()
        .zip(&ds.table.input_names)
        .find(|(s, n)| &s.name != *n)
    {
        return Err(PipelineError::new(
            Stage::Evaluate,
            "input",
            format!("expert feature '{}' does not match dataset column '{}'", mismatch.0.name, mismatch.1),
        ));
    }
    let predictions = predict(expert, prepared, Stage::Evaluate)?;
    let test = evaluate_range(prepared, &predictions, &ds.ranges.test, cfg)?;
    let new_data = evaluate_range(prepared, &predictions, &ds.ranges.new_data, cfg)?;
    Ok(Evaluation {
        predictions,
        test,
        new_data,
    })
}

/// Serializes the expert and reads it back, so evaluation always runs on
/// exactly what was written to disk.
pub fn save_and_reload(expert: &MlpExpert) -> Result<(String, MlpExpert), PipelineError> {
    let text = save_expert(expert).map_err(|e| e.at(Stage::Save))?;
    let loaded = load_expert(&text).map_err(|e| e.at(Stage::Save))?;
    Ok((text, loaded))
}

pub fn read_expert(path: &std::path::Path) -> Result<MlpExpert, PipelineError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| PipelineError::new(Stage::Evaluate, "io", format!("{}: {e}", path.display())))?;
    neuralnet::load_expert(&text).map_err(|e| e.at(Stage::Evaluate))
}

/// Everything produced by one end-to-end run.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub prepared: Prepared,
    pub trained: Trained,
    /// Serialized expert exactly as written to disk.
    pub expert_text: String,
    pub evaluation: Evaluation,
}

pub fn run_pipeline(cfg: &PipelineConfig) -> Result<RunOutput, PipelineError> {
    let prepared = prepare(cfg)?;
    let trained = train_and_select(cfg, &prepared)?;
    let (expert_text, reloaded) = save_and_reload(&trained.expert)?;
    let evaluation = evaluate(&reloaded, &prepared, cfg)?;
    Ok(RunOutput {
        prepared,
        trained,
        expert_text,
        evaluation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::config::parse_config;

    fn write_series(dir: &std::path::Path, weeks: usize) {
        let start = NaiveDate::from_ymd_opt(2000, 1, 3).unwrap();
        let mut p = String::from("date,value\n");
        for t in 0..weeks {
            let d = start + chrono::Duration::days(7 * t as i64);
            let v = 20.0 + 0.05 * t as f64 + 3.0 * (t as f64 * 0.4).sin();
            p.push_str(&format!("{d},{v:.4}\n"));
        }
        std::fs::write(dir.join("p.csv"), p).unwrap();
        let mut a = String::from("date,value\n");
        for y in 2000..=2003 {
            a.push_str(&format!("{y}-01-01,{}\n", 100 + 7 * (y - 2000)));
        }
        std::fs::write(dir.join("a.csv"), a).unwrap();
    }

    const CFG: &str = "[series p]\nfile = p.csv\nfrequency = weekly\nsma = 2\nlags = 0, 3\n\
                       [series a]\nfile = a.csv\nfrequency = annual\nraw = false\nsma = 5\nlags = 0\n\
                       [target]\nseries = p\n[train]\nmax_epochs = 20\nn_experts = 2\n";

    #[test]
    fn prepare_aligns_rows() {
        let dir = tempfile::tempdir().unwrap();
        write_series(dir.path(), 150);
        let cfg = parse_config(CFG, dir.path()).unwrap();
        let prepared = prepare(&cfg).unwrap();
        let ds = &prepared.dataset;
        // Warm-up: sma2 with lag 3 needs 5 weeks; target drops the last 5.
        assert_eq!(ds.table.calendar_index[0], 5);
        assert_eq!(ds.table.len(), 150 - 5 - 5);
        assert_eq!(ds.table.input_names.len(), 5);
        let (a, b, c) = ds.ranges.sizes();
        assert_eq!(a + b + c, ds.table.len());
        assert_eq!(prepared.summaries_fit_count(), 1);
    }

    impl Prepared {
        fn summaries_fit_count(&self) -> usize {
            self.homogenized.summaries.iter().filter(|s| s.fit.is_some()).count()
        }
    }

    #[test]
    fn range_series_uses_previous_row_as_origin() {
        let dir = tempfile::tempdir().unwrap();
        write_series(dir.path(), 150);
        let cfg = parse_config(CFG, dir.path()).unwrap();
        let prepared = prepare(&cfg).unwrap();
        let n = prepared.dataset.table.len();
        let preds: Vec<f64> = (0..n).map(|i| 10.0 + i as f64).collect();
        let range = prepared.dataset.ranges.new_data.clone();
        let s = range_series(&prepared, &preds, &range, &cfg).unwrap();
        assert_eq!(s.y.len(), range.len());
        let origin = range.start - 1;
        let want = (preds[origin] / prepared.price[origin]).ln();
        assert!((s.y_hat[0] - want).abs() < 1e-15);
        let want_y = (prepared.price[range.start] / prepared.price[origin]).ln();
        assert!((s.y[0] - want_y).abs() < 1e-15);
        assert_eq!(s.dates[0], prepared.dataset.dates[range.start]);
    }

    #[test]
    fn split_failure_is_tagged() {
        let dir = tempfile::tempdir().unwrap();
        write_series(dir.path(), 150);
        let cfg = parse_config(&format!("{CFG}train_frac = 0.95\n"), dir.path()).unwrap();
        let err = prepare(&cfg).unwrap_err();
        assert_eq!(err.stage, Stage::Split);
        assert!(err.machine_line().starts_with("stage=split error=split"));
    }

    #[test]
    fn coverage_failure_is_tagged() {
        let dir = tempfile::tempdir().unwrap();
        write_series(dir.path(), 300);
        let cfg = parse_config(CFG, dir.path()).unwrap();
        let err = prepare(&cfg).unwrap_err();
        assert_eq!(err.stage, Stage::Interpolate);
    }
}
