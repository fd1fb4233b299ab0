//! Run artifacts: JSON manifest, text summary, CSV tables and an SVG chart.
//!
//! Files are first written to a staging directory next to the output and
//! moved into place only when every artifact rendered, so a failed run never
//! leaves a half-written output directory behind.

use chrono::{NaiveDate, Utc};
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use std::ops::Range;
use std::path::{Path, PathBuf};

use super::config::PipelineConfig;
use super::run::{
    EpOutcome, Evaluation, ExpertSummary, PipelineError, Prepared, RangeEvaluation, RunOutput, SeriesSummary,
    Stage, Trained,
};
use crate::backtest::BacktestReport;
use crate::features::ModelingDataset;
use crate::neuralnet::PerturbOutcome;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const SUMMARY_FILE: &str = "summary.txt";
pub const EQUITY_FILE: &str = "equity.csv";
pub const PREDICTIONS_FILE: &str = "predictions.csv";
pub const CHART_FILE: &str = "chart.svg";
pub const EXPERT_FILE: &str = "expert.mlp";

/// Key of the only manifest line that differs between identical runs.
pub const TIMESTAMP_KEY: &str = "generated_at";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalendarInfo {
    pub start: NaiveDate,
    pub end: NaiveDate,
    pub weeks: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RangeInfo {
    pub start: usize,
    pub end: usize,
    pub rows: usize,
    pub first_date: Option<NaiveDate>,
    pub last_date: Option<NaiveDate>,
}

impl RangeInfo {
    fn new(range: &Range<usize>, dates: &[NaiveDate]) -> Self {
        Self {
            start: range.start,
            end: range.end,
            rows: range.len(),
            first_date: dates.get(range.start).copied(),
            last_date: range.end.checked_sub(1).and_then(|i| dates.get(i)).copied(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetInfo {
    pub rows: usize,
    pub inputs: Vec<String>,
    pub target: String,
    pub train: RangeInfo,
    pub test: RangeInfo,
    pub new_data: RangeInfo,
}

impl DatasetInfo {
    pub fn new(ds: &ModelingDataset) -> Self {
        Self {
            rows: ds.table.len(),
            inputs: ds.table.input_names.clone(),
            target: ds.table.target_name.clone(),
            train: RangeInfo::new(&ds.ranges.train, &ds.dates),
            test: RangeInfo::new(&ds.ranges.test, &ds.dates),
            new_data: RangeInfo::new(&ds.ranges.new_data, &ds.dates),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectionInfo {
    pub best_index: usize,
    pub best_seed: u64,
    pub passed_ep: bool,
    pub ep_threshold: f64,
    pub perturbation: Option<PerturbOutcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RangeResult {
    pub ep: EpOutcome,
    pub backtest: BacktestReport,
}

impl RangeResult {
    fn new(r: &RangeEvaluation) -> Self {
        Self {
            ep: r.ep,
            backtest: r.report.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub generated_at: String,
    pub config: String,
    pub returns: String,
    pub calendar: CalendarInfo,
    pub series: Vec<SeriesSummary>,
    pub dataset: DatasetInfo,
    pub experts: Vec<ExpertSummary>,
    pub selection: SelectionInfo,
    pub expert_sha256: String,
    pub test: RangeResult,
    pub new_data: RangeResult,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

pub fn build_manifest(cfg: &PipelineConfig, out: &RunOutput) -> RunManifest {
    let cal = &out.prepared.homogenized.calendar;
    let sel = &out.trained.selection;
    RunManifest {
        tool: env!("CARGO_PKG_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        generated_at: Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        config: cfg.dump(false),
        returns: cfg.train.returns.as_str().to_string(),
        calendar: CalendarInfo {
            start: cal[0],
            end: cal[cal.len() - 1],
            weeks: cal.len(),
        },
        series: out.prepared.homogenized.summaries.clone(),
        dataset: DatasetInfo::new(&out.prepared.dataset),
        experts: out.trained.experts.clone(),
        selection: SelectionInfo {
            best_index: sel.best,
            best_seed: sel.scores[sel.best].seed,
            passed_ep: sel.passed_ep,
            ep_threshold: cfg.train.ep_threshold,
            perturbation: out.trained.perturbation,
        },
        expert_sha256: sha256_hex(out.expert_text.as_bytes()),
        test: RangeResult::new(&out.evaluation.test),
        new_data: RangeResult::new(&out.evaluation.new_data),
    }
}

/// Pretty JSON with the timestamp on a line of its own.
pub fn manifest_json(m: &RunManifest) -> String {
    let mut s = serde_json::to_string_pretty(m).expect("manifest serializes");
    s.push('\n');
    s
}

fn pct(x: f64) -> String {
    format!("{:.2}%", 100.0 * x)
}

fn ep_lines(s: &mut String, label: &str, ep: &EpOutcome) {
    match ep {
        EpOutcome::Ok(r) => {
            let _ = writeln!(
                s,
                "{label:<28}EP = {:.5}, confidence = {:.6} (T = {}, A_T = {:.6e}, B_T = {:.6e})",
                r.ep, r.prob, r.t, r.a_t, r.b_t
            );
        }
        EpOutcome::Degenerate { t, a_t, b_t } => {
            let _ = writeln!(
                s,
                "{label:<28}degenerate, zero variance (T = {t}, A_T = {a_t:.6e}, B_T = {b_t:.6e})"
            );
        }
    }
}

fn report_block(s: &mut String, title: &str, r: &RangeEvaluation) {
    let b = &r.report;
    let _ = writeln!(s, "{title}");
    let first = r.series.dates.first().map(|d| d.to_string()).unwrap_or_default();
    let last = r.series.dates.last().map(|d| d.to_string()).unwrap_or_default();
    let _ = writeln!(s, "  {:<26}{first} .. {last}", "period");
    ep_lines(s, "  predictability", &r.ep);
    let rows: [(&str, String); 12] = [
        ("observations", b.observations.to_string()),
        ("hits", b.hits.to_string()),
        ("misses", b.misses.to_string()),
        ("hit rate", pct(b.hit_rate)),
        ("initial capital", format!("{:.4}", b.initial_capital)),
        ("final capital", format!("{:.4}", b.final_capital)),
        ("annualized return", pct(b.annualized_return)),
        ("mean negative volatility", pct(b.mean_negative_volatility)),
        ("perfect equity", format!("{:.4}", b.perfect_equity_final)),
        ("equity / perfect", pct(b.equity_over_perfect)),
        ("max drawdown (1 period)", pct(b.max_drawdown)),
        ("max drawdown (peak)", pct(b.max_peak_to_trough_drawdown)),
    ];
    for (k, v) in rows {
        let _ = writeln!(s, "  {k:<26}{v}");
    }
}

pub fn summary_text(cfg: &PipelineConfig, prepared: &Prepared, evaluation: &Evaluation, trained: Option<&Trained>) -> String {
    let mut s = String::new();
    let ds = &prepared.dataset;
    let (a, b, c) = ds.ranges.sizes();
    let _ = writeln!(s, "oilcast run summary");
    let _ = writeln!(
        s,
        "dataset: {} rows x {} inputs (train {a}, test {b}, new data {c})",
        ds.table.len(),
        ds.table.input_names.len()
    );
    let _ = writeln!(
        s,
        "returns: {} for the predictability test, simple for the backtest; cost rate {}",
        cfg.train.returns.as_str(),
        cfg.backtest.cost_rate
    );
    if let Some(trained) = trained {
        let sel = &trained.selection;
        let _ = writeln!(
            s,
            "selected expert: index {} seed {} ({} of {} passed EP >= {})",
            sel.best,
            sel.scores[sel.best].seed,
            sel.scores.iter().filter(|x| x.passed_ep).count(),
            sel.scores.len(),
            cfg.train.ep_threshold
        );
        if let Some(p) = &trained.perturbation {
            let _ = writeln!(
                s,
                "perturbation: {}/{} moves accepted, test equity {:.4} -> {:.4}",
                p.accepted, p.rounds, p.initial_score, p.final_score
            );
        }
    }
    let _ = writeln!(s);
    report_block(&mut s, "test", &evaluation.test);
    let _ = writeln!(s);
    report_block(&mut s, "new data", &evaluation.new_data);
    s
}

pub fn equity_csv(r: &RangeEvaluation) -> String {
    let mut s = String::from("date,position,realized_return,equity,perfect_equity\n");
    for t in 0..r.curve.periods() {
        let _ = writeln!(
            s,
            "{},{},{:.10},{:.10},{:.10}",
            r.curve.dates[t],
            r.curve.positions[t].as_i8(),
            r.curve.realized_returns[t],
            r.curve.equity[t + 1],
            r.perfect.equity[t + 1]
        );
    }
    s
}

/// One row per dataset row: observed price, network output and target.
pub fn predictions_csv(prepared: &Prepared, evaluation: &Evaluation) -> String {
    let ds = &prepared.dataset;
    let ranges = &ds.ranges;
    let mut s = String::from("date,split,price,prediction,target\n");
    for i in 0..ds.table.len() {
        let split = if ranges.train.contains(&i) {
            "train"
        } else if ranges.test.contains(&i) {
            "test"
        } else {
            "new_data"
        };
        let _ = writeln!(
            s,
            "{},{split},{:.10},{:.10},{:.10}",
            ds.dates[i], prepared.price[i], evaluation.predictions[i], ds.table.target[i]
        );
    }
    s
}

struct Panel<'a> {
    title: &'a str,
    lines: Vec<(&'a str, &'a str, Vec<f64>)>,
}

fn nice_bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() || !hi.is_finite() {
        return (0.0, 1.0);
    }
    let pad = if hi > lo { 0.05 * (hi - lo) } else { 1.0_f64.max(lo.abs() * 0.05) };
    (lo - pad, hi + pad)
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Two stacked line panels sharing a date axis.
pub fn chart_svg(r: &RangeEvaluation, forecast: &[f64], observed: &[f64]) -> String {
    const W: f64 = 900.0;
    const PANEL_H: f64 = 280.0;
    const LEFT: f64 = 70.0;
    const RIGHT: f64 = 150.0;
    const TOP: f64 = 40.0;
    const GAP: f64 = 70.0;
    let panels = [
        Panel {
            title: "Observed vs predicted price",
            lines: vec![
                ("observed", "#1f77b4", observed.to_vec()),
                ("predicted", "#d62728", forecast.to_vec()),
            ],
        },
        Panel {
            title: "Strategy equity vs perfect foresight",
            lines: vec![
                ("equity", "#2ca02c", r.curve.equity[1..].to_vec()),
                ("perfect", "#7f7f7f", r.perfect.equity[1..].to_vec()),
            ],
        },
    ];
    let dates = &r.series.dates;
    let n = dates.len();
    let height = TOP + 2.0 * PANEL_H + GAP + 50.0;
    let plot_w = W - LEFT - RIGHT;
    let x_of = |i: usize| LEFT + if n > 1 { plot_w * i as f64 / (n - 1) as f64 } else { plot_w / 2.0 };

    let mut s = String::new();
    let _ = writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{height}\" viewBox=\"0 0 {W} {height}\" font-family=\"sans-serif\" font-size=\"11\">"
    );
    let _ = writeln!(s, "<rect x=\"0\" y=\"0\" width=\"{W}\" height=\"{height}\" fill=\"white\"/>");
    for (p, panel) in panels.iter().enumerate() {
        let top = TOP + p as f64 * (PANEL_H + GAP);
        let bottom = top + PANEL_H;
        let (lo, hi) = nice_bounds(panel.lines.iter().flat_map(|l| l.2.iter().copied()));
        let y_of = |v: f64| bottom - PANEL_H * (v - lo) / (hi - lo);
        let _ = writeln!(s, "<g class=\"panel\">");
        let _ = writeln!(
            s,
            "<text x=\"{LEFT}\" y=\"{:.1}\" font-size=\"13\" font-weight=\"bold\">{}</text>",
            top - 10.0,
            esc(panel.title)
        );
        let _ = writeln!(
            s,
            "<line x1=\"{LEFT}\" y1=\"{bottom:.1}\" x2=\"{:.1}\" y2=\"{bottom:.1}\" stroke=\"black\"/>",
            LEFT + plot_w
        );
        let _ = writeln!(
            s,
            "<line x1=\"{LEFT}\" y1=\"{top:.1}\" x2=\"{LEFT}\" y2=\"{bottom:.1}\" stroke=\"black\"/>"
        );
        for k in 0..=4 {
            let v = lo + (hi - lo) * k as f64 / 4.0;
            let y = y_of(v);
            let _ = writeln!(
                s,
                "<line x1=\"{:.1}\" y1=\"{y:.1}\" x2=\"{LEFT}\" y2=\"{y:.1}\" stroke=\"black\"/><text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{v:.2}</text>",
                LEFT - 4.0,
                LEFT - 6.0,
                y + 4.0
            );
        }
        if n > 0 {
            for k in 0..=4 {
                let i = (n - 1) * k / 4;
                let x = x_of(i);
                let _ = writeln!(
                    s,
                    "<line x1=\"{x:.1}\" y1=\"{bottom:.1}\" x2=\"{x:.1}\" y2=\"{:.1}\" stroke=\"black\"/><text x=\"{x:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>",
                    bottom + 4.0,
                    bottom + 16.0,
                    dates[i]
                );
            }
        }
        for (j, (label, color, values)) in panel.lines.iter().enumerate() {
            let pts = values
                .iter()
                .enumerate()
                .map(|(i, &v)| format!("{:.2},{:.2}", x_of(i), y_of(v)))
                .collect::<Vec<_>>()
                .join(" ");
            let _ = writeln!(
                s,
                "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{pts}\"/>"
            );
            let ly = top + 14.0 + 18.0 * j as f64;
            let lx = LEFT + plot_w + 15.0;
            let _ = writeln!(
                s,
                "<line x1=\"{lx:.1}\" y1=\"{ly:.1}\" x2=\"{:.1}\" y2=\"{ly:.1}\" stroke=\"{color}\" stroke-width=\"2\"/><text x=\"{:.1}\" y=\"{:.1}\">{}</text>",
                lx + 20.0,
                lx + 25.0,
                ly + 4.0,
                esc(label)
            );
        }
        let _ = writeln!(s, "</g>");
    }
    let _ = writeln!(s, "</svg>");
    s
}

/// Chart over the new-data range: the forecast plotted at week `t` is the
/// network output made at week `t-1`.
pub fn new_data_chart(prepared: &Prepared, evaluation: &Evaluation) -> String {
    let range = &prepared.dataset.ranges.new_data;
    let observed = &prepared.price[range.clone()];
    let forecast = &evaluation.predictions[range.start - 1..range.end - 1];
    chart_svg(&evaluation.new_data, forecast, observed)
}

/// Collects named artifacts and moves them into the output directory in one
/// step once all of them have been produced.
#[derive(Debug, Default)]
pub struct Artifacts {
    files: Vec<(String, Vec<u8>)>,
}

impl Artifacts {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, body: impl Into<Vec<u8>>) {
        self.files.push((name.into(), body.into()));
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.files.iter().map(|(n, _)| n.as_str())
    }

    pub fn commit(&self, out_dir: &Path) -> Result<Vec<PathBuf>, PipelineError> {
        let io = |e: std::io::Error, p: &Path| PipelineError::new(Stage::Report, "io", format!("{}: {e}", p.display()));
        std::fs::create_dir_all(out_dir).map_err(|e| io(e, out_dir))?;
        let staging = out_dir.join(format!(".staging-{}", std::process::id()));
        let result = (|| {
            std::fs::create_dir_all(&staging).map_err(|e| io(e, &staging))?;
            for (name, body) in &self.files {
                let p = staging.join(name);
                std::fs::write(&p, body).map_err(|e| io(e, &p))?;
            }
            let mut written = Vec::with_capacity(self.files.len());
            for (name, _) in &self.files {
                let dest = out_dir.join(name);
                std::fs::rename(staging.join(name), &dest).map_err(|e| io(e, &dest))?;
                written.push(dest);
            }
            Ok(written)
        })();
        let _ = std::fs::remove_dir_all(&staging);
        result
    }
}

/// Summary, tables and chart for an evaluated expert.
pub fn report_artifacts(
    cfg: &PipelineConfig,
    prepared: &Prepared,
    evaluation: &Evaluation,
    trained: Option<&Trained>,
) -> Artifacts {
    let mut a = Artifacts::new();
    a.add(SUMMARY_FILE, summary_text(cfg, prepared, evaluation, trained));
    a.add(EQUITY_FILE, equity_csv(&evaluation.new_data));
    a.add(PREDICTIONS_FILE, predictions_csv(prepared, evaluation));
    a.add(CHART_FILE, new_data_chart(prepared, evaluation));
    a
}

/// All artifacts of a full run.
pub fn run_artifacts(cfg: &PipelineConfig, out: &RunOutput) -> Artifacts {
    let mut a = Artifacts::new();
    a.add(EXPERT_FILE, out.expert_text.clone());
    a.add(MANIFEST_FILE, manifest_json(&build_manifest(cfg, out)));
    a.files
        .extend(report_artifacts(cfg, &out.prepared, &out.evaluation, Some(&out.trained)).files);
    a
}

/// Drops the timestamp line so two manifests can be compared byte for byte.
pub fn strip_timestamp(manifest: &str) -> String {
    manifest
        .lines()
        .filter(|l| !l.trim_start().starts_with(&format!("\"{TIMESTAMP_KEY}\"")))
        .collect::<Vec<_>>()
        .join("\n")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha256_known_vector() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn strip_timestamp_removes_only_that_line() {
        let m = "{\n  \"tool\": \"x\",\n  \"generated_at\": \"2020\",\n  \"v\": 1\n}";
        assert_eq!(strip_timestamp(m), "{\n  \"tool\": \"x\",\n  \"v\": 1\n}");
    }

    #[test]
    fn commit_writes_all_and_cleans_staging() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("out");
        let mut a = Artifacts::new();
        a.add("a.txt", "one");
        a.add("b.txt", "two");
        a.commit(&out).unwrap();
        assert_eq!(std::fs::read_to_string(out.join("b.txt")).unwrap(), "two");
        let leftovers: Vec<_> = std::fs::read_dir(&out)
            .unwrap()
            .filter_map(|e| e.ok())
            .filter(|e| e.file_name().to_string_lossy().starts_with(".staging"))
            .collect();
        assert!(leftovers.is_empty());
    }

    #[test]
    fn failed_commit_leaves_no_files() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("out");
        let mut a = Artifacts::new();
        a.add("ok.txt", "fine");
        a.add("missing/sub.txt", "cannot be written");
        assert!(a.commit(&out).is_err());
        assert_eq!(std::fs::read_dir(&out).unwrap().count(), 0);
    }
}
