use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use oilcast::neuralnet::save_expert;
use oilcast::pipeline::report::{self, Artifacts};
use oilcast::pipeline::run::{self, ErrorKind, PipelineError, Stage};
use oilcast::pipeline::{load_config, PipelineConfig};
use oilcast::synthetic;

#[derive(Debug, Parser)]
#[command(name = "oilcast", version, about = "Weekly oil price forecasting and backtesting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Pipeline configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides `output_dir` in the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Base seed for expert initialization.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of experts to train.
    #[arg(long)]
    experts: Option<usize>,
}

#[derive(Debug, Args)]
struct WithExpert {
    #[command(flatten)]
    common: Common,
    /// Saved expert to evaluate.
    #[arg(long)]
    expert: PathBuf,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Put every series on the weekly calendar and write weekly.csv.
    Interpolate(Common),
    /// Build the modeling dataset and write dataset.csv.
    Features(Common),
    /// Train, select and save an expert.
    Train(Common),
    /// Run the predictability test for a saved expert.
    Evaluate(WithExpert),
    /// Backtest a saved expert on the test and new-data ranges.
    Backtest(WithExpert),
    /// Write summary, tables and chart for a saved expert.
    Report(WithExpert),
    /// Run every stage end to end.
    Run(Common),
    /// Write the synthetic sample dataset and its configuration.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = synthetic::DEFAULT_SEED)]
        seed: u64,
    },
}

fn config(c: &Common) -> Result<PipelineConfig, PipelineError> {
    let mut cfg = load_config(&c.config).map_err(|e| e.at(Stage::Config))?;
    if let Some(out) = &c.out {
        cfg.output_dir = out.clone();
    }
    if let Some(seed) = c.seed {
        cfg.train.base_seed = seed;
    }
    if let Some(n) = c.experts {
        if n == 0 {
            return Err(PipelineError::new(Stage::Config, "value", "--experts must be at least 1"));
        }
        cfg.train.n_experts = n;
    }
    Ok(cfg)
}

fn json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

fn commit(a: &Artifacts, dir: &Path) -> Result<(), PipelineError> {
    for p in a.commit(dir)? {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn interpolate(c: &Common) -> Result<(), PipelineError> {
    let cfg = config(c)?;
    let h = run::homogenize(&cfg)?;
    let mut csv = String::from("date");
    for s in &h.series {
        let _ = write!(csv, ",{}", s.id());
    }
    csv.push('\n');
    let cols: Vec<Vec<f64>> = h.series.iter().map(|s| s.values()).collect();
    for (i, d) in h.calendar.iter().enumerate() {
        let _ = write!(csv, "{d}");
        for col in &cols {
            let _ = write!(csv, ",{:.10}", col[i]);
        }
        csv.push('\n');
    }
    let mut a = Artifacts::new();
    a.add("weekly.csv", csv);
    a.add("interpolation.json", json(&h.summaries));
    commit(&a, &cfg.output_dir)
}

fn features(c: &Common) -> Result<(), PipelineError> {
    let cfg = config(c)?;
    let p = run::prepare(&cfg)?;
    let ds = &p.dataset;
    let mut csv = String::from("date,split");
    for n in &ds.table.input_names {
        let _ = write!(csv, ",{n}");
    }
    let _ = writeln!(csv, ",{}", ds.table.target_name);
    for i in 0..ds.table.len() {
        let split = if ds.ranges.train.contains(&i) {
            "train"
        } else if ds.ranges.test.contains(&i) {
            "test"
        } else {
            "new_data"
        };
        let _ = write!(csv, "{},{split}", ds.dates[i]);
        for v in &ds.table.inputs[i] {
            let _ = write!(csv, ",{v:.10}");
        }
        let _ = writeln!(csv, ",{:.10}", ds.table.target[i]);
    }
    let mut a = Artifacts::new();
    a.add("dataset.csv", csv);
    a.add("dataset.json", json(&report::DatasetInfo::new(ds)));
    commit(&a, &cfg.output_dir)
}

#[derive(Serialize)]
struct TrainingSummary<'a> {
    experts: &'a [run::ExpertSummary],
    selection: &'a oilcast::neuralnet::Selection,
    perturbation: Option<oilcast::neuralnet::PerturbOutcome>,
    expert_sha256: String,
}

fn train(c: &Common) -> Result<(), PipelineError> {
    let cfg = config(c)?;
    let p = run::prepare(&cfg)?;
    let t = run::train_and_select(&cfg, &p)?;
    let text = save_expert(&t.expert).map_err(|e| e.at(Stage::Save))?;
    let summary = TrainingSummary {
        experts: &t.experts,
        selection: &t.selection,
        perturbation: t.perturbation,
        expert_sha256: report::sha256_hex(text.as_bytes()),
    };
    let mut a = Artifacts::new();
    a.add(report::EXPERT_FILE, text.clone());
    a.add("training.json", json(&summary));
    commit(&a, &cfg.output_dir)
}

fn load_evaluation(w: &WithExpert) -> Result<(PipelineConfig, run::Prepared, run::Evaluation), PipelineError> {
    let cfg = config(&w.common)?;
    let expert = run::read_expert(&w.expert)?;
    let p = run::prepare(&cfg)?;
    let e = run::evaluate(&expert, &p, &cfg)?;
    Ok((cfg, p, e))
}

fn ep_line(label: &str, ep: &run::EpOutcome) -> String {
    match ep {
        run::EpOutcome::Ok(r) => format!("{label}: EP={:.5} prob={:.6} T={}", r.ep, r.prob, r.t),
        run::EpOutcome::Degenerate { t, .. } => format!("{label}: degenerate T={t}"),
    }
}

fn evaluate(w: &WithExpert) -> Result<(), PipelineError> {
    let (cfg, _, e) = load_evaluation(w)?;
    println!("{}", ep_line("test", &e.test.ep));
    println!("{}", ep_line("new_data", &e.new_data.ep));
    let mut a = Artifacts::new();
    a.add("evaluation.json", json(&serde_json::json!({ "test": e.test.ep, "new_data": e.new_data.ep })));
    commit(&a, &cfg.output_dir)
}

fn backtest(w: &WithExpert) -> Result<(), PipelineError> {
    let (cfg, _, e) = load_evaluation(w)?;
    let nd = &e.new_data.report;
    println!(
        "new_data: final={:.4} annualized={:.4} hit_rate={:.4}",
        nd.final_capital, nd.annualized_return, nd.hit_rate
    );
    let mut a = Artifacts::new();
    a.add(report::EQUITY_FILE, report::equity_csv(&e.new_data));
    a.add("backtest.json", json(&serde_json::json!({ "test": e.test.report, "new_data": e.new_data.report })));
    commit(&a, &cfg.output_dir)
}

fn report_cmd(w: &WithExpert) -> Result<(), PipelineError> {
    let (cfg, p, e) = load_evaluation(w)?;
    commit(&report::report_artifacts(&cfg, &p, &e, None), &cfg.output_dir)
}

fn run_all(c: &Common) -> Result<(), PipelineError> {
    let cfg = config(c)?;
    let out = run::run_pipeline(&cfg)?;
    print!("{}", report::summary_text(&cfg, &out.prepared, &out.evaluation, Some(&out.trained)));
    commit(&report::run_artifacts(&cfg, &out), &cfg.output_dir)
}

fn synth(out: &Path, seed: u64) -> Result<(), PipelineError> {
    let path = synthetic::generate(seed)
        .write_to(out)
        .map_err(|e| PipelineError::new(Stage::Report, "io", format!("{}: {e}", out.display())))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Interpolate(c) => interpolate(c),
        Command::Features(c) => features(c),
        Command::Train(c) => train(c),
        Command::Evaluate(w) => evaluate(w),
        Command::Backtest(w) => backtest(w),
        Command::Report(w) => report_cmd(w),
        Command::Run(c) => run_all(c),
        Command::Synth { out, seed } => synth(out, *seed),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.machine_line());
            ExitCode::FAILURE
        }
    }
}
