//! Line-oriented `key = value` run configuration.
//!
//! ```text
//! output_dir = out                 # optional, relative to this file
//!
//! [series price]
//! file = price.csv
//! frequency = weekly
//! units = $/b
//! raw = true
//! sma = 2, 5
//! lags = 0, 15
//!
//! [target]
//! series = price
//! window = 4
//! horizon = 5
//!
//! [train]
//! learning_rate = 0.3
//! n_experts = 10
//!
//! [backtest]
//! cost_rate = 0.001
//! ```
//!
//! Blank lines and lines starting with `#` or `;` are ignored.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use thiserror::Error;

use crate::backtest::{DEFAULT_COST_RATE, DEFAULT_WEEKS_PER_YEAR};
use crate::neuralnet::TrainConfig;
use crate::predictability::ReturnKind;
use crate::series::{Frequency, DEFAULT_MAX_DEGREE, DEFAULT_R2_THRESHOLD, MAX_SUPPORTED_DEGREE};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {reason}")]
    Syntax { line: usize, reason: String },
    #[error("line {line}: key '{key}' has invalid value '{value}': {reason}")]
    Value {
        line: usize,
        key: String,
        value: String,
        reason: String,
    },
    #[error("[{section}] is missing required key '{key}'")]
    MissingKey { section: String, key: String },
    #[error("{0}")]
    Reference(String),
    #[error("series file not found: {}", .0.display())]
    MissingFile(PathBuf),
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeriesConfig {
    pub id: String,
    /// Path as written in the configuration.
    pub file: PathBuf,
    /// `file` resolved against the configuration directory.
    pub path: PathBuf,
    pub frequency: Frequency,
    pub units: String,
    /// Whether the series feeds the network at all.
    pub input: bool,
    /// Include the untransformed weekly values as inputs.
    pub raw: bool,
    pub sma: Vec<usize>,
    pub lags: Vec<usize>,
    pub max_degree: usize,
    pub r2_threshold: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetConfig {
    pub series: String,
    pub window: usize,
    pub horizon: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSection {
    pub net: TrainConfig,
    /// Hidden units; `None` means one per input.
    pub hidden: Option<usize>,
    pub n_experts: usize,
    pub base_seed: u64,
    pub ep_threshold: f64,
    pub train_frac: f64,
    pub test_frac: f64,
    pub returns: ReturnKind,
    pub perturb_rounds: usize,
    pub perturb_epsilon: f64,
    pub perturb_seed: u64,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            net: TrainConfig {
                max_epochs: 2000,
                ..TrainConfig::default()
            },
            hidden: None,
            n_experts: 10,
            base_seed: 1,
            ep_threshold: 0.99,
            train_frac: 0.60,
            test_frac: 0.30,
            returns: ReturnKind::Log,
            perturb_rounds: 0,
            perturb_epsilon: 0.01,
            perturb_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BacktestSection {
    pub cost_rate: f64,
    pub initial_capital: f64,
    pub weeks_per_year: f64,
}

impl Default for BacktestSection {
    fn default() -> Self {
        Self {
            cost_rate: DEFAULT_COST_RATE,
            initial_capital: 10.0,
            weeks_per_year: DEFAULT_WEEKS_PER_YEAR,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    /// Output directory as written (`out` when omitted).
    pub output: PathBuf,
    /// Resolved output directory.
    pub output_dir: PathBuf,
    pub series: Vec<SeriesConfig>,
    pub target: TargetConfig,
    pub train: TrainSection,
    pub backtest: BacktestSection,
}

impl PipelineConfig {
    pub fn series(&self, id: &str) -> Option<&SeriesConfig> {
        self.series.iter().find(|s| s.id == id)
    }

    /// Serializes back into the configuration syntax. When
    /// `include_output` is false the `output_dir` line is omitted.
    pub fn dump(&self, include_output: bool) -> String {
        let mut s = String::new();
        let list = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(", ");
        if include_output {
            let _ = writeln!(s, "output_dir = {}\n", self.output.display());
        }
        for sc in &self.series {
            let _ = writeln!(s, "[series {}]", sc.id);
            let _ = writeln!(s, "file = {}", sc.file.display());
            let _ = writeln!(s, "frequency = {}", sc.frequency);
            let _ = writeln!(s, "units = {}", sc.units);
            let _ = writeln!(s, "input = {}", sc.input);
            let _ = writeln!(s, "raw = {}", sc.raw);
            let _ = writeln!(s, "sma = {}", list(&sc.sma));
            let _ = writeln!(s, "lags = {}", list(&sc.lags));
            let _ = writeln!(s, "max_degree = {}", sc.max_degree);
            let _ = writeln!(s, "r2_threshold = {}\n", sc.r2_threshold);
        }
        let t = &self.target;
        let _ = writeln!(s, "[target]\nseries = {}\nwindow = {}\nhorizon = {}\n", t.series, t.window, t.horizon);
        let tr = &self.train;
        let _ = writeln!(s, "[train]");
        let _ = writeln!(s, "learning_rate = {}", tr.net.learning_rate);
        let _ = writeln!(s, "error_margin = {}", tr.net.error_margin);
        let _ = writeln!(s, "initial_weight_range = {}", tr.net.initial_weight_range);
        let _ = writeln!(s, "max_epochs = {}", tr.net.max_epochs);
        let _ = writeln!(s, "convergence_fraction = {}", tr.net.convergence_fraction);
        let _ = writeln!(s, "hidden = {}", tr.hidden.map_or("auto".to_string(), |h| h.to_string()));
        let _ = writeln!(s, "n_experts = {}", tr.n_experts);
        let _ = writeln!(s, "base_seed = {}", tr.base_seed);
        let _ = writeln!(s, "ep_threshold = {}", tr.ep_threshold);
        let _ = writeln!(s, "train_frac = {}", tr.train_frac);
        let _ = writeln!(s, "test_frac = {}", tr.test_frac);
        let _ = writeln!(s, "returns = {}", tr.returns.as_str());
        let _ = writeln!(s, "perturb_rounds = {}", tr.perturb_rounds);
        let _ = writeln!(s, "perturb_epsilon = {}", tr.perturb_epsilon);
        let _ = writeln!(s, "perturb_seed = {}\n", tr.perturb_seed);
        let b = &self.backtest;
        let _ = writeln!(s, "[backtest]");
        let _ = writeln!(s, "cost_rate = {}", b.cost_rate);
        let _ = writeln!(s, "initial_capital = {}", b.initial_capital);
        let _ = writeln!(s, "weeks_per_year = {}", b.weeks_per_year);
        s
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
enum Section {
    Global,
    Series(String),
    Target,
    Train,
    Backtest,
}

impl Section {
    fn label(&self) -> String {
        match self {
            Section::Global => "global".into(),
            Section::Series(id) => format!("series {id}"),
            Section::Target => "target".into(),
            Section::Train => "train".into(),
            Section::Backtest => "backtest".into(),
        }
    }

    fn allowed(&self) -> &'static [&'static str] {
        match self {
            Section::Global => &["output_dir"],
            Section::Series(_) => &[
                "file",
                "frequency",
                "units",
                "input",
                "raw",
                "sma",
                "lags",
                "max_degree",
                "r2_threshold",
            ],
            Section::Target => &["series", "window", "horizon"],
            Section::Train => &[
                "learning_rate",
                "error_margin",
                "initial_weight_range",
                "max_epochs",
                "convergence_fraction",
                "hidden",
                "n_experts",
                "base_seed",
                "ep_threshold",
                "train_frac",
                "test_frac",
                "returns",
                "perturb_rounds",
                "perturb_epsilon",
                "perturb_seed",
            ],
            Section::Backtest => &["cost_rate", "initial_capital", "weeks_per_year"],
        }
    }
}

type Entries = BTreeMap<String, (usize, String)>;

struct Reader<'a> {
    section: &'a Section,
    entries: &'a Entries,
}

impl Reader<'_> {
    fn raw(&self, key: &str) -> Option<&(usize, String)> {
        self.entries.get(key)
    }

    fn required_str(&self, key: &str) -> Result<&str, ConfigError> {
        self.raw(key)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| ConfigError::MissingKey {
                section: self.section.label(),
                key: key.into(),
            })
    }

    fn parse<T: FromStr>(&self, key: &str, default: T) -> Result<T, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        match self.raw(key) {
            None => Ok(default),
            Some((line, v)) => v.parse().map_err(|e: T::Err| ConfigError::Value {
                line: *line,
                key: key.into(),
                value: v.clone(),
                reason: e.to_string(),
            }),
        }
    }

    fn list(&self, key: &str, default: &[usize]) -> Result<Vec<usize>, ConfigError> {
        let Some((line, v)) = self.raw(key) else {
            return Ok(default.to_vec());
        };
        v.split(',')
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .map(|t| {
                t.parse::<i64>()
                    .map_err(|e| e.to_string())
                    .and_then(|n| usize::try_from(n).map_err(|_| format!("{n} is negative")))
                    .map_err(|reason| ConfigError::Value {
                        line: *line,
                        key: key.into(),
                        value: v.clone(),
                        reason,
                    })
            })
            .collect()
    }

    fn check(&self, key: &str, ok: bool, reason: &str) -> Result<(), ConfigError> {
        if ok {
            return Ok(());
        }
        let (line, value) = self.raw(key).cloned().unwrap_or((0, "<default>".into()));
        Err(ConfigError::Value {
            line,
            key: key.into(),
            value,
            reason: reason.into(),
        })
    }
}

fn tokenize(text: &str) -> Result<Vec<(Section, Entries)>, ConfigError> {
    let mut sections: Vec<(Section, Entries)> = vec![(Section::Global, Entries::new())];
    for (i, raw_line) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw_line.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
            continue;
        }
        if let Some(inner) = line.strip_prefix('[') {
            let inner = inner.strip_suffix(']').ok_or_else(|| ConfigError::Syntax {
                line: line_no,
                reason: format!("unterminated section header '{line}'"),
            })?;
            let mut words = inner.split_whitespace();
            let section = match (words.next(), words.next(), words.next()) {
                (Some("series"), Some(id), None) => Section::Series(id.to_string()),
                (Some("target"), None, None) => Section::Target,
                (Some("train"), None, None) => Section::Train,
                (Some("backtest"), None, None) => Section::Backtest,
                _ => {
                    return Err(ConfigError::Syntax {
                        line: line_no,
                        reason: format!("unknown section '[{inner}]'"),
                    })
                }
            };
            if sections.iter().any(|(s, _)| *s == section) {
                return Err(ConfigError::Syntax {
                    line: line_no,
                    reason: format!("duplicate section '[{inner}]'"),
                });
            }
            sections.push((section, Entries::new()));
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
            line: line_no,
            reason: format!("expected 'key = value', found '{line}'"),
        })?;
        let key = key.trim();
        let (section, entries) = sections.last_mut().expect("global section");
        if !section.allowed().contains(&key) {
            return Err(ConfigError::Syntax {
                line: line_no,
                reason: format!("unknown key '{key}' in [{}]", section.label()),
            });
        }
        if entries.insert(key.to_string(), (line_no, value.trim().to_string())).is_some() {
            return Err(ConfigError::Syntax {
                line: line_no,
                reason: format!("duplicate key '{key}'"),
            });
        }
    }
    Ok(sections)
}

/// Parses configuration text; relative paths resolve against `base_dir`.
pub fn parse_config(text: &str, base_dir: &Path) -> Result<PipelineConfig, ConfigError> {
    let sections = tokenize(text)?;
    let empty = Entries::new();
    let find = |want: &Section| sections.iter().find(|(s, _)| s == want).map(|(_, e)| e);

    let global = Reader {
        section: &Section::Global,
        entries: find(&Section::Global).unwrap_or(&empty),
    };
    let output = PathBuf::from(global.raw("output_dir").map_or("out", |(_, v)| v.as_str()));

    let mut series = Vec::new();
    for (section, entries) in &sections {
        let Section::Series(id) = section else { continue };
        let r = Reader { section, entries };
        let file = PathBuf::from(r.required_str("file")?);
        let path = base_dir.join(&file);
        if !path.is_file() {
            return Err(ConfigError::MissingFile(path));
        }
        let frequency: Frequency = {
            let value = r.required_str("frequency")?;
            value.parse().map_err(|e: crate::series::SeriesError| ConfigError::Value {
                line: r.raw("frequency").map_or(0, |x| x.0),
                key: "frequency".into(),
                value: value.into(),
                reason: e.to_string(),
            })?
        };
        let sc = SeriesConfig {
            id: id.clone(),
            file,
            path,
            frequency,
            units: r.raw("units").map(|(_, v)| v.clone()).unwrap_or_default(),
            input: r.parse("input", true)?,
            raw: r.parse("raw", true)?,
            sma: r.list("sma", &[2, 5])?,
            lags: r.list("lags", &[0, 15])?,
            max_degree: r.parse("max_degree", DEFAULT_MAX_DEGREE)?,
            r2_threshold: r.parse("r2_threshold", DEFAULT_R2_THRESHOLD)?,
        };
        r.check("sma", sc.sma.iter().all(|&w| w >= 1), "SMA windows must be at least 1")?;
        r.check("lags", !sc.lags.is_empty(), "at least one lag is required")?;
        r.check(
            "max_degree",
            (1..=MAX_SUPPORTED_DEGREE).contains(&sc.max_degree),
            "must lie in 1..=8",
        )?;
        r.check(
            "r2_threshold",
            sc.r2_threshold > 0.0 && sc.r2_threshold <= 1.0,
            "must lie in (0, 1]",
        )?;
        r.check("raw", sc.raw || !sc.sma.is_empty() || !sc.input, "an input series needs raw or sma columns")?;
        series.push(sc);
    }
    if series.is_empty() {
        return Err(ConfigError::Invalid("no [series <id>] sections".into()));
    }
    if !series.iter().any(|s| s.input) {
        return Err(ConfigError::Invalid("no series is marked as a network input".into()));
    }

    let target_entries = find(&Section::Target).ok_or_else(|| ConfigError::MissingKey {
        section: "target".into(),
        key: "series".into(),
    })?;
    let tr = Reader {
        section: &Section::Target,
        entries: target_entries,
    };
    let target = TargetConfig {
        series: tr.required_str("series")?.to_string(),
        window: tr.parse("window", 4)?,
        horizon: tr.parse("horizon", 5)?,
    };
    if !series.iter().any(|s| s.id == target.series) {
        return Err(ConfigError::Reference(format!(
            "[target] series '{}' is not declared",
            target.series
        )));
    }
    tr.check("window", target.window >= 1, "must be at least 1")?;
    tr.check("horizon", target.horizon >= 1, "must be at least 1")?;

    let r = Reader {
        section: &Section::Train,
        entries: find(&Section::Train).unwrap_or(&empty),
    };
    let d = TrainSection::default();
    let hidden = match r.raw("hidden") {
        None => None,
        Some((_, v)) if v == "auto" => None,
        Some(_) => Some(r.parse::<usize>("hidden", 0)?),
    };
    let train = TrainSection {
        net: TrainConfig {
            learning_rate: r.parse("learning_rate", d.net.learning_rate)?,
            error_margin: r.parse("error_margin", d.net.error_margin)?,
            initial_weight_range: r.parse("initial_weight_range", d.net.initial_weight_range)?,
            max_epochs: r.parse("max_epochs", d.net.max_epochs)?,
            convergence_fraction: r.parse("convergence_fraction", d.net.convergence_fraction)?,
        },
        hidden,
        n_experts: r.parse("n_experts", d.n_experts)?,
        base_seed: r.parse("base_seed", d.base_seed)?,
        ep_threshold: r.parse("ep_threshold", d.ep_threshold)?,
        train_frac: r.parse("train_frac", d.train_frac)?,
        test_frac: r.parse("test_frac", d.test_frac)?,
        returns: r.parse("returns", d.returns)?,
        perturb_rounds: r.parse("perturb_rounds", d.perturb_rounds)?,
        perturb_epsilon: r.parse("perturb_epsilon", d.perturb_epsilon)?,
        perturb_seed: r.parse("perturb_seed", d.perturb_seed)?,
    };
    train
        .net
        .validate()
        .map_err(|e| ConfigError::Invalid(format!("[train] {e}")))?;
    r.check("hidden", train.hidden != Some(0), "must be at least 1")?;
    r.check("n_experts", train.n_experts >= 1, "must be at least 1")?;
    r.check(
        "ep_threshold",
        (0.0..=1.0).contains(&train.ep_threshold),
        "must lie in [0, 1]",
    )?;
    r.check("train_frac", train.train_frac > 0.0 && train.train_frac < 1.0, "must lie in (0, 1)")?;
    r.check(
        "test_frac",
        train.test_frac > 0.0 && train.test_frac < 1.0,
        "must lie in (0, 1)",
    )?;
    r.check("perturb_epsilon", train.perturb_epsilon > 0.0, "must be positive")?;

    let r = Reader {
        section: &Section::Backtest,
        entries: find(&Section::Backtest).unwrap_or(&empty),
    };
    let d = BacktestSection::default();
    let backtest = BacktestSection {
        cost_rate: r.parse("cost_rate", d.cost_rate)?,
        initial_capital: r.parse("initial_capital", d.initial_capital)?,
        weeks_per_year: r.parse("weeks_per_year", d.weeks_per_year)?,
    };
    r.check("cost_rate", (0.0..1.0).contains(&backtest.cost_rate), "must lie in [0, 1)")?;
    r.check("initial_capital", backtest.initial_capital > 0.0, "must be positive")?;
    r.check("weeks_per_year", backtest.weeks_per_year > 0.0, "must be positive")?;

    Ok(PipelineConfig {
        output_dir: base_dir.join(&output),
        output,
        series,
        target,
        train,
        backtest,
    })
}

pub fn load_config(path: &Path) -> Result<PipelineConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    parse_config(&text, base)
}
