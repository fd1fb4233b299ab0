//! Seeded synthetic dataset shaped like the real inputs: a weekly
//! sine-plus-trend price with AR(1) noise, a quarterly revenue series that
//! tracks price, and three annual macro series.

use chrono::{Datelike, NaiveDate};
use rand_distr::{Distribution, Normal};
use std::f64::consts::TAU;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::neuralnet::seeded_rng;
use crate::series::weekly_calendar;

pub const DEFAULT_SEED: u64 = 2005;

/// CSV bodies keyed by file name, plus the matching configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub files: Vec<(String, String)>,
    pub config: String,
}

fn csv(points: &[(NaiveDate, f64)], decimals: usize) -> String {
    let mut s = String::from("date,value\n");
    for (d, v) in points {
        let _ = writeln!(s, "{d},{v:.decimals$}");
    }
    s
}

pub fn generate(seed: u64) -> SyntheticDataset {
    let start = NaiveDate::from_ymd_opt(1997, 1, 6).expect("valid date");
    let end = NaiveDate::from_ymd_opt(2005, 12, 26).expect("valid date");
    let calendar = weekly_calendar(start, end).expect("ordered bounds");
    let mut rng = seeded_rng(seed);
    let shock = Normal::new(0.0, 0.35).expect("valid sd");
    let macro_noise = Normal::new(0.0, 1.0).expect("valid sd");

    let mut ar = 0.0;
    let price: Vec<(NaiveDate, f64)> = calendar
        .iter()
        .enumerate()
        .map(|(t, &d)| {
            let t = t as f64;
            ar = 0.6 * ar + shock.sample(&mut rng);
            let p = 18.0 + 0.045 * t + 4.0 * (TAU * t / 52.0).sin() + 1.5 * (TAU * t / 13.0 + 0.7).sin() + ar;
            (d, p.max(1.0))
        })
        .collect();

    let mut ingresos = Vec::new();
    for year in 1997..=2005 {
        for q in 0..4u32 {
            let months = q * 3 + 1..=q * 3 + 3;
            let in_quarter: Vec<f64> = price
                .iter()
                .filter(|(d, _)| d.year() == year && months.contains(&d.month()))
                .map(|p| p.1)
                .collect();
            let mean = in_quarter.iter().sum::<f64>() / in_quarter.len() as f64;
            let date = NaiveDate::from_ymd_opt(year, q * 3 + 1, 1).expect("valid quarter");
            ingresos.push((date, 90.0 * mean + 40.0 * macro_noise.sample(&mut rng)));
        }
    }

    let yearly_price = |year: i32| {
        let v: Vec<f64> = price.iter().filter(|(d, _)| d.year() == year).map(|p| p.1).collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    let (mut gasto, mut demanda, mut inversion) = (Vec::new(), Vec::new(), Vec::new());
    for (k, year) in (1997..=2005).enumerate() {
        let date = NaiveDate::from_ymd_opt(year, 1, 1).expect("valid year");
        let k = k as f64;
        gasto.push((date, 10.4e6 * 1.12f64.powf(k) * (1.0 + 0.01 * macro_noise.sample(&mut rng))));
        demanda.push((date, 1980.0 + 18.0 * k - 3.0 * (yearly_price(year) - 25.0) + 4.0 * macro_noise.sample(&mut rng)));
        inversion.push((date, 5.2e6 * 1.08f64.powf(k) * (1.0 + 0.01 * macro_noise.sample(&mut rng))));
    }

    SyntheticDataset {
        files: vec![
            ("price.csv".into(), csv(&price, 4)),
            ("ingresos.csv".into(), csv(&ingresos, 3)),
            ("gasto.csv".into(), csv(&gasto, 1)),
            ("demanda.csv".into(), csv(&demanda, 2)),
            ("inversion.csv".into(), csv(&inversion, 1)),
        ],
        config: SYNTHETIC_CONFIG.to_string(),
    }
}

const SYNTHETIC_CONFIG: &str = "\
# Synthetic weekly run: 1997-01-06 .. 2005-12-26.
output_dir = out

[series price]
file = price.csv
frequency = weekly
units = $/b
raw = true
sma = 2, 5
lags = 0

[series ingresos]
file = ingresos.csv
frequency = quarterly
units = millones $
raw = false
sma = 2, 5
lags = 0, 15

[series gasto]
file = gasto.csv
frequency = annual
units = millones Bs
raw = false
sma = 5
lags = 0, 15

[series demanda]
file = demanda.csv
frequency = annual
units = 1000 b/d
raw = false
sma = 5
lags = 0, 15

[series inversion]
file = inversion.csv
frequency = annual
units = millones Bs
raw = false
sma = 5
lags = 0, 15

[target]
series = price
window = 4
horizon = 5

[train]
learning_rate = 0.3
error_margin = 0.05
initial_weight_range = 0.4
max_epochs = 300
n_experts = 6
base_seed = 1
ep_threshold = 0.99
perturb_rounds = 20
perturb_epsilon = 0.02
perturb_seed = 7

[backtest]
cost_rate = 0.001
initial_capital = 10
";

impl SyntheticDataset {
    /// Writes the CSVs and `synthetic.conf` into `dir`, returning the config path.
    pub fn write_to(&self, dir: &Path) -> std::io::Result<PathBuf> {
        std::fs::create_dir_all(dir)?;
        for (name, body) in &self.files {
            std::fs::write(dir.join(name), body)?;
        }
        let config = dir.join("synthetic.conf");
        std::fs::write(&config, &self.config)?;
        Ok(config)
    }
}
