//! Acceptance criteria. Runs with its own harness so every criterion prints
//! exactly one PASS/FAIL line; the process exits non-zero if any fails.

use chrono::{Duration, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration as Elapsed, Instant};

use oilcast::backtest::{self, EquityCurve, Position};
use oilcast::features::{lag, sma};
use oilcast::neuralnet::{MlpExpert, TrainConfig};
use oilcast::pipeline::report::strip_timestamp;
use oilcast::predictability::{ep_test, two_sided_confidence, ReturnPair};
use oilcast::series::{interpolate_to_weekly, weekly_calendar, Frequency, TimeSeries};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within_budget(elapsed: Elapsed, budget: Elapsed, detail: String) -> Outcome {
    check(elapsed < budget, format!("{detail}, {:.3?} (budget {budget:?})", elapsed))
}

fn dates(n: usize) -> Vec<NaiveDate> {
    let start = NaiveDate::from_ymd_opt(2005, 1, 3).unwrap();
    (0..n).map(|i| start + Duration::days(7 * i as i64)).collect()
}

fn c1_ep_probability_anchor() -> Outcome {
    let start = Instant::now();
    let plus = two_sided_confidence(4.14194);
    let minus = two_sided_confidence(-4.14194);
    let elapsed = start.elapsed();
    // The full test must report the same probability for its own statistic.
    let y = [0.02, -0.01, 0.015, -0.03, 0.01, 0.005, -0.02, 0.03];
    let y_hat = [0.01, -0.02, 0.01, -0.01, -0.01, 0.02, -0.01, 0.01];
    let r = ep_test(&ReturnPair::new(y.to_vec(), y_hat.to_vec()).unwrap()).unwrap();
    let consistent = (r.prob - two_sided_confidence(r.ep.abs())).abs() < 1e-15;
    let ok = (plus - 0.999966).abs() <= 5e-5 && plus == minus && consistent;
    within_budget(elapsed, Elapsed::from_millis(1), format!("prob(|EP|=4.14194) = {plus:.7}"))
        .and_then(|d| check(ok, d))
}

fn c2_ep_null_calibration() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(20_050_601);
    let trials = 10_000;
    let mut rejections = 0;
    let mut degenerate = 0;
    for _ in 0..trials {
        let y: Vec<f64> = (0..100).map(|_| StandardNormal.sample(&mut rng)).collect();
        let y_hat: Vec<f64> = (0..100).map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 }).collect();
        match ep_test(&ReturnPair::new(y, y_hat).unwrap()) {
            Ok(r) if r.prob > 0.95 => rejections += 1,
            Ok(_) => {}
            Err(_) => degenerate += 1,
        }
    }
    let rate = rejections as f64 / trials as f64;
    let detail = format!("rejection rate {rate:.4} ({degenerate} degenerate)");
    within_budget(start.elapsed(), Elapsed::from_secs(10), detail)
        .and_then(|d| check((rate - 0.05).abs() <= 0.02, d))
}

/// 96 weeks ending at `final_value`, with 66 long winners and 30 long losers.
fn table_curve(final_value: f64) -> EquityCurve {
    let n = 96;
    let mut returns = Vec::with_capacity(n);
    for i in 0..n {
        returns.push(if i < 66 { 0.04 } else { -0.03 });
    }
    let positions = vec![Position::Long; n];
    let mut curve = backtest::equity_curve(&dates(n), &positions, &returns, 10.0, 0.0).unwrap();
    let factor = (final_value / curve.final_value()).powf(1.0 / n as f64);
    for (t, e) in curve.equity.iter_mut().enumerate() {
        *e *= factor.powi(t as i32);
    }
    curve
}

fn table_perfect(final_value: f64) -> EquityCurve {
    let n = 96;
    let g = (final_value / 10.0).powf(1.0 / n as f64) - 1.0;
    backtest::perfect_equity(&dates(n), &vec![g; n], 10.0).unwrap()
}

fn c3_annualization_anchor() -> Outcome {
    let report = backtest::metrics(&table_curve(62.70), &table_perfect(96.26), 52.0).unwrap();
    let direct = backtest::annualized_return(10.0, 62.70, 96, 52.0);
    let pct = 100.0 * report.annualized_return;
    check(
        (pct - 170.0).abs() <= 1.0 && (report.annualized_return - direct).abs() < 1e-9,
        format!("annualized return {pct:.3}%"),
    )
}

fn c4_hit_rate_and_ratio() -> Outcome {
    let report = backtest::metrics(&table_curve(62.70), &table_perfect(96.26), 52.0).unwrap();
    let hit = 100.0 * report.hit_rate;
    let ratio = 100.0 * report.equity_over_perfect;
    check(
        report.hits == 66 && report.misses == 30 && (hit - 69.0).abs() <= 0.5 && (ratio - 65.0).abs() <= 0.5,
        format!("{}/{} hits = {hit:.3}%, equity/perfect = {ratio:.3}%", report.hits, report.misses),
    )
}

const GASTO: [f64; 5] = [10_396_381.0, 10_789_372.0, 11_178_994.0, 11_565_267.0, 11_948_212.0];

fn c5_sma_anchor() -> Outcome {
    let mut week = GASTO.to_vec();
    week.push(12_327_849.0);
    let out = sma(&week, 5).unwrap();
    // Week 6 is index 5; the printed value drops the fraction.
    let v = out[5].ok_or("SMA(5) undefined at week 6")?;
    check(
        (v - 11_175_645.0).abs() < 1.0 && out[..5].iter().all(Option::is_none),
        format!("SMA(5) at week 6 = {v:.1}"),
    )
}

fn c6_lag_anchor() -> Outcome {
    let series: Vec<Option<f64>> = (0..20)
        .map(|i| Some(if i < 5 { GASTO[i] } else { 12e6 + i as f64 }))
        .collect();
    let out = lag(&series, 15);
    check(
        out[15] == Some(10_396_381.0) && out[..15].iter().all(Option::is_none),
        format!("lag-15 at week 16 = {:?}", out[15]),
    )
}

/// Loss of a (n, h, 1) sigmoid network from flattened `[w1, b1, w2, b2]`.
fn oracle_loss(n: usize, h: usize, p: &[f64], x: &[f64], target: f64) -> f64 {
    let sig = |z: f64| 1.0 / (1.0 + (-z).exp());
    let (w1, rest) = p.split_at(n * h);
    let (b1, rest) = rest.split_at(h);
    let (w2, b2) = rest.split_at(h);
    let mut z = b2[0];
    for j in 0..h {
        let mut a = b1[j];
        for i in 0..n {
            a += w1[j * n + i] * x[i];
        }
        z += w2[j] * sig(a);
    }
    let o = sig(z);
    0.5 * (o - target).powi(2)
}

fn c7_gradient_check() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    for draw in 0..100 {
        let n = rng.random_range(1..=8);
        let h = rng.random_range(1..=8);
        let mut net = MlpExpert::init(n, h, 1.0, draw).unwrap();
        let params: Vec<f64> = net.parameters().iter().map(|_| rng.random_range(-2.0..2.0)).collect();
        net.set_parameters(&params).unwrap();
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..0.9)).collect();
        let target = rng.random_range(0.1..0.9);
        let (loss, grad) = net.loss_and_gradient(&x, target);
        if (loss - oracle_loss(n, h, &params, &x, target)).abs() > 1e-14 {
            return Err(format!("draw {draw}: loss disagrees with the independent forward pass"));
        }
        let analytic = grad.flatten();
        let eps = 1e-5;
        for k in 0..params.len() {
            let mut plus = params.clone();
            let mut minus = params.clone();
            plus[k] += eps;
            minus[k] -= eps;
            let numeric =
                (oracle_loss(n, h, &plus, &x, target) - oracle_loss(n, h, &minus, &x, target)) / (2.0 * eps);
            let denom = analytic[k].abs().max(numeric.abs()).max(1e-3);
            worst = worst.max((analytic[k] - numeric).abs() / denom);
        }
    }
    within_budget(start.elapsed(), Elapsed::from_secs(5), format!("max relative deviation {worst:.2e}"))
        .and_then(|d| check(worst <= 1e-6, d))
}

fn c8_xor_training() -> Outcome {
    let start = Instant::now();
    let names = vec!["a".to_string(), "b".to_string()];
    let inputs = vec![vec![0.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0], vec![1.0, 1.0]];
    let targets = vec![0.0, 1.0, 1.0, 0.0];
    let cfg = TrainConfig {
        learning_rate: 0.3,
        error_margin: 0.05,
        max_epochs: 50_000,
        ..TrainConfig::default()
    };
    let mut converged = Vec::new();
    for seed in 1..=10u64 {
        let mut net = MlpExpert::init(2, 4, cfg.initial_weight_range, seed).unwrap();
        net.fit_scaling(&names, "xor", &inputs, &targets).unwrap();
        if net.train(&inputs, &targets, &cfg).is_ok() && net.converged_fraction() >= 1.0 {
            converged.push(seed);
        }
    }
    let detail = format!("{}/10 seeds converged {converged:?}", converged.len());
    within_budget(start.elapsed(), Elapsed::from_secs(30), detail).and_then(|d| check(converged.len() >= 8, d))
}

fn random_case(rng: &mut ChaCha8Rng) -> (Vec<Position>, Vec<f64>, f64) {
    let n = rng.random_range(1..=60);
    let positions = (0..n)
        .map(|_| match rng.random_range(0..3) {
            0 => Position::Short,
            1 => Position::Flat,
            _ => Position::Long,
        })
        .collect();
    let returns = (0..n).map(|_| rng.random_range(-0.2..0.2)).collect();
    let cost = if rng.random_bool(0.2) { 0.0 } else { rng.random_range(0.0..0.01) };
    (positions, returns, cost)
}

fn c9_backtest_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let (positions, returns, cost) = random_case(&mut rng);
        let initial = rng.random_range(1.0..100.0);
        let curve = backtest::equity_curve(&dates(returns.len()), &positions, &returns, initial, cost).unwrap();
        let mut e = initial;
        let mut prev = 0i32;
        for (t, (p, r)) in positions.iter().zip(&returns).enumerate() {
            let s = match p {
                Position::Short => -1,
                Position::Flat => 0,
                Position::Long => 1,
            };
            let mut next = e + e * (s as f64) * r;
            if s != prev {
                next -= next * cost;
            }
            e = next;
            prev = s;
            worst = worst.max((curve.equity[t + 1] - e).abs() / e.abs());
        }
    }
    check(worst <= 1e-12, format!("max relative deviation {worst:.2e} over 1000 cases"))
}

fn c10_perfect_dominance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for case in 0..1000 {
        let (positions, returns, _) = random_case(&mut rng);
        let d = dates(returns.len());
        let strat = backtest::equity_curve(&d, &positions, &returns, 10.0, 0.0).unwrap();
        let perfect = backtest::perfect_equity(&d, &returns, 10.0).unwrap();
        if strat.final_value() > perfect.final_value() * (1.0 + 1e-12) {
            return Err(format!("case {case}: strategy beat the perfect benchmark"));
        }
        let oracle = backtest::signals(&returns);
        let ideal = backtest::equity_curve(&d, &oracle, &returns, 10.0, 0.0).unwrap();
        if (ideal.final_value() - perfect.final_value()).abs() > 1e-12 * perfect.final_value() {
            return Err(format!("case {case}: correct signals differ from the perfect benchmark"));
        }
    }
    Ok("1000 cases, dominance and equality hold".into())
}

fn bundled_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data/synthetic/synthetic.conf")
}

fn run_once(out: &Path) -> Result<(), String> {
    let status = Command::new(env!("CARGO_BIN_EXE_oilcast"))
        .arg("run")
        .arg("--config")
        .arg(bundled_config())
        .arg("--out")
        .arg(out)
        .output()
        .map_err(|e| e.to_string())?;
    if status.status.success() {
        Ok(())
    } else {
        Err(String::from_utf8_lossy(&status.stderr).trim().to_string())
    }
}

fn c11_determinism() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    run_once(&a)?;
    run_once(&b)?;
    let elapsed = start.elapsed();
    let files = ["manifest.json", "summary.txt", "equity.csv", "predictions.csv", "chart.svg", "expert.mlp"];
    for f in files {
        let x = std::fs::read_to_string(a.join(f)).map_err(|e| format!("{f}: {e}"))?;
        let y = std::fs::read_to_string(b.join(f)).map_err(|e| format!("{f}: {e}"))?;
        let (x, y) = if f == "manifest.json" { (strip_timestamp(&x), strip_timestamp(&y)) } else { (x, y) };
        if x != y {
            return Err(format!("{f} differs between runs"));
        }
    }
    within_budget(elapsed, Elapsed::from_secs(60), format!("{} artifacts identical over two runs", files.len()))
}

fn c12_polynomial_recovery() -> Outcome {
    let cal = weekly_calendar(
        NaiveDate::from_ymd_opt(1997, 1, 6).unwrap(),
        NaiveDate::from_ymd_opt(2005, 12, 26).unwrap(),
    )
    .unwrap();
    let last = (cal.len() - 1) as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut worst: f64 = 0.0;
    let mut min_r2: f64 = 1.0;
    for k in 0..=6 {
        for _ in 0..5 {
            // Offset keeps the generator away from zero so relative error is meaningful.
            let coeffs: Vec<f64> = (0..=k)
                .map(|j| if j == 0 { 10.0 } else { rng.random_range(-1.0..1.0) })
                .collect();
            let g = |week: f64| {
                let u = 2.0 * week / last - 1.0;
                coeffs.iter().rev().fold(0.0, |acc, c| acc * u + c)
            };
            let mut points = Vec::new();
            for q in 0..36 {
                let start = NaiveDate::from_ymd_opt(1997 + q / 4, 1 + 3 * (q % 4) as u32, 1).unwrap();
                let week = cal.iter().position(|&c| c >= start).unwrap();
                points.push((start, g(week as f64)));
            }
            let s = TimeSeries::new("poly", Frequency::Quarterly, "", points).unwrap();
            // Threshold 1 makes the search run up to the generating degree.
            let (weekly, fit) = interpolate_to_weekly(&s, &cal, 6, 1.0).map_err(|e| e.to_string())?;
            min_r2 = min_r2.min(fit.r_squared);
            for (i, (_, v)) in weekly.points().iter().enumerate() {
                let want = g(i as f64);
                worst = worst.max((v - want).abs() / want.abs());
            }
        }
    }
    check(
        min_r2 >= 0.99 && worst <= 1e-6,
        format!("degrees 0..=6: min R² {min_r2:.12}, max relative error {worst:.2e}"),
    )
}

fn main() {
    let criteria: [Criterion; 12] = [
        ("1 EP probability anchor", c1_ep_probability_anchor),
        ("2 EP null calibration", c2_ep_null_calibration),
        ("3 annualization anchor", c3_annualization_anchor),
        ("4 hit-rate and ratio anchors", c4_hit_rate_and_ratio),
        ("5 SMA anchor", c5_sma_anchor),
        ("6 lag anchor", c6_lag_anchor),
        ("7 gradient correctness", c7_gradient_check),
        ("8 XOR training", c8_xor_training),
        ("9 backtest oracle equivalence", c9_backtest_oracle),
        ("10 perfect-equity dominance", c10_perfect_dominance),
        ("11 end-to-end determinism", c11_determinism),
        ("12 interpolation recovery", c12_polynomial_recovery),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        match f() {
            Ok(d) => println!("criterion {name}: PASS ({d})"),
            Err(d) => {
                failed += 1;
                println!("criterion {name}: FAIL ({d})");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
