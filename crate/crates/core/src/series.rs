//! Dated numeric series and homogenization onto a weekly grid.
//!
//! Raw inputs arrive at weekly, quarterly or annual frequency. Everything is
//! brought onto one weekly calendar: weekly series are snapped onto the grid,
//! lower-frequency series are fitted with a least-squares polynomial whose
//! degree is chosen by an R² criterion and then evaluated at every week.

use chrono::{Datelike, Months, NaiveDate};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

/// Weekly dates may drift this many days from the nominal spacing.
pub const CALENDAR_TOLERANCE_DAYS: i64 = 3;
pub const DEFAULT_MAX_DEGREE: usize = 6;
pub const DEFAULT_R2_THRESHOLD: f64 = 0.99;
pub const MAX_SUPPORTED_DEGREE: usize = 8;

const PIVOT_TOLERANCE: f64 = 1e-12;
/// R² values closer than this are treated as equal during degree search.
const R2_SLACK: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SeriesError {
    #[error("invalid input: {0}")]
    Input(String),
    #[error("point {index}: date {date} does not follow {previous}")]
    NonMonotone {
        index: usize,
        date: NaiveDate,
        previous: NaiveDate,
    },
    #[error("point {index}: duplicate date {date}")]
    Duplicate { index: usize, date: NaiveDate },
    #[error("point {index}: gap {previous} -> {date} inconsistent with {frequency} frequency")]
    Frequency {
        index: usize,
        date: NaiveDate,
        previous: NaiveDate,
        frequency: Frequency,
    },
    #[error("point {index}: non-finite value")]
    NonFinite { index: usize },
    #[error("fit error: {0}")]
    Fit(String),
    #[error("numeric error: {0}")]
    Numeric(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Frequency {
    Weekly,
    Quarterly,
    Annual,
}

impl Frequency {
    /// First day of the period that contains `date`.
    pub fn period_start(self, date: NaiveDate) -> NaiveDate {
        match self {
            Frequency::Weekly => date,
            Frequency::Quarterly => {
                let month = (date.month0() / 3) * 3 + 1;
                NaiveDate::from_ymd_opt(date.year(), month, 1).expect("valid quarter start")
            }
            Frequency::Annual => {
                NaiveDate::from_ymd_opt(date.year(), 1, 1).expect("valid year start")
            }
        }
    }

    /// Last day of the period that contains `date`.
    pub fn period_end(self, date: NaiveDate) -> NaiveDate {
        match self {
            Frequency::Weekly => date,
            Frequency::Quarterly => {
                self.period_start(date) + Months::new(3) - chrono::Duration::days(1)
            }
            Frequency::Annual => {
                NaiveDate::from_ymd_opt(date.year(), 12, 31).expect("valid year end")
            }
        }
    }

    fn consistent(self, previous: NaiveDate, next: NaiveDate) -> bool {
        let expected = match self {
            Frequency::Weekly => previous + chrono::Duration::days(7),
            Frequency::Quarterly => previous + Months::new(3),
            Frequency::Annual => previous + Months::new(12),
        };
        (next - expected).num_days().abs() <= CALENDAR_TOLERANCE_DAYS
    }
}

impl fmt::Display for Frequency {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Frequency::Weekly => "weekly",
            Frequency::Quarterly => "quarterly",
            Frequency::Annual => "annual",
        })
    }
}

impl FromStr for Frequency {
    type Err = SeriesError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "weekly" => Ok(Frequency::Weekly),
            "quarterly" => Ok(Frequency::Quarterly),
            "annual" | "yearly" => Ok(Frequency::Annual),
            other => Err(SeriesError::Input(format!("unknown frequency '{other}'"))),
        }
    }
}

/// A validated, single-frequency dated series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    id: String,
    frequency: Frequency,
    units: String,
    points: Vec<(NaiveDate, f64)>,
}

impl TimeSeries {
    /// Builds a series, checking ordering, spacing and finiteness.
    pub fn new(
        id: impl Into<String>,
        frequency: Frequency,
        units: impl Into<String>,
        points: Vec<(NaiveDate, f64)>,
    ) -> Result<Self, SeriesError> {
        for (index, &(date, value)) in points.iter().enumerate() {
            if !value.is_finite() {
                return Err(SeriesError::NonFinite { index });
            }
            if index == 0 {
                continue;
            }
            let previous = points[index - 1].0;
            if date == previous {
                return Err(SeriesError::Duplicate { index, date });
            }
            if date < previous {
                return Err(SeriesError::NonMonotone {
                    index,
                    date,
                    previous,
                });
            }
            if !frequency.consistent(previous, date) {
                return Err(SeriesError::Frequency {
                    index,
                    date,
                    previous,
                    frequency,
                });
            }
        }
        Ok(Self {
            id: id.into(),
            frequency,
            units: units.into(),
            points,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn frequency(&self) -> Frequency {
        self.frequency
    }

    pub fn units(&self) -> &str {
        &self.units
    }

    pub fn points(&self) -> &[(NaiveDate, f64)] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dates(&self) -> impl Iterator<Item = NaiveDate> + '_ {
        self.points.iter().map(|p| p.0)
    }

    pub fn values(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.1).collect()
    }
}

/// Outcome of the degree search for one interpolated series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub degree: usize,
    pub r_squared: f64,
    /// Ascending powers of the normalized time index.
    pub coefficients: Vec<f64>,
}

/// Weekly dates from `start` stepping 7 days while not past `end`.
pub fn weekly_calendar(start: NaiveDate, end: NaiveDate) -> Result<Vec<NaiveDate>, SeriesError> {
    if start > end {
        return Err(SeriesError::Input(format!(
            "calendar start {start} is after end {end}"
        )));
    }
    let weeks = (end - start).num_days() / 7;
    Ok((0..=weeks)
        .map(|w| start + chrono::Duration::days(7 * w))
        .collect())
}

/// Maps week offsets from the first calendar date onto [-1, 1].
#[derive(Debug, Clone, Copy)]
struct TimeAxis {
    origin: NaiveDate,
    half_span: f64,
}

impl TimeAxis {
    fn new(calendar: &[NaiveDate]) -> Self {
        let span = (calendar.len().saturating_sub(1)) as f64;
        Self {
            origin: calendar[0],
            half_span: if span > 0.0 { span / 2.0 } else { 1.0 },
        }
    }

    fn weeks(&self, date: NaiveDate) -> f64 {
        (date - self.origin).num_days() as f64 / 7.0
    }

    fn normalize(&self, weeks: f64) -> f64 {
        weeks / self.half_span - 1.0
    }
}

/// Position (in weeks from the calendar origin) at which an observation enters the fit.
///
/// Quarterly and annual values sit on the first calendar week on or after the
/// start of their period.
fn anchor_weeks(axis: &TimeAxis, frequency: Frequency, date: NaiveDate) -> f64 {
    match frequency {
        Frequency::Weekly => axis.weeks(date),
        _ => {
            let start = frequency.period_start(date);
            let days = (start - axis.origin).num_days();
            days.div_euclid(7) as f64 + if days.rem_euclid(7) == 0 { 0.0 } else { 1.0 }
        }
    }
}

fn check_coverage(series: &TimeSeries, calendar: &[NaiveDate]) -> Result<(), SeriesError> {
    let (first, last) = (calendar[0], calendar[calendar.len() - 1]);
    let freq = series.frequency();
    let tol = chrono::Duration::days(CALENDAR_TOLERANCE_DAYS);
    let head = freq.period_start(series.points[0].0) - tol;
    let tail = freq.period_end(series.points[series.len() - 1].0) + tol;
    if head > first || tail < last {
        return Err(SeriesError::Input(format!(
            "series '{}' covers {}..{} but calendar spans {first}..{last}",
            series.id(),
            freq.period_start(series.points[0].0),
            freq.period_end(series.points[series.len() - 1].0),
        )));
    }
    Ok(())
}

/// Solves the least-squares polynomial fit of `degree` via column-scaled
/// normal equations. Returns `None` when a pivot collapses below tolerance.
fn least_squares_poly(xs: &[f64], ys: &[f64], degree: usize) -> Option<Vec<f64>> {
    let n = degree + 1;
    let design: Vec<Vec<f64>> = xs
        .iter()
        .map(|&x| {
            let mut row = Vec::with_capacity(n);
            let mut p = 1.0;
            for _ in 0..n {
                row.push(p);
                p *= x;
            }
            row
        })
        .collect();
    let scale: Vec<f64> = (0..n)
        .map(|j| design.iter().map(|r| r[j] * r[j]).sum::<f64>().sqrt())
        .collect();
    if scale.contains(&0.0) {
        return None;
    }
    // Augmented normal matrix [A^T A | A^T y] in scaled columns.
    let mut m = vec![vec![0.0; n + 1]; n];
    for (row, &y) in design.iter().zip(ys) {
        for i in 0..n {
            let ri = row[i] / scale[i];
            for j in 0..n {
                m[i][j] += ri * row[j] / scale[j];
            }
            m[i][n] += ri * y;
        }
    }
    for col in 0..n {
        let pivot_row = (col..n)
            .max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs()))
            .expect("non-empty range");
        if m[pivot_row][col].abs() < PIVOT_TOLERANCE {
            return None;
        }
        m.swap(col, pivot_row);
        for r in col + 1..n {
            let factor = m[r][col] / m[col][col];
            if factor != 0.0 {
                let (upper, lower) = m.split_at_mut(r);
                for (dst, src) in lower[0][col..].iter_mut().zip(&upper[col][col..]) {
                    *dst -= factor * src;
                }
            }
        }
    }
    let mut coef = vec![0.0; n];
    for i in (0..n).rev() {
        let tail: f64 = (i + 1..n).map(|j| m[i][j] * coef[j]).sum();
        coef[i] = (m[i][n] - tail) / m[i][i];
    }
    Some(coef.iter().zip(&scale).map(|(c, s)| c / s).collect())
}

fn eval_poly(coefficients: &[f64], x: f64) -> f64 {
    coefficients.iter().rev().fold(0.0, |acc, &c| acc * x + c)
}

fn r_squared(xs: &[f64], ys: &[f64], coefficients: &[f64]) -> f64 {
    let mean = ys.iter().sum::<f64>() / ys.len() as f64;
    let ss_tot: f64 = ys.iter().map(|y| (y - mean).powi(2)).sum();
    let ss_res: f64 = xs
        .iter()
        .zip(ys)
        .map(|(&x, &y)| (y - eval_poly(coefficients, x)).powi(2))
        .sum();
    if ss_tot == 0.0 {
        let scale = mean.abs().max(1.0);
        return if ss_res.sqrt() <= 1e-9 * scale { 1.0 } else { 0.0 };
    }
    (1.0 - ss_res / ss_tot).clamp(0.0, 1.0)
}

/// Fits polynomials of increasing degree and picks the first reaching
/// `r2_threshold`, or the best one if none does.
pub fn fit_polynomial(
    xs: &[f64],
    ys: &[f64],
    max_degree: usize,
    r2_threshold: f64,
) -> Result<FitReport, SeriesError> {
    if !(1..=MAX_SUPPORTED_DEGREE).contains(&max_degree) {
        return Err(SeriesError::Input(format!(
            "max_degree {max_degree} outside 1..={MAX_SUPPORTED_DEGREE}"
        )));
    }
    let mut best: Option<FitReport> = None;
    let mut previous_r2 = f64::NEG_INFINITY;
    for degree in 1..=max_degree {
        if xs.len() < degree + 1 {
            break;
        }
        let Some(coefficients) = least_squares_poly(xs, ys, degree) else {
            break;
        };
        let r2 = r_squared(xs, ys, &coefficients);
        debug_assert!(
            r2 >= previous_r2 - 1e-9,
            "R² decreased from {previous_r2} to {r2} at degree {degree}"
        );
        previous_r2 = r2;
        let report = FitReport {
            degree,
            r_squared: r2,
            coefficients,
        };
        if r2 >= r2_threshold - R2_SLACK {
            return Ok(report);
        }
        if best
            .as_ref()
            .is_none_or(|b| r2 > b.r_squared + R2_SLACK)
        {
            best = Some(report);
        }
    }
    best.ok_or_else(|| {
        SeriesError::Fit(format!(
            "{} points cannot support any polynomial of degree 1..={max_degree}",
            xs.len()
        ))
    })
}

/// Homogenizes `series` onto `calendar` by polynomial least squares.
///
/// Weekly inputs keep their observed values on calendar dates they hit
/// exactly; every other week takes the fitted polynomial.
pub fn interpolate_to_weekly(
    series: &TimeSeries,
    calendar: &[NaiveDate],
    max_degree: usize,
    r2_threshold: f64,
) -> Result<(TimeSeries, FitReport), SeriesError> {
    if series.len() < 2 {
        return Err(SeriesError::Input(format!(
            "series '{}' needs at least 2 points, has {}",
            series.id(),
            series.len()
        )));
    }
    if calendar.is_empty() {
        return Err(SeriesError::Input("empty calendar".into()));
    }
    check_coverage(series, calendar)?;

    let axis = TimeAxis::new(calendar);
    let xs: Vec<f64> = series
        .dates()
        .map(|d| axis.normalize(anchor_weeks(&axis, series.frequency(), d)))
        .collect();
    let ys = series.values();
    let fit = fit_polynomial(&xs, &ys, max_degree, r2_threshold)?;

    let mut observed = series.points().iter().peekable();
    let mut points = Vec::with_capacity(calendar.len());
    for &date in calendar {
        let mut value = eval_poly(&fit.coefficients, axis.normalize(axis.weeks(date)));
        if series.frequency() == Frequency::Weekly {
            while observed.next_if(|p| p.0 < date).is_some() {}
            if let Some(&&(d, v)) = observed.peek() {
                if d == date {
                    value = v;
                }
            }
        }
        if !value.is_finite() {
            return Err(SeriesError::Numeric(format!(
                "series '{}' interpolates to a non-finite value at {date}",
                series.id()
            )));
        }
        points.push((date, value));
    }
    let weekly = TimeSeries::new(series.id(), Frequency::Weekly, series.units(), points)?;
    Ok((weekly, fit))
}

/// Snaps a weekly series onto `calendar`, matching each calendar date to
/// the observation within the calendar tolerance.
pub fn align_weekly(series: &TimeSeries, calendar: &[NaiveDate]) -> Result<TimeSeries, SeriesError> {
    if series.frequency() != Frequency::Weekly {
        return Err(SeriesError::Input(format!(
            "series '{}' is {}, not weekly",
            series.id(),
            series.frequency()
        )));
    }
    let pts = series.points();
    let mut cursor = 0;
    let mut out = Vec::with_capacity(calendar.len());
    for &date in calendar {
        while cursor < pts.len()
            && (pts[cursor].0 - date).num_days() < -CALENDAR_TOLERANCE_DAYS
        {
            cursor += 1;
        }
        match pts.get(cursor) {
            Some(&(d, v)) if (d - date).num_days().abs() <= CALENDAR_TOLERANCE_DAYS => {
                out.push((date, v));
                cursor += 1;
            }
            _ => {
                return Err(SeriesError::Input(format!(
                    "series '{}' has no observation within {CALENDAR_TOLERANCE_DAYS} days of {date}",
                    series.id()
                )))
            }
        }
    }
    TimeSeries::new(series.id(), Frequency::Weekly, series.units(), out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(y: i32, m: u32, day: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, day).unwrap()
    }

    #[test]
    fn calendar_counts() {
        assert_eq!(weekly_calendar(d(1997, 1, 6), d(1997, 1, 27)).unwrap().len(), 4);
        assert_eq!(weekly_calendar(d(1997, 1, 6), d(1997, 1, 6)).unwrap(), vec![d(1997, 1, 6)]);
        assert!(weekly_calendar(d(1997, 1, 7), d(1997, 1, 6)).is_err());
    }

    #[test]
    fn calendar_matches_day_loop() {
        let (start, end) = (d(1997, 1, 6), d(2005, 12, 26));
        let mut expected = Vec::new();
        let mut day = start;
        let mut i = 0;
        while day <= end {
            if i % 7 == 0 {
                expected.push(day);
            }
            day = day.succ_opt().unwrap();
            i += 1;
        }
        let cal = weekly_calendar(start, end).unwrap();
        assert_eq!(cal, expected);
        assert_eq!(cal.len(), 469);
    }

    #[test]
    fn rejects_bad_series() {
        let dup = TimeSeries::new("x", Frequency::Annual, "", vec![(d(1997, 1, 1), 1.0), (d(1997, 1, 1), 2.0)]);
        assert!(matches!(dup, Err(SeriesError::Duplicate { index: 1, .. })));
        let back = TimeSeries::new("x", Frequency::Annual, "", vec![(d(1998, 1, 1), 1.0), (d(1997, 1, 1), 2.0)]);
        assert!(matches!(back, Err(SeriesError::NonMonotone { index: 1, .. })));
        let gap = TimeSeries::new("x", Frequency::Weekly, "", vec![(d(1997, 1, 6), 1.0), (d(1997, 1, 20), 2.0)]);
        assert!(matches!(gap, Err(SeriesError::Frequency { index: 1, .. })));
        let jitter = TimeSeries::new("x", Frequency::Weekly, "", vec![(d(1997, 1, 6), 1.0), (d(1997, 1, 16), 2.0)]);
        assert!(jitter.is_ok());
        let nan = TimeSeries::new("x", Frequency::Weekly, "", vec![(d(1997, 1, 6), f64::NAN)]);
        assert!(matches!(nan, Err(SeriesError::NonFinite { index: 0 })));
        let q = TimeSeries::new(
            "q",
            Frequency::Quarterly,
            "",
            vec![(d(1997, 3, 31), 1.0), (d(1997, 6, 30), 1.0), (d(1997, 9, 30), 1.0), (d(1997, 12, 31), 1.0)],
        );
        assert!(q.is_ok());
    }

    #[test]
    fn linear_annual_data_is_reproduced() {
        let cal = weekly_calendar(d(1997, 1, 6), d(2005, 12, 26)).unwrap();
        let axis = TimeAxis::new(&cal);
        let pts: Vec<_> = (1997..=2005)
            .map(|y| {
                let date = d(y, 1, 1);
                let w = anchor_weeks(&axis, Frequency::Annual, date);
                (date, 3.0 + 0.25 * w)
            })
            .collect();
        let s = TimeSeries::new("lin", Frequency::Annual, "u", pts).unwrap();
        let (weekly, fit) = interpolate_to_weekly(&s, &cal, 6, 0.99).unwrap();
        assert_eq!(fit.degree, 1);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
        assert_eq!(weekly.len(), cal.len());
        for (i, (date, v)) in weekly.points().iter().enumerate() {
            assert_eq!(*date, cal[i]);
            let want = 3.0 + 0.25 * i as f64;
            assert!((v - want).abs() <= 1e-9 * want.abs(), "week {i}: {v} vs {want}");
        }
    }

    #[test]
    fn quadratic_needs_degree_two() {
        let cal = weekly_calendar(d(2000, 1, 3), d(2002, 12, 30)).unwrap();
        let pts: Vec<_> = (0..12)
            .map(|q| {
                let start = d(2000 + q / 4, 1 + 3 * (q % 4) as u32, 1);
                let week = cal.iter().position(|&c| c >= start).unwrap();
                (start, (week as f64).powi(2))
            })
            .collect();
        let s = TimeSeries::new("sq", Frequency::Quarterly, "", pts).unwrap();
        let (weekly, fit) = interpolate_to_weekly(&s, &cal, 6, 0.99).unwrap();
        assert_eq!(fit.degree, 2);
        assert!(fit.r_squared > 1.0 - 1e-12);
        for (i, (_, v)) in weekly.points().iter().enumerate() {
            let want = (i as f64).powi(2);
            assert!((v - want).abs() <= 1e-8 * want.max(1.0), "week {i}: {v} vs {want}");
        }
    }

    #[test]
    fn weekly_input_passes_through_on_shared_dates() {
        let cal = weekly_calendar(d(2001, 1, 1), d(2001, 6, 25)).unwrap();
        let pts: Vec<_> = cal
            .iter()
            .enumerate()
            .map(|(i, &date)| (date, 10.0 + (i as f64 * 0.7).sin()))
            .collect();
        let s = TimeSeries::new("p", Frequency::Weekly, "$/b", pts.clone()).unwrap();
        let (weekly, fit) = interpolate_to_weekly(&s, &cal, 6, 0.99).unwrap();
        assert!(fit.r_squared < 0.99);
        assert_eq!(weekly.points(), &pts[..]);
    }

    #[test]
    fn too_few_points_is_fit_error() {
        let cal = weekly_calendar(d(1997, 1, 6), d(1997, 12, 29)).unwrap();
        let s = TimeSeries::new("one", Frequency::Annual, "", vec![(d(1997, 1, 1), 1.0)]).unwrap();
        assert!(matches!(interpolate_to_weekly(&s, &cal, 6, 0.99), Err(SeriesError::Input(_))));
        assert!(matches!(fit_polynomial(&[0.0], &[1.0], 3, 0.99), Err(SeriesError::Fit(_))));
    }

    #[test]
    fn coverage_is_checked() {
        let cal = weekly_calendar(d(1997, 1, 6), d(1999, 12, 27)).unwrap();
        let s = TimeSeries::new("a", Frequency::Annual, "", vec![(d(1997, 6, 30), 1.0), (d(1998, 6, 30), 2.0)]).unwrap();
        assert!(matches!(interpolate_to_weekly(&s, &cal, 2, 0.99), Err(SeriesError::Input(_))));
    }

    #[test]
    fn anchors_on_first_week_of_period() {
        let cal = weekly_calendar(d(1997, 1, 6), d(1998, 12, 28)).unwrap();
        let axis = TimeAxis::new(&cal);
        assert_eq!(anchor_weeks(&axis, Frequency::Annual, d(1997, 7, 1)), 0.0);
        // 1998-01-01 falls between calendar weeks 51 (12-29) and 52 (01-05).
        assert_eq!(anchor_weeks(&axis, Frequency::Annual, d(1998, 1, 1)), 52.0);
        assert_eq!(cal[52], d(1998, 1, 5));
        assert_eq!(anchor_weeks(&axis, Frequency::Quarterly, d(1997, 5, 15)), 13.0);
        assert_eq!(cal[13], d(1997, 4, 7));
    }

    #[test]
    fn align_snaps_within_tolerance() {
        let cal = weekly_calendar(d(2001, 1, 5), d(2001, 1, 26)).unwrap();
        let s = TimeSeries::new(
            "p",
            Frequency::Weekly,
            "",
            vec![(d(2001, 1, 5), 1.0), (d(2001, 1, 11), 2.0), (d(2001, 1, 19), 3.0), (d(2001, 1, 26), 4.0)],
        )
        .unwrap();
        let aligned = align_weekly(&s, &cal).unwrap();
        assert_eq!(aligned.values(), vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(aligned.dates().collect::<Vec<_>>(), cal);
        let short = TimeSeries::new("p", Frequency::Weekly, "", vec![(d(2001, 1, 5), 1.0)]).unwrap();
        assert!(align_weekly(&short, &cal).is_err());
    }
}
