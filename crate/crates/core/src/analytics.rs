//! Descriptive tables, jump seasonality and the fixed-effects panel
//! regression of daily returns on jump dummies.

use std::collections::BTreeMap;

use chrono::{Datelike, NaiveDate, Timelike};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::pipeline::{DayVerdict, Direction, JumpEvent};

/// Linear-interpolation quantile of sorted data (Hyndman-Fan type 7).
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub n: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub mean: f64,
    pub q3: f64,
    pub max: f64,
    /// `None` when the sample has no variation.
    pub skewness: Option<f64>,
    /// Raw (non-excess) kurtosis; `None` when the sample has no variation.
    pub kurtosis: Option<f64>,
}

pub fn summarize_returns(returns: &[f64]) -> Result<SummaryStats> {
    if returns.len() < 2 {
        return Err(Error::TooShort {
            what: "return summary",
            needed: 2,
            got: returns.len(),
        });
    }
    if returns.iter().any(|r| !r.is_finite()) {
        return Err(Error::InvalidInput("non-finite return".into()));
    }
    let mut sorted = returns.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = returns.len() as f64;
    let mean = returns.iter().sum::<f64>() / n;
    let moment = |k: i32| returns.iter().map(|r| (r - mean).powi(k)).sum::<f64>() / n;
    let m2 = moment(2);
    let (skewness, kurtosis) = if m2 > 0.0 {
        (Some(moment(3) / m2.powf(1.5)), Some(moment(4) / (m2 * m2)))
    } else {
        (None, None)
    };
    Ok(SummaryStats {
        n: returns.len(),
        min: sorted[0],
        q1: quantile_sorted(&sorted, 0.25),
        median: quantile_sorted(&sorted, 0.5),
        mean,
        q3: quantile_sorted(&sorted, 0.75),
        max: sorted[sorted.len() - 1],
        skewness,
        kurtosis,
    })
}

pub const RETURN_THRESHOLDS: [f64; 4] = [0.05, 0.1, 0.2, 0.3];
pub const JUMP_THRESHOLDS: [f64; 4] = [0.025, 0.05, 0.1, 0.2];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtremeRow {
    pub threshold: f64,
    /// Returns strictly below `-threshold`.
    pub negative: usize,
    /// Returns strictly above `threshold`.
    pub positive: usize,
}

pub fn count_extremes(returns: &[f64], thresholds: &[f64]) -> Vec<ExtremeRow> {
    thresholds
        .iter()
        .map(|&t| ExtremeRow {
            threshold: t,
            negative: returns.iter().filter(|&&r| r < -t).count(),
            positive: returns.iter().filter(|&&r| r > t).count(),
        })
        .collect()
}

pub const WEEKDAYS: [&str; 7] = ["Mon", "Tue", "Wed", "Thu", "Fri", "Sat", "Sun"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seasonality {
    /// Monday first.
    pub weekday: [usize; 7],
    pub hour: [usize; 24],
}

pub fn seasonality(events: &[JumpEvent]) -> Seasonality {
    let mut s = Seasonality {
        weekday: [0; 7],
        hour: [0; 24],
    };
    for e in events {
        s.weekday[e.utc_timestamp.weekday().num_days_from_monday() as usize] += 1;
        s.hour[e.utc_timestamp.hour() as usize] += 1;
    }
    s
}

impl Seasonality {
    pub fn weekday_csv(&self) -> String {
        let mut out = String::from("bin,count\n");
        for (d, c) in WEEKDAYS.iter().zip(self.weekday) {
            out.push_str(&format!("{d},{c}\n"));
        }
        out
    }

    pub fn hour_csv(&self) -> String {
        let mut out = String::from("bin,count\n");
        for (h, c) in self.hour.iter().enumerate() {
            out.push_str(&format!("{h},{c}\n"));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelRow {
    pub symbol: String,
    pub utc_date: NaiveDate,
    pub daily_return: f64,
    pub jump_dummy: u8,
    pub lagged_jump_dummy: u8,
    pub pos_jump_dummy: u8,
    pub neg_jump_dummy: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regressor {
    Jump,
    LaggedJump,
    PosJump,
    NegJump,
}

impl Regressor {
    pub const ALL: [Regressor; 4] = [
        Regressor::Jump,
        Regressor::LaggedJump,
        Regressor::PosJump,
        Regressor::NegJump,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Regressor::Jump => "jump_dummy",
            Regressor::LaggedJump => "lagged_jump_dummy",
            Regressor::PosJump => "pos_jump_dummy",
            Regressor::NegJump => "neg_jump_dummy",
        }
    }

    pub fn column_title(self) -> &'static str {
        match self {
            Regressor::Jump => "Jumps (all)",
            Regressor::LaggedJump => "Lagged jumps (all)",
            Regressor::PosJump => "Jumps (pos.)",
            Regressor::NegJump => "Jumps (neg.)",
        }
    }

    fn value(self, row: &PanelRow) -> f64 {
        f64::from(match self {
            Regressor::Jump => row.jump_dummy,
            Regressor::LaggedJump => row.lagged_jump_dummy,
            Regressor::PosJump => row.pos_jump_dummy,
            Regressor::NegJump => row.neg_jump_dummy,
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Panel {
    pub rows: Vec<PanelRow>,
    /// Tested days left out because the previous calendar day was untested.
    pub dropped: usize,
}

/// Close-to-close panel from a catalog. A row needs both its day and the
/// previous calendar day tested with a closing price.
pub fn build_panel(verdicts: &[DayVerdict]) -> Panel {
    let mut by_symbol: BTreeMap<&str, BTreeMap<NaiveDate, &DayVerdict>> = BTreeMap::new();
    for v in verdicts {
        by_symbol.entry(&v.symbol).or_default().insert(v.utc_date, v);
    }
    let usable = |v: &DayVerdict| v.tested && v.close_log_price.is_some();
    let has = |v: &DayVerdict, dir: Option<Direction>| {
        u8::from(v.accepted_jumps.iter().any(|e| dir.is_none_or(|d| e.direction == d)))
    };
    let mut panel = Panel::default();
    for (symbol, days) in by_symbol {
        for (date, v) in &days {
            if !usable(v) {
                continue;
            }
            let prev = date.pred_opt().and_then(|p| days.get(&p)).filter(|p| usable(p));
            let Some(prev) = prev else {
                panel.dropped += 1;
                continue;
            };
            panel.rows.push(PanelRow {
                symbol: symbol.to_string(),
                utc_date: *date,
                daily_return: v.close_log_price.unwrap() - prev.close_log_price.unwrap(),
                jump_dummy: has(v, None),
                lagged_jump_dummy: has(prev, None),
                pos_jump_dummy: has(v, Some(Direction::Positive)),
                neg_jump_dummy: has(v, Some(Direction::Negative)),
            });
        }
    }
    if panel.dropped > 0 {
        log::info!("panel: dropped {} days whose previous day was not tested", panel.dropped);
    }
    panel
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficient {
    pub name: String,
    pub estimate: f64,
    /// White (HC0) standard error.
    pub std_error: f64,
    pub t_stat: f64,
    pub p_value: f64,
}

impl Coefficient {
    pub fn stars(&self) -> &'static str {
        stars(self.p_value)
    }
}

pub fn stars(p: f64) -> &'static str {
    if p < 0.001 {
        "***"
    } else if p < 0.01 {
        "**"
    } else if p < 0.05 {
        "*"
    } else {
        ""
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionResult {
    pub coefficients: Vec<Coefficient>,
    pub r_squared: f64,
    pub adj_r_squared: f64,
    pub n_obs: usize,
    pub n_groups: usize,
}

/// Rows sorted by (symbol, date) with the dependent variable and regressors
/// demeaned within symbol.
struct Demeaned {
    y: Vec<f64>,
    x: Vec<Vec<f64>>,
    groups: usize,
}

fn demean(panel: &[PanelRow], regressors: &[Regressor]) -> Result<Demeaned> {
    let mut rows: Vec<&PanelRow> = panel.iter().collect();
    rows.sort_by(|a, b| a.symbol.cmp(&b.symbol).then(a.utc_date.cmp(&b.utc_date)));
    let mut y = Vec::with_capacity(rows.len());
    let mut x = vec![Vec::with_capacity(rows.len()); regressors.len()];
    let mut groups = 0;
    for group in rows.chunk_by(|a, b| a.symbol == b.symbol) {
        if group.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "symbol {} has {} panel row(s); need at least 2",
                group[0].symbol,
                group.len()
            )));
        }
        groups += 1;
        let n = group.len() as f64;
        let ym = group.iter().map(|r| r.daily_return).sum::<f64>() / n;
        y.extend(group.iter().map(|r| r.daily_return - ym));
        for (j, reg) in regressors.iter().enumerate() {
            let xm = group.iter().map(|r| reg.value(r)).sum::<f64>() / n;
            x[j].extend(group.iter().map(|r| reg.value(r) - xm));
        }
    }
    if groups < 2 {
        return Err(Error::InvalidInput(format!("need at least 2 symbols, got {groups}")));
    }
    Ok(Demeaned { y, x, groups })
}

fn finish(coefs: Vec<(String, f64, f64)>, ssr: f64, sst: f64, n: usize, groups: usize) -> Result<RegressionResult> {
    let k = coefs.len();
    if n <= groups + k {
        return Err(Error::InvalidInput(format!(
            "{n} observations leave no residual degrees of freedom for {groups} symbols and {k} regressors"
        )));
    }
    let df = (n - groups - k) as f64;
    let t_dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::InvalidInput(e.to_string()))?;
    let r_squared = if sst > 0.0 { 1.0 - ssr / sst } else { 0.0 };
    let adj_r_squared = 1.0 - (1.0 - r_squared) * (n - 1) as f64 / df;
    let coefficients = coefs
        .into_iter()
        .map(|(name, estimate, std_error)| {
            let t_stat = if std_error > 0.0 {
                estimate / std_error
            } else if estimate == 0.0 {
                0.0
            } else {
                estimate.signum() * f64::INFINITY
            };
            let p_value = if t_stat.is_infinite() {
                0.0
            } else {
                2.0 * (1.0 - t_dist.cdf(t_stat.abs()))
            };
            Coefficient {
                name,
                estimate,
                std_error,
                t_stat,
                p_value,
            }
        })
        .collect();
    Ok(RegressionResult {
        coefficients,
        r_squared,
        adj_r_squared,
        n_obs: n,
        n_groups: groups,
    })
}

/// One-way fixed-effects regression of daily returns on one dummy, with
/// White (HC0) standard errors.
pub fn fe_regression(panel: &[PanelRow], regressor: Regressor) -> Result<RegressionResult> {
    let d = demean(panel, &[regressor])?;
    let x = &d.x[0];
    let sxx: f64 = x.iter().map(|v| v * v).sum();
    if sxx <= 1e-12 {
        return Err(Error::NoVariation);
    }
    let beta = x.iter().zip(&d.y).map(|(a, b)| a * b).sum::<f64>() / sxx;
    let resid: Vec<f64> = x.iter().zip(&d.y).map(|(a, b)| b - beta * a).collect();
    let meat: f64 = x.iter().zip(&resid).map(|(a, e)| a * a * e * e).sum();
    let se = meat.sqrt() / sxx;
    let ssr: f64 = resid.iter().map(|e| e * e).sum();
    let sst: f64 = d.y.iter().map(|v| v * v).sum();
    finish(vec![(regressor.name().to_string(), beta, se)], ssr, sst, d.y.len(), d.groups)
}

/// Several dummies in one fixed-effects regression.
pub fn fe_regression_multi(panel: &[PanelRow], regressors: &[Regressor]) -> Result<RegressionResult> {
    if regressors.is_empty() {
        return Err(Error::InvalidInput("no regressors".into()));
    }
    let d = demean(panel, regressors)?;
    let n = d.y.len();
    let k = regressors.len();
    let x = DMatrix::from_fn(n, k, |i, j| d.x[j][i]);
    let y = DVector::from_column_slice(&d.y);
    let xtx = x.transpose() * &x;
    let xtx_inv = xtx.try_inverse().ok_or(Error::NoVariation)?;
    if (0..k).any(|j| x.column(j).norm_squared() <= 1e-12) {
        return Err(Error::NoVariation);
    }
    let beta = &xtx_inv * x.transpose() * &y;
    let resid = &y - &x * &beta;
    let mut meat = DMatrix::zeros(k, k);
    for i in 0..n {
        let row = x.row(i);
        meat += row.transpose() * row * resid[i].powi(2);
    }
    let cov = &xtx_inv * meat * &xtx_inv;
    let coefs = regressors
        .iter()
        .enumerate()
        .map(|(j, r)| (r.name().to_string(), beta[j], cov[(j, j)].max(0.0).sqrt()))
        .collect();
    finish(coefs, resid.norm_squared(), y.norm_squared(), n, d.groups)
}

/// Side-by-side regression table: estimates with stars, standard errors in
/// parentheses beneath, then R², Adj. R² and Num. obs.
pub fn render_regressions(columns: &[(&str, &RegressionResult)]) -> String {
    let mut names: Vec<String> = Vec::new();
    for (_, r) in columns {
        for c in &r.coefficients {
            if !names.contains(&c.name) {
                names.push(c.name.clone());
            }
        }
    }
    let label_w = names.iter().map(String::len).max().unwrap_or(0).max(10) + 2;
    let col_w = columns.iter().map(|(t, _)| t.len()).max().unwrap_or(0).max(12) + 2;
    let rule = "=".repeat(label_w + col_w * columns.len());
    let thin = "-".repeat(label_w + col_w * columns.len());
    let mut out = format!("{rule}\n{:<label_w$}", "");
    for (title, _) in columns {
        out.push_str(&format!("{title:>col_w$}"));
    }
    out.push_str(&format!("\n{thin}\n"));
    for name in &names {
        let mut est = format!("{name:<label_w$}");
        let mut se = format!("{:<label_w$}", "");
        for (_, r) in columns {
            match r.coefficients.iter().find(|c| &c.name == name) {
                Some(c) => {
                    est.push_str(&format!("{:>col_w$}", format!("{:.3}{:<3}", c.estimate, c.stars())));
                    se.push_str(&format!("{:>col_w$}", format!("({:.3})   ", c.std_error)));
                }
                None => {
                    est.push_str(&" ".repeat(col_w));
                    se.push_str(&" ".repeat(col_w));
                }
            }
        }
        out.push_str(est.trim_end());
        out.push('\n');
        out.push_str(se.trim_end());
        out.push('\n');
    }
    out.push_str(&format!("{thin}\n"));
    let footer_row = |label: &str, f: &dyn Fn(&RegressionResult) -> String| {
        let mut line = format!("{label:<label_w$}");
        for (_, r) in columns {
            line.push_str(&format!("{:>col_w$}", format!("{}   ", f(r))));
        }
        line.trim_end().to_string() + "\n"
    };
    out.push_str(&footer_row("R^2", &|r| format!("{:.3}", r.r_squared)));
    out.push_str(&footer_row("Adj. R^2", &|r| format!("{:.3}", r.adj_r_squared)));
    out.push_str(&footer_row("Num. obs.", &|r| r.n_obs.to_string()));
    out.push_str(&format!("{rule}\n***p<0.001; **p<0.01; *p<0.05\n"));
    out
}

pub fn regressions_csv(columns: &[(&str, &RegressionResult)]) -> String {
    let mut out = String::from("model,term,estimate,std_error,t_stat,p_value,stars,r_squared,adj_r_squared,n_obs\n");
    for (title, r) in columns {
        for c in &r.coefficients {
            out.push_str(&format!(
                "{title},{},{},{},{},{},{},{},{},{}\n",
                c.name,
                c.estimate,
                c.std_error,
                c.t_stat,
                c.p_value,
                c.stars(),
                r.r_squared,
                r.adj_r_squared,
                r.n_obs
            ));
        }
    }
    out
}

/// Thousands-separated fixed-point number.
pub fn format_number(v: f64, decimals: usize) -> String {
    let s = format!("{:.*}", decimals, v.abs());
    let (int, frac) = s.split_once('.').map_or((s.as_str(), ""), |(a, b)| (a, b));
    let mut grouped = String::new();
    for (i, ch) in int.chars().enumerate() {
        if i > 0 && (int.len() - i) % 3 == 0 {
            grouped.push(',');
        }
        grouped.push(ch);
    }
    let sign = if v < 0.0 && s.chars().any(|c| c != '0' && c != '.') { "-" } else { "" };
    if frac.is_empty() {
        format!("{sign}{grouped}")
    } else {
        format!("{sign}{grouped}.{frac}")
    }
}

fn opt_number(v: Option<f64>, decimals: usize) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format_number(x, decimals))
}

/// Per-symbol return summaries: Currency, Min., 1st Qu., Median, Mean,
/// 3rd Qu., Max., Skewness, Kurtosis.
pub fn render_summary_table(rows: &[(String, SummaryStats)]) -> String {
    let header = [
        "Currency", "Min.", "1st Qu.", "Median", "Mean", "3rd Qu.", "Max.", "Skewness", "Kurtosis",
    ];
    let mut out = format!("{:<10}", header[0]);
    for h in &header[1..] {
        out.push_str(&format!("{h:>11}"));
    }
    out.push('\n');
    for (sym, s) in rows {
        out.push_str(&format!("{sym:<10}"));
        for v in [s.min, s.q1, s.median, s.mean, s.q3, s.max] {
            out.push_str(&format!("{:>11}", format_number(v, 4)));
        }
        out.push_str(&format!("{:>11}{:>11}\n", opt_number(s.skewness, 2), opt_number(s.kurtosis, 2)));
    }
    out
}

pub fn summary_csv(rows: &[(String, SummaryStats)]) -> String {
    let mut out = String::from("symbol,n,min,q1,median,mean,q3,max,skewness,kurtosis\n");
    let o = |v: Option<f64>| v.map_or_else(String::new, |x| x.to_string());
    for (sym, s) in rows {
        out.push_str(&format!(
            "{sym},{},{},{},{},{},{},{},{},{}\n",
            s.n,
            s.min,
            s.q1,
            s.median,
            s.mean,
            s.q3,
            s.max,
            o(s.skewness),
            o(s.kurtosis)
        ));
    }
    out
}

/// Two-sided extreme counts: Negative, Counts, Positive, Counts.
pub fn render_extremes(rows: &[ExtremeRow]) -> String {
    let mut out = format!("{:<10}{:>9}  {:<10}{:>9}\n", "Negative", "Counts", "Positive", "Counts");
    for r in rows {
        out.push_str(&format!(
            "{:<10}{:>9}  {:<10}{:>9}\n",
            format!("< -{}", r.threshold),
            format_number(r.negative as f64, 0),
            format!("> {}", r.threshold),
            format_number(r.positive as f64, 0)
        ));
    }
    out
}

pub fn extremes_csv(rows: &[ExtremeRow]) -> String {
    let mut out = String::from("threshold,negative,positive\n");
    for r in rows {
        out.push_str(&format!("{},{},{}\n", r.threshold, r.negative, r.positive));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JumpSizeTable {
    pub all: Option<SummaryStats>,
    pub positive: Option<SummaryStats>,
    pub negative: Option<SummaryStats>,
    pub counts: [usize; 3],
}

pub fn jump_size_table(events: &[JumpEvent]) -> JumpSizeTable {
    let all: Vec<f64> = events.iter().map(|e| e.size).collect();
    let pos: Vec<f64> = all.iter().copied().filter(|s| *s > 0.0).collect();
    let neg: Vec<f64> = all.iter().copied().filter(|s| *s < 0.0).collect();
    JumpSizeTable {
        all: summarize_returns(&all).ok(),
        positive: summarize_returns(&pos).ok(),
        negative: summarize_returns(&neg).ok(),
        counts: [all.len(), pos.len(), neg.len()],
    }
}

/// Statistic, All, Positive, Negative.
pub fn render_jump_sizes(t: &JumpSizeTable) -> String {
    let cols = [t.all, t.positive, t.negative];
    let mut out = format!("{:<10}{:>10}{:>10}{:>10}\n", "Statistic", "All", "Positive", "Negative");
    out.push_str(&format!("{:<10}", "N"));
    for c in t.counts {
        out.push_str(&format!("{:>10}", format_number(c as f64, 0)));
    }
    out.push('\n');
    let rows: [(&str, fn(&SummaryStats) -> Option<f64>); 8] = [
        ("Min.", |s| Some(s.min)),
        ("1st Qu.", |s| Some(s.q1)),
        ("Median", |s| Some(s.median)),
        ("Mean", |s| Some(s.mean)),
        ("3rd Qu.", |s| Some(s.q3)),
        ("Max.", |s| Some(s.max)),
        ("Skewness", |s| s.skewness),
        ("Kurtosis", |s| s.kurtosis),
    ];
    for (label, f) in rows {
        out.push_str(&format!("{label:<10}"));
        for c in &cols {
            out.push_str(&format!("{:>10}", opt_number(c.as_ref().and_then(f), 3)));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::CATALOG_SCHEMA_VERSION;
    use approx::assert_relative_eq;
    use chrono::{DateTime, TimeZone, Utc};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn event(t: DateTime<Utc>, size: f64) -> JumpEvent {
        JumpEvent {
            symbol: "BTC".into(),
            utc_timestamp: t,
            timestamp_ns: t.timestamp_nanos_opt().unwrap(),
            size,
            direction: if size > 0.0 { Direction::Positive } else { Direction::Negative },
            xi: 10.0,
            day_ajl_reject: true,
        }
    }

    #[test]
    fn two_point_moments() {
        let s = summarize_returns(&[-1.0, 1.0]).unwrap();
        assert_eq!(s.skewness, Some(0.0));
        assert_eq!(s.kurtosis, Some(1.0));
        assert_eq!((s.min, s.median, s.max), (-1.0, 0.0, 1.0));
    }

    #[test]
    fn constant_sample_flags_moments() {
        let s = summarize_returns(&[0.5; 10]).unwrap();
        assert_eq!(s.skewness, None);
        assert_eq!(s.kurtosis, None);
        assert!(summarize_returns(&[1.0]).is_err());
    }

    #[test]
    fn normal_sample_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x: Vec<f64> = (0..1_000_000).map(|_| rng.sample(StandardNormal)).collect();
        let s = summarize_returns(&x).unwrap();
        assert!(s.skewness.unwrap().abs() < 0.01);
        assert!((s.kurtosis.unwrap() - 3.0).abs() < 0.05);
    }

    #[test]
    fn extremes_examples() {
        let rows = count_extremes(&[-0.06, 0.04, 0.11], &RETURN_THRESHOLDS);
        assert_eq!((rows[0].negative, rows[0].positive), (1, 1));
        assert_eq!((rows[1].negative, rows[1].positive), (0, 1));
        assert_eq!((rows[2].negative, rows[2].positive), (0, 0));
        assert!(count_extremes(&[], &RETURN_THRESHOLDS).iter().all(|r| r.negative + r.positive == 0));
        // strict inequality
        let rows = count_extremes(&[0.05, -0.05], &[0.05]);
        assert_eq!((rows[0].negative, rows[0].positive), (0, 0));
    }

    #[test]
    fn extremes_match_brute_force_on_heavy_tails() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x: Vec<f64> = (0..20_000)
            .map(|_| {
                let z: f64 = rng.sample(StandardNormal);
                let u: f64 = rng.random::<f64>().max(1e-9);
                0.01 * z / u.sqrt()
            })
            .collect();
        for row in count_extremes(&x, &RETURN_THRESHOLDS) {
            let mut neg = 0;
            let mut pos = 0;
            for v in &x {
                if *v < -row.threshold {
                    neg += 1;
                }
                if *v > row.threshold {
                    pos += 1;
                }
            }
            assert_eq!((row.negative, row.positive), (neg, pos));
        }
    }

    #[test]
    fn seasonality_bins() {
        let wed = Utc.with_ymd_and_hms(2021, 3, 3, 14, 30, 0).unwrap();
        let s = seasonality(&[event(wed, 0.01)]);
        assert_eq!(s.weekday[2], 1);
        assert_eq!(s.hour[14], 1);
        let day: Vec<JumpEvent> = (0..24)
            .map(|h| event(Utc.with_ymd_and_hms(2021, 3, 3, h, 5, 0).unwrap(), 0.01))
            .collect();
        assert!(seasonality(&day).hour.iter().all(|&c| c == 1));
        assert!(seasonality(&[]).hour_csv().starts_with("bin,count\n0,0\n"));
    }

    #[test]
    fn afternoon_cluster_is_the_mode() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut events = Vec::new();
        for i in 0..500 {
            let hour = if i % 2 == 0 { rng.random_range(13..17) } else { rng.random_range(0..24) };
            let t = Utc.with_ymd_and_hms(2020, 1, 1 + (i % 28), hour, rng.random_range(0..60), 0).unwrap();
            events.push(event(t, 0.01));
        }
        let s = seasonality(&events);
        let mode = (0..24).max_by_key(|&h| s.hour[h]).unwrap();
        assert!((13..=17).contains(&mode));
    }

    fn verdict(symbol: &str, day: u32, close: f64, jumps: &[f64], tested: bool) -> DayVerdict {
        let date = NaiveDate::from_ymd_opt(2020, 1, day).unwrap();
        let t = Utc.from_utc_datetime(&date.and_hms_opt(12, 0, 0).unwrap());
        DayVerdict {
            schema_version: CATALOG_SCHEMA_VERSION,
            config_hash: String::new(),
            symbol: symbol.into(),
            utc_date: date,
            tested,
            reason: None,
            message: None,
            n_ticks: 0,
            filter_removals: 0,
            frequency_s: Some(1),
            close_log_price: Some(close),
            lm_jump_count_raw: jumps.len(),
            lm_jump_count_dedup: jumps.len(),
            ajl_reject: !jumps.is_empty(),
            accepted_jumps: jumps.iter().map(|&s| event(t, s)).collect(),
            lm: None,
            ajl: None,
        }
    }

    #[test]
    fn panel_construction() {
        let vs = vec![
            verdict("BTC", 1, 9.0, &[], true),
            verdict("BTC", 2, 9.1, &[0.02, -0.01], true),
            verdict("BTC", 3, 9.05, &[], true),
            verdict("BTC", 4, 9.0, &[], false),
            verdict("BTC", 5, 9.2, &[-0.03], true),
            verdict("BTC", 6, 9.3, &[], true),
        ];
        let p = build_panel(&vs);
        // day 1 has no predecessor, day 5 follows an untested day
        assert_eq!(p.dropped, 2);
        assert_eq!(p.rows.len(), 3);
        let r2 = &p.rows[0];
        assert_relative_eq!(r2.daily_return, 0.1, max_relative = 1e-12);
        assert_eq!((r2.jump_dummy, r2.pos_jump_dummy, r2.neg_jump_dummy, r2.lagged_jump_dummy), (1, 1, 1, 0));
        assert_eq!(p.rows[1].lagged_jump_dummy, 1);
        assert_eq!(p.rows[2].utc_date.day(), 6);
        assert_eq!(p.rows[2].lagged_jump_dummy, 1);
    }

    fn random_panel(seed: u64, symbols: usize, days: usize) -> Vec<PanelRow> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = Vec::new();
        for s in 0..symbols {
            let alpha: f64 = rng.random_range(-0.01..0.01);
            for d in 0..days {
                let jump = u8::from(rng.random::<f64>() < 0.3);
                let pos = jump * u8::from(rng.random::<bool>());
                let scale = if jump == 1 { 0.05 } else { 0.02 };
                let z: f64 = rng.sample(StandardNormal);
                rows.push(PanelRow {
                    symbol: format!("S{s}"),
                    utc_date: NaiveDate::from_ymd_opt(2020, 1, 1).unwrap() + chrono::Days::new(d as u64),
                    daily_return: alpha - 0.01 * f64::from(jump) + scale * z,
                    jump_dummy: jump,
                    lagged_jump_dummy: u8::from(rng.random::<f64>() < 0.3),
                    pos_jump_dummy: pos,
                    neg_jump_dummy: jump - pos,
                });
            }
        }
        rows
    }

    /// `(X'X)^-1 X' diag(e^2) X (X'X)^-1` with explicit symbol dummies
    /// instead of demeaning.
    fn brute_force(panel: &[PanelRow], reg: Regressor) -> (f64, f64) {
        let mut symbols: Vec<&str> = panel.iter().map(|r| r.symbol.as_str()).collect();
        symbols.sort();
        symbols.dedup();
        let n = panel.len();
        let k = 1 + symbols.len();
        let x = DMatrix::from_fn(n, k, |i, j| {
            if j == 0 {
                reg.value(&panel[i])
            } else {
                f64::from(u8::from(panel[i].symbol == symbols[j - 1]))
            }
        });
        let y = DVector::from_iterator(n, panel.iter().map(|r| r.daily_return));
        let inv = (x.transpose() * &x).try_inverse().unwrap();
        let b = &inv * x.transpose() * &y;
        let e = &y - &x * &b;
        let e2 = DMatrix::from_diagonal(&e.map(|v| v * v));
        let cov = &inv * x.transpose() * e2 * &x * &inv;
        (b[0], cov[(0, 0)].sqrt())
    }

    #[test]
    fn exact_fit_has_zero_se() {
        let mut rows = random_panel(1, 3, 30);
        for r in &mut rows {
            let alpha = match r.symbol.as_str() {
                "S0" => 0.1,
                "S1" => -0.2,
                _ => 0.05,
            };
            r.daily_return = 2.0 * f64::from(r.jump_dummy) + alpha;
        }
        let res = fe_regression(&rows, Regressor::Jump).unwrap();
        assert_relative_eq!(res.coefficients[0].estimate, 2.0, max_relative = 1e-12);
        assert!(res.coefficients[0].std_error < 1e-12);
        assert_eq!(res.coefficients[0].stars(), "***");
    }

    #[test]
    fn matches_brute_force_oracle() {
        for seed in 0..20 {
            let panel = random_panel(100 + seed, 2, 50);
            for reg in Regressor::ALL {
                let res = fe_regression(&panel, reg).unwrap();
                let (b, se) = brute_force(&panel, reg);
                assert!((res.coefficients[0].estimate - b).abs() < 1e-10);
                assert!((res.coefficients[0].std_error - se).abs() < 1e-10);
                let multi = fe_regression_multi(&panel, &[reg]).unwrap();
                assert!((multi.coefficients[0].estimate - b).abs() < 1e-10);
                assert!((multi.coefficients[0].std_error - se).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn adjusted_r2_and_df() {
        let panel = random_panel(7, 3, 40);
        let r = fe_regression(&panel, Regressor::Jump).unwrap();
        let df = (120 - 3 - 1) as f64;
        assert_relative_eq!(r.adj_r_squared, 1.0 - (1.0 - r.r_squared) * 119.0 / df, max_relative = 1e-12);
        let t = r.coefficients[0].t_stat;
        let p = 2.0 * (1.0 - StudentsT::new(0.0, 1.0, df).unwrap().cdf(t.abs()));
        assert_relative_eq!(r.coefficients[0].p_value, p, max_relative = 1e-9);
    }

    #[test]
    fn star_thresholds() {
        assert_eq!(stars(0.0009), "***");
        assert_eq!(stars(0.001), "**");
        assert_eq!(stars(0.0099), "**");
        assert_eq!(stars(0.01), "*");
        assert_eq!(stars(0.049), "*");
        assert_eq!(stars(0.05), "");
    }

    #[test]
    fn no_variation_and_shape_errors() {
        let mut panel = random_panel(2, 2, 10);
        for r in &mut panel {
            r.jump_dummy = 1;
        }
        assert!(matches!(fe_regression(&panel, Regressor::Jump), Err(Error::NoVariation)));
        let one_symbol: Vec<PanelRow> = random_panel(2, 1, 10);
        assert!(fe_regression(&one_symbol, Regressor::Jump).is_err());
    }

    #[test]
    fn table_layout() {
        let panel = random_panel(3, 4, 60);
        let results: Vec<RegressionResult> = Regressor::ALL.iter().map(|&r| fe_regression(&panel, r).unwrap()).collect();
        let cols: Vec<(&str, &RegressionResult)> = Regressor::ALL.iter().map(|r| r.column_title()).zip(&results).collect();
        let text = render_regressions(&cols);
        let lines: Vec<&str> = text.lines().collect();
        assert!(lines[1].contains("Jumps (all)") && lines[1].contains("Lagged jumps (all)"));
        assert!(lines[3].starts_with("jump_dummy"));
        assert!(lines[4].trim_start().starts_with('('));
        assert!(text.contains("Adj. R^2"));
        assert!(text.contains("Num. obs."));
        assert!(text.ends_with("***p<0.001; **p<0.01; *p<0.05\n"));
        assert!(text.contains("240"));
    }

    #[test]
    fn number_formatting() {
        assert_eq!(format_number(1159.734, 2), "1,159.73");
        assert_eq!(format_number(-0.0003, 4), "-0.0003");
        assert_eq!(format_number(-0.00001, 4), "0.0000");
        assert_eq!(format_number(4804.0, 0), "4,804");
    }

    #[test]
    fn jump_size_split() {
        let t0 = Utc.with_ymd_and_hms(2020, 1, 1, 0, 0, 0).unwrap();
        let events: Vec<JumpEvent> = [0.01, -0.02, -0.03, 0.04].iter().map(|&s| event(t0, s)).collect();
        let t = jump_size_table(&events);
        assert_eq!(t.counts, [4, 2, 2]);
        assert_eq!(t.positive.unwrap().max, 0.04);
        assert_eq!(t.negative.unwrap().min, -0.03);
        assert!(render_jump_sizes(&t).starts_with("Statistic"));
    }

    proptest! {
        #[test]
        fn summary_matches_sort_oracle(x in proptest::collection::vec(-1.0f64..1.0, 2..200)) {
            let s = summarize_returns(&x).unwrap();
            let mut v = x.clone();
            v.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let q = |p: f64| {
                let pos = p * (v.len() - 1) as f64;
                let i = pos as usize;
                if i + 1 < v.len() { v[i] * (1.0 - (pos - i as f64)) + v[i + 1] * (pos - i as f64) } else { v[i] }
            };
            prop_assert!((s.q1 - q(0.25)).abs() < 1e-12);
            prop_assert!((s.median - q(0.5)).abs() < 1e-12);
            prop_assert!((s.q3 - q(0.75)).abs() < 1e-12);
            prop_assert!(s.min <= s.q1 && s.q1 <= s.median && s.median <= s.q3 && s.q3 <= s.max);
            let n = x.len() as f64;
            let mean = x.iter().sum::<f64>() / n;
            prop_assert!((s.mean - mean).abs() < 1e-12);
            if let Some(k) = s.kurtosis {
                prop_assert!(k >= 1.0 - 1e-9);
            }
        }

        #[test]
        fn within_transform_absorbs_symbol_shifts(seed in 0u64..500, shifts in proptest::collection::vec(-1.0f64..1.0, 3)) {
            let panel = random_panel(seed, 3, 30);
            let shifted: Vec<PanelRow> = panel
                .iter()
                .map(|r| {
                    let idx: usize = r.symbol[1..].parse().unwrap();
                    PanelRow { daily_return: r.daily_return + shifts[idx], ..r.clone() }
                })
                .collect();
            let a = fe_regression(&panel, Regressor::Jump).unwrap();
            let b = fe_regression(&shifted, Regressor::Jump).unwrap();
            let (ca, cb) = (&a.coefficients[0], &b.coefficients[0]);
            prop_assert!((ca.estimate - cb.estimate).abs() < 1e-12);
            prop_assert!((ca.std_error - cb.std_error).abs() < 1e-12);
            prop_assert!((ca.t_stat - cb.t_stat).abs() < 1e-12 * ca.t_stat.abs().max(1.0));
        }

        #[test]
        fn row_order_does_not_matter(seed in 0u64..500, rot in 0usize..90) {
            let panel = random_panel(seed, 3, 30);
            let mut shuffled = panel.clone();
            shuffled.rotate_left(rot);
            shuffled.reverse();
            prop_assert_eq!(fe_regression(&panel, Regressor::NegJump).unwrap(), fe_regression(&shuffled, Regressor::NegJump).unwrap());
        }
    }
}
