//! End-to-end commands: simulate a corpus, ingest it, detect, analyze and
//! bundle a report. The command-line tool is a thin shell over these.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::AtomicBool;

use chrono::{DateTime, NaiveDate, Utc};
use serde::{Deserialize, Serialize};

use crate::analytics::{
    build_panel, count_extremes, extremes_csv, fe_regression, fe_regression_multi, jump_size_table,
    regressions_csv, render_extremes, render_jump_sizes, render_regressions, render_summary_table, seasonality,
    summarize_returns, summary_csv, RegressionResult, Regressor, SummaryStats, JUMP_THRESHOLDS, RETURN_THRESHOLDS,
};
use crate::config::{EventAnnotation, RunConfig};
use crate::error::{Error, Result};
use crate::pipeline::{
    read_catalog, read_manifest, run_range, DayVerdict, JumpEvent, RangeSelection, RangeSummary, RunOutcome,
    CATALOG_FILE, MANIFEST_FILE,
};
use crate::preprocess::{aggregate_cross_exchange, filter_returns};
use crate::simulate::{simulate_day, to_ticks, JumpSizeDist, JumpSpec, NoiseKind, SimConfig, TrueJump};
use crate::tickstore::{CsvSchema, IngestReport, TickStore};

pub const GROUND_TRUTH_FILE: &str = "ground_truth.csv";
pub const SIM_MANIFEST_FILE: &str = "simulation.json";

fn write_file(path: &Path, body: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, body).map_err(|e| Error::io(path, e))
}

/// Writes only when the content differs, so reruns leave files untouched.
fn write_if_changed(path: &Path, body: &[u8]) -> Result<bool> {
    if fs::read(path).is_ok_and(|old| old == body) {
        return Ok(false);
    }
    write_file(path, body)?;
    Ok(true)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateOptions {
    pub symbols: Vec<String>,
    pub exchanges: Vec<String>,
    pub start: NaiveDate,
    pub days: usize,
    /// Observations per day.
    pub ticks_per_day: usize,
    pub sigma: f64,
    pub q: f64,
    /// Poisson intensity of jumps per day.
    pub jumps_per_day: f64,
    /// Fixed jump size; the heavy-tailed mixture when absent.
    pub jump_size: Option<f64>,
    pub two_point_noise: bool,
    pub seed: u64,
}

impl Default for SimulateOptions {
    fn default() -> Self {
        Self {
            symbols: vec!["BTC".into()],
            exchanges: vec!["sim".into()],
            start: NaiveDate::from_ymd_opt(2020, 1, 1).expect("valid date"),
            days: 10,
            ticks_per_day: 17_280,
            sigma: 0.04,
            q: 0.0005,
            jumps_per_day: 0.5,
            jump_size: None,
            two_point_noise: false,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthJump {
    pub symbol: String,
    pub date: NaiveDate,
    pub time: DateTime<Utc>,
    pub size: f64,
}

fn derive_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Writes one tick CSV per day (`ticks_<date>.csv`, all symbols), the true
/// jumps, and the options used.
pub fn simulate_corpus(opts: &SimulateOptions, out_dir: &Path) -> Result<Vec<GroundTruthJump>> {
    if opts.symbols.is_empty() || opts.exchanges.is_empty() {
        return Err(Error::Config("need at least one symbol and one exchange".into()));
    }
    if !(opts.jumps_per_day >= 0.0) {
        return Err(Error::Config(format!("jumps per day must be >= 0, got {}", opts.jumps_per_day)));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut truth = Vec::new();
    let mut start_prices: Vec<f64> = opts
        .symbols
        .iter()
        .enumerate()
        .map(|(i, _)| (1_000.0 * (i + 1) as f64).ln())
        .collect();
    for d in 0..opts.days {
        let date = opts.start + chrono::Days::new(d as u64);
        let mut body = String::from("time,exchange,symbol,price\n");
        for (s, symbol) in opts.symbols.iter().enumerate() {
            let cfg = SimConfig {
                sigma: opts.sigma,
                q: opts.q,
                jumps: if opts.jumps_per_day > 0.0 {
                    JumpSpec::Poisson {
                        intensity: opts.jumps_per_day,
                        sizes: opts
                            .jump_size
                            .map_or(JumpSizeDist::CryptoMixture, |size| JumpSizeDist::Fixed { size }),
                    }
                } else {
                    JumpSpec::None
                },
                n: opts.ticks_per_day,
                seed: derive_seed(opts.seed, s as u64, d as u64),
                noise: if opts.two_point_noise {
                    NoiseKind::TwoPoint
                } else {
                    NoiseKind::Gaussian
                },
                start_log_price: start_prices[s],
            };
            let day = simulate_day(&cfg)?;
            start_prices[s] = *day.latent.last().expect("n >= 2");
            let noise_seed = derive_seed(opts.seed ^ 0x5EED, s as u64, d as u64);
            for t in to_ticks(&day, symbol, date, &opts.exchanges, &cfg, noise_seed) {
                writeln!(body, "{},{},{},{}", t.timestamp_ns, t.exchange, t.symbol, t.price).expect("string write");
            }
            truth.extend(day.true_jumps.iter().filter(|j| j.index < opts.ticks_per_day).map(
                |&TrueJump { time, size, .. }| GroundTruthJump {
                    symbol: symbol.clone(),
                    date,
                    time: DateTime::from_timestamp_nanos(
                        crate::tickstore::day_start_ns(date) + (time * crate::tickstore::NANOS_PER_DAY as f64) as i64,
                    ),
                    size,
                },
            ));
        }
        write_file(&out_dir.join(format!("ticks_{date}.csv")), body)?;
    }
    let mut gt = String::from("symbol,date,time,size\n");
    for j in &truth {
        writeln!(gt, "{},{},{},{}", j.symbol, j.date, j.time.to_rfc3339(), j.size).expect("string write");
    }
    write_file(&out_dir.join(GROUND_TRUTH_FILE), gt)?;
    write_file(&out_dir.join(SIM_MANIFEST_FILE), serde_json::to_vec_pretty(opts)?)?;
    Ok(truth)
}

/// Tick CSVs of a directory (or a single file), in name order.
pub fn csv_inputs(path: &Path) -> Result<Vec<PathBuf>> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut files: Vec<PathBuf> = fs::read_dir(path)
        .map_err(|e| Error::io(path, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension().is_some_and(|e| e == "csv")
                && p.file_name().is_some_and(|n| n != GROUND_TRUTH_FILE)
        })
        .collect();
    files.sort();
    Ok(files)
}

pub fn ingest(store_root: &Path, inputs: &[PathBuf], schema: &CsvSchema) -> Result<Vec<(PathBuf, IngestReport)>> {
    let store = TickStore::open(store_root)?;
    inputs
        .iter()
        .map(|p| store.ingest_csv(p, schema).map(|r| (p.clone(), r)))
        .collect()
}

pub fn detect(
    store_root: &Path,
    out_dir: &Path,
    selection: &RangeSelection,
    config: &RunConfig,
    cancel: &AtomicBool,
) -> Result<RunOutcome> {
    let store = TickStore::open(store_root)?;
    let outcome = run_range(&store, selection, config, out_dir, cancel)?;
    if outcome.manifest.days_planned == 0 {
        log::warn!("no symbol-days found in {}; the catalog is empty", store_root.display());
    }
    Ok(outcome)
}

#[derive(Debug, Clone, Default)]
pub struct AnalyzeOptions {
    /// Also summarise tick-level returns from this store.
    pub store: Option<PathBuf>,
    /// Add a regression with all four dummies together.
    pub multivariate: bool,
}

/// Files written by [`analyze`], relative to its output directory.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AnalysisOutputs {
    pub files: Vec<PathBuf>,
    pub regressions: Vec<(Regressor, RegressionResult)>,
}

fn catalog_hash(verdicts: &[DayVerdict], catalog_dir: &Path) -> String {
    read_manifest(&catalog_dir.join(MANIFEST_FILE))
        .map(|m| m.config_hash)
        .ok()
        .or_else(|| verdicts.first().map(|v| v.config_hash.clone()))
        .unwrap_or_default()
}

fn stamp(hash: &str, body: &str) -> String {
    format!("# config_hash: {hash}\n{body}")
}

/// Tables, histograms and regressions from a catalog directory.
pub fn analyze(catalog_dir: &Path, out_dir: &Path, opts: &AnalyzeOptions) -> Result<AnalysisOutputs> {
    let verdicts = read_catalog(&catalog_dir.join(CATALOG_FILE))?;
    let hash = catalog_hash(&verdicts, catalog_dir);
    let mut outputs = AnalysisOutputs::default();
    let mut emit = |name: &str, body: String| -> Result<()> {
        write_if_changed(&out_dir.join(name), stamp(&hash, &body).as_bytes())?;
        outputs.files.push(PathBuf::from(name));
        Ok(())
    };

    let summary = RangeSummary::from_verdicts(&verdicts);
    emit("jumps_per_asset.txt", summary.render())?;
    emit("jumps_per_asset.csv", summary.to_csv())?;

    let panel = build_panel(&verdicts);
    let mut panel_csv = String::from("symbol,date,daily_return,jump_dummy,lagged_jump_dummy,pos_jump_dummy,neg_jump_dummy\n");
    for r in &panel.rows {
        writeln!(
            panel_csv,
            "{},{},{},{},{},{},{}",
            r.symbol, r.utc_date, r.daily_return, r.jump_dummy, r.lagged_jump_dummy, r.pos_jump_dummy, r.neg_jump_dummy
        )
        .expect("string write");
    }
    emit("panel.csv", panel_csv)?;

    let mut daily: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for r in &panel.rows {
        daily.entry(&r.symbol).or_default().push(r.daily_return);
    }
    let daily_rows: Vec<(String, SummaryStats)> = daily
        .iter()
        .filter_map(|(s, x)| summarize_returns(x).ok().map(|st| (s.to_string(), st)))
        .collect();
    emit("daily_returns.txt", render_summary_table(&daily_rows))?;
    emit("daily_returns.csv", summary_csv(&daily_rows))?;
    let all_daily: Vec<f64> = panel.rows.iter().map(|r| r.daily_return).collect();
    let ext = count_extremes(&all_daily, &RETURN_THRESHOLDS);
    emit("daily_extremes.txt", render_extremes(&ext))?;
    emit("daily_extremes.csv", extremes_csv(&ext))?;

    if let Some(store_root) = &opts.store {
        let store = TickStore::open(store_root)?;
        let config = read_manifest(&catalog_dir.join(MANIFEST_FILE))
            .map(|m| m.config)
            .unwrap_or_default();
        let mut tick_returns: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for v in &verdicts {
            if let Some(slice) = store.slice(&v.symbol, v.utc_date)? {
                if let Some(series) = aggregate_cross_exchange(&slice) {
                    let clean = filter_returns(&series, &config.filter_params()).series;
                    tick_returns.entry(v.symbol.clone()).or_default().extend(clean.log_returns());
                }
            }
        }
        let rows: Vec<(String, SummaryStats)> = tick_returns
            .iter()
            .filter_map(|(s, x)| summarize_returns(x).ok().map(|st| (s.clone(), st)))
            .collect();
        emit("tick_returns.txt", render_summary_table(&rows))?;
        emit("tick_returns.csv", summary_csv(&rows))?;
        let all: Vec<f64> = tick_returns.values().flatten().copied().collect();
        let ext = count_extremes(&all, &RETURN_THRESHOLDS);
        emit("tick_extremes.txt", render_extremes(&ext))?;
        emit("tick_extremes.csv", extremes_csv(&ext))?;
    }

    let events: Vec<JumpEvent> = verdicts.iter().flat_map(|v| v.accepted_jumps.iter().cloned()).collect();
    let sizes = jump_size_table(&events);
    emit("jump_sizes.txt", render_jump_sizes(&sizes))?;
    let jump_sizes: Vec<f64> = events.iter().map(|e| e.size).collect();
    let jext = count_extremes(&jump_sizes, &JUMP_THRESHOLDS);
    emit("jump_extremes.txt", render_extremes(&jext))?;
    emit("jump_extremes.csv", extremes_csv(&jext))?;
    let season = seasonality(&events);
    emit("jumps_by_weekday.csv", season.weekday_csv())?;
    emit("jumps_by_hour.csv", season.hour_csv())?;

    for reg in Regressor::ALL {
        match fe_regression(&panel.rows, reg) {
            Ok(r) => outputs.regressions.push((reg, r)),
            Err(e) => log::warn!("regression on {} skipped: {e}", reg.name()),
        }
    }
    let columns: Vec<(&str, &RegressionResult)> =
        outputs.regressions.iter().map(|(reg, r)| (reg.column_title(), r)).collect();
    let (text, csv) = if columns.is_empty() {
        ("no estimable regression\n".to_string(), regressions_csv(&[]))
    } else {
        (render_regressions(&columns), regressions_csv(&columns))
    };
    emit("regression.txt", text)?;
    emit("regression.csv", csv)?;
    if opts.multivariate {
        let body = match fe_regression_multi(&panel.rows, &[Regressor::PosJump, Regressor::NegJump, Regressor::LaggedJump]) {
            Ok(r) => render_regressions(&[("Joint", &r)]),
            Err(e) => format!("not estimable: {e}\n"),
        };
        emit("regression_multivariate.txt", body)?;
    }
    Ok(outputs)
}

pub fn read_events_csv(path: &Path) -> Result<Vec<EventAnnotation>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let (Some(t), Some(label)) = (row.get(0), row.get(1)) else {
            return Err(Error::InvalidInput(format!("{}: expected time,label rows", path.display())));
        };
        let time = t
            .trim()
            .parse::<DateTime<Utc>>()
            .map_err(|e| Error::InvalidInput(format!("{}: bad event time {t:?}: {e}", path.display())))?;
        out.push(EventAnnotation {
            time,
            label: label.trim().to_string(),
        });
    }
    Ok(out)
}

fn events_csv(events: &[EventAnnotation]) -> String {
    let mut out = String::from("time,label\n");
    for e in events {
        writeln!(out, "{},{}", e.time.to_rfc3339(), e.label).expect("string write");
    }
    out
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Bar chart of accepted jumps per day with events as red vertical lines.
pub fn timeline_svg(verdicts: &[DayVerdict], events: &[EventAnnotation], config_hash: &str) -> String {
    let mut per_day: BTreeMap<NaiveDate, usize> = BTreeMap::new();
    for v in verdicts {
        *per_day.entry(v.utc_date).or_default() += v.accepted_jumps.len();
    }
    let (w, h, pad) = (960.0, 320.0, 40.0);
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n\
         <!-- config_hash: {config_hash} -->\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    );
    let (Some(&first), Some(&last)) = (per_day.keys().next(), per_day.keys().last()) else {
        svg.push_str("<text x=\"20\" y=\"40\">no days in catalog</text>\n</svg>\n");
        return svg;
    };
    let span = ((last - first).num_days() + 1) as f64;
    let max = per_day.values().copied().max().unwrap_or(0).max(1) as f64;
    let plot_w = w - 2.0 * pad;
    let plot_h = h - 2.0 * pad;
    let bar_w = (plot_w / span).max(1.0);
    let x_of = |d: NaiveDate| pad + (d - first).num_days() as f64 / span * plot_w;
    let _ = writeln!(
        svg,
        "<line x1=\"{pad}\" y1=\"{0}\" x2=\"{1}\" y2=\"{0}\" stroke=\"black\"/>",
        h - pad,
        w - pad
    );
    for (d, c) in &per_day {
        if *c == 0 {
            continue;
        }
        let bh = *c as f64 / max * plot_h;
        let _ = writeln!(
            svg,
            "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"steelblue\"><title>{d}: {c}</title></rect>",
            x_of(*d),
            h - pad - bh,
            bar_w,
            bh
        );
    }
    for e in events {
        let d = e.time.date_naive();
        if d < first || d > last {
            continue;
        }
        let x = x_of(d) + bar_w / 2.0;
        let _ = writeln!(
            svg,
            "<line x1=\"{x:.2}\" y1=\"{pad}\" x2=\"{x:.2}\" y2=\"{}\" stroke=\"red\" stroke-width=\"1.5\"/>\n\
             <text x=\"{:.2}\" y=\"{}\" font-size=\"10\" fill=\"red\">{}</text>",
            h - pad,
            x + 3.0,
            pad - 5.0,
            xml_escape(&e.label)
        );
    }
    let _ = writeln!(
        svg,
        "<text x=\"{pad}\" y=\"{}\" font-size=\"11\">{first}</text>\n<text x=\"{}\" y=\"{}\" font-size=\"11\" text-anchor=\"end\">{last}</text>\n<text x=\"{pad}\" y=\"15\" font-size=\"12\">accepted jumps per day (max {max})</text>",
        h - pad + 15.0,
        w - pad,
        h - pad + 15.0
    );
    svg.push_str("</svg>\n");
    svg
}

#[derive(Debug, Clone, Default)]
pub struct ReportOptions {
    pub analyze: AnalyzeOptions,
    /// Overrides the events recorded in the run configuration.
    pub events_file: Option<PathBuf>,
}

/// Bundles catalog, manifest, tables, histograms, events and the timeline
/// into `out_dir`. Unchanged inputs leave every file untouched.
pub fn report(catalog_dir: &Path, out_dir: &Path, opts: &ReportOptions) -> Result<Vec<PathBuf>> {
    let manifest_path = catalog_dir.join(MANIFEST_FILE);
    let manifest = read_manifest(&manifest_path)?;
    let catalog_path = catalog_dir.join(CATALOG_FILE);
    let catalog_bytes = fs::read(&catalog_path).map_err(|e| Error::io(&catalog_path, e))?;
    let verdicts = read_catalog(&catalog_path)?;
    let events = match &opts.events_file {
        Some(p) => read_events_csv(p)?,
        None => manifest.config.events.clone(),
    };

    let mut files = Vec::new();
    let mut put = |name: &str, body: &[u8]| -> Result<()> {
        write_if_changed(&out_dir.join(name), body)?;
        files.push(PathBuf::from(name));
        Ok(())
    };
    put(CATALOG_FILE, &catalog_bytes)?;
    put(MANIFEST_FILE, &serde_json::to_vec_pretty(&manifest)?)?;
    put("config_hash.txt", format!("{}\n", manifest.config_hash).as_bytes())?;
    put("config.toml", stamp(&manifest.config_hash, &manifest.config.to_toml_string()).as_bytes())?;
    put("events.csv", stamp(&manifest.config_hash, &events_csv(&events)).as_bytes())?;
    put("timeline.svg", timeline_svg(&verdicts, &events, &manifest.config_hash).as_bytes())?;
    let tables = analyze(catalog_dir, &out_dir.join("tables"), &opts.analyze)?;
    files.extend(tables.files.into_iter().map(|f| PathBuf::from("tables").join(f)));
    Ok(files)
}
