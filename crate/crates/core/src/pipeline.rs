//! Per symbol-day detection and the jump catalog.
//!
//! The intraday test runs on the cleaned tick series; the day-level test
//! runs on the equispaced series at the finest frequency with enough
//! coverage. Intraday jumps are accepted only on days the day-level test
//! also rejects continuity.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};

use chrono::{DateTime, NaiveDate, Utc};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ajl::AjlTest;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::lm::{dedup_consecutive, lm_scan, LmParams};
use crate::preprocess::{aggregate_cross_exchange, filter_returns, make_equispaced, select_frequency, AggregatedSeries};
use crate::tickstore::TickStore;

pub const CATALOG_SCHEMA_VERSION: u32 = 1;
pub const CATALOG_FILE: &str = "catalog.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Positive,
    Negative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JumpEvent {
    pub symbol: String,
    /// Start of the flagged block.
    pub utc_timestamp: DateTime<Utc>,
    pub timestamp_ns: i64,
    /// Pre-averaged log return of the block.
    pub size: f64,
    pub direction: Direction,
    pub xi: f64,
    pub day_ajl_reject: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipReason {
    NoData,
    Frequency,
    Lm,
    Ajl,
}

impl SkipReason {
    pub fn as_str(self) -> &'static str {
        match self {
            SkipReason::NoData => "no_data",
            SkipReason::Frequency => "frequency",
            SkipReason::Lm => "lm",
            SkipReason::Ajl => "ajl",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmJump {
    pub time: DateTime<Utc>,
    pub block_index: usize,
    pub size: f64,
    pub xi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmDetail {
    pub k: usize,
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "C")]
    pub c: f64,
    pub n_blocks: usize,
    pub q_hat_sq: f64,
    pub sigma_hat_sq: f64,
    pub v_n: f64,
    pub threshold: f64,
    /// Deduplicated flags.
    pub jumps: Vec<LmJump>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AjlDetail {
    pub frequency_s: u32,
    pub p: u32,
    pub k_n: usize,
    pub weights: [String; 2],
    pub s_rj: f64,
    pub gamma_dprime: f64,
    pub sigma_rj: f64,
    pub critical_value: f64,
    pub reject_null: bool,
    pub mc_seed: u64,
    pub noise_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayVerdict {
    pub schema_version: u32,
    pub config_hash: String,
    pub symbol: String,
    pub utc_date: NaiveDate,
    pub tested: bool,
    pub reason: Option<SkipReason>,
    /// Error text behind a skip, if any.
    pub message: Option<String>,
    pub n_ticks: usize,
    pub filter_removals: usize,
    pub frequency_s: Option<u32>,
    /// Last cleaned log price of the day.
    pub close_log_price: Option<f64>,
    pub lm_jump_count_raw: usize,
    pub lm_jump_count_dedup: usize,
    pub ajl_reject: bool,
    pub accepted_jumps: Vec<JumpEvent>,
    pub lm: Option<LmDetail>,
    pub ajl: Option<AjlDetail>,
}

impl DayVerdict {
    fn untested(config_hash: &str, symbol: &str, date: NaiveDate, reason: SkipReason) -> Self {
        Self {
            schema_version: CATALOG_SCHEMA_VERSION,
            config_hash: config_hash.to_string(),
            symbol: symbol.to_string(),
            utc_date: date,
            tested: false,
            reason: Some(reason),
            message: None,
            n_ticks: 0,
            filter_removals: 0,
            frequency_s: None,
            close_log_price: None,
            lm_jump_count_raw: 0,
            lm_jump_count_dedup: 0,
            ajl_reject: false,
            accepted_jumps: Vec::new(),
            lm: None,
            ajl: None,
        }
    }

    fn skip(mut self, reason: SkipReason, message: Option<String>) -> Self {
        self.tested = false;
        self.reason = Some(reason);
        self.message = message;
        self.lm_jump_count_raw = 0;
        self.lm_jump_count_dedup = 0;
        self.ajl_reject = false;
        self.accepted_jumps.clear();
        self
    }
}

fn to_utc(ns: i64) -> DateTime<Utc> {
    DateTime::from_timestamp_nanos(ns)
}

/// Configured detector shared by all days of a run.
#[derive(Debug)]
pub struct Detector {
    config: RunConfig,
    config_hash: String,
    lm: LmParams,
    ajl: AjlTest,
}

impl Detector {
    /// `days_in_run` sizes the Bonferroni family when it spans days.
    pub fn new(config: RunConfig, days_in_run: usize) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            lm: config.lm_params(days_in_run),
            ajl: AjlTest::new(config.ajl_params(days_in_run)?)?,
            config_hash: config.hash(),
            config,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn config_hash(&self) -> &str {
        &self.config_hash
    }

    /// Full chain on an aggregated tick series already in memory.
    pub fn analyze_series(&self, series: &AggregatedSeries) -> DayVerdict {
        let mut v = DayVerdict::untested(&self.config_hash, &series.symbol, series.utc_date, SkipReason::NoData);
        if series.is_empty() {
            return v;
        }
        v.n_ticks = series.len();
        let filtered = filter_returns(series, &self.config.filter_params());
        v.filter_removals = filtered.removals.len();
        let clean = filtered.series;
        v.close_log_price = clean.log_prices.last().copied();

        let decision = select_frequency(&clean, self.config.coverage);
        let Some(freq) = decision.selected else {
            return v.skip(SkipReason::Frequency, None);
        };
        v.frequency_s = Some(freq.seconds());

        let lm = match lm_scan(&clean.log_prices, &clean.timestamps_ns, &self.lm) {
            Ok(r) => r,
            Err(e) => return v.skip(SkipReason::Lm, Some(e.to_string())),
        };
        let dedup = dedup_consecutive(&lm.moments, self.config.dedup_window);
        v.lm_jump_count_raw = lm.flagged().count();
        v.lm_jump_count_dedup = dedup.len();
        v.lm = Some(LmDetail {
            k: lm.k,
            m: lm.m,
            c: lm.c,
            n_blocks: lm.n_blocks,
            q_hat_sq: lm.noise.q_hat_sq,
            sigma_hat_sq: lm.noise.sigma_hat_sq,
            v_n: lm.noise.v_n,
            threshold: lm.threshold,
            jumps: dedup
                .iter()
                .map(|m| LmJump {
                    time: to_utc(m.block_start_ns),
                    block_index: m.block_index,
                    size: m.pbar,
                    xi: m.xi,
                })
                .collect(),
        });

        let eq = make_equispaced(&clean, freq);
        let ajl = match self.ajl.test(&eq.log_prices) {
            Ok(r) => r,
            Err(e) => return v.skip(SkipReason::Ajl, Some(e.to_string())),
        };
        let params = self.ajl.params();
        v.ajl = Some(AjlDetail {
            frequency_s: freq.seconds(),
            p: params.p,
            k_n: params.k_n,
            weights: [params.g.name().to_string(), params.h.name().to_string()],
            s_rj: ajl.s_rj,
            gamma_dprime: ajl.gamma_dprime,
            sigma_rj: ajl.sigma_rj,
            critical_value: ajl.critical_value,
            reject_null: ajl.reject_null,
            mc_seed: ajl.mc_seed,
            noise_ratio: ajl.noise_ratio,
        });

        v.tested = true;
        v.reason = None;
        v.ajl_reject = ajl.reject_null;
        v.accepted_jumps = combine(&series.symbol, &dedup, ajl.reject_null);
        v
    }

    /// Loads one symbol-day from the store and analyses it.
    pub fn run_day(&self, store: &TickStore, symbol: &str, date: NaiveDate) -> Result<DayVerdict> {
        let slice = match store.slice(symbol, date)? {
            Some(s) => s,
            None => return Ok(DayVerdict::untested(&self.config_hash, symbol, date, SkipReason::NoData)),
        };
        Ok(match aggregate_cross_exchange(&slice) {
            Some(series) => self.analyze_series(&series),
            None => DayVerdict::untested(&self.config_hash, symbol, date, SkipReason::NoData),
        })
    }
}

/// Intraday flags survive only on days the day-level test rejects.
fn combine(symbol: &str, flags: &[crate::lm::LmMomentResult], ajl_reject: bool) -> Vec<JumpEvent> {
    if !ajl_reject {
        return Vec::new();
    }
    flags
        .iter()
        .filter(|m| m.pbar != 0.0)
        .map(|m| JumpEvent {
            symbol: symbol.to_string(),
            utc_timestamp: to_utc(m.block_start_ns),
            timestamp_ns: m.block_start_ns,
            size: m.pbar,
            direction: if m.pbar > 0.0 {
                Direction::Positive
            } else {
                Direction::Negative
            },
            xi: m.xi,
            day_ajl_reject: true,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymbolSummary {
    pub symbol: String,
    pub n_jumps: usize,
    pub n_test_days: usize,
    pub n_jump_days: usize,
    /// Jumps per hundred test days.
    pub pct_jumps: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RangeSummary {
    pub rows: Vec<SymbolSummary>,
}

impl RangeSummary {
    /// Rows ordered by jump count, then symbol.
    pub fn from_verdicts(verdicts: &[DayVerdict]) -> Self {
        let mut by_symbol: std::collections::BTreeMap<&str, SymbolSummary> = Default::default();
        for v in verdicts {
            let row = by_symbol.entry(&v.symbol).or_insert_with(|| SymbolSummary {
                symbol: v.symbol.clone(),
                n_jumps: 0,
                n_test_days: 0,
                n_jump_days: 0,
                pct_jumps: 0.0,
            });
            if v.tested {
                row.n_test_days += 1;
                row.n_jumps += v.accepted_jumps.len();
                row.n_jump_days += usize::from(!v.accepted_jumps.is_empty());
            }
        }
        let mut rows: Vec<SymbolSummary> = by_symbol
            .into_values()
            .map(|mut r| {
                r.pct_jumps = if r.n_test_days > 0 {
                    100.0 * r.n_jumps as f64 / r.n_test_days as f64
                } else {
                    0.0
                };
                r
            })
            .collect();
        rows.sort_by(|a, b| a.n_jumps.cmp(&b.n_jumps).then_with(|| a.symbol.cmp(&b.symbol)));
        Self { rows }
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Plain-text table: Symbol, N jumps, N test days, % jumps.
    pub fn render(&self) -> String {
        let mut out = format!("{:<8}{:>9}{:>14}{:>10}\n", "Symbol", "N jumps", "N test days", "% jumps");
        for r in &self.rows {
            out.push_str(&format!(
                "{:<8}{:>9}{:>14}{:>10.2}\n",
                r.symbol, r.n_jumps, r.n_test_days, r.pct_jumps
            ));
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("symbol,n_jumps,n_test_days,n_jump_days,pct_jumps\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{:.2}\n",
                r.symbol, r.n_jumps, r.n_test_days, r.n_jump_days, r.pct_jumps
            ));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub config_hash: String,
    pub config: RunConfig,
    pub days_planned: usize,
    pub days_written: usize,
    pub days_tested: usize,
    pub complete: bool,
    pub summary: RangeSummary,
}

/// Which symbol-days of a store to process.
#[derive(Debug, Clone, Default)]
pub struct RangeSelection {
    /// All symbols when empty.
    pub symbols: Vec<String>,
    pub from: Option<NaiveDate>,
    pub to: Option<NaiveDate>,
}

impl RangeSelection {
    fn plan(&self, store: &TickStore) -> Result<Vec<(String, NaiveDate)>> {
        let symbols = if self.symbols.is_empty() {
            store.symbols()?
        } else {
            let mut s = self.symbols.clone();
            s.sort();
            s.dedup();
            s
        };
        let mut work = Vec::new();
        for sym in symbols {
            for d in store.dates(&sym)? {
                if self.from.is_some_and(|f| d < f) || self.to.is_some_and(|t| d > t) {
                    continue;
                }
                work.push((sym.clone(), d));
            }
        }
        Ok(work)
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub catalog_path: PathBuf,
    pub manifest: RunManifest,
}

fn write_json_atomic<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let tmp = path.with_extension("json.tmp");
    let body = serde_json::to_vec_pretty(value)?;
    std::fs::write(&tmp, body).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Detects jumps over a range of the store and writes the catalog and its
/// manifest into `out_dir`.
///
/// Days are processed in parallel chunks and written in (symbol, date)
/// order, so the catalog does not depend on scheduling. Setting `cancel`
/// stops after the current chunk; the catalog then holds every finished
/// day and the manifest records `complete = false`.
pub fn run_range(
    store: &TickStore,
    selection: &RangeSelection,
    config: &RunConfig,
    out_dir: &Path,
    cancel: &AtomicBool,
) -> Result<RunOutcome> {
    let work = selection.plan(store)?;
    let detector = Detector::new(config.clone(), work.len())?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let catalog_path = out_dir.join(CATALOG_FILE);
    let file = File::create(&catalog_path).map_err(|e| Error::io(&catalog_path, e))?;
    let mut writer = BufWriter::new(file);

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let chunk = (pool.current_num_threads() * 4).max(8);

    let mut verdicts: Vec<DayVerdict> = Vec::with_capacity(work.len());
    for batch in work.chunks(chunk) {
        if cancel.load(Ordering::SeqCst) {
            log::warn!("cancelled after {} of {} days", verdicts.len(), work.len());
            break;
        }
        let results: Vec<Result<DayVerdict>> = pool.install(|| {
            batch
                .par_iter()
                .map(|(sym, date)| detector.run_day(store, sym, *date))
                .collect()
        });
        for r in results {
            let v = r?;
            if let Some(reason) = v.reason {
                log::info!("{} {}: not tested ({})", v.symbol, v.utc_date, reason.as_str());
            }
            serde_json::to_writer(&mut writer, &v)?;
            writer.write_all(b"\n").map_err(|e| Error::io(&catalog_path, e))?;
            verdicts.push(v);
        }
        writer.flush().map_err(|e| Error::io(&catalog_path, e))?;
    }

    let manifest = RunManifest {
        schema_version: CATALOG_SCHEMA_VERSION,
        config_hash: detector.config_hash().to_string(),
        config: config.clone(),
        days_planned: work.len(),
        days_written: verdicts.len(),
        days_tested: verdicts.iter().filter(|v| v.tested).count(),
        complete: verdicts.len() == work.len(),
        summary: RangeSummary::from_verdicts(&verdicts),
    };
    write_json_atomic(&out_dir.join(MANIFEST_FILE), &manifest)?;
    Ok(RunOutcome { catalog_path, manifest })
}

pub fn read_catalog(path: &Path) -> Result<Vec<DayVerdict>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let v: DayVerdict = serde_json::from_str(&line)
            .map_err(|e| Error::InvalidInput(format!("{}:{}: {e}", path.display(), i + 1)))?;
        if v.schema_version != CATALOG_SCHEMA_VERSION {
            return Err(Error::InvalidInput(format!(
                "{}:{}: unsupported schema version {}",
                path.display(),
                i + 1,
                v.schema_version
            )));
        }
        out.push(v);
    }
    Ok(out)
}

pub fn read_manifest(path: &Path) -> Result<RunManifest> {
    let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&s)?)
}
