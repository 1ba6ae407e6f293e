//! Raw tick ingestion and per-symbol-day storage.
//!
//! Accepted ticks are stored as one CSV file per symbol-day:
//!
//! ```text
//! <root>/<SYMBOL>/<YYYY-MM-DD>.csv
//! timestamp_ns,exchange,price
//! 1583976900000000000,binance,7935.5
//! ```
//!
//! Rows inside a partition are sorted stably by `(timestamp_ns, exchange)`.
//! Prices are written with the shortest representation that round-trips to
//! the same `f64`. `<root>/ingested.json` remembers the SHA-256 of every
//! source file already merged so that re-ingesting a file is a no-op.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Datelike, NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const NANOS_PER_SECOND: i64 = 1_000_000_000;
pub const NANOS_PER_DAY: i64 = 86_400 * NANOS_PER_SECOND;

const PARTITION_HEADER: &str = "timestamp_ns,exchange,price";
const MANIFEST_FILE: &str = "ingested.json";

/// One observed trade.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tick {
    /// Nanoseconds since the Unix epoch, UTC.
    pub timestamp_ns: i64,
    pub exchange: String,
    pub symbol: String,
    pub price: f64,
}

/// UTC calendar date containing the instant.
pub fn utc_date_of(timestamp_ns: i64) -> NaiveDate {
    let days = timestamp_ns.div_euclid(NANOS_PER_DAY);
    NaiveDate::from_num_days_from_ce_opt(EPOCH_DAYS_FROM_CE + days as i32)
        .expect("timestamp within chrono's date range")
}

/// Epoch nanoseconds of 00:00:00 UTC on `date`.
pub fn day_start_ns(date: NaiveDate) -> i64 {
    (date.num_days_from_ce() - EPOCH_DAYS_FROM_CE) as i64 * NANOS_PER_DAY
}

// 1970-01-01 counted from 0001-01-01 (day 1).
const EPOCH_DAYS_FROM_CE: i32 = 719_163;


/// All ticks of one symbol on one UTC day, across exchanges, time-sorted.
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolDaySlice {
    pub symbol: String,
    pub utc_date: NaiveDate,
    pub ticks: Vec<Tick>,
}

impl SymbolDaySlice {
    /// Validates membership in the day and sorts by `(timestamp, exchange)`.
    pub fn new(symbol: impl Into<String>, utc_date: NaiveDate, mut ticks: Vec<Tick>) -> Result<Self> {
        let symbol = symbol.into();
        let start = day_start_ns(utc_date);
        for t in &ticks {
            if t.symbol != symbol {
                return Err(Error::InvalidInput(format!(
                    "tick symbol {} does not match slice symbol {symbol}",
                    t.symbol
                )));
            }
            if t.timestamp_ns < start || t.timestamp_ns >= start + NANOS_PER_DAY {
                return Err(Error::InvalidInput(format!(
                    "tick at {} ns lies outside {utc_date}",
                    t.timestamp_ns
                )));
            }
            if !(t.price > 0.0) || !t.price.is_finite() {
                return Err(Error::InvalidInput(format!("non-positive price {}", t.price)));
            }
        }
        ticks.sort_by(|a, b| {
            a.timestamp_ns
                .cmp(&b.timestamp_ns)
                .then_with(|| a.exchange.cmp(&b.exchange))
        });
        Ok(Self {
            symbol,
            utc_date,
            ticks,
        })
    }

    pub fn len(&self) -> usize {
        self.ticks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ticks.is_empty()
    }
}

/// Which input columns hold the four tick fields.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub time: String,
    pub exchange: String,
    pub symbol: String,
    pub price: String,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            time: "time".into(),
            exchange: "exchange".into(),
            symbol: "symbol".into(),
            price: "price".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimestampFormat {
    Iso8601,
    EpochNanos,
}

/// Parses an ISO-8601 UTC instant or integer epoch nanoseconds.
///
/// Fractional seconds beyond nanosecond precision are truncated.
pub fn parse_timestamp(raw: &str) -> std::result::Result<(i64, TimestampFormat), String> {
    let s = raw.trim();
    if s.is_empty() {
        return Err("empty timestamp".into());
    }
    let digits = s.strip_prefix('-').unwrap_or(s);
    if !digits.is_empty() && digits.bytes().all(|b| b.is_ascii_digit()) {
        return s
            .parse::<i64>()
            .map(|ns| (ns, TimestampFormat::EpochNanos))
            .map_err(|e| format!("epoch nanoseconds out of range: {e}"));
    }

    let s = truncate_fraction(s);
    let parsed = DateTime::parse_from_rfc3339(&s)
        .map(|dt| dt.to_utc())
        .or_else(|_| {
            ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f"]
                .iter()
                .find_map(|fmt| NaiveDateTime::parse_from_str(&s, fmt).ok())
                .map(|naive| naive.and_utc())
                .ok_or(())
        })
        .map_err(|_| format!("unparseable timestamp {raw:?}"))?;
    parsed
        .timestamp_nanos_opt()
        .map(|ns| (ns, TimestampFormat::Iso8601))
        .ok_or_else(|| format!("timestamp {raw:?} outside nanosecond range"))
}

fn truncate_fraction(s: &str) -> String {
    let Some(dot) = s.find('.') else {
        return s.to_string();
    };
    let frac_len = s[dot + 1..].bytes().take_while(u8::is_ascii_digit).count();
    if frac_len <= 9 {
        return s.to_string();
    }
    format!("{}{}", &s[..dot + 10], &s[dot + 1 + frac_len..])
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RejectedRow {
    /// 1-based line number in the source file (header is line 1).
    pub line: u64,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IngestReport {
    pub accepted: usize,
    pub rejected: usize,
    pub rejects: Vec<RejectedRow>,
    pub iso_timestamps: usize,
    pub epoch_timestamps: usize,
    /// The same file content had been merged before; nothing was written.
    pub already_ingested: bool,
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct Manifest {
    /// SHA-256 of source content -> (accepted, rejected).
    files: BTreeMap<String, (usize, usize)>,
}

/// Partitioned on-disk tick storage.
#[derive(Debug, Clone)]
pub struct TickStore {
    root: PathBuf,
}

impl TickStore {
    pub fn open(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn ingest_csv(&self, path: impl AsRef<Path>, schema: &CsvSchema) -> Result<IngestReport> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let digest = hex_digest(&bytes);

        let (ticks, mut report) = parse_ticks(&bytes, schema)?;
        log::info!(
            "{}: timestamps detected as ISO-8601 in {} rows, epoch-ns in {} rows",
            path.display(),
            report.iso_timestamps,
            report.epoch_timestamps
        );
        for r in &report.rejects {
            log::warn!("{}:{}: rejected: {}", path.display(), r.line, r.reason);
        }

        let mut manifest = self.read_manifest()?;
        if manifest.files.contains_key(&digest) {
            report.already_ingested = true;
            return Ok(report);
        }
        self.store_ticks(ticks)?;
        manifest
            .files
            .insert(digest, (report.accepted, report.rejected));
        self.write_manifest(&manifest)?;
        Ok(report)
    }

    /// Merges ticks into their partitions. Duplicates are kept.
    pub fn store_ticks(&self, ticks: Vec<Tick>) -> Result<usize> {
        let n = ticks.len();
        let mut parts: HashMap<(String, NaiveDate), Vec<Tick>> = HashMap::new();
        for t in ticks {
            let date = utc_date_of(t.timestamp_ns);
            parts.entry((t.symbol.clone(), date)).or_default().push(t);
        }
        let mut keys: Vec<_> = parts.keys().cloned().collect();
        keys.sort();
        for key in keys {
            let new = parts.remove(&key).unwrap_or_default();
            let (symbol, date) = key;
            let mut merged = self
                .slice(&symbol, date)?
                .map(|s| s.ticks)
                .unwrap_or_default();
            merged.extend(new);
            let slice = SymbolDaySlice::new(symbol, date, merged)?;
            self.write_partition(&slice)?;
        }
        Ok(n)
    }

    /// Ticks for one symbol-day, or `None` when no partition exists.
    pub fn slice(&self, symbol: &str, date: NaiveDate) -> Result<Option<SymbolDaySlice>> {
        let path = self.partition_path(symbol, date);
        let file = match fs::File::open(&path) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(Error::io(&path, e)),
        };
        let mut rdr = csv::Reader::from_reader(std::io::BufReader::new(file));
        let mut ticks = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let bad = || Error::InvalidInput(format!("corrupt partition {}", path.display()));
            let ts: i64 = rec.get(0).ok_or_else(bad)?.parse().map_err(|_| bad())?;
            let exchange = rec.get(1).ok_or_else(bad)?.to_string();
            let price: f64 = rec.get(2).ok_or_else(bad)?.parse().map_err(|_| bad())?;
            ticks.push(Tick {
                timestamp_ns: ts,
                exchange,
                symbol: symbol.to_string(),
                price,
            });
        }
        Ok(Some(SymbolDaySlice::new(symbol, date, ticks)?))
    }

    pub fn symbols(&self) -> Result<Vec<String>> {
        let mut out = Vec::new();
        let entries = fs::read_dir(&self.root).map_err(|e| Error::io(&self.root, e))?;
        for entry in entries {
            let entry = entry.map_err(|e| Error::io(&self.root, e))?;
            if entry.path().is_dir() {
                out.push(entry.file_name().to_string_lossy().into_owned());
            }
        }
        out.sort();
        Ok(out)
    }

    pub fn dates(&self, symbol: &str) -> Result<Vec<NaiveDate>> {
        let dir = self.root.join(symbol);
        let entries = match fs::read_dir(&dir) {
            Ok(e) => e,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(Error::io(&dir, e)),
        };
        let mut out = Vec::new();
        for entry in entries {
            let entry = entry.map_err(|e| Error::io(&dir, e))?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if let Some(stem) = name.strip_suffix(".csv") {
                if let Ok(d) = NaiveDate::parse_from_str(stem, "%Y-%m-%d") {
                    out.push(d);
                }
            }
        }
        out.sort();
        Ok(out)
    }

    fn partition_path(&self, symbol: &str, date: NaiveDate) -> PathBuf {
        self.root
            .join(symbol)
            .join(format!("{}.csv", date.format("%Y-%m-%d")))
    }

    fn write_partition(&self, slice: &SymbolDaySlice) -> Result<()> {
        let path = self.partition_path(&slice.symbol, slice.utc_date);
        let dir = path.parent().expect("partition has a parent");
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let tmp = path.with_extension("csv.tmp");
        {
            let file = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
            let mut w = BufWriter::new(file);
            let io = |e| Error::io(&tmp, e);
            writeln!(w, "{PARTITION_HEADER}").map_err(io)?;
            for t in &slice.ticks {
                writeln!(w, "{},{},{}", t.timestamp_ns, t.exchange, t.price).map_err(io)?;
            }
            w.flush().map_err(io)?;
        }
        fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))
    }

    fn read_manifest(&self) -> Result<Manifest> {
        let path = self.root.join(MANIFEST_FILE);
        match fs::read(&path) {
            Ok(bytes) => Ok(serde_json::from_slice(&bytes)?),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Manifest::default()),
            Err(e) => Err(Error::io(&path, e)),
        }
    }

    fn write_manifest(&self, manifest: &Manifest) -> Result<()> {
        let path = self.root.join(MANIFEST_FILE);
        let body = serde_json::to_vec_pretty(manifest)?;
        fs::write(&path, body).map_err(|e| Error::io(&path, e))
    }
}

fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn parse_ticks(bytes: &[u8], schema: &CsvSchema) -> Result<(Vec<Tick>, IngestReport)> {
    let mut rdr = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(bytes);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| {
            Error::InvalidInput(format!("input has no column named {name:?}"))
        })
    };
    let (ti, ei, si, pi) = (
        col(&schema.time)?,
        col(&schema.exchange)?,
        col(&schema.symbol)?,
        col(&schema.price)?,
    );

    let mut report = IngestReport::default();
    let mut ticks = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let line = row as u64 + 2;
        let rec = match rec {
            Ok(r) => r,
            Err(e) => {
                report.rejects.push(RejectedRow {
                    line,
                    reason: format!("malformed row: {e}"),
                });
                continue;
            }
        };
        match parse_row(&rec, ti, ei, si, pi) {
            Ok((tick, fmt)) => {
                match fmt {
                    TimestampFormat::Iso8601 => report.iso_timestamps += 1,
                    TimestampFormat::EpochNanos => report.epoch_timestamps += 1,
                }
                ticks.push(tick);
            }
            Err(reason) => report.rejects.push(RejectedRow { line, reason }),
        }
    }
    report.accepted = ticks.len();
    report.rejected = report.rejects.len();
    Ok((ticks, report))
}

fn parse_row(
    rec: &csv::StringRecord,
    ti: usize,
    ei: usize,
    si: usize,
    pi: usize,
) -> std::result::Result<(Tick, TimestampFormat), String> {
    let field = |i: usize, name: &str| rec.get(i).ok_or_else(|| format!("missing {name} field"));
    let (timestamp_ns, fmt) = parse_timestamp(field(ti, "time")?)?;
    let exchange = field(ei, "exchange")?;
    let symbol = field(si, "symbol")?;
    if exchange.is_empty() || exchange.contains(',') {
        return Err(format!("invalid exchange {exchange:?}"));
    }
    if !valid_symbol(symbol) {
        return Err(format!("invalid symbol {symbol:?}"));
    }
    let raw_price = field(pi, "price")?;
    let price: f64 = raw_price
        .parse()
        .map_err(|_| format!("unparseable price {raw_price:?}"))?;
    if !price.is_finite() {
        return Err(format!("unparseable price {raw_price:?}"));
    }
    if price <= 0.0 {
        return Err("non-positive price".into());
    }
    Ok((
        Tick {
            timestamp_ns,
            exchange: exchange.to_string(),
            symbol: symbol.to_string(),
            price,
        },
        fmt,
    ))
}

fn valid_symbol(s: &str) -> bool {
    !s.is_empty()
        && !s.starts_with('.')
        && s.chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
}
