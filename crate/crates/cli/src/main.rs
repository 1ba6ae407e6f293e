use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand, ValueEnum};

use hfjump::config::{Bonferroni, RunConfig};
use hfjump::pipeline::RangeSelection;
use hfjump::tickstore::CsvSchema;
use hfjump::workflow::{self, AnalyzeOptions, ReportOptions, SimulateOptions};
use hfjump::Error;

/// Noise-robust jump detection for high-frequency crypto tick data.
///
/// Exit codes: 0 success, 1 usage, 2 I/O, 3 configuration.
#[derive(Debug, Parser)]
#[command(name = "hfjump", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Merge tick CSV files into a partitioned store.
    Ingest(IngestArgs),
    /// Write a synthetic tick CSV corpus with known jumps.
    Simulate(SimulateArgs),
    /// Run the combined jump test over a store and write a catalog.
    Detect(DetectArgs),
    /// Build summary tables and regressions from a catalog.
    Analyze(AnalyzeArgs),
    /// Bundle catalog, tables, events and timeline into one directory.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct IngestArgs {
    /// CSV files or directories of CSV files.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long)]
    store: PathBuf,
    #[arg(long, default_value = "time")]
    col_time: String,
    #[arg(long, default_value = "exchange")]
    col_exchange: String,
    #[arg(long, default_value = "symbol")]
    col_symbol: String,
    #[arg(long, default_value = "price")]
    col_price: String,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 10)]
    days: usize,
    /// Expected number of jumps per symbol-day.
    #[arg(long, default_value_t = 0.5)]
    jumps: f64,
    /// Fixed jump size in log points; heavy-tailed random sizes otherwise.
    #[arg(long)]
    jump_size: Option<f64>,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, value_delimiter = ',', default_value = "BTC")]
    symbols: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "sim")]
    exchanges: Vec<String>,
    #[arg(long, default_value = "2020-01-01")]
    start: NaiveDate,
    #[arg(long, default_value_t = 17_280)]
    ticks_per_day: usize,
    /// Daily diffusive volatility.
    #[arg(long, default_value_t = 0.04)]
    sigma: f64,
    /// Noise standard deviation in log points.
    #[arg(long, default_value_t = 0.0005)]
    q: f64,
    /// Two-point instead of Gaussian noise.
    #[arg(long)]
    two_point_noise: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum BonferroniArg {
    None,
    WithinDay,
    AcrossDays,
}

#[derive(Debug, Args)]
struct ConfigArgs {
    /// TOML configuration file; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    coverage: Option<f64>,
    #[arg(long)]
    sd_cutoff: Option<f64>,
    #[arg(long)]
    dedup_window: Option<usize>,
    #[arg(long)]
    lm_c: Option<f64>,
    #[arg(long)]
    lm_k: Option<usize>,
    #[arg(long, value_enum)]
    bonferroni: Option<BonferroniArg>,
    #[arg(long)]
    ajl_p: Option<u32>,
    #[arg(long)]
    ajl_k_n: Option<usize>,
    #[arg(long)]
    mc_paths: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; 0 uses all cores.
    #[arg(long)]
    threads: Option<usize>,
    /// CSV of `time,label` event annotations.
    #[arg(long)]
    events: Option<PathBuf>,
}

impl ConfigArgs {
    fn resolve(&self) -> hfjump::Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($($f:ident),*) => { $( if let Some(v) = self.$f { c.$f = v; } )* };
        }
        set!(alpha, coverage, sd_cutoff, dedup_window, lm_c, ajl_p, ajl_k_n, mc_paths, seed, threads);
        if self.lm_k.is_some() {
            c.lm_k = self.lm_k;
        }
        if let Some(b) = self.bonferroni {
            c.bonferroni = match b {
                BonferroniArg::None => Bonferroni::None,
                BonferroniArg::WithinDay => Bonferroni::WithinDay,
                BonferroniArg::AcrossDays => Bonferroni::AcrossDays,
            };
        }
        if let Some(p) = &self.events {
            c.events = workflow::read_events_csv(p).map_err(|e| Error::Config(e.to_string()))?;
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Args)]
struct DetectArgs {
    #[arg(long)]
    store: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Restrict to these symbols (comma separated).
    #[arg(long, value_delimiter = ',')]
    symbols: Vec<String>,
    #[arg(long)]
    from: Option<NaiveDate>,
    #[arg(long)]
    to: Option<NaiveDate>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    /// Directory holding catalog.jsonl and manifest.json.
    #[arg(long)]
    catalog: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Tick store for tick-level return statistics.
    #[arg(long)]
    store: Option<PathBuf>,
    /// Also fit all sign and lag dummies jointly.
    #[arg(long)]
    multivariate: bool,
}

#[derive(Debug, Args)]
struct ReportArgs {
    #[arg(long)]
    catalog: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    store: Option<PathBuf>,
    #[arg(long)]
    multivariate: bool,
    /// CSV of `time,label` event annotations; the run's events otherwise.
    #[arg(long)]
    events: Option<PathBuf>,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 3,
        Error::Io { .. } | Error::Csv(_) | Error::Json(_) => 2,
        Error::InvalidInput(_) => 1,
        _ => 2,
    }
}

fn run(cli: Cli) -> hfjump::Result<()> {
    match cli.command {
        Command::Ingest(a) => {
            let schema = CsvSchema {
                time: a.col_time,
                exchange: a.col_exchange,
                symbol: a.col_symbol,
                price: a.col_price,
            };
            let mut files = Vec::new();
            for p in &a.inputs {
                files.extend(workflow::csv_inputs(p)?);
            }
            for (path, r) in workflow::ingest(&a.store, &files, &schema)? {
                if r.already_ingested {
                    log::info!("{}: already ingested, skipped", path.display());
                    continue;
                }
                log::info!(
                    "{}: {} rows accepted, {} rejected ({} ISO and {} epoch timestamps)",
                    path.display(),
                    r.accepted,
                    r.rejected,
                    r.iso_timestamps,
                    r.epoch_timestamps
                );
                for rej in r.rejects.iter().take(5) {
                    log::warn!("{}: {rej:?}", path.display());
                }
            }
        }
        Command::Simulate(a) => {
            let opts = SimulateOptions {
                symbols: a.symbols,
                exchanges: a.exchanges,
                start: a.start,
                days: a.days,
                ticks_per_day: a.ticks_per_day,
                sigma: a.sigma,
                q: a.q,
                jumps_per_day: a.jumps,
                jump_size: a.jump_size,
                two_point_noise: a.two_point_noise,
                seed: a.seed,
            };
            let truth = workflow::simulate_corpus(&opts, &a.out)?;
            log::info!("wrote {} days with {} true jumps to {}", opts.days, truth.len(), a.out.display());
        }
        Command::Detect(a) => {
            let config = a.config.resolve()?;
            log::info!("resolved configuration (hash {}):\n{}", config.hash(), config.to_toml_string());
            let cancel = Arc::new(AtomicBool::new(false));
            let flag = Arc::clone(&cancel);
            if let Err(e) = ctrlc::set_handler(move || flag.store(true, Ordering::SeqCst)) {
                log::warn!("cannot install Ctrl-C handler: {e}");
            }
            let selection = RangeSelection {
                symbols: a.symbols,
                from: a.from,
                to: a.to,
            };
            let outcome = workflow::detect(&a.store, &a.out, &selection, &config, &cancel)?;
            let m = &outcome.manifest;
            if !m.complete {
                log::warn!("interrupted: {} of {} days written", m.days_written, m.days_planned);
            }
            log::info!("{} days tested of {} planned", m.days_tested, m.days_planned);
            print!("{}", m.summary.render());
        }
        Command::Analyze(a) => {
            let opts = AnalyzeOptions {
                store: a.store,
                multivariate: a.multivariate,
            };
            let out = workflow::analyze(&a.catalog, &a.out, &opts)?;
            log::info!("wrote {} tables to {}", out.files.len(), a.out.display());
        }
        Command::Report(a) => {
            let opts = ReportOptions {
                analyze: AnalyzeOptions {
                    store: a.store,
                    multivariate: a.multivariate,
                },
                events_file: a.events,
            };
            let files = workflow::report(&a.catalog, &a.out, &opts)?;
            log::info!("report with {} files in {}", files.len(), a.out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
