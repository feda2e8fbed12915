use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use marge_core::adventure::{Catalog, GameError};
use marge_core::beacon::BeaconId;
use marge_core::evaluation::{read_sus_csv, read_task_csv, render_task_table, sus_report, task_report, SusBands};
use marge_core::proximity::{broadcast_stats, ScanLog};
use marge_core::simulator::{
    detection_probability, recommend_installation, simulate_trip, DEFAULT_PROXIMITY_RATE, DEFAULT_STICKER_RATE,
};
use marge_core::{BeaconSpec, RateReport, TripConfig};
use marge_server::ServerConfig;

/// Beacons in the seeded catalog share this UUID; proximity beacons use
/// major 100 and stickers major 200.
const FLEET_UUID: u128 = 0xf7826da6_4fa2_4e98_8024_bc5b71e0893e;

#[derive(Parser)]
#[command(name = "marge", version, about = "Bus-ride adventure toolkit: beacon simulation, usability metrics and the game service")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Text,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one bus trip and write its scan log as JSON lines.
    Simulate {
        #[arg(long, default_value_t = 24.0)]
        duration_min: f64,
        /// Broadcasts per minute of the proximity beacon; 0 leaves it out.
        #[arg(long, default_value_t = DEFAULT_PROXIMITY_RATE)]
        proximity_rate: f64,
        /// Number of sticker beacons.
        #[arg(long, default_value_t = 0)]
        stickers: u16,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Occupancy attenuation in (0, 1].
        #[arg(long, default_value_t = 1.0)]
        occupancy: f64,
        /// Accept trips outside 20-40 minutes.
        #[arg(long)]
        allow_any_duration: bool,
        /// Trip configuration JSON; replaces the beacon flags.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Count broadcasts per beacon in a scan log.
    Analyze {
        log: PathBuf,
        /// Window length; defaults to the log's last event rounded up to a minute.
        #[arg(long)]
        duration_min: Option<f64>,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
    },
    /// Check whether an installation detects a rider within a time window.
    Recommend {
        #[arg(long, default_value_t = 0)]
        proximity: u16,
        #[arg(long, default_value_t = 0)]
        stickers: u16,
        #[arg(long, default_value_t = DEFAULT_PROXIMITY_RATE)]
        proximity_rate: f64,
        #[arg(long, default_value_t = DEFAULT_STICKER_RATE)]
        sticker_rate: f64,
        #[arg(long, default_value_t = 300.0)]
        window_s: f64,
        #[arg(long, default_value_t = 0.99)]
        target: f64,
        /// Also estimate the probability by Monte Carlo with this many trials.
        #[arg(long)]
        trials: Option<u64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Score System Usability Scale responses (one row of ten items each).
    Sus {
        csv: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
    },
    /// Per-task time and error statistics from task_id,duration_s,errors rows.
    Tasks {
        csv: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
    },
    /// Validate an adventure catalog file.
    ValidateCatalog { path: PathBuf },
    /// Run the HTTP service. MARGE_PORT and MARGE_DATA_DIR override the flags.
    Serve {
        #[arg(long, default_value_t = marge_server::DEFAULT_PORT)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: std::net::IpAddr,
        #[arg(long)]
        catalog: Option<PathBuf>,
        #[arg(long)]
        data_dir: Option<PathBuf>,
    },
}

/// Bad flag combinations found after parsing; reported like clap's own.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn beacon(major: u16, minor: u16) -> BeaconId {
    BeaconId::new(uuid_of(FLEET_UUID), major, minor)
}

fn uuid_of(v: u128) -> marge_core::beacon::Uuid {
    marge_core::beacon::Uuid::from_u128(v)
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).with_context(|| format!("cannot open {}", path.display()))?))
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn simulate(
    duration_min: f64,
    proximity_rate: f64,
    stickers: u16,
    seed: u64,
    occupancy: f64,
    allow_any_duration: bool,
    config: Option<PathBuf>,
    out: Option<PathBuf>,
) -> Result<()> {
    let cfg: TripConfig = match config {
        Some(p) => serde_json::from_reader(open(&p)?).with_context(|| format!("bad trip config {}", p.display()))?,
        None => {
            let mut beacons = Vec::new();
            if proximity_rate > 0.0 {
                beacons.push(BeaconSpec::proximity(beacon(100, 1)).with_rate(proximity_rate));
            }
            beacons.extend((1..=stickers).map(|i| BeaconSpec::sticker(beacon(200, i))));
            if beacons.is_empty() {
                return Err(usage("nothing to simulate: set --proximity-rate above 0 or --stickers"));
            }
            let mut cfg = TripConfig::new(duration_min, beacons, seed);
            cfg.occupancy_factor = occupancy;
            cfg.allow_any_duration = allow_any_duration;
            cfg
        }
    };
    let log = simulate_trip(&cfg)?;
    match out {
        Some(p) => {
            let f = File::create(&p).with_context(|| format!("cannot create {}", p.display()))?;
            log.write_jsonl(BufWriter::new(f))?;
            eprintln!("wrote {} events to {}", log.len(), p.display());
        }
        None => log.write_jsonl(io::stdout().lock())?,
    }
    Ok(())
}

fn analyze(log: &Path, duration_min: Option<f64>, format: Format) -> Result<()> {
    let log = ScanLog::read_jsonl(open(log)?)?;
    let end_ms = match duration_min {
        Some(d) if d > 0.0 && d.is_finite() => (d * 60_000.0).round() as u64,
        Some(d) => return Err(usage(format!("--duration-min must be positive, got {d}"))),
        None => {
            let last = log.end_ms().context("log is empty; pass --duration-min")?;
            (last / 60_000 + 1) * 60_000
        }
    };
    let report: RateReport = broadcast_stats(log.events(), 0, end_ms)?;
    match format {
        Format::Json => print_json(&report),
        Format::Text => {
            println!("window [0, {}) ms, {} events", report.window_end_ms, report.total_events);
            for b in &report.beacons {
                println!(
                    "{:<40} {:>6} broadcasts {:>8.3}/min",
                    b.beacon.to_string(),
                    b.broadcast_count,
                    b.rate_per_min
                );
            }
            Ok(())
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn recommend(
    proximity: u16,
    stickers: u16,
    proximity_rate: f64,
    sticker_rate: f64,
    window_s: f64,
    target: f64,
    trials: Option<u64>,
    seed: u64,
) -> Result<()> {
    let mut beacons: Vec<BeaconSpec> = (1..=proximity)
        .map(|i| BeaconSpec::proximity(beacon(100, i)).with_rate(proximity_rate))
        .collect();
    beacons.extend((1..=stickers).map(|i| BeaconSpec::sticker(beacon(200, i)).with_rate(sticker_rate)));
    if beacons.is_empty() {
        return Err(usage("give at least one of --proximity or --stickers"));
    }
    let rec = recommend_installation(&beacons, target, window_s)?;
    let mut value = serde_json::to_value(&rec)?;
    if let Some(trials) = trials {
        let total: f64 = beacons.iter().map(|b| b.effective_rate(1.0)).sum();
        let p: f64 = detection_probability(total, window_s, trials, seed)?;
        value["monte_carlo_probability"] = serde_json::json!(p);
        value["trials"] = serde_json::json!(trials);
    }
    print_json(&value)
}

fn sus(csv: &Path, format: Format) -> Result<()> {
    let responses = read_sus_csv(open(csv)?)?;
    let report = sus_report(&responses, &SusBands::default())?;
    match format {
        Format::Json => print_json(&report),
        Format::Text => {
            print!("{}", report.render_text());
            Ok(())
        }
    }
}

fn tasks(csv: &Path, format: Format) -> Result<()> {
    let samples = read_task_csv::<f64, _>(open(csv)?)?;
    let report = task_report(&samples)?;
    match format {
        Format::Json => print_json(&report),
        Format::Text => {
            print!("{}", render_task_table(&report));
            Ok(())
        }
    }
}

fn validate_catalog(path: &Path) -> Result<()> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    match Catalog::from_json_str(&text) {
        Ok(c) => {
            println!(
                "ok: {} adventures, {} badges, {} easter eggs, languages {}",
                c.adventures().len(),
                c.badges().len(),
                c.document().easter_eggs.len(),
                c.languages().join(",")
            );
            Ok(())
        }
        Err(GameError::Validation(issues)) => {
            for i in &issues {
                println!("{}: {}", i.path, i.message);
            }
            bail!("{} validation issue(s) in {}", issues.len(), path.display())
        }
        Err(e) => Err(e.into()),
    }
}

fn serve(port: u16, host: std::net::IpAddr, catalog: Option<PathBuf>, data_dir: Option<PathBuf>) -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .init();
    let config = ServerConfig {
        host,
        port,
        catalog,
        data_dir,
    }
    .with_env_overrides(|k| std::env::var(k).ok())?;
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(marge_server::serve(config, marge_server::shutdown_signal()))?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate {
            duration_min,
            proximity_rate,
            stickers,
            seed,
            occupancy,
            allow_any_duration,
            config,
            out,
        } => simulate(duration_min, proximity_rate, stickers, seed, occupancy, allow_any_duration, config, out),
        Command::Analyze {
            log,
            duration_min,
            format,
        } => analyze(&log, duration_min, format),
        Command::Recommend {
            proximity,
            stickers,
            proximity_rate,
            sticker_rate,
            window_s,
            target,
            trials,
            seed,
        } => recommend(proximity, stickers, proximity_rate, sticker_rate, window_s, target, trials, seed),
        Command::Sus { csv, format } => sus(&csv, format),
        Command::Tasks { csv, format } => tasks(&csv, format),
        Command::ValidateCatalog { path } => validate_catalog(&path),
        Command::Serve {
            port,
            host,
            catalog,
            data_dir,
        } => serve(port, host, catalog, data_dir),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.is::<UsageError>() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
