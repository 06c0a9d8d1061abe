use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::Context;
use chrono::Duration;
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use stw_core::clock::{Clock, FakeClock, SystemClock};
use stw_core::config::Config;
use stw_core::engine::{CompareTarget, Engine, EngineError};
use stw_core::monitor::{drain_outbox, FileSink, Monitor, Outcome};
use stw_core::receipt::Receipt;
use stw_core::service::{self, AppState};
use stw_core::store::{NewSchedule, ScheduleMode};
use stw_core::time;

const EXIT_FAILED_CHECK: u8 = 1;
const EXIT_INPUT: u8 = 2;
const EXIT_UPSTREAM: u8 = 3;
const EXIT_PERMISSION: u8 = 4;

#[derive(Parser)]
#[command(name = "stw", version, about = "Trusted timestamps for web pages")]
struct Cli {
    /// TOML settings file; environment variables override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Machine-readable output.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fetch, extract and stamp a URL; prints the receipt.
    Stamp {
        url: String,
        #[arg(long)]
        title: Option<String>,
    },
    /// Export the receipt of a stored stamp.
    Receipt { id: i64 },
    /// Re-run every check of a receipt offline.
    Verify {
        receipt: PathBuf,
        /// Text to check instead of the receipt's embedded text.
        #[arg(long)]
        text: Option<PathBuf>,
    },
    /// Word-level comparison of a stored version with another version, the
    /// live page, or the page as seen from a country.
    Compare {
        old: i64,
        new: Option<i64>,
        #[arg(long, conflicts_with_all = ["new", "country"])]
        current: bool,
        #[arg(long, conflicts_with = "new")]
        country: Option<String>,
    },
    /// Stored versions of a URL, oldest first.
    Versions { url: String },
    #[command(subcommand)]
    Schedule(ScheduleCommand),
    /// Probe a URL from each country through its proxies.
    BlockCheck {
        url: String,
        /// Comma-separated ISO codes; defaults to every configured country.
        #[arg(long, value_delimiter = ',')]
        countries: Option<Vec<String>>,
    },
    /// Seal pending stamps into a batch and anchor its root.
    SealBatch,
    /// Run the HTTP API and the scheduler.
    Serve {
        #[arg(long)]
        bind: Option<String>,
        /// Scheduler period in seconds.
        #[arg(long, default_value_t = 60)]
        tick_secs: u64,
    },
}

#[derive(Subcommand)]
enum ScheduleCommand {
    /// Register a monitoring task.
    Add {
        url: String,
        #[arg(long)]
        freq: u32,
        #[arg(long)]
        email: Option<String>,
        #[arg(long)]
        country: Option<String>,
        #[arg(long)]
        title: Option<String>,
        /// Defaults to country-compare when a country is given, else restamp.
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
    },
    List,
    /// Advance a simulated clock `ticks` times by `step` days, running due
    /// tasks after each step.
    Run {
        #[arg(long)]
        ticks: u32,
        #[arg(long, default_value_t = 1)]
        step: u32,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Restamp,
    CountryCompare,
    BlockWatch,
}

impl From<ModeArg> for ScheduleMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Restamp => ScheduleMode::Restamp,
            ModeArg::CountryCompare => ScheduleMode::CountryCompare,
            ModeArg::BlockWatch => ScheduleMode::BlockWatch,
        }
    }
}

struct Failure {
    code: u8,
    kind: &'static str,
    message: String,
    detail: Option<Value>,
}

impl Failure {
    fn new(code: u8, kind: &'static str, message: impl Into<String>) -> Self {
        Self { code, kind, message: message.into(), detail: None }
    }
}

impl From<EngineError> for Failure {
    fn from(err: EngineError) -> Self {
        let message = err.to_string();
        match err {
            EngineError::Input(_) | EngineError::NotFound(_) => Failure::new(EXIT_INPUT, "input_error", message),
            EngineError::Upstream { status, .. } => Failure {
                detail: Some(json!({ "fetch_status": status })),
                ..Failure::new(EXIT_UPSTREAM, "upstream_error", message)
            },
            EngineError::Extraction(_) => Failure::new(EXIT_UPSTREAM, "extraction_failed", message),
            EngineError::SealInProgress => Failure::new(EXIT_INPUT, "seal_in_progress", message),
            EngineError::Store(_) | EngineError::Setup(_) => Failure::new(EXIT_INPUT, "setup_error", message),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(err: anyhow::Error) -> Self {
        let permission = err
            .chain()
            .filter_map(|e| e.downcast_ref::<std::io::Error>())
            .any(|io| io.kind() == std::io::ErrorKind::PermissionDenied);
        let code = if permission { EXIT_PERMISSION } else { EXIT_INPUT };
        Failure::new(code, if permission { "permission_denied" } else { "input_error" }, format!("{err:#}"))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let default_level = if matches!(cli.command, Command::Serve { .. }) { "info" } else { "warn" };
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(default_level)),
        )
        .with_writer(std::io::stderr)
        .init();

    let json_mode = cli.json;
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(failure) => {
            if json_mode {
                let mut error = json!({ "code": failure.kind, "message": failure.message });
                if let Some(detail) = failure.detail {
                    error["detail"] = detail;
                }
                println!("{}", json!({ "error": error }));
            } else {
                eprintln!("error: {}", failure.message);
            }
            ExitCode::from(failure.code)
        }
    }
}

fn load_config(path: Option<&PathBuf>) -> Result<Config, Failure> {
    Config::load(path.map(PathBuf::as_path)).map_err(|e| Failure::new(EXIT_INPUT, "config_error", e.to_string()))
}

fn engine(config: &Config, clock: Arc<dyn Clock>) -> Result<Engine, Failure> {
    Ok(Engine::from_config(config, clock)?)
}

fn print_json(value: &impl serde::Serialize) {
    let out = serde_json::to_string_pretty(value).expect("serializable output");
    let mut stdout = std::io::stdout().lock();
    let _ = writeln!(stdout, "{out}");
}

fn run(cli: Cli) -> Result<u8, Failure> {
    let config = load_config(cli.config.as_ref())?;
    let json_mode = cli.json;
    match cli.command {
        Command::Stamp { url, title } => {
            let engine = engine(&config, Arc::new(SystemClock))?;
            let owner = engine.store().ensure_system_user(engine.now()).map_err(EngineError::from)?;
            let outcome = engine.stamp_url(&url, owner.id, title)?;
            let receipt = engine.receipt(outcome.record.id)?;
            let mut value = serde_json::to_value(&receipt).expect("receipt serializes");
            value["duplicate"] = json!(!outcome.created);
            print_json(&value);
            Ok(0)
        }
        Command::Receipt { id } => {
            let engine = engine(&config, Arc::new(SystemClock))?;
            print_json(&engine.receipt(id)?);
            Ok(0)
        }
        Command::Verify { receipt, text } => {
            let raw = std::fs::read_to_string(&receipt)
                .with_context(|| format!("reading {}", receipt.display()))?;
            let receipt: Receipt = serde_json::from_str(&raw)
                .with_context(|| format!("parsing {}", receipt.display()))?;
            let text = match text {
                Some(path) => Some(std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?),
                None => None,
            };
            let report = receipt.verify(text.as_deref());
            let failed = report.failed_checks();
            if json_mode {
                print_json(&json!({ "report": report, "failed_checks": failed }));
            } else if report.overall_valid {
                println!("valid: stamp {} of {} at {}", receipt.record_id, receipt.url, time::rfc3339(receipt.core.stamped_at));
            } else {
                println!("invalid: {}", failed.join(", "));
            }
            Ok(if report.overall_valid { 0 } else { EXIT_FAILED_CHECK })
        }
        Command::Compare { old, new, current, country } => {
            let target = match (new, current, country) {
                (Some(id), false, None) => CompareTarget::Record(id),
                (None, true, None) => CompareTarget::Current,
                (None, false, Some(cc)) => CompareTarget::Country(cc),
                _ => return Err(Failure::new(EXIT_INPUT, "input_error", "give a second id, --current, or --country")),
            };
            let engine = engine(&config, Arc::new(SystemClock))?;
            print_json(&engine.compare(old, &target)?);
            Ok(0)
        }
        Command::Versions { url } => {
            let engine = engine(&config, Arc::new(SystemClock))?;
            let versions = engine.store().versions_of(&url).map_err(EngineError::from)?;
            if json_mode {
                print_json(&versions);
            } else {
                for v in versions {
                    println!("{}\t{}\t{}", v.id, time::rfc3339(v.created_at), v.core.content_hash);
                }
            }
            Ok(0)
        }
        Command::Schedule(cmd) => schedule(cmd, &config, json_mode),
        Command::BlockCheck { url, countries } => {
            let engine = engine(&config, Arc::new(SystemClock))?;
            let countries =
                countries.unwrap_or_else(|| engine.registry().countries().map(str::to_string).collect());
            let results = engine.block_check(&url, &countries)?;
            if json_mode {
                print_json(&results);
            } else {
                println!("country\tblocked");
                for r in &results {
                    println!("{}\t{}", r.country, if r.blocked { "yes" } else { "no" });
                }
            }
            Ok(0)
        }
        Command::SealBatch => {
            let engine = engine(&config, Arc::new(SystemClock))?;
            let outcome = engine.seal_pending()?;
            if json_mode {
                print_json(&json!({ "batch": outcome.sealed, "retried": outcome.retried }));
            } else {
                for (id, ok) in &outcome.retried {
                    println!("retried batch {id}: {}", if *ok { "anchored" } else { "still pending" });
                }
                match &outcome.sealed {
                    Some(b) => println!("batch {} ({} stamps) {} {}", b.batch_id, b.leaves.len(), b.anchor_address, b.status),
                    None => println!("nothing to seal"),
                }
            }
            Ok(0)
        }
        Command::Serve { bind, tick_secs } => {
            let engine = Arc::new(engine(&config, Arc::new(SystemClock))?);
            let secret = match &config.secret_key {
                Some(s) if !s.is_empty() => s.clone(),
                _ => {
                    tracing::warn!("SECRET_KEY not set; sessions will not survive a restart");
                    hex::encode(rand::random::<[u8; 32]>())
                }
            };
            let state = Arc::new(AppState::new(engine.clone(), secret, config.admin_email.clone()));
            let monitor = Arc::new(
                Monitor::new(engine).with_seal_interval(Duration::hours(config.seal_interval_hours as i64)),
            );
            let sink = Arc::new(FileSink::new(config.outbox_path()).context("opening outbox")?);
            let bind = bind.unwrap_or_else(|| config.bind.clone());
            let runtime = tokio::runtime::Runtime::new().context("starting runtime")?;
            runtime.block_on(service::serve(
                state,
                &bind,
                monitor,
                sink,
                std::time::Duration::from_secs(tick_secs.max(1)),
            ))?;
            Ok(0)
        }
    }
}

fn schedule(cmd: ScheduleCommand, config: &Config, json_mode: bool) -> Result<u8, Failure> {
    match cmd {
        ScheduleCommand::Add { url, freq, email, country, title, mode } => {
            let mode = mode.map(ScheduleMode::from).unwrap_or(if country.is_some() {
                ScheduleMode::CountryCompare
            } else {
                ScheduleMode::Restamp
            });
            let engine = engine(config, Arc::new(SystemClock))?;
            let owner = engine.store().ensure_system_user(engine.now()).map_err(EngineError::from)?;
            let new = NewSchedule { url, post_title: title, frequency_days: freq, email, country, mode };
            let task = engine.create_schedule(&new, owner.id)?;
            if json_mode {
                print_json(&task);
            } else {
                println!("schedule {} every {} day(s) for {}", task.id, task.frequency_days, task.url);
            }
            Ok(0)
        }
        ScheduleCommand::List => {
            let engine = engine(config, Arc::new(SystemClock))?;
            let tasks = engine.store().list_schedules().map_err(EngineError::from)?;
            if json_mode {
                print_json(&tasks);
            } else {
                for t in tasks {
                    let last = t.last_run.map(time::rfc3339).unwrap_or_else(|| "never".into());
                    println!("{}\t{}\t{}d\t{}\tlast run {}", t.id, t.mode, t.frequency_days, t.url, last);
                }
            }
            Ok(0)
        }
        ScheduleCommand::Run { ticks, step } => {
            if step == 0 {
                return Err(Failure::new(EXIT_INPUT, "input_error", "--step must be at least 1 day"));
            }
            let clock = Arc::new(FakeClock::new(SystemClock.now()));
            let engine = Arc::new(engine(config, clock.clone())?);
            let monitor = Monitor::new(engine.clone());
            let sink = FileSink::new(config.outbox_path()).context("opening outbox")?;
            let mut ticks_out = Vec::new();
            let mut executions = 0;
            let mut failures = 0;
            let mut delivered = 0;
            for tick in 1..=ticks {
                clock.advance(Duration::days(i64::from(step)));
                let report = monitor.tick()?;
                delivered += drain_outbox(engine.store(), &sink).map_err(EngineError::from)?;
                executions += report.runs.len();
                failures += report.failures();
                if !json_mode {
                    for run in &report.runs {
                        println!("tick {tick} {} task {} {}", time::rfc3339(run.at), run.task_id, describe(&run.outcome));
                    }
                }
                ticks_out.push(json!({ "tick": tick, "at": time::rfc3339(clock.now()), "report": report }));
            }
            if json_mode {
                print_json(&json!({
                    "ticks": ticks_out,
                    "executions": executions,
                    "failures": failures,
                    "notifications_delivered": delivered,
                }));
            } else {
                println!("{executions} execution(s), {failures} skipped, {delivered} notification(s) delivered");
            }
            Ok(0)
        }
    }
}

fn describe(outcome: &Outcome) -> String {
    match outcome {
        Outcome::Unchanged { record } => format!("unchanged (record {record})"),
        Outcome::Restamped { new_record, notified, .. } => {
            format!("restamped as record {new_record}{}", if *notified { ", notified" } else { "" })
        }
        Outcome::CountriesMatch { country } => format!("same content in {country}"),
        Outcome::CountryDiffers { country, .. } => format!("content differs in {country}"),
        Outcome::Blocked { country, .. } => format!("blocked in {country}"),
        Outcome::NotBlocked { country, .. } => format!("reachable from {country}"),
        Outcome::Skipped { reason } => format!("skipped: {reason}"),
    }
}
