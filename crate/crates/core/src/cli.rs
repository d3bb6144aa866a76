//! Command-line front end. Exit codes: 0 success, 1 runtime failure,
//! 2 bad configuration or usage.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use clap::{Args, Parser, Subcommand};
use log::{debug, info};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::authority::HealthAuthority;
use crate::client::{Device, DeviceConfig};
use crate::estimates;
use crate::server::wire::{serve_tcp, Clock, WireService};
use crate::server::{ServerConfig, TokenUploadRecord, TracingServer};
use crate::sim::{run_scenario, scenarios, AdversaryKind, ScenarioConfig, ScenarioReport, Scheme};
use crate::vectors::VectorFile;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// Scenarios `attack` runs when none are named.
pub const ATTACK_SCENARIOS: &[&str] =
    &["relay_r1", "relay_r2", "relay_r2_skewed", "kiss_replay", "kiss_replay_fixed", "fake_claim", "eavesdropper"];

#[derive(Debug, Parser)]
#[command(name = "tracecorona", version, about = "Encounter-token contact tracing toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct ScenarioArgs {
    /// Scenario file, or the name of a bundled scenario. Repeatable.
    #[arg(long = "config", required = true)]
    pub configs: Vec<String>,
    /// Override the scenario seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override the scheme.
    #[arg(long)]
    pub scheme: Option<Scheme>,
    /// Report file (one scenario) or directory (several).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Scenarios to run in parallel.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Print `key=value` summaries instead of JSON.
    #[arg(long)]
    pub summary: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run scenarios and write their reports.
    Run(ScenarioArgs),
    /// Serve the tracing-server wire protocol over TCP.
    Serve {
        #[arg(long, default_value = "127.0.0.1:7878")]
        addr: String,
        /// Append-only record log; replayed on start.
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Stop after this many seconds.
        #[arg(long)]
        for_secs: Option<u64>,
    },
    /// Print a device's ephemeral identifiers and frame public keys.
    Keys {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0)]
        start_frame: u64,
        #[arg(long, default_value_t = 4)]
        frames: u64,
    },
    /// Run attack scenarios against every scheme and tabulate outcomes.
    Attack {
        /// Bundled scenario names or files; defaults to all attack scenarios.
        #[arg(long = "config")]
        configs: Vec<String>,
        #[arg(long)]
        seed: Option<u64>,
        /// Restrict to one scheme.
        #[arg(long)]
        scheme: Option<Scheme>,
        /// Directory for the individual reports.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Compare scenario reports, or print the payload estimates.
    Report {
        reports: Vec<PathBuf>,
        /// Print the bandwidth and rate estimates table.
        #[arg(long)]
        payload: bool,
        #[arg(long, default_value_t = estimates::DAILY_NEW_CASES)]
        infected: u64,
        /// Infected uploads pushed through a real server for the estimate.
        #[arg(long, default_value_t = 20)]
        sample: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Recompute the golden crypto vectors.
    VerifyVectors {
        /// Vector file; defaults to the bundled one.
        #[arg(long)]
        file: Option<PathBuf>,
        /// Write freshly generated vectors here instead of verifying.
        #[arg(long, hide = true)]
        emit: Option<PathBuf>,
        #[arg(long, hide = true, default_value_t = 16)]
        count: usize,
    },
    /// Load an upload (JSON array of records) into a log-backed server.
    Ingest {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        input: PathBuf,
        /// Close the current epoch afterwards so the records become visible.
        #[arg(long)]
        close_epoch: bool,
    },
    /// Replay a server log and print its statistics.
    DumpStats {
        #[arg(long)]
        log: PathBuf,
    },
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Failure(String),
}

type CliResult = Result<(), CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn failure(msg: impl Into<String>) -> CliError {
    CliError::Failure(msg.into())
}

/// Installs the logger once; level from `TC_LOG_LEVEL` (default `warn`).
pub fn init_logging() {
    let env = env_logger::Env::new().filter_or("TC_LOG_LEVEL", "warn");
    let _ = env_logger::Builder::from_env(env).format_timestamp(None).try_init();
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, stdout: &mut dyn std::io::Write, stderr: &mut dyn std::io::Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            if e.use_stderr() {
                let _ = write!(stderr, "{text}");
            } else {
                let _ = write!(stdout, "{text}");
            }
            return code;
        }
    };
    let result = match cli.command {
        Command::Run(args) => cmd_run(&args, stdout),
        Command::Serve { addr, log, seed, for_secs } => cmd_serve(&addr, log.as_deref(), seed, for_secs, stdout),
        Command::Keys { seed, start_frame, frames } => cmd_keys(seed, start_frame, frames, stdout),
        Command::Attack { configs, seed, scheme, out, jobs } => {
            cmd_attack(&configs, seed, scheme, out.as_deref(), jobs, stdout)
        }
        Command::Report { reports, payload, infected, sample, out } => {
            cmd_report(&reports, payload, infected, sample, out.as_deref(), stdout)
        }
        Command::VerifyVectors { file, emit, count } => {
            cmd_verify_vectors(file.as_deref(), emit.as_deref(), count, stdout)
        }
        Command::Ingest { log, input, close_epoch } => cmd_ingest(&log, &input, close_epoch, stdout),
        Command::DumpStats { log } => cmd_dump_stats(&log, stdout),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(CliError::Usage(m)) => {
            let _ = writeln!(stderr, "error: {m}");
            EXIT_USAGE
        }
        Err(CliError::Failure(m)) => {
            let _ = writeln!(stderr, "error: {m}");
            EXIT_FAILURE
        }
    }
}

/// Reads a scenario from a file, falling back to the bundled set.
fn load_config(spec: &str) -> Result<ScenarioConfig, CliError> {
    let path = Path::new(spec);
    let (origin, text) = if path.exists() {
        let text = std::fs::read_to_string(path).map_err(|e| usage(format!("{spec}: {e}")))?;
        (spec.to_owned(), text)
    } else if let Some(text) = scenarios::source(spec) {
        (format!("bundled:{spec}"), text.to_owned())
    } else {
        return Err(usage(format!("{spec}: no such file or bundled scenario")));
    };
    ScenarioConfig::from_toml(&text).map_err(|e| usage(format!("{origin}: {e}")))
}

fn write_out(path: Option<&Path>, text: &str, stdout: &mut dyn std::io::Write) -> CliResult {
    match path {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(|e| failure(format!("{}: {e}", dir.display())))?;
            }
            std::fs::write(p, text).map_err(|e| failure(format!("{}: {e}", p.display())))
        }
        None => stdout.write_all(text.as_bytes()).map_err(|e| failure(e.to_string())),
    }
}

/// Runs configs on up to `jobs` threads; results keep input order.
fn run_many(configs: Vec<ScenarioConfig>, jobs: usize) -> Result<Vec<ScenarioReport>, CliError> {
    let jobs = jobs.max(1);
    let mut slots: Vec<Option<Result<ScenarioReport, String>>> = vec![None; configs.len()];
    std::thread::scope(|scope| {
        for (chunk_configs, chunk_slots) in configs
            .chunks(configs.len().div_ceil(jobs).max(1))
            .zip(slots.chunks_mut(configs.len().div_ceil(jobs).max(1)))
        {
            scope.spawn(move || {
                for (cfg, slot) in chunk_configs.iter().zip(chunk_slots) {
                    let t = Instant::now();
                    let r = run_scenario(cfg).map_err(|e| format!("{}: {e}", cfg.name));
                    debug!("{} ({}) finished in {:?}", cfg.name, cfg.scheme, t.elapsed());
                    *slot = Some(r);
                }
            });
        }
    });
    slots.into_iter().map(|s| s.expect("every scenario ran").map_err(usage)).collect()
}

fn cmd_run(args: &ScenarioArgs, stdout: &mut dyn std::io::Write) -> CliResult {
    let mut configs = Vec::new();
    for spec in &args.configs {
        let mut cfg = load_config(spec)?;
        if let Some(seed) = args.seed {
            cfg.seed = seed;
        }
        if let Some(scheme) = args.scheme {
            cfg.scheme = scheme;
        }
        configs.push(cfg);
    }
    let reports = run_many(configs, args.jobs)?;
    let render = |r: &ScenarioReport| if args.summary { r.summary() } else { r.to_json() };
    match (&args.out, reports.as_slice()) {
        (out, [single]) => write_out(out.as_deref(), &render(single), stdout)?,
        (Some(dir), many) => {
            for r in many {
                let ext = if args.summary { "txt" } else { "json" };
                let path = dir.join(format!("{}-{}.{ext}", r.name, r.scheme));
                write_out(Some(&path), &render(r), stdout)?;
            }
        }
        (None, many) => {
            for r in many {
                write_out(None, &render(r), stdout)?;
            }
        }
    }
    for r in &reports {
        info!(
            "{} [{}]: {} notifications, {} false",
            r.name,
            r.scheme,
            r.notifications.len(),
            r.false_notification_count
        );
    }
    Ok(())
}

fn cmd_serve(
    addr: &str,
    log: Option<&Path>,
    seed: u64,
    for_secs: Option<u64>,
    stdout: &mut dyn std::io::Write,
) -> CliResult {
    let authority = Arc::new(HealthAuthority::new(seed));
    let server = match log {
        Some(p) => TracingServer::with_log(authority, ServerConfig::default(), p)
            .map_err(|e| failure(format!("{}: {e}", p.display())))?,
        None => TracingServer::new(authority, ServerConfig::default()),
    };
    let service = Arc::new(WireService::new(Arc::new(server), seed, Clock::System));
    let listener = TcpListener::bind(addr).map_err(|e| failure(format!("{addr}: {e}")))?;
    let local = listener.local_addr().map_err(|e| failure(e.to_string()))?;
    let _ = writeln!(stdout, "listening on {local}");
    let _ = stdout.flush();
    let shutdown = Arc::new(AtomicBool::new(false));
    if let Some(secs) = for_secs {
        let flag = shutdown.clone();
        std::thread::spawn(move || {
            std::thread::sleep(Duration::from_secs(secs));
            flag.store(true, Ordering::SeqCst);
        });
    }
    serve_tcp(listener, service, shutdown).map_err(|e| failure(e.to_string()))
}

fn cmd_keys(seed: u64, start: u64, frames: u64, stdout: &mut dyn std::io::Write) -> CliResult {
    let key_seed: [u8; 32] = ChaCha20Rng::seed_from_u64(seed).gen();
    let mut device = Device::new(DeviceConfig::default(), key_seed);
    let period = device.policy().frame_period;
    let mut out = String::new();
    let _ = writeln!(out, "frame\tephemeral_id\tpublic_key");
    for frame in start..start + frames {
        let offer = device.offer(frame * period);
        let _ = writeln!(out, "{frame}\t{}\t{}", offer.ephemeral_id.to_hex(), offer.public_key.to_hex());
    }
    write_out(None, &out, stdout)
}

fn cmd_attack(
    configs: &[String],
    seed: Option<u64>,
    scheme: Option<Scheme>,
    out: Option<&Path>,
    jobs: usize,
    stdout: &mut dyn std::io::Write,
) -> CliResult {
    let names: Vec<String> =
        if configs.is_empty() { ATTACK_SCENARIOS.iter().map(|s| s.to_string()).collect() } else { configs.to_vec() };
    let schemes: Vec<Scheme> = scheme.map(|s| vec![s]).unwrap_or_else(|| Scheme::ALL.to_vec());
    let mut runs = Vec::new();
    for name in &names {
        let base = load_config(name)?;
        for s in &schemes {
            let mut cfg = base.clone();
            cfg.scheme = *s;
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            runs.push(cfg);
        }
    }
    let reports = run_many(runs, jobs)?;
    if let Some(dir) = out {
        for r in &reports {
            let path = dir.join(format!("{}-{}.json", r.name, r.scheme));
            write_out(Some(&path), &r.to_json(), stdout)?;
        }
    }
    let mut text = String::new();
    let _ = writeln!(text, "{:<32} {:<14} {:>9} {:>7} {:>8}", "scenario", "scheme", "successes", "false", "rate");
    for r in &reports {
        let (s, a) = r.attacks.iter().fold((0, 0), |acc, x| (acc.0 + x.successes, acc.1 + x.attempts));
        let _ = writeln!(
            text,
            "{:<32} {:<14} {:>9} {:>7} {:>8.4}",
            r.name,
            r.scheme.to_string(),
            format!("{s}/{a}"),
            r.false_notification_count,
            r.attack_success_rate
        );
    }
    text.push('\n');
    text.push_str(&comparison_table(&reports));
    write_out(None, &text, stdout)
}

/// One cell of the comparison matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Resist,
    Bounded(u64),
    Vulnerable,
    NotTested,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Verdict::Resist => write!(f, "resist"),
            Verdict::Bounded(n) => write!(f, "bounded({n})"),
            Verdict::Vulnerable => write!(f, "vulnerable"),
            Verdict::NotTested => write!(f, "n/a"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SchemeRow {
    pub scheme: Scheme,
    pub relay: Verdict,
    pub realtime_relay: Verdict,
    pub replay: Verdict,
    pub fake_claim: Verdict,
    pub linkability: Verdict,
    pub max_track_s: Option<u64>,
    pub first_latency_days: Option<u64>,
}

fn merge(a: Verdict, b: Verdict) -> Verdict {
    use Verdict::*;
    match (a, b) {
        (Vulnerable, _) | (_, Vulnerable) => Vulnerable,
        (Bounded(x), Bounded(y)) => Bounded(x.max(y)),
        (Bounded(x), _) | (_, Bounded(x)) => Bounded(x),
        (Resist, _) | (_, Resist) => Resist,
        _ => NotTested,
    }
}

/// Per-scheme verdicts, sorted by scheme name. Frame period bounds what
/// counts as resisting linkage.
pub fn comparison_rows(reports: &[ScenarioReport]) -> Vec<SchemeRow> {
    let mut rows: BTreeMap<String, SchemeRow> = BTreeMap::new();
    for r in reports {
        let row = rows.entry(r.scheme.to_string()).or_insert(SchemeRow {
            scheme: r.scheme,
            relay: Verdict::NotTested,
            realtime_relay: Verdict::NotTested,
            replay: Verdict::NotTested,
            fake_claim: Verdict::NotTested,
            linkability: Verdict::NotTested,
            max_track_s: None,
            first_latency_days: None,
        });
        for a in &r.attacks {
            let v = if a.successes == 0 {
                Verdict::Resist
            } else if a.kind == AdversaryKind::RelayTwoway && a.max_victims_per_frame > 0 {
                Verdict::Bounded(a.max_victims_per_frame)
            } else {
                Verdict::Vulnerable
            };
            match a.kind {
                AdversaryKind::RelayOneway => row.relay = merge(row.relay, v),
                AdversaryKind::RelayTwoway => row.realtime_relay = merge(row.realtime_relay, v),
                AdversaryKind::KissReplay if a.attempts > 0 => row.replay = merge(row.replay, v),
                AdversaryKind::KissReplay => {}
                AdversaryKind::FakeClaimer => row.fake_claim = merge(row.fake_claim, v),
                AdversaryKind::Eavesdropper => {
                    let track = r.max_linkability_window_s;
                    row.max_track_s = Some(row.max_track_s.unwrap_or(0).max(track));
                    let v = if track <= crate::time::TimeFramePolicy::default().frame_period {
                        Verdict::Resist
                    } else {
                        Verdict::Vulnerable
                    };
                    row.linkability = merge(row.linkability, v);
                }
            }
        }
        let first = r
            .notifications
            .iter()
            .filter(|n| n.genuine && n.level == crate::exposure::ExposureLevel::Direct)
            .filter_map(|n| n.latency_days)
            .min();
        if let Some(d) = first {
            row.first_latency_days = Some(row.first_latency_days.map_or(d, |x| x.min(d)));
        }
    }
    rows.into_values().collect()
}

pub fn comparison_table(reports: &[ScenarioReport]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<14} {:<12} {:<15} {:<12} {:<12} {:<12} {:>12} {:>13}",
        "scheme", "relay", "realtime_relay", "replay", "fake_claim", "linkability", "max_track_s", "latency_days"
    );
    let opt = |v: Option<u64>| v.map_or("-".to_owned(), |x| x.to_string());
    for row in comparison_rows(reports) {
        let _ = writeln!(
            out,
            "{:<14} {:<12} {:<15} {:<12} {:<12} {:<12} {:>12} {:>13}",
            row.scheme.to_string(),
            row.relay.to_string(),
            row.realtime_relay.to_string(),
            row.replay.to_string(),
            row.fake_claim.to_string(),
            row.linkability.to_string(),
            opt(row.max_track_s),
            opt(row.first_latency_days)
        );
    }
    out
}

fn cmd_report(
    paths: &[PathBuf],
    payload: bool,
    infected: u64,
    sample: u64,
    out: Option<&Path>,
    stdout: &mut dyn std::io::Write,
) -> CliResult {
    if paths.is_empty() && !payload {
        return Err(usage("no reports given"));
    }
    let mut text = String::new();
    if !paths.is_empty() {
        let mut reports = Vec::new();
        for p in paths {
            let raw = std::fs::read_to_string(p).map_err(|e| usage(format!("{}: {e}", p.display())))?;
            reports.push(ScenarioReport::from_json(&raw).map_err(|e| usage(format!("{}: {e}", p.display())))?);
        }
        text.push_str(&comparison_table(&reports));
    }
    if payload {
        if sample == 0 {
            return Err(usage("--sample must be positive"));
        }
        if !text.is_empty() {
            text.push('\n');
        }
        let feed = estimates::daily_feed(infected, sample, 0);
        text.push_str(&estimates::render(&estimates::table(&feed)));
    }
    write_out(out, &text, stdout)
}

fn cmd_verify_vectors(
    file: Option<&Path>,
    emit: Option<&Path>,
    count: usize,
    stdout: &mut dyn std::io::Write,
) -> CliResult {
    if let Some(path) = emit {
        let v = VectorFile::generate(0x7463_7665_6374, count);
        return write_out(Some(path), &v.to_json(), stdout);
    }
    let vectors = match file {
        Some(p) => {
            let raw = std::fs::read_to_string(p).map_err(|e| usage(format!("{}: {e}", p.display())))?;
            serde_json::from_str(&raw).map_err(|e| usage(format!("{}: {e}", p.display())))?
        }
        None => VectorFile::bundled(),
    };
    let bad = vectors.verify();
    if bad.is_empty() {
        let _ = writeln!(stdout, "ok: {} vectors", vectors.len());
        Ok(())
    } else {
        Err(failure(format!("{} mismatching vectors: {}", bad.len(), bad.join(", "))))
    }
}

fn open_logged(log: &Path) -> Result<TracingServer, CliError> {
    TracingServer::with_log(Arc::new(HealthAuthority::new(0)), ServerConfig::default(), log)
        .map_err(|e| failure(format!("{}: {e}", log.display())))
}

fn cmd_ingest(log: &Path, input: &Path, close_epoch: bool, stdout: &mut dyn std::io::Write) -> CliResult {
    let raw = std::fs::read_to_string(input).map_err(|e| usage(format!("{}: {e}", input.display())))?;
    let records: Vec<TokenUploadRecord> =
        serde_json::from_str(&raw).map_err(|e| usage(format!("{}: {e}", input.display())))?;
    let server = open_logged(log)?;
    // the operator vouches for the upload, so it gets a fresh TAN
    let tan = server.authority().issue_tan(b"ingest", 0);
    let accepted =
        server.upload_infected(&tan.value, &records, 0).map_err(|e| failure(format!("upload rejected: {e}")))?;
    if close_epoch {
        server.advance_epoch();
    }
    let _ = writeln!(stdout, "accepted {accepted} records, epoch {}", server.current_epoch());
    Ok(())
}

fn cmd_dump_stats(log: &Path, stdout: &mut dyn std::io::Write) -> CliResult {
    if !log.exists() {
        return Err(usage(format!("{}: no such file", log.display())));
    }
    let server = open_logged(log)?;
    let mut per_epoch: BTreeMap<u64, u64> = BTreeMap::new();
    for (epoch, _) in server.export_records() {
        *per_epoch.entry(epoch).or_default() += 1;
    }
    let value = serde_json::json!({
        "current_epoch": server.current_epoch(),
        "records_per_epoch": per_epoch,
        "stats": server.stats_snapshot(),
    });
    let text = serde_json::to_string_pretty(&value).expect("stats serialize") + "\n";
    write_out(None, &text, stdout)
}
