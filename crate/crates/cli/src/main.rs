//! `scwqkd`: simulate sessions, sweep link loss, record detection logs and
//! distill keys from them.
//!
//! Exit codes: 0 success, 2 configuration error, 3 I/O error, 4 malformed
//! input data, 1 anything else.

mod format;

use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use scwqkd_core::config::{config_to_text, parse_config};
use scwqkd_core::distill::DistillParams;
use scwqkd_core::presets;
use scwqkd_core::protocol::DetectionLog;
use scwqkd_core::session::{
    block_log, consistency_report, distill_log, keys_per_minute, reference, run_session_with,
    stability_monitor, CheckStatus, Schedule, SessionConfig, SessionReport,
};
use scwqkd_core::Error;

use crate::format::{blocks_csv, header_lines, sig12};

#[derive(Parser)]
#[command(
    name = "scwqkd",
    version,
    about = "Subcarrier-wave QKD link simulator and key distiller"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a block-wise session and write its report.
    Simulate(SimulateArgs),
    /// Closed-form rates over a range of channel losses.
    Sweep(SweepArgs),
    /// Simulate one block and write its detection log.
    Record(RecordArgs),
    /// Distill a secret key from a detection log.
    Distill(DistillArgs),
    /// List built-in presets.
    Presets,
}

#[derive(Args)]
struct ConfigArgs {
    /// Built-in scenario.
    #[arg(long, conflicts_with = "config")]
    preset: Option<String>,
    /// Config file (TOML with [source], [channel], [receiver], [distill], [session]).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ReportFormat {
    Json,
    Csv,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScheduleArg {
    Interleaved,
    Concurrent,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Overrides the number of blocks.
    #[arg(long)]
    blocks: Option<u64>,
    /// Report path; the report goes to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    format: ReportFormat,
    #[arg(long, value_enum, default_value = "interleaved")]
    schedule: ScheduleArg,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Inclusive loss range in dB, as START:END:STEP.
    #[arg(long)]
    loss_range: String,
    /// CSV path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RecordArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Overrides the block length in cycles.
    #[arg(long)]
    cycles: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DistillArgs {
    /// Detection log in the `scwqkd-log v1` format.
    log: PathBuf,
    /// Distillation parameters come from the [distill] section, the
    /// classical-channel seed from [session].
    #[command(flatten)]
    config: ConfigArgs,
    /// Key file (hex, one key per line); stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug)]
enum CliError {
    Config(String),
    Io(String),
    Malformed(String),
    Other(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Other(_) => 1,
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::Malformed(_) => 4,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Io(m) => write!(f, "I/O error: {m}"),
            CliError::Malformed(m) => write!(f, "malformed input: {m}"),
            CliError::Other(m) => write!(f, "{m}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidConfig { .. } | Error::InvalidArgument(_) => {
                CliError::Config(e.to_string())
            }
            Error::Io(_) => CliError::Io(e.to_string()),
            Error::MalformedLog { .. } => CliError::Malformed(e.to_string()),
            other => CliError::Other(other.to_string()),
        }
    }
}

fn io_error(path: &Path, e: io::Error) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

type CliResult<T> = std::result::Result<T, CliError>;

struct Resolved {
    config: SessionConfig,
    source: String,
    calibrated: Vec<String>,
}

fn resolve(args: &ConfigArgs) -> CliResult<Resolved> {
    let mut resolved = match (&args.preset, &args.config) {
        (Some(name), _) => {
            let p = presets::by_name(name).ok_or_else(|| {
                let known: Vec<_> = presets::all().iter().map(|p| p.name).collect();
                CliError::Config(format!(
                    "unknown preset {name:?} (known: {})",
                    known.join(", ")
                ))
            })?;
            Resolved {
                config: p.config,
                source: format!("preset {}", p.name),
                calibrated: p.calibrated.iter().map(|s| s.to_string()).collect(),
            }
        }
        (None, Some(path)) => {
            let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
            let config = parse_config(&text)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            Resolved {
                config,
                source: format!("config {}", path.display()),
                calibrated: Vec::new(),
            }
        }
        (None, None) => Resolved {
            config: SessionConfig::default(),
            source: "defaults".into(),
            calibrated: Vec::new(),
        },
    };
    if let Some(seed) = args.seed {
        resolved.config.seed = seed;
    }
    Ok(resolved)
}

fn write_output(path: Option<&Path>, body: &str) -> CliResult<()> {
    match path {
        Some(p) => fs::write(p, body).map_err(|e| io_error(p, e)),
        None => io::stdout()
            .lock()
            .write_all(body.as_bytes())
            .map_err(|e| CliError::Io(e.to_string())),
    }
}

fn summary_text(report: &SessionReport, source: &str) -> String {
    let s = &report.summary;
    let c = &report.metadata.config;
    let opt = |v: Option<f64>| v.map_or("n/a".to_string(), |q| format!("{q:.5}"));
    let mut out = String::new();
    let mut line = |l: String| {
        out.push_str(&l);
        out.push('\n');
    };
    line(format!("{source}, seed {}", report.metadata.seed));
    line(format!(
        "blocks: {} of {:.0} s ({} non-empty, {} aborted), duration {:.0} s",
        s.n_blocks, s.block_duration_s, s.non_empty_blocks, s.aborted_blocks, s.duration_s
    ));
    line(format!(
        "mean QBER: {} (min {}, max {})",
        opt(s.mean_qber),
        opt(s.min_qber),
        opt(s.max_qber)
    ));
    line(format!("mean sift rate: {:.4} bps", s.mean_sift_rate_bps));
    line(format!(
        "mean secret rate: {:.4} bps",
        s.mean_secret_rate_bps
    ));
    line(format!(
        "total secret bits: {} (sifted {}, leaked {})",
        s.total_secret_bits, s.total_sifted_bits, s.total_leaked_bits
    ));
    if let Some(a) = &s.analytic {
        line(format!(
            "analytic prediction at loss {} dB, epsilon_sys {}: sift {} bps, QBER {}, secret {} bps",
            c.channel.loss_db,
            c.epsilon_sys,
            sig12(a.sift_rate_bps),
            a.qber.map_or("n/a".into(), sig12),
            sig12(a.secret_rate_bps)
        ));
    }
    if s.non_empty_blocks > 0 {
        let (lo, hi) = reference::QBER_BAND;
        let out_of_band = stability_monitor(report, lo, hi);
        line(format!(
            "QBER outside [{lo}, {hi}]: {} of {} non-empty blocks",
            out_of_band.len(),
            s.non_empty_blocks
        ));
    }
    line(format!(
        "256-bit keys per minute: {}",
        keys_per_minute(s.mean_secret_rate_bps, reference::KEY_BITS)
    ));
    for check in consistency_report(report) {
        let status = match check.status {
            CheckStatus::Pass => "pass",
            CheckStatus::Fail => "FAIL",
            CheckStatus::NotApplicable => "n/a",
        };
        line(format!("check {}: {status} ({})", check.name, check.detail));
    }
    if !report.metadata.calibrated.is_empty() {
        line(format!(
            "calibrated/assumed (not measured): {}",
            report.metadata.calibrated.join(", ")
        ));
    }
    out
}

fn cmd_simulate(args: SimulateArgs) -> CliResult<()> {
    let resolved = resolve(&args.config)?;
    let mut config = resolved.config;
    if let Some(b) = args.blocks {
        config.n_blocks = b;
    }
    config.validate()?;
    let schedule = match args.schedule {
        ScheduleArg::Interleaved => Schedule::Interleaved,
        ScheduleArg::Concurrent => Schedule::Concurrent,
    };
    let mut report = run_session_with(&config, schedule, None)?;
    report.metadata.calibrated = resolved.calibrated;
    let body = match args.format {
        ReportFormat::Json => report.to_json() + "\n",
        ReportFormat::Csv => blocks_csv(&report, "simulate"),
    };
    write_output(args.out.as_deref(), &body)?;
    let summary = summary_text(&report, &resolved.source);
    if args.out.is_some() {
        print!("{summary}");
    } else {
        eprint!("{summary}");
    }
    Ok(())
}

/// Parses `START:END:STEP` into the inclusive list of points, each rounded
/// to 12 significant digits.
fn parse_loss_range(spec: &str) -> CliResult<Vec<f64>> {
    const MAX_POINTS: f64 = 1e6;
    let bad = |why: &str| CliError::Config(format!("--loss-range {spec:?}: {why}"));
    let parts: Vec<&str> = spec.split(':').collect();
    let [a, b, step] = parts.as_slice() else {
        return Err(bad("expected START:END:STEP"));
    };
    let num = |s: &str| {
        s.trim()
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| bad(&format!("{s:?} is not a finite number")))
    };
    let (a, b, step) = (num(a)?, num(b)?, num(step)?);
    if step <= 0.0 {
        return Err(bad("step must be > 0"));
    }
    if b < a {
        return Err(bad("end must be ≥ start"));
    }
    let span = ((b - a) / step * (1.0 + 1e-12)).floor();
    if span + 1.0 > MAX_POINTS {
        return Err(bad("more than 1e6 points"));
    }
    Ok((0..=span as u64)
        .map(|i| format::round12(a + i as f64 * step))
        .collect())
}

fn cmd_sweep(args: SweepArgs) -> CliResult<()> {
    let resolved = resolve(&args.config)?;
    let losses = parse_loss_range(&args.loss_range)?;
    let base = resolved.config;
    base.validate()?;
    let mut body = String::new();
    for l in header_lines("sweep", &base) {
        body.push_str(&l);
        body.push('\n');
    }
    body.push_str(&format!("# loss_range = {}\n", args.loss_range));
    body.push_str("loss_db,sift_rate_bps,qber,secret_rate_bps\n");
    for loss in losses {
        let mut c = base;
        c.channel.loss_db = loss;
        let rates = c.analytic()?;
        body.push_str(&format!(
            "{},{},{},{}\n",
            sig12(loss),
            sig12(rates.sift_rate_bps),
            rates.qber.map_or(String::new(), sig12),
            sig12(rates.secret_rate_bps)
        ));
    }
    write_output(args.out.as_deref(), &body)
}

fn cmd_record(args: RecordArgs) -> CliResult<()> {
    let resolved = resolve(&args.config)?;
    let mut config = resolved.config;
    if let Some(c) = args.cycles {
        config.block_cycles = c;
    }
    config.validate()?;
    let log = block_log(&config, &config.budget()?, 0)?;
    let file = File::create(&args.out).map_err(|e| io_error(&args.out, e))?;
    let comments: Vec<String> = header_lines("record", &config)
        .into_iter()
        .map(|l| l.trim_start_matches("# ").to_string())
        .collect();
    log.write_to(BufWriter::new(file), &comments)
        .map_err(|e| match e {
            Error::Io(m) => CliError::Io(format!("{}: {m}", args.out.display())),
            other => other.into(),
        })?;
    println!("{log} written to {}", args.out.display());
    Ok(())
}

fn cmd_distill(args: DistillArgs) -> CliResult<()> {
    let resolved = resolve(&args.config)?;
    let params: DistillParams = resolved.config.distill;
    params.validate()?;
    let seed = resolved.config.seed;
    let file = File::open(&args.log).map_err(|e| io_error(&args.log, e))?;
    let log = DetectionLog::read_from(BufReader::new(file)).map_err(|e| match e {
        Error::Io(m) => CliError::Io(format!("{}: {m}", args.log.display())),
        other => CliError::Malformed(format!("{}: {other}", args.log.display())),
    })?;
    let run = distill_log(&log, &params, seed, None)?;
    let r = &run.result;

    let mut body = String::new();
    body.push_str(&format!("# scwqkd {} distill\n", env!("CARGO_PKG_VERSION")));
    body.push_str(&format!("# log = {}\n", args.log.display()));
    body.push_str(&format!("# seed = {seed}\n"));
    body.push_str(&format!(
        "# distill: sample_fraction = {}, f_ec = {}, epsilon_pa = {:e}, qber_abort = {}\n",
        params.sample_fraction, params.f_ec, params.epsilon_pa, params.qber_abort
    ));
    body.push_str(&format!("# secret_bits = {}\n", run.alice_key.len()));
    if run.verified() && !run.alice_key.is_empty() {
        body.push_str(&run.alice_key.to_hex());
        body.push('\n');
    }
    write_output(args.out.as_deref(), &body)?;

    let mut summary = vec![
        format!("log: {log}"),
        format!("sifted bits: {}", r.sifted_bits),
    ];
    if r.qber.is_none() {
        summary.push(format!(
            "too few sifted bits to distill (need {})",
            scwqkd_core::endpoint::MIN_RECONCILE_BITS
        ));
    } else {
        let opt = |v: Option<f64>| v.map_or("n/a".to_string(), |q| format!("{q:.5}"));
        summary.push(format!(
            "estimated QBER: {}, true QBER: {}",
            opt(r.qber_estimate),
            opt(r.qber)
        ));
        summary.push(format!(
            "leaked parity bits: {}, corrected bits: {}",
            r.leaked_bits, r.corrected_bits
        ));
        match r.abort_reason {
            Some(reason) => summary.push(format!("aborted: {reason:?}")),
            None => summary.push(format!(
                "secret bits: {}, keys verified equal: {}",
                run.alice_key.len(),
                run.verified()
            )),
        }
    }
    let summary = summary.join("\n") + "\n";
    if args.out.is_some() {
        print!("{summary}");
    } else {
        eprint!("{summary}");
    }
    Ok(())
}

fn cmd_presets() -> CliResult<()> {
    for p in presets::all() {
        println!("{}: {}", p.name, p.description);
        println!("  calibrated/assumed: {}", p.calibrated.join(", "));
        for l in config_to_text(&p.config).lines() {
            println!("  {l}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Record(a) => cmd_record(a),
        Command::Distill(a) => cmd_distill(a),
        Command::Presets => cmd_presets(),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("scwqkd: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loss_range_parsing() {
        let v = parse_loss_range("0:50:5").unwrap();
        assert_eq!(v.len(), 11);
        assert_eq!(v[10], 50.0);
        let v = parse_loss_range("0:1:0.1").unwrap();
        assert_eq!(v.len(), 11);
        assert_eq!(v[3], 0.3);
        assert_eq!(parse_loss_range("37:37:1").unwrap(), vec![37.0]);
        for bad in ["0:50:0", "0:50:-1", "10:0:1", "0:50", "a:b:c", "0:inf:1"] {
            assert!(
                matches!(parse_loss_range(bad), Err(CliError::Config(_))),
                "{bad}"
            );
        }
    }

    #[test]
    fn error_exit_codes() {
        let e: CliError = Error::MalformedLog {
            line: 3,
            reason: "x".into(),
        }
        .into();
        assert_eq!(e.exit_code(), 4);
        let e: CliError = Error::Io("gone".into()).into();
        assert_eq!(e.exit_code(), 3);
        let e: CliError = Error::InvalidArgument("bad".into()).into();
        assert_eq!(e.exit_code(), 2);
    }
}
