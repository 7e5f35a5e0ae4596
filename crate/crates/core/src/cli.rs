//! Command-line front end. The binary is a one-line wrapper around [`main_with`].

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::broker::Posture;
use crate::metrics::{render_report, Report};
use crate::scenario::{check_report, run, run_experiments, validate, ConfigError, Experiment, RunError, RunOutput, ScenarioConfig, REPORT_JSON};

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_INVARIANT: i32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Table,
    Machine,
}

#[derive(Debug, Parser)]
#[command(name = "edgeswarm", version, about = "Edge agent swarm simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Scenario file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the scenario seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory; nothing is written without one.
    #[arg(long, global = true, env = "EDGESWARM_OUT")]
    pub out: Option<PathBuf>,
    /// Overrides every posture-derived setting in the scenario.
    #[arg(long, global = true, value_parser = parse_posture)]
    pub posture: Option<Posture>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Table)]
    pub format: Format,
}

fn parse_posture(s: &str) -> Result<Posture, String> {
    match s {
        "baseline" => Ok(Posture::Baseline),
        "hardened" => Ok(Posture::Hardened),
        other => Err(format!("expected baseline or hardened, got {other:?}")),
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a scenario file without running it.
    Validate,
    /// Run every experiment the scenario configures.
    Run,
    /// Run all attack kinds against the scenario's posture.
    AttackSuite,
    /// Echo-probe round trips per target and payload size.
    LatencyBench,
    /// Partition the bridge right after a safety command.
    FailoverBench,
    /// Egress accounting plus the induced-fallback comparison.
    EgressAudit,
    /// Re-render a saved report.json (from --out, or the given path).
    Report { path: Option<PathBuf> },
}

struct Io<'a> {
    out: &'a mut dyn Write,
    err: &'a mut dyn Write,
}

/// Parses `args` (program name first) and runs the command. Returns the exit code.
pub fn main_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
            let _ = if e.use_stderr() {
                write!(err, "{}", e.render())
            } else {
                write!(out, "{}", e.render())
            };
            return code;
        }
    };
    let mut io = Io { out, err };
    execute(&cli, &mut io)
}

enum LoadError {
    Unreadable(String),
    Invalid(Vec<ConfigError>),
}

fn load(common: &Common, default_name: &str) -> Result<ScenarioConfig, LoadError> {
    let text = match &common.config {
        Some(p) => std::fs::read_to_string(p).map_err(|e| LoadError::Unreadable(format!("{}: {e}", p.display())))?,
        None => format!("name = {default_name:?}\n"),
    };
    let mut cfg = ScenarioConfig::parse(&text).map_err(|mut e| {
        if let Some(p) = &common.config {
            e.path = format!("{}: {}", p.display(), e.path);
        }
        LoadError::Invalid(vec![e])
    })?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(p) = common.posture {
        cfg.override_posture(p);
    }
    Ok(cfg)
}

fn load_failed(io: &mut Io<'_>, format: Format, e: LoadError) -> i32 {
    match e {
        LoadError::Unreadable(msg) => {
            let _ = writeln!(io.err, "error: {msg}");
            EXIT_IO
        }
        LoadError::Invalid(errs) => report_errors(io, format, &errs),
    }
}

fn report_errors(io: &mut Io<'_>, format: Format, errs: &[ConfigError]) -> i32 {
    match format {
        Format::Table => {
            for e in errs {
                let _ = writeln!(io.err, "error: {e}");
            }
        }
        Format::Machine => {
            let body = serde_json::json!({ "valid": false, "errors": errs });
            let _ = writeln!(io.out, "{body}");
        }
    }
    EXIT_INVALID
}

fn emit(io: &mut Io<'_>, common: &Common, output: &RunOutput) -> i32 {
    if let Some(dir) = &common.out {
        if let Err(e) = output.write_to(dir) {
            let _ = writeln!(io.err, "error: {e}");
            return EXIT_IO;
        }
    }
    let _ = match common.format {
        Format::Table => write!(io.out, "{}", render_report(&output.report)),
        Format::Machine => write!(io.out, "{}", output.report.to_json()),
    };
    EXIT_OK
}

fn execute(cli: &Cli, io: &mut Io<'_>) -> i32 {
    let common = &cli.common;
    let experiments: &[Experiment] = match &cli.command {
        Command::Report { path } => return rerender(io, common, path.as_deref()),
        Command::Validate => {
            let cfg = match load(common, "unnamed") {
                Ok(c) => c,
                Err(e) => return load_failed(io, common.format, e),
            };
            let errs = validate(&cfg);
            if !errs.is_empty() {
                return report_errors(io, common.format, &errs);
            }
            let _ = match common.format {
                Format::Table => writeln!(io.out, "{}: ok", cfg.name),
                Format::Machine => writeln!(io.out, "{}", serde_json::json!({ "valid": true, "errors": [] })),
            };
            return EXIT_OK;
        }
        Command::Run => &[],
        Command::AttackSuite => &[Experiment::AttackSuite],
        Command::LatencyBench => &[Experiment::Latency],
        Command::FailoverBench => &[Experiment::Failover],
        Command::EgressAudit => &[Experiment::Egress, Experiment::Fallback],
    };
    let default_name = match &cli.command {
        Command::AttackSuite => "attack-suite",
        Command::LatencyBench => "latency-bench",
        Command::FailoverBench => "failover-bench",
        Command::EgressAudit => "egress-audit",
        _ => "run",
    };
    let cfg = match load(common, default_name) {
        Ok(c) => c,
        Err(e) => return load_failed(io, common.format, e),
    };
    let result = if experiments.is_empty() {
        run(&cfg)
    } else {
        run_experiments(&cfg, experiments)
    };
    match result {
        Ok(output) => emit(io, common, &output),
        Err(RunError::Invalid(errs)) => report_errors(io, common.format, &errs),
        Err(RunError::Io { path, source }) => {
            let _ = writeln!(io.err, "error: {}: {source}", path.display());
            EXIT_IO
        }
        Err(e) => {
            let _ = writeln!(io.err, "error: {e}");
            EXIT_INVARIANT
        }
    }
}

fn rerender(io: &mut Io<'_>, common: &Common, path: Option<&Path>) -> i32 {
    let file = match (path, &common.out) {
        (Some(p), _) if p.is_dir() => p.join(REPORT_JSON),
        (Some(p), _) => p.to_path_buf(),
        (None, Some(dir)) => dir.join(REPORT_JSON),
        (None, None) => {
            let _ = writeln!(io.err, "error: report needs a path or --out");
            return EXIT_INVALID;
        }
    };
    let text = match std::fs::read_to_string(&file) {
        Ok(t) => t,
        Err(e) => {
            let _ = writeln!(io.err, "error: {}: {e}", file.display());
            return EXIT_IO;
        }
    };
    let report = match Report::from_json(&text) {
        Ok(r) => r,
        Err(e) => {
            let _ = writeln!(io.err, "error: {}: {e}", file.display());
            return EXIT_INVALID;
        }
    };
    if let Err(e) = check_report(&report) {
        let _ = writeln!(io.err, "error: {}: invariant violated: {e}", file.display());
        return EXIT_INVARIANT;
    }
    let _ = match common.format {
        Format::Table => write!(io.out, "{}", render_report(&report)),
        Format::Machine => write!(io.out, "{}", report.to_json()),
    };
    EXIT_OK
}
