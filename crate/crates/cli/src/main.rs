use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use qkdlab::harness::{self, Report, ScenarioConfig, EXPERIMENTS};
use qkdlab::persist::{load_log, SessionStore};
use qkdlab::transport::partition;
use serde_json::json;

/// Seed used by `reproduce` when none is given.
const DEFAULT_REPRODUCE_SEED: u64 = 20240601;

#[derive(Parser)]
#[command(name = "qkdlab", version, about = "Relay QKD network simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Top-level seed; overrides the config's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Table)]
    format: Format,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario from a JSON config.
    Run { config: PathBuf },
    /// Run a built-in experiment, or `all` of them.
    Reproduce { name: String },
    /// Load and check a session log, optionally adding it to the store at --out.
    Ingest { path: PathBuf },
    /// Recompute a report from a run directory or from session logs.
    Report {
        #[arg(required = true)]
        logs: Vec<PathBuf>,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Table,
}

fn print(report: &Report, format: Format) {
    match format {
        Format::Json => print!("{}", report.to_json()),
        Format::Table => print!("{}", report.to_table()),
    }
}

fn run(cli: &Cli) -> Result<bool> {
    match &cli.command {
        Command::Run { config } => {
            let cfg = ScenarioConfig::load(config)?;
            let report = harness::run(&cfg, cli.seed, cli.out.as_deref())?;
            print(&report, cli.format);
            Ok(true)
        }
        Command::Reproduce { name } => {
            let names: Vec<&str> = if name == "all" {
                EXPERIMENTS.to_vec()
            } else {
                vec![name.as_str()]
            };
            let seed = cli.seed.unwrap_or(DEFAULT_REPRODUCE_SEED);
            if let Some(dir) = &cli.out {
                fs::create_dir_all(dir)?;
            }
            let mut ok = true;
            for n in names {
                let report = harness::reproduce(n, seed)?;
                ok &= report.passed();
                if let Some(dir) = &cli.out {
                    fs::write(dir.join(format!("{n}.json")), report.to_json())?;
                }
                print(&report, cli.format);
            }
            Ok(ok)
        }
        Command::Ingest { path } => {
            let session = load_log(path)?;
            let partitions = partition(&session);
            match cli.format {
                Format::Json => {
                    let rows: Vec<_> = partitions
                        .iter()
                        .map(|(p, s)| json!({"partition": p.to_string(), "slots": s.len()}))
                        .collect();
                    let summary = json!({
                        "session": session.session_id,
                        "slots": session.slots,
                        "relays": session.relay_count(),
                        "partitions": rows,
                    });
                    println!("{summary}");
                }
                Format::Table => {
                    println!("session   {}", session.session_id);
                    println!("slots     {}", session.slots);
                    println!("relays    {}", session.relay_count());
                    for (p, slots) in &partitions {
                        println!("  {p:<12} {:<12} {}", p.render_links(), slots.len());
                    }
                }
            }
            if let Some(dir) = &cli.out {
                let stored = SessionStore::open(dir)?.append(&session)?;
                eprintln!("stored {}", stored.display());
            }
            Ok(true)
        }
        Command::Report { logs } => {
            let report = if logs.len() == 1 && logs[0].join("scenario.json").is_file() {
                harness::report_from_dir(&logs[0])?
            } else {
                harness::report_from_logs(&expand_logs(logs)?)?
            };
            print(&report, cli.format);
            Ok(true)
        }
    }
}

/// Directories expand to the `.log` files they contain.
fn expand_logs(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            let dir = if p.join("sessions").is_dir() {
                p.join("sessions")
            } else {
                p.clone()
            };
            let mut logs: Vec<PathBuf> = fs::read_dir(&dir)
                .with_context(|| format!("reading {}", dir.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|e| e == "log"))
                .collect();
            logs.sort();
            out.extend(logs);
        } else {
            out.push(p.clone());
        }
    }
    if out.is_empty() {
        bail!("no session logs found");
    }
    Ok(out)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
