//! `vader`: run scenarios, compute exact completion odds, replay traces.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use serde_json::json;
use vader_core::sim::live::{run_live, LiveConfig};
use vader_core::sim::trace::{read_jsonl, write_jsonl};
use vader_core::sim::{derive_completion_probability, fit_hardware_rate, report, run_trials, Scenario};

#[derive(Parser)]
#[command(name = "vader", version, about = "Multi-robot plan/execute/detect simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run trials of a scenario and print a JSON report.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        trials: u64,
        /// Write the JSON-lines trace here.
        #[arg(long)]
        trace_out: Option<PathBuf>,
        /// Run one episode on the wall clock with the board served for
        /// operator consoles.
        #[arg(long)]
        live_console: bool,
        /// HTTP address for the console facade in live mode.
        #[arg(long, default_value = "127.0.0.1:8080")]
        listen: SocketAddr,
        /// Address for the line-delimited JSON stream in live mode.
        #[arg(long)]
        tcp: Option<SocketAddr>,
        /// Simulated seconds per real second in live mode.
        #[arg(long, default_value_t = 1.0)]
        time_scale: f64,
        /// Keep simulated humans in live mode.
        #[arg(long)]
        simulated_humans: bool,
    },
    /// Exact completion probability over every random branch.
    Oracle {
        #[arg(long)]
        scenario: PathBuf,
        /// Instead, find the hardware failure rate giving this completion
        /// probability.
        #[arg(long)]
        fit_completion: Option<f64>,
    },
    /// Recompute the report from a saved trace.
    Replay {
        #[arg(long)]
        trace: PathBuf,
    },
}

fn print(v: &serde_json::Value) -> Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, v)?;
    writeln!(out)?;
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Run {
            scenario,
            seed,
            trials,
            trace_out,
            live_console,
            listen,
            tcp,
            time_scale,
            simulated_humans,
        } => {
            let s = Scenario::load(&scenario).with_context(|| format!("loading {}", scenario.display()))?;
            let trace = if live_console {
                let config = LiveConfig {
                    tcp,
                    http: Some(listen),
                    time_scale,
                    simulate_humans: simulated_humans,
                    ..LiveConfig::default()
                };
                let (trace, _) = run_live(&s, seed, &config, |server| {
                    if let Some(a) = server.http_addr() {
                        eprintln!("console facade on http://{a}");
                    }
                    if let Some(a) = server.tcp_addr() {
                        eprintln!("stream protocol on {a}");
                    }
                })?;
                trace
            } else {
                run_trials(&s, seed, trials)?.0
            };
            if let Some(path) = trace_out {
                let mut w = BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?);
                write_jsonl(&mut w, &trace)?;
                w.flush()?;
            }
            let r = report(&trace);
            print(&serde_json::to_value(&r)?)?;
            Ok(r.all_terminated)
        }
        Command::Oracle {
            scenario,
            fit_completion,
        } => {
            let s = Scenario::load(&scenario).with_context(|| format!("loading {}", scenario.display()))?;
            match fit_completion {
                Some(p) => {
                    let h = fit_hardware_rate(&s, p)?;
                    print(&json!({"target": p, "p_hardware": h}))?;
                }
                None => print(&serde_json::to_value(derive_completion_probability(&s)?)?)?,
            }
            Ok(true)
        }
        Command::Replay { trace } => {
            let f = File::open(&trace).with_context(|| format!("opening {}", trace.display()))?;
            let records = read_jsonl(BufReader::new(f))?;
            let r = report(&records);
            print(&serde_json::to_value(&r)?)?;
            Ok(r.all_terminated)
        }
    }
}
