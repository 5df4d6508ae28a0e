use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::net::SocketAddr;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use fieldbot_core::mission_control::MissionControl;
use fieldbot_core::simrunner::{apply_preset, monte_carlo, run_scenario_with_log, RunMode, ScenarioConfig, PRESETS};
use fieldbot_gcs::AppState;

#[derive(Parser)]
#[command(name = "fieldbot", version, about = "RFID field-survey robot simulator and ground station")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one mission and print its report as JSON.
    Run {
        #[command(flatten)]
        source: Source,
        #[arg(long)]
        seed: Option<u64>,
        /// Write the raw event log here.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Run seeds base..base+runs in parallel and print the summary as JSON.
    Montecarlo {
        #[command(flatten)]
        source: Source,
        #[arg(long, default_value_t = 200)]
        runs: usize,
        #[arg(long, default_value_t = 1)]
        base_seed: u64,
        /// Per-tag CSV (run_id, tag_epc, detected, time_to_read_s, sensor_value).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List presets, or print one as scenario JSON.
    Presets {
        #[arg(long)]
        show: Option<String>,
    },
    /// Serve the ground-control HTTP API.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        /// Persist mission records and logs here.
        #[arg(long)]
        data_dir: Option<PathBuf>,
    },
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct Origin {
    /// Scenario JSON file.
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long)]
    preset: Option<String>,
}

#[derive(Args)]
struct Source {
    #[command(flatten)]
    origin: Origin,
    /// Fly the scenario's operator script instead of the autonomous search.
    #[arg(long)]
    manual: bool,
}

impl Source {
    fn load(&self) -> Result<ScenarioConfig> {
        let mut cfg = match (&self.origin.scenario, &self.origin.preset) {
            (Some(path), _) => ScenarioConfig::load(path).with_context(|| format!("loading {}", path.display()))?,
            (None, Some(name)) => apply_preset(name)?,
            (None, None) => unreachable!("clap requires one source"),
        };
        if self.manual {
            cfg.mode = RunMode::ManualScript;
            cfg.validate()?;
        }
        Ok(cfg)
    }
}

fn print_json(value: &impl serde::Serialize) -> Result<()> {
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run { source, seed, log } => {
            let cfg = source.load()?;
            let seed = seed.unwrap_or(cfg.seed);
            let out = run_scenario_with_log(&cfg, seed, log.as_deref())?;
            print_json(&out.report)
        }
        Command::Montecarlo { source, runs, base_seed, out } => {
            anyhow::ensure!(runs > 0, "--runs must be at least 1");
            let cfg = source.load()?;
            let result = monte_carlo(&cfg, runs, base_seed)?;
            if let Some(path) = out {
                let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
                result.write_csv(BufWriter::new(file))?;
            }
            print_json(&result.summary)
        }
        Command::Presets { show: Some(name) } => print_json(&apply_preset(&name)?),
        Command::Presets { show: None } => {
            for name in PRESETS {
                let cfg = apply_preset(name)?;
                println!("{name:<18} {:?} {:?}, {} tags", cfg.vehicle, cfg.mode, cfg.tags.len());
            }
            Ok(())
        }
        Command::Serve { addr, data_dir } => {
            let control = match data_dir {
                Some(dir) => MissionControl::with_storage(&dir)?,
                None => MissionControl::new(),
            };
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async {
                let listener = tokio::net::TcpListener::bind(addr).await?;
                eprintln!("listening on http://{}", listener.local_addr()?);
                fieldbot_gcs::serve(listener, AppState::new(control)).await?;
                Ok(())
            })
        }
    }
}
