use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use firewatch::medium::{EnvironmentKind, LinkEnvironment};
use firewatch::serve::{self, Dashboard, ServeOptions, DEFAULT_PORT};
use firewatch::sim::{self, calibration_report, range_test, Scenario, TABLE_DISTANCES_M};

/// Forest-fire LoRaWAN network emulator.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file to completion and write its artifacts.
    Run {
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Defaults to out/<scenario file stem>.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Delivery, RSSI and latency against distance from the gateway.
    RangeTest {
        #[arg(long, default_value_t = 10_000)]
        trials: u32,
        #[arg(long, value_enum, default_value_t = EnvironmentKind::Urban)]
        env: EnvironmentKind,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Also write the rows as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Sensor readings and risk levels against distance from a fire.
    Calibrate {
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Run the network live with the HTTP API and dashboard.
    Serve {
        #[arg(long, default_value_t = DEFAULT_PORT)]
        port: u16,
        /// Sim seconds per wall second.
        #[arg(long, default_value_t = 1.0)]
        speed: f64,
        /// API and live channel only.
        #[arg(long)]
        headless: bool,
        /// Scenario to serve; the bundled campus layout by default.
        #[arg(long)]
        scenario: Option<PathBuf>,
        /// Dashboard build directory.
        #[arg(long, conflicts_with = "headless")]
        dashboard: Option<PathBuf>,
        /// Persist records and events here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("FIREWATCH_LOG", "info")).init();
    match run(Cli::parse().command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn write(path: &PathBuf, text: &str) -> anyhow::Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn run(cmd: Command) -> anyhow::Result<ExitCode> {
    match cmd {
        Command::Run { scenario, seed, out } => {
            let mut s = Scenario::load(&scenario)?;
            if let Some(seed) = seed {
                s.seed = seed;
            }
            let out = out.unwrap_or_else(|| PathBuf::from("out").join(scenario.file_stem().unwrap_or_default()));
            let summary = sim::run(&s, &out)?;
            println!(
                "seed {}: {} events, {} records over {} s",
                summary.seed, summary.events, summary.records, summary.duration_s
            );
            print!("{}", summary.devices_csv());
            for a in &summary.artifacts {
                println!("wrote {}", a.display());
            }
        }
        Command::RangeTest { trials, env, seed, csv } => {
            anyhow::ensure!(trials > 0, "--trials must be positive");
            let report = range_test(&LinkEnvironment::preset(env), &TABLE_DISTANCES_M, trials, seed);
            print!("{}", report.to_table());
            if let Some(path) = csv {
                write(&path, &report.to_csv())?;
            }
        }
        Command::Calibrate { csv } => {
            let report = calibration_report();
            print!("{}", report.to_table());
            if let Some(path) = csv {
                write(&path, &report.to_csv())?;
            }
            if let Err(e) = report.check() {
                eprintln!("calibration check failed: {e}");
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::Serve { port, speed, headless, scenario, dashboard, out } => {
            anyhow::ensure!(speed.is_finite() && speed > 0.0, "--speed must be positive");
            let s = match scenario {
                Some(path) => Scenario::load(path)?,
                None => Scenario::from_json(sim::CAMPUS_SCENARIO, "campus.json")?,
            };
            let dashboard = match (headless, dashboard) {
                (true, _) => Dashboard::Headless,
                (false, Some(dir)) => Dashboard::Dir(dir),
                (false, None) => Dashboard::Placeholder,
            };
            let opts = ServeOptions { port, speed, dashboard, out };
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(serve::serve(&s, &opts, async {
                let _ = tokio::signal::ctrl_c().await;
                log::info!("shutting down");
            }))?;
        }
    }
    Ok(ExitCode::SUCCESS)
}
