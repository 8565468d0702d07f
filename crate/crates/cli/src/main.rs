use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use upqkd_cli::commands::{self, Polarization, SimOverrides};
use upqkd_cli::config::{self, parse_preset, parse_quantity, Scenario, Unit};
use upqkd_cli::table::Format;
use upqkd_cli::CliError;

#[derive(Parser)]
#[command(name = "upqkd", version, about = "GHz-clocked QKD link model with up-conversion detectors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Closed-form QBER, sifting, Eve's information and secure rate per scenario.
    Analyze {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        scenario: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
    },
    /// Monte Carlo run per scenario.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        scenario: Option<String>,
        /// Slots to simulate, e.g. 1e7.
        #[arg(long, value_parser = parse_count)]
        pulses: Option<u64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Per-click CSV stream.
        #[arg(long)]
        events: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
    },
    /// Modeled rates against distance for both protocols at optimal mu.
    Sweep {
        /// Base link; the first scenario is used.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_parser = parse_km)]
        km_from: f64,
        #[arg(long, value_parser = parse_km)]
        km_to: f64,
        #[arg(long, value_parser = parse_km)]
        step: f64,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
    },
    /// Efficiency and noise against pump power.
    DetectorCurve {
        /// Detector from the first scenario of this config.
        #[arg(long, conflicts_with = "preset")]
        config: Option<PathBuf>,
        /// hardware, table2 or table2-literal.
        #[arg(long, default_value = "hardware")]
        preset: String,
        #[arg(long, value_parser = parse_power, default_value = "0 W")]
        pump_from: f64,
        #[arg(long, value_parser = parse_power, default_value = "0.3 W")]
        pump_to: f64,
        #[arg(long, default_value_t = 61)]
        points: usize,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
    },
    /// Arrival-time histogram with and without polarization control.
    Histogram {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        scenario: Option<String>,
        #[arg(long, default_value_t = 5.0)]
        bin_ps: f64,
        /// Defaults to one clock period.
        #[arg(long)]
        window_ps: Option<f64>,
        #[arg(long, value_enum, default_value = "both")]
        polarization: Polarization,
        #[arg(long, value_parser = parse_count)]
        pulses: Option<u64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_count(s: &str) -> Result<u64, String> {
    parse_quantity(s, Unit::Count).map(|v| v as u64)
}

fn parse_km(s: &str) -> Result<f64, String> {
    // bare numbers are kilometers on the command line
    parse_quantity(s, Unit::Kilometers).or_else(|_| parse_quantity(s, Unit::Number))
}

fn parse_power(s: &str) -> Result<f64, String> {
    parse_quantity(s, Unit::Watts)
}

fn load(path: &Path, name: Option<&str>) -> Result<Vec<Scenario>, CliError> {
    let all = config::load(path)?;
    match name {
        None => Ok(all),
        Some(n) => {
            let picked: Vec<Scenario> = all.into_iter().filter(|s| s.name == n).collect();
            if picked.is_empty() {
                Err(CliError::Usage(format!("no scenario named `{n}`")))
            } else {
                Ok(picked)
            }
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut warnings = Vec::new();
    let result = match cli.command {
        Command::Analyze {
            config,
            scenario,
            out,
            format,
        } => {
            let scenarios = load(&config, scenario.as_deref())?;
            let table = commands::analyze(&scenarios, &mut warnings)?;
            commands::emit_scenario_files(&scenarios, &table, None)?;
            commands::emit(&table, out.as_deref(), format)
        }
        Command::Simulate {
            config,
            scenario,
            pulses,
            seed,
            workers,
            out,
            events,
            format,
        } => {
            let scenarios = load(&config, scenario.as_deref())?;
            let overrides = SimOverrides {
                pulses,
                seed,
                workers,
                record_events: events.is_some() || scenarios.iter().any(|s| s.output_events.is_some()),
            };
            let (summary, stream) = commands::simulate(&scenarios, overrides, &mut warnings)?;
            commands::emit_scenario_files(&scenarios, &summary, stream.as_ref())?;
            if let (Some(path), Some(stream)) = (events.as_deref(), stream.as_ref()) {
                commands::emit(stream, Some(path), Format::Csv)?;
            }
            commands::emit(&summary, out.as_deref(), format)
        }
        Command::Sweep {
            config,
            km_from,
            km_to,
            step,
            out,
            format,
        } => {
            let base = match config {
                Some(path) => load(&path, None)?.remove(0),
                None => Scenario::default(),
            };
            let kms = commands::distance_grid(km_from, km_to, step)?;
            let table = commands::sweep(&base, &kms)?;
            commands::emit(&table, out.as_deref(), format)
        }
        Command::DetectorCurve {
            config,
            preset,
            pump_from,
            pump_to,
            points,
            out,
            format,
        } => {
            let det = match config {
                Some(path) => load(&path, None)?.remove(0).sim.detector,
                None => parse_preset(&preset).map_err(CliError::Usage)?,
            };
            let table = commands::detector_curve(&det, pump_from, pump_to, points)?;
            commands::emit(&table, out.as_deref(), format)
        }
        Command::Histogram {
            config,
            scenario,
            bin_ps,
            window_ps,
            polarization,
            pulses,
            seed,
            workers,
            out,
        } => {
            let sc = load(&config, scenario.as_deref())?.remove(0);
            let overrides = SimOverrides {
                pulses,
                seed,
                workers,
                record_events: true,
            };
            let table = commands::histogram(&sc, overrides, bin_ps, window_ps, polarization)?;
            commands::emit(&table, out.as_deref(), Format::Csv)
        }
    };
    for w in warnings {
        eprintln!("warning: {w}");
    }
    result
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
