use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use evfleet::config::{ConfigFile, WindSource};
use evfleet::harness::{compare_runs, export_trace, import_trace, run_night, SchedulerKind};
use evfleet::scenario::{load_wind_csv, Scenario};

#[derive(Parser)]
#[command(name = "evfleet", version, about = "EV fleet charging simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one night and write `<out>/<scheduler>.csv` plus its summary.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// mpc, spuc-static or spuc-updated; overrides the config file.
        #[arg(long)]
        scheduler: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        /// `synthetic` or `csv:<path>`; overrides the config file.
        #[arg(long)]
        wind: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare every trace CSV found in a directory.
    Compare {
        #[arg(long = "in")]
        input: PathBuf,
    },
    /// Write the generated scenario as JSON.
    GenScenario {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn build_scenario(cfg: &ConfigFile, seed: Option<u64>, wind: Option<&str>) -> Result<Scenario, Box<dyn std::error::Error>> {
    let mut scenario_cfg = cfg.scenario.clone();
    if let Some(seed) = seed.or(cfg.run.seed) {
        scenario_cfg.rng_seed = seed;
    }
    let source = match wind {
        Some(w) => w.parse::<WindSource>()?,
        None => cfg.wind_source()?,
    };
    let scenario = Scenario::generate(&scenario_cfg)?;
    Ok(match source {
        WindSource::Synthetic => scenario,
        WindSource::Csv(path) => {
            let wind = load_wind_csv(&path, &scenario_cfg)?;
            scenario.with_wind(wind.values)?
        }
    })
}

fn trace_files(dir: &Path) -> std::io::Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    files.sort();
    Ok(files)
}

fn execute(cli: Cli) -> Result<(), Box<dyn std::error::Error>> {
    match cli.command {
        Command::Run {
            config,
            scheduler,
            seed,
            wind,
            out,
        } => {
            let cfg = ConfigFile::load(&config)?;
            let kind = match scheduler {
                Some(s) => s.parse::<SchedulerKind>()?,
                None => cfg.run.scheduler.ok_or("no scheduler given on the command line or in the config")?,
            };
            let scenario = build_scenario(&cfg, seed, wind.as_deref())?;
            log::info!(
                "running {kind} on {} EVs over {} epochs",
                scenario.fleet_size(),
                scenario.config.night_epochs
            );
            let trace = run_night(&scenario, kind, &cfg.mpc)?;
            std::fs::create_dir_all(&out)?;
            let path = out.join(format!("{kind}.csv"));
            export_trace(&trace, &path)?;
            println!(
                "{kind}: deviation {:.6} kWh, qos {:.4}, runtime {:.2} s -> {}",
                trace.deviation_energy_kwh,
                trace.qos_completion_fraction,
                trace.runtime_seconds,
                path.display()
            );
        }
        Command::Compare { input } => {
            let traces = trace_files(&input)?
                .iter()
                .map(|p| import_trace(p))
                .collect::<Result<Vec<_>, _>>()?;
            print!("{}", compare_runs(&traces)?);
        }
        Command::GenScenario { config, out } => {
            let cfg = ConfigFile::load(&config)?;
            let scenario = build_scenario(&cfg, None, None)?;
            let json = serde_json::to_string_pretty(&scenario)?;
            std::fs::write(&out, json + "\n")?;
            println!(
                "{} EVs in {} clusters -> {}",
                scenario.fleet_size(),
                scenario.fleet.len(),
                out.display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
