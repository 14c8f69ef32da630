use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use log::{error, info};

use lanesim::sim::scenario::{ModelKind, Scenario};
use lanesim::Error;

mod commands;
mod manifest;

/// Exit status for configuration and input errors.
const EXIT_CONFIG: u8 = 2;
/// Exit status when the simulation detects an invariant breach.
const EXIT_BREACH: u8 = 3;

#[derive(Parser, Debug)]
#[command(
    name = "lanesim",
    version,
    about = "Multi-lane traffic simulation with style-dependent lane-change decisions"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Output {
    /// Output directory, created if absent.
    #[arg(long)]
    out: PathBuf,
    /// Overwrite existing output files.
    #[arg(long)]
    force: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a scenario and write metrics.csv, events.csv and run-manifest.json.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        /// Overrides the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the scenario's lane-change model (one of mcdm, mobil).
        #[arg(long, value_delimiter = ',')]
        models: Vec<String>,
        #[command(flatten)]
        output: Output,
    },
    /// Run one scenario under several models and align their r(rho) series.
    Compare {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "mcdm,mobil")]
        models: Vec<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        output: Output,
    },
    /// Write synthetic decision samples and back labels for a style preset.
    GenSynthetic {
        #[arg(long)]
        style: String,
        #[arg(long, default_value_t = 5000)]
        n: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Probability of flipping a label.
        #[arg(long, default_value_t = 0.05)]
        noise: f64,
        #[command(flatten)]
        output: Output,
    },
    /// Fit style parameters from samples or trajectories.
    Calibrate {
        /// Decision samples CSV.
        #[arg(long, conflicts_with = "trajectories")]
        samples: Option<PathBuf>,
        /// Back labels CSV for the prob-back coefficient.
        #[arg(long)]
        back_labels: Option<PathBuf>,
        /// Trajectory CSV; requires --network.
        #[arg(long, requires = "network")]
        trajectories: Option<PathBuf>,
        #[arg(long)]
        network: Option<PathBuf>,
        /// Fit only this style tag.
        #[arg(long)]
        style: Option<String>,
        /// Training fraction.
        #[arg(long, default_value_t = 0.667)]
        split: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[command(flatten)]
        output: Output,
    },
    /// Score a calibration report on held-out samples.
    Validate {
        /// calibration.json written by `calibrate`.
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        samples: PathBuf,
        #[arg(long)]
        style: Option<String>,
        #[command(flatten)]
        output: Output,
    },
}

fn parse_models(names: &[String]) -> Result<Vec<ModelKind>, Error> {
    names.iter().map(|n| n.parse::<ModelKind>()).collect()
}

fn load_scenario(path: &Path, seed: Option<u64>) -> Result<Scenario, Error> {
    let mut sc = Scenario::load(path)?;
    if let Some(s) = seed {
        sc.seed = s;
    }
    Ok(sc)
}

fn dispatch(cli: Cli, invocation: &str) -> anyhow::Result<()> {
    match cli.command {
        Command::Run {
            scenario,
            seed,
            models,
            output,
        } => {
            let mut sc = load_scenario(&scenario, seed)?;
            match parse_models(&models)?.as_slice() {
                [] => {}
                [m] => sc.model = *m,
                _ => return Err(Error::Config("run takes a single model; use compare for several".into()).into()),
            }
            commands::run(&scenario, &sc, &output.out, output.force, invocation)
        }
        Command::Compare {
            scenario,
            models,
            seed,
            output,
        } => {
            let sc = load_scenario(&scenario, seed)?;
            let models = parse_models(&models)?;
            if models.len() < 2 {
                return Err(Error::Config("compare needs at least two models".into()).into());
            }
            commands::compare(&scenario, &sc, &models, &output.out, output.force, invocation)
        }
        Command::GenSynthetic {
            style,
            n,
            seed,
            noise,
            output,
        } => commands::gen_synthetic(&style, n, seed, noise, &output.out, output.force, invocation),
        Command::Calibrate {
            samples,
            back_labels,
            trajectories,
            network,
            style,
            split,
            seed,
            output,
        } => {
            let source = match (samples, trajectories, network) {
                (Some(s), None, _) => commands::Source::Samples(s),
                (None, Some(t), Some(n)) => commands::Source::Trajectories {
                    trajectories: t,
                    network: n,
                },
                _ => {
                    return Err(
                        Error::Config("calibrate needs --samples or --trajectories with --network".into()).into(),
                    )
                }
            };
            let opts = commands::CalibrateOptions {
                source,
                back_labels,
                style,
                split,
                seed,
            };
            commands::calibrate(&opts, &output.out, output.force, invocation)
        }
        Command::Validate {
            report,
            samples,
            style,
            output,
        } => commands::validate(
            &report,
            &samples,
            style.as_deref(),
            &output.out,
            output.force,
            invocation,
        ),
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<Error>() {
        Some(Error::InvariantBreach { .. }) => EXIT_BREACH,
        Some(err) if err.is_config() => EXIT_CONFIG,
        Some(Error::Calibration(_)) => EXIT_CONFIG,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("LANESIM_LOG", "info")).init();
    let invocation = std::env::args().collect::<Vec<_>>().join(" ");
    let cli = Cli::parse();
    match dispatch(cli, &invocation).context("lanesim failed") {
        Ok(()) => {
            info!("done");
            ExitCode::SUCCESS
        }
        Err(e) => {
            let code = exit_code(&e);
            error!("{:#}", e);
            ExitCode::from(code)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_survive_context() {
        let breach = anyhow::Error::new(Error::InvariantBreach {
            time: 1.0,
            detail: "overlap".into(),
        })
        .context("running");
        assert_eq!(exit_code(&breach), EXIT_BREACH);
        let config = anyhow::Error::new(Error::Config("bad".into())).context("loading");
        assert_eq!(exit_code(&config), EXIT_CONFIG);
        assert_eq!(exit_code(&anyhow::anyhow!("disk full")), 1);
    }
}
