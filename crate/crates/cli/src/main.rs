use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rsnpe_cli::commands::{self, InferArgs, SimulateArgs, Warnings};
use rsnpe_cli::config::RunConfig;

/// Neural posterior estimation of terrain permittivity, RMS height and RMS
/// slope from radar-sounder surface peak powers.
#[derive(Debug, Parser)]
#[command(name = "rsnpe", version)]
struct Cli {
    /// JSON run configuration; defaults apply to anything it omits.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,

    /// Override one config field, e.g. `--set radar.altitude_km=300`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,

    /// Run directory (beats the config file and $RSNPE_OUTPUT_ROOT).
    #[arg(short, long, global = true)]
    output_dir: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate one rangeline and print its peak power.
    Simulate(SimulateCli),
    /// Simulate the primary and reference datasets and assemble pairs.
    Generate,
    /// Train the flow on the generated pairs.
    Train,
    /// Run simulation-based calibration on the held-out pairs.
    Validate,
    /// Sample the posterior for an observation, optionally sweeping ε_ref.
    Infer(InferCli),
    /// Render SBC histograms and posterior corner plots as SVG.
    Plot,
}

#[derive(Debug, Args)]
struct SimulateCli {
    #[arg(long)]
    eps: f64,
    /// RMS height, m.
    #[arg(long = "sigma-m")]
    sigma_m: f64,
    /// RMS slope (dimensionless).
    #[arg(long)]
    slope: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Disable galactic noise.
    #[arg(long)]
    noiseless: bool,
}

#[derive(Debug, Args)]
struct InferCli {
    /// Observed surface peak power, dB.
    #[arg(long = "p-obs-db", allow_negative_numbers = true)]
    p_obs_db: f64,
    /// Observed reference-zone peak power, dB.
    #[arg(long = "p-ref-db", allow_negative_numbers = true)]
    p_ref_db: f64,
    /// Altitude over the target, km.
    #[arg(long = "r-km")]
    r_km: f64,
    /// Altitude over the reference zone, km.
    #[arg(long = "r-ref-km")]
    r_ref_km: f64,
    /// Assumed reference permittivity; repeat for a sweep.
    #[arg(long = "eps-ref", required = true)]
    eps_ref: Vec<f64>,
    /// Posterior samples per ε_ref (default from the config).
    #[arg(long = "n-samples")]
    n_samples: Option<usize>,
    /// Subdirectory of `inference/` for the results.
    #[arg(long, default_value = "observation")]
    tag: String,
}

fn run(cli: Cli) -> anyhow::Result<Warnings> {
    let cfg = RunConfig::resolve(cli.config.as_deref(), &cli.overrides, cli.output_dir)?;
    match cli.command {
        Command::Simulate(a) => commands::cmd_simulate(
            &cfg,
            SimulateArgs { eps: a.eps, sigma_m: a.sigma_m, slope: a.slope, seed: a.seed, noiseless: a.noiseless },
        ),
        Command::Generate => commands::cmd_generate(&cfg),
        Command::Train => commands::cmd_train(&cfg),
        Command::Validate => commands::cmd_validate(&cfg),
        Command::Infer(a) => {
            let args = InferArgs {
                p_obs_db: a.p_obs_db,
                p_ref_db: a.p_ref_db,
                r_km: a.r_km,
                r_ref_km: a.r_ref_km,
                eps_ref: a.eps_ref,
                n_samples: a.n_samples,
                tag: a.tag,
            };
            commands::cmd_infer(&cfg, &args).map(|(_, w)| w)
        }
        Command::Plot => commands::cmd_plot(&cfg),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(warnings) if warnings.is_empty() => ExitCode::SUCCESS,
        Ok(warnings) => {
            for w in &warnings {
                eprintln!("warning: {w}");
            }
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
