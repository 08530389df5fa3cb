use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use safe_field_cli::commands::{self, Options};
use safe_field_cli::config::Overrides;

#[derive(Parser)]
#[command(name = "safe-field", version, about = "Robust CLF/CBF synthesis from landmark PMFs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Run configuration (JSON).
    #[arg(long, global = true, default_value = "data/case_study/config.json")]
    config: PathBuf,
    /// Output directory, overriding the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Comma-separated cell ids to restrict the command to.
    #[arg(long, global = true, value_delimiter = ',')]
    cells: Option<Vec<usize>>,
    /// Simulate only this sensor model.
    #[arg(long, global = true, value_enum)]
    sensor: Option<SensorArg>,
    /// Mean-error bound override.
    #[arg(long, global = true)]
    eps: Option<f64>,
    /// MAD bound override.
    #[arg(long, global = true)]
    sigma: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize one controller per plan cell and write controllers.json.
    Synth,
    /// Check the stored controllers against the adversarial oracle; writes report.json.
    Verify,
    /// Closed-loop runs from the configured starts; writes trajectory CSVs.
    Simulate,
    /// Export controller vector fields as CSV.
    Field,
    /// synth, verify, simulate and field in sequence.
    Pipeline,
}

#[derive(Clone, Copy, ValueEnum)]
enum SensorArg {
    Delta,
    Gaussian,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SAFE_FIELD_LOG", "warn"))
        .init();
    let cli = Cli::parse();
    let options = Options {
        config: cli.config,
        overrides: Overrides {
            out: cli.out,
            seed: cli.seed,
            epsilon: cli.eps,
            sigma_m: cli.sigma,
        },
        cells: cli.cells,
        sensor: cli.sensor.map(|s| match s {
            SensorArg::Delta => "delta".to_string(),
            SensorArg::Gaussian => "gaussian".to_string(),
        }),
    };
    let result = match cli.command {
        Command::Synth => commands::synth(&options).map(|_| ()),
        Command::Verify => commands::verify(&options),
        Command::Simulate => commands::simulate(&options),
        Command::Field => commands::field(&options),
        Command::Pipeline => commands::pipeline(&options),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("safe-field: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
