use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use orbkoop::cli::{cmd_eval, cmd_gen_data, cmd_predict, cmd_train, RunConfig, DEFAULT_PRESET, PRESETS};
use orbkoop::Error;

/// Koopman linearization of orbital dynamics: generate data, train, predict, evaluate.
///
/// Every global flag can also be set through an ORBKOOP_* environment variable.
#[derive(Parser, Debug)]
#[command(name = "orbkoop", version)]
struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true, env = "ORBKOOP_CONFIG", conflicts_with = "preset")]
    config: Option<PathBuf>,

    /// Bundled configuration by name; `full-2bp` when neither this nor --config is given.
    #[arg(long, global = true, env = "ORBKOOP_PRESET")]
    preset: Option<String>,

    /// Overrides both the data and the training seed.
    #[arg(long, global = true, env = "ORBKOOP_SEED")]
    seed: Option<u64>,

    /// Output path: dataset directory, model file, prediction CSV or eval directory.
    #[arg(long, global = true, env = "ORBKOOP_OUT")]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a training dataset directory.
    GenData,
    /// Train a model on a dataset.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Overrides train.epochs.
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Roll a model out next to the nonlinear reference and write an aligned CSV.
    Predict {
        #[arg(long)]
        model: PathBuf,
        /// Scenario name from the configuration; the first one by default.
        #[arg(long)]
        scenario: Option<String>,
        /// Number of steps; the scenario length by default.
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Write error, invariant or Jacobi CSVs and a text summary.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        scenario: Option<String>,
    },
    /// List the bundled presets.
    Presets,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Units(_) | Error::Version { .. } | Error::Shape(_) => 2,
        Error::Io { .. } | Error::Parse { .. } | Error::Corrupt { .. } => 3,
        Error::Divergence { .. }
        | Error::NonFiniteLoss { .. }
        | Error::Propagation { .. }
        | Error::Numerical(_)
        | Error::Singularity(_) => 4,
        _ => 1,
    }
}

fn run(cli: Cli) -> orbkoop::Result<()> {
    let mut config = match (&cli.config, &cli.preset) {
        (Some(path), _) => RunConfig::from_file(path)?,
        (None, Some(name)) => RunConfig::preset(name)?,
        (None, None) => RunConfig::preset(DEFAULT_PRESET)?,
    };
    if let Some(seed) = cli.seed {
        config.set_seed(seed);
    }
    let out = |default: &str| cli.out.clone().unwrap_or_else(|| PathBuf::from(default));
    match cli.command {
        Command::GenData => {
            let report = cmd_gen_data(&config, &out("dataset"))?;
            print!("{}", report.summary);
        }
        Command::Train { data, epochs } => {
            if let Some(e) = epochs {
                config.train.epochs = e;
                config.validate()?;
            }
            let report = cmd_train(&data, &config, &out("model.json"))?;
            print!("{}", report.summary);
        }
        Command::Predict { model, scenario, steps } => {
            let scenario = config.scenario(scenario.as_deref())?.clone();
            let path = out("prediction.csv");
            let report = cmd_predict(&model, &scenario, &config, steps, &path)?;
            println!("{} rows written to {}", report.reference.len(), path.display());
        }
        Command::Eval { model, scenario } => {
            let scenario = config.scenario(scenario.as_deref())?.clone();
            let report = cmd_eval(&model, &scenario, &config, &out("eval"))?;
            print!("{}", report.summary);
        }
        Command::Presets => {
            for (name, text) in PRESETS {
                let about = text.lines().next().unwrap_or("").trim_start_matches("# ");
                println!("{name:14} {about}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
