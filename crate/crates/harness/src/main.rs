use std::path::PathBuf;
use std::process::ExitCode;

use chancectl::{Experiment, HarnessError, Overrides, RunConfig};
use clap::{Parser, Subcommand};

/// Number of worker threads; defaults to all cores.
const THREADS_VAR: &str = "CHANCECTL_THREADS";

#[derive(Parser)]
#[command(name = "chancectl", version, about = "Run chance constrained control experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a config file.
    Run {
        config: PathBuf,
        /// prob_1d, prob_2d, p_sweep, my_path, robust or compare_all.
        #[arg(long)]
        experiment: Option<Experiment>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write a gnuplot script per CSV.
        #[arg(long)]
        emit_gnuplot: bool,
    },
    /// Parse and resolve a config file without running it.
    Validate { config: PathBuf },
}

fn init_threads() -> Result<(), HarnessError> {
    let Ok(v) = std::env::var(THREADS_VAR) else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| HarnessError::Config(format!("{THREADS_VAR} must be a positive integer, got `{v}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| HarnessError::Config(e.to_string()))
}

fn main_inner(cli: Cli) -> Result<(), HarnessError> {
    init_threads()?;
    match cli.command {
        Command::Validate { config } => {
            let cfg = RunConfig::load(&config)?.resolve(&Overrides::default())?;
            let text = toml::to_string_pretty(&cfg).map_err(|e| HarnessError::Config(e.to_string()))?;
            print!("{text}");
            Ok(())
        }
        Command::Run {
            config,
            experiment,
            seed,
            out,
            emit_gnuplot,
        } => {
            let ov = Overrides {
                experiment,
                seed,
                out,
                emit_gnuplot,
            };
            let cfg = RunConfig::load(&config)?.resolve(&ov)?;
            eprintln!("running {} into {}", cfg.experiment, cfg.output.dir.display());
            let res = chancectl::run(&cfg);
            if res.is_ok() || matches!(res, Err(HarnessError::NonConvergence(_))) {
                eprintln!("wrote {}", cfg.output.dir.display());
            }
            res.map(|_| ())
        }
    }
}

fn main() -> ExitCode {
    match main_inner(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("chancectl: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
