use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use stormcause::cli;

#[derive(Parser)]
#[command(name = "stormcause", version, about = "Causal predictor selection and intensity-change regression")]
struct Args {
    /// Experiment configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Overrides the configured root seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: available cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a synthetic panel from a model spec.
    Synth {
        spec: PathBuf,
    },
    /// Per-fold causal selection over the alpha grid.
    Discover,
    /// Full cross-validated comparison of selection methods.
    Experiment,
    /// Kernel SHAP attributions of two models and their difference.
    Shap {
        #[arg(long)]
        model_a: PathBuf,
        #[arg(long)]
        model_b: PathBuf,
    },
    /// Three-condition screening of candidate predictors.
    Screen,
}

fn config_jobs(args: &Args) -> Option<usize> {
    args.jobs.or_else(|| {
        args.config
            .as_ref()
            .and_then(|p| stormcause::pipeline::ExperimentConfig::load(p).ok())
            .and_then(|c| c.jobs)
    })
}

fn run(args: &Args) -> stormcause::Result<Vec<PathBuf>> {
    let need_config = || {
        args.config
            .clone()
            .ok_or_else(|| stormcause::Error::Config("--config is required for this command".into()))
    };
    match &args.command {
        Command::Synth { spec } => cli::cmd_synth(spec, &args.out, args.seed),
        Command::Discover => cli::cmd_discover(&need_config()?, &args.out, args.seed),
        Command::Experiment => cli::cmd_experiment(&need_config()?, &args.out, args.seed),
        Command::Shap { model_a, model_b } => cli::cmd_shap(&need_config()?, model_a, model_b, &args.out, args.seed),
        Command::Screen => cli::cmd_screen(&need_config()?, &args.out, args.seed),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = Args::parse();
    let jobs = config_jobs(&args).unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start worker pool: {e}");
            return ExitCode::from(1);
        }
    };
    let result = pool.install(|| run(&args));
    let code = cli::exit_code(&result);
    match result {
        Ok(paths) => {
            println!("wrote {} files to {}", paths.len(), args.out.display());
        }
        Err(e) => eprintln!("error: {e}"),
    }
    ExitCode::from(code as u8)
}
