use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use searchplan_cli::{config, eval, gen_paths, gen_pdm, train_policy, train_rae_cmd, verify, CliError, EvalArgs, TrainPolicyArgs};

/// Probabilistic search planning: maps, path datasets, autoencoder and policy training, evaluation.
#[derive(Parser)]
#[command(name = "searchplan", version, after_help = after_help())]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

fn after_help() -> String {
    format!(
        "{}\nExit codes: 0 success, 1 failed run or verification, 2 configuration error, 3 I/O error.\n\
         Relative paths are resolved under ${} when it is set.",
        config::keys_help(),
        searchplan_cli::OUT_ROOT_VAR
    )
}

#[derive(Subcommand)]
enum Cmd {
    /// Sample a probability map and write it as text.
    GenPdm {
        #[arg(long)]
        seed: Option<u64>,
        /// Number of components (default env.n_gaussian).
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate greedy coverage paths, one fresh map per path.
    GenPaths {
        #[arg(long, default_value_t = 500)]
        n: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the path autoencoder on a dataset file.
    TrainRae {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train one architecture (LSTMAE_SAC, LSTMAE_PPO, FS_SAC_FCN, FS_PPO_FCN, FS_SAC_LSTM, FS_PPO_LSTM).
    TrainPolicy {
        #[arg(long)]
        arch: String,
        /// Autoencoder checkpoint; required by the LSTMAE architectures.
        #[arg(long)]
        encoder: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 100_000)]
        steps: u64,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a trained policy directory, or the `random` / `greedy` baseline.
    Eval {
        #[arg(long)]
        policy: String,
        #[arg(long, default_value_t = 200)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Environment config for the baselines.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Number of leading episodes drawn as SVG.
        #[arg(long, default_value_t = 4)]
        plots: usize,
        /// Output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run oracle suites (geometry, cubature, gradients, all) and check checkpoints.
    Verify {
        #[arg(long, default_value = "all")]
        suite: String,
        #[arg(long)]
        checkpoint: Vec<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.cmd {
        Cmd::GenPdm { seed, n, config, out } => gen_pdm(seed, n, config.as_deref(), out.as_deref()),
        Cmd::GenPaths { n, seed, config, out } => gen_paths(n, seed, config.as_deref(), out.as_deref()),
        Cmd::TrainRae { data, config, seed, out } => train_rae_cmd(&data, seed, config.as_deref(), out.as_deref()),
        Cmd::TrainPolicy { arch, encoder, config, steps, seed, out } => train_policy(&TrainPolicyArgs {
            arch: &arch,
            encoder: encoder.as_deref(),
            config: config.as_deref(),
            steps,
            seed,
            out: out.as_deref(),
        }),
        Cmd::Eval { policy, episodes, seed, config, plots, out } => eval(&EvalArgs {
            policy: &policy,
            episodes,
            seed,
            config: config.as_deref(),
            plots,
            out: out.as_deref(),
        })
        .map(|_| ()),
        Cmd::Verify { suite, checkpoint } => verify(&suite, &checkpoint),
    }
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
