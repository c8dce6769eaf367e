use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use comir_cli::commands::{self, RegisterOptions};
use comir_cli::config::RefModality;
use comir_cli::{CliError, SEED_ENV};
use comir_registration::Method;

#[derive(Debug, Parser)]
#[command(name = "comir", version, about = "Train CoMIR encoders and register multimodal images")]
struct Cli {
    /// Replaces the root seed of the configuration.
    #[arg(long, global = true, env = SEED_ENV)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train one encoder per modality.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Encode every image of a directory.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        /// Encoder to use; defaults to the checkpoint's first modality.
        #[arg(long)]
        modality: Option<String>,
        #[arg(long, default_value = "runs")]
        output: PathBuf,
    },
    /// Register the configured evaluation pairs.
    Register {
        #[arg(long)]
        config: PathBuf,
        /// Repeatable; defaults to the configured methods.
        #[arg(long = "method", value_parser = parse_method)]
        methods: Vec<Method>,
        #[arg(long, value_enum)]
        ref_modality: Option<RefModality>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Summarize the records of a registration run.
    Evaluate {
        #[arg(long)]
        results: PathBuf,
        /// Defaults to the directory holding the results.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Rotation-equivariance curve of one encoder on one image.
    Equivariance {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
        /// Angle step in degrees.
        #[arg(long, default_value_t = 15.0)]
        step: f64,
        #[arg(long)]
        modality: Option<String>,
        #[arg(long, default_value = "runs")]
        output: PathBuf,
    },
    /// Train, infer, register and evaluate in one run.
    Reproduce {
        #[arg(long)]
        config: PathBuf,
    },
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse()
}

fn run(cli: Cli) -> comir_cli::Result<PathBuf> {
    let seed = cli.seed;
    match cli.command {
        Command::Train { config } => commands::train(&config, seed),
        Command::Infer { checkpoint, input, modality, output } => {
            commands::infer(&checkpoint, &input, modality.as_deref(), &output, seed.unwrap_or_default())
        }
        Command::Register { config, methods, ref_modality, checkpoint, jobs } => {
            let opts = RegisterOptions { methods, reference: ref_modality, checkpoint, jobs };
            commands::register(&config, &opts, seed)
        }
        Command::Evaluate { results, output } => commands::evaluate(&results, output.as_deref()),
        Command::Equivariance { checkpoint, image, step, modality, output } => {
            commands::equivariance(&checkpoint, &image, step, modality.as_deref(), &output, seed.unwrap_or_default())
        }
        Command::Reproduce { config } => commands::reproduce(&config, seed),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(dir) => {
            println!("{}", dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(CliError::exit_code(&e) as u8)
        }
    }
}
