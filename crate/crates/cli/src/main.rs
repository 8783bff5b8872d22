mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::{CheckFailed, DeapExport};
use config::{ConfigError, RunConfig};

/// Joint EEG/EMG compression and classification with a multimodal stacked autoencoder.
#[derive(Parser)]
#[command(name = "mmae", version)]
struct Cli {
    /// Log progress (repeat for more detail).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// TOML run configuration.
    #[arg(short, long)]
    config: PathBuf,
    /// Override a config leaf, e.g. `--set train.joint.epochs=20`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory; overrides `output_dir`.
    #[arg(short, long)]
    out: Option<PathBuf>,
}

impl RunArgs {
    fn load(&self) -> anyhow::Result<(RunConfig, PathBuf)> {
        let cfg = RunConfig::load(&self.config, &self.overrides)?;
        let out = commands::output_dir(&cfg, self.out.as_deref())?;
        Ok((cfg, out))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Pretrain pathways, train the joint layer, optionally fine-tune; writes model.mmae.
    Train(RunArgs),
    /// Encode a dataset container into joint codes.
    Compress {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Decode joint codes into a reconstruction container.
    Decompress {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        codes: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        /// Dataset container to report PRD against.
        #[arg(long)]
        reference: Option<PathBuf>,
    },
    /// Distortion curves for the autoencoder and the DWT baseline, plus the partition sweep.
    Eval(RunArgs),
    /// Multimodal and unimodal classification accuracy per criterion.
    Classify(RunArgs),
    /// Finite-difference gradient checks over seeded miniature models.
    Gradcheck {
        #[arg(long, default_value_t = gradcheck_tolerance())]
        tolerance: f64,
        /// Write the per-case results as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
        /// Added to every analytic gradient; for testing the harness itself.
        #[arg(long, default_value_t = 0.0, hide = true)]
        perturb: f64,
    },
    /// Write a synthetic dataset container and/or synthetic trials in DEAP layout.
    Synth {
        #[arg(short, long)]
        config: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Dataset container to write.
        #[arg(short, long)]
        out: Option<PathBuf>,
        /// Directory for `sNN_data.npy` / `sNN_labels.npy` files.
        #[arg(long)]
        deap_dir: Option<PathBuf>,
        #[arg(long, default_value_t = 2)]
        participants: usize,
        #[arg(long, default_value_t = 4)]
        trials: usize,
        #[arg(long, default_value_t = 40)]
        channels: usize,
        /// Write float32 instead of float64.
        #[arg(long)]
        single_precision: bool,
    },
}

fn gradcheck_tolerance() -> f64 {
    mmae::gradcheck::DEFAULT_TOLERANCE
}

const EXIT_GENERIC: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_DIVERGED: u8 = 4;
const EXIT_FORMAT: u8 = 5;
const EXIT_CHECK: u8 = 6;

fn core_code(e: &mmae::Error) -> u8 {
    use mmae::Error as E;
    match e {
        _ if e.is_divergence() => EXIT_DIVERGED,
        E::InvalidConfig(_) => EXIT_CONFIG,
        E::Data(_) | E::LabelOutOfRange { .. } => EXIT_DATA,
        E::Format(_) | E::Untrained => EXIT_FORMAT,
        E::Layer { source, .. } | E::Point { source, .. } => core_code(source),
        _ => EXIT_GENERIC,
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<ConfigError>() {
            return EXIT_CONFIG;
        }
        if cause.is::<CheckFailed>() {
            return EXIT_CHECK;
        }
        if let Some(e) = cause.downcast_ref::<mmae::Error>() {
            return core_code(e);
        }
    }
    EXIT_GENERIC
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Train(args) => {
            let (cfg, out) = args.load()?;
            commands::train(&cfg, &out)
        }
        Command::Compress { model, data, out } => commands::compress(&model, &data, &out),
        Command::Decompress {
            model,
            codes,
            out,
            reference,
        } => commands::decompress(&model, &codes, &out, reference.as_deref()),
        Command::Eval(args) => {
            let (cfg, out) = args.load()?;
            commands::eval(&cfg, &out)
        }
        Command::Classify(args) => {
            let (cfg, out) = args.load()?;
            commands::classify(&cfg, &out)
        }
        Command::Gradcheck {
            tolerance,
            json,
            perturb,
        } => commands::gradcheck(tolerance, perturb, json.as_deref()),
        Command::Synth {
            config,
            overrides,
            out,
            deap_dir,
            participants,
            trials,
            channels,
            single_precision,
        } => {
            let cfg = RunConfig::load(&config, &overrides)?;
            let deap = deap_dir.map(|dir| DeapExport {
                dir,
                participants,
                trials,
                channels,
                single_precision,
            });
            commands::synth(&cfg, out.as_deref(), deap)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
