mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Args, Parser, Subcommand};

use crate::config::{parse, parse_assignment, Entry, RunConfig};
use crate::error::CliError;

/// Hyperspectral denoising with self-modulating CNNs.
#[derive(Debug, Parser)]
#[command(name = "smcnn", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Global {
    /// Flat key = value config file.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,
    /// Overrides one config key; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// desk (default) or paper.
    #[arg(long, global = true)]
    profile: Option<String>,
    /// smcnn, wmcnn or smcnn-lite.
    #[arg(long, global = true)]
    variant: Option<String>,
    #[arg(long, global = true)]
    skip_taps: Option<usize>,
    /// Seeds noise, initialization and shuffling unless set per section.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Caps the worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Writes a synthetic clean cube of smooth endmember mixtures.
    Synth {
        #[arg(long, default_value_t = 32)]
        rows: usize,
        #[arg(long, default_value_t = 32)]
        cols: usize,
        #[arg(long, default_value_t = 16)]
        bands: usize,
        #[arg(long)]
        endmembers: Option<usize>,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Corrupts a clean cube and writes the noisy cube and the noise log.
    Simulate {
        #[arg(short, long)]
        input: Option<PathBuf>,
        #[arg(short, long)]
        output: Option<PathBuf>,
        /// Noise log path; defaults to `<output>.noise.txt`.
        #[arg(long)]
        log: Option<PathBuf>,
        /// Noise case 1-5.
        #[arg(long)]
        case: Option<String>,
    },
    /// Trains a model; writes best.ckpt, train_log.csv and resolved.cfg.
    Train {
        #[arg(long)]
        clean: Option<PathBuf>,
        /// Fixed noisy counterpart; corrupted from the config otherwise.
        #[arg(long)]
        noisy: Option<PathBuf>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Optimizer step budget.
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        case: Option<String>,
    },
    /// Denoises a cube with a trained checkpoint.
    Denoise {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(short, long)]
        input: Option<PathBuf>,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Scores an estimate against the clean cube; writes bands.csv and
    /// summary.csv.
    Evaluate {
        #[arg(long)]
        estimate: Option<PathBuf>,
        #[arg(long)]
        clean: Option<PathBuf>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Prints layer shapes and parameter counts.
    Report {
        /// Summarizes a trained model instead of the configured one.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
}

fn flag(entries: &mut Vec<Entry>, key: &str, value: Option<String>) {
    if let Some(value) = value {
        entries.push(Entry {
            key: key.to_string(),
            value,
            origin: format!("--{}", key.rsplit('.').next().unwrap_or(key).replace('_', "-")),
        });
    }
}

fn path_flag(entries: &mut Vec<Entry>, key: &str, value: &Option<PathBuf>) {
    flag(entries, key, value.as_ref().map(|p| p.display().to_string()));
}

fn resolve(cli: &Cli) -> Result<RunConfig, CliError> {
    let g = &cli.global;
    let mut entries = match &g.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::from(e).at(path))?;
            parse(&text, &path.display().to_string())?
        }
        None => Vec::new(),
    };
    for s in &g.set {
        entries.push(parse_assignment(s)?);
    }
    flag(&mut entries, "profile", g.profile.clone());
    flag(&mut entries, "model.variant", g.variant.clone());
    flag(&mut entries, "model.skip_taps", g.skip_taps.map(|v| v.to_string()));
    flag(&mut entries, "seed", g.seed.map(|v| v.to_string()));
    flag(&mut entries, "threads", g.threads.map(|v| v.to_string()));
    match &cli.command {
        Command::Synth { output, .. } => path_flag(&mut entries, "io.output", output),
        Command::Simulate { input, output, log, case } => {
            path_flag(&mut entries, "io.input", input);
            path_flag(&mut entries, "io.output", output);
            path_flag(&mut entries, "io.log", log);
            flag(&mut entries, "noise.case", case.clone());
        }
        Command::Train { clean, noisy, out_dir, steps, case } => {
            path_flag(&mut entries, "io.clean", clean);
            path_flag(&mut entries, "io.input", noisy);
            path_flag(&mut entries, "io.out_dir", out_dir);
            flag(&mut entries, "train.max_steps", steps.map(|v| v.to_string()));
            flag(&mut entries, "noise.case", case.clone());
        }
        Command::Denoise { checkpoint, input, output } => {
            path_flag(&mut entries, "io.checkpoint", checkpoint);
            path_flag(&mut entries, "io.input", input);
            path_flag(&mut entries, "io.output", output);
        }
        Command::Evaluate { estimate, clean, out_dir } => {
            path_flag(&mut entries, "io.input", estimate);
            path_flag(&mut entries, "io.clean", clean);
            path_flag(&mut entries, "io.out_dir", out_dir);
        }
        Command::Report { checkpoint } => path_flag(&mut entries, "io.checkpoint", checkpoint),
    }
    RunConfig::resolve(&entries)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = resolve(&cli)?;
    if let Some(n) = cfg.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::Synth { rows, cols, bands, endmembers, .. } => commands::synth(&cfg, rows, cols, bands, endmembers),
        Command::Simulate { .. } => commands::simulate(&cfg),
        Command::Train { .. } => commands::train(&cfg),
        Command::Denoise { .. } => commands::denoise(&cfg),
        Command::Evaluate { .. } => commands::evaluate(&cfg),
        Command::Report { .. } => commands::report(&cfg),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.global.verbose {
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
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
