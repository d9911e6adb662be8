use std::path::{Path, PathBuf};
use std::process;

use clap::{Parser, Subcommand};

use reparam_cli::{
    cmd_features, cmd_merge, cmd_sweep, cmd_train, cmd_verify, parse_seed_list, CliError, FeatureFormat, Result,
    RunSpec, DEFAULT_TOLERANCE, EXIT_NUMERIC, EXIT_OK,
};
use reparam_core::reparam::DEFAULT_PROBES;

#[derive(Parser)]
#[command(name = "reparam", version, about = "Train with expanded dense layers, deploy merged")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every seed of a run spec; writes checkpoint, logs and summary.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated seeds, overriding the spec.
        #[arg(long)]
        seed_list: Option<String>,
        /// Output directory, overriding the spec.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Merge every expanded layer of a checkpoint.
    Merge {
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_PROBES)]
        probes: usize,
    },
    /// Compare two checkpoints' logits on seeded random inputs.
    Verify {
        a: PathBuf,
        b: PathBuf,
        #[arg(long, default_value_t = DEFAULT_PROBES)]
        probes: usize,
        #[arg(long, default_value_t = DEFAULT_TOLERANCE)]
        tolerance: f64,
    },
    /// Train, merge and score each point of one ablation axis.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// ratio, depth, activation or selector.
        #[arg(long)]
        axis: String,
        #[arg(long)]
        seed_list: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Extract 78-dim features from a directory of 16 kHz mono WAVs.
    Features {
        wav_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 5.0)]
        seconds: f64,
        #[arg(long, value_enum, default_value_t = FeatureFormat::Csv)]
        format: FeatureFormat,
        /// Per-feature zero mean, unit variance within each clip.
        #[arg(long)]
        zscore: bool,
    },
}

fn load_spec(config: &Path, seed_list: Option<&str>, out: Option<PathBuf>) -> Result<(RunSpec, PathBuf)> {
    let mut spec = RunSpec::from_path(config)?;
    if let Some(s) = seed_list {
        spec.train.seeds = parse_seed_list(s)?;
    }
    let out = out
        .or_else(|| spec.out.clone())
        .ok_or_else(|| CliError::usage("no output directory: pass --out or set \"out\" in the spec"))?;
    Ok((spec, out))
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Train { config, seed_list, out } => {
            let (spec, out) = load_spec(&config, seed_list.as_deref(), out)?;
            let report = cmd_train(&spec, &out)?;
            print_json(&report)?;
            Ok(report.exit_code())
        }
        Command::Merge { input, out, probes } => {
            print_json(&cmd_merge(&input, &out, probes)?)?;
            Ok(EXIT_OK)
        }
        Command::Verify {
            a,
            b,
            probes,
            tolerance,
        } => {
            let report = cmd_verify(&a, &b, probes, tolerance)?;
            print_json(&report)?;
            Ok(report.exit_code())
        }
        Command::Sweep {
            config,
            axis,
            seed_list,
            out,
        } => {
            let (spec, out) = load_spec(&config, seed_list.as_deref(), out)?;
            let report = cmd_sweep(&spec, &axis, &out)?;
            print!("{}", reparam_cli::sweep::to_csv(&report.rows));
            Ok(if report.any_diverged() { EXIT_NUMERIC } else { EXIT_OK })
        }
        Command::Features {
            wav_dir,
            out,
            seconds,
            format,
            zscore,
        } => {
            print_json(&cmd_features(&wav_dir, &out, seconds, format, zscore)?)?;
            Ok(EXIT_OK)
        }
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let code = match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    process::exit(code);
}
