//! Experiment runner for the classical vs. two-photon interferometric microphone.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use qmic_core::Scheme;

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};

#[derive(Parser)]
#[command(name = "qmic", version, about = "Classical vs. two-photon interferometric sensing experiments")]
struct Cli {
    /// JSON experiment config; omitted keys keep their defaults, unknown keys are rejected.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Global seed (overrides `seed` in the config).
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Output directory (overrides `out_dir` in the config).
    #[arg(long, global = true, value_name = "DIR")]
    out_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Difference signal of both sensors over a mirror displacement sweep.
    FringeSweep,
    /// Phase-noise spectra of both sensors at equal photon rate, floors and enhancement.
    NoiseBenchmark,
    /// Record one WAV file through a sensor.
    Record {
        /// Clean input WAV.
        #[arg(long = "in", value_name = "WAV")]
        input: PathBuf,
        #[arg(long, value_parser = ["classical", "quantum"])]
        scheme: String,
        /// Playback volume of PCM full scale, dB_SPL.
        #[arg(long, value_name = "DB_SPL", allow_negative_numbers = true)]
        volume: f64,
        /// Reconstructed output WAV.
        #[arg(long, value_name = "WAV")]
        out: PathBuf,
    },
    /// Record a manifest of clips (or synthetic clips) over the volume grid and fit SNR against volume.
    RecordBatch {
        /// CSV `file,volume_db_spl,scheme,seed`; paths relative to the manifest.
        #[arg(long, value_name = "CSV")]
        manifest: Option<PathBuf>,
    },
    /// Paired SRT statistics from a CSV or from synthetic listeners.
    Srt {
        /// CSV `subject,srt_classical_db,srt_quantum_db`.
        #[arg(long, value_name = "CSV")]
        input: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> CliResult<()> {
    let mut cfg = ExperimentConfig::load(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(dir) = cli.out_dir {
        cfg.out_dir = dir;
    }
    match cli.command {
        Command::FringeSweep => commands::fringe_sweep_cmd(&cfg),
        Command::NoiseBenchmark => commands::noise_benchmark_cmd(&cfg),
        Command::Record { input, scheme, volume, out } => {
            let scheme: Scheme = scheme.parse().map_err(|_| CliError::config("scheme", "expected classical or quantum"))?;
            commands::record_cmd(
                &cfg,
                commands::RecordArgs {
                    input: &input,
                    scheme,
                    volume,
                    output: &out,
                },
            )
        }
        Command::RecordBatch { manifest } => commands::record_batch_cmd(&cfg, manifest.as_deref()).map(|_| ()),
        Command::Srt { input } => commands::srt_cmd(&cfg, input.as_deref()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code as u8)
        }
    }
}
