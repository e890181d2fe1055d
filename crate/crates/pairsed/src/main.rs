use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pairsed::config::{parse_config, ConfigError, ExperimentConfig, Mode};
use pairsed::{run, RunError};

/// Sedimenting sphere-pair simulator and diagnostics.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Particle simulation of N pairs.
    Micro(Common),
    /// Kinetic mean-field ensemble.
    Meso(Common),
    /// Coupled density and orientation field.
    Correlated(Common),
    /// Convergence sweep over a ladder of N.
    Converge(Common),
    /// Kernel and pair-matrix identity suite.
    KernelsCheck(Common),
}

#[derive(Args)]
struct Common {
    /// TOML experiment description; `mode` may be omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the seed of the config.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    threads: usize,
}

fn load(mode: Mode, c: &Common) -> Result<ExperimentConfig, RunError> {
    let mode_line = format!(
        "mode = {}\n",
        serde_json::to_string(&mode).expect("mode serializes")
    );
    let text = match &c.config {
        Some(p) => std::fs::read_to_string(p)?,
        None => String::new(),
    };
    let has_mode = text
        .lines()
        .any(|l| l.trim_start().starts_with("mode") && l.contains('='));
    let mut cfg = if has_mode {
        parse_config(&text)?
    } else {
        // The prepended line shifts reported line numbers by one.
        parse_config(&(mode_line + &text)).map_err(|e| match e {
            ConfigError::Parse {
                line,
                column,
                message,
            } => ConfigError::Parse {
                line: line.saturating_sub(1),
                column,
                message,
            },
            other => other,
        })?
    };
    if cfg.mode != mode {
        return Err(ConfigError::Invalid {
            field: "mode".into(),
            constraint: format!("config declares {:?} but the {:?} command was used", cfg.mode, mode),
        }
        .into());
    }
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (mode, common) = match &cli.command {
        Command::Micro(c) => (Mode::Micro, c),
        Command::Meso(c) => (Mode::MesoKinetic, c),
        Command::Correlated(c) => (Mode::MesoCorrelated, c),
        Command::Converge(c) => (Mode::Converge, c),
        Command::KernelsCheck(c) => (Mode::KernelsCheck, c),
    };
    let result = load(mode, common).and_then(|cfg| run(&cfg, &common.out, common.threads));
    match result {
        Ok(m) => {
            println!(
                "wrote {} files to {} (config {})",
                m.files.len(),
                common.out.display(),
                &m.config_hash[..12]
            );
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
