use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use dprp_cli::config::ExperimentConfig;
use dprp_cli::sweeps;

#[derive(Parser)]
#[command(name = "dprp", version, about = "Private random-projection FedSGD over an analog MAC")]
struct Cli {
    /// Base preset: `large` or `small`. Defaults to `small` for simulate and
    /// verify, `large` otherwise.
    #[arg(long, global = true)]
    preset: Option<String>,
    /// TOML file applied on top of the preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// `key=value` override, applied last. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file; stdout when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train on the synthetic task and emit per-iteration traces.
    Simulate,
    /// T-fold epsilon against r.
    LdpCurve,
    /// Gap bound against r.
    ConvCurve,
    /// Gap bound against the T-fold epsilon.
    Tradeoff,
    /// Joint choice of r and artificial noise.
    Allocate {
        #[arg(long, value_enum, default_value = "json")]
        format: Format,
    },
    /// Monte Carlo checks of the analytical moments and bounds.
    Verify {
        /// Scales every tolerance; for checking that failures are reported.
        #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
        corrupt_tolerance: f64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

fn load(cli: &Cli) -> Result<ExperimentConfig> {
    let preset = cli.preset.clone().unwrap_or_else(|| match cli.command {
        Command::Simulate | Command::Verify { .. } => "small".into(),
        _ => "large".into(),
    });
    let mut overrides = cli.overrides.clone();
    if let Some(seed) = cli.seed {
        overrides.push(format!("seed={seed}"));
    }
    ExperimentConfig::load(&preset, cli.config.as_deref(), &overrides)
}

fn emit(cli: &Cli, text: &str) -> Result<()> {
    match &cli.out {
        Some(path) => std::fs::write(path, text).with_context(|| format!("writing {}", path.display())),
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn execute(cli: &Cli) -> Result<bool> {
    let config = load(cli)?;
    eprintln!("# resolved configuration (fingerprint {})", config.fingerprint());
    for line in config.to_toml().lines() {
        eprintln!("#   {line}");
    }
    let mut ok = true;
    let text = match &cli.command {
        Command::Simulate => {
            let runs = sweeps::simulate(&config)?;
            for (name, trace) in &runs {
                eprintln!(
                    "# {name}: final_gap={:.6e} redraws={} clipped_gradients={} smoothness={:.6} clip_bound={} bound_L={:.6}",
                    trace.final_gap, trace.redraws, trace.clipped, trace.smoothness_true, trace.clip_bound, trace.bound_l
                );
                if trace.clipped > 0 {
                    eprintln!("# {name}: warning: clipping was active, the gradient bound was enforced");
                }
            }
            sweeps::to_csv(&sweeps::trace_rows(&config, &runs))?
        }
        Command::LdpCurve => sweeps::to_csv(&sweeps::sweep_ldp(&config)?)?,
        Command::ConvCurve => sweeps::to_csv(&sweeps::sweep_convergence(&config)?)?,
        Command::Tradeoff => sweeps::to_csv(&sweeps::sweep_tradeoff(&config)?)?,
        Command::Allocate { format } => {
            let (problem, result) = sweeps::allocate(&config)?;
            if !result.feasible {
                eprintln!("# warning: no r meets every client's privacy target");
            }
            match format {
                Format::Csv => sweeps::to_csv(&sweeps::allocation_rows(&config, &problem, &result))?,
                Format::Json => {
                    let value = serde_json::json!({
                        "fingerprint": config.fingerprint(),
                        "problem": problem,
                        "result": result,
                    });
                    serde_json::to_string_pretty(&value)? + "\n"
                }
            }
        }
        Command::Verify { corrupt_tolerance } => {
            if !corrupt_tolerance.is_finite() {
                bail!("--corrupt-tolerance must be finite");
            }
            let outcomes = sweeps::verify(&config, *corrupt_tolerance)?;
            for o in &outcomes {
                eprintln!("{o}");
            }
            ok = outcomes.iter().all(|o| o.passed);
            sweeps::to_csv(&sweeps::check_rows(&config, &outcomes))?
        }
    };
    emit(cli, &text)?;
    Ok(ok)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("dprp: one or more checks failed");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
