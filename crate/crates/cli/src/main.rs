use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use css_envelope::envelope::AxisSpec;
use css_envelope_cli::commands::{self, CliError, Target, EXIT_USAGE};

/// Security, schedulability and stability envelope analysis.
#[derive(Debug, Parser)]
#[command(name = "css-envelope", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum TargetArg {
    Rt,
    Envelope,
    Stability,
    Entropy,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Evaluate one module aggregation at the configured operating point.
    Analyze {
        config: PathBuf,
        #[arg(long, value_enum)]
        target: TargetArg,
    },
    /// Grid over one or two operating-point axes.
    Sweep {
        config: PathBuf,
        #[arg(long)]
        axis: String,
        #[arg(long, allow_negative_numbers = true)]
        from: f64,
        #[arg(long, allow_negative_numbers = true)]
        to: f64,
        #[arg(long)]
        steps: usize,
        /// Second axis as NAME:FROM:TO:STEPS.
        #[arg(long, value_parser = parse_axis)]
        axis2: Option<AxisSpec>,
    },
    /// Run the epoch simulator and write the log.
    Simulate {
        config: PathBuf,
        #[arg(long)]
        epochs: u64,
        #[arg(long)]
        seed: u64,
    },
    /// Run every analytic-versus-empirical check.
    VerifyBounds { config: PathBuf },
}

fn parse_axis(s: &str) -> Result<AxisSpec, String> {
    let parts: Vec<&str> = s.split(':').collect();
    let [name, from, to, steps] = parts[..] else {
        return Err("expected NAME:FROM:TO:STEPS".into());
    };
    let f = |x: &str| x.parse::<f64>().map_err(|e| format!("{x:?}: {e}"));
    Ok(AxisSpec {
        name: name.to_string(),
        from: f(from)?,
        to: f(to)?,
        steps: steps.parse().map_err(|e| format!("{steps:?}: {e}"))?,
    })
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var("CSS_ENVELOPE_THREADS") else {
        return Ok(());
    };
    let n: usize = v.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        CliError::Usage(format!(
            "CSS_ENVELOPE_THREADS must be a positive integer, got {v:?}"
        ))
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(e.to_string()))
}

fn run(cli: Cli, out: &mut dyn Write) -> Result<u8, CliError> {
    configure_threads()?;
    match cli.command {
        Command::Analyze { config, target } => {
            let target = match target {
                TargetArg::Rt => Target::Rt,
                TargetArg::Envelope => Target::Envelope,
                TargetArg::Stability => Target::Stability,
                TargetArg::Entropy => Target::Entropy,
            };
            commands::analyze(&commands::load(&config)?, target, out)
        }
        Command::Sweep {
            config,
            axis,
            from,
            to,
            steps,
            axis2,
        } => {
            let axis1 = AxisSpec {
                name: axis,
                from,
                to,
                steps,
            };
            commands::sweep(&commands::load(&config)?, &axis1, axis2.as_ref(), out)
        }
        Command::Simulate {
            config,
            epochs,
            seed,
        } => commands::simulate(&commands::load(&config)?, epochs, seed, out),
        Command::VerifyBounds { config } => commands::verify_bounds(&commands::load(&config)?, out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    match run(cli, &mut out) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            let _ = out.flush();
            eprintln!("error: {e}");
            ExitCode::from(EXIT_USAGE)
        }
    }
}
