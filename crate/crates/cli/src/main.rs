use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;
use szego_lab::experiment::{run, Command, ExperimentConfig};

#[derive(Parser, Debug)]
#[command(
    name = "szego",
    version,
    about = "Exact-vs-asymptotic checks for equivariant Szego kernels"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    /// JSON experiment configuration; defaults apply to missing fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory for CSV tables and summary.json.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Multiplies every tolerance.
    #[arg(long = "tolerance-scale", global = true)]
    tolerance_scale: Option<f64>,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Cmd {
    /// Isotype dimensions against the reduced-volume prediction.
    Dims,
    /// Kernel diagonal fits, off-locus decay and off-orbit correlation.
    Kernel,
    /// Gaussian J, inner integral and radial integral checks.
    Oscillatory,
    /// Locus orthogonality, equivariance and the D_{G/T} constant.
    Loci,
    /// Measures the scale s in nu = s n / k.
    Calibrate,
}

impl From<Cmd> for Command {
    fn from(c: Cmd) -> Self {
        match c {
            Cmd::Dims => Command::Dims,
            Cmd::Kernel => Command::Kernel,
            Cmd::Oscillatory => Command::Oscillatory,
            Cmd::Loci => Command::Loci,
            Cmd::Calibrate => Command::Calibrate,
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let mut config = match &cli.config {
        Some(path) => match ExperimentConfig::load(path) {
            Ok(c) => c,
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::from(1);
            }
        },
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(s) = cli.tolerance_scale {
        config.tolerance_scale = s;
    }
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be positive");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match run(cli.command.into(), &config, &cli.out) {
        Ok(summary) => {
            for v in &summary.verdicts {
                println!(
                    "{} {}: {:.6e} ({})",
                    if v.pass { "PASS" } else { "FAIL" },
                    v.name,
                    v.value,
                    v.bound
                );
            }
            ExitCode::from(summary.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
