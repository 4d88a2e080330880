use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use deepfosls_cli::commands::{self, GradcheckOptions};
use deepfosls_cli::{CliError, TrainConfig};

#[derive(Parser)]
#[command(name = "deepfosls", version, about = "Neural least-squares solver for the obstacle problem")]
struct Cli {
    /// Run configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides `output_dir` from the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Use K as init seed and K + 3 as sampling seed.
    #[arg(long, global = true, value_name = "K")]
    seed_override: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the three networks and write logs, checkpoints and a slice.
    Train,
    /// Evaluate the checkpoints in the output directory.
    Eval,
    /// Compare analytic and finite-difference parameter gradients.
    Gradcheck {
        #[arg(long, default_value_t = 500)]
        max_coords: usize,
        #[arg(long, hide = true)]
        corrupt_gradient: bool,
    },
    /// Decay rate of the batch-loss spread with the batch size.
    Mccheck {
        #[arg(long, value_delimiter = ',', default_values_t = [100, 1000, 10000])]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = 50)]
        repeats: usize,
    },
    /// Characteristic network of a random simplex against the barycentric test.
    Chidemo {
        #[arg(long)]
        dim: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 10_000)]
        points: usize,
    },
}

fn load(cli: &Cli) -> Result<TrainConfig, CliError> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::Config("--config is required".into()))?;
    let mut cfg = TrainConfig::load(path)?;
    if let Some(k) = cli.seed_override {
        cfg.override_seed(k);
    }
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    Ok(cfg)
}

fn check(passed: bool, what: &str) -> Result<(), CliError> {
    if passed {
        Ok(())
    } else {
        Err(CliError::Check(what.into()))
    }
}

fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Train => {
            let cfg = load(cli)?;
            let rep = commands::train(&cfg, &cfg.output_dir)?;
            match rep.last {
                Some(r) => {
                    print!("{} iterations, final loss {:.6e}", r.iter, r.loss);
                    if let Some(e) = r.l2_error {
                        print!(", l2 error {e:.6e}");
                    }
                    println!();
                }
                None => println!("no iterations run"),
            }
            println!("artifacts in {}", cfg.output_dir.display());
        }
        Command::Eval => {
            let cfg = load(cli)?;
            println!("{}", commands::eval(&cfg, &cfg.output_dir)?);
        }
        Command::Gradcheck {
            max_coords,
            corrupt_gradient,
        } => {
            let cfg = load(cli)?;
            let opts = GradcheckOptions {
                max_coords: *max_coords,
                corrupt: *corrupt_gradient,
                ..GradcheckOptions::default()
            };
            let rep = commands::gradcheck(&cfg, opts)?;
            println!("{rep}");
            check(rep.passed(), "gradient mismatch")?;
        }
        Command::Mccheck { sizes, repeats } => {
            let cfg = load(cli)?;
            let rep = commands::mccheck(&cfg, sizes, *repeats)?;
            println!("{rep}");
            check(rep.passed(), "slope outside the band")?;
        }
        Command::Chidemo { dim, seed, points } => {
            let rep = commands::chidemo(*dim, *seed, *points)?;
            println!("{rep}");
            check(rep.passed(), "characteristic network disagrees")?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
