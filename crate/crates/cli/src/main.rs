use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use chinpaint_cli::commands::{self, Inputs};
use chinpaint_cli::{CliResult, RunConfig};

#[derive(Parser)]
#[command(name = "chinpaint", version, about = "Cahn-Hilliard inpainting with an optimised fidelity coefficient")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Run configuration (`key = value` lines)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one configuration key; repeatable
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    /// Grayscale image (PGM or PNG); the built-in stripe image when omitted
    #[arg(long, global = true)]
    image: Option<PathBuf>,
    /// Damaged-region mask, same size as the image
    #[arg(long, global = true)]
    mask: Option<PathBuf>,
    /// Directory for output files
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
    /// Print errors only
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Subcommand, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Forward solve with a constant fidelity
    Inpaint,
    /// Optimise the fidelity coefficient
    Optimize,
    /// Compare the adjoint gradient with finite differences
    GradCheck,
    /// Check Hessian symmetry and second differences
    HessCheck,
    /// Large-fidelity decay experiment
    DecayExperiment,
    /// Print the positive well of the potential
    Mstar,
    /// Recompute diagnostics from a stored trajectory
    ExportDiagnostics,
}

fn run(cli: &Cli) -> CliResult<Vec<String>> {
    let cfg = RunConfig::load(cli.config.as_deref(), &cli.set)?;
    if cfg.threads > 0 {
        // Fails only if a pool already exists, which cannot happen here.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(cfg.threads).build_global();
    }
    if cli.command == Command::Mstar {
        return commands::mstar(&cfg);
    }
    commands::prepare_out_dir(&cli.out_dir, &cfg)?;
    if cli.command == Command::ExportDiagnostics {
        return commands::export_diagnostics(&cfg, &cli.out_dir);
    }
    let inputs = Inputs { image: cli.image.clone(), mask: cli.mask.clone() };
    let pb = commands::build_problem(&cfg, &inputs)?;
    log::info!("grid {}x{}, m* = {}", pb.grid.nx(), pb.grid.ny(), pb.m_star);
    let dir = &cli.out_dir;
    match cli.command {
        Command::Inpaint => commands::inpaint(&cfg, &pb, dir),
        Command::Optimize => commands::optimize(&cfg, &pb, dir),
        Command::GradCheck => commands::grad_check(&cfg, &pb, dir),
        Command::HessCheck => commands::hess_check(&cfg, &pb, dir),
        Command::DecayExperiment => commands::decay_experiment(&cfg, &pb, dir),
        Command::Mstar | Command::ExportDiagnostics => unreachable!("handled above"),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(lines) => {
            if !cli.quiet {
                for l in lines {
                    println!("{l}");
                }
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
