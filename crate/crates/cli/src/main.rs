use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use u1evolve::commands::{
    cmd_convergence, cmd_diagnose, cmd_evolve, cmd_plot, cmd_solve_constraints, convergence_table, thread_cap,
};
use u1evolve::config::{parse_config, RunConfig};
use u1evolve::error::{CliError, Result};

#[derive(Parser)]
#[command(name = "u1evolve", version, about = "Elliptic-gauge evolution of U(1)-symmetric vacuum spacetimes")]
struct Cli {
    /// Print progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the constraints for the configured free data.
    SolveConstraints {
        #[arg(short, long)]
        config: Option<PathBuf>,
        /// Overrides `[output] directory`.
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Evolve to `t_end`.
    Evolve {
        #[arg(short, long)]
        config: Option<PathBuf>,
        #[arg(short, long)]
        out: Option<PathBuf>,
        /// Start from a snapshot instead of solving the constraints.
        #[arg(long)]
        from: Option<PathBuf>,
    },
    /// Print the diagnostics row of a snapshot.
    Diagnose {
        snapshot: PathBuf,
        /// Supplies the norm weights.
        #[arg(short, long)]
        config: Option<PathBuf>,
    },
    /// Run the configured problem at `n, 2n-1, ...`.
    Convergence {
        #[arg(short, long)]
        config: Option<PathBuf>,
        #[arg(short, long)]
        out: Option<PathBuf>,
        #[arg(short, long, default_value_t = 3)]
        levels: usize,
    },
    /// Emit gnuplot scripts for the artifacts in a run directory.
    Plot { dir: PathBuf },
}

fn load(config: &Option<PathBuf>, out: &Option<PathBuf>) -> Result<RunConfig> {
    let mut cfg = match config {
        Some(p) => parse_config(p)?,
        None => RunConfig::default(),
    };
    if let Some(o) = out {
        cfg.output.directory = o.clone();
    }
    Ok(cfg)
}

fn execute(cli: &Cli) -> Result<()> {
    let threads = thread_cap()?;
    if cli.verbose {
        if let Some(t) = threads {
            eprintln!("thread cap {t}");
        }
    }
    match &cli.command {
        Command::SolveConstraints { config, out } => {
            let cfg = load(config, out)?;
            let data = cmd_solve_constraints(&cfg)?;
            if cli.verbose {
                let r = &data.report;
                eprintln!(
                    "alpha {:e}, momentum {:e}, hamiltonian {:e}, shift {:e}",
                    r.alpha, r.momentum_residual, r.hamiltonian_residual, r.shift_residual
                );
            }
        }
        Command::Evolve { config, out, from } => {
            let cfg = load(config, out)?;
            let rep = cmd_evolve(&cfg, from.as_deref())?;
            if cli.verbose {
                eprintln!("{} steps to t = {:e}", rep.summary.steps, rep.summary.t_final);
            }
        }
        Command::Diagnose { snapshot, config } => {
            let cfg = load(config, &None)?;
            print!("{}", cmd_diagnose(snapshot, &cfg)?);
        }
        Command::Convergence { config, out, levels } => {
            let cfg = load(config, out)?;
            let results = cmd_convergence(&cfg, *levels)?;
            if cli.verbose {
                eprint!("{}", convergence_table(&results));
            }
        }
        Command::Plot { dir } => {
            for p in cmd_plot(dir)? {
                if cli.verbose {
                    eprintln!("wrote {}", p.display());
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            report_exit(&e)
        }
    }
}

fn report_exit(e: &CliError) -> ExitCode {
    ExitCode::from(e.exit_code() as u8)
}
