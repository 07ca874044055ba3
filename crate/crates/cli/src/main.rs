//! Command-line driver: solve, adjoint, converge, and audit runs from a
//! JSON configuration, emitting deterministic CSV/JSON artifacts.
//!
//! Exit codes: 0 success, 1 configuration/usage error, 2 solver
//! divergence, 3 invariant violation found by `audit`.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use hjwass::adjoint::{
    adjoint_backward_solve, forward_dual_solve, ibp_check, LinearizedCoeffs, TerminalData,
};
use hjwass::config::RunConfig;
use hjwass::convergence::{refinement_study, ConvergenceError};
use hjwass::hamiltonian::{audit_assumptions, audit_monotonicity_grid};
use hjwass::io;
use hjwass::mesh::Field;
use hjwass::scheme::{Solver, SolveError};

mod audit;

#[derive(Parser)]
#[command(name = "hjwass", version, about = "Monotone schemes for Hamilton-Jacobi equations on graph Wasserstein space")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate the scheme to T; emit field and diagnostics CSVs
    Solve(CommonArgs),
    /// Backward weighted adjoint from a Dirac terminal; emit sigma/rho
    /// snapshots and a conservation timeline
    Adjoint(CommonArgs),
    /// Refinement study across run.n_list; emit rates.csv and rates.json
    Converge(CommonArgs),
    /// Run the structural invariant suite; nonzero exit on violation
    Audit(CommonArgs),
}

#[derive(clap::Args)]
struct CommonArgs {
    /// Path to the JSON run configuration
    #[arg(long)]
    config: PathBuf,
    /// Output directory (falls back to run.out in the config)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Rayon thread-pool size (outputs are identical for any value)
    #[arg(long)]
    threads: Option<usize>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let (args, run): (&CommonArgs, fn(&RunConfig, &Path) -> Result<u8, CliError>) =
        match &cli.command {
            Command::Solve(a) => (a, run_solve),
            Command::Adjoint(a) => (a, run_adjoint),
            Command::Converge(a) => (a, run_converge),
            Command::Audit(a) => (a, audit::run_audit),
        };
    if let Some(k) = args.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(k).build_global() {
            eprintln!("error: cannot initialize thread pool: {e}");
            return ExitCode::from(1);
        }
    }
    let config = match RunConfig::from_path(&args.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    let out_dir = match args
        .out
        .clone()
        .or_else(|| config.out.as_ref().map(PathBuf::from))
    {
        Some(d) => d,
        None => {
            eprintln!("error: no output directory (pass --out or set run.out)");
            return ExitCode::from(1);
        }
    };
    if let Err(e) = std::fs::create_dir_all(&out_dir) {
        eprintln!("error: cannot create {}: {e}", out_dir.display());
        return ExitCode::from(1);
    }
    match run(&config, &out_dir) {
        Ok(code) => ExitCode::from(code),
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Diverged(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Io(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

pub enum CliError {
    Usage(String),
    Diverged(String),
    Io(std::io::Error),
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e)
    }
}

impl From<SolveError> for CliError {
    fn from(e: SolveError) -> Self {
        match e {
            SolveError::NonFinite { .. } => CliError::Diverged(e.to_string()),
            other => CliError::Usage(other.to_string()),
        }
    }
}

fn write(path: &Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents)?;
    Ok(())
}

fn echo_config(config: &RunConfig, solver: Option<&Solver>, out: &Path) -> Result<(), CliError> {
    let (r0, gamma) = match solver {
        Some(s) => (Some(s.spec.r0), Some(s.spec.gamma)),
        None => (None, None),
    };
    write(&out.join("resolved_config.json"), &config.resolved_json(r0, gamma))
}

fn run_solve(config: &RunConfig, out: &Path) -> Result<u8, CliError> {
    let solver = Solver::new(&config.solver)?;
    echo_config(config, Some(&solver), out)?;
    let result = solver.solve()?;
    write(&out.join("field.csv"), &io::field_csv(&result.final_field))?;
    write(
        &out.join("diagnostics.csv"),
        &io::diagnostics_csv(&result.timeline),
    )?;
    Ok(0)
}

fn dirac_site(config: &RunConfig, solver: &Solver) -> Result<usize, CliError> {
    let tuple = config
        .dirac_site
        .as_ref()
        .ok_or_else(|| CliError::Usage("adjoint needs run.dirac_site in the config".into()))?;
    let site = solver
        .lattice
        .site_at(tuple)
        .ok_or_else(|| CliError::Usage(format!("dirac_site {tuple:?} is not a lattice site")))?;
    if solver.lattice.is_boundary(site) {
        return Err(CliError::Usage(format!(
            "dirac_site {tuple:?} lies on the simplex boundary"
        )));
    }
    Ok(site)
}

fn run_adjoint(config: &RunConfig, out: &Path) -> Result<u8, CliError> {
    let solver = Solver::new(&config.solver)?;
    echo_config(config, Some(&solver), out)?;
    let site = dirac_site(config, &solver)?;
    let traj = solver.solve_trajectory()?;
    let run = adjoint_backward_solve(&solver, &traj, &TerminalData::DiracAtSite(site), false)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    write(&out.join("sigma_0.csv"), &io::field_csv(&run.initial.sigma))?;
    write(&out.join("rho_0.csv"), &io::field_csv(&run.initial.rho))?;
    write(
        &out.join("sigma_terminal.csv"),
        &io::field_csv(&run.terminal.sigma),
    )?;
    write(
        &out.join("rho_terminal.csv"),
        &io::field_csv(&run.terminal.rho),
    )?;
    write(&out.join("conservation.csv"), &io::conservation_csv(&run))?;
    Ok(0)
}

fn run_converge(config: &RunConfig, out: &Path) -> Result<u8, CliError> {
    let n_list = config
        .n_list
        .as_ref()
        .ok_or_else(|| CliError::Usage("converge needs run.n_list in the config".into()))?;
    echo_config(config, None, out)?;
    let t = config.solver.t_final;
    let record = [0.25 * t, 0.5 * t, 0.75 * t];
    let report = match refinement_study(&config.solver, n_list, &record) {
        Ok(r) => r,
        Err(ConvergenceError::Solve(e)) => return Err(e.into()),
        Err(e) => return Err(CliError::Usage(e.to_string())),
    };
    write(&out.join("rates.csv"), &io::rates_csv(&report))?;
    write(&out.join("rates.json"), &io::rates_json(&report))?;
    Ok(0)
}
