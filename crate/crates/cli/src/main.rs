//! `gl-lattice`: batch driver for spectra, Abrikosov-function scans, bifurcation branches,
//! energy curves and gauge fixing.
//!
//! Exit codes: 0 success, 1 failed verification, 2 usage or validation error,
//! 3 mathematical precondition failure, 4 convergence failure.

mod commands;
mod parse;
mod verify;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use gl_lattice::Error;

/// Environment variable fixing the worker-thread count for scans.
pub const THREADS_ENV: &str = "GL_LATTICE_THREADS";

#[derive(Parser, Debug)]
#[command(name = "gl-lattice", version, about = "Abrikosov vortex lattices near the bifurcation point")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Lowest eigenvalues of the magnetic Laplacian against the Landau levels (2k+1)n.
    Spectrum {
        #[arg(long, default_value_t = 1)]
        n: u32,
        /// Lattice shape as `re,im` or `a+bi`.
        #[arg(long, default_value = "0,1", allow_hyphen_values = true)]
        tau: String,
        #[arg(long, default_value_t = 64)]
        grid: usize,
        /// Number of eigenvalues.
        #[arg(long, default_value_t = 4)]
        k: usize,
    },
    /// Abrikosov function on a rectangle of shapes, as CSV.
    BetaScan {
        /// `min:max` range of Re tau.
        #[arg(long, default_value = "-0.5:0.5", allow_hyphen_values = true)]
        re: String,
        /// `min:max` range of Im tau.
        #[arg(long, default_value = "0.8:1.6", allow_hyphen_values = true)]
        im: String,
        /// Points per axis as `RExIM`.
        #[arg(long, default_value = "11x9")]
        steps: String,
        #[arg(long, default_value_t = 64)]
        grid: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Minimize the Abrikosov function from a starting shape.
    MinimizeBeta {
        #[arg(long, default_value = "0.4,1.0", allow_hyphen_values = true)]
        start: String,
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
        #[arg(long, default_value_t = 48)]
        grid: usize,
    },
    /// Bifurcating branch at the given amplitudes or parameter values, as JSON.
    Branch {
        #[arg(long, default_value_t = 1.0)]
        kappa: f64,
        #[arg(long, default_value = "0,1", allow_hyphen_values = true)]
        tau: String,
        /// Amplitudes: comma list or `start:stop:count`.
        #[arg(long, conflicts_with = "lambda")]
        t: Option<String>,
        /// Values of lambda = kappa^2 / b instead of amplitudes.
        #[arg(long)]
        lambda: Option<String>,
        #[arg(long, default_value_t = 32)]
        grid: usize,
        /// Write the last converged state here.
        #[arg(long)]
        state: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Energy against mu = kappa^2 - b with its polynomial fit, as JSON.
    EnergyCurve {
        #[arg(long, default_value_t = std::f64::consts::SQRT_2)]
        kappa: f64,
        #[arg(long, default_value = "0.5,0.8660254037844386", allow_hyphen_values = true)]
        tau: String,
        /// Values of mu: comma list or `start:stop:count`.
        #[arg(long, default_value = "0.00125:0.01:8")]
        mu: String,
        #[arg(long, default_value_t = 32)]
        grid: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Bring a stored state to normal form.
    GaugeFix {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long = "out")]
        output: PathBuf,
    },
    /// Run the invariant suites.
    Verify {
        #[arg(long, value_enum, default_value_t = Level::Quick)]
        level: Level,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Level {
    Quick,
    Full,
}

/// Failure of a command, carrying its exit code.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Precondition(String),
    Convergence(String),
    Verification(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Verification(_) => 1,
            Failure::Usage(_) => 2,
            Failure::Precondition(_) => 3,
            Failure::Convergence(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Precondition(m) | Failure::Convergence(m) | Failure::Verification(m) => m,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::NoConvergence { .. } => Failure::Convergence(msg),
            Error::FluxMismatch { .. } | Error::NonzeroMean(_) | Error::IllConditioned(_) | Error::OutsideBranch(_) => {
                Failure::Precondition(msg)
            }
            Error::DegenerateLattice
            | Error::InvalidParameter(_)
            | Error::GridMismatch
            | Error::Format(_)
            | Error::Io(_) => Failure::Usage(msg),
        }
    }
}

pub type CmdResult = std::result::Result<(), Failure>;

fn configure_threads() -> CmdResult {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .parse()
            .ok()
            .filter(|n| *n > 0)
            .ok_or_else(|| Failure::Usage(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Usage(e.to_string()))?;
    }
    Ok(())
}

fn run(cli: Cli) -> CmdResult {
    configure_threads()?;
    match cli.command {
        Command::Spectrum { n, tau, grid, k } => commands::spectrum(n, &tau, grid, k),
        Command::BetaScan { re, im, steps, grid, out } => commands::beta_scan(&re, &im, &steps, grid, out.as_deref()),
        Command::MinimizeBeta { start, tol, grid } => commands::minimize_beta(&start, tol, grid),
        Command::Branch { kappa, tau, t, lambda, grid, state, out } => commands::branch(commands::BranchArgs {
            kappa,
            tau,
            t,
            lambda,
            grid,
            state,
            out,
        }),
        Command::EnergyCurve { kappa, tau, mu, grid, out } => commands::energy_curve(kappa, &tau, &mu, grid, out.as_deref()),
        Command::GaugeFix { input, output } => commands::gauge_fix(&input, &output),
        Command::Verify { level, seed } => verify::run(level, seed),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn library_errors_map_to_exit_codes() {
        let code = |e: Error| Failure::from(e).code();
        assert_eq!(
            code(Error::NoConvergence {
                solver: "newton",
                iterations: 40,
                residual: 1.0
            }),
            4
        );
        assert_eq!(code(Error::FluxMismatch { found: 7.0, expected: 6.0 }), 3);
        assert_eq!(code(Error::NonzeroMean(0.1)), 3);
        assert_eq!(code(Error::OutsideBranch("below".into())), 3);
        assert_eq!(code(Error::Format("bad".into())), 2);
        assert_eq!(code(Error::InvalidParameter("x".into())), 2);
        assert_eq!(Failure::Verification(String::new()).code(), 1);
    }
}
