//! Command-line front end: simulation, fitting, sampling, and experiment
//! reproduction with config files and deterministic seeding.
//!
//! Exit codes: 0 success, 1 validation error, 2 numeric failure, 3 I/O.

mod commands;
mod config;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use config::RunConfig;

#[derive(Parser)]
#[command(
    name = "multiway-vb",
    about = "Inverse-Wishart variational approximations for multiway Gaussian covariances",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate tensor-normal data and write the data + ground-truth files.
    Simulate(CommonArgs),
    /// Fit the joint or mean-field approximation to a data file.
    Fit(CommonArgs),
    /// Draw covariances from a fitted state file.
    Sample(CommonArgs),
    /// Run a named experiment end to end.
    Experiment(CommonArgs),
    /// Parse and validate a config file, printing the resolved form.
    ValidateConfig {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Args)]
struct CommonArgs {
    /// TOML config file; explicit flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Mode extents, comma-separated (e.g. 5,6,4,3).
    #[arg(long, value_delimiter = ',')]
    dims: Option<Vec<usize>>,
    /// Number of observations.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// joint | meanfield
    #[arg(long)]
    method: Option<String>,
    /// pullback | product (pullback-naive is rejected as degenerate)
    #[arg(long)]
    metric: Option<String>,
    /// log10 step size, e.g. -4.4 for 10^-4.4.
    #[arg(long, allow_hyphen_values = true)]
    eps: Option<f64>,
    /// Separate log10 step size for the degrees of freedom.
    #[arg(long = "eps-dof", allow_hyphen_values = true)]
    eps_dof: Option<f64>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long = "record-every")]
    record_every: Option<usize>,
    /// Enable/disable the step-halving guard (e.g. --backtracking false).
    #[arg(long)]
    backtracking: Option<bool>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Input tensor data file (binary payload with TOML sidecar).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Fitted state file.
    #[arg(long)]
    state: Option<PathBuf>,
    /// convergence-sweep | metric-comparison | mahalanobis | misspec-table | real-data
    #[arg(long)]
    experiment: Option<String>,
    /// Misspecification rank grid, comma-separated.
    #[arg(long, value_delimiter = ',')]
    r: Option<Vec<usize>>,
    #[arg(long)]
    xi: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    /// Number of covariance draws.
    #[arg(long = "K")]
    k: Option<usize>,
    /// Inner Gaussian samples per draw.
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    gamma: Option<f64>,
    /// Emit summary statistics instead of raw draws.
    #[arg(long)]
    summary: bool,
    /// Draw output format: dense | factors.
    #[arg(long)]
    format: Option<String>,
}

impl CommonArgs {
    fn into_config(self, command: &str) -> Result<RunConfig, CliError> {
        let file = match &self.config {
            Some(path) => RunConfig::from_file(path)?,
            None => RunConfig::default(),
        };
        let flags = RunConfig {
            command: Some(command.to_string()),
            dims: self.dims,
            n: self.n,
            seed: self.seed,
            method: self.method,
            metric: self.metric,
            eps: self.eps,
            eps_dof: self.eps_dof,
            iters: self.iters,
            record_every: self.record_every,
            backtracking: self.backtracking,
            out: self.out,
            data: self.data,
            state: self.state,
            experiment: self.experiment,
            r: self.r,
            xi: self.xi,
            beta: self.beta,
            k: self.k,
            m: self.m,
            gamma: self.gamma,
            summary: if self.summary { Some(true) } else { None },
            format: self.format,
        };
        Ok(file.overlay(flags))
    }
}

/// Error with a process exit code.
#[derive(Debug)]
pub struct CliError {
    pub message: String,
    pub code: i32,
}

impl CliError {
    pub fn validation(message: String) -> Self {
        Self { message, code: 1 }
    }

    pub fn numeric(message: String) -> Self {
        Self { message, code: 2 }
    }

    pub fn io(message: String) -> Self {
        Self { message, code: 3 }
    }
}

impl From<multiway_vb_harness::HarnessError> for CliError {
    fn from(e: multiway_vb_harness::HarnessError) -> Self {
        use multiway_vb_harness::HarnessError as H;
        match &e {
            H::Core(core) => CliError::with_code(core_code(core), e.to_string()),
            H::Io { .. } | H::Format { .. } => CliError::io(e.to_string()),
            H::InvalidSpec(_) => CliError::validation(e.to_string()),
        }
    }
}

impl From<multiway_vb::Error> for CliError {
    fn from(e: multiway_vb::Error) -> Self {
        CliError::with_code(core_code(&e), e.to_string())
    }
}

impl CliError {
    fn with_code(code: i32, message: String) -> Self {
        Self { message, code }
    }
}

fn core_code(e: &multiway_vb::Error) -> i32 {
    use multiway_vb::Error as E;
    match e {
        E::NonFinite(_) | E::NotSpd(_) => 2,
        E::IndexOutOfBounds { .. }
        | E::ShapeMismatch(_)
        | E::InvalidDof { .. }
        | E::InvalidConfig(_) => 1,
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help/version print and exit cleanly; real parse errors are
            // validation failures
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    let result = match cli.command {
        Command::Simulate(args) => args
            .into_config("simulate")
            .and_then(commands::cmd_simulate),
        Command::Fit(args) => args.into_config("fit").and_then(commands::cmd_fit),
        Command::Sample(args) => args.into_config("sample").and_then(commands::cmd_sample),
        Command::Experiment(args) => args
            .into_config("experiment")
            .and_then(commands::cmd_experiment),
        Command::ValidateConfig { config } => commands::cmd_validate_config(&config),
    };
    if let Err(e) = result {
        eprintln!("error: {}", e.message);
        std::process::exit(e.code);
    }
}
