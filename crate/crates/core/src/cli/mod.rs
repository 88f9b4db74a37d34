//! Config-driven experiment runner behind the `vlift` binary.
//!
//! ```text
//! vlift <mode> --config FILE --out DIR [--seed N] [--paths N]
//! vlift run --config FILE --out DIR        # mode taken from the config
//! vlift kernel --family fractional --alpha 0.75 --eval 0.1,1
//! ```
//!
//! Exit codes: 0 success, 1 I/O or usage problem, 2 schema violation (the
//! message names the field path), 3 numerical fault.

mod config;
mod run;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use config::{parse_config, ExperimentConfig, Mode};
pub use run::{run, RunSummary};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("schema error: {0}")]
    Schema(String),
    #[error("numerical fault: {0}")]
    Numeric(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io(_) => 1,
            CliError::Schema(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

impl From<crate::Error> for CliError {
    fn from(e: crate::Error) -> Self {
        match e {
            crate::Error::Io(e) => CliError::Io(e.to_string()),
            other => CliError::Numeric(other.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "vlift",
    version,
    about = "Markovian lifts of stochastic Volterra equations and jump-intensity control"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Discretize the configured kernel and report quadrature errors.
    KernelCheck(RunArgs),
    /// Lift against direct Volterra solver on shared jump paths.
    Equivalence(RunArgs),
    /// BSDE solve, feedback extraction and fundamental-relation check.
    Solve(RunArgs),
    /// Monte Carlo cost of the configured policies.
    Evaluate(RunArgs),
    /// Closed-loop simulation under the extracted feedback policy.
    ClosedLoop(RunArgs),
    /// Run the mode named in the config.
    Run(RunArgs),
    /// Evaluate a kernel quadrature from the command line.
    Kernel(KernelArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Override `numerics.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Override `numerics.n_paths`.
    #[arg(long)]
    paths: Option<usize>,
}

#[derive(Debug, Args)]
struct KernelArgs {
    #[arg(long, default_value = "fractional")]
    family: String,
    #[arg(long, default_value_t = 0.75)]
    alpha: f64,
    #[arg(long, default_value_t = 60)]
    nodes: usize,
    #[arg(long, default_value_t = 1e-2)]
    x_min: f64,
    #[arg(long, default_value_t = 1e4)]
    x_max: f64,
    /// Print the measure diagnostics as JSON.
    #[arg(long)]
    check: bool,
    /// Comma-separated times; prints `t,k` rows.
    #[arg(long, value_delimiter = ',')]
    eval: Vec<f64>,
}

/// Entry point of the binary; returns the process exit code.
pub fn main() -> i32 {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("vlift: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(command: Command) -> Result<(), CliError> {
    let (mode, args) = match command {
        Command::KernelCheck(a) => (Some(Mode::KernelCheck), a),
        Command::Equivalence(a) => (Some(Mode::Equivalence), a),
        Command::Solve(a) => (Some(Mode::Solve), a),
        Command::Evaluate(a) => (Some(Mode::Evaluate), a),
        Command::ClosedLoop(a) => (Some(Mode::ClosedLoop), a),
        Command::Run(a) => (None, a),
        Command::Kernel(k) => return kernel_command(&k),
    };
    let text =
        std::fs::read_to_string(&args.config).map_err(|e| CliError::Io(format!("{}: {e}", args.config.display())))?;
    let mut cfg = parse_config(&text)?;
    let mode = match (mode, cfg.mode) {
        (Some(m), Some(c)) if m != c => {
            log::warn!("command line mode {} overrides config mode {}", m.name(), c.name());
            m
        }
        (Some(m), _) => m,
        (None, Some(c)) => c,
        (None, None) => return Err(CliError::Schema("mode: missing field `mode`".into())),
    };
    cfg.mode = Some(mode);
    if let Some(seed) = args.seed {
        cfg.numerics.seed = seed;
    }
    if let Some(paths) = args.paths {
        cfg.numerics.n_paths = paths;
    }
    let summary = run(&cfg.resolved(), &text, &args.out)?;
    println!("{}", summary.headline);
    Ok(())
}

fn kernel_command(args: &KernelArgs) -> Result<(), CliError> {
    use crate::kernel::{discretize_density, DensityFamily, DensitySpec};
    let family = match args.family.as_str() {
        "fractional" => DensityFamily::Fractional { alpha: args.alpha },
        other => {
            return Err(CliError::Schema(format!(
                "family: `{other}` is not available from the command line; use a config file"
            )))
        }
    };
    let spec = DensitySpec {
        family,
        x_min: args.x_min,
        x_max: args.x_max,
        nodes: args.nodes,
    };
    let measure = discretize_density(&spec).map_err(|e| CliError::Schema(e.to_string()))?;
    if args.check {
        let report = serde_json::json!({
            "atoms": measure.len(),
            "eps": measure.eps(),
            "diagnostics": measure.diagnostics(),
            "singularity": measure.singularity_index(),
        });
        println!("{}", serde_json::to_string_pretty(&report).expect("json"));
    }
    if !args.eval.is_empty() {
        println!("t,k");
        for &t in &args.eval {
            println!("{t},{}", measure.kernel_eval(t)?);
        }
    }
    Ok(())
}
