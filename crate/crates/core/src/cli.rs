//! Command-line front end.
//!
//! Exit codes: 0 success (or ISE), 1 usage error, 2 validation or input
//! error, 3 non-convergence, 4 verification failed.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use crate::dynamics::{default_max_iterations, run_to_convergence, DynamicsError};
use crate::experiments::{
    equilibrium_metrics, generate_scenario, run_sweep, trend_checks, ExperimentError,
    ScenarioParams, SweepConfig, DEFAULT_R_GRID, DEFAULT_X_GRID,
};
use crate::model::{GameConfig, ModelError, Scenario};
use crate::oracle::{verify_ise, OracleError};
use crate::persistence::{self, PersistenceError};
use crate::render::{render_trace, FrameSelection, RenderError, RenderSpec};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_NOT_CONVERGED: i32 = 3;
pub const EXIT_VERIFY_FAILED: i32 = 4;

pub const OUT_DIR_ENV: &str = "GROUPFORM_OUT";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Persistence(#[from] PersistenceError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Experiment(#[from] ExperimentError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error("writing output: {0}")]
    Output(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Render(RenderError::UnknownIteration { .. }) => {
                EXIT_USAGE
            }
            _ => EXIT_VALIDATION,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "groupform",
    version,
    about = "Spatial group formation with heterogeneous agents"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the improvement dynamics on one scenario and write its trace.
    Simulate(SimulateArgs),
    /// Run the (x_max, r_max) parameter sweep.
    Sweep(SweepArgs),
    /// Check whether a partition is individually stable.
    Verify(VerifyArgs),
    /// Draw SVG frames of a trace.
    Render(RenderArgs),
    /// Re-run a trace from its header and compare.
    Replay(ReplayArgs),
}

#[derive(Debug, Args)]
pub struct GameArgs {
    /// Distance decay in exp(-lambda * D).
    #[arg(long, default_value_t = 1.0)]
    pub lambda: f64,
    #[arg(long)]
    pub max_iterations: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Scenario file; when absent a random scenario is generated.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    #[arg(long, default_value_t = 5)]
    pub m: usize,
    #[arg(long, default_value_t = 10.0)]
    pub x_max: f64,
    #[arg(long, default_value_t = 20.0)]
    pub r_max: f64,
    #[arg(long)]
    pub integer_resources: bool,
    #[command(flatten)]
    pub game: GameArgs,
    #[arg(long, env = OUT_DIR_ENV, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long, value_delimiter = ',', num_args = 1.., default_values_t = DEFAULT_X_GRID.to_vec())]
    pub x_max: Vec<f64>,
    #[arg(long, value_delimiter = ',', num_args = 1.., default_values_t = DEFAULT_R_GRID.to_vec())]
    pub r_max: Vec<f64>,
    #[arg(long, default_value_t = crate::experiments::DEFAULT_REPLICATIONS)]
    pub replications: usize,
    /// Base seed for the per-run seed derivation.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 5)]
    pub m: usize,
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    #[arg(long)]
    pub integer_resources: bool,
    #[command(flatten)]
    pub game: GameArgs,
    /// Worker threads (default: all cores).
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long, env = OUT_DIR_ENV, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    /// Partition file to check.
    #[arg(long, conflicts_with = "trace", required_unless_present = "trace")]
    pub partition: Option<PathBuf>,
    /// Trace whose final partition is checked, under the trace's config.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[arg(long, default_value_t = 1.0)]
    pub lambda: f64,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub trace: PathBuf,
    #[arg(long)]
    pub scenario: PathBuf,
    /// Iterations to draw; 0 is the start state.
    #[arg(long, value_delimiter = ',', num_args = 1.., conflicts_with = "keyframes")]
    pub iterations: Option<Vec<usize>>,
    /// Draw the start state, every accepted update, and the last iteration (default).
    #[arg(long)]
    pub keyframes: bool,
    #[arg(long, default_value_t = 480)]
    pub canvas: u32,
    #[arg(long)]
    pub no_legend: bool,
    #[arg(long, env = OUT_DIR_ENV, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    #[arg(long)]
    pub trace: PathBuf,
}

/// Parses `args` (including the program name) and runs the command.
pub fn run_cli<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = write!(err, "{e}");
            return code;
        }
    };
    match execute(cli.command, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(command: Command, out: &mut dyn Write) -> Result<i32, CliError> {
    match command {
        Command::Simulate(a) => simulate(a, out),
        Command::Sweep(a) => sweep(a, out),
        Command::Verify(a) => verify(a, out),
        Command::Render(a) => render(a, out),
        Command::Replay(a) => replay(a, out),
    }
}

fn simulate(a: SimulateArgs, out: &mut dyn Write) -> Result<i32, CliError> {
    let (scenario, provenance) = match &a.scenario {
        Some(path) => (persistence::load_scenario(path)?, None),
        None => {
            let params = ScenarioParams {
                m: a.m,
                k: a.k,
                x_max: a.x_max,
                y_max: a.x_max,
                r_max: a.r_max,
                seed: a.seed,
                integer_resources: a.integer_resources,
            };
            (generate_scenario(&params)?, Some(params))
        }
    };
    let cfg = GameConfig::new(scenario.k(), a.game.lambda)?;
    let budget = a
        .game
        .max_iterations
        .unwrap_or_else(|| default_max_iterations(scenario.len()));
    if budget == 0 {
        return Err(CliError::Usage(
            "--max-iterations must be at least 1".into(),
        ));
    }
    let trace = run_to_convergence(&scenario, &cfg, a.seed, budget)?;
    let metrics = equilibrium_metrics(&trace, &scenario);
    if provenance.is_some() {
        persistence::save_scenario(&scenario, provenance, &a.out.join("scenario.json"))?;
    }
    persistence::save_trace(&trace, Some(&metrics), &a.out.join("trace.jsonl"))?;
    writeln!(out, "{}", persistence::to_canonical_json(&metrics))?;
    Ok(if trace.converged {
        EXIT_OK
    } else {
        EXIT_NOT_CONVERGED
    })
}

fn sweep(a: SweepArgs, out: &mut dyn Write) -> Result<i32, CliError> {
    if a.replications == 0 {
        return Err(CliError::Usage("--replications must be at least 1".into()));
    }
    if a.threads == Some(0) {
        return Err(CliError::Usage("--threads must be at least 1".into()));
    }
    let cfg = SweepConfig {
        x_max: a.x_max,
        r_max: a.r_max,
        replications: a.replications,
        base_seed: a.seed,
        m: a.m,
        k: a.k,
        lambda: a.game.lambda,
        integer_resources: a.integer_resources,
        max_iterations: a.game.max_iterations,
        ..SweepConfig::default()
    };
    let result = run_sweep(&cfg, a.threads)?;
    persistence::save_sweep(&result, &a.out)?;
    let report = trend_checks(&result);
    let text = persistence::to_canonical_json_pretty(&report);
    std::fs::write(a.out.join("trends.json"), format!("{text}\n")).map_err(|source| {
        PersistenceError::Io {
            path: a.out.join("trends.json"),
            source,
        }
    })?;
    writeln!(out, "{text}")?;
    Ok(EXIT_OK)
}

fn verify(a: VerifyArgs, out: &mut dyn Write) -> Result<i32, CliError> {
    let scenario = persistence::load_scenario(&a.scenario)?;
    let (partition, cfg) = match (&a.partition, &a.trace) {
        (Some(p), _) => (
            persistence::load_partition(p, &scenario)?,
            GameConfig::new(scenario.k(), a.lambda)?,
        ),
        (None, Some(t)) => {
            let file = persistence::load_trace(t)?;
            persistence::check_digest(&file.trace, &scenario)?;
            (file.trace.final_partition, file.trace.cfg)
        }
        (None, None) => return Err(CliError::Usage("--partition or --trace is required".into())),
    };
    let report = verify_ise(&partition, &scenario, &cfg)?;
    writeln!(out, "{}", persistence::to_canonical_json(&report))?;
    Ok(if report.is_ise {
        EXIT_OK
    } else {
        EXIT_VERIFY_FAILED
    })
}

fn load_checked(
    scenario: &Path,
    trace: &Path,
) -> Result<(Scenario, persistence::TraceFile), CliError> {
    let scenario = persistence::load_scenario(scenario)?;
    let file = persistence::load_trace(trace)?;
    persistence::check_digest(&file.trace, &scenario)?;
    Ok((scenario, file))
}

fn render(a: RenderArgs, out: &mut dyn Write) -> Result<i32, CliError> {
    let (scenario, file) = load_checked(&a.scenario, &a.trace)?;
    let spec = RenderSpec {
        frames: match a.iterations {
            Some(list) => FrameSelection::Iterations(list),
            None => FrameSelection::Keyframes,
        },
        canvas: a.canvas,
        legend: !a.no_legend,
    };
    let frames = render_trace(&file.trace, &scenario, &spec)?;
    std::fs::create_dir_all(&a.out).map_err(|source| PersistenceError::Io {
        path: a.out.clone(),
        source,
    })?;
    for (iteration, svg) in frames {
        let path = a.out.join(format!("frame_{iteration:04}.svg"));
        std::fs::write(&path, svg).map_err(|source| PersistenceError::Io {
            path: path.clone(),
            source,
        })?;
        writeln!(out, "{}", path.display())?;
    }
    Ok(EXIT_OK)
}

fn replay(a: ReplayArgs, out: &mut dyn Write) -> Result<i32, CliError> {
    let (scenario, file) = load_checked(&a.scenario, &a.trace)?;
    let t = &file.trace;
    let again = run_to_convergence(&scenario, &t.cfg, t.seed, t.max_iterations)?;
    let identical =
        persistence::trace_to_jsonl(&again, None) == persistence::trace_to_jsonl(t, None);
    let first_divergence = (!identical).then(|| {
        t.events
            .iter()
            .zip(&again.events)
            .find(|(a, b)| a != b)
            .map_or(t.events.len().min(again.events.len()) + 1, |(a, _)| {
                a.iteration
            })
    });
    writeln!(
        out,
        "{}",
        persistence::to_canonical_json(&serde_json::json!({
            "identical": identical,
            "first_divergent_iteration": first_divergence,
            "converged": again.converged,
            "total_iterations": again.total_iterations,
        }))
    )?;
    Ok(if identical {
        EXIT_OK
    } else {
        EXIT_VERIFY_FAILED
    })
}
