//! Random scenarios, equilibrium metrics, and the `(x_max, r_max)` sweep.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{default_max_iterations, run_to_convergence, DynamicsError, SimTrace};
use crate::model::{Agent, GameConfig, ModelError, Partition, Scenario};
use crate::rng::{derive_seed, SimRng};

pub const DEFAULT_X_GRID: [f64; 7] = [1.0, 10.0, 20.0, 40.0, 60.0, 80.0, 100.0];
pub const DEFAULT_R_GRID: [f64; 6] = [1.0, 20.0, 40.0, 60.0, 80.0, 100.0];
pub const DEFAULT_REPLICATIONS: usize = 200;
/// Attempt count used for the "converged quickly" tally.
pub const REPORTED_ITERATION_BOUND: usize = 200;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("r_max must be at least 1, got {0}")]
    ResourceRange(f64),
    #[error("location range must be positive and finite, got {0}")]
    LocationRange(f64),
    #[error("at least one agent per category is required")]
    NoAgents,
    #[error("sweep grid and replication count must be nonempty")]
    EmptySweep,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error("thread pool: {0}")]
    ThreadPool(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioParams {
    /// Agents per category.
    pub m: usize,
    pub k: usize,
    pub x_max: f64,
    pub y_max: f64,
    pub r_max: f64,
    pub seed: u64,
    /// Draw resources from the integers `1..=floor(r_max)` instead of the
    /// continuous interval.
    #[serde(default)]
    pub integer_resources: bool,
}

impl ScenarioParams {
    /// Defaults: `m = 5`, `k = 3`, square domain.
    pub fn new(x_max: f64, r_max: f64, seed: u64) -> Self {
        Self {
            m: 5,
            k: 3,
            x_max,
            y_max: x_max,
            r_max,
            seed,
            integer_resources: false,
        }
    }
}

/// Agents are laid out category by category (`m` of category 0, then `m` of
/// category 1, ...). Each agent draws `x`, then `y`, then its resource from
/// one ChaCha8 stream seeded by `params.seed`.
pub fn generate_scenario(params: &ScenarioParams) -> Result<Scenario, ExperimentError> {
    if !(params.r_max.is_finite() && params.r_max >= 1.0) {
        return Err(ExperimentError::ResourceRange(params.r_max));
    }
    for range in [params.x_max, params.y_max] {
        if !(range.is_finite() && range > 0.0) {
            return Err(ExperimentError::LocationRange(range));
        }
    }
    if params.m == 0 {
        return Err(ExperimentError::NoAgents);
    }
    let mut rng = SimRng::from_seed(params.seed);
    let mut agents = Vec::with_capacity(params.m * params.k);
    for category in 0..params.k {
        for _ in 0..params.m {
            let x = rng.uniform(0.0, params.x_max);
            let y = rng.uniform(0.0, params.y_max);
            let resource = if params.integer_resources {
                let top = params.r_max.floor() as usize;
                (1 + rng.index(top)) as f64
            } else {
                rng.uniform(1.0, params.r_max)
            };
            agents.push(Agent::new(agents.len(), category, resource, x, y));
        }
    }
    Ok(Scenario::new(params.k, agents)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumMetrics {
    /// Singletons included.
    pub num_groups: usize,
    pub mean_group_size: f64,
    /// Mean over groups of the number of distinct categories present.
    pub mean_sectors_per_group: f64,
    pub largest_group_size: usize,
    pub iterations: usize,
    pub converged: bool,
    pub accepted_updates: usize,
    pub potential_decreases: usize,
}

pub fn partition_metrics(partition: &Partition, scenario: &Scenario) -> (usize, f64, f64, usize) {
    let num_groups = partition.num_groups();
    let mut sectors = 0usize;
    let mut largest = 0usize;
    for (_, g) in partition.groups() {
        let cats: BTreeSet<_> = g
            .members()
            .iter()
            .map(|&id| scenario.agents()[id].category)
            .collect();
        sectors += cats.len();
        largest = largest.max(g.len());
    }
    let n = partition.agent_count();
    (
        num_groups,
        n as f64 / num_groups as f64,
        sectors as f64 / num_groups as f64,
        largest,
    )
}

pub fn equilibrium_metrics(trace: &SimTrace, scenario: &Scenario) -> EquilibriumMetrics {
    let (num_groups, mean_group_size, mean_sectors_per_group, largest_group_size) =
        partition_metrics(&trace.final_partition, scenario);
    EquilibriumMetrics {
        num_groups,
        mean_group_size,
        mean_sectors_per_group,
        largest_group_size,
        iterations: trace.total_iterations,
        converged: trace.converged,
        accepted_updates: trace.accepted_events().count(),
        potential_decreases: trace.potential_decreases(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub x_max: Vec<f64>,
    pub r_max: Vec<f64>,
    pub replications: usize,
    pub base_seed: u64,
    pub m: usize,
    pub k: usize,
    pub lambda: f64,
    pub integer_resources: bool,
    /// `None` uses `10 * n * (n + 1)`.
    pub max_iterations: Option<usize>,
    /// Runs finishing within this many attempts are counted separately.
    pub iteration_threshold: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            x_max: DEFAULT_X_GRID.to_vec(),
            r_max: DEFAULT_R_GRID.to_vec(),
            replications: DEFAULT_REPLICATIONS,
            base_seed: 0,
            m: 5,
            k: 3,
            lambda: 1.0,
            integer_resources: false,
            max_iterations: None,
            iteration_threshold: REPORTED_ITERATION_BOUND,
        }
    }
}

impl SweepConfig {
    pub fn game_config(&self) -> Result<GameConfig, ModelError> {
        GameConfig::new(self.k, self.lambda)
    }

    pub fn max_iterations(&self) -> usize {
        self.max_iterations
            .unwrap_or_else(|| default_max_iterations(self.m * self.k))
    }

    /// Seed shared by the scenario draw and the dynamics of one replication;
    /// the two consumers derive their own streams from it.
    pub fn run_seed(&self, xi: usize, ri: usize, rep: usize) -> u64 {
        derive_seed(self.base_seed, &[xi as u64, ri as u64, rep as u64])
    }

    pub fn scenario_params(&self, xi: usize, ri: usize, rep: usize) -> ScenarioParams {
        ScenarioParams {
            m: self.m,
            k: self.k,
            x_max: self.x_max[xi],
            y_max: self.x_max[xi],
            r_max: self.r_max[ri],
            seed: derive_seed(self.run_seed(xi, ri, rep), &[0]),
            integer_resources: self.integer_resources,
        }
    }

    pub fn dynamics_seed(&self, xi: usize, ri: usize, rep: usize) -> u64 {
        derive_seed(self.run_seed(xi, ri, rep), &[1])
    }
}

/// One replication of one grid cell: scenario, final trace, metrics.
pub struct RunOutcome {
    pub scenario: Scenario,
    pub trace: SimTrace,
    pub metrics: EquilibriumMetrics,
}

pub fn run_replication(
    cfg: &SweepConfig,
    xi: usize,
    ri: usize,
    rep: usize,
) -> Result<RunOutcome, ExperimentError> {
    let game = cfg.game_config()?;
    let scenario = generate_scenario(&cfg.scenario_params(xi, ri, rep))?;
    let trace = run_to_convergence(
        &scenario,
        &game,
        cfg.dynamics_seed(xi, ri, rep),
        cfg.max_iterations(),
    )?;
    let metrics = equilibrium_metrics(&trace, &scenario);
    Ok(RunOutcome {
        scenario,
        trace,
        metrics,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    /// Sample standard deviation (n - 1); 0 for a single value.
    pub std: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Stat {
        let n = values.len() as f64;
        if values.is_empty() {
            return Stat {
                mean: f64::NAN,
                std: f64::NAN,
            };
        }
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Stat { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub x_max: f64,
    pub r_max: f64,
    pub replications: usize,
    pub num_groups: Stat,
    pub mean_group_size: Stat,
    pub mean_sectors_per_group: Stat,
    pub largest_group_size: Stat,
    pub iterations: Stat,
    pub max_iterations_observed: usize,
    /// Runs that hit the attempt budget.
    pub failures: usize,
    pub converged_within_threshold: usize,
    pub accepted_updates: usize,
    pub potential_decreases: usize,
}

impl CellSummary {
    fn aggregate(x_max: f64, r_max: f64, threshold: usize, runs: &[EquilibriumMetrics]) -> Self {
        let col = |f: &dyn Fn(&EquilibriumMetrics) -> f64| -> Stat {
            Stat::of(&runs.iter().map(f).collect::<Vec<_>>())
        };
        CellSummary {
            x_max,
            r_max,
            replications: runs.len(),
            num_groups: col(&|m| m.num_groups as f64),
            mean_group_size: col(&|m| m.mean_group_size),
            mean_sectors_per_group: col(&|m| m.mean_sectors_per_group),
            largest_group_size: col(&|m| m.largest_group_size as f64),
            iterations: col(&|m| m.iterations as f64),
            max_iterations_observed: runs.iter().map(|m| m.iterations).max().unwrap_or(0),
            failures: runs.iter().filter(|m| !m.converged).count(),
            converged_within_threshold: runs
                .iter()
                .filter(|m| m.converged && m.iterations <= threshold)
                .count(),
            accepted_updates: runs.iter().map(|m| m.accepted_updates).sum(),
            potential_decreases: runs.iter().map(|m| m.potential_decreases).sum(),
        }
    }

    pub fn potential_decrease_fraction(&self) -> Option<f64> {
        (self.accepted_updates > 0)
            .then(|| self.potential_decreases as f64 / self.accepted_updates as f64)
    }
}

pub const SWEEP_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub schema_version: u32,
    pub config: SweepConfig,
    /// Row-major: all `r_max` values for `x_max[0]`, then `x_max[1]`, ...
    pub cells: Vec<CellSummary>,
}

impl SweepResult {
    pub fn cell(&self, xi: usize, ri: usize) -> &CellSummary {
        &self.cells[xi * self.config.r_max.len() + ri]
    }

    pub fn total_accepted_updates(&self) -> usize {
        self.cells.iter().map(|c| c.accepted_updates).sum()
    }

    pub fn total_potential_decreases(&self) -> usize {
        self.cells.iter().map(|c| c.potential_decreases).sum()
    }
}

/// Runs every replication of every cell and aggregates per cell.
///
/// Runs execute on the rayon pool; per-run metrics are collected in grid
/// order before aggregation, so the result does not depend on scheduling.
/// `threads = Some(t)` runs on a dedicated pool of `t` threads.
pub fn run_sweep(
    cfg: &SweepConfig,
    threads: Option<usize>,
) -> Result<SweepResult, ExperimentError> {
    if cfg.x_max.is_empty() || cfg.r_max.is_empty() || cfg.replications == 0 {
        return Err(ExperimentError::EmptySweep);
    }
    cfg.game_config()?;
    let work = || -> Result<Vec<EquilibriumMetrics>, ExperimentError> {
        let jobs: Vec<(usize, usize, usize)> = (0..cfg.x_max.len())
            .flat_map(|xi| {
                (0..cfg.r_max.len())
                    .flat_map(move |ri| (0..cfg.replications).map(move |rep| (xi, ri, rep)))
            })
            .collect();
        jobs.into_par_iter()
            .map(|(xi, ri, rep)| run_replication(cfg, xi, ri, rep).map(|o| o.metrics))
            .collect()
    };
    let runs = match threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| ExperimentError::ThreadPool(e.to_string()))?
            .install(work)?,
        None => work()?,
    };
    let cells = runs
        .chunks(cfg.replications)
        .enumerate()
        .map(|(cell, chunk)| {
            let (xi, ri) = (cell / cfg.r_max.len(), cell % cfg.r_max.len());
            CellSummary::aggregate(cfg.x_max[xi], cfg.r_max[ri], cfg.iteration_threshold, chunk)
        })
        .collect();
    Ok(SweepResult {
        schema_version: SWEEP_SCHEMA_VERSION,
        config: cfg.clone(),
        cells,
    })
}

/// Average ranks (1-based), ties sharing the mean of their positions.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman's rho as the Pearson correlation of average ranks. `None` when
/// either series is constant or the lengths differ or are below 2.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let rx = average_ranks(xs);
    let ry = average_ranks(ys);
    let n = rx.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesTrend {
    /// The fixed coordinate of the row or column.
    pub at: f64,
    pub rho: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendReport {
    /// Per `x_max` row: mean group size against `r_max`.
    pub size_vs_resource_range: Vec<SeriesTrend>,
    /// Per `r_max` column: group count against `x_max`.
    pub groups_vs_location_range: Vec<SeriesTrend>,
    /// All cells: mean sectors per group against mean group size.
    pub sectors_vs_size: Option<f64>,
    pub accepted_updates: usize,
    pub potential_decreases: usize,
    pub potential_decrease_fraction: Option<f64>,
}

pub fn trend_checks(result: &SweepResult) -> TrendReport {
    let xs = &result.config.x_max;
    let rs = &result.config.r_max;
    let rows = (0..xs.len())
        .map(|xi| {
            let sizes: Vec<f64> = (0..rs.len())
                .map(|ri| result.cell(xi, ri).mean_group_size.mean)
                .collect();
            SeriesTrend {
                at: xs[xi],
                rho: spearman(rs, &sizes),
            }
        })
        .collect();
    let cols = (0..rs.len())
        .map(|ri| {
            let groups: Vec<f64> = (0..xs.len())
                .map(|xi| result.cell(xi, ri).num_groups.mean)
                .collect();
            SeriesTrend {
                at: rs[ri],
                rho: spearman(xs, &groups),
            }
        })
        .collect();
    let sizes: Vec<f64> = result
        .cells
        .iter()
        .map(|c| c.mean_group_size.mean)
        .collect();
    let sectors: Vec<f64> = result
        .cells
        .iter()
        .map(|c| c.mean_sectors_per_group.mean)
        .collect();
    let accepted = result.total_accepted_updates();
    let decreases = result.total_potential_decreases();
    TrendReport {
        size_vs_resource_range: rows,
        groups_vs_location_range: cols,
        sectors_vs_size: spearman(&sizes, &sectors),
        accepted_updates: accepted,
        potential_decreases: decreases,
        potential_decrease_fraction: (accepted > 0).then(|| decreases as f64 / accepted as f64),
    }
}
