//! Asynchronous improvement dynamics.
//!
//! Starting from a partition (all singletons by default), the engine keeps a
//! *remaining set* of agents that may still have an improving move. Each step
//! draws one agent uniformly from that set and looks at its options:
//! joining another group that does not lose utility by admitting it, or
//! splitting off into a singleton. If some option strictly improves the
//! agent's log utility, the best one is applied and the remaining set is
//! reset to all agents; otherwise the agent is dropped from the set. An empty
//! remaining set means no agent has an admissible deviation, i.e. the
//! partition is an individually stable equilibrium.
//!
//! One iteration is one attempted step, accepted or not.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{log_group_utility, AgentId, GameConfig, ModelError, Partition, Scenario};
use crate::rng::SimRng;

/// Two log utilities closer than this are treated as equal.
pub const UTILITY_TOLERANCE: f64 = 1e-9;

pub const ENGINE_VERSION: &str = concat!("groupform/", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("step called with an empty remaining set")]
    EmptyRemainingSet,
    #[error("game config k = {cfg} does not match scenario k = {scenario}")]
    CategoryMismatch { cfg: usize, scenario: usize },
    #[error("partition covers {partition} agents but scenario has {scenario}")]
    SizeMismatch { partition: usize, scenario: usize },
    #[error("max_iterations must be at least 1")]
    ZeroIterationBudget,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MoveKind {
    Join { target: usize },
    FormSingleton,
    Stay,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MoveOption {
    #[serde(flatten)]
    pub kind: MoveKind,
    pub mover_new_log_utility: f64,
    pub target_old_log_utility: Option<f64>,
    pub target_new_log_utility: Option<f64>,
}

/// Strict improvement for the mover, weak permission from the receiving
/// group. `Stay` is never admissible.
pub fn admissible(option: &MoveOption, current_log_utility: f64) -> bool {
    let improves = option.mover_new_log_utility > current_log_utility + UTILITY_TOLERANCE;
    match option.kind {
        MoveKind::Stay => false,
        MoveKind::FormSingleton => improves,
        MoveKind::Join { .. } => {
            match (option.target_old_log_utility, option.target_new_log_utility) {
                (Some(old), Some(new)) => improves && new >= old - UTILITY_TOLERANCE,
                _ => false,
            }
        }
    }
}

/// All options open to `agent`: one `Join` per other live group, a
/// `FormSingleton` when the agent is not already alone, and `Stay`.
///
/// Leaving a group never needs the old group's consent, so its loss is not
/// part of any annotation.
pub fn enumerate_options(
    agent: AgentId,
    partition: &Partition,
    scenario: &Scenario,
    cfg: &GameConfig,
) -> Result<Vec<MoveOption>, ModelError> {
    let own = partition.group_of(agent)?;
    let own_group = partition
        .group(own)
        .ok_or_else(|| ModelError::InvalidPartition(format!("agent {agent} in dead slot")))?;
    let current = log_group_utility(own_group.members(), scenario, cfg)?;

    let mut options = Vec::with_capacity(partition.num_groups() + 1);
    for (handle, group) in partition.groups() {
        if handle == own {
            continue;
        }
        let old = log_group_utility(group.members(), scenario, cfg)?;
        let new = log_group_utility(group.with(agent).members(), scenario, cfg)?;
        options.push(MoveOption {
            kind: MoveKind::Join { target: handle },
            mover_new_log_utility: new,
            target_old_log_utility: Some(old),
            target_new_log_utility: Some(new),
        });
    }
    if own_group.len() >= 2 {
        options.push(MoveOption {
            kind: MoveKind::FormSingleton,
            mover_new_log_utility: scenario.agent(agent)?.resource.ln(),
            target_old_log_utility: None,
            target_new_log_utility: None,
        });
    }
    options.push(MoveOption {
        kind: MoveKind::Stay,
        mover_new_log_utility: current,
        target_old_log_utility: None,
        target_new_log_utility: None,
    });
    Ok(options)
}

/// Picks the admissible option with the highest mover utility. Options
/// within [`UTILITY_TOLERANCE`] of the best count as tied; among ties a join
/// beats a singleton and a lower target handle beats a higher one.
fn best_admissible(options: &[MoveOption], current: f64) -> Option<&MoveOption> {
    let admissible: Vec<&MoveOption> = options.iter().filter(|o| admissible(o, current)).collect();
    let best = admissible
        .iter()
        .map(|o| o.mover_new_log_utility)
        .fold(f64::NEG_INFINITY, f64::max);
    admissible
        .into_iter()
        .filter(|o| o.mover_new_log_utility >= best - UTILITY_TOLERANCE)
        .min_by_key(|o| match o.kind {
            MoveKind::Join { target } => target,
            _ => usize::MAX,
        })
}

/// Agents' log utilities sorted descending.
pub fn potential_vector(
    partition: &Partition,
    scenario: &Scenario,
    cfg: &GameConfig,
) -> Result<Vec<f64>, ModelError> {
    let mut values = Vec::with_capacity(partition.agent_count());
    for (_, group) in partition.groups() {
        let u = log_group_utility(group.members(), scenario, cfg)?;
        values.extend(std::iter::repeat_n(u, group.len()));
    }
    values.sort_by(|a, b| b.total_cmp(a));
    Ok(values)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PotentialTrend {
    Increase,
    Equal,
    Decrease,
}

/// Lexicographic comparison of two sorted potential vectors, entries within
/// [`UTILITY_TOLERANCE`] compared as equal.
pub fn compare_potentials(after: &[f64], before: &[f64]) -> PotentialTrend {
    for (a, b) in after.iter().zip(before) {
        if (a - b).abs() > UTILITY_TOLERANCE {
            return match a.partial_cmp(b) {
                Some(Ordering::Greater) => PotentialTrend::Increase,
                _ => PotentialTrend::Decrease,
            };
        }
    }
    PotentialTrend::Equal
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateEvent {
    pub iteration: usize,
    pub agent: AgentId,
    pub attempted: bool,
    pub accepted_move: Option<MoveOption>,
    pub remaining_set_size_after: usize,
    pub potential_after: Vec<f64>,
    /// Comparison against the previous accepted update (or the start state);
    /// present on accepted events only.
    pub potential_trend: Option<PotentialTrend>,
    /// Snapshot after an accepted move.
    pub partition_after: Option<Partition>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTrace {
    pub scenario_digest: String,
    pub cfg: GameConfig,
    pub seed: u64,
    pub max_iterations: usize,
    pub engine_version: String,
    pub initial_partition: Partition,
    pub events: Vec<UpdateEvent>,
    pub final_partition: Partition,
    pub converged: bool,
    pub total_iterations: usize,
}

impl SimTrace {
    pub fn accepted_events(&self) -> impl Iterator<Item = &UpdateEvent> {
        self.events.iter().filter(|e| e.accepted_move.is_some())
    }

    /// The partition in force after `iteration` steps (0 = start state).
    pub fn partition_at(&self, iteration: usize) -> Option<&Partition> {
        if iteration > self.total_iterations {
            return None;
        }
        Some(
            self.events
                .iter()
                .take_while(|e| e.iteration <= iteration)
                .filter_map(|e| e.partition_after.as_ref())
                .last()
                .unwrap_or(&self.initial_partition),
        )
    }

    pub fn potential_decreases(&self) -> usize {
        self.events
            .iter()
            .filter(|e| e.potential_trend == Some(PotentialTrend::Decrease))
            .count()
    }
}

/// Mutable state of one run.
#[derive(Debug, Clone)]
pub struct Engine<'a> {
    scenario: &'a Scenario,
    cfg: GameConfig,
    partition: Partition,
    /// Agent ids still to be examined, kept in ascending order so draws are
    /// reproducible.
    remaining: Vec<AgentId>,
    rng: SimRng,
    iteration: usize,
    last_accepted_potential: Vec<f64>,
}

impl<'a> Engine<'a> {
    pub fn new(
        scenario: &'a Scenario,
        cfg: GameConfig,
        start: Partition,
        seed: u64,
    ) -> Result<Self, DynamicsError> {
        cfg.validate()?;
        if cfg.k != scenario.k() {
            return Err(DynamicsError::CategoryMismatch {
                cfg: cfg.k,
                scenario: scenario.k(),
            });
        }
        if start.agent_count() != scenario.len() {
            return Err(DynamicsError::SizeMismatch {
                partition: start.agent_count(),
                scenario: scenario.len(),
            });
        }
        start.validate()?;
        let potential = potential_vector(&start, scenario, &cfg)?;
        Ok(Self {
            scenario,
            cfg,
            partition: start,
            remaining: (0..scenario.len()).collect(),
            rng: SimRng::from_seed(seed),
            iteration: 0,
            last_accepted_potential: potential,
        })
    }

    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    pub fn remaining(&self) -> &[AgentId] {
        &self.remaining
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn is_converged(&self) -> bool {
        self.remaining.is_empty()
    }

    pub fn step(&mut self) -> Result<UpdateEvent, DynamicsError> {
        if self.remaining.is_empty() {
            return Err(DynamicsError::EmptyRemainingSet);
        }
        self.iteration += 1;
        let slot = self.rng.index(self.remaining.len());
        let agent = self.remaining[slot];

        let options = enumerate_options(agent, &self.partition, self.scenario, &self.cfg)?;
        let current = options
            .iter()
            .find(|o| o.kind == MoveKind::Stay)
            .map(|o| o.mover_new_log_utility)
            .expect("Stay is always enumerated");

        let Some(chosen) = best_admissible(&options, current).cloned() else {
            self.remaining.remove(slot);
            return Ok(UpdateEvent {
                iteration: self.iteration,
                agent,
                attempted: true,
                accepted_move: None,
                remaining_set_size_after: self.remaining.len(),
                potential_after: self.last_accepted_potential.clone(),
                potential_trend: None,
                partition_after: None,
            });
        };

        match chosen.kind {
            MoveKind::Join { target } => self.partition.move_to(agent, target)?,
            MoveKind::FormSingleton => {
                self.partition.split_off(agent)?;
            }
            MoveKind::Stay => unreachable!("Stay is never admissible"),
        }
        debug_assert!(self.partition.validate().is_ok());
        self.remaining = (0..self.scenario.len()).collect();

        let potential = potential_vector(&self.partition, self.scenario, &self.cfg)?;
        let trend = compare_potentials(&potential, &self.last_accepted_potential);
        self.last_accepted_potential = potential.clone();
        Ok(UpdateEvent {
            iteration: self.iteration,
            agent,
            attempted: true,
            accepted_move: Some(chosen),
            remaining_set_size_after: self.remaining.len(),
            potential_after: potential,
            potential_trend: Some(trend),
            partition_after: Some(self.partition.clone()),
        })
    }
}

/// Runs from the all-singleton start.
pub fn run_to_convergence(
    scenario: &Scenario,
    cfg: &GameConfig,
    seed: u64,
    max_iterations: usize,
) -> Result<SimTrace, DynamicsError> {
    run_from(
        scenario,
        cfg,
        Partition::singletons(scenario.len()),
        seed,
        max_iterations,
    )
}

pub fn run_from(
    scenario: &Scenario,
    cfg: &GameConfig,
    start: Partition,
    seed: u64,
    max_iterations: usize,
) -> Result<SimTrace, DynamicsError> {
    if max_iterations == 0 {
        return Err(DynamicsError::ZeroIterationBudget);
    }
    let mut engine = Engine::new(scenario, *cfg, start.clone(), seed)?;
    let mut events = Vec::new();
    while !engine.is_converged() && engine.iteration() < max_iterations {
        events.push(engine.step()?);
    }
    Ok(SimTrace {
        scenario_digest: crate::persistence::scenario_digest(scenario),
        cfg: *cfg,
        seed,
        max_iterations,
        engine_version: ENGINE_VERSION.to_string(),
        initial_partition: start,
        converged: engine.is_converged(),
        total_iterations: engine.iteration(),
        final_partition: engine.partition,
        events,
    })
}

/// Default attempt budget for `n` agents: `10 * n * (n + 1)`.
pub fn default_max_iterations(n: usize) -> usize {
    (10 * n * (n + 1)).max(1)
}
