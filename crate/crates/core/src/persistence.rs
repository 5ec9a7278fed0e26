//! On-disk formats.
//!
//! Every file is JSON with sorted object keys and floats written in
//! shortest round-trip form, so identical data always produces identical
//! bytes. Traces are JSONL: a `header` record, one `event` record per
//! attempted step, and a `footer` record.
//!
//! Scenario file:
//!
//! ```json
//! {"agents":[{"category":0,"id":0,"resource":10.0,"x":1.0,"y":2.0}, ...],
//!  "format_version":1,"k":3,"provenance":null}
//! ```
//!
//! Partition file: `{"format_version":1,"groups":[[0,3,6],[1,4],...]}`.

use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dynamics::{SimTrace, UpdateEvent};
use crate::experiments::{EquilibriumMetrics, ScenarioParams, SweepResult};
use crate::model::{Agent, AgentId, GameConfig, Group, Partition, Scenario};

pub const SCENARIO_FORMAT_VERSION: u32 = 1;
pub const PARTITION_FORMAT_VERSION: u32 = 1;
pub const TRACE_FORMAT_VERSION: u32 = 1;

const EXAMPLE2_JSON: &str = include_str!("../fixtures/example2.json");

#[derive(Debug, Error)]
pub enum PersistenceError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("unsupported format_version {found} (expected {expected})")]
    UnsupportedVersion { found: u32, expected: u32 },
    #[error("scenario has no agents")]
    EmptyScenario,
    #[error("k = {0}: at least 2 categories are required")]
    TooFewCategories(usize),
    #[error("duplicate agent id {0}")]
    DuplicateId(AgentId),
    #[error("agent ids must be dense from 0; id {0} is out of range")]
    SparseId(AgentId),
    #[error("agent {id}: resource must be positive, got {resource}")]
    NonpositiveResource { id: AgentId, resource: f64 },
    #[error("agent {id}: category {category} out of range for k = {k}")]
    CategoryOutOfRange {
        id: AgentId,
        category: usize,
        k: usize,
    },
    #[error("agent {id}: coordinate {field} is not finite")]
    NonFiniteCoordinate { id: AgentId, field: &'static str },
    #[error("partition: {0}")]
    InvalidPartition(String),
    #[error("trace: {0}")]
    InvalidTrace(String),
    #[error("scenario digest mismatch: trace has {expected}, scenario is {found}")]
    DigestMismatch { expected: String, found: String },
}

impl PersistenceError {
    /// True for failures of the file system rather than of the content.
    pub fn is_io(&self) -> bool {
        matches!(self, PersistenceError::Io { .. })
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PersistenceError + '_ {
    move |source| PersistenceError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Serializes with sorted keys.
pub fn to_canonical_json<T: Serialize>(value: &T) -> String {
    let v = serde_json::to_value(value).expect("in-memory types serialize");
    serde_json::to_string(&v).expect("values serialize")
}

pub fn to_canonical_json_pretty<T: Serialize>(value: &T) -> String {
    let v = serde_json::to_value(value).expect("in-memory types serialize");
    serde_json::to_string_pretty(&v).expect("values serialize")
}

fn parse_line<T: DeserializeOwned>(text: &str, line: usize) -> Result<T, PersistenceError> {
    serde_json::from_str(text).map_err(|e| PersistenceError::Parse {
        line: line + e.line().saturating_sub(1),
        message: e.to_string(),
    })
}

fn write_file(path: &Path, contents: &str) -> Result<(), PersistenceError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, contents).map_err(io_err(path))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentRecord {
    pub id: AgentId,
    pub category: usize,
    pub resource: f64,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioFile {
    pub format_version: u32,
    pub k: usize,
    pub agents: Vec<AgentRecord>,
    #[serde(default)]
    pub provenance: Option<ScenarioParams>,
}

impl ScenarioFile {
    pub fn from_scenario(scenario: &Scenario, provenance: Option<ScenarioParams>) -> Self {
        Self {
            format_version: SCENARIO_FORMAT_VERSION,
            k: scenario.k(),
            agents: scenario
                .agents()
                .iter()
                .map(|a| AgentRecord {
                    id: a.id,
                    category: a.category.0,
                    resource: a.resource,
                    x: a.position.x,
                    y: a.position.y,
                })
                .collect(),
            provenance,
        }
    }

    /// Checks every invariant and builds the agent table. Records may appear
    /// in any order.
    pub fn validate(&self) -> Result<Scenario, PersistenceError> {
        if self.format_version != SCENARIO_FORMAT_VERSION {
            return Err(PersistenceError::UnsupportedVersion {
                found: self.format_version,
                expected: SCENARIO_FORMAT_VERSION,
            });
        }
        if self.k < 2 {
            return Err(PersistenceError::TooFewCategories(self.k));
        }
        if self.agents.is_empty() {
            return Err(PersistenceError::EmptyScenario);
        }
        let n = self.agents.len();
        let mut slots: Vec<Option<Agent>> = vec![None; n];
        for rec in &self.agents {
            let slot = slots
                .get_mut(rec.id)
                .ok_or(PersistenceError::SparseId(rec.id))?;
            if slot.is_some() {
                return Err(PersistenceError::DuplicateId(rec.id));
            }
            if !(rec.resource.is_finite() && rec.resource > 0.0) {
                return Err(PersistenceError::NonpositiveResource {
                    id: rec.id,
                    resource: rec.resource,
                });
            }
            if rec.category >= self.k {
                return Err(PersistenceError::CategoryOutOfRange {
                    id: rec.id,
                    category: rec.category,
                    k: self.k,
                });
            }
            for (field, v) in [("x", rec.x), ("y", rec.y)] {
                if !v.is_finite() {
                    return Err(PersistenceError::NonFiniteCoordinate { id: rec.id, field });
                }
            }
            *slot = Some(Agent::new(rec.id, rec.category, rec.resource, rec.x, rec.y));
        }
        let agents = slots
            .into_iter()
            .map(|a| a.expect("all ids placed"))
            .collect();
        Scenario::new(self.k, agents).map_err(|e| PersistenceError::Parse {
            line: 1,
            message: e.to_string(),
        })
    }
}

pub fn parse_scenario(text: &str) -> Result<Scenario, PersistenceError> {
    parse_line::<ScenarioFile>(text, 1)?.validate()
}

pub fn load_scenario(path: &Path) -> Result<Scenario, PersistenceError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_scenario(&text)
}

pub fn save_scenario(
    scenario: &Scenario,
    provenance: Option<ScenarioParams>,
    path: &Path,
) -> Result<(), PersistenceError> {
    let file = ScenarioFile::from_scenario(scenario, provenance);
    write_file(path, &(to_canonical_json_pretty(&file) + "\n"))
}

/// The nine-agent storyboard scenario shipped in `fixtures/example2.json`.
pub fn example2_scenario() -> Scenario {
    parse_scenario(EXAMPLE2_JSON).expect("bundled fixture is valid")
}

/// `sha256:` followed by the hex digest of the canonical content
/// `{"agents":[[id,category,resource,x,y],...],"k":k}`.
pub fn scenario_digest(scenario: &Scenario) -> String {
    let rows: Vec<(AgentId, usize, f64, f64, f64)> = scenario
        .agents()
        .iter()
        .map(|a| (a.id, a.category.0, a.resource, a.position.x, a.position.y))
        .collect();
    let canonical = to_canonical_json(&serde_json::json!({ "k": scenario.k(), "agents": rows }));
    format!(
        "sha256:{}",
        hex::encode(Sha256::digest(canonical.as_bytes()))
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionFile {
    pub format_version: u32,
    pub groups: Vec<Vec<AgentId>>,
}

/// Checks a partition file against the scenario's agent set.
pub fn partition_from_groups(
    groups: &[Vec<AgentId>],
    scenario: &Scenario,
) -> Result<Partition, PersistenceError> {
    let n = scenario.len();
    let mut parsed = Vec::with_capacity(groups.len());
    let mut seen = vec![false; n];
    for g in groups {
        if g.is_empty() {
            return Err(PersistenceError::InvalidPartition("empty group".into()));
        }
        for &id in g {
            match seen.get_mut(id) {
                None => {
                    return Err(PersistenceError::InvalidPartition(format!(
                        "unknown agent id {id}"
                    )))
                }
                Some(true) => {
                    return Err(PersistenceError::InvalidPartition(format!(
                        "agent {id} listed twice"
                    )))
                }
                Some(s) => *s = true,
            }
        }
        parsed.push(Group::new(g.iter().copied()).expect("nonempty"));
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(PersistenceError::InvalidPartition(format!(
            "agent {missing} is not in any group"
        )));
    }
    Partition::from_groups(parsed).map_err(|e| PersistenceError::InvalidPartition(e.to_string()))
}

pub fn load_partition(path: &Path, scenario: &Scenario) -> Result<Partition, PersistenceError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let file: PartitionFile = parse_line(&text, 1)?;
    if file.format_version != PARTITION_FORMAT_VERSION {
        return Err(PersistenceError::UnsupportedVersion {
            found: file.format_version,
            expected: PARTITION_FORMAT_VERSION,
        });
    }
    partition_from_groups(&file.groups, scenario)
}

pub fn save_partition(partition: &Partition, path: &Path) -> Result<(), PersistenceError> {
    let file = PartitionFile {
        format_version: PARTITION_FORMAT_VERSION,
        groups: partition.canonical(),
    };
    write_file(path, &(to_canonical_json(&file) + "\n"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub format_version: u32,
    pub scenario_digest: String,
    pub cfg: GameConfig,
    pub seed: u64,
    pub max_iterations: usize,
    pub engine_version: String,
    pub initial_partition: Partition,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceFooter {
    pub converged: bool,
    pub total_iterations: usize,
    pub final_partition: Partition,
    pub metrics: Option<EquilibriumMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum TraceRecord {
    Header(TraceHeader),
    Event(UpdateEvent),
    Footer(TraceFooter),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceFile {
    pub trace: SimTrace,
    pub metrics: Option<EquilibriumMetrics>,
}

pub fn trace_to_jsonl(trace: &SimTrace, metrics: Option<&EquilibriumMetrics>) -> String {
    let mut out = String::new();
    let mut push = |rec: TraceRecord| {
        out.push_str(&to_canonical_json(&rec));
        out.push('\n');
    };
    push(TraceRecord::Header(TraceHeader {
        format_version: TRACE_FORMAT_VERSION,
        scenario_digest: trace.scenario_digest.clone(),
        cfg: trace.cfg,
        seed: trace.seed,
        max_iterations: trace.max_iterations,
        engine_version: trace.engine_version.clone(),
        initial_partition: trace.initial_partition.clone(),
    }));
    for ev in &trace.events {
        push(TraceRecord::Event(ev.clone()));
    }
    push(TraceRecord::Footer(TraceFooter {
        converged: trace.converged,
        total_iterations: trace.total_iterations,
        final_partition: trace.final_partition.clone(),
        metrics: metrics.cloned(),
    }));
    out
}

pub fn parse_trace(reader: impl BufRead) -> Result<TraceFile, PersistenceError> {
    let mut header = None;
    let mut footer = None;
    let mut events = Vec::new();
    let mut last_line = 0;
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        last_line = line_no;
        let text = line.map_err(|e| PersistenceError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if text.trim().is_empty() {
            continue;
        }
        if footer.is_some() {
            return Err(PersistenceError::Parse {
                line: line_no,
                message: "content after footer".into(),
            });
        }
        match parse_line::<TraceRecord>(&text, line_no)? {
            TraceRecord::Header(h) if header.is_none() && line_no == 1 => {
                if h.format_version != TRACE_FORMAT_VERSION {
                    return Err(PersistenceError::UnsupportedVersion {
                        found: h.format_version,
                        expected: TRACE_FORMAT_VERSION,
                    });
                }
                header = Some(h);
            }
            TraceRecord::Header(_) => {
                return Err(PersistenceError::Parse {
                    line: line_no,
                    message: "header must be the first line".into(),
                })
            }
            _ if header.is_none() => {
                return Err(PersistenceError::Parse {
                    line: line_no,
                    message: "missing header".into(),
                })
            }
            TraceRecord::Event(ev) => events.push(ev),
            TraceRecord::Footer(f) => footer = Some(f),
        }
    }
    let header = header.ok_or(PersistenceError::Parse {
        line: 1,
        message: "empty trace".into(),
    })?;
    let footer = footer.ok_or(PersistenceError::Parse {
        line: last_line + 1,
        message: "missing footer (truncated trace?)".into(),
    })?;
    if footer.total_iterations != events.len() {
        return Err(PersistenceError::InvalidTrace(format!(
            "footer reports {} iterations but {} events are present",
            footer.total_iterations,
            events.len()
        )));
    }
    Ok(TraceFile {
        trace: SimTrace {
            scenario_digest: header.scenario_digest,
            cfg: header.cfg,
            seed: header.seed,
            max_iterations: header.max_iterations,
            engine_version: header.engine_version,
            initial_partition: header.initial_partition,
            events,
            final_partition: footer.final_partition,
            converged: footer.converged,
            total_iterations: footer.total_iterations,
        },
        metrics: footer.metrics,
    })
}

pub fn save_trace(
    trace: &SimTrace,
    metrics: Option<&EquilibriumMetrics>,
    path: &Path,
) -> Result<(), PersistenceError> {
    write_file(path, &trace_to_jsonl(trace, metrics))
}

pub fn load_trace(path: &Path) -> Result<TraceFile, PersistenceError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    parse_trace(BufReader::new(file))
}

/// Fails unless the trace was produced from `scenario`.
pub fn check_digest(trace: &SimTrace, scenario: &Scenario) -> Result<(), PersistenceError> {
    let found = scenario_digest(scenario);
    if trace.scenario_digest != found {
        return Err(PersistenceError::DigestMismatch {
            expected: trace.scenario_digest.clone(),
            found,
        });
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct SweepCsvRow {
    x_max: f64,
    r_max: f64,
    replications: usize,
    num_groups_mean: f64,
    num_groups_std: f64,
    mean_group_size_mean: f64,
    mean_group_size_std: f64,
    mean_sectors_per_group_mean: f64,
    mean_sectors_per_group_std: f64,
    largest_group_size_mean: f64,
    largest_group_size_std: f64,
    iterations_mean: f64,
    iterations_std: f64,
    max_iterations_observed: usize,
    converged_within_threshold: usize,
    failures: usize,
    accepted_updates: usize,
    potential_decreases: usize,
}

pub fn sweep_to_csv(result: &SweepResult) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for c in &result.cells {
        w.serialize(SweepCsvRow {
            x_max: c.x_max,
            r_max: c.r_max,
            replications: c.replications,
            num_groups_mean: c.num_groups.mean,
            num_groups_std: c.num_groups.std,
            mean_group_size_mean: c.mean_group_size.mean,
            mean_group_size_std: c.mean_group_size.std,
            mean_sectors_per_group_mean: c.mean_sectors_per_group.mean,
            mean_sectors_per_group_std: c.mean_sectors_per_group.std,
            largest_group_size_mean: c.largest_group_size.mean,
            largest_group_size_std: c.largest_group_size.std,
            iterations_mean: c.iterations.mean,
            iterations_std: c.iterations.std,
            max_iterations_observed: c.max_iterations_observed,
            converged_within_threshold: c.converged_within_threshold,
            failures: c.failures,
            accepted_updates: c.accepted_updates,
            potential_decreases: c.potential_decreases,
        })
        .expect("in-memory csv write");
    }
    String::from_utf8(w.into_inner().expect("flush to vec")).expect("csv is utf-8")
}

pub fn save_sweep(
    result: &SweepResult,
    dir: &Path,
) -> Result<(PathBuf, PathBuf), PersistenceError> {
    let csv_path = dir.join("sweep.csv");
    let json_path = dir.join("sweep.json");
    write_file(&csv_path, &sweep_to_csv(result))?;
    write_file(&json_path, &(to_canonical_json_pretty(result) + "\n"))?;
    Ok((csv_path, json_path))
}

pub fn load_sweep(path: &Path) -> Result<SweepResult, PersistenceError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_line(&text, 1)
}


#[cfg(test)]
mod props {
    use super::*;
    use crate::dynamics::run_to_convergence;
    use crate::experiments::generate_scenario;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn any_trace_round_trips(seed in any::<u64>(), x in 0.5f64..20.0, r in 1.0f64..50.0) {
            let s = generate_scenario(&ScenarioParams { m: 2, ..ScenarioParams::new(x, r, seed) }).unwrap();
            let t = run_to_convergence(&s, &GameConfig::default(), seed, 500).unwrap();
            let text = trace_to_jsonl(&t, None);
            prop_assert_eq!(parse_trace(text.as_bytes()).unwrap().trace, t);
            let file = ScenarioFile::from_scenario(&s, None);
            prop_assert_eq!(parse_scenario(&to_canonical_json(&file)).unwrap(), s);
        }
    }
}
