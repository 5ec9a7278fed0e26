//! Domain types and the closed-form group evaluation.
//!
//! A group's utility is `R_G * exp(-lambda * D_G)` where
//!
//! * `R_G = (sum of category totals) * h(totals)` is the diversity-boosted
//!   group resource,
//! * `h(t) = 1 + (sum over unordered category pairs t_i * t_j) / (sum t_i)` is
//!   the boosting factor, and
//! * `D_G` is the sum of Euclidean distances over unordered member pairs.
//!
//! Every member of a group receives the group's utility. Comparisons
//! elsewhere in the crate are done on `ln R_G - lambda * D_G`, since
//! `exp(-D_G)` underflows once members are a few hundred length units apart.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type AgentId = usize;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("unknown agent id {0}")]
    UnknownAgent(AgentId),
    #[error("category {category} out of range for k = {k}")]
    CategoryOutOfRange { category: usize, k: usize },
    #[error("category count k = {0} must be at least 2")]
    TooFewCategories(usize),
    #[error("distance decay must be positive and finite, got {0}")]
    InvalidDecay(f64),
    #[error("agent {id} has nonpositive resource {resource}")]
    NonpositiveResource { id: AgentId, resource: f64 },
    #[error("boosting factor undefined for an all-zero totals vector")]
    ZeroTotals,
    #[error("empty group")]
    EmptyGroup,
    #[error("invalid partition: {0}")]
    InvalidPartition(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Category(pub usize);

impl Category {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// One organization. Its resource vector has a single nonzero entry, at
/// `category`, so only the scalar is stored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Agent {
    pub id: AgentId,
    pub category: Category,
    pub resource: f64,
    pub position: Point,
}

impl Agent {
    pub fn new(id: AgentId, category: usize, resource: f64, x: f64, y: f64) -> Self {
        Self {
            id,
            category: Category(category),
            resource,
            position: Point::new(x, y),
        }
    }
}

/// Utility-function parameters plus the category count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GameConfig {
    pub k: usize,
    /// Multiplier on `D_G` inside the exponential; 1 gives `R_G / e^{D_G}`.
    #[serde(rename = "lambda")]
    pub distance_decay: f64,
}

impl GameConfig {
    pub fn new(k: usize, distance_decay: f64) -> Result<Self, ModelError> {
        let cfg = Self { k, distance_decay };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.k < 2 {
            return Err(ModelError::TooFewCategories(self.k));
        }
        if !(self.distance_decay.is_finite() && self.distance_decay > 0.0) {
            return Err(ModelError::InvalidDecay(self.distance_decay));
        }
        Ok(())
    }
}

impl Default for GameConfig {
    fn default() -> Self {
        Self {
            k: 3,
            distance_decay: 1.0,
        }
    }
}

/// The agent table: agents indexed by id, ids dense from 0.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    k: usize,
    agents: Vec<Agent>,
}

impl Scenario {
    pub fn new(k: usize, agents: Vec<Agent>) -> Result<Self, ModelError> {
        if k < 2 {
            return Err(ModelError::TooFewCategories(k));
        }
        for (idx, agent) in agents.iter().enumerate() {
            if agent.id != idx {
                return Err(ModelError::UnknownAgent(agent.id));
            }
            if agent.category.0 >= k {
                return Err(ModelError::CategoryOutOfRange {
                    category: agent.category.0,
                    k,
                });
            }
            if !(agent.resource.is_finite() && agent.resource > 0.0) {
                return Err(ModelError::NonpositiveResource {
                    id: agent.id,
                    resource: agent.resource,
                });
            }
        }
        Ok(Self { k, agents })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.agents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.agents.is_empty()
    }

    pub fn agents(&self) -> &[Agent] {
        &self.agents
    }

    pub fn agent(&self, id: AgentId) -> Result<&Agent, ModelError> {
        self.agents.get(id).ok_or(ModelError::UnknownAgent(id))
    }
}

/// A nonempty set of agent ids, kept sorted.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "Vec<AgentId>", into = "Vec<AgentId>")]
pub struct Group {
    members: Vec<AgentId>,
}

impl Group {
    pub fn new(members: impl IntoIterator<Item = AgentId>) -> Result<Self, ModelError> {
        let set: BTreeSet<AgentId> = members.into_iter().collect();
        if set.is_empty() {
            return Err(ModelError::EmptyGroup);
        }
        Ok(Self {
            members: set.into_iter().collect(),
        })
    }

    pub fn singleton(id: AgentId) -> Self {
        Self { members: vec![id] }
    }

    pub fn members(&self) -> &[AgentId] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, id: AgentId) -> bool {
        self.members.binary_search(&id).is_ok()
    }

    /// Inserts `id`, returning false if it was already present.
    pub fn insert(&mut self, id: AgentId) -> bool {
        match self.members.binary_search(&id) {
            Ok(_) => false,
            Err(pos) => {
                self.members.insert(pos, id);
                true
            }
        }
    }

    pub fn remove(&mut self, id: AgentId) -> bool {
        match self.members.binary_search(&id) {
            Ok(pos) => {
                self.members.remove(pos);
                true
            }
            Err(_) => false,
        }
    }

    /// Members of `self` plus `id`.
    pub fn with(&self, id: AgentId) -> Group {
        let mut g = self.clone();
        g.insert(id);
        g
    }
}

impl TryFrom<Vec<AgentId>> for Group {
    type Error = ModelError;

    fn try_from(v: Vec<AgentId>) -> Result<Self, Self::Error> {
        let n = v.len();
        let g = Group::new(v)?;
        if g.len() != n {
            return Err(ModelError::InvalidPartition("duplicate id in group".into()));
        }
        Ok(g)
    }
}

impl From<Group> for Vec<AgentId> {
    fn from(g: Group) -> Self {
        g.members
    }
}

/// The game state: a disjoint cover of the agent set.
///
/// Groups live in slots addressed by a stable handle. A slot whose group
/// empties is tombstoned (`None`) and never reused, so handles in a trace
/// always refer to the same group lineage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Option<Group>>", into = "Vec<Option<Group>>")]
pub struct Partition {
    slots: Vec<Option<Group>>,
    membership: Vec<usize>,
}

impl Partition {
    pub fn singletons(n: usize) -> Self {
        Self {
            slots: (0..n).map(|i| Some(Group::singleton(i))).collect(),
            membership: (0..n).collect(),
        }
    }

    /// Builds a partition from group slots, checking that the live groups are
    /// disjoint and cover `0..n` where `n` is the total member count.
    pub fn from_slots(slots: Vec<Option<Group>>) -> Result<Self, ModelError> {
        let n: usize = slots.iter().flatten().map(Group::len).sum();
        let mut membership = vec![usize::MAX; n];
        for (handle, group) in slots.iter().enumerate() {
            let Some(group) = group else { continue };
            for &id in group.members() {
                if id >= n {
                    return Err(ModelError::InvalidPartition(format!(
                        "agent {id} outside 0..{n}"
                    )));
                }
                if membership[id] != usize::MAX {
                    return Err(ModelError::InvalidPartition(format!(
                        "agent {id} appears in more than one group"
                    )));
                }
                membership[id] = handle;
            }
        }
        Ok(Self { slots, membership })
    }

    pub fn from_groups(groups: Vec<Group>) -> Result<Self, ModelError> {
        Self::from_slots(groups.into_iter().map(Some).collect())
    }

    /// Builds a partition from a restricted growth string: `labels[i]` is the
    /// block of agent `i`, and block `b` becomes handle `b`.
    pub fn from_labels(labels: &[usize]) -> Result<Self, ModelError> {
        let blocks = labels.iter().copied().max().map_or(0, |m| m + 1);
        let mut members: Vec<Vec<AgentId>> = vec![Vec::new(); blocks];
        for (id, &b) in labels.iter().enumerate() {
            members[b].push(id);
        }
        let slots = members
            .into_iter()
            .map(|m| {
                if m.is_empty() {
                    None
                } else {
                    Some(Group { members: m })
                }
            })
            .collect();
        Self::from_slots(slots)
    }

    pub fn agent_count(&self) -> usize {
        self.membership.len()
    }

    pub fn slots(&self) -> &[Option<Group>] {
        &self.slots
    }

    pub fn group(&self, handle: usize) -> Option<&Group> {
        self.slots.get(handle).and_then(Option::as_ref)
    }

    /// Live groups with their handles, in handle order.
    pub fn groups(&self) -> impl Iterator<Item = (usize, &Group)> {
        self.slots
            .iter()
            .enumerate()
            .filter_map(|(h, g)| g.as_ref().map(|g| (h, g)))
    }

    pub fn num_groups(&self) -> usize {
        self.slots.iter().flatten().count()
    }

    pub fn group_of(&self, id: AgentId) -> Result<usize, ModelError> {
        self.membership
            .get(id)
            .copied()
            .ok_or(ModelError::UnknownAgent(id))
    }

    /// Moves `id` into the group at `target`. Empties left behind are
    /// tombstoned.
    pub fn move_to(&mut self, id: AgentId, target: usize) -> Result<(), ModelError> {
        let from = self.group_of(id)?;
        if from == target {
            return Ok(());
        }
        if self.group(target).is_none() {
            return Err(ModelError::InvalidPartition(format!(
                "no live group at handle {target}"
            )));
        }
        self.detach(id, from);
        if let Some(g) = self.slots[target].as_mut() {
            g.insert(id);
        }
        self.membership[id] = target;
        Ok(())
    }

    /// Moves `id` into a fresh singleton at a new handle, which is returned.
    pub fn split_off(&mut self, id: AgentId) -> Result<usize, ModelError> {
        let from = self.group_of(id)?;
        self.detach(id, from);
        let handle = self.slots.len();
        self.slots.push(Some(Group::singleton(id)));
        self.membership[id] = handle;
        Ok(handle)
    }

    fn detach(&mut self, id: AgentId, from: usize) {
        if let Some(g) = self.slots[from].as_mut() {
            g.remove(id);
            if g.is_empty() {
                self.slots[from] = None;
            }
        }
    }

    /// Checks the disjoint-cover invariant and that membership agrees with
    /// the slots.
    pub fn validate(&self) -> Result<(), ModelError> {
        let mut seen = vec![false; self.membership.len()];
        for (handle, group) in self.groups() {
            if group.is_empty() {
                return Err(ModelError::InvalidPartition(format!(
                    "live slot {handle} is empty"
                )));
            }
            for &id in group.members() {
                match seen.get_mut(id) {
                    None => return Err(ModelError::UnknownAgent(id)),
                    Some(true) => {
                        return Err(ModelError::InvalidPartition(format!(
                            "agent {id} in two groups"
                        )))
                    }
                    Some(s) => *s = true,
                }
                if self.membership[id] != handle {
                    return Err(ModelError::InvalidPartition(format!(
                        "membership of agent {id} points to {} not {handle}",
                        self.membership[id]
                    )));
                }
            }
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(ModelError::InvalidPartition(format!(
                "agent {missing} not covered"
            )));
        }
        Ok(())
    }

    /// Handle-free form: sorted member lists, sorted by first member.
    pub fn canonical(&self) -> Vec<Vec<AgentId>> {
        let mut groups: Vec<Vec<AgentId>> = self
            .slots
            .iter()
            .flatten()
            .map(|g| g.members.clone())
            .collect();
        groups.sort();
        groups
    }

    pub fn same_grouping(&self, other: &Partition) -> bool {
        self.canonical() == other.canonical()
    }
}

impl TryFrom<Vec<Option<Group>>> for Partition {
    type Error = ModelError;

    fn try_from(slots: Vec<Option<Group>>) -> Result<Self, Self::Error> {
        Partition::from_slots(slots)
    }
}

impl From<Partition> for Vec<Option<Group>> {
    fn from(p: Partition) -> Self {
        p.slots
    }
}

impl fmt::Display for Partition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .canonical()
            .iter()
            .map(|g| {
                let ids: Vec<String> = g.iter().map(ToString::to_string).collect();
                format!("{{{}}}", ids.join(","))
            })
            .collect();
        write!(f, "{}", parts.join(" "))
    }
}

/// Per-category resource sums for the members.
pub fn category_totals(
    members: &[AgentId],
    scenario: &Scenario,
    k: usize,
) -> Result<Vec<f64>, ModelError> {
    let mut totals = vec![0.0; k];
    for &id in members {
        let agent = scenario.agent(id)?;
        let slot = totals
            .get_mut(agent.category.0)
            .ok_or(ModelError::CategoryOutOfRange {
                category: agent.category.0,
                k,
            })?;
        *slot += agent.resource;
    }
    Ok(totals)
}

/// `1 + (sum_{i<j} t_i t_j) / (sum_i t_i)`.
pub fn boosting_factor(totals: &[f64]) -> Result<f64, ModelError> {
    let sum: f64 = totals.iter().sum();
    if sum <= 0.0 {
        return Err(ModelError::ZeroTotals);
    }
    // sum_{i<j} t_i t_j accumulated as t_j * (prefix sum before j)
    let mut prefix = 0.0;
    let mut pairs = 0.0;
    for &t in totals {
        pairs += t * prefix;
        prefix += t;
    }
    Ok(1.0 + pairs / sum)
}

fn resource_from_totals(totals: &[f64]) -> Result<f64, ModelError> {
    let sum: f64 = totals.iter().sum();
    Ok(sum * boosting_factor(totals)?)
}

pub fn group_resource(
    members: &[AgentId],
    scenario: &Scenario,
    k: usize,
) -> Result<f64, ModelError> {
    if members.is_empty() {
        return Err(ModelError::EmptyGroup);
    }
    resource_from_totals(&category_totals(members, scenario, k)?)
}

/// Sum of Euclidean distances over unordered member pairs.
pub fn group_distance(members: &[AgentId], scenario: &Scenario) -> Result<f64, ModelError> {
    if members.is_empty() {
        return Err(ModelError::EmptyGroup);
    }
    let points = members
        .iter()
        .map(|&id| scenario.agent(id).map(|a| a.position))
        .collect::<Result<Vec<_>, _>>()?;
    let mut total = 0.0;
    for (i, p) in points.iter().enumerate() {
        for q in &points[i + 1..] {
            total += p.distance(q);
        }
    }
    Ok(total)
}

pub fn group_utility(
    members: &[AgentId],
    scenario: &Scenario,
    cfg: &GameConfig,
) -> Result<f64, ModelError> {
    let r = group_resource(members, scenario, cfg.k)?;
    let d = group_distance(members, scenario)?;
    Ok(r * (-cfg.distance_decay * d).exp())
}

/// `ln R_G - lambda * D_G`, the comparison form of [`group_utility`].
pub fn log_group_utility(
    members: &[AgentId],
    scenario: &Scenario,
    cfg: &GameConfig,
) -> Result<f64, ModelError> {
    let r = group_resource(members, scenario, cfg.k)?;
    let d = group_distance(members, scenario)?;
    Ok(r.ln() - cfg.distance_decay * d)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn example2() -> Scenario {
        crate::persistence::example2_scenario()
    }

    fn close(a: f64, b: f64, rel: f64) -> bool {
        (a - b).abs() <= rel * b.abs().max(1.0)
    }

    #[test]
    fn boosting_factor_examples() {
        assert_eq!(boosting_factor(&[6.0, 0.0, 0.0]).unwrap(), 1.0);
        assert!(close(
            boosting_factor(&[4.0, 2.0, 0.0]).unwrap(),
            7.0 / 3.0,
            1e-12
        ));
        assert!(close(
            boosting_factor(&[2.0, 2.0, 2.0]).unwrap(),
            3.0,
            1e-12
        ));
        assert_eq!(
            boosting_factor(&[0.0, 0.0, 0.0]),
            Err(ModelError::ZeroTotals)
        );
    }

    #[test]
    fn totals_and_resource() {
        let s = Scenario::new(
            3,
            vec![
                Agent::new(0, 0, 3.0, 0.0, 0.0),
                Agent::new(1, 0, 1.0, 0.0, 0.0),
                Agent::new(2, 1, 2.0, 0.0, 0.0),
                Agent::new(3, 0, 5.0, 0.0, 0.0),
            ],
        )
        .unwrap();
        assert_eq!(
            category_totals(&[0, 1, 2], &s, 3).unwrap(),
            vec![4.0, 2.0, 0.0]
        );
        assert_eq!(category_totals(&[3], &s, 3).unwrap(), vec![5.0, 0.0, 0.0]);
        assert!(close(
            group_resource(&[0, 1, 2], &s, 3).unwrap(),
            14.0,
            1e-12
        ));
        assert_eq!(
            category_totals(&[0, 9], &s, 3),
            Err(ModelError::UnknownAgent(9))
        );
        assert_eq!(group_resource(&[], &s, 3), Err(ModelError::EmptyGroup));
    }

    #[test]
    fn distance_examples() {
        let s = Scenario::new(
            2,
            vec![
                Agent::new(0, 0, 1.0, 0.0, 0.0),
                Agent::new(1, 1, 1.0, 3.0, 4.0),
            ],
        )
        .unwrap();
        assert_eq!(group_distance(&[0], &s).unwrap(), 0.0);
        assert_eq!(group_distance(&[0, 1], &s).unwrap(), 5.0);
    }

    #[test]
    fn example2_group_evaluation() {
        // group {1, 4, 7} in 1-based ids
        let s = example2();
        let cfg = GameConfig::default();
        let g = [0, 3, 6];
        assert_eq!(category_totals(&g, &s, 3).unwrap(), vec![10.0, 5.0, 10.0]);
        let d_expected = 2.0 * 5f64.sqrt() + 2f64.sqrt();
        assert!(close(group_distance(&g, &s).unwrap(), d_expected, 1e-12));
        assert!(close(group_resource(&g, &s, 3).unwrap(), 225.0, 1e-12));
        let u = group_utility(&g, &s, &cfg).unwrap();
        assert!((u - 225.0 * (-d_expected).exp()).abs() < 1e-12);
        assert!((u - 0.62485).abs() < 5e-5);
        let lu = log_group_utility(&g, &s, &cfg).unwrap();
        assert!((lu - (-0.47025)).abs() < 5e-5);
    }

    #[test]
    fn singleton_utilities() {
        let e = std::f64::consts::E;
        let s = Scenario::new(
            2,
            vec![
                Agent::new(0, 0, 7.0, 1.0, 1.0),
                Agent::new(1, 1, 1.0, 0.0, 0.0),
                Agent::new(2, 1, e, 0.0, 0.0),
            ],
        )
        .unwrap();
        let cfg = GameConfig::new(2, 1.0).unwrap();
        assert!(close(group_utility(&[0], &s, &cfg).unwrap(), 7.0, 1e-15));
        assert_eq!(log_group_utility(&[1], &s, &cfg).unwrap(), 0.0);
        assert!(close(
            log_group_utility(&[2], &s, &cfg).unwrap(),
            1.0,
            1e-15
        ));
    }

    #[test]
    fn colocated_three_sector_group() {
        let s = Scenario::new(
            3,
            vec![
                Agent::new(0, 0, 2.0, 4.0, 4.0),
                Agent::new(1, 1, 2.0, 4.0, 4.0),
                Agent::new(2, 2, 2.0, 4.0, 4.0),
            ],
        )
        .unwrap();
        let u = group_utility(&[0, 1, 2], &s, &GameConfig::default()).unwrap();
        assert!(close(u, 18.0, 1e-12));
    }

    #[test]
    fn scenario_validation() {
        assert!(matches!(
            Scenario::new(1, vec![]),
            Err(ModelError::TooFewCategories(1))
        ));
        assert!(matches!(
            Scenario::new(2, vec![Agent::new(0, 2, 1.0, 0.0, 0.0)]),
            Err(ModelError::CategoryOutOfRange { category: 2, k: 2 })
        ));
        assert!(matches!(
            Scenario::new(2, vec![Agent::new(0, 0, 0.0, 0.0, 0.0)]),
            Err(ModelError::NonpositiveResource { .. })
        ));
        assert!(GameConfig::new(3, 0.0).is_err());
        assert!(GameConfig::new(3, f64::NAN).is_err());
    }

    #[test]
    fn partition_moves_tombstone_and_repair() {
        let mut p = Partition::singletons(3);
        p.move_to(0, 1).unwrap();
        assert_eq!(p.slots()[0], None);
        assert_eq!(p.group_of(0).unwrap(), 1);
        assert_eq!(p.num_groups(), 2);
        let h = p.split_off(1).unwrap();
        assert_eq!(h, 3);
        assert_eq!(p.canonical(), vec![vec![0], vec![1], vec![2]]);
        p.validate().unwrap();
        assert!(p.move_to(2, 0).is_err());
    }

    #[test]
    fn partition_rejects_overlap() {
        let g1 = Group::new([0, 1]).unwrap();
        let g2 = Group::new([1, 2]).unwrap();
        assert!(Partition::from_groups(vec![g1, g2]).is_err());
        assert!(Partition::from_groups(vec![Group::new([0, 2]).unwrap()]).is_err());
        assert!(Group::new([]).is_err());
    }

    #[test]
    fn partition_serde_keeps_tombstones() {
        let mut p = Partition::singletons(3);
        p.move_to(2, 0).unwrap();
        let json = serde_json::to_string(&p).unwrap();
        assert_eq!(json, "[[0,2],[1],null]");
        let back: Partition = serde_json::from_str(&json).unwrap();
        assert_eq!(back, p);
    }
}
