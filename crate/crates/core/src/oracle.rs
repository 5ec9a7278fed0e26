//! Brute-force ground truth for small instances.
//!
//! Nothing here calls into the dynamics engine's option enumeration; the
//! deviation check is written out again from the equilibrium definition so
//! the two implementations can catch each other's mistakes. Only the group
//! evaluation formulas are shared.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{MoveKind, MoveOption, UTILITY_TOLERANCE};
use crate::model::{log_group_utility, AgentId, GameConfig, ModelError, Partition, Scenario};

/// Largest instance [`enumerate_all_ise`] accepts (Bell(12) = 4 213 597).
pub const MAX_ENUMERATION_AGENTS: usize = 12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{n} agents exceeds the enumeration limit of {max}")]
    TooLarge { n: usize, max: usize },
    #[error("partition covers {partition} agents but scenario has {scenario}")]
    SizeMismatch { partition: usize, scenario: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub agent: AgentId,
    #[serde(rename = "move")]
    pub option: MoveOption,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IseReport {
    pub is_ise: bool,
    pub violations: Vec<Violation>,
}

/// Lists every agent that could strictly gain by joining a group that would
/// not lose by admitting it, or by going alone.
pub fn verify_ise(
    partition: &Partition,
    scenario: &Scenario,
    cfg: &GameConfig,
) -> Result<IseReport, OracleError> {
    if partition.agent_count() != scenario.len() {
        return Err(OracleError::SizeMismatch {
            partition: partition.agent_count(),
            scenario: scenario.len(),
        });
    }
    partition.validate()?;

    let groups: Vec<(usize, Vec<AgentId>)> = partition
        .groups()
        .map(|(h, g)| (h, g.members().to_vec()))
        .collect();
    let values: Vec<f64> = groups
        .iter()
        .map(|(_, m)| log_group_utility(m, scenario, cfg))
        .collect::<Result<_, _>>()?;

    let mut violations = Vec::new();
    for (own_idx, (_, own_members)) in groups.iter().enumerate() {
        for &agent in own_members {
            let mine = values[own_idx];
            for (idx, (handle, members)) in groups.iter().enumerate() {
                if idx == own_idx {
                    continue;
                }
                let mut joined = members.clone();
                joined.push(agent);
                let after = log_group_utility(&joined, scenario, cfg)?;
                let gains = after - mine > UTILITY_TOLERANCE;
                let accepted = values[idx] - after <= UTILITY_TOLERANCE;
                if gains && accepted {
                    violations.push(Violation {
                        agent,
                        option: MoveOption {
                            kind: MoveKind::Join { target: *handle },
                            mover_new_log_utility: after,
                            target_old_log_utility: Some(values[idx]),
                            target_new_log_utility: Some(after),
                        },
                    });
                }
            }
            if own_members.len() > 1 {
                let alone = log_group_utility(&[agent], scenario, cfg)?;
                if alone - mine > UTILITY_TOLERANCE {
                    violations.push(Violation {
                        agent,
                        option: MoveOption {
                            kind: MoveKind::FormSingleton,
                            mover_new_log_utility: alone,
                            target_old_log_utility: None,
                            target_new_log_utility: None,
                        },
                    });
                }
            }
        }
    }
    violations.sort_by_key(|v| v.agent);
    Ok(IseReport {
        is_ise: violations.is_empty(),
        violations,
    })
}

/// Restricted growth strings of length `n` in lexicographic order.
///
/// `a[0] = 0` and `a[i] <= 1 + max(a[..i])`; each string names one set
/// partition (agent `i` belongs to block `a[i]`).
#[derive(Debug, Clone)]
pub struct RestrictedGrowth {
    labels: Vec<usize>,
    /// `maxes[i] = max(labels[..=i])`
    maxes: Vec<usize>,
    started: bool,
    done: bool,
}

impl RestrictedGrowth {
    pub fn new(n: usize) -> Self {
        Self {
            labels: vec![0; n],
            maxes: vec![0; n],
            started: false,
            done: false,
        }
    }
}

impl Iterator for RestrictedGrowth {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        if self.done {
            return None;
        }
        if !self.started {
            self.started = true;
            if self.labels.is_empty() {
                self.done = true;
            }
            return Some(self.labels.clone());
        }
        let n = self.labels.len();
        // rightmost position that can still grow
        let Some(i) = (1..n).rev().find(|&i| self.labels[i] <= self.maxes[i - 1]) else {
            self.done = true;
            return None;
        };
        self.labels[i] += 1;
        self.maxes[i] = self.maxes[i - 1].max(self.labels[i]);
        for j in i + 1..n {
            self.labels[j] = 0;
            self.maxes[j] = self.maxes[i];
        }
        Some(self.labels.clone())
    }
}

/// Every individually stable partition, in restricted-growth order.
pub fn enumerate_all_ise(
    scenario: &Scenario,
    cfg: &GameConfig,
) -> Result<Vec<Partition>, OracleError> {
    let n = scenario.len();
    if n > MAX_ENUMERATION_AGENTS {
        return Err(OracleError::TooLarge {
            n,
            max: MAX_ENUMERATION_AGENTS,
        });
    }
    let mut found = Vec::new();
    for labels in RestrictedGrowth::new(n) {
        let partition = Partition::from_labels(&labels)?;
        if verify_ise(&partition, scenario, cfg)?.is_ise {
            found.push(partition);
        }
    }
    Ok(found)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Agent;

    /// Bell numbers by the triangle recurrence.
    fn bell(n: usize) -> usize {
        let mut row = vec![1usize];
        for _ in 0..n {
            let mut next = vec![*row.last().unwrap()];
            for v in &row {
                let last = *next.last().unwrap();
                next.push(last + v);
            }
            row = next;
        }
        row[0]
    }

    #[test]
    fn rgs_counts_match_bell_numbers() {
        for n in 0..=8 {
            assert_eq!(RestrictedGrowth::new(n).count(), bell(n), "n = {n}");
        }
    }

    #[test]
    fn rgs_order_is_lexicographic() {
        let all: Vec<_> = RestrictedGrowth::new(4).collect();
        assert!(all.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(all.first().unwrap(), &vec![0, 0, 0, 0]);
        assert_eq!(all.last().unwrap(), &vec![0, 1, 2, 3]);
    }

    #[test]
    fn far_apart_singletons_are_stable() {
        let s = Scenario::new(
            3,
            vec![
                Agent::new(0, 0, 2.0, 0.0, 0.0),
                Agent::new(1, 1, 2.0, 50.0, 0.0),
            ],
        )
        .unwrap();
        let r = verify_ise(&Partition::singletons(2), &s, &GameConfig::default()).unwrap();
        assert!(r.is_ise);
        assert!(r.violations.is_empty());
    }

    #[test]
    fn colocated_complementary_singletons_are_unstable() {
        let s = Scenario::new(
            3,
            vec![
                Agent::new(0, 0, 2.0, 1.0, 1.0),
                Agent::new(1, 1, 2.0, 1.0, 1.0),
            ],
        )
        .unwrap();
        let cfg = GameConfig::default();
        let r = verify_ise(&Partition::singletons(2), &s, &cfg).unwrap();
        assert!(!r.is_ise);
        assert_eq!(r.violations.len(), 2);
        // 4 * (1 + 4/4) = 8
        assert!((r.violations[0].option.mover_new_log_utility - 8f64.ln()).abs() < 1e-12);

        let all = enumerate_all_ise(&s, &cfg).unwrap();
        assert_eq!(all.len(), 1);
        assert_eq!(all[0].canonical(), vec![vec![0, 1]]);
    }

    #[test]
    fn single_agent_has_one_stable_partition() {
        let s = Scenario::new(2, vec![Agent::new(0, 1, 3.0, 0.0, 0.0)]).unwrap();
        let all = enumerate_all_ise(&s, &GameConfig::new(2, 1.0).unwrap()).unwrap();
        assert_eq!(all.len(), 1);
    }

    #[test]
    fn size_guard() {
        let agents = (0..13)
            .map(|i| Agent::new(i, i % 3, 1.0, 0.0, 0.0))
            .collect();
        let s = Scenario::new(3, agents).unwrap();
        assert_eq!(
            enumerate_all_ise(&s, &GameConfig::default()),
            Err(OracleError::TooLarge { n: 13, max: 12 })
        );
    }

    #[test]
    fn size_mismatch_is_reported() {
        let s = Scenario::new(3, vec![Agent::new(0, 0, 1.0, 0.0, 0.0)]).unwrap();
        assert!(matches!(
            verify_ise(&Partition::singletons(2), &s, &GameConfig::default()),
            Err(OracleError::SizeMismatch { .. })
        ));
    }
}
