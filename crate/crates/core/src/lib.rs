//! Spatial group formation among heterogeneous agents.
//!
//! Agents of `k` categories hold a single category-specific resource and a
//! position in the plane. A group's utility rewards pooled, diverse resources
//! and penalizes spatial spread; every member receives it. The crate runs
//! asynchronous improvement dynamics to an individually stable equilibrium,
//! checks equilibria by brute force, sweeps the location and resource ranges,
//! and renders formation storyboards.

pub mod cli;
pub mod dynamics;
pub mod experiments;
pub mod model;
pub mod oracle;
pub mod persistence;
pub mod render;
pub mod rng;

pub use dynamics::{run_to_convergence, SimTrace};
pub use model::{Agent, GameConfig, Group, Partition, Scenario};
pub use oracle::{enumerate_all_ise, verify_ise, IseReport};
