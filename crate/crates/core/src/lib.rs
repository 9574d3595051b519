//! Decentralized finite abstractions of multi-agent systems with coupled
//! feedback dynamics.
//!
//! The pipeline: pick an admissible space-time discretization
//! ([`discretization`]), grid the workspace ([`geometry`]), integrate the
//! per-configuration reference trajectories and build each agent's controlled
//! transition system ([`abstraction`]), plan over it ([`reachability`]) and
//! check the result against closed-loop integration ([`simulate`]).

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` also rejects NaN

pub mod abstraction;
pub mod cli;
pub mod controller;
pub mod discretization;
pub mod dynamics;
pub mod geometry;
pub mod integrator;
pub mod linalg;
pub mod reachability;
pub mod scenario;
pub mod simulate;
pub mod svg;
pub mod workflow;

pub use discretization::{Case, DiscretizationParams, PlanningConstants};
pub use dynamics::{AgentId, AgentNetwork, ExampleSystem};
pub use geometry::{CellDecomposition, CellId, Domain};
