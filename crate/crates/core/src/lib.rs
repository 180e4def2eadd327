//! Decentralized EV valley-filling on radial feeders.
//!
//! The crate models a feeder with LinDistFlow ([`feeder`]), reduces the
//! voltage constraint set per EV group ([`reduction`]), describes the fleet
//! and its local feasible sets ([`fleet`]), runs the shrunken primal
//! multi-dual subgradient iteration and its full-dimension baseline
//! ([`solver`]), accounts for the FLOPS saved ([`accounting`]) and drives
//! scenario experiments ([`harness`]).

// Comparisons like `!(x > 0.0)` deliberately reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod accounting;
pub mod feeder;
pub mod fleet;
pub mod harness;
pub mod reduction;
pub mod solver;

pub use accounting::{flops_dual, flops_primal, FlopsReport};
pub use feeder::{evaluate_voltages, Edge, FeederModel, HorizonLoad};
pub use fleet::{build_aggregation, project_local, ChargingProfiles, EvSpec, Fleet};
pub use reduction::{commonly_reduced, peak_preserved, propose_grouping, validate_plan, EvGroup, ReductionPlan};
pub use solver::{spds_run, spmds_run, ChargingProblem, RunReport, SolverConfig, Termination};
