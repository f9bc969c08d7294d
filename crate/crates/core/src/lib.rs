//! Constraint-based online scheduling for human-robot collaboration.
//!
//! Jobs are decomposed into three-phase tasks that share actors and mutually
//! exclusive areas. [`solver`] finds makespan-optimal schedules and keeps them
//! consistent with live observations, [`agents`] turns observations into task
//! requests, [`sim`] is a seeded closed-loop environment for evaluating those
//! agents, and [`bench`] runs the batch comparison over the [`cases`] generators.

pub mod agents;
pub mod bench;
pub mod btree;
pub mod cases;
pub mod domain;
pub mod rng;
pub mod sim;
pub mod solver;
