//! Decision-making agents: map observations to task requests for idle actors.
//!
//! [`Cobos`] plans with the exact solver and re-plans on events. The baselines
//! dispatch greedily the moment an actor is idle: [`RandomAllocation`],
//! [`MaxDuration`] and [`DependencyAware`].

mod baselines;
mod cobos;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use baselines::{DependencyAware, MaxDuration, RandomAllocation};
pub use cobos::{Cobos, CobosConfig, ReplanRecord};

use crate::domain::{ActorIdx, Instance, Observation, Schedule, TaskId, TaskIdx, TaskState, Tick};
use crate::solver::SolveLimits;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ControllerKind {
    #[serde(rename = "cobos")]
    CoBOS,
    #[serde(rename = "ra")]
    RA,
    #[serde(rename = "md")]
    MD,
    #[serde(rename = "da")]
    DA,
}

impl ControllerKind {
    pub const ALL: [ControllerKind; 4] =
        [ControllerKind::CoBOS, ControllerKind::RA, ControllerKind::MD, ControllerKind::DA];

    pub fn name(self) -> &'static str {
        match self {
            ControllerKind::CoBOS => "cobos",
            ControllerKind::RA => "ra",
            ControllerKind::MD => "md",
            ControllerKind::DA => "da",
        }
    }

    /// Label used in reports.
    pub fn label(self) -> &'static str {
        match self {
            ControllerKind::CoBOS => "CoBOS",
            ControllerKind::RA => "RA",
            ControllerKind::MD => "MD",
            ControllerKind::DA => "DA",
        }
    }
}

impl fmt::Display for ControllerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown method {0:?}, expected one of cobos, ra, md, da")]
pub struct UnknownMethod(pub String);

impl FromStr for ControllerKind {
    type Err = UnknownMethod;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "cobos" => Ok(ControllerKind::CoBOS),
            "ra" => Ok(ControllerKind::RA),
            "md" => Ok(ControllerKind::MD),
            "da" => Ok(ControllerKind::DA),
            _ => Err(UnknownMethod(s.to_string())),
        }
    }
}

/// Ask `actor` to take up `task`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentRequest {
    pub actor: ActorIdx,
    pub task: TaskIdx,
    pub issue_tick: Tick,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AgentError {
    #[error("no feasible schedule remains: {0}")]
    ScheduleInfeasible(String),
    #[error("task {0} was rejected by every eligible actor")]
    TaskUnassignable(TaskId),
    #[error("observation contradicts earlier ones: {0}")]
    InconsistentObservation(String),
}

/// Deterministic counters plus wall-clock solve times.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ControllerStats {
    pub steps: u64,
    pub solves: u64,
    pub solver_nodes: u64,
    /// Wall time of every solve, in microseconds. Not deterministic.
    pub solve_latencies_us: Vec<u64>,
}

pub trait Controller: Send {
    fn kind(&self) -> ControllerKind;

    /// Requests for this tick. Called once per tick with the fresh observation.
    fn step(&mut self, obs: &Observation) -> Result<Vec<AgentRequest>, AgentError>;

    /// The plan currently followed, for planners.
    fn schedule(&self) -> Option<&Schedule> {
        None
    }

    /// The re-plan made during the last step, for planners that solved in it.
    fn last_replan(&self) -> Option<&ReplanRecord> {
        None
    }

    fn stats(&self) -> ControllerStats;
}

/// A controller of the given kind over the controller-visible instance.
/// `seed` feeds the controller's own random stream; `limits` bound each solve.
pub fn make_controller(
    kind: ControllerKind,
    instance: Arc<Instance>,
    seed: u64,
    limits: SolveLimits,
) -> Box<dyn Controller> {
    match kind {
        ControllerKind::CoBOS => Box::new(Cobos::new(instance, CobosConfig { limits })),
        ControllerKind::RA => Box::new(RandomAllocation::new(instance, seed)),
        ControllerKind::MD => Box::new(MaxDuration::new(instance)),
        ControllerKind::DA => Box::new(DependencyAware::new(instance)),
    }
}

/// Not started, every dependency has finished executing, eligible and not refused.
pub fn executable(instance: &Instance, obs: &Observation, task: TaskIdx, actor: ActorIdx) -> bool {
    obs.task_states[task] == TaskState::Available
        && instance.is_eligible(task, actor)
        && !obs.rejected.contains(&(task, actor))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kinds_parse_and_print() {
        for k in ControllerKind::ALL {
            assert_eq!(k.name().parse::<ControllerKind>(), Ok(k));
            assert_eq!(serde_json::to_string(&k).unwrap(), format!("\"{}\"", k.name()));
        }
        assert!("xx".parse::<ControllerKind>().is_err());
        assert_eq!("CoBOS".parse::<ControllerKind>(), Ok(ControllerKind::CoBOS));
    }
}
