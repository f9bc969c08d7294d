//! Shared vocabulary: jobs, tasks, phases, actors, schedules and observations.

mod ids;
mod job;
mod observation;
mod schedule;

pub use ids::{ActorId, AreaId, TaskId};
pub use job::{
    topological_layers, validate_job, ActorKind, ActorPolicy, ActorSpec, DurationDist, Instance, Job, JobIssue,
    PhaseDists, PhaseEstimates, Task, ValidationReport,
};
pub use observation::{ActorState, Observation, PhaseCompletion, TaskStart, TaskState};
pub use schedule::{
    check_schedule, check_schedule_on, PhaseInterval, Schedule, ScheduleIssue, ScheduleReport, ScheduledTask,
};

use serde::{Deserialize, Serialize};

/// Discrete time. One tick is one simulated second.
pub type Tick = u32;

/// Index of a task in its job's task list.
pub type TaskIdx = usize;

/// Index of an actor in its job's actor list.
pub type ActorIdx = usize;

/// The three phases every task goes through, in order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    /// Pick the part and approach the shared area. Absorbs any waiting.
    #[serde(rename = "prep")]
    Preparation = 1,
    /// Work inside the shared area.
    #[serde(rename = "exec")]
    Execution = 2,
    /// Return home.
    #[serde(rename = "done")]
    Completion = 3,
}

impl Phase {
    pub const ALL: [Phase; 3] = [Phase::Preparation, Phase::Execution, Phase::Completion];

    /// Zero-based position, usable as an array index.
    pub fn index(self) -> usize {
        self as usize - 1
    }

    pub fn from_index(index: usize) -> Option<Phase> {
        Phase::ALL.get(index).copied()
    }

    pub fn next(self) -> Option<Phase> {
        Phase::from_index(self.index() + 1)
    }

    pub fn name(self) -> &'static str {
        match self {
            Phase::Preparation => "prep",
            Phase::Execution => "exec",
            Phase::Completion => "done",
        }
    }
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}
