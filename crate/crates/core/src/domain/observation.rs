use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{ActorIdx, Phase, TaskIdx, Tick};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskState {
    /// Not started; some dependency has not finished its execution phase.
    Unavailable,
    /// Not started; every dependency has finished its execution phase.
    Available,
    InProgress {
        actor: ActorIdx,
        phase: Phase,
    },
    Completed,
}

impl TaskState {
    pub fn is_started(self) -> bool {
        matches!(self, TaskState::InProgress { .. } | TaskState::Completed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActorState {
    Idle,
    Preparing,
    /// Preparation is done; blocked on the shared area or unmet dependencies.
    Waiting,
    Executing,
    Completing,
}

/// An actor began a task (its preparation phase) at `tick`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskStart {
    pub task: TaskIdx,
    pub actor: ActorIdx,
    pub tick: Tick,
}

/// A phase ended at `tick`. The preparation phase ends when execution begins,
/// so it includes any waiting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseCompletion {
    pub task: TaskIdx,
    pub phase: Phase,
    pub tick: Tick,
}

/// What the decision-making agent sees at one tick. Never carries sampled
/// durations of phases that have not ended yet.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    pub now: Tick,
    pub task_states: Vec<TaskState>,
    pub actor_states: Vec<ActorState>,
    /// Every `(task, actor)` refusal so far. Only grows.
    pub rejected: BTreeSet<(TaskIdx, ActorIdx)>,
    /// Task starts since the previous observation.
    pub started: Vec<TaskStart>,
    /// Phase ends since the previous observation.
    pub phase_completions: Vec<PhaseCompletion>,
}

impl Observation {
    pub fn idle_actors(&self) -> impl Iterator<Item = ActorIdx> + '_ {
        self.actor_states.iter().enumerate().filter(|(_, s)| **s == ActorState::Idle).map(|(a, _)| a)
    }

    pub fn all_completed(&self) -> bool {
        self.task_states.iter().all(|s| *s == TaskState::Completed)
    }
}
