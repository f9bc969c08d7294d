use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{ActorId, AreaId, Instance, Phase, PhaseInterval, Schedule, ScheduledTask, TaskId, Tick};

/// Something that happened in the environment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum SimEvent {
    Requested {
        task: TaskId,
        actor: ActorId,
    },
    Accepted {
        task: TaskId,
        actor: ActorId,
    },
    Rejected {
        task: TaskId,
        actor: ActorId,
    },
    PhaseStarted {
        task: TaskId,
        actor: ActorId,
        phase: Phase,
    },
    PhaseEnded {
        task: TaskId,
        actor: ActorId,
        phase: Phase,
    },
    /// Preparation is over but the shared area or a dependency is not ready.
    WaitStarted {
        task: TaskId,
        actor: ActorId,
    },
    WaitEnded {
        task: TaskId,
        actor: ActorId,
    },
    AreaEntered {
        area: AreaId,
        task: TaskId,
        actor: ActorId,
    },
    AreaLeft {
        area: AreaId,
        task: TaskId,
        actor: ActorId,
    },
    RunEnded {
        makespan: Tick,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub tick: Tick,
    #[serde(flatten)]
    pub event: SimEvent,
}

pub type EventTrace = Vec<TraceEntry>;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TraceError {
    #[error("trace has no complete record of task {0}")]
    IncompleteTrace(TaskId),
    #[error("trace names unknown task {0}")]
    UnknownTask(TaskId),
}

/// Realized assignments and phase intervals of a finished run.
///
/// Only `PhaseStarted` and `PhaseEnded` are read; the makespan is the latest
/// completion end.
pub fn trace_to_schedule(trace: &[TraceEntry], instance: &Instance) -> Result<Schedule, TraceError> {
    #[derive(Default)]
    struct Partial {
        actor: Option<ActorId>,
        starts: [Option<Tick>; 3],
        ends: [Option<Tick>; 3],
    }
    let mut partial: BTreeMap<TaskId, Partial> = BTreeMap::new();
    for entry in trace {
        match &entry.event {
            SimEvent::PhaseStarted { task, actor, phase } => {
                instance.task_idx(task).ok_or_else(|| TraceError::UnknownTask(task.clone()))?;
                let p = partial.entry(task.clone()).or_default();
                p.actor = Some(actor.clone());
                p.starts[phase.index()] = Some(entry.tick);
            }
            SimEvent::PhaseEnded { task, phase, .. } => {
                instance.task_idx(task).ok_or_else(|| TraceError::UnknownTask(task.clone()))?;
                partial.entry(task.clone()).or_default().ends[phase.index()] = Some(entry.tick);
            }
            _ => {}
        }
    }
    let mut schedule = Schedule::default();
    for task in &instance.job().tasks {
        let incomplete = || TraceError::IncompleteTrace(task.id.clone());
        let p = partial.get(&task.id).ok_or_else(incomplete)?;
        let mut phases = [PhaseInterval::new(0, 0); 3];
        for (i, phase) in phases.iter_mut().enumerate() {
            *phase = PhaseInterval::new(p.starts[i].ok_or_else(incomplete)?, p.ends[i].ok_or_else(incomplete)?);
        }
        schedule.makespan = schedule.makespan.max(phases[2].end);
        let actor = p.actor.clone().ok_or_else(incomplete)?;
        schedule.tasks.insert(task.id.clone(), ScheduledTask { actor, phases });
    }
    Ok(schedule)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn entries_serialize_flat_with_event_tag() {
        let e = TraceEntry {
            tick: 4,
            event: SimEvent::AreaEntered { area: "assembly".into(), task: "t1".into(), actor: "r1".into() },
        };
        let text = serde_json::to_string(&e).unwrap();
        assert_eq!(text, r#"{"tick":4,"event":"area_entered","area":"assembly","task":"t1","actor":"r1"}"#);
        let back: TraceEntry = serde_json::from_str(&text).unwrap();
        assert_eq!(back, e);
    }
}
