use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{ActorId, AreaId, Instance, Job, Phase, TaskId, Tick, ValidationReport};

/// Half-open interval `[start, end)` in ticks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseInterval {
    pub start: Tick,
    pub end: Tick,
}

impl PhaseInterval {
    pub fn new(start: Tick, end: Tick) -> Self {
        Self { start, end }
    }

    pub fn duration(&self) -> i64 {
        i64::from(self.end) - i64::from(self.start)
    }
}

/// Actor assignment and phase timing of one task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduledTask {
    pub actor: ActorId,
    /// Preparation, execution and completion, in that order.
    pub phases: [PhaseInterval; 3],
}

impl ScheduledTask {
    pub fn phase(&self, phase: Phase) -> PhaseInterval {
        self.phases[phase.index()]
    }

    /// The whole span the actor is busy with this task.
    pub fn span(&self) -> PhaseInterval {
        PhaseInterval::new(self.phases[0].start, self.phases[2].end)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schedule {
    pub tasks: BTreeMap<TaskId, ScheduledTask>,
    pub makespan: Tick,
}

impl Schedule {
    pub fn assignment(&self, task: &TaskId) -> Option<&ActorId> {
        self.tasks.get(task).map(|t| &t.actor)
    }

    pub fn phase_start(&self, task: &TaskId, phase: Phase) -> Option<Tick> {
        self.tasks.get(task).map(|t| t.phase(phase).start)
    }

    pub fn phase_end(&self, task: &TaskId, phase: Phase) -> Option<Tick> {
        self.tasks.get(task).map(|t| t.phase(phase).end)
    }

    /// Recomputes the makespan from the completion ends.
    pub fn completion_max(&self) -> Tick {
        self.tasks.values().map(|t| t.phases[2].end).max().unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScheduleIssue {
    InvalidJob(String),
    MissingTask(TaskId),
    UnknownTask(TaskId),
    UnknownActor { task: TaskId, actor: ActorId },
    IneligibleActor { task: TaskId, actor: ActorId },
    NonPositiveDuration { task: TaskId, phase: Phase },
    PhaseGap { task: TaskId, phase: Phase },
    PrecedenceViolated { task: TaskId, depends_on: TaskId },
    ActorOverlap { actor: ActorId, first: TaskId, second: TaskId },
    SharedAreaOverlap { area: AreaId, first: TaskId, second: TaskId },
    MakespanMismatch { stated: Tick, actual: Tick },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduleReport {
    pub issues: Vec<ScheduleIssue>,
}

impl ScheduleReport {
    pub fn is_valid(&self) -> bool {
        self.issues.is_empty()
    }
}

impl fmt::Display for ScheduleReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.issues.is_empty() {
            return f.write_str("schedule is valid");
        }
        for (i, issue) in self.issues.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{issue:?}")?;
        }
        Ok(())
    }
}

/// Checks structural validity of a schedule: durations, phase contiguity, precedence,
/// actor and shared-area exclusivity, eligibility and the stated makespan.
///
/// Phase durations are not compared against the job's estimates, so realized
/// schedules from simulation pass as long as they are consistent.
pub fn check_schedule(job: &Job, schedule: &Schedule) -> ScheduleReport {
    let instance = match Instance::new(job.clone()) {
        Ok(i) => i,
        Err(report) => return ScheduleReport { issues: vec![ScheduleIssue::InvalidJob(report_text(&report))] },
    };
    check_schedule_on(&instance, schedule)
}

fn report_text(report: &ValidationReport) -> String {
    report.to_string()
}

/// As [`check_schedule`] for an already validated instance.
pub fn check_schedule_on(instance: &Instance, schedule: &Schedule) -> ScheduleReport {
    let mut issues = Vec::new();
    let n = instance.n_tasks();
    let mut rows: Vec<Option<(&ScheduledTask, usize)>> = vec![None; n];

    for (id, st) in &schedule.tasks {
        let Some(t) = instance.task_idx(id) else {
            issues.push(ScheduleIssue::UnknownTask(id.clone()));
            continue;
        };
        let Some(a) = instance.actor_idx(&st.actor) else {
            issues.push(ScheduleIssue::UnknownActor { task: id.clone(), actor: st.actor.clone() });
            continue;
        };
        if !instance.is_eligible(t, a) {
            issues.push(ScheduleIssue::IneligibleActor { task: id.clone(), actor: st.actor.clone() });
        }
        for phase in Phase::ALL {
            if st.phase(phase).duration() < 1 {
                issues.push(ScheduleIssue::NonPositiveDuration { task: id.clone(), phase });
            }
        }
        for phase in [Phase::Execution, Phase::Completion] {
            if st.phase(phase).start != st.phases[phase.index() - 1].end {
                issues.push(ScheduleIssue::PhaseGap { task: id.clone(), phase });
            }
        }
        rows[t] = Some((st, a));
    }
    for (t, row) in rows.iter().enumerate() {
        if row.is_none() {
            issues.push(ScheduleIssue::MissingTask(instance.task(t).id.clone()));
        }
    }

    for (t, row) in rows.iter().enumerate() {
        let Some((st, _)) = row else { continue };
        for &p in instance.preds(t) {
            if let Some((pst, _)) = rows[p] {
                if st.phase(Phase::Execution).start < pst.phase(Phase::Execution).end {
                    issues.push(ScheduleIssue::PrecedenceViolated {
                        task: instance.task(t).id.clone(),
                        depends_on: instance.task(p).id.clone(),
                    });
                }
            }
        }
    }

    // Sweep each resource's intervals in start order; overlap shows up between neighbours
    // or against the furthest end seen so far.
    let mut per_actor: Vec<Vec<(PhaseInterval, usize)>> = vec![Vec::new(); instance.n_actors()];
    let mut per_area: Vec<Vec<(PhaseInterval, usize)>> = vec![Vec::new(); instance.areas().len()];
    for (t, row) in rows.iter().enumerate() {
        let Some((st, a)) = row else { continue };
        per_actor[*a].push((st.span(), t));
        if let Some(s) = instance.area_of(t) {
            per_area[s].push((st.phase(Phase::Execution), t));
        }
    }
    for (a, intervals) in per_actor.iter_mut().enumerate() {
        for (first, second) in overlaps(intervals) {
            issues.push(ScheduleIssue::ActorOverlap {
                actor: instance.actor(a).id.clone(),
                first: instance.task(first).id.clone(),
                second: instance.task(second).id.clone(),
            });
        }
    }
    for (s, intervals) in per_area.iter_mut().enumerate() {
        for (first, second) in overlaps(intervals) {
            issues.push(ScheduleIssue::SharedAreaOverlap {
                area: instance.areas()[s].clone(),
                first: instance.task(first).id.clone(),
                second: instance.task(second).id.clone(),
            });
        }
    }

    let actual = schedule.completion_max();
    if actual != schedule.makespan {
        issues.push(ScheduleIssue::MakespanMismatch { stated: schedule.makespan, actual });
    }
    ScheduleReport { issues }
}

fn overlaps(intervals: &mut [(PhaseInterval, usize)]) -> Vec<(usize, usize)> {
    intervals.sort_by_key(|(iv, t)| (iv.start, iv.end, *t));
    let mut found = Vec::new();
    let mut reach: Option<(Tick, usize)> = None;
    for &(iv, t) in intervals.iter() {
        if let Some((end, owner)) = reach {
            if iv.start < end && iv.end > iv.start {
                found.push((owner, t));
            }
            if iv.end > end {
                reach = Some((iv.end, t));
            }
        } else {
            reach = Some((iv.end, t));
        }
    }
    found
}
