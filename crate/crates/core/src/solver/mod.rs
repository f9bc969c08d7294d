//! Exact makespan minimization over three-phase tasks, kept consistent with
//! live observations.
//!
//! [`build_model`] turns a job into a [`SchedulingModel`]; [`SchedulingModel::assert_fact`]
//! pins observed starts, ends, overruns and rejections; [`solve`] runs a
//! deterministic branch and bound and returns the best schedule together with a
//! proven lower bound.

mod model;
mod search;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use web_time::{Duration, Instant};

pub use model::{BoolDomain, Domain, Fact, ModelVariables, SchedulingModel};

use crate::domain::{
    ActorIdx, Instance, Job, PhaseInterval, Schedule, ScheduledTask, TaskId, TaskIdx, Tick, ValidationReport,
};
use crate::sim::RealizedOutcomes;
use search::{placements_to_times, PrepareError, Problem, SearchLimits};

/// Largest job the search accepts.
pub const MAX_TASKS: usize = 128;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("invalid job: {0}")]
    InvalidJob(ValidationReport),
    #[error("contradictory fact {fact:?}: {reason}")]
    ContradictoryFact { fact: Fact, reason: String },
    #[error("task {task} has been rejected by every eligible actor")]
    TaskUnassignable { task: TaskId },
    #[error("job has {0} tasks, the solver supports at most {MAX_TASKS}")]
    TooManyTasks(usize),
    #[error("no schedule satisfies the constraints")]
    Infeasible,
}

/// Search budget. With neither limit set the search runs to completion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SolveLimits {
    pub deadline: Option<Duration>,
    pub node_limit: Option<u64>,
}

impl Default for SolveLimits {
    fn default() -> Self {
        Self { deadline: Some(Duration::from_millis(1000)), node_limit: None }
    }
}

impl SolveLimits {
    pub fn unlimited() -> Self {
        Self { deadline: None, node_limit: None }
    }

    /// Node budget only: results do not depend on machine speed.
    pub fn nodes(limit: u64) -> Self {
        Self { deadline: None, node_limit: Some(limit) }
    }

    pub fn deadline(deadline: Duration) -> Self {
        Self { deadline: Some(deadline), node_limit: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    /// Search exhausted; the schedule is optimal.
    Optimal,
    /// Budget exhausted with a schedule in hand.
    Feasible,
    /// Proven that no schedule exists.
    Infeasible,
    /// Budget exhausted before any schedule was found.
    Timeout,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SolveStats {
    pub nodes: u64,
    pub propagations: u64,
    pub wall_time_us: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveResult {
    pub status: SolveStatus,
    pub schedule: Option<Schedule>,
    pub objective: Option<Tick>,
    /// Best proven lower bound on the makespan.
    pub bound: Tick,
    pub stats: SolveStats,
    /// Number of facts in the model this result was computed against.
    pub fact_count: usize,
    /// Tasks still to be sequenced, with their actors, in execution-start order.
    /// Feed it back as a warm start for the next solve.
    pub sequence: Vec<(TaskIdx, ActorIdx)>,
}

impl SolveResult {
    pub fn has_schedule(&self) -> bool {
        self.schedule.is_some()
    }
}

/// Builds the model over the job's estimates.
pub fn build_model(job: &Job) -> Result<SchedulingModel, SolverError> {
    let instance = Instance::new(job.clone()).map_err(SolverError::InvalidJob)?;
    if instance.n_tasks() > MAX_TASKS {
        return Err(SolverError::TooManyTasks(instance.n_tasks()));
    }
    Ok(SchedulingModel::new(Arc::new(instance)))
}

pub fn solve(model: &SchedulingModel, limits: SolveLimits) -> SolveResult {
    solve_with_hint(model, limits, &[])
}

/// Like [`solve`], seeding the incumbent by list scheduling `hint`.
pub fn solve_with_hint(model: &SchedulingModel, limits: SolveLimits, hint: &[(TaskIdx, ActorIdx)]) -> SolveResult {
    let started = Instant::now();
    let fact_count = model.fact_count();
    let finish = |status, schedule, objective, bound, nodes, propagations, sequence| SolveResult {
        status,
        schedule,
        objective,
        bound,
        stats: SolveStats { nodes, propagations, wall_time_us: started.elapsed().as_micros() as u64 },
        fact_count,
        sequence,
    };
    let problem = match Problem::from_model(model) {
        Ok(p) => p,
        Err(PrepareError::NoActor) => {
            return finish(SolveStatus::Infeasible, None, None, model.horizon() + 1, 0, 0, Vec::new())
        }
        Err(PrepareError::TooManyTasks) => {
            let bound = model.variables().makespan.lo;
            return finish(SolveStatus::Timeout, None, None, bound, 0, 0, Vec::new());
        }
    };
    let outcome = search::search(
        &problem,
        SearchLimits { deadline: limits.deadline, node_limit: limits.node_limit },
        if hint.is_empty() { None } else { Some(hint) },
    );
    match outcome.best {
        Some((objective, seq)) => {
            let schedule = to_schedule(model.instance(), &problem, &seq);
            debug_assert_eq!(schedule.makespan, objective);
            let (status, bound) = if outcome.exhausted {
                (SolveStatus::Optimal, objective)
            } else {
                (SolveStatus::Feasible, outcome.root_bound.min(objective))
            };
            let sequence = seq.iter().map(|p| (p.task, p.actor)).collect();
            finish(status, Some(schedule), Some(objective), bound, outcome.nodes, outcome.bound_evals, sequence)
        }
        None if outcome.exhausted => finish(
            SolveStatus::Infeasible,
            None,
            None,
            problem.horizon + 1,
            outcome.nodes,
            outcome.bound_evals,
            Vec::new(),
        ),
        None => {
            finish(SolveStatus::Timeout, None, None, outcome.root_bound, outcome.nodes, outcome.bound_evals, Vec::new())
        }
    }
}

fn to_schedule(instance: &Instance, problem: &Problem, seq: &[search::Placement]) -> Schedule {
    let times = placements_to_times(problem, seq);
    let mut schedule = Schedule::default();
    for (t, (a, [s1, s2, s3, e3])) in times.into_iter().enumerate() {
        let phases = [PhaseInterval::new(s1, s2), PhaseInterval::new(s2, s3), PhaseInterval::new(s3, e3)];
        schedule.makespan = schedule.makespan.max(e3);
        schedule
            .tasks
            .insert(instance.task(t).id.clone(), ScheduledTask { actor: instance.actor(a).id.clone(), phases });
    }
    debug_assert_eq!(problem.n_tasks(), schedule.tasks.len());
    schedule
}

/// Model of the realized world: sampled durations per actor, realized rejections
/// removed from the eligible sets, and a horizon long enough for any serial order.
pub fn perfect_information_model(instance: &Arc<Instance>, realized: &RealizedOutcomes) -> SchedulingModel {
    let n = instance.n_tasks();
    let m = instance.n_actors();
    let durations: Vec<Vec<[Tick; 3]>> = (0..n).map(|t| (0..m).map(|a| realized.durations(t, a)).collect()).collect();
    let horizon: Tick = (0..n)
        .map(|t| instance.eligible(t).iter().map(|&a| durations[t][a].iter().sum::<Tick>()).max().unwrap_or(0))
        .sum();
    let mut model = SchedulingModel::with_durations(Arc::clone(instance), durations, horizon.max(1));
    for t in 0..n {
        for &a in instance.eligible(t) {
            if realized.rejects(t, a) {
                // A fully rejected task surfaces as Infeasible from the solve below.
                let _ = model.assert_fact(Fact::TaskRejected { task: t, actor: a });
            }
        }
    }
    model
}

/// Optimal makespan with every duration and rejection known in advance. When the
/// budget runs out before optimality is proven, the proven lower bound is
/// returned, so the value never exceeds the true optimum.
pub fn lower_bound_perfect_information(
    instance: &Arc<Instance>,
    realized: &RealizedOutcomes,
    limits: SolveLimits,
) -> Result<Tick, SolverError> {
    let model = perfect_information_model(instance, realized);
    let result = solve(&model, limits);
    match result.status {
        SolveStatus::Optimal => Ok(result.objective.expect("optimal result has an objective")),
        SolveStatus::Infeasible => Err(SolverError::Infeasible),
        SolveStatus::Feasible | SolveStatus::Timeout => Ok(result.bound),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{check_schedule_on, ActorSpec, PhaseEstimates, Task};
    use std::collections::BTreeMap;

    fn task(id: &str, actors: &[&str], est: (Tick, Tick, Tick)) -> Task {
        Task {
            id: id.into(),
            eligible_actors: actors.iter().map(|a| (*a).into()).collect(),
            estimates: PhaseEstimates::new(est.0, est.1, est.2),
            dist: None,
            reject_prob: BTreeMap::new(),
            shared_area: Some("area".into()),
        }
    }

    fn job(tasks: Vec<Task>, edges: &[(&str, &str)], actors: Vec<ActorSpec>) -> Job {
        let horizon = tasks.iter().map(|t| t.estimates.total()).sum::<Tick>() * 4;
        Job { tasks, edges: edges.iter().map(|(a, b)| ((*a).into(), (*b).into())).collect(), actors, horizon }
    }

    fn solved(job: &Job) -> SolveResult {
        let model = build_model(job).unwrap();
        let result = solve(&model, SolveLimits::unlimited());
        if let Some(s) = &result.schedule {
            let report = check_schedule_on(model.instance(), s);
            assert!(report.is_valid(), "{report}");
        }
        result
    }

    #[test]
    fn single_task_model_shape() {
        let j = job(vec![task("a", &["r"], (2, 3, 1))], &[], vec![ActorSpec::robot("r")]);
        let model = build_model(&j).unwrap();
        let vars = model.variables();
        assert_eq!(vars.starts.len(), 3);
        assert_eq!(vars.prep_durations.len(), 1);
        assert_eq!(vars.assignments, vec![(0, 0, BoolDomain::True)]);
        let r = solve(&model, SolveLimits::unlimited());
        assert_eq!(r.status, SolveStatus::Optimal);
        assert_eq!(r.objective, Some(6));
    }

    #[test]
    fn serial_chain_on_one_actor() {
        let j = job(
            vec![task("a", &["r"], (1, 1, 1)), task("b", &["r"], (1, 1, 1))],
            &[("b", "a")],
            vec![ActorSpec::robot("r")],
        );
        let r = solved(&j);
        assert_eq!(r.status, SolveStatus::Optimal);
        assert_eq!(r.objective, Some(6));
    }

    #[test]
    fn two_free_tasks_two_actors() {
        let mut a = task("a", &["r", "h"], (1, 1, 1));
        let mut b = task("b", &["r", "h"], (1, 1, 1));
        a.shared_area = None;
        b.shared_area = None;
        let j = job(vec![a, b], &[], vec![ActorSpec::robot("r"), ActorSpec::human("h")]);
        let r = solved(&j);
        assert_eq!(r.objective, Some(3));
        assert_eq!(r.bound, 3);
    }

    #[test]
    fn shared_area_serializes_execution_only() {
        let j = job(
            vec![task("a", &["r"], (1, 2, 1)), task("b", &["h"], (1, 2, 1))],
            &[],
            vec![ActorSpec::robot("r"), ActorSpec::human("h")],
        );
        // One executes in [1,3), the other waits and executes in [3,5), then completes at 6.
        assert_eq!(solved(&j).objective, Some(6));
    }

    #[test]
    fn rejection_moves_task_to_robot() {
        let j = job(
            vec![task("a", &["r", "h"], (1, 1, 1)), task("b", &["r"], (5, 5, 5))],
            &[],
            vec![ActorSpec::robot("r"), ActorSpec::human("h")],
        );
        let mut model = build_model(&j).unwrap();
        let before = solve(&model, SolveLimits::unlimited());
        assert_eq!(before.schedule.unwrap().assignment(&"a".into()).unwrap().as_str(), "h");
        model.assert_fact(Fact::TaskRejected { task: 0, actor: 1 }).unwrap();
        let after = solve(&model, SolveLimits::unlimited());
        assert_eq!(after.schedule.unwrap().assignment(&"a".into()).unwrap().as_str(), "r");
        assert_eq!(after.fact_count, 1);
    }

    #[test]
    fn now_is_delays_unstarted_tasks() {
        let j = job(
            vec![task("a", &["r"], (1, 1, 1)), task("b", &["h"], (1, 1, 1))],
            &[],
            vec![ActorSpec::robot("r"), ActorSpec::human("h")],
        );
        let mut model = build_model(&j).unwrap();
        model.assert_fact(Fact::NowIs(10)).unwrap();
        let s = solve(&model, SolveLimits::unlimited()).schedule.unwrap();
        for st in s.tasks.values() {
            assert!(st.phases[0].start >= 10);
        }
    }

    #[test]
    fn observed_preparation_end_is_kept() {
        let j = job(vec![task("a", &["r"], (2, 3, 1))], &[], vec![ActorSpec::robot("r")]);
        let mut model = build_model(&j).unwrap();
        model.assert_fact(Fact::TaskStarted { task: 0, actor: 0, tick: 3 }).unwrap();
        model.assert_fact(Fact::PhaseEnded { task: 0, phase: crate::domain::Phase::Preparation, tick: 7 }).unwrap();
        let s = solve(&model, SolveLimits::unlimited()).schedule.unwrap();
        let a = &s.tasks[&TaskId::from("a")];
        assert_eq!(a.phases[0], PhaseInterval::new(3, 7));
        assert_eq!(a.phases[0].duration(), 4);
        assert_eq!(s.makespan, 11);
    }

    #[test]
    fn contradictory_facts_are_refused() {
        let j = job(vec![task("a", &["r"], (2, 3, 1))], &[], vec![ActorSpec::robot("r")]);
        let mut model = build_model(&j).unwrap();
        let err = model.assert_fact(Fact::PhaseEnded { task: 0, phase: crate::domain::Phase::Execution, tick: 4 });
        assert!(matches!(err, Err(SolverError::ContradictoryFact { .. })));
        assert_eq!(model.fact_count(), 0);
        model.assert_fact(Fact::NowIs(5)).unwrap();
        assert!(model.assert_fact(Fact::NowIs(4)).is_err());
    }

    #[test]
    fn full_rejection_is_infeasible() {
        let j = job(vec![task("a", &["h"], (1, 1, 1))], &[], vec![ActorSpec::human("h")]);
        let mut model = build_model(&j).unwrap();
        let err = model.assert_fact(Fact::TaskRejected { task: 0, actor: 0 });
        assert!(matches!(err, Err(SolverError::TaskUnassignable { .. })));
        assert_eq!(solve(&model, SolveLimits::unlimited()).status, SolveStatus::Infeasible);
    }

    #[test]
    fn independent_actors_give_max_of_loads() {
        let mut tasks = Vec::new();
        for i in 0..4 {
            let mut t = task(&format!("r{i}"), &["r"], (2, 1, 2));
            t.shared_area = None;
            tasks.push(t);
            let mut t = task(&format!("h{i}"), &["h"], (1, 1, 1));
            t.shared_area = None;
            tasks.push(t);
        }
        let j = job(tasks, &[], vec![ActorSpec::robot("r"), ActorSpec::human("h")]);
        let r = solved(&j);
        assert_eq!(r.status, SolveStatus::Optimal);
        assert_eq!(r.objective, Some(20));
    }
}
