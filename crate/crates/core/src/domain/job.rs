use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{ActorId, ActorIdx, AreaId, Phase, TaskId, TaskIdx, Tick};

/// A decomposable job: sub-tasks, their dependency DAG and the actors that execute them.
///
/// This is the on-disk job file format. Use [`validate_job`] to check it and
/// [`Instance::new`] to obtain the indexed form consumed by the solver and simulator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Job {
    pub tasks: Vec<Task>,
    /// `(i, j)`: task `i` depends on task `j`.
    #[serde(default)]
    pub edges: Vec<(TaskId, TaskId)>,
    pub actors: Vec<ActorSpec>,
    pub horizon: Tick,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Task {
    pub id: TaskId,
    pub eligible_actors: Vec<ActorId>,
    pub estimates: PhaseEstimates,
    /// Duration distributions per phase and actor. Missing entries fall back to
    /// [`DurationDist::from_estimate`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dist: Option<PhaseDists>,
    /// Probability that an actor refuses this task when asked. Missing actors never refuse.
    #[serde(default)]
    pub reject_prob: BTreeMap<ActorId, f64>,
    #[serde(default)]
    pub shared_area: Option<AreaId>,
}

/// Estimated duration of each phase in ticks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseEstimates {
    pub prep: Tick,
    pub exec: Tick,
    pub done: Tick,
}

impl PhaseEstimates {
    pub fn new(prep: Tick, exec: Tick, done: Tick) -> Self {
        Self { prep, exec, done }
    }

    pub fn get(&self, phase: Phase) -> Tick {
        match phase {
            Phase::Preparation => self.prep,
            Phase::Execution => self.exec,
            Phase::Completion => self.done,
        }
    }

    pub fn as_array(&self) -> [Tick; 3] {
        [self.prep, self.exec, self.done]
    }

    pub fn total(&self) -> Tick {
        self.prep + self.exec + self.done
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseDists {
    #[serde(default)]
    pub prep: BTreeMap<ActorId, DurationDist>,
    #[serde(default)]
    pub exec: BTreeMap<ActorId, DurationDist>,
    #[serde(default)]
    pub done: BTreeMap<ActorId, DurationDist>,
}

impl PhaseDists {
    pub fn get(&self, phase: Phase) -> &BTreeMap<ActorId, DurationDist> {
        match phase {
            Phase::Preparation => &self.prep,
            Phase::Execution => &self.exec,
            Phase::Completion => &self.done,
        }
    }

    pub fn get_mut(&mut self, phase: Phase) -> &mut BTreeMap<ActorId, DurationDist> {
        match phase {
            Phase::Preparation => &mut self.prep,
            Phase::Execution => &mut self.exec,
            Phase::Completion => &mut self.done,
        }
    }
}

/// Two-component Gaussian mixture: normal execution and failed attempts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DurationDist {
    pub normal_mean: f64,
    pub normal_std: f64,
    pub failure_mean: f64,
    pub failure_std: f64,
    pub failure_probability: f64,
}

impl DurationDist {
    /// Default mixture around an estimate: 10% spread, failures take twice as long
    /// and happen one time in ten.
    pub fn from_estimate(estimate: Tick) -> Self {
        let mean = f64::from(estimate.max(1));
        Self {
            normal_mean: mean,
            normal_std: 0.1 * mean,
            failure_mean: 2.0 * mean,
            failure_std: 0.2 * mean,
            failure_probability: 0.1,
        }
    }

    fn problems(&self) -> Option<String> {
        let finite = [self.normal_mean, self.normal_std, self.failure_mean, self.failure_std, self.failure_probability]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Some("non-finite parameter".into());
        }
        if self.normal_mean <= 0.0 || self.failure_mean <= 0.0 {
            return Some("means must be positive".into());
        }
        if self.normal_std < 0.0 || self.failure_std < 0.0 {
            return Some("standard deviations must be non-negative".into());
        }
        if self.failure_mean < self.normal_mean {
            return Some("failure_mean must not be below normal_mean".into());
        }
        if !(0.0..=1.0).contains(&self.failure_probability) {
            return Some("failure_probability outside [0, 1]".into());
        }
        None
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActorSpec {
    pub id: ActorId,
    pub kind: ActorKind,
}

impl ActorSpec {
    pub fn robot(id: impl Into<String>) -> Self {
        Self { id: ActorId::new(id), kind: ActorKind::Robot }
    }

    pub fn human(id: impl Into<String>) -> Self {
        Self { id: ActorId::new(id), kind: ActorKind::Human }
    }

    pub fn policy(&self) -> ActorPolicy {
        match self.kind {
            ActorKind::Robot => ActorPolicy::CompliantRobot,
            ActorKind::Human => ActorPolicy::ProbabilisticHuman,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActorKind {
    Robot,
    Human,
}

/// How an actor reacts to requests in simulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ActorPolicy {
    /// Accepts every request.
    CompliantRobot,
    /// Accepts task `i` with probability `1 - reject_prob(i)`.
    ProbabilisticHuman,
}

/// One violated job invariant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Error)]
pub enum JobIssue {
    #[error("job has no tasks")]
    NoTasks,
    #[error("job has no actors")]
    NoActors,
    #[error("duplicate task id {0}")]
    DuplicateTask(TaskId),
    #[error("duplicate actor id {0}")]
    DuplicateActor(ActorId),
    #[error("task {0} has no eligible actors")]
    NoEligibleActors(TaskId),
    #[error("task {task} names unknown actor {actor}")]
    UnknownActor { task: TaskId, actor: ActorId },
    #[error("edge names unknown task {0}")]
    UnknownTask(TaskId),
    #[error("dependency cycle through {0:?}")]
    CycleDetected(Vec<TaskId>),
    #[error("task {task} has a zero {phase} estimate")]
    ZeroEstimate { task: TaskId, phase: Phase },
    #[error("task {task}: rejection probability for {actor} is outside [0, 1]")]
    ProbabilityOutOfRange { task: TaskId, actor: ActorId },
    #[error("task {task}: robot {actor} cannot have a rejection probability")]
    RobotRejection { task: TaskId, actor: ActorId },
    #[error("task {task}: {phase} distribution for {actor}: {reason}")]
    InvalidDistribution { task: TaskId, phase: Phase, actor: ActorId, reason: String },
    #[error("horizon {horizon} is below the serial bound {required}")]
    HorizonTooShort { horizon: Tick, required: Tick },
}

/// Every violated invariant of a job. Empty iff the job is valid.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub issues: Vec<JobIssue>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.issues.is_empty()
    }
}

impl std::fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.issues.is_empty() {
            return f.write_str("valid");
        }
        for (i, issue) in self.issues.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{issue}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ValidationReport {}

/// Checks every job invariant and reports all violations.
pub fn validate_job(job: &Job) -> ValidationReport {
    let mut issues = Vec::new();
    if job.tasks.is_empty() {
        issues.push(JobIssue::NoTasks);
    }
    if job.actors.is_empty() {
        issues.push(JobIssue::NoActors);
    }

    let mut actors: HashMap<&ActorId, ActorKind> = HashMap::new();
    for actor in &job.actors {
        if actors.insert(&actor.id, actor.kind).is_some() {
            issues.push(JobIssue::DuplicateActor(actor.id.clone()));
        }
    }

    let mut task_ids: HashMap<&TaskId, TaskIdx> = HashMap::new();
    let mut serial: Tick = 0;
    for (idx, task) in job.tasks.iter().enumerate() {
        if task_ids.insert(&task.id, idx).is_some() {
            issues.push(JobIssue::DuplicateTask(task.id.clone()));
        }
        if task.eligible_actors.is_empty() {
            issues.push(JobIssue::NoEligibleActors(task.id.clone()));
        }
        for actor in &task.eligible_actors {
            if !actors.contains_key(actor) {
                issues.push(JobIssue::UnknownActor { task: task.id.clone(), actor: actor.clone() });
            }
        }
        for phase in Phase::ALL {
            if task.estimates.get(phase) == 0 {
                issues.push(JobIssue::ZeroEstimate { task: task.id.clone(), phase });
            }
        }
        serial = serial.saturating_add(task.estimates.total());
        for (actor, &p) in &task.reject_prob {
            match actors.get(actor) {
                None => issues.push(JobIssue::UnknownActor { task: task.id.clone(), actor: actor.clone() }),
                Some(ActorKind::Robot) if p != 0.0 => {
                    issues.push(JobIssue::RobotRejection { task: task.id.clone(), actor: actor.clone() })
                }
                _ => {}
            }
            if !(0.0..=1.0).contains(&p) {
                issues.push(JobIssue::ProbabilityOutOfRange { task: task.id.clone(), actor: actor.clone() });
            }
        }
        if let Some(dists) = &task.dist {
            for phase in Phase::ALL {
                for (actor, dist) in dists.get(phase) {
                    if !actors.contains_key(actor) {
                        issues.push(JobIssue::UnknownActor { task: task.id.clone(), actor: actor.clone() });
                    }
                    if let Some(reason) = dist.problems() {
                        issues.push(JobIssue::InvalidDistribution {
                            task: task.id.clone(),
                            phase,
                            actor: actor.clone(),
                            reason,
                        });
                    }
                }
            }
        }
    }

    let mut edges_ok = true;
    for (i, j) in &job.edges {
        for end in [i, j] {
            if !task_ids.contains_key(end) {
                issues.push(JobIssue::UnknownTask(end.clone()));
                edges_ok = false;
            }
        }
    }
    if edges_ok {
        let preds = predecessor_lists(job, &task_ids);
        if let Some(cycle) = find_cycle(&preds) {
            issues.push(JobIssue::CycleDetected(cycle.into_iter().map(|t| job.tasks[t].id.clone()).collect()));
        }
    }

    if job.horizon < serial {
        issues.push(JobIssue::HorizonTooShort { horizon: job.horizon, required: serial });
    }
    ValidationReport { issues }
}

fn predecessor_lists(job: &Job, task_ids: &HashMap<&TaskId, TaskIdx>) -> Vec<Vec<TaskIdx>> {
    let mut preds = vec![Vec::new(); job.tasks.len()];
    for (i, j) in &job.edges {
        let (i, j) = (task_ids[i], task_ids[j]);
        if !preds[i].contains(&j) {
            preds[i].push(j);
        }
    }
    for p in &mut preds {
        p.sort_unstable();
    }
    preds
}

/// Returns one dependency cycle, rotated to start at its smallest task index.
fn find_cycle(preds: &[Vec<TaskIdx>]) -> Option<Vec<TaskIdx>> {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        New,
        Open,
        Closed,
    }
    let n = preds.len();
    let mut mark = vec![Mark::New; n];
    let mut path: Vec<TaskIdx> = Vec::new();
    // (node, next child position)
    let mut stack: Vec<(TaskIdx, usize)> = Vec::new();
    for root in 0..n {
        if mark[root] != Mark::New {
            continue;
        }
        stack.push((root, 0));
        mark[root] = Mark::Open;
        path.push(root);
        while let Some(&mut (node, ref mut pos)) = stack.last_mut() {
            if let Some(&next) = preds[node].get(*pos) {
                *pos += 1;
                match mark[next] {
                    Mark::New => {
                        mark[next] = Mark::Open;
                        path.push(next);
                        stack.push((next, 0));
                    }
                    Mark::Open => {
                        let start = path.iter().position(|&t| t == next).expect("open node on path");
                        let mut cycle = path[start..].to_vec();
                        let min_pos = cycle.iter().enumerate().min_by_key(|(_, &t)| t).map(|(p, _)| p).unwrap_or(0);
                        cycle.rotate_left(min_pos);
                        return Some(cycle);
                    }
                    Mark::Closed => {}
                }
            } else {
                mark[node] = Mark::Closed;
                path.pop();
                stack.pop();
            }
        }
    }
    None
}

/// Dependency layers: layer `k` holds the tasks whose longest dependency chain has `k` edges.
pub fn topological_layers(job: &Job) -> Result<Vec<Vec<TaskId>>, JobIssue> {
    let mut task_ids = HashMap::new();
    for (idx, task) in job.tasks.iter().enumerate() {
        if task_ids.insert(&task.id, idx).is_some() {
            return Err(JobIssue::DuplicateTask(task.id.clone()));
        }
    }
    for (i, j) in &job.edges {
        for end in [i, j] {
            if !task_ids.contains_key(end) {
                return Err(JobIssue::UnknownTask(end.clone()));
            }
        }
    }
    let preds = predecessor_lists(job, &task_ids);
    if let Some(cycle) = find_cycle(&preds) {
        return Err(JobIssue::CycleDetected(cycle.into_iter().map(|t| job.tasks[t].id.clone()).collect()));
    }
    let layers = layer_indices(&preds);
    Ok(layers.into_iter().map(|layer| layer.into_iter().map(|t| job.tasks[t].id.clone()).collect()).collect())
}

/// Longest-chain depth layering of an acyclic predecessor graph (Kahn's algorithm).
fn layer_indices(preds: &[Vec<TaskIdx>]) -> Vec<Vec<TaskIdx>> {
    let n = preds.len();
    let mut succs = vec![Vec::new(); n];
    let mut indegree = vec![0usize; n];
    for (i, ps) in preds.iter().enumerate() {
        indegree[i] = ps.len();
        for &p in ps {
            succs[p].push(i);
        }
    }
    let mut depth = vec![0usize; n];
    let mut ready: Vec<TaskIdx> = (0..n).filter(|&i| indegree[i] == 0).collect();
    let mut head = 0;
    while head < ready.len() {
        let t = ready[head];
        head += 1;
        for &s in &succs[t] {
            depth[s] = depth[s].max(depth[t] + 1);
            indegree[s] -= 1;
            if indegree[s] == 0 {
                ready.push(s);
            }
        }
    }
    let max_depth = depth.iter().copied().max().unwrap_or(0);
    let mut layers = vec![Vec::new(); if n == 0 { 0 } else { max_depth + 1 }];
    for (t, &d) in depth.iter().enumerate() {
        layers[d].push(t);
    }
    layers
}

/// A validated job with resolved indices.
#[derive(Debug, Clone)]
pub struct Instance {
    job: Job,
    task_index: HashMap<TaskId, TaskIdx>,
    actor_index: HashMap<ActorId, ActorIdx>,
    areas: Vec<AreaId>,
    area_of: Vec<Option<usize>>,
    eligible: Vec<Vec<ActorIdx>>,
    preds: Vec<Vec<TaskIdx>>,
    succs: Vec<Vec<TaskIdx>>,
    topo: Vec<TaskIdx>,
    layers: Vec<Vec<TaskIdx>>,
}

impl Instance {
    pub fn new(job: Job) -> Result<Self, ValidationReport> {
        let report = validate_job(&job);
        if !report.is_valid() {
            return Err(report);
        }
        let task_index: HashMap<TaskId, TaskIdx> =
            job.tasks.iter().enumerate().map(|(i, t)| (t.id.clone(), i)).collect();
        let actor_index: HashMap<ActorId, ActorIdx> =
            job.actors.iter().enumerate().map(|(i, a)| (a.id.clone(), i)).collect();
        let areas: Vec<AreaId> =
            job.tasks.iter().filter_map(|t| t.shared_area.clone()).collect::<BTreeSet<_>>().into_iter().collect();
        let area_of = job
            .tasks
            .iter()
            .map(|t| t.shared_area.as_ref().map(|a| areas.binary_search(a).expect("collected above")))
            .collect();
        let eligible = job
            .tasks
            .iter()
            .map(|t| {
                let mut e: Vec<ActorIdx> = t.eligible_actors.iter().map(|a| actor_index[a]).collect();
                e.sort_unstable();
                e.dedup();
                e
            })
            .collect();
        let borrowed: HashMap<&TaskId, TaskIdx> = task_index.iter().map(|(k, &v)| (k, v)).collect();
        let preds = predecessor_lists(&job, &borrowed);
        let mut succs = vec![Vec::new(); job.tasks.len()];
        for (i, ps) in preds.iter().enumerate() {
            for &p in ps {
                succs[p].push(i);
            }
        }
        let layers = layer_indices(&preds);
        let topo = layers.iter().flatten().copied().collect();
        Ok(Self { job, task_index, actor_index, areas, area_of, eligible, preds, succs, topo, layers })
    }

    pub fn job(&self) -> &Job {
        &self.job
    }

    pub fn n_tasks(&self) -> usize {
        self.job.tasks.len()
    }

    pub fn n_actors(&self) -> usize {
        self.job.actors.len()
    }

    pub fn task(&self, t: TaskIdx) -> &Task {
        &self.job.tasks[t]
    }

    pub fn actor(&self, a: ActorIdx) -> &ActorSpec {
        &self.job.actors[a]
    }

    pub fn task_idx(&self, id: &TaskId) -> Option<TaskIdx> {
        self.task_index.get(id).copied()
    }

    pub fn actor_idx(&self, id: &ActorId) -> Option<ActorIdx> {
        self.actor_index.get(id).copied()
    }

    pub fn areas(&self) -> &[AreaId] {
        &self.areas
    }

    pub fn area_of(&self, t: TaskIdx) -> Option<usize> {
        self.area_of[t]
    }

    /// Eligible actors of a task, in actor-list order.
    pub fn eligible(&self, t: TaskIdx) -> &[ActorIdx] {
        &self.eligible[t]
    }

    pub fn is_eligible(&self, t: TaskIdx, a: ActorIdx) -> bool {
        self.eligible[t].contains(&a)
    }

    pub fn is_allocatable(&self, t: TaskIdx) -> bool {
        self.eligible[t].len() > 1
    }

    /// Tasks that `t` depends on.
    pub fn preds(&self, t: TaskIdx) -> &[TaskIdx] {
        &self.preds[t]
    }

    /// Tasks that depend on `t`.
    pub fn succs(&self, t: TaskIdx) -> &[TaskIdx] {
        &self.succs[t]
    }

    /// All tasks, every task after its dependencies.
    pub fn topo_order(&self) -> &[TaskIdx] {
        &self.topo
    }

    pub fn layers(&self) -> &[Vec<TaskIdx>] {
        &self.layers
    }

    pub fn estimates(&self, t: TaskIdx) -> [Tick; 3] {
        self.job.tasks[t].estimates.as_array()
    }

    pub fn is_robot(&self, a: ActorIdx) -> bool {
        self.job.actors[a].kind == ActorKind::Robot
    }

    pub fn reject_prob(&self, t: TaskIdx, a: ActorIdx) -> f64 {
        self.job.tasks[t].reject_prob.get(&self.job.actors[a].id).copied().unwrap_or(0.0)
    }

    pub fn distribution(&self, t: TaskIdx, phase: Phase, a: ActorIdx) -> DurationDist {
        let task = &self.job.tasks[t];
        task.dist
            .as_ref()
            .and_then(|d| d.get(phase).get(&self.job.actors[a].id).copied())
            .unwrap_or_else(|| DurationDist::from_estimate(task.estimates.get(phase)))
    }

    /// Sum of all duration estimates.
    pub fn serial_length(&self) -> Tick {
        self.job.tasks.iter().map(|t| t.estimates.total()).sum()
    }
}
