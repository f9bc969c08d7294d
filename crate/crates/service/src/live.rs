use std::collections::BTreeMap;
use std::sync::Arc;

use cobos_core::agents::{make_controller, Controller, ControllerKind};
use cobos_core::domain::{ActorId, ActorKind, Instance, Job, Phase, Schedule, TaskId, Tick};
use cobos_core::sim::{
    apply, controller_view, decide, finish_record, outcomes_for, HumanInput, InputAck, RunRecord, RunStatus, SimConfig,
    SimError, SimEvent, Simulation, TraceEntry,
};
use serde::{Deserialize, Serialize};

use crate::ServiceError;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    /// Every actor is simulated from the seed.
    #[default]
    Simulated,
    /// Human actors are driven through [`LiveRun::input`]; robots stay simulated.
    Interactive,
}

fn default_method() -> ControllerKind {
    ControllerKind::CoBOS
}

fn yes() -> bool {
    true
}

/// Body of `POST /runs`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CreateRun {
    pub job: Job,
    #[serde(default = "default_method")]
    pub method: ControllerKind,
    #[serde(default)]
    pub mode: RunMode,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "yes")]
    pub rejection: bool,
    #[serde(default)]
    pub true_estimates: bool,
    /// Overrides the service's tick length for this run.
    #[serde(default)]
    pub tick_ms: Option<u64>,
}

impl CreateRun {
    pub fn new(job: Job) -> Self {
        Self {
            job,
            method: default_method(),
            mode: RunMode::default(),
            seed: 0,
            rejection: true,
            true_estimates: false,
            tick_ms: None,
        }
    }

    /// The simulation settings a direct `run_sim` call would use.
    pub fn sim_config(&self) -> SimConfig {
        let mut config =
            SimConfig { rejection: self.rejection, true_estimates: self.true_estimates, ..SimConfig::default() };
        if self.mode == RunMode::Interactive {
            // A person may take arbitrarily long; never call that a deadlock.
            config.stall_limit = Some(Tick::MAX);
        }
        config
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputKind {
    AcceptTask,
    RejectTask,
    CompletePhase,
}

/// Body of `POST /runs/{id}/input`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputRequest {
    pub kind: InputKind,
    pub task: TaskId,
    /// Defaults to the run's only human.
    #[serde(default)]
    pub actor: Option<ActorId>,
    /// For `complete_phase`; defaults to the phase currently running.
    #[serde(default)]
    pub phase: Option<Phase>,
}

/// A reschedule, carried on the event feed next to the trace events.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum PlanEvent {
    ScheduleUpdated { schedule: Schedule },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FeedPayload {
    Sim(SimEvent),
    Plan(PlanEvent),
}

/// One message of a run's event feed. `seq` starts at 1 and has no gaps.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedEvent {
    pub seq: u64,
    pub tick: Tick,
    #[serde(flatten)]
    pub payload: FeedPayload,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskStatus {
    Unavailable,
    Available,
    Preparing,
    Waiting,
    Executing,
    Completing,
    Completed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BarKind {
    Prep,
    Wait,
    Exec,
    Done,
}

impl From<Phase> for BarKind {
    fn from(p: Phase) -> Self {
        match p {
            Phase::Preparation => BarKind::Prep,
            Phase::Execution => BarKind::Exec,
            Phase::Completion => BarKind::Done,
        }
    }
}

/// One Gantt bar; `end` is open while the phase runs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bar {
    pub task: TaskId,
    pub kind: BarKind,
    pub start: Tick,
    pub end: Option<Tick>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskView {
    pub id: TaskId,
    pub status: TaskStatus,
    pub actor: Option<ActorId>,
}

/// `task` depends on `on`; satisfied once `on` has finished executing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeView {
    pub task: TaskId,
    pub on: TaskId,
    pub satisfied: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActorView {
    pub id: ActorId,
    pub kind: ActorKind,
    pub current: Option<TaskId>,
    /// A request waiting for this (interactive) actor's answer.
    pub pending: Option<TaskId>,
    pub realized: Vec<Bar>,
    pub planned: Vec<Bar>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProgressView {
    pub completed: usize,
    pub total: usize,
    pub planned_makespan: Option<Tick>,
    /// Completed tasks over all tasks.
    pub fraction: f64,
}

/// Immutable state of a run at one moment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub id: String,
    pub method: ControllerKind,
    pub mode: RunMode,
    pub status: RunStatus,
    pub paused: bool,
    pub now: Tick,
    /// Sequence number of the last event on the feed.
    pub last_seq: u64,
    pub tasks: Vec<TaskView>,
    pub edges: Vec<EdgeView>,
    pub actors: Vec<ActorView>,
    pub rejected: Vec<(TaskId, ActorId)>,
    pub progress: ProgressView,
}

/// Short listing entry for `GET /runs`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunSummary {
    pub id: String,
    pub method: ControllerKind,
    pub mode: RunMode,
    pub status: RunStatus,
    pub now: Tick,
}

/// A closed-loop run stepped tick by tick, with its event feed.
pub struct LiveRun {
    id: String,
    request: CreateRun,
    config: SimConfig,
    instance: Arc<Instance>,
    sim: Simulation,
    controller: Box<dyn Controller>,
    latencies: Vec<u64>,
    events: Vec<FeedEvent>,
    forwarded: usize,
    schedule: Option<Schedule>,
    over: bool,
}

impl LiveRun {
    pub fn new(id: String, request: CreateRun) -> Result<Self, ServiceError> {
        let instance = Arc::new(Instance::new(request.job.clone()).map_err(ServiceError::InvalidJob)?);
        let config = request.sim_config();
        let view = controller_view(&instance, request.seed, &config);
        let controller = make_controller(request.method, view, request.seed, config.solve_limits);
        let mut sim =
            Simulation::new(Arc::clone(&instance), outcomes_for(&instance, request.seed, &config), config.clone());
        if request.mode == RunMode::Interactive {
            for a in 0..instance.n_actors() {
                if !instance.is_robot(a) {
                    sim.set_external(a);
                }
            }
        }
        Ok(Self {
            id,
            request,
            config,
            instance,
            sim,
            controller,
            latencies: Vec::new(),
            events: Vec::new(),
            forwarded: 0,
            schedule: None,
            over: false,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn request(&self) -> &CreateRun {
        &self.request
    }

    pub fn is_over(&self) -> bool {
        self.over
    }

    pub fn events(&self) -> &[FeedEvent] {
        &self.events
    }

    fn push(&mut self, tick: Tick, payload: FeedPayload) {
        let seq = self.events.len() as u64 + 1;
        self.events.push(FeedEvent { seq, tick, payload });
    }

    fn forward_trace(&mut self) {
        let fresh: Vec<TraceEntry> = self.sim.trace()[self.forwarded..].to_vec();
        self.forwarded += fresh.len();
        for e in fresh {
            self.push(e.tick, FeedPayload::Sim(e.event));
        }
    }

    /// Runs one tick. Returns false once the run is over.
    pub fn tick(&mut self) -> bool {
        if self.over {
            return false;
        }
        let Some(decision) = decide(&mut self.sim, self.controller.as_mut()) else {
            self.forward_trace();
            self.over = true;
            return false;
        };
        self.forward_trace();
        if let Some(replan) = self.controller.last_replan() {
            if let Some(schedule) = replan.result.schedule.clone() {
                let tick = replan.tick;
                self.schedule = Some(schedule.clone());
                self.push(tick, FeedPayload::Plan(PlanEvent::ScheduleUpdated { schedule }));
            }
        }
        self.latencies.extend(decision.latency_us);
        let ok = apply(&mut self.sim, &decision);
        self.forward_trace();
        if !ok || self.sim.is_finished() {
            self.over = true;
        }
        !self.over
    }

    /// Runs to the end.
    pub fn run_to_end(&mut self) {
        while self.tick() {}
    }

    /// Applies a human input at the current tick.
    pub fn input(&mut self, req: &InputRequest) -> Result<InputAck, ServiceError> {
        if self.request.mode != RunMode::Interactive {
            return Err(ServiceError::RunNotInteractive);
        }
        if self.over {
            return Err(ServiceError::RunEnded);
        }
        let inst = &self.instance;
        let task = inst.task_idx(&req.task).ok_or_else(|| ServiceError::NotRequested(req.task.clone()))?;
        let actor = match &req.actor {
            Some(id) => inst.actor_idx(id).ok_or_else(|| ServiceError::BadRequest(format!("unknown actor {id}")))?,
            None => {
                let humans: Vec<usize> = (0..inst.n_actors()).filter(|&a| !inst.is_robot(a)).collect();
                match humans[..] {
                    [a] => a,
                    _ => return Err(ServiceError::BadRequest("several humans; name the actor".into())),
                }
            }
        };
        let input = match req.kind {
            InputKind::AcceptTask => HumanInput::AcceptTask { task },
            InputKind::RejectTask => HumanInput::RejectTask { task },
            InputKind::CompletePhase => {
                let phase = req.phase.or_else(|| self.running_phase(&req.task)).unwrap_or(Phase::Completion);
                HumanInput::CompletePhase { task, phase }
            }
        };
        let ack = self.sim.human_input(actor, input).map_err(|e| match e {
            SimError::NotRequested { .. } => ServiceError::NotRequested(req.task.clone()),
            SimError::NotInteractive => ServiceError::RunNotInteractive,
            SimError::RunEnded => ServiceError::RunEnded,
            SimError::PhaseTooShort { .. } => ServiceError::TooEarly(req.task.clone()),
            other => ServiceError::BadRequest(other.to_string()),
        })?;
        self.forward_trace();
        Ok(ack)
    }

    fn running_phase(&self, task: &TaskId) -> Option<Phase> {
        self.sim.trace().iter().rev().find_map(|e| match &e.event {
            SimEvent::PhaseStarted { task: t, phase, .. } if t == task => Some(*phase),
            _ => None,
        })
    }

    /// The run's record once it is over.
    pub fn record(&self) -> Option<RunRecord> {
        self.over.then(|| {
            finish_record(&self.sim, self.controller.as_ref(), self.request.seed, &self.config, self.latencies.clone())
        })
    }

    pub fn summary(&self) -> RunSummary {
        RunSummary {
            id: self.id.clone(),
            method: self.request.method,
            mode: self.request.mode,
            status: self.sim.status(),
            now: self.sim.now(),
        }
    }

    pub fn snapshot(&self, paused: bool) -> Snapshot {
        let inst = &self.instance;
        let n = inst.n_tasks();
        let actor_of = |id: &ActorId| inst.actor_idx(id).expect("trace names known actors");
        let mut status = vec![None::<TaskStatus>; n];
        let mut owner: Vec<Option<ActorId>> = vec![None; n];
        let mut exec_done = vec![false; n];
        let mut realized: Vec<Vec<Bar>> = vec![Vec::new(); inst.n_actors()];
        let mut open: BTreeMap<(usize, BarKind), usize> = BTreeMap::new();
        for e in self.sim.trace() {
            let (task, actor, kind, starts) = match &e.event {
                SimEvent::PhaseStarted { task, actor, phase } => (task, actor, BarKind::from(*phase), true),
                SimEvent::PhaseEnded { task, actor, phase } => (task, actor, BarKind::from(*phase), false),
                SimEvent::WaitStarted { task, actor } => (task, actor, BarKind::Wait, true),
                SimEvent::WaitEnded { task, actor } => (task, actor, BarKind::Wait, false),
                _ => continue,
            };
            let t = inst.task_idx(task).expect("trace names known tasks");
            let a = actor_of(actor);
            if starts {
                open.insert((t, kind), realized[a].len());
                realized[a].push(Bar { task: task.clone(), kind, start: e.tick, end: None });
                owner[t] = Some(actor.clone());
                status[t] = Some(match kind {
                    BarKind::Prep => TaskStatus::Preparing,
                    BarKind::Wait => TaskStatus::Waiting,
                    BarKind::Exec => TaskStatus::Executing,
                    BarKind::Done => TaskStatus::Completing,
                });
            } else {
                if let Some(i) = open.remove(&(t, kind)) {
                    realized[a][i].end = Some(e.tick);
                }
                match kind {
                    BarKind::Exec => exec_done[t] = true,
                    BarKind::Done => status[t] = Some(TaskStatus::Completed),
                    _ => {}
                }
            }
        }
        let tasks: Vec<TaskView> = (0..n)
            .map(|t| {
                let s = status[t].unwrap_or_else(|| {
                    if inst.preds(t).iter().all(|&p| exec_done[p]) {
                        TaskStatus::Available
                    } else {
                        TaskStatus::Unavailable
                    }
                });
                TaskView { id: inst.task(t).id.clone(), status: s, actor: owner[t].clone() }
            })
            .collect();
        let edges = (0..n)
            .flat_map(|t| inst.preds(t).iter().map(move |&p| (t, p)))
            .map(|(t, p)| EdgeView {
                task: inst.task(t).id.clone(),
                on: inst.task(p).id.clone(),
                satisfied: exec_done[p],
            })
            .collect();
        let mut planned: Vec<Vec<Bar>> = vec![Vec::new(); inst.n_actors()];
        if let Some(s) = &self.schedule {
            for (id, st) in &s.tasks {
                let a = actor_of(&st.actor);
                for phase in Phase::ALL {
                    let p = st.phase(phase);
                    planned[a].push(Bar { task: id.clone(), kind: phase.into(), start: p.start, end: Some(p.end) });
                }
            }
            for bars in &mut planned {
                bars.sort_by_key(|b| (b.start, b.kind));
            }
        }
        let actors = (0..inst.n_actors())
            .map(|a| ActorView {
                id: inst.actor(a).id.clone(),
                kind: inst.actor(a).kind,
                current: self.sim.current_task(a).map(|t| inst.task(t).id.clone()),
                pending: self.sim.pending_request(a).map(|t| inst.task(t).id.clone()),
                realized: std::mem::take(&mut realized[a]),
                planned: std::mem::take(&mut planned[a]),
            })
            .collect();
        let rejected =
            self.sim.rejected().iter().map(|&(t, a)| (inst.task(t).id.clone(), inst.actor(a).id.clone())).collect();
        let completed = tasks.iter().filter(|t| t.status == TaskStatus::Completed).count();
        Snapshot {
            id: self.id.clone(),
            method: self.request.method,
            mode: self.request.mode,
            status: self.sim.status(),
            paused,
            now: self.sim.now(),
            last_seq: self.events.len() as u64,
            tasks,
            edges,
            actors,
            rejected,
            progress: ProgressView {
                completed,
                total: n,
                planned_makespan: self.schedule.as_ref().map(|s| s.makespan),
                fraction: completed as f64 / n as f64,
            },
        }
    }
}
