use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::trace::{EventTrace, SimEvent, TraceEntry};
use super::{RealizedOutcomes, SimConfig, SimError};
use crate::agents::AgentRequest;
use crate::btree::{RobotAction, RobotAgent, RobotView};
use crate::domain::{
    ActorIdx, ActorState, Instance, Observation, Phase, PhaseCompletion, TaskIdx, TaskStart, TaskState, Tick,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Progress {
    NotStarted,
    Active {
        actor: ActorIdx,
        phase: Phase,
        /// Ticks of work left in the phase; zero in preparation means ready to execute.
        remaining: Tick,
        waiting: bool,
        request_tick: Tick,
    },
    Completed,
}

/// How a run ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Running,
    Completed,
    Deadlock,
    TaskUnassignable,
    ControllerFailed,
}

/// Input from a human actor whose outcomes are not simulated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HumanInput {
    AcceptTask { task: TaskIdx },
    RejectTask { task: TaskIdx },
    CompletePhase { task: TaskIdx, phase: Phase },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputAck {
    Applied,
    /// Already applied earlier; nothing changed.
    Duplicate,
}

/// The environment: time, actors, the shared areas, and the realized outcomes
/// it hides from the controller.
///
/// One tick runs [`Simulation::begin_tick`] (work of the last tick lands, phases
/// end, waiting actors enter areas, then the observation is built), the
/// controller's step, [`Simulation::dispatch`] (requests are accepted or
/// rejected, preparation starts), and [`Simulation::end_tick`] (robots tick their
/// behavior trees to decide whether they work during this tick).
pub struct Simulation {
    instance: Arc<Instance>,
    outcomes: RealizedOutcomes,
    config: SimConfig,
    now: Tick,
    progress: Vec<Progress>,
    exec_done: Vec<bool>,
    current: Vec<Option<TaskIdx>>,
    owner: Vec<Option<ActorIdx>>,
    /// Tick at which the task's current phase began.
    phase_since: Vec<Tick>,
    working: Vec<bool>,
    robots: Vec<Option<RobotAgent>>,
    external: Vec<bool>,
    pending: Vec<Option<(TaskIdx, Tick)>>,
    area_holder: Vec<Option<TaskIdx>>,
    rejected: BTreeSet<(TaskIdx, ActorIdx)>,
    new_starts: Vec<TaskStart>,
    new_completions: Vec<PhaseCompletion>,
    trace: EventTrace,
    event_count: usize,
    last_progress: Tick,
    last_completion: Tick,
    status: RunStatus,
    error: Option<String>,
    requests: u64,
    rejections: u64,
}

impl Simulation {
    pub fn new(instance: Arc<Instance>, outcomes: RealizedOutcomes, config: SimConfig) -> Self {
        let n = instance.n_tasks();
        let m = instance.n_actors();
        let robots = (0..m).map(|a| instance.is_robot(a).then(RobotAgent::new)).collect();
        let k = instance.areas().len();
        Self {
            instance,
            outcomes,
            config,
            now: 0,
            progress: vec![Progress::NotStarted; n],
            exec_done: vec![false; n],
            current: vec![None; m],
            owner: vec![None; n],
            phase_since: vec![0; n],
            working: vec![false; m],
            robots,
            external: vec![false; m],
            pending: vec![None; m],
            area_holder: vec![None; k],
            rejected: BTreeSet::new(),
            new_starts: Vec::new(),
            new_completions: Vec::new(),
            trace: Vec::new(),
            event_count: 0,
            last_progress: 0,
            last_completion: 0,
            status: RunStatus::Running,
            error: None,
            requests: 0,
            rejections: 0,
        }
    }

    /// Hands a human actor's decisions and phase ends to [`Simulation::human_input`].
    pub fn set_external(&mut self, actor: ActorIdx) {
        assert!(!self.instance.is_robot(actor), "only human actors can be driven externally");
        self.external[actor] = true;
    }

    pub fn instance(&self) -> &Arc<Instance> {
        &self.instance
    }

    pub fn now(&self) -> Tick {
        self.now
    }

    pub fn status(&self) -> RunStatus {
        self.status
    }

    pub fn error(&self) -> Option<&str> {
        self.error.as_deref()
    }

    pub fn is_finished(&self) -> bool {
        self.status != RunStatus::Running
    }

    pub fn trace(&self) -> &[TraceEntry] {
        &self.trace
    }

    /// Number of events so far, including any not kept in the trace.
    pub fn event_count(&self) -> usize {
        self.event_count
    }

    pub fn rejected(&self) -> &BTreeSet<(TaskIdx, ActorIdx)> {
        &self.rejected
    }

    /// The request waiting for an external actor's answer.
    pub fn pending_request(&self, actor: ActorIdx) -> Option<TaskIdx> {
        self.pending[actor].map(|(t, _)| t)
    }

    pub fn current_task(&self, actor: ActorIdx) -> Option<TaskIdx> {
        self.current[actor]
    }

    pub fn robot(&self, actor: ActorIdx) -> Option<&RobotAgent> {
        self.robots[actor].as_ref()
    }

    pub fn makespan(&self) -> Option<Tick> {
        (self.status == RunStatus::Completed).then_some(self.last_completion)
    }

    pub fn counters(&self) -> (u64, u64) {
        (self.requests, self.rejections)
    }

    pub(crate) fn fail(&mut self, status: RunStatus, message: String) {
        self.status = status;
        self.error = Some(message);
    }

    fn emit(&mut self, event: SimEvent) {
        self.event_count += 1;
        self.last_progress = self.now;
        if self.config.record_trace {
            self.trace.push(TraceEntry { tick: self.now, event });
        }
    }

    fn task_id(&self, t: TaskIdx) -> crate::domain::TaskId {
        self.instance.task(t).id.clone()
    }

    fn actor_id(&self, a: ActorIdx) -> crate::domain::ActorId {
        self.instance.actor(a).id.clone()
    }

    fn human_close(&self, tick: Tick) -> bool {
        self.config.evade_windows.iter().any(|w| w.start <= tick && tick < w.end)
    }

    fn end_phase(&mut self, t: TaskIdx) {
        let Progress::Active { actor, phase, .. } = self.progress[t] else { return };
        let (task, actor_id) = (self.task_id(t), self.actor_id(actor));
        match phase {
            Phase::Preparation => unreachable!("preparation ends by entering execution"),
            Phase::Execution => {
                self.emit(SimEvent::PhaseEnded { task: task.clone(), actor: actor_id.clone(), phase });
                if let Some(s) = self.instance.area_of(t) {
                    self.area_holder[s] = None;
                    let area = self.instance.areas()[s].clone();
                    self.emit(SimEvent::AreaLeft { area, task: task.clone(), actor: actor_id.clone() });
                }
                self.exec_done[t] = true;
                self.new_completions.push(PhaseCompletion { task: t, phase, tick: self.now });
                self.emit(SimEvent::PhaseStarted { task, actor: actor_id, phase: Phase::Completion });
                let d3 = self.outcomes.duration(t, Phase::Completion, actor);
                self.phase_since[t] = self.now;
                self.progress[t] = Progress::Active {
                    actor,
                    phase: Phase::Completion,
                    remaining: d3,
                    waiting: false,
                    request_tick: 0,
                };
            }
            Phase::Completion => {
                self.emit(SimEvent::PhaseEnded { task, actor: actor_id, phase });
                self.progress[t] = Progress::Completed;
                self.new_completions.push(PhaseCompletion { task: t, phase, tick: self.now });
                self.current[actor] = None;
                self.last_completion = self.now;
                if let Some(robot) = self.robots[actor].as_mut() {
                    robot.blackboard.finish_current();
                }
            }
        }
    }

    fn enter_execution(&mut self, t: TaskIdx) {
        let Progress::Active { actor, waiting, .. } = self.progress[t] else { return };
        let (task, actor_id) = (self.task_id(t), self.actor_id(actor));
        if waiting {
            self.emit(SimEvent::WaitEnded { task: task.clone(), actor: actor_id.clone() });
        }
        self.emit(SimEvent::PhaseEnded { task: task.clone(), actor: actor_id.clone(), phase: Phase::Preparation });
        self.new_completions.push(PhaseCompletion { task: t, phase: Phase::Preparation, tick: self.now });
        self.emit(SimEvent::PhaseStarted { task: task.clone(), actor: actor_id.clone(), phase: Phase::Execution });
        if let Some(s) = self.instance.area_of(t) {
            self.area_holder[s] = Some(t);
            let area = self.instance.areas()[s].clone();
            self.emit(SimEvent::AreaEntered { area, task, actor: actor_id });
        }
        let d2 = self.outcomes.duration(t, Phase::Execution, actor);
        self.phase_since[t] = self.now;
        self.progress[t] =
            Progress::Active { actor, phase: Phase::Execution, remaining: d2, waiting: false, request_tick: 0 };
    }

    /// Lands the work of the previous tick, ends phases, lets ready actors into
    /// their areas, and returns the observation for this tick. Returns `None`
    /// once the run is over.
    pub fn begin_tick(&mut self) -> Option<Observation> {
        if self.is_finished() {
            return None;
        }
        if self.now > 0 {
            for a in 0..self.instance.n_actors() {
                let Some(t) = self.current[a] else { continue };
                if !self.working[a] || self.external[a] {
                    continue;
                }
                if let Progress::Active { remaining, .. } = &mut self.progress[t] {
                    if *remaining > 0 {
                        *remaining -= 1;
                        self.last_progress = self.now;
                    }
                }
            }
            for a in 0..self.instance.n_actors() {
                let Some(t) = self.current[a] else { continue };
                if self.external[a] {
                    continue;
                }
                if let Progress::Active { phase, remaining: 0, .. } = self.progress[t] {
                    if phase != Phase::Preparation {
                        self.end_phase(t);
                    }
                }
            }
        }
        self.admit();
        if self.progress.iter().all(|p| *p == Progress::Completed) {
            let makespan = self.last_completion;
            self.emit(SimEvent::RunEnded { makespan });
            self.status = RunStatus::Completed;
            return None;
        }
        Some(self.observe())
    }

    /// Ready actors enter execution, earliest request first, then actor order.
    fn admit(&mut self) {
        let mut ready: Vec<(Tick, ActorIdx, TaskIdx)> = self
            .progress
            .iter()
            .enumerate()
            .filter_map(|(t, p)| match *p {
                Progress::Active { actor, phase: Phase::Preparation, remaining: 0, request_tick, .. } => {
                    Some((request_tick, actor, t))
                }
                _ => None,
            })
            .collect();
        ready.sort_unstable();
        for (_, actor, t) in ready {
            let deps_done = self.instance.preds(t).iter().all(|&p| self.exec_done[p]);
            let area_free = self.instance.area_of(t).is_none_or(|s| self.area_holder[s].is_none());
            if deps_done && area_free {
                self.enter_execution(t);
            } else if let Progress::Active { waiting: false, .. } = self.progress[t] {
                if let Progress::Active { waiting, .. } = &mut self.progress[t] {
                    *waiting = true;
                }
                let (task, actor) = (self.task_id(t), self.actor_id(actor));
                self.emit(SimEvent::WaitStarted { task, actor });
            }
        }
    }

    /// The current observation; drains the start and phase-end deltas.
    fn observe(&mut self) -> Observation {
        let task_states = (0..self.instance.n_tasks())
            .map(|t| match self.progress[t] {
                Progress::NotStarted => {
                    if self.instance.preds(t).iter().all(|&p| self.exec_done[p]) {
                        TaskState::Available
                    } else {
                        TaskState::Unavailable
                    }
                }
                Progress::Active { actor, phase, .. } => TaskState::InProgress { actor, phase },
                Progress::Completed => TaskState::Completed,
            })
            .collect();
        let actor_states = (0..self.instance.n_actors())
            .map(|a| match self.current[a].map(|t| self.progress[t]) {
                Some(Progress::Active { phase: Phase::Preparation, remaining: 0, .. }) => ActorState::Waiting,
                Some(Progress::Active { phase: Phase::Preparation, waiting: true, .. }) => ActorState::Waiting,
                Some(Progress::Active { phase: Phase::Preparation, .. }) => ActorState::Preparing,
                Some(Progress::Active { phase: Phase::Execution, .. }) => ActorState::Executing,
                Some(Progress::Active { phase: Phase::Completion, .. }) => ActorState::Completing,
                _ => ActorState::Idle,
            })
            .collect();
        Observation {
            now: self.now,
            task_states,
            actor_states,
            rejected: self.rejected.clone(),
            started: std::mem::take(&mut self.new_starts),
            phase_completions: std::mem::take(&mut self.new_completions),
        }
    }

    fn start_task(&mut self, t: TaskIdx, a: ActorIdx, request_tick: Tick) {
        let (task, actor) = (self.task_id(t), self.actor_id(a));
        self.emit(SimEvent::Accepted { task: task.clone(), actor: actor.clone() });
        self.emit(SimEvent::PhaseStarted { task, actor, phase: Phase::Preparation });
        let d1 = if self.external[a] { Tick::MAX } else { self.outcomes.duration(t, Phase::Preparation, a) };
        self.progress[t] =
            Progress::Active { actor: a, phase: Phase::Preparation, remaining: d1, waiting: false, request_tick };
        self.current[a] = Some(t);
        self.owner[t] = Some(a);
        self.phase_since[t] = self.now;
        self.new_starts.push(TaskStart { task: t, actor: a, tick: self.now });
        if let Some(robot) = self.robots[a].as_mut() {
            robot.blackboard.enqueue(t);
        }
    }

    fn reject(&mut self, t: TaskIdx, a: ActorIdx) {
        let (task, actor) = (self.task_id(t), self.actor_id(a));
        self.emit(SimEvent::Rejected { task, actor });
        self.rejected.insert((t, a));
        self.rejections += 1;
        let unassignable = self.instance.eligible(t).iter().all(|&e| self.rejected.contains(&(t, e)));
        if unassignable {
            let id = self.task_id(t);
            self.fail(RunStatus::TaskUnassignable, format!("task {id} rejected by every eligible actor"));
        }
    }

    /// Applies this tick's requests. Robots always accept; simulated humans
    /// accept unless the realized outcome says they refuse this task.
    pub fn dispatch(&mut self, requests: &[AgentRequest]) -> Result<(), SimError> {
        let mut claimed = BTreeSet::new();
        for r in requests {
            let (t, a) = (r.task, r.actor);
            let invalid =
                |reason: &str| SimError::InvalidRequest { tick: self.now, task: t, actor: a, reason: reason.into() };
            if t >= self.instance.n_tasks() || a >= self.instance.n_actors() {
                return Err(invalid("index out of range"));
            }
            if self.current[a].is_some() {
                return Err(invalid("actor is busy"));
            }
            if self.progress[t] != Progress::NotStarted {
                return Err(invalid("task already started"));
            }
            if !self.instance.is_eligible(t, a) {
                return Err(invalid("actor not eligible"));
            }
            if self.rejected.contains(&(t, a)) {
                return Err(invalid("actor already refused this task"));
            }
            if !claimed.insert(t) {
                return Err(invalid("task requested twice in one tick"));
            }
            if self.external[a] {
                if self.pending[a].map(|(p, _)| p) != Some(t) {
                    let (task, actor) = (self.task_id(t), self.actor_id(a));
                    self.requests += 1;
                    self.emit(SimEvent::Requested { task, actor });
                    self.pending[a] = Some((t, self.now));
                }
                continue;
            }
            let (task, actor) = (self.task_id(t), self.actor_id(a));
            self.requests += 1;
            self.emit(SimEvent::Requested { task, actor });
            if !self.instance.is_robot(a) && self.config.rejection && self.outcomes.rejects(t, a) {
                self.reject(t, a);
                if self.is_finished() {
                    return Ok(());
                }
                continue;
            }
            self.start_task(t, a, self.now);
        }
        Ok(())
    }

    /// Robots decide whether to work during this tick, then time advances.
    /// Detects stalls.
    pub fn end_tick(&mut self) -> Result<(), SimError> {
        if self.is_finished() {
            return Ok(());
        }
        let close = self.human_close(self.now);
        for a in 0..self.instance.n_actors() {
            let works = match self.robots[a].as_mut() {
                Some(robot) => {
                    let action = robot.tick(&RobotView { human_close: close, undone: Vec::new() })?;
                    match action {
                        RobotAction::Execute(t) => {
                            debug_assert_eq!(Some(t), self.current[a]);
                            true
                        }
                        RobotAction::Evade | RobotAction::GoHome => false,
                    }
                }
                None => self.current[a].is_some(),
            };
            self.working[a] = works;
        }
        let limit = self.config.stall_limit.unwrap_or_else(|| self.instance.job().horizon.saturating_add(100));
        if self.now.saturating_sub(self.last_progress) > limit {
            let tick = self.now;
            self.fail(RunStatus::Deadlock, format!("no progress since tick {}", self.last_progress));
            return Err(SimError::DeadlockDetected { tick });
        }
        self.now += 1;
        Ok(())
    }

    /// An external human's answer or phase end, effective at the current tick.
    pub fn human_input(&mut self, actor: ActorIdx, input: HumanInput) -> Result<InputAck, SimError> {
        if self.is_finished() {
            return Err(SimError::RunEnded);
        }
        if actor >= self.instance.n_actors() || !self.external[actor] {
            return Err(SimError::NotInteractive);
        }
        match input {
            HumanInput::AcceptTask { task } => {
                if self.current[actor] == Some(task) {
                    return Ok(InputAck::Duplicate);
                }
                match self.pending[actor] {
                    Some((t, issued)) if t == task => {
                        self.pending[actor] = None;
                        self.start_task(task, actor, issued);
                        Ok(InputAck::Applied)
                    }
                    _ => Err(SimError::NotRequested { task }),
                }
            }
            HumanInput::RejectTask { task } => {
                if self.rejected.contains(&(task, actor)) {
                    return Ok(InputAck::Duplicate);
                }
                match self.pending[actor] {
                    Some((t, _)) if t == task => {
                        self.pending[actor] = None;
                        self.reject(task, actor);
                        Ok(InputAck::Applied)
                    }
                    _ => Err(SimError::NotRequested { task }),
                }
            }
            HumanInput::CompletePhase { task, phase } => {
                if task >= self.instance.n_tasks() {
                    return Err(SimError::NotRequested { task });
                }
                match self.progress[task] {
                    Progress::Active { actor: a, phase: p, .. } if a == actor => {
                        if p > phase {
                            return Ok(InputAck::Duplicate);
                        }
                        if p < phase {
                            return Err(SimError::NotRequested { task });
                        }
                        if self.phase_since[task] == self.now {
                            return Err(SimError::PhaseTooShort { task });
                        }
                        match p {
                            Phase::Preparation => {
                                if let Progress::Active { remaining, .. } = &mut self.progress[task] {
                                    if *remaining == 0 {
                                        return Ok(InputAck::Duplicate);
                                    }
                                    *remaining = 0;
                                }
                                self.last_progress = self.now;
                                self.admit();
                            }
                            _ => self.end_phase(task),
                        }
                        Ok(InputAck::Applied)
                    }
                    Progress::Completed if self.owner[task] == Some(actor) => Ok(InputAck::Duplicate),
                    _ => Err(SimError::NotRequested { task }),
                }
            }
        }
    }

    /// Per robot, the tasks in the order it took them from its queue.
    pub fn robot_queues(&self) -> BTreeMap<crate::domain::ActorId, Vec<crate::domain::TaskId>> {
        self.robots
            .iter()
            .enumerate()
            .filter_map(|(a, r)| {
                r.as_ref().map(|r| (self.actor_id(a), r.executed().iter().map(|&t| self.task_id(t)).collect()))
            })
            .collect()
    }
}
