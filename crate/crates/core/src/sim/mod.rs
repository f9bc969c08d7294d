//! Seeded closed-loop environment: actors, shared areas, sampled outcomes,
//! and the tick loop that connects them to a controller.

mod engine;
mod outcomes;
mod trace;

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use web_time::Instant;

pub use engine::{HumanInput, InputAck, RunStatus, Simulation};
pub use outcomes::{resample_estimates, sample_duration, sample_outcomes, RealizedOutcomes};
pub use trace::{trace_to_schedule, EventTrace, SimEvent, TraceEntry, TraceError};

use crate::agents::{make_controller, AgentError, AgentRequest, Controller, ControllerKind};
use crate::btree::BtError;
use crate::domain::{ActorId, ActorIdx, Instance, Job, TaskId, TaskIdx, Tick, ValidationReport};
use crate::solver::SolveLimits;

/// Node budget per CoBOS solve in simulated runs. A node budget rather than a
/// deadline keeps runs reproducible on any machine.
pub const DEFAULT_NODE_LIMIT: u64 = 20_000;

/// Half-open tick interval during which a human is close to the robots.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvadeWindow {
    pub start: Tick,
    pub end: Tick,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Humans may refuse tasks according to the realized outcomes.
    pub rejection: bool,
    /// Controllers see the job's estimates instead of estimates redrawn per run.
    pub true_estimates: bool,
    pub evade_windows: Vec<EvadeWindow>,
    pub solve_limits: SolveLimits,
    pub record_trace: bool,
    /// Ticks without any progress before the run is declared deadlocked.
    /// Defaults to the job horizon plus 100.
    pub stall_limit: Option<Tick>,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            rejection: true,
            true_estimates: false,
            evade_windows: Vec::new(),
            solve_limits: SolveLimits::nodes(DEFAULT_NODE_LIMIT),
            record_trace: true,
            stall_limit: None,
        }
    }
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid job: {0}")]
    InvalidJob(ValidationReport),
    #[error("invalid request at tick {tick}: task {task} to actor {actor}: {reason}")]
    InvalidRequest { tick: Tick, task: TaskIdx, actor: ActorIdx, reason: String },
    #[error("deadlock detected at tick {tick}")]
    DeadlockDetected { tick: Tick },
    #[error("task {0} was rejected by every eligible actor")]
    TaskUnassignable(TaskId),
    #[error("controller failed: {0}")]
    Controller(#[from] AgentError),
    #[error("behavior tree failed: {0}")]
    Behavior(#[from] BtError),
    #[error("task {task} is not requested from or in progress with this actor")]
    NotRequested { task: TaskIdx },
    #[error("task {task}: a phase lasts at least one tick")]
    PhaseTooShort { task: TaskIdx },
    #[error("actor is not driven by external input")]
    NotInteractive,
    #[error("run has ended")]
    RunEnded,
}

/// One closed-loop run. Serializes with a fixed field order; wall-clock
/// latencies are kept out of the serialized form so that records of equal runs
/// are byte-identical.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    pub method: ControllerKind,
    pub rejection: bool,
    pub true_estimates: bool,
    pub status: RunStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub makespan: Option<Tick>,
    pub ticks: Tick,
    pub requests: u64,
    pub rejections: u64,
    pub decisions: u64,
    pub reschedules: u64,
    pub solver_nodes: u64,
    /// Per robot, tasks in the order taken from its blackboard queue.
    pub robot_queues: BTreeMap<ActorId, Vec<TaskId>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub trace: EventTrace,
    /// Wall time of every controller step that requested or re-planned, in µs.
    #[serde(skip)]
    pub decision_latencies_us: Vec<u64>,
    /// Wall time of every solve, in µs.
    #[serde(skip)]
    pub solve_latencies_us: Vec<u64>,
}

impl RunRecord {
    pub fn completed(&self) -> bool {
        self.status == RunStatus::Completed
    }
}

/// The controller's requests for the current tick, not yet dispatched.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decision {
    pub requests: Vec<AgentRequest>,
    /// Wall time of the step in µs, kept only if it requested or re-planned.
    pub latency_us: Option<u64>,
}

/// First half of a tick: land last tick's work, observe, and ask the
/// controller. Returns `None` once the run is over or the controller failed.
pub fn decide(sim: &mut Simulation, controller: &mut dyn Controller) -> Option<Decision> {
    let obs = sim.begin_tick()?;
    let solves_before = controller.stats().solves;
    let started = Instant::now();
    let step = controller.step(&obs);
    let elapsed = started.elapsed().as_micros() as u64;
    match step {
        Ok(requests) => {
            let decided = !requests.is_empty() || controller.stats().solves != solves_before;
            Some(Decision { requests, latency_us: decided.then_some(elapsed) })
        }
        Err(e) => {
            let status = match e {
                AgentError::TaskUnassignable(_) => RunStatus::TaskUnassignable,
                _ => RunStatus::ControllerFailed,
            };
            sim.fail(status, e.to_string());
            None
        }
    }
}

/// Second half of a tick: dispatch the requests and advance time. Returns
/// false when the run cannot continue.
pub fn apply(sim: &mut Simulation, decision: &Decision) -> bool {
    match sim.dispatch(&decision.requests).and_then(|()| sim.end_tick()) {
        Ok(()) => true,
        Err(e) => {
            if !sim.is_finished() {
                sim.fail(RunStatus::ControllerFailed, e.to_string());
            }
            false
        }
    }
}

/// Drives one simulation to the end with the given controller. Returns the
/// decision latencies in µs.
pub fn run_loop(sim: &mut Simulation, controller: &mut dyn Controller) -> Vec<u64> {
    let mut latencies = Vec::new();
    while let Some(decision) = decide(sim, controller) {
        latencies.extend(decision.latency_us);
        if !apply(sim, &decision) {
            break;
        }
    }
    latencies
}

/// Packs a finished simulation into its record.
pub fn finish_record(
    sim: &Simulation,
    controller: &dyn Controller,
    seed: u64,
    config: &SimConfig,
    decision_latencies_us: Vec<u64>,
) -> RunRecord {
    let stats = controller.stats();
    let (requests, rejections) = sim.counters();
    RunRecord {
        seed,
        method: controller.kind(),
        rejection: config.rejection,
        true_estimates: config.true_estimates,
        status: sim.status(),
        error: sim.error().map(str::to_string),
        makespan: sim.makespan(),
        ticks: sim.now(),
        requests,
        rejections,
        decisions: decision_latencies_us.len() as u64,
        reschedules: stats.solves,
        solver_nodes: stats.solver_nodes,
        robot_queues: sim.robot_queues(),
        trace: sim.trace().to_vec(),
        decision_latencies_us,
        solve_latencies_us: stats.solve_latencies_us,
    }
}

/// The instance a controller plans with: the true one, or one whose estimates
/// are redrawn from the seed.
pub fn controller_view(instance: &Arc<Instance>, seed: u64, config: &SimConfig) -> Arc<Instance> {
    if config.true_estimates {
        Arc::clone(instance)
    } else {
        let job = resample_estimates(instance, seed);
        Arc::new(Instance::new(job).expect("redrawn estimates keep the job valid"))
    }
}

/// Realized outcomes for a run, with rejections cleared when they are off.
pub fn outcomes_for(instance: &Instance, seed: u64, config: &SimConfig) -> RealizedOutcomes {
    let o = RealizedOutcomes::sample(instance, seed);
    if config.rejection {
        o
    } else {
        o.without_rejections()
    }
}

/// One run over pre-drawn outcomes.
pub fn run_with_outcomes(
    instance: &Arc<Instance>,
    outcomes: RealizedOutcomes,
    method: ControllerKind,
    seed: u64,
    config: &SimConfig,
) -> RunRecord {
    let view = controller_view(instance, seed, config);
    let mut controller = make_controller(method, view, seed, config.solve_limits);
    let mut sim = Simulation::new(Arc::clone(instance), outcomes, config.clone());
    let latencies = run_loop(&mut sim, controller.as_mut());
    finish_record(&sim, controller.as_ref(), seed, config, latencies)
}

/// Runs `job` under `method` with everything random drawn from `seed`.
pub fn run_sim(job: &Job, method: ControllerKind, seed: u64, config: &SimConfig) -> Result<RunRecord, SimError> {
    let instance = Arc::new(Instance::new(job.clone()).map_err(SimError::InvalidJob)?);
    let outcomes = outcomes_for(&instance, seed, config);
    let record = run_with_outcomes(&instance, outcomes, method, seed, config);
    match record.status {
        RunStatus::Completed => Ok(record),
        RunStatus::Deadlock => Err(SimError::DeadlockDetected { tick: record.ticks }),
        RunStatus::TaskUnassignable => {
            let task = record
                .trace
                .iter()
                .rev()
                .find_map(|e| match &e.event {
                    SimEvent::Rejected { task, .. } => Some(task.clone()),
                    _ => None,
                })
                .unwrap_or_else(|| TaskId::new("?"));
            Err(SimError::TaskUnassignable(task))
        }
        RunStatus::ControllerFailed | RunStatus::Running => {
            Err(SimError::Controller(AgentError::ScheduleInfeasible(record.error.unwrap_or_default())))
        }
    }
}
