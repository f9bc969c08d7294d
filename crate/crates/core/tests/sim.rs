mod common;

use std::collections::BTreeMap;
use std::sync::Arc;

use cobos_core::agents::{make_controller, AgentRequest, Controller, ControllerKind, ControllerStats, MaxDuration};
use cobos_core::cases::{generate_case, random_small_job, CaseSpec};
use cobos_core::domain::{
    check_schedule, check_schedule_on, ActorId, ActorSpec, AreaId, Instance, Job, Observation, Phase, PhaseEstimates,
    Task, TaskId, Tick,
};
use cobos_core::sim::{
    run_loop, run_sim, run_with_outcomes, trace_to_schedule, EvadeWindow, HumanInput, InputAck, RealizedOutcomes,
    RunStatus, SimConfig, SimError, SimEvent, Simulation, TraceEntry,
};
use cobos_core::solver::{lower_bound_perfect_information, SolveLimits};
use proptest::prelude::*;

fn task(id: &str, actors: &[&str], est: (Tick, Tick, Tick), area: Option<&str>) -> Task {
    Task {
        id: TaskId::new(id),
        eligible_actors: actors.iter().map(|a| ActorId::new(*a)).collect(),
        estimates: PhaseEstimates::new(est.0, est.1, est.2),
        dist: None,
        reject_prob: BTreeMap::new(),
        shared_area: area.map(AreaId::new),
    }
}

fn job(tasks: Vec<Task>, edges: &[(&str, &str)], actors: Vec<ActorSpec>) -> Job {
    let horizon = tasks.iter().map(|t| t.estimates.total()).sum::<Tick>() * 4;
    Job { tasks, edges: edges.iter().map(|(a, b)| (TaskId::new(*a), TaskId::new(*b))).collect(), actors, horizon }
}

/// Runs `job` with outcomes equal to the estimates.
fn run_exact(job: &Job, method: ControllerKind, config: &SimConfig) -> cobos_core::sim::RunRecord {
    let inst = Arc::new(Instance::new(job.clone()).unwrap());
    let outcomes = RealizedOutcomes::from_estimates(&inst);
    let config = SimConfig { true_estimates: true, ..config.clone() };
    run_with_outcomes(&inst, outcomes, method, 0, &config)
}

fn ticks_of(trace: &[TraceEntry], pred: impl Fn(&SimEvent) -> bool) -> Vec<Tick> {
    trace.iter().filter(|e| pred(&e.event)).map(|e| e.tick).collect()
}

#[test]
fn single_task_phases_follow_the_realized_durations() {
    let job = job(vec![task("a", &["r"], (2, 3, 1), None)], &[], vec![ActorSpec::robot("r")]);
    let record = run_exact(&job, ControllerKind::MD, &SimConfig::default());
    assert_eq!(record.status, RunStatus::Completed);
    assert_eq!(record.makespan, Some(6));
    let starts = ticks_of(&record.trace, |e| matches!(e, SimEvent::PhaseStarted { .. }));
    assert_eq!(starts, vec![0, 2, 5]);
    let inst = Instance::new(job.clone()).unwrap();
    let schedule = trace_to_schedule(&record.trace, &inst).unwrap();
    assert_eq!(schedule.makespan, 6);
    assert!(check_schedule(&job, &schedule).is_valid());
}

#[test]
fn shared_area_admits_one_actor_at_a_time() {
    let job = job(
        vec![task("a", &["r"], (2, 3, 1), Some("cell")), task("b", &["h"], (2, 3, 1), Some("cell"))],
        &[],
        vec![ActorSpec::robot("r"), ActorSpec::human("h")],
    );
    let record = run_exact(&job, ControllerKind::MD, &SimConfig::default());
    let entered = ticks_of(&record.trace, |e| matches!(e, SimEvent::AreaEntered { .. }));
    let waits: Vec<&TraceEntry> =
        record.trace.iter().filter(|e| matches!(e.event, SimEvent::WaitStarted { .. })).collect();
    assert_eq!(entered.iter().filter(|&&t| t == 2).count(), 1);
    assert_eq!(waits.len(), 1);
    assert_eq!(waits[0].tick, 2);
    assert_eq!(entered, vec![2, 5]);
    assert_eq!(record.makespan, Some(9));
    let schedule = trace_to_schedule(&record.trace, &Instance::new(job.clone()).unwrap()).unwrap();
    assert!(check_schedule(&job, &schedule).is_valid());
}

#[test]
fn case_three_trace_is_a_valid_schedule() {
    let job = generate_case(&CaseSpec::for_case(3, 42).unwrap()).unwrap();
    let record = run_sim(&job, ControllerKind::CoBOS, 42, &SimConfig::default()).unwrap();
    let schedule = trace_to_schedule(&record.trace, &Instance::new(job.clone()).unwrap()).unwrap();
    let report = check_schedule(&job, &schedule);
    assert!(report.is_valid(), "{report}");
    assert_eq!(Some(schedule.makespan), record.makespan);
}

#[test]
fn evading_pauses_the_robot_without_changing_its_work() {
    let job = job(vec![task("a", &["r"], (2, 3, 1), None)], &[], vec![ActorSpec::robot("r")]);
    let config = SimConfig { evade_windows: vec![EvadeWindow { start: 3, end: 5 }], ..SimConfig::default() };
    let record = run_exact(&job, ControllerKind::MD, &config);
    assert_eq!(record.makespan, Some(8));
    let schedule = trace_to_schedule(&record.trace, &Instance::new(job).unwrap()).unwrap();
    let exec = schedule.tasks[&TaskId::new("a")].phases[Phase::Execution.index()];
    let paused = (exec.start..exec.end).filter(|t| (3..5).contains(t)).count() as i64;
    assert_eq!(exec.duration() - paused, 3);
    assert_eq!(schedule.tasks[&TaskId::new("a")].phases[0].duration(), 2);
}

#[test]
fn corrupted_trace_fails_the_check() {
    let job = generate_case(&CaseSpec::for_case(2, 1).unwrap()).unwrap();
    let inst = Instance::new(job.clone()).unwrap();
    let mut record = run_sim(&job, ControllerKind::DA, 1, &SimConfig::default()).unwrap();
    let idx = record
        .trace
        .iter()
        .position(|e| matches!(&e.event, SimEvent::PhaseStarted { phase: Phase::Completion, .. }))
        .unwrap();
    record.trace[idx].tick += 1;
    let schedule = trace_to_schedule(&record.trace, &inst).unwrap();
    assert!(!check_schedule(&job, &schedule).is_valid());
}

#[test]
fn stalled_controller_is_reported_as_deadlock() {
    struct Idle;
    impl Controller for Idle {
        fn kind(&self) -> ControllerKind {
            ControllerKind::MD
        }
        fn step(&mut self, _: &Observation) -> Result<Vec<AgentRequest>, cobos_core::agents::AgentError> {
            Ok(Vec::new())
        }
        fn stats(&self) -> ControllerStats {
            ControllerStats::default()
        }
    }
    let job = random_small_job(3, 4);
    let inst = Arc::new(Instance::new(job).unwrap());
    let config = SimConfig { stall_limit: Some(10), ..SimConfig::default() };
    let mut sim = Simulation::new(Arc::clone(&inst), RealizedOutcomes::from_estimates(&inst), config);
    run_loop(&mut sim, &mut Idle);
    assert_eq!(sim.status(), RunStatus::Deadlock);
    assert_eq!(sim.now(), 11);
}

#[test]
fn unassignable_task_ends_the_run() {
    let mut t = task("a", &["h"], (1, 1, 1), None);
    t.reject_prob.insert(ActorId::new("h"), 1.0);
    let job = job(vec![t, task("b", &["r"], (1, 1, 1), None)], &[], vec![ActorSpec::robot("r"), ActorSpec::human("h")]);
    for method in ControllerKind::ALL {
        let err = run_sim(&job, method, 0, &SimConfig::default()).unwrap_err();
        assert!(matches!(err, SimError::TaskUnassignable(ref id) if id.as_str() == "a"), "{method}: {err}");
    }
    let without = SimConfig { rejection: false, ..SimConfig::default() };
    assert!(run_sim(&job, ControllerKind::CoBOS, 0, &without).unwrap().completed());
}

#[test]
fn invalid_requests_are_refused() {
    let job = job(
        vec![task("a", &["r"], (1, 1, 1), None), task("b", &["r", "h"], (1, 1, 1), None)],
        &[],
        vec![ActorSpec::robot("r"), ActorSpec::human("h")],
    );
    let inst = Arc::new(Instance::new(job).unwrap());
    let mut sim = Simulation::new(Arc::clone(&inst), RealizedOutcomes::from_estimates(&inst), SimConfig::default());
    sim.begin_tick().unwrap();
    let req = |task, actor| AgentRequest { task, actor, issue_tick: 0 };
    assert!(matches!(sim.dispatch(&[req(0, 1)]), Err(SimError::InvalidRequest { .. })));
    assert!(matches!(sim.dispatch(&[req(1, 0), req(1, 1)]), Err(SimError::InvalidRequest { .. })));
    let mut sim = Simulation::new(Arc::clone(&inst), RealizedOutcomes::from_estimates(&inst), SimConfig::default());
    sim.begin_tick().unwrap();
    sim.dispatch(&[req(0, 0)]).unwrap();
    assert!(matches!(sim.dispatch(&[req(1, 0)]), Err(SimError::InvalidRequest { .. })));
}

#[test]
fn external_human_drives_its_own_phases() {
    let job = job(
        vec![task("a", &["h"], (2, 2, 2), None), task("b", &["r"], (1, 1, 1), None)],
        &[("b", "a")],
        vec![ActorSpec::robot("r"), ActorSpec::human("h")],
    );
    let inst = Arc::new(Instance::new(job.clone()).unwrap());
    let mut sim = Simulation::new(Arc::clone(&inst), RealizedOutcomes::from_estimates(&inst), SimConfig::default());
    sim.set_external(1);
    assert!(matches!(sim.human_input(0, HumanInput::AcceptTask { task: 1 }), Err(SimError::NotInteractive)));
    let mut controller = make_controller(ControllerKind::MD, Arc::clone(&inst), 0, SolveLimits::unlimited());

    let mut step = |sim: &mut Simulation| {
        let Some(obs) = sim.begin_tick() else { return };
        let reqs = controller.step(&obs).unwrap();
        sim.dispatch(&reqs).unwrap();
        sim.end_tick().unwrap();
    };
    step(&mut sim);
    assert_eq!(sim.pending_request(1), Some(0));
    assert!(matches!(sim.human_input(1, HumanInput::AcceptTask { task: 1 }), Err(SimError::NotRequested { .. })));
    assert_eq!(sim.human_input(1, HumanInput::AcceptTask { task: 0 }).unwrap(), InputAck::Applied);
    assert_eq!(sim.human_input(1, HumanInput::AcceptTask { task: 0 }).unwrap(), InputAck::Duplicate);
    for _ in 0..5 {
        step(&mut sim);
    }
    assert_eq!(sim.current_task(1), Some(0), "the human's phases only end on input");
    let prep = HumanInput::CompletePhase { task: 0, phase: Phase::Preparation };
    assert_eq!(sim.human_input(1, prep).unwrap(), InputAck::Applied);
    assert_eq!(sim.human_input(1, prep).unwrap(), InputAck::Duplicate);
    step(&mut sim);
    let exec = HumanInput::CompletePhase { task: 0, phase: Phase::Execution };
    assert_eq!(sim.human_input(1, exec).unwrap(), InputAck::Applied);
    let done = HumanInput::CompletePhase { task: 0, phase: Phase::Completion };
    assert!(matches!(sim.human_input(1, done), Err(SimError::PhaseTooShort { task: 0 })));
    step(&mut sim);
    assert_eq!(sim.human_input(1, done).unwrap(), InputAck::Applied);
    assert_eq!(sim.human_input(1, done).unwrap(), InputAck::Duplicate);
    while !sim.is_finished() {
        step(&mut sim);
    }
    assert_eq!(sim.status(), RunStatus::Completed);
    let schedule = trace_to_schedule(sim.trace(), &inst).unwrap();
    assert!(check_schedule(&job, &schedule).is_valid());
    assert!(matches!(sim.human_input(1, done), Err(SimError::RunEnded)));
}

#[test]
fn record_fields_serialize_in_a_fixed_order() {
    let job = random_small_job(2, 3);
    let record = run_sim(&job, ControllerKind::CoBOS, 5, &SimConfig::default()).unwrap();
    let json = serde_json::to_string(&record).unwrap();
    let keys =
        ["\"seed\"", "\"method\"", "\"rejection\"", "\"status\"", "\"makespan\"", "\"robot_queues\"", "\"trace\""];
    let positions: Vec<usize> = keys.iter().map(|k| json.find(k).unwrap()).collect();
    assert!(positions.windows(2).all(|w| w[0] < w[1]), "{json}");
    assert!(!json.contains("latencies"));
}

/// Wraps MD and keeps every observation it is shown.
struct Recording {
    inner: MaxDuration,
    seen: Vec<Observation>,
}

impl Controller for Recording {
    fn kind(&self) -> ControllerKind {
        ControllerKind::MD
    }
    fn step(&mut self, obs: &Observation) -> Result<Vec<AgentRequest>, cobos_core::agents::AgentError> {
        self.seen.push(obs.clone());
        self.inner.step(obs)
    }
    fn stats(&self) -> ControllerStats {
        self.inner.stats()
    }
}

fn observe_run(inst: &Arc<Instance>, outcomes: RealizedOutcomes) -> (Vec<Observation>, Vec<TraceEntry>) {
    let mut sim = Simulation::new(Arc::clone(inst), outcomes, SimConfig::default());
    let mut rec = Recording { inner: MaxDuration::new(Arc::clone(inst)), seen: Vec::new() };
    run_loop(&mut sim, &mut rec);
    (rec.seen, sim.trace().to_vec())
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 250, failure_persistence: None, ..ProptestConfig::default() })]

    /// Traces of every method are valid schedules, runs always finish, and the
    /// realized makespan is never below the perfect-information optimum.
    #[test]
    fn runs_are_valid_and_bounded_below(seed in any::<u64>()) {
        let job = random_small_job(seed, 6);
        let inst = Arc::new(Instance::new(job.clone()).unwrap());
        let config = SimConfig::default();
        let outcomes = RealizedOutcomes::sample(&inst, seed);
        let bound = lower_bound_perfect_information(&inst, &outcomes, SolveLimits::unlimited()).unwrap();
        for method in ControllerKind::ALL {
            let record = run_sim(&job, method, seed, &config).unwrap();
            let schedule = trace_to_schedule(&record.trace, &inst).unwrap();
            let report = check_schedule_on(&inst, &schedule);
            prop_assert!(report.is_valid(), "{method}: {report}");
            prop_assert!(common::pairwise_valid(&inst, &schedule));
            prop_assert_eq!(Some(schedule.makespan), record.makespan);
            prop_assert!(schedule.makespan >= bound, "{} < {}", schedule.makespan, bound);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn runs_are_reproducible(seed in any::<u64>(), case_id in 1u8..=7) {
        let job = generate_case(&CaseSpec::for_case(case_id, seed).unwrap()).unwrap();
        for method in ControllerKind::ALL {
            let config = SimConfig::default();
            let a = serde_json::to_string(&run_sim(&job, method, seed, &config).unwrap()).unwrap();
            let b = serde_json::to_string(&run_sim(&job, method, seed, &config).unwrap()).unwrap();
            prop_assert_eq!(a, b);
        }
    }

    /// Changing how long an execution phase lasts is invisible until it ends.
    #[test]
    fn unfinished_durations_are_hidden(seed in any::<u64>(), pick in any::<prop::sample::Index>(), extra in 1u32..6) {
        let job = random_small_job(seed, 6);
        let inst = Arc::new(Instance::new(job).unwrap());
        let base = RealizedOutcomes::sample(&inst, seed).without_rejections();
        let (seen, trace) = observe_run(&inst, base.clone());
        let t = pick.index(inst.n_tasks());
        let id = &inst.task(t).id;
        let (end, actor) = trace
            .iter()
            .find_map(|e| match &e.event {
                SimEvent::PhaseEnded { task, actor, phase: Phase::Execution } if task == id => Some((e.tick, actor.clone())),
                _ => None,
            })
            .unwrap();
        let a = inst.actor_idx(&actor).unwrap();
        let mut longer = base.clone();
        longer.set_duration(t, Phase::Execution, a, base.duration(t, Phase::Execution, a) + extra);
        let (seen_longer, _) = observe_run(&inst, longer);
        let before: Vec<&Observation> = seen.iter().filter(|o| o.now < end).collect();
        let before_longer: Vec<&Observation> = seen_longer.iter().filter(|o| o.now < end).collect();
        prop_assert_eq!(before, before_longer);
        let at = seen.iter().find(|o| o.now == end).unwrap();
        let at_longer = seen_longer.iter().find(|o| o.now == end).unwrap();
        prop_assert_ne!(at, at_longer);
    }
}
