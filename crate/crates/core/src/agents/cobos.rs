use std::collections::BTreeSet;
use std::sync::Arc;

use web_time::Instant;

use super::{AgentError, AgentRequest, Controller, ControllerKind, ControllerStats};
use crate::domain::{ActorIdx, Instance, Observation, Phase, Schedule, TaskIdx, Tick};
use crate::solver::{solve_with_hint, Fact, SchedulingModel, SolveLimits, SolveResult, SolveStatus, SolverError};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CobosConfig {
    pub limits: SolveLimits,
}

/// One re-plan, as seen right after the solve.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplanRecord {
    pub tick: Tick,
    pub result: SolveResult,
}

/// Planned phase boundaries `[prep start, exec start, done start, done end]`.
type Row = (ActorIdx, [Tick; 4]);

/// Event-triggered rescheduling: observations become facts, any phase end,
/// rejection or newly detected overrun triggers a solve, and idle actors are
/// asked for their next planned task once its planned start has come.
///
/// A task may be requested before its dependencies have finished executing
/// (time-extended assignment): the actor prepares and then waits. This only
/// happens once every dependency has been started, so the dependency can no
/// longer be refused and will finish without the waiting actor.
pub struct Cobos {
    instance: Arc<Instance>,
    model: SchedulingModel,
    config: CobosConfig,
    plan: Option<SolveResult>,
    rows: Vec<Option<Row>>,
    seen_rejected: BTreeSet<(TaskIdx, ActorIdx)>,
    overrun_flagged: Vec<[bool; 3]>,
    stats: ControllerStats,
    last_replan: Option<ReplanRecord>,
}

impl Cobos {
    pub fn new(instance: Arc<Instance>, config: CobosConfig) -> Self {
        let n = instance.n_tasks();
        let model = SchedulingModel::new(Arc::clone(&instance));
        Self {
            instance,
            model,
            config,
            plan: None,
            rows: vec![None; n],
            seen_rejected: BTreeSet::new(),
            overrun_flagged: vec![[false; 3]; n],
            stats: ControllerStats::default(),
            last_replan: None,
        }
    }

    pub fn model(&self) -> &SchedulingModel {
        &self.model
    }

    pub fn plan(&self) -> Option<&SolveResult> {
        self.plan.as_ref()
    }

    fn assert(&mut self, fact: Fact) -> Result<(), AgentError> {
        match self.model.assert_fact(fact) {
            Ok(()) => Ok(()),
            Err(SolverError::TaskUnassignable { task }) => Err(AgentError::TaskUnassignable(task)),
            Err(e) => Err(AgentError::InconsistentObservation(e.to_string())),
        }
    }

    /// Feeds the observation into the model; true if it holds an event.
    fn absorb(&mut self, obs: &Observation) -> Result<bool, AgentError> {
        let mut event = false;
        self.assert(Fact::NowIs(obs.now))?;
        for s in &obs.started {
            self.assert(Fact::TaskStarted { task: s.task, actor: s.actor, tick: s.tick })?;
            // A start that differs from the plan leaves the plan stale.
            if self.rows[s.task].map(|(a, r)| (a, r[0])) != Some((s.actor, s.tick)) {
                event = true;
            }
        }
        for pc in &obs.phase_completions {
            self.assert(Fact::PhaseEnded { task: pc.task, phase: pc.phase, tick: pc.tick })?;
            event = true;
        }
        for &(t, a) in &obs.rejected {
            if self.seen_rejected.insert((t, a)) {
                event = true;
                self.assert(Fact::TaskRejected { task: t, actor: a })?;
            }
        }
        for t in 0..self.instance.n_tasks() {
            let Some(phase) = self.model.task_facts(t).running_phase() else { continue };
            let Some((_, row)) = self.rows[t] else { continue };
            let planned_end = row[phase.index() + 1];
            if obs.now >= planned_end {
                self.assert(Fact::PhaseOverrun { task: t, phase, now: obs.now })?;
                let flag = &mut self.overrun_flagged[t][phase.index()];
                if !*flag {
                    *flag = true;
                    event = true;
                }
            } else if phase == Phase::Preparation {
                // The plan may have stretched preparation with waiting; the
                // model only knows the estimate, which can already be over.
                let facts = self.model.task_facts(t);
                let (a, start) = facts.started.expect("running phase has a start");
                let earliest = (start + self.model.durations(t, a)[0]).max(facts.provisional[0].unwrap_or(0));
                if obs.now >= earliest {
                    self.assert(Fact::PhaseOverrun { task: t, phase, now: obs.now })?;
                }
            }
        }
        Ok(event)
    }

    fn replan(&mut self, now: Tick) -> Result<(), AgentError> {
        let hint = self.plan.as_ref().map(|p| p.sequence.clone()).unwrap_or_default();
        let started = Instant::now();
        let result = solve_with_hint(&self.model, self.config.limits, &hint);
        self.stats.solve_latencies_us.push(started.elapsed().as_micros() as u64);
        self.stats.solves += 1;
        self.stats.solver_nodes += result.stats.nodes;
        match result.status {
            SolveStatus::Optimal | SolveStatus::Feasible => {
                let schedule = result.schedule.as_ref().expect("feasible result has a schedule");
                for (t, row) in self.rows.iter_mut().enumerate() {
                    let st = &schedule.tasks[&self.instance.task(t).id];
                    let a = self.instance.actor_idx(&st.actor).expect("scheduled actor exists");
                    *row = Some((a, [st.phases[0].start, st.phases[1].start, st.phases[2].start, st.phases[2].end]));
                }
                self.last_replan = Some(ReplanRecord { tick: now, result: result.clone() });
                self.plan = Some(result);
                Ok(())
            }
            SolveStatus::Infeasible => Err(AgentError::ScheduleInfeasible(format!("at tick {now}"))),
            // No schedule within budget: keep following the previous plan.
            SolveStatus::Timeout if self.plan.is_some() => Ok(()),
            SolveStatus::Timeout => Err(AgentError::ScheduleInfeasible(format!("no schedule found by tick {now}"))),
        }
    }

    fn requests(&self, obs: &Observation) -> Vec<AgentRequest> {
        let mut out = Vec::new();
        for a in obs.idle_actors() {
            let next = (0..self.instance.n_tasks())
                .filter_map(|t| match self.rows[t] {
                    Some((pa, row)) if pa == a && !obs.task_states[t].is_started() => Some((row[0], t)),
                    _ => None,
                })
                .filter(|&(_, t)| !obs.rejected.contains(&(t, a)))
                .min();
            let Some((start, t)) = next else { continue };
            let deps_started = self.instance.preds(t).iter().all(|&p| obs.task_states[p].is_started());
            if start <= obs.now && deps_started {
                out.push(AgentRequest { actor: a, task: t, issue_tick: obs.now });
            }
        }
        out
    }
}

impl Controller for Cobos {
    fn kind(&self) -> ControllerKind {
        ControllerKind::CoBOS
    }

    fn step(&mut self, obs: &Observation) -> Result<Vec<AgentRequest>, AgentError> {
        self.stats.steps += 1;
        self.last_replan = None;
        let event = self.absorb(obs)?;
        if event || self.plan.is_none() {
            self.replan(obs.now)?;
        }
        Ok(self.requests(obs))
    }

    fn schedule(&self) -> Option<&Schedule> {
        self.plan.as_ref().and_then(|p| p.schedule.as_ref())
    }

    fn last_replan(&self) -> Option<&ReplanRecord> {
        self.last_replan.as_ref()
    }

    fn stats(&self) -> ControllerStats {
        self.stats.clone()
    }
}
