use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::SolverError;
use crate::domain::{ActorIdx, Instance, Phase, TaskIdx, Tick};

/// An observation asserted into the model. Facts are append-only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fact {
    /// Fixes the preparation start and the assignment.
    TaskStarted { task: TaskIdx, actor: ActorIdx, tick: Tick },
    /// Replaces the duration constraint of the phase with the observed end.
    PhaseEnded { task: TaskIdx, phase: Phase, tick: Tick },
    /// The phase is still running at `now`; it ends at `now + 1` at the earliest.
    PhaseOverrun { task: TaskIdx, phase: Phase, now: Tick },
    /// The actor refused the task; it may not be assigned there again.
    TaskRejected { task: TaskIdx, actor: ActorIdx },
    /// Nothing unstarted may begin before this tick.
    NowIs(Tick),
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub(crate) struct TaskFacts {
    pub started: Option<(ActorIdx, Tick)>,
    pub ends: [Option<Tick>; 3],
    pub provisional: [Option<Tick>; 3],
    pub rejected: Vec<ActorIdx>,
}

impl TaskFacts {
    /// First phase without an observed end, if the task is started and unfinished.
    pub fn running_phase(&self) -> Option<Phase> {
        self.started?;
        Phase::ALL.into_iter().find(|p| self.ends[p.index()].is_none())
    }
}

/// Integer domain `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Domain {
    pub lo: Tick,
    pub hi: Tick,
}

impl Domain {
    pub fn is_empty(&self) -> bool {
        self.lo > self.hi
    }

    pub fn is_fixed(&self) -> bool {
        self.lo == self.hi
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BoolDomain {
    Free,
    True,
    False,
}

/// Root-propagated view of the model's variables.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelVariables {
    pub starts: Vec<(TaskIdx, Phase, Domain)>,
    pub prep_durations: Vec<(TaskIdx, Domain)>,
    pub assignments: Vec<(TaskIdx, ActorIdx, BoolDomain)>,
    pub makespan: Domain,
}

/// The scheduling CSP: phase start variables over `[0, horizon]`, an elastic
/// preparation duration, assignment booleans per eligible actor and the makespan,
/// together with the observed facts that pin parts of it down.
#[derive(Debug, Clone)]
pub struct SchedulingModel {
    instance: Arc<Instance>,
    durations: Vec<Vec<[Tick; 3]>>,
    horizon: Tick,
    now: Tick,
    tasks: Vec<TaskFacts>,
    facts: Vec<Fact>,
}

impl SchedulingModel {
    /// Model over the job's duration estimates, horizon `min(4 * serial length, job horizon)`.
    pub fn new(instance: Arc<Instance>) -> Self {
        let durations = (0..instance.n_tasks()).map(|t| vec![instance.estimates(t); instance.n_actors()]).collect();
        let horizon = instance.serial_length().saturating_mul(4).min(instance.job().horizon);
        Self::with_durations(instance, durations, horizon)
    }

    /// Model with explicit per-actor durations, indexed `[task][actor][phase]`.
    pub fn with_durations(instance: Arc<Instance>, durations: Vec<Vec<[Tick; 3]>>, horizon: Tick) -> Self {
        assert_eq!(durations.len(), instance.n_tasks(), "one duration row per task");
        let n = instance.n_tasks();
        Self { instance, durations, horizon, now: 0, tasks: vec![TaskFacts::default(); n], facts: Vec::new() }
    }

    pub fn instance(&self) -> &Arc<Instance> {
        &self.instance
    }

    pub fn horizon(&self) -> Tick {
        self.horizon
    }

    pub fn now(&self) -> Tick {
        self.now
    }

    pub fn facts(&self) -> &[Fact] {
        &self.facts
    }

    pub fn fact_count(&self) -> usize {
        self.facts.len()
    }

    /// Planned phase durations of `task` when executed by `actor`.
    pub fn durations(&self, task: TaskIdx, actor: ActorIdx) -> [Tick; 3] {
        self.durations[task][actor]
    }

    pub(crate) fn task_facts(&self, task: TaskIdx) -> &TaskFacts {
        &self.tasks[task]
    }

    pub fn started(&self, task: TaskIdx) -> Option<(ActorIdx, Tick)> {
        self.tasks[task].started
    }

    pub fn observed_end(&self, task: TaskIdx, phase: Phase) -> Option<Tick> {
        self.tasks[task].ends[phase.index()]
    }

    pub fn is_rejected(&self, task: TaskIdx, actor: ActorIdx) -> bool {
        self.tasks[task].rejected.contains(&actor)
    }

    /// Actors that may still take `task`.
    pub fn allowed_actors(&self, task: TaskIdx) -> Vec<ActorIdx> {
        match self.tasks[task].started {
            Some((a, _)) => vec![a],
            None => self
                .instance
                .eligible(task)
                .iter()
                .copied()
                .filter(|a| !self.tasks[task].rejected.contains(a))
                .collect(),
        }
    }

    /// Adds a fact. Contradictory facts are refused and leave the model unchanged.
    /// A rejection that leaves a task without actors is kept and reported as
    /// [`SolverError::TaskUnassignable`]; solving such a model yields `Infeasible`.
    pub fn assert_fact(&mut self, fact: Fact) -> Result<(), SolverError> {
        let n = self.instance.n_tasks();
        let m = self.instance.n_actors();
        let contradiction = |why: String| Err(SolverError::ContradictoryFact { fact, reason: why });
        match fact {
            Fact::TaskStarted { task, actor, tick } => {
                if task >= n || actor >= m {
                    return contradiction("index out of range".into());
                }
                if !self.instance.is_eligible(task, actor) {
                    return contradiction("actor not eligible".into());
                }
                if self.tasks[task].rejected.contains(&actor) {
                    return contradiction("actor rejected this task".into());
                }
                match self.tasks[task].started {
                    Some(prev) if prev == (actor, tick) => return Ok(()),
                    Some(_) => return contradiction("task already started".into()),
                    None => {}
                }
                let busy =
                    self.tasks.iter().any(|f| matches!(f.started, Some((a, _)) if a == actor) && f.ends[2].is_none());
                if busy {
                    return contradiction("actor is busy with another task".into());
                }
                self.tasks[task].started = Some((actor, tick));
            }
            Fact::PhaseEnded { task, phase, tick } => {
                if task >= n {
                    return contradiction("index out of range".into());
                }
                let facts = &self.tasks[task];
                let Some((_, start)) = facts.started else {
                    return contradiction("phase ended on a task that never started".into());
                };
                let phase_start = if phase == Phase::Preparation { Some(start) } else { facts.ends[phase.index() - 1] };
                let Some(phase_start) = phase_start else {
                    return contradiction("previous phase has not ended".into());
                };
                match facts.ends[phase.index()] {
                    Some(prev) if prev == tick => return Ok(()),
                    Some(_) => return contradiction("phase end already observed".into()),
                    None => {}
                }
                if tick <= phase_start {
                    return contradiction("phase must last at least one tick".into());
                }
                let facts = &mut self.tasks[task];
                facts.ends[phase.index()] = Some(tick);
                facts.provisional[phase.index()] = None;
            }
            Fact::PhaseOverrun { task, phase, now } => {
                if task >= n {
                    return contradiction("index out of range".into());
                }
                if self.tasks[task].running_phase() != Some(phase) {
                    return contradiction("phase is not running".into());
                }
                self.tasks[task].provisional[phase.index()] = Some(now + 1);
            }
            Fact::TaskRejected { task, actor } => {
                if task >= n || actor >= m {
                    return contradiction("index out of range".into());
                }
                if matches!(self.tasks[task].started, Some((a, _)) if a == actor) {
                    return contradiction("actor already started this task".into());
                }
                let facts = &mut self.tasks[task];
                if !facts.rejected.contains(&actor) {
                    facts.rejected.push(actor);
                    facts.rejected.sort_unstable();
                }
                self.facts.push(fact);
                let unassignable = self.tasks[task].started.is_none()
                    && self.instance.eligible(task).iter().all(|a| self.tasks[task].rejected.contains(a));
                if unassignable {
                    return Err(SolverError::TaskUnassignable { task: self.instance.task(task).id.clone() });
                }
                return Ok(());
            }
            Fact::NowIs(t) => {
                if t < self.now {
                    return contradiction(format!("time moved backwards from {}", self.now));
                }
                self.now = t;
            }
        }
        self.facts.push(fact);
        Ok(())
    }

    /// Root-propagated domains of every variable.
    pub fn variables(&self) -> ModelVariables {
        let inst = &self.instance;
        let n = inst.n_tasks();
        let min_of = |t: TaskIdx, p: usize| -> Tick {
            self.allowed_actors(t).iter().map(|&a| self.durations[t][a][p]).min().unwrap_or(Tick::MAX / 4)
        };
        // Earliest execution start per task.
        let mut head = vec![0 as Tick; n];
        let mut prep_lo = vec![0 as Tick; n];
        for &t in inst.topo_order() {
            let f = &self.tasks[t];
            let (ps, mut es) = match f.started {
                None => (self.now, self.now + min_of(t, 0)),
                Some((a, s)) => match f.ends[0] {
                    Some(e) => (s, e),
                    None => (s, (s + self.durations[t][a][0]).max(f.provisional[0].unwrap_or(0))),
                },
            };
            if f.ends[0].is_none() {
                for &p in inst.preds(t) {
                    es = es.max(head[p] + min_of(p, 1));
                }
            }
            prep_lo[t] = ps;
            head[t] = es;
        }
        // Time needed after each execution start, through successors.
        let mut tail = vec![0 as Tick; n];
        for &t in inst.topo_order().iter().rev() {
            let mut q = min_of(t, 2);
            for &s in inst.succs(t) {
                q = q.max(tail[s]);
            }
            tail[t] = min_of(t, 1) + q;
        }
        let h = self.horizon;
        let mut starts = Vec::with_capacity(3 * n);
        let mut prep_durations = Vec::with_capacity(n);
        let mut assignments = Vec::new();
        let mut ms_lo = 0;
        for t in 0..n {
            let exec_hi = h.saturating_sub(tail[t]);
            let d1 = min_of(t, 0);
            let prep = match self.tasks[t].started {
                Some((_, s)) => Domain { lo: s, hi: s },
                None => Domain { lo: prep_lo[t], hi: exec_hi.saturating_sub(d1) },
            };
            let exec = Domain { lo: head[t], hi: exec_hi };
            let done_lo = head[t] + min_of(t, 1);
            let done = Domain { lo: done_lo, hi: h.saturating_sub(min_of(t, 2)) };
            ms_lo = ms_lo.max(head[t] + tail[t]);
            starts.push((t, Phase::Preparation, prep));
            starts.push((t, Phase::Execution, exec));
            starts.push((t, Phase::Completion, done));
            prep_durations
                .push((t, Domain { lo: d1.max(head[t].saturating_sub(prep.hi)), hi: exec.hi.saturating_sub(prep.lo) }));
            let allowed = self.allowed_actors(t);
            for &a in inst.eligible(t) {
                let dom = if !allowed.contains(&a) {
                    BoolDomain::False
                } else if allowed.len() == 1 {
                    BoolDomain::True
                } else {
                    BoolDomain::Free
                };
                assignments.push((t, a, dom));
            }
        }
        ModelVariables { starts, prep_durations, assignments, makespan: Domain { lo: ms_lo, hi: h } }
    }
}
