use std::sync::Arc;

use rand::Rng;

use super::{executable, AgentError, AgentRequest, Controller, ControllerKind, ControllerStats};
use crate::domain::{ActorIdx, Instance, Observation, TaskIdx, TaskState, Tick};
use crate::rng::{stream, Stream, StreamRng};

fn total_estimate(instance: &Instance, t: TaskIdx) -> Tick {
    instance.estimates(t).iter().sum()
}

/// Picks uniformly among the executable tasks of each idle actor.
pub struct RandomAllocation {
    instance: Arc<Instance>,
    rng: StreamRng,
    steps: u64,
}

impl RandomAllocation {
    pub fn new(instance: Arc<Instance>, seed: u64) -> Self {
        Self { instance, rng: stream(seed, Stream::Controller), steps: 0 }
    }
}

impl Controller for RandomAllocation {
    fn kind(&self) -> ControllerKind {
        ControllerKind::RA
    }

    fn step(&mut self, obs: &Observation) -> Result<Vec<AgentRequest>, AgentError> {
        self.steps += 1;
        let mut taken = vec![false; self.instance.n_tasks()];
        let mut out = Vec::new();
        let idle: Vec<ActorIdx> = obs.idle_actors().collect();
        for a in idle {
            let options: Vec<TaskIdx> =
                (0..self.instance.n_tasks()).filter(|&t| !taken[t] && executable(&self.instance, obs, t, a)).collect();
            if options.is_empty() {
                continue;
            }
            let t = options[self.rng.random_range(0..options.len())];
            taken[t] = true;
            out.push(AgentRequest { actor: a, task: t, issue_tick: obs.now });
        }
        Ok(out)
    }

    fn stats(&self) -> ControllerStats {
        ControllerStats { steps: self.steps, ..ControllerStats::default() }
    }
}

/// Picks the executable task with the longest total estimate; ties go to the
/// smaller task id.
pub struct MaxDuration {
    instance: Arc<Instance>,
    steps: u64,
}

impl MaxDuration {
    pub fn new(instance: Arc<Instance>) -> Self {
        Self { instance, steps: 0 }
    }
}

impl Controller for MaxDuration {
    fn kind(&self) -> ControllerKind {
        ControllerKind::MD
    }

    fn step(&mut self, obs: &Observation) -> Result<Vec<AgentRequest>, AgentError> {
        self.steps += 1;
        let inst = &self.instance;
        let mut taken = vec![false; inst.n_tasks()];
        let mut out = Vec::new();
        let idle: Vec<ActorIdx> = obs.idle_actors().collect();
        for a in idle {
            let best = (0..inst.n_tasks()).filter(|&t| !taken[t] && executable(inst, obs, t, a)).max_by(|&x, &y| {
                total_estimate(inst, x)
                    .cmp(&total_estimate(inst, y))
                    .then_with(|| inst.task(y).id.cmp(&inst.task(x).id))
            });
            if let Some(t) = best {
                taken[t] = true;
                out.push(AgentRequest { actor: a, task: t, issue_tick: obs.now });
            }
        }
        Ok(out)
    }

    fn stats(&self) -> ControllerStats {
        ControllerStats { steps: self.steps, ..ControllerStats::default() }
    }
}

/// Greedy over all idle actors at once: tasks ranked by how many unfinished
/// tasks directly depend on them, then by total estimate, then by smaller id.
/// Each task goes to the capable idle actor with the least work started so far.
pub struct DependencyAware {
    instance: Arc<Instance>,
    workload: Vec<u64>,
    steps: u64,
}

impl DependencyAware {
    pub fn new(instance: Arc<Instance>) -> Self {
        let m = instance.n_actors();
        Self { instance, workload: vec![0; m], steps: 0 }
    }

    /// Work accumulated per actor from observed starts.
    pub fn workload(&self) -> &[u64] {
        &self.workload
    }
}

impl Controller for DependencyAware {
    fn kind(&self) -> ControllerKind {
        ControllerKind::DA
    }

    fn step(&mut self, obs: &Observation) -> Result<Vec<AgentRequest>, AgentError> {
        self.steps += 1;
        let inst = &self.instance;
        for s in &obs.started {
            self.workload[s.actor] += u64::from(total_estimate(inst, s.task));
        }
        let mut idle: Vec<ActorIdx> = obs.idle_actors().collect();
        let score = |t: TaskIdx| {
            let pending = inst.succs(t).iter().filter(|&&s| obs.task_states[s] != TaskState::Completed).count();
            (pending, total_estimate(inst, t))
        };
        let mut candidates: Vec<TaskIdx> =
            (0..inst.n_tasks()).filter(|&t| idle.iter().any(|&a| executable(inst, obs, t, a))).collect();
        candidates.sort_by(|&x, &y| score(y).cmp(&score(x)).then_with(|| inst.task(x).id.cmp(&inst.task(y).id)));

        let mut out = Vec::new();
        for t in candidates {
            let pick = idle
                .iter()
                .enumerate()
                .filter(|(_, &a)| executable(inst, obs, t, a))
                .min_by_key(|(_, &a)| (self.workload[a], a))
                .map(|(i, &a)| (i, a));
            if let Some((i, a)) = pick {
                idle.remove(i);
                out.push(AgentRequest { actor: a, task: t, issue_tick: obs.now });
            }
            if idle.is_empty() {
                break;
            }
        }
        out.sort_by_key(|r| r.actor);
        Ok(out)
    }

    fn stats(&self) -> ControllerStats {
        ControllerStats { steps: self.steps, ..ControllerStats::default() }
    }
}
