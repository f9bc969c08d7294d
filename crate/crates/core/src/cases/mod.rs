//! Job generators for the seven benchmark cases and for small random jobs.
//!
//! | case | structure | eligibility |
//! |------|-----------|-------------|
//! | 1 | 4 tasks per actor, no dependencies | fixed |
//! | 2 | as 1 | half allocatable |
//! | 3 | 3 structures of 3 chained tasks, alternating actors | fixed |
//! | 4 | as 3 | half allocatable |
//! | 5 | 16 tasks in 4 layers, dense dependencies | fixed, balanced |
//! | 6 | as 5 | half allocatable |
//! | 7 | 20 to 28 tasks in at most 5 random layers | random, half allocatable |
//!
//! Every task uses the one shared area during execution. Estimates are drawn per
//! task: preparation 2 to 5 ticks, execution 3 to 8, completion 1 to 3. Cases 1
//! and 2 use preparation 3 to 8 and execution 1 to 3 instead, so the area is
//! rarely contended and ordering decisions barely matter. Humans
//! refuse allocatable tasks with a probability drawn from `[0.1, 0.4]`; fixed
//! tasks are never refused.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{ActorId, ActorSpec, AreaId, Job, PhaseEstimates, Task, TaskId, Tick};
use crate::rng::{derive_seed, stream, Stream, StreamRng};

/// Multi-robot task allocation labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Taxonomy {
    /// No dependencies.
    ND,
    /// Cross-schedule dependencies.
    XD,
    /// Complex dependencies.
    CD,
}

impl fmt::Display for Taxonomy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Taxonomy::ND => "ND",
            Taxonomy::XD => "XD",
            Taxonomy::CD => "CD",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DependencyStyle {
    None,
    PerStructureChains,
    DenseDag,
    RandomDag,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseSpec {
    pub case_id: u8,
    pub taxonomy: Taxonomy,
    pub tasks_per_actor: u32,
    pub allocatable_fraction: f64,
    pub dependency_style: DependencyStyle,
    pub seed: u64,
    pub structures: u32,
    pub chain_length: u32,
    /// Inclusive range of the task count for layered cases.
    pub task_count: (u32, u32),
    /// Upper bound on the number of dependency layers.
    pub max_layers: u32,
    pub reject_range: (f64, f64),
    /// Inclusive tick ranges of the preparation, execution and completion estimates.
    pub estimate_ranges: [(Tick, Tick); 3],
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CaseError {
    #[error("invalid case spec: {0}")]
    InvalidSpec(String),
}

pub const ROBOT: &str = "r1";
pub const HUMAN: &str = "h1";
pub const AREA: &str = "assembly";

impl CaseSpec {
    /// Default parameters of a case.
    pub fn for_case(case_id: u8, seed: u64) -> Result<Self, CaseError> {
        let base = CaseSpec {
            case_id,
            taxonomy: Taxonomy::CD,
            tasks_per_actor: 4,
            allocatable_fraction: 0.0,
            dependency_style: DependencyStyle::None,
            seed,
            structures: 3,
            chain_length: 3,
            task_count: (16, 16),
            max_layers: 4,
            reject_range: (0.1, 0.4),
            estimate_ranges: [(2, 5), (3, 8), (1, 3)],
        };
        let light = [(3, 8), (1, 3), (1, 3)];
        let spec = match case_id {
            1 => CaseSpec { taxonomy: Taxonomy::ND, estimate_ranges: light, ..base },
            2 => CaseSpec { allocatable_fraction: 0.5, estimate_ranges: light, ..base },
            3 => CaseSpec { taxonomy: Taxonomy::XD, dependency_style: DependencyStyle::PerStructureChains, ..base },
            4 => CaseSpec { allocatable_fraction: 0.5, dependency_style: DependencyStyle::PerStructureChains, ..base },
            5 => CaseSpec { dependency_style: DependencyStyle::DenseDag, ..base },
            6 => CaseSpec { allocatable_fraction: 0.5, dependency_style: DependencyStyle::DenseDag, ..base },
            7 => CaseSpec {
                allocatable_fraction: 0.5,
                dependency_style: DependencyStyle::RandomDag,
                task_count: (20, 28),
                max_layers: 5,
                ..base
            },
            _ => return Err(CaseError::InvalidSpec(format!("case id {case_id} is not in 1..=7"))),
        };
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), CaseError> {
        let bad = |m: &str| Err(CaseError::InvalidSpec(m.to_string()));
        if !(1..=7).contains(&self.case_id) {
            return bad("case id must be in 1..=7");
        }
        let expected = match self.case_id {
            1 => Taxonomy::ND,
            3 => Taxonomy::XD,
            _ => Taxonomy::CD,
        };
        if self.taxonomy != expected {
            return bad("taxonomy does not match the case");
        }
        if !(0.0..=1.0).contains(&self.allocatable_fraction) {
            return bad("allocatable_fraction must lie in [0, 1]");
        }
        let (lo, hi) = self.reject_range;
        if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
            return bad("reject_range must be an interval inside [0, 1]");
        }
        if self.estimate_ranges.iter().any(|&(lo, hi)| lo < 1 || lo > hi) {
            return bad("estimate ranges must satisfy 1 <= lo <= hi");
        }
        if self.tasks_per_actor == 0 || self.structures == 0 || self.chain_length == 0 || self.max_layers == 0 {
            return bad("sizes must be positive");
        }
        if self.task_count.0 == 0 || self.task_count.0 > self.task_count.1 || self.task_count.1 > 128 {
            return bad("task_count must be a non-empty range within 1..=128");
        }
        Ok(())
    }
}

struct Builder {
    rng: StreamRng,
    ranges: [(Tick, Tick); 3],
    tasks: Vec<Task>,
    edges: Vec<(TaskId, TaskId)>,
}

impl Builder {
    fn task(&mut self, id: String, actor: &str) -> usize {
        let [p, e, d] = self.ranges;
        let est = PhaseEstimates::new(
            self.rng.random_range(p.0..=p.1),
            self.rng.random_range(e.0..=e.1),
            self.rng.random_range(d.0..=d.1),
        );
        self.tasks.push(Task {
            id: TaskId::new(id),
            eligible_actors: vec![ActorId::new(actor)],
            estimates: est,
            dist: None,
            reject_prob: BTreeMap::new(),
            shared_area: Some(AreaId::new(AREA)),
        });
        self.tasks.len() - 1
    }

    fn edge(&mut self, task: usize, depends_on: usize) {
        self.edges.push((self.tasks[task].id.clone(), self.tasks[depends_on].id.clone()));
    }

    fn make_allocatable(&mut self, t: usize, range: (f64, f64)) {
        let p = if range.0 < range.1 { self.rng.random_range(range.0..=range.1) } else { range.0 };
        let task = &mut self.tasks[t];
        task.eligible_actors = vec![ActorId::new(ROBOT), ActorId::new(HUMAN)];
        task.reject_prob = BTreeMap::from([(ActorId::new(HUMAN), p)]);
    }

    /// Makes `fraction` of the tasks (rounded, at least one when positive)
    /// allocatable, never touching `protected`.
    fn allocate(&mut self, fraction: f64, protected: &BTreeSet<usize>, range: (f64, f64)) {
        if fraction <= 0.0 {
            return;
        }
        let mut pool: Vec<usize> = (0..self.tasks.len()).filter(|t| !protected.contains(t)).collect();
        let want = ((fraction * self.tasks.len() as f64).round() as usize).max(1).min(pool.len());
        pool.shuffle(&mut self.rng);
        let mut chosen: Vec<usize> = pool[..want].to_vec();
        chosen.sort_unstable();
        for t in chosen {
            self.make_allocatable(t, range);
        }
    }

    fn finish(self) -> Job {
        let serial: Tick = self.tasks.iter().map(|t| t.estimates.total()).sum();
        Job {
            tasks: self.tasks,
            edges: self.edges,
            actors: vec![ActorSpec::robot(ROBOT), ActorSpec::human(HUMAN)],
            horizon: 4 * serial,
        }
    }
}

fn actor_name(i: usize) -> &'static str {
    if i.is_multiple_of(2) {
        ROBOT
    } else {
        HUMAN
    }
}

/// Builds the job described by `spec`.
pub fn generate_case(spec: &CaseSpec) -> Result<Job, CaseError> {
    spec.validate()?;
    let rng = stream(derive_seed(spec.seed, &[u64::from(spec.case_id)]), Stream::Generator);
    let mut b = Builder { rng, ranges: spec.estimate_ranges, tasks: Vec::new(), edges: Vec::new() };
    let mut protected = BTreeSet::new();
    match spec.dependency_style {
        DependencyStyle::None => {
            for k in 0..spec.tasks_per_actor as usize {
                for a in 0..2 {
                    b.task(format!("t{:02}", 2 * k + a + 1), actor_name(a));
                }
            }
        }
        DependencyStyle::PerStructureChains => {
            for s in 0..spec.structures as usize {
                let mut prev = None;
                for k in 0..spec.chain_length as usize {
                    let t = b.task(format!("s{}_{}", s + 1, k + 1), actor_name(s + k));
                    if let Some(p) = prev {
                        b.edge(t, p);
                    }
                    prev = Some(t);
                }
            }
            // One cross-actor edge between fixed tasks is kept.
            if spec.chain_length > 1 {
                let s = b.rng.random_range(0..spec.structures as usize);
                let k = b.rng.random_range(1..spec.chain_length as usize);
                let t = s * spec.chain_length as usize + k;
                protected.extend([t, t - 1]);
            }
        }
        DependencyStyle::DenseDag => {
            let n = spec.task_count.0 as usize;
            let layers = spec.max_layers as usize;
            let mut by_layer: Vec<Vec<usize>> = Vec::new();
            for l in 0..layers {
                let size = n / layers + usize::from(l < n % layers);
                // Balanced actors within every layer, in random order.
                let mut actors: Vec<usize> = (0..size).map(|i| (i + l) % 2).collect();
                actors.shuffle(&mut b.rng);
                let mut layer = Vec::new();
                for (i, &a) in actors.iter().enumerate() {
                    let t = b.task(format!("l{}_{}", l + 1, i + 1), actor_name(a));
                    layer.push(t);
                }
                if let Some(prev) = by_layer.last().cloned() {
                    for &t in &layer {
                        let mut deps: Vec<usize> = prev.iter().copied().filter(|_| b.rng.random_bool(0.5)).collect();
                        if deps.is_empty() {
                            deps.push(prev[b.rng.random_range(0..prev.len())]);
                        }
                        for d in deps {
                            b.edge(t, d);
                        }
                    }
                }
                by_layer.push(layer);
            }
        }
        DependencyStyle::RandomDag => {
            let n = b.rng.random_range(spec.task_count.0..=spec.task_count.1) as usize;
            let n_layers = b.rng.random_range(1..=spec.max_layers.min(n as u32)) as usize;
            // Every layer gets one task, the rest are spread at random.
            let mut sizes = vec![1usize; n_layers];
            for _ in n_layers..n {
                let l = b.rng.random_range(0..n_layers);
                sizes[l] += 1;
            }
            let mut by_layer: Vec<Vec<usize>> = Vec::new();
            for (l, &size) in sizes.iter().enumerate() {
                let mut layer = Vec::new();
                for i in 0..size {
                    let a = b.rng.random_range(0..2usize);
                    let t = b.task(format!("l{}_{}", l + 1, i + 1), actor_name(a));
                    layer.push(t);
                }
                if let Some(prev) = by_layer.last() {
                    let earlier: Vec<usize> = by_layer.iter().flatten().copied().collect();
                    let prev = prev.clone();
                    for &t in &layer {
                        let first = prev[b.rng.random_range(0..prev.len())];
                        b.edge(t, first);
                        if b.rng.random_bool(0.5) {
                            let other = earlier[b.rng.random_range(0..earlier.len())];
                            if other != first {
                                b.edge(t, other);
                            }
                        }
                    }
                }
                by_layer.push(layer);
            }
        }
    }
    b.allocate(spec.allocatable_fraction, &protected, spec.reject_range);
    Ok(b.finish())
}

/// `n_instances` structurally distinct jobs of one case.
pub fn generate_instance_set(case_id: u8, n_instances: usize, base_seed: u64) -> Result<Vec<Job>, CaseError> {
    if n_instances == 0 {
        return Err(CaseError::InvalidSpec("n_instances must be at least 1".into()));
    }
    let mut seen = BTreeSet::new();
    let mut jobs = Vec::with_capacity(n_instances);
    let mut attempt = 0u64;
    while jobs.len() < n_instances {
        let seed = derive_seed(base_seed, &[u64::from(case_id), attempt]);
        attempt += 1;
        let job = generate_case(&CaseSpec::for_case(case_id, seed)?)?;
        let key = serde_json::to_string(&job).expect("jobs serialize");
        if seen.insert(key) {
            jobs.push(job);
        }
    }
    Ok(jobs)
}

/// A random job with 1 to `max_tasks` tasks, a robot `r` and a human `h`, and
/// one shared area used by most tasks. Estimates are 1 to 4 ticks per phase.
pub fn random_small_job(seed: u64, max_tasks: usize) -> Job {
    let mut rng = stream(seed, Stream::Generator);
    let n = rng.random_range(1..=max_tasks.max(1));
    let mut tasks = Vec::with_capacity(n);
    for i in 0..n {
        let eligible = match rng.random_range(0..3) {
            0 => vec!["r"],
            1 => vec!["h"],
            _ => vec!["r", "h"],
        };
        tasks.push(Task {
            id: TaskId::new(format!("t{i}")),
            eligible_actors: eligible.into_iter().map(ActorId::new).collect(),
            estimates: PhaseEstimates::new(rng.random_range(1..=4), rng.random_range(1..=4), rng.random_range(1..=4)),
            dist: None,
            reject_prob: BTreeMap::new(),
            shared_area: rng.random_bool(0.8).then(|| AreaId::new("area")),
        });
    }
    let mut edges = Vec::new();
    for i in 0..n {
        for j in 0..i {
            if rng.random_bool(0.3) {
                edges.push((tasks[i].id.clone(), tasks[j].id.clone()));
            }
        }
    }
    let horizon = tasks.iter().map(|t| t.estimates.total()).sum::<Tick>() * 4;
    Job { tasks, edges, actors: vec![ActorSpec::robot("r"), ActorSpec::human("h")], horizon }
}
