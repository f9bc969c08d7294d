//! Depth-first branch and bound over resource sequences.
//!
//! A node fixes a prefix of the global execution order. Appending a task to
//! the prefix chooses its actor (the assignment branch) and places it after
//! every task already sequenced on the same actor and shared area (the
//! ordering branch). Times are the earliest consistent with the prefix, so a
//! complete prefix is a semi-active schedule. Every semi-active schedule is
//! reached by ordering its tasks by execution start, which makes the search
//! exact.
//!
//! Pruning: a lower bound combining the partial makespan, heads and tails
//! through the dependency graph, a preemptive one-machine relaxation of each
//! shared area, and per-actor load bounds; plus a dominance store keyed by the
//! set of sequenced tasks that discards states no better than one seen before.

use std::collections::HashMap;

use web_time::{Duration, Instant};

use super::model::SchedulingModel;
use crate::domain::{ActorIdx, TaskIdx, Tick};

const MAX_TASKS: usize = 128;
const MEMO_CAPACITY: usize = 1 << 20;
const INF: Tick = Tick::MAX / 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Status {
    Free,
    /// Preparing or waiting: actor and preparation start are fixed.
    Committed {
        actor: ActorIdx,
        prep_start: Tick,
        min_exec_start: Tick,
    },
    /// Execution has begun; all times are known or provisional.
    Placed {
        actor: ActorIdx,
        prep_start: Tick,
        exec_start: Tick,
        exec_end: Tick,
        done_end: Tick,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Placement {
    pub task: TaskIdx,
    pub actor: ActorIdx,
    pub prep_start: Tick,
    pub exec_start: Tick,
    pub exec_end: Tick,
    pub done_end: Tick,
}

#[derive(Debug)]
pub(crate) enum PrepareError {
    /// A task has no actor left.
    NoActor,
    TooManyTasks,
}

/// The search problem distilled from a model snapshot.
pub(crate) struct Problem {
    n: usize,
    m: usize,
    now: Tick,
    pub horizon: Tick,
    pub status: Vec<Status>,
    allowed: Vec<Vec<ActorIdx>>,
    dur: Vec<Vec<[Tick; 3]>>,
    area: Vec<Option<usize>>,
    preds: Vec<Vec<TaskIdx>>,
    succs: Vec<Vec<TaskIdx>>,
    topo: Vec<TaskIdx>,
    min_d2: Vec<Tick>,
    min_span: Vec<Tick>,
    tail: Vec<Tick>,
    needs_frontier: Vec<bool>,
    init: State,
}

#[derive(Debug, Clone)]
struct State {
    avail: Vec<Tick>,
    area_free: Vec<Tick>,
    exec_end: Vec<Tick>,
    /// Tasks whose execution end is known: placed or sequenced.
    done: u128,
    /// Sequenced in this search (excludes placed tasks).
    seq_set: u128,
    pending: Vec<Option<TaskIdx>>,
    cmax: Tick,
    left: usize,
}

fn bit(t: TaskIdx) -> u128 {
    1u128 << t
}

impl Problem {
    pub fn from_model(model: &SchedulingModel) -> Result<Problem, PrepareError> {
        let inst = model.instance();
        let n = inst.n_tasks();
        let m = inst.n_actors();
        if n > MAX_TASKS {
            return Err(PrepareError::TooManyTasks);
        }
        let now = model.now();
        let k = inst.areas().len();
        let mut status = Vec::with_capacity(n);
        let mut allowed = Vec::with_capacity(n);
        let mut dur = Vec::with_capacity(n);
        for t in 0..n {
            let facts = model.task_facts(t);
            let actors = model.allowed_actors(t);
            if actors.is_empty() {
                return Err(PrepareError::NoActor);
            }
            dur.push((0..m).map(|a| model.durations(t, a)).collect::<Vec<_>>());
            let st = match facts.started {
                None => Status::Free,
                Some((a, s)) => {
                    let d = model.durations(t, a);
                    match facts.ends[0] {
                        None => Status::Committed {
                            actor: a,
                            prep_start: s,
                            min_exec_start: (s + d[0]).max(facts.provisional[0].unwrap_or(0)),
                        },
                        Some(e1) => {
                            let exec_end = facts.ends[1].or(facts.provisional[1]).unwrap_or(e1 + d[1]);
                            let done_end = match facts.ends[1] {
                                Some(_) => facts.ends[2].or(facts.provisional[2]).unwrap_or(exec_end + d[2]),
                                None => exec_end + d[2],
                            };
                            Status::Placed { actor: a, prep_start: s, exec_start: e1, exec_end, done_end }
                        }
                    }
                }
            };
            status.push(st);
            allowed.push(actors);
        }
        let area: Vec<Option<usize>> = (0..n).map(|t| inst.area_of(t)).collect();
        let preds: Vec<Vec<TaskIdx>> = (0..n).map(|t| inst.preds(t).to_vec()).collect();
        let succs: Vec<Vec<TaskIdx>> = (0..n).map(|t| inst.succs(t).to_vec()).collect();
        let topo = inst.topo_order().to_vec();

        let min_phase = |t: TaskIdx, p: usize| allowed[t].iter().map(|&a| dur[t][a][p]).min().unwrap_or(INF);
        let min_d2: Vec<Tick> = (0..n).map(|t| min_phase(t, 1)).collect();
        let min_span: Vec<Tick> =
            (0..n).map(|t| allowed[t].iter().map(|&a| dur[t][a].iter().sum::<Tick>()).min().unwrap_or(INF)).collect();
        // Time still needed after a task's execution ends.
        let mut tail = vec![0; n];
        for &t in topo.iter().rev() {
            let mut q = min_phase(t, 2);
            for &s in &succs[t] {
                q = q.max(min_d2[s] + tail[s]);
            }
            tail[t] = q;
        }
        let needs_frontier =
            (0..n).map(|t| succs[t].iter().any(|&s| area[s].is_none() || area[s] != area[t])).collect();

        let mut init = State {
            avail: vec![0; m],
            area_free: vec![0; k],
            exec_end: vec![0; n],
            done: 0,
            seq_set: 0,
            pending: vec![None; m],
            cmax: 0,
            left: 0,
        };
        for (t, st) in status.iter().enumerate() {
            match *st {
                Status::Free => init.left += 1,
                Status::Committed { actor, .. } => {
                    init.left += 1;
                    init.pending[actor] = Some(t);
                }
                Status::Placed { actor, exec_end, done_end, .. } => {
                    init.done |= bit(t);
                    init.exec_end[t] = exec_end;
                    init.avail[actor] = init.avail[actor].max(done_end);
                    if let Some(s) = area[t] {
                        init.area_free[s] = init.area_free[s].max(exec_end);
                    }
                    init.cmax = init.cmax.max(done_end);
                }
            }
        }
        Ok(Problem {
            n,
            m,
            now,
            horizon: model.horizon(),
            status,
            allowed,
            dur,
            area,
            preds,
            succs,
            topo,
            min_d2,
            min_span,
            tail,
            needs_frontier,
            init,
        })
    }

    pub fn n_tasks(&self) -> usize {
        self.n
    }

    fn ready(&self, st: &State, t: TaskIdx) -> bool {
        st.done & bit(t) == 0 && self.preds[t].iter().all(|&p| st.done & bit(p) != 0)
    }

    /// Earliest placement of `t` on `a` after the current prefix, or `None` if not allowed.
    fn place(&self, st: &State, t: TaskIdx, a: ActorIdx) -> Option<Placement> {
        let (prep_start, mut exec_start, d) = match self.status[t] {
            Status::Free => {
                if st.pending[a].is_some() || !self.allowed[t].contains(&a) {
                    return None;
                }
                let d = self.dur[t][a];
                let ps = st.avail[a].max(self.now);
                (ps, ps + d[0], d)
            }
            Status::Committed { actor, prep_start, min_exec_start } => {
                if actor != a {
                    return None;
                }
                (prep_start, min_exec_start, self.dur[t][a])
            }
            Status::Placed { .. } => return None,
        };
        if let Some(s) = self.area[t] {
            exec_start = exec_start.max(st.area_free[s]);
        }
        for &p in &self.preds[t] {
            exec_start = exec_start.max(st.exec_end[p]);
        }
        let exec_end = exec_start + d[1];
        Some(Placement { task: t, actor: a, prep_start, exec_start, exec_end, done_end: exec_end + d[2] })
    }

    fn apply(&self, st: &mut State, pl: &Placement) {
        st.exec_end[pl.task] = pl.exec_end;
        st.avail[pl.actor] = pl.done_end;
        if let Some(s) = self.area[pl.task] {
            st.area_free[s] = pl.exec_end;
        }
        st.cmax = st.cmax.max(pl.done_end);
        st.done |= bit(pl.task);
        st.seq_set |= bit(pl.task);
        if st.pending[pl.actor] == Some(pl.task) {
            st.pending[pl.actor] = None;
        }
        st.left -= 1;
    }

    /// List-schedules the tasks in the priority order of `hint`, preferring the
    /// hinted actor. Tasks missing from the hint go last in index order.
    pub fn evaluate_order(&self, hint: &[(TaskIdx, ActorIdx)]) -> Option<(Tick, Vec<Placement>)> {
        let mut order: Vec<(TaskIdx, Option<ActorIdx>)> = Vec::with_capacity(self.n);
        let mut seen = 0u128;
        for &(t, a) in hint {
            if t < self.n && seen & bit(t) == 0 {
                seen |= bit(t);
                order.push((t, Some(a)));
            }
        }
        for t in 0..self.n {
            if seen & bit(t) == 0 {
                order.push((t, None));
            }
        }
        let mut st = self.init.clone();
        let mut placements = Vec::with_capacity(st.left);
        while st.left > 0 {
            let mut chosen = None;
            for &(t, hinted) in &order {
                if !self.ready(&st, t) {
                    continue;
                }
                let preferred = hinted.and_then(|a| self.place(&st, t, a));
                let pick = preferred.or_else(|| {
                    self.allowed[t].iter().filter_map(|&a| self.place(&st, t, a)).min_by_key(|p| (p.done_end, p.actor))
                });
                if pick.is_some() {
                    chosen = pick;
                    break;
                }
            }
            let pl = chosen?;
            self.apply(&mut st, &pl);
            placements.push(pl);
        }
        Some((st.cmax, placements))
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct SearchLimits {
    pub deadline: Option<Duration>,
    pub node_limit: Option<u64>,
}

pub(crate) struct SearchOutcome {
    pub best: Option<(Tick, Vec<Placement>)>,
    pub exhausted: bool,
    pub root_bound: Tick,
    pub nodes: u64,
    pub bound_evals: u64,
}

pub(crate) fn search(problem: &Problem, limits: SearchLimits, hint: Option<&[(TaskIdx, ActorIdx)]>) -> SearchOutcome {
    let mut s = Search::new(problem, limits);
    let root_bound = s.lower_bound();
    if let Some((ms, pls)) = problem.evaluate_order(hint.unwrap_or(&[])) {
        if ms <= problem.horizon {
            s.best = ms;
            s.best_seq = Some(pls);
        }
    }
    if s.best > root_bound {
        s.dfs();
    }
    let exhausted = !s.stopped;
    SearchOutcome {
        best: s.best_seq.map(|p| (s.best, p)),
        exhausted,
        root_bound: root_bound.min(if exhausted { s.best } else { INF }),
        nodes: s.nodes,
        bound_evals: s.bound_evals,
    }
}

struct Search<'a> {
    p: &'a Problem,
    st: State,
    seq: Vec<Placement>,
    best: Tick,
    best_seq: Option<Vec<Placement>>,
    root_bound: Tick,
    nodes: u64,
    bound_evals: u64,
    limits: SearchLimits,
    started: Instant,
    stopped: bool,
    memo: HashMap<u128, Vec<Box<[Tick]>>>,
    memo_entries: usize,
    head: Vec<Tick>,
    jps: Vec<(Tick, Tick, Tick)>,
    key_buf: Vec<Tick>,
}

impl<'a> Search<'a> {
    fn new(p: &'a Problem, limits: SearchLimits) -> Self {
        Self {
            p,
            st: p.init.clone(),
            seq: Vec::with_capacity(p.n),
            best: p.horizon.saturating_add(1),
            best_seq: None,
            root_bound: 0,
            nodes: 0,
            bound_evals: 0,
            limits,
            started: Instant::now(),
            stopped: false,
            memo: HashMap::new(),
            memo_entries: 0,
            head: vec![0; p.n],
            jps: Vec::with_capacity(p.n),
            key_buf: Vec::new(),
        }
    }

    fn out_of_budget(&mut self) -> bool {
        if self.stopped {
            return true;
        }
        if let Some(limit) = self.limits.node_limit {
            if self.nodes >= limit {
                self.stopped = true;
            }
        }
        if let Some(deadline) = self.limits.deadline {
            if self.nodes.is_multiple_of(256) && self.started.elapsed() >= deadline {
                self.stopped = true;
            }
        }
        self.stopped
    }

    fn dfs(&mut self) {
        if self.st.left == 0 {
            if self.st.cmax < self.best {
                self.best = self.st.cmax;
                self.best_seq = Some(self.seq.clone());
            }
            return;
        }
        if self.out_of_budget() {
            return;
        }
        self.nodes += 1;
        let lb = self.lower_bound();
        if self.nodes == 1 {
            self.root_bound = lb;
        }
        if lb >= self.best || self.dominated() {
            return;
        }

        let mut children: Vec<Placement> = Vec::new();
        for t in 0..self.p.n {
            if !self.p.ready(&self.st, t) {
                continue;
            }
            for &a in &self.p.allowed[t] {
                if let Some(pl) = self.p.place(&self.st, t, a) {
                    if pl.done_end.max(self.st.cmax) < self.best {
                        children.push(pl);
                    }
                }
            }
        }
        children.sort_by_key(|c| (c.exec_start, c.done_end, c.task, c.actor));

        for pl in children {
            if pl.done_end.max(self.st.cmax) >= self.best || lb >= self.best {
                continue;
            }
            let saved = self.st.clone();
            self.p.apply(&mut self.st, &pl);
            self.seq.push(pl);
            self.dfs();
            self.seq.pop();
            self.st = saved;
            if self.stopped || self.best <= self.root_bound.max(lb) {
                return;
            }
        }
    }

    /// True if an earlier state with the same sequenced set was at least as good.
    fn dominated(&mut self) -> bool {
        let p = self.p;
        let st = &self.st;
        self.key_buf.clear();
        self.key_buf.extend(st.avail.iter().map(|&a| a.max(p.now)));
        self.key_buf.extend_from_slice(&st.area_free);
        self.key_buf.push(st.cmax);
        for t in 0..p.n {
            if p.needs_frontier[t] && st.seq_set & bit(t) != 0 && p.succs[t].iter().any(|&s| st.done & bit(s) == 0) {
                self.key_buf.push(st.exec_end[t]);
            } else {
                self.key_buf.push(0);
            }
        }
        let entry = self.memo.entry(st.seq_set).or_default();
        if entry.iter().any(|old| old.iter().zip(&self.key_buf).all(|(o, n)| o <= n)) {
            return true;
        }
        let before = entry.len();
        entry.retain(|old| !old.iter().zip(&self.key_buf).all(|(o, n)| n <= o));
        self.memo_entries -= before - entry.len();
        if self.memo_entries < MEMO_CAPACITY {
            entry.push(self.key_buf.clone().into_boxed_slice());
            self.memo_entries += 1;
        }
        false
    }

    fn lower_bound(&mut self) -> Tick {
        self.bound_evals += 1;
        let p = self.p;
        let st = &self.st;
        let mut lb = st.cmax;
        if st.left == 0 {
            return lb;
        }

        // Heads: earliest execution start of each unsequenced task.
        for &t in &p.topo {
            if st.done & bit(t) != 0 {
                continue;
            }
            let mut r = match p.status[t] {
                Status::Free => {
                    p.allowed[t].iter().map(|&a| st.avail[a].max(p.now) + p.dur[t][a][0]).min().unwrap_or(INF)
                }
                Status::Committed { min_exec_start, .. } => min_exec_start,
                Status::Placed { exec_start, .. } => exec_start,
            };
            if let Some(s) = p.area[t] {
                r = r.max(st.area_free[s]);
            }
            for &q in &p.preds[t] {
                let e = if st.done & bit(q) != 0 { st.exec_end[q] } else { self.head[q] + p.min_d2[q] };
                r = r.max(e);
            }
            self.head[t] = r;
            lb = lb.max(r + p.min_d2[t] + p.tail[t]);
        }

        // Preemptive one-machine relaxation per shared area.
        for s in 0..st.area_free.len() {
            self.jps.clear();
            for t in 0..p.n {
                if st.done & bit(t) == 0 && p.area[t] == Some(s) {
                    self.jps.push((self.head[t], p.min_d2[t], p.tail[t]));
                }
            }
            if self.jps.len() > 1 {
                lb = lb.max(preemptive_bound(&mut self.jps));
            }
        }

        // Actor loads.
        let mut flex_total: u64 = 0;
        let mut flex_actors: u128 = 0;
        let mut base = [0 as Tick; 16];
        let mut fixed = [0 as Tick; 16];
        let mut has_work = [false; 16];
        let m = p.m.min(16);
        for a in 0..m {
            base[a] = match st.pending[a] {
                Some(c) => {
                    has_work[a] = true;
                    self.head[c] + p.dur[c][a][1] + p.dur[c][a][2]
                }
                None => st.avail[a].max(p.now),
            };
        }
        for t in 0..p.n {
            if st.done & bit(t) != 0 || !matches!(p.status[t], Status::Free) {
                continue;
            }
            if p.allowed[t].len() == 1 {
                let a = p.allowed[t][0];
                if a < m {
                    fixed[a] += p.dur[t][a].iter().sum::<Tick>();
                    has_work[a] = true;
                }
            } else {
                flex_total += u64::from(p.min_span[t]);
                for &a in &p.allowed[t] {
                    flex_actors |= 1 << a;
                }
            }
        }
        let mut n_flex = 0u64;
        for a in 0..m {
            if has_work[a] {
                lb = lb.max(base[a] + fixed[a]);
            }
            if flex_actors & (1 << a) != 0 {
                n_flex += 1;
                flex_total += u64::from(base[a] + fixed[a]);
            }
        }
        if n_flex > 0 && p.m <= 16 {
            lb = lb.max(flex_total.div_ceil(n_flex) as Tick);
        }
        lb
    }
}

/// Jackson's preemptive schedule: max over jobs of completion plus tail,
/// a lower bound for one machine with heads `r`, processing `p` and tails `q`.
fn preemptive_bound(jobs: &mut [(Tick, Tick, Tick)]) -> Tick {
    jobs.sort_unstable_by_key(|j| j.0);
    let n = jobs.len();
    let mut remaining: Vec<Tick> = jobs.iter().map(|j| j.1).collect();
    let mut released = 0;
    let mut active: Vec<usize> = Vec::with_capacity(n);
    let mut t: Tick = 0;
    let mut bound: Tick = 0;
    let mut finished = 0;
    while finished < n {
        if active.is_empty() && released < n {
            t = t.max(jobs[released].0);
        }
        while released < n && jobs[released].0 <= t {
            active.push(released);
            released += 1;
        }
        let (pos, &j) = active
            .iter()
            .enumerate()
            .max_by_key(|(_, &j)| (jobs[j].2, std::cmp::Reverse(j)))
            .expect("a released job exists");
        let next_release = if released < n { jobs[released].0 } else { INF };
        // All jobs released by `t` are active, so the next release lies strictly ahead.
        let run = remaining[j].min(next_release - t);
        t += run;
        remaining[j] -= run;
        if remaining[j] == 0 {
            bound = bound.max(t + jobs[j].2);
            active.swap_remove(pos);
            finished += 1;
        }
    }
    bound
}

/// Converts a finished search into phase intervals for every task.
pub(crate) fn placements_to_times(problem: &Problem, seq: &[Placement]) -> Vec<(ActorIdx, [Tick; 4])> {
    let mut out = vec![(0, [0; 4]); problem.n];
    for (t, st) in problem.status.iter().enumerate() {
        if let Status::Placed { actor, prep_start, exec_start, exec_end, done_end } = *st {
            out[t] = (actor, [prep_start, exec_start, exec_end, done_end]);
        }
    }
    for pl in seq {
        out[pl.task] = (pl.actor, [pl.prep_start, pl.exec_start, pl.exec_end, pl.done_end]);
    }
    out
}
