#![allow(dead_code)]

use std::collections::BTreeMap;

use cobos_core::domain::{Instance, Schedule, Tick};

/// Optimal makespan by enumeration: every eligible assignment, and for each one
/// every precedence-respecting order of the tasks. Each order is placed
/// greedily (preparation starts as soon as the actor is free, execution once
/// preparation, the area and all dependencies allow). Sorting any feasible
/// schedule by execution start yields one of these orders, and greedy
/// placement of that order is never later, so the minimum is the optimum.
pub fn brute_force_makespan(inst: &Instance) -> Option<Tick> {
    let n = inst.n_tasks();
    let mut assign = vec![0usize; n];
    let mut best = None;
    assignments(inst, 0, &mut assign, &mut best);
    best
}

fn assignments(inst: &Instance, t: usize, assign: &mut Vec<usize>, best: &mut Option<Tick>) {
    if t == inst.n_tasks() {
        let mut state = Placement {
            actor_free: vec![0; inst.n_actors()],
            area_free: vec![0; inst.areas().len()],
            exec_end: vec![None; inst.n_tasks()],
        };
        orders(inst, assign, &mut state, 0, 0, best);
        return;
    }
    for &a in inst.eligible(t) {
        assign[t] = a;
        assignments(inst, t + 1, assign, best);
    }
}

struct Placement {
    actor_free: Vec<Tick>,
    area_free: Vec<Tick>,
    exec_end: Vec<Option<Tick>>,
}

fn orders(inst: &Instance, assign: &[usize], s: &mut Placement, placed: usize, cmax: Tick, best: &mut Option<Tick>) {
    let n = inst.n_tasks();
    if placed == n {
        if best.is_none_or(|b| cmax < b) {
            *best = Some(cmax);
        }
        return;
    }
    for t in 0..n {
        if s.exec_end[t].is_some() {
            continue;
        }
        let Some(dep_end) = inst.preds(t).iter().map(|&p| s.exec_end[p]).try_fold(0, |m, e| e.map(|e| m.max(e))) else {
            continue;
        };
        let a = assign[t];
        let [d1, d2, d3] = inst.estimates(t);
        let prep = s.actor_free[a];
        let area = inst.area_of(t);
        let exec = (prep + d1).max(dep_end).max(area.map_or(0, |k| s.area_free[k]));
        let end = exec + d2 + d3;

        let saved = (s.actor_free[a], area.map(|k| s.area_free[k]));
        s.actor_free[a] = end;
        if let Some(k) = area {
            s.area_free[k] = exec + d2;
        }
        s.exec_end[t] = Some(exec + d2);
        orders(inst, assign, s, placed + 1, cmax.max(end), best);
        s.exec_end[t] = None;
        s.actor_free[a] = saved.0;
        if let (Some(k), Some(v)) = (area, saved.1) {
            s.area_free[k] = v;
        }
    }
}

/// Longest chain of estimated task spans through the dependency graph, where a
/// successor's execution cannot begin before its predecessor's execution ends.
pub fn critical_path(inst: &Instance) -> Tick {
    fn exec_end(inst: &Instance, t: usize, memo: &mut BTreeMap<usize, Tick>) -> Tick {
        if let Some(&v) = memo.get(&t) {
            return v;
        }
        let [d1, d2, _] = inst.estimates(t);
        let ready = inst.preds(t).iter().map(|&p| exec_end(inst, p, memo)).max().unwrap_or(0);
        let v = ready.max(d1) + d2;
        memo.insert(t, v);
        v
    }
    let mut memo = BTreeMap::new();
    (0..inst.n_tasks()).map(|t| exec_end(inst, t, &mut memo) + inst.estimates(t)[2]).max().unwrap_or(0)
}

/// Pairwise check of a schedule, written without the library validator:
/// contiguity, positive durations, eligibility, precedence, actor and area
/// exclusivity, makespan.
pub fn pairwise_valid(inst: &Instance, s: &Schedule) -> bool {
    let n = inst.n_tasks();
    if s.tasks.len() != n {
        return false;
    }
    let mut rows = Vec::with_capacity(n);
    for t in 0..n {
        let Some(st) = s.tasks.get(&inst.task(t).id) else { return false };
        let Some(a) = inst.actor_idx(&st.actor) else { return false };
        if !inst.eligible(t).contains(&a) {
            return false;
        }
        let p = &st.phases;
        if p.iter().any(|i| i.end <= i.start) || p[0].end != p[1].start || p[1].end != p[2].start {
            return false;
        }
        rows.push((a, p[0].start, p[1].start, p[1].end, p[2].end));
    }
    for t in 0..n {
        for &q in inst.preds(t) {
            if rows[q].3 > rows[t].2 {
                return false;
            }
        }
        for u in (t + 1)..n {
            let (x, y) = (rows[t], rows[u]);
            if x.0 == y.0 && x.1 < y.4 && y.1 < x.4 {
                return false;
            }
            if let (Some(k), Some(l)) = (inst.area_of(t), inst.area_of(u)) {
                if k == l && x.2 < y.3 && y.2 < x.3 {
                    return false;
                }
            }
        }
    }
    s.makespan == rows.iter().map(|r| r.4).max().unwrap_or(0)
}
