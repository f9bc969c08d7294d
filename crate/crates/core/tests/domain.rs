mod common;

use std::collections::BTreeMap;

use cobos_core::cases::{generate_case, random_small_job, CaseSpec};
use cobos_core::domain::{
    check_schedule, check_schedule_on, topological_layers, ActorId, Instance, Job, PhaseInterval, Schedule,
    ScheduleIssue, ScheduledTask, TaskId,
};
use cobos_core::rng::{stream, Stream};
use cobos_core::solver::{build_model, solve, SolveLimits};
use proptest::prelude::*;
use rand::Rng;

/// A schedule that is close to valid: the optimal one with a few random edits.
fn perturbed_schedule(inst: &Instance, seed: u64) -> Schedule {
    let mut rng = stream(seed, Stream::Generator);
    let mut s = solve(&build_model(inst.job()).unwrap(), SolveLimits::unlimited()).schedule.unwrap();
    let ids: Vec<TaskId> = s.tasks.keys().cloned().collect();
    for _ in 0..rng.random_range(0..3) {
        let id = &ids[rng.random_range(0..ids.len())];
        let st = s.tasks.get_mut(id).unwrap();
        match rng.random_range(0..6) {
            0 => {
                let shift = rng.random_range(1..4);
                for p in &mut st.phases {
                    p.start = p.start.saturating_sub(shift);
                    p.end = p.end.saturating_sub(shift);
                }
            }
            1 => {
                let shift = rng.random_range(1..4);
                for p in &mut st.phases {
                    p.start += shift;
                    p.end += shift;
                }
            }
            2 => st.phases[1].end = st.phases[1].start,
            3 => st.phases[2].start += 1,
            4 => {
                let actors = &inst.job().actors;
                st.actor = actors[rng.random_range(0..actors.len())].id.clone();
            }
            _ => s.makespan += 1,
        }
    }
    s
}

/// A schedule with random actors and phase times.
fn random_schedule(inst: &Instance, seed: u64) -> Schedule {
    let mut rng = stream(seed, Stream::Generator);
    let mut tasks = BTreeMap::new();
    for t in 0..inst.n_tasks() {
        let actors = &inst.job().actors;
        let actor = actors[rng.random_range(0..actors.len())].id.clone();
        let mut at = rng.random_range(0..20);
        let mut phases = [PhaseInterval::new(0, 0); 3];
        for p in &mut phases {
            let d = rng.random_range(0..5);
            *p = PhaseInterval::new(at, at + d);
            at += d + u32::from(rng.random_bool(0.1));
        }
        tasks.insert(inst.task(t).id.clone(), ScheduledTask { actor, phases });
    }
    let makespan = tasks.values().map(|st| st.phases[2].end).max().unwrap_or(0);
    Schedule { tasks, makespan }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 128, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn validator_agrees_with_pairwise_oracle(seed in any::<u64>()) {
        let inst = Instance::new(random_small_job(seed, 8)).unwrap();
        for s in [perturbed_schedule(&inst, seed), random_schedule(&inst, seed)] {
            prop_assert_eq!(check_schedule_on(&inst, &s).is_valid(), common::pairwise_valid(&inst, &s));
        }
    }

    #[test]
    fn valid_schedules_respect_the_critical_path(seed in any::<u64>()) {
        let inst = Instance::new(random_small_job(seed, 8)).unwrap();
        let s = perturbed_schedule(&inst, seed);
        if check_schedule_on(&inst, &s).is_valid() {
            prop_assert!(s.makespan >= common::critical_path(&inst));
        }
    }

    #[test]
    fn jobs_round_trip_through_json(case_id in 1u8..=7, seed in any::<u64>()) {
        let job = generate_case(&CaseSpec::for_case(case_id, seed).unwrap()).unwrap();
        let back: Job = serde_json::from_str(&serde_json::to_string_pretty(&job).unwrap()).unwrap();
        prop_assert_eq!(back, job);
    }
}

/// Longest dependency chain ending at each task, by depth-first search.
fn depth(inst: &Instance, t: usize, memo: &mut Vec<Option<usize>>) -> usize {
    if let Some(d) = memo[t] {
        return d;
    }
    let d = inst.preds(t).iter().map(|&p| depth(inst, p, memo) + 1).max().unwrap_or(0);
    memo[t] = Some(d);
    d
}

#[test]
fn case_five_layers_match_longest_paths() {
    for seed in 0..20 {
        let job = generate_case(&CaseSpec::for_case(5, seed).unwrap()).unwrap();
        let inst = Instance::new(job.clone()).unwrap();
        let mut memo = vec![None; inst.n_tasks()];
        let depths: Vec<usize> = (0..inst.n_tasks()).map(|t| depth(&inst, t, &mut memo)).collect();
        assert_eq!(depths.iter().max(), Some(&3), "four layers");
        let layers = topological_layers(&job).unwrap();
        for (l, layer) in layers.iter().enumerate() {
            for id in layer {
                assert_eq!(depths[inst.task_idx(id).unwrap()], l, "seed {seed} task {id}");
            }
        }
    }
}

#[test]
fn corrupted_area_occupancy_is_reported() {
    let job = generate_case(&CaseSpec::for_case(1, 0).unwrap()).unwrap();
    let inst = Instance::new(job.clone()).unwrap();
    let mut s = solve(&build_model(&job).unwrap(), SolveLimits::unlimited()).schedule.unwrap();
    let (a, b) = (inst.task(0).id.clone(), inst.task(1).id.clone());
    let exec = s.tasks[&a].phases[1];
    let other = s.tasks.get_mut(&b).unwrap();
    let spans = [other.phases[0].duration(), exec.duration(), other.phases[2].duration()];
    let prep_start = exec.start.saturating_sub(spans[0] as u32);
    other.phases[0] = PhaseInterval::new(prep_start, exec.start);
    other.phases[1] = exec;
    other.phases[2] = PhaseInterval::new(exec.end, exec.end + spans[2] as u32);
    s.makespan = s.tasks.values().map(|st| st.phases[2].end).max().unwrap();
    let report = check_schedule(&job, &s);
    assert!(report.issues.iter().any(|i| matches!(i, ScheduleIssue::SharedAreaOverlap { .. })), "{report}");
}

#[test]
fn unknown_actor_in_schedule_is_reported() {
    let job = random_small_job(1, 4);
    let mut s = solve(&build_model(&job).unwrap(), SolveLimits::unlimited()).schedule.unwrap();
    let id = s.tasks.keys().next().unwrap().clone();
    s.tasks.get_mut(&id).unwrap().actor = ActorId::new("nobody");
    assert!(check_schedule(&job, &s).issues.iter().any(|i| matches!(i, ScheduleIssue::UnknownActor { .. })));
}
