use std::collections::BTreeSet;

use cobos_core::cases::{generate_case, generate_instance_set, CaseSpec, Taxonomy, AREA, HUMAN, ROBOT};
use cobos_core::domain::{topological_layers, validate_job, ActorId, AreaId};
use proptest::prelude::*;

#[test]
fn same_seed_same_job() {
    let spec = CaseSpec::for_case(7, 1234).unwrap();
    let a = serde_json::to_string(&generate_case(&spec).unwrap()).unwrap();
    let b = serde_json::to_string(&generate_case(&spec).unwrap()).unwrap();
    assert_eq!(a, b);
    let other = generate_case(&CaseSpec::for_case(7, 1235).unwrap()).unwrap();
    assert_ne!(a, serde_json::to_string(&other).unwrap());
}

#[test]
fn instance_sets_are_distinct() {
    let jobs = generate_instance_set(7, 10, 0).unwrap();
    assert_eq!(jobs.len(), 10);
    let unique: BTreeSet<String> = jobs.iter().map(|j| serde_json::to_string(j).unwrap()).collect();
    assert_eq!(unique.len(), 10);
    assert_eq!(generate_instance_set(1, 1, 0).unwrap().len(), 1);
    let again = generate_instance_set(7, 10, 0).unwrap();
    assert_eq!(again, jobs);
}

#[test]
fn taxonomy_labels() {
    let labels: Vec<Taxonomy> = (1..=7).map(|c| CaseSpec::for_case(c, 0).unwrap().taxonomy).collect();
    assert_eq!(labels[0], Taxonomy::ND);
    assert_eq!(labels[2], Taxonomy::XD);
    assert_eq!(labels[6], Taxonomy::CD);
    assert!(CaseSpec::for_case(0, 0).is_err());
    assert!(CaseSpec::for_case(8, 0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 70, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn generated_jobs_have_the_case_shape(case_id in 1u8..=7, seed in any::<u64>()) {
        let spec = CaseSpec::for_case(case_id, seed).unwrap();
        let job = generate_case(&spec).unwrap();
        let report = validate_job(&job);
        prop_assert!(report.is_valid(), "{:?}", report);

        let robot = ActorId::new(ROBOT);
        let human = ActorId::new(HUMAN);
        prop_assert_eq!(job.actors.len(), 2);
        for t in &job.tasks {
            prop_assert_eq!(t.shared_area.as_ref(), Some(&AreaId::new(AREA)));
            let allocatable = t.eligible_actors.len() == 2;
            if allocatable {
                let p = t.reject_prob.get(&human).copied().unwrap_or(0.0);
                prop_assert!((spec.reject_range.0..=spec.reject_range.1).contains(&p), "{}", p);
                prop_assert!(!t.reject_prob.contains_key(&robot));
            } else {
                prop_assert!(t.reject_prob.values().all(|&p| p == 0.0));
            }
            for (phase, &(lo, hi)) in spec.estimate_ranges.iter().enumerate() {
                let e = t.estimates.as_array()[phase];
                prop_assert!((lo..=hi).contains(&e));
            }
        }
        let allocatable = job.tasks.iter().filter(|t| t.eligible_actors.len() == 2).count();
        if spec.allocatable_fraction == 0.0 {
            prop_assert_eq!(allocatable, 0);
        } else {
            let want = (spec.allocatable_fraction * job.tasks.len() as f64).round() as usize;
            prop_assert_eq!(allocatable, want);
        }
        for actor in [&robot, &human] {
            prop_assert!(job.tasks.iter().any(|t| t.eligible_actors.contains(actor)));
        }

        let layers = topological_layers(&job).unwrap();
        match case_id {
            1 | 2 => {
                prop_assert_eq!(job.tasks.len(), 8);
                prop_assert!(job.edges.is_empty());
            }
            3 | 4 => {
                prop_assert_eq!(job.tasks.len(), 9);
                prop_assert_eq!(job.edges.len(), 6);
                prop_assert_eq!(layers.len(), 3);
            }
            5 | 6 => {
                prop_assert_eq!(job.tasks.len(), 16);
                prop_assert_eq!(layers.len(), 4);
            }
            _ => {
                prop_assert!((20..=28).contains(&job.tasks.len()));
                prop_assert!(layers.len() <= 5);
            }
        }
    }
}
