use std::collections::BTreeSet;

use cobos_core::agents::ControllerKind;
use cobos_core::bench::{
    emit_plot_data, emit_table, mean, percentile, records_jsonl, run_grid, sample_std, summarize, write_reports,
    ExperimentGrid,
};
use cobos_core::cases::CaseSpec;
use proptest::prelude::*;

fn tiny(case_id: u8, methods: Vec<ControllerKind>, n_instances: usize, n_seeds: usize) -> ExperimentGrid {
    ExperimentGrid {
        cases: vec![CaseSpec::for_case(case_id, 0).unwrap()],
        methods,
        n_instances,
        n_seeds,
        rejection_modes: vec![true],
        parallelism: 1,
        ..ExperimentGrid::desk()
    }
}

#[test]
fn one_record_per_seed() {
    let records = run_grid(&tiny(3, vec![ControllerKind::CoBOS], 1, 2)).unwrap();
    assert_eq!(records.len(), 2);
    assert_ne!(records[0].run.seed, records[1].run.seed);
    for r in &records {
        assert!(r.run.completed());
        let lb = r.lower_bound.unwrap();
        assert_eq!(r.normalized, Some(f64::from(r.run.makespan.unwrap()) / f64::from(lb)));
        assert!(r.normalized.unwrap() >= 1.0);
    }
}

#[test]
fn grids_are_reproducible_across_worker_counts() {
    let grid = ExperimentGrid { rejection_modes: vec![true, false], ..tiny(6, ControllerKind::ALL.to_vec(), 2, 2) };
    let a = records_jsonl(&run_grid(&grid).unwrap()).unwrap();
    let b = records_jsonl(&run_grid(&ExperimentGrid { parallelism: 3, ..grid.clone() }).unwrap()).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.lines().count(), grid.total_runs());
    let seeds: BTreeSet<u64> = run_grid(&grid).unwrap().iter().map(|r| r.run.seed).collect();
    assert_eq!(seeds.len(), 4, "one seed per instance and seed index");
}

#[test]
fn perfect_runs_summarize_to_one() {
    let mut records = run_grid(&tiny(1, vec![ControllerKind::MD, ControllerKind::DA], 1, 3)).unwrap();
    for r in &mut records {
        r.normalized = Some(1.0);
    }
    let rows = summarize(&records).unwrap();
    assert_eq!(rows.len(), 2);
    for row in &rows {
        assert_eq!((row.mean, row.std, row.p10, row.p90), (1.0, 0.0, 1.0, 1.0));
        assert_eq!(row.runs, 3);
        assert_eq!(row.failures, 0);
    }
    let table = emit_table(&rows);
    assert!(table.contains("MD") && table.contains("DA"));
    assert!(table.contains("1.000"));
    let plot = emit_plot_data(&records);
    assert!(serde_json::to_value(&plot).unwrap().is_object());
}

#[test]
fn reports_are_written() {
    let dir = std::env::temp_dir().join(format!("cobos-bench-{}", std::process::id()));
    let records = run_grid(&tiny(2, vec![ControllerKind::RA], 1, 2)).unwrap();
    let rows = write_reports(&dir, &records).unwrap();
    assert_eq!(rows.len(), 1);
    for name in ["records.jsonl", "summary.csv", "table.txt", "plotdata.json", "latency.csv"] {
        let text = std::fs::read_to_string(dir.join(name)).unwrap();
        assert!(!text.is_empty(), "{name}");
    }
    let jsonl = std::fs::read_to_string(dir.join("records.jsonl")).unwrap();
    assert_eq!(jsonl, records_jsonl(&records).unwrap());
    std::fs::remove_dir_all(dir).unwrap();
}

#[test]
fn invalid_grids_are_refused() {
    assert!(run_grid(&tiny(1, vec![], 1, 1)).is_err());
    assert!(run_grid(&tiny(1, vec![ControllerKind::RA], 0, 1)).is_err());
    let grid: ExperimentGrid = serde_json::from_str(r#"{"n_seeds": 3, "methods": ["cobos", "da"]}"#).unwrap();
    assert_eq!(grid.total_runs(), 7 * 2 * 10 * 3 * 2);
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 256, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn statistics_match_their_definitions(values in prop::collection::vec(0.5f64..3.0, 2..40)) {
        let n = values.len() as f64;
        let mu = values.iter().sum::<f64>() / n;
        prop_assert!((mean(&values) - mu).abs() < 1e-12);
        let var = values.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / (n - 1.0);
        prop_assert!((sample_std(&values) - var.sqrt()).abs() < 1e-9);
        let mut sorted = values.clone();
        sorted.sort_by(f64::total_cmp);
        for p in [10.0, 50.0, 90.0] {
            let v = percentile(&sorted, p);
            let at_or_below = sorted.iter().filter(|&&x| x <= v).count() as f64;
            prop_assert!(at_or_below / n >= p / 100.0);
            let below = sorted.iter().filter(|&&x| x < v).count() as f64;
            prop_assert!(below / n < p / 100.0);
        }
    }
}
