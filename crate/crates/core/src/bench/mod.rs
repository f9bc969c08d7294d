//! Batch experiments: the method × case × instance × seed grid, perfect-information
//! lower bounds, normalized makespans and the reports built from them.
//!
//! Statistics use the sample standard deviation (`n - 1` denominator) and
//! nearest-rank percentiles: the `p`-th percentile of `n` sorted values is the
//! value at rank `ceil(p / 100 * n)`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::ControllerKind;
use crate::cases::{generate_instance_set, CaseError, CaseSpec};
use crate::domain::{Instance, Tick};
use crate::rng::derive_seed;
use crate::sim::{outcomes_for, run_with_outcomes, RunRecord, RunStatus, SimConfig, DEFAULT_NODE_LIMIT};
use crate::solver::{lower_bound_perfect_information, SolveLimits};

/// Node budget of a perfect-information lower-bound solve.
pub const DEFAULT_BOUND_NODE_LIMIT: u64 = 200_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentGrid {
    /// Case templates; their `seed` is ignored in favour of `base_seed`.
    pub cases: Vec<CaseSpec>,
    pub methods: Vec<ControllerKind>,
    pub n_instances: usize,
    pub n_seeds: usize,
    /// `true` runs with rejection, `false` without.
    pub rejection_modes: Vec<bool>,
    /// Worker threads; 0 uses every core.
    pub parallelism: usize,
    pub base_seed: u64,
    pub true_estimates: bool,
    pub solve_limits: SolveLimits,
    pub bound_limits: SolveLimits,
}

impl Default for ExperimentGrid {
    fn default() -> Self {
        Self::desk()
    }
}

impl ExperimentGrid {
    /// 7 cases × 4 methods × 10 instances × 25 seeds × 2 rejection modes.
    pub fn desk() -> Self {
        Self {
            cases: (1..=7).map(|c| CaseSpec::for_case(c, 0).expect("cases 1..=7 exist")).collect(),
            methods: ControllerKind::ALL.to_vec(),
            n_instances: 10,
            n_seeds: 25,
            rejection_modes: vec![true, false],
            parallelism: 0,
            base_seed: 0,
            true_estimates: false,
            solve_limits: SolveLimits::nodes(DEFAULT_NODE_LIMIT),
            bound_limits: SolveLimits::nodes(DEFAULT_BOUND_NODE_LIMIT),
        }
    }

    /// The desk grid with 100 seeds per instance.
    pub fn full() -> Self {
        Self { n_seeds: 100, ..Self::desk() }
    }

    pub fn total_runs(&self) -> usize {
        self.cases.len() * self.methods.len() * self.n_instances * self.n_seeds * self.rejection_modes.len()
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        let bad = |m: &str| Err(BenchError::InvalidGrid(m.to_string()));
        if self.cases.is_empty() || self.methods.is_empty() || self.rejection_modes.is_empty() {
            return bad("cases, methods and rejection_modes must be non-empty");
        }
        if self.n_instances == 0 || self.n_seeds == 0 {
            return bad("n_instances and n_seeds must be positive");
        }
        for spec in &self.cases {
            spec.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error(transparent)]
    Case(#[from] CaseError),
    #[error("no successful run for case {case_id} with method {method}")]
    EmptyCell { case_id: u8, method: ControllerKind },
    #[error("failed to build the worker pool: {0}")]
    Pool(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// One grid run with its lower bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRecord {
    pub case_id: u8,
    pub instance: usize,
    pub seed_index: usize,
    #[serde(flatten)]
    pub run: RunRecord,
    pub lower_bound: Option<Tick>,
    pub normalized: Option<f64>,
}

/// Bounds and runs for one (case, instance, seed, rejection mode).
struct Unit {
    case_id: u8,
    instance: usize,
    seed_index: usize,
    rejection: bool,
    job: Arc<Instance>,
}

fn run_unit(grid: &ExperimentGrid, u: &Unit) -> Vec<GridRecord> {
    let seed = derive_seed(grid.base_seed, &[u64::from(u.case_id), u.instance as u64, u.seed_index as u64]);
    let config = SimConfig {
        rejection: u.rejection,
        true_estimates: grid.true_estimates,
        solve_limits: grid.solve_limits,
        record_trace: false,
        ..SimConfig::default()
    };
    let outcomes = outcomes_for(&u.job, seed, &config);
    let bound = lower_bound_perfect_information(&u.job, &outcomes, grid.bound_limits);
    grid.methods
        .iter()
        .map(|&method| {
            let mut run = run_with_outcomes(&u.job, outcomes.clone(), method, seed, &config);
            let (lower_bound, normalized) = match &bound {
                Ok(lb) => (Some(*lb), run.makespan.filter(|_| run.completed()).map(|m| m as f64 / *lb as f64)),
                Err(e) => {
                    if run.error.is_none() {
                        run.error = Some(format!("lower bound: {e}"));
                    }
                    (None, None)
                }
            };
            GridRecord {
                case_id: u.case_id,
                instance: u.instance,
                seed_index: u.seed_index,
                run,
                lower_bound,
                normalized,
            }
        })
        .collect()
}

fn sort_key(r: &GridRecord) -> (u8, usize, usize, bool, ControllerKind) {
    (r.case_id, r.instance, r.seed_index, !r.run.rejection, r.run.method)
}

/// Runs the whole grid. Results are sorted by case, instance, seed, rejection
/// mode (on first) and method, and do not depend on the number of workers.
/// Failed runs are kept with their status and error.
pub fn run_grid(grid: &ExperimentGrid) -> Result<Vec<GridRecord>, BenchError> {
    grid.validate()?;
    let mut units = Vec::new();
    for spec in &grid.cases {
        let jobs = generate_instance_set(
            spec.case_id,
            grid.n_instances,
            derive_seed(grid.base_seed, &[u64::from(spec.case_id)]),
        )?;
        for (i, job) in jobs.into_iter().enumerate() {
            let job = Arc::new(Instance::new(job).map_err(|r| BenchError::InvalidGrid(r.to_string()))?);
            for s in 0..grid.n_seeds {
                for &rejection in &grid.rejection_modes {
                    units.push(Unit {
                        case_id: spec.case_id,
                        instance: i,
                        seed_index: s,
                        rejection,
                        job: Arc::clone(&job),
                    });
                }
            }
        }
    }
    let mut records = run_units(grid, &units)?;
    records.sort_by_key(sort_key);
    Ok(records)
}

#[cfg(feature = "parallel")]
fn run_units(grid: &ExperimentGrid, units: &[Unit]) -> Result<Vec<GridRecord>, BenchError> {
    use rayon::prelude::*;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(grid.parallelism)
        .build()
        .map_err(|e| BenchError::Pool(e.to_string()))?;
    Ok(pool.install(|| units.par_iter().flat_map_iter(|u| run_unit(grid, u)).collect()))
}

#[cfg(not(feature = "parallel"))]
fn run_units(grid: &ExperimentGrid, units: &[Unit]) -> Result<Vec<GridRecord>, BenchError> {
    Ok(units.iter().flat_map(|u| run_unit(grid, u)).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub case_id: u8,
    pub method: ControllerKind,
    pub runs: usize,
    pub failures: usize,
    pub mean: f64,
    pub std: f64,
    pub p10: f64,
    pub p90: f64,
    pub latency_mean_ms: f64,
    pub latency_max_ms: f64,
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample standard deviation; 0 for fewer than two values.
pub fn sample_std(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values);
    (values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (values.len() - 1) as f64).sqrt()
}

/// Nearest-rank percentile of sorted values.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let rank = ((p / 100.0) * n as f64).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

/// One row per (case, method) over both rejection modes.
pub fn summarize(records: &[GridRecord]) -> Result<Vec<SummaryRow>, BenchError> {
    let mut cells: BTreeMap<(u8, ControllerKind), Vec<&GridRecord>> = BTreeMap::new();
    for r in records {
        cells.entry((r.case_id, r.run.method)).or_default().push(r);
    }
    let mut rows = Vec::with_capacity(cells.len());
    for ((case_id, method), rs) in cells {
        let mut values: Vec<f64> = rs.iter().filter_map(|r| r.normalized).collect();
        if values.is_empty() {
            return Err(BenchError::EmptyCell { case_id, method });
        }
        values.sort_by(f64::total_cmp);
        let latencies: Vec<f64> =
            rs.iter().flat_map(|r| r.run.decision_latencies_us.iter().map(|&us| us as f64 / 1000.0)).collect();
        rows.push(SummaryRow {
            case_id,
            method,
            runs: rs.len(),
            failures: rs.len() - values.len(),
            mean: mean(&values),
            std: sample_std(&values),
            p10: percentile(&values, 10.0),
            p90: percentile(&values, 90.0),
            latency_mean_ms: if latencies.is_empty() { 0.0 } else { mean(&latencies) },
            latency_max_ms: latencies.iter().copied().fold(0.0, f64::max),
        });
    }
    Ok(rows)
}

/// Cases down, methods across, four statistic rows (μ, 10%, 90%, σ) per case.
pub fn emit_table(rows: &[SummaryRow]) -> String {
    let mut methods: Vec<ControllerKind> = rows.iter().map(|r| r.method).collect();
    methods.sort();
    methods.dedup();
    let mut by_case: BTreeMap<u8, BTreeMap<ControllerKind, &SummaryRow>> = BTreeMap::new();
    for r in rows {
        by_case.entry(r.case_id).or_default().insert(r.method, r);
    }
    let mut out = String::new();
    let _ = write!(out, "{:<6}{:<6}", "case", "stat");
    for m in &methods {
        let _ = write!(out, "{:>9}", m.label());
    }
    out.push('\n');
    type Stat = (&'static str, fn(&SummaryRow) -> f64);
    let stats: [Stat; 4] = [("μ", |r| r.mean), ("10%", |r| r.p10), ("90%", |r| r.p90), ("σ", |r| r.std)];
    for (case_id, cells) in &by_case {
        for (i, (name, get)) in stats.iter().enumerate() {
            let case = if i == 0 { case_id.to_string() } else { String::new() };
            let _ = write!(out, "{case:<6}{name:<6}");
            for m in &methods {
                match cells.get(m) {
                    Some(r) => {
                        let _ = write!(out, "{:>9.3}", get(r));
                    }
                    None => {
                        let _ = write!(out, "{:>9}", "-");
                    }
                }
            }
            out.push('\n');
        }
    }
    out
}

/// Value lists per case and method, for plotting elsewhere.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PlotData {
    pub normalized: BTreeMap<u8, BTreeMap<ControllerKind, Vec<f64>>>,
    pub decision_latency_ms: BTreeMap<u8, BTreeMap<ControllerKind, Vec<f64>>>,
}

pub fn emit_plot_data(records: &[GridRecord]) -> PlotData {
    let mut plot = PlotData::default();
    for r in records {
        let cell = plot.normalized.entry(r.case_id).or_default().entry(r.run.method).or_default();
        cell.extend(r.normalized);
        plot.decision_latency_ms
            .entry(r.case_id)
            .or_default()
            .entry(r.run.method)
            .or_default()
            .extend(r.run.decision_latencies_us.iter().map(|&us| us as f64 / 1000.0));
    }
    plot
}

/// Decision and solve latency percentiles per (case, method), in ms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyRow {
    pub case_id: u8,
    pub method: ControllerKind,
    pub decisions: usize,
    pub p50_ms: f64,
    pub p99_ms: f64,
    pub max_ms: f64,
    pub solves: usize,
    pub solve_p99_ms: f64,
}

pub fn latency_report(records: &[GridRecord]) -> Vec<LatencyRow> {
    let mut cells: BTreeMap<(u8, ControllerKind), (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for r in records {
        let (d, s) = cells.entry((r.case_id, r.run.method)).or_default();
        d.extend(r.run.decision_latencies_us.iter().map(|&us| us as f64 / 1000.0));
        s.extend(r.run.solve_latencies_us.iter().map(|&us| us as f64 / 1000.0));
    }
    cells
        .into_iter()
        .map(|((case_id, method), (mut d, mut s))| {
            d.sort_by(f64::total_cmp);
            s.sort_by(f64::total_cmp);
            let pct = |v: &[f64], p| if v.is_empty() { 0.0 } else { percentile(v, p) };
            LatencyRow {
                case_id,
                method,
                decisions: d.len(),
                p50_ms: pct(&d, 50.0),
                p99_ms: pct(&d, 99.0),
                max_ms: d.last().copied().unwrap_or(0.0),
                solves: s.len(),
                solve_p99_ms: pct(&s, 99.0),
            }
        })
        .collect()
}

/// One JSON object per line, in record order.
pub fn records_jsonl(records: &[GridRecord]) -> Result<String, BenchError> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut out = String::from("case_id,method,runs,failures,mean,std,p10,p90,latency_mean_ms,latency_max_ms\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{:.6},{:.6},{:.6},{:.6},{:.3},{:.3}",
            r.case_id, r.method, r.runs, r.failures, r.mean, r.std, r.p10, r.p90, r.latency_mean_ms, r.latency_max_ms
        );
    }
    out
}

fn latency_csv(rows: &[LatencyRow]) -> String {
    let mut out = String::from("case_id,method,decisions,p50_ms,p99_ms,max_ms,solves,solve_p99_ms\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{:.3},{:.3},{:.3},{},{:.3}",
            r.case_id, r.method, r.decisions, r.p50_ms, r.p99_ms, r.max_ms, r.solves, r.solve_p99_ms
        );
    }
    out
}

/// Writes `records.jsonl`, `summary.csv`, `table.txt`, `plotdata.json` and
/// `latency.csv` into `dir`.
pub fn write_reports(dir: &Path, records: &[GridRecord]) -> Result<Vec<SummaryRow>, BenchError> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("records.jsonl"), records_jsonl(records)?)?;
    let rows = summarize(records)?;
    fs::write(dir.join("summary.csv"), summary_csv(&rows))?;
    fs::write(dir.join("table.txt"), emit_table(&rows))?;
    fs::write(dir.join("plotdata.json"), serde_json::to_string_pretty(&emit_plot_data(records))?)?;
    fs::write(dir.join("latency.csv"), latency_csv(&latency_report(records)))?;
    Ok(rows)
}

/// Count of runs per final status.
pub fn status_counts(records: &[GridRecord]) -> BTreeMap<RunStatus, usize> {
    let mut counts = BTreeMap::new();
    for r in records {
        *counts.entry(r.run.status).or_default() += 1;
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_rank_percentiles() {
        let v: Vec<f64> = (0..=10).map(|i| 1.0 + f64::from(i) / 10.0).collect();
        assert!((percentile(&v, 10.0) - 1.1).abs() < 1e-12);
        assert!((percentile(&v, 90.0) - 1.9).abs() < 1e-12);
        assert_eq!(percentile(&v, 0.0), 1.0);
        assert_eq!(percentile(&v, 100.0), 2.0);
    }

    #[test]
    fn sample_std_uses_n_minus_one() {
        assert!((sample_std(&[1.0, 3.0]) - 2f64.sqrt()).abs() < 1e-12);
        assert_eq!(sample_std(&[5.0]), 0.0);
    }

    #[test]
    fn empty_grid_is_invalid() {
        let grid = ExperimentGrid { methods: vec![], ..ExperimentGrid::desk() };
        assert!(matches!(grid.validate(), Err(BenchError::InvalidGrid(_))));
        assert_eq!(ExperimentGrid::desk().total_runs(), 14_000);
    }
}
