//! WebAssembly bindings behind `www/index.html`.
//!
//! Every function takes and returns JSON text so the page needs no glue
//! beyond `JSON.parse`.

use std::sync::Arc;

use cobos_core::agents::ControllerKind;
use cobos_core::cases::{generate_case, CaseSpec};
use cobos_core::domain::{ActorKind, Instance, Job, Phase, Schedule, Tick};
use cobos_core::sim::{run_sim, trace_to_schedule, SimConfig};
use cobos_core::solver::{build_model, solve, SolveLimits};
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GanttBar {
    pub task: String,
    pub phase: &'static str,
    pub start: Tick,
    pub end: Tick,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GanttRow {
    pub actor: String,
    pub robot: bool,
    pub bars: Vec<GanttBar>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Gantt {
    pub makespan: Tick,
    pub rows: Vec<GanttRow>,
}

fn gantt(job: &Job, schedule: &Schedule) -> Gantt {
    let rows = job
        .actors
        .iter()
        .map(|a| {
            let mut bars: Vec<GanttBar> = schedule
                .tasks
                .iter()
                .filter(|(_, st)| st.actor == a.id)
                .flat_map(|(id, st)| {
                    Phase::ALL.into_iter().map(move |p| GanttBar {
                        task: id.to_string(),
                        phase: p.name(),
                        start: st.phase(p).start,
                        end: st.phase(p).end,
                    })
                })
                .filter(|b| b.end > b.start)
                .collect();
            bars.sort_by_key(|b| b.start);
            GanttRow { actor: a.id.to_string(), robot: a.kind == ActorKind::Robot, bars }
        })
        .collect();
    Gantt { makespan: schedule.makespan, rows }
}

fn parse(job: &str) -> Result<Job, String> {
    serde_json::from_str(job).map_err(|e| format!("job does not parse: {e}"))
}

fn to_json<T: Serialize>(value: &T) -> Result<String, String> {
    serde_json::to_string(value).map_err(|e| e.to_string())
}

/// A case job as pretty JSON.
pub fn case_job(case_id: u8, seed: u64) -> Result<String, String> {
    let spec = CaseSpec::for_case(case_id, seed).map_err(|e| e.to_string())?;
    let job = generate_case(&spec).map_err(|e| e.to_string())?;
    serde_json::to_string_pretty(&job).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct Solved {
    status: String,
    nodes: u64,
    gantt: Option<Gantt>,
}

/// Offline plan over the estimates. A `node_limit` of 0 searches to the end.
pub fn plan(job: &str, node_limit: u32) -> Result<String, String> {
    let job = parse(job)?;
    let limits = if node_limit == 0 { SolveLimits::unlimited() } else { SolveLimits::nodes(node_limit.into()) };
    let result = solve(&build_model(&job).map_err(|e| e.to_string())?, limits);
    to_json(&Solved {
        status: format!("{:?}", result.status).to_lowercase(),
        nodes: result.stats.nodes,
        gantt: result.schedule.as_ref().map(|s| gantt(&job, s)),
    })
}

#[derive(Serialize)]
struct Simulated {
    status: String,
    makespan: Option<Tick>,
    rejections: u64,
    reschedules: u64,
    gantt: Option<Gantt>,
}

/// One closed-loop run; the chart shows what actually happened.
pub fn run(job: &str, method: &str, seed: u64) -> Result<String, String> {
    let job = parse(job)?;
    let method: ControllerKind = method.parse().map_err(|e: cobos_core::agents::UnknownMethod| e.to_string())?;
    let record = run_sim(&job, method, seed, &SimConfig::default()).map_err(|e| e.to_string())?;
    let instance = Arc::new(Instance::new(job.clone()).map_err(|e| e.to_string())?);
    let realized = trace_to_schedule(&record.trace, &instance).ok();
    to_json(&Simulated {
        status: format!("{:?}", record.status).to_lowercase(),
        makespan: record.makespan,
        rejections: record.rejections,
        reschedules: record.reschedules,
        gantt: realized.as_ref().map(|s| gantt(&job, s)),
    })
}

#[wasm_bindgen(js_name = generateCase)]
pub fn generate_case_js(case_id: u8, seed: u32) -> Result<String, JsError> {
    case_job(case_id, seed.into()).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = solveJob)]
pub fn solve_job_js(job: &str, node_limit: u32) -> Result<String, JsError> {
    plan(job, node_limit).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = simulate)]
pub fn simulate_js(job: &str, method: &str, seed: u32) -> Result<String, JsError> {
    run(job, method, seed.into()).map_err(|e| JsError::new(&e))
}
