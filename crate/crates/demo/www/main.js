import init, { generateCase, solveJob, simulate } from "./pkg/cobos_demo.js";

const $ = (id) => document.getElementById(id);

function say(text, error = false) {
  $("status").textContent = text;
  $("status").className = error ? "error" : "";
}

function draw(gantt) {
  const chart = $("chart");
  chart.replaceChildren();
  const span = Math.max(gantt.makespan, 1);
  for (const row of gantt.rows) {
    const line = document.createElement("div");
    line.className = "row";
    const who = document.createElement("div");
    who.className = "who";
    who.textContent = `${row.robot ? "🤖" : "🧑"} ${row.actor}`;
    const lane = document.createElement("div");
    lane.className = "lane";
    for (const bar of row.bars) {
      const el = document.createElement("div");
      el.className = `bar ${bar.phase}`;
      el.style.left = `${(100 * bar.start) / span}%`;
      el.style.width = `${(100 * (bar.end - bar.start)) / span}%`;
      el.title = `${bar.task} ${bar.phase} [${bar.start}, ${bar.end})`;
      el.textContent = bar.phase === "exec" ? bar.task : "";
      lane.append(el);
    }
    line.append(who, lane);
    chart.append(line);
  }
  const axis = document.createElement("div");
  axis.className = "axis";
  axis.textContent = `0 … ${gantt.makespan} ticks`;
  chart.append(axis);
}

function guarded(action) {
  return () => {
    try {
      action();
    } catch (e) {
      say(e.message ?? String(e), true);
    }
  };
}

function generate() {
  const job = generateCase(Number($("case").value), Number($("seed").value));
  $("job").value = job;
  const n = JSON.parse(job).tasks.length;
  say(`case ${$("case").value}: ${n} tasks`);
  $("chart").replaceChildren();
}

function solve() {
  const t0 = performance.now();
  const out = JSON.parse(solveJob($("job").value, Number($("nodes").value)));
  const ms = (performance.now() - t0).toFixed(0);
  if (!out.gantt) {
    say(`${out.status} after ${out.nodes} nodes`, true);
    return;
  }
  say(`plan: ${out.status}, makespan ${out.gantt.makespan}, ${out.nodes} nodes, ${ms} ms`);
  draw(out.gantt);
}

function run() {
  const out = JSON.parse(simulate($("job").value, $("method").value, Number($("runseed").value)));
  say(`run: ${out.status}, makespan ${out.makespan ?? "–"}, ` +
      `${out.rejections} rejections, ${out.reschedules} reschedules`);
  if (out.gantt) draw(out.gantt);
}

await init();
$("generate").onclick = guarded(generate);
$("solve").onclick = guarded(solve);
$("simulate").onclick = guarded(run);
guarded(generate)();
