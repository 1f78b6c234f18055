import init, { rate_curves, cancellation, simulate, default_config } from "./pkg/facar_web.js";

const COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];
const $ = (id) => document.getElementById(id);
const num = (id) => parseFloat($(id).value);

function plot(canvas, series, xmax, ymax, xlabel, ylabel) {
  const ctx = canvas.getContext("2d");
  const W = canvas.width, H = canvas.height, pad = 40;
  ctx.clearRect(0, 0, W, H);
  const sx = (x) => pad + (x / xmax) * (W - 2 * pad);
  const sy = (y) => H - pad - (y / ymax) * (H - 2 * pad);
  ctx.strokeStyle = "#000";
  ctx.beginPath();
  ctx.moveTo(pad, pad); ctx.lineTo(pad, H - pad); ctx.lineTo(W - pad, H - pad);
  ctx.stroke();
  ctx.fillStyle = "#000";
  ctx.fillText(xlabel, W / 2, H - 10);
  ctx.fillText(ylabel, 5, pad - 10);
  ctx.fillText("0", pad - 12, H - pad + 12);
  ctx.fillText(String(xmax), W - pad - 10, H - pad + 12);
  ctx.fillText(String(ymax), pad - 30, pad + 4);
  series.forEach((s, i) => {
    ctx.strokeStyle = COLORS[i % COLORS.length];
    ctx.beginPath();
    s.x.forEach((x, k) => (k ? ctx.lineTo(sx(x), sy(s.y[k])) : ctx.moveTo(sx(x), sy(s.y[k]))));
    ctx.stroke();
    ctx.fillStyle = ctx.strokeStyle;
    ctx.fillText(s.name, W - pad - 60, pad + 14 * i);
  });
}

function table(el, header, rows) {
  el.innerHTML = "<tr>" + header.map((h) => `<th>${h}</th>`).join("") + "</tr>" +
    rows.map((r) => "<tr>" + r.map((c) => `<td>${c}</td>`).join("") + "</tr>").join("");
}

function guarded(errId, f) {
  return () => {
    $(errId).textContent = "";
    try { f(); } catch (e) { $(errId).textContent = String(e); }
  };
}

const fmt = (v) => (Number.isFinite(v) ? v.toFixed(4) : String(v));

function drawRates() {
  const rmax = num("rc-rmax");
  const c = JSON.parse(rate_curves(num("rc-theta"), num("rc-h"), rmax, 300));
  const ymax = Math.max(1, ...c.car, ...c.mr, ...c.lsr);
  plot($("rc-canvas"), [
    { name: "CAR", x: c.r, y: c.car },
    { name: "MR", x: c.r, y: c.mr },
    { name: "LSR", x: c.r, y: c.lsr },
  ], rmax, Math.ceil(ymax), "r", "η*");
}

function drawCancellation() {
  const c = JSON.parse(cancellation(num("cx-a"), num("cx-h"), num("cx-delta")));
  table($("cx-table"), ["j", "β/τ", "MR/τ", "MR rank", "T*/(nτ²)", "FA-CAR rank"],
    c.variable.map((v, i) => [v, fmt(c.beta_over_tau[i]), fmt(c.mr[i]), c.mr_rank[i],
      fmt(c.facar[i]), c.facar_rank[i]]));
}

function runSimulation() {
  $("sim-status").textContent = "running…";
  setTimeout(guarded("sim-err", () => {
    const t0 = performance.now();
    try {
      const res = JSON.parse(simulate($("sim-config").value));
      plot($("sim-canvas"), res.map((m) => ({ name: m.method, x: m.fpr, y: m.tpr })), 1, 1, "FPR", "TPR");
      table($("sim-table"), ["method", "SP", "mean type II", "median size", "failed reps"],
        res.map((m) => [m.method, fmt(m.sp), fmt(m.type2_mean), m.size_median, m.reps_failed]));
    } finally {
      $("sim-status").textContent = `${((performance.now() - t0) / 1000).toFixed(1)} s`;
    }
  }), 10);
}

await init();
$("sim-config").value = default_config();
$("rc-go").onclick = guarded("rc-err", drawRates);
$("cx-go").onclick = guarded("cx-err", drawCancellation);
$("sim-go").onclick = runSimulation;
guarded("rc-err", drawRates)();
guarded("cx-err", drawCancellation)();
