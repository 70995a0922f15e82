import init, { phase_scan, moments, interference } from "./pkg/geophase_wasm.js";

const COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"];
const canvas = document.getElementById("plot");
const ctx = canvas.getContext("2d");
const status = document.getElementById("status");
const legend = document.getElementById("legend");

function params() {
  const v = (id) => Number(document.getElementById(id).value);
  return [v("mu_b"), v("lambda"), v("theta"), v("t_final"), v("dt"), v("n_traj") >>> 0, v("seed") >>> 0];
}

// series: [{label, x, y, err?, points?}]
function plot(series, xlabel) {
  const W = canvas.width, H = canvas.height, pad = 90;
  ctx.clearRect(0, 0, W, H);
  const xs = series.flatMap((s) => s.x);
  const ys = series.flatMap((s) => s.y.map((y, i) => [y - (s.err?.[i] ?? 0), y + (s.err?.[i] ?? 0)]).flat())
    .filter(Number.isFinite);
  let [x0, x1] = [Math.min(...xs), Math.max(...xs)];
  let [y0, y1] = [Math.min(...ys), Math.max(...ys)];
  if (y1 - y0 < 1e-9) { y0 -= 0.5; y1 += 0.5; }
  const m = 0.05 * (y1 - y0); y0 -= m; y1 += m;
  const px = (x) => pad + (x - x0) / (x1 - x0 || 1) * (W - 2 * pad);
  const py = (y) => H - pad + (y0 - y) / (y1 - y0) * (H - 2 * pad);

  ctx.strokeStyle = "#888"; ctx.lineWidth = 2; ctx.font = "26px sans-serif"; ctx.fillStyle = "#333";
  ctx.strokeRect(pad, pad, W - 2 * pad, H - 2 * pad);
  for (let k = 0; k <= 4; k++) {
    const xv = x0 + (x1 - x0) * k / 4, yv = y0 + (y1 - y0) * k / 4;
    ctx.fillText(xv.toFixed(2), px(xv) - 25, H - pad + 35);
    ctx.fillText(yv.toFixed(3), 5, py(yv) + 8);
  }
  ctx.fillText(xlabel, W / 2 - 20, H - 15);

  legend.innerHTML = "";
  series.forEach((s, j) => {
    const c = COLORS[j % COLORS.length];
    ctx.strokeStyle = c; ctx.fillStyle = c; ctx.lineWidth = 3;
    if (s.err) {
      ctx.globalAlpha = 0.2; ctx.beginPath();
      s.x.forEach((x, i) => ctx.lineTo(px(x), py(s.y[i] + s.err[i])));
      for (let i = s.x.length - 1; i >= 0; i--) ctx.lineTo(px(s.x[i]), py(s.y[i] - s.err[i]));
      ctx.fill(); ctx.globalAlpha = 1;
    }
    ctx.beginPath();
    s.x.forEach((x, i) => Number.isFinite(s.y[i]) && (s.points
      ? ctx.fillRect(px(x) - 5, py(s.y[i]) - 5, 10, 10)
      : ctx.lineTo(px(x), py(s.y[i]))));
    ctx.stroke();
    legend.insertAdjacentHTML("beforeend", `<span style="color:${c}">&#9632; ${s.label}</span>`);
  });
}

function timed(label, f) {
  status.textContent = `${label}: running...`;
  setTimeout(() => {
    const t0 = performance.now();
    try {
      const msg = f();
      status.textContent = `${label}: ${((performance.now() - t0) / 1000).toFixed(2)} s\n${msg}`;
    } catch (e) {
      status.textContent = `${label}: ${e.message ?? e}`;
    }
  }, 10);
}

function doScan() {
  timed("phase scan", () => {
    const rows = JSON.parse(phase_scan(...params(), 9));
    const x = rows.map((r) => r.phi);
    const nan = (v) => v ?? NaN;
    plot([
      { label: "total", x, y: rows.map((r) => nan(r.total)), err: rows.map((r) => 3 * r.total_se) },
      { label: "mean dynamical", x, y: rows.map((r) => r.dynamical), err: rows.map((r) => 3 * r.dynamical_se) },
      { label: "geometric", x, y: rows.map((r) => nan(r.geometric)), err: rows.map((r) => 3 * r.geometric_se) },
    ], "gauge angle phi");
    return "bands are 3 standard errors; the total phase is flat in phi";
  });
}

function doMoments() {
  timed("moments", () => {
    const curves = JSON.parse(moments(...params(), new Float64Array([0, Math.PI / 4, Math.PI / 2])));
    const series = [{ label: "E<sz> (all phi)", x: curves[0].t, y: curves[0].mean_sz, err: curves[0].stderr_sz.map((s) => 3 * s) }];
    for (const c of curves) {
      series.push({ label: `E<sz>^2, phi=${c.phi.toFixed(3)}`, x: c.t, y: c.mean_sz2, err: c.stderr_sz2.map((s) => 3 * s) });
    }
    plot(series, "t");
    return "E<sz> is gauge independent; the spread of <sz> across trajectories is not";
  });
}

function doFringe() {
  const phi = Number(document.getElementById("phi").value);
  timed("fringe", () => {
    const r = JSON.parse(interference(...params(), phi, 48));
    const fit = r.chi.map((c) => 0.5 + 0.5 * r.fit_visibility * Math.cos(c + r.fit_phase));
    plot([
      { label: "averaged intensity", x: r.chi, y: r.intensity, err: r.intensity_se.map((s) => 3 * s), points: true },
      { label: "fit", x: r.chi, y: fit },
    ], "analyser phase chi");
    return `visibility ${r.visibility.toFixed(6)} (fit ${r.fit_visibility?.toFixed(6)}), ` +
      `total phase ${r.total_phase?.toFixed(6)} (fit ${r.fit_phase?.toFixed(6)})`;
  });
}

await init();
document.getElementById("scan").onclick = doScan;
document.getElementById("moments").onclick = doMoments;
document.getElementById("fringe").onclick = doFringe;
status.textContent = "ready";
doScan();
