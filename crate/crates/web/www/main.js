import init, { collisionCurve, goldenPaths, segmentationSweep } from "./pkg/masstrav_web.js";

const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);
const status = $("status");

function fail(e) {
  status.textContent = String(e.message ?? e);
  status.className = "err";
}

function drawCurve() {
  let pts;
  try {
    pts = JSON.parse(collisionCurve(num("c-mass"), num("c-density"), num("c-width"), num("c-particle"), num("c-length"), 200));
  } catch (e) {
    return fail(e);
  }
  status.textContent = "";
  const cv = $("curve");
  const ctx = cv.getContext("2d");
  const pad = 36;
  const w = cv.width - 2 * pad;
  const h = cv.height - 2 * pad;
  const maxL = pts[pts.length - 1].length_m || 1;
  ctx.clearRect(0, 0, cv.width, cv.height);
  ctx.strokeStyle = "#999";
  ctx.strokeRect(pad, pad, w, h);
  ctx.fillStyle = "#444";
  ctx.fillText("α = 1", 2, pad + 4);
  ctx.fillText("0", 20, pad + h + 4);
  ctx.fillText(`${maxL} m`, pad + w - 24, pad + h + 16);
  for (const [key, color] of [["discrete", "#c33"], ["continuous", "#36c"]]) {
    ctx.strokeStyle = color;
    ctx.beginPath();
    pts.forEach((p, i) => {
      const x = pad + (p.length_m / maxL) * w;
      const y = pad + (1 - p[key]) * h;
      i ? ctx.lineTo(x, y) : ctx.moveTo(x, y);
    });
    ctx.stroke();
  }
}

function shade(v, init, top) {
  // log scale, free bright, dense dark
  const t = Math.log1p(v) / Math.log1p(Math.max(top, init, 1));
  const g = Math.round(235 * (1 - t) + 20);
  return `rgb(${g},${g},${g})`;
}

function alphaColor(a) {
  const r = Math.round(220 * (1 - a));
  const g = Math.round(180 * a);
  return `rgb(${r},${g},40)`;
}

function drawGrid() {
  status.textContent = "Mapping…";
  setTimeout(() => {
    let view;
    try {
      view = JSON.parse(goldenPaths(num("g-mass"), num("g-plants"), num("g-other")));
    } catch (e) {
      return fail(e);
    }
    status.textContent = "";
    const cv = $("grid");
    const ctx = cv.getContext("2d");
    const s = Math.min(cv.width / view.width, cv.height / view.height);
    const top = Math.max(...view.values);
    ctx.clearRect(0, 0, cv.width, cv.height);
    for (let r = 0; r < view.height; r++) {
      for (let c = 0; c < view.width; c++) {
        const k = r * view.width + c;
        ctx.fillStyle = view.observed[k] ? shade(view.values[k], view.init_density, top) : "#e9d8a6";
        ctx.fillRect(c * s, (view.height - 1 - r) * s, s, s);
      }
    }
    const [oi, oj] = view.origin_cell;
    const toPx = ([x, y]) => [
      (x / view.cell_size - oi) * s,
      (view.height - (y / view.cell_size - oj)) * s,
    ];
    for (const p of view.paths) {
      ctx.strokeStyle = alphaColor(p.alpha);
      ctx.lineWidth = Math.max(2, (p.width / view.cell_size) * s);
      ctx.globalAlpha = 0.6;
      ctx.beginPath();
      p.waypoints.forEach((w, i) => {
        const [x, y] = toPx(w);
        i ? ctx.lineTo(x, y) : ctx.moveTo(x, y);
      });
      ctx.stroke();
      ctx.globalAlpha = 1;
      ctx.fillStyle = "#000";
      const [x, y] = toPx(p.waypoints[0]);
      ctx.fillText(p.id, x + 2, y - 6);
    }
    ctx.lineWidth = 1;
    $("g-table").innerHTML =
      "<tr><th>path</th><th>α</th><th>mass (kg)</th></tr>" +
      view.paths
        .map((p) => `<tr class="${p.id === view.selected ? "best" : ""}"><td>${p.id}</td><td>${p.alpha.toFixed(4)}</td><td>${p.integrated_mass_kg.toFixed(1)}</td></tr>`)
        .join("");
  }, 10);
}

function runSweep() {
  status.textContent = "Benchmarking…";
  setTimeout(() => {
    let rows;
    try {
      rows = JSON.parse(segmentationSweep(num("s-noise"), num("s-seed")));
    } catch (e) {
      return fail(e);
    }
    status.textContent = "";
    $("s-table").innerHTML =
      "<tr><th>method</th><th>IoU</th><th>precision</th><th>recall</th><th>F1</th></tr>" +
      rows
        .map((r, i) => `<tr class="${i === 0 ? "best" : ""}"><td>${r.method}</td><td>${r.iou.toFixed(3)}</td><td>${r.precision.toFixed(3)}</td><td>${r.recall.toFixed(3)}</td><td>${r.f1.toFixed(3)}</td></tr>`)
        .join("");
  }, 10);
}

await init();
status.textContent = "";
for (const id of ["c-mass", "c-density", "c-width", "c-particle", "c-length"]) {
  $(id).addEventListener("input", drawCurve);
}
$("g-run").addEventListener("click", drawGrid);
$("s-run").addEventListener("click", runSweep);
drawCurve();
drawGrid();
