import init, { cluster, train, gradcheck } from "./pkg/uflst_web.js";

const PALETTE = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
  "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"];

function formValues(form) {
  const out = {};
  for (const el of form.elements) {
    if (!el.name) continue;
    out[el.name] = el.type === "number" ? Number(el.value) : el.value;
  }
  return out;
}

function fmt(x, digits = 3) {
  return x === null || x === undefined || Number.isNaN(x) ? "–" : x.toFixed(digits);
}

// Run after the status text has painted; the wasm calls block the page.
function busy(statusId, work) {
  const status = document.getElementById(statusId);
  status.className = "status";
  status.textContent = "running…";
  setTimeout(() => {
    const t0 = performance.now();
    try {
      work();
      status.textContent = `done in ${((performance.now() - t0) / 1000).toFixed(2)} s`;
    } catch (e) {
      status.className = "status error";
      status.textContent = String(e);
    }
  }, 20);
}

function scatter(canvas, points, labels, title) {
  const ctx = canvas.getContext("2d");
  const { width: w, height: h } = canvas;
  ctx.clearRect(0, 0, w, h);
  const xs = points.map(p => p[0]), ys = points.map(p => p[1]);
  const [x0, x1, y0, y1] = [Math.min(...xs), Math.max(...xs), Math.min(...ys), Math.max(...ys)];
  const span = Math.max(x1 - x0, y1 - y0) || 1;
  const pad = 24;
  const sx = x => pad + ((x - x0) / span) * (w - 2 * pad);
  const sy = y => h - pad - ((y - y0) / span) * (h - 2 * pad);
  points.forEach((p, i) => {
    const l = labels[i];
    ctx.beginPath();
    if (l < 0) {
      ctx.strokeStyle = "#000";
      ctx.moveTo(sx(p[0]) - 3, sy(p[1]) - 3); ctx.lineTo(sx(p[0]) + 3, sy(p[1]) + 3);
      ctx.moveTo(sx(p[0]) + 3, sy(p[1]) - 3); ctx.lineTo(sx(p[0]) - 3, sy(p[1]) + 3);
      ctx.stroke();
    } else {
      ctx.fillStyle = PALETTE[l % PALETTE.length];
      ctx.arc(sx(p[0]), sy(p[1]), 3, 0, 2 * Math.PI);
      ctx.fill();
    }
  });
  ctx.fillStyle = "#222";
  ctx.fillText(title, 8, 14);
}

function table(headers, rows) {
  const head = "<tr>" + headers.map(h => `<th>${h}</th>`).join("") + "</tr>";
  const body = rows.map(r => "<tr>" + r.map(c => `<td>${c}</td>`).join("") + "</tr>").join("");
  return `<table>${head}${body}</table>`;
}

function onCluster(ev) {
  ev.preventDefault();
  const req = formValues(ev.target);
  busy("cluster-status", () => {
    const r = JSON.parse(cluster(JSON.stringify(req)));
    scatter(document.getElementById("truth"), r.points, r.truth, "true classes");
    scatter(document.getElementById("pseudo"), r.points, r.labels, "pseudo-labels (× = noise)");
    const warn = r.warnings.length ? `<br>${r.warnings.join("<br>")}` : "";
    document.getElementById("cluster-summary").innerHTML =
      `ε = ${fmt(r.epsilon, 4)}, fallback ${r.fallback}, ${r.clusters} clusters, ` +
      `${r.outliers} outliers, NMI ${fmt(r.nmi)}${warn}`;
  });
}

function onTrain(ev) {
  ev.preventDefault();
  const req = formValues(ev.target);
  busy("train-status", () => {
    const r = JSON.parse(train(JSON.stringify(req)));
    const rows = r.rounds.map(x => [x.round, fmt(x.epsilon, 4), x.clusters, x.outliers,
      fmt(x.nmi), fmt(x.loss), fmt(x.accuracy)]);
    document.getElementById("train-result").innerHTML =
      `untrained 5-way 1-shot accuracy ${fmt(r.untrained_accuracy)}` +
      table(["round", "ε", "clusters", "outliers", "NMI", "loss", "accuracy"], rows);
  });
}

function onGrad(ev) {
  ev.preventDefault();
  const { trials, seed } = formValues(ev.target);
  busy("grad-status", () => {
    const r = JSON.parse(gradcheck(trials, BigInt(seed)));
    document.getElementById("grad-result").innerHTML = table(
      ["loss", "max relative error", "trials", ""],
      r.map(x => [x.name, x.max_rel_error.toExponential(2), x.trials, x.max_rel_error < 1e-4 ? "ok" : "FAIL"]));
  });
}

await init();
document.getElementById("cluster-form").addEventListener("submit", onCluster);
document.getElementById("train-form").addEventListener("submit", onTrain);
document.getElementById("grad-form").addEventListener("submit", onGrad);
document.getElementById("cluster-form").requestSubmit();
