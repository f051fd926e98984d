// Build first: wasm-pack build crates/demo --target web --out-dir www/pkg
import init, { Session, builtin_model, builtin_scenario } from "./pkg/bpair_demo.js";

const $ = (id) => document.getElementById(id);
const colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];
let session = null;

function fail(e) {
  $("error").textContent = String(e);
}

function plot(canvas, t, series, bands) {
  const ctx = canvas.getContext("2d");
  const w = canvas.width, h = canvas.height, pad = 30;
  ctx.clearRect(0, 0, w, h);
  const all = series.flatMap((s) => s.y).concat(bands);
  const lo = Math.min(...all), hi = Math.max(...all);
  const x = (v) => pad + ((v - t[0]) / (t[t.length - 1] - t[0] || 1)) * (w - 2 * pad);
  const y = (v) => h - pad - ((v - lo) / (hi - lo || 1)) * (h - 2 * pad);
  ctx.strokeStyle = "#999";
  ctx.setLineDash([4, 4]);
  for (const b of bands) {
    ctx.beginPath(); ctx.moveTo(pad, y(b)); ctx.lineTo(w - pad, y(b)); ctx.stroke();
  }
  ctx.setLineDash([]);
  series.forEach((s, k) => {
    ctx.strokeStyle = colors[k % colors.length];
    ctx.beginPath();
    s.y.forEach((v, i) => (i ? ctx.lineTo(x(t[i]), y(v)) : ctx.moveTo(x(t[i]), y(v))));
    ctx.stroke();
    ctx.fillStyle = ctx.strokeStyle;
    ctx.fillText(s.name, w - pad - 60, pad + 12 * k);
  });
  ctx.fillStyle = "#444";
  ctx.fillText(hi.toFixed(2), 2, pad);
  ctx.fillText(lo.toFixed(2), 2, h - pad);
}

function loadTexts() {
  const name = $("model").value;
  $("model-text").value = builtin_model(name);
  $("scenario-text").value = builtin_scenario(name);
}

await init();
loadTexts();
$("model").onchange = loadTexts;

$("synth").onclick = () => {
  $("error").textContent = "";
  $("summary").textContent = "synthesizing...";
  setTimeout(() => {
    try {
      if (session) session.free();
      const eps = parseFloat($("eps").value);
      session = new Session($("model-text").value, Number.isFinite(eps) ? eps : 0);
      const s = JSON.parse(session.summary());
      $("summary").textContent = JSON.stringify(s, null, 2);
      $("state").value = Array(2 * s.n).fill(0).map((_, i) => (i === 0 ? 0.2 : 0)).join(", ");
      $("simulate").disabled = $("evaluate").disabled = false;
    } catch (e) {
      $("summary").textContent = "";
      fail(e);
    }
  }, 10);
};

$("simulate").onclick = () => {
  $("error").textContent = "";
  try {
    const r = JSON.parse(session.simulate($("scenario-text").value, $("baseline").checked, $("sigmoidal").checked));
    $("verdict").textContent = r.safe ? "safe: every constraint held" : "constraint violated";
    plot($("plot-s"), r.t, r.s.map((y, i) => ({ name: `F${i + 1} x`, y })), [-1, 1]);
    plot($("plot-b"), r.t, [{ name: "B true", y: r.b_true }, { name: "B bound", y: r.b_bar }, { name: "mode", y: r.mode }], [1]);
  } catch (e) {
    fail(e);
  }
};

$("evaluate").onclick = () => {
  $("error").textContent = "";
  try {
    const x = $("state").value.split(",").map((v) => parseFloat(v));
    $("evaluation").textContent = JSON.stringify(JSON.parse(session.evaluate(Float64Array.from(x))), null, 2);
  } catch (e) {
    fail(e);
  }
};
