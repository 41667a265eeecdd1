import init, { replayScenario, equilibriaReport, allocationDemo } from "./pkg/vaxplan_web.js";

const COLORS = ["#2f6fde", "#d94f3d", "#2e9e6a", "#8a56c2"];
const fmt = new Intl.NumberFormat("en", { maximumFractionDigits: 0 });

function $(id) {
  return document.getElementById(id);
}

// Line chart of equally spaced series on a canvas sized to its CSS box.
function drawLines(canvas, series, { xLabel = "day", xScale = 1 } = {}) {
  const dpr = window.devicePixelRatio || 1;
  const w = canvas.clientWidth;
  const h = canvas.clientHeight;
  canvas.width = w * dpr;
  canvas.height = h * dpr;
  const ctx = canvas.getContext("2d");
  ctx.scale(dpr, dpr);
  ctx.clearRect(0, 0, w, h);

  const pad = { l: 64, r: 12, t: 10, b: 28 };
  const n = Math.max(...series.map((s) => s.values.length));
  const max = Math.max(1e-12, ...series.flatMap((s) => s.values));
  const x = (i) => pad.l + (i / Math.max(1, n - 1)) * (w - pad.l - pad.r);
  const y = (v) => h - pad.b - (v / max) * (h - pad.t - pad.b);

  ctx.strokeStyle = "#c9ced6";
  ctx.fillStyle = "#5b6372";
  ctx.font = "11px system-ui, sans-serif";
  ctx.lineWidth = 1;
  for (let k = 0; k <= 4; k++) {
    const v = (max * k) / 4;
    ctx.beginPath();
    ctx.moveTo(pad.l, y(v));
    ctx.lineTo(w - pad.r, y(v));
    ctx.stroke();
    ctx.fillText(fmt.format(v), 4, y(v) + 4);
  }
  for (let k = 0; k <= 5; k++) {
    const i = Math.round(((n - 1) * k) / 5);
    ctx.fillText(String(i * xScale), x(i) - 8, h - 8);
  }
  ctx.fillText(xLabel, w - pad.r - 24, h - 8);

  series.forEach((s, k) => {
    ctx.strokeStyle = s.color || COLORS[k % COLORS.length];
    ctx.lineWidth = 2;
    ctx.beginPath();
    s.values.forEach((v, i) => (i ? ctx.lineTo(x(i), y(v)) : ctx.moveTo(x(i), y(v))));
    ctx.stroke();
  });
}

function legend(el, series) {
  el.innerHTML = series
    .map((s, k) => `<span><i style="background:${s.color || COLORS[k % COLORS.length]}"></i>${s.label}</span>`)
    .join("");
}

function guard(el, f) {
  try {
    f();
  } catch (e) {
    el.innerHTML = `<span class="error">${e}</span>`;
  }
}

function replay() {
  const delta = Number($("delta").value);
  $("delta-out").textContent = fmt.format(delta);
  guard($("replay-stats"), () => {
    const r = JSON.parse(replayScenario($("scenario").value, delta));
    const series = [
      { label: "detected active", values: r.detected },
      { label: "cumulative deaths", values: r.deaths },
    ];
    drawLines($("replay-chart"), series);
    legend($("replay-legend"), series);
    $("replay-stats").textContent =
      `Peak of ${fmt.format(r.peak)} detected cases on day ${r.peak_day} after ${r.first_date}; ` +
      `${fmt.format(r.total_deaths)} deaths; ${fmt.format(r.vaccinated.at(-1))} immunized by vaccination.`;
  });
}

function equilibria() {
  const v = (id) => Number($(id).value);
  for (const id of ["beta", "gamma", "mu", "eq-doses"]) $(`${id}-out`).textContent = $(id).value;
  guard($("eq-stats"), () => {
    const r = JSON.parse(equilibriaReport(v("beta"), v("gamma"), v("mu"), v("eq-doses"), 3000));
    const series = [{ label: "infected", values: r.infected }];
    drawLines($("eq-chart"), series, { xScale: r.stride });
    legend($("eq-legend"), series);
    const point = (name, p) =>
      `${name}: S=${fmt.format(p.s)}, I=${fmt.format(p.i)}, V=${fmt.format(p.v)} (${p.stability})`;
    $("eq-stats").innerHTML =
      `R0 = ${r.r0.toFixed(3)}<br>${point("disease-free point", r.disease_free)}<br>` +
      (r.endemic ? point("endemic point", r.endemic) : "no endemic point while R0 ≤ 1");
  });
}

function allocation() {
  guard($("alloc-stats"), () => {
    $("alloc-stats").textContent = "running…";
    const r = JSON.parse(allocationDemo(Number($("budget").value), Number($("seed").value)));
    const series = [
      { label: "no vaccination", values: r.baseline.daily_infections, color: "#9aa3b2" },
      { label: "random", values: r.random.daily_infections, color: COLORS[1] },
      { label: "greedy", values: r.approach.daily_infections, color: COLORS[0] },
    ];
    drawLines($("alloc-chart"), series, { xLabel: "campaign day" });
    legend($("alloc-legend"), series);
    const towns = r.towns
      .map((t, k) => `${t} (β=${r.betas[k]}): greedy ${fmt.format(r.approach.first_doses[k])}, random ${fmt.format(r.random.first_doses[k])}`)
      .join("<br>");
    $("alloc-stats").innerHTML =
      `Infections: none ${fmt.format(r.baseline.infections)}, random ${fmt.format(r.random.infections)}, ` +
      `greedy ${fmt.format(r.approach.infections)}; greedy averts ${fmt.format(r.advantage)} more.<br>` +
      `First doses by town: <br>${towns}`;
  });
}

await init();
$("scenario").addEventListener("change", replay);
$("delta").addEventListener("input", replay);
for (const id of ["beta", "gamma", "mu", "eq-doses"]) $(id).addEventListener("input", equilibria);
$("run-allocation").addEventListener("click", allocation);
window.addEventListener("resize", () => {
  replay();
  equilibria();
});
replay();
equilibria();
allocation();
