import init, { Demo, stainLogistic } from "./pkg/smearscan_web_demo.js";

const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);
let demo = null;

function showValues() {
  for (const o of document.querySelectorAll("output")) o.value = $(o.htmlFor).value;
}

function paint(canvas, rgba, w, h) {
  canvas.width = w;
  canvas.height = h;
  canvas.getContext("2d").putImageData(new ImageData(new Uint8ClampedArray(rgba), w, h), 0, 0);
}

function screen() {
  if (!demo) return;
  try {
    const s = JSON.parse(demo.screen(num("thr"), num("floor"), num("nms")));
    $("summary").textContent =
      `infected     ${s.infected}\nuninfected   ${s.uninfected}\nparasitemia  ${s.parasitemia}\n` +
      `WBC          ${s.wbc}\nplatelets    ${s.platelets}\ndetections   ${s.detections}\n\n` +
      `truth        ${s.truth_infected} of ${s.truth_rbc} RBCs`;
  } catch (e) {
    $("summary").textContent = String(e);
  }
  paint($("overlay"), demo.overlayRgba(), demo.width(), demo.height());
}

function curve() {
  if (!demo) return;
  const c = $("curve"), ctx = c.getContext("2d");
  const tau = num("tau"), scale = num("scale"), fmax = 0.06;
  const x = (f) => 30 + (f / fmax) * (c.width - 40);
  const y = (p) => c.height - 20 - p * (c.height - 30);
  ctx.clearRect(0, 0, c.width, c.height);
  ctx.strokeStyle = "#bbb";
  ctx.strokeRect(x(0), y(1), x(fmax) - x(0), y(0) - y(1));
  ctx.beginPath();
  ctx.strokeStyle = "#800080";
  for (let i = 0; i <= 200; i++) {
    const f = (i / 200) * fmax;
    const p = stainLogistic(f, tau, scale);
    i ? ctx.lineTo(x(f), y(p)) : ctx.moveTo(x(f), y(p));
  }
  ctx.stroke();
  ctx.setLineDash([4, 4]);
  ctx.strokeStyle = "#999";
  ctx.beginPath();
  ctx.moveTo(x(0), y(num("thr")));
  ctx.lineTo(x(fmax), y(num("thr")));
  ctx.stroke();
  ctx.setLineDash([]);
  for (const p of JSON.parse(demo.stainProbes(tau, scale))) {
    ctx.beginPath();
    ctx.arc(x(Math.min(p.stain_fraction, fmax)), y(p.p_infected), 3, 0, 2 * Math.PI);
    ctx.fillStyle = ctx.strokeStyle = p.parasitized ? "#800080" : "#2a7";
    p.parasitized ? ctx.fill() : ctx.stroke();
  }
}

function generate() {
  try {
    demo?.free();
    demo = new Demo(num("seed"), num("rbc"), num("para"));
  } catch (e) {
    demo = null;
    $("summary").textContent = String(e);
    return;
  }
  screen();
  curve();
}

await init();
showValues();
for (const el of document.querySelectorAll("input")) el.addEventListener("input", showValues);
$("generate").addEventListener("click", generate);
for (const id of ["thr", "floor", "nms"]) $(id).addEventListener("input", () => { screen(); curve(); });
for (const id of ["tau", "scale"]) $(id).addEventListener("input", curve);
generate();
