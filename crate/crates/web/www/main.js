import init, { DemoScene, kernel_curves } from "./pkg/depthcue_web.js";

const ZOOM = 3;
const MOTION = [
  ["rx", -0.05, 0.05, 0.001],
  ["ry", -0.05, 0.05, 0.001],
  ["rz", -0.05, 0.05, 0.001],
  ["tx", -0.6, 0.6, 0.005],
  ["ty", -0.6, 0.6, 0.005],
  ["tz", -0.6, 0.6, 0.005],
  ["depth scale", 0.25, 2.5, 0.01],
];

const $ = (id) => document.getElementById(id);
let scene = null;
let query = [0, 0];

function paint(canvas, rgba, w, h) {
  canvas.width = w;
  canvas.height = h;
  canvas.style.width = `${w * ZOOM}px`;
  canvas.style.height = `${h * ZOOM}px`;
  const ctx = canvas.getContext("2d");
  ctx.putImageData(new ImageData(new Uint8ClampedArray(rgba), w, h), 0, 0);
}

function bindOutput(input, onChange) {
  const out = input.parentElement.querySelector("output");
  const update = () => {
    if (out) out.textContent = input.value;
    onChange();
  };
  input.addEventListener("input", update);
  if (out) out.textContent = input.value;
}

function buildSliders() {
  const box = $("sliders");
  for (const [name, min, max, step] of MOTION) {
    const label = document.createElement("label");
    label.innerHTML = `${name} <input type="range" min="${min}" max="${max}" step="${step}"> <output></output>`;
    box.appendChild(label);
    bindOutput(label.querySelector("input"), redrawWarp);
  }
}

function sliderValues() {
  return [...$("sliders").querySelectorAll("input")].map((i) => parseFloat(i.value));
}

function setSliders(values) {
  $("sliders").querySelectorAll("input").forEach((input, k) => {
    input.value = values[k];
    input.parentElement.querySelector("output").textContent = Number(values[k]).toFixed(3);
  });
  redrawWarp();
}

function loadScene() {
  if (scene) scene.free();
  scene = new DemoScene(parseInt($("seed").value, 10) || 0);
  const [w, h] = [scene.width(), scene.height()];
  paint($("target"), scene.target_rgba(), w, h);
  paint($("source"), scene.source_rgba(), w, h);
  paint($("depth"), scene.depth_rgba(), w, h);
  paint($("query"), scene.target_rgba(), w, h);
  query = [w >> 1, h >> 1];
  setSliders([...scene.true_motion(), 1]);
  redrawAttention();
}

function redrawWarp() {
  if (!scene) return;
  const v = sliderValues();
  const rec = scene.reconstruct(new Float64Array(v.slice(0, 6)), v[6]);
  const [w, h] = [scene.width(), scene.height()];
  paint($("warped"), rec.rgba(), w, h);
  paint($("error"), rec.error_rgba(), w, h);
  $("err").textContent = rec.mean_error().toFixed(4);
  $("cov").textContent = `${(100 * rec.coverage()).toFixed(1)}%`;
  rec.free();
}

function redrawCurves() {
  const delta = parseFloat($("kdelta").value);
  const order = parseInt($("korder").value, 10);
  const max = parseFloat($("kmax").value);
  const n = 200;
  const data = kernel_curves(delta, order, max, n);
  const canvas = $("curves");
  const ctx = canvas.getContext("2d");
  const [W, H, pad] = [canvas.width, canvas.height, 30];
  ctx.clearRect(0, 0, W, H);
  ctx.strokeStyle = "#999";
  ctx.strokeRect(pad, 10, W - pad - 10, H - pad - 10);
  const x = (d) => pad + ((W - pad - 10) * d) / max;
  const y = (v) => 10 + (H - pad - 10) * (1 - Math.max(-0.1, Math.min(1.2, v)) / 1.2);
  const line = (offset, colour) => {
    ctx.strokeStyle = colour;
    ctx.lineWidth = 2;
    ctx.beginPath();
    for (let k = 0; k < n; k++) {
      const [px, py] = [x(data[3 * k]), y(data[3 * k + offset])];
      k === 0 ? ctx.moveTo(px, py) : ctx.lineTo(px, py);
    }
    ctx.stroke();
  };
  line(1, "#1f5fbf");
  line(2, "#d9822b");
  ctx.fillStyle = "#222";
  ctx.font = "12px system-ui";
  ctx.fillText("gaussian", W - 150, 28);
  ctx.fillStyle = "#d9822b";
  ctx.fillText(`series, order ${order}`, W - 150, 44);
  ctx.fillStyle = "#222";
  ctx.fillText(`distance 0 .. ${max}`, pad, H - 8);
}

function redrawAttention() {
  if (!scene) return;
  const rgba = scene.attention(query[0], query[1], parseFloat($("adelta").value), parseFloat($("apos").value));
  paint($("attn"), rgba, scene.width(), scene.height());
}

async function main() {
  await init();
  $("status").textContent = "";
  buildSliders();
  for (const id of ["kdelta", "korder", "kmax"]) bindOutput($(id), redrawCurves);
  for (const id of ["adelta", "apos"]) bindOutput($(id), redrawAttention);
  $("seed").addEventListener("change", loadScene);
  $("reset").addEventListener("click", () => setSliders([...scene.true_motion(), 1]));
  $("zero").addEventListener("click", () => setSliders([0, 0, 0, 0, 0, 0, 1]));
  $("query").addEventListener("click", (e) => {
    const r = e.target.getBoundingClientRect();
    query = [
      Math.floor(((e.clientX - r.left) / r.width) * scene.width()),
      Math.floor(((e.clientY - r.top) / r.height) * scene.height()),
    ];
    redrawAttention();
  });
  loadScene();
  redrawCurves();
}

main().catch((e) => {
  $("status").textContent = `Failed to start: ${e}`;
});
