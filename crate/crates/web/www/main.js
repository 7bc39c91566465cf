import init, { imageWidth, imageHeight, teacherModes, distill, probeField } from "./pkg/sdl_lab_web.js";

const SCALE = 6;

function tile(rgba, w, h, caption) {
  const wrap = document.createElement("div");
  wrap.className = "tile";
  const c = document.createElement("canvas");
  c.width = w;
  c.height = h;
  c.style.width = `${w * SCALE}px`;
  c.style.height = `${h * SCALE}px`;
  c.getContext("2d").putImageData(new ImageData(new Uint8ClampedArray(rgba), w, h), 0, 0);
  wrap.append(c, document.createElement("br"), caption);
  return wrap;
}

function showTiles(el, bytes, captions) {
  const w = imageWidth(), h = imageHeight(), n = w * h * 4;
  el.replaceChildren(...captions.map((cap, i) => tile(bytes.slice(i * n, (i + 1) * n), w, h, cap)));
}

const num = (id) => Number(document.getElementById(id).value);

async function main() {
  await init();
  showTiles(document.getElementById("modes"), teacherModes(), ["mode 0", "mode 1", "mode 2", "mode 3"]);

  const run = document.getElementById("run");
  run.onclick = () => {
    const out = document.getElementById("metrics");
    out.textContent = "running...";
    run.disabled = true;
    setTimeout(() => {
      try {
        const t0 = performance.now();
        const method = document.getElementById("method").value;
        const view = distill(method, num("seed"), num("iters"));
        const s = JSON.parse(view.summary());
        showTiles(document.getElementById("particles"), view.tiles(), s.labels.map((l, i) => `#${i}: mode ${l}`));
        view.free();
        out.textContent =
          `${s.method.toUpperCase()}  IQ ${s.iq.toFixed(4)}  IV ${s.iv.toFixed(4)}  ` +
          `CosineSim ${s.cosine_sim.toFixed(4)}  variational params ${s.variational_params}  ` +
          `(${((performance.now() - t0) / 1000).toFixed(1)} s)`;
      } catch (e) {
        out.textContent = String(e);
      }
      run.disabled = false;
    }, 10);
  };

  document.getElementById("probe").onclick = () => {
    const table = document.getElementById("probe-table");
    try {
      const rows = JSON.parse(probeField(num("pseed"), num("segments")));
      table.innerHTML = "<tr><th>family</th><th>violations</th><th>fraction</th></tr>" +
        rows.map((r) => `<tr><td>${r.name}</td><td>${r.violations} / ${r.segments}</td><td>${r.fraction.toFixed(3)}</td></tr>`).join("");
    } catch (e) {
      table.innerHTML = `<tr><td>${e}</td></tr>`;
    }
  };
}

main();
