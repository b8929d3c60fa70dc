import init, { Simulation, lp_block_rgba, block_count, bony_split_norms } from "./pkg/sns_web.js";

const N = 64;

function paint(canvas, n, rgba) {
  canvas.width = n;
  canvas.height = n;
  const ctx = canvas.getContext("2d");
  ctx.putImageData(new ImageData(new Uint8ClampedArray(rgba), n, n), 0, 0);
}

async function main() {
  await init();

  const flow = document.getElementById("flow");
  const status = document.getElementById("flow-status");
  let sim = null;
  let running = false;

  function reset() {
    const amp = parseFloat(document.getElementById("amp").value) || 0;
    sim = new Simulation(N, amp, 2e-3, BigInt(Date.now() % 1e9));
    draw();
  }
  function draw() {
    paint(flow, sim.size(), sim.vorticity_rgba());
    status.textContent = `t = ${sim.time().toFixed(3)}   energy = ${sim.energy().toExponential(3)}`;
  }
  function frame() {
    if (!running) return;
    sim.advance(5);
    draw();
    requestAnimationFrame(frame);
  }
  document.getElementById("reset").onclick = reset;
  document.getElementById("play").onclick = (e) => {
    running = !running;
    e.target.textContent = running ? "pause" : "play";
    if (running) requestAnimationFrame(frame);
  };
  reset();

  const block = document.getElementById("block");
  const slider = document.getElementById("j");
  slider.max = block_count(N) - 2;
  function showBlock() {
    const j = parseInt(slider.value, 10);
    document.getElementById("j-label").textContent = j;
    paint(block, N, lp_block_rgba(N, j, 7n));
  }
  slider.oninput = showBlock;
  showBlock();

  document.getElementById("bony").onclick = () => {
    const n = parseInt(document.getElementById("bony-n").value, 10);
    const seed = BigInt(parseInt(document.getElementById("bony-seed").value, 10) || 0);
    const v = bony_split_norms(n, seed);
    const names = ["f low-high g", "f resonant g", "f high-low g", "f (x) g", "residual"];
    document.getElementById("bony-table").innerHTML =
      "<tr><th>piece</th><th>L2 norm</th></tr>" +
      names.map((s, i) => `<tr><td>${s}</td><td>${v[i].toExponential(4)}</td></tr>`).join("");
  };
}

main();
