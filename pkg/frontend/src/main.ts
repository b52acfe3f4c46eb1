// Dashboard wiring: session form, control panel, telemetry panels.

import { SessionClient } from "./client.js";
import { BUTTON_LABELS, MovementControls, RecordToggle, SensorToggles } from "./controls.js";
import { coverageCellKey } from "./minimap.js";
import { BURST_DIRECTIONS, CommandMessage, resetCommand, SensorName } from "./protocol.js";
import { renderCamera, renderLidar, renderMinimap, renderStatus, renderThermal } from "./panels.js";
import { TelemetryStore } from "./store.js";

const $ = (id: string) => {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing element #${id}`);
  return el;
};

const client = new SessionClient();
const store = new TelemetryStore();

function sendCommand(command: CommandMessage): void {
  try {
    client.send(command);
    store.commandSent(command.request_id, performance.now());
  } catch {
    showToast("not connected");
  }
}

const movement = new MovementControls(sendCommand);
const sensors = new SensorToggles(sendCommand);
const record = new RecordToggle(sendCommand);

function showToast(text: string): void {
  const toast = $("toast");
  toast.textContent = text;
  toast.classList.add("visible");
  setTimeout(() => toast.classList.remove("visible"), 2500);
}

function buildControls(): void {
  const panel = $("movement");
  for (const dir of BURST_DIRECTIONS) {
    const button = document.createElement("button");
    button.className = "move";
    button.textContent = BUTTON_LABELS[dir];
    movement.attachButton(button, dir);
    panel.appendChild(button);
  }
  movement.attachKeyboard(window);

  const sensorsPanel = $("sensors");
  for (const name of ["camera", "thermal", "lidar"] as SensorName[]) {
    const button = document.createElement("button");
    button.className = "sensor";
    button.textContent = `${name}: off`;
    button.addEventListener("click", () => {
      const on = sensors.toggle(name);
      button.textContent = `${name}: ${on ? "on" : "off"}`;
      button.classList.toggle("on", on);
    });
    sensorsPanel.appendChild(button);
  }

  const recordButton = $("record") as HTMLButtonElement;
  recordButton.addEventListener("click", () => {
    const on = record.toggle();
    recordButton.textContent = on ? "recording..." : "record";
    recordButton.classList.toggle("on", on);
  });

  $("download").addEventListener("click", async () => {
    try {
      const text = await client.downloadLog();
      const blob = new Blob([text], { type: "application/x-ndjson" });
      const a = document.createElement("a");
      a.href = URL.createObjectURL(blob);
      a.download = `runlog_${client.session?.id ?? "session"}.jsonl`;
      a.click();
      URL.revokeObjectURL(a.href);
    } catch (err) {
      showToast(String(err));
    }
  });

  $("reset").addEventListener("click", () => {
    sendCommand(resetCommand());
    store.clearRun();
  });
}

function setControlsEnabled(enabled: boolean): void {
  movement.enabled = enabled;
  document.querySelectorAll("button.move, button.sensor, #record").forEach((el) => {
    (el as HTMLButtonElement).disabled = !enabled;
  });
  $("banner").classList.toggle("hidden", enabled);
}

async function startSession(): Promise<void> {
  const presetSelect = $("scene-kind") as HTMLSelectElement;
  const seed = Number(($("seed") as HTMLInputElement).value) || 0;
  const choice = presetSelect.value;
  const source =
    choice === "hint-empty" || choice === "nfc-villa"
      ? { preset: choice }
      : { crime_type: choice, plan: ($("plan") as HTMLSelectElement).value, seed };
  try {
    const info = await client.createSession(source, seed);
    store.clearRun();
    $("session-label").textContent = `session ${info.id} | ${info.plan.name} | ${info.evidence.length} items`;
    await client.connect();
    // the simulation clock is paused until the first command; kick it
    sendCommand(resetCommand());
  } catch (err) {
    showToast(String(err));
  }
}

function renderLoop(): void {
  const now = performance.now();
  renderStatus(store, $("status"), now);
  renderLidar(store, $("lidar"));
  renderThermal(store, $("thermal") as HTMLCanvasElement);
  renderCamera(store, $("camera") as HTMLCanvasElement, cameraImage);
  if (client.session) {
    renderMinimap(store, { plan: client.session.plan, evidence: client.session.evidence }, $("minimap") as HTMLCanvasElement);
  }
  const error = store.popError();
  if (error) showToast(error);
  requestAnimationFrame(renderLoop);
}

const cameraImage = new Image();

client.onTelemetry = (msg) => {
  const plan = client.session?.plan;
  store.ingest(msg, performance.now(), plan ? (x, y) => coverageCellKey(plan, x, y) : undefined);
  if (msg.type === "state") {
    sensors.sync(msg.sensors);
    record.sync(msg.recording);
  }
};
client.onConnectionChange = (connected) => setControlsEnabled(connected);

buildControls();
setControlsEnabled(false);
$("connect").addEventListener("click", () => void startSession());
requestAnimationFrame(renderLoop);
