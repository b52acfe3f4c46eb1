// Rendering: LiDAR text, thermal grid, camera footprint raster, minimap.
// Panels read the latest-value store on a render clock; they never mutate it.

import { frameToRgba } from "./colormap.js";
import {
  coverageRect,
  EvidenceMarker,
  fitTransform,
  headingTriangle,
  PlanInfo,
  toCanvas,
  wallRects,
} from "./minimap.js";
import { lidarDisplay } from "./protocol.js";
import { TelemetryStore } from "./store.js";

export function renderLidar(store: TelemetryStore, element: HTMLElement): void {
  if (!store.lidar) {
    element.textContent = "lidar: (off)";
    return;
  }
  const r = store.lidar.readings;
  element.textContent =
    `forward ${lidarDisplay(r.forward)}   side ${lidarDisplay(r.side)}   down ${lidarDisplay(r.down)}`;
}

export function renderThermal(store: TelemetryStore, canvas: HTMLCanvasElement): void {
  const ctx = canvas.getContext("2d");
  if (!ctx) return;
  if (!store.thermal) {
    ctx.fillStyle = "#222";
    ctx.fillRect(0, 0, canvas.width, canvas.height);
    return;
  }
  const { rows, cols, centi_c } = store.thermal;
  const image = new ImageData(cols, rows);
  image.data.set(frameToRgba(centi_c, rows, cols));
  // nearest-neighbor upscale through a temp canvas
  const tmp = document.createElement("canvas");
  tmp.width = cols;
  tmp.height = rows;
  tmp.getContext("2d")?.putImageData(image, 0, 0);
  ctx.imageSmoothingEnabled = false;
  ctx.drawImage(tmp, 0, 0, canvas.width, canvas.height);
}

export function renderCamera(store: TelemetryStore, canvas: HTMLCanvasElement, img: HTMLImageElement): void {
  const ctx = canvas.getContext("2d");
  if (!ctx) return;
  ctx.fillStyle = "#111";
  ctx.fillRect(0, 0, canvas.width, canvas.height);
  const frame = store.camera;
  if (!frame) return;
  if (frame.raster_png_b64) {
    img.src = `data:image/png;base64,${frame.raster_png_b64}`;
  }
  if (img.complete && img.naturalWidth > 0) {
    ctx.drawImage(img, 0, 0, canvas.width, canvas.height);
  }
  ctx.fillStyle = "#eee";
  ctx.font = "12px monospace";
  ctx.fillText(`in view: ${frame.ids.join(", ") || "(nothing)"}`, 6, canvas.height - 8);
}

export interface MinimapState {
  plan: PlanInfo;
  evidence: EvidenceMarker[];
}

export function renderMinimap(
  store: TelemetryStore,
  map: MinimapState,
  canvas: HTMLCanvasElement,
): void {
  const ctx = canvas.getContext("2d");
  if (!ctx) return;
  const t = fitTransform(map.plan, canvas.width, canvas.height);
  ctx.fillStyle = "#fafafa";
  ctx.fillRect(0, 0, canvas.width, canvas.height);

  ctx.fillStyle = "#bde6bd";
  for (const key of store.coveredCells) {
    const rect = coverageRect(map.plan, t, key);
    if (rect) ctx.fillRect(rect.x, rect.y, rect.w, rect.h);
  }

  ctx.fillStyle = "#333";
  for (const rect of wallRects(map.plan, t)) {
    ctx.fillRect(rect.x, rect.y, rect.w, rect.h);
  }

  for (const item of map.evidence) {
    const [x, y] = toCanvas(t, map.plan.height_m, item.pos[0], item.pos[1]);
    ctx.fillStyle = store.capturedIds.has(item.id) ? "#1a7f1a" : "#c03030";
    ctx.beginPath();
    ctx.arc(x, y, 4, 0, Math.PI * 2);
    ctx.fill();
  }

  if (store.state) {
    const [x, y, _z] = store.state.pos;
    const tri = headingTriangle(t, map.plan.height_m, x, y, store.state.heading_rad);
    ctx.fillStyle = "#2050d0";
    ctx.beginPath();
    ctx.moveTo(tri[0][0], tri[0][1]);
    ctx.lineTo(tri[1][0], tri[1][1]);
    ctx.lineTo(tri[2][0], tri[2][1]);
    ctx.closePath();
    ctx.fill();
  }
}

export function renderStatus(store: TelemetryStore, element: HTMLElement, nowMs: number): void {
  const parts: string[] = [];
  if (store.isStale(nowMs)) {
    parts.push("STALE");
  }
  if (store.state) {
    const [x, y, z] = store.state.pos;
    const battery = store.state.battery_usable_mah > 0
      ? (1 - store.state.battery_drawn_mah / store.state.battery_usable_mah) * 100
      : 0;
    parts.push(
      `t=${store.state.time_s.toFixed(1)}s`,
      `pos (${x.toFixed(2)}, ${y.toFixed(2)}, ${z.toFixed(2)})`,
      `battery ${battery.toFixed(0)}%`,
      `wind ${store.state.wind_mps.toFixed(2)} m/s`,
      store.state.recording ? "REC" : "",
    );
  }
  const acks = store.ackStats(nowMs);
  if (acks.lastLatencyMs !== null) parts.push(`latency ${acks.lastLatencyMs.toFixed(0)} ms`);
  if (acks.overdue > 0) parts.push(`UNACKED x${acks.overdue}`);
  element.textContent = parts.filter(Boolean).join("  |  ");
  element.classList.toggle("stale", store.isStale(nowMs));
}
