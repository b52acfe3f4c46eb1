// Wire protocol for the piloting service. One JSON object per WebSocket
// message; every command carries a request_id and receives exactly one
// ack/error reply.

export const PROTOCOL_VERSION = 1;

export type BurstDirection =
  | "forward"
  | "backward"
  | "up"
  | "down"
  | "rotate_left"
  | "rotate_right";

export const BURST_DIRECTIONS: BurstDirection[] = [
  "forward",
  "backward",
  "up",
  "down",
  "rotate_left",
  "rotate_right",
];

export type SensorName = "camera" | "thermal" | "lidar";

export interface CommandMessage {
  v: number;
  type: "burst" | "sensor" | "record" | "reset" | "load_scene";
  request_id: string;
  [key: string]: unknown;
}

export interface StateTelemetry {
  type: "state";
  time_s: number;
  pos: [number, number, number];
  heading_rad: number;
  vel: [number, number, number];
  battery_drawn_mah: number;
  battery_usable_mah: number;
  recording: boolean;
  sensors: Record<SensorName, boolean>;
  wind_mps: number;
}

export interface CameraTelemetry {
  type: "camera";
  time_s: number;
  footprint: [number, number][];
  ids: string[];
  raster_png_b64?: string;
}

export interface LidarTelemetry {
  type: "lidar";
  time_s: number;
  readings: Record<"forward" | "side" | "down", number | "oor" | "close">;
}

export interface ThermalTelemetry {
  type: "thermal";
  time_s: number;
  rows: number;
  cols: number;
  centi_c: number[];
}

export interface AckReply {
  type: "ack" | "error";
  request_id: string | null;
  reason?: string;
}

export type Telemetry =
  | StateTelemetry
  | CameraTelemetry
  | LidarTelemetry
  | ThermalTelemetry
  | AckReply;

let counter = 0;

export function nextRequestId(): string {
  counter += 1;
  return `ui-${counter}`;
}

export function resetRequestIds(): void {
  counter = 0;
}

export function burstCommand(
  dir: BurstDirection,
  durationMs = 300,
  requestId = nextRequestId(),
): CommandMessage {
  return { v: PROTOCOL_VERSION, type: "burst", dir, duration_ms: durationMs, request_id: requestId };
}

export function sensorCommand(
  sensor: SensorName,
  on: boolean,
  requestId = nextRequestId(),
): CommandMessage {
  return { v: PROTOCOL_VERSION, type: "sensor", sensor, on, request_id: requestId };
}

export function recordCommand(on: boolean, requestId = nextRequestId()): CommandMessage {
  return { v: PROTOCOL_VERSION, type: "record", on, request_id: requestId };
}

export function resetCommand(requestId = nextRequestId()): CommandMessage {
  return { v: PROTOCOL_VERSION, type: "reset", request_id: requestId };
}

export function parseTelemetry(raw: string): Telemetry | null {
  let doc: unknown;
  try {
    doc = JSON.parse(raw);
  } catch {
    return null;
  }
  if (typeof doc !== "object" || doc === null) return null;
  const msg = doc as { type?: unknown };
  switch (msg.type) {
    case "state":
    case "camera":
    case "lidar":
    case "thermal":
    case "ack":
    case "error":
      return doc as Telemetry;
    default:
      return null;
  }
}

export function lidarDisplay(value: number | "oor" | "close"): string {
  if (value === "oor") return "OOR";
  if (value === "close") return "CLOSE";
  return `${value} cm`;
}
