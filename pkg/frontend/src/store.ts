// Latest-value telemetry store. Rendering reads from here on its own clock;
// nothing in the UI invents state the server has not sent.

import {
  AckReply,
  CameraTelemetry,
  LidarTelemetry,
  StateTelemetry,
  Telemetry,
  ThermalTelemetry,
} from "./protocol.js";

export interface PendingCommand {
  requestId: string;
  sentAtMs: number;
}

export interface AckStats {
  lastLatencyMs: number | null;
  pending: number;
  overdue: number; // unacked for more than a second
  errors: string[];
}

export class TelemetryStore {
  state: StateTelemetry | null = null;
  camera: CameraTelemetry | null = null;
  lidar: LidarTelemetry | null = null;
  thermal: ThermalTelemetry | null = null;
  coveredCells = new Set<string>();
  capturedIds = new Set<string>();
  thermalUpdates = 0;

  private lastMessageMs: number | null = null;
  private pending = new Map<string, PendingCommand>();
  private lastLatencyMs: number | null = null;
  private errors: string[] = [];

  ingest(msg: Telemetry, nowMs: number, cellKey?: (x: number, y: number) => string): void {
    this.lastMessageMs = nowMs;
    switch (msg.type) {
      case "state":
        this.state = msg;
        break;
      case "camera":
        this.camera = msg;
        for (const id of msg.ids) this.capturedIds.add(id);
        if (cellKey && msg.footprint.length >= 3) {
          const [cx, cy] = footprintCenter(msg.footprint);
          this.coveredCells.add(cellKey(cx, cy));
        }
        break;
      case "lidar":
        this.lidar = msg;
        break;
      case "thermal":
        this.thermal = msg;
        this.thermalUpdates += 1;
        break;
      case "ack":
      case "error":
        this.resolveAck(msg, nowMs);
        break;
    }
  }

  commandSent(requestId: string, nowMs: number): void {
    this.pending.set(requestId, { requestId, sentAtMs: nowMs });
  }

  private resolveAck(msg: AckReply, nowMs: number): void {
    if (msg.request_id !== null) {
      const pending = this.pending.get(msg.request_id);
      if (pending) {
        this.lastLatencyMs = nowMs - pending.sentAtMs;
        this.pending.delete(msg.request_id);
      }
    }
    if (msg.type === "error" && msg.reason) {
      this.errors.push(msg.reason);
      if (this.errors.length > 20) this.errors.shift();
    }
  }

  ackStats(nowMs: number): AckStats {
    let overdue = 0;
    for (const cmd of this.pending.values()) {
      if (nowMs - cmd.sentAtMs > 1000) overdue += 1;
    }
    return {
      lastLatencyMs: this.lastLatencyMs,
      pending: this.pending.size,
      overdue,
      errors: [...this.errors],
    };
  }

  popError(): string | null {
    return this.errors.shift() ?? null;
  }

  isStale(nowMs: number, thresholdMs = 2000): boolean {
    if (this.lastMessageMs === null) return true;
    return nowMs - this.lastMessageMs > thresholdMs;
  }

  clearRun(): void {
    this.coveredCells.clear();
    this.capturedIds.clear();
    this.thermalUpdates = 0;
  }
}

export function footprintCenter(footprint: [number, number][]): [number, number] {
  let sx = 0;
  let sy = 0;
  for (const [x, y] of footprint) {
    sx += x;
    sy += y;
  }
  return [sx / footprint.length, sy / footprint.length];
}
