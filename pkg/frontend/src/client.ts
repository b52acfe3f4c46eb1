// Session lifecycle + WebSocket transport. The UI owns one SessionClient;
// all state changes arrive as telemetry through onTelemetry.

import { CommandMessage, parseTelemetry, Telemetry } from "./protocol.js";
import { EvidenceMarker, PlanInfo } from "./minimap.js";

export interface SessionInfo {
  id: string;
  scene_hash: string;
  plan: PlanInfo & { name: string };
  evidence: EvidenceMarker[];
}

export interface SceneSource {
  preset?: string;
  crime_type?: string;
  plan?: string;
  seed?: number;
}

export class SessionClient {
  private ws: WebSocket | null = null;
  session: SessionInfo | null = null;
  onTelemetry: (msg: Telemetry) => void = () => undefined;
  onConnectionChange: (connected: boolean) => void = () => undefined;

  constructor(private baseUrl: string = "") {}

  async createSession(scene: SceneSource | string, driftSeed = 0): Promise<SessionInfo> {
    const response = await fetch(`${this.baseUrl}/sessions`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ scene, drift_seed: driftSeed }),
    });
    if (!response.ok) {
      throw new Error(`session create failed: HTTP ${response.status} ${await response.text()}`);
    }
    this.session = (await response.json()) as SessionInfo;
    return this.session;
  }

  connect(): Promise<void> {
    if (!this.session) return Promise.reject(new Error("no session"));
    const wsBase = this.baseUrl
      ? this.baseUrl.replace(/^http/, "ws")
      : `ws://${location.host}`;
    const ws = new WebSocket(`${wsBase}/session/${this.session.id}`);
    this.ws = ws;
    ws.onmessage = (event: MessageEvent) => {
      const msg = parseTelemetry(String(event.data));
      if (msg) this.onTelemetry(msg);
    };
    ws.onclose = () => this.onConnectionChange(false);
    ws.onerror = () => this.onConnectionChange(false);
    return new Promise((resolve, reject) => {
      ws.onopen = () => {
        this.onConnectionChange(true);
        resolve();
      };
      setTimeout(() => reject(new Error("websocket connect timeout")), 5000);
    });
  }

  get connected(): boolean {
    return this.ws !== null && this.ws.readyState === WebSocket.OPEN;
  }

  send(command: CommandMessage): void {
    if (!this.connected || !this.ws) throw new Error("not connected");
    this.ws.send(JSON.stringify(command));
  }

  async downloadLog(): Promise<string> {
    if (!this.session) throw new Error("no session");
    const response = await fetch(`${this.baseUrl}/sessions/${this.session.id}/log`);
    if (!response.ok) {
      throw new Error(`log download failed: HTTP ${response.status} ${await response.text()}`);
    }
    return response.text();
  }

  close(): void {
    this.ws?.close();
    this.ws = null;
  }
}
