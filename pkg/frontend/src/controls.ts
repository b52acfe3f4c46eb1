// Movement / sensor / record controls. Click fires one 300 ms burst; holding
// a movement button repeats bursts at 3 Hz. Keyboard mirrors the buttons.

import { BurstDirection, burstCommand, CommandMessage, recordCommand, sensorCommand, SensorName } from "./protocol.js";

export const HOLD_REPEAT_MS = 333;

export const KEY_BINDINGS: Record<string, BurstDirection> = {
  KeyW: "forward",
  KeyS: "backward",
  KeyR: "up",
  KeyF: "down",
  KeyA: "rotate_left",
  KeyD: "rotate_right",
  ArrowUp: "forward",
  ArrowDown: "backward",
  ArrowLeft: "rotate_left",
  ArrowRight: "rotate_right",
};

export const BUTTON_LABELS: Record<BurstDirection, string> = {
  forward: "↑ forward (W)",
  backward: "↓ backward (S)",
  up: "⇧ up (R)",
  down: "⇩ down (F)",
  rotate_left: "↶ left (A)",
  rotate_right: "↷ right (D)",
};

export interface ControlSink {
  (command: CommandMessage): void;
}

export class MovementControls {
  private holdTimer: ReturnType<typeof setInterval> | null = null;
  enabled = true;

  constructor(private sink: ControlSink) {}

  fire(dir: BurstDirection): void {
    if (!this.enabled) return;
    this.sink(burstCommand(dir));
  }

  holdStart(dir: BurstDirection): void {
    if (!this.enabled) return;
    this.fire(dir);
    this.holdStop();
    this.holdTimer = setInterval(() => this.fire(dir), HOLD_REPEAT_MS);
  }

  holdStop(): void {
    if (this.holdTimer !== null) {
      clearInterval(this.holdTimer);
      this.holdTimer = null;
    }
  }

  attachButton(button: HTMLButtonElement, dir: BurstDirection): void {
    button.addEventListener("mousedown", () => this.holdStart(dir));
    button.addEventListener("mouseup", () => this.holdStop());
    button.addEventListener("mouseleave", () => this.holdStop());
    button.addEventListener("touchstart", (e) => {
      e.preventDefault();
      this.holdStart(dir);
    });
    button.addEventListener("touchend", () => this.holdStop());
  }

  attachKeyboard(target: Window): void {
    const down = new Set<string>();
    target.addEventListener("keydown", (e) => {
      const dir = KEY_BINDINGS[e.code];
      if (!dir || down.has(e.code)) return;
      down.add(e.code);
      this.holdStart(dir);
    });
    target.addEventListener("keyup", (e) => {
      if (down.delete(e.code)) this.holdStop();
    });
    target.addEventListener("blur", () => {
      down.clear();
      this.holdStop();
    });
  }
}

export class SensorToggles {
  private states: Record<SensorName, boolean> = { camera: false, thermal: false, lidar: false };

  constructor(private sink: ControlSink) {}

  toggle(sensor: SensorName): boolean {
    const next = !this.states[sensor];
    this.states[sensor] = next;
    this.sink(sensorCommand(sensor, next));
    return next;
  }

  // server state echoes back through telemetry; keep the local view aligned
  sync(states: Record<SensorName, boolean>): void {
    this.states = { ...states };
  }

  isOn(sensor: SensorName): boolean {
    return this.states[sensor];
  }
}

export class RecordToggle {
  private on = false;

  constructor(private sink: ControlSink) {}

  toggle(): boolean {
    this.on = !this.on;
    this.sink(recordCommand(this.on));
    return this.on;
  }

  sync(on: boolean): void {
    this.on = on;
  }

  get recording(): boolean {
    return this.on;
  }
}
