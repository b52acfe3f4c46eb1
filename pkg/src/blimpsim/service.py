"""Piloting service: one authoritative session per simulated craft.

The Session object is the headless core (open/command/tick/replay); the
FastAPI app wraps it with a WebSocket for commands + telemetry and HTTP
endpoints for session management. The simulation clock is fixed-step and
server-driven, so recorded runs replay exactly.
"""

from __future__ import annotations

import asyncio
import base64
import io
import json
from dataclasses import asdict, dataclass, field

import numpy as np
from fastapi import FastAPI, HTTPException, WebSocket, WebSocketDisconnect
from fastapi.responses import PlainTextResponse

from . import blimp as blimp_mod
from .blimp import BlimpConfig, BlimpState, CommandBurst, DriftModel, downwash_at_ground
from .planner import (
    RunLog,
    RunRecord,
    compute_metrics,
    load_runlog,
    save_runlog,
    substream_key,
)
from .sensors import (
    CameraModel,
    LidarModel,
    ThermalModel,
    camera_capture,
    lidar_read,
    lidar_wire_value,
    render_topdown,
    thermal_capture,
    thermal_wire_frame,
)
from .world import (
    CRIME_TYPES,
    Scene,
    default_spec,
    generate_scene,
    load_scene,
    preset_plan,
    scene_hash,
    PRESET_PLANS,
)

PROTOCOL_VERSION = 1
TICK_DT_S = 0.1
CAMERA_TELEMETRY_EVERY = 1  # ticks (10 Hz)
CAMERA_RASTER_EVERY = 5  # ticks (2 Hz)
THERMAL_EVERY = 5  # ticks (2 Hz)
LIDAR_EVERY = 1  # ticks (10 Hz)

SENSOR_NAMES = ("camera", "thermal", "lidar")


class SessionError(Exception):
    """Scene loading or replay failed."""


@dataclass
class CommandResult:
    ok: bool
    request_id: str | None = None
    error: str | None = None

    def to_message(self) -> dict:
        if self.ok:
            return {"v": PROTOCOL_VERSION, "type": "ack", "request_id": self.request_id}
        return {
            "v": PROTOCOL_VERSION,
            "type": "error",
            "request_id": self.request_id,
            "reason": self.error,
        }


def spawn_state(scene: Scene, altitude_m: float = 1.5) -> BlimpState:
    """Collision-free spawn pose near the middle of the free floor."""
    plan = scene.floor_plan
    z = min(altitude_m, plan.ceiling_height_m - 0.2)
    free = plan.free_cell_indices()
    if len(free) == 0:
        raise SessionError("scene has no free cells to spawn in")
    cx = plan.width_m / 2.0
    cy = plan.height_m / 2.0
    best = min(
        (tuple(rc) for rc in free),
        key=lambda rc: (rc[1] * plan.cell_size_m - cx) ** 2 + (rc[0] * plan.cell_size_m - cy) ** 2,
    )
    x = (best[1] + 0.5) * plan.cell_size_m
    y = (best[0] + 0.5) * plan.cell_size_m
    return BlimpState(position_m=(x, y, z))


def scene_from_source(source: dict | str) -> Scene:
    """Build a scene from a preset name, generator spec, or raw document."""
    if isinstance(source, str):
        if source in PRESET_PLANS:
            return Scene(preset_plan(source), [])
        raise SessionError(f"unknown scene preset {source!r}")
    if not isinstance(source, dict):
        raise SessionError("scene source must be a preset name or an object")
    if "document" in source:
        try:
            return load_scene(json.dumps(source["document"]).encode("utf-8"))
        except Exception as exc:
            raise SessionError(f"bad scene document: {exc}") from exc
    if "preset" in source:
        name = source["preset"]
        if name not in PRESET_PLANS:
            raise SessionError(f"unknown scene preset {name!r}")
        return Scene(preset_plan(name), [])
    if "crime_type" in source:
        crime = source["crime_type"]
        if crime not in CRIME_TYPES:
            raise SessionError(f"unknown crime type {crime!r}")
        plan_name = source.get("plan", "hint-empty")
        if plan_name not in PRESET_PLANS:
            raise SessionError(f"unknown floor plan preset {plan_name!r}")
        seed = int(source.get("seed", 0))
        return generate_scene(default_spec(crime, preset_plan(plan_name), seed=seed))
    raise SessionError("scene source needs 'preset', 'crime_type', or 'document'")


@dataclass
class Session:
    """Authoritative simulator state behind the wire protocol.

    All mutation happens in `handle_command` and `tick`; owners must call
    them from a single logical thread.
    """

    id: str
    scene: Scene
    config: BlimpConfig = field(default_factory=BlimpConfig)
    drift: DriftModel = field(default_factory=DriftModel)
    cam: CameraModel = field(default_factory=CameraModel)
    thermal_model: ThermalModel = field(default_factory=ThermalModel)
    lidar_model: LidarModel = field(default_factory=LidarModel)
    command_latency_s: float = 0.0  # simulated radio-link delay

    def __post_init__(self):
        self.state = spawn_state(self.scene)
        self.sensors_on = {name: False for name in SENSOR_NAMES}
        self.recording = False
        self.run_log: RunLog | None = None
        self.tick_index = 0
        self.started = False  # clock paused until first command/tick request
        self.pending_bursts: list[tuple[float, CommandBurst]] = []  # (apply_at, burst)
        self.last_thermal = None
        self.reading_index = 0

    # -- commands ----------------------------------------------------------

    def handle_command(self, msg: dict) -> CommandResult:
        """Apply one CommandMessage; always returns exactly one ack/error."""
        request_id = msg.get("request_id") if isinstance(msg, dict) else None
        if not isinstance(msg, dict) or "type" not in msg:
            return CommandResult(False, request_id, "malformed command")
        ctype = msg["type"]
        self.started = True
        try:
            if ctype == "burst":
                return self._cmd_burst(msg, request_id)
            if ctype == "sensor":
                return self._cmd_sensor(msg, request_id)
            if ctype == "record":
                return self._cmd_record(msg, request_id)
            if ctype == "reset":
                return self._cmd_reset(request_id)
            if ctype == "load_scene":
                return self._cmd_load_scene(msg, request_id)
        except Exception as exc:  # malformed payloads must still get a reply
            return CommandResult(False, request_id, str(exc))
        return CommandResult(False, request_id, f"unknown command type {ctype!r}")

    def _cmd_burst(self, msg: dict, request_id) -> CommandResult:
        direction = msg.get("dir")
        if direction not in blimp_mod.BURST_DIRECTIONS:
            return CommandResult(False, request_id, f"unknown direction {direction!r}")
        duration = float(msg.get("duration_ms", blimp_mod.BURST_REFERENCE_MS))
        try:
            cmd = CommandBurst(direction, duration)
        except ValueError as exc:
            return CommandResult(False, request_id, str(exc))
        if self.state.battery.exhausted:
            return CommandResult(False, request_id, "battery")
        self.pending_bursts.append((self.state.time_s + self.command_latency_s, cmd))
        return CommandResult(True, request_id)

    def _cmd_sensor(self, msg: dict, request_id) -> CommandResult:
        name = msg.get("sensor")
        if name not in SENSOR_NAMES:
            return CommandResult(False, request_id, f"unknown sensor {name!r}")
        self.sensors_on[name] = bool(msg.get("on", True))
        return CommandResult(True, request_id)

    def _cmd_record(self, msg: dict, request_id) -> CommandResult:
        turn_on = bool(msg.get("on", not self.recording))
        if turn_on and not self.recording:
            self.run_log = RunLog(
                scene_hash=scene_hash(self.scene),
                seed=self.drift.seed,
                planner="manual",
                params={"session": self.id},
                config={"blimp": asdict(self.config), "drift": asdict(self.drift)},
            )
        self.recording = turn_on
        return CommandResult(True, request_id)

    def _cmd_reset(self, request_id) -> CommandResult:
        self.state = spawn_state(self.scene)
        self.tick_index = 0
        self.pending_bursts.clear()
        self.last_thermal = None
        self.recording = False
        self.run_log = None
        return CommandResult(True, request_id)

    def _cmd_load_scene(self, msg: dict, request_id) -> CommandResult:
        try:
            scene = scene_from_source(msg.get("scene"))
        except SessionError as exc:
            return CommandResult(False, request_id, str(exc))
        self.scene = scene
        return self._cmd_reset(request_id)

    # -- simulation --------------------------------------------------------

    def tick(self, dt_s: float = TICK_DT_S) -> list[dict]:
        """Advance one fixed step and emit telemetry for enabled sensors."""
        self.started = True
        self.tick_index += 1
        burst_doc = None
        thrusting = False
        # deliver bursts whose link delay elapses within this tick
        if self.pending_bursts and self.pending_bursts[0][0] <= self.state.time_s + dt_s + 1e-9:
            _, cmd = self.pending_bursts.pop(0)
            try:
                self.state = blimp_mod.apply_burst(self.state, cmd, self.config)
                burst_doc = {"dir": cmd.direction, "ms": cmd.duration_ms}
                thrusting = True
            except blimp_mod.CommandRejectedError:
                burst_doc = None
        self.state = blimp_mod.step(self.state, dt_s, self.drift, self.scene, self.config)
        height = max(self.state.position_m[2], 1e-3)
        wind = downwash_at_ground(self.config, height, thrusting)

        messages = [self._state_message(wind)]
        camera_frame = None
        lidar_doc = None
        thermal_frame = None
        if self.sensors_on["camera"] and self.tick_index % CAMERA_TELEMETRY_EVERY == 0:
            camera_frame = camera_capture(self.scene, self.state, self.cam)
            doc = {
                "v": PROTOCOL_VERSION,
                "type": "camera",
                "time_s": self.state.time_s,
                "footprint": [[x, y] for x, y in camera_frame.footprint_m],
                "ids": sorted(camera_frame.captured_ids),
            }
            if self.tick_index % CAMERA_RASTER_EVERY == 0:
                doc["raster_png_b64"] = _png_b64(
                    render_topdown(self.scene, self.state, self.cam)
                )
            messages.append(doc)
        if self.sensors_on["lidar"] and self.tick_index % LIDAR_EVERY == 0:
            lidar_doc = {}
            for mount in ("forward", "side", "down"):
                model = LidarModel(
                    self.lidar_model.min_range_m,
                    self.lidar_model.max_range_m,
                    self.lidar_model.resolution_m,
                    self.lidar_model.accuracy_m,
                    mount,
                )
                reading = lidar_read(
                    self.scene, self.state, model, substream_key(self.drift.seed, self.reading_index)
                )
                self.reading_index += 1
                lidar_doc[mount] = lidar_wire_value(reading)
            messages.append(
                {
                    "v": PROTOCOL_VERSION,
                    "type": "lidar",
                    "time_s": self.state.time_s,
                    "readings": lidar_doc,
                }
            )
        if self.sensors_on["thermal"] and self.tick_index % THERMAL_EVERY == 0:
            thermal_frame = thermal_capture(
                self.scene,
                self.state,
                self.thermal_model,
                self.last_thermal,
                substream_key(self.drift.seed, self.reading_index),
            )
            self.reading_index += 1
            self.last_thermal = thermal_frame
            messages.append(
                {
                    "v": PROTOCOL_VERSION,
                    "type": "thermal",
                    "time_s": self.state.time_s,
                    "rows": self.thermal_model.rows,
                    "cols": self.thermal_model.cols,
                    "centi_c": thermal_wire_frame(thermal_frame),
                }
            )
        if self.recording and self.run_log is not None:
            self.run_log.records.append(
                RunRecord(
                    time_s=self.state.time_s,
                    position_m=self.state.position_m,
                    heading_rad=self.state.heading_rad,
                    velocity_mps=self.state.velocity_mps,
                    battery_drawn_mah=self.state.battery.drawn_mah,
                    command=burst_doc,
                    camera=camera_frame,
                    lidar=lidar_doc,
                    wind_mps=wind,
                )
            )
        return messages

    def _state_message(self, wind: float) -> dict:
        x, y, z = self.state.position_m
        vx, vy, vz = self.state.velocity_mps
        return {
            "v": PROTOCOL_VERSION,
            "type": "state",
            "time_s": self.state.time_s,
            "pos": [x, y, z],
            "heading_rad": self.state.heading_rad,
            "vel": [vx, vy, vz],
            "battery_drawn_mah": self.state.battery.drawn_mah,
            "battery_usable_mah": self.state.battery.usable_mah,
            "recording": self.recording,
            "sensors": dict(self.sensors_on),
            "wind_mps": wind,
        }

    def log_bytes(self) -> bytes:
        if self.run_log is None:
            raise SessionError("no run log recorded")
        return save_runlog(self.run_log)


def open_session(source: dict | str, config: BlimpConfig | None = None,
                 drift: DriftModel | None = None, session_id: str = "s0") -> Session:
    """Create a paused session from a preset, generator spec, or document."""
    scene = scene_from_source(source)
    return Session(
        id=session_id,
        scene=scene,
        config=config or BlimpConfig(),
        drift=drift or DriftModel(),
    )


def replay(log: RunLog, scene: Scene, speed: float = 1.0):
    """Yield (delay_s, telemetry message) pairs and finish with the metrics.

    Raises if the log does not belong to `scene`.
    """
    if log.scene_hash != scene_hash(scene):
        raise SessionError("run log scene hash does not match the scene")
    if speed <= 0:
        raise ValueError("speed must be positive")
    prev_t = log.records[0].time_s if log.records else 0.0
    for rec in log.records:
        delay = (rec.time_s - prev_t) / speed
        prev_t = rec.time_s
        msg = {
            "v": PROTOCOL_VERSION,
            "type": "state",
            "time_s": rec.time_s,
            "pos": list(rec.position_m),
            "heading_rad": rec.heading_rad,
            "vel": list(rec.velocity_mps),
            "battery_drawn_mah": rec.battery_drawn_mah,
            "wind_mps": rec.wind_mps,
        }
        yield delay, msg
        if rec.camera is not None:
            yield 0.0, {
                "v": PROTOCOL_VERSION,
                "type": "camera",
                "time_s": rec.time_s,
                "footprint": [[x, y] for x, y in rec.camera.footprint_m],
                "ids": sorted(rec.camera.captured_ids),
            }


def replay_metrics(log: RunLog, scene: Scene):
    if log.scene_hash != scene_hash(scene):
        raise SessionError("run log scene hash does not match the scene")
    return compute_metrics(log, scene)


def _png_b64(rgb: np.ndarray) -> str:
    from PIL import Image

    buf = io.BytesIO()
    Image.fromarray(rgb, mode="RGB").save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


# ---------------------------------------------------------------------------
# FastAPI wiring
# ---------------------------------------------------------------------------


def create_app(static_dir: str | None = None):
    """WebSocket + HTTP server exposing sessions for piloting clients."""
    app = FastAPI(title="blimpsim service")
    sessions: dict[str, Session] = {}
    loops: dict[str, asyncio.Task] = {}
    subscribers: dict[str, set] = {}
    counter = {"next": 0}

    @app.get("/scenes/presets")
    def presets():
        return {"v": PROTOCOL_VERSION, "presets": sorted(PRESET_PLANS)}

    @app.post("/sessions")
    def create_session(payload: dict):
        try:
            session_id = f"s{counter['next']}"
            counter["next"] += 1
            drift = DriftModel(seed=int(payload.get("drift_seed", 0)))
            session = open_session(payload.get("scene", "hint-empty"), drift=drift,
                                   session_id=session_id)
        except SessionError as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        sessions[session_id] = session
        subscribers[session_id] = set()
        plan = session.scene.floor_plan
        return {
            "v": PROTOCOL_VERSION,
            "id": session_id,
            "scene_hash": scene_hash(session.scene),
            "plan": {
                "name": plan.name,
                "width_m": plan.width_m,
                "height_m": plan.height_m,
                "cell_size_m": plan.cell_size_m,
                "cells": [
                    "".join("#" if v else "." for v in row) for row in (plan.cells != 0)
                ],
            },
            "evidence": [
                {"id": it.id, "kind": it.kind.name, "pos": list(it.position_m)}
                for it in session.scene.evidence
            ],
        }

    @app.get("/sessions/{session_id}/scene")
    def get_scene(session_id: str):
        session = sessions.get(session_id)
        if session is None:
            raise HTTPException(status_code=404, detail="no such session")
        from .world import save_scene

        return json.loads(save_scene(session.scene).decode("utf-8"))

    @app.get("/sessions/{session_id}/log")
    def get_log(session_id: str):
        session = sessions.get(session_id)
        if session is None:
            raise HTTPException(status_code=404, detail="no such session")
        try:
            data = session.log_bytes()
        except SessionError as exc:
            raise HTTPException(status_code=404, detail=str(exc))
        return PlainTextResponse(data.decode("utf-8"), media_type="application/x-ndjson")

    async def _run_loop(session_id: str):
        session = sessions[session_id]
        try:
            while session_id in sessions:
                if session.started:
                    messages = session.tick()
                    dead = []
                    for ws in subscribers.get(session_id, set()):
                        try:
                            for msg in messages:
                                await ws.send_text(json.dumps(msg))
                        except Exception:
                            dead.append(ws)
                    for ws in dead:
                        subscribers[session_id].discard(ws)
                await asyncio.sleep(TICK_DT_S)
        except asyncio.CancelledError:
            pass

    @app.websocket("/session/{session_id}")
    async def session_socket(ws: WebSocket, session_id: str):
        session = sessions.get(session_id)
        await ws.accept()
        if session is None:
            await ws.send_text(
                json.dumps({"v": PROTOCOL_VERSION, "type": "error", "request_id": None,
                            "reason": "no such session"})
            )
            await ws.close()
            return
        subscribers[session_id].add(ws)
        if session_id not in loops:
            loops[session_id] = asyncio.create_task(_run_loop(session_id))
        try:
            while True:
                raw = await ws.receive_text()
                try:
                    msg = json.loads(raw)
                except json.JSONDecodeError:
                    await ws.send_text(
                        json.dumps({"v": PROTOCOL_VERSION, "type": "error",
                                    "request_id": None, "reason": "invalid JSON"})
                    )
                    continue
                result = session.handle_command(msg)
                await ws.send_text(json.dumps(result.to_message()))
        except WebSocketDisconnect:
            subscribers[session_id].discard(ws)

    if static_dir:
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=static_dir, html=True), name="ui")
    return app
