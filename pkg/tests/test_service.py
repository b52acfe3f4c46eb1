import asyncio
import json
import threading
import time

import pytest

from blimpsim import planner, service, world


def make_session(source="hint-empty", **kw):
    return service.open_session(source, **kw)


class TestOpenSession:
    def test_preset_hint(self):
        session = make_session("hint-empty")
        plan = session.scene.floor_plan
        x0, y0, x1, y1 = plan.interior_bounds()
        assert (x1 - x0) * (y1 - y0) == pytest.approx(50.0, rel=1e-6)
        assert not session.started  # clock paused until first command/tick

    def test_generator_delegates_to_world(self):
        session = make_session({"crime_type": "homicide", "plan": "nfc-villa", "seed": 42})
        direct = world.generate_scene(
            world.default_spec("homicide", world.nfc_villa_plan(), seed=42)
        )
        assert world.save_scene(session.scene) == world.save_scene(direct)

    def test_document_source(self):
        scene = world.Scene(world.empty_room(4, 3), [])
        doc = json.loads(world.save_scene(scene))
        session = make_session({"document": doc})
        assert session.scene == scene

    def test_bad_sources_rejected(self):
        with pytest.raises(service.SessionError):
            make_session("no-such-preset")
        with pytest.raises(service.SessionError):
            make_session({"document": {"schema_version": 99}})
        with pytest.raises(service.SessionError):
            make_session({"crime_type": "jaywalking"})

    def test_spawn_collision_free(self):
        session = make_session({"crime_type": "homicide", "plan": "nfc-villa", "seed": 3})
        x, y, z = session.state.position_m
        plan = session.scene.floor_plan
        assert plan.surface_height(x, y) < z <= plan.ceiling_height_m


class TestCommands:
    def test_burst_applied_on_next_tick(self):
        session = make_session()
        result = session.handle_command(
            {"v": 1, "type": "burst", "dir": "forward", "duration_ms": 300, "request_id": "a"}
        )
        assert result.ok and result.request_id == "a"
        assert session.state.velocity_mps == (0.0, 0.0, 0.0)
        session.tick()
        assert session.state.velocity_mps[0] > 0.0

    def test_unknown_direction(self):
        session = make_session()
        result = session.handle_command({"v": 1, "type": "burst", "dir": "sideways"})
        assert not result.ok
        assert "unknown direction" in result.error

    def test_battery_error(self):
        session = make_session()
        session.state.battery.drawn_mah = session.state.battery.usable_mah
        result = session.handle_command({"v": 1, "type": "burst", "dir": "forward"})
        assert not result.ok and result.error == "battery"

    def test_sensor_toggle(self):
        session = make_session()
        assert not any(session.sensors_on.values())  # default off
        result = session.handle_command({"v": 1, "type": "sensor", "sensor": "thermal", "on": True})
        assert result.ok and session.sensors_on["thermal"]
        result = session.handle_command({"v": 1, "type": "sensor", "sensor": "gps", "on": True})
        assert not result.ok

    def test_every_command_gets_exactly_one_reply(self):
        session = make_session()
        commands = [
            {"type": "burst", "dir": "forward"},
            {"type": "burst", "dir": "nowhere"},
            {"type": "sensor", "sensor": "camera", "on": True},
            {"type": "record", "on": True},
            {"type": "reset"},
            {"type": "bogus"},
            "not even a dict",
            {"no_type": 1},
        ]
        for msg in commands:
            result = session.handle_command(msg)
            assert isinstance(result, service.CommandResult)
            reply = result.to_message()
            assert reply["type"] in ("ack", "error")

    def test_reset_respawns(self):
        session = make_session()
        session.handle_command({"v": 1, "type": "burst", "dir": "forward"})
        for _ in range(10):
            session.tick()
        moved = session.state.position_m
        session.handle_command({"v": 1, "type": "reset"})
        assert session.state.position_m != moved
        assert session.state.time_s == 0.0

    def test_load_scene_command(self):
        session = make_session()
        result = session.handle_command(
            {"v": 1, "type": "load_scene", "scene": {"crime_type": "arson", "seed": 1}}
        )
        assert result.ok
        kinds = {it.kind.name for it in session.scene.evidence}
        assert kinds <= {"accelerant"}

    def test_command_latency_knob(self):
        session = make_session()
        session.command_latency_s = 0.25
        session.handle_command({"v": 1, "type": "burst", "dir": "forward"})
        session.tick()  # t=0.1: still in flight
        session.tick()  # t=0.2
        assert session.state.velocity_mps[0] == 0.0
        session.tick()  # t=0.3: delivered
        assert session.state.velocity_mps[0] > 0.0


class TestTick:
    def test_sensors_off_only_state(self):
        session = make_session()
        messages = session.tick()
        assert [m["type"] for m in messages] == ["state"]

    def test_thermal_two_hertz(self):
        session = make_session()
        session.handle_command({"v": 1, "type": "sensor", "sensor": "thermal", "on": True})
        thermal = 0
        for _ in range(10):  # 1 s of sim time
            thermal += sum(1 for m in session.tick() if m["type"] == "thermal")
        assert thermal == 2

    def test_camera_rates(self):
        session = make_session()
        session.handle_command({"v": 1, "type": "sensor", "sensor": "camera", "on": True})
        frames = rasters = 0
        for _ in range(10):
            for m in session.tick():
                if m["type"] == "camera":
                    frames += 1
                    rasters += "raster_png_b64" in m
        assert frames == 10
        assert rasters == 2

    def test_recording_timestamps_increase(self):
        session = make_session()
        session.handle_command({"v": 1, "type": "record", "on": True})
        session.handle_command({"v": 1, "type": "sensor", "sensor": "lidar", "on": True})
        for _ in range(20):
            session.tick()
        times = [r.time_s for r in session.run_log.records]
        assert len(times) == 20
        assert all(a < b for a, b in zip(times, times[1:]))
        data = session.log_bytes()
        again = planner.load_runlog(data)
        assert len(again.records) == 20

    def test_thermal_frames_are_24x32_on_wire(self):
        session = make_session()
        session.handle_command({"v": 1, "type": "sensor", "sensor": "thermal", "on": True})
        found = None
        for _ in range(5):
            for m in session.tick():
                if m["type"] == "thermal":
                    found = m
        assert found is not None
        assert found["rows"] == 24 and found["cols"] == 32
        assert len(found["centi_c"]) == 24 * 32


class TestReplay:
    def make_recorded(self):
        session = make_session({"crime_type": "homicide", "plan": "hint-empty", "seed": 8})
        session.handle_command({"v": 1, "type": "record", "on": True})
        session.handle_command({"v": 1, "type": "sensor", "sensor": "camera", "on": True})
        session.handle_command({"v": 1, "type": "burst", "dir": "forward"})
        for _ in range(30):
            session.tick()
        return session

    def test_live_equals_replayed(self):
        session = self.make_recorded()
        live = planner.compute_metrics(session.run_log, session.scene)
        reloaded = planner.load_runlog(session.log_bytes())
        replayed = service.replay_metrics(reloaded, session.scene)
        assert live == replayed

    def test_scene_hash_mismatch_refused(self):
        session = self.make_recorded()
        other = world.Scene(world.empty_room(4, 3), [])
        log = planner.load_runlog(session.log_bytes())
        with pytest.raises(service.SessionError):
            service.replay_metrics(log, other)
        with pytest.raises(service.SessionError):
            list(service.replay(log, other))

    def test_replay_stream_speed(self):
        session = self.make_recorded()
        log = planner.load_runlog(session.log_bytes())
        normal = list(service.replay(log, session.scene, speed=1.0))
        fast = list(service.replay(log, session.scene, speed=10.0))
        assert len(normal) == len(fast)
        assert sum(d for d, _ in fast) == pytest.approx(sum(d for d, _ in normal) / 10.0)

    def test_tampered_log_line_number(self):
        session = self.make_recorded()
        lines = session.log_bytes().decode().splitlines()
        lines[5] = '{"broken": '
        with pytest.raises(planner.RunLogError, match="line 6"):
            planner.load_runlog("\n".join(lines).encode())


@pytest.fixture(scope="module")
def live_server():
    import uvicorn

    app = service.create_app()
    config = uvicorn.Config(app, host="127.0.0.1", port=8931, log_level="error")
    server = uvicorn.Server(config)
    thread = threading.Thread(target=server.run, daemon=True)
    thread.start()
    deadline = time.time() + 5
    import httpx

    while time.time() < deadline:
        try:
            httpx.get("http://127.0.0.1:8931/scenes/presets", timeout=0.5)
            break
        except Exception:
            time.sleep(0.05)
    yield "http://127.0.0.1:8931"
    server.should_exit = True
    thread.join(timeout=3)


class TestHttpApi:
    def test_presets_endpoint(self, live_server):
        import httpx

        doc = httpx.get(f"{live_server}/scenes/presets").json()
        assert doc["v"] == 1
        assert "hint-empty" in doc["presets"]

    def test_full_piloting_round_trip(self, live_server, tmp_path):
        import httpx
        import websockets

        created = httpx.post(
            f"{live_server}/sessions",
            json={"scene": {"crime_type": "homicide", "plan": "nfc-villa", "seed": 42}},
        ).json()
        sid = created["id"]
        assert created["plan"]["name"] == "nfc-villa"
        assert created["evidence"]

        async def fly():
            uri = f"ws://127.0.0.1:8931/session/{sid}"
            acks = {}
            telemetry = []
            async with websockets.connect(uri) as ws:
                commands = [
                    {"type": "record", "on": True},
                    {"type": "sensor", "sensor": "camera", "on": True},
                    {"type": "sensor", "sensor": "thermal", "on": True},
                    {"type": "sensor", "sensor": "lidar", "on": True},
                    {"type": "burst", "dir": "forward"},
                    {"type": "burst", "dir": "backward"},
                    {"type": "burst", "dir": "up"},
                    {"type": "burst", "dir": "down"},
                    {"type": "burst", "dir": "rotate_left"},
                    {"type": "burst", "dir": "rotate_right"},
                ]
                for i, cmd in enumerate(commands):
                    cmd.update({"v": 1, "request_id": f"r{i}"})
                    await ws.send(json.dumps(cmd))
                t0 = time.time()
                while time.time() - t0 < 2.5:
                    msg = json.loads(await asyncio.wait_for(ws.recv(), timeout=5))
                    if msg["type"] in ("ack", "error"):
                        acks[msg["request_id"]] = msg["type"]
                    else:
                        telemetry.append(msg)
            return acks, telemetry

        acks, telemetry = asyncio.run(fly())
        assert all(v == "ack" for v in acks.values())
        assert len(acks) == 10
        kinds = {m["type"] for m in telemetry}
        assert {"state", "camera", "thermal", "lidar"} <= kinds
        thermal_times = [m["time_s"] for m in telemetry if m["type"] == "thermal"]
        assert len(thermal_times) >= 2
        rate = (len(thermal_times) - 1) / (thermal_times[-1] - thermal_times[0])
        assert 1.5 <= rate <= 2.5

        log_text = httpx.get(f"{live_server}/sessions/{sid}/log").text
        log_file = tmp_path / "manual.jsonl"
        log_file.write_text(log_text)
        log = planner.load_runlog(log_text.encode())
        assert log.planner == "manual"
        assert log.records

        scene_doc = httpx.get(f"{live_server}/sessions/{sid}/scene").json()
        scene = world.load_scene(json.dumps(scene_doc).encode())
        metrics = service.replay_metrics(log, scene)
        assert metrics.duration_s > 0

    def test_unknown_session_404(self, live_server):
        import httpx

        assert httpx.get(f"{live_server}/sessions/zzz/log").status_code == 404
