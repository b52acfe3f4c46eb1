"""Primary acceptance suite.

Each test implements one release criterion at its stated tolerance and
prints a single PASS line when it holds. Run with `pytest -s` to see the
lines; any failure is a red release gate.
"""

import math
import statistics
import time

import numpy as np
import pytest

import oracles
from blimpsim import blimp, planner, sensors, stains, world
from blimpsim.rng import substream

CAM = sensors.CameraModel()


def announce(name):
    print(f"ACCEPTANCE PASS: {name}")


def test_disturbance_reproduction():
    t0 = time.time()
    buoyant = blimp.BlimpConfig()
    rotor = blimp.BlimpConfig(craft_kind="rotor")

    blimp_wind = blimp.downwash_at_ground(buoyant, 0.2, thrust_active=False)
    assert blimp_wind == 0.0  # exact

    rotor_wind = blimp.downwash_at_ground(rotor, 1.2, thrust_active=True)
    assert rotor_wind == pytest.approx(0.7, abs=0.1)
    assert 0.6 <= rotor_wind <= 0.8

    room = world.empty_room(6, 4)
    items = [
        world.EvidenceItem("photo", world.FIREARM_PHOTO, (1.0, 1.0)),
        world.EvidenceItem("p_sheet", world.BLOOD_SHEET_PASSIVE, (2.0, 2.0)),
        world.EvidenceItem("a_sheet", world.BLOOD_SHEET_ACTIVE, (3.0, 3.0)),
        world.EvidenceItem("t_sheet", world.BLOOD_SHEET_TRANSFER, (4.0, 1.5)),
        world.EvidenceItem("shoes", world.SHOES, (5.0, 3.0)),
        world.EvidenceItem("body", world.BODY, (3.0, 0.9)),
    ]
    scene = world.Scene(room, items, seed=2)
    light_scatterable = {
        it.id for it in items if it.kind.scatterable and it.kind.mass_class == "light"
    }

    under_rotor = world.scatter_evidence(scene, rotor_wind)
    displaced = {it.id for it in under_rotor.evidence if it.displaced}
    assert displaced == light_scatterable

    under_blimp = world.scatter_evidence(scene, blimp_wind)
    assert not any(it.displaced for it in under_blimp.evidence)

    assert time.time() - t0 < 1.0
    announce("disturbance reproduction (0.0 m/s blimp, 0.6-0.8 m/s rotor, scatter split)")


def test_manual_baseline_bracketing():
    t0 = time.time()
    kinds = world.default_evidence_set()
    closed_fracs, open_fracs = [], []
    for seed in range(20):
        room = world.empty_room(12, 6)
        spec = world.CrimeSceneSpec("homicide", room, {k: 1.0 for k in kinds}, seed=100 + seed)
        scene = world.generate_scene(spec)
        assert len(scene.evidence) == 7
        path = planner.plan_snake(scene.floor_plan, CAM, altitude_m=1.0, overlap_fraction=0.1)
        drift = blimp.DriftModel(seed=seed)
        closed = planner.execute_path(scene, path, drift=drift, seed=seed, closed_loop=True)
        opened = planner.execute_path(scene, path, drift=drift, seed=seed, closed_loop=False)
        closed_fracs.append(planner.compute_metrics(closed, scene).evidence_capture_fraction)
        open_fracs.append(planner.compute_metrics(opened, scene).evidence_capture_fraction)

    open_mean = statistics.mean(open_fracs)
    closed_mean = statistics.mean(closed_fracs)
    assert 0.5 <= open_mean <= 0.95, f"open-loop mean {open_mean}"
    assert closed_mean >= 0.95, f"closed-loop mean {closed_mean}"
    assert all(c >= o for c, o in zip(closed_fracs, open_fracs))
    assert time.time() - t0 < 60.0
    announce(
        f"manual-baseline bracketing (open {open_mean:.3f} in [0.5, 0.95], "
        f"closed {closed_mean:.3f} >= 0.95, per-seed dominance)"
    )


def test_metrics_arithmetic():
    # 5.2 of 7 captured on average -> 74.3%
    room = world.empty_room(12, 6)
    kinds = world.default_evidence_set()
    spec = world.CrimeSceneSpec("homicide", room, {k: 1.0 for k in kinds}, seed=111)
    scene = world.generate_scene(spec)
    ids = sorted(it.id for it in scene.evidence)
    logs = []
    for k in [5, 5, 5, 5, 6, 5, 5, 5, 5, 6]:
        frame = sensors.CameraFrame(0.0, [(0, 0), (1, 0), (1, 1), (0, 1)], set(ids[:k]))
        logs.append(
            planner.RunLog(
                "h", 0, "manual",
                records=[planner.RunRecord(0.5, (0, 0, 1.5), 0.0, (0, 0, 0), 0.0, camera=frame)],
            )
        )
    pooled = planner.pooled_capture_fraction(logs, [scene] * len(logs))
    assert pooled == pytest.approx(0.743, abs=0.001)
    per_run_mean = statistics.mean(
        planner.compute_metrics(log, scene).evidence_capture_fraction for log in logs
    )
    assert per_run_mean == pytest.approx(0.743, abs=0.001)

    # 20 of 27 contours correct -> 74.1%; two false positives -> 69.0%
    def synthetic_eval(n_correct, n_wrong, n_fp):
        truths, preds = [], []
        i = 0
        for correct in [True] * n_correct + [False] * n_wrong:
            truth_class = stains.STAIN_PASSIVE if correct else stains.STAIN_ACTIVE
            truths.append(
                stains.StainGroundTruth(
                    f"t{i}", truth_class, (i * 60.0, 0.0), (6, 5), 0.0, (200, 0, 0)
                )
            )
            preds.append(
                stains.StainPrediction(
                    stains.STAIN_PASSIVE,
                    stains.EllipseFit((i * 60.0, 2.0), (6, 5), 0.0, 80, 0.2),
                )
            )
            i += 1
        for _ in range(n_fp):
            preds.append(
                stains.StainPrediction(
                    stains.STAIN_PASSIVE,
                    stains.EllipseFit((9000.0 + i * 60.0, 0.0), (6, 5), 0.0, 80, 0.2),
                )
            )
            i += 1
        return stains.evaluate_classification(preds, truths)

    report = synthetic_eval(20, 7, 0)
    assert report.accuracy_on_true_blood == pytest.approx(0.741, abs=0.001)
    report_fp = synthetic_eval(20, 7, 2)
    assert report_fp.accuracy_including_false_positives == pytest.approx(0.690, abs=0.001)
    announce("metrics arithmetic (74.3%, 74.1%, 69.0% within 0.1 pp)")


def test_planner_geometry():
    t0 = time.time()
    plan = world.empty_room(4, 3)
    scene = world.Scene(plan, [])
    path = planner.plan_snake(plan, CAM, altitude_m=1.5, overlap_fraction=0.25)
    assert path.params["footprint_width_m"] == pytest.approx(1.732, abs=0.001)
    assert path.params["lanes"] == 4
    metrics = planner.compute_metrics(planner.ideal_run_log(scene, path, CAM), scene)
    assert metrics.floor_coverage_fraction >= 0.99
    assert metrics.mean_consecutive_overlap_fraction >= 0.25
    assert metrics.turn_count == 6
    assert metrics.duration_s <= 3600.0

    # defaults on the larger presets also fit inside an hour
    for preset in ("hint-empty", "nfc-villa"):
        p = world.preset_plan(preset)
        sc = world.Scene(p, [])
        m = planner.compute_metrics(
            planner.ideal_run_log(sc, planner.plan_snake(p, CAM, 1.5, 0.25), CAM), sc
        )
        assert m.duration_s <= 3600.0
    assert time.time() - t0 < 10.0
    announce("planner geometry (4 lanes, >=99% coverage, >=25% overlap, 6 turns, <=1 h)")


def test_stain_pipeline_oracle():
    t0 = time.time()
    # 1000 random synthetic contours against brute-force moments
    rng = substream(4242, "acceptance_contours")
    checked = 0
    while checked < 1000:
        n = rng.randint(30, 400)
        cx, cy = rng.uniform(20, 40), rng.uniform(20, 40)
        sx, sy = rng.uniform(2, 9), rng.uniform(2, 9)
        rho = rng.uniform(-0.7, 0.7)
        seen = set()
        for _ in range(n):
            u, v = rng.gauss(0, sx), rng.gauss(0, sy)
            seen.add((int(cy + v + rho * u), int(cx + u)))
        if len(seen) < 5:
            continue
        pixels = np.array(sorted(seen))
        fit = stains.fit_ellipse(stains.Contour(pixels, []))
        ref = oracles.moments_fit([tuple(p) for p in pixels])
        assert fit.area_px == ref["area"]
        assert fit.centroid_px[0] == pytest.approx(ref["centroid"][0], rel=1e-6, abs=1e-9)
        assert fit.centroid_px[1] == pytest.approx(ref["centroid"][1], rel=1e-6, abs=1e-9)
        if not fit.degenerate:
            assert fit.semi_axes_px[0] == pytest.approx(ref["axes"][0], rel=1e-6)
            assert fit.semi_axes_px[1] == pytest.approx(ref["axes"][1], rel=1e-6)
            assert fit.eccentricity == pytest.approx(ref["eccentricity"], rel=1e-6, abs=1e-9)
        checked += 1

    # rendered (20, 10) ellipse
    img = np.full((120, 120, 3), 255, np.uint8)
    stains._fill_ellipse(img, 60, 60, 20, 10, 0.4, (190, 35, 35))
    contour = stains.extract_red_clusters(stains.StainRaster(img, [], 0))[0]
    fit = stains.fit_ellipse(contour)
    assert fit.eccentricity == pytest.approx(0.866, abs=0.05)

    # margin-separated sheets classify perfectly; shrinking margins degrade
    margins = [1.0, 0.6, 0.3, 0.0]
    means = []
    for margin in margins:
        accs = []
        for seed in range(20):
            params = stains.margin_params((5, 5, 1), margin, width_px=420, height_px=320)
            accs.append(stains.pipeline_accuracy(params, seed).accuracy_on_true_blood)
        means.append(statistics.mean(accs))
    assert means[0] == 1.0
    for earlier, later in zip(means, means[1:]):
        assert later <= earlier + 1e-9
    assert means[-1] < 1.0
    assert time.time() - t0 < 30.0
    announce(
        "stain pipeline oracle (1000 contours @1e-6, ecc 0.866 +/- 0.05, "
        f"margin accuracies {['%.3f' % m for m in means]} monotone)"
    )


def test_sensor_contracts():
    room = world.Scene(world.empty_room(8, 6), [])
    state = blimp.BlimpState(position_m=(5.05, 3.0, 1.5))
    model = sensors.LidarModel(mount="forward")
    worst = 0.0
    for seed in range(10_000):
        r = sensors.lidar_read(room, state, model, seed)
        assert r.status == sensors.LIDAR_OK
        worst = max(worst, abs(r.distance_m - 3.0))
        cm = r.distance_m * 100.0
        assert abs(cm - round(cm)) < 1e-6
    assert worst <= 0.065

    far = world.Scene(world.empty_room(12, 4), [])
    assert (
        sensors.lidar_read(
            far, blimp.BlimpState(position_m=(1.05, 2.0, 1.5)), model, 0
        ).status
        == sensors.LIDAR_OUT_OF_RANGE
    )
    assert (
        sensors.lidar_read(
            room, blimp.BlimpState(position_m=(7.95, 3.0, 1.5)), model, 0
        ).status
        == sensors.LIDAR_TOO_CLOSE
    )

    # thermal: exact shape, bit-exact interlace, checkerboard under motion
    hot = world.other_kind("warm_sheet", (1.2, 1.2))
    item = world.EvidenceItem("w", hot, (4.0, 3.0), touched_at_s=0.0)
    scene = world.Scene(world.empty_room(8, 6), [item])
    tmodel = sensors.ThermalModel()
    f1 = sensors.thermal_capture(scene, blimp.BlimpState(position_m=(4, 3, 1.5)), tmodel, None, 1)
    assert f1.frame.shape == (24, 32)
    px_w = 2 * 1.5 * math.tan(math.radians(55)) / 32
    moved = blimp.BlimpState(position_m=(4 + px_w, 3, 1.5), time_s=0.5)
    f2 = sensors.thermal_capture(scene, moved, tmodel, f1, 2)
    assert f2.frame.shape == (24, 32)
    rows, cols = np.meshgrid(np.arange(24), np.arange(32), indexing="ij")
    stale = (rows + cols) % 2 != f2.pass_parity
    assert np.array_equal(f2.frame[stale], f1.frame[stale])
    static = sensors.thermal_capture(
        scene, blimp.BlimpState(position_m=(4, 3, 1.5), time_s=0.5), tmodel, f1, 2
    )

    def checkerboard_signal(frame):
        diff = np.abs(np.diff(frame.frame, axis=0))
        return int((diff > 5.0).sum())

    assert checkerboard_signal(f2) >= checkerboard_signal(static) + 4

    src = sensors.HeatSource("w", touched_at_s=0.0, cooling_tau_s=300.0)
    at_tau = sensors.heat_source_temperature(src, 21.0, 300.0)
    assert abs(at_tau - (21.0 + 12.0 / math.e)) < 1e-9
    announce("sensor contracts (lidar <=0.065 m & variants, 24x32 interlace, decay at tau)")


def test_physics_constants():
    assert blimp.net_lift(blimp.BlimpConfig(envelope_volume_m3=1.0, payload_mass_kg=0.0)) == 1.11
    per_balloon_g = (
        blimp.net_lift(blimp.BlimpConfig(envelope_volume_m3=0.072, payload_mass_kg=0.0)) * 1000.0
    )
    assert per_balloon_g == pytest.approx(79.9, abs=0.1)
    endurance = blimp.endurance_minutes(blimp.BatteryState())
    assert endurance == pytest.approx(20.0, abs=4.0)
    announce(
        f"physics constants (1.11 kg/m^3 exact, {per_balloon_g:.1f} g per balloon, "
        f"{endurance:.1f} min endurance)"
    )


def test_determinism_and_replay():
    spec_a = world.default_spec("homicide", world.nfc_villa_plan(), seed=42)
    spec_b = world.default_spec("homicide", world.nfc_villa_plan(), seed=42)
    assert world.save_scene(world.generate_scene(spec_a)) == world.save_scene(
        world.generate_scene(spec_b)
    )

    room = world.empty_room(6, 4)
    kinds = world.default_evidence_set()
    scene = world.generate_scene(
        world.CrimeSceneSpec("homicide", room, {k: 1.0 for k in kinds}, seed=77)
    )
    path = planner.plan_snake(scene.floor_plan, CAM, 1.2, 0.25)
    drift = blimp.DriftModel(seed=9)
    log_bytes_a = planner.save_runlog(
        planner.execute_path(scene, path, drift=drift, seed=9)
    )
    log_bytes_b = planner.save_runlog(
        planner.execute_path(scene, path, drift=drift, seed=9)
    )
    assert log_bytes_a == log_bytes_b

    live = planner.execute_path(scene, path, drift=drift, seed=9)
    live_metrics = planner.compute_metrics(live, scene)
    replayed = planner.load_runlog(planner.save_runlog(live))
    replay_metrics = planner.compute_metrics(replayed, scene)
    assert live_metrics == replay_metrics  # bit-exact, no tolerance
    announce("determinism & replay (byte-identical scenes/logs, bit-exact metrics)")
