"""Coverage path planners, the closed-loop executor, and flight metrics.

Planners are pure geometry; `execute_path` and `plan_wall_follow` run the
craft simulation and return a replayable RunLog. Metrics are computed from
logs only, so live and replayed figures are identical.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np
import shapely
from shapely.geometry import Polygon

from . import blimp as blimp_mod
from .blimp import (
    BlimpConfig,
    BlimpState,
    CommandBurst,
    DriftModel,
    apply_burst,
    downwash_at_ground,
)
from .rng import substream
from .sensors import (
    LIDAR_OK,
    LIDAR_OUT_OF_RANGE,
    CameraFrame,
    CameraModel,
    LidarModel,
    camera_capture,
    camera_footprint_clipped,
    lidar_read,
)
from .world import FloorPlan, Scene, scatter_evidence, scene_hash

RUNLOG_SCHEMA_VERSION = 1

ACTION_TRANSIT = "transit"
ACTION_CAPTURE = "capture"
ACTION_REVISIT = "revisit"

OBSTACLE_CLEARANCE_M = 0.3
WAYPOINT_TOLERANCE_M = 0.1
ALTITUDE_TOLERANCE_M = 0.15
HEADING_GAIN = 0.8
TURN_ANGLE_THRESHOLD_RAD = math.radians(30.0)
CRUISE_SPEED_MPS = 0.2
TURN_RATE_RAD_S = math.radians(30.0)


class PlanningError(Exception):
    """Requested plan is infeasible on this floor plan."""


class ExecutionError(Exception):
    """A flight could not start."""


class RunLogError(Exception):
    """A run log file is malformed; carries the offending line number."""

    def __init__(self, message: str, line: int | None = None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


@dataclass
class Waypoint:
    x: float
    y: float
    z: float
    heading_rad: float = 0.0
    dwell_s: float = 0.0
    action: str = ACTION_TRANSIT


@dataclass
class Path:
    waypoints: list[Waypoint]
    planner: str
    params: dict = field(default_factory=dict)


@dataclass
class RunRecord:
    time_s: float
    position_m: tuple[float, float, float]
    heading_rad: float
    velocity_mps: tuple[float, float, float]
    battery_drawn_mah: float
    command: dict | None = None
    camera: CameraFrame | None = None
    lidar: dict | None = None
    wind_mps: float = 0.0


@dataclass
class RunLog:
    scene_hash: str
    seed: int
    planner: str
    params: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)
    path: Path | None = None
    records: list[RunRecord] = field(default_factory=list)
    truncated: bool = False
    aborted: bool = False

    def camera_frames(self) -> list[CameraFrame]:
        return [r.camera for r in self.records if r.camera is not None]


@dataclass
class CoverageMap:
    cell_size_m: float
    times_seen: np.ndarray
    first_seen_s: np.ndarray

    @property
    def covered_mask(self) -> np.ndarray:
        return self.times_seen > 0


@dataclass
class PlanMetrics:
    floor_coverage_fraction: float
    evidence_capture_fraction: float
    mean_consecutive_overlap_fraction: float
    turn_count: int
    vertical_travel_m: float
    duration_s: float
    energy_mah: float
    redundancy: float

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------------------
# Footprint geometry shared by the planners
# ---------------------------------------------------------------------------


def footprint_dims(cam: CameraModel, altitude_m: float) -> tuple[float, float]:
    """(across-track width, along-track depth) of the ground footprint."""
    th, tv = cam.half_tangents
    return 2.0 * altitude_m * th, 2.0 * altitude_m * tv


def _check_altitude(plan: FloorPlan, altitude_m: float) -> None:
    if not 0.0 < altitude_m < plan.ceiling_height_m:
        raise PlanningError(
            f"altitude {altitude_m} m outside (0, {plan.ceiling_height_m}) m"
        )
    tallest = plan.max_obstacle_height()
    if altitude_m <= tallest:
        raise PlanningError(
            f"altitude {altitude_m} m not above the tallest obstacle ({tallest} m)"
        )


def _spread_positions(lo: float, hi: float, width: float, spacing: float) -> list[float]:
    """Strip centers covering [lo, hi] with strips of `width` at most `spacing` apart."""
    extent = hi - lo
    if width >= extent:
        return [(lo + hi) / 2.0]
    n = max(1, math.ceil(extent / spacing - 1e-9))
    if n == 1:
        return [(lo + hi) / 2.0]
    step = (extent - width) / (n - 1)
    return [lo + width / 2.0 + k * step for k in range(n)]


def _lane_free_intervals(
    plan: FloorPlan, fixed: float, lo: float, hi: float, axis: str, altitude: float
) -> list[tuple[float, float]]:
    """Sub-intervals of a lane line not blocked by tall obstacles or walls.

    Sampled at cell centers so exact boundary coordinates do not leak into
    the neighboring cell.
    """
    cs = plan.cell_size_m
    blocked_limit = altitude - OBSTACLE_CLEARANCE_M
    n = max(1, int(round((hi - lo) / cs)))
    centers = [lo + cs / 2.0 + i * cs for i in range(n)]
    intervals = []
    start = None
    for t in centers:
        x, y = (fixed, t) if axis == "y" else (t, fixed)
        if plan.surface_height(x, y) <= blocked_limit:
            if start is None:
                start = max(lo, t - cs / 2.0)
            end = min(hi, t + cs / 2.0)
        elif start is not None:
            intervals.append((start, end))
            start = None
    if start is not None:
        intervals.append((start, end))
    return [(a, b) for a, b in intervals if b - a > cs]


def _along_positions(lo: float, hi: float, depth: float, overlap: float) -> list[float]:
    """Capture centers along a lane with consecutive overlap >= `overlap`."""
    span = (hi - lo) - depth
    if span <= 0:
        return [(lo + hi) / 2.0]
    spacing = depth * (1.0 - overlap)
    m = max(1, math.ceil(span / spacing - 1e-9)) + 1
    return [lo + depth / 2.0 + i * span / (m - 1) for i in range(m)]


# -- transit routing ---------------------------------------------------------
#
# Capture waypoints are laid out per lane; the straight hop between lanes can
# cross interior walls on multi-room plans. Route those hops over the
# free-at-altitude grid and keep only the line-of-sight corners.


def _passable_grid(plan: FloorPlan, altitude_m: float, inflate_cells: int = 2) -> np.ndarray:
    limit = altitude_m - OBSTACLE_CLEARANCE_M
    heights = np.where(
        plan.cells == 1, plan.ceiling_height_m, np.where(plan.cells == 2, plan.obstacle_heights, 0.0)
    )
    blocked = heights > limit
    for _ in range(inflate_cells):  # stand off the walls a little
        grown = blocked.copy()
        grown[1:, :] |= blocked[:-1, :]
        grown[:-1, :] |= blocked[1:, :]
        grown[:, 1:] |= blocked[:, :-1]
        grown[:, :-1] |= blocked[:, 1:]
        blocked = grown
    return ~blocked


def _segment_clear(passable: np.ndarray, cs: float, a: tuple[float, float],
                   b: tuple[float, float]) -> bool:
    steps = max(2, int(math.hypot(b[0] - a[0], b[1] - a[1]) / (cs * 0.5)) + 1)
    rows, cols = passable.shape
    for i in range(steps + 1):
        t = i / steps
        x = a[0] + (b[0] - a[0]) * t
        y = a[1] + (b[1] - a[1]) * t
        r = min(max(int(y / cs), 0), rows - 1)
        c = min(max(int(x / cs), 0), cols - 1)
        if not passable[r, c]:
            return False
    return True


def _astar_route(passable: np.ndarray, cs: float, start: tuple[float, float],
                 goal: tuple[float, float]) -> list[tuple[float, float]] | None:
    """Grid A* from start to goal, returning smoothed corner points."""
    import heapq

    rows, cols = passable.shape

    def cell(p):
        return (
            min(max(int(p[1] / cs), 0), rows - 1),
            min(max(int(p[0] / cs), 0), cols - 1),
        )

    s, g = cell(start), cell(goal)
    if not passable[s] or not passable[g]:
        return None
    if s == g:
        return [goal]
    open_heap = [(0.0, s)]
    g_cost = {s: 0.0}
    came: dict = {s: None}
    moves = [(-1, 0, 1.0), (1, 0, 1.0), (0, -1, 1.0), (0, 1, 1.0),
             (-1, -1, math.sqrt(2)), (-1, 1, math.sqrt(2)),
             (1, -1, math.sqrt(2)), (1, 1, math.sqrt(2))]
    while open_heap:
        _, cur = heapq.heappop(open_heap)
        if cur == g:
            break
        base = g_cost[cur]
        for dr, dc, w in moves:
            nr, nc = cur[0] + dr, cur[1] + dc
            if not (0 <= nr < rows and 0 <= nc < cols) or not passable[nr, nc]:
                continue
            if dr and dc and not (passable[cur[0] + dr, cur[1]] and passable[cur[0], cur[1] + dc]):
                continue  # no corner cutting
            cost = base + w
            if cost < g_cost.get((nr, nc), math.inf):
                g_cost[(nr, nc)] = cost
                came[(nr, nc)] = cur
                h = math.hypot(nr - g[0], nc - g[1])
                heapq.heappush(open_heap, (cost + h, (nr, nc)))
    if g not in came:
        return None
    cells = []
    node = g
    while node is not None:
        cells.append(node)
        node = came[node]
    cells.reverse()
    points = [start] + [((c + 0.5) * cs, (r + 0.5) * cs) for r, c in cells[1:-1]] + [goal]
    # greedy line-of-sight smoothing
    smoothed = [points[0]]
    anchor = 0
    for i in range(2, len(points)):
        if not _segment_clear(passable, cs, points[anchor], points[i]):
            smoothed.append(points[i - 1])
            anchor = i - 1
    smoothed.append(points[-1])
    return smoothed[1:]


def route_transits(plan: FloorPlan, waypoints: list[Waypoint], altitude_m: float) -> tuple[list[Waypoint], int]:
    """Insert transit waypoints wherever a straight hop crosses a wall.

    Returns the routed list and the number of waypoints dropped because no
    route exists to them at this altitude.
    """
    if len(waypoints) < 2:
        return list(waypoints), 0
    passable = _passable_grid(plan, altitude_m)
    cs = plan.cell_size_m
    routed = [waypoints[0]]
    dropped = 0
    for wp in waypoints[1:]:
        prev = routed[-1]
        a, b = (prev.x, prev.y), (wp.x, wp.y)
        if _segment_clear(passable, cs, a, b):
            routed.append(wp)
            continue
        via = _astar_route(passable, cs, a, b)
        if via is None:
            dropped += 1
            continue
        for x, y in via[:-1]:
            heading = math.atan2(y - routed[-1].y, x - routed[-1].x)
            routed.append(Waypoint(x, y, wp.z, heading, 0.0, ACTION_TRANSIT))
        routed.append(wp)
    return routed, dropped


def _snake_waypoints(
    plan: FloorPlan,
    bounds: tuple[float, float, float, float],
    cam: CameraModel,
    altitude_m: float,
    overlap_fraction: float,
) -> tuple[list[Waypoint], int]:
    """Boustrophedon waypoints over a rectangular region; returns lane count."""
    width, depth = footprint_dims(cam, altitude_m)
    spacing = width * (1.0 - overlap_fraction)
    x0, y0, x1, y1 = bounds
    ext_x, ext_y = x1 - x0, y1 - y0

    # Single pass down the long axis when one footprint spans the short side.
    if width >= min(ext_x, ext_y):
        spread_axis = "x" if ext_x < ext_y else "y"
    else:
        spread_axis = "x" if ext_x >= ext_y else "y"

    if spread_axis == "x":
        centers = _spread_positions(x0, x1, width, spacing)
        lane_lo, lane_hi = y0, y1
        lane_axis = "y"
    else:
        centers = _spread_positions(y0, y1, width, spacing)
        lane_lo, lane_hi = x0, x1
        lane_axis = "x"

    waypoints: list[Waypoint] = []
    for k, center in enumerate(centers):
        forward = k % 2 == 0
        segments = _lane_free_intervals(plan, center, lane_lo, lane_hi, lane_axis, altitude_m)
        if not forward:
            segments = segments[::-1]
        for seg_lo, seg_hi in segments:
            alongs = _along_positions(seg_lo, seg_hi, depth, overlap_fraction)
            if not forward:
                alongs = alongs[::-1]
            heading = _lane_heading(lane_axis, forward)
            for t in alongs:
                x, y = (center, t) if lane_axis == "y" else (t, center)
                waypoints.append(Waypoint(x, y, altitude_m, heading, 0.0, ACTION_CAPTURE))
    return waypoints, len(centers)


def plan_snake(
    plan: FloorPlan,
    cam: CameraModel,
    altitude_m: float = 1.5,
    overlap_fraction: float = 0.25,
) -> Path:
    """Boustrophedon sweep. Lanes are spread across the room's longer axis
    and flown parallel to the shorter one; lane spacing is the footprint
    width scaled by (1 - overlap)."""
    if not 0.0 <= overlap_fraction <= 0.9:
        raise PlanningError("overlap fraction must be within [0, 0.9]")
    _check_altitude(plan, altitude_m)
    width, depth = footprint_dims(cam, altitude_m)
    waypoints, lanes = _snake_waypoints(
        plan, plan.interior_bounds(), cam, altitude_m, overlap_fraction
    )
    waypoints, dropped = route_transits(plan, waypoints, altitude_m)
    return Path(
        waypoints,
        "snake",
        {
            "altitude_m": altitude_m,
            "overlap_fraction": overlap_fraction,
            "lanes": lanes,
            "footprint_width_m": width,
            "footprint_depth_m": depth,
            "lane_spacing_m": width * (1.0 - overlap_fraction),
            "unreachable_waypoints": dropped,
        },
    )


def _lane_heading(lane_axis: str, forward: bool) -> float:
    if lane_axis == "y":
        return math.pi / 2.0 if forward else -math.pi / 2.0
    return 0.0 if forward else math.pi


def plan_spiral(
    plan: FloorPlan,
    cam: CameraModel,
    altitude_m: float = 1.5,
    overlap_fraction: float = 0.25,
) -> Path:
    """Rectangular inward spiral with the snake's spacing rule."""
    if not 0.0 <= overlap_fraction <= 0.9:
        raise PlanningError("overlap fraction must be within [0, 0.9]")
    _check_altitude(plan, altitude_m)
    width, depth = footprint_dims(cam, altitude_m)
    spacing = width * (1.0 - overlap_fraction)
    x0, y0, x1, y1 = plan.interior_bounds()
    half_min = min(x1 - x0, y1 - y0) / 2.0
    cx, cy = (x0 + x1) / 2.0, (y0 + y1) / 2.0

    waypoints: list[Waypoint] = []
    rings = 0
    inset = width / 2.0
    # Sides overshoot ring corners by half a footprint width so each band
    # is covered wall-to-wall, including the corner squares.
    overshoot = width / 2.0
    while (x1 - x0) - 2 * inset > 0 and (y1 - y0) - 2 * inset > 0 and inset < half_min:
        ax0, ay0, ax1, ay1 = x0 + inset, y0 + inset, x1 - inset, y1 - inset
        sides = [
            ((ax0, ay0), (ax1, ay0)),
            ((ax1, ay0), (ax1, ay1)),
            ((ax1, ay1), (ax0, ay1)),
            ((ax0, ay1), (ax0, ay0)),
        ]
        for (sx, sy), (ex, ey) in sides:
            heading = math.atan2(ey - sy, ex - sx)
            length = math.hypot(ex - sx, ey - sy)
            if length < 1e-9:
                continue
            lo, hi = -overshoot, length + overshoot
            ux, uy = (ex - sx) / length, (ey - sy) / length
            for t in _along_positions(lo, hi, min(depth, hi - lo), overlap_fraction):
                waypoints.append(
                    Waypoint(sx + ux * t, sy + uy * t, altitude_m, heading, 0.0, ACTION_CAPTURE)
                )
        rings += 1
        inset += spacing
    # Cover whatever inner rectangle the rings left with a short snake.
    covered = width + (rings - 1) * spacing if rings else 0.0
    rx0, ry0, rx1, ry1 = x0 + covered, y0 + covered, x1 - covered, y1 - covered
    tail = 0
    if rings == 0 or rx1 - rx0 > 0 or ry1 - ry0 > 0:
        region = (
            min(max(rx0, x0), cx),
            min(max(ry0, y0), cy),
            max(min(rx1, x1), cx),
            max(min(ry1, y1), cy),
        )
        tail_wps, _lanes = _snake_waypoints(plan, region, cam, altitude_m, overlap_fraction)
        if not tail_wps:
            tail_wps = [Waypoint(cx, cy, altitude_m, 0.0, 0.0, ACTION_CAPTURE)]
        waypoints.extend(tail_wps)
        tail = 1
    waypoints, dropped = route_transits(plan, waypoints, altitude_m)
    return Path(
        waypoints,
        "spiral",
        {
            "altitude_m": altitude_m,
            "overlap_fraction": overlap_fraction,
            "rings": rings + tail,
            "footprint_width_m": width,
            "lane_spacing_m": spacing,
            "unreachable_waypoints": dropped,
        },
    )


def plan_random_walk(
    plan: FloorPlan,
    cam: CameraModel,
    altitude_m: float = 1.5,
    budget_s: float = 1200.0,
    seed: int = 0,
    overlap_fraction: float = 0.25,
) -> Path:
    """Seeded straight dashes with wall reflection, truncated at the budget."""
    if budget_s <= 0:
        raise PlanningError("budget must be positive")
    _check_altitude(plan, altitude_m)
    _, depth = footprint_dims(cam, altitude_m)
    along_spacing = depth * (1.0 - overlap_fraction)
    rng = substream(seed, "random_walk")
    x0, y0, x1, y1 = plan.interior_bounds()
    margin = 0.3
    passable = _passable_grid(plan, altitude_m)
    cs = plan.cell_size_m
    x, y = (x0 + x1) / 2.0, (y0 + y1) / 2.0
    if not _segment_clear(passable, cs, (x, y), (x, y)):
        rows, cols = np.nonzero(passable)
        x, y = (cols[len(cols) // 2] + 0.5) * cs, (rows[len(rows) // 2] + 0.5) * cs

    def free_length(px, py, dx, dy, cap):
        step = cs / 2.0
        d = 0.0
        while d + step <= cap:
            if not _segment_clear(passable, cs, (px, py), (px + dx * (d + step), py + dy * (d + step))):
                return d
            d += step
        return cap

    waypoints = [Waypoint(x, y, altitude_m, 0.0, 0.0, ACTION_CAPTURE)]
    t_used = 0.0
    heading = rng.uniform(0.0, 2.0 * math.pi)
    while True:
        heading = rng.uniform(0.0, 2.0 * math.pi)
        remaining = rng.uniform(1.0, 3.0)
        turn_cost = math.pi / TURN_RATE_RAD_S  # worst-case turn, keeps budget honest
        if t_used + turn_cost >= budget_s:
            break
        t_used += turn_cost
        for _bounce in range(4):
            dx, dy = math.cos(heading), math.sin(heading)
            limit = remaining
            # Distance to the margin box along this heading.
            if dx > 1e-9:
                limit = min(limit, (x1 - margin - x) / dx)
            elif dx < -1e-9:
                limit = min(limit, (x0 + margin - x) / dx)
            if dy > 1e-9:
                limit = min(limit, (y1 - margin - y) / dy)
            elif dy < -1e-9:
                limit = min(limit, (y0 + margin - y) / dy)
            limit = max(limit, 0.0)
            limit = free_length(x, y, dx, dy, limit)  # interior walls/obstacles
            seg = min(remaining, limit)
            seg_time = seg / CRUISE_SPEED_MPS
            if t_used + seg_time > budget_s:
                seg = max((budget_s - t_used) * CRUISE_SPEED_MPS, 0.0)
                seg_time = seg / CRUISE_SPEED_MPS
            steps = max(1, int(seg // along_spacing))
            for i in range(1, steps + 1):
                d = seg * i / steps
                waypoints.append(
                    Waypoint(x + dx * d, y + dy * d, altitude_m, heading, 0.0, ACTION_CAPTURE)
                )
            x += dx * seg
            y += dy * seg
            t_used += seg_time
            remaining -= seg
            if remaining <= 1e-9 or t_used >= budget_s:
                break
            # Reflect off whichever margin plane we reached.
            if limit < 1e-9 or x >= x1 - margin - 1e-6 or x <= x0 + margin + 1e-6:
                heading = math.atan2(math.sin(heading), -math.cos(heading))
            if y >= y1 - margin - 1e-6 or y <= y0 + margin + 1e-6:
                heading = math.atan2(-math.sin(heading), math.cos(heading))
        if t_used >= budget_s:
            break
    return Path(
        waypoints,
        "random_walk",
        {"altitude_m": altitude_m, "budget_s": budget_s, "seed": seed},
    )


def plan_two_phase(
    scene: Scene,
    cam: CameraModel,
    high_alt_m: float,
    low_alt_m: float,
    detections: list[tuple[float, float]],
    overlap_fraction: float = 0.25,
    dwell_s: float = 3.0,
) -> Path:
    """High-altitude snake sweep followed by nearest-neighbor low re-visits."""
    if low_alt_m >= high_alt_m:
        raise PlanningError("low altitude must be below high altitude")
    base = plan_snake(scene.floor_plan, cam, high_alt_m, overlap_fraction)
    waypoints = list(base.waypoints)
    if waypoints:
        cur = (waypoints[-1].x, waypoints[-1].y)
    else:
        x0, y0, x1, y1 = scene.floor_plan.interior_bounds()
        cur = ((x0 + x1) / 2.0, (y0 + y1) / 2.0)
    revisit_chain = [
        Waypoint(cur[0], cur[1], low_alt_m, 0.0, 0.0, ACTION_TRANSIT)
    ]
    pending = list(detections)
    while pending:
        nearest = min(pending, key=lambda p: math.hypot(p[0] - cur[0], p[1] - cur[1]))
        pending.remove(nearest)
        heading = math.atan2(nearest[1] - cur[1], nearest[0] - cur[0])
        revisit_chain.append(
            Waypoint(nearest[0], nearest[1], low_alt_m, heading, dwell_s, ACTION_REVISIT)
        )
        cur = nearest
    if len(revisit_chain) > 1:
        routed, _ = route_transits(scene.floor_plan, revisit_chain, low_alt_m)
        waypoints.extend(routed[1:])
    params = dict(base.params)
    params.update(
        {"high_alt_m": high_alt_m, "low_alt_m": low_alt_m, "revisits": len(detections)}
    )
    return Path(waypoints, "two_phase", params)


def tour_length(start: tuple[float, float], stops: list[tuple[float, float]]) -> float:
    total = 0.0
    cur = start
    for p in stops:
        total += math.hypot(p[0] - cur[0], p[1] - cur[1])
        cur = p
    return total


# ---------------------------------------------------------------------------
# Execution
# ---------------------------------------------------------------------------


def _command_doc(cmd: CommandBurst) -> dict:
    return {"dir": cmd.direction, "ms": cmd.duration_ms}


def _feasible_pose(scene: Scene, wp: Waypoint) -> bool:
    plan = scene.floor_plan
    return (
        plan.contains(wp.x, wp.y)
        and 0.0 < wp.z <= plan.ceiling_height_m
        and plan.surface_height(wp.x, wp.y) < wp.z
    )


def _wrap(angle: float) -> float:
    return math.atan2(math.sin(angle), math.cos(angle))


class _BurstPilot:
    """Waypoint-chasing burst controller (one decision per control tick)."""

    def __init__(self, config: BlimpConfig, tolerance_m: float = WAYPOINT_TOLERANCE_M):
        self.config = config
        self.tolerance = tolerance_m

    def _rotate_toward(self, err: float) -> CommandBurst:
        correction = HEADING_GAIN * err
        ms = min(max(abs(correction) / self.config.rotation_per_burst_rad * 300.0, 50.0), 1200.0)
        return CommandBurst("rotate_left" if err > 0 else "rotate_right", ms)

    def aligned(self, ref: BlimpState, target: Waypoint) -> bool:
        if target.action not in (ACTION_CAPTURE, ACTION_REVISIT):
            return True
        return abs(_wrap(target.heading_rad - ref.heading_rad)) <= math.radians(12.0)

    def decide(self, ref: BlimpState, target: Waypoint) -> CommandBurst | None:
        x, y, z = ref.position_m
        dx, dy, dz = target.x - x, target.y - y, target.z - z
        dist = math.hypot(dx, dy)
        if abs(dz) > ALTITUDE_TOLERANCE_M:
            return CommandBurst("up" if dz > 0 else "down")
        if dist < self.tolerance:
            if not self.aligned(ref, target):
                return self._rotate_toward(_wrap(target.heading_rad - ref.heading_rad))
            return None
        bearing = math.atan2(dy, dx)
        err = _wrap(bearing - ref.heading_rad)
        if abs(err) > math.radians(8.0):
            return self._rotate_toward(err)
        speed = math.hypot(ref.velocity_mps[0], ref.velocity_mps[1])
        if speed < min(CRUISE_SPEED_MPS, dist):
            return CommandBurst("forward")
        return None


def execute_path(
    scene: Scene,
    path: Path,
    blimp_config: BlimpConfig | None = None,
    drift: DriftModel | None = None,
    seed: int = 0,
    cam: CameraModel | None = None,
    closed_loop: bool = True,
    battery: blimp_mod.BatteryState | None = None,
    dt_s: float = 0.1,
    control_period_s: float = 0.5,
    waypoint_timeout_s: float = 90.0,
) -> RunLog:
    """Fly the path with burst control; capture frames at capture waypoints.

    In open-loop mode the pilot steers a dead-reckoned shadow state that
    never sees the drift, reproducing veering-induced misses.
    """
    if not path.waypoints:
        raise ExecutionError("path has no waypoints")
    if not _feasible_pose(scene, path.waypoints[0]):
        raise ExecutionError("first waypoint lies outside free space")
    config = blimp_config or BlimpConfig()
    drift = drift or DriftModel(seed=seed)
    cam = cam or CameraModel()
    wp0 = path.waypoints[0]

    true = BlimpState(
        position_m=(wp0.x, wp0.y, wp0.z),
        heading_rad=wp0.heading_rad,
        battery=battery or blimp_mod.BatteryState(),
    )
    believed = true
    calm = DriftModel(seed=seed, gust_sigma_mps=0.0, gust_interval_s=drift.gust_interval_s)
    pilot = _BurstPilot(config)

    log = RunLog(
        scene_hash=scene_hash(scene),
        seed=seed,
        planner=path.planner,
        params=dict(path.params),
        config={"blimp": asdict(config), "drift": asdict(drift), "closed_loop": closed_loop},
        path=path,
    )
    live_scene = scene
    wp_index = 0
    wp_elapsed = 0.0
    dwell_left = 0.0
    steps_per_control = max(1, int(round(control_period_s / dt_s)))
    step_index = 0

    while wp_index < len(path.waypoints):
        target = path.waypoints[wp_index]
        cmd = None
        thrusting = False
        if dwell_left <= 0 and step_index % steps_per_control == 0:
            ref = true if closed_loop else believed
            cmd = pilot.decide(ref, target)
            if cmd is not None:
                try:
                    true = apply_burst(true, cmd, config)
                    believed = apply_burst(believed, cmd, config)
                    thrusting = True
                except blimp_mod.CommandRejectedError:
                    log.truncated = True
                    break

        true = blimp_mod.step(true, dt_s, drift, live_scene, config)
        believed = blimp_mod.step(believed, dt_s, calm, live_scene, config)
        step_index += 1
        wp_elapsed += dt_s

        height = max(true.position_m[2], 1e-3)
        wind = downwash_at_ground(config, height, thrusting)
        if wind > blimp_mod.BURST_WASH_MPS:
            cx, cy, _ = true.position_m
            live_scene = scatter_evidence(
                live_scene, wind, (cx - 0.5, cy - 0.5, cx + 0.5, cy + 0.5)
            )

        frame = None
        ref = true if closed_loop else believed
        rx, ry, rz = ref.position_m
        arrived = (
            math.hypot(target.x - rx, target.y - ry) < pilot.tolerance
            and abs(target.z - rz) < ALTITUDE_TOLERANCE_M
            and pilot.aligned(ref, target)
        )
        timed_out = wp_elapsed > waypoint_timeout_s
        if dwell_left > 0:
            dwell_left -= dt_s
            if dwell_left <= 0:
                wp_index += 1
                wp_elapsed = 0.0
        elif arrived or timed_out:
            if target.action in (ACTION_CAPTURE, ACTION_REVISIT):
                frame = camera_capture(live_scene, true, cam)
            if target.dwell_s > 0:
                dwell_left = target.dwell_s
            else:
                wp_index += 1
                wp_elapsed = 0.0

        log.records.append(
            RunRecord(
                time_s=true.time_s,
                position_m=true.position_m,
                heading_rad=true.heading_rad,
                velocity_mps=true.velocity_mps,
                battery_drawn_mah=true.battery.drawn_mah,
                command=_command_doc(cmd) if cmd else None,
                camera=frame,
                wind_mps=wind,
            )
        )
        if true.battery.exhausted:
            log.truncated = True
            break
    return log


def plan_wall_follow(
    scene: Scene,
    blimp_config: BlimpConfig | None = None,
    lidar_model: LidarModel | None = None,
    side: str = "left",
    budget_s: float = 600.0,
    seed: int = 0,
    drift: DriftModel | None = None,
    altitude_m: float = 1.0,
    start_xy: tuple[float, float] | None = None,
) -> RunLog:
    """Reactive wall following on the side LiDAR; returns the executed log.

    Holds the wall distance inside [0.4, 0.8] m, turns at corners on the
    forward LiDAR, and aborts if the wall is lost for more than 10 s.
    """
    if side not in ("left", "right"):
        raise ValueError("side must be 'left' or 'right'")
    config = blimp_config or BlimpConfig()
    model = lidar_model or LidarModel()
    drift = drift or DriftModel(seed=seed, gust_sigma_mps=0.0)
    plan = scene.floor_plan
    x0, y0, x1, y1 = plan.interior_bounds()

    band_lo, band_hi = 0.4, 0.8
    target_d = (band_lo + band_hi) / 2.0
    sign = 1.0 if side == "left" else -1.0
    if start_xy is None:
        # Hug the south wall: wall on the left means traveling west.
        start_xy = ((x0 + x1) / 2.0, y0 + target_d)
        heading = math.pi if side == "left" else 0.0
    else:
        heading = math.pi if side == "left" else 0.0

    state = BlimpState(position_m=(start_xy[0], start_xy[1], altitude_m), heading_rad=heading)
    log = RunLog(
        scene_hash=scene_hash(scene),
        seed=seed,
        planner="wall_follow",
        params={"side": side, "budget_s": budget_s, "altitude_m": altitude_m},
        config={"blimp": asdict(config), "drift": asdict(drift)},
    )

    dt = 0.1
    nominal = heading  # wall direction reference, stepped by 90 deg at corners
    lost_since = None
    reading_index = 0
    step_index = 0
    turn_cooldown = 0.0
    while state.time_s < budget_s:
        cmds: list[CommandBurst] = []
        lidar_doc = None
        if step_index % 5 == 0:  # 0.5 s control tick
            side_state = state if side == "left" else replace(
                state, heading_rad=_wrap(state.heading_rad + math.pi)
            )
            side_read = lidar_read(
                scene, side_state, replace(model, mount="side"), substream_key(seed, reading_index)
            )
            reading_index += 1
            fwd_read = lidar_read(
                scene, state, replace(model, mount="forward"), substream_key(seed, reading_index)
            )
            reading_index += 1
            lidar_doc = {
                "side": {"status": side_read.status, "d": side_read.distance_m},
                "forward": {"status": fwd_read.status, "d": fwd_read.distance_m},
            }
            if side_read.status == LIDAR_OUT_OF_RANGE:
                if lost_since is None:
                    lost_since = state.time_s
                elif state.time_s - lost_since > 10.0:
                    log.aborted = True
                    log.records.append(
                        RunRecord(
                            time_s=state.time_s,
                            position_m=state.position_m,
                            heading_rad=state.heading_rad,
                            velocity_mps=state.velocity_mps,
                            battery_drawn_mah=state.battery.drawn_mah,
                            lidar=lidar_doc,
                        )
                    )
                    break
            else:
                lost_since = None

            turn_cooldown = max(0.0, turn_cooldown - 0.5)
            turning = False
            if fwd_read.status in (LIDAR_OK, "too_close") and turn_cooldown == 0 and (
                fwd_read.status == "too_close" or fwd_read.distance_m < 0.9
            ):
                # Corner: step the wall reference 90 degrees away from the wall.
                step_turn = -math.pi / 2.0 if side == "left" else math.pi / 2.0
                nominal = _wrap(nominal + step_turn)
                turning = True
                turn_cooldown = 5.0
            # Steer toward the nominal heading plus a wall-distance correction.
            offset = 0.0
            if not turning and side_read.status == LIDAR_OK:
                err = side_read.distance_m - target_d
                if abs(err) > 0.08:
                    offset = sign * min(max(err * HEADING_GAIN, -0.3), 0.3)
            rot_err = _wrap(nominal + offset - state.heading_rad)
            if abs(rot_err) > math.radians(3.0):
                ms = min(
                    max(abs(rot_err) / config.rotation_per_burst_rad * 300.0, 50.0), 1800.0
                )
                cmds.append(CommandBurst("rotate_left" if rot_err > 0 else "rotate_right", ms))
            speed = math.hypot(state.velocity_mps[0], state.velocity_mps[1])
            if not turning and speed < CRUISE_SPEED_MPS:
                cmds.append(CommandBurst("forward"))
            try:
                for cmd in cmds:
                    state = apply_burst(state, cmd, config)
            except blimp_mod.CommandRejectedError:
                log.truncated = True
                break

        state = blimp_mod.step(state, dt, drift, scene, config)
        step_index += 1
        log.records.append(
            RunRecord(
                time_s=state.time_s,
                position_m=state.position_m,
                heading_rad=state.heading_rad,
                velocity_mps=state.velocity_mps,
                battery_drawn_mah=state.battery.drawn_mah,
                command=_command_doc(cmds[0]) if cmds else None,
                lidar=lidar_doc,
                wind_mps=0.0,
            )
        )
        if state.battery.exhausted:
            log.truncated = True
            break
    return log


def substream_key(seed: int, index: int) -> int:
    """Derive a per-reading lidar seed that is stable across replays."""
    return (int(seed) * 1_000_003 + index) & 0x7FFFFFFF


def ideal_run_log(scene: Scene, path: Path, cam: CameraModel | None = None,
                  battery: blimp_mod.BatteryState | None = None) -> RunLog:
    """Geometric traversal of a path without simulation noise.

    Used for planner-only analysis: states sit exactly on the waypoints and
    timing follows the cruise/turn-rate model.
    """
    if not path.waypoints:
        raise ExecutionError("path has no waypoints")
    cam = cam or CameraModel()
    battery = battery or blimp_mod.BatteryState()
    t = 0.0
    records = []
    prev = None
    heading = path.waypoints[0].heading_rad
    bursts = 0
    last_t = -1.0
    for wp in path.waypoints:
        if prev is not None:
            d = math.hypot(wp.x - prev.x, wp.y - prev.y)
            seg_heading = math.atan2(wp.y - prev.y, wp.x - prev.x) if d > 1e-9 else heading
            t += abs(_wrap(seg_heading - heading)) / TURN_RATE_RAD_S
            t += d / CRUISE_SPEED_MPS
            t += abs(wp.z - prev.z) / CRUISE_SPEED_MPS
            bursts += max(1, int(d / 0.2))
            heading = seg_heading
        t += wp.dwell_s
        frame = None
        if wp.action in (ACTION_CAPTURE, ACTION_REVISIT):
            # Align to the planned capture heading before shooting.
            t += abs(_wrap(wp.heading_rad - heading)) / TURN_RATE_RAD_S
            heading = wp.heading_rad
        t = max(t, last_t + 1e-3)
        last_t = t
        if wp.action in (ACTION_CAPTURE, ACTION_REVISIT):
            state = BlimpState(position_m=(wp.x, wp.y, wp.z), heading_rad=heading, time_s=t)
            frame = camera_capture(scene, state, cam)
        records.append(
            RunRecord(
                time_s=t,
                position_m=(wp.x, wp.y, wp.z),
                heading_rad=heading,
                velocity_mps=(0.0, 0.0, 0.0),
                battery_drawn_mah=battery.total_current_ma * t / 3600.0
                + blimp_mod.ACTUATOR_MAH_PER_BURST * bursts,
                camera=frame,
            )
        )
        prev = wp
    return RunLog(
        scene_hash=scene_hash(scene),
        seed=0,
        planner=path.planner,
        params=dict(path.params),
        config={"ideal": True},
        path=path,
        records=records,
    )


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------


def coverage_from_frames(scene: Scene, frames: list[CameraFrame]) -> CoverageMap:
    plan = scene.floor_plan
    times = np.zeros(plan.cells.shape, dtype=int)
    first = np.full(plan.cells.shape, np.nan)
    if frames:
        cs = plan.cell_size_m
        cols = np.arange(plan.width_cells) * cs + cs / 2.0
        rows = np.arange(plan.height_cells) * cs + cs / 2.0
        xs, ys = np.meshgrid(cols, rows)
        for fr in frames:
            if len(fr.footprint_m) < 3:
                continue
            poly = fr.footprint_polygon()
            inside = shapely.contains_xy(poly, xs.ravel(), ys.ravel()).reshape(xs.shape)
            times[inside] += 1
            newly = inside & np.isnan(first)
            first[newly] = fr.time_s
    return CoverageMap(plan.cell_size_m, times, first)


def _polyline_turns(points: list[tuple[float, float, float]],
                    min_segment_m: float = 0.05) -> tuple[int, float]:
    """(turn count, vertical travel) over a 3D polyline."""
    turns = 0
    vertical = 0.0
    prev_dir = None
    last = points[0]
    for p in points[1:]:
        dx, dy, dz = p[0] - last[0], p[1] - last[1], p[2] - last[2]
        vertical += abs(dz)
        d = math.hypot(dx, dy)
        if d < min_segment_m:
            last = (last[0], last[1], p[2])
            continue
        direction = math.atan2(dy, dx)
        if prev_dir is not None and abs(_wrap(direction - prev_dir)) > TURN_ANGLE_THRESHOLD_RAD:
            turns += 1
        prev_dir = direction
        last = p
    return turns, vertical


def _decimated_positions(log: RunLog, step_m: float = 0.5) -> list[tuple[float, float, float]]:
    pts = [log.records[0].position_m]
    for rec in log.records[1:]:
        px, py, _ = pts[-1]
        x, y, z = rec.position_m
        if math.hypot(x - px, y - py) >= step_m:
            pts.append(rec.position_m)
    if pts[-1] != log.records[-1].position_m:
        pts.append(log.records[-1].position_m)
    return pts


def compute_metrics(log: RunLog, scene: Scene) -> PlanMetrics:
    """Coverage, capture, overlap, turning, and energy figures for one log."""
    if not log.records:
        raise ValueError("log has no records")
    frames = log.camera_frames()
    coverage = coverage_from_frames(scene, frames)
    plan = scene.floor_plan
    free = plan.cells == 0
    free_count = int(free.sum())
    covered = int((coverage.times_seen[free] > 0).sum())
    floor_coverage = covered / free_count if free_count else 0.0

    captured: set[str] = set()
    for fr in frames:
        captured |= fr.captured_ids
    n_ev = len(scene.evidence)
    capture_fraction = len(captured) / n_ev if n_ev else 1.0

    overlaps = []
    for a, b in zip(frames, frames[1:]):
        if len(a.footprint_m) < 3 or len(b.footprint_m) < 3:
            continue
        pa, pb = Polygon(a.footprint_m), Polygon(b.footprint_m)
        smaller = min(pa.area, pb.area)
        if smaller > 0:
            overlaps.append(pa.intersection(pb).area / smaller)
    mean_overlap = float(np.mean(overlaps)) if overlaps else 0.0

    if log.path is not None and len(log.path.waypoints) > 1:
        pts = [(wp.x, wp.y, wp.z) for wp in log.path.waypoints]
    else:
        pts = _decimated_positions(log)
    turns, vertical = _polyline_turns(pts)

    duration = log.records[-1].time_s - log.records[0].time_s
    energy = log.records[-1].battery_drawn_mah
    seen_counts = coverage.times_seen[free & (coverage.times_seen > 0)]
    redundancy = float(seen_counts.mean()) if seen_counts.size else 0.0
    return PlanMetrics(
        floor_coverage_fraction=floor_coverage,
        evidence_capture_fraction=capture_fraction,
        mean_consecutive_overlap_fraction=mean_overlap,
        turn_count=turns,
        vertical_travel_m=vertical,
        duration_s=duration,
        energy_mah=energy,
        redundancy=redundancy,
    )


def aggregate_metrics(metrics: list[PlanMetrics]) -> dict:
    """mean / sd / min / max per metric over a batch of runs."""
    if not metrics:
        return {}
    out = {}
    for key in PlanMetrics.__dataclass_fields__:
        values = np.array([getattr(m, key) for m in metrics], dtype=float)
        out[key] = {
            "mean": float(values.mean()),
            "sd": float(values.std(ddof=1)) if len(values) > 1 else 0.0,
            "min": float(values.min()),
            "max": float(values.max()),
        }
    return out


def pooled_capture_fraction(logs: list[RunLog], scenes: list[Scene]) -> float:
    """Captured objects over total objects, pooled across runs."""
    got = total = 0
    for log, scene in zip(logs, scenes):
        captured: set[str] = set()
        for fr in log.camera_frames():
            captured |= fr.captured_ids
        got += len(captured)
        total += len(scene.evidence)
    return got / total if total else 1.0


# ---------------------------------------------------------------------------
# Run log serialization (line-delimited JSON)
# ---------------------------------------------------------------------------


def _frame_doc(frame: CameraFrame) -> dict:
    return {
        "t": frame.time_s,
        "footprint": [[x, y] for x, y in frame.footprint_m],
        "ids": sorted(frame.captured_ids),
    }


def _frame_from_doc(doc: dict) -> CameraFrame:
    return CameraFrame(
        time_s=float(doc["t"]),
        footprint_m=[(float(x), float(y)) for x, y in doc["footprint"]],
        captured_ids=set(doc["ids"]),
    )


def _record_doc(rec: RunRecord) -> dict:
    return {
        "t": rec.time_s,
        "pos": list(rec.position_m),
        "heading": rec.heading_rad,
        "vel": list(rec.velocity_mps),
        "battery_mah": rec.battery_drawn_mah,
        "cmd": rec.command,
        "camera": _frame_doc(rec.camera) if rec.camera else None,
        "lidar": rec.lidar,
        "wind": rec.wind_mps,
    }


def _record_from_doc(doc: dict) -> RunRecord:
    return RunRecord(
        time_s=float(doc["t"]),
        position_m=tuple(float(v) for v in doc["pos"]),
        heading_rad=float(doc["heading"]),
        velocity_mps=tuple(float(v) for v in doc["vel"]),
        battery_drawn_mah=float(doc["battery_mah"]),
        command=doc["cmd"],
        camera=_frame_from_doc(doc["camera"]) if doc["camera"] else None,
        lidar=doc["lidar"],
        wind_mps=float(doc["wind"]),
    )


def _path_doc(path: Path | None) -> dict | None:
    if path is None:
        return None
    return {
        "planner": path.planner,
        "params": path.params,
        "waypoints": [
            [wp.x, wp.y, wp.z, wp.heading_rad, wp.dwell_s, wp.action] for wp in path.waypoints
        ],
    }


def _path_from_doc(doc: dict | None) -> Path | None:
    if doc is None:
        return None
    return Path(
        waypoints=[
            Waypoint(float(x), float(y), float(z), float(h), float(dw), str(a))
            for x, y, z, h, dw, a in doc["waypoints"]
        ],
        planner=str(doc["planner"]),
        params=dict(doc["params"]),
    )


def save_runlog(log: RunLog) -> bytes:
    header = {
        "v": RUNLOG_SCHEMA_VERSION,
        "kind": "runlog",
        "scene_hash": log.scene_hash,
        "seed": log.seed,
        "planner": log.planner,
        "params": log.params,
        "config": log.config,
        "path": _path_doc(log.path),
        "truncated": log.truncated,
        "aborted": log.aborted,
    }
    lines = [json.dumps(header, sort_keys=True, separators=(",", ":"))]
    lines.extend(
        json.dumps(_record_doc(r), sort_keys=True, separators=(",", ":")) for r in log.records
    )
    return ("\n".join(lines) + "\n").encode("utf-8")


def load_runlog(data: bytes) -> RunLog:
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise RunLogError(f"not UTF-8: {exc}") from exc
    lines = [ln for ln in text.split("\n") if ln.strip()]
    if not lines:
        raise RunLogError("empty log", line=1)
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise RunLogError(f"bad header: {exc}", line=1) from exc
    if not isinstance(header, dict) or header.get("kind") != "runlog":
        raise RunLogError("missing runlog header", line=1)
    if header.get("v") != RUNLOG_SCHEMA_VERSION:
        raise RunLogError(f"unsupported schema version {header.get('v')!r}", line=1)
    log = RunLog(
        scene_hash=str(header["scene_hash"]),
        seed=int(header["seed"]),
        planner=str(header["planner"]),
        params=dict(header["params"]),
        config=dict(header["config"]),
        path=_path_from_doc(header.get("path")),
        truncated=bool(header.get("truncated", False)),
        aborted=bool(header.get("aborted", False)),
    )
    prev_t = -math.inf
    for n, line in enumerate(lines[1:], start=2):
        try:
            rec = _record_from_doc(json.loads(line))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise RunLogError(f"bad record: {exc}", line=n) from exc
        if rec.time_s <= prev_t:
            raise RunLogError("timestamps not strictly increasing", line=n)
        prev_t = rec.time_s
        log.records.append(rec)
    return log
