"""Sensor models: downward camera, single-point LiDARs, interlaced thermal array.

Reads are pure functions of (scene, craft state, seed); the thermal interlace
chain additionally threads the previous frame through each capture.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from shapely.geometry import Point, Polygon, box

from .blimp import BlimpState
from .rng import substream
from .world import CELL_OBSTACLE, CELL_WALL, EvidenceItem, Scene, raycast

LIDAR_OK = "ok"
LIDAR_OUT_OF_RANGE = "out_of_range"
LIDAR_TOO_CLOSE = "too_close"

LIDAR_MOUNTS = ("forward", "side", "down")

THERMAL_MIN_C = -40.0
THERMAL_MAX_C = 300.0

# Touched-object warmth: placeholder delta and per-material time constants.
TOUCH_DELTA_C = 12.0
TAU_METALLIC_S = 300.0
TAU_FABRIC_S = 900.0
_METALLIC_KINDS = {"knife_large", "tool", "accelerant"}


@dataclass
class CameraModel:
    fov_deg: tuple[float, float] = (60.0, 45.0)  # (horizontal/across, vertical/along)
    resolution_px: tuple[int, int] = (800, 600)
    frame_rate_hz: float = 30.0

    def __post_init__(self):
        if not all(0.0 < f < 180.0 for f in self.fov_deg):
            raise ValueError("camera FOV must lie in (0, 180) degrees")
        if min(self.resolution_px) <= 0:
            raise ValueError("camera resolution must be positive")

    @property
    def half_tangents(self) -> tuple[float, float]:
        fh, fv = self.fov_deg
        return math.tan(math.radians(fh) / 2.0), math.tan(math.radians(fv) / 2.0)


@dataclass
class CameraFrame:
    time_s: float
    footprint_m: list[tuple[float, float]]
    captured_ids: set[str] = field(default_factory=set)

    def footprint_polygon(self) -> Polygon:
        return Polygon(self.footprint_m)


@dataclass
class LidarModel:
    min_range_m: float = 0.2
    max_range_m: float = 8.0
    resolution_m: float = 0.01
    accuracy_m: float = 0.06
    mount: str = "forward"

    def __post_init__(self):
        if self.min_range_m >= self.max_range_m:
            raise ValueError("min range must be below max range")
        if self.resolution_m <= 0:
            raise ValueError("resolution must be positive")
        if self.mount not in LIDAR_MOUNTS:
            raise ValueError(f"unknown mount {self.mount!r}")


@dataclass
class LidarReading:
    mount: str
    status: str
    distance_m: float | None = None


@dataclass
class ThermalModel:
    rows: int = 24
    cols: int = 32
    fov_deg: tuple[float, float] = (110.0, 70.0)  # (across/cols, along/rows)
    frame_rate_hz: float = 2.0
    noise_c: float = 2.0


@dataclass
class ThermalFrame:
    frame: np.ndarray  # [rows, cols] degrees C
    pass_parity: int  # checkerboard half refreshed last: (r + c) % 2
    time_s: float = 0.0

    def __post_init__(self):
        self.frame = np.asarray(self.frame, dtype=float)


@dataclass
class HeatSource:
    evidence_id: str
    touched_at_s: float
    initial_delta_c: float = TOUCH_DELTA_C
    cooling_tau_s: float = TAU_FABRIC_S

    def __post_init__(self):
        if self.initial_delta_c < 0 or self.cooling_tau_s <= 0:
            raise ValueError("delta must be >= 0 and tau > 0")


@dataclass
class ThermalCluster:
    pixel_count: int
    centroid_rc: tuple[float, float]
    peak_c: float


# ---------------------------------------------------------------------------
# Camera
# ---------------------------------------------------------------------------


def camera_footprint(state: BlimpState, cam: CameraModel) -> Polygon:
    """Ground rectangle imaged by the downward camera, clipped to the floor."""
    x, y, z = state.position_m
    if z <= 0:
        raise ValueError("degenerate footprint: craft altitude must be positive")
    th, tv = cam.half_tangents
    half_w = z * th  # across-track
    half_d = z * tv  # along-track
    h = state.heading_rad
    fx, fy = math.cos(h), math.sin(h)
    lx, ly = -math.sin(h), math.cos(h)
    corners = [
        (x + fx * half_d + lx * half_w, y + fy * half_d + ly * half_w),
        (x + fx * half_d - lx * half_w, y + fy * half_d - ly * half_w),
        (x - fx * half_d - lx * half_w, y - fy * half_d - ly * half_w),
        (x - fx * half_d + lx * half_w, y - fy * half_d + ly * half_w),
    ]
    return Polygon(corners)


def camera_footprint_clipped(state: BlimpState, cam: CameraModel, scene: Scene) -> Polygon:
    plan = scene.floor_plan
    return camera_footprint(state, cam).intersection(box(0.0, 0.0, plan.width_m, plan.height_m))


def _segment_cells(plan, p0: tuple[float, float], p1: tuple[float, float]):
    """Yield (row, col, t_enter, t_exit) for grid cells crossed by p0->p1, t in [0,1]."""
    cs = plan.cell_size_m
    x0, y0 = p0
    x1, y1 = p1
    dx, dy = x1 - x0, y1 - y0
    row, col = plan.cell_index(x0, y0)
    end_row, end_col = plan.cell_index(x1, y1)
    step_c = 1 if dx > 0 else -1
    step_r = 1 if dy > 0 else -1
    if abs(dx) > 1e-12:
        t_max_x = ((col + (1 if dx > 0 else 0)) * cs - x0) / dx
        t_dx = cs / abs(dx)
    else:
        t_max_x, t_dx = math.inf, math.inf
    if abs(dy) > 1e-12:
        t_max_y = ((row + (1 if dy > 0 else 0)) * cs - y0) / dy
        t_dy = cs / abs(dy)
    else:
        t_max_y, t_dy = math.inf, math.inf
    t_enter = 0.0
    while True:
        t_exit = min(t_max_x, t_max_y, 1.0)
        yield row, col, t_enter, t_exit
        if (row, col) == (end_row, end_col) or t_exit >= 1.0:
            return
        if t_max_x < t_max_y:
            t_enter = t_max_x
            t_max_x += t_dx
            col += step_c
        else:
            t_enter = t_max_y
            t_max_y += t_dy
            row += step_r


def line_of_sight_clear(
    scene: Scene,
    camera_xyz: tuple[float, float, float],
    target_xy: tuple[float, float],
    target_height_m: float = 0.0,
) -> bool:
    """True if no wall or sufficiently tall obstacle blocks camera -> target."""
    plan = scene.floor_plan
    cx, cy, cz = camera_xyz
    for row, col, _t_in, t_out in _segment_cells(plan, (cx, cy), target_xy):
        kind = plan.cells[row, col]
        if kind == CELL_WALL:
            return False
        if kind == CELL_OBSTACLE:
            # Sight line height decreases toward the target; the lowest point
            # within this cell is at its exit.
            z_low = cz + (target_height_m - cz) * min(t_out, 1.0)
            if plan.obstacle_heights[row, col] >= z_low:
                return False
    return True


def camera_capture(scene: Scene, state: BlimpState, cam: CameraModel) -> CameraFrame:
    """Evidence whose position falls inside the footprint with clear sight."""
    poly = camera_footprint_clipped(state, cam, scene)
    captured = set()
    for item in scene.evidence:
        px, py = item.position_m
        if not poly.covers(Point(px, py)):
            continue
        if line_of_sight_clear(scene, state.position_m, (px, py)):
            captured.add(item.id)
    coords = [(float(x), float(y)) for x, y in poly.exterior.coords[:-1]] if not poly.is_empty else []
    return CameraFrame(time_s=state.time_s, footprint_m=coords, captured_ids=captured)


_KIND_COLORS = {
    "firearm_photo": (60, 60, 70),
    "knife_large": (120, 120, 130),
    "knife_small": (160, 160, 170),
    "shoes": (90, 60, 30),
    "blood_sheet_passive": (190, 40, 40),
    "blood_sheet_active": (210, 30, 60),
    "blood_sheet_transfer": (170, 30, 30),
    "body": (230, 200, 170),
    "accelerant": (200, 120, 0),
    "tool": (70, 90, 110),
}


def render_topdown(scene: Scene, state: BlimpState, cam: CameraModel,
                   width_px: int = 160) -> np.ndarray:
    """Small top-down RGB raster of the camera footprint (for telemetry)."""
    poly = camera_footprint_clipped(state, cam, scene)
    if poly.is_empty:
        return np.zeros((2, 2, 3), dtype=np.uint8)
    x0, y0, x1, y1 = poly.bounds
    aspect = (y1 - y0) / max(x1 - x0, 1e-9)
    height_px = max(2, int(round(width_px * aspect)))
    img = np.full((height_px, width_px, 3), 235, dtype=np.uint8)
    plan = scene.floor_plan
    xs = np.linspace(x0, x1, width_px)
    ys = np.linspace(y0, y1, height_px)
    for j, yv in enumerate(ys):
        for i, xv in enumerate(xs):
            kind = plan.cell_kind(xv, yv)
            if kind == CELL_WALL:
                img[j, i] = (40, 40, 40)
            elif kind == CELL_OBSTACLE:
                img[j, i] = (150, 150, 150)
    for item in scene.evidence:
        bb = item.footprint_aabb()
        i0 = np.searchsorted(xs, bb[0])
        i1 = np.searchsorted(xs, bb[2])
        j0 = np.searchsorted(ys, bb[1])
        j1 = np.searchsorted(ys, bb[3])
        if i0 >= i1 or j0 >= j1:
            continue
        color = _KIND_COLORS.get(item.kind.name, (20, 20, 200))
        img[j0:j1, i0:i1] = color
    return img


# ---------------------------------------------------------------------------
# LiDAR
# ---------------------------------------------------------------------------


def _mount_direction(state: BlimpState, mount: str) -> tuple[float, float, float]:
    h = state.heading_rad
    if mount == "forward":
        return (math.cos(h), math.sin(h), 0.0)
    if mount == "side":
        return (math.cos(h + math.pi / 2.0), math.sin(h + math.pi / 2.0), 0.0)
    if mount == "down":
        return (0.0, 0.0, -1.0)
    raise ValueError(f"unknown mount {mount!r}")


def lidar_read(scene: Scene, state: BlimpState, model: LidarModel, seed: int) -> LidarReading:
    """Single-point time-of-flight read with quantization and bounded noise."""
    true = raycast(scene, state.position_m, _mount_direction(state, model.mount))
    if true is None or true > model.max_range_m:
        return LidarReading(model.mount, LIDAR_OUT_OF_RANGE)
    if true < model.min_range_m:
        return LidarReading(model.mount, LIDAR_TOO_CLOSE)
    rng = substream(seed, "lidar", model.mount)
    noisy = true + rng.uniform(-model.accuracy_m, model.accuracy_m)
    reading = round(noisy / model.resolution_m) * model.resolution_m
    reading = min(max(reading, model.min_range_m), model.max_range_m)
    return LidarReading(model.mount, LIDAR_OK, reading)


def lidar_wire_value(reading: LidarReading) -> int | str:
    """Telemetry encoding: centimeters, or the off-range markers."""
    if reading.status == LIDAR_OUT_OF_RANGE:
        return "oor"
    if reading.status == LIDAR_TOO_CLOSE:
        return "close"
    return int(round(reading.distance_m * 100.0))


# ---------------------------------------------------------------------------
# Thermal
# ---------------------------------------------------------------------------


def heat_source_temperature(src: HeatSource, ambient_c: float, t_s: float) -> float:
    """Exponential cool-down toward ambient after the touch instant."""
    if t_s < src.touched_at_s:
        raise ValueError("queried before the touch instant")
    return ambient_c + src.initial_delta_c * math.exp(-(t_s - src.touched_at_s) / src.cooling_tau_s)


def default_tau_for(kind_name: str) -> float:
    return TAU_METALLIC_S if kind_name in _METALLIC_KINDS else TAU_FABRIC_S


def scene_heat_sources(scene: Scene) -> list[HeatSource]:
    """Heat sources implied by evidence items with a touch timestamp."""
    return [
        HeatSource(it.id, it.touched_at_s, TOUCH_DELTA_C, default_tau_for(it.kind.name))
        for it in scene.evidence
        if it.touched_at_s is not None
    ]


def ground_temperature(
    scene: Scene,
    x: float,
    y: float,
    t_s: float,
    sources: list[HeatSource] | None = None,
    by_id: dict[str, EvidenceItem] | None = None,
) -> float:
    """Instantaneous surface temperature at a floor point."""
    if sources is None:
        sources = scene_heat_sources(scene)
    temp = scene.ambient_temp_c
    for src in sources:
        item = by_id[src.evidence_id] if by_id else scene.evidence_by_id(src.evidence_id)
        if item.contains_point(x, y):
            temp = max(temp, heat_source_temperature(src, scene.ambient_temp_c, t_s))
    return temp


def thermal_pixel_grounds(state: BlimpState, model: ThermalModel) -> np.ndarray:
    """Ground sample point for every thermal pixel, shape [rows, cols, 2]."""
    x, y, z = state.position_m
    h = state.heading_rad
    fx, fy = math.cos(h), math.sin(h)
    lx, ly = -math.sin(h), math.cos(h)
    fh, fv = model.fov_deg
    out = np.empty((model.rows, model.cols, 2))
    for r in range(model.rows):
        along = z * math.tan(math.radians(((r + 0.5) / model.rows - 0.5) * fv))
        for c in range(model.cols):
            across = z * math.tan(math.radians(((c + 0.5) / model.cols - 0.5) * fh))
            out[r, c, 0] = x + fx * along + lx * across
            out[r, c, 1] = y + fy * along + ly * across
    return out


def thermal_capture(
    scene: Scene,
    state: BlimpState,
    model: ThermalModel,
    prev: ThermalFrame | None,
    seed: int,
    sources: list[HeatSource] | None = None,
) -> ThermalFrame:
    """Refresh one checkerboard half of the frame from the live scene.

    Pixels of the opposite parity keep their previous values bit-exactly,
    which is what smears a moving scene into a checkerboard artifact.
    """
    if prev is not None and prev.frame.shape != (model.rows, model.cols):
        raise ValueError(
            f"previous frame shape {prev.frame.shape} != ({model.rows}, {model.cols})"
        )
    if sources is None:
        sources = scene_heat_sources(scene)
    by_id = {it.id: it for it in scene.evidence}
    grounds = thermal_pixel_grounds(state, model)
    rng = substream(seed, "thermal")

    if prev is None:
        frame = np.empty((model.rows, model.cols))
        parities = (0, 1)
        parity = 0
    else:
        frame = prev.frame.copy()
        parity = 1 - prev.pass_parity
        parities = (parity,)

    for r in range(model.rows):
        for c in range(model.cols):
            if (r + c) % 2 not in parities:
                continue
            gx, gy = grounds[r, c]
            temp = ground_temperature(scene, gx, gy, state.time_s, sources, by_id)
            temp += rng.uniform(-model.noise_c, model.noise_c)
            frame[r, c] = min(max(temp, THERMAL_MIN_C), THERMAL_MAX_C)
    return ThermalFrame(frame, pass_parity=parity, time_s=state.time_s)


def hotspot_detect(
    frame: ThermalFrame, ambient_c: float, threshold_c: float
) -> list[ThermalCluster]:
    """4-connected clusters of pixels warmer than ambient + threshold."""
    grid = frame.frame
    rows, cols = grid.shape
    hot = grid > ambient_c + threshold_c
    seen = np.zeros_like(hot, dtype=bool)
    clusters = []
    for r in range(rows):
        for c in range(cols):
            if not hot[r, c] or seen[r, c]:
                continue
            stack = [(r, c)]
            seen[r, c] = True
            members = []
            while stack:
                cr, cc = stack.pop()
                members.append((cr, cc))
                for nr, nc in ((cr - 1, cc), (cr + 1, cc), (cr, cc - 1), (cr, cc + 1)):
                    if 0 <= nr < rows and 0 <= nc < cols and hot[nr, nc] and not seen[nr, nc]:
                        seen[nr, nc] = True
                        stack.append((nr, nc))
            rs = [m[0] for m in members]
            cs = [m[1] for m in members]
            clusters.append(
                ThermalCluster(
                    pixel_count=len(members),
                    centroid_rc=(sum(rs) / len(rs), sum(cs) / len(cs)),
                    peak_c=float(max(grid[m] for m in members)),
                )
            )
    clusters.sort(key=lambda cl: (-cl.pixel_count, cl.centroid_rc))
    return clusters


def thermal_wire_frame(frame: ThermalFrame) -> list[int]:
    """Row-major centi-degree integers for compact telemetry."""
    return [int(round(v * 100.0)) for v in frame.frame.reshape(-1)]
