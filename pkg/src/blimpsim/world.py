"""Floor plans, procedural crime scenes, evidence state, and ray-cast geometry.

Everything here is value-semantic and deterministic: generation and
scattering are pure functions of their inputs (including the seed), so a
scene can be regenerated byte-identically from its spec.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .rng import substream

SCENE_SCHEMA_VERSION = 1

CELL_FREE = 0
CELL_WALL = 1
CELL_OBSTACLE = 2

_CELL_CHARS = {CELL_FREE: ".", CELL_WALL: "#", CELL_OBSTACLE: "o"}
_CHAR_CELLS = {v: k for k, v in _CELL_CHARS.items()}

MASS_LIGHT = "light"
MASS_MEDIUM = "medium"
MASS_HEAVY = "heavy"
_MASS_CLASSES = (MASS_LIGHT, MASS_MEDIUM, MASS_HEAVY)

# Light scatterable items start to blow away above this ground wind speed.
# Calibrated between the anemometer reading under the blimp (0.0 m/s) and
# under a small drone at 1.2 m (0.6-0.8 m/s).
SCATTER_THRESHOLD_MPS = 0.5
SCATTER_MAX_OFFSET_M = 0.5

PLACEMENT_REJECTION_CAP = 1000


class SceneGenerationError(Exception):
    """Scene could not be generated (e.g. no free floor area)."""


class HeapPlacementError(Exception):
    """An evidence item does not fit into the heap grid."""


class SceneParseError(Exception):
    """Scene document is malformed or truncated."""


class SceneSchemaError(SceneParseError):
    """Scene document declares an unsupported schema version."""


class SceneValidationError(Exception):
    """Scene document parsed but violates an invariant."""


# ---------------------------------------------------------------------------
# Floor plans
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class FloorPlan:
    """Occupancy/height grid. Row 0 is at y=0; column 0 at x=0."""

    name: str
    cell_size_m: float
    cells: np.ndarray  # uint8 grid [rows, cols] of CELL_* codes
    obstacle_heights: np.ndarray  # float grid, >0 only where CELL_OBSTACLE
    ceiling_height_m: float = 2.5

    def __post_init__(self):
        self.cells = np.asarray(self.cells, dtype=np.uint8)
        self.obstacle_heights = np.asarray(self.obstacle_heights, dtype=float)
        self.validate()

    def validate(self) -> None:
        if self.cells.ndim != 2 or self.cells.size == 0:
            raise ValueError("floor plan grid must be a non-empty 2D array")
        if self.obstacle_heights.shape != self.cells.shape:
            raise ValueError("obstacle height grid shape mismatch")
        if self.cell_size_m <= 0 or self.ceiling_height_m <= 0:
            raise ValueError("cell size and ceiling height must be positive")
        border = np.concatenate(
            [self.cells[0, :], self.cells[-1, :], self.cells[:, 0], self.cells[:, -1]]
        )
        if not np.all(border == CELL_WALL):
            raise ValueError("boundary cells must be walls")
        obst = self.cells == CELL_OBSTACLE
        heights = self.obstacle_heights[obst]
        if obst.any() and (np.any(heights <= 0) or np.any(heights > self.ceiling_height_m)):
            raise ValueError("obstacle heights must lie in (0, ceiling_height]")

    @property
    def height_cells(self) -> int:
        return self.cells.shape[0]

    @property
    def width_cells(self) -> int:
        return self.cells.shape[1]

    @property
    def width_m(self) -> float:
        return self.width_cells * self.cell_size_m

    @property
    def height_m(self) -> float:
        return self.height_cells * self.cell_size_m

    def cell_index(self, x: float, y: float) -> tuple[int, int]:
        """(row, col) of the cell containing (x, y), clamped to the grid."""
        col = min(max(int(x / self.cell_size_m), 0), self.width_cells - 1)
        row = min(max(int(y / self.cell_size_m), 0), self.height_cells - 1)
        return row, col

    def cell_kind(self, x: float, y: float) -> int:
        r, c = self.cell_index(x, y)
        return int(self.cells[r, c])

    def surface_height(self, x: float, y: float) -> float:
        """Top of whatever occupies (x, y): 0 for free floor, ceiling for walls."""
        r, c = self.cell_index(x, y)
        kind = self.cells[r, c]
        if kind == CELL_WALL:
            return self.ceiling_height_m
        if kind == CELL_OBSTACLE:
            return float(self.obstacle_heights[r, c])
        return 0.0

    def contains(self, x: float, y: float) -> bool:
        return 0.0 <= x <= self.width_m and 0.0 <= y <= self.height_m

    def free_cell_indices(self) -> np.ndarray:
        """Array of (row, col) pairs for free cells."""
        rows, cols = np.nonzero(self.cells == CELL_FREE)
        return np.stack([rows, cols], axis=1)

    def block_is_free(self, x0: float, y0: float, x1: float, y1: float) -> bool:
        """True if every cell overlapped by the rectangle is free."""
        eps = 1e-9
        c0 = int(math.floor(x0 / self.cell_size_m + eps))
        c1 = int(math.ceil(x1 / self.cell_size_m - eps)) - 1
        r0 = int(math.floor(y0 / self.cell_size_m + eps))
        r1 = int(math.ceil(y1 / self.cell_size_m - eps)) - 1
        if c0 < 0 or r0 < 0 or c1 >= self.width_cells or r1 >= self.height_cells:
            return False
        return bool(np.all(self.cells[r0 : r1 + 1, c0 : c1 + 1] == CELL_FREE))

    def max_obstacle_height(self) -> float:
        mask = self.cells == CELL_OBSTACLE
        if not mask.any():
            return 0.0
        return float(self.obstacle_heights[mask].max())

    def interior_bounds(self) -> tuple[float, float, float, float]:
        """(x0, y0, x1, y1) of the area inside the boundary walls."""
        cs = self.cell_size_m
        return cs, cs, self.width_m - cs, self.height_m - cs

    def __eq__(self, other) -> bool:
        if not isinstance(other, FloorPlan):
            return NotImplemented
        return (
            self.name == other.name
            and self.cell_size_m == other.cell_size_m
            and self.ceiling_height_m == other.ceiling_height_m
            and np.array_equal(self.cells, other.cells)
            and np.array_equal(self.obstacle_heights, other.obstacle_heights)
        )


def empty_room(
    width_m: float,
    height_m: float,
    cell_size_m: float = 0.05,
    ceiling_height_m: float = 2.5,
    name: str | None = None,
) -> FloorPlan:
    """Rectangular room with boundary walls and an empty interior."""
    cols = int(round(width_m / cell_size_m)) + 2
    rows = int(round(height_m / cell_size_m)) + 2
    cells = np.full((rows, cols), CELL_FREE, dtype=np.uint8)
    cells[0, :] = cells[-1, :] = CELL_WALL
    cells[:, 0] = cells[:, -1] = CELL_WALL
    heights = np.zeros((rows, cols))
    if name is None:
        name = f"room-{width_m:g}x{height_m:g}"
    return FloorPlan(name, cell_size_m, cells, heights, ceiling_height_m)


def _fill_wall(plan: FloorPlan, x0: float, y0: float, x1: float, y1: float) -> None:
    cs = plan.cell_size_m
    c0, c1 = int(x0 / cs), int(math.ceil(x1 / cs))
    r0, r1 = int(y0 / cs), int(math.ceil(y1 / cs))
    plan.cells[r0:r1, c0:c1] = CELL_WALL


def _fill_obstacle(plan: FloorPlan, x0: float, y0: float, x1: float, y1: float, h: float) -> None:
    cs = plan.cell_size_m
    c0, c1 = int(x0 / cs), int(math.ceil(x1 / cs))
    r0, r1 = int(y0 / cs), int(math.ceil(y1 / cs))
    plan.cells[r0:r1, c0:c1] = CELL_OBSTACLE
    plan.obstacle_heights[r0:r1, c0:c1] = h


def hint_plan() -> FloorPlan:
    """The 50 m^2 smart-home test space, modeled as a 10 m x 5 m rectangle."""
    return empty_room(10.0, 5.0, name="hint-empty")


def nfc_villa_plan() -> FloorPlan:
    """Four-room villa traced from the published layout proportions (12 m x 8 m)."""
    plan = empty_room(12.0, 8.0, name="nfc-villa")
    # Internal walls with ~1 m door gaps. Coordinates include the 0.05 m
    # boundary wall offset.
    wall = 0.1
    _fill_wall(plan, 6.0, 0.05, 6.0 + wall, 2.6)  # vertical, lower segment
    _fill_wall(plan, 6.0, 3.6, 6.0 + wall, 8.0)  # vertical, upper segment
    _fill_wall(plan, 0.05, 4.5, 2.4, 4.5 + wall)  # horizontal, left segment
    _fill_wall(plan, 3.4, 4.5, 8.3, 4.5 + wall)  # horizontal, middle segment
    _fill_wall(plan, 9.3, 4.5, 12.0, 4.5 + wall)  # horizontal, right segment
    # Furniture: living-room table, bed, kitchen counter.
    _fill_obstacle(plan, 2.0, 1.8, 3.2, 2.6, 0.75)
    _fill_obstacle(plan, 1.0, 5.8, 3.0, 7.2, 0.5)
    _fill_obstacle(plan, 10.8, 0.2, 11.9, 2.2, 0.9)
    return plan


PRESET_PLANS = {
    "hint-empty": hint_plan,
    "nfc-villa": nfc_villa_plan,
}


def preset_plan(name: str) -> FloorPlan:
    try:
        return PRESET_PLANS[name]()
    except KeyError:
        raise KeyError(f"unknown floor plan preset {name!r}; have {sorted(PRESET_PLANS)}") from None


# ---------------------------------------------------------------------------
# Evidence
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EvidenceKind:
    name: str
    footprint_m: tuple[float, float]  # width x depth
    mass_class: str
    scatterable: bool = False

    def __post_init__(self):
        w, d = self.footprint_m
        if w <= 0 or d <= 0:
            raise ValueError(f"{self.name}: footprint dimensions must be positive")
        if self.mass_class not in _MASS_CLASSES:
            raise ValueError(f"{self.name}: unknown mass class {self.mass_class!r}")

    @property
    def footprint_area_m2(self) -> float:
        return self.footprint_m[0] * self.footprint_m[1]


FIREARM_PHOTO = EvidenceKind("firearm_photo", (0.21, 0.30), MASS_LIGHT, scatterable=True)
KNIFE_LARGE = EvidenceKind("knife_large", (0.35, 0.08), MASS_MEDIUM)
KNIFE_SMALL = EvidenceKind("knife_small", (0.10, 0.025), MASS_LIGHT)
SHOES = EvidenceKind("shoes", (0.30, 0.25), MASS_MEDIUM)
BLOOD_SHEET_PASSIVE = EvidenceKind("blood_sheet_passive", (0.21, 0.30), MASS_LIGHT, scatterable=True)
BLOOD_SHEET_ACTIVE = EvidenceKind("blood_sheet_active", (0.21, 0.30), MASS_LIGHT, scatterable=True)
BLOOD_SHEET_TRANSFER = EvidenceKind("blood_sheet_transfer", (0.21, 0.30), MASS_LIGHT, scatterable=True)
BODY = EvidenceKind("body", (1.70, 0.60), MASS_HEAVY)
ACCELERANT = EvidenceKind("accelerant", (0.15, 0.15), MASS_MEDIUM)
TOOL = EvidenceKind("tool", (0.30, 0.10), MASS_MEDIUM)

STANDARD_KINDS = {
    k.name: k
    for k in (
        FIREARM_PHOTO,
        KNIFE_LARGE,
        KNIFE_SMALL,
        SHOES,
        BLOOD_SHEET_PASSIVE,
        BLOOD_SHEET_ACTIVE,
        BLOOD_SHEET_TRANSFER,
        BODY,
        ACCELERANT,
        TOOL,
    )
}


def other_kind(
    label: str,
    footprint_m: tuple[float, float],
    mass_class: str = MASS_MEDIUM,
    scatterable: bool = False,
) -> EvidenceKind:
    return EvidenceKind(f"other:{label}", footprint_m, mass_class, scatterable)


def default_evidence_set() -> list[EvidenceKind]:
    """The seven-object lab inventory used throughout the experiments."""
    return [
        FIREARM_PHOTO,
        KNIFE_LARGE,
        KNIFE_SMALL,
        SHOES,
        BLOOD_SHEET_PASSIVE,
        BLOOD_SHEET_ACTIVE,
        BLOOD_SHEET_TRANSFER,
    ]


@dataclass
class EvidenceItem:
    id: str
    kind: EvidenceKind
    position_m: tuple[float, float]
    orientation_rad: float = 0.0
    touched_at_s: float | None = None
    displaced: bool = False

    def footprint_aabb(self) -> tuple[float, float, float, float]:
        """Axis-aligned bounds of the oriented footprint rectangle."""
        w, d = self.kind.footprint_m
        c = abs(math.cos(self.orientation_rad))
        s = abs(math.sin(self.orientation_rad))
        hx = (w * c + d * s) / 2.0
        hy = (w * s + d * c) / 2.0
        x, y = self.position_m
        return x - hx, y - hy, x + hx, y + hy

    def contains_point(self, x: float, y: float) -> bool:
        """Point-in-oriented-footprint test (used by the thermal field)."""
        px, py = x - self.position_m[0], y - self.position_m[1]
        c, s = math.cos(-self.orientation_rad), math.sin(-self.orientation_rad)
        lx = px * c - py * s
        ly = px * s + py * c
        w, d = self.kind.footprint_m
        return abs(lx) <= w / 2.0 and abs(ly) <= d / 2.0


def _aabb_overlap_area(a, b) -> float:
    w = min(a[2], b[2]) - max(a[0], b[0])
    h = min(a[3], b[3]) - max(a[1], b[1])
    return max(w, 0.0) * max(h, 0.0)


# ---------------------------------------------------------------------------
# Scene generation
# ---------------------------------------------------------------------------

DEFAULT_PROBABILITIES: dict[str, dict[str, float]] = {
    "homicide": {
        "body": 1.0,
        "blood_sheet_passive": 0.9,
        "blood_sheet_active": 0.9,
        "blood_sheet_transfer": 0.9,
        "firearm_photo": 0.5,
        "knife_large": 0.5,
        "knife_small": 0.5,
    },
    "assault": {
        "blood_sheet_passive": 0.7,
        "blood_sheet_active": 0.7,
        "blood_sheet_transfer": 0.7,
        "knife_large": 0.4,
        "knife_small": 0.4,
    },
    "burglary": {
        "tool": 0.8,
        "shoes": 0.6,
        "blood_sheet_passive": 0.1,
    },
    "arson": {
        "accelerant": 0.9,
    },
}

CRIME_TYPES = tuple(DEFAULT_PROBABILITIES)


@dataclass
class CrimeSceneSpec:
    crime_type: str
    floor_plan: FloorPlan
    probability_table: dict[EvidenceKind, float]
    count_ranges: dict[EvidenceKind, tuple[int, int]] = field(default_factory=dict)
    seed: int = 0

    def validate(self) -> None:
        if self.crime_type not in CRIME_TYPES:
            raise ValueError(f"unknown crime type {self.crime_type!r}")
        for kind, p in self.probability_table.items():
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{kind.name}: probability {p} outside [0, 1]")
        for kind, (lo, hi) in self.count_ranges.items():
            if lo < 0 or lo > hi:
                raise ValueError(f"{kind.name}: bad count range [{lo}, {hi}]")


def default_spec(crime_type: str, floor_plan: FloorPlan, seed: int = 0) -> CrimeSceneSpec:
    """Spec with the built-in probability table for `crime_type`."""
    if crime_type not in DEFAULT_PROBABILITIES:
        raise ValueError(f"unknown crime type {crime_type!r}; have {sorted(DEFAULT_PROBABILITIES)}")
    table = {
        STANDARD_KINDS[name]: p for name, p in DEFAULT_PROBABILITIES[crime_type].items()
    }
    return CrimeSceneSpec(crime_type, floor_plan, table, seed=seed)


@dataclass
class Scene:
    floor_plan: FloorPlan
    evidence: list[EvidenceItem]
    ambient_temp_c: float = 21.0
    seed: int = 0

    def evidence_by_id(self, item_id: str) -> EvidenceItem:
        for item in self.evidence:
            if item.id == item_id:
                return item
        raise KeyError(item_id)

    def validate(self) -> None:
        self.floor_plan.validate()
        for item in self.evidence:
            x0, y0, x1, y1 = item.footprint_aabb()
            if not self.floor_plan.block_is_free(x0, y0, x1, y1):
                raise SceneValidationError(
                    f"evidence {item.id} ({item.kind.name}) lies outside the free floor area"
                )
        for i, a in enumerate(self.evidence):
            for b in self.evidence[i + 1 :]:
                if _aabb_overlap_area(a.footprint_aabb(), b.footprint_aabb()) > 0:
                    raise SceneValidationError(f"evidence {a.id} overlaps {b.id}")


def _try_place(
    plan: FloorPlan,
    kind: EvidenceKind,
    placed: list[EvidenceItem],
    item_id: str,
    rng,
) -> EvidenceItem | None:
    free = plan.free_cell_indices()
    if len(free) == 0:
        raise SceneGenerationError("floor plan has no free cells")
    cs = plan.cell_size_m
    for _ in range(PLACEMENT_REJECTION_CAP):
        row, col = free[rng.randrange(len(free))]
        x = (col + rng.random()) * cs
        y = (row + rng.random()) * cs
        theta = rng.uniform(0.0, 2.0 * math.pi)
        item = EvidenceItem(item_id, kind, (x, y), theta)
        x0, y0, x1, y1 = item.footprint_aabb()
        if not plan.block_is_free(x0, y0, x1, y1):
            continue
        if any(_aabb_overlap_area((x0, y0, x1, y1), p.footprint_aabb()) > 0 for p in placed):
            continue
        return item
    return None


def generate_scene(spec: CrimeSceneSpec) -> Scene:
    """Draw evidence kinds and locations from the spec's probability table.

    Deterministic for a fixed seed. Items that cannot be placed after the
    rejection cap are skipped rather than failing the whole scene.
    """
    spec.validate()
    if len(spec.floor_plan.free_cell_indices()) == 0:
        raise SceneGenerationError("floor plan has no free cells")
    rng = substream(spec.seed, "generate_scene")
    placed: list[EvidenceItem] = []
    serial = 0
    for kind, prob in spec.probability_table.items():
        if rng.random() >= prob:
            continue
        lo, hi = spec.count_ranges.get(kind, (1, 1))
        count = rng.randint(lo, hi)
        for _ in range(count):
            item = _try_place(spec.floor_plan, kind, placed, f"e{serial:03d}", rng)
            if item is not None:
                placed.append(item)
                serial += 1
    return Scene(spec.floor_plan, placed, seed=spec.seed)


def generate_heap(
    items: list[EvidenceKind],
    grid: tuple[int, int],
    cell_m: float = 0.3,
) -> Scene:
    """Pack all items into one heap, filling a grid largest-first, row-major."""
    cols, rows = grid
    if cols <= 0 or rows <= 0:
        raise ValueError("heap grid dimensions must be positive")
    if cell_m <= 0:
        raise ValueError("heap cell size must be positive")

    margin = cell_m
    plan = empty_room(cols * cell_m + 2 * margin, rows * cell_m + 2 * margin, name="heap")
    origin_x = plan.cell_size_m + margin
    origin_y = plan.cell_size_m + margin

    order = sorted(
        enumerate(items), key=lambda pair: (-pair[1].footprint_area_m2, pair[0])
    )
    occupied = np.zeros((rows, cols), dtype=bool)
    evidence: list[EvidenceItem] = []
    for serial, (_, kind) in enumerate(order):
        w, d = kind.footprint_m
        cw = max(1, math.ceil(w / cell_m - 1e-9))
        ch = max(1, math.ceil(d / cell_m - 1e-9))
        if cw > cols or ch > rows:
            raise HeapPlacementError(
                f"item {kind.name} needs {cw}x{ch} cells, grid is {cols}x{rows}"
            )
        anchor = None
        for r in range(rows - ch + 1):
            for c in range(cols - cw + 1):
                if not occupied[r : r + ch, c : c + cw].any():
                    anchor = (r, c)
                    break
            if anchor:
                break
        if anchor is None:
            raise HeapPlacementError(f"item {kind.name} does not fit in the remaining grid")
        r, c = anchor
        occupied[r : r + ch, c : c + cw] = True
        x = origin_x + (c + cw / 2.0) * cell_m
        y = origin_y + (r + ch / 2.0) * cell_m
        evidence.append(EvidenceItem(f"e{serial:03d}", kind, (x, y), 0.0))
    return Scene(plan, evidence, seed=0)


def scatter_evidence(
    scene: Scene,
    wind_speed_mps: float,
    area: tuple[float, float, float, float] | None = None,
    threshold_mps: float = SCATTER_THRESHOLD_MPS,
) -> Scene:
    """Displace light scatterable items in `area` if the wind exceeds the threshold."""
    if wind_speed_mps < 0:
        raise ValueError("wind speed must be non-negative")
    plan = scene.floor_plan
    if area is None:
        area = (0.0, 0.0, plan.width_m, plan.height_m)
    ax0, ay0, ax1, ay1 = area

    new_items = []
    for item in scene.evidence:
        x, y = item.position_m
        in_area = ax0 <= x <= ax1 and ay0 <= y <= ay1
        movable = item.kind.scatterable and item.kind.mass_class == MASS_LIGHT
        if not (in_area and movable and wind_speed_mps > threshold_mps):
            new_items.append(replace(item))
            continue
        rng = substream(scene.seed, "scatter", item.id)
        radius = rng.uniform(0.1, SCATTER_MAX_OFFSET_M)
        angle = rng.uniform(0.0, 2.0 * math.pi)
        moved = replace(item, displaced=True)
        # Shrink the offset until the new footprint stays on free floor;
        # a fully boxed-in item still counts as displaced in place.
        for shrink in range(6):
            r = radius * (0.5**shrink)
            cand = replace(
                item,
                position_m=(x + r * math.cos(angle), y + r * math.sin(angle)),
                displaced=True,
            )
            bb = cand.footprint_aabb()
            others = [p.footprint_aabb() for p in scene.evidence if p.id != item.id]
            if plan.block_is_free(*bb) and all(
                _aabb_overlap_area(bb, o) == 0 for o in others
            ):
                moved = cand
                break
        new_items.append(moved)
    return Scene(plan, new_items, scene.ambient_temp_c, scene.seed)


# ---------------------------------------------------------------------------
# Ray casting
# ---------------------------------------------------------------------------


def raycast(
    scene: Scene,
    origin_m: tuple[float, float, float],
    direction: tuple[float, float, float],
) -> float | None:
    """Euclidean distance to the first wall/obstacle/floor/ceiling surface.

    Walls span the full room height; obstacles are boxes from the floor to
    their height. Uses exact grid traversal, so returned distances carry no
    discretization error.
    """
    plan = scene.floor_plan
    ox, oy, oz = origin_m
    if not plan.contains(ox, oy) or not 0.0 <= oz <= plan.ceiling_height_m:
        raise ValueError(f"ray origin {origin_m} outside the floor plan volume")
    dx, dy, dz = direction
    norm = math.sqrt(dx * dx + dy * dy + dz * dz)
    if norm < 1e-12:
        raise ValueError("ray direction must be non-zero")
    dx, dy, dz = dx / norm, dy / norm, dz / norm

    # Distance to the horizontal planes.
    if dz > 1e-12:
        t_plane = (plan.ceiling_height_m - oz) / dz
    elif dz < -1e-12:
        t_plane = -oz / dz
    else:
        t_plane = math.inf

    cs = plan.cell_size_m
    row, col = plan.cell_index(ox, oy)
    step_c = 1 if dx > 0 else -1
    step_r = 1 if dy > 0 else -1
    if abs(dx) > 1e-12:
        next_cx = (col + (1 if dx > 0 else 0)) * cs
        t_max_x = (next_cx - ox) / dx
        t_dx = cs / abs(dx)
    else:
        t_max_x, t_dx = math.inf, math.inf
    if abs(dy) > 1e-12:
        next_cy = (row + (1 if dy > 0 else 0)) * cs
        t_max_y = (next_cy - oy) / dy
        t_dy = cs / abs(dy)
    else:
        t_max_y, t_dy = math.inf, math.inf

    t_enter = 0.0
    for _ in range(plan.width_cells * plan.height_cells * 2 + 4):
        t_exit = min(t_max_x, t_max_y, t_plane)
        kind = plan.cells[row, col]
        if kind == CELL_WALL:
            return t_enter
        if kind == CELL_OBSTACLE:
            h = float(plan.obstacle_heights[row, col])
            z_enter = oz + dz * t_enter
            if z_enter <= h:
                return t_enter if t_enter > 0 else 0.0
            if dz < 0:
                t_top = (h - oz) / dz
                if t_enter < t_top <= t_exit:
                    return t_top
        if t_plane <= min(t_max_x, t_max_y):
            return t_plane
        if t_max_x < t_max_y:
            t_enter = t_max_x
            t_max_x += t_dx
            col += step_c
        else:
            t_enter = t_max_y
            t_max_y += t_dy
            row += step_r
        if not (0 <= row < plan.height_cells and 0 <= col < plan.width_cells):
            return None  # cannot happen inside a walled room
    return None


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def _plan_to_doc(plan: FloorPlan) -> dict:
    rows, cols = np.nonzero(plan.cells == CELL_OBSTACLE)
    heights = [
        [int(r), int(c), float(plan.obstacle_heights[r, c])]
        for r, c in sorted(zip(rows.tolist(), cols.tolist()))
    ]
    return {
        "name": plan.name,
        "cell_size_m": plan.cell_size_m,
        "ceiling_height_m": plan.ceiling_height_m,
        "cells": ["".join(_CELL_CHARS[int(v)] for v in line) for line in plan.cells],
        "obstacle_heights": heights,
    }


def _plan_from_doc(doc: dict) -> FloorPlan:
    try:
        lines = doc["cells"]
        grid = np.array([[_CHAR_CELLS[ch] for ch in line] for line in lines], dtype=np.uint8)
        heights = np.zeros(grid.shape)
        for r, c, h in doc["obstacle_heights"]:
            heights[r, c] = h
        return FloorPlan(
            str(doc["name"]),
            float(doc["cell_size_m"]),
            grid,
            heights,
            float(doc["ceiling_height_m"]),
        )
    except (KeyError, TypeError, IndexError) as exc:
        raise SceneParseError(f"malformed floor plan document: {exc}") from exc
    except ValueError as exc:
        raise SceneValidationError(str(exc)) from exc


def _kind_to_doc(kind: EvidenceKind) -> dict:
    return {
        "name": kind.name,
        "footprint_m": list(kind.footprint_m),
        "mass_class": kind.mass_class,
        "scatterable": kind.scatterable,
    }


def _kind_from_doc(doc: dict) -> EvidenceKind:
    name = str(doc["name"])
    std = STANDARD_KINDS.get(name)
    kind = EvidenceKind(
        name,
        (float(doc["footprint_m"][0]), float(doc["footprint_m"][1])),
        str(doc["mass_class"]),
        bool(doc["scatterable"]),
    )
    return std if std == kind else kind


def save_scene(scene: Scene) -> bytes:
    """Canonical JSON encoding; identical scenes produce identical bytes."""
    doc = {
        "schema_version": SCENE_SCHEMA_VERSION,
        "floor_plan": _plan_to_doc(scene.floor_plan),
        "evidence": [
            {
                "id": it.id,
                "kind": _kind_to_doc(it.kind),
                "position_m": list(it.position_m),
                "orientation_rad": it.orientation_rad,
                "touched_at_s": it.touched_at_s,
                "displaced": it.displaced,
            }
            for it in scene.evidence
        ],
        "ambient_temp_c": scene.ambient_temp_c,
        "seed": scene.seed,
    }
    return json.dumps(doc, sort_keys=True, separators=(",", ":")).encode("utf-8")


def load_scene(data: bytes) -> Scene:
    try:
        doc = json.loads(data.decode("utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise SceneParseError(f"unreadable scene document: {exc}") from exc
    if not isinstance(doc, dict):
        raise SceneParseError("scene document must be a JSON object")
    version = doc.get("schema_version")
    if version != SCENE_SCHEMA_VERSION:
        raise SceneSchemaError(f"unsupported scene schema version {version!r}")
    try:
        plan = _plan_from_doc(doc["floor_plan"])
        evidence = [
            EvidenceItem(
                id=str(e["id"]),
                kind=_kind_from_doc(e["kind"]),
                position_m=(float(e["position_m"][0]), float(e["position_m"][1])),
                orientation_rad=float(e["orientation_rad"]),
                touched_at_s=None if e["touched_at_s"] is None else float(e["touched_at_s"]),
                displaced=bool(e["displaced"]),
            )
            for e in doc["evidence"]
        ]
        scene = Scene(plan, evidence, float(doc["ambient_temp_c"]), int(doc["seed"]))
    except (KeyError, TypeError, IndexError, ValueError) as exc:
        if isinstance(exc, (SceneParseError, SceneValidationError)):
            raise
        raise SceneParseError(f"malformed scene document: {exc}") from exc
    scene.validate()
    return scene


def scene_hash(scene: Scene) -> str:
    import hashlib

    return hashlib.sha256(save_scene(scene)).hexdigest()
