"""Craft physics: buoyancy arithmetic, burst actuation, battery, downwash.

All transitions are pure: they take a state and return a new one, so a
simulation session owns exactly one mutable reference and replays are exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

from .rng import substream
from .world import Scene

CRAFT_BUOYANT = "buoyant"
CRAFT_ROTOR = "rotor"

BURST_DIRECTIONS = ("forward", "backward", "up", "down", "rotate_left", "rotate_right")
BURST_REFERENCE_MS = 300.0

# Ground airflow anchors. The rotor curve passes through the published
# measurement (0.6-0.8 m/s at 1.2 m); the buoyant burst wash is pinned far
# below the scatter threshold.
ROTOR_WASH_MPS = 0.7
ROTOR_WASH_HEIGHT_M = 1.2
BURST_WASH_MPS = 0.05
BURST_WASH_HEIGHT_M = 0.2
WASH_CAP_MPS = 3.0

# Actuation energy bookkeeping: 150 mAh-equivalent per 1000 reference bursts.
ACTUATOR_MAH_PER_BURST = 0.15

REGULATOR_LIMIT_MA = 1500.0


class CommandRejectedError(Exception):
    """Burst refused (battery exhausted)."""


@dataclass(frozen=True)
class PowerComponent:
    name: str
    current_ma: float


def default_components() -> list[PowerComponent]:
    return [
        PowerComponent("minicomputer", 460.0),
        PowerComponent("camera", 310.0),
        PowerComponent("lidar_x3", 210.0),
        PowerComponent("thermal", 20.0),
    ]


@dataclass
class BatteryState:
    """Battery plus the continuous draw of the payload components.

    `derating` folds pack derating and the low-voltage cutoff into one
    empirical factor: usable charge = capacity * derating.
    """

    capacity_mah: float = 1000.0
    drawn_mah: float = 0.0
    components: list[PowerComponent] = field(default_factory=default_components)
    derating: float = 0.29

    def __post_init__(self):
        if not 0.0 < self.derating <= 1.0:
            raise ValueError("derating must be in (0, 1]")
        if self.capacity_mah < 0 or self.drawn_mah < 0:
            raise ValueError("charge values must be non-negative")
        if self.drawn_mah > self.capacity_mah:
            raise ValueError("drawn charge exceeds capacity")
        if self.total_current_ma > REGULATOR_LIMIT_MA:
            raise ValueError(
                f"total draw {self.total_current_ma:.0f} mA exceeds the "
                f"{REGULATOR_LIMIT_MA:.0f} mA regulator limit"
            )

    @property
    def total_current_ma(self) -> float:
        return sum(c.current_ma for c in self.components)

    @property
    def usable_mah(self) -> float:
        return self.capacity_mah * self.derating

    @property
    def exhausted(self) -> bool:
        return self.drawn_mah >= self.usable_mah

    def drained(self, amount_mah: float) -> "BatteryState":
        drawn = min(self.capacity_mah, self.drawn_mah + max(amount_mah, 0.0))
        return replace(self, drawn_mah=drawn)


PowerBudget = BatteryState


@dataclass
class BlimpConfig:
    helium_density_kgm3: float = 0.18
    air_density_kgm3: float = 1.29
    lift_per_m3_kg: float = 1.11
    envelope_volume_m3: float = 0.22
    payload_mass_kg: float = 0.24
    burst_impulse_mps: float = 0.15
    rotation_per_burst_rad: float = math.radians(15.0)
    drag_coefficient_per_s: float = 0.8
    max_speed_mps: float = 0.5
    craft_kind: str = CRAFT_BUOYANT

    def __post_init__(self):
        if min(self.helium_density_kgm3, self.air_density_kgm3) < 0:
            raise ValueError("densities must be non-negative")
        if self.envelope_volume_m3 < 0 or self.payload_mass_kg < 0:
            raise ValueError("volume and payload must be non-negative")
        if abs(self.lift_per_m3_kg - (self.air_density_kgm3 - self.helium_density_kgm3)) > 0.05:
            raise ValueError("lift per m^3 inconsistent with the density difference")
        if self.craft_kind not in (CRAFT_BUOYANT, CRAFT_ROTOR):
            raise ValueError(f"unknown craft kind {self.craft_kind!r}")


@dataclass
class DriftModel:
    seed: int = 0
    gust_sigma_mps: float = 0.05
    gust_interval_s: float = 2.0

    def __post_init__(self):
        if self.gust_sigma_mps < 0 or self.gust_interval_s <= 0:
            raise ValueError("gust sigma must be >= 0 and interval > 0")


@dataclass
class CommandBurst:
    direction: str
    duration_ms: float = BURST_REFERENCE_MS

    def __post_init__(self):
        if self.direction not in BURST_DIRECTIONS:
            raise ValueError(f"unknown direction {self.direction!r}")
        if not 50.0 <= self.duration_ms <= 2000.0:
            raise ValueError("burst duration must be within [50, 2000] ms")


@dataclass
class BlimpState:
    position_m: tuple[float, float, float] = (0.0, 0.0, 1.5)
    heading_rad: float = 0.0
    velocity_mps: tuple[float, float, float] = (0.0, 0.0, 0.0)
    time_s: float = 0.0
    battery: BatteryState = field(default_factory=BatteryState)

    @property
    def speed_mps(self) -> float:
        vx, vy, vz = self.velocity_mps
        return math.sqrt(vx * vx + vy * vy + vz * vz)


def net_lift(config: BlimpConfig) -> float:
    """Climbing mass margin in kg (negative sinks, ~0 hovers)."""
    return config.envelope_volume_m3 * config.lift_per_m3_kg - config.payload_mass_kg


def endurance_minutes(budget: PowerBudget) -> float:
    """Usable charge over total draw, in minutes."""
    total = budget.total_current_ma
    if total <= 0:
        raise ValueError("total component current must be positive")
    return budget.capacity_mah * budget.derating / total * 60.0


def _wrap_angle(theta: float) -> float:
    return math.atan2(math.sin(theta), math.cos(theta))


def _clamp_speed(v: tuple[float, float, float], cap: float) -> tuple[float, float, float]:
    speed = math.sqrt(v[0] ** 2 + v[1] ** 2 + v[2] ** 2)
    if speed <= cap or speed == 0.0:
        return v
    k = cap / speed
    return (v[0] * k, v[1] * k, v[2] * k)


def apply_burst(state: BlimpState, cmd: CommandBurst, config: BlimpConfig) -> BlimpState:
    """One propeller burst: a velocity impulse or a quantized heading change."""
    if state.battery.exhausted:
        raise CommandRejectedError("battery exhausted")
    scale = cmd.duration_ms / BURST_REFERENCE_MS
    # Actuation energy is booked flat per burst (separate actuator pack
    # folded into one endurance figure).
    battery = state.battery.drained(ACTUATOR_MAH_PER_BURST)
    vx, vy, vz = state.velocity_mps
    heading = state.heading_rad
    if cmd.direction in ("rotate_left", "rotate_right"):
        sign = 1.0 if cmd.direction == "rotate_left" else -1.0
        heading = _wrap_angle(heading + sign * config.rotation_per_burst_rad * scale)
    else:
        impulse = config.burst_impulse_mps * scale
        if cmd.direction == "forward":
            vx += impulse * math.cos(heading)
            vy += impulse * math.sin(heading)
        elif cmd.direction == "backward":
            vx -= impulse * math.cos(heading)
            vy -= impulse * math.sin(heading)
        elif cmd.direction == "up":
            vz += impulse
        elif cmd.direction == "down":
            vz -= impulse
    velocity = _clamp_speed((vx, vy, vz), config.max_speed_mps)
    return replace(state, heading_rad=heading, velocity_mps=velocity, battery=battery)


def _gust_kicks(drift: DriftModel, t0: float, t1: float) -> tuple[float, float]:
    """Summed seeded gust impulses scheduled in (t0, t1]."""
    if drift.gust_sigma_mps == 0.0:
        return 0.0, 0.0
    k0 = math.floor(t0 / drift.gust_interval_s) + 1
    k1 = math.floor(t1 / drift.gust_interval_s)
    gx = gy = 0.0
    for k in range(k0, k1 + 1):
        rng = substream(drift.seed, "gust", k)
        gx += rng.gauss(0.0, drift.gust_sigma_mps)
        gy += rng.gauss(0.0, drift.gust_sigma_mps)
    return gx, gy


def step(state: BlimpState, dt_s: float, drift: DriftModel, scene: Scene,
         config: BlimpConfig | None = None) -> BlimpState:
    """Advance the craft by `dt_s`: drift, drag decay, collisions, battery."""
    if not 0.0 < dt_s <= 0.5:
        raise ValueError("step dt must be in (0, 0.5] s")
    cfg = config or BlimpConfig()
    plan = scene.floor_plan

    gx, gy = _gust_kicks(drift, state.time_s, state.time_s + dt_s)
    vx, vy, vz = state.velocity_mps
    vx, vy, vz = _clamp_speed((vx + gx, vy + gy, vz), cfg.max_speed_mps)

    x, y, z = state.position_m
    nx, ny, nz = x + vx * dt_s, y + vy * dt_s, z + vz * dt_s

    if nz > plan.ceiling_height_m:
        nz, vz = plan.ceiling_height_m, 0.0
    elif nz < 0.0:
        nz, vz = 0.0, 0.0
    if plan.surface_height(nx, y) > nz:
        nx, vx = x, 0.0
    if plan.surface_height(nx, ny) > nz:
        ny, vy = y, 0.0
    surface = plan.surface_height(nx, ny)
    if surface > nz:  # descended onto an obstacle top
        nz, vz = min(surface, plan.ceiling_height_m), 0.0

    decay = math.exp(-cfg.drag_coefficient_per_s * dt_s)
    velocity = (vx * decay, vy * decay, vz * decay)
    battery = state.battery.drained(state.battery.total_current_ma * dt_s / 3600.0)
    return replace(
        state,
        position_m=(nx, ny, nz),
        velocity_mps=velocity,
        time_s=state.time_s + dt_s,
        battery=battery,
    )


def downwash_at_ground(config: BlimpConfig, height_m: float, thrust_active: bool) -> float:
    """Ground-level airflow under the craft at the given height."""
    if height_m <= 0:
        raise ValueError("height must be positive")
    if config.craft_kind == CRAFT_ROTOR:
        wind = ROTOR_WASH_MPS * (ROTOR_WASH_HEIGHT_M / height_m)
    elif thrust_active:
        wind = BURST_WASH_MPS * (BURST_WASH_HEIGHT_M / height_m)
    else:
        return 0.0
    return min(max(wind, 0.0), WASH_CAP_MPS)
