"""Shared value types, tunables, and helpers used across the package.

Coordinate convention everywhere: X forward, Y left, Z up, meters.
All value types are immutable; the engine swaps whole snapshots instead of
mutating them, so concurrent readers never observe a half-updated state.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Iterable

import numpy as np


class SwarmfieldError(Exception):
    """Base class for errors raised by this package."""


# ---- Vectors ----


@dataclass(frozen=True)
class Vec3:
    """Immutable 3-vector of finite floats."""

    x: float
    y: float
    z: float

    def __post_init__(self) -> None:
        for name in ("x", "y", "z"):
            v = getattr(self, name)
            if not isinstance(v, (int, float)) or isinstance(v, bool):
                raise TypeError(f"Vec3.{name} must be a number, got {type(v).__name__}")
            if not math.isfinite(v):
                raise ValueError(f"Vec3.{name} must be finite, got {v!r}")
            if not isinstance(v, float):
                object.__setattr__(self, name, float(v))

    def __add__(self, other: Vec3) -> Vec3:
        return Vec3(self.x + other.x, self.y + other.y, self.z + other.z)

    def __sub__(self, other: Vec3) -> Vec3:
        return Vec3(self.x - other.x, self.y - other.y, self.z - other.z)

    def scale(self, k: float) -> Vec3:
        return Vec3(k * self.x, k * self.y, k * self.z)

    def norm(self) -> float:
        # Fixed evaluation order; the vectorized paths mirror it exactly.
        return math.sqrt(self.x * self.x + self.y * self.y + self.z * self.z)

    def as_list(self) -> list[float]:
        return [self.x, self.y, self.z]

    @staticmethod
    def from_seq(seq: Iterable[float]) -> Vec3:
        vals = list(seq)
        if len(vals) != 3:
            raise ValueError(f"expected 3 components, got {len(vals)}")
        return Vec3(float(vals[0]), float(vals[1]), float(vals[2]))


def distance(a: Vec3, b: Vec3) -> float:
    """Euclidean distance between two points."""
    dx = a.x - b.x
    dy = a.y - b.y
    dz = a.z - b.z
    return math.sqrt(dx * dx + dy * dy + dz * dz)


def unit_away(from_p: Vec3, at_p: Vec3, fallback: Vec3) -> Vec3:
    """Unit vector pointing from `from_p` toward `at_p`.

    Coincident inputs (distance < 1e-9) have no defined direction; the caller
    supplies a deterministic unit fallback for that case.
    """
    d = distance(from_p, at_p)
    if d < 1e-9:
        return fallback
    return Vec3((at_p.x - from_p.x) / d, (at_p.y - from_p.y) / d, (at_p.z - from_p.z) / d)


def pair_fallback(i: int, j: int) -> Vec3:
    """Deterministic horizontal unit vector for a coincident ordered pair.

    Hashes (i, j) into an azimuth so the two agents of a coincident pair are
    pushed apart along reproducible, generally opposite-ish directions.
    Stable across runs and platforms (pure integer mixing, no PYTHONHASHSEED).
    """
    h = (i * 0x9E3779B1 + j * 0x85EBCA77) & 0xFFFFFFFF
    h ^= h >> 16
    h = (h * 0x045D9F3B) & 0xFFFFFFFF
    h ^= h >> 16
    az = 2.0 * math.pi * (h / 2.0**32)
    return Vec3(math.cos(az), math.sin(az), 0.0)


# ---- Agents and snapshots ----


@dataclass(frozen=True)
class AgentState:
    """One agent at one instant. velocity is the last commanded velocity."""

    id: int
    position: Vec3
    velocity: Vec3

    def __post_init__(self) -> None:
        if self.id < 0:
            raise ValueError(f"agent id must be >= 0, got {self.id}")


@dataclass(frozen=True)
class SwarmSnapshot:
    """Immutable view of the whole swarm at one tick.

    Agents are ordered by id 0..N-1 with no gaps; sim_time == tick * dt for
    the timestep the snapshot was produced under.
    """

    tick: int
    sim_time: float
    agents: tuple[AgentState, ...]

    def __post_init__(self) -> None:
        if len(self.agents) < 1:
            raise ValueError("snapshot needs at least one agent")
        for idx, a in enumerate(self.agents):
            if a.id != idx:
                raise ValueError(f"agent ids must be 0..N-1 in order; slot {idx} holds id {a.id}")
        if self.tick < 0:
            raise ValueError(f"tick must be >= 0, got {self.tick}")

    @property
    def n(self) -> int:
        return len(self.agents)

    def positions(self) -> np.ndarray:
        """(N, 3) float64 array of positions, row i = agent i."""
        out = np.empty((len(self.agents), 3), dtype=np.float64)
        for i, a in enumerate(self.agents):
            out[i, 0] = a.position.x
            out[i, 1] = a.position.y
            out[i, 2] = a.position.z
        return out

    def velocities(self) -> np.ndarray:
        """(N, 3) float64 array of last commanded velocities."""
        out = np.empty((len(self.agents), 3), dtype=np.float64)
        for i, a in enumerate(self.agents):
            out[i, 0] = a.velocity.x
            out[i, 1] = a.velocity.y
            out[i, 2] = a.velocity.z
        return out

    @staticmethod
    def from_arrays(tick: int, sim_time: float, positions: np.ndarray, velocities: np.ndarray) -> SwarmSnapshot:
        agents = tuple(
            AgentState(
                id=i,
                position=Vec3(float(positions[i, 0]), float(positions[i, 1]), float(positions[i, 2])),
                velocity=Vec3(float(velocities[i, 0]), float(velocities[i, 1]), float(velocities[i, 2])),
            )
            for i in range(positions.shape[0])
        )
        return SwarmSnapshot(tick=tick, sim_time=sim_time, agents=agents)


# ---- Tunables ----


@dataclass(frozen=True)
class ControllerParams:
    """Controller gains, radii, and the escape extension's knobs.

    Defaults are the validated operating point; constructor rejects values
    that would break the safety reasoning (non-positive gains or radii,
    collision distance not strictly below the repulsion radius).
    """

    k_p: float = 1.0              # attraction gain, 1/s
    k_rep: float = 2.0            # repulsion gain, 1/s
    r_min: float = 0.8            # repulsion activation radius, m
    v_max: float = 0.5            # speed cap, m/s
    dt: float = 0.05              # timestep, s (20 Hz)
    r_drone: float = 0.055        # physical rotor radius, m
    collision_dist: float = 0.11  # 2 * r_drone: below this is a collision
    escape_enabled: bool = True
    escape_speed: float = 1e-3    # magnitude of the perpendicular nudge, m/s
    escape_stall_ticks: int = 20  # consecutive stalled ticks before nudging

    def __post_init__(self) -> None:
        for name in ("k_p", "k_rep", "r_min", "v_max", "dt", "r_drone", "collision_dist", "escape_speed"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
                raise ValueError(f"ControllerParams.{name} must be a positive finite number, got {v!r}")
        if self.collision_dist >= self.r_min:
            raise ValueError(
                f"collision_dist ({self.collision_dist}) must be strictly below r_min ({self.r_min})"
            )
        if self.escape_stall_ticks < 1:
            raise ValueError("escape_stall_ticks must be >= 1")

    def to_dict(self) -> dict[str, Any]:
        return {
            "k_p": self.k_p,
            "k_rep": self.k_rep,
            "r_min": self.r_min,
            "v_max": self.v_max,
            "dt": self.dt,
            "r_drone": self.r_drone,
            "collision_dist": self.collision_dist,
            "escape_enabled": self.escape_enabled,
            "escape_speed": self.escape_speed,
            "escape_stall_ticks": self.escape_stall_ticks,
        }

    @staticmethod
    def from_dict(d: dict[str, Any]) -> ControllerParams:
        return ControllerParams(**d)


@dataclass(frozen=True)
class GeoFence:
    """Axis-aligned flight volume; bounds are inclusive.

    z_min stays above ground (hard floor); prompt_z_floor is the softer floor
    stated to the goal planner in prompts and is kept separate on purpose:
    tightening the prompt must never loosen validation, and vice versa.
    """

    x_min: float = -10.0
    x_max: float = 10.0
    y_min: float = -10.0
    y_max: float = 10.0
    z_min: float = 0.2
    z_max: float = 5.0
    prompt_z_floor: float = 0.5

    def __post_init__(self) -> None:
        if not (self.x_min < self.x_max and self.y_min < self.y_max and self.z_min < self.z_max):
            raise ValueError("fence min bound must be strictly below max on every axis")
        if not (0 < self.z_min <= self.prompt_z_floor):
            raise ValueError("need 0 < z_min <= prompt_z_floor")

    def contains(self, p: Vec3) -> bool:
        return (
            self.x_min <= p.x <= self.x_max
            and self.y_min <= p.y <= self.y_max
            and self.z_min <= p.z <= self.z_max
        )

    def violation(self, p: Vec3) -> str | None:
        """Human-readable description of the first violated bound, or None."""
        checks = (
            ("x", p.x, self.x_min, self.x_max),
            ("y", p.y, self.y_min, self.y_max),
            ("z", p.z, self.z_min, self.z_max),
        )
        for axis, v, lo, hi in checks:
            if v < lo:
                return f"{axis}={v!r} below {axis}_min={lo!r}"
            if v > hi:
                return f"{axis}={v!r} above {axis}_max={hi!r}"
        return None

    def to_dict(self) -> dict[str, Any]:
        return {
            "x_min": self.x_min,
            "x_max": self.x_max,
            "y_min": self.y_min,
            "y_max": self.y_max,
            "z_min": self.z_min,
            "z_max": self.z_max,
            "prompt_z_floor": self.prompt_z_floor,
        }

    @staticmethod
    def from_dict(d: dict[str, Any]) -> GeoFence:
        return GeoFence(**d)


# ---- Plans ----

PLAN_SOURCES = ("oracle", "llm", "hold")


@dataclass(frozen=True)
class WaypointPlan:
    """One goal per agent plus provenance.

    `accepted` marks a plan the controller may execute. Accepted oracle/llm
    plans only ever carry in-fence goals (the validators enforce it). Hold
    plans mirror current positions verbatim and are always executable, even
    when they record a refused command in rejection_reason; holding must not
    move an agent, so those goals are exempt from fence checks.
    """

    goals: tuple[Vec3, ...]
    source: str
    command_text: str | None
    accepted: bool
    rejection_reason: str | None = None

    def __post_init__(self) -> None:
        if len(self.goals) < 1:
            raise ValueError("plan needs at least one goal")
        if self.source not in PLAN_SOURCES:
            raise ValueError(f"plan source must be one of {PLAN_SOURCES}, got {self.source!r}")
        if self.rejection_reason is not None and self.source != "hold":
            raise ValueError("only hold plans carry a rejection_reason")

    @property
    def n(self) -> int:
        return len(self.goals)

    def goals_array(self) -> np.ndarray:
        out = np.empty((len(self.goals), 3), dtype=np.float64)
        for i, g in enumerate(self.goals):
            out[i, 0] = g.x
            out[i, 1] = g.y
            out[i, 2] = g.z
        return out


def hold_plan(
    snapshot: SwarmSnapshot,
    command_text: str | None = None,
    rejection_reason: str | None = None,
) -> WaypointPlan:
    """Position-hold fallback: every agent's goal is its current position.

    With a rejection_reason, the hold records a refused request; without one
    it is an ordinary hover. Either way the hold itself is executable, so
    accepted is always true: the swarm must keep station after a refusal.
    """
    return WaypointPlan(
        goals=tuple(a.position for a in snapshot.agents),
        source="hold",
        command_text=command_text,
        accepted=True,
        rejection_reason=rejection_reason,
    )


PLAN_OUTCOMES = ("ok", "timeout", "malformed", "fence_rejected")


@dataclass(frozen=True)
class PlanEvent:
    """One plan adoption: which plan became active at which tick, and how
    the planning attempt went.

    Failed attempts still adopt a plan (the hold fallback), so every event
    carries goals. latency is wall seconds for llm plans and 0.0 for oracle
    and hold plans (deterministic inputs log deterministically).
    """

    tick: int
    source: str
    command_text: str | None
    outcome: str
    latency: float
    accepted: bool
    rejection_reason: str | None
    goals: tuple[Vec3, ...]

    def __post_init__(self) -> None:
        if self.outcome not in PLAN_OUTCOMES:
            raise ValueError(f"outcome must be one of {PLAN_OUTCOMES}, got {self.outcome!r}")
        if self.source not in PLAN_SOURCES:
            raise ValueError(f"source must be one of {PLAN_SOURCES}, got {self.source!r}")

    def to_json_obj(self) -> dict[str, Any]:
        return {
            "tick": self.tick,
            "source": self.source,
            "command_text": self.command_text,
            "outcome": self.outcome,
            "latency": self.latency,
            "accepted": self.accepted,
            "rejection_reason": self.rejection_reason,
            "goals": [g.as_list() for g in self.goals],
        }

    @staticmethod
    def from_json_obj(obj: dict[str, Any]) -> PlanEvent:
        return PlanEvent(
            tick=int(obj["tick"]),
            source=str(obj["source"]),
            command_text=None if obj["command_text"] is None else str(obj["command_text"]),
            outcome=str(obj["outcome"]),
            latency=float(obj["latency"]),
            accepted=bool(obj["accepted"]),
            rejection_reason=None if obj["rejection_reason"] is None else str(obj["rejection_reason"]),
            goals=tuple(Vec3.from_seq(g) for g in obj["goals"]),
        )


# ---- Tick records ----


@dataclass(frozen=True)
class TickRecord:
    """Everything recorded about one control tick.

    d_min is None for single-agent swarms (no pair exists). positions and
    commanded_velocities are ordered by agent id.
    """

    tick: int
    sim_time: float
    positions: tuple[Vec3, ...]
    commanded_velocities: tuple[Vec3, ...]
    d_min: float | None
    potential: float
    active_plan_source: str
    escape_active: bool

    def to_json_obj(self) -> dict[str, Any]:
        return {
            "tick": self.tick,
            "sim_time": self.sim_time,
            "positions": [p.as_list() for p in self.positions],
            "commanded_velocities": [v.as_list() for v in self.commanded_velocities],
            "d_min": self.d_min,
            "potential": self.potential,
            "active_plan_source": self.active_plan_source,
            "escape_active": self.escape_active,
        }

    @staticmethod
    def from_json_obj(obj: dict[str, Any]) -> TickRecord:
        return TickRecord(
            tick=int(obj["tick"]),
            sim_time=float(obj["sim_time"]),
            positions=tuple(Vec3.from_seq(p) for p in obj["positions"]),
            commanded_velocities=tuple(Vec3.from_seq(v) for v in obj["commanded_velocities"]),
            d_min=None if obj["d_min"] is None else float(obj["d_min"]),
            potential=float(obj["potential"]),
            active_plan_source=str(obj["active_plan_source"]),
            escape_active=bool(obj["escape_active"]),
        )


__all__ = [
    "SwarmfieldError",
    "Vec3",
    "distance",
    "unit_away",
    "pair_fallback",
    "AgentState",
    "SwarmSnapshot",
    "ControllerParams",
    "GeoFence",
    "PLAN_SOURCES",
    "PLAN_OUTCOMES",
    "WaypointPlan",
    "hold_plan",
    "PlanEvent",
    "TickRecord",
]
