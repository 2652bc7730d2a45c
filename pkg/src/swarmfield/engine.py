"""Fixed-timestep simulation engine.

Single-integrator kinematics stepped by explicit Euler at dt (default 20 Hz):
each tick the controller's commanded velocity is held for dt and positions
advance by v * dt. The loop is: adopt any due plan, compute commands, record
the tick, integrate. Determinism: identical config and seed give identical
trajectories, records, and logs, byte for byte.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Any, Protocol

import numpy as np

from .controller import StallTracker, control_step
from .core import (
    AgentState,
    ControllerParams,
    GeoFence,
    PlanEvent,
    SwarmfieldError,
    SwarmSnapshot,
    Vec3,
    WaypointPlan,
    distance,
    hold_plan,
)
from .formations import ring_points
from .logio import LogWriter, ParsedLog
from .metrics import HOLD_SECONDS, MetricsRecorder, RunReport, summarize_run, tick_flags

DEFAULT_TOLERANCE = 0.05  # convergence distance, m

# Sphere-packing density; no arrangement packs equal balls tighter.
_PACKING_DENSITY = 0.7405


class InfeasibleSpawn(SwarmfieldError):
    """The requested spawn cannot satisfy spacing and fence constraints."""


# ---- Configuration ----


@dataclass(frozen=True)
class SpawnSpec:
    """Initial layout. kinds: grid, circle, random, explicit.

    altitude defaults per kind (grid 1.0 m, circle 2.0 m). circle radius
    auto-sizes to keep neighbors comfortably beyond r_min when omitted.
    """

    kind: str = "grid"
    spacing: float = 1.5
    radius: float | None = None
    altitude: float | None = None
    positions: tuple[Vec3, ...] | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("grid", "circle", "random", "explicit"):
            raise ValueError(f"unknown spawn kind {self.kind!r}")
        if self.kind == "explicit" and not self.positions:
            raise ValueError("explicit spawn needs positions")

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": self.kind,
            "spacing": self.spacing,
            "radius": self.radius,
            "altitude": self.altitude,
            "positions": None if self.positions is None else [p.as_list() for p in self.positions],
        }

    @staticmethod
    def from_dict(d: dict[str, Any]) -> SpawnSpec:
        kwargs = dict(d)
        if kwargs.get("positions") is not None:
            kwargs["positions"] = tuple(Vec3.from_seq(p) for p in kwargs["positions"])
        return SpawnSpec(**kwargs)


@dataclass(frozen=True)
class SimConfig:
    """Everything a run needs; serialized whole into the log header."""

    n_agents: int
    seed: int = 0
    spawn: SpawnSpec = SpawnSpec()
    duration: float = 60.0
    realtime: bool = False
    params: ControllerParams = ControllerParams()
    fence: GeoFence = GeoFence()
    convergence_tolerance: float = DEFAULT_TOLERANCE

    def __post_init__(self) -> None:
        if self.n_agents < 1:
            raise ValueError("need at least one agent")
        if not (math.isfinite(self.duration) and self.duration > 0):
            raise ValueError(f"duration must be positive, got {self.duration!r}")
        if not (0 < self.convergence_tolerance < self.params.r_min):
            raise ValueError("convergence tolerance must sit between 0 and r_min")

    def to_dict(self) -> dict[str, Any]:
        return {
            "n_agents": self.n_agents,
            "seed": self.seed,
            "spawn": self.spawn.to_dict(),
            "duration": self.duration,
            "realtime": self.realtime,
            "params": self.params.to_dict(),
            "fence": self.fence.to_dict(),
            "convergence_tolerance": self.convergence_tolerance,
        }

    @staticmethod
    def from_dict(d: dict[str, Any]) -> SimConfig:
        kwargs = dict(d)
        kwargs["spawn"] = SpawnSpec.from_dict(kwargs["spawn"])
        kwargs["params"] = ControllerParams.from_dict(kwargs["params"])
        kwargs["fence"] = GeoFence.from_dict(kwargs["fence"])
        return SimConfig(**kwargs)


# ---- Spawn layouts ----


def _grid_spawn(n: int, spacing: float, altitude: float) -> list[Vec3]:
    cols = math.ceil(math.sqrt(n))
    rows = math.ceil(n / cols)
    pts = []
    for idx in range(n):
        r, c = divmod(idx, cols)
        x = (c - (cols - 1) / 2.0) * spacing
        y = ((rows - 1) / 2.0 - r) * spacing
        pts.append(Vec3(x, y, altitude))
    return pts


def _auto_circle_radius(n: int, r_min: float) -> float:
    if n < 2:
        return 0.0
    needed = r_min / (2.0 * math.sin(math.pi / n))
    return max(3.0, 1.25 * needed)


def _random_spawn(n: int, config: SimConfig) -> list[Vec3]:
    fence = config.fence
    r_min = config.params.r_min
    margin = r_min / 2.0
    lo = np.array([fence.x_min + margin, fence.y_min + margin, fence.z_min + margin])
    hi = np.array([fence.x_max - margin, fence.y_max - margin, fence.z_max - margin])
    if np.any(lo >= hi):
        raise InfeasibleSpawn("fence too small for the spawn margin")
    # Upper bound from sphere packing: centers r_min apart are disjoint balls
    # of radius r_min/2 inside the fence inflated by r_min/2 per wall.
    vol = float(np.prod((hi - lo) + r_min))
    ball = (4.0 / 3.0) * math.pi * (r_min / 2.0) ** 3
    bound = _PACKING_DENSITY * vol / ball
    if n > bound:
        raise InfeasibleSpawn(
            f"cannot place {n} agents {r_min} m apart in this fence: packing bound is ~{int(bound)}"
        )
    rng = np.random.default_rng(config.seed)
    placed: list[Vec3] = []
    attempts = 0
    max_attempts = 1000 * n
    while len(placed) < n:
        if attempts >= max_attempts:
            raise InfeasibleSpawn(
                f"placed only {len(placed)}/{n} agents after {max_attempts} draws; fence too crowded"
            )
        attempts += 1
        p = rng.uniform(lo, hi)
        cand = Vec3(float(p[0]), float(p[1]), float(p[2]))
        if all(distance(cand, q) >= r_min for q in placed):
            placed.append(cand)
    return placed


def spawn_layout(config: SimConfig) -> SwarmSnapshot:
    """Tick-0 snapshot for the configured layout.

    Whatever the kind, the result is checked: all agents inside the fence
    and pairwise at least r_min apart.

    Raises:
        InfeasibleSpawn: layout cannot meet those constraints (the random
            kind also pre-checks the sphere-packing bound).
    """
    n = config.n_agents
    spawn = config.spawn
    if spawn.kind == "grid":
        alt = spawn.altitude if spawn.altitude is not None else 1.0
        pts = _grid_spawn(n, spawn.spacing, alt)
    elif spawn.kind == "circle":
        alt = spawn.altitude if spawn.altitude is not None else 2.0
        radius = spawn.radius if spawn.radius is not None else _auto_circle_radius(n, config.params.r_min)
        pts = ring_points(n, Vec3(0.0, 0.0, alt), radius) if n > 1 else [Vec3(0.0, 0.0, alt)]
    elif spawn.kind == "random":
        pts = _random_spawn(n, config)
    else:  # explicit
        assert spawn.positions is not None
        if len(spawn.positions) != n:
            raise InfeasibleSpawn(f"explicit spawn lists {len(spawn.positions)} positions for {n} agents")
        pts = list(spawn.positions)

    for i, p in enumerate(pts):
        why = config.fence.violation(p)
        if why is not None:
            raise InfeasibleSpawn(f"spawn point {i} leaves the fence: {why}")
    for i in range(n):
        for j in range(i + 1, n):
            d = distance(pts[i], pts[j])
            if d < config.params.r_min:
                raise InfeasibleSpawn(
                    f"spawn points {i} and {j} are {d:.3f} m apart, below the {config.params.r_min} m floor"
                )
    zero = Vec3(0.0, 0.0, 0.0)
    agents = tuple(AgentState(id=i, position=p, velocity=zero) for i, p in enumerate(pts))
    return SwarmSnapshot(tick=0, sim_time=0.0, agents=agents)


# ---- Stepping ----


def integrate_tick(snapshot: SwarmSnapshot, commands, dt: float) -> SwarmSnapshot:
    """Advance one Euler step: p += v*dt, velocity := command, tick += 1.

    sim_time is recomputed as tick*dt (not accumulated) so it cannot drift.

    Raises:
        ValueError: commands were computed for a different tick.
    """
    if commands.tick != snapshot.tick:
        raise ValueError(f"commands for tick {commands.tick} applied to snapshot tick {snapshot.tick}")
    new_tick = snapshot.tick + 1
    agents = tuple(
        AgentState(
            id=a.id,
            position=Vec3(
                a.position.x + v.x * dt,
                a.position.y + v.y * dt,
                a.position.z + v.z * dt,
            ),
            velocity=v,
        )
        for a, v in zip(snapshot.agents, commands.velocities)
    )
    return SwarmSnapshot(tick=new_tick, sim_time=new_tick * dt, agents=agents)


def convergence_check(snapshot: SwarmSnapshot, plan: WaypointPlan, tolerance: float = DEFAULT_TOLERANCE) -> bool:
    """True when every agent sits within tolerance of its goal."""
    if plan.n != snapshot.n:
        raise ValueError(f"plan has {plan.n} goals for {snapshot.n} agents")
    return all(distance(a.position, g) <= tolerance for a, g in zip(snapshot.agents, plan.goals))


# ---- Scenarios and the run loop ----


@dataclass(frozen=True)
class ScriptCommand:
    """One scripted operator command, dispatched when sim_time reaches at_time."""

    at_time: float
    command: dict[str, Any]

    def __post_init__(self) -> None:
        if not (math.isfinite(self.at_time) and self.at_time >= 0):
            raise ValueError(f"at_time must be >= 0, got {self.at_time!r}")


@dataclass(frozen=True)
class Scenario:
    """A named run: configuration plus a timed command script."""

    name: str
    config: SimConfig
    script: tuple[ScriptCommand, ...] = ()


class PlanSource(Protocol):
    """Anything that turns an operator command into a plan adoption."""

    def plan(self, snapshot: SwarmSnapshot, command: dict[str, Any]) -> "PlanOutcome": ...


@dataclass(frozen=True)
class PlanOutcome:
    """A planner's answer: the plan to adopt plus attempt bookkeeping."""

    plan: WaypointPlan
    outcome: str
    latency: float
    raw_response: str | None = None


@dataclass(frozen=True)
class TimingStats:
    """Wall-clock pacing quality of a realtime run (not derivable from logs)."""

    ticks: int
    on_time: int
    max_lateness_s: float

    @property
    def on_time_fraction(self) -> float:
        return self.on_time / self.ticks if self.ticks else 1.0


@dataclass(frozen=True)
class RunOutcome:
    report: RunReport
    recorder: MetricsRecorder
    timing: TimingStats | None
    final_snapshot: SwarmSnapshot


def run_scenario(
    scenario: Scenario,
    planner: PlanSource,
    *,
    recorder: MetricsRecorder | None = None,
    log_writer: LogWriter | None = None,
    stop_early: bool = True,
    realtime: bool | None = None,
) -> RunOutcome:
    """Run one scenario to completion.

    Ticks run for config.duration unless the run converges (all agents
    within tolerance of a non-hold plan for 2 s) or, with escape disabled,
    provably stalls for 2 s, in which case the loop ends early. Planner
    failures on the llm path surface as adopted hold plans, never as loop
    termination; structurally invalid oracle commands raise.

    Args:
        scenario: configuration plus command script.
        planner: plan source consulted once per scripted command.
        recorder: metrics sink; created fresh when omitted.
        log_writer: optional streaming JSONL sink.
        stop_early: disable to always run the full duration.
        realtime: pace ticks to wall clock; defaults to config.realtime.

    Returns:
        RunOutcome with the report, the recorder, timing stats (realtime
        runs only), and the final state.
    """
    config = scenario.config
    params = config.params
    dt = params.dt
    pace = config.realtime if realtime is None else realtime
    recorder = recorder if recorder is not None else MetricsRecorder()
    if log_writer is not None:
        log_writer.write_header(scenario.name, config.to_dict())

    snap = spawn_layout(config)
    active = hold_plan(snap)
    tracker = StallTracker(config.n_agents)
    queue = [cmd for _, cmd in sorted(enumerate(scenario.script), key=lambda t: (t[1].at_time, t[0]))]
    qi = 0

    max_ticks = int(round(config.duration / dt))
    hold_ticks = int(round(HOLD_SECONDS / dt))
    conv_streak = 0
    stall_streak = 0

    t0 = time.perf_counter()
    ticks_run = 0
    on_time = 0
    max_late = 0.0

    for k in range(max_ticks):
        if pace:
            target = t0 + k * dt
            now = time.perf_counter()
            if now < target:
                time.sleep(target - now)
                now = time.perf_counter()
            late = now - target
            if late > max_late:
                max_late = late
            if late < dt:
                on_time += 1

        while qi < len(queue) and queue[qi].at_time <= snap.sim_time + 1e-9:
            result = planner.plan(snap, queue[qi].command)
            qi += 1
            active = result.plan
            tracker.reset()
            conv_streak = 0
            stall_streak = 0
            event = PlanEvent(
                tick=snap.tick,
                source=active.source,
                command_text=active.command_text,
                outcome=result.outcome,
                latency=result.latency,
                accepted=active.accepted,
                rejection_reason=active.rejection_reason,
                goals=active.goals,
            )
            recorder.record_plan(event)
            if log_writer is not None:
                log_writer.write_plan(event)

        commands = control_step(snap, active, params, tracker)
        rec = recorder.record_tick(snap, commands, active, params)
        ticks_run += 1
        if log_writer is not None:
            log_writer.write_tick(rec)

        conv, stall = tick_flags(rec, active.goals, active.source, config.convergence_tolerance)
        conv_streak = conv_streak + 1 if conv else 0
        stall_streak = stall_streak + 1 if stall else 0

        snap = integrate_tick(snap, commands, dt)

        if stop_early and conv_streak >= hold_ticks:
            break
        if stop_early and stall_streak >= hold_ticks and not params.escape_enabled:
            break

    report = summarize_run(
        recorder.records,
        recorder.plans,
        scenario=scenario.name,
        params=params,
        convergence_tolerance=config.convergence_tolerance,
    )
    timing = TimingStats(ticks=ticks_run, on_time=on_time, max_lateness_s=max_late) if pace else None
    return RunOutcome(report=report, recorder=recorder, timing=timing, final_snapshot=snap)


def replay_report(parsed: ParsedLog) -> RunReport:
    """Recompute a run's report purely from its log.

    Produces byte-identical JSON to the live report for the same run: all
    aggregates derive from the recorded tick and plan series.
    """
    config = SimConfig.from_dict(parsed.config)
    return summarize_run(
        parsed.records,
        parsed.plans,
        scenario=parsed.scenario,
        params=config.params,
        convergence_tolerance=config.convergence_tolerance,
    )


__all__ = [
    "DEFAULT_TOLERANCE",
    "InfeasibleSpawn",
    "SpawnSpec",
    "SimConfig",
    "spawn_layout",
    "integrate_tick",
    "convergence_check",
    "ScriptCommand",
    "Scenario",
    "PlanSource",
    "PlanOutcome",
    "TimingStats",
    "RunOutcome",
    "run_scenario",
    "replay_report",
]
