"""Per-tick telemetry, run aggregation, and the run report.

The recorder computes each tick's derived quantities (d_min, potential) at
record time; `summarize_run` then derives every report field purely from the
recorded series, so a report recomputed from a written log is byte-identical
to the one produced live.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Any, Sequence

import numpy as np

from .controller import STALL_SPEED, VelocityCommandSet, composite_potential
from .core import (
    ControllerParams,
    PlanEvent,
    SwarmfieldError,
    SwarmSnapshot,
    TickRecord,
    Vec3,
    WaypointPlan,
    distance,
)

# A run converges (or stalls) only after the condition holds this long.
HOLD_SECONDS = 2.0


class OutOfOrderTick(SwarmfieldError):
    """Tick records must arrive with strictly increasing tick numbers."""


class EmptyRun(SwarmfieldError):
    """No tick records to summarize."""


def min_pairwise_distance(snapshot: SwarmSnapshot) -> float | None:
    """Smallest inter-agent distance, None for a single agent.

    Vectorized; per-pair arithmetic matches the scalar `distance` op exactly,
    and a minimum is order-independent, so this equals the brute-force
    double loop bit for bit.
    """
    if snapshot.n < 2:
        return None
    pos = snapshot.positions()
    return _min_pairwise_from_array(pos)


def _min_pairwise_from_array(pos: np.ndarray) -> float:
    dx = pos[:, 0][:, None] - pos[:, 0][None, :]
    dy = pos[:, 1][:, None] - pos[:, 1][None, :]
    dz = pos[:, 2][:, None] - pos[:, 2][None, :]
    d = np.sqrt(dx * dx + dy * dy + dz * dz)
    iu = np.triu_indices(pos.shape[0], k=1)
    return float(np.min(d[iu]))


class MetricsRecorder:
    """Accumulates tick records and plan events for one run."""

    def __init__(self) -> None:
        self.records: list[TickRecord] = []
        self.plans: list[PlanEvent] = []
        self._last_tick: int | None = None

    def record_plan(self, event: PlanEvent) -> None:
        self.plans.append(event)

    def record_tick(
        self,
        snapshot: SwarmSnapshot,
        commands: VelocityCommandSet,
        plan: WaypointPlan,
        params: ControllerParams,
    ) -> TickRecord:
        """Derive and store one tick's record.

        Raises:
            OutOfOrderTick: tick did not increase.
            ValueError: commands were computed for a different tick.
        """
        if commands.tick != snapshot.tick:
            raise ValueError(f"commands for tick {commands.tick} recorded against snapshot tick {snapshot.tick}")
        if self._last_tick is not None and snapshot.tick <= self._last_tick:
            raise OutOfOrderTick(f"tick {snapshot.tick} after tick {self._last_tick}")
        rec = TickRecord(
            tick=snapshot.tick,
            sim_time=snapshot.sim_time,
            positions=tuple(a.position for a in snapshot.agents),
            commanded_velocities=commands.velocities,
            d_min=min_pairwise_distance(snapshot),
            potential=composite_potential(snapshot, plan, params),
            active_plan_source=plan.source,
            escape_active=bool(commands.escape_applied),
        )
        self.records.append(rec)
        self._last_tick = snapshot.tick
        return rec


# ---- Run summary ----


@dataclass(frozen=True)
class RunReport:
    """Aggregates for one run; every field derives from the tick/plan series."""

    scenario: str
    n_agents: int
    ticks: int
    converged: bool
    convergence_time: float | None
    stalled: bool
    stall_time: float | None
    d_min_global: float | None
    speed_max_global: float
    collisions: int
    apf_activations: int
    escape_events: int
    planner_latencies: list[dict[str, Any]]
    d_min_series: list[float | None]
    speed_series: list[list[float]]

    def to_json_obj(self) -> dict[str, Any]:
        return {
            "scenario": self.scenario,
            "n_agents": self.n_agents,
            "ticks": self.ticks,
            "converged": self.converged,
            "convergence_time": self.convergence_time,
            "stalled": self.stalled,
            "stall_time": self.stall_time,
            "d_min_global": self.d_min_global,
            "speed_max_global": self.speed_max_global,
            "collisions": self.collisions,
            "apf_activations": self.apf_activations,
            "escape_events": self.escape_events,
            "planner_latencies": self.planner_latencies,
            "d_min_series": self.d_min_series,
            "speed_series": self.speed_series,
        }

    def to_json(self) -> str:
        """Canonical serialization; fixed options so equal reports are equal bytes."""
        return json.dumps(self.to_json_obj(), indent=2) + "\n"


def _speeds(rec: TickRecord) -> list[float]:
    return [v.norm() for v in rec.commanded_velocities]


def tick_flags(
    rec: TickRecord,
    goals: tuple[Vec3, ...] | None,
    goal_source: str,
    tolerance: float,
) -> tuple[bool, bool]:
    """(converged-this-tick, stalled-this-tick) against the active goals.

    Hold plans never count: their goals equal current positions by
    construction, which would mark any fence-rejected run converged.
    """
    if goals is None or goal_source == "hold":
        return False, False
    dists = [distance(p, g) for p, g in zip(rec.positions, goals)]
    conv = all(d <= tolerance for d in dists)
    if conv:
        return True, False
    speeds = _speeds(rec)
    stall = all(s < STALL_SPEED for s in speeds) and any(d > tolerance for d in dists)
    return False, stall


def summarize_run(
    records: Sequence[TickRecord],
    plans: Sequence[PlanEvent],
    *,
    scenario: str,
    params: ControllerParams,
    convergence_tolerance: float,
) -> RunReport:
    """Reduce a recorded run to its report.

    Convergence: first streak of hold_ticks consecutive ticks with every
    agent within tolerance of a non-hold goal. Stall: the run ends in a
    streak (>= hold_ticks) of ticks where all commanded speeds are below
    0.01 m/s while some agent is still out of tolerance. Streak counters
    reset at every plan adoption.

    Raises:
        EmptyRun: records is empty.
    """
    if not records:
        raise EmptyRun("no tick records")
    hold_ticks = int(round(HOLD_SECONDS / params.dt))
    plan_queue = sorted(plans, key=lambda e: e.tick)
    qi = 0
    goals: tuple[Vec3, ...] | None = records[0].positions  # implicit spawn hold
    goal_source = "hold"

    converged = False
    convergence_time: float | None = None
    conv_streak = 0
    stall_flags: list[bool] = []
    adoption_ticks: set[int] = {e.tick for e in plan_queue}

    d_min_global: float | None = None
    speed_max_global = 0.0
    collisions = 0
    apf_activations = 0
    escape_events = 0
    d_min_series: list[float | None] = []
    speed_series: list[list[float]] = []

    for idx, rec in enumerate(records):
        while qi < len(plan_queue) and plan_queue[qi].tick <= rec.tick:
            goals = plan_queue[qi].goals
            goal_source = plan_queue[qi].source
            conv_streak = 0
            qi += 1
        conv, stall = tick_flags(rec, goals, goal_source, convergence_tolerance)
        stall_flags.append(stall)
        if conv:
            conv_streak += 1
            if conv_streak >= hold_ticks and not converged:
                converged = True
                convergence_time = records[idx - hold_ticks + 1].sim_time
        else:
            conv_streak = 0

        speeds = _speeds(rec)
        speed_series.append(speeds)
        d_min_series.append(rec.d_min)
        if rec.d_min is not None:
            if d_min_global is None or rec.d_min < d_min_global:
                d_min_global = rec.d_min
            if rec.d_min < params.collision_dist:
                collisions += 1
            if rec.d_min < params.r_min:
                apf_activations += 1
        tick_max = max(speeds)
        if tick_max > speed_max_global:
            speed_max_global = tick_max
        if rec.escape_active:
            escape_events += 1

    # Terminal stall streak: walk back while ticks are stall-flagged and no
    # plan adoption interrupts the streak.
    stalled = False
    stall_time: float | None = None
    streak = 0
    for idx in range(len(records) - 1, -1, -1):
        if not stall_flags[idx]:
            break
        streak += 1
        if records[idx].tick in adoption_ticks:
            break
    if streak >= hold_ticks:
        stalled = True
        stall_time = records[len(records) - streak].sim_time

    return RunReport(
        scenario=scenario,
        n_agents=len(records[0].positions),
        ticks=len(records),
        converged=converged,
        convergence_time=convergence_time,
        stalled=stalled,
        stall_time=stall_time,
        d_min_global=d_min_global,
        speed_max_global=speed_max_global,
        collisions=collisions,
        apf_activations=apf_activations,
        escape_events=escape_events,
        planner_latencies=[
            {
                "source": e.source,
                "outcome": e.outcome,
                "latency": e.latency,
                "command_text": e.command_text,
            }
            for e in plan_queue
        ],
        d_min_series=d_min_series,
        speed_series=speed_series,
    )


# ---- CSV export ----


def _csv_cell(v: float | None) -> str:
    return "" if v is None else repr(v)


def metrics_csv(records: Sequence[TickRecord]) -> str:
    """One row per tick: tick, sim_time, d_min, then per-agent speeds.

    Floats use shortest round-trip notation so an exported file re-parses to
    the same values.
    """
    if not records:
        raise EmptyRun("no tick records")
    n = len(records[0].positions)
    header = ["tick", "sim_time", "d_min"] + [f"speed_{i}" for i in range(n)]
    lines = [",".join(header)]
    for rec in records:
        row = [str(rec.tick), repr(rec.sim_time), _csv_cell(rec.d_min)]
        row.extend(repr(s) for s in _speeds(rec))
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


__all__ = [
    "HOLD_SECONDS",
    "OutOfOrderTick",
    "EmptyRun",
    "min_pairwise_distance",
    "MetricsRecorder",
    "RunReport",
    "tick_flags",
    "summarize_run",
    "metrics_csv",
]
