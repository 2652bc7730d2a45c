"""Shared builders for snapshots and plans."""
from __future__ import annotations

from swarmfield.core import AgentState, SwarmSnapshot, Vec3, WaypointPlan


def snap(positions, tick: int = 0, dt: float = 0.05) -> SwarmSnapshot:
    agents = tuple(
        AgentState(id=i, position=Vec3(*map(float, p)), velocity=Vec3(0.0, 0.0, 0.0))
        for i, p in enumerate(positions)
    )
    return SwarmSnapshot(tick=tick, sim_time=tick * dt, agents=agents)


def plan_for(goals, source: str = "oracle") -> WaypointPlan:
    return WaypointPlan(
        goals=tuple(Vec3(*map(float, g)) for g in goals),
        source=source,
        command_text=None,
        accepted=True,
    )


def own_goal_plan(snapshot: SwarmSnapshot) -> WaypointPlan:
    return plan_for([(a.position.x, a.position.y, a.position.z) for a in snapshot.agents])
