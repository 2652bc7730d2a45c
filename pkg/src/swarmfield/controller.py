"""Potential-field velocity controller.

Per tick, each agent is commanded the sum of a proportional attraction toward
its goal and pairwise repulsions from every neighbor closer than r_min, then
the sum is clipped to v_max. The scalar ops (`attractive_velocity`,
`repulsive_velocity`, `total_velocity`) are the reference definitions;
`control_step` runs a vectorized equivalent for the whole swarm.

The vectorized path reproduces the scalar path bit-for-bit (same IEEE
operation order, repulsion terms accumulated in ascending neighbor order)
whenever no two agents are coincident; coincident pairs are an anomaly whose
fallback terms are added after the regular ones, which can reassociate the
floating-point sum.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import (
    ControllerParams,
    SwarmSnapshot,
    Vec3,
    WaypointPlan,
    pair_fallback,
    unit_away,
)

# A pair closer than this has no usable direction; use the hashed fallback.
COINCIDENCE_EPS = 1e-9

# Stall detection thresholds for the escape extension: an agent is stalled
# when it is slower than this while farther than this from its goal.
STALL_SPEED = 0.01       # m/s
STALL_DISTANCE = 0.05    # m


# ---- Scalar reference ops ----


def attractive_velocity(position: Vec3, goal: Vec3, k_p: float) -> Vec3:
    """Proportional pull toward the goal: k_p * (goal - position)."""
    return Vec3(k_p * (goal.x - position.x), k_p * (goal.y - position.y), k_p * (goal.z - position.z))


def repulsive_velocity(p_i: Vec3, p_j: Vec3, params: ControllerParams, i: int = 0, j: int = 1) -> Vec3:
    """Push on agent i away from agent j; zero at or beyond r_min.

    Magnitude ramps linearly as the pair compresses: k_rep * (r_min - d).
    Activation is strict (d < r_min); at exactly r_min the term is zero.
    Coincident agents get a deterministic horizontal direction hashed from
    the ordered pair (i, j).
    """
    dx = p_i.x - p_j.x
    dy = p_i.y - p_j.y
    dz = p_i.z - p_j.z
    d = math.sqrt(dx * dx + dy * dy + dz * dz)
    if d >= params.r_min:
        return Vec3(0.0, 0.0, 0.0)
    mag = params.k_rep * (params.r_min - d)
    direction = unit_away(p_j, p_i, pair_fallback(i, j))
    return Vec3(mag * direction.x, mag * direction.y, mag * direction.z)


def total_velocity(agent_index: int, snapshot: SwarmSnapshot, plan: WaypointPlan, params: ControllerParams) -> Vec3:
    """Unsaturated commanded velocity for one agent.

    Attraction plus the sum of repulsion terms over neighbors in ascending
    id order. This is the scalar reference the vectorized path must match.
    """
    agent = snapshot.agents[agent_index]
    att = attractive_velocity(agent.position, plan.goals[agent_index], params.k_p)
    rx = 0.0
    ry = 0.0
    rz = 0.0
    for j, other in enumerate(snapshot.agents):
        if j == agent_index:
            continue
        term = repulsive_velocity(agent.position, other.position, params, i=agent_index, j=j)
        rx += term.x
        ry += term.y
        rz += term.z
    return Vec3(att.x + rx, att.y + ry, att.z + rz)


def saturate(v: Vec3, v_max: float) -> Vec3:
    """Clip to magnitude v_max, direction preserved; zero stays zero."""
    norm = v.norm()
    if norm <= v_max or norm == 0.0:
        return v
    scale = v_max / norm
    return Vec3(v.x * scale, v.y * scale, v.z * scale)


# ---- Stall tracking and escape ----


class StallTracker:
    """Consecutive-stalled-tick counters, one per agent.

    Mutable by design: `control_step` advances it each tick and the engine
    resets it whenever a new plan is adopted.
    """

    def __init__(self, n: int) -> None:
        if n < 1:
            raise ValueError("tracker needs at least one agent")
        self.counts = [0] * n

    def reset(self) -> None:
        for i in range(len(self.counts)):
            self.counts[i] = 0

    def update(self, speeds: np.ndarray, goal_dists: np.ndarray) -> None:
        """Advance counters given per-agent speeds and distances to goal."""
        for i in range(len(self.counts)):
            if speeds[i] < STALL_SPEED and goal_dists[i] > STALL_DISTANCE:
                self.counts[i] += 1
            else:
                self.counts[i] = 0


def escape_nudge(agent_id: int, attraction: Vec3, escape_speed: float) -> Vec3:
    """Small horizontal push perpendicular to the attraction direction.

    The sign alternates with agent id parity so neighbors shear apart instead
    of drifting together. Perpendicular of a (near-)vertical attraction is
    undefined; fall back to +X.
    """
    px = -attraction.y
    py = attraction.x
    norm = math.sqrt(px * px + py * py)
    if norm < 1e-12:
        ux, uy = 1.0, 0.0
    else:
        ux, uy = px / norm, py / norm
    sign = 1.0 if agent_id % 2 == 0 else -1.0
    return Vec3(sign * escape_speed * ux, sign * escape_speed * uy, 0.0)


# ---- Batch path ----


@dataclass(frozen=True)
class VelocityCommandSet:
    """Saturated commands for every agent at one tick."""

    tick: int
    velocities: tuple[Vec3, ...]
    escape_applied: frozenset[int]

    def __post_init__(self) -> None:
        if len(self.velocities) < 1:
            raise ValueError("need at least one command")

    def as_array(self) -> np.ndarray:
        out = np.empty((len(self.velocities), 3), dtype=np.float64)
        for i, v in enumerate(self.velocities):
            out[i, 0] = v.x
            out[i, 1] = v.y
            out[i, 2] = v.z
        return out


def _pair_terms(pos: np.ndarray, params: ControllerParams) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Repulsion term components t[i, j] plus the coincident-pair mask.

    Mirrors the scalar op exactly: magnitude k_rep * (r_min - d) times unit
    components (dx/d etc.), zero where d >= r_min or on the diagonal.
    """
    dx = pos[:, 0][:, None] - pos[:, 0][None, :]
    dy = pos[:, 1][:, None] - pos[:, 1][None, :]
    dz = pos[:, 2][:, None] - pos[:, 2][None, :]
    d = np.sqrt(dx * dx + dy * dy + dz * dz)
    active = d < params.r_min
    np.fill_diagonal(active, False)
    coincident = active & (d < COINCIDENCE_EPS)
    regular = active & ~coincident
    # Division guarded by a masked denominator; masked-out entries become 0.
    dd = np.where(d < COINCIDENCE_EPS, 1.0, d)
    mag = params.k_rep * (params.r_min - d)
    tx = np.where(regular, mag * (dx / dd), 0.0)
    ty = np.where(regular, mag * (dy / dd), 0.0)
    tz = np.where(regular, mag * (dz / dd), 0.0)
    if coincident.any():
        mag_c = params.k_rep * params.r_min  # d contributes 0 at coincidence
        for i, j in np.argwhere(coincident):
            fb = pair_fallback(int(i), int(j))
            tx[i, j] = mag_c * fb.x
            ty[i, j] = mag_c * fb.y
            tz[i, j] = mag_c * fb.z
    return tx, ty, tz, coincident


def _batch_total(pos: np.ndarray, goals: np.ndarray, params: ControllerParams) -> tuple[np.ndarray, np.ndarray]:
    """Unsaturated totals for all agents; returns (totals, attraction).

    Repulsion terms are accumulated column by column (ascending neighbor id)
    so the floating-point sum associates exactly like the scalar reference.
    """
    att = params.k_p * (goals - pos)
    n = pos.shape[0]
    if n == 1:
        return att.copy(), att
    tx, ty, tz, _ = _pair_terms(pos, params)
    rep = np.zeros((n, 3), dtype=np.float64)
    for j in range(n):
        rep[:, 0] += tx[:, j]
        rep[:, 1] += ty[:, j]
        rep[:, 2] += tz[:, j]
    return att + rep, att


def _saturate_rows(v: np.ndarray, v_max: float) -> np.ndarray:
    """Row-wise saturation matching the scalar `saturate` bit-for-bit."""
    out = v.copy()
    norms = np.sqrt(v[:, 0] * v[:, 0] + v[:, 1] * v[:, 1] + v[:, 2] * v[:, 2])
    over = norms > v_max
    if over.any():
        scale = v_max / norms[over]
        out[over] = v[over] * scale[:, None]
    return out


def control_step(
    snapshot: SwarmSnapshot,
    plan: WaypointPlan,
    params: ControllerParams,
    stall_tracker: StallTracker | None = None,
) -> VelocityCommandSet:
    """One controller tick for the whole swarm.

    Computes unsaturated totals, applies the escape nudge to agents the
    tracker has seen stalled for escape_stall_ticks consecutive ticks (before
    saturation, so the cap still binds), then saturates every command.

    Args:
        snapshot: current swarm state.
        plan: active plan; must have one goal per agent.
        params: gains and limits.
        stall_tracker: advanced in place; pass None to skip escape entirely.

    Returns:
        VelocityCommandSet stamped with the snapshot's tick.
    """
    if plan.n != snapshot.n:
        raise ValueError(f"plan has {plan.n} goals for {snapshot.n} agents")
    if not plan.accepted:
        raise ValueError("cannot execute an unaccepted plan")
    pos = snapshot.positions()
    goals = plan.goals_array()
    totals, att = _batch_total(pos, goals, params)

    escape_ids: frozenset[int] = frozenset()
    if stall_tracker is not None and params.escape_enabled:
        vel = snapshot.velocities()
        speeds = np.sqrt(vel[:, 0] * vel[:, 0] + vel[:, 1] * vel[:, 1] + vel[:, 2] * vel[:, 2])
        diff = pos - goals
        dists = np.sqrt(diff[:, 0] * diff[:, 0] + diff[:, 1] * diff[:, 1] + diff[:, 2] * diff[:, 2])
        stall_tracker.update(speeds, dists)
        stalled = [i for i, c in enumerate(stall_tracker.counts) if c >= params.escape_stall_ticks]
        if stalled:
            for i in stalled:
                nudge = escape_nudge(i, Vec3(float(att[i, 0]), float(att[i, 1]), float(att[i, 2])), params.escape_speed)
                totals[i, 0] += nudge.x
                totals[i, 1] += nudge.y
                totals[i, 2] += nudge.z
            escape_ids = frozenset(stalled)
    elif stall_tracker is not None:
        # Keep counters honest even with escape off so diagnostics line up.
        vel = snapshot.velocities()
        speeds = np.sqrt(vel[:, 0] * vel[:, 0] + vel[:, 1] * vel[:, 1] + vel[:, 2] * vel[:, 2])
        diff = pos - goals
        dists = np.sqrt(diff[:, 0] * diff[:, 0] + diff[:, 1] * diff[:, 1] + diff[:, 2] * diff[:, 2])
        stall_tracker.update(speeds, dists)

    cmds = _saturate_rows(totals, params.v_max)
    velocities = tuple(
        Vec3(float(cmds[i, 0]), float(cmds[i, 1]), float(cmds[i, 2])) for i in range(snapshot.n)
    )
    return VelocityCommandSet(tick=snapshot.tick, velocities=velocities, escape_applied=escape_ids)


# ---- Potential ----


def composite_potential(snapshot: SwarmSnapshot, plan: WaypointPlan, params: ControllerParams) -> float:
    """Scalar energy the controller descends.

    Sum of quadratic goal-attraction wells, (k_p / 2) |g_i - p_i|^2, plus a
    quadratic barrier (k_rep / 2) (r_min - d_ij)^2 for each unordered pair
    closer than r_min. The commanded (unsaturated, escape-free) velocity is
    exactly the negative gradient of this function with respect to each
    agent's position.
    """
    if plan.n != snapshot.n:
        raise ValueError(f"plan has {plan.n} goals for {snapshot.n} agents")
    pos = snapshot.positions()
    goals = plan.goals_array()
    diff = goals - pos
    att = 0.5 * params.k_p * float(np.sum(diff * diff))
    n = snapshot.n
    if n == 1:
        return att
    dx = pos[:, 0][:, None] - pos[:, 0][None, :]
    dy = pos[:, 1][:, None] - pos[:, 1][None, :]
    dz = pos[:, 2][:, None] - pos[:, 2][None, :]
    d = np.sqrt(dx * dx + dy * dy + dz * dz)
    iu = np.triu_indices(n, k=1)
    dv = d[iu]
    gap = params.r_min - dv
    gap = np.where(dv < params.r_min, gap, 0.0)
    rep = 0.5 * params.k_rep * float(np.sum(gap * gap))
    return att + rep


__all__ = [
    "COINCIDENCE_EPS",
    "STALL_SPEED",
    "STALL_DISTANCE",
    "attractive_velocity",
    "repulsive_velocity",
    "total_velocity",
    "saturate",
    "StallTracker",
    "escape_nudge",
    "VelocityCommandSet",
    "control_step",
    "composite_potential",
]
