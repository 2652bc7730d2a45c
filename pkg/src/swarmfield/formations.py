"""Formation geometry generators and goal assignment.

Every generator is deterministic and emits points in a fixed documented
order. Generated plans are validated twice before acceptance: every point
must lie inside the fence, and no two points may sit closer than the
repulsion radius (a formation that asks agents to pack tighter than r_min
would fight the safety filter forever).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

from .core import GeoFence, SwarmfieldError, SwarmSnapshot, Vec3, WaypointPlan, distance

SHAPES = ("circle", "grid", "line", "triangle", "cube", "sphere", "tree")

DEFAULT_RADIUS = 2.0
DEFAULT_SPACING = 1.0
DEFAULT_EDGE = 2.0
DEFAULT_TREE_HEIGHT = 2.0
DEFAULT_TREE_BASE_RADIUS = 2.0
DEFAULT_CENTER = Vec3(0.0, 0.0, 2.0)

# Ring capacity used to split tree points into stacked rings.
_TREE_RING_CAPACITY = 6


class ShapeInfeasible(SwarmfieldError):
    """The requested shape cannot be realized for this agent count/spacing."""


class FenceViolation(SwarmfieldError):
    """Requested geometry exits the flight volume."""


class NoValidMatching(SwarmfieldError):
    """No valid pairing of agents exists (swap needs an even count)."""


@dataclass(frozen=True)
class FormationSpec:
    """Parameters for one formation request; unused fields are ignored
    by shapes that do not need them.

    `altitude`, when given, overrides center.z; planar shapes live in the
    z = center.z plane, cube and sphere center on it, and the tree's base
    ring sits on it.
    """

    shape: str
    center: Vec3 = DEFAULT_CENTER
    radius: float = DEFAULT_RADIUS
    rows: int | None = None
    cols: int | None = None
    spacing: float = DEFAULT_SPACING
    edge: float = DEFAULT_EDGE
    height: float = DEFAULT_TREE_HEIGHT
    base_radius: float = DEFAULT_TREE_BASE_RADIUS
    altitude: float | None = None

    def __post_init__(self) -> None:
        if self.shape not in SHAPES:
            raise ValueError(f"unknown shape {self.shape!r}; expected one of {SHAPES}")
        for name in ("radius", "spacing", "edge", "height", "base_radius"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
                raise ValueError(f"FormationSpec.{name} must be a positive finite number, got {v!r}")
        if self.altitude is not None:
            object.__setattr__(self, "center", Vec3(self.center.x, self.center.y, float(self.altitude)))

    @staticmethod
    def from_dict(d: dict) -> FormationSpec:
        allowed = {
            "shape", "center", "radius", "rows", "cols",
            "spacing", "edge", "height", "base_radius", "altitude",
        }
        unknown = set(d) - allowed
        if unknown:
            raise ValueError(f"unknown formation fields: {sorted(unknown)}")
        if "shape" not in d:
            raise ValueError("formation needs a 'shape'")
        kwargs = dict(d)
        if "center" in kwargs:
            kwargs["center"] = Vec3.from_seq(kwargs["center"])
        return FormationSpec(**kwargs)


# ---- Point generators (canonical order) ----


def ring_points(n: int, center: Vec3, radius: float) -> list[Vec3]:
    """n points on a horizontal circle, equal angles from +X, counterclockwise."""
    pts = []
    for k in range(n):
        ang = 2.0 * math.pi * k / n
        pts.append(Vec3(center.x + radius * math.cos(ang), center.y + radius * math.sin(ang), center.z))
    return pts


def _grid_points(n: int, center: Vec3, rows: int | None, cols: int | None, spacing: float) -> list[Vec3]:
    if rows is not None and cols is not None:
        if rows * cols != n:
            raise ShapeInfeasible(f"grid {rows}x{cols} holds {rows * cols} points but {n} agents were given")
    elif rows is None and cols is None:
        cols = math.ceil(math.sqrt(n))
        rows = math.ceil(n / cols)
    else:
        fixed = rows if rows is not None else cols
        other = math.ceil(n / fixed)
        if rows is None:
            rows = other
        else:
            cols = other
        if rows * cols < n:
            raise ShapeInfeasible(f"grid {rows}x{cols} cannot hold {n} points")
    # Row-major, centered on the full lattice extent; row steps -Y, col +X.
    pts = []
    for idx in range(n):
        r, c = divmod(idx, cols)
        x = center.x + (c - (cols - 1) / 2.0) * spacing
        y = center.y + ((rows - 1) / 2.0 - r) * spacing
        pts.append(Vec3(x, y, center.z))
    return pts


def _line_points(n: int, center: Vec3, spacing: float) -> list[Vec3]:
    return [Vec3(center.x + (i - (n - 1) / 2.0) * spacing, center.y, center.z) for i in range(n)]


def _triangle_points(n: int, center: Vec3, radius: float) -> list[Vec3]:
    # n points equally spaced along the perimeter of an equilateral triangle
    # (circumradius = radius, apex toward +Y); n == 3 lands on the vertices.
    verts = []
    for k in range(3):
        ang = math.pi / 2.0 + 2.0 * math.pi * k / 3.0
        verts.append((center.x + radius * math.cos(ang), center.y + radius * math.sin(ang)))
    side = math.dist(verts[0], verts[1])
    perimeter = 3.0 * side
    pts = []
    for i in range(n):
        s = perimeter * i / n
        edge_idx = min(int(s // side), 2)
        t = (s - edge_idx * side) / side
        ax, ay = verts[edge_idx]
        bx, by = verts[(edge_idx + 1) % 3]
        pts.append(Vec3(ax + t * (bx - ax), ay + t * (by - ay), center.z))
    return pts


# Cube corners in bit order (bit0 -> +x, bit1 -> +y, bit2 -> +z), then the 12
# edges grouped by axis; extra points subdivide edges round-robin.
_CUBE_EDGES = (
    (0, 1), (2, 3), (4, 5), (6, 7),   # x-aligned
    (0, 2), (1, 3), (4, 6), (5, 7),   # y-aligned
    (0, 4), (1, 5), (2, 6), (3, 7),   # z-aligned
)


def _cube_points(n: int, center: Vec3, edge: float) -> list[Vec3]:
    h = edge / 2.0
    corners = []
    for k in range(8):
        corners.append(Vec3(
            center.x + (h if k & 1 else -h),
            center.y + (h if k & 2 else -h),
            center.z + (h if k & 4 else -h),
        ))
    if n <= 8:
        return corners[:n]
    extra = n - 8
    counts = [0] * len(_CUBE_EDGES)
    for i in range(extra):
        counts[i % len(_CUBE_EDGES)] += 1
    pts = list(corners)
    for e, (a, b) in enumerate(_CUBE_EDGES):
        c = counts[e]
        for j in range(c):
            t = (j + 1) / (c + 1)
            pa, pb = corners[a], corners[b]
            pts.append(Vec3(pa.x + t * (pb.x - pa.x), pa.y + t * (pb.y - pa.y), pa.z + t * (pb.z - pa.z)))
    return pts


def _sphere_points(n: int, center: Vec3, radius: float) -> list[Vec3]:
    # Fibonacci lattice: near-uniform coverage for any n.
    golden = math.pi * (3.0 - math.sqrt(5.0))
    pts = []
    for k in range(n):
        z = 1.0 - 2.0 * (k + 0.5) / n
        r_xy = math.sqrt(max(0.0, 1.0 - z * z))
        ang = golden * k
        pts.append(Vec3(
            center.x + radius * r_xy * math.cos(ang),
            center.y + radius * r_xy * math.sin(ang),
            center.z + radius * z,
        ))
    return pts


def _tree_points(n: int, center: Vec3, base_radius: float, height: float) -> list[Vec3]:
    # Conifer silhouette: stacked rings shrinking toward an apex point.
    # Apex is emitted last; rings are emitted bottom-up, each ring from +X.
    if n == 1:
        return [Vec3(center.x, center.y, center.z + height)]
    body = n - 1
    levels = math.ceil(body / _TREE_RING_CAPACITY)
    base, rem = divmod(body, levels)
    sizes = [base + (1 if l < rem else 0) for l in range(levels)]  # bottom ring largest
    pts: list[Vec3] = []
    for l, size in enumerate(sizes):
        r = base_radius * (levels - l) / levels
        z = center.z + height * l / levels
        ring_center = Vec3(center.x, center.y, z)
        pts.extend(ring_points(size, ring_center, r))
    pts.append(Vec3(center.x, center.y, center.z + height))
    return pts


# ---- Validation and the public ops ----


def _min_pairwise(points: list[Vec3]) -> float:
    best = math.inf
    for i in range(len(points)):
        for j in range(i + 1, len(points)):
            d = distance(points[i], points[j])
            if d < best:
                best = d
    return best


def plan_formation(spec: FormationSpec, n: int, fence: GeoFence, r_min: float = 0.8) -> WaypointPlan:
    """Generate an n-point formation plan in canonical point order.

    Args:
        spec: shape and its parameters.
        n: number of agents.
        fence: flight volume every point must lie inside.
        r_min: minimum allowed spacing between any two points.

    Returns:
        Accepted plan (source "oracle"); goal i is the i-th canonical point.

    Raises:
        ShapeInfeasible: impossible count (grid mismatch) or points closer
            than r_min.
        FenceViolation: some point leaves the flight volume.
    """
    if n < 1:
        raise ShapeInfeasible("need at least one agent")
    if spec.shape == "circle":
        pts = ring_points(n, spec.center, spec.radius)
    elif spec.shape == "grid":
        pts = _grid_points(n, spec.center, spec.rows, spec.cols, spec.spacing)
    elif spec.shape == "line":
        pts = _line_points(n, spec.center, spec.spacing)
    elif spec.shape == "triangle":
        pts = _triangle_points(n, spec.center, spec.radius)
    elif spec.shape == "cube":
        pts = _cube_points(n, spec.center, spec.edge)
    elif spec.shape == "sphere":
        pts = _sphere_points(n, spec.center, spec.radius)
    elif spec.shape == "tree":
        pts = _tree_points(n, spec.center, spec.base_radius, spec.height)
    else:  # pragma: no cover - FormationSpec already rejects unknown shapes
        raise ShapeInfeasible(f"unknown shape {spec.shape!r}")

    for idx, p in enumerate(pts):
        why = fence.violation(p)
        if why is not None:
            raise FenceViolation(f"{spec.shape} point {idx} leaves the fence: {why}")
    if n > 1:
        closest = _min_pairwise(pts)
        if closest < r_min:
            raise ShapeInfeasible(
                f"{spec.shape} for {n} agents packs points {closest:.3f} m apart, below the {r_min} m floor"
            )
    return WaypointPlan(goals=tuple(pts), source="oracle", command_text=None, accepted=True)


def assign_goals(points: tuple[Vec3, ...], snapshot: SwarmSnapshot) -> tuple[Vec3, ...]:
    """Permute formation points onto agents, nearest pairs first.

    Greedy over all (agent, point) pairs sorted by distance (ties broken by
    agent id, then point index); each agent and each point is used once.
    Cuts total travel without the weight of an optimal assignment solver.
    """
    n = snapshot.n
    if len(points) != n:
        raise ValueError(f"{len(points)} points for {n} agents")
    pairs = []
    for i, agent in enumerate(snapshot.agents):
        for k, p in enumerate(points):
            pairs.append((distance(agent.position, p), i, k))
    pairs.sort()
    goal_of: dict[int, Vec3] = {}
    used_points: set[int] = set()
    for _, i, k in pairs:
        if i in goal_of or k in used_points:
            continue
        goal_of[i] = points[k]
        used_points.add(k)
        if len(goal_of) == n:
            break
    return tuple(goal_of[i] for i in range(n))


def _fallback_pairing(n: int) -> list[int]:
    """Index pairing i <-> (i + n/2) mod n; requires even n."""
    half = n // 2
    return [(i + half) % n for i in range(n)]


def swap_targets(snapshot: SwarmSnapshot, fence: GeoFence) -> WaypointPlan:
    """Send every agent to a partner's position, exchanging places in pairs.

    Each position is reflected through the swarm centroid; agents are then
    paired greedily by how well partner positions mutually match the
    reflections. The result is always a pairing (an involution with no fixed
    points): i goes to j's spot exactly when j goes to i's. If the greedy
    pass cannot complete, the index pairing i <-> (i + N/2) mod N is used.

    Raises:
        NoValidMatching: odd swarm sizes cannot be paired.
        FenceViolation: a goal (some agent's current position) lies outside
            the fence, so the swap would command an out-of-bounds target.
    """
    n = snapshot.n
    if n % 2 != 0:
        raise NoValidMatching(f"swap needs an even number of agents, got {n}")
    pos = [a.position for a in snapshot.agents]
    cx = sum(p.x for p in pos) / n
    cy = sum(p.y for p in pos) / n
    cz = sum(p.z for p in pos) / n
    reflected = [Vec3(2.0 * cx - p.x, 2.0 * cy - p.y, 2.0 * cz - p.z) for p in pos]

    # Symmetric pair cost: how far each side's reflection is from the other.
    costs = []
    for i in range(n):
        for j in range(i + 1, n):
            cost = distance(reflected[i], pos[j]) + distance(reflected[j], pos[i])
            costs.append((cost, i, j))
    costs.sort()
    partner = [-1] * n
    matched = 0
    for _, i, j in costs:
        if partner[i] != -1 or partner[j] != -1:
            continue
        partner[i] = j
        partner[j] = i
        matched += 2
        if matched == n:
            break
    if matched != n:  # pragma: no cover - greedy pairing always completes
        partner = _fallback_pairing(n)

    goals = tuple(pos[partner[i]] for i in range(n))
    for i, g in enumerate(goals):
        why = fence.violation(g)
        if why is not None:
            raise FenceViolation(f"swap goal for agent {i} leaves the fence: {why}")
    return WaypointPlan(goals=goals, source="oracle", command_text=None, accepted=True)


__all__ = [
    "SHAPES",
    "ring_points",
    "FormationSpec",
    "ShapeInfeasible",
    "FenceViolation",
    "NoValidMatching",
    "plan_formation",
    "assign_goals",
    "swap_targets",
]
