"""Scenario files and the built-in scenario registry.

A scenario is JSON: run configuration plus a timed command script.

    {
      "name": "swap_n10",
      "n_agents": 10,
      "seed": 0,
      "spawn": {"kind": "circle", "altitude": 2.0},
      "duration": 120.0,
      "params": {"k_rep": 2.0},              # partial override
      "fence": {"z_max": 4.0},               # partial override
      "script": [
        {"at_time": 0.0, "command": {"swap": true}}
      ]
    }

Command forms: {"formation": {...}}, {"swap": true}, {"converge": [x,y,z]},
{"text": "..."} (free text, llm planner only).
"""
from __future__ import annotations

import copy
import json
from typing import Any

from .core import ControllerParams, GeoFence, SwarmfieldError
from .engine import Scenario, ScriptCommand, SimConfig, SpawnSpec
from .planner import UnsupportedCommand, command_kind


class InvalidScenario(SwarmfieldError):
    """Scenario document fails validation; message lists every problem."""


class UnknownScenario(SwarmfieldError):
    """Requested name is not in the registry."""


_TOP_KEYS = {
    "name", "n_agents", "seed", "spawn", "duration",
    "params", "fence", "convergence_tolerance", "script",
}


def parse_scenario(obj: dict[str, Any]) -> Scenario:
    """Validate a scenario document and build the Scenario.

    Raises:
        InvalidScenario: aggregating every problem found, so an author can
            fix a file in one pass.
    """
    problems: list[str] = []
    if not isinstance(obj, dict):
        raise InvalidScenario("scenario must be a JSON object")
    unknown = set(obj) - _TOP_KEYS
    if unknown:
        problems.append(f"unknown fields: {sorted(unknown)}")

    name = obj.get("name")
    if not isinstance(name, str) or not name:
        problems.append("'name' must be a non-empty string")
        name = "unnamed"
    n_agents = obj.get("n_agents")
    if not isinstance(n_agents, int) or isinstance(n_agents, bool) or n_agents < 1:
        problems.append("'n_agents' must be a positive integer")
        n_agents = 1

    kwargs: dict[str, Any] = {"n_agents": n_agents}
    if "seed" in obj:
        if not isinstance(obj["seed"], int) or isinstance(obj["seed"], bool):
            problems.append("'seed' must be an integer")
        else:
            kwargs["seed"] = obj["seed"]
    if "duration" in obj:
        if not isinstance(obj["duration"], (int, float)) or isinstance(obj["duration"], bool) or obj["duration"] <= 0:
            problems.append("'duration' must be a positive number")
        else:
            kwargs["duration"] = float(obj["duration"])
    if "convergence_tolerance" in obj:
        kwargs["convergence_tolerance"] = obj["convergence_tolerance"]

    try:
        if "spawn" in obj:
            kwargs["spawn"] = SpawnSpec.from_dict(obj["spawn"])
    except (ValueError, TypeError) as e:
        problems.append(f"spawn: {e}")
    try:
        kwargs["params"] = ControllerParams(**obj.get("params", {}))
    except (ValueError, TypeError) as e:
        problems.append(f"params: {e}")
    try:
        kwargs["fence"] = GeoFence(**obj.get("fence", {}))
    except (ValueError, TypeError) as e:
        problems.append(f"fence: {e}")

    script: list[ScriptCommand] = []
    raw_script = obj.get("script", [])
    if not isinstance(raw_script, list):
        problems.append("'script' must be a list")
        raw_script = []
    for idx, entry in enumerate(raw_script):
        if not isinstance(entry, dict) or set(entry) != {"at_time", "command"}:
            problems.append(f"script[{idx}] must be an object with exactly 'at_time' and 'command'")
            continue
        try:
            command_kind(entry["command"])
        except UnsupportedCommand as e:
            problems.append(f"script[{idx}]: {e}")
            continue
        try:
            script.append(ScriptCommand(at_time=float(entry["at_time"]), command=copy.deepcopy(entry["command"])))
        except (ValueError, TypeError) as e:
            problems.append(f"script[{idx}]: {e}")

    config: SimConfig | None = None
    if not problems:
        try:
            config = SimConfig(**kwargs)
        except (ValueError, TypeError) as e:
            problems.append(str(e))
    if problems or config is None:
        raise InvalidScenario("; ".join(problems))
    return Scenario(name=name, config=config, script=tuple(script))


def load_scenario_file(path: str) -> Scenario:
    """Parse a scenario JSON file.

    Raises:
        InvalidScenario: unreadable file, bad JSON, or failed validation.
    """
    try:
        with open(path, "r", encoding="utf-8") as fh:
            obj = json.load(fh)
    except OSError as e:
        raise InvalidScenario(f"cannot read {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise InvalidScenario(f"{path} is not valid JSON: {e}") from e
    return parse_scenario(obj)


# ---- Built-in registry ----


def _static_hazard(n: int, recovery_radius: float) -> dict[str, Any]:
    # Phase 1 squeezes the swarm onto one point (repulsion versus shared
    # attraction); phase 2 recovers into a ring so the run can converge.
    return {
        "name": f"static_hazard_n{n}",
        "n_agents": n,
        "seed": 0,
        "spawn": {"kind": "circle", "altitude": 2.0},
        "duration": 60.0,
        "script": [
            {"at_time": 0.0, "command": {"converge": [0.0, 0.0, 1.0]}},
            {"at_time": 30.0, "command": {"formation": {"shape": "circle", "radius": recovery_radius, "altitude": 2.0}}},
        ],
    }


def _swap(n: int, radius: float, duration: float) -> dict[str, Any]:
    # Every antipodal path crosses the circle center, where attraction
    # magnitude equals the radius. Repulsion tops out at k_rep*r_min = 1.6,
    # so radius <= ~1.75 deadlocks safely (escape resolves it) while larger
    # rings punch through. n=30 cannot spawn tighter than ~3.83 (0.8 m
    # chords), so swap_n30 is a deliberate stress case that records the
    # resulting safety violations in its report.
    return {
        "name": f"swap_n{n}",
        "n_agents": n,
        "seed": 0,
        "spawn": {"kind": "circle", "radius": radius, "altitude": 2.0},
        "duration": duration,
        "script": [{"at_time": 0.0, "command": {"swap": True}}],
    }


def _formation(tag: str, n: int, formation: dict[str, Any], duration: float = 60.0) -> dict[str, Any]:
    return {
        "name": f"formation_{tag}_n{n}",
        "n_agents": n,
        "seed": 0,
        "spawn": {"kind": "grid"},
        "duration": duration,
        "script": [{"at_time": 0.0, "command": {"formation": formation}}],
    }


def _shared_goal_n2() -> dict[str, Any]:
    # Two agents, one goal: they settle at the repulsion/attraction balance
    # instead of colliding, so this run ends unconverged by design.
    return {
        "name": "shared_goal_n2",
        "n_agents": 2,
        "seed": 0,
        "spawn": {"kind": "explicit", "positions": [[-1.0, 0.0, 1.0], [1.0, 0.0, 1.0]]},
        "duration": 30.0,
        "script": [{"at_time": 0.0, "command": {"converge": [0.0, 0.0, 1.0]}}],
    }


_BUILDERS: dict[str, Any] = {
    "static_hazard_n3": lambda: _static_hazard(3, 3.0),
    "static_hazard_n10": lambda: _static_hazard(10, 3.0),
    "static_hazard_n30": lambda: _static_hazard(30, 5.0),
    "swap_n10": lambda: _swap(10, 1.5, 120.0),
    "swap_n30": lambda: _swap(30, 4.0, 180.0),
    "formation_circle_n10": lambda: _formation("circle", 10, {"shape": "circle", "radius": 3.0, "altitude": 2.0}),
    "formation_grid_n30": lambda: _formation("grid", 30, {"shape": "grid", "rows": 5, "cols": 6, "spacing": 1.0, "altitude": 2.0}),
    "formation_cube_n8": lambda: _formation("cube", 8, {"shape": "cube", "edge": 2.0, "altitude": 2.0}),
    "formation_sphere_n30": lambda: _formation("sphere", 30, {"shape": "sphere", "radius": 2.0, "altitude": 2.5}),
    "formation_tree_n10": lambda: _formation("tree", 10, {"shape": "tree", "altitude": 2.0}),
    "shared_goal_n2": _shared_goal_n2,
}


def scenario_names() -> list[str]:
    return sorted(_BUILDERS)


def scenario_document(name: str) -> dict[str, Any]:
    """The registry scenario as a plain JSON-able document.

    Raises:
        UnknownScenario: name not registered.
    """
    try:
        builder = _BUILDERS[name]
    except KeyError:
        raise UnknownScenario(f"unknown scenario {name!r}; known: {', '.join(scenario_names())}") from None
    return builder()


def get_scenario(
    name: str,
    *,
    n_agents: int | None = None,
    seed: int | None = None,
    duration: float | None = None,
) -> Scenario:
    """Build a registry scenario, optionally overriding count, seed, duration.

    Raises:
        UnknownScenario: name not registered.
        InvalidScenario: overrides make the document invalid.
    """
    doc = scenario_document(name)
    if n_agents is not None:
        doc["n_agents"] = n_agents
    if seed is not None:
        doc["seed"] = seed
    if duration is not None:
        doc["duration"] = duration
    return parse_scenario(doc)


__all__ = [
    "InvalidScenario",
    "UnknownScenario",
    "parse_scenario",
    "load_scenario_file",
    "scenario_names",
    "scenario_document",
    "get_scenario",
]
