"""Scenario document validation and the built-in registry."""
from __future__ import annotations

import json

import pytest

from swarmfield.core import Vec3
from swarmfield.engine import Scenario, spawn_layout
from swarmfield.scenarios import (
    InvalidScenario,
    UnknownScenario,
    get_scenario,
    load_scenario_file,
    parse_scenario,
    scenario_document,
    scenario_names,
)

MINIMAL = {"name": "t", "n_agents": 2}


def doc(**overrides):
    d = dict(MINIMAL)
    d.update(overrides)
    return d


# ---- parse_scenario ----


def test_minimal_document_gets_defaults():
    sc = parse_scenario(doc())
    assert isinstance(sc, Scenario)
    assert sc.name == "t"
    assert sc.config.n_agents == 2
    assert sc.config.seed == 0
    assert sc.config.duration == 60.0
    assert sc.config.spawn.kind == "grid"
    assert sc.script == ()


def test_full_document_round_trip():
    sc = parse_scenario(doc(
        seed=7,
        duration=12.5,
        spawn={"kind": "circle", "radius": 2.0, "altitude": 2.0},
        params={"k_rep": 3.0},
        fence={"z_max": 4.0},
        convergence_tolerance=0.1,
        script=[{"at_time": 1.0, "command": {"swap": True}}],
    ))
    assert sc.config.seed == 7
    assert sc.config.duration == 12.5
    assert sc.config.spawn.radius == 2.0
    assert sc.config.params.k_rep == 3.0
    assert sc.config.fence.z_max == 4.0
    assert sc.config.convergence_tolerance == 0.1
    assert len(sc.script) == 1
    assert sc.script[0].at_time == 1.0
    assert sc.script[0].command == {"swap": True}


def test_script_commands_are_copied():
    """Mutating the source document must not reach the built scenario."""
    command = {"converge": [1.0, 0.0, 1.0]}
    sc = parse_scenario(doc(script=[{"at_time": 0.0, "command": command}]))
    command["converge"][0] = 9.9
    assert sc.script[0].command == {"converge": [1.0, 0.0, 1.0]}


def test_unknown_field_rejected():
    with pytest.raises(InvalidScenario, match="unknown fields"):
        parse_scenario(doc(wind_speed=3.0))


def test_missing_name_rejected():
    with pytest.raises(InvalidScenario, match="'name'"):
        parse_scenario({"n_agents": 2})


@pytest.mark.parametrize("bad", [0, -1, 2.0, True, "2", None])
def test_bad_agent_count_rejected(bad):
    with pytest.raises(InvalidScenario, match="'n_agents'"):
        parse_scenario(doc(n_agents=bad))


def test_bool_seed_rejected():
    with pytest.raises(InvalidScenario, match="'seed'"):
        parse_scenario(doc(seed=True))


@pytest.mark.parametrize("bad", [0, -3.0, True, "60"])
def test_bad_duration_rejected(bad):
    with pytest.raises(InvalidScenario, match="'duration'"):
        parse_scenario(doc(duration=bad))


def test_problems_are_aggregated():
    """One pass reports every defect, joined with semicolons."""
    with pytest.raises(InvalidScenario) as e:
        parse_scenario(doc(n_agents=0, duration=-1, wind=True))
    msg = str(e.value)
    assert "'n_agents'" in msg
    assert "'duration'" in msg
    assert "unknown fields" in msg
    assert msg.count("; ") >= 2


def test_bad_spawn_reported_with_prefix():
    with pytest.raises(InvalidScenario, match="spawn: "):
        parse_scenario(doc(spawn={"kind": "teleport"}))


def test_bad_params_reported_with_prefix():
    with pytest.raises(InvalidScenario, match="params: "):
        parse_scenario(doc(params={"k_p": -1.0}))


def test_bad_fence_reported_with_prefix():
    with pytest.raises(InvalidScenario, match="fence: "):
        parse_scenario(doc(fence={"z_min": 5.0, "z_max": 1.0}))


def test_script_must_be_a_list():
    with pytest.raises(InvalidScenario, match="'script' must be a list"):
        parse_scenario(doc(script={"at_time": 0.0}))


@pytest.mark.parametrize(
    "entry",
    [
        {"at_time": 0.0},
        {"command": {"swap": True}},
        {"at_time": 0.0, "command": {"swap": True}, "extra": 1},
        "swap",
    ],
)
def test_script_entry_shape_enforced(entry):
    with pytest.raises(InvalidScenario, match=r"script\[0\]"):
        parse_scenario(doc(script=[entry]))


def test_script_entry_unknown_command_named_by_index():
    script = [
        {"at_time": 0.0, "command": {"swap": True}},
        {"at_time": 1.0, "command": {"orbit": 3}},
    ]
    with pytest.raises(InvalidScenario, match=r"script\[1\]"):
        parse_scenario(doc(script=script))


def test_non_object_document_rejected():
    with pytest.raises(InvalidScenario, match="must be a JSON object"):
        parse_scenario(["not", "a", "scenario"])


# ---- load_scenario_file ----


def test_load_scenario_file_round_trip(tmp_path):
    path = tmp_path / "s.json"
    path.write_text(json.dumps(doc(script=[{"at_time": 0.0, "command": {"swap": True}}])))
    sc = load_scenario_file(str(path))
    assert sc.name == "t"
    assert sc.script[0].command == {"swap": True}


def test_load_scenario_file_missing(tmp_path):
    with pytest.raises(InvalidScenario, match="cannot read"):
        load_scenario_file(str(tmp_path / "absent.json"))


def test_load_scenario_file_bad_json(tmp_path):
    path = tmp_path / "s.json"
    path.write_text("{not json")
    with pytest.raises(InvalidScenario, match="not valid JSON"):
        load_scenario_file(str(path))


# ---- Registry ----


EXPECTED_NAMES = [
    "formation_circle_n10",
    "formation_cube_n8",
    "formation_grid_n30",
    "formation_sphere_n30",
    "formation_tree_n10",
    "shared_goal_n2",
    "static_hazard_n10",
    "static_hazard_n3",
    "static_hazard_n30",
    "swap_n10",
    "swap_n30",
]


def test_registry_names_are_fixed_and_sorted():
    assert scenario_names() == EXPECTED_NAMES


@pytest.mark.parametrize("name", EXPECTED_NAMES)
def test_each_registry_scenario_builds_and_spawns(name):
    """Registry entries must validate and produce a feasible layout."""
    sc = get_scenario(name)
    assert sc.name == name
    layout = spawn_layout(sc.config)
    assert layout.n == sc.config.n_agents
    assert layout.tick == 0


@pytest.mark.parametrize("name", EXPECTED_NAMES)
def test_registry_documents_survive_json(name):
    d = scenario_document(name)
    assert parse_scenario(json.loads(json.dumps(d))).name == name


def test_registry_document_is_a_fresh_copy():
    a = scenario_document("swap_n10")
    a["n_agents"] = 999
    assert scenario_document("swap_n10")["n_agents"] == 10


def test_unknown_scenario_lists_known_names():
    with pytest.raises(UnknownScenario) as e:
        get_scenario("warp_n5")
    assert "warp_n5" in str(e.value)
    assert "swap_n10" in str(e.value)


def test_get_scenario_overrides():
    sc = get_scenario("static_hazard_n10", n_agents=5, seed=42, duration=10.0)
    assert sc.config.n_agents == 5
    assert sc.config.seed == 42
    assert sc.config.duration == 10.0
    # script untouched by overrides
    assert sc.script[0].command == {"converge": [0.0, 0.0, 1.0]}


def test_get_scenario_override_can_invalidate():
    with pytest.raises(InvalidScenario):
        get_scenario("swap_n10", duration=-1.0)


def test_swap_n10_layout():
    """Ten on a 1.5 m circle, every antipodal crossing through the center."""
    sc = get_scenario("swap_n10")
    assert sc.config.spawn.kind == "circle"
    assert sc.config.spawn.radius == 1.5
    assert sc.config.duration == 120.0
    layout = spawn_layout(sc.config)
    for a in layout.agents:
        r = (a.position.x ** 2 + a.position.y ** 2) ** 0.5
        assert r == pytest.approx(1.5, abs=1e-9)
        assert a.position.z == 2.0


def test_swap_n30_is_the_wide_stress_ring():
    sc = get_scenario("swap_n30")
    assert sc.config.spawn.radius == 4.0
    assert sc.config.duration == 180.0


def test_static_hazard_script_turns_at_thirty_seconds():
    sc = get_scenario("static_hazard_n10")
    assert [c.at_time for c in sc.script] == [0.0, 30.0]
    assert "converge" in sc.script[0].command
    assert "formation" in sc.script[1].command


def test_shared_goal_spawn_is_symmetric():
    sc = get_scenario("shared_goal_n2")
    layout = spawn_layout(sc.config)
    assert layout.agents[0].position == Vec3(-1.0, 0.0, 1.0)
    assert layout.agents[1].position == Vec3(1.0, 0.0, 1.0)
