"""Spawn layouts, integration, and the scenario run loop."""
from __future__ import annotations

import io
import math

import pytest

from conftest import plan_for, snap
from swarmfield.controller import control_step
from swarmfield.core import ControllerParams, GeoFence, Vec3, distance
from swarmfield.engine import (
    InfeasibleSpawn,
    Scenario,
    ScriptCommand,
    SimConfig,
    SpawnSpec,
    convergence_check,
    integrate_tick,
    replay_report,
    run_scenario,
    spawn_layout,
)
from swarmfield.logio import LogWriter, read_log
from swarmfield.planner import OraclePlanner

P = ControllerParams()


def converge_scenario(n: int, goal, *, duration=30.0, spawn=None, escape=True, name="t") -> Scenario:
    params = ControllerParams() if escape else ControllerParams(escape_enabled=False)
    config = SimConfig(
        n_agents=n,
        spawn=spawn if spawn is not None else SpawnSpec(kind="grid"),
        duration=duration,
        params=params,
    )
    script = (ScriptCommand(at_time=0.0, command={"converge": list(goal)}),)
    return Scenario(name=name, config=config, script=script)


# ---- SpawnSpec / SimConfig validation ----


def test_spawn_spec_validation():
    with pytest.raises(ValueError):
        SpawnSpec(kind="cloud")
    with pytest.raises(ValueError):
        SpawnSpec(kind="explicit")
    s = SpawnSpec(kind="explicit", positions=(Vec3(0, 0, 1),))
    assert SpawnSpec.from_dict(s.to_dict()) == s


def test_sim_config_validation_and_round_trip():
    with pytest.raises(ValueError):
        SimConfig(n_agents=0)
    with pytest.raises(ValueError):
        SimConfig(n_agents=1, duration=0.0)
    with pytest.raises(ValueError):
        SimConfig(n_agents=1, convergence_tolerance=1.0)
    c = SimConfig(n_agents=4, seed=7, duration=12.5)
    assert SimConfig.from_dict(c.to_dict()) == c


# ---- spawn_layout ----


def test_grid_spawn_four_agents_square():
    config = SimConfig(n_agents=4, spawn=SpawnSpec(kind="grid", spacing=1.5, altitude=1.0))
    s = spawn_layout(config)
    assert s.tick == 0 and s.sim_time == 0.0
    got = [(a.position.x, a.position.y, a.position.z) for a in s.agents]
    assert got == [
        (-0.75, 0.75, 1.0),
        (0.75, 0.75, 1.0),
        (-0.75, -0.75, 1.0),
        (0.75, -0.75, 1.0),
    ]


def test_spawn_same_seed_identical():
    config = SimConfig(n_agents=12, seed=99, spawn=SpawnSpec(kind="random"))
    assert spawn_layout(config) == spawn_layout(config)
    other = SimConfig(n_agents=12, seed=100, spawn=SpawnSpec(kind="random"))
    assert spawn_layout(other) != spawn_layout(config)


def test_random_spawn_respects_spacing_floor():
    config = SimConfig(n_agents=40, seed=5, spawn=SpawnSpec(kind="random"))
    s = spawn_layout(config)
    for i in range(40):
        for j in range(i + 1, 40):
            assert distance(s.agents[i].position, s.agents[j].position) >= P.r_min


def test_huge_swarm_hits_packing_bound():
    # Independent arithmetic for the bound: centers r_min apart are disjoint
    # balls of radius r_min/2; the fence (inflated r_min/2 per wall) has
    # volume 20.8 * 20.8 * 5.6 = 2422.7 m^3; each ball is 0.268 m^3; even at
    # the optimal packing density 0.7405 that caps out near 6690 << 10000.
    fence = GeoFence()
    r = P.r_min / 2.0
    vol = (fence.x_max - fence.x_min + P.r_min) * (fence.y_max - fence.y_min + P.r_min) * (
        fence.z_max - fence.z_min + P.r_min
    )
    cap = 0.7405 * vol / ((4.0 / 3.0) * math.pi * r**3)
    assert cap < 10_000
    with pytest.raises(InfeasibleSpawn):
        spawn_layout(SimConfig(n_agents=10_000, spawn=SpawnSpec(kind="random")))


def test_explicit_spawn_wrong_length():
    spawn = SpawnSpec(kind="explicit", positions=(Vec3(0, 0, 1), Vec3(2, 0, 1)))
    with pytest.raises(InfeasibleSpawn):
        spawn_layout(SimConfig(n_agents=3, spawn=spawn))


def test_explicit_spawn_outside_fence():
    spawn = SpawnSpec(kind="explicit", positions=(Vec3(0, 0, 0.05),))
    with pytest.raises(InfeasibleSpawn):
        spawn_layout(SimConfig(n_agents=1, spawn=spawn))


def test_explicit_spawn_too_close():
    spawn = SpawnSpec(kind="explicit", positions=(Vec3(0, 0, 1), Vec3(0.5, 0, 1)))
    with pytest.raises(InfeasibleSpawn):
        spawn_layout(SimConfig(n_agents=2, spawn=spawn))


# ---- integrate_tick ----


def test_euler_step_moves_by_v_dt():
    s = snap([(0, 0, 1)])
    cmds = control_step(s, plan_for([(5, 0, 1)]), P)  # saturates to 0.5 m/s
    nxt = integrate_tick(s, cmds, P.dt)
    assert nxt.tick == 1
    assert nxt.sim_time == P.dt
    assert nxt.agents[0].position == Vec3(0.025, 0.0, 1.0)
    assert nxt.agents[0].velocity == cmds.velocities[0]


def test_zero_commands_leave_positions_unchanged():
    s = snap([(0.3, 0.4, 1.0), (3, 3, 2)])
    plan = plan_for([(0.3, 0.4, 1.0), (3, 3, 2)])
    nxt = integrate_tick(s, control_step(s, plan, P), P.dt)
    assert [a.position for a in nxt.agents] == [a.position for a in s.agents]


def test_two_constant_ticks_advance_twice():
    s = snap([(0, 0, 1)])
    plan = plan_for([(5, 0, 1)])
    for _ in range(2):
        s = integrate_tick(s, control_step(s, plan, P), P.dt)
    assert s.agents[0].position.x == pytest.approx(0.05, abs=1e-12)


def test_integrate_rejects_stale_commands():
    s = snap([(0, 0, 1)])
    cmds = control_step(s, plan_for([(5, 0, 1)]), P)
    moved = integrate_tick(s, cmds, P.dt)
    with pytest.raises(ValueError):
        integrate_tick(moved, cmds, P.dt)


# ---- convergence_check ----


def test_convergence_identity_and_threshold():
    s = snap([(0, 0, 1), (2, 0, 1)])
    assert convergence_check(s, plan_for([(0, 0, 1), (2, 0, 1)])) is True
    assert convergence_check(s, plan_for([(0.06, 0, 1), (2, 0, 1)]), tolerance=0.05) is False
    assert convergence_check(s, plan_for([(0.05, 0, 1), (2.04, 0, 1)]), tolerance=0.1) is True


# ---- run_scenario ----


def test_single_agent_follows_exponential_approach():
    # Start 1 m out with k_p = 1: never saturated (speed starts at 1... it is
    # saturated until error < 0.5). Use 0.4 m so the whole approach is linear
    # and matches the discrete recurrence e_{k+1} = e_k * (1 - k_p * dt).
    spawn = SpawnSpec(kind="explicit", positions=(Vec3(0.4, 0.0, 1.0),))
    sc = converge_scenario(1, (0.0, 0.0, 1.0), spawn=spawn, duration=20.0)
    out = run_scenario(sc, OraclePlanner(sc.config.fence, sc.config.params))
    assert out.report.converged is True
    errs = [abs(rec.positions[0].x) for rec in out.recorder.records]
    for k in range(1, 30):
        assert errs[k] == pytest.approx(0.4 * (1 - P.k_p * P.dt) ** k, abs=1e-12)
    pots = [rec.potential for rec in out.recorder.records]
    assert all(b < a + 1e-12 for a, b in zip(pots, pots[1:]))


def test_saturated_approach_still_descends_potential():
    spawn = SpawnSpec(kind="explicit", positions=(Vec3(4.0, 0.0, 1.0),))
    sc = converge_scenario(1, (0.0, 0.0, 1.0), spawn=spawn, duration=30.0)
    out = run_scenario(sc, OraclePlanner(sc.config.fence, sc.config.params))
    assert out.report.converged is True
    assert out.report.speed_max_global <= P.v_max + 1e-9
    pots = [rec.potential for rec in out.recorder.records]
    assert all(b <= a + 1e-6 for a, b in zip(pots, pots[1:]))


def test_fence_rejected_plan_holds_positions():
    spawn = SpawnSpec(kind="explicit", positions=(Vec3(1.0, 0.0, 1.0),))
    config = SimConfig(n_agents=1, spawn=spawn, duration=5.0)
    script = (ScriptCommand(at_time=0.0, command={"converge": [11.0, 0.0, 1.0]}),)
    sc = Scenario(name="held", config=config, script=script)
    out = run_scenario(sc, OraclePlanner(config.fence, config.params))
    assert out.report.converged is False
    first = out.recorder.records[0].positions[0]
    assert all(rec.positions[0] == first for rec in out.recorder.records)
    assert out.recorder.plans[0].outcome == "fence_rejected"
    assert out.recorder.plans[0].source == "hold"


def test_same_seed_runs_are_byte_identical():
    logs = []
    for _ in range(2):
        sc = converge_scenario(5, (0.0, 0.0, 2.0), duration=20.0)
        buf = io.StringIO()
        run_scenario(sc, OraclePlanner(sc.config.fence, sc.config.params), log_writer=LogWriter(buf))
        logs.append(buf.getvalue())
    assert logs[0] == logs[1]


def test_replay_report_matches_live_report():
    sc = converge_scenario(5, (0.0, 0.0, 2.0), duration=20.0)
    buf = io.StringIO()
    out = run_scenario(sc, OraclePlanner(sc.config.fence, sc.config.params), log_writer=LogWriter(buf))
    parsed = read_log(io.StringIO(buf.getvalue()))
    assert replay_report(parsed).to_json() == out.report.to_json()


def test_stall_ends_run_early_with_escape_off():
    # Two agents sharing one goal sit at the symmetric equilibrium forever;
    # without the escape nudge the engine detects the stall and stops.
    spawn = SpawnSpec(kind="explicit", positions=(Vec3(-1, 0, 1), Vec3(1, 0, 1)))
    sc = converge_scenario(2, (0.0, 0.0, 1.0), spawn=spawn, duration=60.0, escape=False)
    out = run_scenario(sc, OraclePlanner(sc.config.fence, sc.config.params))
    assert out.report.stalled is True
    assert out.report.stall_time is not None
    assert out.report.converged is False
    assert out.report.ticks < int(60.0 / P.dt)


def test_scripted_commands_dispatch_in_time_order():
    spawn = SpawnSpec(kind="explicit", positions=(Vec3(0, 0, 1),))
    config = SimConfig(n_agents=1, spawn=spawn, duration=10.0)
    script = (
        ScriptCommand(at_time=0.0, command={"converge": [1.0, 0.0, 1.0]}),
        ScriptCommand(at_time=4.0, command={"converge": [0.0, 1.0, 1.0]}),
    )
    sc = Scenario(name="two-step", config=config, script=script)
    out = run_scenario(sc, OraclePlanner(config.fence, config.params), stop_early=False)
    assert [e.tick for e in out.recorder.plans] == [0, 80]
    final = out.final_snapshot.agents[0].position
    assert distance(final, Vec3(0.0, 1.0, 1.0)) < 0.05


def test_realtime_mode_paces_the_loop():
    spawn = SpawnSpec(kind="explicit", positions=(Vec3(0.2, 0.0, 1.0),))
    config = SimConfig(n_agents=1, spawn=spawn, duration=0.5, realtime=True)
    script = (ScriptCommand(at_time=0.0, command={"converge": [0.0, 0.0, 1.0]}),)
    out = run_scenario(Scenario(name="rt", config=config, script=script), OraclePlanner(config.fence, config.params), stop_early=False)
    assert out.timing is not None
    assert out.timing.ticks == 10
    assert out.timing.on_time_fraction > 0.5


def test_offline_runs_have_no_timing_stats():
    sc = converge_scenario(1, (0.0, 0.0, 1.0), spawn=SpawnSpec(kind="explicit", positions=(Vec3(0.2, 0, 1),)))
    out = run_scenario(sc, OraclePlanner(sc.config.fence, sc.config.params))
    assert out.timing is None
