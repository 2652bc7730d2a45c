"""HTTP/WS gateway: session lifecycle, command routing, streaming, auth."""
from __future__ import annotations

import time

import pytest
from fastapi.testclient import TestClient
from starlette.websockets import WebSocketDisconnect

from swarmfield.core import Vec3, WaypointPlan
from swarmfield.engine import PlanOutcome
from swarmfield.gateway import ENV_TOKEN, SessionIdle, build_app
from swarmfield.scenarios import parse_scenario


def live_scenario(n: int = 2, duration: float = 60.0):
    positions = [[(i - (n - 1) / 2) * 1.5, 0.0, 1.0] for i in range(n)]
    return parse_scenario({
        "name": "live_test",
        "n_agents": n,
        "duration": duration,
        "spawn": {"kind": "explicit", "positions": positions},
    })


def poll_until(fn, timeout_s: float = 5.0, period_s: float = 0.02):
    deadline = time.monotonic() + timeout_s
    while True:
        value = fn()
        if value is not None:
            return value
        if time.monotonic() > deadline:
            raise AssertionError("condition not reached in time")
        time.sleep(period_s)


def next_frame(ws, want_source: str | None = None, timeout_s: float = 5.0):
    """Next streamed simulation frame, skipping status heartbeats."""
    deadline = time.monotonic() + timeout_s
    while time.monotonic() < deadline:
        msg = ws.receive_json()
        if msg["type"] != "frame":
            continue
        if want_source is None or msg["plan_source"] == want_source:
            return msg
    raise AssertionError("no matching frame in time")


# ---- Idle app ----


def test_session_endpoint_when_idle():
    with TestClient(build_app()) as client:
        body = client.get("/api/session").json()
    assert body["run_status"] == "idle"
    assert body["scenario"] is None
    assert body["mode"] == "oracle"
    assert body["current_plan"] is None
    assert body["history"] == []


def test_command_without_live_run_is_409():
    with TestClient(build_app()) as client:
        resp = client.post("/api/command", json={"converge": [1.0, 0.0, 1.0]})
    assert resp.status_code == 409
    assert "no live run" in resp.json()["detail"]


def test_unrecognized_command_is_422_even_when_idle():
    with TestClient(build_app()) as client:
        resp = client.post("/api/command", json={"wibble": 1})
    assert resp.status_code == 422


def test_idle_stream_sends_status_heartbeats():
    with TestClient(build_app()) as client:
        with client.websocket_connect("/api/stream") as ws:
            msg = ws.receive_json()
    assert msg["type"] == "status"
    assert msg["run_status"] == "idle"
    assert msg["tick"] is None


# ---- Headless run registry ----


INLINE_QUICK = {
    "name": "inline_quick",
    "n_agents": 2,
    "duration": 60.0,
    "spawn": {"kind": "explicit", "positions": [[-1.0, 0.0, 1.0], [1.0, 0.0, 1.0]]},
    "script": [{"at_time": 0.0, "command": {"formation": {"shape": "line", "altitude": 1.0}}}],
}


def wait_for_run(client: TestClient, handle: str) -> dict:
    return poll_until(lambda: (lambda r: r if r["status"] != "running" else None)(
        client.get(f"/api/report/{handle}").json()
    ))


def test_inline_scenario_runs_to_a_report():
    with TestClient(build_app()) as client:
        resp = client.post("/api/scenario", json={"scenario": INLINE_QUICK})
        assert resp.status_code == 200
        handle = resp.json()["handle"]
        assert handle.startswith("run-")
        run = wait_for_run(client, handle)
    assert run["status"] == "done"
    assert run["error"] is None
    report = run["report"]
    assert report["scenario"] == "inline_quick"
    assert report["converged"] is True
    assert report["collisions"] == 0


def test_registry_scenario_by_name_with_overrides():
    with TestClient(build_app()) as client:
        resp = client.post("/api/scenario", json={"name": "shared_goal_n2", "duration": 5.0})
        handle = resp.json()["handle"]
        run = wait_for_run(client, handle)
    assert run["status"] == "done"
    assert run["report"]["converged"] is False


def test_structurally_impossible_run_resolves_to_error():
    with TestClient(build_app()) as client:
        resp = client.post("/api/scenario", json={"name": "swap_n10", "agents": 3})
        assert resp.status_code == 200
        run = wait_for_run(client, resp.json()["handle"])
    assert run["status"] == "error"
    assert run["report"] is None
    assert run["error"]["error"] == "NoValidMatching"


def test_unknown_run_handle_is_404():
    with TestClient(build_app()) as client:
        assert client.get("/api/report/run-999").status_code == 404


def test_unknown_scenario_name_is_404():
    with TestClient(build_app()) as client:
        assert client.post("/api/scenario", json={"name": "warp_n5"}).status_code == 404


def test_invalid_inline_scenario_is_422():
    with TestClient(build_app()) as client:
        resp = client.post("/api/scenario", json={"scenario": {"name": "x", "n_agents": 0}})
    assert resp.status_code == 422


def test_scenario_body_needs_name_or_document():
    with TestClient(build_app()) as client:
        assert client.post("/api/scenario", json={}).status_code == 422


# ---- Live session ----


def test_live_session_ticks_and_describes_itself():
    with TestClient(build_app(scenario=live_scenario())) as client:
        first = client.get("/api/session").json()
        poll_until(lambda: True if client.get("/api/session").json()["tick"] > first["tick"] else None)
        body = client.get("/api/session").json()
    assert body["run_status"] == "holding"
    assert body["scenario"] == "live_test"
    assert body["n_agents"] == 2
    assert body["current_plan"]["source"] == "hold"
    assert body["current_plan"]["accepted"] is True
    assert body["config"]["n_agents"] == 2


def test_command_adoption_reaches_the_stream():
    with TestClient(build_app(scenario=live_scenario())) as client:
        summary = client.post("/api/command", json={"converge": [1.0, 0.0, 1.5]}).json()
        assert summary["source"] == "oracle"
        assert summary["outcome"] == "ok"
        assert summary["accepted"] is True
        assert summary["rejection_reason"] is None
        assert summary["wall_s"] >= 0.0
        with client.websocket_connect("/api/stream") as ws:
            frame = next_frame(ws, want_source="oracle")
        assert frame["goals"] == [[1.0, 0.0, 1.5], [1.0, 0.0, 1.5]]
        assert len(frame["positions"]) == 2
        assert len(frame["speeds"]) == 2
        assert frame["run_status"] == "running"
        session = client.get("/api/session").json()
    assert session["run_status"] == "running"
    assert session["history"][-1]["command"] == {"converge": [1.0, 0.0, 1.5]}


def test_stream_ticks_are_strictly_increasing():
    with TestClient(build_app(scenario=live_scenario())) as client:
        with client.websocket_connect("/api/stream") as ws:
            ticks = [next_frame(ws)["tick"] for _ in range(5)]
    assert ticks == sorted(set(ticks))


def test_stream_rate_limit_halves_the_frame_cadence():
    """rate=10 against the 20 Hz loop delivers every second tick."""
    with TestClient(build_app(scenario=live_scenario())) as client:
        with client.websocket_connect("/api/stream?rate=10") as ws:
            ticks = [next_frame(ws)["tick"] for _ in range(5)]
    gaps = [b - a for a, b in zip(ticks, ticks[1:])]
    assert gaps == [2, 2, 2, 2]


def test_two_subscribers_see_identical_frames():
    with TestClient(build_app(scenario=live_scenario())) as client:
        with client.websocket_connect("/api/stream") as ws_a:
            with client.websocket_connect("/api/stream") as ws_b:
                frames_a = {f["tick"]: f for f in (next_frame(ws_a) for _ in range(6))}
                frames_b = {f["tick"]: f for f in (next_frame(ws_b) for _ in range(6))}
    common = sorted(set(frames_a) & set(frames_b))
    assert len(common) >= 2
    for tick in common:
        assert frames_a[tick] == frames_b[tick]


def test_fence_rejected_command_holds_the_swarm():
    with TestClient(build_app(scenario=live_scenario())) as client:
        summary = client.post("/api/command", json={"converge": [99.0, 0.0, 1.0]}).json()
        assert summary["outcome"] == "fence_rejected"
        assert summary["source"] == "hold"
        assert summary["accepted"] is True
        assert "outside fence" in summary["rejection_reason"]
        session = client.get("/api/session").json()
    assert session["run_status"] == "holding"


def test_text_command_needs_llm_mode():
    with TestClient(build_app(scenario=live_scenario())) as client:
        resp = client.post("/api/command", json={"text": "spread out"})
    assert resp.status_code == 422
    assert "llm planner" in resp.json()["detail"]


def test_odd_swap_live_resolves_to_malformed_hold():
    """Structural planner errors become hold summaries, not HTTP 500s."""
    with TestClient(build_app(scenario=live_scenario(n=3))) as client:
        summary = client.post("/api/command", json={"swap": True}).json()
    assert summary["outcome"] == "malformed"
    assert summary["source"] == "hold"
    assert "even number" in summary["rejection_reason"]


def test_newer_command_supersedes_in_flight_one():
    class SlowConverge:
        def __init__(self, delay_s: float) -> None:
            self.delay_s = delay_s

        def plan(self, snapshot, command):
            time.sleep(self.delay_s)
            point = Vec3.from_seq(command["converge"])
            plan = WaypointPlan(
                goals=(point,) * snapshot.n, source="oracle", command_text=None, accepted=True
            )
            return PlanOutcome(plan=plan, outcome="ok", latency=self.delay_s)

    app = build_app(scenario=live_scenario())
    with TestClient(app) as client:
        session = app.state.session
        session._oracle = SlowConverge(0.4)
        fut_a = session.submit({"converge": [1.0, 0.0, 1.0]})
        time.sleep(0.05)
        fut_b = session.submit({"converge": [2.0, 0.0, 1.0]})
        a = fut_a.result(timeout=5.0)
        b = fut_b.result(timeout=5.0)
        assert a["outcome"] == "cancelled"
        assert a["accepted"] is False
        assert b["outcome"] == "ok"
        assert session.plan.goals[0] == Vec3(2.0, 0.0, 1.0)
        history = client.get("/api/session").json()["history"]
    outcomes = [h["outcome"] for h in history]
    assert "cancelled" in outcomes
    assert "ok" in outcomes


def test_session_idle_error_type_is_exported():
    with pytest.raises(SessionIdle):
        app = build_app()
        app.state.session.submit({"swap": True})


# ---- Bearer token auth ----


def test_token_guards_http_and_stream(monkeypatch):
    monkeypatch.setenv(ENV_TOKEN, "sekrit")
    with TestClient(build_app(scenario=live_scenario())) as client:
        assert client.get("/api/session").status_code == 401
        assert client.get("/api/session", headers={"Authorization": "Bearer wrong"}).status_code == 401
        ok = client.get("/api/session", headers={"Authorization": "Bearer sekrit"})
        assert ok.status_code == 200

        with pytest.raises(WebSocketDisconnect) as e:
            with client.websocket_connect("/api/stream"):
                pass
        assert e.value.code == 4401

        with client.websocket_connect("/api/stream?token=sekrit") as ws:
            assert next_frame(ws)["type"] == "frame"
        with client.websocket_connect(
            "/api/stream", headers={"Authorization": "Bearer sekrit"}
        ) as ws:
            assert next_frame(ws)["type"] == "frame"


def test_no_token_means_open_access(monkeypatch):
    monkeypatch.delenv(ENV_TOKEN, raising=False)
    with TestClient(build_app()) as client:
        assert client.get("/api/session").status_code == 200
