"""HTTP/WS front door for live operation.

One live session per process: a wall-clock 20 Hz control loop that keeps
executing its current plan while operator commands are planned off-loop.
Headless scenario runs (identical to the CLI path) execute in background
threads and are queried by handle.

Endpoints: POST /api/command, POST /api/scenario, GET /api/report/{handle},
GET /api/session, WS /api/stream. Setting the SWARMFIELD_TOKEN environment
variable requires `Authorization: Bearer <token>` on every HTTP call and
either that header or `?token=` on the stream socket.
"""
from __future__ import annotations

import asyncio
import concurrent.futures
import itertools
import os
import queue
import threading
import time
import uuid
from contextlib import asynccontextmanager
from typing import Any

from fastapi import Depends, FastAPI, HTTPException, Query, Request, WebSocket, WebSocketDisconnect
from fastapi.responses import JSONResponse

from .controller import StallTracker, control_step
from .core import SwarmSnapshot, SwarmfieldError, WaypointPlan, hold_plan
from .engine import PlanOutcome, Scenario, integrate_tick, run_scenario, spawn_layout
from .metrics import min_pairwise_distance
from .planner import (
    LlmClient,
    LlmEndpoint,
    LlmPlanner,
    OraclePlanner,
    UnsupportedCommand,
    command_kind,
)
from .scenarios import InvalidScenario, UnknownScenario, get_scenario, parse_scenario

ENV_TOKEN = "SWARMFIELD_TOKEN"
FRAME_QUEUE_SIZE = 64
IDLE_FRAME_PERIOD_S = 1.0
HISTORY_LIMIT = 256


def _speeds(commands) -> list[float]:
    return [v.norm() for v in commands.velocities]


class _Subscriber:
    """Bounded frame mailbox; the loop drops frames instead of blocking."""

    def __init__(self) -> None:
        self.frames: queue.Queue[dict[str, Any]] = queue.Queue(maxsize=FRAME_QUEUE_SIZE)
        self.dropped = 0

    def offer(self, frame: dict[str, Any]) -> None:
        try:
            self.frames.put_nowait(frame)
        except queue.Full:
            self.dropped += 1


class SwarmSession:
    """The single live simulation this process operates.

    The control thread owns all simulation state; every other thread reads
    snapshots and enqueues work under the lock. Planner calls run in worker
    threads so a slow planner never stalls a tick; only the newest pending
    command is adopted (older in-flight requests resolve as cancelled).
    """

    def __init__(self, planner_mode: str = "oracle", lenient_parse: bool = False) -> None:
        self.session_id = uuid.uuid4().hex
        self.planner_mode = planner_mode
        self.lenient_parse = lenient_parse
        self._lock = threading.Lock()
        self._thread: threading.Thread | None = None
        self._stop = threading.Event()
        self._subscribers: list[_Subscriber] = []
        self._pending_token: int | None = None
        self._token_counter = itertools.count(1)
        self.history: list[dict[str, Any]] = []
        self.scenario: Scenario | None = None
        self.snapshot: SwarmSnapshot | None = None
        self.plan: WaypointPlan | None = None
        self.run_status = "idle"
        self._last_commands = None
        self._oracle: OraclePlanner | None = None
        self._llm: LlmPlanner | None = None

    # ---- lifecycle ----

    def start(self, scenario: Scenario) -> None:
        with self._lock:
            if self._thread is not None and self._thread.is_alive():
                raise RuntimeError("session already running")
            self.scenario = scenario
            self.snapshot = spawn_layout(scenario.config)
            self.plan = hold_plan(self.snapshot)
            self.run_status = "holding"
            self._last_commands = None
            self._stop.clear()
            self._oracle = OraclePlanner(fence=scenario.config.fence, params=scenario.config.params)
            self._llm = None
            if self.planner_mode == "llm":
                self._llm = LlmPlanner(
                    LlmClient(LlmEndpoint.from_env()),
                    fence=scenario.config.fence,
                    lenient=self.lenient_parse,
                )
            self._thread = threading.Thread(target=self._run_loop, name="swarm-loop", daemon=True)
            self._thread.start()

    def stop(self) -> None:
        self._stop.set()
        thread = self._thread
        if thread is not None:
            thread.join(timeout=5.0)

    # ---- streaming ----

    def subscribe(self) -> _Subscriber:
        sub = _Subscriber()
        with self._lock:
            self._subscribers.append(sub)
        return sub

    def unsubscribe(self, sub: _Subscriber) -> None:
        with self._lock:
            if sub in self._subscribers:
                self._subscribers.remove(sub)

    def status_frame(self) -> dict[str, Any]:
        with self._lock:
            return {
                "type": "status",
                "run_status": self.run_status,
                "scenario": self.scenario.name if self.scenario else None,
                "tick": self.snapshot.tick if self.snapshot else None,
                "sim_time": self.snapshot.sim_time if self.snapshot else None,
            }

    # ---- commands ----

    def submit(self, command: dict[str, Any]) -> concurrent.futures.Future:
        """Route one operator command to the planner; single in-flight rule.

        The returned future resolves to the attempt summary. A newer command
        supersedes an older in-flight one, which then resolves as cancelled.
        """
        kind = command_kind(command)
        with self._lock:
            if self.run_status == "idle" or self.snapshot is None:
                raise SessionIdle("no live run to command")
            if kind == "text" and self._llm is None:
                raise UnsupportedCommand(
                    "free-text commands need the llm planner (serve with --planner llm)"
                )
            planner = self._llm if kind == "text" else self._oracle
            token = next(self._token_counter)
            self._pending_token = token
            snapshot = self.snapshot
        fut: concurrent.futures.Future = concurrent.futures.Future()
        worker = threading.Thread(
            target=self._plan_worker, args=(planner, snapshot, command, token, fut), daemon=True
        )
        worker.start()
        return fut

    def _plan_worker(self, planner, snapshot, command, token, fut) -> None:
        started = time.perf_counter()
        try:
            result: PlanOutcome = planner.plan(snapshot, command)
        except SwarmfieldError as e:
            # Structural impossibilities surface as hold summaries, never 500s.
            held = hold_plan(snapshot, rejection_reason=str(e))
            result = PlanOutcome(plan=held, outcome="malformed", latency=0.0)
        summary = {
            "source": result.plan.source,
            "outcome": result.outcome,
            "accepted": result.plan.accepted,
            "rejection_reason": result.plan.rejection_reason,
            "latency": result.latency,
            "wall_s": time.perf_counter() - started,
        }
        with self._lock:
            if self._pending_token != token:
                summary = dict(summary, outcome="cancelled", accepted=False)
                self._record_history(summary, command)
                fut.set_result(summary)
                return
            self._pending_token = None
            if self.run_status != "idle" and self.snapshot is not None:
                self.plan = result.plan
                self.run_status = "running" if result.plan.rejection_reason is None else "holding"
            self._record_history(summary, command)
        fut.set_result(summary)

    def _record_history(self, summary: dict[str, Any], command: dict[str, Any]) -> None:
        entry = dict(summary)
        entry["command"] = command
        entry["tick"] = self.snapshot.tick if self.snapshot else None
        self.history.append(entry)
        del self.history[:-HISTORY_LIMIT]

    # ---- the loop ----

    def _run_loop(self) -> None:
        assert self.scenario is not None
        config = self.scenario.config
        params = config.params
        script = sorted(self.scenario.script, key=lambda c: c.at_time)
        script_idx = 0
        tracker = StallTracker(config.n_agents)
        max_ticks = int(round(config.duration / params.dt))
        last_plan: WaypointPlan | None = None
        t0 = time.perf_counter()
        while not self._stop.is_set():
            with self._lock:
                snapshot = self.snapshot
                plan = self.plan
            assert snapshot is not None and plan is not None
            if plan is not last_plan:
                tracker.reset()
                last_plan = plan
            if snapshot.tick >= max_ticks:
                break
            # Scripted commands fire at their sim time, exactly like the
            # headless path; operator commands overwrite them at will.
            while script_idx < len(script) and script[script_idx].at_time <= snapshot.sim_time:
                try:
                    self.submit(script[script_idx].command)
                except (SessionIdle, UnsupportedCommand):
                    pass
                script_idx += 1
            commands = control_step(snapshot, plan, params, tracker)
            new_snapshot = integrate_tick(snapshot, commands, params.dt)
            frame = self._make_frame(new_snapshot, plan, commands)
            with self._lock:
                self.snapshot = new_snapshot
                self._last_commands = commands
                subs = list(self._subscribers)
            for sub in subs:
                sub.offer(frame)
            target = t0 + new_snapshot.tick * params.dt
            delay = target - time.perf_counter()
            if delay > 0:
                self._stop.wait(delay)
        with self._lock:
            self.run_status = "idle"

    def _make_frame(self, snapshot: SwarmSnapshot, plan: WaypointPlan, commands) -> dict[str, Any]:
        return {
            "type": "frame",
            "tick": snapshot.tick,
            "sim_time": snapshot.sim_time,
            "positions": [a.position.as_list() for a in snapshot.agents],
            "goals": [g.as_list() for g in plan.goals],
            "d_min": min_pairwise_distance(snapshot),
            "speeds": _speeds(commands),
            "plan_source": plan.source,
            "run_status": self.run_status,
        }

    def describe(self) -> dict[str, Any]:
        with self._lock:
            plan = self.plan
            return {
                "session_id": self.session_id,
                "mode": self.planner_mode,
                "run_status": self.run_status,
                "scenario": self.scenario.name if self.scenario else None,
                "n_agents": self.scenario.config.n_agents if self.scenario else None,
                "tick": self.snapshot.tick if self.snapshot else None,
                "sim_time": self.snapshot.sim_time if self.snapshot else None,
                "config": self.scenario.config.to_dict() if self.scenario else None,
                "current_plan": None if plan is None else {
                    "source": plan.source,
                    "accepted": plan.accepted,
                    "command_text": plan.command_text,
                    "rejection_reason": plan.rejection_reason,
                },
                "history": list(self.history),
            }


class SessionIdle(SwarmfieldError):
    """Command arrived with no live run to apply it to."""


class _RunRegistry:
    """Background headless runs, queried by opaque handle."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._runs: dict[str, dict[str, Any]] = {}
        self._counter = itertools.count(1)

    def start(self, scenario: Scenario) -> str:
        handle = f"run-{next(self._counter)}"
        with self._lock:
            self._runs[handle] = {"status": "running", "report": None, "error": None}
        thread = threading.Thread(target=self._execute, args=(handle, scenario), daemon=True)
        thread.start()
        return handle

    def _execute(self, handle: str, scenario: Scenario) -> None:
        try:
            planner = OraclePlanner(fence=scenario.config.fence, params=scenario.config.params)
            outcome = run_scenario(scenario, planner)
            with self._lock:
                self._runs[handle] = {
                    "status": "done",
                    "report": outcome.report.to_json_obj(),
                    "error": None,
                }
        except SwarmfieldError as e:
            with self._lock:
                self._runs[handle] = {
                    "status": "error",
                    "report": None,
                    "error": {"error": type(e).__name__, "message": str(e)},
                }

    def get(self, handle: str) -> dict[str, Any] | None:
        with self._lock:
            run = self._runs.get(handle)
            return dict(run) if run is not None else None


def build_app(
    scenario: Scenario | None = None,
    planner_mode: str = "oracle",
    lenient_parse: bool = False,
) -> FastAPI:
    """Application factory; one live SwarmSession per app."""
    token = os.environ.get(ENV_TOKEN) or None
    session = SwarmSession(planner_mode=planner_mode, lenient_parse=lenient_parse)
    registry = _RunRegistry()

    @asynccontextmanager
    async def lifespan(_: FastAPI):
        if scenario is not None:
            session.start(scenario)
        yield
        session.stop()

    app = FastAPI(title="swarmfield gateway", lifespan=lifespan)
    app.state.session = session
    app.state.registry = registry

    async def auth_dep(request: Request) -> None:
        if token is None:
            return
        header = request.headers.get("authorization", "")
        if header != f"Bearer {token}":
            raise HTTPException(status_code=401, detail="missing or wrong bearer token")

    @app.get("/api/session", dependencies=[Depends(auth_dep)])
    async def get_session() -> dict[str, Any]:
        return session.describe()

    @app.post("/api/command", dependencies=[Depends(auth_dep)])
    async def post_command(body: dict[str, Any]) -> dict[str, Any]:
        try:
            fut = session.submit(body)
        except SessionIdle as e:
            raise HTTPException(status_code=409, detail=str(e))
        except UnsupportedCommand as e:
            raise HTTPException(status_code=422, detail=str(e))
        return await asyncio.wrap_future(fut)

    @app.post("/api/scenario", dependencies=[Depends(auth_dep)])
    async def post_scenario(body: dict[str, Any]) -> dict[str, Any]:
        try:
            if "name" in body:
                sc = get_scenario(
                    body["name"],
                    n_agents=body.get("agents"),
                    seed=body.get("seed"),
                    duration=body.get("duration"),
                )
            elif "scenario" in body:
                sc = parse_scenario(body["scenario"])
            else:
                raise HTTPException(status_code=422, detail="body needs 'name' or 'scenario'")
        except UnknownScenario as e:
            raise HTTPException(status_code=404, detail=str(e))
        except InvalidScenario as e:
            raise HTTPException(status_code=422, detail=str(e))
        handle = registry.start(sc)
        return {"handle": handle}

    @app.get("/api/report/{handle}", dependencies=[Depends(auth_dep)])
    async def get_report(handle: str) -> JSONResponse:
        run = registry.get(handle)
        if run is None:
            raise HTTPException(status_code=404, detail=f"unknown run handle {handle!r}")
        return JSONResponse(run)

    @app.websocket("/api/stream")
    async def stream(ws: WebSocket, rate: float = Query(default=20.0, gt=0.0)) -> None:
        if token is not None:
            supplied = ws.headers.get("authorization", "")
            if supplied != f"Bearer {token}" and ws.query_params.get("token") != token:
                await ws.close(code=4401)
                return
        await ws.accept()
        sub = session.subscribe()
        interval = 1.0 / rate
        last_sent = float("-inf")
        loop = asyncio.get_running_loop()
        try:
            while True:
                try:
                    frame = await loop.run_in_executor(
                        None, lambda: sub.frames.get(timeout=IDLE_FRAME_PERIOD_S)
                    )
                except queue.Empty:
                    await ws.send_json(session.status_frame())
                    continue
                if frame["sim_time"] - last_sent < interval - 1e-9:
                    continue
                last_sent = frame["sim_time"]
                await ws.send_json(frame)
        except (WebSocketDisconnect, RuntimeError):
            pass
        finally:
            session.unsubscribe(sub)

    return app
