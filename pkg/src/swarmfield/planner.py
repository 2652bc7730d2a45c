"""Goal planning: prompt rendering, response parsing, validation, planners.

Two plan sources exist. The oracle planner computes goals directly from
structured commands (formation / swap / converge) and is deterministic. The
llm planner renders a prompt, queries a chat-completion endpoint over HTTP,
and parses the reply under a strict grammar. Either way, every goal set
passes the same fence validation before adoption; anything that fails on the
llm path resolves to a position-hold plan, never an exception.
"""
from __future__ import annotations

import json
import math
import os
import re
import time
from dataclasses import dataclass
from typing import Any

import httpx

from .core import (
    GeoFence,
    ControllerParams,
    SwarmfieldError,
    SwarmSnapshot,
    Vec3,
    WaypointPlan,
    hold_plan,
)
from .engine import PlanOutcome
from .formations import FormationSpec, assign_goals, plan_formation, swap_targets

ENV_ENDPOINT = "SWARMFIELD_LLM_ENDPOINT"
ENV_MODEL = "SWARMFIELD_LLM_MODEL"
ENV_API_KEY = "SWARMFIELD_LLM_API_KEY"
ENV_TIMEOUT = "SWARMFIELD_LLM_TIMEOUT_S"

# Planner replies routinely took tens of seconds in practice, with outliers
# past 100 s; the default timeout leaves room for those before giving up.
DEFAULT_TIMEOUT_S = 120.0


class ParseRejected(SwarmfieldError):
    """Planner response does not match the waypoint-matrix grammar."""


class PromptTooLarge(SwarmfieldError):
    """Rendered prompt exceeds the configured byte budget."""


class PlannerConfigError(SwarmfieldError):
    """Endpoint configuration missing or unusable."""


class UnsupportedCommand(SwarmfieldError):
    """This plan source cannot interpret the given command."""


# ---- Prompt rendering ----


@dataclass(frozen=True)
class PromptConfig:
    """Prompt knobs. z_floor is the altitude floor stated to the model; it
    is deliberately separate from (and above) the fence's hard z_min."""

    z_floor: float = 0.5
    max_prompt_bytes: int = 16384

    def __post_init__(self) -> None:
        if not (math.isfinite(self.z_floor) and self.z_floor > 0):
            raise ValueError(f"z_floor must be positive, got {self.z_floor!r}")
        if self.max_prompt_bytes < 1:
            raise ValueError("max_prompt_bytes must be positive")


def _positions_matrix(snapshot: SwarmSnapshot) -> str:
    return repr([[a.position.x, a.position.y, a.position.z] for a in snapshot.agents])


def render_messages(snapshot: SwarmSnapshot, command_text: str, config: PromptConfig) -> tuple[str, str]:
    """(system, user) message pair for the chat endpoint."""
    n = snapshot.n
    system = (
        f"You are a drone swarm controller for {n} drones. "
        f"The coordinate system is X=forward, Y=left, Z=up. "
        f"Generate target [x, y, z] coordinates to fulfill the command. "
        f"Output only a valid python list of {n} lists. "
        f"Keep Z >= {config.z_floor!r}."
    )
    user = f"Current Drone Positions:\n{_positions_matrix(snapshot)}\n\nUser Command:\n{command_text}"
    return system, user


def build_prompt(snapshot: SwarmSnapshot, command_text: str, config: PromptConfig | None = None) -> str:
    """Full rendered prompt: system instruction, current positions, command.

    Raises:
        PromptTooLarge: rendered text exceeds config.max_prompt_bytes.
    """
    config = config if config is not None else PromptConfig()
    system, user = render_messages(snapshot, command_text, config)
    prompt = f"{system}\n\n{user}"
    size = len(prompt.encode("utf-8"))
    if size > config.max_prompt_bytes:
        raise PromptTooLarge(f"prompt is {size} bytes, budget is {config.max_prompt_bytes}")
    return prompt


# ---- Response parsing ----

_NUM_RE = re.compile(r"[+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?")
_FENCE_RE = re.compile(r"```[a-zA-Z0-9_+-]*[ \t]*\r?\n?(.*?)```", re.DOTALL)


class _Scanner:
    """Cursor over the response text; whitespace-insensitive between tokens."""

    def __init__(self, text: str) -> None:
        self.text = text
        self.pos = 0

    def _skip_ws(self) -> None:
        while self.pos < len(self.text) and self.text[self.pos] in " \t\r\n":
            self.pos += 1

    def peek(self) -> str | None:
        self._skip_ws()
        return self.text[self.pos] if self.pos < len(self.text) else None

    def expect(self, ch: str, context: str) -> None:
        got = self.peek()
        if got != ch:
            shown = "end of input" if got is None else repr(got)
            raise ParseRejected(f"expected {ch!r} {context} at offset {self.pos}, found {shown}")
        self.pos += 1

    def number(self, context: str) -> float:
        self._skip_ws()
        m = _NUM_RE.match(self.text, self.pos)
        if m is None:
            raise ParseRejected(f"expected a number {context} at offset {self.pos}")
        self.pos = m.end()
        value = float(m.group())
        if not math.isfinite(value):
            raise ParseRejected(f"non-finite number {m.group()!r} {context}")
        return value

    def at_end(self) -> bool:
        self._skip_ws()
        return self.pos >= len(self.text)


def _strip_wrapping(raw: str) -> str:
    """Lenient pre-pass: unwrap one fenced code block, drop prose lines
    before the first line opening a bracket and after the last line closing
    one. The strict grammar still decides acceptance."""
    text = raw
    m = _FENCE_RE.search(text)
    if m is not None:
        text = m.group(1)
    lines = text.splitlines()
    start = None
    end = None
    for i, line in enumerate(lines):
        if start is None and line.lstrip().startswith("["):
            start = i
        if line.rstrip().endswith("]"):
            end = i
    if start is not None and end is not None and start <= end:
        text = "\n".join(lines[start:end + 1])
    return text


def parse_waypoint_matrix(raw: str, n: int, lenient: bool = False) -> list[Vec3]:
    """Parse a planner reply as exactly one N x 3 numeric matrix.

    The grammar accepts `[[x, y, z], ...]` with plain decimal or exponent
    notation and arbitrary whitespace, and nothing else: no trailing text,
    no comments, no expressions, no quotes, no non-finite values. Lenient
    mode first strips one markdown code fence and surrounding prose lines,
    then applies the same grammar.

    Raises:
        ParseRejected: with a reason naming the offending position.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    text = _strip_wrapping(raw) if lenient else raw
    s = _Scanner(text)
    s.expect("[", "to open the matrix")
    rows: list[Vec3] = []
    for i in range(n):
        if i > 0:
            if s.peek() == "]":
                raise ParseRejected(f"expected {n} rows, found {i}")
            s.expect(",", f"between rows {i - 1} and {i}")
        s.expect("[", f"to open row {i}")
        x = s.number(f"in row {i}")
        s.expect(",", f"after row {i} x")
        y = s.number(f"in row {i}")
        s.expect(",", f"after row {i} y")
        z = s.number(f"in row {i}")
        if s.peek() == ",":
            raise ParseRejected(f"row {i} has more than 3 numbers")
        s.expect("]", f"to close row {i}")
        rows.append(Vec3(x, y, z))
    if s.peek() == ",":
        raise ParseRejected(f"expected {n} rows, found more")
    s.expect("]", "to close the matrix")
    if not s.at_end():
        raise ParseRejected(f"trailing content at offset {s.pos}")
    return rows


# ---- Validation ----


def validate_plan(
    goals: list[Vec3],
    snapshot: SwarmSnapshot,
    fence: GeoFence,
    source: str = "llm",
    command_text: str | None = None,
) -> WaypointPlan:
    """Accept a goal set only if every goal lies inside the fence.

    Any violation rejects the whole plan and returns the position-hold
    fallback carrying the reason; partial adoption would tear formations
    apart mid-air.
    """
    if len(goals) != snapshot.n:
        raise ValueError(f"{len(goals)} goals for {snapshot.n} agents")
    for i, g in enumerate(goals):
        why = fence.violation(g)
        if why is not None:
            return hold_plan(snapshot, command_text, rejection_reason=f"goal {i} outside fence: {why}")
    return WaypointPlan(goals=tuple(goals), source=source, command_text=command_text, accepted=True)


# ---- HTTP client ----


@dataclass(frozen=True)
class LlmEndpoint:
    """Where and how to reach the chat-completion service."""

    url: str
    model: str
    api_key: str | None = None
    timeout_s: float = DEFAULT_TIMEOUT_S

    @staticmethod
    def from_env() -> LlmEndpoint:
        """Read SWARMFIELD_LLM_* variables; endpoint and model are required.

        Raises:
            PlannerConfigError: a required variable is missing or invalid.
        """
        url = os.environ.get(ENV_ENDPOINT)
        model = os.environ.get(ENV_MODEL)
        if not url or not model:
            missing = [name for name, v in ((ENV_ENDPOINT, url), (ENV_MODEL, model)) if not v]
            raise PlannerConfigError(f"missing environment variables: {', '.join(missing)}")
        timeout_raw = os.environ.get(ENV_TIMEOUT)
        timeout_s = DEFAULT_TIMEOUT_S
        if timeout_raw:
            try:
                timeout_s = float(timeout_raw)
            except ValueError as e:
                raise PlannerConfigError(f"{ENV_TIMEOUT} must be a number, got {timeout_raw!r}") from e
            if not (math.isfinite(timeout_s) and timeout_s > 0):
                raise PlannerConfigError(f"{ENV_TIMEOUT} must be positive, got {timeout_raw!r}")
        return LlmEndpoint(url=url, model=model, api_key=os.environ.get(ENV_API_KEY), timeout_s=timeout_s)


class LlmClient:
    """Minimal chat-completion client over httpx.

    `transport` is injectable so tests can run against canned responses
    without a network.
    """

    def __init__(self, endpoint: LlmEndpoint, transport: httpx.BaseTransport | None = None) -> None:
        self.endpoint = endpoint
        headers = {}
        if endpoint.api_key:
            headers["Authorization"] = f"Bearer {endpoint.api_key}"
        self._client = httpx.Client(timeout=endpoint.timeout_s, headers=headers, transport=transport)

    def build_request_body(self, system: str, user: str) -> dict[str, Any]:
        return {
            "model": self.endpoint.model,
            "messages": [
                {"role": "system", "content": system},
                {"role": "user", "content": user},
            ],
            "temperature": 0.0,
        }

    def complete(self, system: str, user: str) -> str:
        """One chat completion; returns the reply text.

        Raises httpx transport errors as-is and ValueError for a response
        whose JSON shape is not a chat completion.
        """
        resp = self._client.post(self.endpoint.url, json=self.build_request_body(system, user))
        resp.raise_for_status()
        try:
            data = resp.json()
            content = data["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError, ValueError) as e:
            raise ValueError(f"response is not a chat completion: {e}") from e
        if not isinstance(content, str):
            raise ValueError("completion content is not a string")
        return content

    def close(self) -> None:
        self._client.close()

    def __enter__(self) -> LlmClient:
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def request_plan(
    client: LlmClient,
    snapshot: SwarmSnapshot,
    command_text: str,
    fence: GeoFence,
    prompt_config: PromptConfig | None = None,
    lenient: bool = False,
) -> PlanOutcome:
    """Full llm planning round: render, query, parse, validate.

    Never raises for transport, timeout, parse, or fence problems; those
    become hold plans with outcome timeout / malformed / fence_rejected.
    Only an oversized prompt raises (PromptTooLarge), since sending it would
    be a config bug, not a runtime failure.
    """
    config = prompt_config if prompt_config is not None else PromptConfig()
    system, user = render_messages(snapshot, command_text, config)
    size = len(system.encode("utf-8")) + len(user.encode("utf-8"))
    if size > config.max_prompt_bytes:
        raise PromptTooLarge(f"prompt is {size} bytes, budget is {config.max_prompt_bytes}")

    t0 = time.perf_counter()
    raw: str | None = None
    try:
        raw = client.complete(system, user)
    except httpx.TimeoutException:
        latency = time.perf_counter() - t0
        plan = hold_plan(snapshot, command_text, rejection_reason=f"no reply within {client.endpoint.timeout_s} s")
        return PlanOutcome(plan=plan, outcome="timeout", latency=latency, raw_response=None)
    except (httpx.HTTPError, ValueError) as e:
        latency = time.perf_counter() - t0
        plan = hold_plan(snapshot, command_text, rejection_reason=f"unusable response: {e}")
        return PlanOutcome(plan=plan, outcome="malformed", latency=latency, raw_response=None)
    latency = time.perf_counter() - t0

    try:
        goals = parse_waypoint_matrix(raw, snapshot.n, lenient=lenient)
    except ParseRejected as e:
        plan = hold_plan(snapshot, command_text, rejection_reason=str(e))
        return PlanOutcome(plan=plan, outcome="malformed", latency=latency, raw_response=raw)

    plan = validate_plan(goals, snapshot, fence, source="llm", command_text=command_text)
    outcome = "ok" if plan.rejection_reason is None else "fence_rejected"
    return PlanOutcome(plan=plan, outcome=outcome, latency=latency, raw_response=raw)


# ---- Plan sources ----


def _canonical_command(command: dict[str, Any]) -> str:
    return json.dumps(command, separators=(",", ":"), sort_keys=True)


COMMAND_KINDS = ("formation", "swap", "converge", "text")


def command_kind(command: dict[str, Any]) -> str:
    """Which of the command forms this dict is.

    Raises:
        UnsupportedCommand: not exactly one recognized form.
    """
    if not isinstance(command, dict):
        raise UnsupportedCommand(f"command must be an object, got {type(command).__name__}")
    kinds = [k for k in COMMAND_KINDS if k in command]
    if len(kinds) != 1 or len(command) != 1:
        raise UnsupportedCommand(f"command must have exactly one of {COMMAND_KINDS}, got {sorted(command)}")
    return kinds[0]


class OraclePlanner:
    """Deterministic plan source for structured commands.

    Structural impossibilities (bad shape counts, odd-count swaps, geometry
    outside the fence) raise; an out-of-fence converge point is an ordinary
    rejection and resolves to a hold plan like any validated request.
    """

    def __init__(self, fence: GeoFence, params: ControllerParams) -> None:
        self.fence = fence
        self.params = params

    def plan(self, snapshot: SwarmSnapshot, command: dict[str, Any]) -> PlanOutcome:
        kind = command_kind(command)
        canon = _canonical_command(command)
        if kind == "text":
            raise UnsupportedCommand("free-text commands need the llm planner")
        if kind == "formation":
            try:
                spec = FormationSpec.from_dict(command["formation"])
            except (ValueError, TypeError) as e:
                raise UnsupportedCommand(f"bad formation: {e}") from e
            shaped = plan_formation(spec, snapshot.n, self.fence, r_min=self.params.r_min)
            goals = assign_goals(shaped.goals, snapshot)
            plan = WaypointPlan(goals=goals, source="oracle", command_text=canon, accepted=True)
            return PlanOutcome(plan=plan, outcome="ok", latency=0.0)
        if kind == "swap":
            if command["swap"] is not True:
                raise UnsupportedCommand('swap command must be {"swap": true}')
            swapped = swap_targets(snapshot, self.fence)
            plan = WaypointPlan(goals=swapped.goals, source="oracle", command_text=canon, accepted=True)
            return PlanOutcome(plan=plan, outcome="ok", latency=0.0)
        # converge
        try:
            point = Vec3.from_seq(command["converge"])
        except (ValueError, TypeError) as e:
            raise UnsupportedCommand(f"bad converge point: {e}") from e
        goals = [point] * snapshot.n
        plan = validate_plan(goals, snapshot, self.fence, source="oracle", command_text=canon)
        outcome = "ok" if plan.rejection_reason is None else "fence_rejected"
        return PlanOutcome(plan=plan, outcome=outcome, latency=0.0)


class LlmPlanner:
    """Plan source that forwards free-text commands to the llm pipeline."""

    def __init__(
        self,
        client: LlmClient,
        fence: GeoFence,
        prompt_config: PromptConfig | None = None,
        lenient: bool = False,
    ) -> None:
        self.client = client
        self.fence = fence
        self.prompt_config = prompt_config if prompt_config is not None else PromptConfig()
        self.lenient = lenient

    def plan(self, snapshot: SwarmSnapshot, command: dict[str, Any]) -> PlanOutcome:
        kind = command_kind(command)
        if kind != "text":
            raise UnsupportedCommand(f"llm planner handles text commands only, got {kind!r}")
        text = command["text"]
        if not isinstance(text, str) or not text.strip():
            raise UnsupportedCommand("text command must be a non-empty string")
        return request_plan(
            self.client,
            snapshot,
            text,
            self.fence,
            prompt_config=self.prompt_config,
            lenient=self.lenient,
        )


__all__ = [
    "ENV_ENDPOINT",
    "ENV_MODEL",
    "ENV_API_KEY",
    "ENV_TIMEOUT",
    "DEFAULT_TIMEOUT_S",
    "ParseRejected",
    "PromptTooLarge",
    "PlannerConfigError",
    "UnsupportedCommand",
    "PromptConfig",
    "render_messages",
    "build_prompt",
    "parse_waypoint_matrix",
    "validate_plan",
    "LlmEndpoint",
    "LlmClient",
    "request_plan",
    "COMMAND_KINDS",
    "command_kind",
    "OraclePlanner",
    "LlmPlanner",
]
