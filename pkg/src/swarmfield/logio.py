"""JSONL run-log format: one header line, then plan and tick lines in order.

Layout, one JSON object per line:
  {"type": "header", "schema_version": 1, "scenario": ..., "config": {...}}
  {"type": "plan", "tick": ..., "source": ..., "goals": [...], ...}
  {"tick": ..., "sim_time": ..., "positions": [...], ...}   (untagged = tick)

Tick lines carry exactly the TickRecord fields. Floats are written in
shortest round-trip notation, so re-reading a log reproduces every value bit
for bit and a rewritten log is byte-identical.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Any, IO, Iterable

from .core import PlanEvent, SwarmfieldError, TickRecord

SCHEMA_VERSION = 1

_TICK_KEYS = {
    "tick", "sim_time", "positions", "commanded_velocities",
    "d_min", "potential", "active_plan_source", "escape_active",
}
_PLAN_KEYS = {
    "type", "tick", "source", "command_text", "outcome",
    "latency", "accepted", "rejection_reason", "goals",
}
_HEADER_KEYS = {"type", "schema_version", "scenario", "config"}


class SchemaMismatch(SwarmfieldError):
    """A log line does not match the schema; carries the 1-based line number."""

    def __init__(self, line_no: int, why: str) -> None:
        super().__init__(f"line {line_no}: {why}")
        self.line_no = line_no


def _dump(obj: dict[str, Any]) -> str:
    return json.dumps(obj, separators=(",", ":")) + "\n"


class LogWriter:
    """Streams one run's log to a text file handle."""

    def __init__(self, fh: IO[str]) -> None:
        self._fh = fh
        self._wrote_header = False

    def write_header(self, scenario: str, config: dict[str, Any]) -> None:
        if self._wrote_header:
            raise ValueError("header already written")
        self._fh.write(_dump({
            "type": "header",
            "schema_version": SCHEMA_VERSION,
            "scenario": scenario,
            "config": config,
        }))
        self._wrote_header = True

    def write_plan(self, event: PlanEvent) -> None:
        obj: dict[str, Any] = {"type": "plan"}
        obj.update(event.to_json_obj())
        self._fh.write(_dump(obj))

    def write_tick(self, record: TickRecord) -> None:
        self._fh.write(_dump(record.to_json_obj()))


@dataclass(frozen=True)
class ParsedLog:
    """A validated log: header fields plus the plan and tick series."""

    scenario: str
    config: dict[str, Any]
    plans: tuple[PlanEvent, ...]
    records: tuple[TickRecord, ...]


def read_log(lines: Iterable[str]) -> ParsedLog:
    """Parse and validate a run log.

    Args:
        lines: the log's lines (an open text file works).

    Raises:
        SchemaMismatch: first malformed line, with its line number: bad
            JSON, missing/unknown fields, wrong first line, out-of-order
            ticks, or an unsupported schema version.
    """
    header: dict[str, Any] | None = None
    plans: list[PlanEvent] = []
    records: list[TickRecord] = []
    last_tick: int | None = None

    for line_no, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line:
            raise SchemaMismatch(line_no, "blank line")
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as e:
            raise SchemaMismatch(line_no, f"invalid JSON: {e}") from e
        if not isinstance(obj, dict):
            raise SchemaMismatch(line_no, "line is not a JSON object")

        if header is None:
            if obj.get("type") != "header":
                raise SchemaMismatch(line_no, "first line must be the header")
            if set(obj) != _HEADER_KEYS:
                raise SchemaMismatch(line_no, f"header keys {sorted(obj)} != {sorted(_HEADER_KEYS)}")
            if obj["schema_version"] != SCHEMA_VERSION:
                raise SchemaMismatch(line_no, f"unsupported schema_version {obj['schema_version']!r}")
            header = obj
            continue

        if obj.get("type") == "plan":
            if set(obj) != _PLAN_KEYS:
                raise SchemaMismatch(line_no, f"plan keys {sorted(obj)} != {sorted(_PLAN_KEYS)}")
            try:
                plans.append(PlanEvent.from_json_obj(obj))
            except (KeyError, ValueError, TypeError) as e:
                raise SchemaMismatch(line_no, f"bad plan line: {e}") from e
            continue

        if "type" in obj:
            raise SchemaMismatch(line_no, f"unknown line type {obj['type']!r}")
        if set(obj) != _TICK_KEYS:
            raise SchemaMismatch(line_no, f"tick keys {sorted(obj)} != {sorted(_TICK_KEYS)}")
        try:
            rec = TickRecord.from_json_obj(obj)
        except (KeyError, ValueError, TypeError) as e:
            raise SchemaMismatch(line_no, f"bad tick line: {e}") from e
        if last_tick is not None and rec.tick <= last_tick:
            raise SchemaMismatch(line_no, f"tick {rec.tick} after tick {last_tick}")
        last_tick = rec.tick
        records.append(rec)

    if header is None:
        raise SchemaMismatch(1, "empty log")
    return ParsedLog(
        scenario=str(header["scenario"]),
        config=dict(header["config"]),
        plans=tuple(plans),
        records=tuple(records),
    )


def read_log_path(path: str) -> ParsedLog:
    with open(path, "r", encoding="utf-8") as fh:
        return read_log(fh)


__all__ = ["SCHEMA_VERSION", "SchemaMismatch", "LogWriter", "ParsedLog", "read_log", "read_log_path"]
