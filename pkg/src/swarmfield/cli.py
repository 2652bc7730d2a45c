"""Headless command line: run scenarios, replay logs, serve the gateway.

Exit codes are a total function of the outcome so shell scripts can gate on
them: 0 = run converged with zero collision ticks, 1 = run finished but
failed that bar, 2 = configuration or input error (a machine-readable JSON
reason is printed to stderr).
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from typing import Any

from .core import SwarmfieldError
from .engine import RunOutcome, run_scenario
from .logio import LogWriter, SchemaMismatch, read_log_path
from .metrics import metrics_csv
from .planner import LlmClient, LlmEndpoint, LlmPlanner, OraclePlanner
from .scenarios import (
    InvalidScenario,
    UnknownScenario,
    load_scenario_file,
    parse_scenario,
    scenario_document,
    scenario_names,
)

EXIT_OK = 0
EXIT_RUN_FAILED = 1
EXIT_CONFIG_ERROR = 2


def _fail(kind: str, message: str) -> int:
    sys.stderr.write(json.dumps({"error": kind, "message": message}) + "\n")
    return EXIT_CONFIG_ERROR


def _load_document(name_or_path: str) -> dict[str, Any]:
    """Registry name first; anything else is treated as a scenario file."""
    if name_or_path in scenario_names():
        return scenario_document(name_or_path)
    try:
        with open(name_or_path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as e:
        raise UnknownScenario(
            f"{name_or_path!r} is neither a registry scenario ({', '.join(scenario_names())}) "
            f"nor a readable file: {e}"
        ) from e
    except json.JSONDecodeError as e:
        raise InvalidScenario(f"{name_or_path} is not valid JSON: {e}") from e


def _build_scenario(args: argparse.Namespace):
    doc = _load_document(args.scenario)
    if args.agents is not None:
        doc["n_agents"] = args.agents
    if args.seed is not None:
        doc["seed"] = args.seed
    if args.duration is not None:
        doc["duration"] = args.duration
    if args.no_escape:
        doc.setdefault("params", {})["escape_enabled"] = False
    return parse_scenario(doc)


def _build_planner(args: argparse.Namespace, scenario) -> OraclePlanner | LlmPlanner:
    if args.planner == "oracle":
        return OraclePlanner(fence=scenario.config.fence, params=scenario.config.params)
    # Fail before simulating when the endpoint is not configured.
    endpoint = LlmEndpoint.from_env()
    return LlmPlanner(
        LlmClient(endpoint),
        fence=scenario.config.fence,
        lenient=args.lenient_parse,
    )


def _print_summary(outcome: RunOutcome) -> None:
    r = outcome.report
    print(f"scenario            {r.scenario}")
    print(f"agents              {r.n_agents}")
    print(f"ticks               {r.ticks}")
    print(f"converged           {r.converged}"
          + (f" at {r.convergence_time} s" if r.convergence_time is not None else ""))
    print(f"stalled             {r.stalled}"
          + (f" at {r.stall_time} s" if r.stall_time is not None else ""))
    print(f"collisions          {r.collisions}")
    print(f"d_min_global        {r.d_min_global}")
    print(f"speed_max_global    {r.speed_max_global}")
    print(f"apf_activations     {r.apf_activations}")
    print(f"escape_events       {r.escape_events}")
    if outcome.timing is not None:
        t = outcome.timing
        print(f"on_time_ticks       {t.on_time}/{t.ticks} ({t.on_time_fraction:.1%},"
              f" max lateness {t.max_lateness_s * 1000:.1f} ms)")


def _report_exit(report) -> int:
    return EXIT_OK if report.converged and report.collisions == 0 else EXIT_RUN_FAILED


def _cmd_run(args: argparse.Namespace) -> int:
    try:
        scenario = _build_scenario(args)
        planner = _build_planner(args, scenario)
    except SwarmfieldError as e:
        return _fail(type(e).__name__, str(e))

    out_dir = None
    log_fh = None
    try:
        if args.out is not None:
            os.makedirs(args.out, exist_ok=True)
            out_dir = args.out
            log_fh = open(os.path.join(out_dir, "log.jsonl"), "w", encoding="utf-8")
        writer = LogWriter(log_fh) if log_fh is not None else None
        try:
            outcome = run_scenario(
                scenario,
                planner,
                log_writer=writer,
                realtime=True if args.realtime else None,
            )
        except SwarmfieldError as e:
            return _fail(type(e).__name__, str(e))
    finally:
        if log_fh is not None:
            log_fh.close()

    if out_dir is not None:
        with open(os.path.join(out_dir, "report.json"), "w", encoding="utf-8") as fh:
            fh.write(outcome.report.to_json())
        with open(os.path.join(out_dir, "metrics.csv"), "w", encoding="utf-8") as fh:
            fh.write(metrics_csv(outcome.recorder.records))
    _print_summary(outcome)
    return _report_exit(outcome.report)


def _replayed_report(path: str):
    from .engine import replay_report

    return replay_report(read_log_path(path))


def _cmd_replay(args: argparse.Namespace) -> int:
    try:
        report = _replayed_report(args.log)
    except (SchemaMismatch, OSError, SwarmfieldError) as e:
        return _fail(type(e).__name__, str(e))
    text = report.to_json()
    if args.out is not None:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return _report_exit(report)


def _cmd_report(args: argparse.Namespace) -> int:
    try:
        report = _replayed_report(args.log)
    except (SchemaMismatch, OSError, SwarmfieldError) as e:
        return _fail(type(e).__name__, str(e))
    print(f"scenario            {report.scenario}")
    print(f"agents              {report.n_agents}")
    print(f"ticks               {report.ticks}")
    print(f"converged           {report.converged}"
          + (f" at {report.convergence_time} s" if report.convergence_time is not None else ""))
    print(f"stalled             {report.stalled}"
          + (f" at {report.stall_time} s" if report.stall_time is not None else ""))
    print(f"collisions          {report.collisions}")
    print(f"d_min_global        {report.d_min_global}")
    print(f"speed_max_global    {report.speed_max_global}")
    print(f"apf_activations     {report.apf_activations}")
    print(f"escape_events       {report.escape_events}")
    print(f"plans               {len(report.planner_latencies)}")
    return _report_exit(report)


def _cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    from .gateway import build_app

    try:
        scenario = _build_scenario(args) if args.scenario is not None else None
        if args.planner == "llm":
            LlmEndpoint.from_env()
    except SwarmfieldError as e:
        return _fail(type(e).__name__, str(e))
    app = build_app(
        scenario=scenario,
        planner_mode=args.planner,
        lenient_parse=args.lenient_parse,
    )
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return EXIT_OK


def _add_scenario_flags(p: argparse.ArgumentParser, *, scenario_required: bool) -> None:
    p.add_argument("--scenario", required=scenario_required,
                   help="registry scenario name or path to a scenario JSON file")
    p.add_argument("--agents", type=int, default=None, help="override agent count")
    p.add_argument("--seed", type=int, default=None, help="override RNG seed")
    p.add_argument("--duration", type=float, default=None, help="override duration (sim seconds)")
    p.add_argument("--planner", choices=("oracle", "llm"), default="oracle",
                   help="plan source for script commands (default oracle)")
    p.add_argument("--lenient-parse", action="store_true",
                   help="llm mode: strip one markdown fence and prose lines before parsing")
    p.add_argument("--no-escape", action="store_true", help="disable the deadlock escape nudge")


def build_arg_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="swarmfield",
        description="Deterministic swarm waypoint simulation with an APF safety filter.",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)

    run_p = sub.add_parser("run", help="run one scenario headlessly and emit artifacts")
    _add_scenario_flags(run_p, scenario_required=True)
    run_p.add_argument("--realtime", action="store_true",
                       help="pace the loop at 20 Hz wall clock (default: as fast as possible)")
    run_p.add_argument("--out", default=None, metavar="DIR",
                       help="write log.jsonl, report.json, metrics.csv into DIR")
    run_p.set_defaults(func=_cmd_run)

    replay_p = sub.add_parser("replay", help="recompute a run report from its JSONL log")
    replay_p.add_argument("log", help="path to log.jsonl")
    replay_p.add_argument("--out", default=None, metavar="FILE", help="write the report JSON here")
    replay_p.set_defaults(func=_cmd_replay)

    report_p = sub.add_parser("report", help="print human-readable aggregates from a JSONL log")
    report_p.add_argument("log", help="path to log.jsonl")
    report_p.set_defaults(func=_cmd_report)

    serve_p = sub.add_parser("serve", help="host the HTTP/WS gateway")
    _add_scenario_flags(serve_p, scenario_required=False)
    serve_p.add_argument("--host", default="127.0.0.1")
    serve_p.add_argument("--port", type=int, default=8000)
    serve_p.set_defaults(func=_cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_arg_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
