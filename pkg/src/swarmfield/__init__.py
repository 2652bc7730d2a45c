"""Deterministic multi-drone swarm sandbox.

A potential-field safety filter turns per-agent waypoint goals into bounded
velocity commands; goals come from deterministic formation planners or a
language-model endpoint, always validated against a geofence with a
position-hold fallback. Runs are reproducible tick for tick and log to JSONL
for byte-exact replay.
"""
from .core import (
    AgentState,
    ControllerParams,
    GeoFence,
    PlanEvent,
    SwarmfieldError,
    SwarmSnapshot,
    TickRecord,
    Vec3,
    WaypointPlan,
    distance,
    hold_plan,
    unit_away,
)
from .controller import (
    StallTracker,
    VelocityCommandSet,
    attractive_velocity,
    composite_potential,
    control_step,
    repulsive_velocity,
    saturate,
    total_velocity,
)
from .engine import (
    InfeasibleSpawn,
    PlanOutcome,
    RunOutcome,
    Scenario,
    ScriptCommand,
    SimConfig,
    SpawnSpec,
    TimingStats,
    convergence_check,
    integrate_tick,
    replay_report,
    run_scenario,
    spawn_layout,
)
from .formations import (
    FenceViolation,
    FormationSpec,
    NoValidMatching,
    ShapeInfeasible,
    assign_goals,
    plan_formation,
    swap_targets,
)
from .logio import LogWriter, ParsedLog, SchemaMismatch, read_log, read_log_path
from .metrics import (
    EmptyRun,
    MetricsRecorder,
    OutOfOrderTick,
    RunReport,
    metrics_csv,
    min_pairwise_distance,
    summarize_run,
)
from .planner import (
    LlmClient,
    LlmEndpoint,
    LlmPlanner,
    OraclePlanner,
    ParseRejected,
    PlannerConfigError,
    PromptConfig,
    PromptTooLarge,
    UnsupportedCommand,
    build_prompt,
    parse_waypoint_matrix,
    request_plan,
    validate_plan,
)
from .scenarios import (
    InvalidScenario,
    UnknownScenario,
    get_scenario,
    load_scenario_file,
    parse_scenario,
    scenario_names,
)

__version__ = "0.1.0"
