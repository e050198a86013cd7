"""Joint EV charging-station placement and pricing over congested networks."""

from .costs import Design, FlowState, StrategyProfile
from .equilibrium import (
    EquilibriumResult,
    SolverSettings,
    brute_force_equilibrium,
    solve_equilibrium,
    wardrop_certificate,
)
from .errors import (
    ChargePlanError,
    InfeasibleError,
    NetworkParseError,
    NoRouteError,
    ValidationError,
)
from .network import (
    GlobalParams,
    Link,
    Network,
    Node,
    ODDemand,
    Scenario,
    load_network,
    load_scenario,
    penetration_rate,
)
from .harness import (
    ExperimentOutcome,
    ExperimentSpec,
    ReportRow,
    run_experiment,
)
from .paths import PathCatalog, build_catalog, build_extended_paths, enumerate_routes
from .planner import (
    PlannerSettings,
    PlanResult,
    RefinementSettings,
    baseline_placement_only,
    baseline_pricing_only,
    plan_joint,
    price_floor,
    resolve_pricing,
    round_and_fix,
    solve_background_equilibrium,
    solve_relaxed_placement,
    validate_plan,
)
from .reports import emit_reports, plan_result_to_dict, write_csv, write_summary
from .synthetic import (
    corridor_scenario,
    grid_scenario,
    ring_scenario,
    save_scenario,
    scalability_scenario,
    synthetic_scenarios,
)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
