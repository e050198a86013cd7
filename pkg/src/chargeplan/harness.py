"""Experiment drivers: budget sweeps, sensitivity, resilience, generalisation.

Each driver returns plain report rows plus a summary dict; serialisation
lives in :mod:`chargeplan.reports`. Sweep points may evaluate concurrently,
but rows are always assembled in grid order so output is deterministic.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import networkx as nx
import numpy as np

from . import costs
from .costs import Design
from .equilibrium import solve_equilibrium
from .errors import ChargePlanError, InfeasibleError, ValidationError
from .network import (
    GlobalParams,
    ODDemand,
    Scenario,
    load_scenario,
    penetration_rate,
)
from .paths import build_catalog
from .planner import (
    PlannerSettings,
    baseline_placement_only,
    baseline_pricing_only,
    plan_joint,
    resolve_pricing,
    solve_background_equilibrium,
)

EXPERIMENT_KINDS = (
    "solve",
    "equilibrium",
    "sweep-budget",
    "sensitivity-mu",
    "sensitivity-alpha",
    "resilience",
    "generalise",
)

_SWEEP_KINDS = ("sweep-budget", "sensitivity-mu", "sensitivity-alpha")
SATURATION_TOL = 1e-3  # relative change below which the sweep counts as flat


@dataclass
class ExperimentSpec:
    """One experiment request: scenario, kind and sweep/failure inputs."""

    scenario: Scenario | str
    kind: str
    grid: tuple = ()
    failure_sets: tuple = ()
    out_dir: str | None = None
    seed: int = 0
    jobs: int = 1
    k_routes: int = 10
    subset_size: int = 8
    settings: PlannerSettings | None = None

    def __post_init__(self):
        if self.kind not in EXPERIMENT_KINDS:
            raise ValidationError(f"unknown experiment kind {self.kind!r}")
        self.grid = tuple(self.grid)
        if self.kind in _SWEEP_KINDS:
            if not self.grid:
                raise ValidationError(f"{self.kind} needs a non-empty grid")
            if list(self.grid) != sorted(self.grid):
                raise ValidationError("sweep grid must be sorted ascending")
        self.failure_sets = tuple(tuple(int(n) for n in fs) for fs in self.failure_sets)
        if self.jobs < 1:
            raise ValidationError("jobs must be >= 1")
        if self.subset_size < 1:
            raise ValidationError("candidate subset size must be >= 1")

    def resolve(self):
        if isinstance(self.scenario, Scenario):
            return self.scenario
        return load_scenario(self.scenario)

    def planner_settings(self):
        return self.settings or PlannerSettings(seed=self.seed)


@dataclass
class ReportRow:
    """One (sweep value, planner) result with its cost decomposition."""

    experiment: str
    param: str
    value: float
    planner: str
    theta: float
    travel: float
    queue: float
    charge: float
    total_chargers: float
    ev_avg_cost: float
    x: dict
    y: dict
    gap: float
    runtime: float
    feasible: bool
    converged: bool
    note: str = ""

    def __post_init__(self):
        if self.feasible and np.isfinite(self.theta):
            parts = self.travel + self.queue + self.charge
            if abs(parts - self.theta) > 1e-9 * max(1.0, abs(self.theta)):
                raise ValidationError(
                    "social cost components do not sum to the reported total"
                )


@dataclass
class ExperimentOutcome:
    """Rows plus summary for one experiment, with the artifacts to serialise."""

    spec: ExperimentSpec
    rows: list
    summary: dict
    results: dict = field(default_factory=dict)
    exit_code: int = 0


def ev_average_cost(result, catalog, params):
    """Expected cost (travel + queue + charge) per charging EV driver."""
    total_ev = float(np.sum(catalog.ev_demand))
    if total_ev <= 0:
        return float("nan")
    flows = result.equilibrium.flows
    profile = result.equilibrium.profile
    lam = params.time_value
    per_path = (
        lam * costs.path_times(catalog, flows)
        + lam * costs.queue_times(catalog, flows, result.design, params)
        + result.design.y[catalog.path_station_ix]
    )
    weighted = catalog.path_weight * profile.ev
    mask = weighted > 0
    return float(np.dot(weighted[mask], per_path[mask]) / total_ev)


def _result_row(experiment, param, value, planner, result, runtime, catalog, params,
                note=""):
    net = catalog.network
    travel, queue, charge = result.components
    x = {
        int(node.id): float(xi)
        for node, xi in zip(net.nodes, result.design.x)
        if xi > 0
    }
    y = {
        int(node.id): float(yi)
        for node, yi in zip(net.nodes, result.design.y)
        if result.design.x[net.node_index(node.id)] > 0
    }
    return ReportRow(
        experiment=experiment,
        param=param,
        value=float(value),
        planner=planner,
        theta=float(result.social_cost),
        travel=float(travel),
        queue=float(queue),
        charge=float(charge),
        total_chargers=float(np.sum(result.design.x)),
        ev_avg_cost=ev_average_cost(result, catalog, params),
        x=x,
        y=y,
        gap=float(result.equilibrium.relative_gap),
        runtime=float(runtime),
        feasible=result.report.feasible,
        converged=bool(result.converged),
        note=note,
    )


def _failure_row(experiment, param, value, planner, exc, runtime):
    nan = float("nan")
    return ReportRow(
        experiment=experiment,
        param=param,
        value=float(value),
        planner=planner,
        theta=nan,
        travel=nan,
        queue=nan,
        charge=nan,
        total_chargers=nan,
        ev_avg_cost=nan,
        x={},
        y={},
        gap=nan,
        runtime=float(runtime),
        feasible=False,
        converged=False,
        note=f"infeasible: {exc}",
    )


def _run_tasks(tasks, jobs):
    """Evaluate callables, possibly concurrently; results keep task order."""
    if jobs <= 1 or len(tasks) <= 1:
        return [task() for task in tasks]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        futures = [pool.submit(task) for task in tasks]
        return [f.result() for f in futures]


_PLANNERS = (("joint", plan_joint), ("price-only", baseline_pricing_only), ("place-only", baseline_placement_only))


def _timed_plan(fn, catalog, params, settings):
    start = time.perf_counter()
    try:
        result = fn(catalog, params, settings)
        return result, None, time.perf_counter() - start
    except (InfeasibleError, ChargePlanError) as exc:
        return None, exc, time.perf_counter() - start


def sweep_budget(spec):
    """Run all three planners across the budget grid and detect saturation."""
    scenario = spec.resolve()
    settings = spec.planner_settings()
    catalog = build_catalog(
        scenario.network,
        scenario.demands,
        k=spec.k_routes,
        candidate_stations=scenario.candidate_stations,
    )

    # Baselines are independent across budgets; the joint planner runs the
    # grid in ascending order, warm-starting from (and never discarding) the
    # incumbent design, which stays feasible as the budget grows.
    baseline_points = [
        (budget, name, fn) for budget in spec.grid for name, fn in _PLANNERS[1:]
    ]
    baseline_tasks = [
        (lambda b=budget, f=fn: _timed_plan(
            f, catalog, scenario.params.with_budget(int(b)), settings))
        for budget, _, fn in baseline_points
    ]
    baseline_outputs = _run_tasks(baseline_tasks, spec.jobs)

    jo_outputs = []
    incumbent = None
    for budget in spec.grid:
        params = scenario.params.with_budget(int(budget))
        warm = (incumbent.design.x,) if incumbent is not None else ()
        start = time.perf_counter()
        try:
            result = plan_joint(catalog, params, settings, warm_designs=warm)
        except (InfeasibleError, ChargePlanError) as exc:
            jo_outputs.append((None, exc, time.perf_counter() - start))
            continue
        runtime = time.perf_counter() - start
        if (
            incumbent is not None
            and incumbent.report.feasible
            and result.social_cost > incumbent.social_cost
        ):
            result = incumbent
        if result.report.feasible:
            incumbent = result
        jo_outputs.append((result, None, runtime))

    rows, results = [], {}
    for budget, (result, exc, runtime) in zip(spec.grid, jo_outputs):
        if result is None:
            rows.append(_failure_row("sweep-budget", "budget", budget, "joint", exc, runtime))
            continue
        rows.append(
            _result_row("sweep-budget", "budget", budget, "joint", result, runtime,
                        catalog, scenario.params.with_budget(int(budget)))
        )
        results[f"joint-B{int(budget)}"] = result
    for (budget, name, _), (result, exc, runtime) in zip(baseline_points, baseline_outputs):
        if result is None:
            rows.append(_failure_row("sweep-budget", "budget", budget, name, exc, runtime))
            continue
        rows.append(
            _result_row("sweep-budget", "budget", budget, name, result, runtime,
                        catalog, scenario.params.with_budget(int(budget)))
        )
        results[f"{name}-B{int(budget)}"] = result

    jo_series = [
        (row.value, row.theta)
        for row in rows
        if row.planner == "joint" and row.feasible
    ]
    saturation = _saturation_budget(jo_series)
    summary = {
        "experiment": "sweep-budget",
        "grid": [float(b) for b in spec.grid],
        "saturation_budget": saturation,
        "saturation_tolerance": SATURATION_TOL,
    }
    return ExperimentOutcome(spec, rows, summary, results, _exit_code(rows))


def _saturation_budget(series):
    """Smallest budget beyond which the cost curve stays flat (< 0.1%)."""
    if len(series) < 2:
        return None
    for i in range(len(series) - 1):
        flat = all(
            abs(series[j + 1][1] - series[j][1]) <= SATURATION_TOL * abs(series[j][1])
            for j in range(i, len(series) - 1)
        )
        if flat:
            return float(series[i][0])
    return None


def _scaled_demands(demands, alpha):
    """Same total flows, EV share set to ``alpha`` on every O-D pair."""
    return tuple(
        ODDemand(
            d.origin,
            d.destination,
            ev_flow=alpha * d.total_flow,
            ncd_flow=(1 - alpha) * d.total_flow,
        )
        for d in demands
    )


def sensitivity(spec):
    """Sweep the service rate or the EV penetration and re-plan at each value."""
    scenario = spec.resolve()
    settings = spec.planner_settings()
    which = "mu" if spec.kind == "sensitivity-mu" else "alpha"
    base = scenario.params

    def point(value):
        if which == "mu":
            params = GlobalParams(
                base.time_value, float(value), base.profit_margin, base.budget
            )
            catalog = build_catalog(
                scenario.network, scenario.demands, k=spec.k_routes,
                candidate_stations=scenario.candidate_stations,
            )
        else:
            if not (0 < value < 1):
                raise ValidationError("penetration values must be in (0, 1)")
            params = base
            catalog = build_catalog(
                scenario.network,
                _scaled_demands(scenario.demands, float(value)),
                k=spec.k_routes,
                candidate_stations=scenario.candidate_stations,
            )
        result, exc, runtime = _timed_plan(plan_joint, catalog, params, settings)
        return catalog, params, result, exc, runtime

    outputs = _run_tasks([lambda v=v: point(v) for v in spec.grid], spec.jobs)
    rows, results = [], {}
    for value, (catalog, params, result, exc, runtime) in zip(spec.grid, outputs):
        if result is None:
            rows.append(_failure_row(spec.kind, which, value, "joint", exc, runtime))
            continue
        rows.append(
            _result_row(spec.kind, which, value, "joint", result, runtime, catalog, params)
        )
        results[f"joint-{which}{value:g}"] = result

    chargers = [
        (row.value, row.total_chargers) for row in rows if row.feasible
    ]
    slope = None
    if which == "alpha" and len(chargers) >= 2:
        values = np.array([v for v, _ in chargers])
        counts = np.array([c for _, c in chargers])
        # Chargers per 1% penetration, least squares over the sweep.
        slope = float(np.polyfit(values, counts, 1)[0] / 100.0)
    summary = {
        "experiment": spec.kind,
        "grid": [float(v) for v in spec.grid],
        "chargers": {f"{v:g}": c for v, c in chargers},
        "chargers_per_percent_alpha": slope,
    }
    return ExperimentOutcome(spec, rows, summary, results, _exit_code(rows))


def _design_cost(catalog, params, design, initial=None, solver=None):
    """Full driver re-equilibration at a frozen design; returns (result tuple)."""
    eq = solve_equilibrium(catalog, design, params, settings=solver, initial=initial)
    theta = costs.social_cost(eq.profile, catalog, design, params, eq.flows)
    components = costs.social_cost_components(
        eq.profile, catalog, design, params, eq.flows
    )
    return eq, theta, components


def resilience(spec):
    """Compare fixed versus re-priced operation under station failures."""
    scenario = spec.resolve()
    settings = spec.planner_settings()
    net = scenario.network
    for fs in spec.failure_sets:
        for node in fs:
            if not net.has_node(node):
                raise ValidationError(f"failure set references unknown node {node}")
    catalog = build_catalog(
        net, scenario.demands, k=spec.k_routes,
        candidate_stations=scenario.candidate_stations,
    )
    base = plan_joint(catalog, scenario.params, settings)
    ncd_eq = solve_background_equilibrium(catalog, scenario.params, settings.solver)
    q0 = ncd_eq.profile.ncd

    rows = [
        _result_row("resilience", "failure_set", -1, "baseline", base, 0.0,
                    catalog, scenario.params, note="no failures")
    ]
    results = {"baseline": base}
    savings = {}
    for index, failed in enumerate(spec.failure_sets):
        note = "failed=" + ",".join(str(n) for n in failed)
        x_f = base.design.x.copy()
        y_f = base.design.y.copy()
        for node in failed:
            i = net.node_index(node)
            x_f[i] = 0.0
            y_f[i] = 0.0
        start = time.perf_counter()
        try:
            fixed_design = Design(x_f, y_f)
            eq_fixed, theta_fixed, comp_fixed = _design_cost(
                catalog, scenario.params, fixed_design,
                initial=base.equilibrium.profile, solver=settings.solver,
            )
        except InfeasibleError as exc:
            runtime = time.perf_counter() - start
            rows.append(_failure_row("resilience", "failure_set", index, "fixed", exc, runtime))
            rows.append(_failure_row("resilience", "failure_set", index, "adaptive", exc, runtime))
            continue
        runtime_fixed = time.perf_counter() - start
        rows.append(
            _plain_row("resilience", "failure_set", index, "fixed", fixed_design,
                       theta_fixed, comp_fixed, eq_fixed, runtime_fixed, catalog,
                       scenario.params, note)
        )

        # Adaptive operation re-runs the pricing stage on the survivors; the
        # unchanged prices stay in the candidate set, so it can never lose to
        # the fixed scheme beyond solver tolerance.
        start = time.perf_counter()
        adaptive_design, theta_adaptive = fixed_design, theta_fixed
        comp_adaptive, eq_adaptive = comp_fixed, eq_fixed
        try:
            pricing = resolve_pricing(
                catalog, scenario.params, q0, x_f, settings,
                warm_ev=eq_fixed.profile.ev,
            )
            repriced = Design(pricing.x.astype(float), pricing.y)
            eq_r, theta_r, comp_r = _design_cost(
                catalog, scenario.params, repriced,
                initial=pricing.profile, solver=settings.solver,
            )
            if theta_r < theta_adaptive:
                adaptive_design, theta_adaptive = repriced, theta_r
                comp_adaptive, eq_adaptive = comp_r, eq_r
        except InfeasibleError:
            pass
        runtime_adaptive = time.perf_counter() - start
        rows.append(
            _plain_row("resilience", "failure_set", index, "adaptive",
                       adaptive_design, theta_adaptive, comp_adaptive, eq_adaptive,
                       runtime_adaptive, catalog, scenario.params, note)
        )
        savings[note] = (theta_fixed - theta_adaptive) / theta_fixed

    summary = {
        "experiment": "resilience",
        "failure_sets": [list(fs) for fs in spec.failure_sets],
        "relative_savings": savings,
        "max_saving": max(savings.values()) if savings else 0.0,
    }
    return ExperimentOutcome(spec, rows, summary, results, _exit_code(rows))


def _plain_row(experiment, param, value, planner, design, theta, components, eq,
               runtime, catalog, params, note=""):
    net = catalog.network
    travel, queue, charge = components
    open_ix = np.flatnonzero(design.x > 0)

    class _Shim:
        pass

    shim = _Shim()
    shim.design = design
    shim.equilibrium = eq
    return ReportRow(
        experiment=experiment,
        param=param,
        value=float(value),
        planner=planner,
        theta=float(theta),
        travel=float(travel),
        queue=float(queue),
        charge=float(charge),
        total_chargers=float(np.sum(design.x)),
        ev_avg_cost=ev_average_cost(shim, catalog, params),
        x={int(net.nodes[i].id): float(design.x[i]) for i in open_ix},
        y={int(net.nodes[i].id): float(design.y[i]) for i in open_ix},
        gap=float(eq.relative_gap),
        runtime=float(runtime),
        feasible=True,
        converged=bool(eq.converged),
        note=note,
    )


def demand_weighted_betweenness(network, demands):
    """Node score: total O-D flow whose free-flow shortest path visits it."""
    g = nx.DiGraph()
    g.add_nodes_from(n.id for n in network.nodes)
    for link in network.links:
        # Parallel links collapse to the cheapest, which is all shortest
        # paths ever use.
        u, v, d = link.tail, link.head, link.distance
        if not g.has_edge(u, v) or g[u][v]["weight"] > d:
            g.add_edge(u, v, weight=d)
    score = {n.id: 0.0 for n in network.nodes}
    for od in demands:
        path = nx.shortest_path(g, od.origin, od.destination, weight="weight")
        for node in path:
            score[node] += od.total_flow
    return score


def generalise(spec):
    """Iterative candidate-subset search over every node of the network."""
    scenario = spec.resolve()
    settings = spec.planner_settings()
    net = scenario.network
    m = min(spec.subset_size, net.n_nodes)
    score = demand_weighted_betweenness(net, scenario.demands)
    order = sorted((n.id for n in net.nodes), key=lambda nid: (-score[nid], nid))

    subset = list(order[:m])
    visited = list(subset)
    best = None
    best_theta = float("inf")
    rows = []
    iteration = 0
    warm = ()
    while True:
        iteration += 1
        catalog = build_catalog(
            net, scenario.demands, k=spec.k_routes, candidate_stations=subset
        )
        result, exc, runtime = _timed_plan(plan_joint, catalog, scenario.params, settings)
        note = "candidates=" + ",".join(str(n) for n in sorted(subset))
        if result is None:
            rows.append(
                _failure_row("generalise", "iteration", iteration, "joint", exc, runtime)
            )
            kept = []
        else:
            rows.append(
                _result_row("generalise", "iteration", iteration, "joint", result,
                            runtime, catalog, scenario.params, note=note)
            )
            if result.report.feasible and result.social_cost < best_theta:
                best, best_theta = result, result.social_cost
            kept = [
                nid for nid in subset
                if result.design.x[net.node_index(nid)] > 0
            ]
        unvisited = [nid for nid in order if nid not in visited]
        if not unvisited:
            break
        # Swap out every zero-charger candidate, and retire the weakest
        # placements beyond half the subset so each round still brings in
        # fresh nodes and the loop visits the whole network quickly.
        if result is not None and len(kept) > m // 2:
            kept.sort(
                key=lambda nid: (-result.design.x[net.node_index(nid)], nid)
            )
            kept = kept[: m // 2]
        fresh = unvisited[: m - len(kept)]
        subset = kept + fresh
        visited.extend(fresh)

    if best is None:
        raise InfeasibleError("no candidate subset produced a feasible plan")
    summary = {
        "experiment": "generalise",
        "iterations": iteration,
        "nodes_evaluated": len(visited),
        "best_theta": best_theta,
        "best_candidates": sorted(
            int(n.id) for n, xi in zip(net.nodes, best.design.x) if xi > 0
        ),
    }
    return ExperimentOutcome(spec, rows, summary, {"best": best}, _exit_code(rows))


def solve(spec):
    """Single-scenario run of the joint planner and both baselines."""
    scenario = spec.resolve()
    settings = spec.planner_settings()
    catalog = build_catalog(
        scenario.network, scenario.demands, k=spec.k_routes,
        candidate_stations=scenario.candidate_stations,
    )
    budget = float(scenario.params.budget)
    tasks = [
        (lambda f=fn: _timed_plan(f, catalog, scenario.params, settings))
        for _, fn in _PLANNERS
    ]
    outputs = _run_tasks(tasks, spec.jobs)
    rows, results = [], {}
    for (name, _), (result, exc, runtime) in zip(_PLANNERS, outputs):
        if result is None:
            rows.append(_failure_row("solve", "budget", budget, name, exc, runtime))
            continue
        rows.append(
            _result_row("solve", "budget", budget, name, result, runtime,
                        catalog, scenario.params)
        )
        results[name] = result
    summary = {"experiment": "solve", "alpha": penetration_rate(scenario.demands)}
    joint_row = next((r for r in rows if r.planner == "joint" and r.feasible), None)
    if joint_row is not None:
        for row in rows:
            if row.planner != "joint" and row.feasible and row.theta > 0:
                summary[f"gain_vs_{row.planner}"] = (row.theta - joint_row.theta) / row.theta
    return ExperimentOutcome(spec, rows, summary, results, _exit_code(rows))


def equilibrium(spec):
    """Background-traffic equilibrium of the road game alone."""
    scenario = spec.resolve()
    settings = spec.planner_settings()
    catalog = build_catalog(
        scenario.network, scenario.demands, k=spec.k_routes,
        candidate_stations=scenario.candidate_stations,
    )
    start = time.perf_counter()
    eq = solve_background_equilibrium(catalog, scenario.params, settings.solver)
    runtime = time.perf_counter() - start
    design = Design.zeros(scenario.network)
    profile = eq.profile
    theta = costs.social_cost(profile, catalog, design, scenario.params, eq.flows)
    components = costs.social_cost_components(
        profile, catalog, design, scenario.params, eq.flows
    )
    rows = [
        _plain_row("equilibrium", "budget", 0.0, "ncd", design, theta, components,
                   eq, runtime, catalog, scenario.params, note="road game only")
    ]
    summary = {
        "experiment": "equilibrium",
        "relative_gap": float(eq.relative_gap),
        "iterations": int(eq.iterations),
        "converged": bool(eq.converged),
        "link_flows": [float(v) for v in eq.flows.total_link],
    }
    outcome = ExperimentOutcome(spec, rows, summary, {}, 0 if eq.converged else 3)
    return outcome


_DISPATCH = {
    "solve": solve,
    "equilibrium": equilibrium,
    "sweep-budget": sweep_budget,
    "sensitivity-mu": sensitivity,
    "sensitivity-alpha": sensitivity,
    "resilience": resilience,
    "generalise": generalise,
}


def _exit_code(rows):
    if rows and all(not row.feasible for row in rows):
        return 2
    if any(not row.converged for row in rows if row.feasible):
        return 3
    return 0


def run_experiment(spec):
    """Dispatch one :class:`ExperimentSpec` to its driver."""
    try:
        return _DISPATCH[spec.kind](spec)
    except InfeasibleError as exc:
        return ExperimentOutcome(
            spec, [], {"experiment": spec.kind, "error": str(exc)}, {}, 2
        )
