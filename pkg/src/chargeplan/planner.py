"""Charger placement and pricing optimisation with driver-equilibrium response.

The planner works in two levels: driver behaviour is decomposed into a
road-only assignment plus an EV assignment against frozen background traffic
(iterated when EV penetration is high), and charger counts are optimised in a
continuous relaxation, rounded by largest remainders, then prices are
re-optimised at the fixed integer placement. Prices default to the smallest
value satisfying the per-station profitability constraint (the price floor)
and are only raised above it when that lowers the social cost.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import costs
from .costs import Design, StrategyProfile
from .equilibrium import EquilibriumResult, SolverSettings, solve_equilibrium
from .errors import ChargePlanError, InfeasibleError, ValidationError
from .network import penetration_rate

class UnboundedFloorError(ChargePlanError):
    """Price floor is unbounded: an open station with zero arrivals."""


def price_floor(electricity_price, site_cost, x, arrivals, params):
    """Smallest price covering costs with the required margin at given flows."""
    if arrivals <= 0:
        if x > 0 and site_cost > 0:
            raise UnboundedFloorError(
                "open station with zero arrivals has no finite price floor"
            )
        return params.profit_margin * electricity_price
    return params.profit_margin * (electricity_price + x * site_cost / arrivals)


def round_and_fix(x_star, budget):
    """Largest-remainder rounding: floor, then top up the biggest fractions.

    The result sums to the integer part of the relaxed sum; fraction ties are
    broken in favour of the lower node index.
    """
    x_star = np.asarray(x_star, dtype=float)
    if np.any(x_star < 0):
        raise ValidationError("relaxed charger counts must be non-negative")
    floors = np.floor(x_star)
    fractions = x_star - floors
    increments = int(np.floor(np.sum(x_star) - np.sum(floors) + 1e-9))
    order = sorted(range(len(x_star)), key=lambda i: (-fractions[i], i))
    result = floors.astype(int)
    for i in order[:increments]:
        result[i] += 1
    if result.sum() > budget + 1e-9:
        raise ValidationError("rounded placement exceeds budget")
    return result


@dataclass
class RefinementSettings:
    """Controls for the high-penetration alternating refinement loop."""

    alpha_threshold: float = 0.2
    max_rounds: int = 20
    flow_tolerance: float = 1e-4

    def __post_init__(self):
        if not (0 < self.alpha_threshold <= 1):
            raise ValidationError("alpha threshold must be in (0, 1]")
        if self.max_rounds < 1:
            raise ValidationError("refinement rounds must be >= 1")


@dataclass
class PlannerSettings:
    """Controls for the outer placement/pricing search."""

    restarts: int = 3
    max_sweeps: int = 12
    fd_delta: float = 0.1
    improvement_tol: float = 1e-5
    eps_open: float = 1e-3
    arrival_close_tol: float = 1e-6
    price_rounds: int = 60
    price_tol: float = 1e-6
    markup_sweeps: int = 1
    initial_step: float = 4.0
    min_step: float = 0.25
    max_coord_trials: int = 6
    seed: int = 0
    solver: SolverSettings = field(default_factory=SolverSettings)


@dataclass
class ConstraintReport:
    """Independent re-evaluation of the planning constraints."""

    budget: int
    total_chargers: float
    profit_gaps: np.ndarray
    violations: list

    @property
    def budget_slack(self):
        return self.budget - self.total_chargers

    @property
    def feasible(self):
        return not self.violations


@dataclass
class PlanResult:
    """Final placement, prices, induced equilibrium and audit data."""

    design: Design
    equilibrium: EquilibriumResult
    social_cost: float
    components: tuple
    report: ConstraintReport
    provenance: str
    relaxed_social_cost: float | None = None
    converged: bool = True


@dataclass
class _Evaluation:
    theta: float
    x: np.ndarray
    y: np.ndarray
    equilibrium: EquilibriumResult
    profile: StrategyProfile


def validate_plan(result, catalog, params, tol=1e-6):
    """Re-check every planning constraint from the raw plan outputs."""
    net = catalog.network
    x, y = result.design.x, result.design.y
    violations = []
    if np.any(x < 0) or np.any(np.abs(x - np.round(x)) > 1e-9):
        violations.append("charger counts are not non-negative integers")
    if np.any(y < 0):
        violations.append("negative prices")
    total = float(np.sum(x))
    if total > params.budget + 1e-9:
        violations.append(f"budget exceeded: {total} > {params.budget}")

    profile = result.equilibrium.profile
    try:
        profile.validate(catalog)
    except ValidationError as exc:
        violations.append(f"invalid strategy profile: {exc}")

    flows = costs.aggregate_flows(profile, catalog)
    gaps = costs.station_profit_gaps(net, flows, result.design, params)
    for i in range(net.n_nodes):
        if x[i] > 0:
            revenue = flows.arrivals[i] * y[i]
            if gaps[i] < -tol * max(revenue, 1.0):
                violations.append(
                    f"node {net.nodes[i].id}: profit gap {gaps[i]:.6g} negative"
                )
    theta = costs.social_cost(profile, catalog, result.design, params, flows)
    if abs(theta - result.social_cost) > 1e-9 * max(1.0, abs(theta)):
        violations.append("stored social cost does not match recomputation")
    return ConstraintReport(
        budget=params.budget,
        total_chargers=total,
        profit_gaps=gaps,
        violations=violations,
    )


def solve_background_equilibrium(catalog, params, settings=None):
    """Road-only Wardrop assignment of the background (NCD) traffic."""
    if float(np.sum(catalog.ncd_demand)) <= 0:
        raise InfeasibleError("no NCD demand to assign")
    initial = StrategyProfile(
        np.zeros(catalog.n_paths), StrategyProfile.uniform(catalog).ncd
    )
    design = Design.zeros(catalog.network)
    return solve_equilibrium(
        catalog, design, params, settings=settings, initial=initial, optimize_ev=False
    )



class _EvContext:
    """Shared state for PA-EV evaluations against frozen NCD background.

    Evaluations warm-start both the EV assignment and the price-floor fixed
    point from the previous call, which keeps the outer coordinate search
    cheap.
    """

    def __init__(self, catalog, params, q0, settings):
        self.catalog = catalog
        self.params = params
        self.q0 = np.asarray(q0, dtype=float)
        self.settings = settings
        self.e = catalog.network.electricity_prices()
        self.t = catalog.network.site_costs()
        self.warm_ev = None
        self.warm_y = None
        self.cache = {}

    def _solve(self, x, y):
        initial_ev = self.warm_ev
        if initial_ev is None:
            initial_ev = StrategyProfile.uniform(
                self.catalog, x[self.catalog.path_station_ix] > 0
            ).ev
        initial = StrategyProfile(initial_ev.copy(), self.q0.copy())
        eq = solve_equilibrium(
            self.catalog,
            Design(x, y),
            self.params,
            settings=self.settings.solver,
            initial=initial,
            optimize_ncd=False,
        )
        self.warm_ev = eq.profile.ev.copy()
        return eq

    def evaluate(self, x, markup=None, fixed_price=None):
        """Social cost at placement ``x`` with floor-pinned (or fixed) prices.

        In floor mode, open stations whose equilibrium arrivals vanish are
        closed (effective charger count zeroed) instead of being priced; the
        returned evaluation carries the effective design.
        """
        key = (
            tuple(np.round(x, 9)),
            tuple(np.round(markup, 9)) if markup is not None else None,
            tuple(np.round(fixed_price, 9)) if fixed_price is not None else None,
        )
        if key in self.cache:
            return self.cache[key]

        params = self.params
        x_eff = np.asarray(x, dtype=float).copy()
        if fixed_price is not None:
            y = np.where(x_eff > 0, fixed_price, 0.0)
            eq = self._solve(x_eff, y)
        else:
            y = np.where(x_eff > 0, params.profit_margin * self.e, 0.0)
            if markup is not None:
                y = y + np.where(x_eff > 0, markup, 0.0)
            if self.warm_y is not None:
                y = np.where(x_eff > 0, np.maximum(y, self.warm_y), 0.0)
            eq = None
            for _ in range(self.settings.price_rounds):
                eq = self._solve(x_eff, y)
                a = eq.flows.arrivals
                open_mask = x_eff > 0
                starved = open_mask & (a < self.settings.arrival_close_tol)
                if np.any(starved):
                    x_eff = x_eff.copy()
                    x_eff[starved] = 0.0
                    y[starved] = 0.0
                    continue
                y_new = np.zeros_like(y)
                y_new[open_mask] = params.profit_margin * (
                    self.e[open_mask]
                    + x_eff[open_mask] * self.t[open_mask] / a[open_mask]
                )
                if markup is not None:
                    y_new[open_mask] += markup[open_mask]
                change = float(np.max(np.abs(y_new - y), initial=0.0))
                if change <= self.settings.price_tol * max(
                    1.0, float(np.max(y_new, initial=1.0))
                ):
                    y = y_new
                    eq = self._solve(x_eff, y)
                    break
                y = y + 0.5 * (y_new - y)
            # Tightening pass: undamped raise-only updates until every open
            # station's price covers its floor at the final arrivals, so the
            # reported design is exactly profitable.
            for _ in range(self.settings.price_rounds):
                a = eq.flows.arrivals
                open_mask = x_eff > 0
                starved = open_mask & (a < self.settings.arrival_close_tol)
                if np.any(starved):
                    x_eff = x_eff.copy()
                    x_eff[starved] = 0.0
                    y[starved] = 0.0
                    eq = self._solve(x_eff, y)
                    continue
                floor = np.zeros_like(y)
                floor[open_mask] = params.profit_margin * (
                    self.e[open_mask]
                    + x_eff[open_mask] * self.t[open_mask] / a[open_mask]
                )
                if markup is not None:
                    floor[open_mask] += markup[open_mask]
                if np.all(y >= floor - 1e-9):
                    break
                y = np.maximum(y, floor)
                eq = self._solve(x_eff, y)
            self.warm_y = y.copy()

        profile = StrategyProfile(eq.profile.ev, self.q0.copy())
        theta = costs.social_cost(profile, self.catalog, Design(x_eff, y), params)
        evaluation = _Evaluation(theta, x_eff, y.copy(), eq, profile)
        self.cache[key] = evaluation
        return evaluation


def _project_coord(x, coord, value, budget, lower):
    """Clamp one coordinate into [lower, budget - sum of the others]."""
    other = float(np.sum(x)) - x[coord]
    return float(np.clip(value, lower, max(lower, budget - other)))


def _try_theta(ctx, x, fixed_price):
    try:
        return ctx.evaluate(x, fixed_price=fixed_price).theta
    except InfeasibleError:
        return float("inf")


def _coordinate_descent(ctx, x0, candidates, settings, budget, fixed_price=None):
    """Cyclic coordinate search on charger counts (markup handled separately)."""
    x = x0.copy()
    best = ctx.evaluate(x, fixed_price=fixed_price)
    steps = {c: settings.initial_step for c in candidates}
    for _ in range(settings.max_sweeps):
        sweep_start = best.theta
        for coord in candidates:
            base = x[coord]
            delta = settings.fd_delta
            up = _project_coord(x, coord, base + delta, budget, settings.eps_open)
            dn = _project_coord(x, coord, base - delta, budget, settings.eps_open)
            if up == dn:
                continue
            x_up = x.copy(); x_up[coord] = up
            x_dn = x.copy(); x_dn[coord] = dn
            theta_up = _try_theta(ctx, x_up, fixed_price)
            theta_dn = _try_theta(ctx, x_dn, fixed_price)
            if not np.isfinite(theta_up) and not np.isfinite(theta_dn):
                continue
            g = (theta_up - theta_dn) / (up - dn)
            # Not worth probing when the projected gain is negligible.
            if abs(g) * steps[coord] < 0.01 * settings.improvement_tol * max(
                1.0, abs(best.theta)
            ):
                continue
            directions = [-np.sign(g), np.sign(g)] if g != 0 else [1.0, -1.0]
            moved = False
            trials = 0
            for direction in directions:
                step = steps[coord]
                while step >= settings.min_step and trials < settings.max_coord_trials:
                    cand = x.copy()
                    cand[coord] = _project_coord(
                        x, coord, base + direction * step, budget, settings.eps_open
                    )
                    if cand[coord] != base:
                        trials += 1
                        if np.isfinite(_try_theta(ctx, cand, fixed_price)):
                            trial = ctx.evaluate(cand, fixed_price=fixed_price)
                            if trial.theta < best.theta - 1e-12:
                                x = cand
                                best = trial
                                steps[coord] = min(step * 2.0, budget)
                                moved = True
                                break
                    step /= 2.0
                if moved or trials >= settings.max_coord_trials:
                    break
            if not moved:
                steps[coord] = max(steps[coord] / 2.0, settings.min_step)
        if sweep_start - best.theta < settings.improvement_tol * max(1.0, abs(best.theta)):
            break
    return x, best


def _markup_descent(ctx, x, settings):
    """Raise individual prices above their floors when that lowers cost."""
    markup = np.zeros(len(x))
    best = ctx.evaluate(x, markup=markup)
    open_ixs = np.flatnonzero(best.x > 0)
    for _ in range(settings.markup_sweeps):
        improved = False
        for coord in open_ixs:
            step = 1.0
            while step >= 0.25:
                moved = False
                for direction in (1.0, -1.0):
                    value = max(0.0, markup[coord] + direction * step)
                    if value == markup[coord]:
                        continue
                    cand = markup.copy()
                    cand[coord] = value
                    trial = ctx.evaluate(x, markup=cand)
                    if trial.theta < best.theta - 1e-12:
                        markup, best = cand, trial
                        moved = improved = True
                        break
                if not moved:
                    step /= 2.0
        if not improved:
            break
    return markup, best


@dataclass
class RelaxedSolution:
    x: np.ndarray
    y: np.ndarray
    markup: np.ndarray
    profile: StrategyProfile
    equilibrium: EquilibriumResult
    social_cost: float


def solve_relaxed_placement(
    catalog, params, q0, settings=None, warm_designs=(), fixed_price=None
):
    """Optimise continuous charger counts (and prices) against frozen NCD flows.

    Multi-start projected coordinate search; prices follow the profitability
    floor fixed point unless ``fixed_price`` freezes them. Stations whose
    equilibrium arrivals vanish are closed before returning.
    """
    settings = settings or PlannerSettings()
    total_ev = float(np.sum(catalog.ev_demand))
    if total_ev <= 0:
        raise InfeasibleError("no EV demand; nothing to place")
    if params.budget < 1:
        raise InfeasibleError(
            f"budget {params.budget} cannot serve EV demand {total_ev}"
        )

    net = catalog.network
    candidates = sorted({net.node_index(c) for c in catalog.candidate_stations})
    if not candidates:
        raise InfeasibleError("no candidate station nodes")
    ctx = _EvContext(catalog, params, q0, settings)
    budget = float(params.budget)
    rng = np.random.default_rng(settings.seed)

    starts = []
    uniform = np.zeros(net.n_nodes)
    uniform[candidates] = budget / len(candidates)
    starts.append(uniform)
    # Demand-guided start: size each station by the closed-form interior
    # optimum x = a * sqrt(lambda / (mu * pi * T)) for its current arrivals,
    # iterated so arrivals respond to the concentration.
    try:
        guided = uniform.copy()
        for _ in range(3):
            arrivals = ctx.evaluate(guided, fixed_price=fixed_price).equilibrium.flows.arrivals
            site = np.maximum(ctx.t, 1e-9)
            ideal = np.zeros(net.n_nodes)
            ideal[candidates] = arrivals[candidates] * np.sqrt(
                params.time_value
                / (params.service_rate * params.profit_margin * site[candidates])
            )
            total = float(np.sum(ideal))
            if total <= 0:
                break
            guided = np.zeros(net.n_nodes)
            guided[candidates] = np.maximum(
                ideal[candidates] * min(1.0, budget / total), settings.eps_open
            )
            if float(np.sum(guided)) > budget:
                guided *= budget / float(np.sum(guided))
        starts.insert(1, guided.copy())
    except InfeasibleError:
        pass
    for wd in warm_designs:
        starts.append(np.asarray(wd, dtype=float))
    while len(starts) < max(1, settings.restarts):
        weights = rng.dirichlet(np.ones(len(candidates)))
        x = np.zeros(net.n_nodes)
        x[candidates] = np.maximum(weights * budget, settings.eps_open)
        scale = budget / float(np.sum(x))
        x[candidates] *= min(1.0, scale)
        starts.append(x)

    best_x, best = None, None
    for x0 in starts:
        x0 = np.maximum(x0, 0.0)
        x0[np.setdiff1d(np.arange(net.n_nodes), candidates)] = 0.0
        x0[candidates] = np.maximum(x0[candidates], settings.eps_open)
        if float(np.sum(x0)) > budget:
            x0 *= budget / float(np.sum(x0))
        x, evaluation = _coordinate_descent(
            ctx, x0, candidates, settings, budget, fixed_price=fixed_price
        )
        if best is None or evaluation.theta < best.theta:
            best_x, best = x, evaluation

    markup = np.zeros(net.n_nodes)
    if fixed_price is None and settings.markup_sweeps > 0:
        markup, best = _markup_descent(ctx, best_x, settings)

    if fixed_price is None:
        # Floor-mode evaluations already close starved stations.
        best_x = best.x.copy()
    else:
        arrivals = best.equilibrium.flows.arrivals
        closed = (best_x > 0) & (arrivals < settings.arrival_close_tol)
        if np.any(closed):
            x = best_x.copy()
            x[closed] = 0.0
            if not np.any(x > 0):
                raise InfeasibleError(
                    "no station attracts EV demand profitably at this budget"
                )
            best_x = x
            best = ctx.evaluate(best_x, fixed_price=fixed_price)

    if not np.any(best_x > 0):
        raise InfeasibleError(
            "no station attracts EV demand profitably at this budget"
        )
    return RelaxedSolution(
        x=best_x,
        y=best.y,
        markup=markup,
        profile=best.profile,
        equilibrium=best.equilibrium,
        social_cost=best.theta,
    )


@dataclass
class PricingSolution:
    y: np.ndarray
    x: np.ndarray
    profile: StrategyProfile
    equilibrium: EquilibriumResult
    social_cost: float
    closed_stations: tuple = ()


def resolve_pricing(
    catalog, params, q0, x_int, settings=None, markup=None, warm_ev=None,
    optimize_markup=True,
):
    """Optimise prices and EV flows at a fixed integer placement.

    Unservable open stations (no profitable arrivals) are closed once and the
    pricing re-solved.
    """
    settings = settings or PlannerSettings()
    x = np.asarray(x_int, dtype=float)
    if not np.any(x > 0) and float(np.sum(catalog.ev_demand)) > 0:
        raise InfeasibleError("all stations closed; EV demand unservable")
    ctx = _EvContext(catalog, params, q0, settings)
    if warm_ev is not None:
        ctx.warm_ev = warm_ev.copy()

    if optimize_markup and settings.markup_sweeps > 0:
        _, best = _markup_descent(ctx, x, settings)
    else:
        best = ctx.evaluate(x, markup=markup)
    closed = np.flatnonzero((x > 0) & (best.x <= 0))
    return PricingSolution(
        y=best.y,
        x=np.round(best.x).astype(int),
        profile=best.profile,
        equilibrium=best.equilibrium,
        social_cost=best.theta,
        closed_stations=tuple(int(i) for i in closed),
    )


def _finalize(catalog, params, design, profile, provenance, relaxed_theta=None,
              converged=True):
    flows = costs.aggregate_flows(profile, catalog)
    theta = costs.social_cost(profile, catalog, design, params, flows)
    components = costs.social_cost_components(profile, catalog, design, params, flows)
    eq = EquilibriumResult(
        profile=profile,
        flows=flows,
        relative_gap=float("nan"),
        iterations=0,
        potential_trace=np.array([]),
        converged=converged,
    )
    result = PlanResult(
        design=design,
        equilibrium=eq,
        social_cost=theta,
        components=components,
        report=None,
        provenance=provenance,
        relaxed_social_cost=relaxed_theta,
        converged=converged,
    )
    result.report = validate_plan(result, catalog, params)
    return result


def plan_joint(catalog, params, settings=None, refinement=None, warm_designs=()):
    """Two-level placement-and-pricing optimisation under driver equilibrium.

    ``warm_designs`` seeds the relaxed placement search with extra starting
    points (e.g. the solution at a neighbouring budget during a sweep).
    """
    settings = settings or PlannerSettings()
    refinement = refinement or RefinementSettings()
    net = catalog.network
    alpha = penetration_rate(catalog.demands)

    if float(np.sum(catalog.ev_demand)) <= 0:
        ncd_eq = solve_background_equilibrium(catalog, params, settings.solver)
        design = Design.zeros(net)
        profile = StrategyProfile(
            np.zeros(catalog.n_paths), ncd_eq.profile.ncd
        )
        return _finalize(catalog, params, design, profile, "ncd-only")

    if alpha <= refinement.alpha_threshold:
        ncd_eq = solve_background_equilibrium(catalog, params, settings.solver)
        q0 = ncd_eq.profile.ncd
        relaxed = solve_relaxed_placement(
            catalog, params, q0, settings, warm_designs=warm_designs
        )
        x_int = round_and_fix(relaxed.x, params.budget)
        pricing = resolve_pricing(
            catalog, params, q0, x_int, settings,
            warm_ev=relaxed.profile.ev,
        )
        design = Design(pricing.x.astype(float), pricing.y)
        return _finalize(
            catalog, params, design, pricing.profile, "sequential",
            relaxed_theta=relaxed.social_cost,
        )

    # Iterative refinement for significant EV penetration.
    ncd_eq = solve_background_equilibrium(catalog, params, settings.solver)
    q0 = ncd_eq.profile.ncd
    best = None
    best_relaxed = None
    prev_link_flows = None
    converged = False
    warm = tuple(warm_designs)
    for _ in range(refinement.max_rounds):
        relaxed = solve_relaxed_placement(catalog, params, q0, settings, warm_designs=warm)
        x_int = round_and_fix(relaxed.x, params.budget)
        pricing = resolve_pricing(
            catalog, params, q0, x_int, settings, warm_ev=relaxed.profile.ev
        )
        design = Design(pricing.x.astype(float), pricing.y)
        theta = pricing.social_cost
        if best is not None and theta > best[2] + 1e-9 * abs(best[2]):
            break
        best = (design, pricing.profile, theta)
        best_relaxed = relaxed.social_cost
        warm = (relaxed.x,)

        ncd_solve = solve_equilibrium(
            catalog, design, params, settings=settings.solver,
            initial=StrategyProfile(pricing.profile.ev.copy(), q0.copy()),
            optimize_ev=False,
        )
        q0 = ncd_solve.profile.ncd
        link_flows = ncd_solve.flows.total_link
        if prev_link_flows is not None:
            denom = max(1.0, float(np.max(np.abs(prev_link_flows))))
            if float(np.max(np.abs(link_flows - prev_link_flows))) / denom \
                    < refinement.flow_tolerance:
                converged = True
                break
        prev_link_flows = link_flows
    design, profile, _ = best
    return _finalize(
        catalog, params, design, profile, "refinement",
        relaxed_theta=best_relaxed, converged=converged,
    )


def baseline_pricing_only(catalog, params, settings=None):
    """Pricing-only baseline: chargers spread evenly, prices optimised."""
    settings = settings or PlannerSettings()
    net = catalog.network
    candidates = sorted({net.node_index(c) for c in catalog.candidate_stations})
    ncd_eq = solve_background_equilibrium(catalog, params, settings.solver)
    q0 = ncd_eq.profile.ncd

    x = np.zeros(net.n_nodes, dtype=int)
    share, remainder = divmod(params.budget, len(candidates))
    by_id = sorted(candidates, key=lambda i: net.nodes[i].id)
    for i in candidates:
        x[i] = share
    for i in by_id[:remainder]:
        x[i] += 1
    pricing = resolve_pricing(catalog, params, q0, x, settings)
    design = Design(pricing.x.astype(float), pricing.y)
    return _finalize(catalog, params, design, pricing.profile, "price-only")


def baseline_placement_only(catalog, params, settings=None, price_rounds=6):
    """Placement-only baseline: placement optimised under one uniform price.

    The uniform price is set to cover the highest per-station cost among the
    open stations with the required margin, via a small fixed-point loop.
    """
    settings = settings or PlannerSettings()
    net = catalog.network
    ncd_eq = solve_background_equilibrium(catalog, params, settings.solver)
    q0 = ncd_eq.profile.ncd
    e = net.electricity_prices()
    t = net.site_costs()

    y_u = params.profit_margin * float(np.max(e)) + 1.0
    relaxed = None
    for _ in range(price_rounds):
        fixed = np.full(net.n_nodes, y_u)
        relaxed = solve_relaxed_placement(
            catalog, params, q0, settings, fixed_price=fixed,
            warm_designs=(relaxed.x,) if relaxed is not None else (),
        )
        x_int = round_and_fix(relaxed.x, params.budget)
        ctx = _EvContext(catalog, params, q0, settings)
        ctx.warm_ev = relaxed.profile.ev.copy()
        evaluation = ctx.evaluate(
            x_int.astype(float), fixed_price=np.full(net.n_nodes, y_u)
        )
        a = evaluation.equilibrium.flows.arrivals
        open_served = (x_int > 0) & (a >= settings.arrival_close_tol)
        if not np.any(open_served):
            raise InfeasibleError("placement-only baseline serves no EV demand")
        floors = params.profit_margin * (
            e[open_served] + x_int[open_served] * t[open_served] / a[open_served]
        )
        y_new = float(np.max(floors))
        x_final = np.where(open_served, x_int, 0)
        if abs(y_new - y_u) <= 1e-6 * max(1.0, y_u):
            y_u = y_new
            break
        y_u = y_new

    ctx = _EvContext(catalog, params, q0, settings)
    evaluation = ctx.evaluate(
        x_final.astype(float), fixed_price=np.full(net.n_nodes, y_u)
    )
    # Guarantee floors hold at the final equilibrium arrivals.
    for _ in range(10):
        a = evaluation.equilibrium.flows.arrivals
        served = (x_final > 0) & (a >= settings.arrival_close_tol)
        starved = (x_final > 0) & ~served
        if np.any(starved):
            x_final = np.where(starved, 0, x_final)
            if not np.any(x_final > 0):
                raise InfeasibleError("placement-only baseline serves no EV demand")
            evaluation = ctx.evaluate(
                x_final.astype(float), fixed_price=np.full(net.n_nodes, y_u)
            )
            continue
        floors = params.profit_margin * (
            e[served] + x_final[served] * t[served] / a[served]
        )
        y_req = float(np.max(floors))
        if y_req <= y_u * (1 + 1e-9):
            break
        y_u = y_req
        evaluation = ctx.evaluate(
            x_final.astype(float), fixed_price=np.full(net.n_nodes, y_u)
        )

    y = np.where(x_final > 0, y_u, 0.0)
    design = Design(x_final.astype(float), y)
    profile = StrategyProfile(evaluation.equilibrium.profile.ev, np.asarray(q0))
    return _finalize(catalog, params, design, profile, "place-only")
