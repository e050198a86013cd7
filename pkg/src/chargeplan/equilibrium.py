"""Wardrop equilibrium of the coupled road/station congestion game.

For a fixed design the driver game admits a convex quadratic potential
(all latencies are affine in the aggregate flows and prices are constant in
the strategy profile), so the equilibrium is computed by Frank-Wolfe over the
product of per-O-D simplices with closed-form exact line search. The
certificate re-checks the best-response conditions path by path.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .costs import (
    FlowState,
    StrategyProfile,
    aggregate_flows,
    ev_path_costs,
    ncd_route_costs,
)
from .errors import InfeasibleError, ValidationError

BRUTE_FORCE_MAX_STRATEGIES = 8
BRUTE_FORCE_MAX_COMBOS = 5_000_000


@dataclass
class SolverSettings:
    """Convergence controls for the equilibrium solver."""

    gap_tolerance: float = 1e-5
    max_iterations: int = 5000

    def __post_init__(self):
        if not self.gap_tolerance > 0:
            raise ValidationError("gap tolerance must be > 0")
        if self.max_iterations < 1:
            raise ValidationError("max iterations must be >= 1")


@dataclass
class EquilibriumResult:
    """Solver output: strategy profile, aggregate flows and certificate data."""

    profile: StrategyProfile
    flows: FlowState
    relative_gap: float
    iterations: int
    potential_trace: np.ndarray
    converged: bool


def potential(profile, catalog, design, params):
    """Convex potential whose minimisers are the driver equilibria.

    Returns infinity when flow is routed to a station without chargers.
    """
    flows = aggregate_flows(profile, catalog)
    net = catalog.network
    lam = params.time_value
    v = flows.total_link
    road = lam * float(np.sum(net.distance * v * v / (2.0 * net.capacity)))
    a = flows.arrivals
    x = design.x
    served = a > 1e-15
    if np.any(served & (x <= 0)):
        return float("inf")
    station = lam * float(
        np.sum(a[served] ** 2 / (2.0 * params.service_rate * x[served]))
    )
    pay = float(np.sum(design.y * a))
    return road + station + pay


def potential_gradient(profile, catalog, design, params):
    """Analytic gradient of the potential w.r.t. (ev, ncd) probabilities."""
    flows = aggregate_flows(profile, catalog)
    grad_ev = catalog.path_weight * ev_path_costs(catalog, flows, design, params)
    grad_ncd = catalog.route_weight * ncd_route_costs(catalog, flows, params)
    return grad_ev, grad_ncd


def _sanitize(profile, catalog, open_path_mask):
    """Zero out mass on unusable paths and renormalise each O-D block."""
    ev = profile.ev.copy()
    ev[~open_path_mask] = 0.0
    for (lo, hi) in catalog.path_slices:
        if hi == lo:
            continue
        s = ev[lo:hi].sum()
        if s > 0:
            ev[lo:hi] /= s
        else:
            mask = open_path_mask[lo:hi]
            if mask.any():
                ev[lo:hi][mask] = 1.0 / mask.sum()
    return StrategyProfile(ev, profile.ncd.copy())


def _per_od_gap(values, probs, slices, weights_od):
    """Sum of demand-weighted (expected - best) cost and weighted expected cost."""
    gap = 0.0
    theta = 0.0
    for od, (lo, hi) in enumerate(slices):
        if hi == lo or weights_od[od] == 0:
            continue
        block_p = probs[lo:hi]
        block_c = values[lo:hi]
        used = block_p > 0
        cbar = float(np.sum(block_p[used] * block_c[used]))
        cmin = float(np.min(block_c))
        gap += weights_od[od] * (cbar - cmin)
        theta += weights_od[od] * cbar
    return gap, theta


def _all_or_nothing(values, slices, mask=None):
    """One-hot best response per O-D block; ties go to the lowest index."""
    target = np.zeros(len(values))
    for lo, hi in slices:
        if hi == lo:
            continue
        block = values[lo:hi]
        if mask is not None:
            block = np.where(mask[lo:hi], block, np.inf)
        target[lo + int(np.argmin(block))] = 1.0
    return target


def _pairwise_shift(values, probs, slices, mask=None):
    """Swap direction: move each O-D's costliest supported mass to its best
    response. Feasible for any step in [0, 1]; combined with the exact line
    search this removes the slow tail of pure conditional-gradient steps."""
    d = np.zeros(len(values))
    for lo, hi in slices:
        if hi == lo:
            continue
        block_p = probs[lo:hi]
        supported = block_p > 1e-15
        if not supported.any():
            continue
        block_c = values[lo:hi]
        if mask is not None:
            block_c = np.where(mask[lo:hi], block_c, np.inf)
        away = lo + int(np.argmax(np.where(supported, values[lo:hi], -np.inf)))
        best = lo + int(np.argmin(block_c))
        if best == away:
            continue
        mass = probs[away]
        d[away] -= mass
        d[best] += mass
    return d


def solve_equilibrium(
    catalog,
    design,
    params,
    settings=None,
    initial=None,
    optimize_ev=True,
    optimize_ncd=True,
):
    """Frank-Wolfe assignment to a Wardrop equilibrium for a fixed design.

    Either driver class can be frozen (its flows taken from ``initial`` and
    treated as constant background), which is how the planner decomposes the
    coupled game.
    """
    settings = settings or SolverSettings()
    net = catalog.network
    lam = params.time_value
    open_path_mask = design.x[catalog.path_station_ix] > 0

    if optimize_ev:
        for od, (lo, hi) in enumerate(catalog.path_slices):
            if catalog.ev_demand[od] > 0 and not open_path_mask[lo:hi].any():
                raise InfeasibleError(
                    f"O-D {od}: EV demand but no extended path with an open station"
                )
    for od, (lo, hi) in enumerate(catalog.route_slices):
        if (catalog.ncd_demand[od] > 0 or catalog.ev_demand[od] > 0) and hi == lo:
            raise InfeasibleError(f"O-D {od} has no routes")

    if initial is None:
        profile = StrategyProfile.uniform(catalog, open_path_mask)
    else:
        profile = initial.copy()
    if optimize_ev:
        profile = _sanitize(profile, catalog, open_path_mask)

    ev, ncd = profile.ev, profile.ncd
    d_over_c = net.distance / net.capacity
    station_onehot = catalog.path_station_ix
    mu = params.service_rate
    x = design.x
    inv_mux = np.zeros_like(x)
    inv_mux[x > 0] = 1.0 / (mu * x[x > 0])

    def class_flows():
        ncd_link = (catalog.route_weight * ncd) @ catalog.route_link
        ev_path_flow = catalog.path_weight * ev
        ev_link = ev_path_flow @ catalog.path_link
        arrivals = np.bincount(
            station_onehot, weights=ev_path_flow, minlength=net.n_nodes
        )
        return ncd_link, ev_link, arrivals

    ncd_link, ev_link, arrivals = class_flows()
    phi = potential(StrategyProfile(ev, ncd), catalog, design, params)
    trace = [phi]
    gap = np.inf
    iterations = 0
    converged = False

    for iterations in range(1, settings.max_iterations + 1):
        v = ncd_link + ev_link
        f_money = lam * d_over_c * v
        route_cost = catalog.route_link @ f_money
        queue_cost = np.where(
            x[station_onehot] > 0,
            lam * arrivals[station_onehot] * inv_mux[station_onehot],
            np.inf,
        )
        path_cost = catalog.path_link @ f_money + queue_cost + design.y[station_onehot]

        gap_num = 0.0
        theta = 0.0
        if optimize_ev:
            g, t = _per_od_gap(path_cost, ev, catalog.path_slices, catalog.ev_demand)
            gap_num += g
            theta += t
        if optimize_ncd:
            g, t = _per_od_gap(route_cost, ncd, catalog.route_slices, catalog.ncd_demand)
            gap_num += g
            theta += t
        gap = gap_num / theta if theta > 0 else 0.0
        if gap <= settings.gap_tolerance:
            converged = True
            break

        def eval_direction(d_ev, d_ncd, cap=1.0):
            """Exact step and potential decrease along a feasible direction."""
            delta_link = np.zeros(net.n_links)
            delta_arr = np.zeros(net.n_nodes)
            if d_ev is not None:
                ev_delta_flow = catalog.path_weight * d_ev
                delta_link += ev_delta_flow @ catalog.path_link
                delta_arr += np.bincount(
                    station_onehot, weights=ev_delta_flow, minlength=net.n_nodes
                )
            if d_ncd is not None:
                delta_link += (catalog.route_weight * d_ncd) @ catalog.route_link
            g1 = float(np.sum(f_money * delta_link)) + float(
                np.sum((lam * arrivals * inv_mux + design.y) * delta_arr)
            )
            g2 = 0.5 * (
                lam * float(np.sum(d_over_c * delta_link**2))
                + lam * float(np.sum(inv_mux * delta_arr**2))
            )
            if g2 > 0:
                step = min(cap, max(0.0, -g1 / (2.0 * g2)))
            else:
                step = cap if g1 < 0 else 0.0
            return step, step * g1 + step * step * g2

        def newton_direction():
            """Cost-equalising move over the supported strategies.

            The potential is quadratic, so solving its KKT system restricted
            to the current supports (plus each best response) jumps straight
            to the candidate equilibrium; the move is line-searched and capped
            to stay inside the simplices.
            """
            entries = []  # (kind, flat index, weight, block number)
            n_blocks = 0
            if optimize_ev:
                for od, (lo, hi) in enumerate(catalog.path_slices):
                    if hi == lo or catalog.ev_demand[od] == 0:
                        continue
                    idxs = set(
                        (np.flatnonzero(ev[lo:hi] > 0) + lo).tolist()
                    )
                    block_c = np.where(open_path_mask[lo:hi], path_cost[lo:hi], np.inf)
                    idxs.add(lo + int(np.argmin(block_c)))
                    for j in sorted(idxs):
                        entries.append(("ev", j, catalog.path_weight[j], n_blocks))
                    n_blocks += 1
            if optimize_ncd:
                for od, (lo, hi) in enumerate(catalog.route_slices):
                    if hi == lo or catalog.ncd_demand[od] == 0:
                        continue
                    idxs = set((np.flatnonzero(ncd[lo:hi] > 0) + lo).tolist())
                    idxs.add(lo + int(np.argmin(route_cost[lo:hi])))
                    for j in sorted(idxs):
                        entries.append(("ncd", j, catalog.route_weight[j], n_blocks))
                    n_blocks += 1
            n = len(entries)
            if n == 0 or n_blocks == 0:
                return None

            r_link = np.zeros((n, net.n_links))
            r_arr = np.zeros((n, net.n_nodes))
            f_cur = np.zeros(n)
            block_of = np.zeros(n, dtype=int)
            for r, (kind, j, w, b) in enumerate(entries):
                block_of[r] = b
                if kind == "ev":
                    r_link[r] = catalog.path_link[j]
                    r_arr[r, station_onehot[j]] = 1.0
                    f_cur[r] = w * ev[j]
                else:
                    r_link[r] = catalog.route_link[j]
                    f_cur[r] = w * ncd[j]
            v_fixed = (ncd_link + ev_link) - f_cur @ r_link
            a_fixed = arrivals - f_cur @ r_arr

            hess = (r_link * (lam * d_over_c)) @ r_link.T + (
                r_arr * (lam * inv_mux)
            ) @ r_arr.T
            c0 = r_link @ (lam * d_over_c * v_fixed) + r_arr @ (
                lam * inv_mux * a_fixed + design.y
            )
            cons = np.zeros((n_blocks, n))
            cons[block_of, np.arange(n)] = 1.0
            demand = np.bincount(block_of, weights=f_cur, minlength=n_blocks)

            # Active-set walk to the constrained minimiser over these
            # entries: step toward the equalised (affine) minimiser until an
            # entry is forced negative (it leaves the set), and let dropped
            # entries re-enter when their marginal cost falls below the
            # block's equalised level.
            mask = np.ones(n, dtype=bool)
            f_int = f_cur.copy()
            for _ in range(3 * n + 5):
                idx = np.flatnonzero(mask)
                cs = cons[:, idx]
                kkt = np.block(
                    [
                        [hess[np.ix_(idx, idx)], cs.T],
                        [cs, np.zeros((n_blocks, n_blocks))],
                    ]
                )
                rhs = np.concatenate([-c0[idx], demand])
                try:
                    sol = np.linalg.lstsq(kkt, rhs, rcond=None)[0]
                except np.linalg.LinAlgError:
                    return None
                target = np.zeros(n)
                target[idx] = sol[: len(idx)]
                d_f = target - f_int
                shrink = np.flatnonzero((d_f < -1e-15) & mask)
                if len(shrink):
                    bounds = f_int[shrink] / -d_f[shrink]
                    b_ix = int(np.argmin(bounds))
                    t_bound = float(bounds[b_ix])
                else:
                    t_bound = np.inf
                if t_bound < 1.0 - 1e-12:
                    f_int = f_int + t_bound * d_f
                    blocker = shrink[b_ix]
                    f_int[blocker] = 0.0
                    mask[blocker] = False
                    continue
                f_int = target
                if mask.all():
                    break
                grad_f = c0 + hess @ f_int
                level = np.zeros(n_blocks)
                counts = np.bincount(block_of[mask], minlength=n_blocks)
                sums = np.bincount(
                    block_of[mask], weights=grad_f[mask], minlength=n_blocks
                )
                level[counts > 0] = sums[counts > 0] / counts[counts > 0]
                slack = grad_f - level[block_of]
                dropped = np.flatnonzero(~mask)
                tol = 1e-10 * max(1.0, float(np.max(np.abs(grad_f))))
                candidates = dropped[slack[dropped] < -tol]
                if len(candidates) == 0:
                    break
                mask[candidates[int(np.argmin(slack[candidates]))]] = True
            f_new = f_int

            d_ev = np.zeros(len(ev)) if optimize_ev else None
            d_ncd = np.zeros(len(ncd)) if optimize_ncd else None
            cap = 1.0
            for r, (kind, j, w, _) in enumerate(entries):
                target = f_new[r] / w if w > 0 else 0.0
                vec, cur = (d_ev, ev[j]) if kind == "ev" else (d_ncd, ncd[j])
                vec[j] = target - cur
                if vec[j] < 0 and cur > 0:
                    cap = min(cap, cur / -vec[j])
            return d_ev, d_ncd, cap

        fw_ev = pw_ev = fw_ncd = pw_ncd = None
        if optimize_ev:
            fw_ev = _all_or_nothing(path_cost, catalog.path_slices, open_path_mask) - ev
            pw_ev = _pairwise_shift(path_cost, ev, catalog.path_slices, open_path_mask)
        if optimize_ncd:
            fw_ncd = _all_or_nothing(route_cost, catalog.route_slices) - ncd
            pw_ncd = _pairwise_shift(route_cost, ncd, catalog.route_slices)
        moves = [(fw_ev, fw_ncd, 1.0)]
        if (pw_ev is not None and np.any(pw_ev)) or (
            pw_ncd is not None and np.any(pw_ncd)
        ):
            moves.append((pw_ev, pw_ncd, 1.0))
        newton = newton_direction()
        if newton is not None:
            moves.append(newton)

        step, decrease, d_ev, d_ncd = 0.0, 0.0, None, None
        for cand_ev, cand_ncd, cap in moves:
            cand_step, cand_dec = eval_direction(cand_ev, cand_ncd, cap)
            if cand_dec < decrease:
                step, decrease, d_ev, d_ncd = cand_step, cand_dec, cand_ev, cand_ncd
        if step == 0.0 or decrease >= 0.0:
            converged = gap <= settings.gap_tolerance
            break

        if d_ev is not None:
            ev = ev + step * d_ev
        if d_ncd is not None:
            ncd = ncd + step * d_ncd
        ncd_link, ev_link, arrivals = class_flows()
        # Incremental quadratic update keeps the recorded trace monotone.
        phi = phi + decrease
        trace.append(phi)

    profile = StrategyProfile(ev, ncd)
    flows = FlowState(ncd_link, ev_link, arrivals)
    return EquilibriumResult(
        profile=profile,
        flows=flows,
        relative_gap=float(gap),
        iterations=iterations,
        potential_trace=np.array(trace),
        converged=converged,
    )


@dataclass
class CertificateViolation:
    driver_class: str
    od: int
    index: int
    cost: float
    best_cost: float


@dataclass
class CertificateReport:
    violations: list = field(default_factory=list)

    @property
    def passed(self):
        return not self.violations


def wardrop_certificate(
    result, catalog, design, params, eps=1e-3, support_threshold=1e-6
):
    """Check the best-response conditions on every supported strategy."""
    flows = result.flows
    report = CertificateReport()
    checks = [
        ("ev", ev_path_costs(catalog, flows, design, params), result.profile.ev,
         catalog.path_slices, catalog.ev_demand),
        ("ncd", ncd_route_costs(catalog, flows, params), result.profile.ncd,
         catalog.route_slices, catalog.ncd_demand),
    ]
    for label, cost, probs, slices, weights in checks:
        for od, (lo, hi) in enumerate(slices):
            if hi == lo or weights[od] == 0:
                continue
            best = float(np.min(cost[lo:hi]))
            bound = best * (1.0 + eps) + 1e-12
            for j in range(lo, hi):
                if probs[j] > support_threshold and cost[j] > bound:
                    report.violations.append(
                        CertificateViolation(label, od, j, float(cost[j]), best)
                    )
    return report


def _simplex_grid(dim, steps):
    """All probability vectors of length ``dim`` on a 1/steps lattice."""
    if dim == 1:
        return np.ones((1, 1))
    if dim == 2:
        first = np.arange(steps + 1)
        return np.column_stack([first, steps - first]) / steps
    rows = []

    def rec(prefix, remaining, slots):
        if slots == 1:
            rows.append(prefix + [remaining])
            return
        for v in range(remaining + 1):
            rec(prefix + [v], remaining - v, slots - 1)

    rec([], steps, dim)
    return np.array(rows, dtype=float) / steps


def brute_force_equilibrium(catalog, design, params, grid_step=1e-3):
    """Grid search for the minimum-gap profile on tiny instances (test oracle)."""
    n_strategies = catalog.n_paths + catalog.n_routes
    if n_strategies > BRUTE_FORCE_MAX_STRATEGIES:
        raise ValidationError(
            f"brute force limited to {BRUTE_FORCE_MAX_STRATEGIES} strategies"
        )
    steps = int(round(1.0 / grid_step))
    open_path_mask = design.x[catalog.path_station_ix] > 0

    # Fixed one-hot/uniform entries for blocks that need no search; the rest
    # become grid blocks iterated jointly.
    base_ev = np.zeros(catalog.n_paths)
    base_ncd = np.zeros(catalog.n_routes)
    blocks = []  # (kind, lo, hi, candidate rows over the block)
    for od, (lo, hi) in enumerate(catalog.path_slices):
        if hi == lo:
            continue
        open_ixs = np.flatnonzero(open_path_mask[lo:hi])
        if len(open_ixs) == 0:
            if catalog.ev_demand[od] > 0:
                raise InfeasibleError(f"O-D {od}: no open station")
            open_ixs = np.arange(hi - lo)
        if len(open_ixs) == 1 or catalog.ev_demand[od] == 0:
            base_ev[lo + open_ixs] = 1.0 / len(open_ixs)
            continue
        grid = _simplex_grid(len(open_ixs), steps)
        rows = np.zeros((len(grid), hi - lo))
        rows[:, open_ixs] = grid
        blocks.append(("ev", lo, hi, rows))
    for od, (lo, hi) in enumerate(catalog.route_slices):
        if hi == lo:
            continue
        if hi - lo == 1 or catalog.ncd_demand[od] == 0:
            base_ncd[lo:hi] = 1.0 / (hi - lo)
            continue
        blocks.append(("ncd", lo, hi, _simplex_grid(hi - lo, steps)))

    sizes = [len(b[3]) for b in blocks]
    total = int(np.prod(sizes)) if sizes else 1
    if total > BRUTE_FORCE_MAX_COMBOS:
        raise ValidationError("instance too large for the requested grid")

    station_matrix = np.zeros((catalog.n_paths, catalog.network.n_nodes))
    station_matrix[np.arange(catalog.n_paths), catalog.path_station_ix] = 1.0
    lam = params.time_value
    d_over_c = catalog.network.distance / catalog.network.capacity
    x_of_path = design.x[catalog.path_station_ix]
    # Large finite sentinel: closed-station paths never carry grid mass.
    inv_mux_path = np.where(
        x_of_path > 0, 1.0 / (params.service_rate * np.maximum(x_of_path, 1e-300)), 1e30
    )

    best_gap = np.inf
    best_profile = None
    chunk = 200_000
    for start in range(0, total, chunk):
        idx = np.arange(start, min(start + chunk, total))
        per_block = np.unravel_index(idx, sizes) if sizes else []
        n = len(idx)
        ev = np.tile(base_ev, (n, 1))
        ncd = np.tile(base_ncd, (n, 1))
        for (kind, lo, hi, rows), sel in zip(blocks, per_block):
            if kind == "ev":
                ev[:, lo:hi] = rows[sel]
            else:
                ncd[:, lo:hi] = rows[sel]

        ncd_link = (catalog.route_weight * ncd) @ catalog.route_link
        ev_flow = catalog.path_weight * ev
        ev_link = ev_flow @ catalog.path_link
        arrivals_path = ev_flow @ station_matrix @ station_matrix.T
        v = ncd_link + ev_link
        f_money = lam * (v * d_over_c)
        route_cost = f_money @ catalog.route_link.T
        queue_cost = lam * arrivals_path * inv_mux_path
        path_cost = f_money @ catalog.path_link.T + queue_cost + design.y[
            catalog.path_station_ix
        ]

        gaps = np.zeros(n)
        for od, (lo, hi) in enumerate(catalog.path_slices):
            if hi == lo or catalog.ev_demand[od] == 0:
                continue
            block_c = path_cost[:, lo:hi]
            block_p = ev[:, lo:hi]
            safe_c = np.where(block_p > 0, np.where(np.isfinite(block_c), block_c, 1e30), 0.0)
            cbar = np.sum(block_p * safe_c, axis=1)
            cmin = np.min(np.where(np.isfinite(block_c), block_c, 1e30), axis=1)
            gaps += catalog.ev_demand[od] * (cbar - cmin)
        for od, (lo, hi) in enumerate(catalog.route_slices):
            if hi == lo or catalog.ncd_demand[od] == 0:
                continue
            cbar = np.sum(ncd[:, lo:hi] * route_cost[:, lo:hi], axis=1)
            cmin = np.min(route_cost[:, lo:hi], axis=1)
            gaps += catalog.ncd_demand[od] * (cbar - cmin)

        local_best = int(np.argmin(gaps))
        if gaps[local_best] < best_gap:
            best_gap = float(gaps[local_best])
            best_profile = StrategyProfile(ev[local_best].copy(), ncd[local_best].copy())

    return best_profile
