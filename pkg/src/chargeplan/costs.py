"""Cost evaluation: link/path times, station queues, driver costs, social cost.

All quantities are evaluated from immutable inputs; money is in pounds, time
in hours. Stations with no chargers make their paths unusable, signalled by an
infinite cost rather than by removing the path from the catalog.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

SIMPLEX_TOL = 1e-9
UNUSABLE = float("inf")


@dataclass
class StrategyProfile:
    """Flat per-path (EV) and per-route (NCD) choice probabilities."""

    ev: np.ndarray
    ncd: np.ndarray

    def validate(self, catalog):
        if self.ev.shape != (catalog.n_paths,) or self.ncd.shape != (catalog.n_routes,):
            raise ValidationError("profile dimensions do not match catalog")
        for vec, slices, label in (
            (self.ev, catalog.path_slices, "EV"),
            (self.ncd, catalog.route_slices, "NCD"),
        ):
            if np.any(vec < -SIMPLEX_TOL) or np.any(vec > 1 + SIMPLEX_TOL):
                raise ValidationError(f"{label} probabilities outside [0, 1]")
            for lo, hi in slices:
                if hi > lo and abs(float(np.sum(vec[lo:hi])) - 1.0) > 1e-9:
                    raise ValidationError(f"{label} vector does not sum to 1")
        return self

    def copy(self):
        return StrategyProfile(self.ev.copy(), self.ncd.copy())

    @classmethod
    def uniform(cls, catalog, open_path_mask=None):
        """Uniform choice per O-D, optionally restricted to usable paths."""
        ev = np.zeros(catalog.n_paths)
        for lo, hi in catalog.path_slices:
            if hi == lo:
                continue
            mask = np.ones(hi - lo, dtype=bool)
            if open_path_mask is not None:
                mask = open_path_mask[lo:hi]
                if not mask.any():
                    mask = np.ones(hi - lo, dtype=bool)
            ev[lo:hi][mask] = 1.0 / mask.sum()
        ncd = np.zeros(catalog.n_routes)
        for lo, hi in catalog.route_slices:
            if hi > lo:
                ncd[lo:hi] = 1.0 / (hi - lo)
        return cls(ev, ncd)


@dataclass
class Design:
    """Per-node charger counts and prices."""

    x: np.ndarray
    y: np.ndarray

    def validate(self, budget=None):
        if np.any(self.x < 0) or np.any(self.y < 0):
            raise ValidationError("design values must be non-negative")
        if budget is not None and float(np.sum(self.x)) > budget + 1e-9:
            raise ValidationError("design exceeds charger budget")
        return self

    def copy(self):
        return Design(self.x.copy(), self.y.copy())

    @classmethod
    def zeros(cls, network):
        return cls(np.zeros(network.n_nodes), np.zeros(network.n_nodes))


@dataclass
class FlowState:
    """Aggregated link flows and station arrival rates."""

    ncd_link: np.ndarray
    ev_link: np.ndarray
    arrivals: np.ndarray

    @property
    def total_link(self):
        return self.ncd_link + self.ev_link


def aggregate_flows(profile, catalog):
    """Expected link flows per driver class and station arrival rates."""
    ncd_link = (catalog.route_weight * profile.ncd) @ catalog.route_link
    ev_path_flow = catalog.path_weight * profile.ev
    ev_link = ev_path_flow @ catalog.path_link
    arrivals = np.bincount(
        catalog.path_station_ix,
        weights=ev_path_flow,
        minlength=catalog.network.n_nodes,
    )
    return FlowState(ncd_link, ev_link, arrivals)


def link_time(link, ncd_flow, ev_flow=0.0):
    """Congested traversal time of one link (hours)."""
    return link.distance * (ncd_flow + ev_flow) / link.capacity


def link_times(network, flows):
    """Vector of congested link times."""
    return network.distance * flows.total_link / network.capacity


def route_times(catalog, flows):
    return catalog.route_link @ link_times(catalog.network, flows)


def path_times(catalog, flows):
    return catalog.path_link @ link_times(catalog.network, flows)


def path_time(catalog, flows, route_ix=None, path_ix=None):
    """Travel time along one route or one extended path (hours)."""
    f = link_times(catalog.network, flows)
    if route_ix is not None:
        return float(catalog.route_link[route_ix] @ f)
    return float(catalog.path_link[path_ix] @ f)


def queue_times(catalog, flows, design, params):
    """Expected waiting time per extended path; closed stations are unusable."""
    x = design.x[catalog.path_station_ix]
    a = flows.arrivals[catalog.path_station_ix]
    out = np.full(catalog.n_paths, UNUSABLE)
    open_mask = x > 0
    out[open_mask] = a[open_mask] / (params.service_rate * x[open_mask])
    return out


def queue_time(catalog, flows, design, params, path_ix):
    return float(queue_times(catalog, flows, design, params)[path_ix])


def ev_path_costs(catalog, flows, design, params):
    """Money cost per extended path: time-valued travel + queue, plus price."""
    travel = path_times(catalog, flows)
    queue = queue_times(catalog, flows, design, params)
    price = design.y[catalog.path_station_ix]
    return params.time_value * (travel + queue) + price


def ev_path_cost(catalog, flows, design, params, path_ix):
    return float(ev_path_costs(catalog, flows, design, params)[path_ix])


def ncd_route_costs(catalog, flows, params):
    """Money cost per route for non-charging drivers."""
    return params.time_value * route_times(catalog, flows)


def ncd_route_cost(catalog, flows, params, route_ix):
    return float(ncd_route_costs(catalog, flows, params)[route_ix])


def _masked_dot(weights, probs, costs):
    """Sum of weight*prob*cost, ignoring unusable entries with zero mass."""
    used = probs > 0
    return float(np.sum(weights[used] * probs[used] * costs[used]))


def social_cost_components(profile, catalog, design, params, flows=None):
    """(travel, queue, charge) money components of the social cost."""
    if flows is None:
        flows = aggregate_flows(profile, catalog)
    lam = params.time_value
    travel_ev = _masked_dot(
        catalog.path_weight, profile.ev, lam * path_times(catalog, flows)
    )
    travel_ncd = _masked_dot(
        catalog.route_weight, profile.ncd, lam * route_times(catalog, flows)
    )
    queue = _masked_dot(
        catalog.path_weight, profile.ev, lam * queue_times(catalog, flows, design, params)
    )
    charge = _masked_dot(
        catalog.path_weight, profile.ev, design.y[catalog.path_station_ix]
    )
    return travel_ev + travel_ncd, queue, charge


def social_cost(profile, catalog, design, params, flows=None):
    """Total expected cost across all drivers and O-D pairs."""
    return float(sum(social_cost_components(profile, catalog, design, params, flows)))


def station_profit_gap(network, flows, design, params, node_id):
    """Revenue minus required return at one station; >= 0 iff profitable."""
    i = network.node_index(node_id)
    node = network.nodes[i]
    a = flows.arrivals[i]
    revenue = a * design.y[i]
    cost = a * node.electricity_price + design.x[i] * node.site_cost
    return float(revenue - params.profit_margin * cost)


def station_profit_gaps(network, flows, design, params):
    """Vector of per-node profit gaps."""
    e = network.electricity_prices()
    t = network.site_costs()
    return flows.arrivals * design.y - params.profit_margin * (
        flows.arrivals * e + design.x * t
    )
