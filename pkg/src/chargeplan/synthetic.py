"""Deterministic synthetic scenario generators for experiments and tests.

Every generator is seeded and pure: the same arguments always produce the
same :class:`~chargeplan.network.Scenario`, which keeps downstream reports
byte-reproducible.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .network import GlobalParams, Link, Network, Node, ODDemand, Scenario

# Default economics shared by the generators; individual scenarios perturb
# these around a cheap-electricity pocket so pricing has something to do.
_DEFAULT_PARAMS = dict(time_value=25.12, service_rate=4.0, profit_margin=1.2)


def _economics(n_nodes, rng, cheap_fraction=0.25):
    """Electricity prices and site costs with a contiguous cheap pocket."""
    n_cheap = max(1, int(round(cheap_fraction * n_nodes)))
    electricity = np.full(n_nodes, 40.0)
    electricity[:n_cheap] = 6.0
    site = 35.0 + np.round(rng.uniform(0.0, 10.0, size=n_nodes), 1)
    return electricity, site


def grid_scenario(
    rows,
    cols,
    n_ods=3,
    total_flow=900.0,
    alpha=0.12,
    budget=60,
    seed=0,
    candidate_stations=None,
):
    """Rectangular grid network with corner-to-corner demand.

    Nodes are numbered row-major from 1; every neighbouring pair is joined by
    a pair of directed links with mildly varied distances.
    """
    if rows < 2 or cols < 2:
        raise ValidationError("grid needs at least 2 rows and 2 columns")
    if not (0 < alpha < 1):
        raise ValidationError("penetration rate must be in (0, 1)")
    rng = np.random.default_rng(seed)
    n_nodes = rows * cols
    electricity, site = _economics(n_nodes, rng)
    nodes = [
        Node(i + 1, electricity_price=float(electricity[i]), site_cost=float(site[i]))
        for i in range(n_nodes)
    ]

    def node_id(r, c):
        return r * cols + c + 1

    links = []
    for r in range(rows):
        for c in range(cols):
            here = node_id(r, c)
            for dr, dc in ((0, 1), (1, 0)):
                r2, c2 = r + dr, c + dc
                if r2 >= rows or c2 >= cols:
                    continue
                there = node_id(r2, c2)
                dist = float(np.round(0.2 + rng.uniform(0.0, 0.3), 3))
                links.append(Link(len(links), here, there, dist, 1000.0))
                links.append(Link(len(links), there, here, dist, 1000.0))
    network = Network(nodes, links)

    corners = [
        node_id(0, 0),
        node_id(rows - 1, cols - 1),
        node_id(0, cols - 1),
        node_id(rows - 1, 0),
        node_id(rows // 2, 0),
        node_id(rows // 2, cols - 1),
    ]
    pairs = [(corners[0], corners[1]), (corners[2], corners[3]), (corners[4], corners[5])]
    demands = []
    for origin, destination in pairs[: max(1, n_ods)]:
        demands.append(
            ODDemand(
                origin,
                destination,
                ev_flow=alpha * total_flow,
                ncd_flow=(1 - alpha) * total_flow,
            )
        )
    params = GlobalParams(budget=budget, **_DEFAULT_PARAMS)
    return Scenario(
        network=network,
        demands=tuple(demands),
        params=params,
        candidate_stations=candidate_stations,
    )


def ring_scenario(
    n_nodes=10,
    n_chords=3,
    total_flow=800.0,
    alpha=0.12,
    budget=40,
    seed=0,
):
    """Ring network with a few chords and two cross-ring demand pairs."""
    if n_nodes < 4:
        raise ValidationError("ring needs at least 4 nodes")
    rng = np.random.default_rng(seed)
    electricity, site = _economics(n_nodes, rng)
    nodes = [
        Node(i + 1, electricity_price=float(electricity[i]), site_cost=float(site[i]))
        for i in range(n_nodes)
    ]
    links = []

    def add_edge(u, v, dist):
        links.append(Link(len(links), u, v, dist, 1000.0))
        links.append(Link(len(links), v, u, dist, 1000.0))

    for i in range(n_nodes):
        dist = float(np.round(0.25 + rng.uniform(0.0, 0.2), 3))
        add_edge(i + 1, (i + 1) % n_nodes + 1, dist)
    for c in range(n_chords):
        u = 1 + (c * n_nodes) // max(1, n_chords)
        v = 1 + (u - 1 + n_nodes // 2) % n_nodes
        if u != v:
            add_edge(u, v, float(np.round(0.4 + rng.uniform(0.0, 0.2), 3)))
    network = Network(nodes, links)

    half = n_nodes // 2
    demands = (
        ODDemand(1, 1 + half, ev_flow=alpha * total_flow, ncd_flow=(1 - alpha) * total_flow),
        ODDemand(
            1 + half // 2,
            1 + (half // 2 + half) % n_nodes,
            ev_flow=alpha * total_flow,
            ncd_flow=(1 - alpha) * total_flow,
        ),
    )
    params = GlobalParams(budget=budget, **_DEFAULT_PARAMS)
    return Scenario(network=network, demands=demands, params=params)


def corridor_scenario(
    n_nodes=8,
    total_flow=1000.0,
    alpha=0.15,
    budget=30,
    seed=0,
):
    """Two parallel corridors joined at the ends; one corridor is cheap."""
    if n_nodes < 6 or n_nodes % 2:
        raise ValidationError("corridor scenario needs an even node count >= 6")
    rng = np.random.default_rng(seed)
    half = n_nodes // 2
    electricity = np.full(n_nodes, 42.0)
    electricity[:half] = 8.0
    site = 38.0 + np.round(rng.uniform(0.0, 6.0, size=n_nodes), 1)
    nodes = [
        Node(i + 1, electricity_price=float(electricity[i]), site_cost=float(site[i]))
        for i in range(n_nodes)
    ]
    links = []

    def add_edge(u, v, dist):
        links.append(Link(len(links), u, v, dist, 1000.0))
        links.append(Link(len(links), v, u, dist, 1000.0))

    for i in range(half - 1):  # cheap corridor 1..half
        add_edge(i + 1, i + 2, float(np.round(0.3 + rng.uniform(0.0, 0.1), 3)))
    for i in range(half, n_nodes - 1):  # expensive corridor half+1..n
        add_edge(i + 1, i + 2, float(np.round(0.25 + rng.uniform(0.0, 0.1), 3)))
    add_edge(1, half + 1, 0.2)
    add_edge(half, n_nodes, 0.2)
    network = Network(nodes, links)

    demands = (
        ODDemand(1, half, ev_flow=alpha * total_flow, ncd_flow=(1 - alpha) * total_flow),
        ODDemand(
            half + 1, n_nodes, ev_flow=alpha * total_flow, ncd_flow=(1 - alpha) * total_flow
        ),
    )
    params = GlobalParams(budget=budget, **_DEFAULT_PARAMS)
    return Scenario(network=network, demands=demands, params=params)


def synthetic_scenarios():
    """The three small named scenarios used by the test suite."""
    return {
        "grid4x4": grid_scenario(4, 4, seed=1),
        "ring10": ring_scenario(seed=2),
        "corridor8": corridor_scenario(seed=3),
    }


def save_scenario(scenario, directory, name):
    """Write a scenario as the JSON + link-table pair the loader understands."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    net_file = directory / f"{name}_net.tntp"
    net_file.write_text(scenario.network.to_tntp_text())
    doc = {
        "network_path": net_file.name,
        "nodes": {
            "overrides": {
                str(node.id): {
                    "electricity_price": node.electricity_price,
                    "site_cost": node.site_cost,
                }
                for node in scenario.network.nodes
            }
        },
        "demands": [
            {
                "origin": d.origin,
                "destination": d.destination,
                "ev_flow": d.ev_flow,
                "ncd_flow": d.ncd_flow,
            }
            for d in scenario.demands
        ],
        "params": {
            "lambda": scenario.params.time_value,
            "mu": scenario.params.service_rate,
            "pi": scenario.params.profit_margin,
            "budget": scenario.params.budget,
        },
    }
    if scenario.candidate_stations is not None:
        doc["candidate_stations"] = list(scenario.candidate_stations)
    scenario_file = directory / f"{name}.json"
    scenario_file.write_text(json.dumps(doc, indent=2) + "\n")
    return scenario_file


def scalability_scenario(seed=0):
    """The 100-node grid used for the candidate-generalisation experiment."""
    return grid_scenario(
        10, 10, n_ods=3, total_flow=900.0, alpha=0.12, budget=50, seed=seed
    )
