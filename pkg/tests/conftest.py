"""Shared fixtures: tiny hand-built networks plus the shipped scenario."""

from pathlib import Path

import numpy as np
import pytest

from chargeplan import (
    GlobalParams,
    Link,
    Network,
    Node,
    ODDemand,
    build_catalog,
    load_scenario,
)

DATA_DIR = Path(__file__).resolve().parents[1] / "src" / "chargeplan" / "data"


def make_network(link_specs, node_econ=None):
    """Build a network from (tail, head, distance[, capacity]) tuples."""
    node_ids = sorted({n for spec in link_specs for n in spec[:2]})
    node_econ = node_econ or {}
    nodes = [
        Node(
            nid,
            electricity_price=node_econ.get(nid, (0.0, 0.0))[0],
            site_cost=node_econ.get(nid, (0.0, 0.0))[1],
        )
        for nid in node_ids
    ]
    links = [
        Link(
            i,
            spec[0],
            spec[1],
            float(spec[2]),
            float(spec[3]) if len(spec) > 3 else 1000.0,
        )
        for i, spec in enumerate(link_specs)
    ]
    return Network(nodes, links)


def default_params(budget=10, mu=4.0):
    return GlobalParams(
        time_value=25.12, service_rate=mu, profit_margin=1.2, budget=budget
    )


@pytest.fixture
def parallel_network():
    """Two nodes joined by two parallel links of distance 2 and 4."""
    return make_network([(1, 2, 2.0), (1, 2, 4.0)])


@pytest.fixture
def parallel_catalog(parallel_network):
    demands = (ODDemand(1, 2, ev_flow=0.0, ncd_flow=1000.0),)
    return build_catalog(parallel_network, demands, k=2)


@pytest.fixture
def line_network():
    """Directed chain 1 -> 2 -> 3 with a reverse path, cheap node economics."""
    return make_network(
        [(1, 2, 1.0), (2, 3, 1.0), (3, 2, 1.0), (2, 1, 1.0)],
        node_econ={1: (5.0, 10.0), 2: (5.0, 10.0), 3: (5.0, 10.0)},
    )


@pytest.fixture
def line_catalog(line_network):
    demands = (ODDemand(1, 3, ev_flow=100.0, ncd_flow=400.0),)
    return build_catalog(line_network, demands, k=2)


@pytest.fixture
def diamond_network():
    """1 -> {2, 3} -> 4 with stations possible at the middle nodes."""
    return make_network(
        [(1, 2, 1.0), (2, 4, 1.0), (1, 3, 1.0), (3, 4, 1.0)],
        node_econ={n: (5.0, 10.0) for n in (1, 2, 3, 4)},
    )


@pytest.fixture
def diamond_catalog(diamond_network):
    demands = (ODDemand(1, 4, ev_flow=120.0, ncd_flow=480.0),)
    return build_catalog(diamond_network, demands, k=4, candidate_stations=(2, 3))


@pytest.fixture(scope="session")
def sioux_scenario():
    return load_scenario(DATA_DIR / "siouxfalls.json")


@pytest.fixture(scope="session")
def sioux_catalog(sioux_scenario):
    sc = sioux_scenario
    return build_catalog(
        sc.network, sc.demands, k=10, candidate_stations=sc.candidate_stations
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
