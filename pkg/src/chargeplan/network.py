"""Road network, demand and economic-parameter model plus scenario ingestion.

The network file format is a TNTP-style whitespace-separated link table
(tail, head, distance[, capacity]); scenario files are JSON documents binding
a network to node economics, O-D demands and global parameters.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import networkx as nx
import numpy as np

from .errors import NetworkParseError, ValidationError

DEFAULT_CAPACITY = 1000.0

@dataclass(frozen=True)
class Node:
    """A network node with its site economics.

    ``electricity_price`` is the wholesale cost of one full EV charge at this
    node; ``site_cost`` is the rental/maintenance cost per charger over the
    modelling period (the peak hour).
    """

    id: int
    electricity_price: float = 0.0
    site_cost: float = 0.0

    def __post_init__(self):
        if self.electricity_price < 0:
            raise ValidationError(f"node {self.id}: electricity price must be >= 0")
        if self.site_cost < 0:
            raise ValidationError(f"node {self.id}: site cost must be >= 0")

@dataclass(frozen=True)
class Link:
    """A directed road link with distance and hourly capacity."""

    id: int
    tail: int
    head: int
    distance: float
    capacity: float

    def __post_init__(self):
        if self.tail == self.head:
            raise ValidationError(f"link {self.id}: self-loop {self.tail}->{self.head}")
        if not self.distance > 0:
            raise ValidationError(f"link {self.id}: distance must be > 0")
        if not self.capacity > 0:
            raise ValidationError(f"link {self.id}: capacity must be > 0")

class Network:
    """Immutable directed road network.

    Nodes and links keep their input order; an adjacency index maps each node
    to its outgoing links.
    """

    def __init__(self, nodes, links):
        self.nodes = tuple(nodes)
        self.links = tuple(links)
        self._index_of = {}
        for i, node in enumerate(self.nodes):
            if node.id in self._index_of:
                raise ValidationError(f"duplicate node id {node.id}")
            self._index_of[node.id] = i
        self.out_links = {node.id: [] for node in self.nodes}
        for link in self.links:
            for endpoint in (link.tail, link.head):
                if endpoint not in self._index_of:
                    raise ValidationError(
                        f"link {link.id} references unknown node {endpoint}"
                    )
            self.out_links[link.tail].append(link)
        self.distance = np.array([l.distance for l in self.links], dtype=float)
        self.capacity = np.array([l.capacity for l in self.links], dtype=float)
        self._validate_connectivity()

    def _validate_connectivity(self):
        if not self.links:
            raise ValidationError("network has no links; no routable demand possible")
        g = nx.DiGraph()
        g.add_nodes_from(n.id for n in self.nodes)
        g.add_edges_from((l.tail, l.head) for l in self.links)
        if not nx.is_weakly_connected(g):
            raise ValidationError("network graph is not connected")

    @property
    def n_nodes(self):
        return len(self.nodes)

    @property
    def n_links(self):
        return len(self.links)

    def node_index(self, node_id):
        try:
            return self._index_of[node_id]
        except KeyError:
            raise ValidationError(f"unknown node id {node_id}") from None

    def has_node(self, node_id):
        return node_id in self._index_of

    def node(self, node_id):
        return self.nodes[self.node_index(node_id)]

    def electricity_prices(self):
        return np.array([n.electricity_price for n in self.nodes], dtype=float)

    def site_costs(self):
        return np.array([n.site_cost for n in self.nodes], dtype=float)

    def with_node_economics(self, default=None, overrides=None):
        """Return a copy with electricity prices / site costs rebound."""
        overrides = overrides or {}
        nodes = []
        for node in self.nodes:
            e, t = node.electricity_price, node.site_cost
            if default is not None:
                e = default.get("electricity_price", e)
                t = default.get("site_cost", t)
            if node.id in overrides:
                e = overrides[node.id].get("electricity_price", e)
                t = overrides[node.id].get("site_cost", t)
            nodes.append(Node(node.id, e, t))
        return Network(nodes, self.links)

    def to_tntp_text(self):
        lines = ["~ tail head distance capacity"]
        for l in self.links:
            lines.append(f"{l.tail} {l.head} {l.distance!r} {l.capacity!r}")
        return "\n".join(lines) + "\n"

    def __eq__(self, other):
        if not isinstance(other, Network):
            return NotImplemented
        return self.nodes == other.nodes and self.links == other.links

    def __repr__(self):
        return f"Network(nodes={self.n_nodes}, links={self.n_links})"

@dataclass(frozen=True)
class ODDemand:
    """Hourly demand between one origin-destination pair.

    ``ev_flow`` is the flow of EVs that must charge en route; ``ncd_flow`` is
    the non-charging background flow.
    """

    origin: int
    destination: int
    ev_flow: float
    ncd_flow: float

    def __post_init__(self):
        if self.origin == self.destination:
            raise ValidationError("demand origin and destination must differ")
        if self.ev_flow < 0 or self.ncd_flow < 0:
            raise ValidationError("negative demand")

    @property
    def total_flow(self):
        return self.ev_flow + self.ncd_flow

def penetration_rate(demands):
    """Share of total flow that charges en route (alpha)."""
    total = sum(d.total_flow for d in demands)
    if total == 0:
        return 0.0
    return sum(d.ev_flow for d in demands) / total

@dataclass(frozen=True)
class GlobalParams:
    """Economy-wide planning parameters.

    time_value: money per hour of driver time.
    service_rate: full charges one charger delivers per hour.
    profit_margin: required revenue multiple over cost (> 1).
    budget: maximum total number of chargers.
    """

    time_value: float
    service_rate: float
    profit_margin: float
    budget: int

    def __post_init__(self):
        if not self.time_value > 0:
            raise ValidationError("time value must be > 0")
        if not self.service_rate > 0:
            raise ValidationError("service rate must be > 0")
        if not self.profit_margin > 1:
            raise ValidationError("profit margin must be > 1")
        if self.budget < 0 or int(self.budget) != self.budget:
            raise ValidationError("budget must be a non-negative integer")

    def with_budget(self, budget):
        return GlobalParams(self.time_value, self.service_rate, self.profit_margin, budget)

@dataclass(frozen=True)
class Scenario:
    """A fully bound planning scenario."""

    network: Network
    demands: tuple
    params: GlobalParams
    candidate_stations: tuple | None = None

    @property
    def alpha(self):
        return penetration_rate(self.demands)

def parse_network_text(text):
    """Parse a TNTP-style link table into a Network.

    Records are whitespace-separated ``tail head distance [capacity]`` lines;
    ``~`` comments, ``<...>`` metadata lines and trailing ``;`` are tolerated.
    Capacity defaults to the uniform 1000 veh/h when omitted.
    """
    links = []
    node_ids = set()
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("~", 1)[0].strip()
        if not line or line.startswith("<"):
            continue
        line = line.rstrip(";").strip()
        fields = line.split()
        if len(fields) not in (3, 4):
            raise NetworkParseError(
                f"expected 'tail head distance [capacity]', got {raw!r}", line_no
            )
        try:
            tail, head = int(fields[0]), int(fields[1])
            distance = float(fields[2])
            capacity = float(fields[3]) if len(fields) == 4 else DEFAULT_CAPACITY
        except ValueError:
            raise NetworkParseError(f"non-numeric field in {raw!r}", line_no) from None
        links.append(Link(len(links), tail, head, distance, capacity))
        node_ids.update((tail, head))
    nodes = [Node(i) for i in sorted(node_ids)]
    return Network(nodes, links)

def load_network(source):
    """Load and validate a network from a link-table file."""
    return parse_network_text(Path(source).read_text())

def _demand_from_record(record, alpha, index):
    try:
        origin = int(record["origin"])
        destination = int(record["destination"])
    except KeyError as exc:
        raise ValidationError(f"demand {index}: missing {exc.args[0]}") from None
    if "ev_flow" in record or "ncd_flow" in record:
        ev = float(record.get("ev_flow", 0.0))
        ncd = float(record.get("ncd_flow", 0.0))
    elif "total_flow" in record:
        if alpha is None:
            raise ValidationError(
                f"demand {index}: total_flow given but params.alpha is not set"
            )
        total = float(record["total_flow"])
        if total < 0:
            raise ValidationError("negative demand")
        ev = alpha * total
        ncd = total - ev
    else:
        raise ValidationError(
            f"demand {index}: needs ev_flow/ncd_flow or total_flow"
        )
    return ODDemand(origin, destination, ev, ncd)

def load_scenario(source):
    """Load a scenario JSON file and its referenced network.

    Returns a :class:`Scenario`; the derived penetration rate is available as
    ``scenario.alpha``.
    """
    path = Path(source)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise NetworkParseError(str(exc), exc.lineno) from None

    network_path = doc.get("network_path")
    if network_path is None:
        raise ValidationError("scenario is missing network_path")
    network_file = (path.parent / network_path).resolve()
    network = load_network(network_file)

    nodes_cfg = doc.get("nodes", {})
    overrides = {
        int(k): v for k, v in nodes_cfg.get("overrides", {}).items()
    }
    for node_id in overrides:
        if not network.has_node(node_id):
            raise ValidationError(f"node override references unknown node {node_id}")
    network = network.with_node_economics(nodes_cfg.get("default"), overrides)

    params_cfg = doc.get("params", {})
    try:
        params = GlobalParams(
            time_value=float(params_cfg["lambda"]),
            service_rate=float(params_cfg["mu"]),
            profit_margin=float(params_cfg["pi"]),
            budget=int(params_cfg["budget"]),
        )
    except KeyError as exc:
        raise ValidationError(f"params: missing {exc.args[0]}") from None

    alpha = params_cfg.get("alpha")
    demands = []
    for i, record in enumerate(doc.get("demands", [])):
        demand = _demand_from_record(record, alpha, i)
        for node_id in (demand.origin, demand.destination):
            if not network.has_node(node_id):
                raise ValidationError(
                    f"demand {i} references unknown node {node_id}"
                )
        demands.append(demand)
    if not demands:
        raise ValidationError("scenario defines no demands")

    candidates = doc.get("candidate_stations")
    if candidates is not None:
        candidates = tuple(int(c) for c in candidates)
        for node_id in candidates:
            if not network.has_node(node_id):
                raise ValidationError(
                    f"candidate station references unknown node {node_id}"
                )

    return Scenario(network, tuple(demands), params, candidates)
