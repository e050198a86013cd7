"""Route enumeration and extended-path catalog construction.

Routes are simple link sequences between an O-D pair, enumerated in ascending
free-flow distance. An extended path pairs a route with one on-route charging
node; the catalog indexes both directions (path -> station, station -> paths,
link -> routes/paths) and carries the incidence matrices used by the solvers.
"""

from __future__ import annotations

import heapq
import json
from dataclasses import dataclass

import numpy as np

from .errors import NoRouteError, ValidationError

_DIST_TIE_DECIMALS = 9
_MAX_EXPANSIONS = 500_000


@dataclass(frozen=True)
class Route:
    """A simple route for one O-D pair.

    ``link_ixs`` index into ``network.links``; ``node_ids`` is the implied
    node sequence from origin to destination.
    """

    od: int
    link_ixs: tuple
    node_ids: tuple
    distance: float


@dataclass(frozen=True)
class ExtendedPath:
    """A route plus the node where the EV charges."""

    od: int
    route_ix: int
    charge_node: int


def _min_dist_to(network, destination):
    """Dijkstra distances from every node to ``destination``."""
    inf = float("inf")
    dist = {node.id: inf for node in network.nodes}
    dist[destination] = 0.0
    incoming = {node.id: [] for node in network.nodes}
    for link in network.links:
        incoming[link.head].append(link)
    heap = [(0.0, destination)]
    while heap:
        d, node = heapq.heappop(heap)
        if d > dist[node]:
            continue
        for link in incoming[node]:
            nd = d + link.distance
            if nd < dist[link.tail] - 1e-15:
                dist[link.tail] = nd
                heapq.heappush(heap, (nd, link.tail))
    return dist


def enumerate_routes(network, od, k, od_index=0):
    """Enumerate up to ``k`` shortest simple routes for one O-D pair.

    Best-first search over partial simple paths with a Dijkstra
    lower bound to the destination; results are ordered by ascending
    free-flow distance with ties broken by lexicographic node sequence.
    """
    if k < 1:
        raise ValidationError("route budget k must be >= 1")
    origin, destination = od.origin, od.destination
    h = _min_dist_to(network, destination)
    if h[origin] == float("inf"):
        raise NoRouteError(f"no route from {origin} to {destination}")

    # Heap entries: (lower bound, node sequence, distance so far, link indices).
    heap = [(h[origin], (origin,), 0.0, ())]
    found = []
    expansions = 0
    while heap and expansions < _MAX_EXPANSIONS:
        f, node_seq, dist, link_seq = heapq.heappop(heap)
        expansions += 1
        if len(found) >= k and f > found[k - 1][0] + 1e-12:
            break
        last = node_seq[-1]
        if last == destination:
            found.append((dist, node_seq, link_seq))
            found.sort(key=lambda rec: (round(rec[0], _DIST_TIE_DECIMALS), rec[1]))
            continue
        seen = set(node_seq)
        for link in sorted(network.out_links[last], key=lambda l: (l.head, l.id)):
            if link.head in seen or h[link.head] == float("inf"):
                continue
            nd = dist + link.distance
            heapq.heappush(
                heap, (nd + h[link.head], node_seq + (link.head,), nd, link_seq + (link.id,))
            )

    routes = [
        Route(od_index, link_seq, node_seq, dist)
        for dist, node_seq, link_seq in found[:k]
    ]
    if not routes:
        raise NoRouteError(f"no route from {origin} to {destination}")
    return routes


def build_extended_paths(routes, candidate_stations, route_offset=0):
    """One extended path per (route, on-route candidate station) pair."""
    candidates = set(candidate_stations)
    paths = []
    for i, route in enumerate(routes):
        for node_id in route.node_ids:
            if node_id in candidates:
                paths.append(ExtendedPath(route.od, route_offset + i, node_id))
    return paths


class PathCatalog:
    """Immutable per-scenario catalog of routes and extended paths.

    Routes and paths are stored contiguously by O-D pair; incidence matrices
    and reverse indices are precomputed for the equilibrium solver.
    """

    def __init__(self, network, demands, routes, paths, candidate_stations):
        self.network = network
        self.demands = tuple(demands)
        self.routes = tuple(routes)
        self.paths = tuple(paths)
        self.candidate_stations = tuple(candidate_stations)

        n_links = network.n_links
        self.route_od = np.array([r.od for r in self.routes], dtype=int)
        self.path_od = np.array([p.od for p in self.paths], dtype=int)
        self.path_route = np.array([p.route_ix for p in self.paths], dtype=int)
        self.path_station_ix = np.array(
            [network.node_index(p.charge_node) for p in self.paths], dtype=int
        )

        self.route_link = np.zeros((len(self.routes), n_links))
        for i, route in enumerate(self.routes):
            for link_ix in route.link_ixs:
                self.route_link[i, link_ix] += 1.0
        self.path_link = self.route_link[self.path_route]

        self.route_slices = self._slices(self.route_od, len(self.demands))
        self.path_slices = self._slices(self.path_od, len(self.demands))

        self.ev_demand = np.array([d.ev_flow for d in self.demands])
        self.ncd_demand = np.array([d.ncd_flow for d in self.demands])
        # Per-entry demand weights, aligned with the flat strategy vectors.
        self.route_weight = self.ncd_demand[self.route_od]
        self.path_weight = self.ev_demand[self.path_od]

        self.paths_by_station = {}
        for j, p in enumerate(self.paths):
            self.paths_by_station.setdefault(p.charge_node, []).append(j)
        self.routes_by_link = {}
        self.paths_by_link = {}
        for i, route in enumerate(self.routes):
            for link_ix in route.link_ixs:
                self.routes_by_link.setdefault(link_ix, []).append(i)
        for j, p in enumerate(self.paths):
            for link_ix in self.routes[p.route_ix].link_ixs:
                self.paths_by_link.setdefault(link_ix, []).append(j)

    @staticmethod
    def _slices(od_array, n_ods):
        slices = []
        start = 0
        for od in range(n_ods):
            count = int(np.sum(od_array == od))
            slices.append((start, start + count))
            start += count
        if start != len(od_array):
            raise ValidationError("catalog entries are not contiguous by O-D")
        return tuple(slices)

    @property
    def n_routes(self):
        return len(self.routes)

    @property
    def n_paths(self):
        return len(self.paths)

    def routes_of(self, od):
        lo, hi = self.route_slices[od]
        return self.routes[lo:hi]

    def paths_of(self, od):
        lo, hi = self.path_slices[od]
        return self.paths[lo:hi]

    def to_json(self):
        """Debug dump: routes as node sequences, paths as (route, station)."""
        return json.dumps(
            {
                "routes": [
                    {"od": r.od, "nodes": list(r.node_ids), "distance": r.distance}
                    for r in self.routes
                ],
                "extended_paths": [
                    {"od": p.od, "route": p.route_ix, "charge_node": p.charge_node}
                    for p in self.paths
                ],
            },
            indent=2,
        )


def build_catalog(network, demands, k=10, candidate_stations=None):
    """Enumerate routes and extended paths for every demand pair."""
    if candidate_stations is None:
        candidate_stations = [node.id for node in network.nodes]
    routes = []
    paths = []
    for od_index, od in enumerate(demands):
        od_routes = enumerate_routes(network, od, k, od_index=od_index)
        paths.extend(
            build_extended_paths(od_routes, candidate_stations, route_offset=len(routes))
        )
        routes.extend(od_routes)
    return PathCatalog(network, demands, routes, paths, candidate_stations)
