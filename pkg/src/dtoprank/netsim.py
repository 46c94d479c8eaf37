"""Synthetic DDoS traffic on a random topology observed by link monitors.

A connected Erdos-Renyi graph carries traffic between hosts placed on its
nodes.  Each (src, dst) pair sends Poisson SYN counts per bin with a
Pareto-distributed intensity; a set of attacker sources multiply their rate to
one target by ``eta`` after bin ``tau``.  A monitor sitting on an edge sees
every pair whose shortest route crosses that edge.
"""

from __future__ import annotations

import dataclasses
import json
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from dtoprank.monitor import FlowTable

__all__ = [
    "ConfigError",
    "GenerationError",
    "SimConfig",
    "Topology",
    "GroundTruth",
    "Replication",
    "gen_graph",
    "compute_routes",
    "place_monitors",
    "pareto_quantile",
    "gen_intensities",
    "build_topology",
    "gen_traffic",
    "load_config",
]

MAX_GRAPH_ATTEMPTS = 10_000


class ConfigError(ValueError):
    pass


class GenerationError(RuntimeError):
    pass


Edge = tuple[int, int]


def _edge(a: int, b: int) -> Edge:
    return (a, b) if a < b else (b, a)


@dataclass(frozen=True)
class SimConfig:
    n_nodes: int = 15
    edge_prob: float = 0.15
    D: int = 1000
    K: int = 15
    N: int = 10100
    N_a: int = 100
    P: int = 60
    tau: int = 30
    eta: float = 1.5
    pareto_alpha: float = 2.5
    pareto_gamma: float = 0.72
    target_node: int = 7
    seed: int = 0
    # Seed of the single graph shared by every replication.  The default gives
    # a 24-edge graph in which the target node is a leaf hanging off node 10.
    graph_seed: int = 1508
    delta: float = 1.0
    exclude_edge: tuple[int, int] | None = None
    placement: str = "route"

    def __post_init__(self):
        if self.exclude_edge is not None:
            object.__setattr__(self, "exclude_edge", _edge(*map(int, self.exclude_edge)))
        self.validate()

    def validate(self):
        checks = [
            (self.n_nodes >= 2, "n_nodes", "must be >= 2"),
            (0 < self.edge_prob <= 1, "edge_prob", "must lie in (0, 1]"),
            (self.D >= 2, "D", "must be >= 2"),
            (self.K >= 0, "K", "must be >= 0"),
            (0 < self.N_a < self.N, "N_a", "must satisfy 0 < N_a < N"),
            (41 * self.N_a <= self.N, "N_a", "attack intensity band needs 41*N_a <= N"),
            (self.N - self.N_a <= (self.D - 1) ** 2, "N",
             "more background pairs than distinct (src, dst) pairs"),
            (self.N_a <= self.D - 1, "N_a", "more attackers than hosts"),
            (self.P >= 2, "P", "must be >= 2"),
            (1 <= self.tau < self.P, "tau", "must satisfy 1 <= tau < P"),
            (self.eta > 0, "eta", "must be positive"),
            (self.pareto_alpha > 1, "pareto_alpha", "must be > 1"),
            (self.pareto_gamma > 0, "pareto_gamma", "must be positive"),
            (1 <= self.target_node <= self.n_nodes, "target_node", "must be a node id in 1..n_nodes"),
            (self.delta > 0, "delta", "must be positive"),
            (self.placement in ("route", "hash"), "placement", "must be 'route' or 'hash'"),
        ]
        for ok, key, msg in checks:
            if not ok:
                raise ConfigError(f"{key}: {msg}")

    def replace(self, **changes) -> "SimConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        if d["exclude_edge"] is not None:
            d["exclude_edge"] = list(d["exclude_edge"])
        return d


def load_config(path, **overrides) -> SimConfig:
    """Read a JSON object of SimConfig fields; unknown keys are rejected by name."""
    data = json.loads(Path(path).read_text()) if path else {}
    if not isinstance(data, dict):
        raise ConfigError("config file must hold a JSON object")
    data.update({k: v for k, v in overrides.items() if v is not None})
    known = {f.name for f in dataclasses.fields(SimConfig)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown config key: {', '.join(unknown)}")
    try:
        return SimConfig(**data)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


@dataclass
class Topology:
    nodes: list[int]
    edges: list[Edge]
    routes: dict[tuple[int, int], list[Edge]] = field(default_factory=dict, repr=False)
    monitor_edges: list[Edge] = field(default_factory=list)

    def with_monitors(self, monitor_edges) -> "Topology":
        return dataclasses.replace(self, monitor_edges=list(monitor_edges))

    def route_monitor_mask(self) -> np.ndarray:
        """``mask[a, b, k]`` is True when monitor ``k`` lies on the route a -> b (1-based nodes)."""
        n = len(self.nodes)
        mask = np.zeros((n + 1, n + 1, len(self.monitor_edges)), dtype=bool)
        pos = {e: k for k, e in enumerate(self.monitor_edges)}
        for (a, b), route in self.routes.items():
            for e in route:
                k = pos.get(e)
                if k is not None:
                    mask[a, b, k] = True
        return mask


@dataclass(frozen=True)
class GroundTruth:
    attacked_dst: int
    attacker_srcs: frozenset
    change_bin: int


@dataclass
class Replication:
    """One simulated window: per-monitor flows plus what is needed to check them."""

    flows: list[FlowTable]
    truth: GroundTruth
    topology: Topology
    host_node: np.ndarray
    pair_src: np.ndarray
    pair_dst: np.ndarray
    pair_counts: np.ndarray
    pair_monitors: np.ndarray

    def true_counts(self, monitor: int, dst: int) -> np.ndarray:
        """Exact per-bin SYN count towards ``dst`` on ``monitor``'s link."""
        sel = (self.pair_dst == dst) & self.pair_monitors[:, monitor]
        return self.pair_counts[sel].sum(axis=0)

    @property
    def n_flows(self) -> int:
        """Distinct flows in the window, irrespective of how many monitors saw them."""
        return int(np.count_nonzero(self.pair_counts))


def _connected(n: int, adj: np.ndarray) -> bool:
    seen = np.zeros(n, dtype=bool)
    seen[0] = True
    queue = deque([0])
    while queue:
        u = queue.popleft()
        for v in np.nonzero(adj[u] & ~seen)[0]:
            seen[v] = True
            queue.append(v)
    return bool(seen.all())


def gen_graph(n: int, p: float, seed) -> Topology:
    """Connected G(n, p) graph on nodes 1..n, resampled until connected."""
    if n < 2:
        raise ValueError(f"need at least 2 nodes, got {n}")
    if not 0 < p <= 1:
        raise ValueError(f"edge probability must lie in (0, 1], got {p}")
    rng = np.random.default_rng(seed)
    iu = np.triu_indices(n, k=1)
    for _ in range(MAX_GRAPH_ATTEMPTS):
        draw = rng.random(iu[0].size) < p
        adj = np.zeros((n, n), dtype=bool)
        adj[iu[0][draw], iu[1][draw]] = True
        adj |= adj.T
        if _connected(n, adj):
            edges = [(int(a) + 1, int(b) + 1) for a, b in zip(iu[0][draw], iu[1][draw])]
            return Topology(nodes=list(range(1, n + 1)), edges=edges)
    raise GenerationError(f"no connected G({n}, {p}) graph in {MAX_GRAPH_ATTEMPTS} attempts")


def _bfs_dist(adj: dict[int, list[int]], src: int) -> dict[int, int]:
    dist = {src: 0}
    queue = deque([src])
    while queue:
        u = queue.popleft()
        for v in adj[u]:
            if v not in dist:
                dist[v] = dist[u] + 1
                queue.append(v)
    return dist


def compute_routes(topology: Topology) -> dict[tuple[int, int], list[Edge]]:
    """All-pairs shortest routes (unit weights) as edge lists.

    Among equal-length paths the lexicographically smallest node sequence is
    taken: walking from the source, always step to the smallest neighbour that
    is one hop closer to the destination.
    """
    adj: dict[int, list[int]] = {u: [] for u in topology.nodes}
    for a, b in topology.edges:
        adj[a].append(b)
        adj[b].append(a)
    for u in adj:
        adj[u].sort()
    dist = {u: _bfs_dist(adj, u) for u in topology.nodes}

    routes = {}
    for src in topology.nodes:
        for dst in topology.nodes:
            if dst not in dist[src]:
                raise GenerationError(f"no route from {src} to {dst}")
            path = [src]
            u = src
            while u != dst:
                u = next(v for v in adj[u] if dist[dst].get(v, -1) == dist[dst][u] - 1)
                path.append(u)
            routes[(src, dst)] = [_edge(a, b) for a, b in zip(path, path[1:])]
    return routes


def build_topology(config: SimConfig) -> Topology:
    topo = gen_graph(config.n_nodes, config.edge_prob, config.graph_seed)
    topo.routes = compute_routes(topo)
    return topo


def place_monitors(topology: Topology, K: int, rng, exclude_edge: Edge | None = None) -> list[Edge]:
    """Uniformly random K-subset of the edges, never using ``exclude_edge``."""
    rng = np.random.default_rng(rng)
    candidates = [e for e in topology.edges if exclude_edge is None or e != _edge(*exclude_edge)]
    if K > len(candidates):
        raise ValueError(f"cannot place {K} monitors on {len(candidates)} eligible edges")
    if K <= 0:
        return []
    pick = rng.choice(len(candidates), size=K, replace=False)
    return sorted(candidates[i] for i in pick)


def pareto_quantile(u, alpha: float, gamma: float):
    """Inverse c.d.f. of the density gamma*alpha / (1 + gamma*x)^(1 + alpha)."""
    u = np.asarray(u, dtype=float)
    return ((1.0 - u) ** (-1.0 / alpha) - 1.0) / gamma


def gen_intensities(N: int, alpha: float, gamma: float, rng) -> np.ndarray:
    """N i.i.d. Pareto intensities sorted in decreasing order."""
    if not alpha > 1 or not gamma > 0:
        raise ValueError("need alpha > 1 and gamma > 0")
    rng = np.random.default_rng(rng)
    return np.sort(pareto_quantile(rng.random(N), alpha, gamma))[::-1]


def _sample_pairs(rng, D: int, n: int, target: int) -> tuple[np.ndarray, np.ndarray]:
    """n distinct (src, dst) host pairs with src != dst and dst != target."""
    # Pairs are encoded over the (D-1) x (D-1) grid of (dst != target, src != dst).
    codes = rng.choice((D - 1) * (D - 1), size=n, replace=False)
    dst_slot, src_slot = np.divmod(codes, D - 1)
    hosts = np.arange(1, D + 1)
    others = hosts[hosts != target]
    dst = others[dst_slot]
    src = np.where(src_slot + 1 >= dst, src_slot + 2, src_slot + 1)
    return src.astype(np.int64), dst.astype(np.int64)


def gen_traffic(config: SimConfig, topology: Topology, rng) -> Replication:
    """Simulate one observation window.

    Hosts are ``1..D``; the attacked host sits on ``target_node``.  The
    returned flows hold one record per (pair, bin) with a nonzero count,
    starting at a uniform time inside the bin, duplicated to every monitor
    that sees the pair.
    """
    rng = np.random.default_rng(rng)
    D, N, N_a, P = config.D, config.N, config.N_a, config.P
    if not topology.routes:
        raise ConfigError("topology has no routes; call compute_routes first")
    if config.target_node not in topology.nodes:
        raise ConfigError(f"target_node: {config.target_node} is not a node of the graph")

    monitors = place_monitors(topology, config.K, rng, config.exclude_edge)
    topo = topology.with_monitors(monitors)

    host_node = np.concatenate([[0], rng.integers(1, len(topo.nodes) + 1, size=D)])
    target = int(rng.integers(1, D + 1))
    host_node[target] = config.target_node

    candidates = np.arange(1, D + 1)
    candidates = candidates[candidates != target]
    attackers = np.sort(rng.choice(candidates, size=N_a, replace=False))
    bg_src, bg_dst = _sample_pairs(rng, D, N - N_a, target)
    if attackers.size + bg_src.size != N:
        raise ConfigError("N must equal N_a plus the number of background pairs")

    mu = gen_intensities(N, config.pareto_alpha, config.pareto_gamma, rng)
    band = slice(40 * N_a, 41 * N_a)
    theta_attack = rng.permutation(mu[band])
    theta_bg = rng.permutation(np.concatenate([mu[:band.start], mu[band.stop:]]))

    pair_src = np.concatenate([attackers, bg_src])
    pair_dst = np.concatenate([np.full(N_a, target), bg_dst])
    rates = np.repeat(np.concatenate([theta_attack, theta_bg])[:, None], P, axis=1)
    rates[:N_a, config.tau:] *= config.eta
    counts = rng.poisson(rates).astype(np.int64)

    K = len(monitors)
    if config.placement == "route":
        pair_monitors = topo.route_monitor_mask()[host_node[pair_src], host_node[pair_dst]]
    else:
        pair_monitors = np.zeros((N, K), dtype=bool)
        if K:
            pair_monitors[np.arange(N), rng.integers(0, K, size=N)] = True

    pair_idx, bin_idx = np.nonzero(counts)
    jitter = np.minimum(rng.random(pair_idx.size), 1.0 - 1e-9)
    start = (bin_idx + jitter) * config.delta
    all_flows = FlowTable(start, start, pair_src[pair_idx], pair_dst[pair_idx],
                          counts[pair_idx, bin_idx])
    flows = [all_flows.take(pair_monitors[pair_idx, k]) for k in range(K)]

    truth = GroundTruth(target, frozenset(int(a) for a in attackers), config.tau)
    return Replication(flows, truth, topo, host_node, pair_src, pair_dst, counts, pair_monitors)
