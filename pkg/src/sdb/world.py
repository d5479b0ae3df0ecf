"""Synthetic instruction-following world on small navigable graphs.

Every node carries a landmark token; instructions list the landmarks along
the expert path (optionally interleaved with distractor tokens).  Node
features are a fixed per-landmark code plus per-graph noise, so a policy can
learn to match instruction tokens to the features of neighbouring nodes.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field

import networkx as nx
import numpy as np

from .core import SDBError

STOP = -1
NUM_LANDMARKS = 64
NUM_DISTRACTORS = 8
CODE_SEED = 20240601


class Unsatisfiable(SDBError):
    pass


class Unreachable(SDBError):
    pass


class EmptySet(SDBError):
    pass


@dataclass
class WorldConfig:
    num_train_graphs: int = 40
    num_eval_graphs: int = 10
    eval_episodes_per_graph: int = 10
    min_nodes: int = 6
    max_nodes: int = 10
    min_hops: int = 2
    distractor_rate: float = 0.0
    random_edge_lengths: bool = False
    env_feature_dim: int = 16
    feature_noise: float = 0.1
    radius: float = 0.45
    max_instruction_len: int = 12
    data_seed: int = 1234


@dataclass(frozen=True)
class NavGraph:
    features: np.ndarray  # [n, F]
    landmarks: np.ndarray  # [n] token ids
    adjacency: tuple[tuple[int, ...], ...]  # sorted neighbours per node
    lengths: dict  # (u, v) with u < v -> positive length
    start: int
    goal: int
    seed: int

    @property
    def num_nodes(self) -> int:
        return len(self.adjacency)

    def edge_length(self, u: int, v: int) -> float:
        return self.lengths[(min(u, v), max(u, v))]

    def with_endpoints(self, start: int, goal: int) -> "NavGraph":
        return NavGraph(self.features, self.landmarks, self.adjacency, self.lengths, start, goal, self.seed)


@dataclass
class Episode:
    graph: NavGraph
    instruction: list[int]
    expert_path: list[int]
    episode_id: str = ""


@dataclass
class EpisodeRecord:
    """What happened in one rollout."""

    episode: Episode
    trajectory: list[int]
    actions: list[int] = field(default_factory=list)
    stopped: bool = False
    slots: list[int] = field(default_factory=list)
    weights: list[list[float]] = field(default_factory=list)
    ema_weights: list[list[float]] = field(default_factory=list)
    plans: list[str] = field(default_factory=list)


def landmark_codes(dim: int) -> np.ndarray:
    """Fixed feature code for every landmark token, shared by all graphs."""
    rng = np.random.default_rng(CODE_SEED)
    codes = rng.standard_normal((NUM_LANDMARKS, dim))
    return codes / np.linalg.norm(codes, axis=1, keepdims=True)


def _connect(g: nx.Graph, pos: np.ndarray) -> None:
    comps = [sorted(c) for c in nx.connected_components(g)]
    while len(comps) > 1:
        a, rest = comps[0], [n for c in comps[1:] for n in c]
        d = np.linalg.norm(pos[a][:, None, :] - pos[rest][None, :, :], axis=-1)
        i, j = np.unravel_index(np.argmin(d), d.shape)
        g.add_edge(a[i], rest[j])
        comps = [sorted(c) for c in nx.connected_components(g)]


def sample_graph(cfg: WorldConfig, seed: int, num_nodes: int | None = None, attempts: int = 20) -> NavGraph:
    """Connected random geometric graph with landmark features and endpoints.

    Node positions are redrawn (same RNG stream) when no start/goal pair is
    ``min_hops`` apart; ``Unsatisfiable`` after ``attempts`` draws.
    """
    rng = np.random.default_rng(seed)
    n = int(num_nodes if num_nodes is not None else rng.integers(cfg.min_nodes, cfg.max_nodes + 1))
    if n < 3:
        raise ValueError("graphs need at least 3 nodes")
    for _ in range(attempts):
        pos = rng.random((n, 2))
        g = nx.Graph()
        g.add_nodes_from(range(n))
        for u in range(n):
            for v in range(u + 1, n):
                if np.linalg.norm(pos[u] - pos[v]) <= cfg.radius:
                    g.add_edge(u, v)
        _connect(g, pos)
        if nx.diameter(g) >= cfg.min_hops:
            return _finish_graph(g, cfg, rng, seed)
    raise Unsatisfiable(f"no {n}-node graph with a pair {cfg.min_hops} hops apart after {attempts} draws")


def graph_from_edges(edges: list[tuple[int, int]], cfg: WorldConfig, seed: int = 0, lengths: dict | None = None) -> NavGraph:
    """Build a graph with a given edge set; endpoints are drawn as in ``sample_graph``."""
    g = nx.Graph()
    g.add_nodes_from(range(1 + max(max(e) for e in edges)))
    g.add_edges_from(edges)
    return _finish_graph(g, cfg, np.random.default_rng(seed), seed, lengths)


def _finish_graph(g: nx.Graph, cfg: WorldConfig, rng: np.random.Generator, seed: int, lengths: dict | None = None) -> NavGraph:
    n = g.number_of_nodes()
    if not nx.is_connected(g):
        raise ValueError("graph is not connected")
    landmarks = rng.choice(NUM_LANDMARKS, size=n, replace=False)
    codes = landmark_codes(cfg.env_feature_dim)
    features = codes[landmarks] + cfg.feature_noise * rng.standard_normal((n, cfg.env_feature_dim))
    adjacency = tuple(tuple(sorted(g.neighbors(u))) for u in range(n))
    if lengths is None:
        lengths = {}
        for u, v in sorted((min(e), max(e)) for e in g.edges()):
            lengths[(u, v)] = float(rng.uniform(0.5, 1.5)) if cfg.random_edge_lengths else 1.0
    graph = NavGraph(features, landmarks.astype(int), adjacency, dict(lengths), 0, 1, seed)
    start, goal = sample_endpoints(graph, cfg.min_hops, rng)
    return graph.with_endpoints(start, goal)


def hop_distances(graph: NavGraph, source: int) -> list[int]:
    dist = [-1] * graph.num_nodes
    dist[source] = 0
    frontier = [source]
    while frontier:
        nxt = []
        for u in frontier:
            for v in graph.adjacency[u]:
                if dist[v] < 0:
                    dist[v] = dist[u] + 1
                    nxt.append(v)
        frontier = nxt
    return dist


def sample_endpoints(graph: NavGraph, min_hops: int, rng: np.random.Generator) -> tuple[int, int]:
    """Uniform draw over ordered pairs at least ``min_hops`` apart."""
    hops = [hop_distances(graph, u) for u in range(graph.num_nodes)]
    pairs = [(u, v) for u in range(graph.num_nodes) for v in range(graph.num_nodes) if u != v and hops[u][v] >= min_hops]
    if not pairs:
        raise Unsatisfiable(f"no start/goal pair at >= {min_hops} hops")
    return pairs[int(rng.integers(len(pairs)))]


def distances_to(graph: NavGraph, target: int) -> list[float]:
    """Dijkstra distances from every node to ``target`` (inf if unreachable)."""
    dist = [float("inf")] * graph.num_nodes
    dist[target] = 0.0
    heap = [(0.0, target)]
    while heap:
        d, u = heapq.heappop(heap)
        if d > dist[u]:
            continue
        for v in graph.adjacency[u]:
            nd = d + graph.edge_length(u, v)
            if nd < dist[v]:
                dist[v] = nd
                heapq.heappush(heap, (nd, v))
    return dist


def candidate_actions(graph: NavGraph, node: int) -> list[int]:
    """Neighbours in ascending id order, then STOP."""
    return list(graph.adjacency[node]) + [STOP]


def expert_action(graph: NavGraph, current: int, goal: int, dist: list[float] | None = None) -> int:
    if current == goal:
        return STOP
    if dist is None:
        dist = distances_to(graph, goal)
    if dist[current] == float("inf"):
        raise Unreachable(f"node {goal} unreachable from {current}")
    best, best_cost = None, float("inf")
    for v in graph.adjacency[current]:
        cost = graph.edge_length(current, v) + dist[v]
        if cost < best_cost - 1e-12:
            best, best_cost = v, cost
    return best


def expert_path(graph: NavGraph) -> list[int]:
    dist = distances_to(graph, graph.goal)
    path = [graph.start]
    while path[-1] != graph.goal:
        path.append(expert_action(graph, path[-1], graph.goal, dist))
    return path


def synthesize_instruction(graph: NavGraph, path: list[int], distractor_rate: float, rng: np.random.Generator, max_len: int) -> list[int]:
    tokens: list[int] = []
    for node in path:
        tokens.append(int(graph.landmarks[node]))
        if distractor_rate > 0 and rng.random() < distractor_rate:
            tokens.append(NUM_LANDMARKS + int(rng.integers(NUM_DISTRACTORS)))
    return tokens[:max_len]


def make_episode(graph: NavGraph, cfg: WorldConfig, rng: np.random.Generator, episode_id: str = "") -> Episode:
    path = expert_path(graph)
    instr = synthesize_instruction(graph, path, cfg.distractor_rate, rng, cfg.max_instruction_len)
    return Episode(graph, instr, path, episode_id)


def build_splits(cfg: WorldConfig) -> tuple[list[NavGraph], list[Episode]]:
    """Training graphs and the fixed held-out evaluation episodes."""
    train = [sample_graph(cfg, cfg.data_seed * 1000 + i) for i in range(cfg.num_train_graphs)]
    episodes = []
    for i in range(cfg.num_eval_graphs):
        seed = cfg.data_seed * 1000 + 500 + i
        g = sample_graph(cfg, seed)
        rng = np.random.default_rng([cfg.data_seed, 7, i])
        for j in range(cfg.eval_episodes_per_graph):
            if j > 0:
                g = g.with_endpoints(*sample_endpoints(g, cfg.min_hops, rng))
            episodes.append(make_episode(g, cfg, rng, f"eval-{i}-{j}"))
    return train, episodes


def sample_training_episode(graphs: list[NavGraph], cfg: WorldConfig, rng: np.random.Generator) -> Episode:
    g = graphs[int(rng.integers(len(graphs)))]
    g = g.with_endpoints(*sample_endpoints(g, cfg.min_hops, rng))
    return make_episode(g, cfg, rng)


# -- metrics ---------------------------------------------------------------


@dataclass
class MetricsTable:
    TL: float
    NE: float
    SR: float
    OSR: float
    SPL: float

    def as_dict(self) -> dict[str, float]:
        return {"TL": self.TL, "NE": self.NE, "SR": self.SR, "OSR": self.OSR, "SPL": self.SPL}


def path_length(graph: NavGraph, nodes: list[int]) -> float:
    return sum(graph.edge_length(u, v) for u, v in zip(nodes, nodes[1:]))


def episode_metrics(record: EpisodeRecord, delta: float) -> dict[str, float]:
    graph = record.episode.graph
    dist = distances_to(graph, graph.goal)
    executed = path_length(graph, record.trajectory)
    shortest = dist[graph.start]
    ne = dist[record.trajectory[-1]]
    success = float(ne <= delta + 1e-9)
    oracle = float(min(dist[v] for v in record.trajectory) <= delta + 1e-9)
    spl = success * shortest / max(executed, shortest) if max(executed, shortest) > 0 else success
    return {"TL": executed, "NE": ne, "SR": success, "OSR": oracle, "SPL": spl}


def compute_metrics(records: list[EpisodeRecord], delta: float) -> MetricsTable:
    if not records:
        raise EmptySet("no episodes to score")
    if delta < 0:
        raise ValueError("delta must be non-negative")
    per = [episode_metrics(r, delta) for r in records]
    n = len(per)
    return MetricsTable(**{k: sum(p[k] for p in per) / n for k in ("TL", "NE", "SR", "OSR", "SPL")})
