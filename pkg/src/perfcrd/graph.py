"""Population graphs: construction, groups, generators and edge-list I/O.

Nodes are dense integers ``0..n-1``. The group of node ``i`` is ``i`` plus its
neighbours, so its size is ``degree(i) + 1``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from typing import Iterable

import numpy as np


class GraphError(ValueError):
    """Invalid graph construction or malformed edge-list input."""


@dataclass(frozen=True)
class PopulationGraph:
    node_count: int
    edges: frozenset[tuple[int, int]]
    adjacency: tuple[tuple[int, ...], ...] = field(compare=False, repr=False)

    @classmethod
    def from_edges(cls, node_count: int, edges: Iterable[tuple[int, int]]) -> "PopulationGraph":
        if node_count < 1:
            raise GraphError(f"invalid size: graph needs at least one node, got {node_count}")
        canon = set()
        for i, j in edges:
            i, j = int(i), int(j)
            for v in (i, j):
                if not 0 <= v < node_count:
                    raise GraphError(f"node id {v} out of range")
            if i == j:
                raise GraphError(f"self-loop on node {i}")
            canon.add((min(i, j), max(i, j)))
        nbrs: list[list[int]] = [[] for _ in range(node_count)]
        for i, j in canon:
            nbrs[i].append(j)
            nbrs[j].append(i)
        adjacency = tuple(tuple(sorted(x)) for x in nbrs)
        return cls(node_count, frozenset(canon), adjacency)

    def neighbors(self, i: int) -> tuple[int, ...]:
        return self.adjacency[i]

    def group(self, i: int) -> tuple[int, ...]:
        return tuple(sorted(self.adjacency[i] + (i,)))

    def group_size(self, i: int) -> int:
        return len(self.adjacency[i]) + 1

    @cached_property
    def group_sizes(self) -> np.ndarray:
        return np.array([len(a) + 1 for a in self.adjacency], dtype=np.int64)

    @cached_property
    def adjacency_matrix(self) -> np.ndarray:
        A = np.zeros((self.node_count, self.node_count))
        for i, j in self.edges:
            A[i, j] = A[j, i] = 1.0
        A.setflags(write=False)
        return A

    @property
    def sorted_edges(self) -> list[tuple[int, int]]:
        return sorted(self.edges)

    def is_clique(self) -> bool:
        n = self.node_count
        return len(self.edges) == n * (n - 1) // 2

    def to_json(self) -> dict:
        return {"nodes": self.node_count, "edges": [list(e) for e in self.sorted_edges]}

    @classmethod
    def from_json(cls, obj: dict) -> "PopulationGraph":
        try:
            return cls.from_edges(int(obj["nodes"]), [tuple(e) for e in obj["edges"]])
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, GraphError):
                raise
            raise GraphError(f"bad inline graph: {exc}") from exc

    def relabel(self, perm: Iterable[int]) -> "PopulationGraph":
        """Graph with node ``i`` renamed to ``perm[i]``."""
        perm = list(perm)
        return PopulationGraph.from_edges(self.node_count, [(perm[i], perm[j]) for i, j in self.edges])


def make_clique(n: int) -> PopulationGraph:
    if n < 1:
        raise GraphError(f"invalid size: clique needs n >= 1, got {n}")
    return PopulationGraph.from_edges(n, [(i, j) for i in range(n) for j in range(i + 1, n)])


def make_path(n: int) -> PopulationGraph:
    if n < 1:
        raise GraphError(f"invalid size: path needs n >= 1, got {n}")
    return PopulationGraph.from_edges(n, [(i, i + 1) for i in range(n - 1)])


def make_star(leaves: int) -> PopulationGraph:
    if leaves < 0:
        raise GraphError(f"invalid size: star needs leaves >= 0, got {leaves}")
    return PopulationGraph.from_edges(leaves + 1, [(0, k) for k in range(1, leaves + 1)])


def _hub_with_pendants(spokes: int) -> PopulationGraph:
    # hub 0, spokes 1..s, pendant s+k hangs off spoke k
    edges = [(0, k) for k in range(1, spokes + 1)]
    edges += [(k, spokes + k) for k in range(1, spokes + 1)]
    return PopulationGraph.from_edges(2 * spokes + 1, edges)


HUB_VARIANTS = {
    "star3-pendants": lambda: _hub_with_pendants(3),
    "star4-pendants": lambda: _hub_with_pendants(4),
    # spokes 1 and 2 cover each other, spoke 3 carries a pendant
    "star3-triangle": lambda: PopulationGraph.from_edges(5, [(0, 1), (0, 2), (0, 3), (1, 2), (3, 4)]),
}


def make_hub_counterexample(variant: str) -> PopulationGraph:
    try:
        return HUB_VARIANTS[variant]()
    except KeyError:
        raise GraphError(
            f"unknown hub variant {variant!r}; choose from {sorted(HUB_VARIANTS)}"
        ) from None


def make_scale_free(n: int, attach_m: int = 1, seed: int = 0) -> PopulationGraph:
    """Preferential-attachment graph grown from a clique of ``attach_m + 1`` nodes.

    Each new node links to ``attach_m`` distinct existing nodes drawn with
    probability proportional to current degree.
    """
    if n < 1:
        raise GraphError(f"invalid size: n must be >= 1, got {n}")
    if not 1 <= attach_m < n:
        raise GraphError(f"attach_m must satisfy 1 <= attach_m < n, got attach_m={attach_m}, n={n}")
    rng = np.random.default_rng(seed)
    core = attach_m + 1
    edges = [(i, j) for i in range(core) for j in range(i + 1, core)]
    degree = np.zeros(n)
    for i, j in edges:
        degree[i] += 1
        degree[j] += 1
    for new in range(core, n):
        weights = degree[:new] / degree[:new].sum()
        targets = np.sort(rng.choice(new, size=attach_m, replace=False, p=weights))
        for t in targets:
            edges.append((int(t), new))
            degree[t] += 1
            degree[new] += 1
    return PopulationGraph.from_edges(n, edges)


def make_random_graph(n: int, edge_prob: float, rng: np.random.Generator) -> PopulationGraph:
    """Erdos-Renyi graph, used for randomized property checks."""
    edges = [(i, j) for i in range(n) for j in range(i + 1, n) if rng.random() < edge_prob]
    return PopulationGraph.from_edges(n, edges)


def build_graph(spec: dict) -> PopulationGraph:
    """Build a graph from a config entry (generator name or inline edge list)."""
    if "edges" in spec:
        return PopulationGraph.from_json(spec)
    gen = spec.get("generator")
    if gen == "clique":
        return make_clique(int(spec["n"]))
    if gen == "path":
        return make_path(int(spec["n"]))
    if gen == "star":
        return make_star(int(spec["leaves"]))
    if gen == "hub":
        return make_hub_counterexample(spec["variant"])
    if gen == "scale_free":
        return make_scale_free(int(spec["n"]), int(spec.get("attach_m", 1)), int(spec.get("seed", 0)))
    raise GraphError(f"unknown graph generator {gen!r}")


def serialize(g: PopulationGraph) -> str:
    lines = [f"nodes={g.node_count}"] + [f"{i} {j}" for i, j in g.sorted_edges]
    return "\n".join(lines)


def parse(text: str) -> PopulationGraph:
    lines = text.strip().splitlines()
    if not lines or not lines[0].strip().startswith("nodes="):
        raise GraphError("line 1: expected header 'nodes=<n>'")
    try:
        n = int(lines[0].strip()[len("nodes="):])
    except ValueError:
        raise GraphError(f"line 1: bad node count in {lines[0]!r}") from None
    if n < 1:
        raise GraphError(f"line 1: invalid size {n}")
    edges = []
    for lineno, raw in enumerate(lines[1:], start=2):
        line = raw.strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise GraphError(f"line {lineno}: expected 'i j', got {raw!r}")
        try:
            i, j = int(parts[0]), int(parts[1])
        except ValueError:
            raise GraphError(f"line {lineno}: non-integer node id in {raw!r}") from None
        for v in (i, j):
            if not 0 <= v < n:
                raise GraphError(f"line {lineno}: node id {v} out of range")
        if i == j:
            raise GraphError(f"line {lineno}: self-loop on node {i}")
        edges.append((i, j))
    return PopulationGraph.from_edges(n, edges)


def blocking_hubs(g: PopulationGraph) -> list[int]:
    """Nodes whose group is strictly larger than every neighbour's group and
    whose every neighbour touches some node with a group smaller than the hub's."""
    M = g.group_sizes
    hubs = []
    for h in range(g.node_count):
        mh = int(M[h])
        nbrs = g.neighbors(h)
        if not nbrs or any(M[i] >= mh for i in nbrs):
            continue
        if all(any(M[j] < mh for j in g.neighbors(i)) for i in nbrs):
            hubs.append(h)
    return hubs


def check_hub_condition(g: PopulationGraph, T: Fraction | float | str) -> bool:
    """Sufficient condition for full success to be unreachable by any prediction.

    Holds iff a blocking hub ``H`` exists and ``T == (M_H - 1) / M_H`` exactly.
    """
    T = Fraction(T)
    M = g.group_sizes
    return any(T == Fraction(int(M[h]) - 1, int(M[h])) for h in blocking_hubs(g))
