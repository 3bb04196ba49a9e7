"""Directed communication graphs for gradient-push.

Vertices are 0-based.  An arc ``(i, j)`` means agent ``i`` sends to agent
``j``.  Every graph built here carries a self-loop on each vertex.

Random graphs are drawn with numpy's PCG64 generator
(``numpy.random.default_rng(seed)``): one uniform draw per ordered pair
``(source, target)`` with ``source != target``, visited in row-major order,
and the arc is kept when the draw is ``< p``.  That order is part of the
serialization contract, so a seed fixes the graph.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np


class GraphAssumptionError(ValueError):
    """Raised when a graph lacks a self-loop somewhere or is not strongly connected."""


@dataclass(frozen=True)
class DiGraph:
    n: int
    arcs: frozenset[tuple[int, int]]
    out_degree: tuple[int, ...] = field(init=False)

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"graph needs at least one vertex, got n={self.n}")
        arcs = frozenset((int(i), int(j)) for i, j in self.arcs)
        for i, j in arcs:
            if not (0 <= i < self.n and 0 <= j < self.n):
                raise ValueError(f"arc {(i, j)} out of range for n={self.n}")
        deg = [0] * self.n
        for i, _ in arcs:
            deg[i] += 1
        object.__setattr__(self, "arcs", arcs)
        object.__setattr__(self, "out_degree", tuple(deg))

    def __len__(self):
        return len(self.arcs)

    def adjacency(self) -> np.ndarray:
        """Boolean matrix with ``adj[i, j]`` true iff ``(i, j)`` is an arc."""
        adj = np.zeros((self.n, self.n), dtype=bool)
        for i, j in self.arcs:
            adj[i, j] = True
        return adj

    def out_neighbors(self, i: int) -> list[int]:
        return sorted(j for s, j in self.arcs if s == i)

    def in_neighbors(self, i: int) -> list[int]:
        return sorted(s for s, j in self.arcs if j == i)

    def has_self_loops(self) -> bool:
        return all((i, i) in self.arcs for i in range(self.n))

    def sorted_arcs(self) -> list[tuple[int, int]]:
        return sorted(self.arcs)

    def transpose(self) -> "DiGraph":
        return DiGraph(self.n, frozenset((j, i) for i, j in self.arcs))


def from_arcs(n: int, arcs: Iterable[tuple[int, int]]) -> DiGraph:
    return DiGraph(n, frozenset(arcs))


def random_digraph(n: int, p: float, seed: int) -> DiGraph:
    """Sample a digraph with forced self-loops and i.i.d. arcs of probability ``p``.

    The result is not checked for strong connectivity; see
    :func:`is_strongly_connected` and :func:`sample_strongly_connected`.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p must lie in [0, 1], got {p}")
    rng = np.random.default_rng(seed)
    arcs = {(i, i) for i in range(n)}
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            if rng.random() < p:
                arcs.add((i, j))
    return DiGraph(n, frozenset(arcs))


def ring_digraph(n: int) -> DiGraph:
    arcs = {(i, i) for i in range(n)} | {(i, (i + 1) % n) for i in range(n)}
    return DiGraph(n, frozenset(arcs))


def complete_digraph(n: int) -> DiGraph:
    return DiGraph(n, frozenset((i, j) for i in range(n) for j in range(n)))


def _reaches_all(n: int, succ: list[list[int]], start: int = 0) -> bool:
    seen = [False] * n
    seen[start] = True
    queue = deque([start])
    count = 1
    while queue:
        v = queue.popleft()
        for u in succ[v]:
            if not seen[u]:
                seen[u] = True
                count += 1
                queue.append(u)
    return count == n


def is_strongly_connected(g: DiGraph) -> bool:
    """Two BFS sweeps from vertex 0, one on ``g`` and one on its transpose."""
    fwd = [[] for _ in range(g.n)]
    bwd = [[] for _ in range(g.n)]
    for i, j in g.arcs:
        fwd[i].append(j)
        bwd[j].append(i)
    return _reaches_all(g.n, fwd) and _reaches_all(g.n, bwd)


def validate(g: DiGraph) -> None:
    """Raise :class:`GraphAssumptionError` unless every vertex has a self-loop and the graph is strongly connected."""
    missing = [i for i in range(g.n) if (i, i) not in g.arcs]
    if missing:
        raise GraphAssumptionError(f"vertices {missing} lack a self-loop")
    if not is_strongly_connected(g):
        raise GraphAssumptionError("graph is not strongly connected")


def sample_strongly_connected(n: int, p: float, seed: int, max_tries: int = 10_000) -> tuple[DiGraph, int]:
    """Resample with ``seed, seed+1, ...`` until the graph is strongly connected.

    Returns the graph and the seed that produced it.
    """
    for k in range(max_tries):
        g = random_digraph(n, p, seed + k)
        if is_strongly_connected(g):
            return g, seed + k
    raise GraphAssumptionError(
        f"no strongly connected graph in {max_tries} draws (n={n}, p={p}, seed={seed})"
    )


# -- serialization -----------------------------------------------------------

def dumps(g: DiGraph) -> str:
    lines = [f"n={g.n}"]
    lines.extend(f"{i} {j}" for i, j in g.sorted_arcs())
    return "\n".join(lines) + "\n"


def loads(text: str) -> DiGraph:
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not lines or not lines[0].startswith("n="):
        raise ValueError("graph file must start with 'n=<count>'")
    n = int(lines[0][2:])
    arcs = []
    for ln in lines[1:]:
        i, j = ln.split()
        arcs.append((int(i), int(j)))
    return DiGraph(n, frozenset(arcs))


def save(g: DiGraph, path) -> None:
    Path(path).write_text(dumps(g))


def load(path) -> DiGraph:
    return loads(Path(path).read_text())
