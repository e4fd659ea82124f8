"""Topologies, Laplacians and algebraic connectivity of multi-hop graphs."""

from __future__ import annotations

from collections import deque
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

BOUND_TOL = 1e-9
RESIDUAL_TOL = 1e-8


class TopologyError(ValueError):
    """Invalid or unusable topology (asymmetric, disconnected, bad size)."""


class SpectralError(RuntimeError):
    """Eigen computation failed its residual check or a bound was violated."""


@dataclass(frozen=True)
class Topology:
    """Weighted symmetric graph on nodes ``0..n-1``.

    ``weights`` maps every ordered pair ``(i, j)`` with an edge to its positive
    weight; both directions must be present with the same weight.
    """

    n: int
    weights: Mapping[tuple[int, int], float]
    name: str = ""
    _neighbors: tuple[tuple[int, ...], ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.n < 1:
            raise TopologyError(f"node count must be positive, got {self.n}")
        nbrs: list[list[int]] = [[] for _ in range(self.n)]
        for (i, j), w in self.weights.items():
            if i == j:
                raise TopologyError(f"self-loop at node {i}")
            if not (0 <= i < self.n and 0 <= j < self.n):
                raise TopologyError(f"edge ({i}, {j}) outside 0..{self.n - 1}")
            if not w > 0:
                raise TopologyError(f"edge ({i}, {j}) has non-positive weight {w}")
            if self.weights.get((j, i)) != w:
                raise TopologyError(f"edge ({i}, {j}) has no matching reverse edge")
            nbrs[i].append(j)
        object.__setattr__(self, "_neighbors", tuple(tuple(sorted(x)) for x in nbrs))

    @classmethod
    def from_pairs(
        cls, n: int, pairs: Iterable[tuple[int, int]], name: str = "", weight: float = 1.0
    ) -> Topology:
        w: dict[tuple[int, int], float] = {}
        for i, j in pairs:
            w[(i, j)] = weight
            w[(j, i)] = weight
        return cls(n, w, name)

    @classmethod
    def from_adjacency(cls, adj: np.ndarray, name: str = "") -> Topology:
        adj = np.asarray(adj, dtype=float)
        if adj.shape[0] != adj.shape[1]:
            raise TopologyError(f"adjacency must be square, got {adj.shape}")
        w = {
            (int(i), int(j)): float(adj[i, j])
            for i, j in zip(*np.nonzero(adj))
            if i != j
        }
        return cls(adj.shape[0], w, name)

    @property
    def edges(self) -> frozenset[tuple[int, int]]:
        return frozenset(self.weights)

    def neighbors(self, i: int) -> tuple[int, ...]:
        return self._neighbors[i]

    def degree(self, i: int) -> int:
        return len(self._neighbors[i])

    def adjacency(self) -> np.ndarray:
        a = np.zeros((self.n, self.n))
        for (i, j), w in self.weights.items():
            a[i, j] = w
        return a

    def undirected_edges(self) -> list[tuple[int, int, float]]:
        return sorted((i, j, w) for (i, j), w in self.weights.items() if i < j)

    def to_edgelist(self) -> str:
        lines = [f"# nodes {self.n}"]
        lines += [f"{i} {j} {w:.17g}" for i, j, w in self.undirected_edges()]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_edgelist(cls, text: str, name: str = "") -> Topology:
        n = 0
        w: dict[tuple[int, int], float] = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                parts = line[1:].split()
                if len(parts) == 2 and parts[0] == "nodes":
                    n = max(n, int(parts[1]))
                continue
            parts = line.split()
            if len(parts) not in (2, 3):
                raise TopologyError(f"line {lineno}: expected 'i j weight', got {raw!r}")
            i, j = int(parts[0]), int(parts[1])
            weight = float(parts[2]) if len(parts) == 3 else 1.0
            w[(i, j)] = weight
            w[(j, i)] = weight
            n = max(n, i + 1, j + 1)
        return cls(n, w, name)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_edgelist())

    @classmethod
    def load(cls, path: str | Path) -> Topology:
        return cls.from_edgelist(Path(path).read_text(), name=Path(path).stem)


def hop_distances(t: Topology, source: int) -> list[int]:
    """Breadth-first hop counts from ``source``; -1 marks unreachable nodes."""
    dist = [-1] * t.n
    dist[source] = 0
    queue = deque([source])
    while queue:
        u = queue.popleft()
        for v in t.neighbors(u):
            if dist[v] < 0:
                dist[v] = dist[u] + 1
                queue.append(v)
    return dist


def is_connected(t: Topology) -> bool:
    return min(hop_distances(t, 0)) >= 0


def diameter(t: Topology) -> int:
    if not is_connected(t):
        raise TopologyError("diameter of a disconnected topology is undefined")
    return max(max(hop_distances(t, s)) for s in range(t.n))


def _require_connected(t: Topology) -> Topology:
    if not is_connected(t):
        raise TopologyError(f"topology {t.name or '<unnamed>'} is not connected")
    return t


def build_grid(rows: int, cols: int) -> Topology:
    """4-neighbour lattice; node ``r * cols + c`` sits at row r, column c."""
    if rows < 1 or cols < 1:
        raise TopologyError(f"grid dimensions must be positive, got {rows}x{cols}")
    if rows * cols < 2:
        raise TopologyError("grid needs at least two nodes")
    pairs = []
    for r in range(rows):
        for c in range(cols):
            u = r * cols + c
            if c + 1 < cols:
                pairs.append((u, u + 1))
            if r + 1 < rows:
                pairs.append((u, u + cols))
    return _require_connected(Topology.from_pairs(rows * cols, pairs, f"grid{rows}x{cols}"))


def build_line(n: int) -> Topology:
    if n < 2:
        raise TopologyError(f"line needs at least two nodes, got {n}")
    t = Topology.from_pairs(n, [(i, i + 1) for i in range(n - 1)], f"line{n}")
    return _require_connected(t)


def build_random_geometric(
    n: int, radius: float, seed: int, max_attempts: int = 200
) -> Topology:
    """Uniform placement in the unit square, edge iff distance <= radius.

    Redraws (deterministically from ``seed``) until the graph is connected.
    """
    if n < 2:
        raise TopologyError(f"random geometric graph needs n >= 2, got {n}")
    if not radius > 0:
        raise TopologyError(f"radius must be positive, got {radius}")
    for attempt in range(max_attempts):
        rng = np.random.default_rng([seed, attempt])
        pos = rng.random((n, 2))
        d = np.linalg.norm(pos[:, None, :] - pos[None, :, :], axis=-1)
        ii, jj = np.nonzero(np.triu(d <= radius, k=1))
        t = Topology.from_pairs(
            n, zip(ii.tolist(), jj.tolist()), f"rgg{n}_r{radius:g}_s{seed}"
        )
        if is_connected(t):
            return t
    raise TopologyError(
        f"no connected random geometric graph (n={n}, radius={radius}) "
        f"in {max_attempts} attempts"
    )


def laplacian(t: Topology) -> np.ndarray:
    a = t.adjacency()
    return np.diag(a.sum(axis=1)) - a


def algebraic_connectivity(t: Topology) -> float:
    """Second-smallest Laplacian eigenvalue (Fiedler value).

    Returns 0 up to rounding for a disconnected graph.
    """
    if t.n < 2:
        raise TopologyError("algebraic connectivity needs at least two nodes")
    lap = laplacian(t)
    try:
        vals, vecs = np.linalg.eigh(lap)
    except np.linalg.LinAlgError as exc:
        raise SpectralError(f"eigendecomposition did not converge: {exc}") from exc
    lam, x = vals[1], vecs[:, 1]
    scale = max(np.linalg.norm(lap, 2), 1.0)
    resid = np.linalg.norm(lap @ x - lam * x)
    if resid > RESIDUAL_TOL * scale:
        raise SpectralError(f"Fiedler residual {resid:.3e} exceeds {RESIDUAL_TOL:g}*||L||")
    return float(lam)


def h_hop_augment(t: Topology, hops: int) -> tuple[list[Topology], Topology]:
    """Per-level hop graphs and their union.

    Level h has the h-th power of the base adjacency as its weights (the
    summed weight of all length-h walks), with self-loops dropped. The union
    sums weights over levels 1..hops. Level 1 is ``t`` itself.
    """
    if hops < 1:
        raise ValueError(f"hop count must be >= 1, got {hops}")
    base = t.adjacency()
    power = base.copy()
    total = np.zeros_like(base)
    levels: list[Topology] = []
    for h in range(1, hops + 1):
        if h > 1:
            power = power @ base
        level = power.copy()
        np.fill_diagonal(level, 0.0)
        # walk counts are symmetric in exact arithmetic
        level = 0.5 * (level + level.T)
        total += level
        levels.append(t if h == 1 else Topology.from_adjacency(level, f"{t.name}@h{h}"))
    union = t if hops == 1 else Topology.from_adjacency(total, f"{t.name}@H{hops}")
    return levels, union


@dataclass(frozen=True)
class SpectralReport:
    hops: int
    lambda2_per_hop: tuple[float, ...]
    lambda2_union: float
    lower_bound: float
    upper_bound: float

    def as_record(self) -> dict[str, float | int | str]:
        return {
            "H": self.hops,
            "lambda2_union": self.lambda2_union,
            "lower_bound": self.lower_bound,
            "upper_bound": self.upper_bound,
            "lambda2_per_hop": ";".join(f"{x:.12g}" for x in self.lambda2_per_hop),
        }


def spectral_report(t: Topology, hops: int) -> SpectralReport:
    _require_connected(t)
    levels, union = h_hop_augment(t, hops)
    per_hop = tuple(algebraic_connectivity(g) for g in levels)
    lam = algebraic_connectivity(union)
    lower = float(sum(per_hop))
    upper = float(sum(union.weights.values()) / (t.n - 1))
    if lam < lower - BOUND_TOL:
        raise SpectralError(f"union lambda2 {lam} below sum of level lambda2 {lower}")
    if lam > upper + BOUND_TOL:
        raise SpectralError(f"union lambda2 {lam} above trace bound {upper}")
    return SpectralReport(hops, per_hop, lam, lower, upper)
