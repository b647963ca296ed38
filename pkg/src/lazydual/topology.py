"""Network graphs, gossip matrices and Chebyshev-accelerated gossip.

Column convention: a d x n matrix ``Z`` stores one d-vector per worker, and
one communication round is the right-multiplication ``Z @ U``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path

import numpy as np

ZERO_EIG_RTOL = 1e-9
BYPASS_ZETA = 1.0 - 1e-12


class TopologyError(ValueError):
    pass


@dataclass(frozen=True)
class Graph:
    n: int
    edges: frozenset[tuple[int, int]]
    adjacency: tuple[tuple[int, ...], ...] = field(repr=False)

    @classmethod
    def from_edges(cls, n: int, edges) -> "Graph":
        canon = set()
        for i, j in edges:
            i, j = int(i), int(j)
            if i == j:
                raise TopologyError(f"self-loop at node {i}")
            if not (0 <= i < n and 0 <= j < n):
                raise TopologyError(f"edge ({i}, {j}) out of range for n={n}")
            e = (min(i, j), max(i, j))
            if e in canon:
                raise TopologyError(f"duplicate edge {e}")
            canon.add(e)
        adj: list[list[int]] = [[] for _ in range(n)]
        for i, j in sorted(canon):
            adj[i].append(j)
            adj[j].append(i)
        g = cls(n, frozenset(canon), tuple(tuple(sorted(a)) for a in adj))
        if not g.is_connected():
            raise TopologyError("graph is not connected")
        return g

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    @property
    def degrees(self) -> np.ndarray:
        return np.array([len(a) for a in self.adjacency], dtype=int)

    def neighbors(self, i: int) -> tuple[int, ...]:
        """N(i) with i itself included."""
        return tuple(sorted((*self.adjacency[i], i)))

    def is_connected(self) -> bool:
        if self.n == 0:
            return False
        seen = {0}
        stack = [0]
        while stack:
            for j in self.adjacency[stack.pop()]:
                if j not in seen:
                    seen.add(j)
                    stack.append(j)
        return len(seen) == self.n

    def relabel(self, perm) -> "Graph":
        perm = list(perm)
        return Graph.from_edges(self.n, [(perm[i], perm[j]) for i, j in self.edges])


def grid2d(rows: int, cols: int) -> Graph:
    idx = lambda r, c: r * cols + c  # noqa: E731
    edges = []
    for r in range(rows):
        for c in range(cols):
            if c + 1 < cols:
                edges.append((idx(r, c), idx(r, c + 1)))
            if r + 1 < rows:
                edges.append((idx(r, c), idx(r + 1, c)))
    return Graph.from_edges(rows * cols, edges)


def path(n: int) -> Graph:
    return Graph.from_edges(n, [(i, i + 1) for i in range(n - 1)])


def complete(n: int) -> Graph:
    return Graph.from_edges(n, [(i, j) for i in range(n) for j in range(i + 1, n)])


def erdos_renyi(n: int, p: float, seed: int, max_tries: int = 100) -> Graph:
    """G(n, p) graph; redraws with seed+1, seed+2, ... until connected."""
    for t in range(max_tries):
        rng = np.random.default_rng(seed + t)
        mask = rng.random((n, n)) < p
        edges = [(i, j) for i in range(n) for j in range(i + 1, n) if mask[i, j]]
        try:
            return Graph.from_edges(n, edges)
        except TopologyError:
            continue
    raise TopologyError(f"no connected G({n}, {p}) within {max_tries} seeds from {seed}")


def read_edge_list(path_: str | Path, n: int | None = None) -> Graph:
    """Read one ``i j`` pair per line, 0-indexed; ``#`` starts a comment."""
    edges = []
    for lineno, raw in enumerate(Path(path_).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise TopologyError(f"line {lineno}: expected 'i j', got {raw!r}")
        try:
            edges.append((int(parts[0]), int(parts[1])))
        except ValueError as exc:
            raise TopologyError(f"line {lineno}: {exc}") from None
    if n is None:
        n = 1 + max(max(e) for e in edges) if edges else 1
    return Graph.from_edges(n, edges)


def build_graph(kind: str, **kw) -> Graph:
    builders = {
        "grid2d": lambda: grid2d(kw["rows"], kw["cols"]),
        "path": lambda: path(kw["n"]),
        "complete": lambda: complete(kw["n"]),
        "erdos_renyi": lambda: erdos_renyi(kw["n"], kw["p"], kw.get("seed", 0)),
        "edge_list": lambda: read_edge_list(kw["path"], kw.get("n")),
    }
    if kind not in builders:
        raise TopologyError(f"unknown graph kind {kind!r}")
    try:
        return builders[kind]()
    except KeyError as exc:
        raise TopologyError(f"graph kind {kind!r} needs parameter {exc}") from None


# ---------------------------------------------------------------------------
# gossip matrices


@dataclass(frozen=True)
class GossipMatrix:
    U: np.ndarray = field(repr=False)
    sigma1: float
    sigma_nm1: float
    zeta: float
    graph: Graph | None = field(default=None, repr=False, compare=False)

    @property
    def n(self) -> int:
        return self.U.shape[0]

    @property
    def sqrtU_norm4(self) -> float:
        """||sqrt(U)||^4 in operator norm, i.e. sigma1^2."""
        return self.sigma1**2

    @classmethod
    def from_matrix(cls, U: np.ndarray, graph: Graph | None = None) -> "GossipMatrix":
        U = np.asarray(U, dtype=float)
        s1, snm1, z = spectrum(U)
        return cls(U, s1, snm1, z, graph)


def spectrum(U: np.ndarray) -> tuple[float, float, float]:
    """Largest and smallest nonzero eigenvalue of a gossip matrix, and their ratio.

    Raises TopologyError when more than one eigenvalue is numerically zero
    (disconnected graph or invalid gossip matrix).
    """
    U = np.asarray(U, dtype=float)
    if U.ndim != 2 or U.shape[0] != U.shape[1]:
        raise TopologyError("gossip matrix must be square")
    if U.shape[0] < 2:
        raise TopologyError("gossip matrix needs n >= 2")
    eig = np.linalg.eigvalsh((U + U.T) / 2)
    s1 = float(eig[-1])
    if s1 <= 0:
        raise TopologyError("disconnected or invalid gossip matrix")
    snm1 = float(eig[1])
    if snm1 <= ZERO_EIG_RTOL * s1:
        raise TopologyError("disconnected or invalid gossip matrix")
    return s1, snm1, min(snm1 / s1, 1.0)


def _weights_to_gossip(g: Graph, weight) -> GossipMatrix:
    n = g.n
    W = np.zeros((n, n))
    for i, j in g.edges:
        w = weight(i, j)
        W[i, j] = W[j, i] = float(w)
    for i in range(n):
        W[i, i] = float(1 - sum(Fraction(weight(min(i, j), max(i, j))) for j in g.adjacency[i]))
    return GossipMatrix.from_matrix(np.eye(n) - W, g)


def metropolis_weights(g: Graph) -> GossipMatrix:
    deg = g.degrees
    return _weights_to_gossip(g, lambda i, j: Fraction(1, 1 + int(max(deg[i], deg[j]))))


def max_degree_weights(g: Graph) -> GossipMatrix:
    dmax = int(g.degrees.max())
    return _weights_to_gossip(g, lambda i, j: Fraction(1, 1 + dmax))


# ---------------------------------------------------------------------------
# Chebyshev acceleration


@dataclass(frozen=True)
class ChebyshevPlan:
    K: int
    c1: float
    c2: float
    c3: float
    aK: float
    bypass: bool = False

    @property
    def a(self) -> np.ndarray:
        """a_0..a_K from the three-term recurrence."""
        seq = [1.0, self.c2]
        for _ in range(1, self.K):
            seq.append(2 * self.c2 * seq[-1] - seq[-2])
        return np.array(seq[: self.K + 1])


def chebyshev_plan(gm: GossipMatrix) -> ChebyshevPlan:
    """Round count and constants for accelerated gossip.

    When the eigengap is already 1 the constants are undefined; the plan is
    then a single plain round with U itself (``bypass=True``).
    """
    z = gm.zeta
    if z >= BYPASS_ZETA:
        return ChebyshevPlan(K=1, c1=0.0, c2=math.inf, c3=1.0 / gm.sigma1, aK=1.0, bypass=True)
    rz = math.sqrt(z)
    K = max(1, math.floor(1.0 / rz))
    c1 = (1 - rz) / (1 + rz)
    c2 = (1 + z) / (1 - z)
    c3 = 2.0 / ((1 + z) * gm.sigma1)
    a_prev, a = 1.0, c2
    for _ in range(1, K):
        a_prev, a = a, 2 * c2 * a - a_prev
    return ChebyshevPlan(K=K, c1=c1, c2=c2, c3=c3, aK=a)


def with_rounds(plan: ChebyshevPlan, K: int) -> ChebyshevPlan:
    """Same constants with a different round count (ignored in bypass mode)."""
    if K < 1:
        raise ValueError("K must be at least 1")
    if plan.bypass or K == plan.K:
        return plan
    a_prev, a = 1.0, plan.c2
    for _ in range(1, K):
        a_prev, a = a, 2 * plan.c2 * a - a_prev
    return replace(plan, K=K, aK=a)


def _check_dims(Z: np.ndarray, n: int) -> np.ndarray:
    Z = np.asarray(Z, dtype=float)
    if Z.ndim != 2 or Z.shape[1] != n:
        raise ValueError(f"expected a d x {n} matrix, got shape {Z.shape}")
    return Z


def pk_matrix(plan: ChebyshevPlan, gm: GossipMatrix) -> np.ndarray:
    """Dense P_K(U) = I - T_K(c2 (I - c3 U)) / T_K(c2), built from the eigendecomposition."""
    if plan.bypass:
        return gm.U.copy()
    lam, V = np.linalg.eigh(gm.U)
    coef = np.zeros(plan.K + 1)
    coef[-1] = 1.0
    tk = np.polynomial.chebyshev.chebval(plan.c2 * (1 - plan.c3 * lam), coef)
    tk_norm = np.polynomial.chebyshev.chebval(plan.c2, coef)
    P = (V * (1 - tk / tk_norm)) @ V.T
    return (P + P.T) / 2


def apply_pk(Z: np.ndarray, plan: ChebyshevPlan, gm: GossipMatrix) -> np.ndarray:
    """Reference path: Z @ P_K(U) with P_K formed explicitly."""
    Z = _check_dims(Z, gm.n)
    return Z @ pk_matrix(plan, gm)


def accelerated_gossip(
    Z: np.ndarray,
    gm: GossipMatrix,
    plan: ChebyshevPlan,
    first_round_aggregate: np.ndarray | None = None,
) -> np.ndarray:
    """K communication rounds of the Chebyshev recursion applied to Z.

    ``first_round_aggregate`` stands in for ``Z @ U`` in the first round; the
    lazy variants pass their cached neighbor aggregate here. Rounds 2..K always
    use exact products with U.
    """
    Z = _check_dims(Z, gm.n)
    P = Z @ gm.U if first_round_aggregate is None else _check_dims(first_round_aggregate, gm.n)
    if P.shape != Z.shape:
        raise ValueError(f"aggregate shape {P.shape} does not match {Z.shape}")
    if plan.bypass:
        return P.copy()
    c2, c3 = plan.c2, plan.c3
    z_prev, z = Z, c2 * Z - c2 * c3 * P
    a_prev, a = 1.0, c2
    for _ in range(1, plan.K):
        z_prev, z = z, 2 * c2 * (z - c3 * (z @ gm.U)) - z_prev
        a_prev, a = a, 2 * c2 * a - a_prev
    return Z - z / a


def pk_gossip(gm: GossipMatrix, plan: ChebyshevPlan) -> GossipMatrix:
    """P_K(U) wrapped as a gossip matrix, with its own spectrum."""
    return GossipMatrix.from_matrix(pk_matrix(plan, gm), gm.graph)
