"""Theory-side calculators and complexity bookkeeping.

Parameter schedules for the lazy methods, the heterogeneity score that
predicts how many messages they save, and counters recomputed from traces.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .problems import ProblemInstance
from .topology import ChebyshevPlan, GossipMatrix, Graph, chebyshev_plan, pk_gossip
from .trace import IterationReport, RunTrace

DEFAULT_SLACK = 0.05


@dataclass(frozen=True)
class TheoryParams:
    """Step size, momentum inflation and laziness knobs prescribed by theory.

    ``kappa`` is the condition number that drives the momentum: kappa_F / zeta(U)
    for DLAG, kappa_F / zeta(P_K(U)) for MDLAG.
    """

    gamma: float
    c: float
    eta: float
    s: float
    a: float
    b: float
    rho: float
    kappa: float
    alpha: float
    beta: float
    D: int
    method: str = "dlag"

    def __post_init__(self):
        if not 0 < self.c < 1:
            raise ValueError(f"c = {self.c} outside (0, 1)")
        if self.s < 1 or self.eta <= 0:
            raise ValueError("need s >= 1 and eta > 0")


def _dual_constants(gm: GossipMatrix, problem: ProblemInstance) -> tuple[float, float, float]:
    alpha = gm.sigma_nm1 / problem.L_max
    beta = gm.sigma1 / problem.mu_min
    return alpha, beta, beta / alpha


def _ab(gm, problem, D, gamma, c, kappa_exp):
    alpha, beta, _ = _dual_constants(gm, problem)
    scale = gm.sqrtU_norm4 / (alpha * beta * problem.mu_min**2)
    a = 6 * scale * gamma * D * math.exp(2 * D / math.sqrt(kappa_exp))
    b = 25 * scale * c * D * math.exp(2 * (D + 1) / math.sqrt(kappa_exp))
    return a, b


def _schedule(gm, problem, D, kappa_exp):
    alpha, beta, _ = _dual_constants(gm, problem)
    base = alpha * beta * problem.mu_min**2 / (D * gm.sqrtU_norm4)
    gamma = base / 288 * math.exp(-2 * D / math.sqrt(kappa_exp))
    c = base / 1200 * math.exp(-2 * (D + 1) / math.sqrt(kappa_exp))
    return gamma, c


def theorem1_params(gm: GossipMatrix, problem: ProblemInstance, D: int) -> TheoryParams:
    """DLAG schedule: s = 10, eta = 2 / (15 beta) and the matching gamma, c."""
    if D < 2:
        raise ValueError("the DLAG schedule needs D >= 2")
    alpha, beta, kappa = _dual_constants(gm, problem)
    gamma, c = _schedule(gm, problem, D, kappa)
    if not c < 1:
        raise ValueError(f"schedule produced c = {c} >= 1")
    a, b = _ab(gm, problem, D, gamma, c, kappa)
    return TheoryParams(gamma, c, 2 / (15 * beta), 10.0, a, b, 4.0, kappa, alpha, beta, D, "dlag")


def theorem4_params(gm: GossipMatrix, problem: ProblemInstance, D: int, gamma: float, c: float,
                    kappa_exp: float | None = None) -> TheoryParams:
    """General (gamma, c) -> (a, b, rho, s, eta) map.

    ``kappa_exp`` is the condition number in the exponents of a and b; it
    defaults to kappa_F / zeta(U).
    """
    alpha, beta, kappa = _dual_constants(gm, problem)
    if not kappa > 2:
        raise ValueError(f"needs kappa > 2, got {kappa}")
    if not 0 < c < 1 or gamma < 0:
        raise ValueError("needs 0 < c < 1 and gamma >= 0")
    a, b = _ab(gm, problem, D, gamma, c, kappa if kappa_exp is None else kappa_exp)
    ab = a + b
    root = math.sqrt(2 + 1 / (12 * ab))
    rho = 2 + root
    s = rho * (1 + 24 * ab * rho) / (rho - 2)
    eta = (rho - 2) / (rho - 1) / ((1 + 24 * ab * rho) * beta)
    return TheoryParams(gamma, c, eta, s, a, b, rho, kappa, alpha, beta, D, "dlag")


def mdlag_params(gm: GossipMatrix, problem: ProblemInstance, D: int,
                 plan: ChebyshevPlan | None = None) -> TheoryParams:
    """MDLAG schedule: the DLAG formulas on the spectrum of P_K(U), exponents in kappa_F."""
    if D < 2:
        raise ValueError("the MDLAG schedule needs D >= 2")
    plan = chebyshev_plan(gm) if plan is None else plan
    pk = pk_gossip(gm, plan)
    if pk.zeta < 0.25 * (1 - 1e-9):
        raise RuntimeError(f"zeta(P_K(U)) = {pk.zeta:.6g} below 1/4; kappa' <= 4 kappa_F fails")
    alpha, beta, kappa = _dual_constants(pk, problem)
    gamma, c = _schedule(pk, problem, D, problem.kappa_F)
    a, b = _ab(pk, problem, D, gamma, c, problem.kappa_F)
    return TheoryParams(gamma, c, 2 / (15 * beta), 10.0, a, b, 4.0, kappa, alpha, beta, D, "mdlag")


# ---------------------------------------------------------------------------
# heterogeneity and predicted communication


def _degrees(graph: Graph | GossipMatrix) -> np.ndarray:
    if isinstance(graph, GossipMatrix):
        if graph.graph is not None:
            return graph.graph.degrees
        U = graph.U
        return np.count_nonzero(U - np.diag(np.diag(U)), axis=0)
    return graph.degrees


def heterogeneity_score(mus, graph: Graph | GossipMatrix, gamma: float, D: int) -> np.ndarray:
    """h_d for d = 1..D: edge-endpoint share of workers with (mu_min / mu_i)^2 <= gamma / d.

    ``mus`` is either a ProblemInstance or the per-worker strong-convexity constants.
    """
    if D < 1:
        raise ValueError("D must be >= 1")
    mus = mus.mus if isinstance(mus, ProblemInstance) else np.asarray(mus, dtype=float)
    deg = _degrees(graph)
    if deg.shape != mus.shape:
        raise ValueError("one strong-convexity constant per node expected")
    H2 = (mus.min() / mus) ** 2
    d = np.arange(1, D + 1)
    hit = H2[None, :] <= gamma / d[:, None]
    return (hit * deg[None, :]).sum(axis=1) / deg.sum()


def telescoping_weights(D: int) -> np.ndarray:
    d = np.arange(1, D + 1, dtype=float)
    return 1 / d - 1 / (d + 1)


def predicted_comm_ratio(h, D: int | None = None, K: int = 1, method: str = "dlag") -> float:
    """Per-iteration edge utilization bound.

    ``dlag``: 1 - sum_d (1/d - 1/(d+1)) h_d. ``mdlag``: K minus the same sum,
    in units of one full round. ``q``: sqrt(10) times the DLAG factor, the
    total-communication ratio against SSDA.
    """
    h = np.asarray(h, dtype=float)
    D = h.size if D is None else D
    if h.size != D:
        raise ValueError(f"h has {h.size} entries, expected D = {D}")
    saved = float(telescoping_weights(D) @ h)
    if method == "dlag":
        return 1 - saved
    if method == "mdlag":
        return K - saved
    if method == "q":
        return math.sqrt(10) * (1 - saved)
    raise ValueError(f"unknown method {method!r}")


def corollary1_q(h) -> float:
    return predicted_comm_ratio(h, method="q")


# ---------------------------------------------------------------------------
# measured counters


@dataclass(frozen=True)
class ComplexityCounters:
    iterations: int
    messages: int
    grad_evals: int
    send_counts: tuple[int, ...] = field(default=())

    @classmethod
    def from_trace(cls, trace: RunTrace) -> "ComplexityCounters":
        last = trace.final
        return cls(trace.iterations, int(last["messages"]), int(last["grad_evals"]),
                   tuple(trace.metadata.get("send_counts", ())))

    @classmethod
    def recount(cls, reports: list[IterationReport], init_evals: int) -> "ComplexityCounters":
        """Independent recount from per-iteration reports."""
        sends = np.zeros(reports[0].sent.size if reports else 0, dtype=int)
        msgs = evals = 0
        for r in reports:
            msgs += r.messages
            evals += r.grad_evals
            sends += r.sent.astype(int)
        return cls(len(reports), msgs, init_evals + evals, tuple(int(v) for v in sends))


def edge_utilization(trace: RunTrace, edges: int | None = None) -> float:
    """messages / (2|E| iterations), in units of full rounds.

    ``edges`` defaults to the edge count stored in the trace metadata.
    """
    iters = trace.iterations
    if iters == 0:
        return 0.0
    edges = trace.metadata["edges"] if edges is None else edges
    return trace.final["messages"] / (2 * edges * iters)


@dataclass(frozen=True)
class ComparisonReport:
    measured: float
    predicted: float
    slack: float
    per_seed: tuple[float, ...]

    @property
    def passed(self) -> bool:
        return self.measured <= self.predicted * (1 + self.slack)

    def as_dict(self) -> dict:
        return {"measured": self.measured, "predicted": self.predicted, "slack": self.slack,
                "per_seed": list(self.per_seed), "passed": self.passed}


def measured_vs_predicted(traces, predicted: float, slack: float = DEFAULT_SLACK) -> ComparisonReport:
    """Seed-averaged edge utilization against a predicted factor.

    ``traces`` is a RunTrace, a list of them, or a list of precomputed utilizations.
    """
    traces = [traces] if isinstance(traces, RunTrace) else list(traces)
    per_seed = tuple(float(t) if isinstance(t, (int, float)) else edge_utilization(t) for t in traces)
    return ComparisonReport(float(np.mean(per_seed)), float(predicted), slack, per_seed)
