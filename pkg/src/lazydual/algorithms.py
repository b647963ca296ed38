"""Outer dual methods: SSDA, MSDA and their lazy, inexact variants DLAG and MDLAG.

All iterates are d x n column matrices (one column per worker). One outer
iteration is a barrier-synchronized bulk step:

1. every worker moves its dual iterates with the aggregate it currently holds;
2. every worker refreshes its approximate dual gradient at the new point;
3. (lazy methods) every worker decides from round-start state whether to send,
   and the neighbor-aggregate caches are patched with the sent differences.

Decisions depend only on state at the start of the round, so worker order is
immaterial and the per-worker inner solves are independent.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .inner import InnerBudget, exact_dual_gradient, solve_subproblem
from .problems import QUADRATIC, ProblemInstance
from .topology import ChebyshevPlan, GossipMatrix, accelerated_gossip, chebyshev_plan, pk_gossip, with_rounds
from .trace import IterationReport, RunTrace

METHODS = ("ssda", "msda", "dlag", "mdlag")
LAZY = {"dlag", "mdlag"}
MULTI = {"msda", "mdlag"}
CACHE_RTOL = 1e-12
DIVERGENCE_FACTOR = 1e6


class CacheCoherenceError(AssertionError):
    pass


class DivergenceError(RuntimeError):
    def __init__(self, msg: str, trace: RunTrace):
        super().__init__(msg)
        self.trace = trace


@dataclass(frozen=True)
class AlgoConfig:
    method: str
    eta: float
    s: float = 1.0
    gamma: float = 0.0
    c: float = 0.0
    D: int = 1
    K: int | None = None
    inner: InnerBudget = field(default_factory=lambda: InnerBudget(solver="exact"))
    check_cache: bool = True

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if not self.eta > 0:
            raise ValueError("eta must be positive")
        if self.s < 1:
            raise ValueError("s must be >= 1")
        if self.gamma < 0:
            raise ValueError("gamma must be >= 0")
        if not 0 <= self.c < 1:
            raise ValueError("c must lie in [0, 1)")
        if self.D < 1:
            raise ValueError("D must be >= 1")
        if self.K is not None and self.K < 1:
            raise ValueError("K must be >= 1")
        if self.method not in LAZY and self.inner.solver != "exact":
            raise ValueError(f"{self.method} needs exact dual gradients (inner solver 'exact')")

    @property
    def lazy(self) -> bool:
        return self.method in LAZY

    @property
    def multi(self) -> bool:
        return self.method in MULTI


@dataclass(frozen=True)
class StopRule:
    max_iters: int
    target_subopt: float = math.inf

    def reached(self, subopt: float) -> bool:
        return math.isfinite(self.target_subopt) and subopt <= self.target_subopt


def momentum(s: float, kappa: float) -> float:
    r = math.sqrt(s * kappa)
    return (r - 1) / (r + 1)


# ---------------------------------------------------------------------------
# lazy-condition bookkeeping


class LazyAccumulator:
    """Per-worker geometric sums of the lazy condition, vectorized over workers.

    After k pushes (deltas delta_0..delta_{k-1}, each a length-n array):
    ``acc_A = sum_{j<k} c^{k-j} delta_j``,
    ``acc_B = sum_{j<=k-D-1} c^{k-D-j} delta_j`` and ``window`` holds the last
    D deltas (missing history counts as zero).
    """

    def __init__(self, n: int, D: int, c: float, gamma: float, mu_min: float):
        self.D, self.c, self.gamma, self.mu_min = D, c, gamma, mu_min
        self.acc_A = np.zeros(n)
        self.acc_B = np.zeros(n)
        self.window = np.zeros((D, n))
        self.k = 0
        self._pos = 0

    @property
    def window_sum(self) -> np.ndarray:
        return self.window.sum(axis=0)

    def rhs(self) -> np.ndarray:
        return 3.0 / self.mu_min**2 * (self.acc_B + self.acc_A + (self.c + self.gamma) * self.window_sum)

    def push(self, delta: np.ndarray) -> np.ndarray:
        """Absorb delta_k = ||x^k - x^{k+1}||^2 and return the RHS for iteration k+1."""
        delta = np.asarray(delta, dtype=float)
        if np.any(delta < 0):
            raise ValueError("deltas must be nonnegative")
        dropped = self.window[self._pos].copy()
        self.window[self._pos] = delta
        self._pos = (self._pos + 1) % self.D
        self.acc_A = self.c * (self.acc_A + delta)
        self.acc_B = self.c * (self.acc_B + dropped)
        self.k += 1
        return self.rhs()


def lazy_check(theta_hat: np.ndarray, theta_new: np.ndarray, rhs, delay, D: int):
    """True where a worker may skip: small change and delay below the cap.

    Works column-wise on d x n inputs or on single d-vectors.
    """
    diff = np.asarray(theta_hat) - np.asarray(theta_new)
    lhs = np.sum(diff * diff, axis=0)
    return (lhs <= rhs) & (np.asarray(delay) < D)


# ---------------------------------------------------------------------------
# network state


@dataclass(frozen=True)
class WorkerState:
    x: np.ndarray
    y: np.ndarray
    theta: np.ndarray
    theta_hat: np.ndarray
    delay: int
    P: np.ndarray
    acc_A: float
    acc_B: float
    window: np.ndarray


@dataclass
class NetworkState:
    k: int
    X: np.ndarray
    Y: np.ndarray
    Theta: np.ndarray
    Theta_hat: np.ndarray
    P: np.ndarray
    delay: np.ndarray
    acc: LazyAccumulator

    def worker(self, i: int) -> WorkerState:
        """Snapshot of worker i's local view."""
        return WorkerState(
            x=self.X[:, i].copy(), y=self.Y[:, i].copy(), theta=self.Theta[:, i].copy(),
            theta_hat=self.Theta_hat[:, i].copy(), delay=int(self.delay[i]), P=self.P[:, i].copy(),
            acc_A=float(self.acc.acc_A[i]), acc_B=float(self.acc.acc_B[i]), window=self.acc.window[:, i].copy(),
        )


class Simulation:
    """Static context of one run: problem, network, configuration and derived constants."""

    def __init__(self, problem: ProblemInstance, gm: GossipMatrix, cfg: AlgoConfig, seed: int = 0,
                 plan: ChebyshevPlan | None = None):
        if problem.n != gm.n:
            raise ValueError(f"problem has {problem.n} workers but the gossip matrix is {gm.n} x {gm.n}")
        self.problem, self.gm, self.cfg, self.seed = problem, gm, cfg, seed
        U = gm.U
        self.degrees = np.count_nonzero(U - np.diag(np.diag(U)), axis=0)
        self.full_round = int(self.degrees.sum())
        self.plan = None
        self.bypass = False
        zeta = gm.zeta
        if cfg.multi:
            plan = chebyshev_plan(gm) if plan is None else plan
            if cfg.K is not None:
                plan = with_rounds(plan, cfg.K)
            self.plan = plan
            self.bypass = plan.bypass
            zeta = pk_gossip(gm, plan).zeta
        self.zeta_eff = zeta
        self.kappa = problem.kappa_F / zeta
        self.momentum = momentum(cfg.s, self.kappa)
        self.rounds = self.plan.K if self.plan is not None else 1
        self._kmax = problem.kappa_max

    def worker_rng(self, i: int, k: int) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=(i, k)))

    def initial_state(self) -> tuple[NetworkState, int]:
        p = self.problem
        n, d = p.n, p.d
        X = np.zeros((d, n))
        Theta = np.empty((d, n))
        evals = 0
        for i, obj in enumerate(p.objectives):
            Theta[:, i], e = exact_dual_gradient(obj, X[:, i])
            evals += e
        acc = LazyAccumulator(n, self.cfg.D, self.cfg.c, self.cfg.gamma, p.mu_min)
        state = NetworkState(0, X, X.copy(), Theta, Theta.copy(), Theta @ self.gm.U, np.zeros(n, dtype=int), acc)
        return state, evals

    # -- phases ----------------------------------------------------------

    def move(self, state: NetworkState, G: np.ndarray) -> np.ndarray:
        """y^{k+1} = x^k - eta G, x^{k+1} with momentum; returns per-worker ||x^k - x^{k+1}||^2."""
        Y_new = state.X - self.cfg.eta * G
        X_new = Y_new + self.momentum * (Y_new - state.Y)
        diff = state.X - X_new
        state.X, state.Y = X_new, Y_new
        return np.sum(diff * diff, axis=0)

    def refresh(self, state: NetworkState, exact: bool) -> int:
        """Recompute every worker's dual gradient at its new x, warm-started; returns evaluations."""
        evals = 0
        Theta_new = np.empty_like(state.Theta)
        for i, obj in enumerate(self.problem.objectives):
            x, warm = state.X[:, i], state.Theta[:, i]
            if exact:
                Theta_new[:, i], e = exact_dual_gradient(obj, x, warm)
            else:
                rng = self.worker_rng(i, state.k + 1)
                Theta_new[:, i], e = solve_subproblem(obj, x, warm, self.cfg.inner, rng, self._kmax)
            evals += e
        state.Theta = Theta_new
        return evals

    def exchange(self, state: NetworkState, rhs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Lazy decision and cache patch; returns (sent flags, lhs)."""
        diff = state.Theta_hat - state.Theta
        lhs = np.sum(diff * diff, axis=0)
        skip = (lhs <= rhs) & (state.delay < self.cfg.D)
        sent = ~skip
        Q = np.where(sent, state.Theta - state.Theta_hat, 0.0)
        state.P = state.P + Q @ self.gm.U
        state.Theta_hat = np.where(sent, state.Theta, state.Theta_hat)
        state.delay = np.where(sent, 0, state.delay + 1)
        if self.cfg.check_cache:
            self.check_cache(state)
        return sent, lhs

    def check_cache(self, state: NetworkState) -> None:
        fresh = state.Theta_hat @ self.gm.U
        scale = max(1.0, float(np.abs(state.Theta_hat).max()))
        err = float(np.abs(state.P - fresh).max())
        if err > CACHE_RTOL * scale:
            raise CacheCoherenceError(f"cached aggregates drifted by {err:.3e} at iteration {state.k}")

    def aggregate(self, Z: np.ndarray, first: np.ndarray | None) -> np.ndarray:
        if self.plan is None:
            return Z @ self.gm.U if first is None else first
        return accelerated_gossip(Z, self.gm, self.plan, first)

    def step(self, state: NetworkState) -> IterationReport:
        return STEPS[self.cfg.method](state, self)


# ---------------------------------------------------------------------------
# one outer iteration per method


def ssda_step(state: NetworkState, sim: Simulation) -> IterationReport:
    """Exact dual gradients, one full gossip round."""
    G = state.Theta @ sim.gm.U
    sim.move(state, G)
    evals = sim.refresh(state, exact=True)
    state.k += 1
    return IterationReport(np.ones(sim.gm.n, dtype=bool), sim.full_round, evals)


def msda_step(state: NetworkState, sim: Simulation) -> IterationReport:
    """Exact dual gradients, K rounds of Chebyshev-accelerated gossip."""
    G = sim.aggregate(state.Theta, None)
    sim.move(state, G)
    evals = sim.refresh(state, exact=True)
    state.k += 1
    return IterationReport(np.ones(sim.gm.n, dtype=bool), sim.rounds * sim.full_round, evals)


def _lazy_step(state: NetworkState, sim: Simulation, G: np.ndarray, extra_messages: int) -> IterationReport:
    delta = sim.move(state, G)
    rhs = state.acc.push(delta)
    evals = sim.refresh(state, exact=sim.cfg.inner.solver == "exact")
    state.k += 1
    sent, lhs = sim.exchange(state, rhs)
    messages = int(sim.degrees[sent].sum()) + extra_messages
    return IterationReport(sent, messages, evals, lhs=lhs, rhs=rhs, delays=state.delay.copy())


def dlag_step(state: NetworkState, sim: Simulation) -> IterationReport:
    """Move with the cached aggregate, solve inexactly, then send only where the lazy test fails."""
    return _lazy_step(state, sim, state.P, 0)


def mdlag_step(state: NetworkState, sim: Simulation) -> IterationReport:
    """As DLAG, with the cache standing in for the first of K Chebyshev rounds."""
    G = sim.aggregate(state.Theta_hat, state.P)
    return _lazy_step(state, sim, G, (sim.rounds - 1) * sim.full_round)


STEPS: dict[str, Callable[[NetworkState, Simulation], IterationReport]] = {
    "ssda": ssda_step,
    "msda": msda_step,
    "dlag": dlag_step,
    "mdlag": mdlag_step,
}


# ---------------------------------------------------------------------------
# driver


def primal_metrics(problem: ProblemInstance, Theta: np.ndarray) -> tuple[float, float]:
    """(f(mean column) - f*, ||Theta (I - 11^T/n)||_F)."""
    mean = Theta.mean(axis=1)
    subopt = problem.value(mean) - problem.f_star
    consensus = float(np.linalg.norm(Theta - mean[:, None]))
    return float(subopt), consensus


def run(
    problem: ProblemInstance,
    gm: GossipMatrix,
    cfg: AlgoConfig,
    stop: StopRule,
    seed: int = 0,
    plan: ChebyshevPlan | None = None,
    on_state: Callable[[NetworkState, IterationReport | None], None] | None = None,
) -> RunTrace:
    """Run one method until ``stop`` and return the per-iteration trace.

    ``on_state`` is called with the state after initialization and after every
    iteration (tests use it to inspect iterates).
    """
    if problem.f_star is None:
        problem = problem.with_reference()
    sim = Simulation(problem, gm, cfg, seed, plan)
    state, evals = sim.initial_state()
    trace = RunTrace(metadata=_metadata(sim))
    record_dual = problem.kind == QUADRATIC

    subopt, consensus = primal_metrics(problem, state.Theta)
    messages = 0
    trace.append(subopt, consensus, messages, evals, 0)
    if record_dual:
        trace.dual.append(problem.dual_value(state.Y))
    if on_state:
        on_state(state, None)
    limit = DIVERGENCE_FACTOR * max(subopt, 1e-12 * max(1.0, abs(problem.f_star)))
    sends = np.zeros(gm.n, dtype=int)
    max_delay = 0

    k = 0
    while k < stop.max_iters and not stop.reached(subopt):
        report = sim.step(state)
        k += 1
        messages += report.messages
        evals += report.grad_evals
        sends += report.sent
        if report.delays is not None:
            max_delay = max(max_delay, int(report.delays.max()))
        subopt, consensus = primal_metrics(problem, state.Theta)
        trace.append(subopt, consensus, messages, evals, report.skips)
        trace.reports.append(report)
        if record_dual:
            trace.dual.append(problem.dual_value(state.Y))
        if on_state:
            on_state(state, report)
        if not math.isfinite(subopt) or subopt > limit:
            trace.metadata.update(send_counts=sends.tolist(), max_delay=max_delay, diverged=True)
            raise DivergenceError(f"{cfg.method} diverged at iteration {k}: suboptimality {subopt:.3e}", trace)

    trace.metadata.update(send_counts=sends.tolist(), max_delay=max_delay, diverged=False)
    return trace


def _metadata(sim: Simulation) -> dict:
    cfg = sim.cfg
    meta = {
        "method": cfg.method,
        "seed": sim.seed,
        "eta": cfg.eta,
        "s": cfg.s,
        "gamma": cfg.gamma,
        "c": cfg.c,
        "D": cfg.D,
        "K": sim.rounds,
        "inner": asdict(cfg.inner),
        "momentum": sim.momentum,
        "kappa": sim.kappa,
        "zeta_effective": sim.zeta_eff,
        "n": sim.gm.n,
        "edges": sim.full_round // 2,
        "f_star": sim.problem.f_star,
    }
    if cfg.multi:
        meta["chebyshev_bypass"] = sim.bypass
    return meta
