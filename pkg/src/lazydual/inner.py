"""Warm-started inexact solvers for the local dual-gradient subproblem.

Each worker needs ``argmin_theta f_i(theta) - <theta, x>``. The shift by
``-x`` is shared by every component, so component constants are unchanged.

Cost accounting is in component-gradient evaluations. Katyusha stores all m
component gradients at the snapshot: a snapshot costs m evaluations and each
inner step one more.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numba
import numpy as np

from .problems import LOGISTIC, QUADRATIC, LocalObjective, SolverError, newton_minimize

SOLVERS = ("katyusha", "agd", "exact")


@dataclass(frozen=True)
class InnerBudget:
    """Per-outer-iteration budget of the local solver.

    ``steps`` fixes the evaluation count directly, ``epochs`` sizes it in
    Katyusha epochs (3m evaluations each); with neither set, the budget follows
    ``katyusha_budget(m, kappa_max, c)``.
    """

    solver: str = "katyusha"
    steps: int | None = None
    epochs: float | None = None
    c: float = 0.5
    C_kat: float = 1.0

    def __post_init__(self):
        if self.solver not in SOLVERS:
            raise ValueError(f"unknown inner solver {self.solver!r}")
        if self.steps is not None and self.steps < 1:
            raise ValueError("inner budget must be at least one evaluation")
        if self.epochs is not None and self.epochs <= 0:
            raise ValueError("epochs must be positive")
        if self.solver != "exact" and self.steps is None and self.epochs is None and not 0 < self.c < 1:
            raise ValueError("approximate solvers need 0 < c < 1")

    def steps_for(self, m: int, kappa_max: float) -> int:
        if self.steps is not None:
            return self.steps
        if self.epochs is not None:
            return max(m + 1, math.ceil(self.epochs * 3 * m))
        return katyusha_budget(m, kappa_max, self.c, self.C_kat)


def katyusha_budget(m: int, kappa_max: float, c: float, C_kat: float = 1.0) -> int:
    """ceil(C_kat (m + sqrt(m kappa_max)) log(2 kappa_max / c)), floored at one snapshot plus a step."""
    if m < 1 or kappa_max < 1 or not 0 < c < 1:
        raise ValueError("need m >= 1, kappa_max >= 1, 0 < c < 1")
    steps = math.ceil(C_kat * (m + math.sqrt(m * kappa_max)) * math.log(2 * kappa_max / c))
    return max(steps, m + 1)


# ---------------------------------------------------------------------------
# compiled kernels


@numba.njit(cache=True)
def _component_grad(kind, j, theta, A, b, F, y, lam, out):
    d = theta.shape[0]
    if kind == 0:
        for r in range(d):
            acc = -b[j, r]
            for s in range(d):
                acc += A[j, r, s] * theta[s]
            out[r] = acc
    else:
        z = 0.0
        for s in range(d):
            z += F[j, s] * theta[s]
        if z >= 0:
            sig = 1.0 / (1.0 + math.exp(-z))
        else:
            ez = math.exp(z)
            sig = ez / (1.0 + ez)
        r_ = sig - y[j]
        for s in range(d):
            out[s] = F[j, s] * r_ + 2.0 * lam * theta[s]


@numba.njit(cache=True)
def _katyusha_kernel(kind, A, b, F, y, lam, m, shift, warm, steps, idx, epoch_len, tau1, tau2, alpha, L, sigma):
    d = warm.shape[0]
    x_tilde = warm.copy()
    yk = warm.copy()
    zk = warm.copy()
    xk = np.empty(d)
    g = np.empty(d)
    snap = np.empty((m, d))
    mu_s = np.empty(d)
    acc = np.zeros(d)
    w_sum = 0.0
    weight = 1.0
    used = 0
    t = 0
    in_epoch = epoch_len
    while used < steps:
        if in_epoch >= epoch_len and steps - used >= m + 1:
            if w_sum > 0.0:
                for s in range(d):
                    x_tilde[s] = acc[s] / w_sum
            for s in range(d):
                mu_s[s] = -shift[s]
            for j in range(m):
                _component_grad(kind, j, x_tilde, A, b, F, y, lam, g)
                for s in range(d):
                    snap[j, s] = g[s]
                    mu_s[s] += g[s] / m
            used += m
            acc[:] = 0.0
            w_sum = 0.0
            weight = 1.0
            in_epoch = 0
        for s in range(d):
            xk[s] = tau1 * zk[s] + tau2 * x_tilde[s] + (1.0 - tau1 - tau2) * yk[s]
        j = idx[t]
        t += 1
        _component_grad(kind, j, xk, A, b, F, y, lam, g)
        for s in range(d):
            gs = mu_s[s] + g[s] - snap[j, s]
            zk[s] -= alpha * gs
            yk[s] = xk[s] - gs / (3.0 * L)
            acc[s] += weight * yk[s]
        w_sum += weight
        weight *= 1.0 + alpha * sigma
        used += 1
        in_epoch += 1
    if w_sum > 0.0:
        for s in range(d):
            x_tilde[s] = acc[s] / w_sum
    return x_tilde


_DUMMY3 = np.zeros((1, 1, 1))
_DUMMY2 = np.zeros((1, 1))
_DUMMY1 = np.zeros(1)


@lru_cache(maxsize=4096)
def _kernel_data(obj: LocalObjective):
    if obj.kind == QUADRATIC:
        return 0, np.ascontiguousarray(obj.A), np.ascontiguousarray(obj.b), _DUMMY2, _DUMMY1, 0.0
    if obj.kind == LOGISTIC:
        return 1, _DUMMY3, _DUMMY2, np.ascontiguousarray(obj.features), np.ascontiguousarray(obj.labels), obj.lam
    raise SolverError(f"no kernel for kind {obj.kind!r}")


def katyusha(obj: LocalObjective, x: np.ndarray, warm: np.ndarray, steps: int, rng: np.random.Generator,
             epoch_len: int | None = None) -> np.ndarray:
    """Strongly convex Katyusha on f_i - <., x> consuming exactly ``steps`` evaluations.

    Negative momentum tau2 = 1/2, tau1 = min(sqrt(m mu / (3 L)), 1/2),
    alpha = 1 / (3 tau1 L), epoch length 2m. A new snapshot is only taken when
    the remaining budget pays for it and one step; otherwise the current epoch
    runs on. The output is the weighted average of the last epoch.
    """
    m = obj.m
    if steps < m + 1:
        raise SolverError(f"Katyusha needs at least m + 1 = {m + 1} evaluations, got {steps}")
    tau2 = 0.5
    tau1 = min(math.sqrt(m * obj.mu / (3 * obj.L)), 0.5)
    alpha = 1.0 / (3 * tau1 * obj.L)
    idx = rng.integers(0, m, size=steps)
    kind, A, b, F, y, lam = _kernel_data(obj)
    theta = _katyusha_kernel(kind, A, b, F, y, lam, m, np.asarray(x, dtype=float), np.asarray(warm, dtype=float),
                             steps, idx, epoch_len or 2 * m, tau1, tau2, alpha, obj.L, obj.mu)
    _guard(theta)
    return theta


def agd(obj: LocalObjective, x: np.ndarray, warm: np.ndarray, steps: int) -> tuple[np.ndarray, int]:
    """Constant-momentum Nesterov AGD; one iteration costs m evaluations."""
    iters = steps // obj.m
    if iters < 1:
        raise SolverError(f"AGD needs at least m = {obj.m} evaluations, got {steps}")
    rk = math.sqrt(obj.kappa)
    beta = (rk - 1) / (rk + 1)
    theta = np.array(warm, dtype=float)
    prev = theta.copy()
    for _ in range(iters):
        z = theta + beta * (theta - prev)
        prev = theta
        theta = z - (obj.grad(z) - x) / obj.L
    _guard(theta)
    return theta, iters * obj.m


def exact_dual_gradient(obj: LocalObjective, x: np.ndarray, warm: np.ndarray | None = None) -> tuple[np.ndarray, int]:
    """grad f_i*(x); closed form for quadratics (0 evaluations), Newton otherwise.

    Newton stops at ||grad f_i(theta) - x|| <= 1e-12 max(1, ||x||); each
    gradient it forms is charged m evaluations.
    """
    x = np.asarray(x, dtype=float)
    if obj.has_closed_form_conjugate:
        return obj.conjugate_grad(x), 0
    start = np.zeros(obj.d) if warm is None else np.asarray(warm, dtype=float)
    tol = 1e-12 * max(1.0, float(np.linalg.norm(x)))
    theta, iters = newton_minimize(
        lambda t: obj.grad(t) - x,
        obj.hessian,
        lambda t: obj.value(t) - t @ x,
        start,
        tol,
    )
    return theta, (iters + 1) * obj.m


def solve_subproblem(
    obj: LocalObjective,
    x: np.ndarray,
    warm: np.ndarray,
    budget: InnerBudget,
    rng: np.random.Generator | None,
    kappa_max: float | None = None,
) -> tuple[np.ndarray, int]:
    """Approximate grad f_i*(x) warm-started at ``warm``; returns (theta, evaluations)."""
    warm = np.asarray(warm, dtype=float)
    if not np.all(np.isfinite(warm)):
        raise SolverError("non-finite warm start")
    if budget.solver == "exact":
        return exact_dual_gradient(obj, x, warm)
    steps = budget.steps_for(obj.m, obj.kappa if kappa_max is None else kappa_max)
    if budget.solver == "agd":
        return agd(obj, x, warm, steps)
    if rng is None:
        raise SolverError("Katyusha needs an RNG")
    return katyusha(obj, x, warm, steps, rng), steps


def _guard(theta: np.ndarray) -> None:
    if not np.all(np.isfinite(theta)):
        raise SolverError("non-finite iterate in inner solver")
