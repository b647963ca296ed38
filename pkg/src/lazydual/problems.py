"""Finite-sum local objectives, datasets and the centralized reference solver.

Worker i owns ``f_i(theta) = (1/m_i) sum_j f_ij(theta)`` and the network
minimizes ``f = sum_i f_i``. Two component families are supported:

* quadratic: ``f_ij(theta) = 0.5 theta' A_ij theta - b_ij' theta + c_ij``
* logistic_l2: ``f_ij(theta) = -y log s(a'theta) - (1-y) log s(-a'theta) + lam ||theta||^2``
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.special import expit, log_expit

QUADRATIC = "quadratic"
LOGISTIC = "logistic_l2"
DEFAULT_NNZ_CAP = 10**6


class ProblemError(ValueError):
    pass


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class LocalObjective:
    kind: str
    L: float
    mu: float
    # quadratic
    A: np.ndarray | None = field(default=None, repr=False)
    b: np.ndarray | None = field(default=None, repr=False)
    const: np.ndarray | None = field(default=None, repr=False)
    # logistic
    features: np.ndarray | None = field(default=None, repr=False)
    labels: np.ndarray | None = field(default=None, repr=False)
    lam: float = 0.0

    def __post_init__(self):
        if not (self.mu > 0 and self.L >= self.mu):
            raise ProblemError(f"need L >= mu > 0, got L={self.L}, mu={self.mu}")
        if self.kind == QUADRATIC:
            A_mean = self.A.mean(axis=0)
            object.__setattr__(self, "_A_mean", A_mean)
            object.__setattr__(self, "_b_mean", self.b.mean(axis=0))
            object.__setattr__(self, "_A_mean_inv", np.linalg.inv(A_mean))
        elif self.kind != LOGISTIC:
            raise ProblemError(f"unknown objective kind {self.kind!r}")

    @property
    def m(self) -> int:
        return (self.A if self.kind == QUADRATIC else self.features).shape[0]

    @property
    def d(self) -> int:
        return (self.A if self.kind == QUADRATIC else self.features).shape[-1]

    @property
    def kappa(self) -> float:
        return self.L / self.mu

    @property
    def has_closed_form_conjugate(self) -> bool:
        return self.kind == QUADRATIC

    # -- full objective -----------------------------------------------------

    def value(self, theta: np.ndarray) -> float:
        if self.kind == QUADRATIC:
            return float(0.5 * theta @ self._A_mean @ theta - self._b_mean @ theta + self.const.mean())
        z = self.features @ theta
        loss = -(self.labels * log_expit(z) + (1 - self.labels) * log_expit(-z))
        return float(loss.mean() + self.lam * theta @ theta)

    def grad(self, theta: np.ndarray) -> np.ndarray:
        if self.kind == QUADRATIC:
            return self._A_mean @ theta - self._b_mean
        r = expit(self.features @ theta) - self.labels
        return self.features.T @ r / self.m + 2 * self.lam * theta

    def hessian(self, theta: np.ndarray) -> np.ndarray:
        if self.kind == QUADRATIC:
            return self._A_mean
        s = expit(self.features @ theta)
        w = s * (1 - s) / self.m
        return (self.features.T * w) @ self.features + 2 * self.lam * np.eye(self.d)

    # -- components -----------------------------------------------------------

    def component_value(self, j: int, theta: np.ndarray) -> float:
        if self.kind == QUADRATIC:
            return float(0.5 * theta @ self.A[j] @ theta - self.b[j] @ theta + self.const[j])
        z = self.features[j] @ theta
        y = self.labels[j]
        return float(-(y * log_expit(z) + (1 - y) * log_expit(-z)) + self.lam * theta @ theta)

    def component_grad(self, j: int, theta: np.ndarray) -> np.ndarray:
        if self.kind == QUADRATIC:
            return self.A[j] @ theta - self.b[j]
        a = self.features[j]
        return a * (expit(a @ theta) - self.labels[j]) + 2 * self.lam * theta

    def component_grads(self, theta: np.ndarray) -> np.ndarray:
        """All m component gradients stacked as an (m, d) array."""
        if self.kind == QUADRATIC:
            return self.A @ theta - self.b
        r = expit(self.features @ theta) - self.labels
        return self.features * r[:, None] + 2 * self.lam * theta

    # -- conjugate (quadratic only) -------------------------------------------

    def conjugate_grad(self, x: np.ndarray) -> np.ndarray:
        """Closed-form argmin_theta f_i(theta) - <theta, x>."""
        if self.kind != QUADRATIC:
            raise ProblemError("closed-form conjugate only available for quadratics")
        return self._A_mean_inv @ (x + self._b_mean)

    def conjugate_value(self, x: np.ndarray) -> float:
        if self.kind != QUADRATIC:
            raise ProblemError("closed-form conjugate only available for quadratics")
        v = x + self._b_mean
        return float(0.5 * v @ self._A_mean_inv @ v - self.const.mean())


@dataclass(frozen=True, eq=False)
class ProblemInstance:
    objectives: tuple[LocalObjective, ...]
    theta_star: np.ndarray | None = field(default=None, repr=False)
    f_star: float | None = None

    def __post_init__(self):
        ds = {o.d for o in self.objectives}
        if len(ds) != 1:
            raise ProblemError(f"objectives disagree on dimension: {sorted(ds)}")

    @property
    def n(self) -> int:
        return len(self.objectives)

    @property
    def d(self) -> int:
        return self.objectives[0].d

    @property
    def kind(self) -> str:
        return self.objectives[0].kind

    @property
    def mu_min(self) -> float:
        return min(o.mu for o in self.objectives)

    @property
    def L_max(self) -> float:
        return max(o.L for o in self.objectives)

    @property
    def kappa_min(self) -> float:
        return min(o.kappa for o in self.objectives)

    @property
    def kappa_max(self) -> float:
        return max(o.kappa for o in self.objectives)

    @property
    def kappa_F(self) -> float:
        return self.L_max / self.mu_min

    @property
    def mus(self) -> np.ndarray:
        return np.array([o.mu for o in self.objectives])

    def value(self, theta: np.ndarray) -> float:
        return sum(o.value(theta) for o in self.objectives)

    def grad(self, theta: np.ndarray) -> np.ndarray:
        return sum(o.grad(theta) for o in self.objectives)

    def hessian(self, theta: np.ndarray) -> np.ndarray:
        return sum(o.hessian(theta) for o in self.objectives)

    def dual_value(self, X: np.ndarray) -> float:
        """F*(X) = sum_i f_i*(x_i) for quadratics, X is d x n."""
        return sum(o.conjugate_value(X[:, i]) for i, o in enumerate(self.objectives))

    def with_reference(self, tol: float = 1e-12) -> "ProblemInstance":
        theta, f = centralized_solve(self, tol)
        return replace(self, theta_star=theta, f_star=f)


# ---------------------------------------------------------------------------
# quadratic family


@dataclass(frozen=True)
class Conditioning:
    """Per-worker (mu_i, L_i) targets for component Hessian spectra."""

    mu: tuple[float, ...]
    L: tuple[float, ...]

    @classmethod
    def uniform(cls, n: int, mu: float, L: float) -> "Conditioning":
        return cls((mu,) * n, (L,) * n)


def quadratic_from_arrays(A, b, const=None) -> LocalObjective:
    """Quadratic objective from explicit component arrays; constants read off the spectra."""
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    if A.ndim == 2:
        A, b = A[None], b[None]
    const = np.zeros(A.shape[0]) if const is None else np.asarray(const, dtype=float).reshape(A.shape[0])
    eig = np.linalg.eigvalsh(A)
    return LocalObjective(QUADRATIC, L=float(eig.max()), mu=float(eig.min()), A=A, b=b, const=const)


def make_quadratic(
    n: int,
    m: int,
    d: int,
    conditioning: Conditioning,
    seed: int,
    b_scale: float = 1.0,
) -> ProblemInstance:
    """Random quadratics with every component spectrum inside [mu_i, L_i].

    Each component's spectrum contains both endpoints, so the stored constants
    are tight.
    """
    if d < 1 or m < 1 or n < 1:
        raise ProblemError("need n, m, d >= 1")
    if len(conditioning.mu) != n or len(conditioning.L) != n:
        raise ProblemError("conditioning must give one (mu, L) pair per worker")
    rng = np.random.default_rng(seed)
    objs = []
    for mu, L in zip(conditioning.mu, conditioning.L):
        if mu <= 0 or L < mu:
            raise ProblemError(f"invalid conditioning mu={mu}, L={L}")
        A = np.empty((m, d, d))
        for j in range(m):
            Q, _ = np.linalg.qr(rng.standard_normal((d, d)))
            eig = rng.uniform(mu, L, size=d)
            eig[0] = mu
            eig[-1] = L if (d > 1 or j % 2) else mu
            A[j] = (Q * eig) @ Q.T
            A[j] = (A[j] + A[j].T) / 2
        b = b_scale * rng.standard_normal((m, d))
        objs.append(quadratic_from_arrays(A, b))
    return ProblemInstance(tuple(objs)).with_reference()


# ---------------------------------------------------------------------------
# datasets


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    name: str = ""

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]


def load_libsvm(
    path: str | Path,
    n_features: int | None = None,
    normalize: bool = False,
    nnz_cap: int = DEFAULT_NNZ_CAP,
) -> Dataset:
    """Parse ``label idx:val ...`` lines (1-based indices) into a dense dataset.

    Labels -1/+1 map to 0/1; labels already in {0, 1} are kept.
    """
    rows: list[dict[int, float]] = []
    labels: list[float] = []
    nnz = 0
    text = Path(path).read_text()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        try:
            label = float(tokens[0])
        except ValueError:
            raise ProblemError(f"{path}:{lineno}: bad label {tokens[0]!r}") from None
        feats: dict[int, float] = {}
        for tok in tokens[1:]:
            idx_s, sep, val_s = tok.partition(":")
            try:
                if not sep:
                    raise ValueError
                idx, val = int(idx_s), float(val_s)
            except ValueError:
                raise ProblemError(f"{path}:{lineno}: malformed feature {tok!r}") from None
            if idx < 1:
                raise ProblemError(f"{path}:{lineno}: feature index {idx} is not 1-based")
            if idx in feats:
                raise ProblemError(f"{path}:{lineno}: duplicate feature index {idx}")
            feats[idx] = val
        nnz += len(feats)
        if nnz > nnz_cap:
            raise ProblemError(f"{path}: more than {nnz_cap} nonzeros")
        rows.append(feats)
        labels.append(label)
    if not rows:
        raise ProblemError(f"{path}: no samples")
    d = max((max(r) for r in rows if r), default=0)
    if n_features is not None:
        if n_features < d:
            raise ProblemError(f"{path}: feature index {d} exceeds n_features={n_features}")
        d = n_features
    X = np.zeros((len(rows), d))
    for k, r in enumerate(rows):
        for idx, val in r.items():
            X[k, idx - 1] = val
    y = np.asarray(labels)
    uniq = set(np.unique(y).tolist())
    if uniq <= {-1.0, 1.0}:
        y = (y > 0).astype(float)
    elif not uniq <= {0.0, 1.0}:
        raise ProblemError(f"{path}: labels must be in {{-1,+1}} or {{0,1}}, got {sorted(uniq)}")
    if normalize:
        norms = np.linalg.norm(X, axis=1)
        X = X / np.where(norms > 0, norms, 1.0)[:, None]
    return Dataset(X, y, Path(path).name)


@dataclass(frozen=True)
class PartitionSpec:
    a: float
    b: float
    seed: int
    counts: tuple[int, ...]


def partition_uneven(total_samples: int, n: int, a: float, b: float, seed: int) -> PartitionSpec:
    """Sample counts proportional to p_i ~ U[a, b], largest-remainder rounding, each >= 1."""
    if not 0 < a <= b:
        raise ProblemError(f"need 0 < a <= b, got a={a}, b={b}")
    if total_samples < n:
        raise ProblemError(f"cannot give {n} workers at least one of {total_samples} samples")
    p = np.random.default_rng(seed).uniform(a, b, size=n)
    raw = total_samples * p / p.sum()
    counts = np.floor(raw).astype(int)
    rem = total_samples - counts.sum()
    order = sorted(range(n), key=lambda i: (-(raw[i] - counts[i]), i))
    for i in order[:rem]:
        counts[i] += 1
    for i in range(n):
        while counts[i] < 1:
            donor = int(np.argmax(counts))
            counts[donor] -= 1
            counts[i] += 1
    return PartitionSpec(a, b, seed, tuple(int(c) for c in counts))


def logistic_constants(features: np.ndarray, lam: float) -> tuple[float, float]:
    """(L, mu) valid for every component: ||a||^2/4 + 2 lam and 2 lam."""
    sq = np.einsum("ij,ij->i", features, features)
    return float(sq.max() / 4 + 2 * lam), 2 * lam


def make_logistic(dataset: Dataset, lam: float, partition: PartitionSpec, shuffle: bool = True) -> ProblemInstance:
    if lam <= 0:
        raise ProblemError("lambda must be positive")
    counts = partition.counts
    if sum(counts) != dataset.n_samples:
        raise ProblemError(f"partition covers {sum(counts)} samples, dataset has {dataset.n_samples}")
    if min(counts) < 1:
        raise ProblemError("empty worker shard")
    order = np.arange(dataset.n_samples)
    if shuffle:
        order = np.random.default_rng(partition.seed).permutation(dataset.n_samples)
    objs = []
    start = 0
    for cnt in counts:
        idx = order[start:start + cnt]
        start += cnt
        F = dataset.features[idx]
        L, mu = logistic_constants(F, lam)
        objs.append(LocalObjective(LOGISTIC, L=L, mu=mu, features=F.copy(), labels=dataset.labels[idx].copy(),
                                   lam=lam))
    return ProblemInstance(tuple(objs)).with_reference()


# ---------------------------------------------------------------------------
# reference solver


def newton_minimize(grad_fn, hess_fn, value_fn, x0: np.ndarray, tol: float, max_iter: int = 200):
    """Damped Newton with Armijo backtracking; returns (x, iterations)."""
    x = np.array(x0, dtype=float)
    for it in range(max_iter + 1):
        g = grad_fn(x)
        if not np.all(np.isfinite(g)):
            raise SolverError("non-finite gradient in Newton solve")
        if np.linalg.norm(g) <= tol:
            return x, it
        if it == max_iter:
            break
        step = np.linalg.solve(hess_fn(x), g)
        f0 = value_fn(x)
        slope = g @ step
        if slope <= 1e-13 * max(1.0, abs(f0)):
            # predicted decrease is below value round-off: plain Newton step
            x = x - step
            continue
        t = 1.0
        while t > 1e-12:
            x_new = x - t * step
            if value_fn(x_new) <= f0 - 1e-4 * t * slope:
                break
            t *= 0.5
        else:
            # value is flat at machine precision; take the full step
            x_new = x - step
        x = x_new
    raise SolverError(f"Newton did not reach ||grad|| <= {tol:g} in {max_iter} iterations")


def centralized_solve(p: ProblemInstance, tol: float = 1e-12) -> tuple[np.ndarray, float]:
    """Minimizer of f = sum_i f_i and the optimal value.

    Quadratics are solved in closed form; otherwise Newton is run until the
    gradient norm falls below ``tol`` (scaled by max(1, n)).
    """
    if tol <= 0:
        raise ProblemError("tol must be positive")
    if p.kind == QUADRATIC:
        H = sum(o._A_mean for o in p.objectives)
        r = sum(o._b_mean for o in p.objectives)
        theta = np.linalg.solve(H, r)
        # one refinement step against round-off
        theta = theta - np.linalg.solve(H, p.grad(theta))
        return theta, p.value(theta)
    theta, _ = newton_minimize(p.grad, p.hessian, p.value, np.zeros(p.d), tol * max(1.0, p.n))
    return theta, p.value(theta)


def resolve_dataset_path(name: str | Path) -> Path:
    """Bundled dataset name (e.g. ``heart``) or a filesystem path."""
    bundled = Path(__file__).parent / "data" / str(name)
    if bundled.is_file():
        return bundled
    path = Path(name)
    if not path.is_file():
        raise ProblemError(f"dataset file not found: {name}")
    return path

