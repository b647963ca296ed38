"""Acceptance criteria, one test (or parametrized group) per criterion.

Each test prints a single ``criterion N: PASS|FAIL`` line with the measured
numbers; the pytest summary repeats the verdicts.
"""

import math
import time

import numpy as np
import pytest

from lazydual.algorithms import AlgoConfig, LazyAccumulator, StopRule, run
from lazydual.cli import run_experiment
from lazydual.config import parse_config
from lazydual.inner import InnerBudget, exact_dual_gradient, solve_subproblem
from lazydual.metrics import ComplexityCounters, theorem1_params, theorem4_params
from lazydual.problems import (
    Conditioning,
    load_libsvm,
    make_logistic,
    make_quadratic,
    partition_uneven,
    resolve_dataset_path,
)
from lazydual.topology import (
    accelerated_gossip,
    apply_pk,
    chebyshev_plan,
    erdos_renyi,
    grid2d,
    metropolis_weights,
    path,
    pk_gossip,
)


def report(number, ok, detail):
    print(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")
    return ok


def snapshots(store):
    def cb(state, _):
        store.append((state.X.copy(), state.Y.copy(), state.Theta.copy()))
    return cb


# -- 1 ---------------------------------------------------------------------------


@pytest.mark.criterion(1, "lazy methods with c = gamma = 0 reproduce SSDA / MSDA per iterate")
def test_criterion_1_reduction_equivalence():
    t0 = time.perf_counter()
    worst = 0.0
    for seed in range(5):
        g = path(6) if seed % 2 == 0 else grid2d(2, 3)
        gm = metropolis_weights(g)
        p = make_quadratic(6, 3, 4, Conditioning.uniform(6, 0.1, 1.0), seed)
        for lazy, exact in (("dlag", "ssda"), ("mdlag", "msda")):
            s1 = pk_gossip(gm, chebyshev_plan(gm)).sigma1 if exact == "msda" else gm.sigma1
            eta, s = p.mu_min / s1, 2.0
            a, b = [], []
            run(p, gm, AlgoConfig(exact, eta=eta, s=s), StopRule(50), on_state=snapshots(a))
            run(p, gm, AlgoConfig(lazy, eta=eta, s=s, c=0.0, gamma=0.0, D=5), StopRule(50), on_state=snapshots(b))
            assert len(a) == len(b) == 51
            for sa, sb in zip(a, b):
                worst = max(worst, max(float(np.abs(u - v).max()) for u, v in zip(sa, sb)))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-10 and elapsed < 5
    assert report(1, ok, f"max per-iterate deviation {worst:.2e} (tol 1e-10), {elapsed:.2f} s (< 5 s)")


# -- 2 ---------------------------------------------------------------------------


@pytest.mark.criterion(2, "Chebyshev recursion equals Z P_K(U); zeta(P_K(U)) >= 1/4")
def test_criterion_2_chebyshev_correctness():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst_rel, min_zeta = 0.0, math.inf
    for trial in range(10):
        n = int(rng.integers(5, 51))
        kind = trial % 3
        if kind == 0:
            g = path(n)
        elif kind == 1:
            rows = int(rng.integers(2, 8))
            g = grid2d(rows, max(2, n // rows))
        else:
            g = erdos_renyi(n, float(rng.uniform(0.1, 0.4)), seed=int(rng.integers(1 << 30)))
        gm = metropolis_weights(g)
        plan = chebyshev_plan(gm)
        Z = rng.standard_normal((4, g.n))
        ref = apply_pk(Z, plan, gm)
        out = accelerated_gossip(Z, gm, plan, first_round_aggregate=Z @ gm.U)
        worst_rel = max(worst_rel, float(np.linalg.norm(out - ref) / np.linalg.norm(ref)))
        min_zeta = min(min_zeta, pk_gossip(gm, plan).zeta)
    elapsed = time.perf_counter() - t0
    ok = worst_rel <= 1e-10 and min_zeta >= 0.25 and elapsed < 5
    assert report(2, ok, f"max relative error {worst_rel:.2e}, min zeta(P_K) {min_zeta:.4f}, {elapsed:.2f} s")


# -- 3 ---------------------------------------------------------------------------


def direct_sums(deltas, c, D):
    """A_k, B_k and the window sum for every k = 1..T by explicit summation."""
    T = deltas.shape[0]
    A, B, W = (np.zeros_like(deltas) for _ in range(3))
    for k in range(1, T + 1):
        j = np.arange(k)
        A[k - 1] = (c ** (k - j))[:, None].T @ deltas[:k]
        old = j[: max(k - D, 0)]
        if old.size:
            B[k - 1] = (c ** (k - D - old))[:, None].T @ deltas[old]
        W[k - 1] = deltas[max(k - D, 0):k].sum(axis=0)
    return A, B, W


@pytest.mark.criterion(3, "lazy accumulators match direct sums; caches stay coherent")
def test_criterion_3_accumulators_and_cache():
    rng = np.random.default_rng(3)
    worst_acc = 0.0
    for c, D in ((0.5, 1), (0.9, 7), (0.99, 50), (0.3, 200)):
        deltas = rng.exponential(size=(1000, 3)) * rng.choice([1e-6, 1.0, 1e3], size=(1000, 1))
        A, B, W = direct_sums(deltas, c, D)
        acc = LazyAccumulator(3, D=D, c=c, gamma=0.0, mu_min=1.0)
        for k in range(1000):
            acc.push(deltas[k])
            for got, want in ((acc.acc_A, A[k]), (acc.acc_B, B[k]), (acc.window_sum, W[k])):
                scale = np.maximum(np.abs(want), 1e-300)
                worst_acc = max(worst_acc, float((np.abs(got - want) / scale).max()))

    worst_cache = 0.0
    for seed, method in enumerate(["dlag", "mdlag", "dlag", "mdlag"]):
        g = grid2d(3, 3) if seed < 2 else path(7)
        gm = metropolis_weights(g)
        p = make_quadratic(g.n, 4, 3, Conditioning.uniform(g.n, 0.05, 1.0), seed)
        cfg = AlgoConfig(method, eta=0.5 * p.mu_min / gm.sigma1, s=2.0, c=0.2, gamma=0.5, D=4,
                         inner=InnerBudget("katyusha", c=0.5))
        rel = []

        def cb(state, _):
            ref = state.Theta_hat @ gm.U
            rel.append(float(np.abs(state.P - ref).max() / max(1.0, np.abs(state.Theta_hat).max())))

        trace = run(p, gm, cfg, StopRule(200), seed=seed, on_state=cb)
        assert sum(trace.rows["skips"]) > 0
        worst_cache = max(worst_cache, max(rel))
    ok = worst_acc <= 1e-12 and worst_cache <= 1e-12
    assert report(3, ok, f"accumulator rel error {worst_acc:.2e}, cache rel error {worst_cache:.2e} (tol 1e-12)")


# -- 4 ---------------------------------------------------------------------------


@pytest.mark.criterion(4, "general schedule closes at the DLAG schedule values")
def test_criterion_4_theory_closure():
    worst = 0.0
    for g, D in ((path(4), 2), (grid2d(3, 3), 10), (grid2d(5, 5), 50)):
        gm = metropolis_weights(g)
        p = make_quadratic(g.n, 3, 3, Conditioning.uniform(g.n, 0.2, 1.0), 0)
        t1 = theorem1_params(gm, p, D)
        t4 = theorem4_params(gm, p, D, t1.gamma, t1.c)
        errs = (t4.a - 1 / 48, t4.b - 1 / 48, t4.rho - 4, t4.s - 10, t4.eta * t4.beta - 2 / 15)
        worst = max(worst, max(abs(e) for e in errs))
    assert report(4, worst <= 1e-12, f"max deviation from (1/48, 1/48, 4, 10, 2/15) = {worst:.2e}")


# -- 5 ---------------------------------------------------------------------------


@pytest.mark.criterion(5, "SSDA iterations grow like sqrt(kappa); DLAG under its schedule converges linearly")
def test_criterion_5_rates():
    t0 = time.perf_counter()
    gm = metropolis_weights(grid2d(3, 3))
    kappas = (10, 100, 1000)
    slopes = []
    for seed in range(3):
        its = []
        for kappa in kappas:
            p = make_quadratic(9, 3, 4, Conditioning.uniform(9, 1 / kappa, 1.0), seed)
            trace = run(p, gm, AlgoConfig("ssda", eta=p.mu_min / gm.sigma1), StopRule(10**6, 1e-6))
            its.append(trace.first_reaching(1e-6))
        slopes.append(float(np.polyfit(np.log(kappas), np.log(its), 1)[0]))
    slope_ok = all(0.4 <= s <= 0.6 for s in slopes)

    worst_ratio = 0.0
    for seed in range(5):
        p = make_quadratic(9, 5, 4, Conditioning.uniform(9, 0.1, 1.0), seed)
        tp = theorem1_params(gm, p, 5)
        window = math.ceil(10 * math.sqrt(tp.s * tp.kappa))
        cfg = AlgoConfig("dlag", eta=tp.eta, s=tp.s, gamma=tp.gamma, c=tp.c, D=5,
                         inner=InnerBudget("katyusha", c=tp.c))
        trace = run(p, gm, cfg, StopRule(3 * window), seed=seed)
        # below this the values are round-off; a window ending there has converged
        floor = 1e-12 * max(1.0, abs(p.f_star))
        for series in (np.array(trace.dual) + p.f_star, np.array(trace.column("subopt"))):
            for k in range(0, len(series) - window, window):
                if series[k + window] > floor:
                    worst_ratio = max(worst_ratio, series[k + window] / series[k])
    elapsed = time.perf_counter() - t0
    ok = slope_ok and worst_ratio <= 0.1 and elapsed < 60
    assert report(5, ok, f"SSDA log-log slopes {np.round(slopes, 3).tolist()} (in [0.4, 0.6]); "
                         f"worst per-window DLAG ratio {worst_ratio:.2e} (<= 0.1); {elapsed:.1f} s")


# -- 6 ---------------------------------------------------------------------------


def messages_ratio(summary, lazy, exact):
    runs = {(r["method"], r["seed"]): r for r in summary["runs"]}
    ratios = []
    for (method, seed), r in runs.items():
        if method != lazy:
            continue
        base = runs[(exact, seed)]
        assert r["messages_to_target"] is not None and base["messages_to_target"] is not None
        ratios.append(r["messages_to_target"] / base["messages_to_target"])
    return ratios


@pytest.mark.criterion(6, "DLAG communication savings on the heterogeneous and heart presets")
def test_criterion_6_communication_saving(tmp_path):
    t0 = time.perf_counter()
    cfg = parse_config("hetero-example1", {"output.dir": str(tmp_path / "hetero")})
    assert cfg.params.D == 20 and len(cfg.seeds) >= 5
    hetero = run_experiment(cfg)
    r1 = messages_ratio(hetero, "dlag", "ssda")
    util = hetero["comparison"]["dlag"]

    cfg = parse_config("heart-fig", {"output.dir": str(tmp_path / "heart"), "methods": ["ssda", "dlag"]})
    assert len(cfg.seeds) >= 5 and cfg.stop.target_subopt == 1e-6
    heart = run_experiment(cfg)
    r2 = messages_ratio(heart, "dlag", "ssda")
    elapsed = time.perf_counter() - t0
    ok = np.mean(r1) < 1 / 3 and np.mean(r2) <= 0.8 and elapsed < 600
    assert report(6, ok, f"(i) DLAG/SSDA messages {np.mean(r1):.3f} (< 1/3), utilization {util['measured']:.4f} "
                         f"vs predicted {util['predicted']:.4f}; (ii) heart DLAG/SSDA messages to 1e-6 "
                         f"{np.mean(r2):.3f} (<= 0.8), per seed {np.round(r2, 3).tolist()}; {elapsed:.1f} s")


# -- 7 ---------------------------------------------------------------------------


@pytest.mark.criterion(7, "Katyusha at its budget contracts the squared error by c in mean")
@pytest.mark.parametrize("c", [0.5, 0.1])
def test_criterion_7_inner_contraction(c):
    t0 = time.perf_counter()
    worst = 0.0
    for k in range(20):
        rng = np.random.default_rng(700 + k)
        mu = 10 ** rng.uniform(-2, 0)
        obj = make_quadratic(1, 10, 4, Conditioning.uniform(1, mu, 1.0), k).objectives[0]
        x = rng.standard_normal(4)
        opt = obj.conjugate_grad(x)
        warm = opt + rng.standard_normal(4)
        e0 = float(np.sum((warm - opt) ** 2))
        errs = [np.sum((solve_subproblem(obj, x, warm, InnerBudget(c=c), np.random.default_rng(r))[0] - opt) ** 2)
                for r in range(100)]
        worst = max(worst, float(np.mean(errs)) / e0)
    elapsed = time.perf_counter() - t0
    ok = worst <= c and elapsed < 60
    assert report(7, ok, f"c = {c}: worst mean contraction over 20 subproblems {worst:.3e} (<= c), {elapsed:.2f} s")


# -- 8 ---------------------------------------------------------------------------


@pytest.mark.criterion(8, "gradient counters equal budget x n x iterations plus initialization")
@pytest.mark.parametrize("kind", ["quadratic", "logistic"])
@pytest.mark.parametrize("method", ["dlag", "mdlag"])
def test_criterion_8_gradient_accounting(method, kind):
    g = grid2d(3, 3)
    gm = metropolis_weights(g)
    if kind == "quadratic":
        p = make_quadratic(9, 6, 3, Conditioning.uniform(9, 0.05, 1.0), 8)
    else:
        data = load_libsvm(resolve_dataset_path("heart"), normalize=True)
        p = make_logistic(data, 0.01, partition_uneven(data.n_samples, 9, 1.0, 10.0, 0))
    inner = InnerBudget("katyusha", c=0.2)
    cfg = AlgoConfig(method, eta=0.5 * p.mu_min / gm.sigma1, c=0.1, gamma=0.1, D=5, inner=inner)
    iters = 40
    trace = run(p, gm, cfg, StopRule(iters), seed=1)
    # uneven shards get their own budgets; the "budget x n" term is their sum
    budget = sum(inner.steps_for(o.m, p.kappa_max) for o in p.objectives)
    # initialization is one exact solve per worker: closed form for quadratics, Newton for logistic
    init = sum(exact_dual_gradient(o, np.zeros(p.d))[1] for o in p.objectives)
    expected = init + budget * iters
    recount = ComplexityCounters.recount(trace.reports, init)
    per_iter = set(np.diff(trace.column("grad_evals")).astype(int).tolist())
    ok = (trace.rows["grad_evals"][0] == init and trace.final["grad_evals"] == expected
          and recount == ComplexityCounters.from_trace(trace) and per_iter == {budget})
    assert report(8, ok, f"{method}/{kind}: counter {trace.final['grad_evals']} = {init} + {budget} x {iters}"
                         f" = {expected}; recount {recount.grad_evals}")
