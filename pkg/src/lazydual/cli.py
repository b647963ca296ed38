"""Command-line harness: ``lazydual run|spectrum|params|score``.

Examples
--------
    lazydual run --config quadratic-smoke --out runs/smoke
    lazydual run --config heart-fig --method dlag --seed 3 --format json
    lazydual spectrum --config heart-fig
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .algorithms import LAZY, MULTI, AlgoConfig, DivergenceError, StopRule, run
from .config import ConfigError, ExperimentConfig, list_presets, parse_config
from .inner import InnerBudget
from .metrics import (
    TheoryParams,
    corollary1_q,
    edge_utilization,
    heterogeneity_score,
    mdlag_params,
    measured_vs_predicted,
    predicted_comm_ratio,
    theorem1_params,
    theorem4_params,
)
from .problems import (
    Conditioning,
    ProblemInstance,
    load_libsvm,
    make_logistic,
    make_quadratic,
    partition_uneven,
    resolve_dataset_path,
)
from .topology import GossipMatrix, build_graph, chebyshev_plan, max_degree_weights, metropolis_weights, pk_gossip
from .trace import config_hash, emit_trace

# ---------------------------------------------------------------------------
# building blocks


def build_network(cfg: ExperimentConfig) -> GossipMatrix:
    t = cfg.topology
    g = build_graph(t.kind, **t.graph_kwargs())
    return metropolis_weights(g) if t.weights == "metropolis" else max_degree_weights(g)


def build_problem(cfg: ExperimentConfig, n: int, seed: int) -> ProblemInstance:
    p = cfg.problem
    if p.kind == "logistic":
        ds = load_libsvm(resolve_dataset_path(p.dataset), normalize=p.normalize)
        part = partition_uneven(ds.n_samples, n, p.partition.a, p.partition.b, p.partition.seed + seed)
        return make_logistic(ds, p.lam, part)
    mu = [p.mu_overrides.get(i, p.mu) for i in range(n)]
    L = [p.L_overrides.get(i, p.L) for i in range(n)]
    return make_quadratic(n, p.m, p.d, Conditioning(tuple(mu), tuple(L)), p.seed + seed, p.b_scale)


def theory_for(method: str, gm: GossipMatrix, problem: ProblemInstance, D: int) -> TheoryParams | None:
    if method == "dlag":
        return theorem1_params(gm, problem, D)
    if method == "mdlag":
        return mdlag_params(gm, problem, D)
    return None


def algo_config(cfg: ExperimentConfig, method: str, gm: GossipMatrix, problem: ProblemInstance
                ) -> tuple[AlgoConfig, TheoryParams | None]:
    pr = cfg.params
    sigma1 = gm.sigma1
    if method in MULTI:
        plan = chebyshev_plan(gm)
        sigma1 = pk_gossip(gm, plan).sigma1
    beta = sigma1 / problem.mu_min
    eta = 1 / beta if pr.eta == "auto" else float(pr.eta)
    s, gamma, c = pr.s, pr.gamma, pr.c
    theory = None
    if pr.mode == "theory":
        theory = theory_for(method, gm, problem, pr.D)
        if theory is None:
            eta, s = 1 / beta, 1.0
        else:
            eta, s, gamma, c = theory.eta, theory.s, theory.gamma, theory.c
    if method in LAZY:
        ic = cfg.inner
        inner = InnerBudget(ic.solver, ic.steps, ic.epochs, ic.c, ic.C_kat)
    else:
        inner = InnerBudget("exact")
    return AlgoConfig(method, eta, s, gamma, c, pr.D, pr.K, inner), theory


def trace_path(cfg: ExperimentConfig, method: str, seed: int) -> Path:
    return Path(cfg.output.dir) / f"{method}_seed{seed}.{cfg.output.format}"


@dataclass
class RunSummary:
    method: str
    seed: int
    status: str
    path: str
    iterations: int
    messages: int
    grad_evals: int
    final_subopt: float
    messages_to_target: int | None
    utilization: float
    error: str | None = None


def run_one(cfg: ExperimentConfig, method: str, seed: int) -> RunSummary:
    """One (method, seed) run; the trace is written even when the run aborts."""
    gm = build_network(cfg)
    problem = build_problem(cfg, gm.n, seed)
    acfg, theory = algo_config(cfg, method, gm, problem)
    stop = StopRule(cfg.stop.max_iters, cfg.stop.target_subopt)
    status, error = "ok", None
    try:
        trace = run(problem, gm, acfg, stop, seed=seed)
    except DivergenceError as exc:
        trace, status, error = exc.trace, "diverged", str(exc)
    doc = cfg.to_dict()
    doc.pop("output")
    trace.metadata.update(config_hash=config_hash(doc), experiment=cfg.name,
                          theory=None if theory is None else asdict(theory))
    path = emit_trace(trace, trace_path(cfg, method, seed), cfg.output.format)
    target = cfg.stop.target_subopt
    last = trace.final
    return RunSummary(
        method, seed, status, str(path), trace.iterations, int(last["messages"]), int(last["grad_evals"]),
        float(last["subopt"]), trace.messages_to(target) if np.isfinite(target) else None,
        edge_utilization(trace), error,
    )


def _run_one_packed(args):
    return run_one(*args)


def thread_cap() -> int:
    raw = os.environ.get("LAZYDUAL_THREADS")
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            raise ConfigError(f"LAZYDUAL_THREADS must be an integer, got {raw!r}") from None
    return os.cpu_count() or 1


def run_experiment(cfg: ExperimentConfig) -> dict:
    """Run every (method, seed) pair, write traces and ``summary.json``; return the summary."""
    jobs = [(cfg, m, s) for m in cfg.methods for s in cfg.seeds]
    workers = min(thread_cap(), len(jobs))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_one_packed, jobs))
    else:
        results = [run_one(*j) for j in jobs]
    summary = {
        "experiment": cfg.name,
        "config": cfg.to_dict(),
        "runs": [asdict(r) for r in results],
        "comparison": _comparison(cfg, results),
    }
    out = Path(cfg.output.dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "summary.json").write_text(json.dumps(summary, indent=1, sort_keys=True, default=_default))
    return summary


def _default(o):
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(type(o).__name__)


def _comparison(cfg: ExperimentConfig, results: list[RunSummary]) -> dict:
    """Measured edge utilization of lazy runs against the predicted factors, per method."""
    gm = build_network(cfg)
    report = {}
    for method in cfg.methods:
        if method not in LAZY:
            continue
        runs = [r for r in results if r.method == method and r.status == "ok"]
        if not runs:
            continue
        preds = []
        for r in runs:
            problem = build_problem(cfg, gm.n, r.seed)
            acfg, _ = algo_config(cfg, method, gm, problem)
            h = heterogeneity_score(problem, gm, acfg.gamma, acfg.D)
            K = chebyshev_plan(gm).K if method == "mdlag" else 1
            preds.append(predicted_comm_ratio(h, acfg.D, K, method))
        rep = measured_vs_predicted([r.utilization for r in runs], float(np.mean(preds)))
        report[method] = rep.as_dict()
    exact = {"dlag": "ssda", "mdlag": "msda"}
    for lazy, base in exact.items():
        a = [r for r in results if r.method == lazy and r.messages_to_target is not None]
        b = {r.seed: r for r in results if r.method == base and r.messages_to_target is not None}
        ratios = [r.messages_to_target / b[r.seed].messages_to_target for r in a if r.seed in b]
        if ratios:
            report.setdefault(lazy, {})[f"messages_to_target_vs_{base}"] = {
                "per_seed": ratios, "mean": float(np.mean(ratios))}
    return report


# ---------------------------------------------------------------------------
# subcommands


def _overrides(args) -> dict:
    ov = {}
    for flag, key in (("eta", "params.eta"), ("s", "params.s"), ("gamma", "params.gamma"), ("c", "params.c"),
                      ("bigD", "params.D"), ("K", "params.K"), ("out", "output.dir"), ("format", "output.format")):
        v = getattr(args, flag, None)
        if v is not None:
            ov[key] = v
    if getattr(args, "method", None):
        ov["methods"] = [args.method]
    if getattr(args, "seed", None) is not None:
        ov["seeds"] = [args.seed]
    return ov


def cmd_run(args) -> int:
    cfg = parse_config(args.config, _overrides(args))
    summary = run_experiment(cfg)
    failed = 0
    for r in summary["runs"]:
        print(f"{r['method']:>6} seed={r['seed']:<3} {r['status']:<8} iters={r['iterations']:<6} "
              f"messages={r['messages']:<9} grad_evals={r['grad_evals']:<10} subopt={r['final_subopt']:.3e}")
        failed += r["status"] != "ok"
    for method, rep in summary["comparison"].items():
        if "measured" in rep:
            print(f"{method}: edge utilization {rep['measured']:.4f} vs predicted {rep['predicted']:.4f} "
                  f"({'within' if rep['passed'] else 'above'} bound)")
        if "messages_to_target_vs_ssda" in rep or "messages_to_target_vs_msda" in rep:
            key = next(k for k in rep if k.startswith("messages_to_target"))
            print(f"{method}: {key} = {rep[key]['mean']:.4f}")
    print(f"traces and summary in {cfg.output.dir}")
    return 1 if failed else 0


def cmd_spectrum(args) -> int:
    cfg = parse_config(args.config)
    gm = build_network(cfg)
    plan = chebyshev_plan(gm)
    pk = pk_gossip(gm, plan)
    doc = {"n": gm.n, "edges": int(gm.graph.num_edges) if gm.graph else None, "sigma1": gm.sigma1,
           "sigma_nm1": gm.sigma_nm1, "zeta": gm.zeta, "K": plan.K, "chebyshev_bypass": plan.bypass,
           "c1": plan.c1, "c2": plan.c2, "c3": plan.c3, "aK": plan.aK, "zeta_PK": pk.zeta, "sigma1_PK": pk.sigma1}
    print(json.dumps(doc, indent=1))
    return 0


def cmd_params(args) -> int:
    cfg = parse_config(args.config, _overrides(args))
    gm = build_network(cfg)
    problem = build_problem(cfg, gm.n, cfg.seeds[0])
    D = cfg.params.D
    doc = {"kappa_F": problem.kappa_F, "mu_min": problem.mu_min, "L_max": problem.L_max}
    for name, fn in (("dlag_schedule", lambda: theorem1_params(gm, problem, D)),
                     ("mdlag_schedule", lambda: mdlag_params(gm, problem, D)),
                     ("general_at_config", lambda: theorem4_params(gm, problem, D, cfg.params.gamma, cfg.params.c))):
        try:
            doc[name] = asdict(fn())
        except (ValueError, RuntimeError) as exc:
            doc[name] = {"error": str(exc)}
    print(json.dumps(doc, indent=1))
    return 0


def cmd_score(args) -> int:
    cfg = parse_config(args.config, _overrides(args))
    gm = build_network(cfg)
    problem = build_problem(cfg, gm.n, cfg.seeds[0])
    gamma, D = cfg.params.gamma, cfg.params.D
    h = heterogeneity_score(problem, gm, gamma, D)
    K = chebyshev_plan(gm).K
    doc = {"gamma": gamma, "D": D, "h": h.tolist(),
           "dlag_factor": predicted_comm_ratio(h, D, 1, "dlag"),
           "mdlag_factor": predicted_comm_ratio(h, D, K, "mdlag"),
           "q": corollary1_q(h)}
    print(json.dumps(doc, indent=1))
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lazydual", description="Decentralized dual-method simulator.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, overrides=True):
        p.add_argument("--config", required=True, help=f"YAML file or preset ({', '.join(list_presets())})")
        if overrides:
            p.add_argument("--eta", type=float)
            p.add_argument("--s", type=float)
            p.add_argument("--gamma", type=float)
            p.add_argument("--c", type=float)
            p.add_argument("--bigD", type=int, help="delay cap D")
            p.add_argument("--K", type=int, help="Chebyshev rounds")
            p.add_argument("--seed", type=int)

    p = sub.add_parser("run", help="run an experiment and write traces")
    common(p)
    p.add_argument("--method", choices=["ssda", "msda", "dlag", "mdlag"])
    p.add_argument("--out")
    p.add_argument("--format", choices=["csv", "json"])
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("spectrum", help="gossip-matrix spectrum and Chebyshev constants")
    common(p, overrides=False)
    p.set_defaults(func=cmd_spectrum)

    p = sub.add_parser("params", help="theoretical parameter schedules")
    common(p)
    p.set_defaults(func=cmd_params)

    p = sub.add_parser("score", help="heterogeneity score and predicted communication")
    common(p)
    p.set_defaults(func=cmd_score)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
