"""Command-line front end.

Exit codes: 0 success, 2 input error, 3 numerical failure, 4 no convergence.
The ``CBOP_NUM_THREADS`` environment variable caps BLAS threads.
"""
import argparse
import os
import sys
import time
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path

import numpy as np

from . import io
from .distances import GroupSpec, free_energy_distance_matrix, group_dissimilarity, surprisal_distance
from .errors import CbopError, InputError, NumericalError, TooLarge
from .exact import (
    brute_force_fundamental,
    dual_coupling,
    exact_coupling,
    exact_flow,
    flow_certificate,
    shortest_path_costs,
)
from .experiments import FIGURE1_BETAS, bench, edge_table, figure1, node_table
from .graph import reference_transitions, validate_margins
from .hitting import HittingKernel, solve_hitting
from .killing import DEFAULT_EPSILON_GAP, killed_transitions
from .regular import solve_regular
from .solution import DEFAULT_MAX_ITER, DEFAULT_TOL, Fundamental, discounted_weights, residuals

THREADS_ENV = "CBOP_NUM_THREADS"


def _positive(text):
    try:
        x = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not x > 0 or not np.isfinite(x):
        raise argparse.ArgumentTypeError(f"must be a finite number > 0, got {text}")
    return x


def _positive_int(text):
    try:
        k = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if k < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {text}")
    return k


def _package_version():
    try:
        return version("artifact")
    except PackageNotFoundError:
        return "unknown"


def _abs(path):
    return str(Path(path).resolve()) if path else None


def _manifest(args, outputs, **extra):
    m = {
        "command": args.command,
        "argv": sys.argv[1:],
        "version": _package_version(),
        "graph": _abs(getattr(args, "graph", None)),
        "margins": _abs(getattr(args, "margins", None)),
        "beta": getattr(args, "beta", None),
        "mode": getattr(args, "mode", None),
        "epsilon_gap": getattr(args, "epsilon_gap", None),
        "tol": getattr(args, "tol", None),
        "max_iter": getattr(args, "max_iter", None),
        "seed": getattr(args, "seed", None),
        "cost_from_affinity": getattr(args, "cost_from_affinity", False),
        "outputs": sorted(str(p) for p in outputs),
    }
    m.update(extra)
    return m


def _out_dir(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load(args):
    g = io.read_graph(args.graph, cost_from_affinity=args.cost_from_affinity)
    si, so = io.read_margins(args.margins, g.n)
    return g, validate_margins(g, si, so, renormalize=args.renormalize)


def _solve(g, margins, args):
    if args.mode == "hitting":
        return solve_hitting(g, margins, args.beta, args.tol, args.max_iter)
    return solve_regular(g, margins, args.beta, args.epsilon_gap, args.tol, args.max_iter)


def cmd_solve(args):
    g, margins = _load(args)
    t0 = time.perf_counter()
    sol = _solve(g, margins, args)
    wall = time.perf_counter() - t0
    out = _out_dir(args)
    paths = {k: out / f"{k}.csv" for k in ("coupling", "flows", "visits", "policy")}
    io.write_matrix(paths["coupling"], sol.gamma, "gamma")
    io.write_matrix(paths["flows"], sol.edge_flows, "flow")
    io.write_matrix(paths["policy"], sol.policy, "probability")
    cols = {"visits": sol.node_visits, "mu_in": sol.mu_in, "mu_out": sol.mu_out,
            "sigma_in": sol.sigma_in, "sigma_out": sol.sigma_out}
    if sol.mode == "regular":
        cols.update(alpha=sol.alpha, n_ref=sol.n_ref)
    io.write_vectors(paths["visits"], cols)
    res = residuals(sol.gamma, sol.edge_flows, sol.node_visits, sol.sigma_in, sol.sigma_out)
    summary = {
        "mode": sol.mode,
        "beta": sol.beta,
        "fe_min": sol.fe_min,
        "expected_cost": sol.expected_cost(g.cost_matrix()),
        "iterations": sol.iterations,
        "scaling_residual": sol.residual,
        "residuals": res,
        "underflow": sol.underflow,
        "timings": dict(sol.timings, total=wall),
    }
    if sol.mode == "regular":
        summary["epsilon"] = sol.epsilon
    io.write_json(out / "summary.json", summary)
    io.write_json(out / "manifest.json",
                  _manifest(args, [*paths.values(), out / "summary.json"],
                            timings=summary["timings"], residuals=res))
    print(f"fe_min={io.fmt(sol.fe_min)} iterations={sol.iterations} "
          f"margin_residual={res['margin']:.3g} -> {out}")
    return 0


def _read_weights(args, n):
    if args.weights:
        w = io.read_weights(args.weights, n)
        if np.any(w <= 0):
            raise InputError("node weights must be strictly positive")
        return w / w.sum()
    return np.full(n, 1.0 / n)


def _groups(args, g):
    if not args.groups:
        raise InputError("--groups is required for group dissimilarities")
    M, labels = io.read_groups(args.groups, g.n)
    return GroupSpec(M, _read_weights(args, g.n), labels)


def _warn_regular_groups(groups, mode):
    p = groups.n_groups
    if mode == "regular" and p > 2:
        print(f"warning: regular mode factorizes {p * (p - 1)} killed systems, one per "
              "ordered group pair", file=sys.stderr)


def cmd_distances(args):
    g = io.read_graph(args.graph, cost_from_affinity=args.cost_from_affinity)
    out = _out_dir(args)
    if args.kind == "fe-pairwise":
        D = free_energy_distance_matrix(g, args.beta)
    elif args.kind == "surprisal":
        D = surprisal_distance(g, _read_weights(args, g.n), args.beta, args.mode,
                               args.tol, args.max_iter)
    else:
        groups = _groups(args, g)
        _warn_regular_groups(groups, args.mode)
        D = group_dissimilarity(g, groups, args.beta, args.mode, args.tol, args.max_iter)
    path = out / "distances.csv"
    io.write_matrix(path, D.values, "distance", sparse=False)
    summary = {"kind": D.kind, "metric_claimed": D.metric_claimed,
               "has_infinite": D.has_infinite, "size": D.values.shape[0]}
    if D.metric_claimed and not D.has_infinite:
        summary["triangle_violation"] = D.triangle_violation()
    io.write_json(out / "summary.json", summary)
    io.write_json(out / "manifest.json", _manifest(args, [path, out / "summary.json"],
                                                   kind=args.kind, weights=args.weights,
                                                   groups=args.groups))
    print(f"{D.kind}: {D.values.shape[0]}x{D.values.shape[0]} -> {path}")
    return 0


def cmd_groups(args):
    g = io.read_graph(args.graph, cost_from_affinity=args.cost_from_affinity)
    groups = _groups(args, g)
    out = _out_dir(args)
    sig = groups.group_margins()
    _warn_regular_groups(groups, args.mode)
    D = group_dissimilarity(g, groups, args.beta, args.mode, args.tol, args.max_iter)
    p_margins = out / "group_margins.csv"
    io.write_vectors(p_margins, {f"group_{lab}": sig[k] for k, lab in enumerate(groups.labels)})
    p_dir = out / "free_energy.csv"
    p_sym = out / "dissimilarity.csv"
    io.write_matrix(p_dir, D.directed, "fe_min", sparse=False)
    io.write_matrix(p_sym, D.values, "dissimilarity", sparse=False)
    off = D.values[~np.eye(groups.n_groups, dtype=bool)]
    summary = {"kind": D.kind, "labels": list(groups.labels),
               "min_off_diagonal": float(off.min()) if off.size else None,
               "triangle_violation": D.triangle_violation()}
    io.write_json(out / "summary.json", summary)
    io.write_json(out / "manifest.json",
                  _manifest(args, [p_margins, p_dir, p_sym, out / "summary.json"],
                            groups=args.groups, weights=args.weights))
    print(f"{groups.n_groups} groups -> {out}")
    return 0


def cmd_figure1(args):
    g, runs = figure1(args.rows, args.cols, args.n_sources, args.n_targets, args.betas,
                      args.seed, args.modes)
    out = _out_dir(args)
    paths, metrics = [], []
    for run in runs:
        tag = f"{run.mode}_beta{run.beta:g}"
        h, rows = node_table(g, run, args.cols)
        p = out / f"nodes_{tag}.csv"
        io.write_table(p, h, rows)
        h, rows = edge_table(g, run)
        q = out / f"edges_{tag}.csv"
        io.write_table(q, h, rows)
        paths += [p, q]
        metrics.append(run.metrics())
        print(f"{run.mode:8s} beta={run.beta:<8g} uniform_dev={metrics[-1]['uniform_deviation']:.3g} "
              f"deterministic={metrics[-1]['deterministic_fraction']:.2f}")
    io.write_json(out / "summary.json", {"runs": metrics})
    io.write_json(out / "manifest.json",
                  _manifest(args, paths + [out / "summary.json"], rows=args.rows, cols=args.cols,
                            n_sources=args.n_sources, n_targets=args.n_targets,
                            betas=list(args.betas), modes=list(args.modes)))
    return 0


def cmd_bench(args):
    rows = bench(args.sizes, args.seed, args.beta, args.repeats)
    out = _out_dir(args)
    path = out / "bench.csv"
    io.write_table(path, ["n", "n_sources", "t_exact_flow", "t_regular", "t_hitting",
                          "exact_cost", "fe_regular", "fe_hitting"],
                   [(r.n, r.n_sources, r.t_exact, r.t_regular, r.t_hitting, r.exact_cost,
                     r.fe_regular, r.fe_hitting) for r in rows])
    trend = [{"n": r.n, "regular_over_exact": r.t_regular / r.t_exact,
              "hitting_over_exact": r.t_hitting / r.t_exact,
              "hitting_over_regular": r.t_hitting / r.t_regular} for r in rows]
    io.write_json(out / "summary.json", {"trend": trend, "details": [r.details for r in rows]})
    io.write_json(out / "manifest.json",
                  _manifest(args, [path, out / "summary.json"], sizes=list(args.sizes),
                            repeats=args.repeats))
    for r in rows:
        print(f"n={r.n:<6d} exact={r.t_exact:.3f}s regular={r.t_regular:.3f}s "
              f"hitting={r.t_hitting:.3f}s")
    return 0


def _reload_run(run_dir):
    run = Path(run_dir)
    man = io.read_json(run / "manifest.json")
    if man.get("command") != "solve":
        raise InputError(f"{run} does not hold a solve run")
    g = io.read_graph(man["graph"], cost_from_affinity=man.get("cost_from_affinity", False))
    n = g.n
    cols = ["visits", "mu_in", "mu_out", "sigma_in", "sigma_out"]
    if man["mode"] == "regular":
        cols += ["alpha", "n_ref"]
    vec = io.read_vectors(run / "visits.csv", n, cols)
    gamma = io.read_matrix(run / "coupling.csv", n, "gamma")
    N = io.read_matrix(run / "flows.csv", n, "flow")
    return man, g, vec, gamma, N


def cmd_oracle(args):
    man, g, vec, gamma, N = _reload_run(args.run)
    si, so = vec["sigma_in"], vec["sigma_out"]
    stored = man["residuals"]
    recomputed = residuals(gamma, N, vec["visits"], si, so)
    report = {"check": args.check, "run": str(args.run),
              "residuals_stored": stored, "residuals_recomputed": recomputed,
              "round_trip_identical": stored == recomputed}
    summary = io.read_json(Path(args.run) / "summary.json")
    beta, mode = man["beta"], man["mode"]
    margins = validate_margins(g, si, so)
    ok = report["round_trip_identical"]
    C = g.cost_matrix()
    if args.check == "flow":
        fl = exact_flow(g, margins)
        cost = fl.total_cost
        report.update(exact_cost=cost, fe_min=summary["fe_min"],
                      expected_cost=float((N * C).sum()),
                      duality_gap=fl.duality_gap(),
                      margin_rounding_error=fl.margin_error,
                      certificate_violation=flow_certificate(g, fl))
        ok &= report["duality_gap"] <= 1e-9 and report["certificate_violation"] <= 1e-9
    elif args.check == "coupling":
        d = shortest_path_costs(g)
        ec = exact_coupling(margins, d)
        report.update(exact_cost=ec.cost, solver_transport_cost=float((gamma * d).sum()),
                      fe_min=summary["fe_min"], duality_gap=ec.duality_gap(si, so),
                      dual_violation=ec.dual_violation(d),
                      max_coupling_difference=float(np.abs(gamma - ec.coupling).max()))
        ok &= report["duality_gap"] <= 1e-9 and report["dual_violation"] <= 1e-9
    else:
        if g.n > 6:
            raise TooLarge("the fundamental check is limited to graphs with n <= 6")
        alpha = vec.get("alpha")
        ps = brute_force_fundamental(g, beta, mode, args.max_len, alpha=alpha)
        if mode == "regular":
            P = killed_transitions(reference_transitions(g), alpha)
            Z = Fundamental(discounted_weights(P, C, beta)[0]).matrix
            G = dual_coupling(ps.Z, si, alpha, si, so)
        else:
            Z = HittingKernel.from_graph(g, beta).Z_h
            G = dual_coupling(ps.Z, si, so, si, so)
        report.update(tail_bound=ps.tail_bound, max_len=ps.max_len,
                      max_kernel_difference=float(np.abs(ps.Z - Z).max()),
                      max_coupling_difference=float(np.abs(G - gamma).max()))
        ok &= report["max_kernel_difference"] <= ps.tail_bound + 1e-12
    report["ok"] = bool(ok)
    out = Path(args.out) if args.out else Path(args.run) / f"oracle_{args.check}.json"
    io.write_json(out, report)
    print(f"oracle {args.check}: {'ok' if ok else 'MISMATCH'} -> {out}")
    if not ok:
        raise NumericalError(f"oracle check {args.check} failed; see {out}")
    return 0


def _common(p, solver=True):
    p.add_argument("--graph", required=True, help="edge list CSV: src,dst,affinity,cost")
    p.add_argument("--cost-from-affinity", action="store_true",
                   help="set c_ij = 1/a_ij; the cost column may then be omitted")
    p.add_argument("--beta", type=_positive, required=True, help="inverse temperature (> 0)")
    if solver:
        p.add_argument("--mode", choices=("regular", "hitting"), default="hitting")
        p.add_argument("--tol", type=_positive, default=DEFAULT_TOL)
        p.add_argument("--max-iter", type=_positive_int, default=DEFAULT_MAX_ITER)
    p.add_argument("--out", required=True, help="output directory")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="cbop", description="Margin-constrained bag-of-paths transport on graphs.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="solve one transport problem")
    _common(p)
    p.add_argument("--margins", required=True, help="CSV: node,sigma_in,sigma_out")
    p.add_argument("--epsilon-gap", type=_positive, default=DEFAULT_EPSILON_GAP,
                   help="slack above the smallest admissible persistence (regular mode)")
    p.add_argument("--renormalize", action="store_true",
                   help="rescale margins that do not sum to one")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("distances", help="node distances or group dissimilarities")
    _common(p)
    p.add_argument("--kind", choices=("surprisal", "fe-pairwise", "group"), required=True)
    p.add_argument("--weights", help="CSV node,weight (default uniform)")
    p.add_argument("--groups", help="CSV node,group,membership (kind=group)")
    p.set_defaults(func=cmd_distances)

    p = sub.add_parser("groups", help="group margins and free-energy dissimilarities")
    _common(p)
    p.add_argument("--groups", required=True, help="CSV node,group,membership")
    p.add_argument("--weights", help="CSV node,weight (default uniform)")
    p.set_defaults(func=cmd_groups)

    p = sub.add_parser("figure1", help="lattice membership experiment (plot-ready CSV)")
    p.add_argument("--rows", type=_positive_int, default=10)
    p.add_argument("--cols", type=_positive_int, default=10)
    p.add_argument("--n-sources", type=_positive_int, default=5)
    p.add_argument("--n-targets", type=_positive_int, default=50)
    p.add_argument("--betas", type=_positive, nargs="+", default=list(FIGURE1_BETAS))
    p.add_argument("--modes", nargs="+", choices=("regular", "hitting"),
                   default=["regular", "hitting"])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_figure1)

    p = sub.add_parser("bench", help="wall times of exact flow and both solvers")
    p.add_argument("--sizes", type=_positive_int, nargs="+", default=[100, 400, 900],
                   help="lattice node counts (perfect squares)")
    p.add_argument("--beta", type=_positive, default=1.0)
    p.add_argument("--repeats", type=_positive_int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("oracle", help="check a solve output against exact references")
    p.add_argument("--check", choices=("flow", "coupling", "fundamental"), required=True)
    p.add_argument("--run", required=True, help="output directory of a solve run")
    p.add_argument("--max-len", type=int, default=25, help="path length cap (fundamental)")
    p.add_argument("--out", help="report path (default <run>/oracle_<check>.json)")
    p.set_defaults(func=cmd_oracle)
    return parser


def _thread_limit():
    raw = os.environ.get(THREADS_ENV)
    if not raw:
        return None
    try:
        k = int(raw)
    except ValueError:
        raise InputError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    if k < 1:
        raise InputError(f"{THREADS_ENV} must be >= 1")
    return k


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        limit = _thread_limit()
        if limit is None:
            return args.func(args)
        from threadpoolctl import threadpool_limits

        with threadpool_limits(limits=limit):
            return args.func(args)
    except CbopError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
