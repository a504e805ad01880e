"""Command-line entry point: ``maxcovar <command> ...``.

Commands
--------
build-tree   grow a tree from a config and write it with a build report
coverage     compare query success rates of two trees over covariance intervals
query        plan from a query belief through a saved tree
verify       replay-audit a tree file or a query result
plot-data    CSV series for external plotting

Exit codes are 0 on success, 1 when verification or planning fails and 2 for
usage or configuration errors.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from .brt import Brt, TreeIntegrityError, audit_tree, build_report, build_tree
from .core import GaussianBelief, InvalidArgumentError, LinearGaussianSystem, PlanningScene, SteeringWeights
from .moments import check_maneuver
from .montecarlo import rates_within_tolerance, rollout, violation_table
from .planner import DEFAULT_M, QueryResult, coverage, query
from .scenes import ExperimentConfig, bundled_config_path, load_config
from .steering import RecoveryFailedError, RelaxationGapError, opt_steer

log = logging.getLogger("maxcovar")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
COVERAGE_COLUMNS = ("interval_lo", "interval_hi", "tree", "success_rate", "trials")


class UsageError(Exception):
    pass


def _resolve_config(name: str) -> ExperimentConfig:
    """A config file path, or the name of a bundled config (``desk``, ``sixdof``)."""
    if os.path.exists(name):
        return load_config(name)
    path = bundled_config_path(name)
    if path.is_file():
        return load_config(path)
    raise UsageError(f"config {name!r} is neither a file nor a bundled config name")


def _read_json(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError as exc:
        raise UsageError(f"no such file: {path}") from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path} is not valid JSON: {exc}") from exc


def _write_json(path, data) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(data, fh, indent=1)
        fh.write("\n")


def _load_tree(path, audit: bool = False) -> Brt:
    data = _read_json(path)
    try:
        return Brt.from_dict(data, audit=audit)
    except (KeyError, TypeError, InvalidArgumentError) as exc:
        raise UsageError(f"{path} is not a tree file: {exc}") from exc


def _context(tree: Brt) -> dict:
    return {"system": tree.system.to_dict(), "scene": tree.scene.to_dict(),
            "goal": tree.goal.to_dict(), "horizon": tree.horizon}


# ---------------------------------------------------------------------------
# commands


def cmd_build_tree(args) -> int:
    cfg = _resolve_config(args.config)
    seed = cfg.seed if args.seed is None else args.seed
    mode = args.mode or cfg.mode
    n_iter = cfg.n_iter if args.n_iter is None else args.n_iter
    max_nodes = cfg.max_nodes if args.max_nodes is None else args.max_nodes
    tree = build_tree(cfg.system, cfg.scene, cfg.goal, cfg.horizon, n_iter, cfg.radii, seed, mode,
                      max_nodes=max_nodes)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    tree.save(out)
    report = build_report(tree)
    report_path = Path(args.report) if args.report else out.with_name(out.stem + ".report.json")
    _write_json(report_path, report)
    print(f"{mode} tree: {len(tree)} nodes after {report['iterations']} iterations "
          f"(acceptance {report['acceptance_rate']:.2f}) -> {out}")
    return EXIT_OK


def _intervals(args, cfg: ExperimentConfig | None):
    if args.intervals:
        try:
            vals = [float(x) for x in args.intervals.split(",")]
        except ValueError as exc:
            raise UsageError("--intervals must be comma-separated numbers") from exc
        if len(vals) < 2 or len(vals) % 2:
            raise UsageError("--intervals needs lo,hi pairs")
        return [(vals[i], vals[i + 1]) for i in range(0, len(vals), 2)]
    if cfg is not None and "intervals" in cfg.coverage:
        return [tuple(map(float, iv)) for iv in cfg.coverage["intervals"]]
    raise UsageError("no covariance intervals given (use --intervals or a config coverage section)")


def cmd_coverage(args) -> int:
    cfg = _resolve_config(args.config) if args.config else None
    cov = cfg.coverage if cfg is not None else {}
    ann = cov.get("annulus", {})
    inner = args.inner if args.inner is not None else ann.get("inner")
    outer = args.outer if args.outer is not None else ann.get("outer")
    if inner is None or outer is None:
        raise UsageError("annulus radii missing (use --inner/--outer or a config coverage section)")
    trials = args.trials if args.trials is not None else int(cov.get("trials", 100))
    seed = args.seed if args.seed is not None else int(cov.get("seed", 0))
    trees = {}
    for path in args.trees:
        tree = _load_tree(path)
        name = tree.mode if tree.mode not in trees else Path(path).stem
        trees[name] = tree
    rows = coverage(trees, _intervals(args, cfg), trials, float(inner), float(outer), seed, args.M)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=COVERAGE_COLUMNS)
        w.writeheader()
        w.writerows(rows)
    for r in rows:
        print(f"[{r['interval_lo']:g}, {r['interval_hi']:g}] {r['tree']:>10}: {r['success_rate']:.2f}")
    return EXIT_OK


def _query_belief(args, tree: Brt) -> GaussianBelief:
    if args.query:
        data = _read_json(args.query)
        try:
            return GaussianBelief.from_dict(data)
        except (KeyError, InvalidArgumentError) as exc:
            raise UsageError(f"bad query belief: {exc}") from exc
    if not args.config:
        raise UsageError("give --query or a --config with a query section")
    q = _resolve_config(args.config).query
    cov = np.asarray(q.get("covariance", 0.1 * np.eye(tree.system.n)), dtype=float)
    if "mean" in q:
        return GaussianBelief(np.asarray(q["mean"], dtype=float), cov)
    if "box" in q:
        box = np.asarray(q["box"], dtype=float)
        rng = np.random.default_rng(0 if args.seed is None else args.seed)
        return GaussianBelief(rng.uniform(-box, box), cov)
    raise UsageError("config query section needs 'mean' or 'box'")


def cmd_query(args) -> int:
    tree = _load_tree(args.tree)
    q = _query_belief(args, tree)
    if q.n != tree.system.n:
        raise UsageError("query dimension disagrees with the tree's system")
    res = query(tree, q, args.M)
    out = res.to_dict()
    out["context"] = _context(tree)
    if args.monolithic and res.found:
        L = res.hops * tree.horizon
        t0 = time.perf_counter()
        try:
            sol = opt_steer(tree.system, q, tree.goal, L, tree.scene,
                            SteeringWeights.default(tree.system.n, tree.system.m, L))
            status = sol.status if sol.feasible else f"{sol.status} (unverified)"
        except (RelaxationGapError, RecoveryFailedError) as exc:
            status = f"error: {exc}"
        wall = time.perf_counter() - t0
        out["monolithic"] = {"horizon": L, "status": status, "wall_time": wall,
                             "speedup": wall / res.wall_time if res.wall_time > 0 else math.inf}
    _write_json(args.out, out)
    if res.found:
        print(f"found: {res.hops} hops via nodes {res.node_path}, {res.attempts} attempts, "
              f"{res.wall_time:.3f} s")
        if "monolithic" in out:
            m = out["monolithic"]
            print(f"monolithic {m['horizon']}-step solve: {m['wall_time']:.3f} s ({m['speedup']:.1f}x)")
        return EXIT_OK
    print(f"no path after {res.attempts} attempts")
    return EXIT_FAIL


def _mc_check(system, initial, law, scene, trials, seed):
    if trials <= 0:
        return True, []
    samples = rollout(system, initial, law, trials, np.random.default_rng(seed))
    ok = rates_within_tolerance(samples, scene)
    worst = max((r["rate"] - r["epsilon"] for r in violation_table(samples, scene)), default=0.0)
    return ok, worst


def cmd_verify(args) -> int:
    data = _read_json(args.path)
    trials = 10000 if args.trials is None else args.trials
    seed = 0 if args.seed is None else args.seed
    if "nodes" in data:
        try:
            tree = Brt.from_dict(data, audit=False)
        except TreeIntegrityError as exc:
            print(f"tree structure invalid: {exc}")
            return EXIT_FAIL
        except (KeyError, TypeError, InvalidArgumentError) as exc:
            raise UsageError(f"not a tree file: {exc}") from exc
        failed = False
        for child, parent, report in audit_tree(tree):
            failed = True
            print(f"edge ({child}, {parent}) fails replay: mean_error={report.mean_error:.3g}, "
                  f"terminal_ok={report.terminal_ok}, worst control margin "
                  f"{report.worst_control_margin:.3g}, worst state margin {report.worst_state_margin:.3g}")
        for nd in tree.nodes[1:]:
            ok, worst = _mc_check(tree.system, nd.belief, nd.edge_law, tree.scene, trials, seed + nd.id)
            if not ok:
                failed = True
                print(f"edge ({nd.id}, {nd.parent}) Monte Carlo violation rate exceeds tolerance "
                      f"(worst excess {worst:.4f})")
        print(f"{len(tree)} nodes, {len(tree.edges)} edges: {'FAIL' if failed else 'ok'}")
        return EXIT_FAIL if failed else EXIT_OK
    if "full_law" in data:
        ctx = data.get("context")
        if not ctx:
            raise UsageError("query result has no context section")
        res = QueryResult.from_dict(data)
        if not res.found:
            print("query result holds no path")
            return EXIT_FAIL
        system = LinearGaussianSystem.from_dict(ctx["system"])
        scene = PlanningScene.from_dict(ctx["scene"])
        goal = GaussianBelief.from_dict(ctx["goal"])
        report = check_maneuver(system, res.query, res.full_law, scene, goal, spectral_terminal=True)
        ok, worst = _mc_check(system, res.query, res.full_law, scene, trials, seed)
        print(f"analytic replay: {'ok' if report.passed else 'FAIL'}; "
              f"Monte Carlo ({trials} trials): {'ok' if ok else 'FAIL'} (worst excess {worst:.4f})")
        return EXIT_OK if report.passed and ok else EXIT_FAIL
    raise UsageError(f"{args.path} is neither a tree file nor a query result")


def _ellipse(cov2: np.ndarray):
    """3-sigma semi-axes and orientation (radians) of a 2x2 covariance."""
    w, V = np.linalg.eigh(0.5 * (cov2 + cov2.T))
    w = np.clip(w, 0.0, None)
    return 3 * math.sqrt(w[1]), 3 * math.sqrt(w[0]), math.atan2(V[1, 1], V[0, 1])


def cmd_plot_data(args) -> int:
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    if args.kind == "tree":
        tree = _load_tree(args.input)
        with open(out, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["id", "parent", "depth", "mean_x", "mean_y", "semi_major", "semi_minor", "angle"])
            for nd in tree.nodes:
                a, b, ang = _ellipse(nd.covariance[:2, :2])
                w.writerow([nd.id, "" if nd.parent is None else nd.parent, nd.depth,
                            nd.mean[0], nd.mean[1], a, b, ang])
    elif args.kind == "coverage":
        with open(args.input, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            if tuple(reader.fieldnames or ()) != COVERAGE_COLUMNS:
                raise UsageError(f"coverage CSV must have columns {', '.join(COVERAGE_COLUMNS)}")
            rows = list(reader)
        with open(out, "w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=COVERAGE_COLUMNS)
            w.writeheader()
            w.writerows(sorted(rows, key=lambda r: (float(r["interval_lo"]), r["tree"])))
    else:
        data = _read_json(args.input)
        if "full_law" not in data or "context" not in data:
            raise UsageError("trajectories need a query result written by `maxcovar query`")
        res = QueryResult.from_dict(data)
        if not res.found:
            print("query result holds no path")
            return EXIT_FAIL
        system = LinearGaussianSystem.from_dict(data["context"]["system"])
        trials = 100 if args.trials is None else args.trials
        samples = rollout(system, res.query, res.full_law, trials,
                          np.random.default_rng(0 if args.seed is None else args.seed))
        with open(out, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["trial", "k", "x", "y"])
            for t in range(samples.trials):
                for k in range(samples.states.shape[1]):
                    w.writerow([t, k, samples.states[t, k, 0], samples.states[t, k, 1]])
    print(f"wrote {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="maxcovar", description=__doc__.split("\n\n")[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    b = sub.add_parser("build-tree", help="grow a backward reachable tree")
    b.add_argument("--config", required=True, help="config file or bundled name (desk, sixdof)")
    b.add_argument("--out", required=True, help="tree JSON to write")
    b.add_argument("--report", help="build report JSON (default: <out>.report.json)")
    b.add_argument("--seed", type=int)
    b.add_argument("--mode", choices=("maxcovar", "randcovar"))
    b.add_argument("--n-iter", type=int, help="iteration cap (default from config)")
    b.add_argument("--max-nodes", type=int, help="stop once the tree has this many nodes")
    b.set_defaults(func=cmd_build_tree)

    c = sub.add_parser("coverage", help="query success rates of two trees")
    c.add_argument("trees", nargs=2, help="two tree files")
    c.add_argument("--config", help="config providing annulus, intervals, trials and seed")
    c.add_argument("--inner", type=float)
    c.add_argument("--outer", type=float)
    c.add_argument("--intervals", help="lo,hi[,lo,hi...] eigenvalue intervals")
    c.add_argument("--trials", type=int)
    c.add_argument("--seed", type=int)
    c.add_argument("-M", type=int, default=DEFAULT_M)
    c.add_argument("--out", required=True, help="CSV to write")
    c.set_defaults(func=cmd_coverage)

    q = sub.add_parser("query", help="plan through a tree")
    q.add_argument("tree")
    q.add_argument("--query", help="belief JSON {mean, covariance}")
    q.add_argument("--config", help="take the query from a config's query section")
    q.add_argument("--seed", type=int, help="seed for sampling a query from a config box")
    q.add_argument("-M", type=int, default=DEFAULT_M)
    q.add_argument("--monolithic", action="store_true",
                   help="also time the single full-horizon steering solve")
    q.add_argument("--out", required=True)
    q.set_defaults(func=cmd_query)

    v = sub.add_parser("verify", help="audit a tree file or a query result")
    v.add_argument("path")
    v.add_argument("--trials", type=int, help="Monte Carlo rollouts per check (default 10000, 0 skips)")
    v.add_argument("--seed", type=int)
    v.set_defaults(func=cmd_verify)

    d = sub.add_parser("plot-data", help="CSV series for plotting")
    d.add_argument("input")
    d.add_argument("--kind", choices=("tree", "coverage", "trajectories"), required=True)
    d.add_argument("--trials", type=int, help="sampled trajectories (default 100)")
    d.add_argument("--seed", type=int)
    d.add_argument("--out", required=True)
    d.set_defaults(func=cmd_plot_data)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, InvalidArgumentError) as exc:
        print(f"maxcovar: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, TreeIntegrityError):
            print(f"maxcovar: {exc}", file=sys.stderr)
            return EXIT_FAIL
        print(f"maxcovar: error: malformed input ({type(exc).__name__}: {exc})", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
