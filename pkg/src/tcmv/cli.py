"""Command-line entry point: ``tcmv <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
import traceback
import warnings
from pathlib import Path

from .config import digest, load_config, spec_from_config
from .errors import ConfigError, InvariantBreach, SCViolation, TCMVError, UnsupportedSpec
from .market_tree import build_from_config
from .outputs import jsonable, write_csv, write_json, write_jsonl, write_manifest

EXIT_USAGE = 64


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _threads(args) -> int:
    if args.threads is not None:
        return args.threads
    env = os.environ.get("TCMV_THREADS", "").strip()
    return int(env) if env else 0


def _node_rows(tree):
    for k in range(tree.horizon + 1):
        for i in range(tree.sizes[k]):
            yield k, i, tree.label(k, i)


# ---------------------------------------------------------------------------
# subcommands; each returns (outputs, seeds)
# ---------------------------------------------------------------------------


def cmd_solve(args, out):
    from .solvers import solve_lmve_recursion, solve_mmve, solve_precommitment

    doc = load_config(args.config)
    gamma = args.gamma if args.gamma is not None else doc.get("gamma")
    x = args.x if args.x is not None else doc.get("x")
    if gamma is None or x is None:
        raise ConfigError("--gamma and --x are required (or 'gamma'/'x' in the config)")
    if args.target_mean is not None and args.kind != "precommit":
        raise ConfigError("--target-mean only applies to --kind precommit")
    tree = build_from_config(doc)
    if args.kind == "lmve":
        res = solve_lmve_recursion(tree, gamma, x)
    elif args.kind == "mmve":
        res = solve_mmve(tree, gamma, x)
    else:
        res = solve_precommitment(tree, gamma, x, target_mean=args.target_mean)
    t = res.tree
    records = []
    for k, i, nid in _node_rows(t):
        th = res.strategy[k][i] if k < t.horizon else None
        records.append([nid, k, t.prices[k][i], th, res.Z[k][i], res.U[k][i]])
    header = ["node_id", "level", "price", "theta", "Z", "U"]
    if args.out == "csv":
        path = write_csv(out / "solve.csv", header, records)
    else:
        path = write_jsonl(out / "solve.jsonl", [dict(zip(header, r)) for r in records])
    summary = {"kind": res.kind, "gamma": res.gamma, "x": res.x, "U0": res.U0,
               "residuals": res.residuals, "warnings": res.warnings}
    spath = write_json(out / "solve.summary.json", summary)
    return [path, spath], None


def cmd_decompose(args, out):
    from .decomposition import fs_of_mvt
    from .mv_structure import compute_lambda, compute_mvt

    tree = build_from_config(load_config(args.config))
    sc = compute_lambda(tree).require()
    mvt = compute_mvt(tree, sc)
    fs = fs_of_mvt(tree, mvt, args.method, sc, cap=args.cap, tol=args.tol)
    rows = []
    for k, i, nid in _node_rows(tree):
        xi = fs.xi_hat[k][i] if k < tree.horizon else None
        dk = mvt.deltaK[k][i] if k < tree.horizon else None
        lh = fs.L_hat[k][i] if fs.L_hat is not None else None
        rows.append([nid, k, xi, lh, dk])
    comments = [f"K0_hat={fs.K0_hat!r}", f"method={fs.method}"]
    if fs.L_hat is None:
        comments.append("L_hat depends on the route through the lattice; column left empty")
    path = write_csv(out / "decompose.csv", ["node_id", "level", "xi_hat", "L_hat", "deltaK"],
                     rows, comments)
    return [path], None


def cmd_diagnose(args, out):
    from .mv_structure import compute_lambda, compute_mvt

    tree = build_from_config(load_config(args.config))
    sc = compute_lambda(tree)
    records = []
    for k, i, nid in _node_rows(tree):
        if k == tree.horizon:
            continue
        lam = float(sc.lam[k][i])
        records.append({"id": nid, "level": k, "lambda": lam,
                        "deltaK": lam * float(sc.doob.deltaA[k][i]),
                        "eta": float(sc.residual_eta[k][i])})
    summary = {"record": "summary", "sc_holds": sc.sc_holds,
               "violating_nodes": sc.violating_nodes, "n_nodes": tree.n_nodes,
               "horizon": tree.horizon}
    if sc.sc_holds:
        mvt = compute_mvt(tree, sc)
        summary.update(max_jump=mvt.max_jump, bmo_like_bound=mvt.bmo_like_bound,
                       K_T_sup=mvt.K_T_sup, K_T_inf=mvt.K_T_inf, K_T_mean=mvt.K_T_mean,
                       K_T_deterministic=mvt.deterministic)
    else:
        print(f"warning: structure condition violated at nodes {sc.violating_nodes}",
              file=sys.stderr)
    path = write_jsonl(out / "diagnose.jsonl", records + [summary])
    return [path], None


def cmd_verify(args, out):
    from .checks import verify_tree

    doc = load_config(args.config)
    gamma = args.gamma if args.gamma is not None else doc.get("gamma")
    x = args.x if args.x is not None else doc.get("x", 0.0)
    if gamma is None:
        raise ConfigError("--gamma is required (or 'gamma' in the config)")
    tree = build_from_config(doc)
    rep = verify_tree(tree, gamma, x, seed=args.seed, n_perturb=args.perturbations)
    path = write_json(out / "verify.json", rep)
    sc = next(c for c in rep["checks"] if c["name"] == "structure_condition")
    if sc["status"] == "fail":
        raise SCViolation([], f"structure condition fails: {sc.get('note', '')}")
    if not rep["passed"]:
        bad = [c["name"] for c in rep["checks"] if c["status"] == "fail"]
        raise InvariantBreach(f"checks failed: {bad} (details in {path})")
    return [path], [args.seed]


def cmd_converge(args, out):
    from .convergence import COLUMNS, ConvergenceConfig, run_convergence

    doc = load_config(args.config)
    if doc["kind"] == "explicit-tree":
        raise UnsupportedSpec("converge needs a continuous model ('binomial' or 'regime' spec)")
    spec = spec_from_config(doc)
    if spec is None:
        raise UnsupportedSpec("the multiplicative model has no continuous-time reference")
    gamma = args.gamma if args.gamma is not None else doc.get("gamma")
    if gamma is None:
        raise ConfigError("--gamma is required (or 'gamma' in the config)")
    if args.n_list:
        try:
            n_list = tuple(int(v) for v in args.n_list.split(","))
        except ValueError:
            raise ConfigError(f"--n-list must be comma-separated integers: {args.n_list!r}") from None
    else:
        n_list = tuple(doc.get("n_list", ()))
    threads = _threads(args)
    table = run_convergence(ConvergenceConfig(spec, n_list, gamma, max(1, threads)))
    cols = [c for c in COLUMNS if c != "seconds"]
    path = write_csv(out / "converge.csv", cols, [[r[c] for c in cols] for r in table.rows],
                     [f"theta_reference={table.theta_reference}"] + table.flags)
    outputs = [path]
    fit = {"rates": table.rates, "r_squared": table.r_squared,
           "note": "least squares on log error vs log n, coarsest level excluded"}
    outputs.append(write_json(out / "converge.rates.json", fit))
    if args.plot_csv:
        import math

        errs = ["lambda_error", "K_error", "theta_error", "xi_error", "max_jump",
                "discretization_martingale_mass"]
        rows = []
        for r in table.rows:
            rows.append([math.log10(r["n"])] +
                        [math.log10(r[c]) if r[c] > 0 else None for c in errs])
        outputs.append(write_csv(out / "converge.plot.csv",
                                 ["log10_n"] + [f"log10_{c}" for c in errs], rows))
    timing = {r["n"]: r["seconds"] for r in table.rows}
    return outputs, {"level_seconds": timing}


def cmd_example_bm(args, out):
    from .bm_example import (MCConfig, fs_integrand_f, oracle_moments, simulate_sigma,
                             verify_identities)

    mc = MCConfig(args.paths, args.dt, args.seed, args.bridge, args.t_cap)
    threads = _threads(args)
    with warnings.catch_warnings(record=True):
        warnings.simplefilter("always")
        rep = simulate_sigma(mc, threads).to_dict()
    f, df = fs_integrand_f(0.0, 0.0)
    rep["fs_integrand_at_origin"] = {"f": f, "df_ds": df}
    rep["oracle_moments"] = list(oracle_moments())
    if args.identities:
        rep["identities"] = verify_identities(mc, threads)
    text = json.dumps(jsonable(rep), indent=2)
    print(text)
    path = out / "example_bm.json"
    path.write_text(text + "\n")
    return [path], [args.seed]


def cmd_selftest(args, out):
    from .checks import selftest

    rep = selftest()
    path = write_json(out / "selftest.json", rep)
    failed = [(name, c["name"]) for name, r in rep["fixtures"].items()
              for c in r["checks"] if c["status"] == "fail"]
    for name, r in rep["fixtures"].items():
        print(f"{'ok  ' if r['passed'] else 'FAIL'} {name}")
    if failed:
        raise InvariantBreach(f"selftest failures: {failed}")
    return [path], None


COMMANDS = {
    "solve": cmd_solve, "decompose": cmd_decompose, "diagnose": cmd_diagnose,
    "verify": cmd_verify, "converge": cmd_converge, "example-bm": cmd_example_bm,
    "selftest": cmd_selftest,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    # accepted before or after the subcommand
    common.add_argument("--threads", type=int, default=argparse.SUPPRESS,
                        help="worker threads (0 = auto; default: $TCMV_THREADS or auto)")
    common.add_argument("--out-dir", default=argparse.SUPPRESS,
                        help="directory for output files and the manifest (default: .)")
    p = _Parser(prog="tcmv", description="Time-consistent mean-variance engine on event trees.",
                parents=[common])
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    def add(name, **kw):
        return sub.add_parser(name, parents=[common], **kw)

    s = add("solve", help="LMVE / MMVE / pre-commitment strategy per node")
    s.add_argument("config")
    s.add_argument("--kind", choices=["lmve", "mmve", "precommit"], required=True)
    s.add_argument("--gamma", type=float)
    s.add_argument("--x", type=float)
    s.add_argument("--target-mean", type=float)
    s.add_argument("--out", choices=["csv", "jsonl"], default="csv")

    s = add("decompose", help="FS decomposition of the MVT process")
    s.add_argument("config")
    s.add_argument("--method", choices=["backward", "via-lmve", "fixed-point"], default="backward")
    s.add_argument("--cap", type=int, default=200)
    s.add_argument("--tol", type=float, default=1e-10)

    s = add("diagnose", help="lambda and MVT per node as JSON lines")
    s.add_argument("config")

    s = add("verify", help="run all residual checks on a market")
    s.add_argument("config")
    s.add_argument("--gamma", type=float)
    s.add_argument("--x", type=float)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--perturbations", type=int, default=1000)

    s = add("converge", help="discretisation study against continuous limits")
    s.add_argument("config")
    s.add_argument("--gamma", type=float)
    s.add_argument("--n-list", help="comma-separated nested step counts, e.g. 16,64,256")
    s.add_argument("--plot-csv", action="store_true", help="also write log-log columns")

    s = add("example-bm", help="Monte Carlo of the stopped Brownian example")
    s.add_argument("--paths", type=int, default=1_000_000)
    s.add_argument("--dt", type=float, default=1e-3)
    s.add_argument("--seed", type=int, default=12345)
    s.add_argument("--bridge", action=argparse.BooleanOptionalAction, default=False)
    s.add_argument("--t-cap", type=float, default=100.0)
    s.add_argument("--identities", action="store_true",
                   help="also check the pathwise identities at dt and 10 dt")

    add("selftest", help="invariant suite on the built-in fixtures")
    return p


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else EXIT_USAGE
    # the shared options use SUPPRESS so that either position works; fill defaults here
    for name, default in (("threads", None), ("out_dir", ".")):
        if not hasattr(args, name):
            setattr(args, name, default)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    try:
        outputs, extra = COMMANDS[args.command](args, out)
    except TCMVError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except Exception:
        traceback.print_exc()
        return InvariantBreach.exit_code
    cfg = getattr(args, "config", None)
    seeds = extra if isinstance(extra, list) else None
    write_manifest(out, args.command, argv, digest(cfg) if cfg else None, seeds,
                   time.perf_counter() - t0, outputs,
                   extra if isinstance(extra, dict) else None)
    return 0


if __name__ == "__main__":
    sys.exit(main())
