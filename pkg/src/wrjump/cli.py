"""Command line surface: simulate, dual-evolve, hierarchy, verify,
verify-identities, chentsov, compare, report.

Exit code 0 iff every requested gate passes.  The only environment knob is
WRJUMP_WORKERS (worker count for path batches).
"""

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np


def _add_config(p):
    p.add_argument("--config", required=True, help="experiment config file")


def main(argv=None):
    parser = argparse.ArgumentParser(prog="wrjump")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run a trace batch from a config")
    _add_config(p)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--paths", type=int, default=None)
    p.add_argument("--t-end", type=float, default=None)
    p.add_argument("--sigma", type=float, default=None)
    p.add_argument("--out", required=True)

    p = sub.add_parser("dual-evolve", help="evolve a product observable by the dual series")
    _add_config(p)
    p.add_argument("--t", type=float, required=True)
    p.add_argument("--g-order", default="1,0", help="orders m0,m1 of the observable")
    p.add_argument("--out", required=True)

    p = sub.add_parser("hierarchy", help="evolve the correlation tower forward")
    _add_config(p)
    p.add_argument("--t", type=float, required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("verify", help="run the statistical battery on saved traces")
    _add_config(p)
    p.add_argument("--traces", required=True, help="trace file (jsonl or jsonl.gz)")
    p.add_argument("--out", default=None)

    sub.add_parser("verify-identities", help="exact combinatorial identity table")

    p = sub.add_parser("chentsov", help="path-regularity scaling sweep")
    _add_config(p)
    p.add_argument("--out", default=None)

    p = sub.add_parser("compare", help="dual-series expectation vs Monte Carlo")
    _add_config(p)
    p.add_argument("--t-list", default="0.0,0.05,0.1")
    p.add_argument("--g-order", default="1,0")
    p.add_argument("--paths", type=int, default=None)

    p = sub.add_parser("report", help="emit plot-ready CSVs from a run directory")
    p.add_argument("--run", required=True)

    args = parser.parse_args(argv)
    return _dispatch(args)


def _dispatch(args):
    from .config import ExperimentConfig

    if args.command == "verify-identities":
        return _verify_identities()

    if args.command == "report":
        from .orchestrate import emit_plots
        for path in emit_plots(args.run):
            print(path)
        return 0

    cfg = ExperimentConfig.from_file(args.config)

    if args.command == "simulate":
        for key, flag in (("seed", args.seed), ("paths", args.paths)):
            if flag is not None:
                cfg.sections["run"][key] = flag
        if args.t_end is not None:
            cfg.sections["dynamics"]["t_end"] = args.t_end
        if args.sigma is not None:
            cfg.sections["dynamics"]["sigma"] = args.sigma
        from .orchestrate import run_experiment
        out, passed = run_experiment(cfg, args.out)
        print(f"run written to {out}: {'all gates passed' if passed else 'GATE FAILURE'}")
        return 0 if passed else 1

    if args.command == "dual-evolve":
        from .hierarchy import TorusGrid, evolve_observable
        from .orchestrate import default_test_function, product_observable
        m = tuple(int(v) for v in args.g_order.split(","))
        domain = cfg.domain()
        kernels = cfg.kernels()
        params = cfg.hierarchy_params()
        grid = TorusGrid(domain, params.grid_n)
        theta = default_test_function(domain)
        G = product_observable(grid, m, theta, theta, max_order=params.max_order)
        G_t, report = evolve_observable(G, args.t, cfg.sections["dynamics"]["sigma"],
                                        kernels, params, theta_pair=params.theta0)
        outdir = Path(args.out)
        outdir.mkdir(parents=True, exist_ok=True)
        payload = {
            "t": args.t,
            "orders": {str(mm): float(np.max(np.abs(a)))
                       for mm, a in G_t.components.items()},
            "series_remainder": report["series_remainder"],
        }
        (outdir / "dual_evolve.json").write_text(json.dumps(payload, indent=2))
        print(json.dumps(payload, indent=2))
        return 0

    if args.command == "hierarchy":
        from .hierarchy import TorusGrid, constant_field, evolve_field, save_field
        domain = cfg.domain()
        kernels = cfg.kernels()
        params = cfg.hierarchy_params()
        grid = TorusGrid(domain, params.grid_n)
        init = cfg.sections["initial"]
        field0 = constant_field(grid, params.max_order,
                                init["kappa0"], init["kappa1"])
        field0.theta = params.theta0
        field_t, report = evolve_field(field0, args.t,
                                       cfg.sections["dynamics"]["sigma"],
                                       kernels, params)
        outdir = Path(args.out)
        outdir.mkdir(parents=True, exist_ok=True)
        save_field(field_t, outdir / f"field_t{args.t:g}.field")
        ok, neg, exc = field_t.ruelle_check(
            params.theta0 + kernels.alpha * args.t)
        print(f"evolved to t={args.t:g}; ruelle check "
              f"{'ok' if ok else 'VIOLATED'} (min {neg:.2e}, excess {exc:.2e}); "
              f"series remainder {report['series_remainder']:.2e}")
        return 0 if ok else 1

    if args.command == "verify":
        from .simulate import load_traces
        from .orchestrate import run_verification
        traces = load_traces(args.traces)
        rows, passed = run_verification(cfg, traces)
        for row in rows:
            print(row)
        if args.out:
            Path(args.out).write_text("\n".join(str(r) for r in rows) + "\n")
        return 0 if passed else 1

    if args.command == "chentsov":
        from .estimators import chentsov_sweep
        from .orchestrate import initial_source
        from .simulate import batch_simulate
        domain = cfg.domain()
        kernels = cfg.kernels()
        run = cfg.sections["run"]
        dyn = cfg.sections["dynamics"]
        spacings = [0.02, 0.04, 0.08, 0.16]
        t_end = 0.02 + spacings[-1]
        traces = batch_simulate(initial_source(cfg), run["paths"], t_end,
                                dyn["sigma"], kernels, run["seed"])
        sweep = chentsov_sweep(traces, 0.02, spacings, domain)
        for pt in sweep["points"]:
            print(f"spacing {pt['spacing']:.3f}: {pt['estimate']:.4e} "
                  f"(se {pt['std_error']:.1e})")
        print(f"fitted slope: {sweep['slope']:.3f}")
        if args.out:
            Path(args.out).write_text(json.dumps(sweep, indent=2))
        return 0 if sweep["slope"] >= 1.7 else 1

    if args.command == "compare":
        from .orchestrate import compare_dual_vs_mc
        m = tuple(int(v) for v in args.g_order.split(","))
        t_list = [float(v) for v in args.t_list.split(",")]
        rows = compare_dual_vs_mc(cfg, m, t_list, n_paths=args.paths)
        ok = True
        print("t        dual          mc            se          z")
        for r in rows:
            print(f"{r['t']:<8g} {r['dual']:<13.6g} {r['mc']:<13.6g} "
                  f"{r['se']:<11.3g} {r['z']:+.2f}")
            ok &= abs(r["z"]) < 3.0
        return 0 if ok else 1

    raise AssertionError(f"unhandled command {args.command}")


def _verify_identities():
    """Exact identity table: sequence weights, Touchard convolution, vanishing
    forward differences.  Bit-exact integer arithmetic throughout."""
    from .combin import (count_sequences, forward_difference_power,
                         sequence_weight, touchard_coefficients)
    rows = []
    ok_all = True

    ok = all(sum(sequence_weight(p, q, c) for c in count_sequences(p, q)) == p ** q
             for p in range(1, 9) for q in range(0, 9))
    rows.append(("sum of C_{p,q} weights equals p^q  (p,q <= 8)", ok))
    ok_all &= ok

    ok = True
    for n in range(0, 11):
        lhs = [0] * (n + 1)
        for p in range(n + 1):
            tp = touchard_coefficients(p)
            tq = touchard_coefficients(n - p)
            binom = math.comb(n, p)
            for a, ca in enumerate(tp):
                for b, cb in enumerate(tq):
                    if a + b <= n:
                        lhs[a + b] += binom * ca * cb
        rhs = [c * 2 ** k for k, c in enumerate(touchard_coefficients(n))]
        ok &= lhs == rhs
    rows.append(("Touchard convolution sum C(n,p) T_p T_{n-p} = T_n(2x)  (n <= 10)", ok))
    ok_all &= ok

    ok = all(forward_difference_power(k, p, q) == 0
             for q in range(0, 9) for k in range(q + 1, 12) for p in range(0, 9))
    rows.append(("forward difference of p^q vanishes for k > q", ok))
    ok_all &= ok

    width = max(len(r[0]) for r in rows)
    for label, passed in rows:
        print(f"{label:<{width}}  {'PASS' if passed else 'FAIL'}")
    return 0 if ok_all else 1


if __name__ == "__main__":
    sys.exit(main())
