"""Experiment execution: run directories, cross-validation tables, plot CSVs.

A run directory contains the fully resolved config, the derived kernel
constants with a code version stamp, traces/ fields/ reports/
subdirectories, and a manifest listing every artifact with its content
hash.  Outputs are bitwise reproducible for a fixed (config, seed);
wall-clock timestamps live only in the sidecar run.log, which is excluded
from the manifest.
"""

import csv
import hashlib
import json
import math
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import ExperimentConfig
from .estimators import (DampedProductFunctional, chentsov_sweep,
                         correlation_estimate, exp_moment_check,
                         moment_bound_check, sigma_sweep, summarize,
                         tuple_moment, type_estimate)
from .geometry import Box, load_configuration
from .hierarchy import (CorrelationField, TorusGrid, constant_field,
                        dual_expectation, evolve_field, save_field)
from .observables import QuasiObservable, TestFunction
from .simulate import batch_simulate, sample_poisson_initial, save_traces

FREE_CASE_TEXT = """\
[domain]
dimension = 1
side = 10.0

[kernel.a0]
family = top-hat
mass = 1.0
scale = 0.5

[kernel.a1]
family = top-hat
mass = 1.0
scale = 0.5

[kernel.phi0]
family = zero
scale = 1.0

[kernel.phi1]
family = zero
scale = 1.0

[initial]
law = poisson
kappa0 = 0.5
kappa1 = 0.5

[dynamics]
sigma = 0.0
t_end = 1.0

[run]
paths = 10000
seed = 20240811
"""

STANDARD_INTERACTING_TEXT = """\
[domain]
dimension = 1
side = 10.0

[kernel.a0]
family = top-hat
mass = 1.0
scale = 0.5

[kernel.a1]
family = top-hat
mass = 1.0
scale = 0.5

[kernel.phi0]
family = gaussian
height = {height}
scale = 0.4

[kernel.phi1]
family = gaussian
height = {height}
scale = 0.4

[initial]
law = poisson
kappa0 = 0.5
kappa1 = 0.5

[dynamics]
sigma = 0.0
t_end = 1.0

[run]
paths = 10000
seed = 20240811
"""


def free_case_config(**overrides):
    cfg = ExperimentConfig.parse(FREE_CASE_TEXT, "<free-case>")
    _apply_overrides(cfg, overrides)
    return cfg


def standard_interacting_config(phibar_target=0.3, **overrides):
    """Interacting scenario with the gaussian repulsion height solved so that
    the Mayer mass of phi comes out at the requested value."""
    from scipy.optimize import brentq
    from .kernels import RepulsionKernel

    def gap(h):
        return RepulsionKernel("gaussian", h, 0.4).mayer_mass(1) - phibar_target

    height = brentq(gap, 1e-3, 50.0, xtol=1e-10)
    cfg = ExperimentConfig.parse(
        STANDARD_INTERACTING_TEXT.format(height=repr(height)),
        "<standard-interacting>")
    _apply_overrides(cfg, overrides)
    return cfg


def _apply_overrides(cfg, overrides):
    for dotted, value in overrides.items():
        section, key = dotted.rsplit("__", 1)
        section = section.replace("__", ".")
        if section not in cfg.sections or key not in cfg.sections[section]:
            raise KeyError(f"unknown override {dotted}")
        cfg.sections[section][key] = value
    cfg.validate("<override>")


def initial_source(cfg):
    """Initial-law sampler (or fixed configuration) from the config."""
    init = cfg.sections["initial"]
    if init["law"] == "poisson":
        domain = cfg.domain()
        k0, k1 = init["kappa0"], init["kappa1"]
        return lambda rng: sample_poisson_initial(k0, k1, domain, rng)
    config, _ = load_configuration(init["path"])
    return config


def default_test_function(domain, height=0.5, center=None, width=0.8):
    if center is None:
        center = 0.5 * domain.side
    return TestFunction("gaussian-bump", domain, height=height,
                        width=width, center=center)


def product_observable(grid, m, theta0, theta1, max_order=None):
    """Quasi-observable with one product component theta0^m0 x theta1^m1."""
    if max_order is None:
        max_order = sum(m)
    factors = [theta0.evaluate(grid.points)] * m[0] \
        + [theta1.evaluate(grid.points)] * m[1]
    arr = np.asarray(1.0)
    for f in factors:
        arr = np.multiply.outer(arr, f)
    return QuasiObservable(grid, max_order, {tuple(m): arr})


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow(row)


def run_verification(cfg, traces, reports_dir=None):
    """Statistical battery against a trace collection.

    Returns (rows, all_passed); rows are printable one-line summaries.  When
    ``reports_dir`` is given, each check also writes its CSV there.
    """
    domain = cfg.domain()
    kernels = cfg.kernels()
    dyn = cfg.sections["dynamics"]
    checks = cfg.checks()
    theta = default_test_function(domain)
    kappa = max(cfg.sections["initial"]["kappa0"], cfg.sections["initial"]["kappa1"])
    theta0_idx = cfg.theta0()
    alpha = kernels.alpha
    t_end = min(dyn["t_end"], min(tr.t_end for tr in traces))
    lines = []
    all_passed = True

    def emit(name, header, rows):
        if reports_dir is not None:
            _write_csv(Path(reports_dir) / f"{name}.csv", header, rows)

    if "chi" in checks:
        rows = []
        ok = True
        for m in ((1, 0), (0, 1), (1, 1)):
            for t in (0.0, 0.5 * t_end, t_end):
                est = correlation_estimate(traces, t, m, theta, theta)
                target = (kappa ** sum(m)) * theta.l1 ** sum(m)
                z = (est.value - target) / est.std_error if est.std_error else 0.0
                rows.append([m[0], m[1], t, est.value, est.std_error, target, z])
                ok &= abs(z) < 3.0
        emit("chi", ["m0", "m1", "t", "estimate", "std_error",
                     "poisson_value", "z"], rows)
        lines.append(f"chi vs poisson values: {'PASS' if ok else 'FAIL'}")
        all_passed &= ok

    if "moments" in checks:
        box = Box((0.25 * domain.side,) * domain.dimension,
                  (0.75 * domain.side,) * domain.dimension)
        kappa_t = math.exp(theta0_idx + alpha * t_end)
        report = moment_bound_check(traces, t_end, box, 4, kappa_t, domain)
        ok = all(r["passed"] for r in report)
        emit("moments", ["n", "estimate", "std_error", "bound", "passed"],
             [[r["n"], r["estimate"], r["std_error"], r["bound"],
               int(r["passed"])] for r in report])
        lines.append(f"counting-moment bounds (n <= 4): {'PASS' if ok else 'FAIL'}")
        all_passed &= ok

    if "expmoment" in checks:
        kappa_t = math.exp(theta0_idx + alpha * t_end)
        rows = []
        ok = True
        for beta in (0.5, 1.0):
            r = exp_moment_check(traces, t_end, beta, kappa_t, domain)
            ok &= r["passed"]
            rows.append([r["beta"], r["estimate"], r["std_error"], r["bound"],
                         int(r["passed"])])
        emit("expmoment", ["beta", "estimate", "std_error", "bound", "passed"], rows)
        lines.append(f"exponential-moment bounds: {'PASS' if ok else 'FAIL'}")
        all_passed &= ok

    if "type" in checks:
        est = type_estimate(traces, t_end, theta, theta, m_max=2)
        envelope = math.exp(theta0_idx + (alpha + 1.0) * t_end)
        ok = est <= envelope * 1.05
        emit("type", ["estimate", "envelope", "passed"],
             [[est, envelope, int(ok)]])
        lines.append(f"type estimate vs growth envelope: {'PASS' if ok else 'FAIL'}")
        all_passed &= ok

    if "chentsov" in checks:
        spacings = [0.02, 0.04, 0.08, 0.16]
        t1 = 0.02
        if t1 + spacings[-1] <= t_end:
            sweep = chentsov_sweep(traces, t1, spacings, domain)
            rows = [[p["spacing"], p["estimate"], p["std_error"]]
                    for p in sweep["points"]]
            rows.append(["slope", sweep["slope"], ""])
            emit("chentsov", ["spacing", "estimate", "std_error"], rows)
            ok = sweep["slope"] >= 1.7
            lines.append(f"path-increment scaling slope {sweep['slope']:.2f}: "
                         f"{'PASS' if ok else 'FAIL'}")
            all_passed &= ok

    if "martingale" in checks:
        from .estimators import martingale_residual
        grid = TorusGrid(domain, cfg.sections["hierarchy"]["grid_n"])
        func = DampedProductFunctional(theta, theta, theta.c_theta + 0.5,
                                       theta.c_theta + 0.5, domain)
        t1, t2 = 0.25 * t_end, 0.75 * t_end
        sub = traces[: min(len(traces), 2000)]
        rep = martingale_residual(sub, func, t1, t2, kernels, dyn["sigma"], grid)
        emit("martingale",
             ["label", "t1", "t2", "residual", "std_error", "passed"],
             [[rep.label, rep.t1, rep.t2, rep.residual.value,
               rep.residual.std_error, int(rep.passed)]])
        lines.append(f"martingale residual |mean| < 3 SE: "
                     f"{'PASS' if rep.passed else 'FAIL'}")
        all_passed &= rep.passed

    return lines, all_passed


def run_experiment(cfg, out_dir, workers=None):
    """Execute a config: traces, optional field dumps, and report CSVs.

    Returns (out_dir, all_passed).  Deterministic for a fixed (config, seed):
    every output byte except the sidecar log is a pure function of them.
    """
    out = Path(out_dir)
    (out / "traces").mkdir(parents=True, exist_ok=True)
    (out / "fields").mkdir(exist_ok=True)
    (out / "reports").mkdir(exist_ok=True)
    log_lines = [f"started {time.strftime('%Y-%m-%dT%H:%M:%S')}"]

    (out / "config.resolved.ini").write_text(cfg.to_string())
    kernels = cfg.kernels()
    (out / "constants.json").write_text(json.dumps({
        "version": __version__,
        "constants": kernels.constants(),
    }, indent=2, sort_keys=True))

    run = cfg.sections["run"]
    dyn = cfg.sections["dynamics"]
    traces = batch_simulate(initial_source(cfg), run["paths"], dyn["t_end"],
                            dyn["sigma"], kernels, run["seed"], workers=workers)
    save_traces(traces, out / "traces" / "paths.jsonl.gz")

    _, all_passed = run_verification(cfg, traces, reports_dir=out / "reports")

    manifest = {}
    for path in sorted(out.rglob("*")):
        if path.is_file() and path.name not in ("manifest.json", "run.log"):
            manifest[str(path.relative_to(out))] = _sha256(path)
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    log_lines.append(f"finished {time.strftime('%Y-%m-%dT%H:%M:%S')}")
    (out / "run.log").write_text("\n".join(log_lines) + "\n")
    return out, all_passed


def compare_dual_vs_mc(cfg, m, t_list, n_paths=None, theta=None):
    """Deterministic dual-series expectation vs Monte Carlo, per time point.

    Returns rows (t, dual, mc, se, z).  The observable is the product
    component of order m built from the default bump test function.
    """
    domain = cfg.domain()
    kernels = cfg.kernels()
    params = cfg.hierarchy_params()
    grid = TorusGrid(domain, params.grid_n)
    theta = theta or default_test_function(domain)
    G = product_observable(grid, m, theta, theta, max_order=params.max_order)
    init = cfg.sections["initial"]
    if init["law"] != "poisson":
        raise ValueError("dual comparison needs a poisson initial law")
    field0 = constant_field(grid, params.max_order, init["kappa0"], init["kappa1"])
    field0.theta = params.theta0

    run = cfg.sections["run"]
    n_paths = n_paths or run["paths"]
    t_max = max(t_list)
    traces = batch_simulate(initial_source(cfg), n_paths, t_max,
                            cfg.sections["dynamics"]["sigma"], kernels,
                            run["seed"])
    fact = math.factorial(m[0]) * math.factorial(m[1])
    rows = []
    for t in t_list:
        dual, rep = dual_expectation(field0, G, t,
                                     cfg.sections["dynamics"]["sigma"],
                                     kernels, params)
        vals = [tuple_moment(tr.at(t), m, theta, theta) / fact for tr in traces]
        est = summarize(vals)
        z = (dual - est.value) / est.std_error if est.std_error > 0 else 0.0
        rows.append({"t": t, "dual": dual, "mc": est.value,
                     "se": est.std_error, "z": z,
                     "budget": rep["error_budget"]})
    return rows


def emit_plots(run_dir):
    """Plot-ready CSVs derived from a completed run directory."""
    out = Path(run_dir)
    plots = out / "plots"
    plots.mkdir(exist_ok=True)
    produced = []

    field_files = sorted((out / "fields").glob("*.field")) if (out / "fields").exists() else []
    for path in field_files:
        from .hierarchy import load_field
        field = load_field(path)
        if (1, 1) in field.components:
            grid = field.grid
            ref = grid.points[0]
            dists = grid.domain.distance(grid.points, ref)
            prof = field.components[(1, 1)][0, :]
            order = np.argsort(dists)
            rows = [[float(dists[i]), float(prof[i])] for i in order]
            target = plots / (path.stem + "_radial.csv")
            _write_csv(target, ["distance", "k11"], rows)
            produced.append(target)

    for name in ("chentsov", "sigma_sweep"):
        src = out / "reports" / f"{name}.csv"
        if src.exists():
            target = plots / f"{name}_points.csv"
            target.write_text(src.read_text())
            produced.append(target)
    if not produced:
        target = plots / "empty.csv"
        _write_csv(target, ["note"], [["no plottable artifacts in run"]])
        produced.append(target)
    return produced
