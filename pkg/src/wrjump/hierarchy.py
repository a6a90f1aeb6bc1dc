"""Correlation-function hierarchy and its dual observable evolution.

The forward route evolves a finite tower of correlation grid functions
k^(m), |m| <= M, under the hierarchy generator: gain/loss relocation terms
weighted by the destination repulsion factor, with a Mayer-cluster
correction integrating higher-order components against products of
(exp(-phi(. - y)) - 1).  Orders above M are supplied by a closure rule:

* ``poisson-product`` substitutes the product of one-point fields (default);
* ``ruelle-cap`` substitutes zero and reports a rigorous interval derived
  from the declared type bound (the zero substitution also makes the
  truncated forward operator the exact adjoint of the truncated dual one,
  which the duality checks exploit).

The dual route evolves a quasi-observable tower under the adjoint
generator; computing components of order <= M never requires input orders
above M, so the dual tower is closed without any closure rule.  Both routes
use the operator power series with sub-steps kept inside half of the local
convergence radius, with the norm index updated after each sub-step.
"""

import itertools
import json
import math
from dataclasses import dataclass, field as dc_field

import numpy as np

from .kernels import optimal_horizon, psi_sigma, series_horizon
from .observables import QuasiObservable, TorusGrid

_LETTERS = "abcdefgh"

FIELD_SCHEMA = "wrjump-field-v1"


class HorizonError(RuntimeError):
    """A requested evolution time exceeds the reachable series horizon."""


class SeriesError(RuntimeError):
    """The operator series failed to converge within the term cap."""


@dataclass
class HierarchyParams:
    """Solver knobs: tower size, closure, truncation and safety margins."""

    max_order: int = 2
    grid_n: int = 64
    upsilon_depth: int = 3
    closure: str = "poisson-product"
    theta0: float = None
    series_cap: int = 100
    safety: float = 0.5
    tol: float = 1e-12

    def __post_init__(self):
        if self.closure not in ("poisson-product", "ruelle-cap"):
            raise ValueError("closure must be poisson-product or ruelle-cap")
        if not (0.0 < self.safety < 1.0):
            raise ValueError("safety fraction must lie in (0, 1)")


class CorrelationField:
    """Tower {k^(m)}, |m| <= M, of grid functions with k^(0,0) = 1."""

    def __init__(self, grid, max_order, components=None, theta=None):
        self.grid = grid
        self.max_order = int(max_order)
        self.components = {(0, 0): np.asarray(1.0)}
        if components:
            for m, arr in components.items():
                self.set_component(m, arr)
        self.theta = theta

    def orders(self):
        return sorted(self.components)

    def set_component(self, m, arr):
        m0, m1 = m
        order = m0 + m1
        if order > self.max_order:
            raise ValueError("component order exceeds max_order")
        arr = np.asarray(arr, dtype=float)
        if order == 0:
            self.components[(0, 0)] = np.asarray(float(arr))
            return
        if arr.shape != (self.grid.size,) * order:
            raise ValueError("component shape mismatch")
        self.components[(m0, m1)] = arr

    def component(self, m):
        m0, m1 = m
        if (m0, m1) in self.components:
            return self.components[(m0, m1)]
        if m0 + m1 == 0:
            return np.asarray(1.0)
        return np.zeros((self.grid.size,) * (m0 + m1))

    def copy(self):
        out = CorrelationField(self.grid, self.max_order, theta=self.theta)
        out.components = {m: np.array(a, copy=True) for m, a in self.components.items()}
        return out

    def infer_theta(self):
        """Least norm index: max over orders of log(sup |k^(m)|) / |m|."""
        best = -math.inf
        for (m0, m1), arr in self.components.items():
            order = m0 + m1
            if order == 0:
                continue
            top = float(np.max(np.abs(arr)))
            if top > 0:
                best = max(best, math.log(top) / order)
        return best if math.isfinite(best) else 0.0

    def sup_norm(self, theta):
        """Weighted tower sup norm: max_m e^{-theta |m|} sup |k^(m)|."""
        out = 0.0
        for (m0, m1), arr in self.components.items():
            order = m0 + m1
            val = float(np.max(np.abs(arr))) if order else abs(float(arr))
            out = max(out, math.exp(-theta * order) * val)
        return out

    def ruelle_check(self, theta, tol=1e-6):
        """Assert-style check 0 <= k^(m) <= e^{theta |m|} within tolerance.

        Returns (ok, worst_negative, worst_excess).
        """
        worst_neg = 0.0
        worst_exc = 0.0
        for (m0, m1), arr in self.components.items():
            order = m0 + m1
            if order == 0:
                continue
            bound = math.exp(theta * order)
            worst_neg = min(worst_neg, float(np.min(arr)))
            worst_exc = max(worst_exc, float(np.max(arr)) - bound)
        return (worst_neg >= -tol and worst_exc <= tol), worst_neg, worst_exc


def constant_field(grid, max_order, kappa0, kappa1):
    """Poisson-type field: k^(m) = kappa0^m0 * kappa1^m1 at every node."""
    comps = {}
    for m0 in range(max_order + 1):
        for m1 in range(max_order + 1 - m0):
            if m0 + m1 == 0:
                continue
            comps[(m0, m1)] = np.full((grid.size,) * (m0 + m1),
                                      kappa0 ** m0 * kappa1 ** m1)
    theta = math.log(max(kappa0, kappa1)) if max(kappa0, kappa1) > 0 else 0.0
    return CorrelationField(grid, max_order, comps, theta=theta)


def product_field(grid, max_order, one0, one1):
    """Inhomogeneous product field built from one-point grid functions."""
    comps = {}
    for m0 in range(max_order + 1):
        for m1 in range(max_order + 1 - m0):
            if m0 + m1 == 0:
                continue
            factors = [one0] * m0 + [one1] * m1
            arr = factors[0]
            for f in factors[1:]:
                arr = np.multiply.outer(arr, f)
            comps[(m0, m1)] = arr
    return CorrelationField(grid, max_order, comps)


class OperatorMatrices:
    """Grid matrices shared by both generator directions for one (kernels, sigma).

    ``a_source[i][x, y] = w * a_i(x - y) * psi_sigma(x)`` (x is the jump
    source), ``rep[i][z, y] = exp(-phi_i(z - y))``, ``mayer[i] = rep[i] - 1``.
    """

    def __init__(self, kernels, grid, sigma):
        self.kernels = kernels
        self.grid = grid
        self.sigma = float(sigma)
        pts = grid.points
        damp = np.broadcast_to(psi_sigma(pts, sigma, kernels.domain), (grid.size,))
        self.a_source = []
        self.rep = []
        self.mayer = []
        for i in (0, 1):
            amat = kernels.jump_value(i, pts[:, None, :], pts[None, :, :]) * grid.weight
            self.a_source.append(amat * damp[:, None])
            phi = kernels.repulsion_value(i, pts[:, None, :], pts[None, :, :])
            rep = np.where(np.isinf(phi), 0.0, np.exp(-np.where(np.isinf(phi), 0.0, phi)))
            self.rep.append(rep)
            self.mayer.append(rep - 1.0)
        self.mayer_mass = tuple(
            float(np.max(np.sum(np.abs(mm), axis=0))) * grid.weight
            for mm in self.mayer)


def _block_axes(m, i):
    """Axis positions of the type-i block in the (type-0 first) layout."""
    m0, m1 = m
    return list(range(m0)) if i == 0 else list(range(m0, m0 + m1))


def mayer_augmented(field, i, m, mats, params, with_bound=True):
    """The Mayer-corrected tensor U(eta, y) = (Upsilon^i_y k)^(m)(eta).

    Axes: the |m| configuration axes of k^(m) followed by the kernel-point
    axis y.  Stored orders contribute exact contractions; orders above the
    tower go through the closure rule.  Returns (tensor, dropped_bound) where
    dropped_bound is the interval half-width for everything the closure or
    the depth truncation discarded (computed from the declared norm index).
    """
    grid = field.grid
    m0, m1 = m
    order = m0 + m1
    shape = (grid.size,) * order + (grid.size,)
    out = np.empty(shape)
    out[...] = field.component(m)[..., None]
    T = mats.mayer[i]
    w = grid.weight
    letters = _LETTERS[:order]
    theta = field.theta if field.theta is not None else field.infer_theta()
    phitilde = mats.mayer_mass[i]
    bound = 0.0
    closure_product = None
    closure_column = None
    for n in range(1, params.upsilon_depth + 1):
        ext = (m0, m1 + n) if i == 0 else (m0 + n, m1)
        if ext[0] + ext[1] <= field.max_order and ext in field.components:
            extra = "".join(chr(ord("p") + l) for l in range(n))
            if i == 0:
                k_sub = letters + extra
            else:
                k_sub = letters[:m0] + extra + letters[m0:]
            operands = [field.component(ext)]
            subs = [k_sub]
            for l in range(n):
                operands.append(T)
                subs.append(extra[l] + "y")
            term = np.einsum(",".join(subs) + "->" + letters + "y",
                             *operands, optimize=True)
            out += (w ** n / math.factorial(n)) * term
        elif params.closure == "poisson-product":
            if closure_column is None:
                one0 = field.component((1, 0)) if field.max_order >= 1 else np.zeros(grid.size)
                one1 = field.component((0, 1)) if field.max_order >= 1 else np.zeros(grid.size)
                closure_product = np.asarray(1.0)
                for f in [one0] * m0 + [one1] * m1:
                    closure_product = np.multiply.outer(closure_product, f)
                opp = one1 if i == 0 else one0
                closure_column = w * opp.dot(T)
            term = np.multiply.outer(closure_product,
                                     closure_column ** n) / math.factorial(n)
            out += term
        else:
            if with_bound:
                bound += (phitilde ** n / math.factorial(n)) \
                    * math.exp(theta * (order + n))
    if with_bound:
        for n in range(params.upsilon_depth + 1, params.upsilon_depth + 40):
            inc = (phitilde ** n / math.factorial(n)) * math.exp(theta * (order + n))
            bound += inc
            if inc < 1e-300:
                break
    return out, bound


def hierarchy_generator(field, sigma, kernels, params, mats=None):
    """One application of the forward generator to the stored tower.

    Returns (increment_field, diagnostics); the (0,0) component of the
    increment is identically zero.
    """
    grid = field.grid
    if mats is None:
        mats = OperatorMatrices(kernels, grid, sigma)
    out = CorrelationField(grid, field.max_order, theta=field.theta)
    out.components[(0, 0)] = np.asarray(0.0)
    dropped = 0.0
    for m in field.orders():
        order = sum(m)
        if order == 0:
            continue
        letters = _LETTERS[:order]
        acc = np.zeros((grid.size,) * order)
        for i in (0, 1):
            block = _block_axes(m, i)
            if not block:
                continue
            opp = _block_axes(m, 1 - i)
            ups, bnd = mayer_augmented(field, i, m, mats, params)
            dropped += bnd
            A = mats.a_source[i]
            E = mats.rep[i]
            for j in block:
                lj = letters[j]
                e_ops, e_subs = [], []
                for b in opp:
                    e_ops.append(E)
                    e_subs.append(letters[b] + lj)
                gain_sub = "x" + lj
                ups_sub = letters.replace(lj, "x") + lj
                gain = np.einsum(
                    ",".join([gain_sub] + e_subs + [ups_sub]) + "->" + letters,
                    A, *e_ops, ups, optimize=True)
                e_subs_loss = [letters[b] + "y" for b in opp]
                loss = np.einsum(
                    ",".join([lj + "y"] + e_subs_loss + [letters + "y"]) + "->" + letters,
                    A, *e_ops, ups, optimize=True)
                acc += gain - loss
        out.components[m] = acc
    return out, {"closure_dropped_bound": dropped}


def dual_generator(G, sigma, kernels, params=None, mats=None):
    """Adjoint generator on a quasi-observable tower; exactly closed on
    orders <= max_order (computing them never reads higher orders)."""
    grid = G.grid
    if mats is None:
        mats = OperatorMatrices(kernels, grid, sigma)
    out = QuasiObservable(grid, G.max_order)
    max_order = G.max_order
    for m0 in range(max_order + 1):
        for m1 in range(max_order + 1 - m0):
            order = m0 + m1
            if order == 0:
                continue
            letters = _LETTERS[:order]
            acc = np.zeros((grid.size,) * order)
            nonzero = False
            for i in (0, 1):
                block = _block_axes((m0, m1), i)
                if not block:
                    continue
                opp = _block_axes((m0, m1), 1 - i)
                A = mats.a_source[i]
                E = mats.rep[i]
                T = mats.mayer[i]
                for j in block:
                    lj = letters[j]
                    for s in range(len(opp) + 1):
                        for xi in itertools.combinations(opp, s):
                            inner = (m0, m1 - s) if i == 0 else (m0 - s, m1)
                            g_arr = G.components.get(inner)
                            if g_arr is None:
                                continue
                            keep = [b for b in opp if b not in xi]
                            f_ops, f_subs = [], []
                            for b in keep:
                                f_ops.append(E)
                                f_subs.append(letters[b] + "y")
                            for b in xi:
                                f_ops.append(T)
                                f_subs.append(letters[b] + "y")
                            if i == 0:
                                g_keep = [letters[a] for a in range(m0)] \
                                    + [letters[b] for b in keep]
                                g_moved = [("y" if letters[a] == lj else letters[a])
                                           for a in range(m0)] \
                                    + [letters[b] for b in keep]
                            else:
                                g_keep = [letters[b] for b in keep] \
                                    + [letters[a] for a in range(m0, m0 + m1)]
                                g_moved = [letters[b] for b in keep] \
                                    + [("y" if letters[a] == lj else letters[a])
                                       for a in range(m0, m0 + m1)]
                            move = np.einsum(
                                ",".join([lj + "y"] + f_subs + ["".join(g_moved)])
                                + "->" + letters,
                                A, *f_ops, g_arr, optimize=True)
                            stay = np.einsum(
                                ",".join([lj + "y"] + f_subs + ["".join(g_keep)])
                                + "->" + letters,
                                A, *f_ops, g_arr, optimize=True)
                            acc += move - stay
                            nonzero = True
            if nonzero and np.any(acc):
                out.set_component((m0, m1), acc)
    return out


def pair(field, G):
    """Duality pairing <<k, G>> = sum_m w^|m| / (m0! m1!) sum k^(m) G^(m)."""
    total = 0.0
    w = field.grid.weight
    for m, arr in G.components.items():
        order = sum(m)
        if order > field.max_order:
            raise ValueError("observable order exceeds the stored field tower")
        k_arr = field.component(m)
        if order == 0:
            total += float(arr) * float(k_arr)
        else:
            total += (w ** order / (math.factorial(m[0]) * math.factorial(m[1]))
                      * float(np.sum(k_arr * arr)))
    return total


def _substep_schedule(theta0, t, kernels, safety):
    """Sub-step lengths below safety * local radius, with the norm-index ledger."""
    alpha = kernels.alpha
    phibar = kernels.phibar
    steps = []
    theta = theta0
    remaining = t
    while remaining > 1e-15 * max(t, 1.0):
        if phibar > 0.0:
            delta, t_star = optimal_horizon(theta, alpha, phibar)
            step = min(remaining, safety * t_star)
            if step < 1e-14 * max(t, 1.0):
                raise HorizonError(
                    f"series horizon exhausted at theta={theta:.4f}: "
                    f"remaining {remaining:.3e}, local radius {t_star:.3e}")
        else:
            # No repulsion: the radius (delta / 4 alpha) grows linearly with
            # the step, so one sub-step with a wide enough index step does it.
            delta = 4.0 * alpha * remaining / safety * 1.01 + 1e-9
            step = remaining
        steps.append((step, theta, delta))
        theta += alpha * step
        remaining -= step
    return steps


def _series_sum(initial, apply_op, step, cap, tol, norm):
    """Power-series sum with geometric remainder estimate."""
    acc = initial.copy()
    term = initial
    base = max(norm(initial), 1e-300)
    prev = base
    remainder = 0.0
    terms_used = 0
    for n in range(1, cap + 1):
        term = apply_op(term).scaled(step / n)
        acc.add_scaled(term, 1.0)
        tn = norm(term)
        terms_used = n
        if tn <= tol * base:
            ratio = tn / prev if prev > 0 else 0.0
            remainder = tn * ratio / (1.0 - ratio) if ratio < 1.0 else tn
            break
        prev = tn
    else:
        raise SeriesError(
            f"series did not reach tolerance within {cap} terms "
            f"(last term norm {prev:.3e})")
    return acc, terms_used, remainder


class _FieldOps:
    """Adapter giving CorrelationField the scaled/add interface of the series."""

    def __init__(self, field):
        self.field = field

    def copy(self):
        return _FieldOps(self.field.copy())

    def scaled(self, factor):
        out = self.field.copy()
        for m in out.components:
            out.components[m] = out.components[m] * factor
        return _FieldOps(out)

    def add_scaled(self, other, factor):
        for m, arr in other.field.components.items():
            if m in self.field.components:
                self.field.components[m] = self.field.components[m] + factor * arr
            else:
                self.field.components[m] = factor * arr


def evolve_field(field, t, sigma, kernels, params):
    """Forward evolution by the operator power series with sub-stepping.

    Returns (field_t, report).  The norm index advances as theta0 + alpha*t;
    sub-steps stay below safety * local radius and abort (HorizonError) when
    the reachable horizon is exhausted rather than extrapolate.
    """
    if t < 0:
        raise ValueError("t must be nonnegative")
    grid = field.grid
    mats = OperatorMatrices(kernels, grid, sigma)
    theta0 = params.theta0 if params.theta0 is not None else field.infer_theta()
    current = field.copy()
    current.theta = theta0
    report = {"substeps": [], "series_remainder": 0.0, "closure_dropped_bound": 0.0}
    if t == 0:
        return current, report
    for step, theta, delta in _substep_schedule(theta0, t, kernels, params.safety):
        horizon = series_horizon(theta, theta + delta, kernels.alpha, kernels.phibar)
        if step > params.safety * horizon + 1e-15:
            raise HorizonError("sub-step exceeds the safety fraction of the radius")
        diag = {"dropped": 0.0}

        def apply_op(wrapped):
            inc, d = hierarchy_generator(wrapped.field, sigma, kernels, params, mats)
            diag["dropped"] += d["closure_dropped_bound"]
            return _FieldOps(inc)

        def norm(wrapped):
            return wrapped.field.sup_norm(theta)

        current.theta = theta
        acc, n_terms, remainder = _series_sum(
            _FieldOps(current), apply_op, step, params.series_cap, params.tol, norm)
        current = acc.field
        current.theta = theta + kernels.alpha * step
        report["substeps"].append({
            "length": step, "theta": theta, "horizon": horizon,
            "terms": n_terms, "remainder": remainder})
        report["series_remainder"] += remainder
        report["closure_dropped_bound"] += diag["dropped"] * step
    return current, report


def evolve_observable(G, t, sigma, kernels, params, theta_pair=None):
    """Dual evolution of a quasi-observable tower.

    ``theta_pair`` is the norm index of the field the result will be paired
    with (defaults to params.theta0); the rung ladder is built upward from
    it, and each sub-step stays below safety * T(rung + delta, rung).
    """
    if t < 0:
        raise ValueError("t must be nonnegative")
    grid = G.grid
    mats = OperatorMatrices(kernels, grid, sigma)
    theta = theta_pair if theta_pair is not None else params.theta0
    if theta is None:
        raise ValueError("need a pairing norm index (theta_pair or params.theta0)")
    current = G.copy()
    report = {"substeps": [], "series_remainder": 0.0}
    if t == 0:
        return current, report
    for step, rung, delta in _substep_schedule(theta, t, kernels, params.safety):
        horizon = series_horizon(rung, rung + delta, kernels.alpha, kernels.phibar)

        def apply_op(gw):
            return dual_generator(gw, sigma, kernels, params, mats)

        def norm(gw):
            return gw.l1_norm(rung)

        current, n_terms, remainder = _series_sum(
            current, apply_op, step, params.series_cap, params.tol, norm)
        report["substeps"].append({
            "length": step, "theta": rung, "horizon": horizon,
            "terms": n_terms, "remainder": remainder})
        report["series_remainder"] += remainder
    return current, report


def dual_expectation(field0, G, t, sigma, kernels, params):
    """Expectation of the K-transform of G at time t via the dual series.

    Returns (value, report); the report carries the series remainder and a
    quadrature epsilon so callers can form an error budget.
    """
    theta0 = params.theta0 if params.theta0 is not None else field0.infer_theta()
    G_t, rep = evolve_observable(G, t, sigma, kernels, params, theta_pair=theta0)
    value = pair(field0, G_t)
    scale = max(abs(value), G.l1_norm(theta0), 1.0)
    rep["quadrature_epsilon"] = 1e-10 * scale
    rep["error_budget"] = rep["series_remainder"] + rep["quadrature_epsilon"]
    return value, rep


def free_spectral_evolution(values, i, t, kernels, grid, forward=True):
    """Discrete-transform closed form for the decoupled one-point equation.

    With no repulsion the stored-order-(1,0)/(0,1) equation is a circulant
    convolution minus its total mass; its exact solution on the grid is
    exp(t(lambda_hat - lambda_hat[0])) in Fourier space.  Works in any
    dimension via the tensor FFT; used as the independent oracle for the
    series path (same discrete operator, different solution route).
    """
    n = grid.n
    d = grid.domain.dimension
    shape = (n,) * d
    row = kernels.jump_value(i, grid.points, grid.points[0]) * grid.weight
    row = row.reshape(shape)
    lam = np.fft.fftn(row)
    lam0 = lam.flat[0]
    vals = np.asarray(values, dtype=float).reshape(shape)
    vhat = np.fft.fftn(vals)
    out = np.fft.ifftn(np.exp(t * (lam - lam0)) * vhat)
    return np.real(out).reshape(np.asarray(values).shape)


# ---------------------------------------------------------------------------
# Field files: text header then raw little-endian float64 blocks.

def save_field(field, path):
    header = {
        "schema": FIELD_SCHEMA,
        "grid_n": field.grid.n,
        "dimension": field.grid.domain.dimension,
        "side": field.grid.domain.side,
        "flat_weights": field.grid.domain.flat_weights,
        "max_order": field.max_order,
        "theta": field.theta,
        "orders": [list(m) for m in field.orders()],
    }
    with open(path, "wb") as fh:
        fh.write((json.dumps(header) + "\n").encode())
        for m in field.orders():
            arr = np.asarray(field.components[m], dtype="<f8")
            fh.write(arr.tobytes())


def load_field(path):
    from .geometry import Domain
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode())
        if header.get("schema") != FIELD_SCHEMA:
            raise ValueError("unsupported field schema")
        domain = Domain(header["dimension"], header["side"], header["flat_weights"])
        grid = TorusGrid(domain, header["grid_n"])
        field = CorrelationField(grid, header["max_order"], theta=header["theta"])
        for m in header["orders"]:
            m = tuple(m)
            order = sum(m)
            count = grid.size ** order if order else 1
            data = np.frombuffer(fh.read(8 * count), dtype="<f8")
            if order == 0:
                field.components[(0, 0)] = np.asarray(float(data[0]))
            else:
                field.components[m] = data.reshape((grid.size,) * order).copy()
    return field
