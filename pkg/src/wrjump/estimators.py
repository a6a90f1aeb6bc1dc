"""Statistical functionals over trace collections and the verification battery.

Every estimator is a deterministic function of the traces (numpy pairwise
summation fixes the reduction order, so re-running on saved traces
reproduces numbers bitwise).  Pass/fail gates use a fixed 3-standard-error
threshold; reports carry the raw numbers so thresholds can be re-judged
offline.
"""

import math
from dataclasses import dataclass

import numpy as np

from .geometry import big_psi, box_count, config_distance, psi
from .kernels import psi_sigma
from .combin import touchard
from .observables import damped_product, damped_tuple_sum, zero_test_function


@dataclass
class EstimateWithError:
    value: float
    std_error: float
    n_samples: int

    def within(self, target, factor=3.0):
        return abs(self.value - target) <= factor * self.std_error


def summarize(values):
    """Mean and standard error of i.i.d. path functionals."""
    arr = np.asarray(values, dtype=float)
    n = len(arr)
    mean = float(np.sum(arr) / n)
    if n > 1:
        var = float(np.sum((arr - mean) ** 2) / (n - 1))
        se = math.sqrt(var / n)
    else:
        se = 0.0
    return EstimateWithError(mean, se, n)


def psi_l1(domain, n=None):
    """Box integral of the taper weight (volume in flat mode)."""
    if domain.flat_weights:
        return domain.volume
    if n is None:
        n = {1: 8192, 2: 256, 3: 64}.get(domain.dimension, 32)
    pts = domain.grid(n)
    w = (domain.side / n) ** domain.dimension
    return float(np.sum(psi(pts, domain)) * w)


# ---------------------------------------------------------------------------
# Ordered-tuple moment sums H^(m) via power sums (same theta in every slot).

def _h_component(theta, points):
    n = len(points)
    if n == 0:
        return np.array([1.0, 0.0, 0.0, 0.0])
    v = theta.evaluate(points)
    s1 = float(np.sum(v))
    s2 = float(np.sum(v * v))
    s3 = float(np.sum(v ** 3))
    return np.array([
        1.0,
        s1,
        s1 * s1 - s2,
        s1 ** 3 - 3.0 * s1 * s2 + 2.0 * s3,
    ])


def tuple_moment(config, m, theta0, theta1):
    """H^(m)(gamma): product over types of ordered-distinct-tuple theta sums."""
    m0, m1 = m
    if m0 > 3 or m1 > 3:
        raise ValueError("orders above 3 not supported by the power-sum path")
    h0 = _h_component(theta0, config.points0)[m0] if m0 else 1.0
    h1 = _h_component(theta1, config.points1)[m1] if m1 else 1.0
    return h0 * h1


def correlation_estimate(traces, t, m, theta0, theta1):
    """Path-average correlation functional chi^(m)(theta x m) at time t."""
    if sum(m) > 3:
        raise ValueError("|m| <= 3 supported")
    vals = [tuple_moment(tr.at(t), m, theta0, theta1) for tr in traces]
    return summarize(vals)


def sub_poissonian_gap(estimate, m, kappa, theta0, theta1):
    """estimate - kappa^|m| <theta0>^m0 <theta1>^m1 (negative = below bound)."""
    target = kappa ** sum(m) * theta0.l1 ** m[0] * theta1.l1 ** m[1]
    return estimate.value - target, target


def moment_bound_check(traces, t, box, n_max, kappa_t, domain):
    """Empirical moments of the box count against the Touchard envelope.

    Passes at order n iff estimate - 3 SE <= T_n(2 kappa_t |box|).
    """
    if n_max > 6:
        raise ValueError("n_max <= 6")
    counts = []
    for tr in traces:
        c0, c1 = box_count(tr.at(t), box)
        counts.append(float(c0 + c1))
    counts = np.asarray(counts)
    rows = []
    x = 2.0 * kappa_t * box.volume
    for n in range(n_max + 1):
        est = summarize(counts ** n)
        bound = float(touchard(n, x))
        rows.append({
            "n": n, "estimate": est.value, "std_error": est.std_error,
            "bound": bound, "passed": est.value - 3.0 * est.std_error <= bound,
        })
    return rows


def exp_moment_check(traces, t, beta, kappa_t, domain):
    """Empirical exponential moment of the taper sum against its envelope."""
    if beta > 2.0:
        raise ValueError("beta <= 2 supported")
    vals = [math.exp(beta * big_psi(tr.at(t), domain)) for tr in traces]
    est = summarize(vals)
    bound = math.exp(2.0 * kappa_t * psi_l1(domain) * math.expm1(beta))
    return {
        "beta": beta, "estimate": est.value, "std_error": est.std_error,
        "bound": bound, "passed": est.value - 3.0 * est.std_error <= bound,
    }


# ---------------------------------------------------------------------------
# Test functionals with incremental single-particle replacement, and the
# quadrature application of the jump generator to them.

class DampedProductFunctional:
    """F(gamma) = prod_i prod_x (1 + theta_i(x)) e^{-tau_i psi(x)}."""

    def __init__(self, theta0, theta1, tau0, tau1, domain):
        self.domain = domain
        self.theta = (theta0 if theta0 is not None else zero_test_function(domain),
                      theta1 if theta1 is not None else zero_test_function(domain))
        self.tau = (tau0, tau1)
        self.label = "damped-product"

    def value(self, config):
        return damped_product(self.theta[0], self.theta[1],
                              self.tau[0], self.tau[1], config, self.domain)

    def _factor(self, i, pts):
        vals = self.theta[i].evaluate(pts)
        weights = np.broadcast_to(psi(pts, self.domain), vals.shape)
        return (1.0 + vals) * np.exp(-self.tau[i] * weights)

    def moved_values(self, config, i, j, ys):
        """F on the configurations with particle j of type i moved to each y."""
        return self.moved_values_all(config, i, np.atleast_2d(ys))[j]

    def moved_values_all(self, config, i, ys):
        """(N_i, n_y) array: one particle factor swapped out per row."""
        base = self.value(config)
        old = self._factor(i, config.points(i))
        new = self._factor(i, ys)
        return base * np.outer(1.0 / old, new)


class DampedTupleSumFunctional:
    """F = damped tuple sum of order m with per-slot test functions.

    Single-particle replacements update the per-type power sums of the slot
    functions, so the generator quadrature stays vectorized for |m_i| <= 3.
    """

    def __init__(self, m, tau, v_lists, domain):
        self.m = m
        self.tau = tau
        self.v_lists = v_lists
        self.domain = domain
        self.label = f"tuple-sum{m}"

    def value(self, config):
        return damped_tuple_sum(self.m, self.tau, self.v_lists, config, self.domain)

    def _slot_values(self, i, pts):
        """u_a(x) = v_a(x) e^{tau psi(x)} for each slot, at the given points."""
        weights = np.broadcast_to(psi(pts, self.domain), (len(pts),))
        boost = np.exp(self.tau[i] * weights)
        rows = []
        for v in self.v_lists[i]:
            vals = v.evaluate(pts) if hasattr(v, "evaluate") else v(pts)
            rows.append(np.asarray(vals) * boost)
        return rows, weights

    @staticmethod
    def _distinct_sum(sums):
        """Ordered-distinct-tuple sum from elementary power sums (m <= 3)."""
        m = len(sums["single"])
        s = sums["single"]
        if m == 0:
            return 1.0
        if m == 1:
            return s[0]
        if m == 2:
            return s[0] * s[1] - sums["pair"][(0, 1)]
        p = sums["pair"]
        return (s[0] * s[1] * s[2] - p[(0, 1)] * s[2] - p[(0, 2)] * s[1]
                - p[(1, 2)] * s[0] + 2.0 * sums["triple"])

    def _component(self, i, pts, replace=None):
        """Tuple-sum factor for one type; ``replace=(j, ys)`` vectorizes the
        single-particle replacement over destination points."""
        m_i = self.m[i]
        tau = self.tau[i]
        if m_i > 3:
            raise ValueError("vectorized path supports m_i <= 3")
        rows, weights = self._slot_values(i, pts) if len(pts) else ([], np.zeros(0))
        if m_i > 0 and len(pts) < m_i:
            return 0.0 if replace is None else np.zeros(len(replace[1]))
        total_psi = float(np.sum(weights))
        if replace is None:
            sums = {
                "single": [float(np.sum(r)) for r in rows],
                "pair": {(a, b): float(np.sum(rows[a] * rows[b]))
                         for a in range(m_i) for b in range(a + 1, m_i)},
                "triple": float(np.sum(rows[0] * rows[1] * rows[2])) if m_i == 3 else 0.0,
            }
            return math.exp(-tau * total_psi) * self._distinct_sum(sums)
        j, ys = replace
        new_rows, new_weights = self._slot_values(i, ys)
        psi_shift = new_weights - weights[j]
        sums = {
            "single": [float(np.sum(r)) - r[j] + nr
                       for r, nr in zip(rows, new_rows)],
            "pair": {(a, b): (float(np.sum(rows[a] * rows[b]))
                              - rows[a][j] * rows[b][j]
                              + new_rows[a] * new_rows[b])
                     for a in range(m_i) for b in range(a + 1, m_i)},
            "triple": (float(np.sum(rows[0] * rows[1] * rows[2]))
                       - rows[0][j] * rows[1][j] * rows[2][j]
                       + new_rows[0] * new_rows[1] * new_rows[2])
            if m_i == 3 else 0.0,
        }
        return np.exp(-tau * (total_psi + psi_shift)) * self._distinct_sum(sums)

    def moved_values(self, config, i, j, ys):
        ys = np.atleast_2d(ys)
        if self.m == (0, 0):
            return np.zeros(len(ys))
        this = self._component(i, config.points(i), replace=(j, ys))
        other = self._component(1 - i, config.points(1 - i))
        return this * other

    def moved_values_all(self, config, i, ys):
        pts = config.points(i)
        return np.stack([self.moved_values(config, i, j, ys)
                         for j in range(len(pts))])


def generator_apply(functional, config, kernels, sigma, grid):
    """(L F)(gamma) by grid quadrature of the destination integral.

    For each particle, rates to every grid node times the replacement
    increment of F, vectorized over (particle, node).  Only the node
    quadrature carries numerical error; the value is exact in time.
    """
    domain = kernels.domain
    ys = grid.points
    total = 0.0
    fval = functional.value(config)
    for i in (0, 1):
        pts = config.points(i)
        if len(pts) == 0 or kernels.moments[i][0] == 0.0:
            continue
        opp = config.points(1 - i)
        if len(opp) and not kernels.phi[i].is_zero:
            phis = kernels.repulsion_value(i, opp[:, None, :], ys[None, :, :])
            tot = np.sum(np.where(np.isinf(phis), np.inf, phis), axis=0)
            rep = np.where(np.isinf(tot), 0.0, np.exp(-np.where(np.isinf(tot), 0.0, tot)))
        else:
            rep = np.ones(len(ys))
        amat = kernels.jump_value(i, pts[:, None, :], ys[None, :, :])
        damp = np.broadcast_to(psi_sigma(pts, sigma, domain), (len(pts),))
        rates = grid.weight * amat * damp[:, None] * rep[None, :]
        moved = functional.moved_values_all(config, i, ys)
        total += float(np.sum(rates * (moved - fval)))
    return total


@dataclass
class MartingaleReport:
    label: str
    t1: float
    t2: float
    residual: EstimateWithError
    weighted: bool

    @property
    def passed(self):
        return abs(self.residual.value) <= 3.0 * self.residual.std_error


def martingale_residual(traces, functional, t1, t2, kernels, sigma, grid,
                        weight=None):
    """Mean path residual F(X_t2) - F(X_t1) - integral of (LF)(X_u) du.

    The integrand is piecewise constant between events, so the time integral
    is exact given the quadrature of LF.  ``weight`` is an optional
    conditioning factor (functional_G, s1) with s1 <= t1, multiplying each
    path residual by G(X_s1).
    """
    if not t1 < t2:
        raise ValueError("need t1 < t2")
    residuals = []
    for tr in traces:
        if t2 > tr.t_end + 1e-12:
            raise ValueError("t2 beyond trace end")
        times = [t1] + [ev.time for ev in tr.events if t1 < ev.time <= t2] + [t2]
        sample_times = ([weight[1]] if weight is not None else []) + times
        configs = tr.sample_path(sample_times)
        if weight is not None:
            g_factor = weight[0].value(configs[0])
            configs = configs[1:]
        else:
            g_factor = 1.0
        integral = 0.0
        for k in range(len(times) - 1):
            lf = generator_apply(functional, configs[k], kernels, sigma, grid)
            integral += lf * (times[k + 1] - times[k])
        res = functional.value(configs[-1]) - functional.value(configs[0]) - integral
        residuals.append(res * g_factor)
    est = summarize(residuals)
    return MartingaleReport(functional.label, t1, t2, est, weight is not None)


# ---------------------------------------------------------------------------
# Path-regularity product moments and sweeps.

def chentsov_product(traces, t1, t2, t3, domain):
    """E[ d(X_t1, X_t2) * d(X_t2, X_t3) ] with the dictionary path metric."""
    if not (t1 <= t2 <= t3):
        raise ValueError("need t1 <= t2 <= t3")
    vals = []
    for tr in traces:
        c1, c2, c3 = tr.sample_path([t1, t2, t3])
        vals.append(config_distance(c1, c2, domain) * config_distance(c2, c3, domain))
    return summarize(vals)


def chentsov_sweep(traces, t1, spacings, domain):
    """Product moments over dyadic spacings plus the fitted log-log slope."""
    points = []
    for dt in spacings:
        est = chentsov_product(traces, t1, t1 + dt / 2.0, t1 + dt, domain)
        points.append({"spacing": dt, "estimate": est.value,
                       "std_error": est.std_error})
    xs = np.log([p["spacing"] for p in points])
    ys = np.log([max(p["estimate"], 1e-300) for p in points])
    slope = float(np.polyfit(xs, ys, 1)[0])
    return {"points": points, "slope": slope}


def sigma_sweep(traces_by_sigma, functional, t):
    """Coupled-seed sweep of a functional across damping levels.

    ``traces_by_sigma`` maps sigma -> trace list; paths are aligned by index
    (same per-path seeds), so the discrepancy to the sigma = 0 column is
    estimated from per-path differences with its own (joint) standard error.
    """
    if 0.0 not in traces_by_sigma:
        raise ValueError("sweep requires the sigma = 0 column")
    base_vals = np.array([functional.value(tr.at(t))
                          for tr in traces_by_sigma[0.0]])
    rows = []
    for sigma in sorted(traces_by_sigma, reverse=True):
        vals = np.array([functional.value(tr.at(t))
                         for tr in traces_by_sigma[sigma]])
        est = summarize(vals)
        diff = summarize(vals - base_vals)
        rows.append({
            "sigma": sigma, "estimate": est.value, "std_error": est.std_error,
            "discrepancy": abs(diff.value), "joint_se": diff.std_error,
        })
    return rows


def type_estimate(traces, t, theta0, theta1, m_max=2):
    """Empirical type: largest normalized correlation root over orders."""
    if m_max > 3:
        raise ValueError("m_max <= 3")
    best = 0.0
    for m0 in range(m_max + 1):
        for m1 in range(m_max + 1 - m0):
            order = m0 + m1
            if order == 0 or order > m_max:
                continue
            est = correlation_estimate(traces, t, (m0, m1), theta0, theta1)
            denom = theta0.l1 ** m0 * theta1.l1 ** m1
            if denom > 0 and est.value > 0:
                best = max(best, (est.value / denom) ** (1.0 / order))
    return best
