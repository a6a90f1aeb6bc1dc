"""Test functions, quasi-observables and the K-transform.

Three bounded test families drive every statistical check:

* ``damped_product`` — products of (1 + theta(x)) exp(-tau psi(x)) over the
  particles, one factor pair per type; separating and convergence
  determining, values in (0, 1] once tau_i >= c_theta_i.
* ``damped_tuple_sum`` — sums over ordered tuples of distinct particles of
  v_1(x_1)...v_m(x_m) exp(-tau Psi(remainder)); the building block of the
  generator-domain estimates.
* ``plain_product`` — the undamped product of (1 + theta(x)).

``QuasiObservable`` holds a finitely supported tower {G^(m)} of symmetric
grid functions on tensor powers of a torus grid; ``k_transform`` turns it
into a function of configurations by summing over sub-configurations.
"""

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import (EnumerationBudgetError, TUPLE_BUDGET, big_psi, psi)

_DENSE_N = {1: 8192, 2: 192, 3: 48}


@dataclass
class TestFunction:
    """Nonnegative analytic test function theta with cached constants.

    families: 'gaussian-bump' (height, width, center), 'cosine-bump'
    (height, freq, center; theta = h (1+cos)/2 so it stays nonnegative) and
    'scaled-psi' (height, theta = h psi).  ``l1`` caches the box integral,
    ``cbar`` the least constant with theta <= cbar * psi on a dense grid.
    """

    family: str
    domain: object
    height: float = 1.0
    width: float = 1.0
    center: float = 0.0
    freq: int = 1
    l1: float = field(init=False, default=0.0)
    c_theta: float = field(init=False, default=0.0)
    cbar: float = field(init=False, default=0.0)

    def __post_init__(self):
        if self.family not in ("gaussian-bump", "cosine-bump", "scaled-psi", "zero"):
            raise ValueError(f"unknown test function family {self.family!r}")
        if self.height < 0:
            raise ValueError("height must be nonnegative")
        d = self.domain.dimension
        n = _DENSE_N.get(d, 32)
        pts = self.domain.grid(n)
        vals = self.evaluate(pts)
        if np.any(vals < 0):
            raise ValueError("test function must be nonnegative")
        w = (self.domain.side / n) ** d
        self.l1 = float(np.sum(vals) * w)
        psis = np.broadcast_to(psi(pts, self.domain), vals.shape)
        self.c_theta = float(np.max(np.log1p(vals) / psis)) if self.height > 0 else 0.0
        self.cbar = math.expm1(self.c_theta)

    def evaluate(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if self.family == "zero" or self.height == 0.0:
            return np.zeros(x.shape[0])
        if self.family == "gaussian-bump":
            c = np.full(self.domain.dimension, self.center)
            r = self.domain.distance(x, c)
            return self.height * np.exp(-0.5 * (r / self.width) ** 2)
        if self.family == "cosine-bump":
            w = 2.0 * math.pi * self.freq / self.domain.side
            prof = np.ones(x.shape[0])
            for axis in range(self.domain.dimension):
                prof = prof * 0.5 * (1.0 + np.cos(w * (x[:, axis] - self.center)))
            return self.height * prof
        return self.height * np.broadcast_to(psi(x, self.domain), (x.shape[0],))

    def value(self, x):
        return float(self.evaluate(np.atleast_2d(x))[0])

    def rescaled(self, factor):
        return TestFunction(self.family, self.domain, self.height * factor,
                            self.width, self.center, self.freq)

    def normalized(self, target_cbar=1.0):
        """Rescale the height so that cbar equals target_cbar (bisection)."""
        if self.height == 0:
            raise ValueError("cannot normalize the zero function")
        lo, hi = 0.0, 1.0
        while self.rescaled(hi / self.height).cbar < target_cbar:
            hi *= 2.0
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            if self.rescaled(mid / self.height).cbar < target_cbar:
                lo = mid
            else:
                hi = mid
        return self.rescaled(0.5 * (lo + hi) / self.height)


def zero_test_function(domain):
    return TestFunction("zero", domain, height=0.0)


def _theta_pair(theta0, theta1, domain):
    t0 = theta0 if theta0 is not None else zero_test_function(domain)
    t1 = theta1 if theta1 is not None else zero_test_function(domain)
    return t0, t1


def damped_product(theta0, theta1, tau0, tau1, config, domain):
    """prod_i prod_{x in gamma_i} (1 + theta_i(x)) e^{-tau_i psi(x)}.

    Requires tau_i >= c_theta_i (the boundedness threshold); the value then
    lies in (0, 1].  The identically-1 member corresponds to zero theta, tau.
    """
    t0, t1 = _theta_pair(theta0, theta1, domain)
    for tau, th in ((tau0, t0), (tau1, t1)):
        if tau < th.c_theta - 1e-12:
            raise ValueError("tau below the boundedness threshold c_theta")
    out = 1.0
    for th, tau, i in ((t0, tau0, 0), (t1, tau1, 1)):
        pts = config.points(i)
        if len(pts) == 0:
            continue
        vals = th.evaluate(pts)
        weights = np.broadcast_to(psi(pts, domain), vals.shape)
        out *= float(np.exp(np.sum(np.log1p(vals) - tau * weights)))
    return out


def plain_product(theta0, theta1, config, domain):
    """Undamped moment-generating product prod (1 + theta_i(x))."""
    t0, t1 = _theta_pair(theta0, theta1, domain)
    out = 1.0
    for th, i in ((t0, 0), (t1, 1)):
        pts = config.points(i)
        if len(pts):
            out *= float(np.prod(1.0 + th.evaluate(pts)))
    return out


def _set_partitions(items):
    """All set partitions of a list (Bell-number many)."""
    if not items:
        yield []
        return
    head, rest = items[0], items[1:]
    for part in _set_partitions(rest):
        for k in range(len(part)):
            yield part[:k] + [part[k] + [head]] + part[k + 1:]
        yield [[head]] + part


def _ordered_tuple_sum(values_per_slot):
    """Sum over ordered tuples of distinct indices of prod_j u_j[i_j].

    values_per_slot: list of m arrays of length N.  Distinctness is handled
    by the set-partition (Moebius) expansion in power sums of slot products:
    sum over partitions pi of (-1)^(m-|pi|) prod_B (|B|-1)! S(prod_{a in B} u_a).
    """
    m = len(values_per_slot)
    if m == 0:
        return 1.0
    u = values_per_slot
    n = len(u[0])
    if n < m:
        return 0.0
    if m == 1:
        return float(np.sum(u[0]))
    if m == 2:
        return float(np.sum(u[0]) * np.sum(u[1]) - np.sum(u[0] * u[1]))
    if m > 8:
        raise EnumerationBudgetError("tuple order above the supported range")
    total = 0.0
    for part in _set_partitions(list(range(m))):
        coeff = 1.0 if (m - len(part)) % 2 == 0 else -1.0
        for block in part:
            coeff *= math.factorial(len(block) - 1)
        prod = coeff
        for block in part:
            vals = u[block[0]]
            for a in block[1:]:
                vals = vals * u[a]
            prod *= float(np.sum(vals))
        total += prod
    return float(total)


def damped_tuple_sum_component(v_list, tau, points, domain):
    """Single-type tuple sum: sum over ordered distinct tuples of
    prod v_j(x_j) * exp(-tau * Psi(gamma minus the tuple)).

    An empty v_list gives exp(-tau * Psi(gamma)).
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    n = len(points)
    weights = psi(points, domain) if n else np.zeros(0)
    weights = np.broadcast_to(weights, (n,))
    total_psi = float(np.sum(weights))
    if len(v_list) == 0:
        return math.exp(-tau * total_psi)
    # exp(-tau Psi(gamma \ tuple)) = exp(-tau Psi(gamma)) * prod exp(tau psi(x_j))
    slot_values = []
    for v in v_list:
        vals = v.evaluate(points) if hasattr(v, "evaluate") else v(points)
        slot_values.append(np.asarray(vals) * np.exp(tau * weights))
    return math.exp(-tau * total_psi) * _ordered_tuple_sum(slot_values)


def damped_tuple_sum(m, tau, v_lists, config, domain):
    """Two-type damped tuple sum; identically 0 at order (0, 0) by convention.

    ``v_lists = (v0, v1)`` with len(v_i) = m_i; entries are TestFunctions or
    callables on point arrays.
    """
    m0, m1 = m
    if m0 == 0 and m1 == 0:
        return 0.0
    if len(v_lists[0]) != m0 or len(v_lists[1]) != m1:
        raise ValueError("v list lengths must match the order")
    out = 1.0
    for i, (mi, taui) in enumerate(((m0, tau[0]), (m1, tau[1]))):
        out *= damped_tuple_sum_component(v_lists[i], taui, config.points(i), domain)
    return out


def psi_slot_functions(m, domain):
    """The m-fold [psi, ..., psi] slot list used by the comparison functions."""
    return [lambda pts, d=domain: np.broadcast_to(psi(pts, d), (len(np.atleast_2d(pts)),))] * m


# ---------------------------------------------------------------------------
# Torus grid, quasi-observables, K-transform.

class TorusGrid:
    """Uniform tensor grid on the torus, flattened to (n^d, d) points.

    ``weight`` is the product quadrature weight h^d; trapezoidal quadrature
    on this grid is plain weighted summation (spectrally accurate for smooth
    periodic integrands).
    """

    def __init__(self, domain, n):
        self.domain = domain
        self.n = int(n)
        self.points = domain.grid(self.n)
        self.size = len(self.points)
        self.spacing = domain.side / self.n
        self.weight = self.spacing ** domain.dimension

    def interpolation_weights(self, x):
        """Sparse multilinear periodic interpolation at a point: (indices, weights)."""
        d = self.domain.dimension
        x = np.asarray(x, dtype=float)
        base = np.floor(x / self.spacing).astype(int)
        frac = x / self.spacing - base
        idx_list = []
        w_list = []
        for corner in itertools.product((0, 1), repeat=d):
            idx = (base + np.array(corner)) % self.n
            flat = 0
            for k in range(d):
                flat = flat * self.n + idx[k]
            w = math.prod(frac[k] if corner[k] else 1.0 - frac[k] for k in range(d))
            if w > 0.0:
                idx_list.append(flat)
                w_list.append(w)
        return np.array(idx_list, dtype=int), np.array(w_list)


class QuasiObservable:
    """Finitely supported tower {G^(m)} of symmetric grid functions.

    components maps (m0, m1) -> ndarray of shape (grid.size,) * (m0 + m1)
    with the type-0 axes first.  Orders above ``max_order`` are identically
    zero (finite support).
    """

    def __init__(self, grid, max_order, components=None):
        self.grid = grid
        self.max_order = int(max_order)
        self.components = {}
        if components:
            for m, arr in components.items():
                self.set_component(m, arr)

    def orders(self):
        return sorted(self.components)

    def set_component(self, m, arr):
        m0, m1 = m
        if m0 + m1 > self.max_order:
            raise ValueError("component order exceeds max_order")
        arr = np.asarray(arr, dtype=float)
        if m0 + m1 == 0:
            arr = np.asarray(float(arr))
        elif arr.shape != (self.grid.size,) * (m0 + m1):
            raise ValueError("component shape mismatch")
        self.components[(m0, m1)] = arr

    def component(self, m):
        m0, m1 = m
        if (m0, m1) in self.components:
            return self.components[(m0, m1)]
        if m0 + m1 == 0:
            return np.asarray(0.0)
        return np.zeros((self.grid.size,) * (m0 + m1))

    def copy(self):
        return QuasiObservable(self.grid, self.max_order,
                               {m: np.array(a, copy=True) for m, a in self.components.items()})

    def scaled(self, factor):
        return QuasiObservable(self.grid, self.max_order,
                               {m: factor * a for m, a in self.components.items()})

    def add_scaled(self, other, factor):
        for m, arr in other.components.items():
            if m in self.components:
                self.components[m] = self.components[m] + factor * arr
            else:
                self.set_component(m, factor * arr)

    def check_symmetry(self, tol=1e-10):
        """Symmetry under permutations within each type block."""
        for (m0, m1), arr in self.components.items():
            for block_start, block_len in ((0, m0), (m0, m1)):
                for a in range(block_start, block_start + block_len):
                    for b in range(a + 1, block_start + block_len):
                        if np.max(np.abs(arr - np.swapaxes(arr, a, b))) > tol:
                            return False
        return True

    def l1_norm(self, theta):
        """Weighted tower norm: sum_m e^{theta |m|} / (m0! m1!) * int |G^(m)|."""
        total = 0.0
        w = self.grid.weight
        for (m0, m1), arr in self.components.items():
            order = m0 + m1
            total += (math.exp(theta * order) / (math.factorial(m0) * math.factorial(m1))
                      * float(np.sum(np.abs(arr))) * (w ** order))
        return total


def _interp_tuple_value(arr, slots):
    """Evaluate a tensor grid function at per-axis interpolation stencils."""
    out = arr
    for idx, wts in reversed(slots):
        out = np.take(out, idx, axis=-1).dot(wts)
    return float(out)


def k_transform(G, config):
    """(KG)(gamma) = sum over sub-configurations, via the ordered-tuple form.

    Multilinear grid interpolation supplies off-grid values of G^(m); exact
    when the particles sit on grid nodes.  Multilinear in G.
    """
    grid = G.grid
    total = 0.0
    n0, n1 = config.counts()
    for (m0, m1), arr in G.components.items():
        if m0 > n0 or m1 > n1:
            continue
        if m0 + m1 == 0:
            total += float(arr)
            continue
        count = _ordered_count(n0, m0) * _ordered_count(n1, m1)
        if count > TUPLE_BUDGET:
            raise EnumerationBudgetError("K-transform tuple budget exceeded")
        stencils0 = [grid.interpolation_weights(p) for p in config.points0]
        stencils1 = [grid.interpolation_weights(p) for p in config.points1]
        acc = 0.0
        for tup0 in itertools.permutations(range(n0), m0):
            slots0 = [stencils0[i] for i in tup0]
            for tup1 in itertools.permutations(range(n1), m1):
                slots = slots0 + [stencils1[j] for j in tup1]
                acc += _interp_tuple_value(arr, slots)
        total += acc / (math.factorial(m0) * math.factorial(m1))
    return total


def _ordered_count(n, m):
    out = 1
    for j in range(m):
        out *= max(n - j, 0)
    return out


def tilted_observable(grid, max_order, theta0, theta1, tau0, tau1):
    """The finitely supported tower whose K-transform reproduces
    ``damped_product`` on configurations with at most max_order particles.

    Component (m0, m1) is the outer product of per-type one-point factors
    theta_i(x) e^{-tau_i psi(x)} + e^{-tau_i psi(x)} - 1.
    """
    domain = grid.domain
    t0, t1 = _theta_pair(theta0, theta1, domain)
    base = {}
    for i, (th, tau) in enumerate(((t0, tau0), (t1, tau1))):
        vals = th.evaluate(grid.points)
        damp = np.exp(-tau * np.broadcast_to(psi(grid.points, domain), vals.shape))
        base[i] = vals * damp + damp - 1.0
    comps = {(0, 0): np.asarray(1.0)}
    for m0 in range(max_order + 1):
        for m1 in range(max_order + 1 - m0):
            if m0 + m1 == 0:
                continue
            factors = [base[0]] * m0 + [base[1]] * m1
            arr = factors[0]
            for f in factors[1:]:
                arr = np.multiply.outer(arr, f)
            comps[(m0, m1)] = arr
    return QuasiObservable(grid, max_order, comps)
