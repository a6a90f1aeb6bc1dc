"""Exact integer combinatorics and the comparison-function ladder.

The integer machinery (Stirling numbers, Touchard polynomials, the weighted
sequence sets C_{p,q}, forward differences of powers) is used both for exact
identity checks and for the counting-moment bounds.  Everything here is
integer/rational arithmetic; only the comparison functions at the bottom,
which combine tuple sums with kernel convolutions, are floating point.
"""

import functools
import math
from fractions import Fraction

import numpy as np

from .geometry import psi
from .observables import damped_tuple_sum_component

STIRLING_MAX = 30


@functools.lru_cache(maxsize=None)
def stirling2(p, l):
    """Stirling number of the second kind: partitions of p items into l groups."""
    if not (0 <= l <= p <= STIRLING_MAX):
        raise ValueError("require 0 <= l <= p <= %d" % STIRLING_MAX)
    if p == 0:
        return 1 if l == 0 else 0
    if l == 0:
        return 0
    if l == p:
        return 1
    return l * stirling2(p - 1, l) + stirling2(p - 1, l - 1)


def touchard_coefficients(n):
    """Coefficient list of the n-th Touchard polynomial (index = power)."""
    if n > STIRLING_MAX:
        raise ValueError("n too large")
    return [stirling2(n, l) if n else (1 if l == 0 else 0) for l in range(n + 1)]


def touchard(n, x):
    """Exact evaluation sum_l S(n, l) x^l; preserves int/Fraction inputs."""
    coeffs = touchard_coefficients(n)
    acc = 0
    power = 1
    for c in coeffs:
        acc = acc + c * power
        power = power * x
    return acc


def count_sequences(p, q):
    """All integer sequences c with sum c_l = p and sum l*c_l = q.

    Returned as tuples (c_0, ..., c_q), deterministic lexicographic order.
    For q = 0 this is the singleton {(p, 0, ..., 0)}.
    """
    if p < 1:
        raise ValueError("p must be >= 1")
    if q < 0 or q > 12:
        raise ValueError("q out of supported range")
    results = []

    def recurse(l, remaining_p, remaining_q, prefix):
        if l == 0:
            if remaining_q == 0:
                results.append((remaining_p,) + prefix)
            return
        max_c = min(remaining_p, remaining_q // l)
        for c in range(max_c + 1):
            recurse(l - 1, remaining_p - c, remaining_q - l * c, (c,) + prefix)

    recurse(q, p, q, ())
    return sorted(results)


def sequence_weight(p, q, c):
    """Exact weight p! q! / (prod c_l! * prod (l!)^{c_l}) of a sequence in C_{p,q}."""
    c = tuple(c)
    if sum(c) != p or sum(l * cl for l, cl in enumerate(c)) != q:
        raise ValueError("sequence violates the C_{p,q} constraints")
    denom = 1
    for l, cl in enumerate(c):
        denom *= math.factorial(cl) * math.factorial(l) ** cl
    num = math.factorial(p) * math.factorial(q)
    frac = Fraction(num, denom)
    return int(frac) if frac.denominator == 1 else frac


def forward_difference_power(k, p, q):
    """k-th forward difference of n -> n^q at n = p: (1/k!) sum (-1)^{k-l} C(k,l) (p+l)^q.

    Vanishes exactly for k > q; equals p^q at k = 0.
    """
    if k < 0 or q < 0:
        raise ValueError("k, q must be nonnegative")
    if k > 20 or q > 20:
        raise ValueError("k, q out of supported range")
    acc = 0
    for l in range(k + 1):
        acc += (-1) ** (k - l) * math.comb(k, l) * (p + l) ** q
    frac = Fraction(acc, math.factorial(k))
    assert frac.denominator == 1
    return int(frac)


# ---------------------------------------------------------------------------
# Comparison functions: iterated kernel smoothings of a test function paired
# with damped tuple sums, organized so that applying the jump generator can
# only move one rung up the ladder.

class KernelSmoothingLadder:
    """Iterates theta^(l) = a_i * theta^(l-1) + theta^(l-1) on a torus grid.

    Level 0 is the analytic test function; higher levels are evaluable at
    arbitrary points through one quadrature sum against the stored previous
    level, so ladder evaluation commutes exactly with the grid quadrature
    used elsewhere.
    """

    def __init__(self, type_index, theta, kernels, grid, depth):
        self.kernels = kernels
        self.grid = grid
        self.type_index = type_index
        self.theta = theta
        amat = kernels.jump_value(type_index, grid.points[:, None, :],
                                  grid.points[None, :, :])
        self._amat = amat * grid.weight
        self.grid_values = [theta.evaluate(grid.points)]
        for _ in range(depth):
            prev = self.grid_values[-1]
            self.grid_values.append(self._amat.dot(prev) + prev)

    def evaluate(self, level, pts):
        pts = np.atleast_2d(pts)
        if level == 0:
            return self.theta.evaluate(pts)
        prev_grid = self.grid_values[level - 1]
        amat = self.kernels.jump_value(self.type_index, pts[:, None, :],
                                       self.grid.points[None, :, :])
        conv = self.grid.weight * amat.dot(prev_grid)
        return conv + self.evaluate(level - 1, pts)

    def slot_function(self, level):
        return lambda pts: self.evaluate(level, pts)


class ComparisonFamily:
    """The two-type comparison functions Phi^m_{tau,q} for a fixed theta pair.

    theta_i are normalized to cbar = 1 at construction (a standing
    hypothesis of the ladder estimates); tau_i must lie in (0, 1].
    """

    def __init__(self, kernels, grid, theta0, theta1, tau, max_q=4):
        self.kernels = kernels
        self.grid = grid
        self.domain = kernels.domain
        self.tau = tau
        if not all(0.0 < t <= 1.0 for t in tau):
            raise ValueError("tau components must lie in (0, 1]")
        self.theta = (theta0.normalized(1.0), theta1.normalized(1.0))
        self.max_q = max_q
        self.ladders = tuple(
            KernelSmoothingLadder(i, self.theta[i], kernels, grid, max_q)
            for i in (0, 1))

    def _psi_slots(self, m):
        dom = self.domain
        return [lambda pts, d=dom: np.broadcast_to(psi(pts, d),
                                                   (len(np.atleast_2d(pts)),))] * m

    def component(self, i, m_i, q, points):
        """Single-type Phi^{m_i}_{tau_i, q} evaluated on one particle set."""
        tau = self.tau[i]
        total = 0.0
        if m_i > 0:
            for c in count_sequences(m_i, q):
                weight = float(sequence_weight(m_i, q, c))
                slots = []
                for level, count in enumerate(c):
                    slots.extend(self.ladders[i].slot_function(level)
                                 for _ in range(count))
                total += weight * damped_tuple_sum_component(
                    slots, tau, points, self.domain)
        elif q == 0:
            total += damped_tuple_sum_component([], tau, points, self.domain)
        if q >= 1:
            ca_q = self.kernels.c_a ** q
            for k in range(1, q + 1):
                wk = forward_difference_power(k, m_i, q)
                if wk == 0:
                    continue
                total += (ca_q * tau ** k * wk
                          * damped_tuple_sum_component(
                              self._psi_slots(m_i + k), tau, points, self.domain))
        return total

    def value(self, m, q, config):
        """Combined Phi^m_{tau,q}(gamma): binomial pairing of the type parts."""
        m0, m1 = m
        total = 0.0
        for l in range(q + 1):
            total += (math.comb(q, l)
                      * self.component(0, m0, q - l, config.points0)
                      * self.component(1, m1, l, config.points1))
        return total

    def log_growth_bound(self, m, q, eps=0.5):
        """log of the explicit uniform bound q! / rho_eps^q * Cbar.

        rho_eps = log(1+eps)/c_a; Cbar follows the generating-function proof
        with the tuple-sum envelope (p/tau)^p e^{p(2 tau - 1)}, whose series
        converges when eps * e * e^(2 tau - 1) < 1.  Computed in log space:
        the constant is astronomically large but finite.
        """
        c_a = self.kernels.c_a
        rho = math.log1p(eps) / c_a
        log_ybars = []
        for i, m_i in enumerate(m):
            tau = self.tau[i]
            if eps * math.exp(2.0 * tau) >= 1.0:
                raise ValueError("growth-bound series diverges for this eps/tau")
            log_terms = []
            # term_k = (eps tau)^k / k! * envelope(m+k), envelope the tuple-sum
            # bound (p/tau)^p e^{p(2 tau - 1)}; the tau^k from the pairing
            # cancels the tau^{-k} in the envelope, ratio -> eps * e^{2 tau}.
            for k in range(5000):
                p = m_i + k
                lt = k * (math.log(eps) + math.log(tau)) - math.lgamma(k + 1)
                if p > 0:
                    lt += p * math.log(p / tau) + p * (2.0 * tau - 1.0)
                log_terms.append(lt)
                if k > 5 and lt < max(log_terms) - 60.0:
                    break
            else:
                raise ArithmeticError("growth-bound series failed to settle")
            top = max(log_terms)
            log_ybars.append(top + math.log(sum(math.exp(v - top) for v in log_terms)))
        return ((m[0] + m[1]) * math.log1p(eps) + log_ybars[0] + log_ybars[1]
                + math.lgamma(q + 1) - q * math.log(rho))
