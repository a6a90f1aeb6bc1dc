"""Jump and repulsion kernel families, derived constants, horizon formulas.

Jump kernels ``a_i`` (gaussian / exponential / top-hat) give the free
relocation rate density; repulsion kernels ``phi_i`` (gaussian / exponential /
hard-core / zero) suppress jump destinations close to opposite-type particles
through the factor ``exp(-sum phi_i)``.  Kernels are radial in the
displacement and periodized over torus images until the neglected tail is
below 1e-12 of the mass; a hard core requires ``2 r < side``.

All derived constants (moments, convolution constants, horizon radii) are
computed at construction by adaptive quadrature (absolute tolerance 1e-10)
and cached; they are what every series bound and experiment header uses.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate
from scipy.special import gamma as gamma_fn

from .geometry import Domain, psi

PERIODIZATION_TOL = 1e-12
MAYER_SUPPORT_TOL = 1e-14


def _sphere_area(d):
    """Surface measure of the unit sphere in R^d (2 for d = 1)."""
    return 2.0 * math.pi ** (d / 2.0) / gamma_fn(d / 2.0)


def _ball_volume(d):
    return math.pi ** (d / 2.0) / gamma_fn(d / 2.0 + 1.0)


def _radial_moment(radial, l, d, r_max):
    """Integral of |x|^l f(|x|) over R^d via the radial reduction."""
    val, _ = integrate.quad(lambda r: r ** (l + d - 1) * radial(r),
                            0.0, r_max, epsabs=1e-10, limit=400)
    return _sphere_area(d) * val


@dataclass
class JumpKernel:
    """Radial jump-rate density with cached moments and a displacement sampler.

    family: 'gaussian' (scale = std), 'exponential' (scale = decay length),
    'top-hat' (scale = radius).  ``mass`` is the total integral a^(0).
    """

    family: str
    mass: float
    scale: float
    type_index: int = 0

    def __post_init__(self):
        if self.family not in ("gaussian", "exponential", "top-hat"):
            raise ValueError(f"unknown jump kernel family {self.family!r}")
        if self.mass < 0 or self.scale <= 0:
            raise ValueError("mass must be >= 0 and scale > 0")

    # -- radial profile ----------------------------------------------------
    def _norm(self, d):
        if self.family == "gaussian":
            return self.mass / (2.0 * math.pi * self.scale ** 2) ** (d / 2.0)
        if self.family == "exponential":
            return self.mass / (_sphere_area(d) * gamma_fn(d) * self.scale ** d)
        return self.mass / (_ball_volume(d) * self.scale ** d)

    def radial(self, r, d):
        """Kernel value at distance r in dimension d (vectorized)."""
        r = np.asarray(r, dtype=float)
        c = self._norm(d)
        if self.family == "gaussian":
            return c * np.exp(-0.5 * (r / self.scale) ** 2)
        if self.family == "exponential":
            return c * np.exp(-r / self.scale)
        return np.where(r <= self.scale, c, 0.0)

    def support_radius(self, d):
        """Radius beyond which the remaining mass is < 1e-12 of the total."""
        if self.mass == 0:
            return 0.0
        if self.family == "top-hat":
            return self.scale
        r = 8.0 * self.scale
        while self._tail_mass(r, d) > PERIODIZATION_TOL * self.mass:
            r *= 1.5
        return r

    def _tail_mass(self, r, d):
        val, _ = integrate.quad(lambda s: s ** (d - 1) * self.radial(s, d),
                                r, r + 60.0 * self.scale, epsabs=1e-16, limit=200)
        return _sphere_area(d) * val

    def moment(self, l, d):
        """Raw absolute moment a^(l) = int |x|^l a(x) dx (adaptive quadrature)."""
        if self.mass == 0:
            return 0.0
        if self.family == "top-hat":
            r_max = self.scale
        else:
            r_max = max(self.support_radius(d), (l + d) * 10.0 * self.scale)
        return _radial_moment(lambda r: self.radial(r, d), l, d, r_max)

    def moment_closed_form(self, l, d):
        """Analytic moment, used by the consistency tests."""
        if self.family == "gaussian":
            return self.mass * (2.0 * self.scale ** 2) ** (l / 2.0) \
                * gamma_fn((l + d) / 2.0) / gamma_fn(d / 2.0)
        if self.family == "exponential":
            return self.mass * self.scale ** l * gamma_fn(l + d) / gamma_fn(d)
        return self.mass * self.scale ** l * d / (d + l)

    @property
    def sup(self):
        return 0.0 if self.mass == 0 else None  # resolved per dimension below

    def sup_norm(self, d):
        return 0.0 if self.mass == 0 else float(self.radial(0.0, d))

    # -- sampling ----------------------------------------------------------
    def sample_displacement(self, rng, d):
        """Draw one displacement from a/mass."""
        if self.family == "gaussian":
            return rng.normal(0.0, self.scale, size=d)
        if self.family == "exponential":
            radius = rng.gamma(shape=d, scale=self.scale)
        else:
            radius = self.scale * rng.uniform() ** (1.0 / d)
        if d == 1:
            return np.array([radius if rng.uniform() < 0.5 else -radius])
        v = rng.normal(size=d)
        return radius * v / np.linalg.norm(v)


@dataclass
class RepulsionKernel:
    """Pair potential by which opposite-type particles suppress destinations.

    family: 'gaussian'/'exponential' (height, scale), 'hard-core'
    (scale = core radius, value +inf inside), 'zero'.  exp(-inf) is
    short-circuited to exactly 0 before any multiplication.
    """

    family: str
    height: float = 0.0
    scale: float = 1.0
    type_index: int = 0

    def __post_init__(self):
        if self.family not in ("gaussian", "exponential", "hard-core", "zero"):
            raise ValueError(f"unknown repulsion kernel family {self.family!r}")
        if self.family in ("gaussian", "exponential") and self.height < 0:
            raise ValueError("height must be >= 0")
        if self.scale <= 0:
            raise ValueError("scale must be positive")

    @property
    def is_zero(self):
        return self.family == "zero" or (self.family in ("gaussian", "exponential")
                                         and self.height == 0.0)

    @property
    def hard_core_radius(self):
        return self.scale if self.family == "hard-core" else 0.0

    def radial(self, r, d=None):
        r = np.asarray(r, dtype=float)
        if self.family == "zero":
            return np.zeros_like(r)
        if self.family == "gaussian":
            return self.height * np.exp(-0.5 * (r / self.scale) ** 2)
        if self.family == "exponential":
            return self.height * np.exp(-r / self.scale)
        return np.where(r <= self.scale, np.inf, 0.0)

    def support_radius(self, d):
        """Radius beyond which phi < 1e-14 (exact for hard core / zero)."""
        if self.is_zero:
            return 0.0
        if self.family == "hard-core":
            return self.scale
        if self.family == "gaussian":
            return self.scale * math.sqrt(2.0 * math.log(self.height / MAYER_SUPPORT_TOL)) \
                if self.height > MAYER_SUPPORT_TOL else 0.0
        return self.scale * math.log(self.height / MAYER_SUPPORT_TOL) \
            if self.height > MAYER_SUPPORT_TOL else 0.0

    def mayer_mass(self, d):
        """phi-bar contribution: int (1 - exp(-phi(x))) dx over R^d."""
        if self.is_zero:
            return 0.0
        if self.family == "hard-core":
            return _ball_volume(d) * self.scale ** d
        r_max = self.support_radius(d) + 10.0 * self.scale
        val, _ = integrate.quad(
            lambda r: r ** (d - 1) * (-np.expm1(-self.radial(r))),
            0.0, r_max, epsabs=1e-10, limit=400)
        return _sphere_area(d) * val


def _image_offsets(domain, reach):
    """Lattice image offsets needed to periodize a kernel of the given reach."""
    k = int(math.floor(reach / domain.side + 0.5))
    if k == 0:
        return None
    rng = np.arange(-k, k + 1, dtype=float) * domain.side
    if domain.dimension == 1:
        return rng[:, None]
    mesh = np.meshgrid(*([rng] * domain.dimension), indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


class KernelSet:
    """Immutable bundle of the four kernels on a domain plus derived constants.

    Exposes periodized evaluation helpers used by both the simulator and the
    hierarchy solver, so the two routes share one definition of the rates.
    """

    def __init__(self, domain, a0, a1, phi0, phi1):
        self.domain = domain
        self.a = (a0, a1)
        self.phi = (phi0, phi1)
        d = domain.dimension
        for ph in self.phi:
            if ph.family == "hard-core" and 2.0 * ph.scale >= domain.side:
                raise ValueError("hard-core radius must satisfy 2 r < side")
        for ak in self.a:
            if ak.family == "top-hat" and 2.0 * ak.scale >= domain.side:
                raise ValueError("top-hat radius must satisfy 2 r < side")

        self.moments = tuple(
            tuple(ak.moment(l, d) for l in range(d + 2)) for ak in self.a)
        self.alpha = max(self.moments[0][0], self.moments[1][0])
        self.sup_a = max(ak.sup_norm(d) for ak in self.a)
        self.phibar_each = tuple(ph.mayer_mass(d) for ph in self.phi)
        self.phibar = max(self.phibar_each)
        binom = [math.comb(d + 1, l) for l in range(d + 2)]
        self.alphabar_each = tuple(
            mom[0] + sum(binom[l] * mom[l] for l in range(d + 2))
            for mom in self.moments)
        self.c_a = max(self.alphabar_each) + 1.0
        self.h_moment = max(
            sum(binom[l] * mom[l] for l in range(1, d + 2)) for mom in self.moments)

        self._a_offsets = tuple(_image_offsets(domain, ak.support_radius(d))
                                for ak in self.a)
        self._phi_offsets = tuple(_image_offsets(domain, ph.support_radius(d))
                                  for ph in self.phi)

    def constants(self):
        """Derived constants, stamped into experiment metadata."""
        return {
            "alpha": self.alpha,
            "sup_a": self.sup_a,
            "phibar": self.phibar,
            "c_a": self.c_a,
            "h_moment": self.h_moment,
            "alphabar": list(self.alphabar_each),
            "moments_a0": list(self.moments[0]),
            "moments_a1": list(self.moments[1]),
        }

    # -- periodized evaluation --------------------------------------------
    def _periodized(self, radial, offsets, x, y):
        disp = self.domain.displacement(x, y)
        if offsets is None:
            r = np.sqrt(np.sum(np.atleast_2d(disp) ** 2, axis=-1)) \
                if disp.ndim > 1 else np.abs(disp).sum() if self.domain.dimension == 1 else None
            r = np.sqrt(np.sum(disp * disp, axis=-1))
            return radial(r)
        disp = np.atleast_2d(disp)
        out = 0.0
        for off in offsets:
            r = np.sqrt(np.sum((disp + off) ** 2, axis=-1))
            out = out + radial(r)
        return out

    def jump_value(self, i, x, y):
        """Periodized a_i(x - y), vectorized over either argument."""
        d = self.domain.dimension
        return self._periodized(lambda r: self.a[i].radial(r, d),
                                self._a_offsets[i], x, y)

    def repulsion_value(self, i, x, y):
        """Periodized phi_i(x - y); may be +inf for a hard core."""
        return self._periodized(self.phi[i].radial, self._phi_offsets[i], x, y)

    def repulsion_factor(self, i, opposite_points, y):
        """exp(-sum_z phi_i(z - y)) with exp(-inf) -> exactly 0."""
        opposite_points = np.atleast_2d(opposite_points)
        if opposite_points.shape[0] == 0 or self.phi[i].is_zero:
            return 1.0
        tot = np.sum(self.repulsion_value(i, opposite_points, y))
        if np.isinf(tot):
            return 0.0
        return float(np.exp(-tot))


def psi_sigma(x, sigma, domain):
    """Rate damping 1/(1 + sigma * r^(d+1)), r the centered distance.

    sigma = 0 gives 1 everywhere; sigma = 1 coincides with the taper weight.
    Always uses the centered-distance formula (independent of flat mode).
    """
    if sigma == 0.0:
        x = np.asarray(x, dtype=float)
        return np.ones(x.shape[:-1]) if x.ndim > 1 else 1.0
    r = domain.centered_distance(x)
    return 1.0 / (1.0 + sigma * r ** (domain.dimension + 1))


def jump_rate(i, x, y, opposite_points, sigma, kernels):
    """Rate density for a type-i particle at x to land at y.

    a_i(x - y) * psi_sigma(x) * exp(-sum_z phi_i(z - y)); sigma = 0 is the
    unmodified model.
    """
    base = float(kernels.jump_value(i, x, y))
    if base == 0.0:
        return 0.0
    rep = kernels.repulsion_factor(i, opposite_points, y)
    if rep == 0.0:
        return 0.0
    return base * float(psi_sigma(x, sigma, kernels.domain)) * rep


def kernel_convolve(i, theta, kernels, n=256, check_bound=True):
    """Grid-sampled convolution (a_i * theta) on the torus.

    Returns (grid_points, values).  When check_bound is set, verifies the
    pointwise envelope (a_i * theta)(x) <= cbar_theta * alphabar_i * psi(x)
    on the grid; a violation indicates a kernel-moment miscomputation.
    """
    domain = kernels.domain
    pts = domain.grid(n)
    w = (domain.side / n) ** domain.dimension
    theta_vals = theta.evaluate(pts)
    amat = kernels.jump_value(i, pts[:, None, :], pts[None, :, :])
    conv = w * amat.dot(theta_vals)
    if check_bound:
        envelope = theta.cbar * kernels.alphabar_each[i] * psi(pts, domain)
        slack = 1e-9 * max(1.0, float(np.max(np.abs(conv))))
        if np.any(conv > envelope + slack):
            raise ArithmeticError(
                "convolution exceeds moment envelope: kernel constants inconsistent")
    return pts, conv


# ---------------------------------------------------------------------------
# Horizon formulas for the operator series.

def series_horizon(theta_from, theta_to, alpha, phibar):
    """Local convergence radius T(theta_to, theta_from) of the operator series."""
    if theta_to <= theta_from:
        raise ValueError("require theta_to > theta_from")
    return (theta_to - theta_from) / (4.0 * alpha) * math.exp(-phibar * math.exp(theta_to))


def optimal_horizon(theta, alpha, phibar):
    """Step delta maximizing the horizon, and the maximal horizon itself.

    delta solves delta * e^delta = exp(-theta - log(phibar)) (safeguarded
    Newton, relative residual <= 1e-12); the maximum equals
    (delta / 4 alpha) * exp(-1 / delta) and coincides with
    series_horizon(theta, theta + delta).
    """
    if phibar <= 0.0:
        raise ValueError("no interior maximum for phibar = 0; "
                         "use series_horizon with an explicit step")
    target = math.exp(-theta - math.log(phibar))
    lo, hi = 0.0, 1.0
    while hi * math.exp(hi) < target:
        lo, hi = hi, hi * 2.0
    delta = 0.5 * (lo + hi)
    for _ in range(200):
        f = delta * math.exp(delta) - target
        if f > 0:
            hi = delta
        else:
            lo = delta
        step = f / (math.exp(delta) * (1.0 + delta))
        nxt = delta - step
        delta = nxt if lo < nxt < hi else 0.5 * (lo + hi)
        if abs(delta * math.exp(delta) - target) <= 1e-12 * target:
            break
    t_star = delta / (4.0 * alpha) * math.exp(-1.0 / delta)
    return delta, t_star


def semigroup_horizon(beta, beta_prime, sigma, alpha):
    """Horizon sigma*(beta - beta')/(alpha e^beta) of the damped semigroup."""
    if not (beta > beta_prime > 0.0):
        raise ValueError("require beta > beta_prime > 0")
    if not (0.0 < sigma <= 1.0):
        raise ValueError("require sigma in (0, 1]")
    return sigma * (beta - beta_prime) / (alpha * math.exp(beta))
