"""Periodic box, two-type point configurations, weights and counting functionals.

Everything downstream (kernels, simulator, hierarchy, estimators) works with
the two objects defined here: a periodic ``Domain`` of side ``side`` in
``dimension`` dimensions, and a finite simple ``TwoTypeConfiguration`` of
labelled point particles of types 0 and 1.  Distances are always
minimum-image; positions are canonicalized into ``[0, side)`` per axis.

The taper weight ``psi(x) = 1 / (1 + r^(d+1))`` (``r`` = centered distance)
and its configuration sum are used throughout as the temperedness weight.
A ``flat_weights`` mode replaces the taper by the constant 1 for homogeneous
experiments; the flag travels with the domain and is stamped into every
serialized artifact.
"""

import math
from dataclasses import dataclass, field

import numpy as np

TUPLE_BUDGET = 10_000_000


class EnumerationBudgetError(RuntimeError):
    """Raised when an ordered-tuple sum would exceed the tuple budget."""


@dataclass(frozen=True)
class Domain:
    """Periodic torus ``[0, side)^dimension``."""

    dimension: int = 1
    side: float = 10.0
    flat_weights: bool = False

    def __post_init__(self):
        if self.dimension < 1:
            raise ValueError("dimension must be a positive integer")
        if not self.side > 0:
            raise ValueError("side must be positive")

    @property
    def volume(self):
        return self.side ** self.dimension

    @property
    def center(self):
        return np.full(self.dimension, 0.5 * self.side)

    def wrap(self, x):
        """Canonicalize positions into [0, side) per axis."""
        return np.mod(np.asarray(x, dtype=float), self.side)

    def displacement(self, x, y):
        """Minimum-image displacement x - y (componentwise in (-side/2, side/2])."""
        d = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
        return d - self.side * np.round(d / self.side)

    def distance(self, x, y):
        d = self.displacement(x, y)
        return np.sqrt(np.sum(d * d, axis=-1))

    def centered_distance(self, x):
        """Minimum-image distance to the box center."""
        return self.distance(x, self.center)

    def grid(self, n):
        """Uniform tensor grid with n nodes per axis, as an (n^d, d) array."""
        axis = np.arange(n) * (self.side / n)
        if self.dimension == 1:
            return axis[:, None]
        mesh = np.meshgrid(*([axis] * self.dimension), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)


def psi(x, domain):
    """Taper weight 1/(1 + r^(d+1)) at the centered distance r; 1 in flat mode."""
    x = np.asarray(x, dtype=float)
    if domain.flat_weights:
        return np.ones(x.shape[:-1]) if x.ndim > 1 else 1.0
    r = domain.centered_distance(x)
    return 1.0 / (1.0 + r ** (domain.dimension + 1))


@dataclass
class TwoTypeConfiguration:
    """Finite simple configuration: points of type 0 and type 1 with stable ids.

    ``points0``/``points1`` are (N_i, d) float arrays, ``ids0``/``ids1`` the
    matching integer labels.  All points across both types must be pairwise
    distinct (simplicity); ``validate`` enforces it exactly.
    """

    points0: np.ndarray
    points1: np.ndarray
    ids0: np.ndarray = field(default=None)
    ids1: np.ndarray = field(default=None)

    def __post_init__(self):
        self.points0 = np.atleast_2d(np.asarray(self.points0, dtype=float))
        self.points1 = np.atleast_2d(np.asarray(self.points1, dtype=float))
        if self.points0.size == 0:
            self.points0 = self.points0.reshape(0, self.points1.shape[1] if self.points1.size else 1)
        if self.points1.size == 0:
            self.points1 = self.points1.reshape(0, self.points0.shape[1] if self.points0.size else 1)
        if self.ids0 is None:
            self.ids0 = np.arange(len(self.points0))
        if self.ids1 is None:
            self.ids1 = np.arange(len(self.points0), len(self.points0) + len(self.points1))
        self.ids0 = np.asarray(self.ids0, dtype=np.int64)
        self.ids1 = np.asarray(self.ids1, dtype=np.int64)

    @classmethod
    def empty(cls, dimension=1):
        z = np.zeros((0, dimension))
        return cls(z.copy(), z.copy())

    def points(self, i):
        return self.points0 if i == 0 else self.points1

    def counts(self):
        return len(self.points0), len(self.points1)

    @property
    def size(self):
        return len(self.points0) + len(self.points1)

    def copy(self):
        return TwoTypeConfiguration(self.points0.copy(), self.points1.copy(),
                                    self.ids0.copy(), self.ids1.copy())

    def validate(self, domain=None):
        """Check simplicity exactly: no two particles (any type) coincide."""
        pts = np.vstack([self.points0, self.points1])
        if len(pts) > 1:
            order = np.lexsort(pts.T)
            diffs = np.diff(pts[order], axis=0)
            if np.any(np.all(diffs == 0.0, axis=1)):
                raise ValueError("configuration is not simple: coincident points")
        if domain is not None:
            if np.any(pts < 0.0) or np.any(pts >= domain.side):
                raise ValueError("points outside [0, side)")
        return True


def big_psi(config, domain):
    """Total taper weight of a configuration (both types)."""
    total = 0.0
    for i in (0, 1):
        pts = config.points(i)
        if len(pts):
            total += float(np.sum(psi(pts, domain)))
    return total


@dataclass(frozen=True)
class Box:
    """Axis-aligned sub-box [lo_k, hi_k) of the domain, used for counting."""

    lo: tuple
    hi: tuple

    def __post_init__(self):
        if len(self.lo) != len(self.hi):
            raise ValueError("lo/hi dimension mismatch")
        if any(h <= l for l, h in zip(self.lo, self.hi)):
            raise ValueError("box must have positive extent")

    @property
    def volume(self):
        return float(np.prod([h - l for l, h in zip(self.lo, self.hi)]))

    def contains(self, pts):
        pts = np.atleast_2d(pts)
        lo = np.asarray(self.lo)
        hi = np.asarray(self.hi)
        return np.all((pts >= lo) & (pts < hi), axis=1)


def _falling_factorial(n, k):
    out = 1
    for j in range(k):
        out *= (n - j)
        if out <= 0:
            return 0
    return out


def ordered_tuple_count(config, m, box):
    """Number of ordered (m0, m1)-tuples of distinct particles, all inside box.

    Equals 1 for m = (0, 0) by convention, and the particle count in the box
    for a unit order.
    """
    m0, m1 = m
    if m0 < 0 or m1 < 0:
        raise ValueError("orders must be nonnegative")
    n0 = int(np.sum(box.contains(config.points0))) if len(config.points0) else 0
    n1 = int(np.sum(box.contains(config.points1))) if len(config.points1) else 0
    total = _falling_factorial(n0, m0) * _falling_factorial(n1, m1)
    if total > TUPLE_BUDGET:
        raise EnumerationBudgetError(f"{total} ordered tuples exceeds budget {TUPLE_BUDGET}")
    return total


def box_count(config, box):
    """Particles of each type inside the box: (N0, N1)."""
    n0 = int(np.sum(box.contains(config.points0))) if len(config.points0) else 0
    n1 = int(np.sum(box.contains(config.points1))) if len(config.points1) else 0
    return n0, n1


# ---------------------------------------------------------------------------
# Bounded-Lipschitz dictionary distance between configurations.
#
# The exact metric takes a sup over the unit bounded-Lipschitz ball; that sup
# is not computable, so we evaluate the same expression over a fixed finite
# dictionary of BL-normalized functions (a computable lower bound, capped at 1
# per type as in the defining formula).  The dictionary is deterministic:
# a constant, cosines/sines of the two lowest torus frequencies per axis, and
# one gaussian bump, each divided by its BL norm (sup + Lipschitz constant).

import functools


@functools.lru_cache(maxsize=16)
def _bl_dictionary(domain):
    L = domain.side
    d = domain.dimension
    c = domain.center
    funcs = []

    funcs.append((lambda x: np.ones(np.atleast_2d(x).shape[0]), 1.0))
    for axis in range(d):
        for k in (1, 2):
            w = 2.0 * math.pi * k / L

            def cosf(x, axis=axis, w=w):
                return np.cos(w * np.atleast_2d(x)[:, axis])

            def sinf(x, axis=axis, w=w):
                return np.sin(w * np.atleast_2d(x)[:, axis])

            funcs.append((cosf, 1.0 + w))
            funcs.append((sinf, 1.0 + w))

    width = L / 8.0

    def bump(x, width=width):
        r = domain.centered_distance(np.atleast_2d(x))
        return np.exp(-0.5 * (r / width) ** 2)

    lip = math.exp(-0.5) / width
    funcs.append((bump, 1.0 + lip))
    return funcs[: max(8, 1 + 4 * d)]


def _dictionary_moments(config, domain, funcs):
    rows = []
    for i in (0, 1):
        pts = config.points(i)
        if len(pts) == 0:
            rows.append(np.zeros(len(funcs)))
            continue
        w = psi(pts, domain)
        rows.append(np.array([np.dot(f(pts), w) / norm for f, norm in funcs]))
    return rows


def config_distance(a, b, domain):
    """Dictionary surrogate of the bounded-Lipschitz path metric.

    Per type: min(1, max_j |sum_x g_j(x) psi(x) - sum_x' g_j(x') psi(x')|),
    summed over the two types.  Symmetric, zero iff the dictionary moments
    agree; a pseudometric by construction.
    """
    funcs = _bl_dictionary(domain)
    ma = _dictionary_moments(a, domain, funcs)
    mb = _dictionary_moments(b, domain, funcs)
    total = 0.0
    for i in (0, 1):
        total += min(1.0, float(np.max(np.abs(ma[i] - mb[i]))))
    return total


# ---------------------------------------------------------------------------
# Flat-record serialization: header (d, L, mode flags), one line per particle
# (type, id, coordinates), decimal with 17 significant digits (round-trip
# exact for IEEE doubles).

def save_configuration(config, domain, path):
    with open(path, "w") as fh:
        fh.write(f"# wrjump-configuration v1\n")
        fh.write(f"dimension={domain.dimension} side={domain.side!r} "
                 f"flat_weights={int(domain.flat_weights)}\n")
        for i in (0, 1):
            pts = config.points(i)
            ids = config.ids0 if i == 0 else config.ids1
            for pid, p in zip(ids, pts):
                coords = " ".join("%.17g" % v for v in p)
                fh.write(f"{i} {pid} {coords}\n")


def load_configuration(path):
    with open(path) as fh:
        magic = fh.readline()
        if "wrjump-configuration" not in magic:
            raise ValueError("not a configuration file")
        header = dict(kv.split("=") for kv in fh.readline().split())
        domain = Domain(dimension=int(header["dimension"]),
                        side=float(header["side"]),
                        flat_weights=bool(int(header["flat_weights"])))
        pts = {0: [], 1: []}
        ids = {0: [], 1: []}
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            i = int(parts[0])
            ids[i].append(int(parts[1]))
            pts[i].append([float(v) for v in parts[2:]])
    d = domain.dimension
    p0 = np.array(pts[0], dtype=float).reshape(-1, d)
    p1 = np.array(pts[1], dtype=float).reshape(-1, d)
    config = TwoTypeConfiguration(p0, p1, np.array(ids[0], dtype=np.int64),
                                  np.array(ids[1], dtype=np.int64))
    return config, domain
