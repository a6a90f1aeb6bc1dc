"""Exact event-driven simulation of the two-type repulsive jump process.

Thinning realization: tentative events arrive at the constant envelope rate
N0*abar_0 + N1*abar_1 (particle counts are conserved, so the envelope never
changes along a run); a tentative event picks a particle proportionally to
its kernel mass, draws a free displacement from a_i / abar_i, and accepts
with probability psi_sigma(x) * exp(-sum_z phi_i(z - y)).  Acceptance uses a
single uniform, which keeps sigma = 0 and sigma > 0 on one code path and
makes coupled-uniform comparisons meaningful.  Rejections advance time only.

Randomness is counter-based (Philox) with per-path seeds spawned
deterministically from a master seed, so batches are reproducible bitwise
independently of worker count and scheduling.
"""

import gzip
import itertools
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .geometry import TwoTypeConfiguration, big_psi
from .kernels import psi_sigma

TRACE_SCHEMA = "wrjump-trace-v1"


class CellIndex:
    """Per-type cell lists on the torus for cutoff-radius neighbor queries.

    The cell contents exactly mirror the configuration after every event;
    ``verify`` checks that invariant.
    """

    def __init__(self, domain, cutoffs, config):
        self.domain = domain
        self.cutoffs = cutoffs
        self._ncells = []
        for cut in cutoffs:
            n = max(1, int(math.floor(domain.side / cut))) if cut > 0 else 1
            self._ncells.append(n)
        self._cells = ({}, {})
        self._positions = ({}, {})
        for i in (0, 1):
            pts = config.points(i)
            ids = config.ids0 if i == 0 else config.ids1
            for pid, p in zip(ids, pts):
                self._insert(i, int(pid), p)

    def _key(self, i, p):
        n = self._ncells[i]
        cell = tuple((np.floor(p / self.domain.side * n).astype(int)) % n)
        return cell

    def _insert(self, i, pid, p):
        key = self._key(i, p)
        self._cells[i].setdefault(key, set()).add(pid)
        self._positions[i][pid] = np.array(p, dtype=float)

    def move(self, i, pid, new_p):
        old_p = self._positions[i][pid]
        old_key = self._key(i, old_p)
        self._cells[i][old_key].discard(pid)
        if not self._cells[i][old_key]:
            del self._cells[i][old_key]
        self._insert(i, pid, new_p)

    def near(self, i, y, reach_index):
        """Positions of type-i particles within the reach of cutoff[reach_index] of y."""
        n = self._ncells[reach_index]
        if n <= 2:
            pts = list(self._positions[i].values())
            return np.array(pts) if pts else np.zeros((0, self.domain.dimension))
        base = np.floor(np.asarray(y) / self.domain.side * n).astype(int)
        out = []
        for offset in itertools.product((-1, 0, 1), repeat=self.domain.dimension):
            key = tuple((base + np.array(offset)) % n)
            for pid in self._cells[i].get(key, ()):
                out.append(self._positions[i][pid])
        return np.array(out) if out else np.zeros((0, self.domain.dimension))

    def verify(self, config):
        for i in (0, 1):
            ids = config.ids0 if i == 0 else config.ids1
            pts = config.points(i)
            if set(self._positions[i]) != set(int(v) for v in ids):
                return False
            for pid, p in zip(ids, pts):
                if not np.array_equal(self._positions[i][int(pid)], p):
                    return False
                if int(pid) not in self._cells[i].get(self._key(i, p), ()):
                    return False
        return True


@dataclass
class Event:
    time: float
    particle_id: int
    type_index: int
    source: np.ndarray
    target: np.ndarray


@dataclass
class EventTrace:
    """Initial configuration plus the ordered accepted-jump record.

    Replaying the events from the initial configuration reproduces the final
    configuration exactly; event times are strictly increasing.
    """

    initial: TwoTypeConfiguration
    events: list
    t_end: float
    metadata: dict = field(default_factory=dict)

    def final_configuration(self):
        return self.at(self.t_end)

    def at(self, t):
        """Right-continuous evaluation: state after the last event with time <= t."""
        if t < 0 or t > self.t_end + 1e-12:
            raise ValueError("time outside the trace window")
        config = self.initial.copy()
        index0 = {int(pid): k for k, pid in enumerate(config.ids0)}
        index1 = {int(pid): k for k, pid in enumerate(config.ids1)}
        for ev in self.events:
            if ev.time > t:
                break
            if ev.type_index == 0:
                config.points0[index0[ev.particle_id]] = ev.target
            else:
                config.points1[index1[ev.particle_id]] = ev.target
        return config

    def sample_path(self, times):
        """Configurations at a sorted list of times (single replay sweep)."""
        out = []
        config = self.initial.copy()
        index0 = {int(pid): k for k, pid in enumerate(config.ids0)}
        index1 = {int(pid): k for k, pid in enumerate(config.ids1)}
        ev_iter = iter(self.events)
        ev = next(ev_iter, None)
        for t in times:
            if t < 0 or t > self.t_end + 1e-12:
                raise ValueError("time outside the trace window")
            while ev is not None and ev.time <= t:
                if ev.type_index == 0:
                    config.points0[index0[ev.particle_id]] = ev.target
                else:
                    config.points1[index1[ev.particle_id]] = ev.target
                ev = next(ev_iter, None)
            out.append(config.copy())
        return out


def sample_at(trace, t):
    return trace.at(t)


class SimulationState:
    """Mutable per-path state: configuration, clock, damping, kernels, RNG."""

    def __init__(self, config, kernels, sigma, rng, time=0.0):
        config.validate(kernels.domain)
        self.config = config.copy()
        self.kernels = kernels
        self.sigma = float(sigma)
        self.rng = rng
        self.time = float(time)
        d = kernels.domain.dimension
        cutoffs = tuple(max(ph.support_radius(d), 1e-9) for ph in kernels.phi)
        self.cells = CellIndex(kernels.domain, cutoffs, self.config)
        self._index = ({int(pid): k for k, pid in enumerate(self.config.ids0)},
                       {int(pid): k for k, pid in enumerate(self.config.ids1)})
        self._masses = (kernels.moments[0][0], kernels.moments[1][0])

    @property
    def envelope_rate(self):
        n0, n1 = self.config.counts()
        return n0 * self._masses[0] + n1 * self._masses[1]

    def _check_simple(self, y):
        for i in (0, 1):
            pts = self.config.points(i)
            if len(pts) and np.any(np.all(pts == y, axis=1)):
                return False
        return True

    def step(self, t_max=math.inf):
        """Advance by one tentative event; return the Event if accepted.

        Returns (advanced, event): ``advanced`` is False when the next
        tentative time exceeds t_max (the clock is then left at t_max).
        """
        lam = self.envelope_rate
        if lam <= 0.0:
            self.time = t_max if math.isfinite(t_max) else self.time
            return False, None
        dt = self.rng.exponential(1.0 / lam)
        if self.time + dt > t_max:
            self.time = t_max
            return False, None
        self.time += dt
        n0, _ = self.config.counts()
        u_type = self.rng.uniform()
        i = 0 if u_type * lam < n0 * self._masses[0] else 1
        pts = self.config.points(i)
        j = int(self.rng.integers(len(pts)))
        x = pts[j]
        disp = self.kernels.a[i].sample_displacement(self.rng, self.kernels.domain.dimension)
        y = self.kernels.domain.wrap(x + disp)
        u_acc = self.rng.uniform()

        accept_p = float(psi_sigma(x, self.sigma, self.kernels.domain))
        if accept_p > 0.0 and not self.kernels.phi[i].is_zero:
            opposite = self.cells.near(1 - i, y, i)
            rep = self.kernels.repulsion_factor(i, opposite, y)
            accept_p *= rep
        if u_acc >= accept_p:
            return True, None
        if not self._check_simple(y):
            return True, None
        ids = self.config.ids0 if i == 0 else self.config.ids1
        pid = int(ids[j])
        event = Event(self.time, pid, i, x.copy(), y.copy())
        pts[j] = y
        self.cells.move(i, pid, y)
        return True, event


def sample_poisson_initial(kappa0, kappa1, domain, rng):
    """Homogeneous Poisson configuration: counts ~ Poisson(kappa_i * volume),
    positions i.i.d. uniform; zero-probability coincidences are re-drawn."""
    if kappa0 < 0 or kappa1 < 0:
        raise ValueError("intensities must be nonnegative")
    vol = domain.volume
    pts = []
    for kappa in (kappa0, kappa1):
        n = int(rng.poisson(kappa * vol))
        pts.append(rng.uniform(0.0, domain.side, size=(n, domain.dimension)))
    while True:
        allpts = np.vstack(pts)
        if len(allpts) < 2:
            break
        order = np.lexsort(allpts.T)
        if not np.any(np.all(np.diff(allpts[order], axis=0) == 0.0, axis=1)):
            break
        pts[0] = rng.uniform(0.0, domain.side, size=pts[0].shape)
    n0 = len(pts[0])
    return TwoTypeConfiguration(pts[0], pts[1],
                                np.arange(n0), np.arange(n0, n0 + len(pts[1])))


def simulate_path(config0, t_end, sigma, kernels, seed):
    """Complete trace on [0, t_end]; a pure function of the seed.

    ``seed`` may be an int, a SeedSequence, or a ready Generator.
    """
    if t_end < 0:
        raise ValueError("t_end must be nonnegative")
    rng = _as_generator(seed)
    state = SimulationState(config0, kernels, sigma, rng)
    events = []
    while True:
        advanced, event = state.step(t_max=t_end)
        if not advanced:
            break
        if event is not None:
            events.append(event)
    metadata = {
        "sigma": sigma,
        "t_end": t_end,
        "constants": kernels.constants(),
    }
    return EventTrace(config0.copy(), events, t_end, metadata)


def _as_generator(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    if isinstance(seed, np.random.SeedSequence):
        return np.random.Generator(np.random.Philox(seed))
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed))))


def spawn_path_seeds(master_seed, n_paths):
    """Deterministic, pairwise-distinct per-path seed sequences."""
    return np.random.SeedSequence(int(master_seed)).spawn(int(n_paths))


def batch_simulate(initial, n_paths, t_end, sigma, kernels, master_seed,
                   workers=None):
    """n_paths independent traces with splittable per-path seeds.

    ``initial`` is either a fixed TwoTypeConfiguration (reused as the exact
    starting point of every path) or a callable rng -> configuration.  The
    result is independent of the worker count; workers only partition the
    path index range.
    """
    if n_paths < 1:
        raise ValueError("need at least one path")
    seeds = spawn_path_seeds(master_seed, n_paths)

    def run(k):
        rng = np.random.Generator(np.random.Philox(seeds[k]))
        if callable(initial):
            config0 = initial(rng)
        else:
            config0 = initial.copy()
        trace = simulate_path(config0, t_end, sigma, kernels, rng)
        trace.metadata["path_index"] = k
        trace.metadata["master_seed"] = int(master_seed)
        return trace

    if workers is None:
        workers = int(os.environ.get("WRJUMP_WORKERS", "1"))
    if workers <= 1:
        return [run(k) for k in range(n_paths)]
    from concurrent.futures import ThreadPoolExecutor
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(run, range(n_paths)))


# ---------------------------------------------------------------------------
# Trace files: JSON lines, one header record then one record per event.

def save_trace(trace, path):
    opener = gzip.open if str(path).endswith(".gz") else open
    domain = None
    with opener(path, "wt") as fh:
        header = {
            "schema": TRACE_SCHEMA,
            "t_end": trace.t_end,
            "metadata": _jsonable(trace.metadata),
            "initial": {
                "points0": trace.initial.points0.tolist(),
                "points1": trace.initial.points1.tolist(),
                "ids0": trace.initial.ids0.tolist(),
                "ids1": trace.initial.ids1.tolist(),
            },
        }
        fh.write(json.dumps(header) + "\n")
        for ev in trace.events:
            fh.write(json.dumps({
                "t": ev.time, "id": ev.particle_id, "type": ev.type_index,
                "from": ev.source.tolist(), "to": ev.target.tolist()}) + "\n")


def load_trace(path):
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "rt") as fh:
        header = json.loads(fh.readline())
        if header.get("schema") != TRACE_SCHEMA:
            raise ValueError("unsupported trace schema")
        init = header["initial"]
        d = len(init["points0"][0]) if init["points0"] else (
            len(init["points1"][0]) if init["points1"] else 1)
        config = TwoTypeConfiguration(
            np.array(init["points0"], dtype=float).reshape(-1, d),
            np.array(init["points1"], dtype=float).reshape(-1, d),
            np.array(init["ids0"], dtype=np.int64),
            np.array(init["ids1"], dtype=np.int64))
        events = []
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            events.append(Event(rec["t"], rec["id"], rec["type"],
                                np.array(rec["from"]), np.array(rec["to"])))
    return EventTrace(config, events, header["t_end"], header.get("metadata", {}))


def save_traces(traces, path):
    """Concatenated trace blocks (header record then events) in one file."""
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "wt") as fh:
        for trace in traces:
            header = {
                "schema": TRACE_SCHEMA,
                "t_end": trace.t_end,
                "metadata": _jsonable(trace.metadata),
                "initial": {
                    "points0": trace.initial.points0.tolist(),
                    "points1": trace.initial.points1.tolist(),
                    "ids0": trace.initial.ids0.tolist(),
                    "ids1": trace.initial.ids1.tolist(),
                },
            }
            fh.write(json.dumps(header) + "\n")
            for ev in trace.events:
                fh.write(json.dumps({
                    "t": ev.time, "id": ev.particle_id, "type": ev.type_index,
                    "from": ev.source.tolist(), "to": ev.target.tolist()}) + "\n")


def load_traces(path):
    opener = gzip.open if str(path).endswith(".gz") else open
    traces = []
    with opener(path, "rt") as fh:
        header = None
        events = []
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            if "schema" in rec:
                if header is not None:
                    traces.append(_assemble_trace(header, events))
                if rec["schema"] != TRACE_SCHEMA:
                    raise ValueError("unsupported trace schema")
                header, events = rec, []
            else:
                events.append(Event(rec["t"], rec["id"], rec["type"],
                                    np.array(rec["from"]), np.array(rec["to"])))
        if header is not None:
            traces.append(_assemble_trace(header, events))
    return traces


def _assemble_trace(header, events):
    init = header["initial"]
    d = len(init["points0"][0]) if init["points0"] else (
        len(init["points1"][0]) if init["points1"] else 1)
    config = TwoTypeConfiguration(
        np.array(init["points0"], dtype=float).reshape(-1, d),
        np.array(init["points1"], dtype=float).reshape(-1, d),
        np.array(init["ids0"], dtype=np.int64),
        np.array(init["ids1"], dtype=np.int64))
    return EventTrace(config, events, header["t_end"], header.get("metadata", {}))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    return obj
