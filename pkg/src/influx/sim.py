"""Exact event-driven simulation of continuous-time propagation.

Cascades are sampled with the Gillespie direct method: given the active set
``U`` the waiting time is exponential with rate
``alpha(U) + beta(U^c) + gamma(U)`` and the next event is picked in
proportion to the individual node rates.

Randomness
----------
Replica ``i`` of an ensemble seeded with ``seed`` draws all its uniforms from
Philox-4x64 with key ``seed`` and counter word 2 set to ``i``; see
:func:`replica_generator`. Results are therefore identical for any worker
count or batch size.
"""

from __future__ import annotations

import math
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import _gillespie as _k
from .curves import InfluenceCurve, write_table
from .errors import FormatError, PreconditionError, SpecError
from .graph import PropagationNetwork, as_nodeset, format_float

__all__ = [
    "Cascade", "Ensemble", "EmpiricalDensity", "simulate_cascade", "run_ensemble",
    "empirical_density", "empirical_influence", "empirical_rates", "replica_generator",
    "wilson_interval", "write_cascades", "read_cascades", "write_density",
    "RNG_ALGORITHM", "ACTIVATE", "RECOVER",
]

RNG_ALGORITHM = "numpy.Philox4x64(key=seed,counter=[0,0,replica,0])"
ACTIVATE = _k.ACTIVATE
RECOVER = _k.RECOVER
_KIND_NAMES = {ACTIVATE: "activate", RECOVER: "recover"}
_KIND_CODES = {v: k for k, v in _KIND_NAMES.items()}
_HEADER_KEYS = ("replica", "source", "horizon", "nodes")


def replica_generator(seed: int, replica: int) -> np.random.Generator:
    """Independent counter-based stream for one replica."""
    return np.random.Generator(np.random.Philox(key=int(seed), counter=[0, 0, int(replica), 0]))


@dataclass
class Cascade:
    """One sample path: events ``(time, node, kind)`` in time order."""

    times: np.ndarray
    nodes: np.ndarray
    kinds: np.ndarray
    sources: tuple
    horizon: float
    node_count: int

    def __len__(self):
        return int(self.times.size)

    def events(self):
        return [(float(t), int(i), _KIND_NAMES[int(k)])
                for t, i, k in zip(self.times, self.nodes, self.kinds)]

    def active_count(self, t):
        """Number of active nodes at time(s) ``t``."""
        step = np.where(self.kinds == ACTIVATE, 1, -1)
        level = np.concatenate([[0], np.cumsum(step)])
        idx = np.searchsorted(self.times, t, side="right")
        return level[idx]

    def activation_times(self):
        """First activation time per node (``inf`` if never activated)."""
        out = np.full(self.node_count, np.inf)
        act = self.kinds == ACTIVATE
        nodes, times = self.nodes[act], self.times[act]
        # first occurrence per node; events are time ordered
        uniq, first = np.unique(nodes[::-1], return_index=True)
        out[uniq] = times[::-1][first]
        return out


class Ensemble(Sequence):
    """Collection of cascades stored as flat event arrays with offsets."""

    def __init__(self, offsets, times, nodes, kinds, sources, horizon, node_count, seed=None,
                 metadata=None):
        self.offsets = np.asarray(offsets, dtype=np.int64)
        self.times = np.asarray(times, dtype=np.float64)
        self.nodes = np.asarray(nodes, dtype=np.int64)
        self.kinds = np.asarray(kinds, dtype=np.int8)
        self.sources = tuple(int(s) for s in sources)
        self.horizon = float(horizon)
        self.node_count = int(node_count)
        self.seed = seed
        self.metadata = dict(metadata or {})

    def __len__(self):
        return self.offsets.size - 1

    def __getitem__(self, i):
        if isinstance(i, slice):
            return [self[j] for j in range(*i.indices(len(self)))]
        if i < 0:
            i += len(self)
        if not 0 <= i < len(self):
            raise IndexError(i)
        a, b = self.offsets[i], self.offsets[i + 1]
        return Cascade(self.times[a:b], self.nodes[a:b], self.kinds[a:b], self.sources,
                       self.horizon, self.node_count)

    @classmethod
    def from_cascades(cls, cascades):
        cascades = list(cascades)
        if not cascades:
            raise SpecError("empty ensemble")
        K = cascades[0].node_count
        if any(c.node_count != K for c in cascades):
            raise SpecError("cascades come from networks of different sizes")
        offsets = np.zeros(len(cascades) + 1, dtype=np.int64)
        np.cumsum([len(c) for c in cascades], out=offsets[1:])
        return cls(offsets,
                   np.concatenate([c.times for c in cascades]),
                   np.concatenate([c.nodes for c in cascades]),
                   np.concatenate([c.kinds for c in cascades]),
                   cascades[0].sources, max(c.horizon for c in cascades), K)


@dataclass
class EmpiricalDensity:
    """Fraction of cascades with exactly ``k`` active nodes at each grid time.

    ``rho`` has shape ``(len(times), K + 1)``; ``counts`` holds the raw
    integer tallies and ``totals`` the summed active counts per time.
    """

    times: np.ndarray
    rho: np.ndarray
    counts: np.ndarray
    totals: np.ndarray
    n: int

    @property
    def node_count(self):
        return self.rho.shape[1] - 1


# -- simulation ---------------------------------------------------------------

def _budget(K, n_sources, recovery):
    if recovery:
        L = 16 * K + 64
    else:
        # one uniform per waiting time, one per selection, one final overshoot
        L = 2 * max(K - n_sources, 0) + 1
    return L + (-L) % 4


def _prepare(net, sources, horizon):
    S = as_nodeset(net, sources)
    if not horizon > 0 or not math.isfinite(horizon):
        raise SpecError("horizon must be positive and finite")
    if len(S) == 0 and not net.has_self_activation:
        raise PreconditionError("empty source set with all self-activation rates zero")
    return S


def _kernel_args(net):
    return (np.asarray(net.out_indptr), np.asarray(net.out_indices), np.asarray(net.out_rates),
            np.asarray(net.self_rates), np.asarray(net.recovery_rates))


def _run_rows(args, S, horizon, U, cap):
    B = U.shape[0]
    times = np.empty((B, cap))
    nodes = np.empty((B, cap), dtype=np.int64)
    kinds = np.empty((B, cap), dtype=np.int8)
    count = np.empty(B, dtype=np.int64)
    status = np.empty(B, dtype=np.int8)
    _k.simulate_batch(*args, S.ids, float(horizon), U, times, nodes, kinds, count, status)
    return times, nodes, kinds, count, status


def _single(args, S, horizon, K, rng, buf, recovery):
    """Run one replica from ``buf``, extending it from ``rng`` while it runs dry."""
    while True:
        cap = len(S) + buf.size // 2 + 1
        if not recovery:
            cap = min(cap, K + 1)
        times, nodes, kinds, count, status = _run_rows(args, S, horizon, buf[None, :], cap)
        if status[0] == 0:
            n = count[0]
            return times[0, :n].copy(), nodes[0, :n].copy(), kinds[0, :n].copy()
        buf = np.concatenate([buf, rng.random(buf.size)])


def simulate_cascade(net: PropagationNetwork, sources, horizon: float,
                     rng: np.random.Generator) -> Cascade:
    """Sample one cascade up to ``horizon``.

    Events strictly after ``horizon`` are dropped. The run stops early once
    no event can occur (every reachable node active, no recovery).
    """
    S = _prepare(net, sources, horizon)
    K = net.node_count
    recovery = net.has_recovery
    buf = rng.random(_budget(K, len(S), recovery))
    t, i, k = _single(_kernel_args(net), S, horizon, K, rng, buf, recovery)
    return Cascade(t, i, k, tuple(S), float(horizon), K)


def run_ensemble(net: PropagationNetwork, sources, horizon: float, n: int, seed: int,
                 workers: int = 1, batch_size: int | None = None) -> Ensemble:
    """Simulate ``n`` independent cascades; replica ``i`` uses ``replica_generator(seed, i)``."""
    if n < 1:
        raise SpecError("ensemble size must be >= 1")
    if workers < 1:
        raise SpecError("workers must be >= 1")
    S = _prepare(net, sources, horizon)
    K = net.node_count
    recovery = net.has_recovery
    L = _budget(K, len(S), recovery)
    cap = len(S) + L // 2 + 1
    if not recovery:
        cap = min(cap, K + 1)
    args = _kernel_args(net)
    if batch_size is None:
        batch_size = max(1, min(4096, (1 << 20) // max(L, cap)))
    starts = list(range(0, n, batch_size))

    def job(a):
        b = min(n, a + batch_size)
        gens = [replica_generator(seed, i) for i in range(a, b)]
        U = np.empty((b - a, L))
        for r, g in enumerate(gens):
            U[r] = g.random(L)
        times, nodes, kinds, count, status = _run_rows(args, S, horizon, U, cap)
        parts = []
        for r in range(b - a):
            if status[r]:
                parts.append(_single(args, S, horizon, K, gens[r], U[r], recovery))
            else:
                c = count[r]
                parts.append((times[r, :c], nodes[r, :c], kinds[r, :c]))
        return parts

    if workers == 1 or len(starts) == 1:
        chunks = [job(a) for a in starts]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(job, starts))
    parts = [p for chunk in chunks for p in chunk]
    offsets = np.zeros(n + 1, dtype=np.int64)
    np.cumsum([p[0].size for p in parts], out=offsets[1:])
    return Ensemble(
        offsets,
        np.concatenate([p[0] for p in parts]),
        np.concatenate([p[1] for p in parts]),
        np.concatenate([p[2] for p in parts]),
        tuple(S), horizon, K, seed=seed,
        metadata={"rng": RNG_ALGORITHM, "seed": int(seed), "n": int(n)},
    )


# -- ensemble statistics ------------------------------------------------------

def _as_ensemble(cascades) -> Ensemble:
    if isinstance(cascades, Ensemble):
        if len(cascades) == 0:
            raise SpecError("empty ensemble")
        return cascades
    return Ensemble.from_cascades(cascades)


def empirical_density(cascades, time_grid) -> EmpiricalDensity:
    ens = _as_ensemble(cascades)
    grid = np.asarray(time_grid, dtype=np.float64).ravel()
    if grid.size == 0:
        raise SpecError("empty time grid")
    if np.any(np.diff(grid) < 0):
        raise SpecError("time grid must be nondecreasing")
    if grid[0] < 0 or grid[-1] > ens.horizon * (1 + 1e-12):
        raise SpecError("time grid must lie within [0, horizon]")
    K = ens.node_count
    counts = np.zeros((grid.size, K + 1), dtype=np.int64)
    totals = np.zeros(grid.size, dtype=np.int64)
    _k.count_on_grid(ens.offsets, ens.times, ens.kinds, grid, K, counts, totals)
    n = len(ens)
    return EmpiricalDensity(grid, counts / n, counts, totals, n)


def empirical_influence(cascades, time_grid) -> InfluenceCurve:
    ens = _as_ensemble(cascades)
    dens = empirical_density(ens, time_grid)
    prov = {"method": "mcmc", "cascades": dens.n, "node_count": ens.node_count,
            "source_count": len(ens.sources)}
    if ens.seed is not None:
        prov["seed"] = int(ens.seed)
        prov["rng"] = RNG_ALGORITHM
    return InfluenceCurve(dens.times, dens.totals / dens.n, prov)


def empirical_rates(density: EmpiricalDensity, min_count: float = 10.0):
    """Finite-difference estimate of ``q_k(t)`` from an empirical density.

    Uses ``q_k = -(sum_{j<=k} rho_j)' / rho_k`` with second-order central
    differences. Entries where ``rho_k < min_count / n`` are NaN and marked
    undefined. With recovery present this is the net upward rate.
    """
    from .fpe.profile import RateProfile

    t = np.asarray(density.times, dtype=np.float64)
    if t.size < 3:
        raise SpecError("need at least 3 grid points")
    dt = np.diff(t)
    if not np.allclose(dt, dt[0], rtol=1e-9, atol=0):
        raise SpecError("finite differences need a uniform grid")
    rho = density.rho
    K = rho.shape[1] - 1
    cum = np.cumsum(rho[:, :K], axis=1)
    deriv = np.gradient(cum, t, axis=0, edge_order=2)
    defined = rho[:, :K] >= min_count / density.n
    with np.errstate(divide="ignore", invalid="ignore"):
        q = np.where(defined, -deriv / rho[:, :K], np.nan)
    # a flat density gives -0.0 / tiny noise; rates are nonnegative by definition
    q = np.where(defined, np.maximum(q, 0.0), np.nan)
    return RateProfile(q, np.zeros_like(q), times=t, defined=defined,
                       meta={"estimator": "finite-difference", "cascades": density.n})


def wilson_interval(successes, n, z=2.5758293035489004):
    """Wilson score interval for a binomial proportion (default 99%)."""
    k = np.asarray(successes, dtype=np.float64)
    p = k / n
    z2 = z * z
    denom = 1 + z2 / n
    centre = (p + z2 / (2 * n)) / denom
    half = z * np.sqrt(p * (1 - p) / n + z2 / (4 * n * n)) / denom
    return centre - half, centre + half


# -- file formats -------------------------------------------------------------

def write_cascades(path, cascades, comments=()):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for c in comments:
            fh.write(f"# {c}\n")
        for r, c in enumerate(cascades):
            fh.write(f"# replica={r}\n")
            fh.write(f"# source={','.join(str(s) for s in c.sources)}\n")
            fh.write(f"# horizon={format_float(c.horizon)}\n")
            fh.write(f"# nodes={c.node_count}\n")
            for t, i, k in zip(c.times.tolist(), c.nodes.tolist(), c.kinds.tolist()):
                fh.write(f"{format_float(t)},{i},{_KIND_NAMES[k]}\n")


def read_cascades(path, node_count=None):
    """Parse a cascade file; a ``# replica=`` or repeated ``# source=`` header starts a record."""
    records = []
    with open(path, encoding="utf-8") as fh:
        lines = list(enumerate(fh, start=1))
    for lineno, raw in lines:
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            key, _, val = line[1:].strip().partition("=")
            key = key.strip()
            if key not in _HEADER_KEYS:
                continue
            if not records or key == "replica" or (key == "source" and "source" in records[-1][0]):
                records.append(({}, []))
            records[-1][0][key] = val.strip()
            continue
        if not records or "horizon" not in records[-1][0]:
            raise FormatError("event before '# horizon=' header", line=lineno, path=path)
        parts = [p.strip() for p in line.split(",")]
        if len(parts) != 3 or parts[2] not in _KIND_CODES:
            raise FormatError("expected 'time,node,kind'", line=lineno, path=path)
        try:
            records[-1][1].append((float(parts[0]), int(parts[1]), _KIND_CODES[parts[2]]))
        except ValueError:
            raise FormatError("bad time or node field", line=lineno, path=path) from None
    out = []
    for hdr, ev in records:
        if "horizon" not in hdr:
            raise FormatError("cascade record without '# horizon=' header", path=path)
        t = np.array([e[0] for e in ev], dtype=np.float64)
        i = np.array([e[1] for e in ev], dtype=np.int64)
        k = np.array([e[2] for e in ev], dtype=np.int8)
        K = int(hdr.get("nodes", node_count or (int(i.max()) + 1 if i.size else 1)))
        src = tuple(int(s) for s in hdr.get("source", "").split(",") if s)
        out.append(Cascade(t, i, k, src, float(hdr["horizon"]), K))
    return out


def write_density(path, density, comments=()):
    """CSV ``t,rho_0,...,rho_K``; ``density`` is anything with ``times`` and ``rho``."""
    K = density.rho.shape[1] - 1
    write_table(path, ["t"] + [f"rho_{k}" for k in range(K + 1)],
                [density.times] + [density.rho[:, k] for k in range(K + 1)], comments)
