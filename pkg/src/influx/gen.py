"""Random network generators and activation-rate samplers.

All randomness flows from a 64-bit seed through :class:`numpy.random.SeedSequence`
into PCG64 streams. Topology and rates use separate, independent streams so
the same topology can be re-weighted without changing its edges.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import networkx as nx
import numpy as np

from .errors import SpecError
from .graph import PropagationNetwork

__all__ = ["GeneratorSpec", "generate", "sample_rates", "kronecker_probabilities",
           "RNG_ALGORITHM", "make_rng", "FAMILIES"]

RNG_ALGORITHM = "numpy.PCG64+SeedSequence"
FAMILIES = ("erdos_renyi", "small_world", "scale_free", "kronecker")
_ALIASES = {"er": "erdos_renyi", "sw": "small_world", "ws": "small_world",
            "ba": "scale_free", "sf": "scale_free", "kron": "kronecker"}

# dense Bernoulli matrix below this size, per-node sparse sampling above
_DENSE_LIMIT = 2048


def make_rng(seed: int, *stream) -> np.random.Generator:
    """PCG64 generator for ``seed`` and an optional integer stream path."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=stream)))


@dataclass(frozen=True)
class GeneratorSpec:
    """Parameters of one random topology.

    ``avg_degree`` is the expected out-degree for Erdős–Rényi graphs.
    ``ring_degree``/``rewire_prob`` parameterise Watts–Strogatz rings,
    ``attach`` the number of edges each arriving node brings under
    preferential attachment, ``seed_matrix``/``power`` the stochastic
    Kronecker model (``nodes`` is then implied).
    """

    family: str
    nodes: int = 0
    seed: int = 0
    avg_degree: float | None = None
    ring_degree: int | None = None
    rewire_prob: float = 0.1
    attach: int | None = None
    seed_matrix: tuple | None = None
    power: int | None = None

    def __post_init__(self):
        fam = _ALIASES.get(self.family, self.family)
        object.__setattr__(self, "family", fam)
        if fam not in FAMILIES:
            raise SpecError(f"unknown family {self.family!r}; choose from {FAMILIES}")
        if self.seed_matrix is not None:
            object.__setattr__(self, "seed_matrix",
                               tuple(tuple(float(x) for x in row) for row in self.seed_matrix))
        if fam == "kronecker":
            self._check_kronecker()
        elif self.nodes < 1:
            raise SpecError("nodes must be >= 1")
        if not 0 <= self.seed < 2 ** 64:
            raise SpecError("seed must be a 64-bit unsigned integer")
        if fam == "erdos_renyi":
            if self.avg_degree is None or self.avg_degree < 0:
                raise SpecError("erdos_renyi needs avg_degree >= 0")
            if self.avg_degree > 0 and self.avg_degree >= self.nodes:
                raise SpecError("avg_degree must be below the node count")
            if self.nodes == 1 and self.avg_degree:
                raise SpecError("a single node cannot have edges")
        elif fam == "small_world":
            k = self.ring_degree
            if k is None or k < 0 or k % 2 or k >= self.nodes:
                raise SpecError("small_world needs an even ring_degree below the node count")
            if not 0.0 <= self.rewire_prob <= 1.0:
                raise SpecError("rewire_prob must lie in [0, 1]")
        elif fam == "scale_free":
            m = self.attach
            if m is None or m < 1 or m >= self.nodes:
                raise SpecError("scale_free needs 1 <= attach < nodes")

    def _check_kronecker(self):
        P = np.asarray(self.seed_matrix, dtype=float)
        if P.ndim != 2 or P.shape[0] != P.shape[1] or P.shape[0] < 1:
            raise SpecError("Kronecker seed matrix must be square")
        if np.any(P < 0) or np.any(P > 1):
            raise SpecError("Kronecker seed entries must lie in [0, 1]")
        if self.power is None or self.power < 1:
            raise SpecError("Kronecker power must be >= 1")
        K = P.shape[0] ** self.power
        if self.nodes and self.nodes != K:
            raise SpecError(f"Kronecker node count must equal {P.shape[0]}^{self.power} = {K}")
        object.__setattr__(self, "nodes", K)

    def to_dict(self):
        d = asdict(self)
        d["rng"] = RNG_ALGORITHM
        return {k: v for k, v in d.items() if v is not None}

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)


def generate(spec: GeneratorSpec) -> PropagationNetwork:
    """Sample a topology. Rates are unit placeholders (``weighted=False``)."""
    rng = make_rng(spec.seed, 0)
    fam = spec.family
    if fam == "erdos_renyi":
        p = spec.avg_degree / (spec.nodes - 1) if spec.nodes > 1 else 0.0
        src, dst = _bernoulli_pairs(spec.nodes, p, rng)
    elif fam == "small_world":
        src, dst = _small_world(spec.nodes, spec.ring_degree, spec.rewire_prob, rng)
    elif fam == "scale_free":
        src, dst = _scale_free(spec.nodes, spec.attach, rng)
    else:
        src, dst = _kronecker(np.asarray(spec.seed_matrix), spec.power, rng)
    return PropagationNetwork.from_edges(spec.nodes, src, dst)


def sample_rates(net: PropagationNetwork, rng_seed: int, lo: float = 0.0, hi: float = 1.0):
    """Give every edge an independent uniform rate in the open band ``(lo, hi)``."""
    if lo < 0 or not hi > lo:
        raise SpecError("rate band needs 0 <= lo < hi")
    rng = make_rng(rng_seed, 1)
    rates = rng.uniform(lo, hi, net.edge_count)
    # uniform() is half-open on the left
    bad = rates <= lo
    while np.any(bad):
        rates[bad] = rng.uniform(lo, hi, int(bad.sum()))
        bad = rates <= lo
    return net.with_rates(rates=rates)


# -- families -------------------------------------------------------------

def _bernoulli_pairs(K, p, rng):
    """Directed G(K, p) without self-loops."""
    if p <= 0 or K < 2:
        return np.empty(0, np.int64), np.empty(0, np.int64)
    if K <= _DENSE_LIMIT:
        A = rng.random((K, K)) < p
        np.fill_diagonal(A, False)
        src, dst = np.nonzero(A)
        return src.astype(np.int64), dst.astype(np.int64)
    # per-node binomial degree, then distinct uniform targets
    deg = rng.binomial(K - 1, p, size=K)
    src = np.repeat(np.arange(K, dtype=np.int64), deg)
    dst = _draw_targets(src, K, rng)
    while True:
        key = src * K + dst
        order = np.argsort(key, kind="stable")
        dup = np.zeros(key.size, dtype=bool)
        dup[order[1:]] = key[order[1:]] == key[order[:-1]]
        if not dup.any():
            return src, dst
        dst[dup] = _draw_targets(src[dup], K, rng)


def _draw_targets(src, K, rng):
    t = rng.integers(0, K - 1, size=src.size)
    return t + (t >= src)


def _small_world(K, k, beta, rng):
    if k == 0:
        return np.empty(0, np.int64), np.empty(0, np.int64)
    g = nx.watts_strogatz_graph(K, k, beta, seed=np.random.RandomState(rng.integers(2 ** 32)))
    e = np.array(g.edges(), dtype=np.int64).reshape(-1, 2)
    return np.concatenate([e[:, 0], e[:, 1]]), np.concatenate([e[:, 1], e[:, 0]])


def _scale_free(K, m, rng):
    g = nx.barabasi_albert_graph(K, m, seed=np.random.RandomState(rng.integers(2 ** 32)))
    e = np.array(g.edges(), dtype=np.int64).reshape(-1, 2)
    # arriving (higher id) node points at the nodes it attached to
    return e.max(axis=1), e.min(axis=1)


def kronecker_probabilities(seed_matrix, power: int) -> np.ndarray:
    P = np.asarray(seed_matrix, dtype=float)
    out = P
    for _ in range(power - 1):
        out = np.kron(out, P)
    return out


def _kronecker(P, power, rng):
    n = P.shape[0]
    K = n ** power
    srcs, dsts = [], []
    rows = max(1, (1 << 22) // K)
    digits = _base_digits(np.arange(K), n, power)
    for a in range(0, K, rows):
        b = min(K, a + rows)
        # entry (i, j) of the Kronecker power is prod_l P[i_l, j_l]
        prob = np.ones((b - a, K))
        for lvl in range(power):
            prob *= P[digits[a:b, lvl][:, None], digits[None, :, lvl]]
        keep = rng.random(prob.shape) < prob
        i, j = np.nonzero(keep)
        i = i + a
        off = i != j
        srcs.append(i[off])
        dsts.append(j[off])
    return np.concatenate(srcs).astype(np.int64), np.concatenate(dsts).astype(np.int64)


def _base_digits(x, base, width):
    # most significant digit first, matching np.kron's block layout
    out = np.empty((x.size, width), dtype=np.int64)
    for lvl in range(width - 1, -1, -1):
        out[:, lvl] = x % base
        x = x // base
    return out
