"""Weighted directed propagation networks.

A :class:`PropagationNetwork` stores its edges in compressed (CSR) form for
both directions, together with per-node self-activation and recovery rates.
Edge weights are activation rates: the time for an active node ``i`` to
activate an inactive out-neighbour ``j`` is exponential with rate
``alpha[i, j]``.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import dijkstra

from .errors import DomainError, FormatError, PreconditionError, SpecError

__all__ = [
    "PropagationNetwork",
    "NodeSet",
    "as_nodeset",
    "frontier_rate",
    "aggregate_self_rate",
    "aggregate_recovery_rate",
    "shortest_activation_distances",
    "ascending_activation_order",
    "read_edge_list",
    "write_edge_list",
    "read_node_attributes",
    "write_node_attributes",
    "format_float",
]


def format_float(x) -> str:
    """17 significant digits, enough for an exact float64 round trip."""
    return format(float(x), ".17g")


def _frozen(a, dtype):
    a = np.ascontiguousarray(a, dtype=dtype)
    a.setflags(write=False)
    return a


class NodeSet:
    """Sorted, duplicate-free set of node ids over ``0..K-1``."""

    __slots__ = ("ids", "node_count", "_mask")

    def __init__(self, ids, node_count: int):
        arr = np.asarray(list(ids) if not isinstance(ids, np.ndarray) else ids,
                         dtype=np.int64).ravel()
        if arr.size and (arr.min() < 0 or arr.max() >= node_count):
            bad = arr[(arr < 0) | (arr >= node_count)][0]
            raise DomainError(f"node id {bad} out of range 0..{node_count - 1}")
        arr = np.sort(arr)
        if arr.size > 1 and np.any(arr[1:] == arr[:-1]):
            raise DomainError("duplicate node ids in node set")
        self.ids = _frozen(arr, np.int64)
        self.node_count = int(node_count)
        self._mask = None

    @property
    def mask(self) -> np.ndarray:
        if self._mask is None:
            m = np.zeros(self.node_count, dtype=bool)
            m[self.ids] = True
            m.setflags(write=False)
            self._mask = m
        return self._mask

    def __len__(self):
        return int(self.ids.size)

    def __iter__(self):
        return iter(self.ids.tolist())

    def __contains__(self, i):
        return 0 <= i < self.node_count and bool(self.mask[i])

    def __eq__(self, other):
        if not isinstance(other, NodeSet):
            return NotImplemented
        return self.node_count == other.node_count and np.array_equal(self.ids, other.ids)

    def __hash__(self):
        return hash((self.node_count, self.ids.tobytes()))

    def __repr__(self):
        return f"NodeSet({self.ids.tolist()}, node_count={self.node_count})"

    def complement(self) -> "NodeSet":
        return NodeSet(np.flatnonzero(~self.mask), self.node_count)

    @classmethod
    def from_mask(cls, mask) -> "NodeSet":
        mask = np.asarray(mask, dtype=bool)
        return cls(np.flatnonzero(mask), mask.size)


def as_nodeset(net: "PropagationNetwork", nodes) -> NodeSet:
    if isinstance(nodes, NodeSet):
        if nodes.node_count != net.node_count:
            raise DomainError("node set built for a different network size")
        return nodes
    if nodes is None:
        nodes = ()
    return NodeSet(nodes, net.node_count)


@dataclass(frozen=True, eq=False)
class PropagationNetwork:
    """Immutable directed network with positive per-edge activation rates.

    Use :meth:`from_edges` rather than the raw constructor; it validates the
    edge list and builds both CSR directions.

    Attributes
    ----------
    node_count : int
        Number of nodes ``K``; ids are ``0..K-1``.
    out_indptr, out_indices, out_rates : ndarray
        Out-adjacency in CSR form, targets sorted within each row.
    in_indptr, in_indices, in_rates : ndarray
        The exact transpose of the out-adjacency.
    self_rates, recovery_rates : ndarray
        Per-node ``beta`` and ``gamma`` (zero when absent).
    weighted : bool
        False for topology-only networks whose rates are unit placeholders.
    """

    node_count: int
    out_indptr: np.ndarray
    out_indices: np.ndarray
    out_rates: np.ndarray
    in_indptr: np.ndarray
    in_indices: np.ndarray
    in_rates: np.ndarray
    self_rates: np.ndarray
    recovery_rates: np.ndarray
    weighted: bool = True

    @classmethod
    def from_edges(cls, node_count: int, src, dst, rates=None, self_rates=None,
                   recovery_rates=None) -> "PropagationNetwork":
        K = int(node_count)
        if K < 1:
            raise SpecError("node_count must be >= 1")
        src = np.asarray(src, dtype=np.int64).ravel()
        dst = np.asarray(dst, dtype=np.int64).ravel()
        if src.shape != dst.shape:
            raise SpecError("src and dst must have equal length")
        weighted = rates is not None
        rates = (np.ones(src.size) if rates is None
                 else np.asarray(rates, dtype=np.float64).ravel())
        if rates.shape != src.shape:
            raise SpecError("rates must match the edge count")
        if src.size:
            for arr in (src, dst):
                if arr.min() < 0 or arr.max() >= K:
                    bad = arr[(arr < 0) | (arr >= K)][0]
                    raise DomainError(f"node id {bad} out of range 0..{K - 1}")
            if np.any(src == dst):
                i = int(src[src == dst][0])
                raise SpecError(f"self-loop edge ({i},{i}) not allowed")
            if not np.all(np.isfinite(rates)) or np.any(rates <= 0):
                raise SpecError("edge rates must be finite and strictly positive")
        key = src * K + dst
        order = np.argsort(key, kind="stable")
        key = key[order]
        if key.size > 1 and np.any(key[1:] == key[:-1]):
            k = int(key[1:][key[1:] == key[:-1]][0])
            raise SpecError(f"duplicate edge ({k // K},{k % K})")
        src, dst, rates = src[order], dst[order], rates[order]

        out_indptr = np.zeros(K + 1, dtype=np.int64)
        np.cumsum(np.bincount(src, minlength=K), out=out_indptr[1:])
        t = np.lexsort((src, dst))
        in_indptr = np.zeros(K + 1, dtype=np.int64)
        np.cumsum(np.bincount(dst, minlength=K), out=in_indptr[1:])

        beta = _node_vector(self_rates, K, "self_rates")
        gamma = _node_vector(recovery_rates, K, "recovery_rates")
        return cls(
            node_count=K,
            out_indptr=_frozen(out_indptr, np.int64),
            out_indices=_frozen(dst, np.int64),
            out_rates=_frozen(rates, np.float64),
            in_indptr=_frozen(in_indptr, np.int64),
            in_indices=_frozen(src[t], np.int64),
            in_rates=_frozen(rates[t], np.float64),
            self_rates=_frozen(beta, np.float64),
            recovery_rates=_frozen(gamma, np.float64),
            weighted=weighted,
        )

    # -- derived views -------------------------------------------------

    @property
    def edge_count(self) -> int:
        return int(self.out_indices.size)

    @cached_property
    def edge_sources(self) -> np.ndarray:
        return _frozen(np.repeat(np.arange(self.node_count), np.diff(self.out_indptr)),
                       np.int64)

    def edges(self):
        """Return ``(src, dst, rate)`` arrays in CSR order."""
        return self.edge_sources, self.out_indices, self.out_rates

    @cached_property
    def out_degrees(self) -> np.ndarray:
        return _frozen(np.diff(self.out_indptr), np.int64)

    @property
    def max_out_degree(self) -> int:
        return int(self.out_degrees.max()) if self.node_count else 0

    @property
    def max_rate(self) -> float:
        return float(self.out_rates.max()) if self.edge_count else 0.0

    @property
    def min_rate(self) -> float:
        return float(self.out_rates.min()) if self.edge_count else 0.0

    @property
    def has_self_activation(self) -> bool:
        return bool(np.any(self.self_rates > 0))

    @property
    def has_recovery(self) -> bool:
        return bool(np.any(self.recovery_rates > 0))

    def out_neighbors(self, i: int):
        a, b = self.out_indptr[i], self.out_indptr[i + 1]
        return self.out_indices[a:b], self.out_rates[a:b]

    def in_neighbors(self, i: int):
        a, b = self.in_indptr[i], self.in_indptr[i + 1]
        return self.in_indices[a:b], self.in_rates[a:b]

    def adjacency(self) -> sp.csr_matrix:
        """Rate matrix ``alpha`` as a scipy CSR matrix (rows = sources)."""
        return sp.csr_matrix(
            (np.array(self.out_rates), np.array(self.out_indices), np.array(self.out_indptr)),
            shape=(self.node_count, self.node_count))

    def with_rates(self, rates=None, self_rates=None, recovery_rates=None):
        """Copy with replaced edge rates (CSR order) and/or node rates."""
        src, dst, old = self.edges()
        return PropagationNetwork.from_edges(
            self.node_count, src, dst,
            rates=old if rates is None and self.weighted else rates,
            self_rates=self.self_rates if self_rates is None else self_rates,
            recovery_rates=self.recovery_rates if recovery_rates is None else recovery_rates,
        )

    def reachable_mask(self, sources) -> np.ndarray:
        """Nodes reachable from ``sources`` or by self-activation."""
        d = shortest_activation_distances(self, sources)
        return np.isfinite(d)

    def __repr__(self):
        return (f"PropagationNetwork(K={self.node_count}, edges={self.edge_count}, "
                f"self_activation={self.has_self_activation}, recovery={self.has_recovery})")


def _node_vector(values, K, name):
    if values is None:
        return np.zeros(K)
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.shape != (K,):
        raise SpecError(f"{name} must have length {K}")
    if not np.all(np.isfinite(v)) or np.any(v < 0):
        raise SpecError(f"{name} must be finite and nonnegative")
    return v


# -- set rates ----------------------------------------------------------

def frontier_rate(net: PropagationNetwork, U) -> float:
    """Total activation rate from the active set ``U`` into inactive nodes.

    ``alpha(U) = sum_{i in U} sum_{j in out(i), j not in U} alpha_ij``.
    """
    mask = as_nodeset(net, U).mask
    src, dst, rate = net.edges()
    sel = mask[src] & ~mask[dst]
    return float(rate[sel].sum())


def aggregate_self_rate(net: PropagationNetwork, U) -> float:
    return float(net.self_rates[as_nodeset(net, U).ids].sum())


def aggregate_recovery_rate(net: PropagationNetwork, U) -> float:
    return float(net.recovery_rates[as_nodeset(net, U).ids].sum())


# -- distances ----------------------------------------------------------

def shortest_activation_distances(net: PropagationNetwork, sources) -> np.ndarray:
    """Multi-source shortest distances under edge length ``1 / alpha_ij``.

    Sources sit at distance 0. Nodes with ``beta_i > 0`` are additionally
    reachable from a virtual super-source through an edge of length
    ``1 / beta_i``. Unreachable nodes get ``inf``.
    """
    S = as_nodeset(net, sources)
    K = net.node_count
    beta = net.self_rates
    if len(S) == 0 and not np.any(beta > 0):
        raise PreconditionError("empty source set without self-activation: nothing propagates")
    src, dst, rate = net.edges()
    selfish = np.flatnonzero(beta > 0)
    if selfish.size:
        # virtual super-source is node K
        rows = np.concatenate([src, np.full(selfish.size, K)])
        cols = np.concatenate([dst, selfish])
        w = np.concatenate([1.0 / rate, 1.0 / beta[selfish]])
        n = K + 1
        origins = np.concatenate([S.ids, [K]])
    else:
        rows, cols, w, n = src, dst, 1.0 / rate, K
        origins = S.ids
    graph = sp.csr_matrix((w, (rows, cols)), shape=(n, n))
    d = dijkstra(graph, directed=True, indices=origins, min_only=True)
    d = np.asarray(d[:K], dtype=np.float64)
    d[S.ids] = 0.0
    return d


def ascending_activation_order(net: PropagationNetwork, sources, distances=None) -> np.ndarray:
    """Node ids sorted by distance from ``sources``; ties by ascending id."""
    d = shortest_activation_distances(net, sources) if distances is None else np.asarray(distances)
    return np.lexsort((np.arange(net.node_count), d))


# -- file formats -------------------------------------------------------

def _data_lines(path):
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            yield lineno, line


def _parse_fields(line, lineno, path, n, kinds):
    parts = line.split(",")
    if len(parts) != n:
        raise FormatError(f"expected {n} comma-separated fields, got {len(parts)}",
                          line=lineno, path=path)
    out = []
    for p, kind in zip(parts, kinds):
        try:
            out.append(kind(p.strip()))
        except ValueError:
            raise FormatError(f"cannot parse {p.strip()!r} as {kind.__name__}",
                              line=lineno, path=path) from None
    return out


def read_edge_list(path, node_count: int | None = None, attributes=None) -> PropagationNetwork:
    """Read ``src,dst,rate`` lines. Lines starting with ``#`` are skipped.

    A ``# nodes=<K>`` header fixes the node count (isolated tail nodes);
    otherwise ``K`` is one more than the largest id seen.
    """
    header_k = None
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            s = raw.strip()
            if s.startswith("#") and s[1:].strip().startswith("nodes="):
                try:
                    header_k = int(s[1:].strip()[len("nodes="):])
                except ValueError:
                    raise FormatError("bad '# nodes=' header", line=lineno, path=path) from None
    src, dst, rate = [], [], []
    for lineno, line in _data_lines(path):
        i, j, a = _parse_fields(line, lineno, path, 3, (int, int, float))
        src.append(i)
        dst.append(j)
        rate.append(a)
    K = node_count or header_k or ((max(max(src), max(dst)) + 1) if src else 1)
    beta = gamma = None
    if attributes is not None:
        beta, gamma = read_node_attributes(attributes, K)
    return PropagationNetwork.from_edges(K, src, dst, rate, self_rates=beta, recovery_rates=gamma)


def write_edge_list(net: PropagationNetwork, path, header: Sequence[str] = ()):
    src, dst, rate = net.edges()
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for h in header:
            fh.write(f"# {h}\n")
        fh.write(f"# nodes={net.node_count}\n")
        fh.write("".join(f"{i},{j},{format_float(a)}\n"
                         for i, j, a in zip(src.tolist(), dst.tolist(), rate.tolist())))


def read_node_attributes(path, node_count: int):
    beta = np.zeros(node_count)
    gamma = np.zeros(node_count)
    seen = set()
    for lineno, line in _data_lines(path):
        i, b, g = _parse_fields(line, lineno, path, 3, (int, float, float))
        if not 0 <= i < node_count:
            raise FormatError(f"node id {i} out of range", line=lineno, path=path)
        if i in seen:
            raise FormatError(f"duplicate node {i}", line=lineno, path=path)
        seen.add(i)
        beta[i], gamma[i] = b, g
    return beta, gamma


def write_node_attributes(net: PropagationNetwork, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("# node,beta,gamma\n")
        for i in range(net.node_count):
            b, g = net.self_rates[i], net.recovery_rates[i]
            if b or g:
                fh.write(f"{i},{format_float(b)},{format_float(g)}\n")
