"""Constant-in-time estimators of the count-chain rates.

Both estimators approximate ``q_k(t)``, a probability-weighted average of
``alpha(U) + beta(U^c)`` over active sets of size ``k``, by a few
representative sets: the distance prefix (``rates_dist``) or the most
likely sets of the embedded jump chain (``rates_tree``).
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass

import numpy as np

from ..errors import PreconditionError, SpecError
from ..graph import (PropagationNetwork, as_nodeset, ascending_activation_order,
                     shortest_activation_distances)
from .profile import RateProfile

__all__ = ["rates_dist", "rates_tree", "SubsetCandidate", "prefix_rates"]


def prefix_rates(net: PropagationNetwork, order):
    """Rates of the nested prefix sets ``U_k = order[:k]``.

    Returns ``(alpha, beta_out, gamma_in)`` of length K+1 with
    ``alpha[k] = alpha(U_k)``, ``beta_out[k] = beta(U_k^c)`` and
    ``gamma_in[k] = gamma(U_k)``. An edge ``(i, j)`` crosses the frontier of
    ``U_k`` exactly for ``pos_i < k <= pos_j``, so a difference array gives
    all prefixes in ``O(K + |E|)``.
    """
    K = net.node_count
    order = np.asarray(order, dtype=np.int64)
    pos = np.empty(K, dtype=np.int64)
    pos[order] = np.arange(K)
    src, dst, rate = net.edges()
    a, b = pos[src], pos[dst]
    fwd = a < b
    diff = np.zeros(K + 2)
    np.add.at(diff, a[fwd] + 1, rate[fwd])
    np.add.at(diff, b[fwd] + 1, -rate[fwd])
    alpha = np.cumsum(diff)[:K + 1]
    beta_sorted = net.self_rates[order]
    beta_out = np.concatenate([np.cumsum(beta_sorted[::-1])[::-1], [0.0]])
    gamma_in = np.concatenate([[0.0], np.cumsum(net.recovery_rates[order])])
    return alpha, beta_out, gamma_in


def rates_dist(net: PropagationNetwork, sources) -> RateProfile:
    """Rates from the shortest-distance prefix sets.

    ``U_k`` holds the k nodes closest to the sources under edge length
    ``1 / alpha_ij`` (ties by id), and ``q_k = alpha(U_k) + beta(U_k^c)``.
    Without recovery the states below ``|S|`` are never visited and get
    ``q_k = 0``; states past the reachable count are absorbing. With
    recovery, ``r_k = gamma(U_k)``.
    """
    S = as_nodeset(net, sources)
    d = shortest_activation_distances(net, S)
    order = ascending_activation_order(net, S, d)
    alpha, beta_out, gamma_in = prefix_rates(net, order)
    K = net.node_count
    q = np.clip(alpha[:K] + beta_out[:K], 0.0, None)
    reach = int(np.isfinite(d).sum())
    q[reach:] = 0.0
    recovery = net.has_recovery
    if not recovery:
        q[:len(S)] = 0.0
    r = gamma_in[1:].copy() if recovery else np.zeros(K)
    meta = {"method": "dist", "source_count": len(S), "reachable": reach}
    return RateProfile(q, r, meta=meta)


@dataclass
class SubsetCandidate:
    """An active set in one layer of the branching construction.

    ``mask`` is the set as an integer bitmask and ``p`` its (unnormalised)
    jump-chain probability. ``pressure[j]`` caches ``alpha(j|U)``, the rate
    from ``U`` into node j, and ``active`` the membership vector.
    """

    mask: int
    p: float
    pressure: np.ndarray
    active: np.ndarray

    def weights(self, beta):
        """Per-node activation rates ``alpha(j|U) + beta_j`` of inactive nodes."""
        return np.where(self.active, 0.0, self.pressure + beta)

    @property
    def ids(self):
        return _ids(self.mask)


def _ids(mask: int):
    out = []
    i = 0
    while mask:
        if mask & 1:
            out.append(i)
        mask >>= 1
        i += 1
    return tuple(out)


def _width_at(m, k):
    if callable(m):
        w = m(k)
    elif np.ndim(m):
        # a short schedule keeps its last width
        w = m[min(k, len(m) - 1)]
    else:
        w = m
    w = int(w)
    if w < 1:
        raise SpecError("tree width must be >= 1")
    return w


def _width_meta(m):
    if callable(m):
        return getattr(m, "__name__", "callable")
    return int(m) if np.ndim(m) == 0 else [int(x) for x in m]


def _select(children, width):
    """Top ``width`` of ``{mask: p}`` by probability, ties by sorted ids."""
    if len(children) <= width:
        items = list(children.items())
    else:
        probs = np.fromiter(children.values(), dtype=np.float64, count=len(children))
        cut = np.partition(probs, len(probs) - width)[len(probs) - width]
        items = [(u, p) for u, p in children.items() if p >= cut]
        if len(items) > width:
            items = heapq.nsmallest(width, items, key=lambda it: (-it[1], _ids(it[0])))
    items.sort(key=lambda it: (-it[1], _ids(it[0])))
    return items


def rates_tree(net: PropagationNetwork, sources, m=64) -> RateProfile:
    """Rates from the most likely active sets of the embedded jump chain.

    Starting from ``{S}`` with probability 1, every candidate ``U`` in layer
    k spawns ``U + {j}`` with probability ``p(U) (alpha(j|U) + beta_j) /
    (alpha(U) + beta(U^c))``. Children reached from several parents are
    merged by summing, and the ``m`` most probable are kept (ties broken by
    the sorted id tuple). ``q_k`` is the probability-weighted mean exit rate
    over the kept candidates, renormalised over the retained mass.

    Parameters
    ----------
    m : int, sequence or callable
        Layer width, constant or per layer ``k``. A sequence shorter than
        ``K + 1`` repeats its last entry.

    Returns
    -------
    RateProfile
        Constant profile. ``meta["retained_mass"][k]`` is the unnormalised
        probability of layer k that survived pruning and absorption
        (None below ``|S|``); ``meta["widths"]`` the candidate counts.
    """
    S = as_nodeset(net, sources)
    if len(S) == 0:
        raise PreconditionError("tree estimator needs a nonempty source set")
    if not callable(m) and np.ndim(m) == 0 and int(m) < 1:
        raise SpecError("tree width must be >= 1")
    K = net.node_count
    indptr, indices, rates = net.out_indptr, net.out_indices, net.out_rates
    beta = net.self_rates
    gamma = net.recovery_rates

    def spawn(parent, j, mask, p):
        pressure = parent.pressure.copy()
        sl = slice(indptr[j], indptr[j + 1])
        pressure[indices[sl]] += rates[sl]
        active = parent.active.copy()
        active[j] = True
        return SubsetCandidate(mask, p, pressure, active)

    active0 = np.zeros(K, dtype=bool)
    active0[S.ids] = True
    pressure0 = np.zeros(K)
    for i in S.ids:
        sl = slice(indptr[i], indptr[i + 1])
        pressure0[indices[sl]] += rates[sl]

    q = np.zeros(K)
    r = np.zeros(K)
    retained = np.full(K + 1, np.nan)
    widths = np.zeros(K + 1, dtype=np.int64)
    layer = [SubsetCandidate(sum(1 << int(i) for i in S.ids), 1.0, pressure0, active0)]
    retained[len(S)] = 1.0
    widths[len(S)] = 1
    for k in range(len(S), K + 1):
        mass = sum(c.p for c in layer)
        if k > 0 and mass > 0:
            r[k - 1] = sum(c.p * gamma[c.active].sum() for c in layer) / mass
        if k == K:
            break
        children = {}
        parent_of = {}
        wq = 0.0
        for cand in layer:
            w = cand.weights(beta)
            total = w.sum()
            wq += cand.p * total
            if total <= 0:
                continue
            for j in np.flatnonzero(w > 0):
                child = cand.mask | (1 << int(j))
                children[child] = children.get(child, 0.0) + cand.p * w[j] / total
                if child not in parent_of:
                    parent_of[child] = (cand, int(j))
        q[k] = wq / mass if mass > 0 else 0.0
        if not children:
            break
        kept = _select(children, _width_at(m, k + 1))
        layer = [spawn(*parent_of[child], child, p) for child, p in kept]
        retained[k + 1] = sum(p for _, p in kept)
        widths[k + 1] = len(kept)
    meta = {"method": "tree", "source_count": len(S), "width": _width_meta(m),
            "retained_mass": [None if np.isnan(x) else x for x in retained.tolist()],
            "widths": widths.tolist()}
    return RateProfile(q, r if net.has_recovery else None, meta=meta)
