"""Numba kernels for the direct-method simulation and grid counting."""

import numpy as np
from numba import njit

ACTIVATE = 1
RECOVER = 2


@njit(cache=True, nogil=True)
def _fenwick_build(w, tree):
    n = w.size
    tree[0] = 0.0
    for i in range(n):
        tree[i + 1] = w[i]
    for i in range(1, n + 1):
        j = i + (i & -i)
        if j <= n:
            tree[j] += tree[i]


@njit(cache=True, nogil=True)
def _fenwick_add(tree, i, delta):
    n = tree.size - 1
    i += 1
    while i <= n:
        tree[i] += delta
        i += i & -i


@njit(cache=True, nogil=True)
def _fenwick_total(tree):
    n = tree.size - 1
    s = 0.0
    i = n
    while i > 0:
        s += tree[i]
        i -= i & -i
    return s


@njit(cache=True, nogil=True)
def _fenwick_find(tree, target):
    # smallest index whose inclusive prefix sum exceeds target
    n = tree.size - 1
    pos = 0
    step = 1
    while step * 2 <= n:
        step *= 2
    rem = target
    while step > 0:
        nxt = pos + step
        if nxt <= n and tree[nxt] <= rem:
            pos = nxt
            rem -= tree[nxt]
        step //= 2
    return pos


@njit(cache=True, nogil=True)
def _pick_linear(w, target):
    acc = 0.0
    last = -1
    for i in range(w.size):
        if w[i] > 0.0:
            last = i
            acc += w[i]
            if acc > target:
                return i
    return last


@njit(cache=True, nogil=True)
def simulate_batch(indptr, indices, rates, beta, gamma, sources, horizon, U,
                   out_time, out_node, out_kind, out_count, status):
    """Simulate one cascade per row of the uniform buffer ``U``.

    Node weight is ``beta_j + sum of active in-neighbour rates`` while
    inactive and ``gamma_j`` while active, so the Fenwick total is
    ``alpha(U) + beta(U^c) + gamma(U)``. Each event draws one uniform for the
    waiting time and one for the selection. ``status`` is 1 when a row ran
    out of uniforms before the horizon or absorption.
    """
    B, L = U.shape
    K = beta.size
    active = np.zeros(K, dtype=np.bool_)
    pressure = np.zeros(K)
    n_in = np.zeros(K, dtype=np.int64)
    w = np.zeros(K)
    tree = np.zeros(K + 1)
    cap = out_time.shape[1]
    rebuild_every = max(K, 64)
    for b in range(B):
        active[:] = False
        pressure[:] = 0.0
        n_in[:] = 0
        ne = 0
        for s in sources:
            active[s] = True
            out_time[b, ne] = 0.0
            out_node[b, ne] = s
            out_kind[b, ne] = ACTIVATE
            ne += 1
            for e in range(indptr[s], indptr[s + 1]):
                j = indices[e]
                pressure[j] += rates[e]
                n_in[j] += 1
        n_pos = 0
        for j in range(K):
            w[j] = gamma[j] if active[j] else beta[j] + pressure[j]
            if w[j] > 0.0:
                n_pos += 1
        _fenwick_build(w, tree)
        t = 0.0
        pos = 0
        since_rebuild = 0
        status[b] = 0
        while n_pos > 0:
            total = _fenwick_total(tree)
            if total <= 0.0:
                break
            if pos >= L:
                status[b] = 1
                break
            t += -np.log1p(-U[b, pos]) / total
            pos += 1
            if t > horizon:
                break
            if pos >= L or ne >= cap:
                status[b] = 1
                break
            target = U[b, pos] * total
            pos += 1
            i = _fenwick_find(tree, target)
            if i >= K or w[i] <= 0.0:
                i = _pick_linear(w, target)
                if i < 0:
                    break
            if not active[i]:
                # activation
                active[i] = True
                new = gamma[i]
                _fenwick_add(tree, i, new - w[i])
                if new <= 0.0:
                    n_pos -= 1
                w[i] = new
                for e in range(indptr[i], indptr[i + 1]):
                    j = indices[e]
                    pressure[j] += rates[e]
                    n_in[j] += 1
                    if not active[j]:
                        if w[j] <= 0.0:
                            n_pos += 1
                        w[j] += rates[e]
                        _fenwick_add(tree, j, rates[e])
                out_kind[b, ne] = ACTIVATE
            else:
                active[i] = False
                for e in range(indptr[i], indptr[i + 1]):
                    j = indices[e]
                    n_in[j] -= 1
                    pressure[j] = pressure[j] - rates[e] if n_in[j] > 0 else 0.0
                    if not active[j]:
                        new = beta[j] + pressure[j]
                        if new < 0.0:
                            new = 0.0
                        if w[j] > 0.0 and new <= 0.0:
                            n_pos -= 1
                        _fenwick_add(tree, j, new - w[j])
                        w[j] = new
                new = beta[i] + pressure[i]
                if new < 0.0:
                    new = 0.0
                if w[i] > 0.0 and new <= 0.0:
                    n_pos -= 1
                elif w[i] <= 0.0 and new > 0.0:
                    n_pos += 1
                _fenwick_add(tree, i, new - w[i])
                w[i] = new
                out_kind[b, ne] = RECOVER
            out_time[b, ne] = t
            out_node[b, ne] = i
            ne += 1
            since_rebuild += 1
            if since_rebuild >= rebuild_every:
                _fenwick_build(w, tree)
                since_rebuild = 0
        out_count[b] = ne


@njit(cache=True, nogil=True)
def count_on_grid(offsets, times, kinds, grid, node_count, counts, totals):
    """Histogram of active-node counts at each grid time, over all cascades."""
    n = offsets.size - 1
    M = grid.size
    for c in range(n):
        a = offsets[c]
        b = offsets[c + 1]
        ptr = a
        level = 0
        for m in range(M):
            tm = grid[m]
            while ptr < b and times[ptr] <= tm:
                if kinds[ptr] == ACTIVATE:
                    level += 1
                else:
                    level -= 1
                ptr += 1
            counts[m, level] += 1
            totals[m] += level
