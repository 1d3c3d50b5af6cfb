"""Numba kernels for one classical RK4 step of ``rho' = rho A`` with tridiagonal ``A``.

Rates are passed padded to length K+1: ``qp[k]`` is the rate k -> k+1
(``qp[K] = 0``) and ``rp[k]`` the rate k -> k-1 (``rp[0] = 0``). The three
rate arrays per kind hold the values at ``t``, ``t + h/2`` and ``t + h``.
Every kernel reads ``scale * rho_in`` so that renormalisation of the previous
step is folded into the next one, and returns ``(min, sum, first moment)`` of
the raw output.
"""

import numpy as np
from numba import njit

# outputs below this are flushed to zero; subnormal arithmetic is very slow
TINY = 1e-280


@njit(cache=True, nogil=True, fastmath={"reassoc", "contract"})
def birth_step(rho_in, scale, qa, qb, qc, h, rho_out):
    """Pure-birth RK4 step in a single pass over the states."""
    n = rho_in.size
    h2 = 0.5 * h
    h6 = h / 6.0
    # stage values of state k-1 carried along
    p_y1 = 0.0
    p_y2 = 0.0
    p_y3 = 0.0
    p_y4 = 0.0
    p_qa = 0.0
    p_qb = 0.0
    p_qc = 0.0
    lo = np.inf
    total = 0.0
    moment = 0.0
    for k in range(n):
        y1 = scale * rho_in[k]
        a = qa[k]
        b = qb[k]
        c = qc[k]
        k1 = p_qa * p_y1 - a * y1
        y2 = y1 + h2 * k1
        k2 = p_qb * p_y2 - b * y2
        y3 = y1 + h2 * k2
        k3 = p_qb * p_y3 - b * y3
        y4 = y1 + h * k3
        k4 = p_qc * p_y4 - c * y4
        v = y1 + h6 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        v = v if abs(v) >= TINY else 0.0
        rho_out[k] = v
        lo = min(lo, v)
        total += v
        moment += k * v
        p_y1 = y1
        p_y2 = y2
        p_y3 = y3
        p_y4 = y4
        p_qa = a
        p_qb = b
        p_qc = c
    return lo, total, moment


@njit(cache=True, nogil=True)
def _deriv(y, qp, rp, out):
    n = y.size
    for k in range(n):
        v = -(qp[k] + rp[k]) * y[k]
        if k > 0:
            v += qp[k - 1] * y[k - 1]
        if k + 1 < n:
            v += rp[k + 1] * y[k + 1]
        out[k] = v


@njit(cache=True, nogil=True)
def general_step(rho_in, scale, qa, ra, qb, rb, qc, rc, h, rho_out, work):
    """Birth-death RK4 step; ``work`` is a (3, K+1) scratch array."""
    n = rho_in.size
    y = work[0]
    kk = work[1]
    acc = work[2]
    for k in range(n):
        y[k] = scale * rho_in[k]
    _deriv(y, qa, ra, kk)
    for k in range(n):
        acc[k] = kk[k]
        rho_out[k] = y[k] + 0.5 * h * kk[k]
    _deriv(rho_out, qb, rb, kk)
    for k in range(n):
        acc[k] += 2.0 * kk[k]
        rho_out[k] = y[k] + 0.5 * h * kk[k]
    _deriv(rho_out, qb, rb, kk)
    for k in range(n):
        acc[k] += 2.0 * kk[k]
        rho_out[k] = y[k] + h * kk[k]
    _deriv(rho_out, qc, rc, kk)
    lo = np.inf
    total = 0.0
    moment = 0.0
    for k in range(n):
        v = y[k] + (h / 6.0) * (acc[k] + kk[k])
        v = v if abs(v) >= TINY else 0.0
        rho_out[k] = v
        lo = min(lo, v)
        total += v
        moment += k * v
    return lo, total, moment


@njit(cache=True, nogil=True)
def _clip(v):
    total = 0.0
    moment = 0.0
    for k in range(v.size):
        if v[k] < 0.0:
            v[k] = 0.0
        total += v[k]
        moment += k * v[k]
    return total, moment


@njit(cache=True, nogil=True)
def constant_run(rho_in, scale, qp, rp, h, n, birth_only, tol, a, b, work):
    """``n`` steps with constant rates, alternating between buffers ``a`` and ``b``.

    Returns ``(index, total, moment, worst)`` where ``index`` says which
    buffer holds the raw result (0 for ``a``, 1 for ``b``, -1 when a step
    went below ``-tol`` relative to its mass) and ``worst`` is the most
    negative relative entry that was clipped.
    """
    src = rho_in
    s = scale
    total = 1.0
    moment = 0.0
    worst = 0.0
    idx = 0
    for i in range(n):
        idx = i % 2
        dst = a if idx == 0 else b
        if birth_only:
            lo, total, moment = birth_step(src, s, qp, qp, qp, h, dst)
        else:
            lo, total, moment = general_step(src, s, qp, rp, qp, rp, qp, rp, h, dst, work)
        if not total > 0.0 or lo < -tol * total:
            return -1, total, moment, worst
        if lo < 0.0:
            if lo / total < worst:
                worst = lo / total
            total, moment = _clip(dst)
        src = dst
        s = 1.0 / total
    return idx, total, moment, worst
