"""Solvers for the forward equation ``rho'(t) = rho(t) A(t)`` of the count chain."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import cumulative_simpson
from scipy.sparse.linalg import expm_multiply

from ..curves import InfluenceCurve
from ..errors import SpecError, StabilityError, UnsupportedError
from . import _rk4
from .profile import RateProfile, StateDistribution, build_generator

__all__ = ["Trajectory", "solve_rk4", "solve_expm", "solve_closed_form", "default_step",
           "CLIP_TOL"]

CLIP_TOL = 1e-9


@dataclass
class Trajectory:
    """Solution of the forward equation on an output grid.

    ``rho`` has shape ``(T, K+1)``, or is None when the solver was asked not
    to keep densities (large K). ``sigma`` is always present.
    """

    times: np.ndarray
    sigma: np.ndarray
    rho: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return self.times.size

    def state(self, m: int) -> StateDistribution:
        if self.rho is None:
            raise SpecError("densities were not kept for this solution")
        return StateDistribution(self.rho[m], float(self.times[m]))

    def curve(self, provenance=None) -> InfluenceCurve:
        prov = dict(self.meta)
        prov.update(provenance or {})
        return InfluenceCurve(self.times.copy(), self.sigma.copy(), prov)


def _as_profile(rates) -> RateProfile:
    if isinstance(rates, RateProfile):
        return rates
    q, r = rates
    return RateProfile(q, r)


def _check_inputs(rates, rho0, times):
    prof = _as_profile(rates)
    if isinstance(rho0, StateDistribution):
        rho0 = rho0.rho
    rho0 = np.array(rho0, dtype=np.float64)
    K = prof.node_count
    if rho0.shape != (K + 1,):
        raise SpecError(f"initial distribution must have length {K + 1}")
    if np.any(~np.isfinite(rho0)) or rho0.min() < -CLIP_TOL or abs(rho0.sum() - 1.0) > 1e-6:
        raise SpecError("initial distribution must be a probability vector")
    np.maximum(rho0, 0.0, out=rho0)
    rho0 /= rho0.sum()
    times = np.atleast_1d(np.asarray(times, dtype=np.float64))
    if times.ndim != 1 or times.size == 0 or not np.all(np.isfinite(times)):
        raise SpecError("time grid must be a nonempty 1-D array of finite values")
    if np.any(np.diff(times) <= 0):
        raise SpecError("time grid must be strictly increasing")
    return prof, rho0, times


def default_step(rates) -> float:
    """Largest step with ``max_rate * h <= 0.1``; infinite for a zero profile."""
    m = _as_profile(rates).max_rate
    return 0.1 / m if m > 0 else math.inf


def solve_rk4(rates, rho0, times, step: float | None = None, keep_density: bool = True,
              max_halvings: int = 8) -> Trajectory:
    """Classical fourth-order Runge-Kutta on the tridiagonal generator.

    Each output interval is split into ``ceil(dt / h)`` equal substeps. After
    every step entries in ``[-1e-9, 0)`` are clipped and the vector is
    renormalised; a more negative entry rejects the interval, halves ``h``
    and retries, up to ``max_halvings`` times.

    Parameters
    ----------
    rates : RateProfile or (q, r)
        Constant or sampled rates. Sampled rates are interpolated linearly,
        so a profile sampled at every half step is used without interpolation
        error.
    rho0 : array_like
        Distribution at ``times[0]``.
    times : array_like
        Strictly increasing output grid.
    step : float, optional
        Nominal step ``h``; defaults to ``0.1 / max_rate``.
    keep_density : bool
        Store ``rho`` at every output time. Turn off for very large K.

    Raises
    ------
    StabilityError
        If the step cannot be made small enough to keep the mass nonnegative.
    """
    prof, rho0, times = _check_inputs(rates, rho0, times)
    K = prof.node_count
    h = default_step(prof) if step is None else float(step)
    if not h > 0:
        raise SpecError("step must be positive")
    birth_only = not prof.has_recovery
    constant = prof.kind == "constant"
    if constant:
        qp, rp = prof.padded()

    T = times.size
    sigma = np.empty(T)
    rho = np.empty((T, K + 1)) if keep_density else None
    start = rho0.copy()
    bufs = [np.empty(K + 1), np.empty(K + 1)]
    work = np.empty((3, K + 1) if not birth_only else (3, 1))
    scale = 1.0
    sigma[0] = rho0 @ np.arange(K + 1, dtype=np.float64)
    if keep_density:
        rho[0] = rho0
    halvings = 0
    worst = 0.0
    n_steps = 0

    for m in range(1, T):
        t0 = times[m - 1]
        span = times[m] - t0
        while True:
            n = 1 if math.isinf(h) else max(1, math.ceil(span / h - 1e-9))
            he = span / n
            cur, cur_scale = start, scale
            ok = True
            lo_seen = 0.0
            if constant:
                idx, tot, mom, lo_seen = _rk4.constant_run(start, scale, qp, rp, he, n, birth_only,
                                                           CLIP_TOL, bufs[0], bufs[1], work)
                ok = idx >= 0
                if ok:
                    cur, cur_scale = bufs[idx], 1.0 / tot
            else:
                for i in range(n):
                    out = bufs[i % 2]
                    ts = t0 + i * he
                    qa, ra = prof.padded(ts)
                    qb, rb = prof.padded(ts + 0.5 * he)
                    qc, rc = prof.padded(ts + he)
                    if birth_only:
                        lo, tot, mom = _rk4.birth_step(cur, cur_scale, qa, qb, qc, he, out)
                    else:
                        lo, tot, mom = _rk4.general_step(cur, cur_scale, qa, ra, qb, rb, qc, rc,
                                                         he, out, work)
                    if not (tot > 0 and np.isfinite(tot)) or lo / tot < -CLIP_TOL:
                        ok = False
                        break
                    if lo < 0:
                        lo_seen = min(lo_seen, lo / tot)
                        np.maximum(out, 0.0, out=out)
                        tot = out.sum()
                        mom = out @ np.arange(K + 1, dtype=np.float64)
                    cur, cur_scale = out, 1.0 / tot
            if ok:
                break
            halvings += 1
            if halvings > max_halvings:
                raise StabilityError(f"negative mass beyond {CLIP_TOL:g} at t={t0:.6g}",
                                     suggested_step=he / 2)
            h = he / 2
        n_steps += n
        worst = min(worst, lo_seen)
        sigma[m] = mom / tot
        if keep_density:
            np.multiply(cur, cur_scale, out=rho[m])
        # the finished buffer becomes the next interval's start
        if cur is not start:
            spare = start
            start = cur
            bufs = [b if b is not cur else spare for b in bufs]
        scale = cur_scale

    meta = {"solver": "rk4", "step": None if math.isinf(h) else h, "steps": n_steps,
            "halvings": halvings, "min_raw": worst}
    return Trajectory(times, sigma, rho, meta)


def solve_expm(rates, rho0, t):
    """``rho0 exp(t A)`` for a constant generator.

    A scalar ``t`` returns a :class:`StateDistribution`; an increasing grid
    returns a :class:`Trajectory` starting from ``rho0`` at ``t[0]``.
    """
    prof = _as_profile(rates)
    if prof.kind != "constant":
        raise UnsupportedError("matrix exponential needs a constant profile; use rk4")
    scalar = np.ndim(t) == 0
    grid = np.array([0.0, float(t)]) if scalar else t
    if scalar and float(t) == 0.0:
        grid = np.array([0.0])
    prof, rho0, times = _check_inputs(prof, rho0, grid)
    if scalar and float(t) < 0:
        raise SpecError("time must be nonnegative")
    AT = build_generator(prof).to_sparse("csr").T.tocsr()
    K = prof.node_count
    rho = np.empty((times.size, K + 1))
    rho[0] = rho0
    cur = rho0
    for m in range(1, times.size):
        cur = expm_multiply(AT * (times[m] - times[m - 1]), cur)
        np.maximum(cur, 0.0, out=cur)
        cur /= cur.sum()
        rho[m] = cur
    if scalar:
        return StateDistribution(rho[-1], float(t))
    sigma = rho @ np.arange(K + 1, dtype=np.float64)
    return Trajectory(times, sigma, rho, {"solver": "expm"})


def solve_closed_form(rates, rho0, times, refine: int = 8, max_rate_step: float = 0.05) -> Trajectory:
    """Evaluate the nested-integral solution of the pure-birth chain by quadrature.

    ``rho_{k}(t) = e^{-Q_k(t)} [rho_k(0) + int_0^t rho_{k-1} q_{k-1} e^{Q_k(s)} ds]``
    with ``Q_k(t) = int_0^t q_k``, computed level by level with composite
    Simpson on a refined grid. The exponential weights are re-anchored
    whenever ``Q_k`` grows by 30 to avoid overflow.

    Each output interval is split into at least ``refine`` parts and fine
    enough that ``max_rate * ds <= max_rate_step``.
    """
    prof, rho0, times = _check_inputs(rates, rho0, times)
    if prof.has_recovery:
        raise UnsupportedError("closed-form solution requires r = 0")
    K = prof.node_count
    qmax = prof.max_rate
    pieces = [times[:1]]
    out_idx = [0]
    for m in range(1, times.size):
        span = times[m] - times[m - 1]
        n = max(int(refine), math.ceil(span * qmax / max_rate_step))
        pieces.append(np.linspace(times[m - 1], times[m], n + 1)[1:])
        out_idx.append(out_idx[-1] + n)
    x = np.concatenate(pieces)
    N = x.size
    if prof.kind == "constant":
        qf = np.broadcast_to(prof.q, (N, K))
        Qf = (x - x[0])[:, None] * prof.q[None, :]
    else:
        qf = np.array([prof.at(s)[0] for s in x])
        Qf = cumulative_simpson(qf, x=x, axis=0, initial=0) if N > 1 else np.zeros((1, K))
    Qf = np.concatenate([Qf, np.zeros((N, 1))], axis=1)

    rho = np.empty((N, K + 1))
    rho[:, 0] = rho0[0] * np.exp(-Qf[:, 0])
    for k in range(1, K + 1):
        f = rho[:, k - 1] * qf[:, k - 1]
        Q = Qf[:, k]
        val = rho0[k]
        rho[0, k] = val
        b0 = 0
        while b0 < N - 1:
            b1 = int(np.searchsorted(Q, Q[b0] + 30.0, side="right")) - 1
            b1 = min(max(b1, b0 + 1), N - 1)
            seg = slice(b0, b1 + 1)
            E = np.exp(Q[seg] - Q[b0])
            integral = cumulative_simpson(f[seg] * E, x=x[seg], initial=0)
            rho[seg, k] = (val + integral) / E
            val = rho[b1, k]
            b0 = b1
    out = rho[out_idx]
    np.maximum(out, 0.0, out=out)
    out /= out.sum(axis=1, keepdims=True)
    sigma = out @ np.arange(K + 1, dtype=np.float64)
    return Trajectory(times, sigma, out, {"solver": "closed_form", "fine_points": N})
