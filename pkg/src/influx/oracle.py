"""Exact configuration-space chain for small networks and error-bound checks.

The full chain lives on the ``2^K`` subsets of active nodes (bit i of the
state index is node i). Transient probabilities come from uniformization,
and the lumped quantities (``rho_k``, exact ``q_k(t)``, ``r_k(t)``) are
weighted sums over states of equal popcount.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.stats import poisson

from .errors import ResourceError, SpecError
from .fpe.profile import RateProfile
from .fpe.solvers import solve_rk4
from .graph import PropagationNetwork, as_nodeset

__all__ = ["FullStateChain", "ExactDensity", "exact_density", "exact_rates", "verify_bounds",
           "BoundReport", "lemma_threshold", "envelope_factor", "STATE_LIMIT"]

STATE_LIMIT = 16
TRUNCATION = 1e-10
# uniformization intervals are split so that Lambda * dt stays below this
MAX_POISSON_MEAN = 50.0
# lumped states below this probability have no defined conditional rate
UNDEFINED_BELOW = 1e-12


class FullStateChain:
    """Continuous-time chain on all activation configurations.

    Parameters
    ----------
    net : PropagationNetwork
    sources : iterable of int
        Active set at ``t = 0``.
    limit : int
        Largest accepted K.
    memory_limit : float
        Refuse to build when the estimated footprint exceeds this many bytes.
    """

    def __init__(self, net: PropagationNetwork, sources, limit: int = STATE_LIMIT,
                 memory_limit: float = 2e9):
        K = net.node_count
        if K > limit:
            raise ResourceError(f"exact chain limited to K <= {limit} (got K={K})")
        n = 1 << K
        # bits matrix, activation rate matrix, generator entries
        est = n * K * (8 + 8 + 3 * 12)
        if est > memory_limit:
            raise ResourceError(f"exact chain needs about {est / 1e9:.1f} GB")
        self.net = net
        self.sources = as_nodeset(net, sources)
        self.node_count = K
        self.size = n
        states = np.arange(n, dtype=np.int64)
        bits = ((states[:, None] >> np.arange(K)) & 1).astype(np.float64)
        self.popcount = bits.sum(axis=1).astype(np.int64)
        A = np.zeros((K, K))
        src, dst, rate = net.edges()
        A[src, dst] = rate
        # rate into each inactive j: alpha(j|U) + beta_j
        act = bits @ A + net.self_rates[None, :]
        act *= 1.0 - bits
        self.activation_rate = act.sum(axis=1)
        self.recovery_rate = bits @ net.recovery_rates
        rows, cols, vals = [], [], []
        for j in range(K):
            sel = (act[:, j] > 0)
            u = states[sel]
            rows.append(u)
            cols.append(u | (1 << j))
            vals.append(act[sel, j])
            g = net.recovery_rates[j]
            if g > 0:
                u = states[bits[:, j] > 0]
                rows.append(u)
                cols.append(u & ~(1 << j))
                vals.append(np.full(u.size, g))
        rows = np.concatenate(rows) if rows else np.zeros(0, dtype=np.int64)
        cols = np.concatenate(cols) if cols else np.zeros(0, dtype=np.int64)
        vals = np.concatenate(vals) if vals else np.zeros(0)
        self.exit_rate = self.activation_rate + self.recovery_rate
        off = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
        self.generator = (off - sp.diags(self.exit_rate)).tocsr()
        self._offT = off.T.tocsr()
        self.initial_state = int(sum(1 << int(i) for i in self.sources.ids))

    def initial(self):
        p = np.zeros(self.size)
        p[self.initial_state] = 1.0
        return p

    def lump(self, P):
        """``rho_k = sum_{|U| = k} P(U)`` along the last axis."""
        P = np.asarray(P)
        out = np.zeros(P.shape[:-1] + (self.node_count + 1,))
        for k in range(self.node_count + 1):
            out[..., k] = P[..., self.popcount == k].sum(axis=-1)
        return out

    def transient(self, times, p0=None, tol: float = TRUNCATION):
        """Probabilities at every time of an increasing grid starting at ``times[0]``.

        Each step is split into pieces with ``Lambda dt <= 50`` and the
        Poisson series is truncated once the remaining weight is below
        ``tol``.
        """
        times = np.asarray(times, dtype=np.float64)
        if np.any(np.diff(times) < 0):
            raise SpecError("time grid must be nondecreasing")
        p = self.initial() if p0 is None else np.array(p0, dtype=np.float64)
        lam = float(self.exit_rate.max())
        out = np.empty((times.size, self.size))
        out[0] = p
        for m in range(1, times.size):
            dt = times[m] - times[m - 1]
            if lam > 0 and dt > 0:
                pieces = max(1, math.ceil(lam * dt / MAX_POISSON_MEAN))
                for _ in range(pieces):
                    p = self._uniformized(p, lam, lam * dt / pieces, tol)
            out[m] = p
        return out

    def _uniformized(self, p, lam, mean, tol):
        # p P = p + (p offdiag - p * exit) / lam
        n_max = int(poisson.isf(tol, mean)) + 1
        w = poisson.pmf(np.arange(n_max + 1), mean)
        acc = w[0] * p
        term = p
        scale = 1.0 - self.exit_rate / lam
        for n in range(1, n_max + 1):
            term = self._offT @ term / lam + term * scale
            acc += w[n] * term
        np.maximum(acc, 0.0, out=acc)
        return acc / acc.sum()


@dataclass
class ExactDensity:
    times: np.ndarray
    rho: np.ndarray
    prob: np.ndarray
    chain: FullStateChain = field(repr=False)

    @property
    def sigma(self):
        return self.rho @ np.arange(self.rho.shape[1], dtype=np.float64)


def exact_density(net: PropagationNetwork, sources, times, limit: int = STATE_LIMIT,
                  chain: FullStateChain | None = None) -> ExactDensity:
    """Lumped ``rho_k(t)`` and raw configuration probabilities ``Pr(t; U)``.

    ``times`` must start at 0 or later; the chain is started at ``t = 0``.
    """
    times = np.atleast_1d(np.asarray(times, dtype=np.float64))
    if times[0] < 0 or np.any(np.diff(times) <= 0):
        raise SpecError("time grid must be nonnegative and strictly increasing")
    chain = FullStateChain(net, sources, limit) if chain is None else chain
    grid = times if times[0] == 0 else np.concatenate([[0.0], times])
    P = chain.transient(grid)
    if grid is not times:
        P = P[1:]
    return ExactDensity(times, chain.lump(P), P, chain)


def exact_rates(net: PropagationNetwork, sources, times, limit: int = STATE_LIMIT,
                density: ExactDensity | None = None) -> RateProfile:
    """Exact time-varying count-chain rates.

    ``q_k(t) = sum_{|U|=k} [alpha(U) + beta(U^c)] Pr(t; U) / rho_k(t)`` and
    likewise ``r_k(t)`` with ``gamma(U)``. Entries with ``rho_k(t) < 1e-12``
    are undefined (NaN in the profile, False in ``defined``). Defined entries
    are clipped into the range of their convex combination to remove
    rounding noise.
    """
    if density is None:
        density = exact_density(net, sources, times, limit)
    chain = density.chain
    K = chain.node_count
    P = density.prob
    rho = density.rho
    pc = chain.popcount
    T = P.shape[0]
    q = np.full((T, K), np.nan)
    r = np.zeros((T, K))
    ok = rho >= UNDEFINED_BELOW
    for k in range(K + 1):
        sel = pc == k
        Pk = P[:, sel]
        if k < K:
            c = chain.activation_rate[sel]
            q[ok[:, k], k] = np.clip((Pk @ c)[ok[:, k]] / rho[ok[:, k], k], c.min(), c.max())
        if k > 0 and net.has_recovery:
            g = chain.recovery_rate[sel]
            r[:, k - 1] = np.nan
            r[ok[:, k], k - 1] = np.clip((Pk @ g)[ok[:, k]] / rho[ok[:, k], k], g.min(), g.max())
    # one mask for both rates: cell k needs states k and (with recovery) k+1
    mask = ~(np.isnan(q) | np.isnan(r))
    q_out = np.where(mask, q, np.nan)
    r_out = np.where(mask, r, np.nan)
    meta = {"method": "exact", "source_count": len(chain.sources)}
    return RateProfile(q_out, r_out, times=density.times, defined=mask, meta=meta)


# -- error bounds -------------------------------------------------------

def lemma_threshold(eps, t, k, K, alpha_hi, d_bar):
    """``min{log(1+eps/2) / (alpha_hi k t min(d_bar, K-k)), eps / (2+eps)}``."""
    t = np.asarray(t, dtype=np.float64)
    denom = alpha_hi * k * t * min(d_bar, K - k)
    with np.errstate(divide="ignore"):
        first = np.where(denom > 0, math.log1p(eps / 2) / np.where(denom > 0, denom, 1.0), np.inf)
    return np.minimum(first, eps / (2 + eps))


def c_K(t, K, q_bar, divisor=None):
    """``(1/divisor) sum_{j<K} (K-j)/j! (q_bar t)^j`` with ``divisor = K`` by default."""
    x = q_bar * np.asarray(t, dtype=np.float64)[..., None]
    j = np.arange(K)
    fact = np.array([math.factorial(i) for i in j], dtype=np.float64)
    terms = (K - j) / fact * x ** j
    return terms.sum(axis=-1) / (K if divisor is None else divisor)


def envelope_factor(eps, K):
    return (1 + eps) ** K - 1


@dataclass
class BoundReport:
    """Numerical check of the relative-influence error bounds.

    Arrays are indexed ``[time]`` or ``[time, k]``. ``hypothesis[m]`` is
    True when ``max_{s <= t_m} delta_k(s) <= threshold_k(t_m)`` for every k
    with a defined exact rate. ``passed[m]`` is False only where the
    hypothesis holds and the measured error exceeds the envelope.
    """

    times: np.ndarray
    eps: float
    delta: np.ndarray
    threshold: np.ndarray
    hypothesis: np.ndarray
    sigma_exact: np.ndarray
    sigma_hat: np.ndarray
    rel_error: np.ndarray
    envelope: np.ndarray
    envelope_sources: np.ndarray
    c_K: np.ndarray
    corollary_threshold: np.ndarray
    passed: np.ndarray
    params: dict

    @property
    def all_passed(self) -> bool:
        return bool(self.passed.all())

    def to_dict(self):
        def clean(a):
            a = np.asarray(a)
            if a.dtype == bool:
                return a.tolist()
            return [None if not np.isfinite(x) else float(x) for x in a.ravel()] if a.ndim == 1 else \
                [clean(row) for row in a]
        return {
            "eps": self.eps, "params": self.params, "times": clean(self.times),
            "delta": clean(self.delta), "threshold": clean(self.threshold),
            "hypothesis": clean(self.hypothesis), "sigma_exact": clean(self.sigma_exact),
            "sigma_hat": clean(self.sigma_hat), "rel_error": clean(self.rel_error),
            "envelope": clean(self.envelope), "envelope_sources": clean(self.envelope_sources),
            "c_K": clean(self.c_K), "corollary_threshold": clean(self.corollary_threshold),
            "passed": clean(self.passed), "all_passed": self.all_passed,
        }

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), **kw)


def verify_bounds(net: PropagationNetwork, sources, q_hat: RateProfile, eps: float, times,
                  exact: RateProfile | None = None, density: ExactDensity | None = None,
                  decay: float | None = None, step: float | None = None,
                  limit: int = STATE_LIMIT) -> BoundReport:
    """Compare the influence predicted from ``q_hat`` with the exact one.

    Computes ``delta_k(t) = |q_hat_k - q_k(t)| / q_k(t)`` against the exact
    rates, the per-k threshold, the measured ``|sigma_hat - sigma| / sigma``
    and the envelope ``[(1+eps)^K - 1] min{1, c_K(t) e^{-a t}}``. Here
    ``a`` is the smaller of the least edge rate and the least exact
    ``q_k(t)`` for reachable k, ``q_bar`` the largest exact ``q_k(t)`` on the
    grid. ``envelope_sources`` uses ``|S|`` instead of K in front of the sum
    in ``c_K``. The corollary threshold uses decay ``c = decay`` (default
    ``a / 2``) and target ``eps``.
    """
    S = as_nodeset(net, sources)
    times = np.atleast_1d(np.asarray(times, dtype=np.float64))
    if not 0 < eps < 1:
        raise SpecError("eps must lie in (0, 1)")
    if density is None:
        density = exact_density(net, S, times, limit)
    if exact is None:
        exact = exact_rates(net, S, times, density=density)
    K = net.node_count
    if q_hat.node_count != K:
        raise SpecError("rate profile size does not match the network")
    T = times.size
    q_ex = exact.q
    qh = np.array([q_hat.at(t)[0] for t in times])
    relevant = exact.defined & (np.nan_to_num(q_ex) > 0)
    with np.errstate(invalid="ignore", divide="ignore"):
        delta = np.where(relevant, np.abs(qh - np.nan_to_num(q_ex)) / np.where(relevant, q_ex, 1.0), np.nan)
    alpha_hi = net.max_rate if net.edge_count else 0.0
    d_bar = net.max_out_degree
    thr = np.empty((T, K))
    for k in range(K):
        thr[:, k] = lemma_threshold(eps, times, k, K, alpha_hi, d_bar)
    running = np.fmax.accumulate(np.where(np.isnan(delta), -np.inf, delta), axis=0)
    hyp = np.all((running <= thr) | ~np.isfinite(running), axis=1)

    sig = density.sigma
    solve_grid = times if times[0] == 0 else np.concatenate([[0.0], times])
    rho0 = np.zeros(K + 1)
    rho0[len(S)] = 1.0
    traj = solve_rk4(q_hat, rho0, solve_grid, step=step, keep_density=False)
    sig_hat = traj.sigma if solve_grid is times else traj.sigma[1:]
    rel = np.abs(sig_hat - sig) / np.maximum(sig, 1e-300)

    q_rel = np.where(relevant, q_ex, np.nan)
    q_bar = float(np.nanmax(q_rel)) if relevant.any() else 0.0
    q_lo = float(np.nanmin(q_rel)) if relevant.any() else 0.0
    a_lo = min(net.min_rate, q_lo) if net.edge_count else q_lo
    fac = envelope_factor(eps, K)
    cK = c_K(times, K, q_bar)
    cS = c_K(times, K, q_bar, divisor=max(len(S), 1))
    env = fac * np.minimum(1.0, cK * np.exp(-a_lo * times))
    env_s = fac * np.minimum(1.0, cS * np.exp(-a_lo * times))
    passed = ~hyp | (rel <= env_s + 1e-9)

    c = a_lo / 2 if decay is None else float(decay)
    cor = np.full((T, K), np.nan)
    for k in range(1, K):
        qk = alpha_hi * k * min(d_bar, K - k)
        if qk <= 0 or c <= 0:
            continue
        with np.errstate(divide="ignore", invalid="ignore"):
            cor[:, k] = (a_lo - c) / (K * qk) + (math.log(eps) - K * math.log(2)
                                                 - np.log(cK)) / (K * qk * times)
    params = {"K": K, "source_count": len(S), "alpha_max": alpha_hi, "alpha_min": a_lo,
              "d_bar": int(d_bar), "q_bar": q_bar, "envelope_factor": fac, "decay": c}
    return BoundReport(times, eps, delta, thr, hyp, sig, sig_hat, rel, env, env_s, cK, cor,
                       passed, params)
