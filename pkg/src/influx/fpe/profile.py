"""Rate profiles and the tridiagonal generator of the lumped count chain."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from ..errors import InvariantError, SpecError
from ..graph import format_float

__all__ = ["RateProfile", "Tridiagonal", "build_generator", "StateDistribution",
           "initial_distribution", "influence", "write_rates", "read_rates"]


@dataclass(frozen=True)
class RateProfile:
    """Transition rates of the count chain ``M_0 <-> M_1 <-> ... <-> M_K``.

    ``q[..., k]`` is the rate ``M_k -> M_{k+1}`` for ``k = 0..K-1`` and
    ``r[..., k-1]`` the rate ``M_k -> M_{k-1}`` for ``k = 1..K``. Constant
    profiles hold 1-D arrays. Sampled profiles hold ``(T, K)`` arrays on the
    time grid ``times``; NaN entries are allowed only where ``defined`` is
    False and are replaced by the nearest defined sample in time when the
    profile is evaluated.
    """

    q: np.ndarray
    r: np.ndarray | None = None
    times: np.ndarray | None = None
    defined: np.ndarray | None = None
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        q = np.asarray(self.q, dtype=np.float64)
        r = np.zeros_like(q) if self.r is None else np.asarray(self.r, dtype=np.float64)
        if r.shape != q.shape:
            raise SpecError("q and r must have the same shape")
        if self.times is None:
            if q.ndim != 1:
                raise SpecError("constant profile needs 1-D rate vectors")
        else:
            t = np.asarray(self.times, dtype=np.float64)
            if q.ndim != 2 or t.ndim != 1 or q.shape[0] != t.size:
                raise SpecError("sampled profile needs (T, K) rates on a length-T grid")
            if t.size > 1 and np.any(np.diff(t) <= 0):
                raise SpecError("sampled profile times must be strictly increasing")
            object.__setattr__(self, "times", t)
        if q.shape[-1] < 1:
            raise SpecError("profile needs K >= 1")
        defined = self.defined
        if defined is not None:
            defined = np.asarray(defined, dtype=bool)
            if defined.shape != q.shape:
                raise SpecError("defined mask must match rate shape")
        nan = np.isnan(q) | np.isnan(r)
        if nan.any() and (defined is None or np.any(nan & defined)):
            raise SpecError("NaN rates are only allowed in undefined entries")
        if np.any(q[~nan] < 0) or np.any(r[~nan] < 0):
            raise InvariantError("transition rates must be nonnegative")
        for a in (q, r):
            a.setflags(write=False)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "defined", defined)
        if nan.any():
            object.__setattr__(self, "_filled", (_fill_nearest(q, self.times),
                                                 _fill_nearest(r, self.times)))
        else:
            object.__setattr__(self, "_filled", (q, r))

    @property
    def kind(self) -> str:
        return "constant" if self.times is None else "sampled"

    @property
    def node_count(self) -> int:
        return self.q.shape[-1]

    @property
    def has_recovery(self) -> bool:
        return bool(np.nanmax(self.r, initial=0.0) > 0)

    @property
    def max_rate(self) -> float:
        """Largest total exit rate ``q_k + r_k`` over all states and times."""
        q, r = self._filled
        qp = np.concatenate([q, np.zeros(q.shape[:-1] + (1,))], axis=-1)
        rp = np.concatenate([np.zeros(r.shape[:-1] + (1,)), r], axis=-1)
        return float(np.max(qp + rp, initial=0.0))

    def filled(self) -> "RateProfile":
        """Profile with undefined entries replaced by the nearest defined sample."""
        qf, rf = self._filled
        if qf is self.q and rf is self.r:
            return self
        return RateProfile(qf, rf, times=self.times, defined=self.defined, meta=self.meta)

    def at(self, t: float):
        """``(q, r)`` at time ``t``; linear interpolation for sampled profiles."""
        if self.kind == "constant":
            return self.q, self.r
        q, r = self._filled
        ts = self.times
        if t <= ts[0]:
            return q[0], r[0]
        if t >= ts[-1]:
            return q[-1], r[-1]
        j = int(np.searchsorted(ts, t, side="right"))
        w = (t - ts[j - 1]) / (ts[j] - ts[j - 1])
        return (1 - w) * q[j - 1] + w * q[j], (1 - w) * r[j - 1] + w * r[j]

    def padded(self, t: float = 0.0):
        """Length ``K+1`` vectors with ``q_K = 0`` and ``r_0 = 0`` appended."""
        q, r = self.at(t)
        qp = np.empty(q.size + 1)
        qp[:-1] = q
        qp[-1] = 0.0
        rp = np.empty(r.size + 1)
        rp[0] = 0.0
        rp[1:] = r
        return qp, rp


def _fill_nearest(a, times):
    a = np.array(a, dtype=np.float64)
    ok = ~np.isnan(a)
    for k in range(a.shape[1]):
        good = np.flatnonzero(ok[:, k])
        if good.size == 0:
            a[:, k] = 0.0
            continue
        bad = np.flatnonzero(~ok[:, k])
        if bad.size == 0:
            continue
        pos = np.searchsorted(times[good], times[bad])
        lo = good[np.clip(pos - 1, 0, good.size - 1)]
        hi = good[np.clip(pos, 0, good.size - 1)]
        pick = np.where(np.abs(times[bad] - times[lo]) <= np.abs(times[hi] - times[bad]), lo, hi)
        a[bad, k] = a[pick, k]
    return a


@dataclass(frozen=True)
class Tridiagonal:
    """Generator ``A = Q + R`` stored by diagonals.

    ``lower[j] = A[j+1, j]``, ``main[j] = A[j, j]``, ``upper[j] = A[j, j+1]``.
    """

    lower: np.ndarray
    main: np.ndarray
    upper: np.ndarray

    @property
    def size(self):
        return self.main.size

    def to_sparse(self, format="csr"):
        return sp.diags([self.lower, self.main, self.upper], [-1, 0, 1],
                        shape=(self.size, self.size), format=format)

    def toarray(self):
        return self.to_sparse().toarray()

    def row_sums(self):
        s = self.main.copy()
        s[:-1] += self.upper
        s[1:] += self.lower
        return s

    def left_multiply(self, rho):
        """``rho @ A`` for a row vector ``rho``."""
        out = rho * self.main
        out[1:] += rho[:-1] * self.upper
        out[:-1] += rho[1:] * self.lower
        return out


def build_generator(rates, t: float = 0.0) -> Tridiagonal:
    """Tridiagonal ``A(t)`` with ``A[k,k+1] = q_k``, ``A[k,k-1] = r_k``, zero row sums.

    ``rates`` is a :class:`RateProfile` or a ``(q, r)`` pair of length-K arrays.
    """
    if isinstance(rates, RateProfile):
        q, r = rates.at(t)
    else:
        q, r = (np.asarray(x, dtype=np.float64) for x in rates)
        if q.shape != r.shape or q.ndim != 1:
            raise SpecError("q and r must be 1-D arrays of equal length")
        if np.any(q < 0) or np.any(r < 0) or np.isnan(q).any() or np.isnan(r).any():
            raise InvariantError("transition rates must be nonnegative")
    main = np.zeros(q.size + 1)
    main[:-1] -= q
    main[1:] -= r
    return Tridiagonal(lower=np.array(r), main=main, upper=np.array(q))


@dataclass(frozen=True)
class StateDistribution:
    """Probabilities ``rho_k(t)`` of exactly ``k`` active nodes."""

    rho: np.ndarray
    t: float = 0.0

    @property
    def node_count(self):
        return self.rho.size - 1

    @property
    def influence(self) -> float:
        return influence(self.rho)


def initial_distribution(node_count: int, active: int) -> np.ndarray:
    if not 0 <= active <= node_count:
        raise SpecError("initial active count out of range")
    rho = np.zeros(node_count + 1)
    rho[active] = 1.0
    return rho


def influence(rho) -> float | np.ndarray:
    """Expected active count ``sum_k k rho_k``; accepts a batch along axis 0."""
    if isinstance(rho, StateDistribution):
        rho = rho.rho
    rho = np.asarray(rho, dtype=np.float64)
    k = np.arange(rho.shape[-1], dtype=np.float64)
    out = rho @ k
    return float(out) if np.ndim(out) == 0 else out


def write_rates(path, rates: RateProfile, comments=()):
    """CSV ``k,q_k,r_k`` (constant) or ``t,k,q_k,r_k`` (sampled); blank = absent/undefined."""
    K = rates.node_count

    def cell(x):
        return "" if np.isnan(x) else format_float(x)

    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for c in comments:
            fh.write(f"# {c}\n")
        if rates.kind == "constant":
            fh.write("k,q_k,r_k\n")
            for k in range(K + 1):
                q = cell(rates.q[k]) if k < K else ""
                r = cell(rates.r[k - 1]) if k > 0 else ""
                fh.write(f"{k},{q},{r}\n")
        else:
            fh.write("t,k,q_k,r_k\n")
            for m, t in enumerate(rates.times):
                for k in range(K + 1):
                    q = cell(rates.q[m, k]) if k < K else ""
                    r = cell(rates.r[m, k - 1]) if k > 0 else ""
                    fh.write(f"{format_float(t)},{k},{q},{r}\n")


def read_rates(path) -> RateProfile:
    """Inverse of :func:`write_rates`. Blank interior cells become undefined entries."""
    from ..curves import read_table
    from ..errors import FormatError

    header, data, _ = read_table(path)
    if header == ["k", "q_k", "r_k"]:
        K = data.shape[0] - 1
        if K < 1 or not np.array_equal(data[:, 0], np.arange(K + 1)):
            raise FormatError("rows must list k = 0..K in order", path=path)
        q, r = data[:K, 1], data[1:, 2]
        if np.isnan(q).any():
            raise FormatError("constant profile has a blank q_k", path=path)
        return RateProfile(q, np.nan_to_num(r))
    if header == ["t", "k", "q_k", "r_k"]:
        ks = data[:, 1]
        K = int(ks.max()) if ks.size else 0
        if K < 1 or data.shape[0] % (K + 1):
            raise FormatError("sampled profile needs K+1 rows per time", path=path)
        block = data.reshape(-1, K + 1, 4)
        if not np.all(block[:, :, 1] == np.arange(K + 1)):
            raise FormatError("rows must list k = 0..K for every time", path=path)
        times = block[:, 0, 0]
        q, r = block[:, :K, 2], block[:, 1:, 3]
        undefined = np.isnan(q) | np.isnan(r)
        if np.all(~undefined):
            return RateProfile(q, r, times=times)
        return RateProfile(q, r, times=times, defined=~undefined)
    raise FormatError("rates file needs header 'k,q_k,r_k' or 't,k,q_k,r_k'", line=1, path=path)
