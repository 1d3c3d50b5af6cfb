"""Relative-error metrics between two influence curves."""

from __future__ import annotations

import numpy as np

from ..curves import InfluenceCurve
from ..errors import SpecError

__all__ = ["compare_curves"]


def compare_curves(a: InfluenceCurve, b: InfluenceCurve, floor: float | None = None) -> dict:
    """Relative error of ``a`` against the reference ``b``.

    ``a`` is interpolated linearly onto the points of ``b`` that fall in the
    common time range. The denominator is ``max(sigma_b, floor)`` where
    ``floor`` defaults to the reference source count when recorded (an SI
    curve never drops below it) and otherwise to a tiny positive number.

    Returns
    -------
    dict
        ``linf_rel``, ``mean_rel``, ``linf_abs`` and the per-time series
        ``times``, ``reference``, ``value``, ``rel_error``.
    """
    ka, kb = a.node_count, b.node_count
    if ka is not None and kb is not None and int(ka) != int(kb):
        raise SpecError(f"curves describe different networks (K={ka} vs K={kb})")
    lo = max(a.times[0], b.times[0])
    hi = min(a.times[-1], b.times[-1])
    if lo > hi:
        raise SpecError("curves have disjoint time ranges")
    sel = (b.times >= lo) & (b.times <= hi)
    t = b.times[sel]
    ref = b.sigma[sel]
    val = a.sigma[sel] if np.array_equal(a.times, b.times) else np.interp(t, a.times, a.sigma)
    if floor is None:
        floor = b.source_count if b.source_count else 1e-300
    denom = np.maximum(np.abs(ref), floor)
    diff = np.abs(val - ref)
    rel = np.where(diff == 0, 0.0, diff / denom)
    return {
        "linf_rel": float(rel.max()),
        "mean_rel": float(rel.mean()),
        "linf_abs": float(diff.max()),
        "points": int(t.size),
        "times": t,
        "reference": ref,
        "value": val,
        "rel_error": rel,
    }
