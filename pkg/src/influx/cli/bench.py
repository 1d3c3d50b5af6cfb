"""Timing harness for the predictor on growing networks."""

from __future__ import annotations

import math
import os
import time

import numpy as np

from ..errors import ResourceError, SpecError
from ..fpe.estimators import rates_dist
from ..fpe.profile import RateProfile, initial_distribution
from ..fpe.solvers import default_step, solve_expm, solve_rk4
from ..gen import GeneratorSpec, generate, make_rng, sample_rates

__all__ = ["run_bench", "estimate_bytes", "available_bytes", "loglog_slope", "BENCH_FAMILIES"]

# "profile" skips the graph and times the solver on a random constant profile
BENCH_FAMILIES = ("erdos_renyi", "er", "small_world", "sw", "scale_free", "ba", "profile")


def available_bytes() -> int | None:
    try:
        return os.sysconf("SC_AVPHYS_PAGES") * os.sysconf("SC_PAGE_SIZE")
    except (ValueError, OSError, AttributeError):
        return None


def estimate_bytes(K: int, avg_degree: float, family: str) -> int:
    """Rough peak footprint: solver buffers plus two CSR copies of the edges."""
    solver = 8 * (K + 1) * 6
    if family == "profile":
        return solver
    E = K * avg_degree
    return int(solver + E * 64 + K * 64)


def loglog_slope(sizes, seconds):
    x = np.log(np.asarray(sizes, dtype=np.float64))
    y = np.log(np.asarray(seconds, dtype=np.float64))
    if x.size < 2:
        return math.nan
    return float(np.polyfit(x, y, 1)[0])


def _warm_up(solver):
    # load or compile the kernels before anything is timed
    prof = RateProfile(np.ones(4))
    rho0 = initial_distribution(4, 1)
    if solver == "rk4":
        solve_rk4(prof, rho0, [0.0, 0.1, 0.2], keep_density=False)
    else:
        solve_expm(prof, rho0, [0.0, 0.1])


def run_bench(sizes, family="er", avg_degree=4.0, solver="rk4", steps=200, t_max=10.0,
              seed=0, memory_limit=None, progress=None):
    """Time rate estimation and solve for each size.

    Every solve takes exactly ``steps`` steps of size
    ``min(t_max / steps, 0.1 / max_rate)``, so the solve time measures the
    per-step cost. Returns ``(rows, aborted)``. Each row has ``nodes``,
    ``edges``, ``generate_s``, ``rates_s``, ``solve_s`` and ``step``. A size whose memory
    estimate exceeds the limit, or whose allocation fails, stops the run
    and the table gathered so far is returned with ``aborted`` set to the
    reason.
    """
    if family not in BENCH_FAMILIES:
        raise SpecError(f"unknown bench family {family!r}")
    if solver not in ("rk4", "expm"):
        raise SpecError("bench solver must be rk4 or expm")
    if steps < 1:
        raise SpecError("steps must be >= 1")
    limit = available_bytes() if memory_limit is None else memory_limit
    _warm_up(solver)
    rows = []
    for K in sizes:
        K = int(K)
        if K < 2:
            raise SpecError("bench sizes must be >= 2")
        need = estimate_bytes(K, avg_degree, family)
        if limit is not None and need > limit:
            return rows, f"K={K} needs about {need / 1e9:.2f} GB, {limit / 1e9:.2f} GB available"
        try:
            t0 = time.perf_counter()
            if family == "profile":
                edges = 0
                rng = make_rng(seed, 2)
                rates = RateProfile(rng.uniform(0.0, avg_degree, K))
                t1 = t2 = time.perf_counter()
            else:
                spec = GeneratorSpec(family, K, seed=seed, avg_degree=avg_degree,
                                     ring_degree=int(2 * round(avg_degree / 2)),
                                     attach=max(1, int(round(avg_degree))))
                net = sample_rates(generate(spec), seed)
                edges = net.edge_count
                t1 = time.perf_counter()
                rates = rates_dist(net, [0])
                t2 = time.perf_counter()
            rho0 = initial_distribution(K, 1)
            # exactly `steps` steps, no longer than the stable default
            h = min(t_max / steps, default_step(rates))
            grid = h * np.arange(steps + 1)
            if solver == "rk4":
                solve_rk4(rates, rho0, grid, step=h, keep_density=False)
            else:
                solve_expm(rates, rho0, grid)
            t3 = time.perf_counter()
        except (MemoryError, ResourceError) as exc:
            return rows, f"K={K}: {exc or 'allocation failed'}"
        row = {"nodes": K, "edges": edges, "generate_s": t1 - t0, "rates_s": t2 - t1,
               "solve_s": t3 - t2, "step": h}
        rows.append(row)
        if progress is not None:
            progress(row)
    return rows, None
