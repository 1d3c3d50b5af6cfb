"""End-to-end influence prediction: estimate rates, solve, report sigma(t)."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from ..curves import InfluenceCurve
from ..errors import SpecError
from ..graph import PropagationNetwork, as_nodeset
from .estimators import rates_dist, rates_tree
from .profile import RateProfile, initial_distribution
from .solvers import Trajectory, solve_closed_form, solve_expm, solve_rk4

__all__ = ["predict", "run_prediction", "Prediction", "estimate_rates", "METHODS", "SOLVERS"]

METHODS = ("dist", "tree")
SOLVERS = ("auto", "rk4", "expm", "closed_form")
# above this size the default solver for constant profiles is rk4
EXPM_AUTO_LIMIT = 4096
# expm_multiply cost grows with ||A|| t; beyond this RK4 is faster
EXPM_STIFF_LIMIT = 2e4


@dataclass
class Prediction:
    rates: RateProfile
    trajectory: Trajectory
    curve: InfluenceCurve


def estimate_rates(net: PropagationNetwork, sources, method: str = "dist", m=64) -> RateProfile:
    if method == "dist":
        return rates_dist(net, sources)
    if method == "tree":
        return rates_tree(net, sources, m)
    raise SpecError(f"unknown method {method!r}; expected one of {', '.join(METHODS)}")


def _solve(rates, rho0, times, solver, step, keep_density):
    if solver == "auto":
        stiffness = rates.max_rate * (times[-1] - times[0])
        small = rates.node_count <= EXPM_AUTO_LIMIT and stiffness <= EXPM_STIFF_LIMIT
        solver = "expm" if rates.kind == "constant" and small else "rk4"
    if solver == "rk4":
        return solve_rk4(rates, rho0, times, step=step, keep_density=keep_density)
    if solver == "expm":
        return solve_expm(rates, rho0, times)
    if solver == "closed_form":
        return solve_closed_form(rates, rho0, times)
    raise SpecError(f"unknown solver {solver!r}; expected one of {', '.join(SOLVERS)}")


def run_prediction(net: PropagationNetwork, sources, times, method: str = "dist", m=64,
                   solver: str = "auto", step: float | None = None, rates: RateProfile | None = None,
                   keep_density: bool = True) -> Prediction:
    """Estimate rates (unless given), solve from ``rho(0) = e_|S|`` and build the curve.

    ``times`` must be nonnegative and strictly increasing; the solve always
    starts at ``t = 0``.
    """
    S = as_nodeset(net, sources)
    times = np.atleast_1d(np.asarray(times, dtype=np.float64))
    if times.ndim != 1 or times.size == 0 or times[0] < 0 or np.any(np.diff(times) <= 0):
        raise SpecError("time grid must be nonnegative and strictly increasing")
    t0 = time.perf_counter()
    if rates is None:
        rates = estimate_rates(net, S, method, m)
    elif rates.node_count != net.node_count:
        raise SpecError("rate profile size does not match the network")
    t1 = time.perf_counter()
    grid = times if times[0] == 0 else np.concatenate([[0.0], times])
    traj = _solve(rates, initial_distribution(net.node_count, len(S)), grid, solver, step,
                  keep_density)
    if grid is not times:
        traj = Trajectory(times, traj.sigma[1:], None if traj.rho is None else traj.rho[1:],
                          traj.meta)
    t2 = time.perf_counter()
    prov = {"method": rates.meta.get("method", method), "node_count": net.node_count,
            "source_count": len(S), "rate_seconds": t1 - t0, "solve_seconds": t2 - t1}
    if prov["method"] == "tree":
        prov["tree_width"] = rates.meta.get("width")
    prov.update(traj.meta)
    return Prediction(rates, traj, traj.curve(prov))


def predict(net: PropagationNetwork, sources, times, method: str = "dist", m=64,
            solver: str = "auto", step: float | None = None) -> InfluenceCurve:
    """Predicted influence ``sigma(t)`` with a provenance record.

    Parameters
    ----------
    method : {"dist", "tree"}
        Rate estimator.
    m : int
        Layer width of the tree estimator.
    solver : {"auto", "rk4", "expm", "closed_form"}
        ``auto`` uses the matrix exponential for constant profiles of
        moderate size and RK4 otherwise.
    """
    return run_prediction(net, sources, times, method, m, solver, step).curve
