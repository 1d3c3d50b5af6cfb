"""Lumped forward-equation predictor: rate estimators, generator and solvers."""

from .estimators import SubsetCandidate, prefix_rates, rates_dist, rates_tree
from .predict import Prediction, estimate_rates, predict, run_prediction
from .profile import (RateProfile, StateDistribution, Tridiagonal, build_generator,
                      influence, initial_distribution, read_rates, write_rates)
from .solvers import Trajectory, default_step, solve_closed_form, solve_expm, solve_rk4

__all__ = [
    "RateProfile", "StateDistribution", "Tridiagonal", "build_generator", "influence",
    "initial_distribution", "write_rates", "read_rates", "SubsetCandidate", "prefix_rates", "rates_dist",
    "rates_tree", "Trajectory", "default_step", "solve_rk4", "solve_expm", "solve_closed_form",
    "Prediction", "estimate_rates", "predict", "run_prediction",
]
