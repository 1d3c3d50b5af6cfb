"""Influence prediction on continuous-time propagation networks.

Subpackages and modules
-----------------------
graph   networks, node sets, frontier rates, activation distances
gen     random topologies and edge rates
sim     Gillespie cascades, ensembles, empirical densities
fpe     rate estimators and solvers of the lumped forward equation
oracle  exact configuration chain for small networks, error bounds
cli     the ``influx`` command
"""

__version__ = "0.1.0"

from .curves import InfluenceCurve, read_curve, write_curve  # noqa: E402
from .errors import (DomainError, FormatError, InfluxError, InvariantError,  # noqa: E402
                     NumericalError, PreconditionError, ResourceError, SpecError,
                     StabilityError, UnsupportedError)
from .graph import NodeSet, PropagationNetwork  # noqa: E402

__all__ = [
    "__version__", "InfluenceCurve", "read_curve", "write_curve", "NodeSet",
    "PropagationNetwork", "InfluxError", "SpecError", "FormatError", "DomainError",
    "PreconditionError", "UnsupportedError", "InvariantError", "NumericalError",
    "StabilityError", "ResourceError",
]
