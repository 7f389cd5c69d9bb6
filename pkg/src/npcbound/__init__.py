"""Optimal delay bounds for networked predictive control.

The analytic side (:mod:`delay_model`, :mod:`error_calculus`, :mod:`mode_chain`,
:mod:`bound_optimizer`) turns a discrete round-trip-time distribution into a
performance index over delay bounds. The simulation side (:mod:`mpc_core`,
:mod:`netsim`) runs the full loop packet by packet to check the choice.
"""
__version__ = "0.1.0"

from .bound_optimizer import IndexBreakdown, optimal_bound, performance_index
from .delay_model import DelayDistribution, DiscretizationRule, from_lognormal, from_pmf, from_samples
from .error_calculus import ErrorParams
from .mode_chain import ModeWeights, stationary, transition_matrix
from .qp import BACKEND as QP_BACKEND

__all__ = [
    "__version__",
    "DelayDistribution",
    "DiscretizationRule",
    "ErrorParams",
    "IndexBreakdown",
    "ModeWeights",
    "QP_BACKEND",
    "from_lognormal",
    "from_pmf",
    "from_samples",
    "optimal_bound",
    "performance_index",
    "stationary",
    "transition_matrix",
]
