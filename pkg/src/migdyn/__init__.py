"""Damped inertial dynamics with a vanishing penalty that selects among minimizers.

Integrates ``m x'' + gamma x' + grad phi(x) + eps(t) grad psi(x) = 0`` and
checks that trajectories settle on the minimizers of ``psi`` over
``argmin phi`` when ``eps`` decays slowly enough.
"""

from ._accel import NUMBA_ENABLED, backend_name
from .diagnostics import check_e1_monotone, compute_series, e1, e2, e2_identity, limit_checks
from .integrator import (IntegrationError, ProblemSpec, StepControl, Trajectory, integrate,
                         integrate_beta, rescale_affine, residual)
from .oracle import OracleError, brute_force, neumann_reference, solve_hierarchical
from .potentials import (AffineSubspace, Ball, Box, Product, QuadraticCoupling, QuadraticForm,
                         SeparableSum, SqDistToSet, Tikhonov, conjugate_numeric, zero_potential)
from .schedules import (BetaSchedule, EpsilonSchedule, TimeMapError, beta_from_eps,
                        check_conditions, time_maps)

__version__ = "0.1.0"

__all__ = [
    "AffineSubspace", "Ball", "BetaSchedule", "Box", "EpsilonSchedule", "IntegrationError",
    "NUMBA_ENABLED", "OracleError", "Product", "ProblemSpec", "QuadraticCoupling",
    "QuadraticForm", "SeparableSum", "SqDistToSet", "StepControl", "Tikhonov", "TimeMapError",
    "Trajectory", "backend_name", "beta_from_eps", "brute_force", "check_conditions",
    "check_e1_monotone", "compute_series", "conjugate_numeric", "e1", "e2", "e2_identity",
    "integrate", "integrate_beta", "limit_checks", "neumann_reference", "rescale_affine",
    "residual", "solve_hierarchical", "time_maps", "zero_potential",
]
