"""Integral delay equations and the first-order hyperbolic PDEs they encode.

Modules
-------
sampled
    Piecewise-constant signals on uniform grids.
functionals
    Right-hand sides of integral delay equations and their moduli.
ide
    Window-by-window successive-approximation solver.
hyperbolic
    Transport PDEs with nonlocal terms, their closure equations and an
    upwind reference scheme.
stability
    Razumikhin certificates, Lyapunov functional and decay audits.
feedback
    Finite-time boundary stabilization of the recirculation plant.
"""

from .errors import (AlignmentError, CertificateError, ConfigError, ContractionError, DataError,
                     DomainError, EvaluationError, GridTooCoarseError, IdePdeError)
from .functionals import IdeSystem, Moduli, eval_rhs, linear_distributed_system
from .hyperbolic import (HyperbolicSystem, mean_recirculation, reconstruct, solve_pde, to_ide,
                         upwind_reference)
from .ide import SolveConfig, Trajectory, solve
from .sampled import Grid, SampledFn, make_rng
from .stability import IssCertificate, check_razumikhin, decay_audit, iss_estimate, lyapunov_V

__all__ = [
    "AlignmentError", "CertificateError", "ConfigError", "ContractionError", "DataError",
    "DomainError", "EvaluationError", "GridTooCoarseError", "IdePdeError",
    "IdeSystem", "Moduli", "eval_rhs", "linear_distributed_system",
    "HyperbolicSystem", "mean_recirculation", "reconstruct", "solve_pde", "to_ide", "upwind_reference",
    "SolveConfig", "Trajectory", "solve",
    "Grid", "SampledFn", "make_rng",
    "IssCertificate", "check_razumikhin", "decay_audit", "iss_estimate", "lyapunov_V",
]

__version__ = "0.1.0"
