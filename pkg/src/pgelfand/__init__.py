"""Small-solution branches of -Delta_p u = lam g(u) on bounded domains.

Modules
-------
geometry      grids, nodal fields, lumped norms
plap          discrete p-Laplacian, Dirichlet solves, resolvents
nonlinearity  right-hand sides g
fixedpoint    Picard iteration, branch tracing, uniqueness probes
verify        property battery
report        CSV/JSON output
cli           command-line entry point
"""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    ConfigurationError,
    NumericalError,
    OutputError,
    PGelfandError,
    SolverFailure,
)
from .geometry import DomainGrid, Field, SystemField, build_interval, build_mask_domain, norm  # noqa: E402
from .nonlinearity import Nonlinearity  # noqa: E402
from .plap import Regularization, SolveConfig, SolveReport, resolvent, scale_solution, solve_dirichlet  # noqa: E402
from .fixedpoint import (  # noqa: E402
    Branch,
    BranchPoint,
    apply_K,
    branch_lipschitz_check,
    picard_solve,
    trace_branch,
    uniqueness_probe,
)

__all__ = [
    "__version__",
    "PGelfandError",
    "ConfigurationError",
    "NumericalError",
    "OutputError",
    "SolverFailure",
    "DomainGrid",
    "Field",
    "SystemField",
    "build_interval",
    "build_mask_domain",
    "norm",
    "Nonlinearity",
    "Regularization",
    "SolveConfig",
    "SolveReport",
    "solve_dirichlet",
    "resolvent",
    "scale_solution",
    "Branch",
    "BranchPoint",
    "apply_K",
    "picard_solve",
    "trace_branch",
    "uniqueness_probe",
    "branch_lipschitz_check",
]
