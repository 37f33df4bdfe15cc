"""Time-consistent mean-variance strategies on finite event trees."""

__version__ = "0.1.0"

from .errors import (ConfigError, DegenerateMarket, InvariantBreach, NonConvergence,  # noqa: E402
                     SCViolation, TCMVError, UnsupportedSpec)
from .market_tree import (AdaptedProcess, ContinuousModelSpec, DoobDecomposition,  # noqa: E402
                          EventTree, PredictableProcess, build_binomial, build_from_config,
                          build_multiplicative, doob_decompose)
from .mv_structure import compute_lambda, compute_mvt  # noqa: E402
from .decomposition import fixed_point_iterate, fs_of_mvt, gkw  # noqa: E402
from .solvers import (solve_auxiliary, solve_lmve_recursion, solve_mmve,  # noqa: E402
                      solve_precommitment)
from .evaluation import criterion, mmm_density, z_via_mmm  # noqa: E402

__all__ = [
    "ConfigError", "DegenerateMarket", "InvariantBreach", "NonConvergence", "SCViolation",
    "TCMVError", "UnsupportedSpec", "AdaptedProcess", "ContinuousModelSpec", "DoobDecomposition",
    "EventTree", "PredictableProcess", "build_binomial", "build_from_config",
    "build_multiplicative", "doob_decompose", "compute_lambda", "compute_mvt",
    "fixed_point_iterate", "fs_of_mvt", "gkw", "solve_auxiliary", "solve_lmve_recursion",
    "solve_mmve", "solve_precommitment", "criterion", "mmm_density", "z_via_mmm",
]
