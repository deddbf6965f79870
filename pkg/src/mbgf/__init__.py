"""Exact and approximate one-particle Green's functions for small systems."""

__version__ = "0.1.0"

from .dyson import (DysonRoot, check_sum_rules, find_brackets, galitskii_migdal, solve_diagonal,  # noqa: E402
                    solve_matrix)
from .errors import (CapExceededError, FCIDumpError, IllConditionedStencilError, InputError,  # noqa: E402
                     MBGFError, SingularFrequencyError, UnsupportedModelError)
from .estimators import SelfEnergyEstimator  # noqa: E402
from .fci import GreensFunction, PoleSet, solve_fci  # noqa: E402
from .integrals import IntegralSet, ModelSpec, generate_model, parse_fcidump, read_fcidump, write_fcidump  # noqa: E402
from .perturbation import (LambdaExpansion, LambdaStencil, OrderSelfEnergy, SecondOrderSelfEnergy,  # noqa: E402
                           extract_order_corrections, sigma2_analytic)
from .resummation import TDA2SelfEnergy, prune_poles, scgf2_cycle, scgf2_run, tda2_iterate, tda2_sigma  # noqa: E402
from .selfenergy import PoleSelfEnergy, SelfEnergy, exact_evaluator  # noqa: E402
from .taylor import DEFAULT_POLES, ModelPoles, convergence_map, model_g, taylor_partial_sum  # noqa: E402

__all__ = [
    "__version__",
    "CapExceededError", "FCIDumpError", "IllConditionedStencilError", "InputError", "MBGFError",
    "SingularFrequencyError", "UnsupportedModelError",
    "IntegralSet", "ModelSpec", "generate_model", "parse_fcidump", "read_fcidump", "write_fcidump",
    "GreensFunction", "PoleSet", "solve_fci",
    "SelfEnergy", "PoleSelfEnergy", "exact_evaluator",
    "SecondOrderSelfEnergy", "LambdaStencil", "LambdaExpansion", "OrderSelfEnergy",
    "extract_order_corrections", "sigma2_analytic",
    "DysonRoot", "find_brackets", "solve_diagonal", "solve_matrix", "check_sum_rules", "galitskii_migdal",
    "TDA2SelfEnergy", "tda2_iterate", "tda2_sigma", "scgf2_cycle", "scgf2_run", "prune_poles",
    "ModelPoles", "DEFAULT_POLES", "model_g", "taylor_partial_sum", "convergence_map",
    "SelfEnergyEstimator",
]
