"""Valuation of a participating policy with a surrender option.

The contract is reduced to the one-dimensional bonus distribution rate
``x = ln(A / R)``. ``engine`` prices it on a binomial lattice, ``boundary``
recovers and checks the optimal surrender boundaries, ``montecarlo``
cross-checks the lattice by simulation and ``cli`` drives reproducible runs.
"""

__version__ = "0.1.0"

from .model import (  # noqa: E402
    DerivedThresholds,
    FeeCase,
    NumericalError,
    ParameterError,
    PolicyParams,
    classify_fee_case,
    derive_thresholds,
    drift_pi,
    generator_H,
    payoff_h,
)
from .engine import LatticeSpec, SpecError, price_cone, solve_default_grid, solve_grid, value_at  # noqa: E402
from .boundary import Regime, extract_boundaries, validate_shape  # noqa: E402
from .montecarlo import (  # noqa: E402
    McSpec,
    coupled_flow_check,
    mc_european_full,
    mc_european_reduced,
    mc_strategy_value,
)

__all__ = [
    "__version__",
    "PolicyParams", "DerivedThresholds", "FeeCase", "ParameterError", "NumericalError",
    "derive_thresholds", "classify_fee_case", "payoff_h", "drift_pi", "generator_H",
    "LatticeSpec", "SpecError", "price_cone", "solve_grid", "solve_default_grid", "value_at",
    "Regime", "extract_boundaries", "validate_shape",
    "McSpec", "mc_european_reduced", "mc_european_full", "mc_strategy_value", "coupled_flow_check",
]
