"""Relaxed speculative decoding on tabular autoregressive models.

Exact output distributions, total-variation bounds, optimal resampling and
seeded Monte Carlo for vanilla, multiplicatively relaxed and LANTERN++-style
acceptance rules.
"""

from .decode import SdConfig, generate_sequence, simulate
from .exact import (
    exact_expected_accepted,
    exact_output_dist,
    target_dist,
    tv_exact,
    tvb_upper_bound,
)
from .models import ArModel, new_tabular_model, random_model
from .rules import (
    LanternPP,
    LanternResidual,
    MultiplicativeRelax,
    OptimalGStar,
    Vanilla,
    VanillaResidual,
)
from .schedules import exp_schedule, linear_schedule, uniform_schedule

__all__ = [
    "ArModel", "new_tabular_model", "random_model",
    "SdConfig", "simulate", "generate_sequence",
    "exact_output_dist", "exact_expected_accepted", "target_dist", "tv_exact", "tvb_upper_bound",
    "Vanilla", "MultiplicativeRelax", "LanternPP", "VanillaResidual", "OptimalGStar", "LanternResidual",
    "uniform_schedule", "exp_schedule", "linear_schedule",
]
__version__ = "0.1.0"
