"""Bayesian tree-by-tree selection of regular vine copulas."""

__version__ = "0.1.0"

from .pair_copulas import FamilyTag, PairCopula, make_pair  # noqa: E402
from .vine import EdgeLabel, VineCopula, VineStructure, simulate, vine_loglik  # noqa: E402
from .rjmcmc import PriorConfig, TuningParams, select_vine  # noqa: E402
from .baselines import dissmann_select, gaussian_copula_mle, scenario  # noqa: E402

__all__ = [
    "__version__", "FamilyTag", "PairCopula", "make_pair", "EdgeLabel", "VineCopula",
    "VineStructure", "simulate", "vine_loglik", "PriorConfig", "TuningParams", "select_vine",
    "dissmann_select", "gaussian_copula_mle", "scenario",
]
