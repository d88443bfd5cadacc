"""Variance-reduced Langevin sampling with an executable convergence apparatus.

The chain keeps a per-component table of cached drift evaluations and uses the
table average plus a control variate as its drift estimate.  On top of the
sampler, the package ships the machinery that makes its convergence claims
testable: a random-map representation with explicit regeneration, shared-noise
coupling with meeting detection, minorization verification, total-variation
and strong-mixing estimators, and law-of-large-numbers checks.

Hot loops run in a compiled extension when available, with a bit-identical
pure numpy fallback (see `sagald._core`).
"""

from ._core import BACKEND
from .errors import ConfigurationError, EtaCapError, NumericOverflowError
from .model import (BUILTIN_NAMES, Problem, builtin_problem, component_eval,
                    mean_drift, problem_from_json, problem_to_json,
                    verify_assumptions)
from .randommap import (ConstantsBundle, beta_for, derive_constants, iterate_Z,
                        map_step, residual_sample, transition_mean,
                        verify_minorization, with_overrides)
from .sampler import (ChainState, TransitionInput, eta_max, init_chain,
                      run_chain, saga_step, sgld_step, update_term)

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "BUILTIN_NAMES",
    "ChainState",
    "ConfigurationError",
    "ConstantsBundle",
    "EtaCapError",
    "NumericOverflowError",
    "Problem",
    "TransitionInput",
    "beta_for",
    "builtin_problem",
    "component_eval",
    "derive_constants",
    "eta_max",
    "init_chain",
    "iterate_Z",
    "map_step",
    "mean_drift",
    "problem_from_json",
    "problem_to_json",
    "residual_sample",
    "run_chain",
    "saga_step",
    "sgld_step",
    "transition_mean",
    "update_term",
    "verify_assumptions",
    "verify_minorization",
    "with_overrides",
]
