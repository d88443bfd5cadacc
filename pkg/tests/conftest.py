import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from sagald import builtin_problem, derive_constants, with_overrides


@pytest.fixture(scope="session")
def lin():
    return builtin_problem("lin-1d")


@pytest.fixture(scope="session")
def micro():
    return builtin_problem("micro-1d")


@pytest.fixture(scope="session")
def well():
    return builtin_problem("well-2d")


@pytest.fixture(scope="session")
def override_bundle(micro):
    """The desk-scale coupling regime: micro-1d, eta=0.5, K = r = 0.2."""
    bundle = derive_constants(micro, 0.5, 0.1, unsafe_eta=True)
    return with_overrides(micro, bundle, k_override=0.2, regen_radius=0.2)


@pytest.fixture(scope="session")
def minorization_bundle(micro):
    """The minorization-check regime: micro-1d, eta=0.5, K=0.1, unit ball."""
    bundle = derive_constants(micro, 0.5, 0.1, unsafe_eta=True)
    return with_overrides(micro, bundle, k_override=0.1)
