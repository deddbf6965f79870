import sys
from functools import lru_cache
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from mbgf import ModelSpec, exact_evaluator, generate_model, solve_fci  # noqa: E402


@lru_cache(maxsize=None)
def model(t=1.0, U=2.0, sites=2, electrons=None):
    return generate_model(ModelSpec.hubbard(t, U, sites, electrons))


@lru_cache(maxsize=None)
def exact(t=1.0, U=2.0, sites=2, electrons=None):
    ints = model(t, U, sites, electrons)
    gf = solve_fci(ints)
    return ints, gf, exact_evaluator(gf)


@pytest.fixture
def dimer():
    return model(1.0, 2.0, 2)


@pytest.fixture
def chain_half():
    """Four-site chain at half filling (particle-hole symmetric)."""
    return model(1.0, 2.0, 4)


@pytest.fixture
def chain_quarter():
    """Four-site chain with two electrons: no particle-hole symmetry, odd orders survive."""
    return model(1.0, 2.0, 4, 2)
