"""Shared hypothesis strategies and fixtures."""

from fractions import Fraction

import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

from nfww.diffpoly import DiffPoly, var
from nfww.solver import GridState, grid, sech2_pulse

settings.register_profile(
    "nfww", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("nfww")

small_fractions = st.builds(
    Fraction, st.integers(-6, 6).filter(bool), st.integers(1, 6)
)


def monomials(fields=("r", "s"), min_order=0, max_order=3, max_degree=3):
    factor = st.tuples(st.sampled_from(fields), st.integers(min_order, max_order))

    @st.composite
    def build(draw):
        coeff = draw(small_fractions)
        factors = draw(st.lists(factor, min_size=1, max_size=max_degree))
        out = DiffPoly.const(coeff)
        for f, k in factors:
            out = out * var(f, k)
        return out

    return build()


def diffpolys(fields=("r", "s"), min_order=0, max_order=3, max_degree=3, max_terms=3):
    return st.lists(
        monomials(fields, min_order, max_order, max_degree), min_size=1, max_size=max_terms
    ).map(lambda ms: sum(ms[1:], ms[0]))


@pytest.fixture(scope="session")
def reference_grid():
    return grid(40.0, 1024)


@pytest.fixture(scope="session")
def smooth_state():
    """Band-limited, decaying two-component state."""
    y = grid(40.0, 1024).y
    r = sech2_pulse(y, -4.0, 0.6, 2.0) + 0.2 * sech2_pulse(y, 3.0, 1.0, 3.0)
    s = 0.5 * sech2_pulse(y, 5.0, 1.0, 2.5) * np.cos(0.3 * y)
    return GridState(40.0, 1024, r, s).banded()


@pytest.fixture(scope="session")
def wide_state():
    """Broad pulses whose cubic products still fit inside the dealiased band."""
    y = grid(40.0, 1024).y
    r = sech2_pulse(y, -2.0, 0.8, 2.5)
    s = 0.6 * sech2_pulse(y, 2.0, 1.0, 2.5)
    return GridState(40.0, 1024, r, s)
