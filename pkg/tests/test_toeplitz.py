import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import toeplitz

from mssbench.errors import InvalidArgument
from mssbench.toeplitz import ToeplitzInverse, levinson_durbin, solve_toeplitz


def _acf(rng, n, order):
    x = rng.standard_normal(n)
    return np.correlate(x, x, "full")[n - 1:n - 1 + order]


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 64), st.integers(0, 2 ** 31))
def test_levinson_matches_dense(order, seed):
    rng = np.random.default_rng(seed)
    r = _acf(rng, 200, order)
    b = rng.standard_normal(order)
    dense = np.linalg.solve(toeplitz(r), b)
    scale = np.linalg.norm(dense)
    assert np.linalg.norm(solve_toeplitz(r, b) - dense) <= 1e-8 * scale
    assert np.linalg.norm(ToeplitzInverse(r).solve(b) - dense) <= 1e-8 * scale


def test_factorization_identity(rng):
    r = _acf(rng, 100, 12)
    U, err = levinson_durbin(r)
    assert np.allclose(np.diag(U), 1.0)
    assert np.allclose(np.tril(U, -1), 0.0)
    assert np.allclose(U.T @ toeplitz(r) @ U, np.diag(err), atol=1e-9 * r[0])


def test_bad_inputs():
    with pytest.raises(InvalidArgument):
        levinson_durbin([0.0, 1.0])
    with pytest.raises(InvalidArgument):
        solve_toeplitz(np.array([1.0, 2.0]), np.array([1.0, 1.0]))  # indefinite
    with pytest.raises(InvalidArgument):
        solve_toeplitz(np.array([1.0, 0.1]), np.array([1.0]))
