import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spectral_shaping.errors import ContractError, DegenerateInputError
from spectral_shaping.metrics import improvement, mse, spectral_discrepancy


def naive_mse(yhat, y):
    n, s = y.shape
    total = 0.0
    for i in range(s):
        for j in range(n):
            total += (yhat[j, i] - y[j, i]) ** 2
    return total / s


def test_mse_identical_is_zero():
    y = np.random.default_rng(0).standard_normal((8, 3))
    assert mse(y, y) == 0.0


def test_mse_all_ones_offset():
    y = np.random.default_rng(1).standard_normal((4, 1))
    assert mse(y + 1.0, y) == pytest.approx(4.0, abs=1e-12)


def test_mse_averages_over_signals_not_nodes():
    y = np.zeros((5, 2))
    yhat = np.zeros((5, 2))
    yhat[:, 0] = 1.0
    assert mse(yhat, y) == pytest.approx(2.5)


@pytest.mark.parametrize("seed", range(5))
def test_mse_matches_naive_loop(seed):
    rng = np.random.default_rng(seed)
    y, yhat = rng.standard_normal((2, 17, 6))
    assert abs(mse(yhat, y) - naive_mse(yhat, y)) < 1e-12


def test_mse_shape_mismatch():
    with pytest.raises(ContractError):
        mse(np.zeros((4, 2)), np.zeros((4, 3)))


def test_discrepancy_examples():
    r = np.random.default_rng(2).standard_normal(9)
    assert spectral_discrepancy(r, r) == 0.0
    assert spectral_discrepancy(r + 1.0, r) == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(ContractError):
        spectral_discrepancy(r, r[:-1])


@pytest.mark.parametrize("seed", range(5))
def test_discrepancy_matches_naive_loop(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.standard_normal((2, 23))
    ref = sum((a[j] - b[j]) ** 2 for j in range(23)) / 23
    assert abs(spectral_discrepancy(a, b) - ref) < 1e-12


def test_improvement_examples():
    assert improvement(1.0, 0.5) == 0.5
    assert improvement(3.0, 3.0) == 0.0
    assert improvement(1.0, 2.0) == -1.0
    for bad in (0.0, -1.0):
        with pytest.raises(DegenerateInputError):
            improvement(bad, 0.5)


@settings(max_examples=100)
@given(st.floats(1e-6, 1e6), st.floats(0, 1e6))
def test_improvement_is_at_most_one_for_nonnegative_errors(before, after):
    imp = improvement(before, after)
    assert imp <= 1.0
    assert (imp > 0) == (after < before)
