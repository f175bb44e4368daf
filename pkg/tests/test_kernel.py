import math

import numpy as np
import pytest
from helpers import fd_relative_error, random_bank
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from spectral_shaping.errors import ContractError, NumericError, ParameterError, SpectrumRangeWarning
from spectral_shaping.kernel import (
    BaselineKernel,
    ShapedFilterBank,
    ShapingComponent,
    backward,
    bank_backward,
    bank_forward,
    eval_bank,
    eval_baseline,
    eval_component,
    init_bank,
    inverse_softplus,
    softplus,
)


def constant_baseline(value=1.0, hidden=4):
    """g(lam) == value: zero weights, output bias ``value``."""
    return BaselineKernel(
        [np.zeros((hidden, 1)), np.zeros((1, hidden))], [np.zeros(hidden), np.array([value])], "tanh"
    )


def naive_mlp(kernel, z):
    """Straightforward per-sample loop re-implementation of the forward pass."""
    act = math.tanh if kernel.activation == "tanh" else (lambda t: math.log1p(math.exp(t)))
    out = []
    for x in np.ravel(z):
        h = [float(x)]
        for li, (w, b) in enumerate(zip(kernel.weights, kernel.biases)):
            nxt = []
            for r in range(w.shape[0]):
                s = b[r] + sum(w[r, c] * h[c] for c in range(w.shape[1]))
                nxt.append(s if li == len(kernel.weights) - 1 else act(s))
            h = nxt
        out.append(h[0])
    return np.array(out)


# -- baseline -----------------------------------------------------------------


def test_zero_network_is_zero():
    k = BaselineKernel([np.zeros((5, 1)), np.zeros((1, 5))], [np.zeros(5), np.zeros(1)])
    np.testing.assert_array_equal(eval_baseline(k, np.linspace(0, 3, 11)), 0.0)


def test_hand_computed_single_hidden_unit():
    # g(z) = 2 * tanh(0.5 z + 0.1) - 0.3
    k = BaselineKernel([np.array([[0.5]]), np.array([[2.0]])], [np.array([0.1]), np.array([-0.3])])
    for z in (0.0, 0.4, 1.0):
        assert eval_baseline(k, [z])[0] == pytest.approx(2.0 * math.tanh(0.5 * z + 0.1) - 0.3, abs=1e-15)
    # input normalization divides by lambda_max
    assert eval_baseline(k, [3.0], lambda_max=6.0)[0] == pytest.approx(2.0 * math.tanh(0.35) - 0.3, abs=1e-15)


@pytest.mark.parametrize("activation", ["tanh", "softplus"])
def test_forward_matches_naive_implementation(activation):
    rng = np.random.default_rng(1)
    bank = random_bank(rng, 1, arch=(1, 6, 5, 1), activation=activation)
    z = rng.uniform(0, 1, 25)
    np.testing.assert_allclose(eval_baseline(bank.baseline, z), naive_mlp(bank.baseline, z), rtol=1e-12, atol=1e-12)


def test_nonfinite_parameters_rejected():
    k = constant_baseline()
    k.weights[0][0, 0] = np.nan
    with pytest.raises(NumericError):
        eval_baseline(k, [0.5])


@pytest.mark.parametrize(
    "weights, biases",
    [
        ([np.zeros((1, 1))], [np.zeros(1)]),  # no hidden layer
        ([np.zeros((3, 2)), np.zeros((1, 3))], [np.zeros(3), np.zeros(1)]),  # input dim 2
        ([np.zeros((3, 1)), np.zeros((1, 4))], [np.zeros(3), np.zeros(1)]),  # shape chain broken
        ([np.zeros((3, 1)), np.zeros((1, 3))], [np.zeros(2), np.zeros(1)]),  # bias mismatch
    ],
)
def test_baseline_shape_validation(weights, biases):
    with pytest.raises(ParameterError):
        BaselineKernel(weights, biases)


# -- components ---------------------------------------------------------------


def test_component_examples():
    lam = np.array([2.0])
    g1 = np.ones(1)
    lmax = 4.0
    mu_raw_for_1 = math.log(1.0 / 3.0)  # sigmoid = 1/4, so mu = 1
    gamma_raw_for_1 = float(inverse_softplus(1.0))
    c = ShapingComponent(mu_raw_for_1, gamma_raw_for_1, 1.0)
    assert c.mu(lmax) == pytest.approx(1.0, abs=1e-15)
    assert eval_component(c, g1, lam, lmax)[0] == pytest.approx(math.exp(-1.0), abs=1e-12)
    peak = ShapingComponent(0.0, float(inverse_softplus(5.0)), 1.0)
    assert eval_component(peak, g1, np.array([peak.mu(lmax)]), lmax)[0] == 1.0


def test_component_with_vanishing_gamma_is_the_baseline():
    lam = np.linspace(0, 3, 7)
    g = np.linspace(-1, 2, 7)
    c = ShapingComponent(0.3, -800.0, 1.0)  # softplus(-800) underflows to 0
    assert c.gamma() == 0.0
    np.testing.assert_array_equal(eval_component(c, g, lam, 3.0), g)


def test_component_alignment_checked():
    with pytest.raises(ContractError):
        eval_component(ShapingComponent(0, 0, 1), np.ones(3), np.ones(4), 1.0)


@settings(max_examples=50, deadline=None)
@given(st.floats(-50, 50), st.floats(-50, 50), st.floats(-3, 3), st.floats(0, 4))
def test_envelope_identity_with_unit_baseline(mu_raw, gamma_raw, a, lam):
    bank = ShapedFilterBank(constant_baseline(), [mu_raw], [gamma_raw], [a], 4.0)
    c = bank.components[0]
    expected = a * math.exp(-c.gamma() * (lam - c.mu(4.0)) ** 2)
    assert eval_bank(bank, [lam])[0] == pytest.approx(expected, rel=1e-12, abs=1e-300)


def test_reparameterization_bounds_on_a_million_raws():
    rng = np.random.default_rng(0)
    raws = np.concatenate([rng.normal(0, 20, 10**6 - 4), [-1e308, 1e308, -745.0, 800.0]])
    lmax = 3.7
    bank = ShapedFilterBank(constant_baseline(), raws, raws, np.ones_like(raws), lmax)
    mu, gamma = bank.mu, bank.gamma
    assert np.all(np.isfinite(mu)) and np.all((mu >= 0) & (mu <= lmax))
    assert np.all(np.isfinite(gamma)) and np.all(gamma >= 0)


def test_inverse_softplus_round_trip():
    y = np.array([1e-6, 0.3, 1.0, 7.0, 29.9, 30.1, 200.0])
    np.testing.assert_allclose(softplus(inverse_softplus(y)), y, rtol=1e-10)


# -- bank ---------------------------------------------------------------------


def test_zero_amplitude_bank_is_zero():
    bank = random_bank(np.random.default_rng(0), 1)
    bank.amplitude[:] = 0.0
    np.testing.assert_array_equal(eval_bank(bank, np.linspace(0, 4, 9)), 0.0)


def test_duplicated_half_components_match():
    rng = np.random.default_rng(2)
    one = random_bank(rng, 1)
    two = ShapedFilterBank(one.baseline, np.repeat(one.mu_raw, 2), np.repeat(one.gamma_raw, 2),
                           np.repeat(one.amplitude / 2, 2), one.lambda_max)
    lam = np.linspace(0, 4, 33)
    np.testing.assert_allclose(eval_bank(two, lam), eval_bank(one, lam), rtol=1e-14, atol=1e-15)


def test_bank_is_sum_of_single_components():
    rng = np.random.default_rng(3)
    bank = random_bank(rng, 2)
    lam = np.linspace(0, 4, 50)
    total, terms = eval_bank(bank, lam, components=True)
    singles = [
        eval_bank(ShapedFilterBank(bank.baseline, bank.mu_raw[k:k + 1], bank.gamma_raw[k:k + 1],
                                   bank.amplitude[k:k + 1], bank.lambda_max), lam)
        for k in range(2)
    ]
    np.testing.assert_allclose(total, singles[0] + singles[1], atol=1e-12)
    np.testing.assert_allclose(terms.sum(axis=0), total, atol=1e-15)


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, 3, elements=st.floats(-5, 5)), arrays(np.float64, 3, elements=st.floats(-5, 5)))
def test_bank_is_linear_in_amplitudes(a1, a2):
    rng = np.random.default_rng(4)
    bank = random_bank(rng, 3)
    lam = np.linspace(0, 4, 20)

    def with_amp(a):
        b = bank.copy()
        b.amplitude = np.array(a, dtype=float)
        return eval_bank(b, lam)

    scale = 1.0 + np.abs(with_amp(np.abs(a1) + np.abs(a2)))
    np.testing.assert_array_less(np.abs(with_amp(a1 + a2) - with_amp(a1) - with_amp(a2)), 1e-12 * scale)


def test_out_of_range_evaluation_warns():
    bank = random_bank(np.random.default_rng(0), 1)
    with pytest.warns(SpectrumRangeWarning):
        out = eval_bank(bank, [bank.lambda_max * 1.5])
    assert np.isfinite(out).all()


def test_with_lambda_max_transport():
    bank = random_bank(np.random.default_rng(5), 3, lambda_max=4.0)
    frac = bank.copy().with_lambda_max(8.0, keep_centers=False)
    np.testing.assert_allclose(frac.mu, 2.0 * bank.mu)
    absolute = bank.with_lambda_max(8.0, keep_centers=True)
    np.testing.assert_allclose(absolute.mu, bank.mu, rtol=1e-12)
    shrunk = bank.with_lambda_max(bank.mu.min() / 2.0, keep_centers=True)
    assert np.all(shrunk.mu <= shrunk.lambda_max)
    for name, arr in bank.named_parameters():
        if name != "mu_raw":
            np.testing.assert_array_equal(arr, dict(absolute.named_parameters())[name])


# -- gradients ----------------------------------------------------------------


def test_zero_upstream_gives_zero_gradient():
    bank = random_bank(np.random.default_rng(6), 2)
    grad = backward(bank, np.linspace(0, 4, 7), np.zeros(7))
    assert all(np.all(a == 0) for _, a in grad.named_arrays())


def test_amplitude_gradient_analytic():
    bank = ShapedFilterBank(constant_baseline(), [0.2], [-800.0], [0.7], 2.0)
    grad = backward(bank, [1.3], [1.0])
    assert grad.amplitude[0] == pytest.approx(1.0, abs=1e-15)


def test_upstream_shape_checked():
    bank = random_bank(np.random.default_rng(0), 1)
    with pytest.raises(ContractError):
        backward(bank, np.linspace(0, 1, 4), np.ones(3))
    _, _, cache = bank_forward(bank, np.linspace(0, 1, 4), grid=np.linspace(0, 4, 5))
    with pytest.raises(ContractError):
        bank_backward(bank, cache, np.ones(4), grid_upstream=np.ones(4))


@pytest.mark.parametrize("activation", ["tanh", "softplus"])
@pytest.mark.parametrize("seed", range(20))
def test_backward_matches_finite_differences(seed, activation):
    rng = np.random.default_rng(seed)
    K = 1 + seed % 4
    bank = random_bank(rng, K, lambda_max=rng.uniform(1, 10), activation=activation)
    lam = rng.uniform(0, bank.lambda_max, 12)
    up = rng.normal(size=12)
    grad = backward(bank, lam, up)
    assert grad.is_finite()
    assert fd_relative_error(bank, lambda b: float(up @ eval_bank(b, lam)), grad) < 1e-4


def test_grid_gradient_matches_finite_differences():
    rng = np.random.default_rng(11)
    bank = random_bank(rng, 2)
    lam = rng.uniform(0, 4, 6)
    grid = np.linspace(0, 4, 9)
    up, gup = rng.normal(size=6), rng.normal(size=9)

    def objective(b):
        G, g, _ = bank_forward(b, lam, grid=grid)
        return float(up @ G + gup @ g)

    _, _, cache = bank_forward(bank, lam, grid=grid)
    assert fd_relative_error(bank, objective, bank_backward(bank, cache, up, grid_upstream=gup)) < 1e-4


def test_gradient_algebra():
    bank = random_bank(np.random.default_rng(7), 2)
    lam = np.linspace(0, 4, 5)
    g1 = backward(bank, lam, np.ones(5))
    g2 = backward(bank, lam, 2 * np.ones(5))
    summed = g1 + g1
    for (_, a), (_, b) in zip(summed.named_arrays(), g2.named_arrays()):
        np.testing.assert_allclose(a, b, rtol=1e-13, atol=1e-15)
    for (_, a), (_, b) in zip(g1.scaled(2.0).named_arrays(), g2.named_arrays()):
        np.testing.assert_allclose(a, b, rtol=1e-13, atol=1e-15)


# -- initialization -----------------------------------------------------------


def test_init_centers_and_amplitudes():
    b2 = init_bank(2, 2.0, seed=0)
    np.testing.assert_allclose(b2.mu, [0.5, 1.5], atol=1e-12)
    b1 = init_bank(1, 2.0, seed=0)
    np.testing.assert_allclose(b1.mu, [1.0], atol=1e-12)
    np.testing.assert_array_equal(b1.amplitude, [1.0])
    # Gaussian std lambda_max / (2K): gamma = 1 / (2 sigma^2)
    np.testing.assert_allclose(b2.gamma, 1.0 / (2 * 0.5**2), rtol=1e-12)
    assert b2.baseline.layer_sizes == [1, 32, 32, 1]
    assert np.all(b2.baseline.biases[0] == 0) and b2.baseline.biases[-1][0] == 1.0


def test_init_rejects_bad_k():
    with pytest.raises(ParameterError):
        init_bank(0, 1.0)


@pytest.mark.parametrize("seed", range(25))
def test_init_response_is_tame(seed):
    lmax = 0.5 + seed
    bank = init_bank(1 + seed % 4, lmax, seed=seed)
    out = eval_bank(bank, np.linspace(0, lmax, 512))
    assert np.all(np.isfinite(out)) and np.abs(out).max() <= 10.0


def test_init_is_seed_deterministic():
    a, b, c = init_bank(3, 5.0, seed=9), init_bank(3, 5.0, seed=9), init_bank(3, 5.0, seed=10)
    for (_, x), (_, y) in zip(a.named_parameters(), b.named_parameters()):
        np.testing.assert_array_equal(x, y)
    assert not np.array_equal(a.baseline.weights[0], c.baseline.weights[0])
