"""Shared fixtures for the test suite: random banks and finite differences."""

import numpy as np

from spectral_shaping.kernel import BaselineKernel, ShapedFilterBank, inverse_softplus, logit

FD_STEP = 1e-5


def random_bank(rng, K, lambda_max=4.0, arch=(1, 8, 8, 1), activation="tanh"):
    """A bank with generic (non-initialization) parameters."""
    weights = [rng.normal(0.0, 1.0, size=(o, i)) for i, o in zip(arch[:-1], arch[1:])]
    biases = [rng.normal(0.0, 0.5, size=o) for o in arch[1:]]
    return ShapedFilterBank(
        BaselineKernel(weights, biases, activation),
        rng.normal(0.0, 1.5, K),
        rng.normal(0.0, 1.0, K),
        rng.normal(0.0, 1.0, K),
        lambda_max,
    )


def fd_relative_error(bank, objective, grad, h=FD_STEP):
    """Worst elementwise mismatch between ``grad`` and central differences.

    ``objective(bank)`` must be a scalar. The error of each entry is
    ``|analytic - fd| / max(|analytic|, |fd|, floor)``, with the floor
    at 1e-6 of the largest finite-difference entry, so entries that are
    zero up to rounding do not dominate.
    """
    fd_all, an_all = [], []
    for (name, arr), (gname, garr) in zip(bank.named_parameters(), grad.named_arrays()):
        assert name == gname and arr.shape == garr.shape
        fd = np.zeros_like(arr)
        flat = arr.reshape(-1)
        for j in range(flat.size):
            keep = flat[j]
            flat[j] = keep + h
            up = objective(bank)
            flat[j] = keep - h
            down = objective(bank)
            flat[j] = keep
            fd.reshape(-1)[j] = (up - down) / (2.0 * h)
        fd_all.append(fd.ravel())
        an_all.append(np.asarray(garr, dtype=float).ravel())
    fd = np.concatenate(fd_all)
    an = np.concatenate(an_all)
    floor = max(1e-6 * np.abs(fd).max(), 1e-12)
    return float(np.max(np.abs(an - fd) / np.maximum(np.maximum(np.abs(an), np.abs(fd)), floor)))


def resolvable_bank(rng, K, lambda_max, degree=64, arch=(1, 8, 8, 1), activation="tanh"):
    """A random bank whose passbands a degree-``degree`` expansion resolves.

    Bandwidths are drawn so that ``8 * lambda_max * sqrt(gamma)`` lies in
    ``[degree / 4, degree]``, the documented degree heuristic.
    """
    bank = random_bank(rng, K, lambda_max, arch, activation)
    sqrt_gamma = rng.uniform(0.25, 1.0, K) * degree / (8.0 * lambda_max)
    bank.gamma_raw = inverse_softplus(sqrt_gamma**2)
    bank.mu_raw = logit(rng.uniform(0.02, 0.98, K))
    return bank


def init_scale_bank(rng, K, lambda_max, arch, activation="tanh"):
    """A random bank with weights at the initializer's scale times a random gain.

    Weights are uniform in ``+-gain / sqrt(fan_in)`` with ``gain`` in
    ``[0.5, 2]``; biases and shaping parameters are generic.
    """
    gain = rng.uniform(0.5, 2.0)
    weights = [rng.uniform(-1.0, 1.0, size=(o, i)) * gain / np.sqrt(i) for i, o in zip(arch[:-1], arch[1:])]
    biases = [rng.normal(0.0, 0.5, size=o) for o in arch[1:]]
    return ShapedFilterBank(
        BaselineKernel(weights, biases, activation),
        rng.normal(0.0, 1.5, K),
        rng.normal(0.0, 1.0, K),
        rng.normal(0.0, 1.0, K),
        lambda_max,
    )
