"""Reconstruction and spectral error metrics."""

import numpy as np

from .errors import ContractError, DegenerateInputError


def mse(yhat, y):
    """Mean over signals of the squared L2 error: ``(1/S) sum_i ||yhat_i - y_i||^2``."""
    yhat = np.asarray(yhat, dtype=float)
    y = np.asarray(y, dtype=float)
    if yhat.shape != y.shape:
        raise ContractError(f"shape mismatch: {yhat.shape} vs {y.shape}")
    if y.ndim == 1:
        return float(np.sum((yhat - y) ** 2))
    return float(np.sum((yhat - y) ** 2) / y.shape[1])


def spectral_discrepancy(bank_response, gt_response):
    """``(1/N) sum_j |G(lam_j) - G*(lam_j)|^2``."""
    a = np.asarray(bank_response, dtype=float).ravel()
    b = np.asarray(gt_response, dtype=float).ravel()
    if a.shape != b.shape:
        raise ContractError(f"length mismatch: {a.size} vs {b.size}")
    return float(np.mean((a - b) ** 2))


def improvement(before, after):
    """Fractional error reduction ``(before - after) / before``."""
    if not before > 0:
        raise DegenerateInputError(f"improvement needs before > 0, got {before}")
    return (before - after) / before
