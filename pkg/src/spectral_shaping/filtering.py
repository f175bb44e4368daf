"""Exact and Chebyshev-polynomial application of spectral filters."""

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg.blas import daxpy

from .errors import ContractError, NumericError, ParameterError, SpectrumRangeWarning
from .graphs import decompose
from .kernel import eval_bank

DAMPINGS = ("none", "jackson")
DEFAULT_DEGREE = 64


def as_signal_batch(x, num_nodes=None):
    """Coerce to an ``(N, S)`` float array; 1-D input becomes one column."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2:
        raise ContractError(f"signals must be (N,) or (N, S), got shape {x.shape}")
    if num_nodes is not None and x.shape[0] != num_nodes:
        raise ContractError(f"signal has {x.shape[0]} nodes, graph has {num_nodes}")
    if not np.all(np.isfinite(x)):
        raise NumericError("signal has non-finite entries")
    return x


def apply_exact(decomp, response, x):
    """``U diag(response) U^T x`` for every column of ``x``."""
    u = decomp.eigenvectors
    n = u.shape[0]
    response = np.asarray(response, dtype=float).ravel()
    if response.size != n:
        raise ContractError(f"response has length {response.size}, expected {n}")
    x = as_signal_batch(x, n)
    return u @ (response[:, None] * (u.T @ x))


@dataclass(frozen=True)
class ChebyshevFilter:
    coefficients: np.ndarray
    lambda_max: float
    damping: str = "none"

    def __post_init__(self):
        c = np.asarray(self.coefficients, dtype=float).ravel()
        if c.size < 2:
            raise ParameterError("a Chebyshev filter needs degree R >= 1")
        if not np.all(np.isfinite(c)):
            raise NumericError("Chebyshev coefficients must be finite")
        if self.damping not in DAMPINGS:
            raise ParameterError(f"damping must be one of {DAMPINGS}")
        if not self.lambda_max > 0:
            raise ParameterError("lambda_max must be positive")
        c.setflags(write=False)
        object.__setattr__(self, "coefficients", c)
        object.__setattr__(self, "lambda_max", float(self.lambda_max))

    @property
    def degree(self):
        return self.coefficients.size - 1

    def evaluate(self, lambdas):
        """The polynomial the filter actually applies, at scalar frequencies."""
        t = 2.0 * np.asarray(lambdas, dtype=float) / self.lambda_max - 1.0
        return np.polynomial.chebyshev.chebval(t, self.coefficients)


def jackson_weight(r, R):
    """Jackson damping factor for term ``r`` of a degree-``R`` expansion."""
    if not 0 <= r <= R:
        raise ContractError(f"need 0 <= r <= R, got r={r}, R={R}")
    a = math.pi / (R + 1)
    return ((R - r + 1) * math.cos(r * a) + math.sin(r * a) / math.tan(a)) / (R + 1)


def jackson_weights(R):
    return np.array([jackson_weight(r, R) for r in range(R + 1)])


def project_chebyshev(response_fn, lambda_max, R=DEFAULT_DEGREE, num_quadrature=None, damping="none"):
    """Chebyshev coefficients of ``response_fn`` on ``[0, lambda_max]``.

    Uses ``M`` Gauss-Chebyshev nodes (default ``4 (R + 1)``)::

        c_r = (2 - [r == 0]) / M * sum_q f(lam(t_q)) cos(r theta_q)
    """
    R = int(R)
    if R < 1:
        raise ParameterError(f"degree R must be >= 1, got {R}")
    if damping not in DAMPINGS:
        raise ParameterError(f"damping must be one of {DAMPINGS}")
    m = 4 * (R + 1) if num_quadrature is None else int(num_quadrature)
    if m < R + 1:
        raise ParameterError(f"need at least R + 1 = {R + 1} quadrature nodes, got {m}")
    theta = np.pi * (np.arange(m) + 0.5) / m
    lam = (np.cos(theta) + 1.0) * lambda_max / 2.0
    f = np.asarray(response_fn(lam), dtype=float).ravel()
    c = (2.0 / m) * (np.cos(np.outer(np.arange(R + 1), theta)) @ f)
    c[0] *= 0.5
    if damping == "jackson":
        c = c * jackson_weights(R)
    return ChebyshevFilter(c, lambda_max, damping)


def apply_chebyshev(f, lap, x, decomp=None):
    """Apply ``sum_r c_r T_r(L~) x`` with ``L~ = (2 / lambda_max) L - I``.

    Only products ``lap.matrix @ block`` are used: exactly ``R`` of them,
    each on the full ``(N, S)`` block, so ``R`` matvecs per column.
    Working storage is three ``(N, S)`` recurrence blocks plus the output.
    If ``decomp`` is supplied, a spectrum extending past ``f.lambda_max``
    triggers a :class:`SpectrumRangeWarning`.
    """
    n = lap.num_nodes
    x = as_signal_batch(x, n)
    if decomp is not None and decomp.eigenvalues[-1] > f.lambda_max * (1.0 + 1e-10):
        warnings.warn(
            f"filter lambda_max {f.lambda_max:g} is below the spectrum top "
            f"{decomp.eigenvalues[-1]:g}",
            SpectrumRangeWarning,
            stacklevel=2,
        )
    c = f.coefficients
    mat = lap.matrix
    scale = 2.0 / f.lambda_max

    # in-place updates (axpy into the output) keep the working set at the
    # three recurrence blocks plus the output
    t_prev = np.ascontiguousarray(x)
    out = c[0] * t_prev
    flat_out = out.reshape(-1)
    t_cur = np.ascontiguousarray(mat @ t_prev)
    t_cur *= scale
    t_cur -= t_prev
    daxpy(t_cur.reshape(-1), flat_out, a=c[1])
    for r in range(2, c.size):
        t_next = np.ascontiguousarray(mat @ t_cur)
        t_next *= 2.0 * scale
        t_next -= t_prev
        t_next -= t_cur
        t_next -= t_cur
        daxpy(t_next.reshape(-1), flat_out, a=c[r])
        t_prev, t_cur = t_cur, t_next
    return out


def filter_bank_apply(bank, lap, x, mode="exact", degree=DEFAULT_DEGREE, damping="none", decomp=None):
    """Filter ``x`` with the bank's total response.

    The K components are summed before projection, so the Chebyshev path
    costs one expansion regardless of K.
    """
    if mode == "exact":
        decomp = decomp if decomp is not None else decompose(lap)
        return apply_exact(decomp, eval_bank(bank, decomp.eigenvalues), x)
    if mode == "chebyshev":
        f = project_chebyshev(lambda lam: eval_bank(bank, lam), lap.lambda_max, degree, damping=damping)
        return apply_chebyshev(f, lap, x, decomp=decomp)
    raise ParameterError(f"mode must be 'exact' or 'chebyshev', got {mode!r}")


def suggested_degree(bank, floor=DEFAULT_DEGREE):
    """Degree heuristic ``R >= 8 lambda_max sqrt(max gamma)`` for narrow passbands."""
    need = 8.0 * bank.lambda_max * math.sqrt(float(np.max(bank.gamma)))
    return max(int(floor), int(math.ceil(need)))
