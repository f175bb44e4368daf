"""Learnable spectral responses: an MLP baseline modulated by Gaussians.

The bank response is

    G(lam) = sum_k a_k * g(lam) * exp(-gamma_k * (lam - mu_k)**2)

with ``mu_k = lambda_max * sigmoid(mu_raw_k)`` and
``gamma_k = softplus(gamma_raw_k)``, so the raw parameters are
unconstrained. The MLP ``g`` sees ``lam / lambda_max``, which keeps a
baseline meaningful when it is moved to a graph with a different
spectral range.
"""

import copy
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, logit

from .errors import ContractError, NumericError, ParameterError, SpectrumRangeWarning

ACTIVATIONS = ("tanh", "softplus")
DEFAULT_ARCH = (1, 32, 32, 1)


def softplus(x):
    return np.logaddexp(0.0, x)


def inverse_softplus(y):
    y = np.asarray(y, dtype=float)
    # log(expm1(y)) loses precision for large y
    return np.where(y > 30.0, y + np.log1p(-np.exp(-y)), np.log(np.expm1(np.minimum(y, 30.0))))


@dataclass
class BaselineKernel:
    """Scalar-to-scalar MLP with a linear output layer.

    ``weights[l]`` has shape ``(fan_out, fan_in)``.
    """

    weights: list
    biases: list
    activation: str = "tanh"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ParameterError(f"activation must be one of {ACTIVATIONS}")
        self.weights = [np.asarray(w, dtype=float) for w in self.weights]
        self.biases = [np.asarray(b, dtype=float) for b in self.biases]
        if len(self.weights) < 2 or len(self.weights) != len(self.biases):
            raise ParameterError("need at least one hidden layer and one bias per layer")
        if self.weights[0].shape[1] != 1 or self.weights[-1].shape[0] != 1:
            raise ParameterError("baseline kernel must map R -> R")
        for w, b, w_next in zip(self.weights, self.biases, self.weights[1:] + [None]):
            if b.shape != (w.shape[0],):
                raise ParameterError("bias shape does not match layer")
            if w_next is not None and w_next.shape[1] != w.shape[0]:
                raise ParameterError("consecutive layer shapes disagree")

    @property
    def layer_sizes(self):
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    def copy(self):
        return copy.deepcopy(self)


def _act(kind, pre):
    if kind == "tanh":
        return np.tanh(pre)
    return softplus(pre)


def _act_grad(kind, pre, post):
    if kind == "tanh":
        return 1.0 - post * post
    return expit(pre)


def mlp_forward(kernel, z):
    """Forward pass on inputs ``z`` (already normalized). Returns ``(out, cache)``."""
    h = np.asarray(z, dtype=float).reshape(-1, 1)
    cache = [h]
    last = len(kernel.weights) - 1
    for i, (w, b) in enumerate(zip(kernel.weights, kernel.biases)):
        pre = h @ w.T + b
        if i == last:
            h = pre
            cache.append(None)
        else:
            h = _act(kernel.activation, pre)
            cache.append((pre, h))
    return h[:, 0], cache


def mlp_backward(kernel, cache, upstream):
    """Gradients of ``sum(upstream * out)`` w.r.t. weights and biases."""
    grad_h = np.asarray(upstream, dtype=float).reshape(-1, 1)
    n_layers = len(kernel.weights)
    gw = [None] * n_layers
    gb = [None] * n_layers
    for i in range(n_layers - 1, -1, -1):
        if i < n_layers - 1:
            pre, post = cache[i + 1]
            grad_h = grad_h * _act_grad(kernel.activation, pre, post)
        h_in = cache[0] if i == 0 else cache[i][1]
        gw[i] = grad_h.T @ h_in
        gb[i] = grad_h.sum(axis=0)
        if i > 0:
            grad_h = grad_h @ kernel.weights[i]
    return gw, gb


def eval_baseline(kernel, lambdas, lambda_max=None):
    """Evaluate ``g`` pointwise. Inputs are divided by ``lambda_max`` if given."""
    for w, b in zip(kernel.weights, kernel.biases):
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise NumericError("baseline kernel has non-finite parameters")
    z = np.asarray(lambdas, dtype=float)
    if lambda_max is not None:
        z = z / lambda_max
    out, _ = mlp_forward(kernel, z.ravel())
    return out.reshape(np.shape(lambdas))


@dataclass
class ShapingComponent:
    mu_raw: float
    gamma_raw: float
    amplitude: float

    def mu(self, lambda_max):
        return float(lambda_max * expit(self.mu_raw))

    def gamma(self):
        return float(softplus(self.gamma_raw))


def eval_component(component, baseline_vals, lambdas, lambda_max):
    """One shaped term ``a * g(lam) * exp(-gamma (lam - mu)^2)``."""
    lam = np.asarray(lambdas, dtype=float)
    g = np.asarray(baseline_vals, dtype=float)
    if g.shape != lam.shape:
        raise ContractError("baseline values and lambdas must align")
    mu = component.mu(lambda_max)
    gamma = component.gamma()
    return component.amplitude * g * np.exp(-gamma * (lam - mu) ** 2)


@dataclass
class ShapedFilterBank:
    """Baseline kernel plus K Gaussian shaping components.

    Shaping parameters are stored as length-K arrays; :attr:`components`
    offers the per-component view.
    """

    baseline: BaselineKernel
    mu_raw: np.ndarray
    gamma_raw: np.ndarray
    amplitude: np.ndarray
    lambda_max: float

    def __post_init__(self):
        self.mu_raw = np.array(self.mu_raw, dtype=float).ravel()
        self.gamma_raw = np.array(self.gamma_raw, dtype=float).ravel()
        self.amplitude = np.array(self.amplitude, dtype=float).ravel()
        if self.mu_raw.size < 1:
            raise ParameterError("a bank needs K >= 1 components")
        if not (self.mu_raw.shape == self.gamma_raw.shape == self.amplitude.shape):
            raise ParameterError("shaping arrays must all have length K")
        if not self.lambda_max > 0:
            raise ParameterError("lambda_max must be positive")
        self.lambda_max = float(self.lambda_max)

    @property
    def K(self):
        return self.mu_raw.size

    @property
    def components(self):
        return [
            ShapingComponent(float(m), float(g), float(a))
            for m, g, a in zip(self.mu_raw, self.gamma_raw, self.amplitude)
        ]

    @property
    def mu(self):
        return self.lambda_max * expit(self.mu_raw)

    @property
    def gamma(self):
        return softplus(self.gamma_raw)

    def named_parameters(self):
        """``(name, array)`` pairs in canonical order; arrays are live references."""
        out = []
        for i, (w, b) in enumerate(zip(self.baseline.weights, self.baseline.biases)):
            out.append((f"W{i}", w))
            out.append((f"b{i}", b))
        out += [("mu_raw", self.mu_raw), ("gamma_raw", self.gamma_raw), ("amplitude", self.amplitude)]
        return out

    def copy(self):
        return copy.deepcopy(self)

    def with_lambda_max(self, lambda_max, keep_centers=True):
        """Copy rebased onto a new spectral range.

        With ``keep_centers`` the absolute centers are kept, clipped into
        the new ``[0, lambda_max]``; otherwise the raw parameters are
        unchanged, so each center stays at the same fraction of the range.
        """
        out = self.copy()
        if keep_centers:
            frac = np.clip(self.mu / lambda_max, 1e-9, 1.0 - 1e-9)
            out.mu_raw = logit(frac)
        out.lambda_max = float(lambda_max)
        return out


@dataclass
class ParameterGradient:
    """Gradient congruent with a :class:`ShapedFilterBank`."""

    weights: list
    biases: list
    mu_raw: np.ndarray
    gamma_raw: np.ndarray
    amplitude: np.ndarray
    extras: dict = field(default_factory=dict)

    @classmethod
    def zeros_like(cls, bank):
        return cls(
            [np.zeros_like(w) for w in bank.baseline.weights],
            [np.zeros_like(b) for b in bank.baseline.biases],
            np.zeros_like(bank.mu_raw),
            np.zeros_like(bank.gamma_raw),
            np.zeros_like(bank.amplitude),
        )

    def named_arrays(self):
        out = []
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out.append((f"W{i}", w))
            out.append((f"b{i}", b))
        out += [("mu_raw", self.mu_raw), ("gamma_raw", self.gamma_raw), ("amplitude", self.amplitude)]
        return out

    def __add__(self, other):
        return ParameterGradient(
            [a + b for a, b in zip(self.weights, other.weights)],
            [a + b for a, b in zip(self.biases, other.biases)],
            self.mu_raw + other.mu_raw,
            self.gamma_raw + other.gamma_raw,
            self.amplitude + other.amplitude,
        )

    def scaled(self, c):
        return ParameterGradient(
            [c * w for w in self.weights],
            [c * b for b in self.biases],
            c * self.mu_raw,
            c * self.gamma_raw,
            c * self.amplitude,
        )

    def is_finite(self):
        return all(np.all(np.isfinite(a)) for _, a in self.named_arrays())


def _check_range(bank, lam):
    tol = 1e-9 * bank.lambda_max
    if lam.size and (lam.min() < -tol or lam.max() > bank.lambda_max + tol):
        warnings.warn(
            f"bank evaluated outside [0, {bank.lambda_max:g}]", SpectrumRangeWarning, stacklevel=3
        )


def _bank_terms(bank, lam):
    # (K, P) Gaussian envelopes and the shared baseline
    mu = bank.mu
    gamma = bank.gamma
    diff = lam[None, :] - mu[:, None]
    env = np.exp(-gamma[:, None] * diff * diff)
    return mu, gamma, diff, env


def eval_bank(bank, lambdas, components=False):
    """Total response ``G(lam)``; with ``components=True`` also the (K, P) terms."""
    lam = np.asarray(lambdas, dtype=float).ravel()
    _check_range(bank, lam)
    g = eval_baseline(bank.baseline, lam, bank.lambda_max)
    _, _, _, env = _bank_terms(bank, lam)
    terms = bank.amplitude[:, None] * g[None, :] * env
    total = terms.sum(axis=0)
    if components:
        return total, terms
    return total


def bank_forward(bank, lambdas, grid=None):
    """Forward pass keeping what :func:`bank_backward` needs.

    The baseline is also evaluated on ``grid`` (if given) in the same MLP
    pass; those values come back as the second element.
    """
    lam = np.asarray(lambdas, dtype=float).ravel()
    p = lam.size
    z = lam / bank.lambda_max
    if grid is not None:
        z = np.concatenate([z, np.asarray(grid, dtype=float).ravel() / bank.lambda_max])
    g_all, mlp_cache = mlp_forward(bank.baseline, z)
    g = g_all[:p]
    mu, gamma, diff, env = _bank_terms(bank, lam)
    s = env.T @ bank.amplitude
    cache = (lam, g_all, mlp_cache, gamma, diff, env, s)
    return g * s, g_all[p:], cache


def bank_backward(bank, cache, upstream, grid_upstream=None):
    """Reverse pass for :func:`bank_forward`.

    ``upstream`` is d(loss)/dG at the frequencies, ``grid_upstream`` an
    optional d(loss)/dg at the grid points.
    """
    lam, g_all, mlp_cache, gamma, diff, env, s = cache
    p = lam.size
    up = np.asarray(upstream, dtype=float).ravel()
    if up.shape != (p,):
        raise ContractError(f"upstream has shape {up.shape}, expected {(p,)}")
    g = g_all[:p]
    a = bank.amplitude

    weighted = env * (up * g)[None, :]  # (K, P)
    grad_a = weighted.sum(axis=1)
    wd = weighted * diff
    grad_mu = 2.0 * a * gamma * wd.sum(axis=1)
    grad_gamma = -a * (wd * diff).sum(axis=1)

    sig = expit(bank.mu_raw)
    grad_mu_raw = grad_mu * (bank.lambda_max * sig * (1.0 - sig))
    grad_gamma_raw = grad_gamma * expit(bank.gamma_raw)

    upstream_g = np.zeros_like(g_all)
    upstream_g[:p] = up * s
    if grid_upstream is not None:
        gu = np.asarray(grid_upstream, dtype=float).ravel()
        if gu.shape != (g_all.size - p,):
            raise ContractError("grid upstream does not match the grid")
        upstream_g[p:] = gu
    gw, gb = mlp_backward(bank.baseline, mlp_cache, upstream_g)
    return ParameterGradient(gw, gb, grad_mu_raw, grad_gamma_raw, grad_a)


def backward(bank, lambdas, upstream):
    """Exact gradient of ``sum_j upstream_j * G(lambda_j)`` w.r.t. every parameter."""
    lam = np.asarray(lambdas, dtype=float).ravel()
    if np.asarray(upstream).size != lam.size:
        raise ContractError(f"upstream has {np.asarray(upstream).size} entries, expected {lam.size}")
    _, _, cache = bank_forward(bank, lam)
    return bank_backward(bank, cache, upstream)


def init_bank(K, lambda_max, seed=0, arch=DEFAULT_ARCH, activation="tanh", output_bias=1.0):
    """Fresh bank with evenly spread shaping components.

    Centers sit at ``(k - 1/2) * lambda_max / K`` with Gaussian standard
    deviation ``lambda_max / (2K)`` and amplitudes ``1/K``. MLP weights are
    uniform in ``+-1/sqrt(fan_in)``, biases zero except the output bias,
    so the baseline starts close to ``output_bias``.
    """
    K = int(K)
    if K < 1:
        raise ParameterError(f"K must be >= 1, got {K}")
    if not lambda_max > 0:
        raise ParameterError("lambda_max must be positive")
    arch = tuple(int(x) for x in arch)
    if len(arch) < 3 or arch[0] != 1 or arch[-1] != 1:
        raise ParameterError(f"architecture must look like (1, ..., 1), got {arch}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(arch[:-1], arch[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    biases[-1][:] = output_bias
    baseline = BaselineKernel(weights, biases, activation)
    mu_raw, gamma_raw, amp = shaping_init(K, lambda_max)
    return ShapedFilterBank(baseline, mu_raw, gamma_raw, amp, lambda_max)


def shaping_init(K, lambda_max):
    """Raw shaping parameters of the evenly spread initialization."""
    frac = (np.arange(1, K + 1) - 0.5) / K
    sigma = lambda_max / (2.0 * K)
    gamma = 1.0 / (2.0 * sigma * sigma)
    return logit(frac), inverse_softplus(np.full(K, gamma)), np.full(K, 1.0 / K)
