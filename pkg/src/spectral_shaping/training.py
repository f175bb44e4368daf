"""Objective, AdamW, single-graph fitting and freeze-and-adapt transfer."""

import math
from dataclasses import dataclass, field, fields

import numpy as np

from .errors import ContractError, ParameterError
from .filtering import apply_exact, as_signal_batch
from .graphs import decompose
from .kernel import DEFAULT_ARCH, ParameterGradient, bank_backward, bank_forward, eval_bank, init_bank, shaping_init
from .metrics import improvement, mse

ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8
CENTER_TRANSPORTS = ("normalized", "absolute")


@dataclass
class TrainingConfig:
    learning_rate: float = 1e-3
    batch_size: int = 8
    epochs: int = 500
    alpha: float = 1e-3
    beta: float = 1e-4
    weight_decay: float = 1e-4
    grid_points: int = 64
    seed: int = 0
    arch: tuple = DEFAULT_ARCH
    activation: str = "tanh"
    reinit_shaping: bool = False
    center_transport: str = "normalized"
    checkpoint_best: bool = True

    def __post_init__(self):
        self.arch = tuple(int(a) for a in self.arch)
        for name in ("learning_rate", "alpha", "beta", "weight_decay"):
            value = getattr(self, name)
            if not (isinstance(value, (int, float)) and math.isfinite(value) and value >= 0):
                raise ParameterError(f"{name} must be a finite nonnegative number, got {value!r}")
        if self.batch_size < 1:
            raise ParameterError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ParameterError("epochs must be >= 0")
        if self.grid_points < 3:
            raise ParameterError("grid_points must be >= 3")
        if self.center_transport not in CENTER_TRANSPORTS:
            raise ParameterError(f"center_transport must be one of {CENTER_TRANSPORTS}")

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ParameterError(f"unknown training keys: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self):
        out = {f.name: getattr(self, f.name) for f in fields(self)}
        out["arch"] = list(self.arch)
        return out


@dataclass
class FreezeMask:
    """Which parameters an optimizer step may touch (True = frozen)."""

    baseline_frozen: bool
    mu_frozen: np.ndarray
    gamma_frozen: np.ndarray
    amplitude_frozen: np.ndarray

    @classmethod
    def trainable(cls, K):
        z = np.zeros(K, dtype=bool)
        return cls(False, z.copy(), z.copy(), z.copy())

    @classmethod
    def tass(cls, K):
        z = np.zeros(K, dtype=bool)
        return cls(True, z.copy(), z.copy(), z.copy())

    def frozen(self, name):
        """Boolean frozen flag(s) for a named parameter array."""
        if name == "mu_raw":
            return self.mu_frozen
        if name == "gamma_raw":
            return self.gamma_frozen
        if name == "amplitude":
            return self.amplitude_frozen
        return self.baseline_frozen


@dataclass
class LossParts:
    data: float
    smooth: float
    shape: float
    total: float


@dataclass
class LossRecord:
    epoch: int
    total: float
    data: float
    smooth: float
    shape: float


@dataclass
class TrainingState:
    bank: object
    m: dict
    v: dict
    step: int = 0
    history: list = field(default_factory=list)
    best_mse: float = math.inf
    metrics: dict = field(default_factory=dict)

    @classmethod
    def fresh(cls, bank):
        m = {name: np.zeros_like(a) for name, a in bank.named_parameters()}
        v = {name: np.zeros_like(a) for name, a in bank.named_parameters()}
        return cls(bank, m, v)


class SupervisedDataset:
    """Input/target signal pairs on one graph, with cached spectral coefficients."""

    def __init__(self, lap, decomp, inputs, targets):
        self.lap = lap
        self.decomp = decomp
        n = lap.num_nodes
        self.inputs = as_signal_batch(inputs, n)
        self.targets = as_signal_batch(targets, n)
        if self.inputs.shape != self.targets.shape:
            raise ContractError("inputs and targets must be column-aligned")
        if decomp.eigenvalues.size != n:
            raise ContractError("decomposition does not match the Laplacian")
        u = decomp.eigenvectors
        self.x_hat = u.T @ self.inputs
        self.y_hat = u.T @ self.targets

    @property
    def num_signals(self):
        return self.inputs.shape[1]

    @property
    def eigenvalues(self):
        return self.decomp.eigenvalues

    def subset(self, indices):
        idx = np.asarray(indices)
        return SupervisedDataset(self.lap, self.decomp, self.inputs[:, idx], self.targets[:, idx])


def make_dataset(lap, inputs, response, decomp=None):
    """Targets ``y_i = G*(L) x_i``; ``response`` is a callable or values on the eigenvalues."""
    decomp = decomp if decomp is not None else decompose(lap)
    resp = response(decomp.eigenvalues) if callable(response) else response
    targets = apply_exact(decomp, resp, inputs)
    return SupervisedDataset(lap, decomp, inputs, targets)


def _smoothness(g, grid_points):
    # second differences of g in normalized frequency (spacing 1 / (P - 1))
    scale = float(grid_points - 1) ** 2
    d = (g[2:] - 2.0 * g[1:-1] + g[:-2]) * scale
    value = float(np.mean(d * d))
    coef = 2.0 * d * scale / d.size
    grad = np.zeros_like(g)
    grad[2:] += coef
    grad[1:-1] -= 2.0 * coef
    grad[:-2] += coef
    return value, grad


def smoothness_penalty(bank, grid_points):
    grid = np.linspace(0.0, bank.lambda_max, grid_points)
    _, g, _ = bank_forward(bank, np.zeros(0), grid=grid)
    return _smoothness(g, grid_points)[0]


def loss(bank, dataset, cfg, indices=None):
    """Regularized objective on a minibatch and its exact gradient.

    ``data = sum_i ||G(L) x_i - y_i||^2`` is evaluated in the eigenbasis
    (orthonormal, so identical to the vertex-domain residual);
    ``smooth`` is the mean squared second difference of the baseline on
    a uniform grid; ``shape = sum_k a_k^2``.
    """
    if indices is None:
        x_hat, y_hat = dataset.x_hat, dataset.y_hat
    else:
        idx = np.asarray(indices)
        if idx.size == 0:
            raise ContractError("empty batch")
        x_hat, y_hat = dataset.x_hat[:, idx], dataset.y_hat[:, idx]
    if x_hat.shape[1] == 0:
        raise ContractError("empty batch")
    grid = np.linspace(0.0, bank.lambda_max, cfg.grid_points)
    response, g_grid, cache = bank_forward(bank, dataset.eigenvalues, grid=grid)

    resid = response[:, None] * x_hat - y_hat
    data = float(np.sum(resid * resid))
    upstream = 2.0 * np.sum(resid * x_hat, axis=1)

    smooth, d_smooth = _smoothness(g_grid, cfg.grid_points)
    shape = float(np.sum(bank.amplitude**2))

    grad = bank_backward(bank, cache, upstream, grid_upstream=cfg.alpha * d_smooth)
    grad.amplitude = grad.amplitude + cfg.beta * 2.0 * bank.amplitude
    total = data + cfg.alpha * smooth + cfg.beta * shape
    return total, LossParts(data, smooth, shape, total), grad


def adamw_update(param, grad, m, v, step, lr, weight_decay=0.0, frozen=False,
                 betas=ADAM_BETAS, eps=ADAM_EPS):
    """In-place AdamW update of ``param`` and its moments.

    ``step`` is the 1-based step used for bias correction. ``frozen`` is a
    bool or a boolean array; frozen entries and their moments are left
    untouched.
    """
    b1, b2 = betas
    frozen = np.asarray(frozen, dtype=bool)
    if frozen.ndim == 0:
        if frozen:
            return
    elif frozen.shape != param.shape:
        raise ContractError("freeze mask shape does not match parameter")
    elif frozen.all():
        return
    elif frozen.any():
        keep = ~frozen
        p, mm, vv = param[keep], m[keep], v[keep]
        adamw_update(p, grad[keep], mm, vv, step, lr, weight_decay, False, betas, eps)
        param[keep], m[keep], v[keep] = p, mm, vv
        return
    m *= b1
    m += (1.0 - b1) * grad
    v *= b2
    v += (1.0 - b2) * (grad * grad)
    m_hat = m / (1.0 - b1**step)
    v_hat = v / (1.0 - b2**step)
    if weight_decay:
        param -= lr * weight_decay * param
    param -= lr * m_hat / (np.sqrt(v_hat) + eps)


def adamw_step(state, grad, mask, cfg):
    """One decoupled-weight-decay Adam step on every unfrozen parameter.

    Weight decay applies to MLP weight matrices only.
    """
    params = state.bank.named_parameters()
    grads = grad.named_arrays()
    if [n for n, _ in params] != [n for n, _ in grads]:
        raise ContractError("gradient layout does not match the bank")
    for (name, p), (_, g) in zip(params, grads):
        if p.shape != g.shape or state.m[name].shape != p.shape:
            raise ContractError(f"shape mismatch for {name}")
    state.step += 1
    for (name, p), (_, g) in zip(params, grads):
        wd = cfg.weight_decay if name.startswith("W") else 0.0
        adamw_update(p, g, state.m[name], state.v[name], state.step,
                     cfg.learning_rate, wd, mask.frozen(name))
    return state


def train_mse(bank, dataset):
    """MSE on the dataset evaluated in the eigenbasis (cheap, for checkpointing)."""
    resp = eval_bank(bank, dataset.eigenvalues)
    resid = resp[:, None] * dataset.x_hat - dataset.y_hat
    return float(np.sum(resid * resid) / dataset.num_signals)


def predict(bank, dataset):
    return apply_exact(dataset.decomp, eval_bank(bank, dataset.eigenvalues), dataset.inputs)


def evaluate_mse(bank, dataset):
    """Vertex-domain MSE of the bank's exact filtering on ``dataset``."""
    return mse(predict(bank, dataset), dataset.targets)


def steps_per_epoch(num_signals, batch_size):
    return int(math.ceil(num_signals / batch_size))


def _seeds(seed):
    init_ss, shuffle_ss = np.random.SeedSequence(int(seed)).spawn(2)
    return int(init_ss.generate_state(1)[0]), np.random.default_rng(shuffle_ss)


def run_training(state, dataset, cfg, mask, rng, best=None):
    """Minibatch AdamW loop; mutates ``state`` and returns it.

    With ``cfg.checkpoint_best`` the bank with the lowest full-set MSE
    (checked before training and after every epoch) is kept; ``best`` may
    seed that search with an external ``(mse, bank)`` candidate.
    """
    s = dataset.num_signals
    best_mse, best_bank = (math.inf, None) if best is None else best
    cur = train_mse(state.bank, dataset)
    if cur < best_mse:
        best_mse, best_bank = cur, state.bank.copy()
    for epoch in range(cfg.epochs):
        order = rng.permutation(s)
        sums = np.zeros(4)
        nb = 0
        for start in range(0, s, cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            total, parts, grad = loss(state.bank, dataset, cfg, batch)
            adamw_step(state, grad, mask, cfg)
            sums += (parts.total, parts.data, parts.smooth, parts.shape)
            nb += 1
        sums /= nb
        state.history.append(LossRecord(epoch, *map(float, sums)))
        if cfg.checkpoint_best:
            cur = train_mse(state.bank, dataset)
            if cur < best_mse:
                best_mse, best_bank = cur, state.bank.copy()
    if cfg.checkpoint_best and best_bank is not None:
        state.bank = best_bank
        state.best_mse = best_mse
    else:
        state.best_mse = train_mse(state.bank, dataset)
    return state


def fit(dataset, K, cfg, bank=None, mask=None):
    """Train a bank from scratch (or from ``bank``) on one dataset.

    Returns ``(state, history)``; deterministic given ``cfg.seed``.
    """
    init_seed, rng = _seeds(cfg.seed)
    if bank is None:
        bank = init_bank(K, dataset.lap.lambda_max, seed=init_seed, arch=cfg.arch,
                         activation=cfg.activation)
    state = TrainingState.fresh(bank)
    mask = mask if mask is not None else FreezeMask.trainable(bank.K)
    run_training(state, dataset, cfg, mask, rng)
    state.metrics["train_mse"] = evaluate_mse(state.bank, dataset)
    return state, state.history


def zero_shot_bank(pretrained, lambda_max, center_transport="normalized"):
    """The source bank moved onto a target range without any training.

    ``"normalized"`` keeps each center at the same fraction of lambda_max;
    ``"absolute"`` keeps the center in eigenvalue units, clipped into range.
    """
    if center_transport not in CENTER_TRANSPORTS:
        raise ParameterError(f"center_transport must be one of {CENTER_TRANSPORTS}")
    return pretrained.with_lambda_max(lambda_max, keep_centers=center_transport == "absolute")


def tass_adapt(pretrained, target, cfg):
    """Freeze the pretrained baseline and fit only the shaping parameters.

    Returns ``(state, imp)`` where ``imp`` is the fractional MSE reduction
    on ``target`` from the zero-shot filter to the adapted one.
    """
    _, rng = _seeds(cfg.seed)
    lam_max = target.lap.lambda_max
    zero_shot = zero_shot_bank(pretrained, lam_max, cfg.center_transport)
    mse_before = evaluate_mse(zero_shot, target)

    bank = zero_shot.copy()
    if cfg.reinit_shaping:
        bank.mu_raw, bank.gamma_raw, bank.amplitude = shaping_init(bank.K, lam_max)
    state = TrainingState.fresh(bank)
    candidate = (train_mse(zero_shot, target), zero_shot.copy()) if cfg.checkpoint_best else None
    run_training(state, target, cfg, FreezeMask.tass(bank.K), rng, best=candidate)

    mse_after = evaluate_mse(state.bank, target)
    imp = improvement(mse_before, mse_after) if mse_before > 0 else 0.0
    state.metrics.update(mse_before=mse_before, mse_after=mse_after, imp=imp)
    return state, imp


def param_vector(bank):
    return np.concatenate([a.ravel() for _, a in bank.named_parameters()])


def grad_vector(grad):
    return np.concatenate([a.ravel() for _, a in grad.named_arrays()])


__all__ = [
    "FreezeMask",
    "LossParts",
    "LossRecord",
    "ParameterGradient",
    "SupervisedDataset",
    "TrainingConfig",
    "TrainingState",
    "adamw_step",
    "adamw_update",
    "evaluate_mse",
    "fit",
    "loss",
    "make_dataset",
    "run_training",
    "tass_adapt",
    "train_mse",
]
