"""Synthetic benchmarks: ground-truth filters, signal regimes and protocols.

Two protocols are provided. :func:`run_single_graph_experiment` fits
shaped banks of several sizes on one graph and compares them with
Mexican-hat wavelet banks. :func:`run_transfer_experiment` pretrains on a
source graph, adapts the shaping parameters on a target graph and relates
the gain to structural similarity between the two graphs.
"""

import hashlib
import json
import math
from itertools import permutations
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np
import scipy.sparse.csgraph as csgraph
from scipy.special import expit

from .errors import ContractError, DegenerateInputError, ParameterError
from .filtering import apply_exact, as_signal_batch
from .graphs import build_laplacian, canonical_family, decompose, generate_graph
from .kernel import eval_bank
from .metrics import improvement, mse, spectral_discrepancy
from .training import (
    SupervisedDataset,
    TrainingConfig,
    evaluate_mse,
    fit,
    make_dataset,
    steps_per_epoch,
    tass_adapt,
    train_mse,
    zero_shot_bank,
)

GRID_POINTS = 512
REGIMES = ("gaussian_iid", "smooth_lowpass", "localized_bump", "band_limited", "diffusion")


# -- ground truth -------------------------------------------------------------


@dataclass(frozen=True)
class GroundTruthFilter:
    """Normalized sum of Gaussians; peak centers/widths in absolute frequency."""

    centers: tuple
    widths: tuple
    heights: tuple
    lambda_max: float
    scale: float = 1.0
    normalization: str = "max_one"

    def __call__(self, lambdas):
        lam = np.asarray(lambdas, dtype=float)
        out = np.zeros_like(lam)
        for c, w, h in zip(self.centers, self.widths, self.heights):
            out = out + h * np.exp(-((lam - c) ** 2) / (2.0 * w * w))
        return self.scale * out

    @property
    def peaks(self):
        return list(zip(self.centers, self.widths, self.heights))

    def rescaled(self, lambda_max):
        """Same shape in normalized frequency on a new spectral range."""
        r = lambda_max / self.lambda_max
        return _normalized_filter(
            [c * r for c in self.centers], [w * r for w in self.widths], self.heights, lambda_max
        )

    def to_dict(self):
        return {
            "centers": list(self.centers),
            "widths": list(self.widths),
            "heights": list(self.heights),
            "lambda_max": self.lambda_max,
            "scale": self.scale,
            "normalization": self.normalization,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["centers"]), tuple(d["widths"]), tuple(d["heights"]),
                   float(d["lambda_max"]), float(d.get("scale", 1.0)), d.get("normalization", "max_one"))


def _normalized_filter(centers, widths, heights, lambda_max):
    raw = GroundTruthFilter(tuple(map(float, centers)), tuple(map(float, widths)),
                            tuple(map(float, heights)), float(lambda_max))
    peak = float(np.max(raw(np.linspace(0.0, lambda_max, GRID_POINTS))))
    return replace(raw, scale=1.0 / peak)


def count_local_maxima(values):
    v = np.asarray(values, dtype=float)
    inner = (v[1:-1] > v[:-2]) & (v[1:-1] >= v[2:])
    count = int(np.sum(inner))
    count += int(v[0] > v[1]) + int(v[-1] > v[-2])
    return count


def make_ground_truth(num_peaks, lambda_max, seed, min_separation=None, max_attempts=100):
    """Random multi-peak response normalized to a grid maximum of one.

    Peak centers are drawn from ``[0.05, 0.95] * lambda_max`` with pairwise
    separation at least ``min_separation`` (default
    ``lambda_max / (2 num_peaks)``), widths (standard deviations) from
    ``[lambda_max/20, lambda_max/8]`` and heights from ``[0.5, 1]``. Draws
    whose grid response does not show ``num_peaks`` distinct maxima are
    rejected.
    """
    num_peaks = int(num_peaks)
    if not 1 <= num_peaks <= 4:
        raise ParameterError(f"num_peaks must be in [1, 4], got {num_peaks}")
    if not lambda_max > 0:
        raise ParameterError("lambda_max must be positive")
    sep = lambda_max / (2 * num_peaks) if min_separation is None else float(min_separation)
    grid = np.linspace(0.0, lambda_max, GRID_POINTS)
    for sub in np.random.SeedSequence(int(seed)).spawn(max_attempts):
        rng = np.random.default_rng(sub)
        centers = np.sort(rng.uniform(0.05, 0.95, num_peaks)) * lambda_max
        widths = rng.uniform(1.0 / 20.0, 1.0 / 8.0, num_peaks) * lambda_max
        heights = rng.uniform(0.5, 1.0, num_peaks)
        if num_peaks > 1 and np.min(np.diff(centers)) < sep:
            continue
        gt = _normalized_filter(centers, widths, heights, lambda_max)
        if count_local_maxima(gt(grid)) != num_peaks:
            continue
        return gt
    raise DegenerateInputError(
        f"could not place {num_peaks} separated peaks in {max_attempts} attempts"
    )


# -- signals ------------------------------------------------------------------


@dataclass(frozen=True)
class SignalRegime:
    kind: str = "gaussian_iid"
    band: tuple | None = None  # fractions of lambda_max
    t: float | None = None

    def __post_init__(self):
        kind = str(self.kind).lower()
        if kind not in REGIMES:
            raise ParameterError(f"unknown signal regime {self.kind!r}; expected one of {REGIMES}")
        object.__setattr__(self, "kind", kind)
        if self.band is not None:
            lo, hi = map(float, self.band)
            if not 0.0 <= lo <= hi:
                raise ParameterError(f"invalid band {self.band}")
            object.__setattr__(self, "band", (lo, hi))
        if self.t is not None and not float(self.t) >= 0:
            raise ParameterError("diffusion time must be nonnegative")

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        if isinstance(value, str):
            return cls(value)
        return cls(**value)

    def label(self):
        return self.kind

    def to_dict(self):
        return {"kind": self.kind, "band": list(self.band) if self.band else None, "t": self.t}


DEFAULT_BAND = (0.0, 0.5)
DEFAULT_DIFFUSION_T = 0.5


def make_signals(regime, decomp, S, seed, lap=None):
    """``S`` node signals (columns) from a regime.

    Band edges are given as fractions of the spectral top (``lambda_max``
    of ``lap`` if supplied, else the largest eigenvalue).
    """
    regime = SignalRegime.parse(regime)
    S = int(S)
    if S < 1:
        raise ParameterError("need S >= 1 signals")
    lam = decomp.eigenvalues
    u = decomp.eigenvectors
    n = lam.size
    lam_max = lap.lambda_max if lap is not None else max(float(lam[-1]), 1e-300)
    rng = np.random.default_rng(int(seed))
    kind = regime.kind
    if kind == "localized_bump":
        nodes = rng.integers(n, size=S)
        x = np.zeros((n, S))
        x[nodes, np.arange(S)] = 1.0
        return apply_exact(decomp, np.exp(-0.5 * lam), x)
    x = rng.standard_normal((n, S))
    if kind == "gaussian_iid":
        return x
    if kind == "smooth_lowpass":
        return apply_exact(decomp, np.exp(-4.0 * lam / lam_max), x)
    if kind == "diffusion":
        t = DEFAULT_DIFFUSION_T if regime.t is None else float(regime.t)
        return apply_exact(decomp, np.exp(-t * lam), x)
    lo, hi = regime.band if regime.band is not None else DEFAULT_BAND
    tol = 1e-9 * lam_max
    inside = (lam >= lo * lam_max - tol) & (lam <= hi * lam_max + tol)
    if not np.any(inside):
        raise DegenerateInputError(f"no eigenvalues inside band [{lo}, {hi}] x lambda_max")
    return apply_exact(decomp, inside.astype(float), x)


# -- fixed-prototype baseline -------------------------------------------------


def mexican_hat_scales(K, lambda_max):
    """Dilations whose peaks (at ``1/s``) are log-spaced over the spectrum."""
    if K == 1:
        peaks = np.array([lambda_max / math.sqrt(20.0)])
    else:
        peaks = np.geomspace(lambda_max / 10.0, lambda_max / 2.0, K)
    return 1.0 / peaks


def mexican_hat_atoms(lambdas, K, lambda_max):
    """(K, P) unit-peak atoms ``s lam exp(1 - s lam)``."""
    lam = np.asarray(lambdas, dtype=float).ravel()
    s = mexican_hat_scales(K, lambda_max)[:, None]
    return s * lam[None, :] * np.exp(1.0 - s * lam[None, :])


@dataclass
class MexicanHatBank:
    amplitudes: np.ndarray
    lambda_max: float

    @property
    def K(self):
        return self.amplitudes.size

    def response(self, lambdas):
        return self.amplitudes @ mexican_hat_atoms(lambdas, self.K, self.lambda_max)


def fixed_mexican_hat(K, lambda_max):
    """Untrained bank: unit-peak atoms summed with equal weights 1/K."""
    return MexicanHatBank(np.full(K, 1.0 / K), lambda_max)


def fit_mexican_hat(dataset, K):
    """Atom amplitudes minimizing the data MSE (closed-form least squares)."""
    atoms = mexican_hat_atoms(dataset.eigenvalues, K, dataset.lap.lambda_max)  # (K, N)
    # residual_i = sum_k a_k atoms_k * xh_i - yh_i, stacked over nodes and signals
    design = (atoms[:, :, None] * dataset.x_hat[None, :, :]).reshape(K, -1).T
    rhs = dataset.y_hat.ravel()
    amps, *_ = np.linalg.lstsq(design, rhs, rcond=None)
    return MexicanHatBank(amps, dataset.lap.lambda_max)


def response_mse(response, dataset):
    return mse(apply_exact(dataset.decomp, response, dataset.inputs), dataset.targets)


# -- similarity features ------------------------------------------------------


@dataclass
class SimilarityFeatures:
    spectral_distance: float
    degree_correlation: float
    clustering_similarity: float
    path_length_similarity: float
    density_similarity: float
    signal_correlation: float
    spectral_similarity: float
    moment_similarity: float
    flags: tuple = ()

    NAMES = (
        "spectral_distance",
        "degree_correlation",
        "clustering_similarity",
        "path_length_similarity",
        "density_similarity",
        "signal_correlation",
        "spectral_similarity",
        "moment_similarity",
    )

    def as_dict(self):
        return {name: getattr(self, name) for name in self.NAMES}


def _resample(values, length):
    v = np.asarray(values, dtype=float)
    if v.size == length:
        return v
    if v.size == 1:
        return np.full(length, v[0])
    return np.interp(np.linspace(0.0, 1.0, length), np.linspace(0.0, 1.0, v.size), v)


def pearson(a, b):
    """Pearson correlation; ``None`` if either side is constant."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    da = a - a.mean()
    db = b - b.mean()
    na = math.sqrt(float(da @ da))
    nb = math.sqrt(float(db @ db))
    if na <= 1e-12 * max(1.0, float(np.abs(a).max())) or nb <= 1e-12 * max(1.0, float(np.abs(b).max())):
        return None
    return float(np.clip((da @ db) / (na * nb), -1.0, 1.0))


def _ratio_similarity(a, b, eps=1e-12):
    return 1.0 - abs(a - b) / max(abs(a), abs(b), eps)


def global_clustering(g):
    a = g.adjacency()
    a.data[:] = 1.0
    deg = np.asarray(a.sum(axis=1)).ravel()
    triples = float(np.sum(deg * (deg - 1.0)))
    if triples == 0:
        return 0.0
    closed = float((a @ a).multiply(a).sum())  # = trace(A^3)
    return closed / triples


def average_path_length(g):
    """Mean shortest-path hop count within the largest connected component."""
    a = g.adjacency()
    ncomp, labels = csgraph.connected_components(a, directed=False)
    big = np.argmax(np.bincount(labels))
    nodes = np.flatnonzero(labels == big)
    if nodes.size < 2:
        return 0.0
    sub = a[nodes][:, nodes]
    dist = csgraph.shortest_path(sub, directed=False, unweighted=True)
    k = nodes.size
    return float(dist.sum() / (k * (k - 1)))


def edge_density(g):
    n = g.num_nodes
    return 2.0 * g.num_edges / (n * (n - 1))


def _spectral_energy(decomp, signals):
    coeff = decomp.eigenvectors.T @ as_signal_batch(signals, decomp.num_nodes)
    return np.mean(coeff * coeff, axis=1)


def similarity_features(source, target, bins=32):
    """Structural and signal similarity between ``(graph, decomp, signals)`` triples."""
    g_s, d_s, x_s = source
    g_t, d_t, x_t = target
    flags = []
    length = max(g_s.num_nodes, g_t.num_nodes)

    ev_s = _resample(d_s.eigenvalues, length)
    ev_t = _resample(d_t.eigenvalues, length)
    spectral_distance = float(np.linalg.norm(ev_s - ev_t))

    def corr(name, a, b):
        r = pearson(a, b)
        if r is None:
            flags.append(f"{name}:undefined")
            return 0.0
        return r

    degree_correlation = corr(
        "degree_correlation",
        _resample(np.sort(g_s.degrees()), length),
        _resample(np.sort(g_t.degrees()), length),
    )
    clustering_similarity = _ratio_similarity(global_clustering(g_s), global_clustering(g_t))
    path_length_similarity = _ratio_similarity(average_path_length(g_s), average_path_length(g_t))
    density_similarity = _ratio_similarity(edge_density(g_s), edge_density(g_t))
    signal_correlation = corr(
        "signal_correlation",
        _resample(np.sort(_spectral_energy(d_s, x_s)), length),
        _resample(np.sort(_spectral_energy(d_t, x_t)), length),
    )

    top = max(float(d_s.eigenvalues[-1]), float(d_t.eigenvalues[-1]), 1e-12)
    h_s, _ = np.histogram(np.clip(d_s.eigenvalues, 0.0, top), bins=bins, range=(0.0, top))
    h_t, _ = np.histogram(np.clip(d_t.eigenvalues, 0.0, top), bins=bins, range=(0.0, top))
    spectral_similarity = float(h_s @ h_t / (np.linalg.norm(h_s) * np.linalg.norm(h_t)))

    moments = []
    for p in (1, 2, 3):
        m_s = float(np.mean(d_s.eigenvalues**p))
        m_t = float(np.mean(d_t.eigenvalues**p))
        moments.append(_ratio_similarity(m_s, m_t))
    moment_similarity = float(np.mean(moments))

    return SimilarityFeatures(
        spectral_distance,
        degree_correlation,
        clustering_similarity,
        path_length_similarity,
        density_similarity,
        signal_correlation,
        spectral_similarity,
        moment_similarity,
        tuple(flags),
    )


# -- experiment specs ---------------------------------------------------------


def derive_seed(seed, tag):
    """Deterministic 32-bit seed for a named stream derived from ``seed``."""
    key = int.from_bytes(hashlib.sha256(tag.encode()).digest()[:4], "little")
    return int(np.random.SeedSequence([int(seed), key]).generate_state(1)[0])


def _check_keys(cls, data, where):
    known = {f for f in cls.__dataclass_fields__}
    unknown = set(data) - known
    if unknown:
        raise ParameterError(f"unknown {where} keys: {sorted(unknown)}")


@dataclass
class SingleGraphSpec:
    """One graph, one ground truth, one train/test signal split."""

    family: str = "erdos_renyi"
    params: dict = field(default_factory=dict)
    n: int = 32
    kind: str = "combinatorial"
    num_peaks: int = 2
    min_separation: float | None = None  # fraction of lambda_max
    regime: str = "gaussian_iid"
    num_train: int = 64
    num_test: int = 128
    seed: int = 0
    training: TrainingConfig = field(default_factory=TrainingConfig)

    def __post_init__(self):
        self.family = canonical_family(self.family)
        if isinstance(self.training, dict):
            self.training = TrainingConfig.from_dict(self.training)
        self.regime = SignalRegime.parse(self.regime).kind if isinstance(self.regime, str) else self.regime

    @classmethod
    def from_dict(cls, data):
        _check_keys(cls, data, "single-graph settings")
        return cls(**data)

    def to_dict(self):
        out = asdict(replace(self, training=None))
        out["training"] = self.training.to_dict()
        return out


@dataclass
class Endpoint:
    """Graph and signals on one side of a transfer trial."""

    family: str = "erdos_renyi"
    params: dict = field(default_factory=dict)
    n: int = 32
    seed: int = 0
    regime: str = "gaussian_iid"
    num_signals: int = 16
    signal_seed: int = 0

    def __post_init__(self):
        self.family = canonical_family(self.family)
        SignalRegime.parse(self.regime)

    @classmethod
    def from_dict(cls, data):
        if isinstance(data, cls):
            return data
        _check_keys(cls, data, "endpoint")
        return cls(**data)


@dataclass
class TransferTrial:
    """Source/target specs of one transfer run; results are filled in by the runner."""

    source: Endpoint
    target: Endpoint
    K: int = 4
    kind: str = "combinatorial"
    num_peaks: int = 2
    gt_seed: int = 0
    num_test: int = 128
    pretrain: TrainingConfig = field(default_factory=TrainingConfig)
    adapt: TrainingConfig = field(default_factory=TrainingConfig)
    label: str = ""

    def __post_init__(self):
        self.source = Endpoint.from_dict(self.source)
        self.target = Endpoint.from_dict(self.target)
        if isinstance(self.pretrain, dict):
            self.pretrain = TrainingConfig.from_dict(self.pretrain)
        if isinstance(self.adapt, dict):
            self.adapt = TrainingConfig.from_dict(self.adapt)
        if int(self.K) < 1:
            raise ParameterError("K must be >= 1")

    @classmethod
    def from_dict(cls, data):
        _check_keys(cls, data, "transfer trial")
        return cls(**data)

    def to_dict(self):
        return {
            "source": asdict(self.source),
            "target": asdict(self.target),
            "K": self.K,
            "kind": self.kind,
            "num_peaks": self.num_peaks,
            "gt_seed": self.gt_seed,
            "num_test": self.num_test,
            "pretrain": self.pretrain.to_dict(),
            "adapt": self.adapt.to_dict(),
            "label": self.label,
        }

    @property
    def structure_relation(self):
        return "same" if self.source.family == self.target.family else "different"

    @property
    def signal_relation(self):
        return "same" if SignalRegime.parse(self.source.regime) == SignalRegime.parse(self.target.regime) else "different"

    def source_key(self):
        """Everything the pretrained source bank depends on."""
        d = self.to_dict()
        return json.dumps([d[k] for k in ("source", "kind", "K", "num_peaks", "gt_seed", "pretrain")],
                          sort_keys=True)


# -- single-graph protocol ----------------------------------------------------


def baseline_hash(bank):
    """SHA-256 over the raw bytes of every baseline weight and bias."""
    h = hashlib.sha256()
    for arr in list(bank.baseline.weights) + list(bank.baseline.biases):
        h.update(np.ascontiguousarray(arr, dtype=np.float64).tobytes())
    return h.hexdigest()


def _graph_setup(family, params, n, seed, kind):
    g = generate_graph(family, params, seed=seed, n=n)
    lap = build_laplacian(g, kind)
    return g, lap, decompose(lap)


def _bank_record(bank):
    return {"mu": bank.mu.tolist(), "gamma": bank.gamma.tolist(), "amplitude": bank.amplitude.tolist()}


@dataclass
class SingleGraphResult:
    spec: SingleGraphSpec
    ground_truth: GroundTruthFilter
    rows: list
    banks: dict  # K -> fitted ShapedFilterBank
    histories: dict  # K -> list of LossRecord
    mexican_hat: dict  # (variant, K) -> MexicanHatBank


def run_single_graph_experiment(spec, K_list=(1, 2)):
    """Fit shaped banks for each K and compare them with Mexican-hat banks.

    Each row holds train/test MSE and spectral discrepancy (E_spec) at the
    graph eigenvalues. Methods: ``adaptive`` (shaped bank),
    ``mexican_hat_fixed`` (equal weights) and ``mexican_hat_ls`` (amplitudes
    by least squares on the training data).
    """
    if isinstance(spec, dict):
        spec = SingleGraphSpec.from_dict(spec)
    K_list = [int(k) for k in K_list]
    if not K_list or min(K_list) < 1:
        raise ParameterError("K_list must hold integers >= 1")
    seed = spec.seed
    g, lap, decomp = _graph_setup(spec.family, spec.params, spec.n, derive_seed(seed, "graph"), spec.kind)
    sep = None if spec.min_separation is None else spec.min_separation * lap.lambda_max
    gt = make_ground_truth(spec.num_peaks, lap.lambda_max, derive_seed(seed, "ground_truth"), min_separation=sep)
    x_train = make_signals(spec.regime, decomp, spec.num_train, derive_seed(seed, "train"), lap=lap)
    x_test = make_signals(spec.regime, decomp, spec.num_test, derive_seed(seed, "test"), lap=lap)
    train = make_dataset(lap, x_train, gt, decomp)
    test = make_dataset(lap, x_test, gt, decomp)
    lam = decomp.eigenvalues
    gt_vals = gt(lam)

    rows, banks, histories, hats = [], {}, {}, {}
    cfg = replace(spec.training, seed=derive_seed(seed, "training"))
    for K in K_list:
        state, history = fit(train, K, cfg)
        bank = state.bank
        banks[K], histories[K] = bank, history
        rows.append({
            "method": "adaptive",
            "K": K,
            "train_mse": evaluate_mse(bank, train),
            "test_mse": evaluate_mse(bank, test),
            "e_spec": spectral_discrepancy(eval_bank(bank, lam), gt_vals),
            "steps": state.step,
            **_bank_record(bank),
        })
        for variant, hat in (("mexican_hat_fixed", fixed_mexican_hat(K, lap.lambda_max)),
                             ("mexican_hat_ls", fit_mexican_hat(train, K))):
            hats[variant, K] = hat
            resp = hat.response(lam)
            rows.append({
                "method": variant,
                "K": K,
                "train_mse": response_mse(resp, train),
                "test_mse": response_mse(resp, test),
                "e_spec": spectral_discrepancy(resp, gt_vals),
                "steps": 0,
                "mu": (1.0 / mexican_hat_scales(K, lap.lambda_max)).tolist(),
                "gamma": None,
                "amplitude": hat.amplitudes.tolist(),
            })
    return SingleGraphResult(spec, gt, rows, banks, histories, hats)


def recovered_centers(true_centers, learned_centers, tol):
    """True if every true center has a distinct learned center within ``tol``."""
    true_centers = list(true_centers)
    learned = list(learned_centers)
    if len(learned) < len(true_centers):
        return False
    for perm in permutations(range(len(learned)), len(true_centers)):
        if all(abs(learned[j] - c) <= tol for j, c in zip(perm, true_centers)):
            return True
    return False


# -- transfer protocol --------------------------------------------------------


def _endpoint_data(ep, kind, gt_norm, num_test=0):
    g, lap, decomp = _graph_setup(ep.family, ep.params, ep.n, ep.seed, kind)
    gt = gt_norm.rescaled(lap.lambda_max)
    x = make_signals(ep.regime, decomp, ep.num_signals, ep.signal_seed, lap=lap)
    train = make_dataset(lap, x, gt, decomp)
    test = None
    if num_test:
        xt = make_signals(ep.regime, decomp, num_test, derive_seed(ep.signal_seed, "test"), lap=lap)
        test = make_dataset(lap, xt, gt, decomp)
    return g, train, test


def transfer_ground_truth(num_peaks, gt_seed):
    """Ground truth on a unit spectrum; each graph rescales it to its own range."""
    return make_ground_truth(num_peaks, 1.0, gt_seed)


def pretrain_source(trial):
    """Fit the full bank on the trial's source graph."""
    gt = transfer_ground_truth(trial.num_peaks, trial.gt_seed)
    g, train, _ = _endpoint_data(trial.source, trial.kind, gt)
    state, _ = fit(train, trial.K, trial.pretrain)
    return g, train, state.bank


def run_transfer_trial(trial, pretrained=None):
    """Zero-shot, adapted and matched-step scratch errors on the target test set.

    ``pretrained`` is an optional ``(graph, dataset, bank)`` triple from
    :func:`pretrain_source`.
    """
    if pretrained is None:
        pretrained = pretrain_source(trial)
    g_src, src_data, src_bank = pretrained
    gt = transfer_ground_truth(trial.num_peaks, trial.gt_seed)
    g_tgt, train, test = _endpoint_data(trial.target, trial.kind, gt, trial.num_test)

    zero_shot = zero_shot_bank(src_bank, train.lap.lambda_max, trial.adapt.center_transport)
    adapted, imp_train = tass_adapt(src_bank, train, trial.adapt)
    scratch, _ = fit(train, trial.K, trial.adapt)
    if scratch.step != adapted.step:
        raise ContractError(f"step budgets differ: scratch {scratch.step} vs adapted {adapted.step}")

    mse_before = evaluate_mse(zero_shot, test)
    mse_after = evaluate_mse(adapted.bank, test)
    mse_scratch = evaluate_mse(scratch.bank, test)
    feats = similarity_features((g_src, src_data.decomp, src_data.inputs),
                                (g_tgt, train.decomp, train.inputs))
    return {
        "label": trial.label,
        "source_family": trial.source.family,
        "target_family": trial.target.family,
        "source_regime": str(trial.source.regime),
        "target_regime": str(trial.target.regime),
        "structure_relation": trial.structure_relation,
        "signal_relation": trial.signal_relation,
        "K": trial.K,
        "num_target_signals": trial.target.num_signals,
        "steps": adapted.step,
        "mse_source": train_mse(src_bank, src_data),
        "mse_before": mse_before,
        "mse_after": mse_after,
        "mse_scratch": mse_scratch,
        "imp": improvement(mse_before, mse_after),
        "imp_train": imp_train,
        "delta_t": improvement(mse_scratch, mse_after),
        **feats.as_dict(),
        "feature_flags": ";".join(feats.flags),
        "baseline_hash_source": baseline_hash(src_bank),
        "baseline_hash_adapted": baseline_hash(adapted.bank),
    }


def _run_group(trials):
    """Trials sharing one source: pretrain once, then adapt to each target."""
    pretrained = pretrain_source(trials[0][1])
    return [(i, run_transfer_trial(t, pretrained)) for i, t in trials]


def run_transfer_experiment(trials, jobs=1):
    """Run every trial and summarize.

    Trials with an identical source are grouped so the source bank is
    pretrained once per group. Groups are independent and may run in a
    process pool; rows come back in input order regardless of ``jobs``.
    Returns ``(rows, summary)``.
    """
    trials = [t if isinstance(t, TransferTrial) else TransferTrial.from_dict(t) for t in trials]
    groups = {}
    for i, t in enumerate(trials):
        groups.setdefault(t.source_key(), []).append((i, t))
    groups = list(groups.values())
    rows = [None] * len(trials)
    if jobs > 1 and len(groups) > 1:
        with ProcessPoolExecutor(max_workers=int(jobs)) as pool:
            for out in pool.map(_run_group, groups):
                for i, row in out:
                    rows[i] = row
    else:
        for grp in groups:
            for i, row in _run_group(grp):
                rows[i] = row
    return rows, summarize_transfer(rows)


def _stderr(values):
    v = np.asarray(values, dtype=float)
    if v.size < 2:
        return None
    return float(np.std(v, ddof=1) / math.sqrt(v.size))


def transfer_class(row):
    return f"structure={row['structure_relation']},signal={row['signal_relation']}"


def normalized_improvements(rows):
    """Each Imp divided by the mean |Imp| of its (structure, signal) class."""
    by_class = {}
    for r in rows:
        by_class.setdefault(transfer_class(r), []).append(abs(r["imp"]))
    scale = {c: float(np.mean(v)) for c, v in by_class.items()}
    return np.array([r["imp"] / scale[transfer_class(r)] if scale[transfer_class(r)] > 0 else 0.0
                     for r in rows])


def summarize_transfer(rows):
    """Class sizes and means with standard errors, plus feature correlations.

    Classes are keyed by the structure and signal relations and, separately,
    by target family. Correlations are Pearson coefficients between each
    similarity feature and the class-normalized improvement; an undefined
    coefficient (constant input) is reported as ``None``.
    """
    classes = {}
    for r in rows:
        classes.setdefault(transfer_class(r), []).append(r)
        classes.setdefault(f"target={r['target_family']}", []).append(r)
    table = {}
    for name in sorted(classes):
        members = classes[name]
        imp = [m["imp"] for m in members]
        dt = [m["delta_t"] for m in members]
        table[name] = {
            "count": len(members),
            "mean_imp": float(np.mean(imp)),
            "stderr_imp": _stderr(imp),
            "mean_abs_imp": float(np.mean(np.abs(imp))),
            "mean_delta_t": float(np.mean(dt)),
            "stderr_delta_t": _stderr(dt),
        }
    correlations = {}
    if len(rows) >= 2:
        norm = normalized_improvements(rows)
        for name in SimilarityFeatures.NAMES:
            correlations[name] = pearson([r[name] for r in rows], norm)
    return {"classes": table, "correlations": correlations, "num_trials": len(rows)}


def structure_sweep(seeds, targets=("erdos_renyi", "barabasi_albert"), K=4, num_target=16,
                    num_source=256, source_family="erdos_renyi", regimes=("gaussian_iid",),
                    kind="combinatorial", pretrain=None, adapt=None, num_peaks=2):
    """Trials from one source family to several target families and regimes.

    The source graph, source signals and ground truth depend only on the
    seed, so every target of a seed shares one pretrained bank. Source
    signals use the first regime.
    """
    pretrain = pretrain if pretrain is not None else TrainingConfig()
    adapt = adapt if adapt is not None else TrainingConfig()
    trials = []
    for s in seeds:
        s = int(s)
        src = Endpoint(source_family, {}, 32, derive_seed(s, "source_graph"), regimes[0], num_source,
                       derive_seed(s, "source_signals"))
        for fam in targets:
            for reg in regimes:
                tgt = Endpoint(fam, {}, 32, derive_seed(s, f"target_graph:{canonical_family(fam)}"), reg,
                               num_target, derive_seed(s, f"target_signals:{reg}"))
                trials.append(TransferTrial(
                    src, tgt, K=K, kind=kind, num_peaks=num_peaks, gt_seed=derive_seed(s, "ground_truth"),
                    pretrain=replace(pretrain, seed=derive_seed(s, "pretrain")),
                    adapt=replace(adapt, seed=derive_seed(s, "adapt")),
                    label=f"seed={s}",
                ))
    return trials
