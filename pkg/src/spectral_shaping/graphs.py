"""Synthetic graphs, Laplacians and dense spectral decompositions.

All random sampling goes through ``numpy.random.Generator`` backed by the
PCG64 bit generator (``numpy.random.default_rng``), so a graph is fully
determined by ``(family, params, seed)``.
"""

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .eigensolver import jacobi_eigh
from .errors import (
    CapabilityError,
    ContractError,
    DegenerateInputError,
    LambdaMaxWarning,
    ParameterError,
)

FAMILIES = ("erdos_renyi", "barabasi_albert", "watts_strogatz", "grid2d", "sbm")
KINDS = ("combinatorial", "normalized")

DENSE_THRESHOLD = 512
LAMBDA_SAFETY = 1.01

_ALIASES = {
    "er": "erdos_renyi",
    "erdosrenyi": "erdos_renyi",
    "ba": "barabasi_albert",
    "barabasialbert": "barabasi_albert",
    "ws": "watts_strogatz",
    "wattsstrogatz": "watts_strogatz",
    "grid": "grid2d",
    "grid_2d": "grid2d",
    "stochasticblockmodel": "sbm",
    "stochastic_block_model": "sbm",
}

# Families whose parameters the source material leaves open get these.
DEFAULT_PARAMS = {
    "erdos_renyi": {"p": 0.3},
    "barabasi_albert": {"m": 2},
    "watts_strogatz": {"k": 4, "beta": 0.1},
    "grid2d": {},
    "sbm": {"blocks": 2, "p_in": 0.3, "p_out": 0.05},
}


def canonical_family(name):
    key = str(name).strip().lower()
    key = _ALIASES.get(key, _ALIASES.get(key.replace("-", "_"), key))
    if key not in FAMILIES:
        raise ParameterError(f"unknown graph family {name!r}; expected one of {FAMILIES}")
    return key


def canonical_kind(name):
    key = str(name).strip().lower()
    if key not in KINDS:
        raise ParameterError(f"unknown Laplacian kind {name!r}; expected one of {KINDS}")
    return key


@dataclass(frozen=True, eq=False)
class Graph:
    """Weighted undirected simple graph stored as a canonical edge list.

    Edges are kept as three parallel arrays with ``u < v``, sorted by
    ``(u, v)``.
    """

    num_nodes: int
    u: np.ndarray
    v: np.ndarray
    w: np.ndarray
    family: str = "custom"
    params: dict = field(default_factory=dict)
    seed: int | None = None

    def __post_init__(self):
        n = int(self.num_nodes)
        if n < 1:
            raise ParameterError("num_nodes must be positive")
        u = np.asarray(self.u, dtype=np.int64).ravel()
        v = np.asarray(self.v, dtype=np.int64).ravel()
        w = np.asarray(self.w, dtype=np.float64).ravel()
        if not (u.shape == v.shape == w.shape):
            raise ContractError("edge arrays must have equal length")
        if u.size:
            if u.min() < 0 or v.min() < 0 or u.max() >= n or v.max() >= n:
                raise ParameterError("edge endpoint out of range")
            if np.any(u == v):
                raise ParameterError("self-loops are not allowed")
            if not np.all(np.isfinite(w)) or np.any(w <= 0):
                raise ParameterError("edge weights must be finite and strictly positive")
        lo, hi = np.minimum(u, v), np.maximum(u, v)
        order = np.lexsort((hi, lo))
        lo, hi, w = lo[order], hi[order], w[order]
        if lo.size > 1:
            dup = (lo[1:] == lo[:-1]) & (hi[1:] == hi[:-1])
            if np.any(dup):
                raise ParameterError("duplicate edges are not allowed")
        for name, arr in (("u", lo), ("v", hi), ("w", w)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "num_nodes", n)
        object.__setattr__(self, "params", dict(self.params))

    @classmethod
    def from_edges(cls, num_nodes, edges, **meta):
        edges = list(edges)
        if edges:
            arr = np.array([(e[0], e[1], e[2] if len(e) > 2 else 1.0) for e in edges], dtype=float)
            u, v, w = arr[:, 0].astype(np.int64), arr[:, 1].astype(np.int64), arr[:, 2]
        else:
            u = v = np.zeros(0, dtype=np.int64)
            w = np.zeros(0)
        return cls(num_nodes, u, v, w, **meta)

    @property
    def num_edges(self):
        return int(self.u.size)

    def edges(self):
        return [(int(a), int(b), float(c)) for a, b, c in zip(self.u, self.v, self.w)]

    def adjacency(self):
        n = self.num_nodes
        rows = np.concatenate([self.u, self.v])
        cols = np.concatenate([self.v, self.u])
        data = np.concatenate([self.w, self.w])
        return sp.csr_matrix((data, (rows, cols)), shape=(n, n))

    def degrees(self):
        deg = np.zeros(self.num_nodes)
        np.add.at(deg, self.u, self.w)
        np.add.at(deg, self.v, self.w)
        return deg

    def permuted(self, perm):
        """Relabel node ``i`` as ``perm[i]``."""
        perm = np.asarray(perm, dtype=np.int64)
        return Graph(self.num_nodes, perm[self.u], perm[self.v], self.w,
                     family=self.family, params=self.params, seed=self.seed)


# -- generators ---------------------------------------------------------------


def _pairs_upper(n):
    iu, ju = np.triu_indices(n, k=1)
    return iu, ju


def _erdos_renyi(n, params, rng):
    p = float(params.get("p", DEFAULT_PARAMS["erdos_renyi"]["p"]))
    if not 0.0 <= p <= 1.0:
        raise ParameterError(f"erdos_renyi requires p in [0, 1], got {p}")
    iu, ju = _pairs_upper(n)
    keep = rng.random(iu.size) < p
    return iu[keep], ju[keep], {"p": p}


def _barabasi_albert(n, params, rng):
    m = int(params.get("m", DEFAULT_PARAMS["barabasi_albert"]["m"]))
    if not 1 <= m < n:
        raise ParameterError(f"barabasi_albert requires 1 <= m < N, got m={m}, N={n}")
    iu, ju = _pairs_upper(m + 1)
    us, vs = list(iu), list(ju)
    deg = np.zeros(n)
    deg[: m + 1] = m
    for new in range(m + 1, n):
        existing = deg[:new]
        targets = rng.choice(new, size=m, replace=False, p=existing / existing.sum())
        for t in sorted(int(x) for x in targets):
            us.append(t)
            vs.append(new)
            deg[t] += 1
        deg[new] = m
    return np.array(us), np.array(vs), {"m": m}


def _watts_strogatz(n, params, rng):
    k = int(params.get("k", DEFAULT_PARAMS["watts_strogatz"]["k"]))
    beta = float(params.get("beta", DEFAULT_PARAMS["watts_strogatz"]["beta"]))
    if k < 2 or k % 2 or k >= n:
        raise ParameterError(f"watts_strogatz requires even 2 <= k < N, got k={k}")
    if not 0.0 <= beta <= 1.0:
        raise ParameterError(f"watts_strogatz requires beta in [0, 1], got {beta}")
    adj = [set() for _ in range(n)]
    for i in range(n):
        for j in range(1, k // 2 + 1):
            t = (i + j) % n
            adj[i].add(t)
            adj[t].add(i)
    for j in range(1, k // 2 + 1):
        for i in range(n):
            t = (i + j) % n
            if t not in adj[i] or rng.random() >= beta:
                continue
            if len(adj[i]) >= n - 1:
                continue
            while True:
                cand = int(rng.integers(n))
                if cand != i and cand not in adj[i]:
                    break
            adj[i].discard(t)
            adj[t].discard(i)
            adj[i].add(cand)
            adj[cand].add(i)
    us, vs = [], []
    for i in range(n):
        for t in adj[i]:
            if i < t:
                us.append(i)
                vs.append(t)
    return np.array(us, dtype=np.int64), np.array(vs, dtype=np.int64), {"k": k, "beta": beta}


def _grid_shape(n):
    rows = int(math.isqrt(n))
    while n % rows:
        rows -= 1
    return rows, n // rows


def _grid2d(n, params, rng):
    if "rows" in params or "cols" in params:
        rows = int(params.get("rows", n // int(params.get("cols", 1))))
        cols = int(params.get("cols", n // rows))
    else:
        rows, cols = _grid_shape(n)
    if rows < 1 or cols < 1 or rows * cols != n:
        raise ParameterError(f"grid2d requires rows*cols == N, got {rows}x{cols} for N={n}")
    idx = np.arange(n).reshape(rows, cols)
    us = np.concatenate([idx[:, :-1].ravel(), idx[:-1, :].ravel()])
    vs = np.concatenate([idx[:, 1:].ravel(), idx[1:, :].ravel()])
    return us, vs, {"rows": rows, "cols": cols}


def _sbm(n, params, rng):
    defaults = DEFAULT_PARAMS["sbm"]
    p_in = float(params.get("p_in", defaults["p_in"]))
    p_out = float(params.get("p_out", defaults["p_out"]))
    if "sizes" in params:
        sizes = [int(s) for s in params["sizes"]]
    else:
        b = int(params.get("blocks", defaults["blocks"]))
        if b < 1 or b > n:
            raise ParameterError(f"sbm requires 1 <= blocks <= N, got {b}")
        sizes = [n // b + (1 if i < n % b else 0) for i in range(b)]
    if sum(sizes) != n or min(sizes) < 1:
        raise ParameterError(f"sbm block sizes {sizes} must be positive and sum to N={n}")
    if not (0.0 <= p_out < p_in <= 1.0):
        raise ParameterError(f"sbm requires 0 <= p_out < p_in <= 1, got p_in={p_in}, p_out={p_out}")
    block = np.repeat(np.arange(len(sizes)), sizes)
    iu, ju = _pairs_upper(n)
    prob = np.where(block[iu] == block[ju], p_in, p_out)
    keep = rng.random(iu.size) < prob
    return iu[keep], ju[keep], {"sizes": sizes, "p_in": p_in, "p_out": p_out}


_GENERATORS = {
    "erdos_renyi": _erdos_renyi,
    "barabasi_albert": _barabasi_albert,
    "watts_strogatz": _watts_strogatz,
    "grid2d": _grid2d,
    "sbm": _sbm,
}


def generate_graph(family, params=None, seed=0, n=None):
    """Sample a synthetic unit-weight graph.

    ``params`` holds the family parameters and may carry ``"n"``; the
    keyword ``n`` overrides it. Disconnected samples are returned as
    drawn. A ``"weight"`` entry sets a uniform positive edge weight.
    """
    family = canonical_family(family)
    params = dict(params or {})
    if n is None:
        n = params.get("n")
    if n is None:
        raise ParameterError("graph size n is required")
    n = int(n)
    if n < 2:
        raise ParameterError(f"graphs need N >= 2, got {n}")
    weight = float(params.pop("weight", 1.0))
    if not weight > 0:
        raise ParameterError("weight must be positive")
    params.pop("n", None)
    rng = np.random.default_rng(int(seed))
    u, v, resolved = _GENERATORS[family](n, params, rng)
    resolved = {"n": n, **resolved}
    if weight != 1.0:
        resolved["weight"] = weight
    w = np.full(len(u), weight)
    return Graph(n, u, v, w, family=family, params=resolved, seed=int(seed))


# -- Laplacians ---------------------------------------------------------------


@dataclass(frozen=True)
class SpectralDecomposition:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    @property
    def num_nodes(self):
        return self.eigenvalues.size

    def number_of_zero_eigenvalues(self, tol=1e-8):
        return int(np.sum(np.abs(self.eigenvalues) < tol))


@dataclass(frozen=True, eq=False)
class LaplacianOperator:
    graph: Graph
    kind: str
    matrix: sp.csr_matrix
    lambda_max: float
    lambda_max_exact: bool = False
    _decomposition: SpectralDecomposition | None = field(default=None, repr=False)

    @property
    def num_nodes(self):
        return self.graph.num_nodes

    def dense(self):
        return self.matrix.toarray()


def _laplacian_matrix(g, kind):
    w = g.adjacency()
    deg = np.asarray(w.sum(axis=1)).ravel()
    if kind == "combinatorial":
        return (sp.diags(deg) - w).tocsr()
    if np.any(deg <= 0):
        isolated = np.flatnonzero(deg <= 0)
        raise DegenerateInputError(
            f"normalized Laplacian undefined: isolated node(s) {isolated[:10].tolist()}"
        )
    inv_sqrt = 1.0 / np.sqrt(deg)
    scaled = sp.diags(inv_sqrt) @ w @ sp.diags(inv_sqrt)
    return (sp.identity(g.num_nodes, format="csr") - scaled).tocsr()


def build_laplacian(g, kind="combinatorial", dense_threshold=DENSE_THRESHOLD):
    """Assemble the Laplacian and attach a spectral upper bound.

    For ``N <= dense_threshold`` the graph is decomposed once and the
    bound is the exact top eigenvalue; larger graphs use
    :func:`estimate_lambda_max`.
    """
    kind = canonical_kind(kind)
    mat = _laplacian_matrix(g, kind)
    decomp = None
    if g.num_nodes <= dense_threshold:
        vals, vecs = jacobi_eigh(mat.toarray())
        decomp = SpectralDecomposition(vals, vecs)
        lam = max(float(vals[-1]), 0.0)
        exact = True
    else:
        probe = LaplacianOperator(g, kind, mat, float("nan"))
        lam = estimate_lambda_max(probe) if g.num_edges else 0.0
        exact = False
    if kind == "normalized":
        lam = min(lam, 2.0)
    return LaplacianOperator(g, kind, mat, lam, exact, decomp)


def decompose(lap, dense_threshold=DENSE_THRESHOLD):
    """Full eigendecomposition ``L = U diag(lam) U^T`` (ascending)."""
    n = lap.num_nodes
    if n > dense_threshold:
        raise CapabilityError(
            f"N={n} exceeds the dense threshold ({dense_threshold}); use Chebyshev filtering"
        )
    if lap._decomposition is not None:
        return lap._decomposition
    vals, vecs = jacobi_eigh(lap.matrix.toarray())
    return SpectralDecomposition(vals, vecs)


def estimate_lambda_max(lap, tol=1e-6, max_iters=2000, seed=0):
    """Power-iteration upper bound on the largest Laplacian eigenvalue.

    The Rayleigh quotient converges from below, so the returned value is
    the converged quotient times :data:`LAMBDA_SAFETY`. If the iteration
    does not settle a conservative analytic bound is returned instead and
    a :class:`LambdaMaxWarning` is issued.
    """
    g = lap.graph
    if g.num_edges == 0:
        raise DegenerateInputError("lambda_max estimation needs at least one edge")
    n = g.num_nodes
    mat = lap.matrix
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(n)
    const = np.full(n, 1.0 / math.sqrt(n)) if lap.kind == "combinatorial" else None
    if const is not None:
        x -= const * (const @ x)
    x /= np.linalg.norm(x)
    prev = 0.0
    for _ in range(max_iters):
        y = mat @ x
        if const is not None:
            y -= const * (const @ y)
        rq = float(x @ y)
        norm = np.linalg.norm(y)
        if norm == 0.0:
            break
        x = y / norm
        if abs(rq - prev) <= tol * max(abs(rq), 1e-300):
            return rq * LAMBDA_SAFETY
        prev = rq
    if lap.kind == "combinatorial":
        bound = 2.0 * float(g.degrees().max())
    else:
        bound = 2.0
    warnings.warn(
        f"power iteration did not converge in {max_iters} iterations; "
        f"using conservative bound {bound}",
        LambdaMaxWarning,
        stacklevel=2,
    )
    return bound
