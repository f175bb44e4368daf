"""Dense symmetric eigensolver based on cyclic Jacobi rotations.

Rotations are scheduled in round-robin (tournament) order so that every
round consists of ``n // 2`` disjoint index pairs.  Disjoint rotations
commute, which lets a whole round be applied with a handful of vectorized
row/column updates instead of one Python-level update per pair.
"""

import numpy as np

from .errors import ContractError, NumericError

__all__ = ["jacobi_eigh", "round_robin_pairs"]


def round_robin_pairs(n):
    """Return the ``n - 1`` (or ``n`` for odd ``n``) rounds of a tournament.

    Each round is a pair of index arrays ``(p, q)`` with ``p < q``; every
    unordered pair in ``range(n)`` appears in exactly one round.
    """
    players = list(range(n))
    if n % 2:
        players.append(-1)
    m = len(players)
    rounds = []
    for _ in range(m - 1):
        p, q = [], []
        for i in range(m // 2):
            a, b = players[i], players[m - 1 - i]
            if a < 0 or b < 0:
                continue
            p.append(min(a, b))
            q.append(max(a, b))
        rounds.append((np.array(p, dtype=np.intp), np.array(q, dtype=np.intp)))
        players = [players[0], players[-1]] + players[1:-1]
    return rounds


def _rotate_rows(m, p, q, c, s):
    rows_p = m[p]
    rows_q = m[q]
    m[p] = c[:, None] * rows_p - s[:, None] * rows_q
    m[q] = s[:, None] * rows_p + c[:, None] * rows_q


def _off_norm(a):
    d = a.diagonal().copy()
    np.fill_diagonal(a, 0.0)
    off = np.linalg.norm(a)
    np.fill_diagonal(a, d)
    return off


def jacobi_eigh(a, tol=1e-15, max_sweeps=60):
    """Eigen-decompose a real symmetric matrix.

    Parameters
    ----------
    a : (n, n) array_like
        Symmetric matrix. Only symmetry up to rounding is assumed; the
        symmetric part is used.
    tol : float
        Sweeps stop once the off-diagonal Frobenius norm falls below
        ``tol * ||a||_F``.
    max_sweeps : int
        Hard cap on full sweeps.

    Returns
    -------
    eigenvalues : (n,) ndarray, ascending
    eigenvectors : (n, n) ndarray, column ``j`` pairs with ``eigenvalues[j]``
    """
    a = np.array(a, dtype=np.float64, copy=True)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ContractError(f"expected a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise NumericError("matrix has non-finite entries")
    n = a.shape[0]
    a = 0.5 * (a + a.T)
    vt = np.eye(n)
    if n == 1:
        return a.diagonal().copy(), vt

    scale = np.linalg.norm(a)
    threshold = tol * scale if scale > 0 else 0.0
    rounds = round_robin_pairs(n)

    eps = np.finfo(np.float64).eps
    for _ in range(max_sweeps):
        if _off_norm(a) <= threshold:
            break
        for p, q in rounds:
            apq = a[p, q]
            app = a[p, p]
            aqq = a[q, q]
            negligible = (np.abs(apq) <= eps * np.abs(app)) & (np.abs(apq) <= eps * np.abs(aqq))
            if np.any(negligible):
                a[p[negligible], q[negligible]] = 0.0
                a[q[negligible], p[negligible]] = 0.0
            active = (apq != 0.0) & ~negligible
            if not np.any(active):
                continue
            c = np.ones_like(apq)
            s = np.zeros_like(apq)
            theta = (aqq[active] - app[active]) / (2.0 * apq[active])
            t = np.where(theta >= 0.0, 1.0, -1.0) / (np.abs(theta) + np.hypot(theta, 1.0))
            c[active] = 1.0 / np.sqrt(t * t + 1.0)
            s[active] = t * c[active]

            _rotate_rows(a, p, q, c, s)
            # a is symmetric after the two-sided update, so the column pass
            # is a row pass on the transpose
            a = np.ascontiguousarray(a.T)
            _rotate_rows(a, p, q, c, s)
            # exact zeros for the annihilated pairs keep the sweep norm honest
            a[p, q] = 0.0
            a[q, p] = 0.0
            _rotate_rows(vt, p, q, c, s)
    else:
        if _off_norm(a) > max(threshold, 1e-12 * scale):
            raise NumericError(f"Jacobi did not converge in {max_sweeps} sweeps")

    w = a.diagonal().copy()
    order = np.argsort(w, kind="stable")
    return w[order], vt.T[:, order]
